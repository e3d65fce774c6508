#ifndef PROTORECT_EPISODES_HPP
#define PROTORECT_EPISODES_HPP

#include <cstddef>
#include <cstdint>
#include <vector>

#include "protorect/featurestore.hpp"

namespace protorect {

struct EpisodeSpec {
    int ways = 5;
    int shots = 1;
    int queries = 15;
    int distractors = 0;  // N': extra unlabeled classes mixed into the query batch
    std::uint64_t seed = 0;

    bool operator==(const EpisodeSpec&) const = default;
};

/// Index sets into a FeatureSet. Support and query rows are grouped by episode
/// class: support[n*K .. n*K+K) and query[n*Q .. n*Q+Q) belong to class_ids[n].
struct Episode {
    std::uint64_t index = 0;
    std::vector<std::uint32_t> class_ids;
    std::vector<std::size_t> support;
    std::vector<std::size_t> query;
    std::vector<std::uint32_t> query_truth;  // episode-class position 0..N-1 per query row
    std::vector<std::uint32_t> distractor_class_ids;
    std::vector<std::size_t> distractor_query;

    bool operator==(const Episode&) const = default;
};

/// Checks the spec against the feature set: N + N' classes available and every
/// class holds at least K + Q rows. Throws ErrorKind::capacity naming the
/// first deficient class.
void validate_spec(const FeatureSet& fs, const EpisodeSpec& spec);

/// Draws episode `episode_index` of the stream defined by spec.seed. Pure:
/// the same arguments always give the same episode. Does not add distractors.
Episode sample_episode(const FeatureSet& fs, const EpisodeSpec& spec, std::uint64_t episode_index);

/// Adds spec.distractors classes outside ep.class_ids, Q rows each, as
/// unlabeled query rows. Uses its own random stream so the labeled part of
/// the episode is untouched. N' = 0 returns the episode unchanged.
Episode inject_distractors(const FeatureSet& fs, Episode ep, const EpisodeSpec& spec);

}  // namespace protorect

#endif
