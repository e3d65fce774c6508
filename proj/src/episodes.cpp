#include "protorect/episodes.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "protorect/error.hpp"
#include "protorect/random.hpp"

namespace protorect {

namespace {

constexpr std::uint64_t kEpisodeStream = 0x45504953ULL;     // "EPIS"
constexpr std::uint64_t kDistractorStream = 0x44495354ULL;  // "DIST"

}  // namespace

void validate_spec(const FeatureSet& fs, const EpisodeSpec& spec) {
    if (spec.ways < 2 || spec.shots < 1 || spec.queries < 1 || spec.distractors < 0) {
        throw Error(ErrorKind::usage, "episode spec requires ways >= 2, shots >= 1, queries >= 1, distractors >= 0");
    }
    const auto needed_classes = static_cast<std::size_t>(spec.ways + spec.distractors);
    if (needed_classes > fs.num_classes()) {
        throw Error(ErrorKind::capacity, "episode needs " + std::to_string(needed_classes) +
                                             " classes but the feature set has " +
                                             std::to_string(fs.num_classes()));
    }
    const auto per_class = static_cast<std::size_t>(spec.shots + spec.queries);
    for (std::uint32_t c = 0; c < fs.num_classes(); ++c) {
        const auto have = fs.rows_of_class(c).size();
        if (have < per_class) {
            throw Error(ErrorKind::capacity, "class " + std::to_string(c) + " has " + std::to_string(have) +
                                                 " rows, episode needs " + std::to_string(per_class));
        }
    }
}

Episode sample_episode(const FeatureSet& fs, const EpisodeSpec& spec, std::uint64_t episode_index) {
    validate_spec(fs, spec);
    auto rng = make_rng(spec.seed, kEpisodeStream, episode_index);

    std::vector<std::uint32_t> all_classes(fs.num_classes());
    std::iota(all_classes.begin(), all_classes.end(), 0u);

    Episode ep;
    ep.index = episode_index;
    ep.class_ids = sample_without_replacement(std::move(all_classes), static_cast<std::size_t>(spec.ways), rng);

    const auto k = static_cast<std::size_t>(spec.shots);
    const auto q = static_cast<std::size_t>(spec.queries);
    ep.support.reserve(ep.class_ids.size() * k);
    ep.query.reserve(ep.class_ids.size() * q);
    ep.query_truth.reserve(ep.class_ids.size() * q);
    for (std::size_t n = 0; n < ep.class_ids.size(); ++n) {
        const auto rows = fs.rows_of_class(ep.class_ids[n]);
        auto drawn = sample_without_replacement(std::vector<std::size_t>(rows.begin(), rows.end()), k + q, rng);
        ep.support.insert(ep.support.end(), drawn.begin(), drawn.begin() + static_cast<std::ptrdiff_t>(k));
        ep.query.insert(ep.query.end(), drawn.begin() + static_cast<std::ptrdiff_t>(k), drawn.end());
        ep.query_truth.insert(ep.query_truth.end(), q, static_cast<std::uint32_t>(n));
    }
    return ep;
}

Episode inject_distractors(const FeatureSet& fs, Episode ep, const EpisodeSpec& spec) {
    if (spec.distractors <= 0) {
        return ep;
    }
    std::vector<std::uint32_t> outside;
    for (std::uint32_t c = 0; c < fs.num_classes(); ++c) {
        if (std::find(ep.class_ids.begin(), ep.class_ids.end(), c) == ep.class_ids.end() &&
            std::find(ep.distractor_class_ids.begin(), ep.distractor_class_ids.end(), c) ==
                ep.distractor_class_ids.end()) {
            outside.push_back(c);
        }
    }
    const auto wanted = static_cast<std::size_t>(spec.distractors);
    if (outside.size() < wanted) {
        throw Error(ErrorKind::capacity, "need " + std::to_string(wanted) + " distractor classes but only " +
                                             std::to_string(outside.size()) + " lie outside the episode");
    }
    auto rng = make_rng(spec.seed, kDistractorStream, ep.index);
    const auto picked = sample_without_replacement(std::move(outside), wanted, rng);
    const auto q = static_cast<std::size_t>(spec.queries);
    for (const auto c : picked) {
        const auto rows = fs.rows_of_class(c);
        if (rows.size() < q) {
            throw Error(ErrorKind::capacity, "distractor class " + std::to_string(c) + " has " +
                                                 std::to_string(rows.size()) + " rows, needs " + std::to_string(q));
        }
        const auto drawn = sample_without_replacement(std::vector<std::size_t>(rows.begin(), rows.end()), q, rng);
        ep.distractor_query.insert(ep.distractor_query.end(), drawn.begin(), drawn.end());
        ep.distractor_class_ids.push_back(c);
    }
    return ep;
}

}  // namespace protorect
