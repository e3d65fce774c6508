#ifndef PROTORECT_HARNESS_HPP
#define PROTORECT_HARNESS_HPP

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "protorect/episodes.hpp"
#include "protorect/featurestore.hpp"
#include "protorect/protonet.hpp"
#include "protorect/rectify.hpp"
#include "protorect/theory.hpp"

#include "json.hpp"

namespace protorect {

enum class ReportFormat { tsv, json };

ReportFormat parse_report_format(std::string_view name);
std::string_view to_string(ReportFormat format);

/// Evaluation settings. Every (mode, z) pair is one report cell; all cells
/// run on the same episode sequence so their accuracies are paired.
struct RunConfig {
    std::string features;
    EpisodeSpec spec{5, 1, 15, 0, 0};
    std::vector<Mode> modes{Mode::bd};
    std::vector<int> z_values{8};
    double epsilon = 10.0;
    double tau = 10.0;
    int episodes = 600;
    ReportFormat format = ReportFormat::tsv;
    bool intra_first = false;
    /// mAP is always computed when distractors are present.
    bool compute_map = false;
    int map_top = 15;

    bool map_enabled() const { return compute_map || spec.distractors > 0; }
    bool operator==(const RunConfig&) const = default;
};

nlohmann::json to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j);

struct DiagnosticsSummary {
    double xi_norm = 0.0;
    double pseudo_count = 0.0;     // per class, averaged over classes and episodes
    double weight_entropy = 0.0;   // per class, averaged; 0 when no rectification
    double basic_bias = 0.0;       // |basic prototype - class mean of the full set|
    double prototype_bias = 0.0;   // same for the prototypes used to predict
};

struct CellReport {
    Mode mode = Mode::bd;
    int z = 0;
    double accuracy = 0.0;
    double ci95 = 0.0;
    std::optional<double> map;
    std::vector<double> episode_accuracy;
    std::vector<double> episode_map;
    DiagnosticsSummary diagnostics;
};

/// Per-episode accuracy deltas of one cell against the first cell.
struct PairedComparison {
    std::size_t baseline = 0;
    std::size_t cell = 0;
    double mean_delta = 0.0;
    double ci95 = 0.0;
    int wins = 0;
    int losses = 0;
    int ties = 0;
    double sign_test_p = 1.0;
    std::vector<double> deltas;
};

struct RunReport {
    RunConfig config;
    std::vector<CellReport> cells;
    std::vector<PairedComparison> paired;
};

/// Fraction of predictions equal to the truth. Both spans cover labeled
/// queries only.
double accuracy(std::span<const std::uint32_t> predicted, std::span<const std::uint32_t> truth);

/// 1.96 * sample std (n - 1) / sqrt(n); zero for fewer than two samples.
double ci95_half_width(std::span<const double> samples);

double mean(std::span<const double> samples);

/// Two-sided exact binomial sign test over non-tied pairs.
double sign_test_p(int wins, int losses);

/// Truth per query row: the episode-class position, or nullopt for a distractor.
using QueryTruth = std::vector<std::optional<std::uint32_t>>;

/// Mean over classes of average precision within each class's top `top`
/// queries ranked by that class's probability (ties: lower query index).
/// AP = mean of precision@rank over the relevant hits in the list; a list
/// without hits scores 0. Distractors are never relevant.
double mean_average_precision(const ScoreMatrix& sm, const QueryTruth& truth, int top = 15);

inline constexpr std::string_view kMapDefinition =
    "per class: rank all queries by class probability, keep top-k; AP = mean of precision@r over relevant hits in "
    "the top-k (0 if none); mAP = mean AP over episode classes; distractors are never relevant";

/// Worker count from PROTORECT_THREADS, else hardware concurrency; at least 1.
unsigned default_thread_count();

/// Runs the configured cells over cfg.episodes episodes. Output is a pure
/// function of (cfg, fs) regardless of `threads`. A failing episode aborts the
/// run with an error naming the lowest failing episode index.
RunReport run_eval(const RunConfig& cfg, const FeatureSet& fs, unsigned threads);

/// TSV: header then one row per cell (mode, ways, shots, Z, acc, ci95, map).
/// JSON: full report with per-episode arrays, keys sorted.
std::string emit_report(const RunReport& report, ReportFormat format);

nlohmann::json to_json(const RunReport& report);

struct TheoryConfig {
    RunConfig eval;          // features, seed, episodes, ways, queries, epsilon, tau
    int k = 1;               // shots of the predicted curve
    int z_max = 10;
    std::vector<int> anchor_shots{1, 5};
    bool empirical = false;  // also run the pseudo-label sweep for comparison
    Mode empirical_mode = Mode::bdi;
};

struct TheoryRow {
    int z = 0;
    double predicted = 0.0;
    std::optional<double> empirical;
    std::optional<double> empirical_ci95;
};

struct TheoryReport {
    TheoryParams params;
    std::vector<AccuracyPoint> anchors;
    std::vector<TheoryRow> rows;
    int k = 1;
};

/// Estimates (lambda, alpha) from `param_source`, fits eta to CSPN accuracy at
/// the anchor shot counts, and evaluates the predicted curve for Z = 0..z_max.
TheoryReport run_theory(const TheoryConfig& cfg, const FeatureSet& episodes_source, const FeatureSet& param_source,
                        unsigned threads);

std::string emit_theory(const TheoryReport& report, ReportFormat format);

}  // namespace protorect

#endif
