#include "protorect/rectify.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "protorect/error.hpp"

namespace protorect {

namespace {

std::vector<double> mean_difference(const Matrix& a, const Matrix& b, const char* what) {
    if (a.rows() == 0 || b.rows() == 0) {
        throw Error(ErrorKind::capacity, std::string(what) + " needs non-empty inputs");
    }
    if (a.cols() != b.cols()) {
        throw Error(ErrorKind::shape, std::string(what) + ": dim mismatch");
    }
    auto diff = row_mean(a);
    const auto mb = row_mean(b);
    for (std::size_t d = 0; d < diff.size(); ++d) diff[d] -= mb[d];
    return diff;
}

double entropy(std::span<const double> p) {
    double h = 0.0;
    for (const double v : p) {
        if (v > 0.0) h -= v * std::log(v);
    }
    return h;
}

}  // namespace

ShiftTerm shift_term(const Matrix& support, const Matrix& query) {
    return {mean_difference(support, query, "shift_term")};
}

Matrix apply_shift(const Matrix& query, const ShiftTerm& shift) {
    if (query.rows() > 0 && shift.xi.size() != query.cols()) {
        throw Error(ErrorKind::shape, "shift term dim does not match query dim");
    }
    Matrix out = query;
    for (std::size_t i = 0; i < out.rows(); ++i) {
        auto r = out.row(i);
        for (std::size_t d = 0; d < r.size(); ++d) r[d] += shift.xi[d];
    }
    return out;
}

std::size_t PseudoLabelSet::total() const {
    std::size_t n = 0;
    for (const auto& c : per_class) n += c.size();
    return n;
}

PseudoLabelSet select_pseudo(const ScoreMatrix& sm, int z) {
    if (z < 0) {
        throw Error(ErrorKind::usage, "Z must be non-negative");
    }
    PseudoLabelSet set;
    set.z = z;
    set.per_class.resize(sm.classes());
    if (z == 0) {
        return set;
    }
    const auto preds = predict(sm);
    for (std::size_t q = 0; q < preds.size(); ++q) {
        set.per_class[preds[q].label].push_back({q, preds[q].confidence});
    }
    const auto limit = static_cast<std::size_t>(z);
    for (auto& picks : set.per_class) {
        std::stable_sort(picks.begin(), picks.end(),
                         [](const PseudoLabel& a, const PseudoLabel& b) { return a.confidence > b.confidence; });
        if (picks.size() > limit) picks.resize(limit);
    }
    return set;
}

std::vector<double> rectification_weights(const Matrix& augmented, std::span<const double> basic_proto,
                                          double epsilon) {
    if (!(epsilon > 0.0)) {
        throw Error(ErrorKind::usage, "epsilon must be positive");
    }
    if (augmented.rows() == 0) {
        throw Error(ErrorKind::capacity, "rectification needs at least one row");
    }
    std::vector<double> cos(augmented.rows());
    for (std::size_t i = 0; i < augmented.rows(); ++i) {
        try {
            cos[i] = cosine(augmented.row(i), basic_proto);
        } catch (const Error& e) {
            throw Error(e.kind(), "augmented row " + std::to_string(i) + ": " + e.what());
        }
    }
    return softmax(cos, epsilon);
}

PrototypeSet rectified_prototypes(const Matrix& support, const PseudoLabelSet& pseudo, const Matrix& query,
                                  const PrototypeSet& basic, double epsilon,
                                  std::vector<std::vector<double>>* weights_out) {
    const std::size_t n_classes = basic.size();
    if (n_classes == 0 || support.rows() % n_classes != 0 || support.rows() == 0) {
        throw Error(ErrorKind::capacity, "support rows are not a whole number of shots per class");
    }
    if (pseudo.per_class.size() != n_classes) {
        throw Error(ErrorKind::shape, "pseudo-label set covers " + std::to_string(pseudo.per_class.size()) +
                                          " classes, prototypes " + std::to_string(n_classes));
    }
    const std::size_t shots = support.rows() / n_classes;
    PrototypeSet out;
    out.kind = PrototypeKind::rectified;
    out.class_ids = basic.class_ids;
    out.vectors = Matrix(n_classes, support.cols());
    if (weights_out) weights_out->assign(n_classes, {});

    for (std::size_t n = 0; n < n_classes; ++n) {
        const auto& picks = pseudo.per_class[n];
        Matrix augmented(shots + picks.size(), support.cols());
        for (std::size_t i = 0; i < shots; ++i) {
            const auto src = support.row(n * shots + i);
            std::copy(src.begin(), src.end(), augmented.row(i).begin());
        }
        for (std::size_t j = 0; j < picks.size(); ++j) {
            if (picks[j].query >= query.rows()) {
                throw Error(ErrorKind::shape, "pseudo label references query row " + std::to_string(picks[j].query) +
                                                  " of " + std::to_string(query.rows()));
            }
            const auto src = query.row(picks[j].query);
            auto dst = augmented.row(shots + j);
            const double len = norm(src);
            if (!(len >= kDegenerateNorm)) {
                throw Error(ErrorKind::degenerate_vector,
                            "pseudo-labeled query " + std::to_string(picks[j].query) + " has near-zero norm");
            }
            for (std::size_t d = 0; d < src.size(); ++d) dst[d] = src[d] / len;
        }
        const auto w = rectification_weights(augmented, basic.vectors.row(n), epsilon);
        auto p = out.vectors.row(n);
        for (std::size_t i = 0; i < augmented.rows(); ++i) {
            const auto x = augmented.row(i);
            for (std::size_t d = 0; d < p.size(); ++d) p[d] += w[i] * x[d];
        }
        if (weights_out) (*weights_out)[n] = w;
    }
    out.validate();
    return out;
}

BiasMeasure measure_intra_bias(const Matrix& population, const Matrix& subset) {
    BiasMeasure b;
    b.vector = mean_difference(population, subset, "measure_intra_bias");
    b.norm = norm(b.vector);
    return b;
}

BiasMeasure measure_cross_bias(const Matrix& support, const Matrix& query) {
    BiasMeasure b;
    b.vector = mean_difference(support, query, "measure_cross_bias");
    b.norm = norm(b.vector);
    return b;
}

std::string_view to_string(Mode mode) {
    switch (mode) {
        case Mode::cspn: return "cspn";
        case Mode::bdc: return "bdc";
        case Mode::bdi: return "bdi";
        case Mode::bd: return "bd";
    }
    return "unknown";
}

Mode parse_mode(std::string_view name) {
    if (name == "cspn") return Mode::cspn;
    if (name == "bdc") return Mode::bdc;
    if (name == "bdi") return Mode::bdi;
    if (name == "bd") return Mode::bd;
    throw Error(ErrorKind::usage, "unknown mode '" + std::string(name) + "' (expected cspn|bdc|bdi|bd)");
}

bool uses_shift(Mode mode) { return mode == Mode::bdc || mode == Mode::bd; }
bool uses_rectification(Mode mode) { return mode == Mode::bdi || mode == Mode::bd; }

EpisodeFeatures gather_episode(const NormalizedView& view, const Episode& ep) {
    EpisodeFeatures f;
    f.class_ids = ep.class_ids;
    f.support = gather_rows(view.matrix(), ep.support);
    std::vector<std::size_t> rows = ep.query;
    rows.insert(rows.end(), ep.distractor_query.begin(), ep.distractor_query.end());
    f.query = gather_rows(view.matrix(), rows);
    f.labeled_queries = ep.query.size();
    return f;
}

PipelineResult run_pipeline(const EpisodeFeatures& episode, const PipelineOptions& options) {
    PipelineResult result;
    result.basic = basic_prototypes(episode.support, episode.class_ids);

    const Matrix* scored = &episode.query;
    Matrix shifted;
    if (uses_shift(options.mode)) {
        const auto xi = shift_term(episode.support, episode.query);
        result.diagnostics.xi_norm = norm(xi.xi);
        shifted = apply_shift(episode.query, xi);
        scored = &shifted;
    }

    if (uses_rectification(options.mode)) {
        // Pseudo-labels and the rows they contribute come from the same query space.
        const Matrix& source = (options.intra_first || !uses_shift(options.mode)) ? episode.query : *scored;
        const auto initial = score(source, result.basic, options.tau);
        const auto pseudo = select_pseudo(initial, options.z);
        std::vector<std::vector<double>> weights;
        result.prototypes = rectified_prototypes(episode.support, pseudo, source, result.basic, options.epsilon,
                                                 &weights);
        for (std::size_t n = 0; n < weights.size(); ++n) {
            result.diagnostics.pseudo_counts.push_back(pseudo.per_class[n].size());
            result.diagnostics.weight_entropy.push_back(entropy(weights[n]));
        }
    } else {
        result.prototypes = result.basic;
    }

    result.scores = score(*scored, result.prototypes, options.tau);
    result.predictions = predict(result.scores);
    return result;
}

}  // namespace protorect
