#include "protorect/protonet.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "protorect/error.hpp"
#include "protorect/featurestore.hpp"

namespace protorect {

void PrototypeSet::validate() const {
    if (vectors.rows() < 2) {
        throw Error(ErrorKind::shape, "a prototype set needs at least 2 classes");
    }
    if (class_ids.size() != vectors.rows()) {
        throw Error(ErrorKind::shape, "prototype set has " + std::to_string(vectors.rows()) + " vectors but " +
                                          std::to_string(class_ids.size()) + " class ids");
    }
    for (std::size_t n = 0; n < vectors.rows(); ++n) {
        if (!(norm(vectors.row(n)) >= kDegenerateNorm)) {
            throw Error(ErrorKind::degenerate_vector, "prototype " + std::to_string(n) + " (class " +
                                                          std::to_string(class_ids[n]) + ") has near-zero norm");
        }
    }
}

double cosine(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw Error(ErrorKind::shape, "cosine of vectors with different dims");
    }
    const double na = norm(a);
    const double nb = norm(b);
    if (!(na >= kDegenerateNorm) || !(nb >= kDegenerateNorm)) {
        throw Error(ErrorKind::degenerate_vector, "cosine of a near-zero vector");
    }
    const double c = dot(a, b) / (na * nb);
    if (std::isfinite(c)) {
        return std::clamp(c, -1.0, 1.0);
    }
    // Norms overflowed; rescale by the largest magnitude first.
    auto scaled = [](std::span<const double> v) {
        double m = 0.0;
        for (const double x : v) m = std::max(m, std::abs(x));
        std::vector<double> out(v.begin(), v.end());
        for (auto& x : out) x /= m;
        return out;
    };
    const auto sa = scaled(a);
    const auto sb = scaled(b);
    return std::clamp(dot(sa, sb) / (norm(sa) * norm(sb)), -1.0, 1.0);
}

std::vector<double> softmax(std::span<const double> logits, double scale) {
    std::vector<double> out(logits.size());
    if (logits.empty()) {
        return out;
    }
    double top = scale * logits[0];
    for (const double v : logits) top = std::max(top, scale * v);
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(scale * logits[i] - top);
        sum += out[i];
    }
    for (auto& v : out) v /= sum;
    return out;
}

PrototypeSet basic_prototypes(const Matrix& support, std::span<const std::uint32_t> class_ids) {
    const std::size_t n_classes = class_ids.size();
    if (n_classes == 0 || support.rows() < n_classes || support.rows() % n_classes != 0) {
        throw Error(ErrorKind::capacity, "support has " + std::to_string(support.rows()) + " rows for " +
                                             std::to_string(n_classes) + " classes; every class needs K >= 1 rows");
    }
    const std::size_t shots = support.rows() / n_classes;
    PrototypeSet protos;
    protos.kind = PrototypeKind::basic;
    protos.class_ids.assign(class_ids.begin(), class_ids.end());
    protos.vectors = Matrix(n_classes, support.cols());
    for (std::size_t n = 0; n < n_classes; ++n) {
        auto p = protos.vectors.row(n);
        for (std::size_t i = 0; i < shots; ++i) {
            const auto x = support.row(n * shots + i);
            for (std::size_t d = 0; d < p.size(); ++d) p[d] += x[d];
        }
        for (auto& v : p) v /= static_cast<double>(shots);
    }
    protos.validate();
    return protos;
}

ScoreMatrix score(const Matrix& queries, const PrototypeSet& protos, double tau) {
    if (!(tau > 0.0)) {
        throw Error(ErrorKind::usage, "tau must be positive");
    }
    if (queries.rows() > 0 && queries.cols() != protos.vectors.cols()) {
        throw Error(ErrorKind::shape, "query dim " + std::to_string(queries.cols()) + " != prototype dim " +
                                          std::to_string(protos.vectors.cols()));
    }
    const std::size_t n = protos.size();
    std::vector<double> proto_norm(n);
    for (std::size_t c = 0; c < n; ++c) {
        proto_norm[c] = norm(protos.vectors.row(c));
        if (!(proto_norm[c] >= kDegenerateNorm)) {
            throw Error(ErrorKind::degenerate_vector, "prototype " + std::to_string(c) + " has near-zero norm");
        }
    }
    ScoreMatrix sm;
    sm.tau = tau;
    sm.cosines = Matrix(queries.rows(), n);
    sm.probabilities = Matrix(queries.rows(), n);
    for (std::size_t q = 0; q < queries.rows(); ++q) {
        const auto x = queries.row(q);
        const double qn = norm(x);
        if (!(qn >= kDegenerateNorm)) {
            throw Error(ErrorKind::degenerate_vector, "query " + std::to_string(q) + " has near-zero norm");
        }
        auto cos_row = sm.cosines.row(q);
        for (std::size_t c = 0; c < n; ++c) {
            cos_row[c] = std::clamp(dot(x, protos.vectors.row(c)) / (qn * proto_norm[c]), -1.0, 1.0);
        }
        const auto probs = softmax(cos_row, tau);
        std::copy(probs.begin(), probs.end(), sm.probabilities.row(q).begin());
    }
    return sm;
}

std::vector<Prediction> predict(const ScoreMatrix& sm) {
    std::vector<Prediction> out(sm.queries());
    for (std::size_t q = 0; q < sm.queries(); ++q) {
        const auto row = sm.cosines.row(q);
        std::size_t best = 0;
        for (std::size_t c = 1; c < row.size(); ++c) {
            if (row[c] > row[best]) best = c;
        }
        out[q] = {static_cast<std::uint32_t>(best), sm.probabilities(q, best)};
    }
    return out;
}

}  // namespace protorect
