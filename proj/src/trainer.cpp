#include "protorect/trainer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "binary_io.hpp"
#include "protorect/error.hpp"
#include "protorect/random.hpp"

namespace protorect {

namespace {

constexpr std::array<char, 4> kCheckpointMagic = {'P', 'R', 'F', 'C'};
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr std::uint64_t kShuffleStream = 0x53485546ULL;  // "SHUF"
constexpr std::array<int, 3> kMilestones = {10, 20, 40};
constexpr int kReferenceEpochs = 60;

// Forward quantities for one sample, kept for the backward pass.
struct SampleState {
    std::vector<double> z;
    double z_norm = 0.0;
    std::vector<double> cos;
    std::vector<double> prob;
};

std::vector<double> weight_norms(const ClassifierParams& params) {
    std::vector<double> out(params.classes());
    for (std::size_t c = 0; c < params.classes(); ++c) {
        out[c] = norm(params.weights.row(c));
        if (!(out[c] >= kDegenerateNorm)) {
            throw Error(ErrorKind::degenerate_vector, "class weight row " + std::to_string(c) + " has near-zero norm");
        }
    }
    return out;
}

SampleState forward_state(const ClassifierParams& params, std::span<const double> x,
                          std::span<const double> w_norms) {
    if (x.size() != params.input_dim()) {
        throw Error(ErrorKind::shape, "input dim " + std::to_string(x.size()) + " != adapter input dim " +
                                          std::to_string(params.input_dim()));
    }
    SampleState s;
    s.z.assign(params.embed_dim(), 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const auto a = params.adapter.row(i);
        for (std::size_t j = 0; j < s.z.size(); ++j) s.z[j] += a[j] * x[i];
    }
    s.z_norm = norm(s.z);
    if (!(s.z_norm >= kDegenerateNorm)) {
        throw Error(ErrorKind::degenerate_vector, "projected feature has near-zero norm");
    }
    s.cos.resize(params.classes());
    for (std::size_t c = 0; c < params.classes(); ++c) {
        s.cos[c] = dot(s.z, params.weights.row(c)) / (s.z_norm * w_norms[c]);
    }
    double top = s.cos[0];
    for (const double v : s.cos) top = std::max(top, v);
    s.prob.resize(s.cos.size());
    double sum = 0.0;
    for (std::size_t c = 0; c < s.cos.size(); ++c) {
        s.prob[c] = std::exp(params.tau * (s.cos[c] - top));
        sum += s.prob[c];
    }
    for (auto& p : s.prob) p /= sum;
    return s;
}

double squared_norm(const Matrix& m) {
    const auto d = m.data();
    return std::inner_product(d.begin(), d.end(), d.begin(), 0.0);
}

void check_labels(const ClassifierParams& params, const Batch& batch) {
    if (batch.inputs.rows() != batch.labels.size()) {
        throw Error(ErrorKind::shape, "batch has " + std::to_string(batch.inputs.rows()) + " inputs and " +
                                          std::to_string(batch.labels.size()) + " labels");
    }
    for (std::size_t i = 0; i < batch.labels.size(); ++i) {
        if (batch.labels[i] >= params.classes()) {
            throw Error(ErrorKind::label, "label " + std::to_string(batch.labels[i]) + " at batch row " +
                                              std::to_string(i) + " outside [0, " +
                                              std::to_string(params.classes()) + ")");
        }
    }
}

bool all_finite(const ClassifierParams& p) {
    const auto finite = [](double v) { return std::isfinite(v); };
    return std::isfinite(p.tau) && std::all_of(p.adapter.data().begin(), p.adapter.data().end(), finite) &&
           std::all_of(p.weights.data().begin(), p.weights.data().end(), finite);
}

void sgd_step(std::span<double> param, std::span<const double> grad, std::span<double> velocity, double lr,
              double momentum) {
    for (std::size_t i = 0; i < param.size(); ++i) {
        velocity[i] = momentum * velocity[i] + grad[i];
        param[i] -= lr * velocity[i];
    }
}

}  // namespace

ClassifierParams init_classifier(std::size_t input_dim, std::size_t embed_dim, std::size_t classes,
                                 const TrainHyper& hyper) {
    if (input_dim == 0 || embed_dim == 0 || classes < 2) {
        throw Error(ErrorKind::usage, "classifier needs input_dim, embed_dim >= 1 and at least 2 classes");
    }
    Rng rng(splitmix64(hyper.seed ^ 0x494e4954ULL));
    std::normal_distribution<double> gauss(0.0, 1.0);
    ClassifierParams p;
    p.hyper = hyper;
    p.adapter = Matrix(input_dim, embed_dim);
    const double scale = 1.0 / std::sqrt(static_cast<double>(input_dim));
    for (auto& v : p.adapter.data()) v = scale * gauss(rng);
    p.weights = Matrix(classes, embed_dim);
    for (auto& v : p.weights.data()) v = gauss(rng);
    return p;
}

Batch make_batch(const FeatureSet& fs, std::span<const std::size_t> rows) {
    Batch b;
    b.inputs = Matrix(rows.size(), fs.dim());
    b.labels.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto src = fs.row(rows[i]);
        std::copy(src.begin(), src.end(), b.inputs.row(i).begin());
        b.labels.push_back(fs.label(rows[i]));
    }
    return b;
}

Batch full_batch(const FeatureSet& fs) {
    std::vector<std::size_t> rows(fs.count());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    return make_batch(fs, rows);
}

std::vector<double> forward(const ClassifierParams& params, std::span<const double> x) {
    return forward_state(params, x, weight_norms(params)).prob;
}

double loss(const ClassifierParams& params, const Batch& batch) {
    check_labels(params, batch);
    const auto w_norms = weight_norms(params);
    double data = 0.0;
    for (std::size_t i = 0; i < batch.labels.size(); ++i) {
        const auto s = forward_state(params, batch.inputs.row(i), w_norms);
        // log-softmax evaluated directly so tiny probabilities do not underflow to log(0).
        double top = s.cos[0];
        for (const double v : s.cos) top = std::max(top, v);
        double lse = 0.0;
        for (const double v : s.cos) lse += std::exp(params.tau * (v - top));
        lse = std::log(lse) + params.tau * top;
        data += lse - params.tau * s.cos[batch.labels[i]];
    }
    if (!batch.labels.empty()) data /= static_cast<double>(batch.labels.size());
    const double decay = 0.5 * params.hyper.weight_decay * (squared_norm(params.adapter) + squared_norm(params.weights));
    return data + decay;
}

Gradients gradient(const ClassifierParams& params, const Batch& batch) {
    check_labels(params, batch);
    const auto w_norms = weight_norms(params);
    Gradients g;
    g.adapter = Matrix(params.input_dim(), params.embed_dim());
    g.weights = Matrix(params.classes(), params.embed_dim());
    const std::size_t embed = params.embed_dim();
    std::vector<double> dz(embed);

    for (std::size_t i = 0; i < batch.labels.size(); ++i) {
        const auto x = batch.inputs.row(i);
        const auto s = forward_state(params, x, w_norms);
        std::fill(dz.begin(), dz.end(), 0.0);
        for (std::size_t c = 0; c < params.classes(); ++c) {
            const double dlogit = s.prob[c] - (c == batch.labels[i] ? 1.0 : 0.0);
            g.tau += dlogit * s.cos[c];
            const double dcos = params.tau * dlogit;
            const auto w = params.weights.row(c);
            auto gw = g.weights.row(c);
            for (std::size_t j = 0; j < embed; ++j) {
                const double u = s.z[j] / s.z_norm;
                const double v = w[j] / w_norms[c];
                gw[j] += dcos * (u - s.cos[c] * v) / w_norms[c];
                dz[j] += dcos * (v - s.cos[c] * u) / s.z_norm;
            }
        }
        for (std::size_t r = 0; r < x.size(); ++r) {
            auto ga = g.adapter.row(r);
            for (std::size_t j = 0; j < embed; ++j) ga[j] += x[r] * dz[j];
        }
    }

    const double scale = batch.labels.empty() ? 0.0 : 1.0 / static_cast<double>(batch.labels.size());
    const double wd = params.hyper.weight_decay;
    const auto a = params.adapter.data();
    auto ga = g.adapter.data();
    for (std::size_t k = 0; k < ga.size(); ++k) ga[k] = ga[k] * scale + wd * a[k];
    const auto w = params.weights.data();
    auto gw = g.weights.data();
    for (std::size_t k = 0; k < gw.size(); ++k) gw[k] = gw[k] * scale + wd * w[k];
    g.tau *= scale;
    return g;
}

std::vector<int> lr_milestones(const TrainHyper& hyper) {
    std::vector<int> out;
    for (const int m : kMilestones) {
        if (hyper.scale_schedule && hyper.epochs < kReferenceEpochs) {
            const auto scaled = static_cast<int>(std::lround(static_cast<double>(m) * hyper.epochs / kReferenceEpochs));
            out.push_back(std::max(1, scaled));
        } else {
            out.push_back(m);
        }
    }
    return out;
}

double learning_rate_at(const TrainHyper& hyper, int epoch) {
    double lr = hyper.learning_rate;
    for (const int m : lr_milestones(hyper)) {
        if (epoch >= m) lr *= 0.1;
    }
    return lr;
}

ClassifierParams train(const FeatureSet& fs, ClassifierParams params, TrainReport* report) {
    if (fs.num_classes() < 2) {
        throw Error(ErrorKind::capacity, "training needs at least 2 classes");
    }
    if (fs.num_classes() != params.classes() || fs.dim() != params.input_dim()) {
        throw Error(ErrorKind::shape, "classifier shape does not match the training features");
    }
    const TrainHyper& hyper = params.hyper;
    if (hyper.batch_size < 1 || hyper.epochs < 0) {
        throw Error(ErrorKind::usage, "batch_size must be >= 1 and epochs >= 0");
    }
    const Batch everything = full_batch(fs);
    const double initial = loss(params, everything);
    if (!std::isfinite(initial)) {
        throw Error(ErrorKind::training_failure, "initial loss is not finite");
    }

    TrainReport local;
    local.initial_loss = initial;
    ClassifierParams best = params;
    double best_loss = initial;

    Matrix vel_adapter(params.input_dim(), params.embed_dim());
    Matrix vel_weights(params.classes(), params.embed_dim());
    double vel_tau = 0.0;

    std::vector<std::size_t> order(fs.count());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto batch = static_cast<std::size_t>(hyper.batch_size);

    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        const double lr = learning_rate_at(hyper, epoch);
        auto rng = make_rng(hyper.seed, kShuffleStream, static_cast<std::uint64_t>(epoch));
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const auto stop = std::min(order.size(), start + batch);
            const auto mb = make_batch(fs, std::span<const std::size_t>(order.data() + start, stop - start));
            const auto g = gradient(params, mb);
            sgd_step(params.adapter.data(), g.adapter.data(), vel_adapter.data(), lr, hyper.momentum);
            sgd_step(params.weights.data(), g.weights.data(), vel_weights.data(), lr, hyper.momentum);
            vel_tau = hyper.momentum * vel_tau + g.tau;
            params.tau = std::max(kMinTau, params.tau - lr * vel_tau);
            if (!all_finite(params)) {
                throw Error(ErrorKind::training_failure, "parameters diverged at epoch " + std::to_string(epoch + 1));
            }
        }
        const double epoch_loss = loss(params, everything);
        if (!std::isfinite(epoch_loss)) {
            throw Error(ErrorKind::training_failure, "loss diverged at epoch " + std::to_string(epoch + 1));
        }
        local.epoch_loss.push_back(epoch_loss);
        if (epoch_loss < best_loss) {
            best_loss = epoch_loss;
            best = params;
            local.best_epoch = epoch + 1;
        }
    }
    local.final_loss = best_loss;
    if (report) *report = std::move(local);
    return best;
}

double training_accuracy(const ClassifierParams& params, const FeatureSet& fs) {
    const auto w_norms = weight_norms(params);
    std::vector<double> x(fs.dim());
    std::size_t correct = 0;
    for (std::size_t i = 0; i < fs.count(); ++i) {
        const auto r = fs.row(i);
        std::copy(r.begin(), r.end(), x.begin());
        const auto s = forward_state(params, x, w_norms);
        const auto best = static_cast<std::size_t>(std::max_element(s.cos.begin(), s.cos.end()) - s.cos.begin());
        correct += (best == fs.label(i)) ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(fs.count());
}

FeatureSet project(const ClassifierParams& params, const FeatureSet& fs) {
    if (fs.dim() != params.input_dim()) {
        throw Error(ErrorKind::shape, "feature dim " + std::to_string(fs.dim()) + " != adapter input dim " +
                                          std::to_string(params.input_dim()));
    }
    std::vector<float> values;
    values.reserve(fs.count() * params.embed_dim());
    std::vector<double> z(params.embed_dim());
    for (std::size_t i = 0; i < fs.count(); ++i) {
        std::fill(z.begin(), z.end(), 0.0);
        const auto x = fs.row(i);
        for (std::size_t r = 0; r < x.size(); ++r) {
            const auto a = params.adapter.row(r);
            for (std::size_t j = 0; j < z.size(); ++j) z[j] += a[j] * static_cast<double>(x[r]);
        }
        for (const double v : z) values.push_back(static_cast<float>(v));
    }
    return FeatureSet(params.embed_dim(), std::move(values), std::vector<std::uint32_t>(fs.labels().begin(), fs.labels().end()),
                      fs.class_names());
}

void save_checkpoint(const ClassifierParams& params, const std::filesystem::path& path) {
    detail::ByteWriter out;
    out.bytes(kCheckpointMagic.data(), kCheckpointMagic.size());
    out.u32(kCheckpointVersion);
    out.u32(static_cast<std::uint32_t>(params.input_dim()));
    out.u32(static_cast<std::uint32_t>(params.embed_dim()));
    out.u32(static_cast<std::uint32_t>(params.classes()));
    out.f64(params.tau);
    out.f64(params.hyper.learning_rate);
    out.f64(params.hyper.momentum);
    out.f64(params.hyper.weight_decay);
    out.u32(static_cast<std::uint32_t>(params.hyper.epochs));
    out.u32(static_cast<std::uint32_t>(params.hyper.batch_size));
    out.u8(params.hyper.scale_schedule ? 1 : 0);
    out.u64(params.hyper.seed);
    for (const double v : params.adapter.data()) out.f64(v);
    for (const double v : params.weights.data()) out.f64(v);
    detail::write_file(path, out.buffer());
}

ClassifierParams load_checkpoint(const std::filesystem::path& path) {
    detail::ByteReader in(detail::read_file(path));
    const auto magic = in.str(4, "magic");
    if (!std::equal(magic.begin(), magic.end(), kCheckpointMagic.begin())) {
        throw Error(ErrorKind::format, "bad magic in '" + path.string() + "': not a PRFC checkpoint");
    }
    const auto version = in.u32("version");
    if (version != kCheckpointVersion) {
        throw Error(ErrorKind::format, "unsupported checkpoint version " + std::to_string(version));
    }
    const std::size_t input_dim = in.u32("input dim");
    const std::size_t embed_dim = in.u32("embed dim");
    const std::size_t classes = in.u32("classes");
    ClassifierParams p;
    p.tau = in.f64("tau");
    p.hyper.learning_rate = in.f64("learning rate");
    p.hyper.momentum = in.f64("momentum");
    p.hyper.weight_decay = in.f64("weight decay");
    p.hyper.epochs = static_cast<int>(in.u32("epochs"));
    p.hyper.batch_size = static_cast<int>(in.u32("batch size"));
    p.hyper.scale_schedule = in.u8("schedule flag") != 0;
    p.hyper.seed = in.u64("seed");
    const std::uint64_t expected = (static_cast<std::uint64_t>(input_dim) + classes) * embed_dim * 8;
    if (in.remaining() < expected) {
        throw Error(ErrorKind::truncation, "checkpoint payload is shorter than its declared shape");
    }
    p.adapter = Matrix(input_dim, embed_dim);
    for (auto& v : p.adapter.data()) v = in.f64("adapter");
    p.weights = Matrix(classes, embed_dim);
    for (auto& v : p.weights.data()) v = in.f64("weights");
    if (in.remaining() != 0) {
        throw Error(ErrorKind::format, "trailing bytes after checkpoint payload");
    }
    if (!(p.tau >= kMinTau)) {
        throw Error(ErrorKind::data, "checkpoint tau must be >= " + std::to_string(kMinTau));
    }
    return p;
}

}  // namespace protorect
