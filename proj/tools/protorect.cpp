// protorect: episodic evaluation, synthetic data, theory curves and adapter
// training from the command line.

#include <charconv>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "protorect/error.hpp"
#include "protorect/featurestore.hpp"
#include "protorect/harness.hpp"
#include "protorect/trainer.hpp"

using namespace protorect;

namespace {

int parse_int(const std::string& text, const std::string& what) {
    int v = 0;
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || ptr != end) {
        throw Error(ErrorKind::usage, "bad integer '" + text + "' in " + what);
    }
    return v;
}

// "0,1,2,4,8", "1-10" or a mix such as "0,2-4".
std::vector<int> parse_int_list(const std::string& text, const std::string& what) {
    std::vector<int> out;
    std::size_t start = 0;
    while (start <= text.size()) {
        const auto comma = text.find(',', start);
        const auto item = text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
        const auto dash = item.find('-', 1);
        if (dash == std::string::npos) {
            out.push_back(parse_int(item, what));
        } else {
            const int lo = parse_int(item.substr(0, dash), what);
            const int hi = parse_int(item.substr(dash + 1), what);
            if (hi < lo) throw Error(ErrorKind::usage, "empty range '" + item + "' in " + what);
            for (int v = lo; v <= hi; ++v) out.push_back(v);
        }
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

std::vector<Mode> parse_modes(const std::string& text) {
    std::vector<Mode> out;
    std::size_t start = 0;
    while (true) {
        const auto comma = text.find(',', start);
        out.push_back(parse_mode(text.substr(start, comma == std::string::npos ? std::string::npos : comma - start)));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

void emit(const std::string& text, const std::string& out_path) {
    if (out_path.empty() || out_path == "-") {
        std::cout << text;
        std::cout.flush();
        return;
    }
    std::ofstream f(out_path, std::ios::binary);
    f << text;
    f.close();
    if (!f) throw Error(ErrorKind::io, "cannot write '" + out_path + "'");
}

FeatureSet load(const std::string& path) { return load_features(path, format_for_path(path)); }

std::string one_line(std::string s) {
    for (auto& ch : s) {
        if (ch == '\n' || ch == '\r') ch = ' ';
    }
    return s;
}

struct EvalArgs {
    std::string features;
    int ways = 5;
    int shots = 1;
    int queries = 15;
    int episodes = 600;
    int distractors = 0;
    std::string modes = "bd";
    std::string z = "8";
    double epsilon = 10.0;
    double tau = 10.0;
    std::uint64_t seed = 0;
    std::string format = "tsv";
    std::string out;
    bool intra_first = false;
    bool map = false;
};

void add_eval_options(CLI::App* cmd, EvalArgs& a) {
    cmd->add_option("--features", a.features, "feature file (.csv or binary)")->required();
    cmd->add_option("--ways", a.ways, "classes per episode")->capture_default_str();
    cmd->add_option("--queries", a.queries, "query rows per class")->capture_default_str();
    cmd->add_option("--episodes", a.episodes, "number of episodes")->capture_default_str();
    cmd->add_option("--epsilon", a.epsilon, "rectification weight temperature")->capture_default_str();
    cmd->add_option("--tau", a.tau, "scoring temperature")->capture_default_str();
    cmd->add_option("--seed", a.seed, "episode stream seed")->capture_default_str();
    cmd->add_option("--format", a.format, "tsv or json")->capture_default_str();
    cmd->add_option("--out", a.out, "output path (default stdout)");
}

RunConfig to_config(const EvalArgs& a) {
    RunConfig cfg;
    cfg.features = a.features;
    cfg.spec = {a.ways, a.shots, a.queries, a.distractors, a.seed};
    cfg.modes = parse_modes(a.modes);
    cfg.z_values = parse_int_list(a.z, "--z");
    cfg.epsilon = a.epsilon;
    cfg.tau = a.tau;
    cfg.episodes = a.episodes;
    cfg.format = parse_report_format(a.format);
    cfg.intra_first = a.intra_first;
    cfg.compute_map = a.map;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bias-diminishing prototype rectification for few-shot classification"};
    app.require_subcommand(1);

    EvalArgs ev;
    auto* eval_cmd = app.add_subcommand("eval", "evaluate prototype modes over sampled episodes");
    add_eval_options(eval_cmd, ev);
    eval_cmd->add_option("--shots", ev.shots, "support rows per class")->capture_default_str();
    eval_cmd->add_option("--distractors", ev.distractors, "extra unlabeled classes in the query batch")
        ->capture_default_str();
    eval_cmd->add_option("--mode", ev.modes, "comma list of cspn,bdc,bdi,bd")->capture_default_str();
    eval_cmd->add_option("--z", ev.z, "pseudo-labels per class: list or range, e.g. 0,1,2,4,8 or 1-10")
        ->capture_default_str();
    eval_cmd->add_flag("--intra-first", ev.intra_first, "rectify on unshifted queries, shift only for scoring");
    eval_cmd->add_flag("--map", ev.map, "report mAP even without distractors");

    SynthOptions so;
    std::string synth_layout = "sphere";
    std::string synth_out;
    auto* synth_cmd = app.add_subcommand("synth", "write a synthetic Gaussian feature set");
    synth_cmd->add_option("--classes", so.num_classes, "number of classes")->capture_default_str();
    synth_cmd->add_option("--per-class", so.per_class, "rows per class")->capture_default_str();
    synth_cmd->add_option("--dim", so.dim, "feature dimension")->capture_default_str();
    synth_cmd->add_option("--spread", so.spread, "per-dimension noise std")->capture_default_str();
    synth_cmd->add_option("--seed", so.seed, "generator seed")->capture_default_str();
    synth_cmd->add_option("--layout", synth_layout, "class means: sphere or orthant")->capture_default_str();
    synth_cmd->add_option("--out", synth_out, "output path; .csv writes CSV, anything else binary")->required();

    EvalArgs th;
    TheoryConfig tc;
    std::string params_features;
    std::string anchors = "1,5";
    std::string empirical_mode = "bdi";
    auto* theory_cmd = app.add_subcommand("theory", "fit and print the predicted accuracy curve over Z");
    add_eval_options(theory_cmd, th);
    theory_cmd->add_option("--k", tc.k, "shots of the predicted curve")->capture_default_str();
    theory_cmd->add_option("--z-max", tc.z_max, "largest Z on the curve")->capture_default_str();
    theory_cmd->add_option("--anchors", anchors, "shot counts whose CSPN accuracy fixes eta")->capture_default_str();
    theory_cmd->add_option("--param-features", params_features, "estimate lambda and alpha from this file instead");
    theory_cmd->add_flag("--empirical", tc.empirical, "also run the pseudo-label sweep for comparison");
    theory_cmd->add_option("--empirical-mode", empirical_mode, "mode of the empirical sweep")->capture_default_str();

    std::string train_features;
    std::string train_out;
    std::string train_project;
    TrainHyper hyper;
    std::size_t embed_dim = 0;
    bool fixed_schedule = false;
    auto* train_cmd = app.add_subcommand("train", "train a linear adapter with a cosine classifier");
    train_cmd->add_option("--features", train_features, "base-class feature file")->required();
    train_cmd->add_option("--epochs", hyper.epochs, "training epochs")->capture_default_str();
    train_cmd->add_option("--batch-size", hyper.batch_size, "minibatch size")->capture_default_str();
    train_cmd->add_option("--lr", hyper.learning_rate, "initial learning rate")->capture_default_str();
    train_cmd->add_option("--momentum", hyper.momentum, "SGD momentum")->capture_default_str();
    train_cmd->add_option("--weight-decay", hyper.weight_decay, "L2 penalty")->capture_default_str();
    train_cmd->add_option("--seed", hyper.seed, "init and shuffle seed")->capture_default_str();
    train_cmd->add_option("--embed-dim", embed_dim, "adapter output dimension (default: input dimension)");
    train_cmd->add_flag("--fixed-schedule", fixed_schedule, "keep the 10/20/40 drops even for short runs");
    train_cmd->add_option("--out", train_out, "checkpoint path")->required();
    train_cmd->add_option("--project", train_project, "also write adapter embeddings of --features here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: usage: " << one_line(e.what()) << '\n';
        return 2;
    }

    try {
        if (eval_cmd->parsed()) {
            const auto cfg = to_config(ev);
            const auto fs = load(cfg.features);
            const auto report = run_eval(cfg, fs, default_thread_count());
            emit(emit_report(report, cfg.format), ev.out);
        } else if (synth_cmd->parsed()) {
            so.layout = parse_mean_layout(synth_layout);
            const auto fs = synth(so);
            save_features(fs, synth_out, format_for_path(synth_out));
        } else if (theory_cmd->parsed()) {
            th.modes = "cspn";
            th.z = "0";
            tc.eval = to_config(th);
            tc.anchor_shots = parse_int_list(anchors, "--anchors");
            tc.empirical_mode = parse_mode(empirical_mode);
            const auto fs = load(th.features);
            const auto report = params_features.empty() ? run_theory(tc, fs, fs, default_thread_count())
                                                        : run_theory(tc, fs, load(params_features), default_thread_count());
            emit(emit_theory(report, tc.eval.format), th.out);
        } else if (train_cmd->parsed()) {
            hyper.scale_schedule = !fixed_schedule;
            const auto fs = load(train_features);
            auto params = init_classifier(fs.dim(), embed_dim == 0 ? fs.dim() : embed_dim, fs.num_classes(), hyper);
            TrainReport report;
            params = train(fs, std::move(params), &report);
            save_checkpoint(params, train_out);
            if (!train_project.empty()) {
                save_features(project(params, fs), train_project, format_for_path(train_project));
            }
            std::fprintf(stderr, "initial_loss=%.6f final_loss=%.6f best_epoch=%d train_acc=%.4f tau=%.4f\n",
                         report.initial_loss, report.final_loss, report.best_epoch, training_accuracy(params, fs),
                         params.tau);
        }
    } catch (const Error& e) {
        std::cerr << "error: " << to_string(e.kind()) << ": " << one_line(e.what()) << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << one_line(e.what()) << '\n';
        return 1;
    }
    return 0;
}
