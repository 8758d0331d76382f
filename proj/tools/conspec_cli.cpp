// conspec: training, verification suites, reports and seed sweeps.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "conspec/checkpoint.hpp"
#include "conspec/config.hpp"
#include "conspec/report.hpp"
#include "conspec/sweep.hpp"
#include "conspec/trainer.hpp"
#include "conspec/verify.hpp"

namespace {

namespace fs = std::filesystem;
using namespace conspec;

constexpr int kUsageError = 2;

struct RunFlags {
    std::string config;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string out;
    std::string scheme;
    bool no_freeze = false;
    bool recruit = false;
};

void add_run_flags(CLI::App* app, RunFlags& f) {
    app->add_option("--config", f.config, "experiment config (JSON)")->required();
    app->add_option_function<std::uint64_t>("--seed", [&f](std::uint64_t s) { f.seed = s, f.seed_set = true; },
                                            "root seed");
    app->add_option("--out", f.out, "output directory (default $CONSPEC_OUT or config output.dir)");
    app->add_option("--scheme", f.scheme, "intrinsic reward scheme")->check(CLI::IsMember({"eq2", "eq3"}));
    app->add_flag("--no-freeze", f.no_freeze, "disable prototype freezing");
    app->add_flag("--recruit", f.recruit, "start with 3 prototypes and recruit on demand");
}

ExperimentConfig resolve(const RunFlags& f) {
    auto cfg = load_config(f.config);
    if (f.seed_set) cfg.seed = f.seed;
    if (!f.out.empty()) {
        cfg.output.dir = f.out;
    } else if (const char* env = std::getenv("CONSPEC_OUT")) {
        cfg.output.dir = env;
    }
    if (!f.scheme.empty()) cfg.model.scheme = f.scheme;
    if (f.no_freeze) cfg.model.freeze = false;
    if (f.recruit) cfg.model.recruit = true;
    return cfg;
}

int cmd_train(const RunFlags& f) {
    const auto cfg = resolve(f);
    trainer::TrainOptions opt;
    opt.on_epoch = [](const trainer::EpochMetrics& m) {
        if (m.epoch % 25 == 0)
            std::cerr << "epoch " << m.epoch << " episodes " << m.episodes << " success " << m.success_rate
                      << " frozen " << m.frozen << "\n";
    };
    const auto sum = trainer::train(cfg, opt);
    std::cout << trainer::to_json(sum).dump(2) << "\n";
    return 0;
}

int cmd_sweep(const RunFlags& f, std::size_t seeds) {
    const auto base = resolve(f);
    std::vector<sweep::Row> rows;
    for (std::size_t s = 0; s < seeds; ++s) {
        auto cfg = base;
        cfg.seed = base.seed + s;
        cfg.output.dir = (fs::path(base.output.dir) / ("seed_" + std::to_string(cfg.seed))).string();
        trainer::TrainOptions opt;
        opt.on_epoch = [&rows, seed = cfg.seed](const trainer::EpochMetrics& m) {
            rows.push_back({seed, m.epoch, m.episodes, m.success_rate, m.mean_return});
        };
        const auto sum = trainer::train(cfg, opt);
        std::cerr << "seed " << cfg.seed << ": " << sum.episodes << " episodes, final success "
                  << sum.final_success_rate << "\n";
    }
    fs::create_directories(base.output.dir);
    const auto path = fs::path(base.output.dir) / "sweep.csv";
    std::ofstream os(path);
    sweep::write_csv(os, rows);
    std::cout << path.string() << "\n";
    return 0;
}

int cmd_verify_gradients(std::size_t instances, std::uint64_t seed) {
    bool ok = true;
    auto show = [&ok](const verify::SuiteResult& r) {
        std::cout << (r.passed() ? "ok   " : "FAIL ") << r.name << ": " << (r.instances - r.failures) << "/"
                  << r.instances << " within " << verify::kGradTolerance << ", worst " << r.worst << "\n";
        ok = ok && r.passed();
    };
    for (const auto& r : verify::check_primitives(instances, seed)) show(r);
    for (const auto& r : verify::check_losses(instances, seed + 1000)) show(r);
    return ok ? 0 : 1;
}

int cmd_verify_shaping(int states, std::size_t seeds, std::size_t potentials, std::uint64_t seed) {
    const auto r = verify::check_policy_invariance(seeds, potentials, states, seed);
    std::cout << r.identical << "/" << r.mdps << " policies identical\n";
    const auto tel = verify::check_telescoping(1000, seed + 1);
    std::cout << "telescoping: " << tel.sequences << " sequences, worst residual " << tel.worst << "\n";
    return (r.identical == r.mdps && tel.worst <= 1e-9) ? 0 : 1;
}

int cmd_report(const std::string& config, const std::string& ckpt, const std::string& archive, const std::string& out,
               std::size_t active) {
    const auto cfg = load_config(config);
    Rng rng(0);
    core::ConspecNet net(cfg.conspec_config(), rng);
    checkpoint::load_file(ckpt, net.parameters());
    const auto eps = memory::read_jsonl_file(archive);
    const auto rep = report::interpretability_report(net, eps, active ? active : net.prototype_count(),
                                                     cfg.model.temperature);
    if (out.empty()) {
        std::cout << rep.dump(2) << "\n";
    } else {
        std::ofstream(out) << rep.dump() << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ConSpec with a PPO backbone on key-to-door gridworlds"};
    app.require_subcommand(1);

    RunFlags train_flags;
    auto* train = app.add_subcommand("train", "train one run");
    add_run_flags(train, train_flags);

    RunFlags sweep_flags;
    std::size_t sweep_seeds = 5;
    auto* sweep = app.add_subcommand("sweep", "train N seeds and aggregate a CSV");
    add_run_flags(sweep, sweep_flags);
    sweep->add_option("--seeds", sweep_seeds, "number of seeds")->check(CLI::PositiveNumber);

    std::size_t grad_instances = 100;
    std::uint64_t grad_seed = 1;
    auto* vg = app.add_subcommand("verify-gradients", "finite-difference gradient suite");
    vg->add_option("--instances", grad_instances, "random instances per check")->check(CLI::PositiveNumber);
    vg->add_option("--seed", grad_seed, "seed");

    int shaping_states = 0;
    std::size_t shaping_seeds = 50, shaping_potentials = 50;
    std::uint64_t shaping_seed = 1;
    auto* vs = app.add_subcommand("verify-shaping", "potential-shaping policy invariance oracle");
    vs->add_option("--states", shaping_states, "chain length (0 = random in [2, 10])")->check(CLI::Range(0, 20));
    vs->add_option("--seeds", shaping_seeds, "number of random chains")->check(CLI::PositiveNumber);
    vs->add_option("--potentials", shaping_potentials, "potentials per chain")->check(CLI::PositiveNumber);
    vs->add_option("--seed", shaping_seed, "seed");

    std::string rep_config, rep_ckpt, rep_archive, rep_out;
    std::size_t rep_active = 0;
    auto* rep = app.add_subcommand("report", "interpretability report from a checkpoint and an archive");
    rep->add_option("--config", rep_config, "experiment config used for training")->required();
    rep->add_option("--checkpoint", rep_ckpt, "ConSpec checkpoint")->required();
    rep->add_option("--archive", rep_archive, "trajectory archive (JSONL)")->required();
    rep->add_option("--out", rep_out, "report path (default stdout)");
    rep->add_option("--active", rep_active, "prototypes to report (default all)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kUsageError;
    }

    try {
        if (*train) return cmd_train(train_flags);
        if (*sweep) return cmd_sweep(sweep_flags, sweep_seeds);
        if (*vg) return cmd_verify_gradients(grad_instances, grad_seed);
        if (*vs) return cmd_verify_shaping(shaping_states, shaping_seeds, shaping_potentials, shaping_seed);
        if (*rep) return cmd_report(rep_config, rep_ckpt, rep_archive, rep_out, rep_active);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsageError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return kUsageError;
}
