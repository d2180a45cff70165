// jumpctl: synthesis, analysis and simulation of observer-based output
// feedback for jump-linear plants over lossy actuation/sensing channels.
//
// Exit codes: 0 success, 2 configuration/validation failure, 3 solver
// failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <Eigen/Dense>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "jumpctl/channel.hpp"
#include "jumpctl/closed_loop.hpp"
#include "jumpctl/config_io.hpp"
#include "jumpctl/control_care.hpp"
#include "jumpctl/filter_care.hpp"
#include "jumpctl/model.hpp"
#include "jumpctl/moment_ops.hpp"
#include "jumpctl/pendulum.hpp"

using nlohmann::json;
using namespace jumpctl;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitSolver = 3;

struct CliFailure {
    int code;
    std::string message;
};

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CliFailure{kExitValidation, "cannot write file: " + path};
    out << text;
}

RunConfig load_and_validate(const std::string& path) {
    RunConfig cfg;
    try {
        cfg = load_run_config(path);
    } catch (const ConfigError& e) {
        throw CliFailure{kExitValidation, e.what()};
    }
    const auto violations = validate_run_config(cfg);
    if (!violations.empty()) {
        std::string msg = "configuration invalid:";
        for (const auto& v : violations) msg += "\n  - " + v;
        throw CliFailure{kExitValidation, msg};
    }
    return cfg;
}

json provenance_json(const RunConfig& cfg) {
    return json{{"config_hash", hex64(fnv1a_hash(cfg.canonical_json))},
                {"seed", cfg.sim_seed},
                {"versions",
                 {{"jumpctl", kVersion},
                  {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                                std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                std::to_string(EIGEN_MINOR_VERSION)}}}};
}

json blocks_to_json(const BlockCollection& b) {
    json out = json::array();
    for (const auto& m : b.blocks) out.push_back(io::matrix_to_json(m));
    return out;
}

json separation_json(const SeparationReport& rep) {
    json j{{"verdict", rep.mss ? "mean-square stable" : "not mean-square stable"},
           {"mss", rep.mss},
           {"rho_control", rep.rho_control},
           {"rho_filter", rep.rho_filter}};
    if (rep.rho_augmented) j["rho_augmented"] = *rep.rho_augmented;
    if (rep.verdicts_agree) j["verdicts_agree"] = *rep.verdicts_agree;
    return j;
}

json lmi_json(const LmiReport& rep) {
    return json{{"feasible", rep.feasible},
                {"care_form_feasible", rep.care_form_feasible},
                {"forms_agree", rep.forms_agree},
                {"trace", rep.trace},
                {"min_eig_blocks", rep.min_eig_blocks},
                {"min_eig_innovation", rep.min_eig_innovation},
                {"min_eig_care_residual", rep.min_eig_care_residual},
                {"max_fixed_point_residual", rep.max_fixed_point_residual}};
}

int run_synthesize(const std::string& config_path, const std::string& out_path) {
    const RunConfig cfg = load_and_validate(config_path);

    ControlCareSolution control;
    FilterCareSolution filter;
    try {
        control = solve_control_care(cfg.model, cfg.actuation_channel, cfg.solver_tol,
                                     cfg.solver_max_iter);
        filter = solve_filter_care(cfg.model, cfg.sensing_channel,
                                   {cfg.solver_tol, cfg.solver_max_iter});
    } catch (const Error& e) {
        throw CliFailure{kExitSolver, e.what()};
    }
    const LmiReport lmi = verify_lmi_feasibility(cfg.model, cfg.sensing_channel, filter.Y);
    const SeparationReport sep = check_separation(cfg.model, cfg.actuation_channel,
                                                  cfg.sensing_channel, control.F, filter.M);

    json report{
        {"control",
         {{"residual", control.residual},
          {"rho", control.rho_control},
          {"cost", control.cost},
          {"iterations", control.iterations},
          {"stabilizing", control.stabilizing}}},
        {"filter",
         {{"residual", filter.residual},
          {"rho", filter.rho_filter},
          {"cost", filter.cost},
          {"iterations", filter.iterations},
          {"trace_history", filter.trace_history},
          {"lmi_feasible", lmi.feasible},
          {"stabilizing", filter.stabilizing}}},
        {"separation", separation_json(sep)},
        {"lmi", lmi_json(lmi)},
        {"provenance", provenance_json(cfg)},
        {"gains", io::gains_to_json(control.F, filter.M)},
        {"solution", {{"X", blocks_to_json(control.X)}, {"Y", blocks_to_json(filter.Y)}}}};
    write_text(out_path, report.dump(2) + "\n");

    std::cout << "synthesize: rho_control = " << control.rho_control
              << ", rho_filter = " << filter.rho_filter << ", J_c = " << control.cost
              << ", J_f = " << filter.cost << "\n"
              << "report written to " << out_path << "\n";
    if (!control.stabilizing || !filter.stabilizing)
        std::cerr << "warning: synthesized gains are not mean-square stabilizing\n";
    return 0;
}

int run_analyze(const std::string& config_path, const std::string& gains_path,
                const std::string& out_path) {
    const RunConfig cfg = load_and_validate(config_path);
    io::GainsFile gains;
    try {
        gains = io::load_gains(gains_path);
    } catch (const ConfigError& e) {
        throw CliFailure{kExitValidation, e.what()};
    }
    if (static_cast<int>(gains.F.size()) != cfg.actuation_channel.modes())
        throw CliFailure{kExitValidation, "gains: F block count does not match the channel"};
    if (static_cast<int>(gains.M.size()) != cfg.sensing_channel.modes())
        throw CliFailure{kExitValidation, "gains: M block count does not match the channel"};

    SeparationReport sep;
    try {
        sep = check_separation(cfg.model, cfg.actuation_channel, cfg.sensing_channel, gains.F,
                               gains.M);
    } catch (const Error& e) {
        throw CliFailure{kExitSolver, e.what()};
    }

    json report{{"separation", separation_json(sep)},
                {"control", {{"rho", sep.rho_control}, {"stabilizing", sep.rho_control < 1.0}}},
                {"filter", {{"rho", sep.rho_filter}, {"stabilizing", sep.rho_filter < 1.0}}},
                {"provenance", provenance_json(cfg)}};
    if (gains.X)
        report["control"]["cost"] =
            optimal_control_cost(cfg.actuation_channel, cfg.model, *gains.X);
    if (gains.Y) {
        report["filter"]["cost"] = optimal_filter_cost(cfg.sensing_channel, *gains.Y);
        report["lmi"] = lmi_json(verify_lmi_feasibility(cfg.model, cfg.sensing_channel, *gains.Y));
        report["filter"]["lmi_feasible"] = report["lmi"]["feasible"];
    }
    write_text(out_path, report.dump(2) + "\n");
    std::cout << "analyze: rho_control = " << sep.rho_control
              << ", rho_filter = " << sep.rho_filter << ", verdict: "
              << (sep.mss ? "mean-square stable" : "not mean-square stable") << "\n"
              << "report written to " << out_path << "\n";
    return 0;
}

// Empirical vs exact error-moment comparison, attached to simulation
// summaries when there are enough trials for standard errors to mean much.
json moment_comparison_json(const RunConfig& cfg, const io::GainsFile& gains,
                            const SimulationTrace& trace) {
    const Eigen::VectorXd pi0 =
        cfg.eta0 ? Eigen::VectorXd(Eigen::VectorXd::Unit(cfg.sensing_channel.modes(), *cfg.eta0))
                 : stationary_of(cfg.sensing_channel);
    MomentState state = initial_moment_state(cfg.sensing_channel, gains.M, cfg.model,
                                             cfg.x0 - cfg.xhat0, pi0);
    double max_z = 0.0;
    json points = json::array();
    for (long k = 1; k <= std::min<long>(trace.steps, 10); ++k) {
        if (k > 1) state = propagate_moments(cfg.sensing_channel, gains.M, cfg.model, state);
        if (k != 1 && k != 2 && k != 5 && k != 10) continue;
        const Eigen::VectorXd mean = total_first_moment(state);
        const Eigen::MatrixXd second = total_second_moment(state);
        double z_mean = 0.0, z_second = 0.0;
        for (int i = 0; i < mean.size(); ++i) {
            const double se = std::max(trace.summary.se_e[k](i), 1e-12);
            z_mean = std::max(z_mean, std::abs(trace.summary.mean_e[k](i) - mean(i)) / se);
        }
        for (int i = 0; i < second.rows(); ++i)
            for (int j = 0; j < second.cols(); ++j) {
                const double se = std::max(trace.summary.se_ee[k](i, j), 1e-12);
                z_second = std::max(
                    z_second, std::abs(trace.summary.mean_ee[k](i, j) - second(i, j)) / se);
            }
        max_z = std::max({max_z, z_mean, z_second});
        points.push_back({{"k", k}, {"z_mean", z_mean}, {"z_second_moment", z_second}});
    }
    return json{{"points", points},
                {"max_z", max_z},
                {"flag", max_z <= 3.0 ? "PASS within 3 sigma" : "FAIL beyond 3 sigma"}};
}

int run_simulate(const std::string& config_path, const std::string& gains_path,
                 const std::string& traces_path, const std::string& summary_path,
                 std::optional<long> trials, std::optional<long> steps,
                 std::optional<std::uint64_t> seed, std::optional<std::string> noise) {
    RunConfig cfg = load_and_validate(config_path);
    if (trials) cfg.sim_trials = *trials;
    if (steps) cfg.sim_steps = *steps;
    if (seed) cfg.sim_seed = *seed;
    if (noise) {
        if (*noise != "on" && *noise != "off")
            throw CliFailure{kExitValidation, "--noise must be 'on' or 'off'"};
        cfg.sim_noise_on = (*noise == "on");
    }
    io::GainsFile gains;
    try {
        gains = io::load_gains(gains_path);
    } catch (const ConfigError& e) {
        throw CliFailure{kExitValidation, e.what()};
    }

    SimOptions opts;
    opts.store_records = true;
    opts.theta0 = cfg.theta0;
    opts.eta0 = cfg.eta0;
    SimulationTrace trace;
    try {
        trace = simulate(cfg.model, cfg.actuation_channel, cfg.sensing_channel, gains.F, gains.M,
                         cfg.x0, cfg.xhat0, cfg.sim_steps, cfg.sim_trials, cfg.sim_seed,
                         cfg.sim_noise_on, opts);
    } catch (const Error& e) {
        throw CliFailure{kExitSolver, e.what()};
    }

    {
        std::ofstream out(traces_path, std::ios::binary);
        if (!out) throw CliFailure{kExitValidation, "cannot write file: " + traces_path};
        write_trace_csv(out, trace, cfg.model.nx(), cfg.model.nu());
    }

    json summary{{"steps", trace.steps},
                 {"trials", trace.trials},
                 {"seed", trace.seed},
                 {"noise_on", trace.noise_on},
                 {"burn_in", trace.summary.burn_in},
                 {"avg_cost_z", trace.summary.avg_cost_z},
                 {"avg_cost_e", trace.summary.avg_cost_e},
                 {"final_mean_xnorm2", trace.summary.mean_xnorm2.back()},
                 {"final_mean_enorm2", trace.summary.mean_enorm2.back()},
                 {"provenance", provenance_json(cfg)}};
    if (trace.trials >= 100)
        summary["moment_comparison"] = moment_comparison_json(cfg, gains, trace);
    write_text(summary_path, summary.dump(2) + "\n");
    std::cout << "simulate: " << trace.trials << " trial(s) x " << trace.steps
              << " steps, traces written to " << traces_path << ", summary to " << summary_path
              << "\n";
    return 0;
}

json pendulum_config_json(long steps, long trials, std::uint64_t seed, bool noise_on) {
    const MjlsModel model = pendulum::model();
    const MarkovChannel ch = pendulum::channel();
    return json{{"model", io::model_to_json(model)},
                {"actuation_channel", io::channel_to_json(ch)},
                {"sensing_channel", io::channel_to_json(ch)},
                {"initial",
                 {{"x0", io::vector_to_json(pendulum::initial_state())},
                  {"xhat0", io::vector_to_json(pendulum::initial_estimate())},
                  {"theta0", "stationary"},
                  {"eta0", "stationary"}}},
                {"solver", {{"tol", 1e-10}, {"max_iter", 100000}}},
                {"sim",
                 {{"steps", steps}, {"trials", trials}, {"seed", seed}, {"noise_on", noise_on}}}};
}

int run_demo_pendulum(const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const auto path = [&](const std::string& name) { return (fs::path(out_dir) / name).string(); };

    const json cfg_json = pendulum_config_json(500, 20, 20250401, true);
    write_text(path("pendulum_config.json"), cfg_json.dump(2) + "\n");

    const MjlsModel model = pendulum::model();
    const double rho_a = spectral_radius(model.A);
    std::cout << "pendulum demo\n"
              << "  largest |eigenvalue| of A: " << rho_a << " (open loop unstable)\n"
              << "  note: the published channel matrix elides near-zero columns; the bundled\n"
              << "  transition matrix is a surrogate keeping the printed entries, spreading\n"
              << "  each row's missing mass over the elided columns (1e-5 on the first).\n"
              << "  note: the measurement map is not published; using L = I4.\n";

    int rc = run_synthesize(path("pendulum_config.json"), path("pendulum_report.json"));
    if (rc != 0) return rc;

    rc = run_simulate(path("pendulum_config.json"), path("pendulum_report.json"),
                      path("traces_noisy.csv"), path("summary_noisy.json"), std::nullopt,
                      std::nullopt, std::nullopt, std::string("on"));
    if (rc != 0) return rc;
    rc = run_simulate(path("pendulum_config.json"), path("pendulum_report.json"),
                      path("traces_noiseless.csv"), path("summary_noiseless.json"), 5L,
                      std::nullopt, std::nullopt, std::string("off"));
    if (rc != 0) return rc;

    std::cout << "demo outputs in " << out_dir << ":\n"
              << "  pendulum_config.json  pendulum_report.json\n"
              << "  traces_noisy.csv      summary_noisy.json\n"
              << "  traces_noiseless.csv  summary_noiseless.json\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Optimal output feedback for jump-linear plants over lossy channels"};
    app.require_subcommand(1);

    std::string config_path, gains_path, out_path, traces_path, summary_path, out_dir;

    CLI::App* syn = app.add_subcommand("synthesize", "Solve both Riccati problems, write gains");
    syn->add_option("--config", config_path, "run configuration JSON")->required();
    syn->add_option("--out", out_path, "output report JSON (includes gains)")->required();

    CLI::App* ana = app.add_subcommand("analyze", "Stability and feasibility of supplied gains");
    ana->add_option("--config", config_path, "run configuration JSON")->required();
    ana->add_option("--gains", gains_path, "gains JSON (a synthesize report works)")->required();
    ana->add_option("--out", out_path, "output report JSON")->required();

    CLI::App* sim = app.add_subcommand("simulate", "Closed-loop Monte Carlo with trace output");
    sim->add_option("--config", config_path, "run configuration JSON")->required();
    sim->add_option("--gains", gains_path, "gains JSON (a synthesize report works)")->required();
    sim->add_option("--traces", traces_path, "output trace CSV")->required();
    sim->add_option("--summary", summary_path, "output summary JSON")->required();
    long trials_v = 0, steps_v = 0;
    std::uint64_t seed_v = 0;
    std::string noise_v;
    CLI::Option* o_trials = sim->add_option("--trials", trials_v, "override sim.trials");
    CLI::Option* o_steps = sim->add_option("--steps", steps_v, "override sim.steps");
    CLI::Option* o_seed = sim->add_option("--seed", seed_v, "override sim.seed");
    CLI::Option* o_noise = sim->add_option("--noise", noise_v, "on|off, override sim.noise_on");

    CLI::App* demo = app.add_subcommand("demo", "Bundled demonstrations");
    CLI::App* demo_pendulum = demo->add_subcommand("pendulum", "Inverted pendulum on a cart");
    demo_pendulum->add_option("--out", out_dir, "output directory")->required();
    demo->require_subcommand(1);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitValidation;
    }

    std::optional<long> trials, steps;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> noise;
    if (o_trials->count() > 0) trials = trials_v;
    if (o_steps->count() > 0) steps = steps_v;
    if (o_seed->count() > 0) seed = seed_v;
    if (o_noise->count() > 0) noise = noise_v;

    try {
        if (syn->parsed()) return run_synthesize(config_path, out_path);
        if (ana->parsed()) return run_analyze(config_path, gains_path, out_path);
        if (sim->parsed())
            return run_simulate(config_path, gains_path, traces_path, summary_path, trials, steps,
                                seed, noise);
        if (demo->parsed() && demo_pendulum->parsed()) return run_demo_pendulum(out_dir);
    } catch (const CliFailure& f) {
        std::cerr << "error: " << f.message << "\n";
        return f.code;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitSolver;
    }
    return 0;
}
