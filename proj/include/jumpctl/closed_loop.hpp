#pragma once

#include <Eigen/Dense>
#include <unsupported/Eigen/KroneckerProduct>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "jumpctl/block.hpp"
#include "jumpctl/channel.hpp"
#include "jumpctl/errors.hpp"
#include "jumpctl/model.hpp"
#include "jumpctl/moment_ops.hpp"

// Output-feedback closed loop: the observer-based controller assembled from
// the delayed-mode feedback gains F and the filtering gains M, its augmented
// [state; error] step matrices, a seeded Monte Carlo simulator with
// acknowledgment timing (the controller learns the previous step's deliveries
// and modes before computing the next input), and the stability split check:
// the loop is mean-square stable exactly when the control-side and
// filter-side operators are both contractive.

namespace jumpctl {

struct ClosedLoopMatrices {
    Eigen::MatrixXd A, B, G, L, H;
    ModeMatrices F; // per actuation mode, nu x nx
    ModeMatrices M; // per sensing mode,   nx x ny
    int nx = 0;

    // Controller matrices: xhat' = ahat xhat + bhat y, u = chat xhat.
    Eigen::MatrixXd ahat(int nu_bit, int theta_prev, int eta, int gamma_bit) const {
        return A + static_cast<double>(nu_bit) * (B * F[theta_prev]) +
               static_cast<double>(gamma_bit) * (M[eta] * L);
    }
    Eigen::MatrixXd bhat(int eta) const { return -M[eta]; }
    Eigen::MatrixXd chat(int theta_prev) const { return F[theta_prev]; }

    // Augmented step matrix on [x; e]; the lower-left block is identically
    // zero, so the error dynamics never feeds back from the state.
    Eigen::MatrixXd gamma(int nu_bit, int theta_prev, int gamma_bit, int eta) const {
        const double nu = static_cast<double>(nu_bit);
        const double ga = static_cast<double>(gamma_bit);
        Eigen::MatrixXd g = Eigen::MatrixXd::Zero(2 * nx, 2 * nx);
        const Eigen::MatrixXd bf = B * F[theta_prev];
        g.topLeftCorner(nx, nx) = A + nu * bf;
        g.topRightCorner(nx, nx) = -nu * bf;
        g.bottomRightCorner(nx, nx) = A + ga * (M[eta] * L);
        return g;
    }

    Eigen::MatrixXd sigma(int gamma_bit, int eta) const {
        Eigen::MatrixXd s(2 * nx, G.cols());
        s.topRows(nx) = G;
        s.bottomRows(nx) = G + static_cast<double>(gamma_bit) * (M[eta] * H);
        return s;
    }
};

inline ClosedLoopMatrices build_closed_loop(const MjlsModel& model, const ModeMatrices& F,
                                            const ModeMatrices& M) {
    for (const auto& f : F)
        if (f.rows() != model.nu() || f.cols() != model.nx())
            throw DimensionError("build_closed_loop: control gain has wrong shape");
    for (const auto& m : M)
        if (m.rows() != model.nx() || m.cols() != model.ny())
            throw DimensionError("build_closed_loop: filter gain has wrong shape");
    if (F.empty() || M.empty()) throw DimensionError("build_closed_loop: empty gain list");
    return ClosedLoopMatrices{model.A, model.B, model.G, model.L, model.H, F, M, model.nx()};
}

// One observer update. The controller has the delivery acknowledgments for
// the step, so both nu and gamma are known when the estimate advances.
inline Eigen::VectorXd observer_step(const MjlsModel& model, const ModeMatrices& M,
                                     const Eigen::VectorXd& xhat, const Eigen::VectorXd& y,
                                     int nu_bit, int gamma_bit, int eta,
                                     const Eigen::VectorXd& u) {
    if (xhat.size() != model.nx() || u.size() != model.nu() || y.size() != model.ny())
        throw DimensionError("observer_step: dimension mismatch");
    if (eta < 0 || eta >= static_cast<int>(M.size()))
        throw IndexError("observer_step: sensing mode out of range");
    return model.A * xhat + static_cast<double>(nu_bit) * (model.B * u) -
           M[eta] * (y - static_cast<double>(gamma_bit) * (model.L * xhat));
}

struct SimulatorState {
    Eigen::VectorXd x, xhat, e;
    int theta_prev = 0, theta = 0, eta = 0;
    long k = 0;
};

struct StepRecord {
    long k = 0;
    long trial = 0;
    int theta = 0; // 1-based mode labels, matching the trace file convention
    int eta = 0;
    int nu = 0;
    int gamma = 0;
    Eigen::VectorXd x, xhat, e, u, y;
    double znorm2 = 0.0;
};

struct MomentSummary {
    long trials = 0;
    long steps = 0;
    long burn_in = 0;
    std::vector<Eigen::VectorXd> mean_e, se_e;
    std::vector<Eigen::MatrixXd> mean_ee, se_ee;
    std::vector<Eigen::MatrixXd> mean_xx, se_xx;
    std::vector<double> mean_znorm2, mean_xnorm2, mean_enorm2;
    double avg_cost_z = 0.0; // time average of E[z'z] after burn-in
    double avg_cost_e = 0.0; // time average of E[e'e] after burn-in
};

struct SimulationTrace {
    std::vector<StepRecord> records; // empty unless record storage was requested
    MomentSummary summary;
    long steps = 0;
    long trials = 0;
    std::uint64_t seed = 0;
    bool noise_on = true;
};

struct SimOptions {
    bool store_records = true;
    int threads = 0;                // 0: hardware default, capped by JUMPCTL_THREADS
    std::optional<int> theta0;      // pinned initial modes (0-based); default stationary draw
    std::optional<int> eta0;
};

namespace detail {

struct MomentAccumulator {
    std::vector<Eigen::VectorXd> sum_e, sum_e2;
    std::vector<Eigen::MatrixXd> sum_ee, sum_ee2, sum_xx, sum_xx2;
    std::vector<double> sum_z, sum_x2, sum_en2;
    long count = 0;

    void init(long ksteps, int nx) {
        sum_e.assign(ksteps, Eigen::VectorXd::Zero(nx));
        sum_e2.assign(ksteps, Eigen::VectorXd::Zero(nx));
        sum_ee.assign(ksteps, Eigen::MatrixXd::Zero(nx, nx));
        sum_ee2.assign(ksteps, Eigen::MatrixXd::Zero(nx, nx));
        sum_xx.assign(ksteps, Eigen::MatrixXd::Zero(nx, nx));
        sum_xx2.assign(ksteps, Eigen::MatrixXd::Zero(nx, nx));
        sum_z.assign(ksteps, 0.0);
        sum_x2.assign(ksteps, 0.0);
        sum_en2.assign(ksteps, 0.0);
    }

    void add(long k, const Eigen::VectorXd& x, const Eigen::VectorXd& e, double znorm2) {
        const Eigen::MatrixXd ee = e * e.adjoint();
        const Eigen::MatrixXd xx = x * x.adjoint();
        sum_e[k] += e;
        sum_e2[k] += e.cwiseAbs2();
        sum_ee[k] += ee;
        sum_ee2[k] += ee.cwiseAbs2();
        sum_xx[k] += xx;
        sum_xx2[k] += xx.cwiseAbs2();
        sum_z[k] += znorm2;
        sum_x2[k] += x.squaredNorm();
        sum_en2[k] += e.squaredNorm();
    }

    void merge(const MomentAccumulator& o) {
        for (std::size_t k = 0; k < sum_e.size(); ++k) {
            sum_e[k] += o.sum_e[k];
            sum_e2[k] += o.sum_e2[k];
            sum_ee[k] += o.sum_ee[k];
            sum_ee2[k] += o.sum_ee2[k];
            sum_xx[k] += o.sum_xx[k];
            sum_xx2[k] += o.sum_xx2[k];
            sum_z[k] += o.sum_z[k];
            sum_x2[k] += o.sum_x2[k];
            sum_en2[k] += o.sum_en2[k];
        }
        count += o.count;
    }
};

inline MomentSummary finalize_summary(const MomentAccumulator& acc, long steps) {
    MomentSummary s;
    s.trials = acc.count;
    s.steps = steps;
    const double t = std::max<long>(acc.count, 1);
    const long ksteps = steps + 1;
    s.mean_e.resize(ksteps);
    s.se_e.resize(ksteps);
    s.mean_ee.resize(ksteps);
    s.se_ee.resize(ksteps);
    s.mean_xx.resize(ksteps);
    s.se_xx.resize(ksteps);
    s.mean_znorm2.resize(ksteps);
    s.mean_xnorm2.resize(ksteps);
    s.mean_enorm2.resize(ksteps);
    for (long k = 0; k <= steps; ++k) {
        s.mean_e[k] = acc.sum_e[k] / t;
        s.mean_ee[k] = acc.sum_ee[k] / t;
        s.mean_xx[k] = acc.sum_xx[k] / t;
        s.se_e[k] = ((acc.sum_e2[k] / t - s.mean_e[k].cwiseAbs2()).cwiseMax(0.0) / t).cwiseSqrt();
        s.se_ee[k] =
            ((acc.sum_ee2[k] / t - s.mean_ee[k].cwiseAbs2()).cwiseMax(0.0) / t).cwiseSqrt();
        s.se_xx[k] =
            ((acc.sum_xx2[k] / t - s.mean_xx[k].cwiseAbs2()).cwiseMax(0.0) / t).cwiseSqrt();
        s.mean_znorm2[k] = acc.sum_z[k] / t;
        s.mean_xnorm2[k] = acc.sum_x2[k] / t;
        s.mean_enorm2[k] = acc.sum_en2[k] / t;
    }
    // Finite-horizon stand-in for the long-run averages: drop the first 10%
    // of the horizon, then average over time.
    s.burn_in = steps / 10;
    double z = 0.0, e = 0.0;
    long n = 0;
    for (long k = s.burn_in; k <= steps; ++k, ++n) {
        z += s.mean_znorm2[k];
        e += s.mean_enorm2[k];
    }
    s.avg_cost_z = n > 0 ? z / n : 0.0;
    s.avg_cost_e = n > 0 ? e / n : 0.0;
    return s;
}

inline int resolve_thread_count(int requested, long work_items) {
    int threads = requested;
    if (const char* env = std::getenv("JUMPCTL_THREADS")) {
        const int cap = std::atoi(env);
        if (cap > 0) threads = threads > 0 ? std::min(threads, cap) : cap;
    }
    if (threads <= 0) threads = static_cast<int>(std::thread::hardware_concurrency());
    if (threads <= 0) threads = 1;
    return static_cast<int>(std::min<long>(threads, std::max<long>(work_items, 1)));
}

} // namespace detail

// Seeded closed-loop Monte Carlo. Per trial, the generator stream is derived
// from (seed, trial), so paths do not depend on scheduling. The plant state
// and the estimate advance by their own recursions; the error advances by its
// own recursion as well (it never reads the control input), and the identity
// x - xhat = e is asserted to 1e-12 at every step. Trials are split into
// fixed blocks of 256 for the moment reduction, which makes the summary
// independent of the number of worker threads.
inline SimulationTrace simulate(const MjlsModel& model, const MarkovChannel& ch_act,
                                const MarkovChannel& ch_sens, const ModeMatrices& F,
                                const ModeMatrices& M, const Eigen::VectorXd& x0,
                                const Eigen::VectorXd& xhat0, long steps, long trials,
                                std::uint64_t seed, bool noise_on, const SimOptions& opts = {}) {
    const ClosedLoopMatrices loop = build_closed_loop(model, F, M);
    (void)loop;
    if (x0.size() != model.nx() || xhat0.size() != model.nx())
        throw DimensionError("simulate: initial state dimension mismatch");
    if (steps < 1 || trials < 1) throw DimensionError("simulate: steps and trials must be >= 1");
    if (opts.theta0 && (*opts.theta0 < 0 || *opts.theta0 >= ch_act.modes()))
        throw InvalidInitialModeError("simulate: pinned actuation mode out of range");
    if (opts.eta0 && (*opts.eta0 < 0 || *opts.eta0 >= ch_sens.modes()))
        throw InvalidInitialModeError("simulate: pinned sensing mode out of range");

    const Eigen::VectorXd pi_act = stationary_of(ch_act);
    const Eigen::VectorXd pi_sens = stationary_of(ch_sens);
    const int nx = model.nx();
    const int nw = model.nw();
    const double noise_sd = std::sqrt(model.noise_scale);
    const Eigen::MatrixXd gg = model.G;
    const Eigen::MatrixXd hh = model.H;

    SimulationTrace trace;
    trace.steps = steps;
    trace.trials = trials;
    trace.seed = seed;
    trace.noise_on = noise_on;
    if (opts.store_records) trace.records.resize(static_cast<std::size_t>(trials) * (steps + 1));

    constexpr long kBlock = 256;
    const long blocks = (trials + kBlock - 1) / kBlock;
    std::vector<detail::MomentAccumulator> acc(static_cast<std::size_t>(blocks));

    auto run_trial = [&](long trial, detail::MomentAccumulator& a) {
        Rng gen = Rng::substream(seed, rng_domain::kTrial, static_cast<std::uint64_t>(trial));
        int theta = opts.theta0 ? *opts.theta0 : gen.categorical(pi_act, ch_act.modes());
        int eta = opts.eta0 ? *opts.eta0 : gen.categorical(pi_sens, ch_sens.modes());
        int theta_prev = theta; // no acknowledgment exists before the first step

        Eigen::VectorXd x = x0;
        Eigen::VectorXd xhat = xhat0;
        Eigen::VectorXd e = x0 - xhat0;
        Eigen::VectorXd w = Eigen::VectorXd::Zero(nw);

        for (long k = 0; k <= steps; ++k) {
            const Eigen::VectorXd u = F[theta_prev] * xhat;
            const int nu_bit = gen.bernoulli(ch_act.delivery_prob(theta)) ? 1 : 0;
            const int gamma_bit = gen.bernoulli(ch_sens.delivery_prob(eta)) ? 1 : 0;
            if (noise_on)
                for (int i = 0; i < nw; ++i) w(i) = noise_sd * gen.gaussian();
            const Eigen::VectorXd y =
                static_cast<double>(gamma_bit) * (model.L * x + hh * w);
            const double znorm2 =
                x.dot(model.Qc * x) + nu_bit * u.dot(model.Rc * u);

            a.add(k, x, e, znorm2);
            if (opts.store_records) {
                StepRecord& r = trace.records[static_cast<std::size_t>(trial) * (steps + 1) + k];
                r.k = k;
                r.trial = trial;
                r.theta = theta + 1;
                r.eta = eta + 1;
                r.nu = nu_bit;
                r.gamma = gamma_bit;
                r.x = x;
                r.xhat = xhat;
                r.e = e;
                r.u = u;
                r.y = y;
                r.znorm2 = znorm2;
            }
            if (k == steps) break;

            const Eigen::VectorXd x_next =
                model.A * x + static_cast<double>(nu_bit) * (model.B * u) + gg * w;
            const Eigen::VectorXd xhat_next =
                observer_step(model, M, xhat, y, nu_bit, gamma_bit, eta, u);
            const Eigen::VectorXd e_next =
                (model.A + static_cast<double>(gamma_bit) * (M[eta] * model.L)) * e +
                (gg + static_cast<double>(gamma_bit) * (M[eta] * hh)) * w;
            x = x_next;
            xhat = xhat_next;
            e = e_next;
            const double scale = std::max({1.0, x.norm(), xhat.norm(), e.norm()});
            if ((x - xhat - e).norm() > 1e-12 * scale)
                throw Error("simulate: estimate/error bookkeeping drifted");

            theta_prev = theta;
            theta = gen.categorical(ch_act.tpm.entries.row(theta), ch_act.modes());
            eta = gen.categorical(ch_sens.tpm.entries.row(eta), ch_sens.modes());
        }
        a.count += 1;
    };

    const int threads = detail::resolve_thread_count(opts.threads, blocks);
    auto run_block_range = [&](long b_begin, long b_end) {
        for (long b = b_begin; b < b_end; ++b) {
            acc[static_cast<std::size_t>(b)].init(steps + 1, nx);
            const long t_begin = b * kBlock;
            const long t_end = std::min(trials, t_begin + kBlock);
            for (long t = t_begin; t < t_end; ++t)
                run_trial(t, acc[static_cast<std::size_t>(b)]);
        }
    };
    if (threads <= 1) {
        run_block_range(0, blocks);
    } else {
        std::vector<std::thread> pool;
        const long per = (blocks + threads - 1) / threads;
        for (int t = 0; t < threads; ++t) {
            const long b0 = t * per;
            const long b1 = std::min(blocks, b0 + per);
            if (b0 >= b1) break;
            pool.emplace_back(run_block_range, b0, b1);
        }
        for (auto& th : pool) th.join();
    }

    detail::MomentAccumulator total;
    total.init(steps + 1, nx);
    for (const auto& a : acc) total.merge(a);
    trace.summary = detail::finalize_summary(total, steps);
    return trace;
}

// Sample moments with standard errors; recomputed from stored records when
// available so the summary can be cross-checked against them.
inline MomentSummary empirical_moments(const SimulationTrace& trace) {
    if (trace.trials < 2)
        throw InsufficientTrialsError("empirical_moments: at least 2 trials required");
    if (trace.records.empty()) return trace.summary;
    detail::MomentAccumulator acc;
    acc.init(trace.steps + 1, static_cast<int>(trace.records.front().x.size()));
    for (const auto& r : trace.records) acc.add(r.k, r.x, r.e, r.znorm2);
    acc.count = trace.trials; // each (trial, step) pair contributed once per k
    return detail::finalize_summary(acc, trace.steps);
}

// Full second-moment operator of the augmented [x; e] dynamics on the joint
// mode set (theta, theta_prev, eta). Dimension N^2 I (2 nx)^2; intended for
// small instances where the split verdict can be cross-checked exactly.
inline OperatorMatrix augmented_second_moment_operator(const MjlsModel& model,
                                                       const MarkovChannel& ch_act,
                                                       const MarkovChannel& ch_sens,
                                                       const ModeMatrices& F,
                                                       const ModeMatrices& M) {
    const ClosedLoopMatrices loop = build_closed_loop(model, F, M);
    const int N = ch_act.modes();
    const int I = ch_sens.modes();
    const int d = 2 * model.nx();
    const int d2 = d * d;
    const long dim = static_cast<long>(N) * N * I * d2;
    auto idx = [N, I](int cur, int prev, int m) { return (cur * N + prev) * I + m; };

    Eigen::MatrixXd rep = Eigen::MatrixXd::Zero(dim, dim);
    for (int i = 0; i < N; ++i) {
        const double nu = ch_act.delivery_prob(i);
        for (int l = 0; l < N; ++l) {
            for (int m = 0; m < I; ++m) {
                const double ga = ch_sens.delivery_prob(m);
                Eigen::MatrixXd branch = Eigen::MatrixXd::Zero(d2, d2);
                for (int nub = 0; nub <= 1; ++nub) {
                    for (int gab = 0; gab <= 1; ++gab) {
                        const double p_nu = nub ? nu : 1.0 - nu;
                        const double p_ga = gab ? ga : 1.0 - ga;
                        if (p_nu * p_ga == 0.0) continue;
                        const Eigen::MatrixXd g = loop.gamma(nub, l, gab, m);
                        branch += (p_nu * p_ga) * Eigen::kroneckerProduct(g, g).eval();
                    }
                }
                for (int j = 0; j < N; ++j) {
                    const double p = ch_act.tpm.entries(i, j);
                    if (p == 0.0) continue;
                    for (int n = 0; n < I; ++n) {
                        const double q = ch_sens.tpm.entries(m, n);
                        if (q == 0.0) continue;
                        rep.block(static_cast<long>(idx(j, i, n)) * d2,
                                  static_cast<long>(idx(i, l, m)) * d2, d2, d2) += p * q * branch;
                    }
                }
            }
        }
    }
    return OperatorMatrix{std::move(rep), OperatorKind::SecondMoment};
}

struct SeparationReport {
    double rho_control = 0.0;
    double rho_filter = 0.0;
    bool mss = false; // both component radii below one
    std::optional<double> rho_augmented;
    std::optional<bool> verdicts_agree;
};

// Mean-square stability verdict from the two component radii. On small
// instances the exact augmented operator is also built and its verdict is
// required to coincide.
inline SeparationReport check_separation(const MjlsModel& model, const MarkovChannel& ch_act,
                                         const MarkovChannel& ch_sens, const ModeMatrices& F,
                                         const ModeMatrices& M) {
    SeparationReport rep;
    rep.rho_control = is_ms_stabilizing_control_gain(ch_act, model, F).rho;
    rep.rho_filter = is_ms_detectable_with_gain(ch_sens, model, M).rho;
    rep.mss = rep.rho_control < 1.0 && rep.rho_filter < 1.0;

    const long aug_dim = static_cast<long>(ch_act.modes()) * ch_act.modes() * ch_sens.modes() *
                         (2 * model.nx()) * (2 * model.nx());
    if (aug_dim <= 4096) {
        const double rho_aug =
            spectral_radius(augmented_second_moment_operator(model, ch_act, ch_sens, F, M));
        rep.rho_augmented = rho_aug;
        rep.verdicts_agree = (rho_aug < 1.0) == rep.mss;
    }
    return rep;
}

} // namespace jumpctl
