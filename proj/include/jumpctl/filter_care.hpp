#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "jumpctl/block.hpp"
#include "jumpctl/channel.hpp"
#include "jumpctl/errors.hpp"
#include "jumpctl/model.hpp"
#include "jumpctl/moment_ops.hpp"

// Mode-coupled Riccati equation for the output-injection (filtering) gains
// over the lossy sensing channel. The solver is a constructive gain
// refinement: starting from any gain set whose error-moment operator is
// contractive, alternate an exact linear (Stein-type) solve for the error
// second moment with the closed-form gain update, which drives the total
// trace down monotonically to the trace-maximal fixed point. An LMI-style
// certifier checks that fixed point independently.

namespace jumpctl {

struct FilterCareTerms {
    Eigen::MatrixXd state_term;        // A D_n(Y) A^* + pi_n GG^*
    Eigen::MatrixXd cross_term;        // ghat_n^{1/2} A D_n(Y) L^*
    Eigen::MatrixXd innovation_weight; // pi_n HH^* + L D_n(Y) L^*
    Eigen::MatrixXd update;            // state_term - cross innovation^{-1} cross^*
};

namespace detail {

inline void require_filter_blocks(const MjlsModel& model, const MarkovChannel& ch,
                                  const BlockCollection& y) {
    if (y.count() != ch.modes() || y.dim() != model.nx())
        throw DimensionError("Riccati blocks do not match the sensing channel and model");
}

inline void require_invertible_innovation(const Eigen::MatrixXd& r, int mode) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(r);
    const double smin = svd.singularValues().minCoeff();
    const double smax = svd.singularValues().maxCoeff();
    if (smin <= 0.0 || smax / smin > 1e14)
        throw SingularRtildeError("innovation weight is singular for mode " +
                                  std::to_string(mode));
}

} // namespace detail

// The four Riccati-map ingredients for sensing mode n. Noise terms carry the
// noise variance scale.
inline FilterCareTerms care_ops_filter(const MjlsModel& model, const MarkovChannel& ch_sens,
                                       const BlockCollection& y, int n) {
    detail::require_filter_blocks(model, ch_sens, y);
    if (n < 0 || n >= ch_sens.modes()) throw IndexError("care_ops_filter: mode out of range");
    const Eigen::VectorXd pi = stationary_of(ch_sens);
    const Eigen::MatrixXd d = op_D(ch_sens.tpm, y, n);
    const double alpha = model.noise_scale;

    FilterCareTerms t;
    t.state_term = model.A * d * model.A.adjoint() + pi(n) * alpha * (model.G * model.G.adjoint());
    t.cross_term = std::sqrt(ch_sens.delivery_prob(n)) * (model.A * d * model.L.adjoint());
    t.innovation_weight =
        pi(n) * alpha * (model.H * model.H.adjoint()) + model.L * d * model.L.adjoint();
    detail::require_invertible_innovation(t.innovation_weight, n);
    t.update = t.state_term -
               t.cross_term * t.innovation_weight.ldlt().solve(t.cross_term.adjoint());
    t.update = 0.5 * (t.update + t.update.adjoint()).eval();
    return t;
}

// Closed-form optimal output-injection gain for mode n:
//   M_n = -A D_n(Y) L^* (pi_n HH^* + L D_n(Y) L^*)^{-1}.
inline Eigen::MatrixXd filtering_gain(const MjlsModel& model, const MarkovChannel& ch_sens,
                                      const BlockCollection& y, int n) {
    detail::require_filter_blocks(model, ch_sens, y);
    const Eigen::VectorXd pi = stationary_of(ch_sens);
    const Eigen::MatrixXd d = op_D(ch_sens.tpm, y, n);
    const Eigen::MatrixXd r =
        pi(n) * model.noise_scale * (model.H * model.H.adjoint()) +
        model.L * d * model.L.adjoint();
    detail::require_invertible_innovation(r, n);
    // Solve M r = -A d L^* by transposed systems to avoid forming r^{-1}.
    const Eigen::MatrixXd rhs = -(model.A * d * model.L.adjoint());
    return r.ldlt().solve(rhs.adjoint()).adjoint();
}

inline ModeMatrices filtering_gains(const MjlsModel& model, const MarkovChannel& ch_sens,
                                    const BlockCollection& y) {
    ModeMatrices m(static_cast<std::size_t>(ch_sens.modes()));
    for (int n = 0; n < ch_sens.modes(); ++n) m[n] = filtering_gain(model, ch_sens, y, n);
    return m;
}

// Stationary noise loading per mode for a fixed gain set:
//   O_n(M) = pi_n * alpha * (GG^* + ghat_n M_n HH^* M_n^*).
inline BlockCollection stationary_noise_load(const MjlsModel& model, const MarkovChannel& ch_sens,
                                             const ModeMatrices& gains) {
    const Eigen::VectorXd pi = stationary_of(ch_sens);
    BlockCollection o = BlockCollection::zero(ch_sens.modes(), model.nx());
    for (int n = 0; n < ch_sens.modes(); ++n)
        o[n] = pi(n) * detail::noise_block(model, ch_sens, gains, n);
    return o;
}

// Stationary error second moment for a fixed contractive gain set: the
// unique solution of Y = V(Y) + O(M).
inline BlockCollection error_moment_limit(const MjlsModel& model, const MarkovChannel& ch_sens,
                                          const ModeMatrices& gains) {
    return solve_stein(ch_sens, error_on_matrices(model, gains),
                       error_off_matrices(model, ch_sens.modes()),
                       stationary_noise_load(model, ch_sens, gains));
}

// Search for a gain set whose error-moment operator is contractive.
// Candidates in order: zero gains; an output injection shrinking A to
// spectral radius 1/2 (when L has a right inverse); a Riccati-based
// stabilizing injection for the scaled pair (2A, L), which also places the
// closed-loop radius below 1/2; then seeded random perturbations around the
// deterministic candidates. The contraction certificate decides acceptance.
inline ModeMatrices find_initial_detectable_gain(const MjlsModel& model,
                                                 const MarkovChannel& ch_sens) {
    const int modes = ch_sens.modes();
    const int nx = model.nx();
    const int ny = model.ny();

    std::vector<Eigen::MatrixXd> seeds;
    seeds.emplace_back(Eigen::MatrixXd::Zero(nx, ny));

    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(model.L);
    if (cod.rank() == nx) {
        const double rho_a = spectral_radius(model.A);
        const Eigen::MatrixXd target =
            rho_a > 0.0 ? Eigen::MatrixXd((0.5 / rho_a) * model.A)
                        : Eigen::MatrixXd(Eigen::MatrixXd::Zero(nx, nx));
        seeds.emplace_back((target - model.A) * cod.pseudoInverse());
    }

    {
        // Classical filter Riccati for (A/beta, L); scaling the gain back by
        // beta places rho(A + M L) < beta.
        constexpr double beta = 0.5;
        const Eigen::MatrixXd as = model.A / beta;
        const Eigen::MatrixXd eye_x = Eigen::MatrixXd::Identity(nx, nx);
        const Eigen::MatrixXd eye_y = Eigen::MatrixXd::Identity(ny, ny);
        Eigen::MatrixXd p = eye_x;
        bool ok = false;
        for (int it = 0; it < 2000; ++it) {
            const Eigen::MatrixXd s = model.L * p * model.L.adjoint() + eye_y;
            const Eigen::MatrixXd k = p * model.L.adjoint() * s.ldlt().solve(eye_y);
            Eigen::MatrixXd next = as * (p - k * model.L * p) * as.adjoint() + eye_x;
            next = 0.5 * (next + next.adjoint()).eval();
            const double delta = (next - p).norm();
            p = next;
            if (p.norm() > 1e14) break;
            if (delta <= 1e-9 * std::max(1.0, p.norm())) {
                ok = true;
                break;
            }
        }
        if (ok) {
            const Eigen::MatrixXd s = model.L * p * model.L.adjoint() + eye_y;
            seeds.emplace_back(-beta * (as * p * model.L.adjoint() * s.ldlt().solve(eye_y)));
        }
    }

    auto replicate = [modes](const Eigen::MatrixXd& m) {
        return ModeMatrices(static_cast<std::size_t>(modes), m);
    };

    for (const auto& s : seeds) {
        ModeMatrices gains = replicate(s);
        if (is_ms_detectable_with_gain(ch_sens, model, gains).detectable) return gains;
    }

    const double spread = std::max(1.0, model.A.norm());
    for (int attempt = 0; attempt < 100; ++attempt) {
        Rng gen = Rng::substream(0x6a1f, rng_domain::kGainSearch,
                                 static_cast<std::uint64_t>(attempt));
        const Eigen::MatrixXd& base = seeds[attempt % seeds.size()];
        ModeMatrices gains(static_cast<std::size_t>(modes));
        for (int n = 0; n < modes; ++n) {
            Eigen::MatrixXd noise(nx, ny);
            for (int i = 0; i < nx; ++i)
                for (int j = 0; j < ny; ++j) noise(i, j) = gen.gaussian();
            gains[n] = base + (0.5 * spread * gen.uniform01()) * noise;
        }
        if (is_ms_detectable_with_gain(ch_sens, model, gains).detectable) return gains;
    }
    throw NoInitialGainError(
        "find_initial_detectable_gain: no contractive output injection found");
}

struct FilterCareSolution {
    BlockCollection Y;
    ModeMatrices M;
    double cost = 0.0;
    double residual = 0.0; // max_n ||Y_n - update_n(Y)||_F
    double rho_filter = 0.0;
    long iterations = 0;
    std::vector<double> trace_history; // total trace per refinement step
    bool stabilizing = false;
};

// Long-run mean squared estimation error achieved by the solution blocks.
// Each block already carries its mode's stationary weight, so the index sums
// plain traces.
inline double optimal_filter_cost(const MarkovChannel& ch_sens, const BlockCollection& y) {
    if (y.count() != ch_sens.modes())
        throw DimensionError("optimal_filter_cost: block count does not match the channel");
    return y.total_trace();
}

struct FilterSolveOptions {
    double tol = 1e-10;
    long max_iter = 10000;
    bool record_iterates = false;
};

struct FilterSolveDiagnostics {
    std::vector<BlockCollection> iterates;
};

inline FilterCareSolution solve_filter_care(const MjlsModel& model, const MarkovChannel& ch_sens,
                                            const FilterSolveOptions& opts = {},
                                            FilterSolveDiagnostics* diag = nullptr) {
    const int modes = ch_sens.modes();
    const ModeMatrices off = error_off_matrices(model, modes);
    const long stacked = static_cast<long>(modes) * model.nx() * model.nx();

    ModeMatrices gains = find_initial_detectable_gain(model, ch_sens);

    FilterCareSolution sol;
    BlockCollection y_prev;
    bool have_prev = false;
    long it = 0;
    for (; it < opts.max_iter; ++it) {
        const ModeMatrices on = error_on_matrices(model, gains);
        if (stacked <= 4096) {
            const double rho = spectral_radius(matrix_rep_V(ch_sens, on, off));
            if (rho >= 1.0)
                throw NotConvergedError(
                    "solve_filter_care: refinement lost contraction (rho = " +
                    std::to_string(rho) + ")");
        }
        BlockCollection y =
            solve_stein(ch_sens, on, off, stationary_noise_load(model, ch_sens, gains));
        sol.trace_history.push_back(y.total_trace());
        if (diag && opts.record_iterates) diag->iterates.push_back(y);

        if (have_prev && (y - y_prev).max_frobenius_norm() <= opts.tol) {
            y_prev = std::move(y);
            ++it;
            break;
        }
        y_prev = std::move(y);
        have_prev = true;
        gains = filtering_gains(model, ch_sens, y_prev);
    }
    if (it >= opts.max_iter)
        throw NotConvergedError("solve_filter_care: no fixed point within " +
                                std::to_string(opts.max_iter) + " refinements");

    sol.Y = std::move(y_prev);
    sol.M = filtering_gains(model, ch_sens, sol.Y);
    sol.iterations = it;
    double residual = 0.0;
    for (int n = 0; n < modes; ++n)
        residual = std::max(residual,
                            (sol.Y[n] - care_ops_filter(model, ch_sens, sol.Y, n).update).norm());
    sol.residual = residual;
    sol.cost = optimal_filter_cost(ch_sens, sol.Y);
    const DetectabilityResult cert = is_ms_detectable_with_gain(ch_sens, model, sol.M);
    sol.rho_filter = cert.rho;
    sol.stabilizing = cert.detectable;
    return sol;
}

// Feasibility report for candidate solution blocks, checked in both the
// block-matrix form
//   [ -Y_n + state_term_n , cross_term_n ; cross_term_n^* , innovation_n ] >= 0
// and the Schur-complement form -Y + update(Y) >= 0. Any candidate passing
// feasibility has total trace at most that of the solver's fixed point.
struct LmiReport {
    bool feasible = false;           // block-matrix form, all modes
    bool care_form_feasible = false; // Schur-complement form
    bool forms_agree = false;
    double trace = 0.0;                 // objective: total trace of Y
    double min_eig_blocks = 0.0;        // over modes, of the block matrix
    double min_eig_innovation = 0.0;    // over modes, of innovation weights
    double min_eig_care_residual = 0.0; // over modes, of update(Y) - Y
    double max_fixed_point_residual = 0.0; // max_n ||Y_n - update_n(Y)||_F
};

inline LmiReport verify_lmi_feasibility(const MjlsModel& model, const MarkovChannel& ch_sens,
                                        const BlockCollection& y, double tol = 1e-9) {
    detail::require_filter_blocks(model, ch_sens, y);
    const int nx = model.nx();
    const int ny = model.ny();

    LmiReport rep;
    rep.trace = y.total_trace();
    rep.min_eig_blocks = std::numeric_limits<double>::infinity();
    rep.min_eig_innovation = std::numeric_limits<double>::infinity();
    rep.min_eig_care_residual = std::numeric_limits<double>::infinity();

    for (int n = 0; n < ch_sens.modes(); ++n) {
        const FilterCareTerms t = care_ops_filter(model, ch_sens, y, n);
        Eigen::MatrixXd block(nx + ny, nx + ny);
        block.topLeftCorner(nx, nx) = t.state_term - y[n];
        block.topRightCorner(nx, ny) = t.cross_term;
        block.bottomLeftCorner(ny, nx) = t.cross_term.adjoint();
        block.bottomRightCorner(ny, ny) = t.innovation_weight;

        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_b(0.5 * (block + block.adjoint()),
                                                            Eigen::EigenvaluesOnly);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_r(t.innovation_weight,
                                                            Eigen::EigenvaluesOnly);
        Eigen::MatrixXd care_res = t.update - y[n];
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_c(0.5 * (care_res + care_res.adjoint()),
                                                            Eigen::EigenvaluesOnly);
        rep.min_eig_blocks = std::min(rep.min_eig_blocks, es_b.eigenvalues().minCoeff());
        rep.min_eig_innovation = std::min(rep.min_eig_innovation, es_r.eigenvalues().minCoeff());
        rep.min_eig_care_residual =
            std::min(rep.min_eig_care_residual, es_c.eigenvalues().minCoeff());
        rep.max_fixed_point_residual = std::max(rep.max_fixed_point_residual, care_res.norm());
    }
    rep.feasible = rep.min_eig_blocks >= -tol && rep.min_eig_innovation > 0.0;
    rep.care_form_feasible = rep.min_eig_care_residual >= -tol && rep.min_eig_innovation > 0.0;
    rep.forms_agree = rep.feasible == rep.care_form_feasible;
    return rep;
}

// Quadratic difference identities relating two Hermitian block sets through
// the Riccati map; the refinement solver's convergence rests on them. Given
// Y with nonsingular innovation weights, and (Yhat, Mhat) satisfying the
// fixed-gain premise Yhat = V_Mhat(Yhat) + O(Mhat), returns the largest
// residual of the identities; Xhat, when supplied, must satisfy the same
// premise with the gain set computed from Yhat.
inline double riccati_difference_identities(const MjlsModel& model, const MarkovChannel& ch_sens,
                                            const BlockCollection& y, const BlockCollection& yhat,
                                            const ModeMatrices& mhat,
                                            const std::optional<BlockCollection>& xhat = {}) {
    detail::require_filter_blocks(model, ch_sens, y);
    detail::require_filter_blocks(model, ch_sens, yhat);
    const int modes = ch_sens.modes();
    const ModeMatrices on_hat = error_on_matrices(model, mhat);
    const ModeMatrices off = error_off_matrices(model, modes);

    const double scale = std::max(1.0, std::max(y.max_frobenius_norm(),
                                                yhat.max_frobenius_norm()));
    {
        const BlockCollection premise =
            yhat - op_V(ch_sens, on_hat, off, yhat) - stationary_noise_load(model, ch_sens, mhat);
        if (premise.max_frobenius_norm() > 1e-8 * scale)
            throw HypothesisError(
                "riccati_difference_identities: (Yhat, Mhat) does not satisfy the premise");
    }

    const ModeMatrices gains_y = filtering_gains(model, ch_sens, y);
    const ModeMatrices gains_yhat = filtering_gains(model, ch_sens, yhat);
    const ModeMatrices on_yhat = error_on_matrices(model, gains_yhat);

    double max_residual = 0.0;
    const BlockCollection diff = yhat - y;
    const BlockCollection lhs1 = diff - op_V(ch_sens, on_hat, off, diff);
    const BlockCollection lhs2 = diff - op_V(ch_sens, on_yhat, off, diff);
    for (int n = 0; n < modes; ++n) {
        const FilterCareTerms ty = care_ops_filter(model, ch_sens, y, n);
        const FilterCareTerms tyh = care_ops_filter(model, ch_sens, yhat, n);
        const double g = ch_sens.delivery_prob(n);
        const Eigen::MatrixXd care_gap = ty.update - y[n];

        const Eigen::MatrixXd dm1 = mhat[n] - gains_y[n];
        const Eigen::MatrixXd rhs1 = care_gap + g * (dm1 * ty.innovation_weight * dm1.adjoint());
        max_residual = std::max(max_residual, (lhs1[n] - rhs1).norm());

        const Eigen::MatrixXd dm2 = gains_yhat[n] - gains_y[n];
        const Eigen::MatrixXd dm3 = mhat[n] - gains_yhat[n];
        const Eigen::MatrixXd rhs2 = g * (dm2 * ty.innovation_weight * dm2.adjoint()) +
                                     g * (dm3 * tyh.innovation_weight * dm3.adjoint()) + care_gap;
        max_residual = std::max(max_residual, (lhs2[n] - rhs2).norm());
    }

    if (xhat) {
        detail::require_filter_blocks(model, ch_sens, *xhat);
        const BlockCollection premise3 = *xhat - op_V(ch_sens, on_yhat, off, *xhat) -
                                         stationary_noise_load(model, ch_sens, gains_yhat);
        if (premise3.max_frobenius_norm() > 1e-8 * scale)
            throw HypothesisError(
                "riccati_difference_identities: Xhat does not satisfy its premise");
        const BlockCollection diff3 = yhat - *xhat;
        const BlockCollection lhs3 = diff3 - op_V(ch_sens, on_yhat, off, diff3);
        for (int n = 0; n < modes; ++n) {
            const FilterCareTerms tyh = care_ops_filter(model, ch_sens, yhat, n);
            const double g = ch_sens.delivery_prob(n);
            const Eigen::MatrixXd dm = mhat[n] - gains_yhat[n];
            const Eigen::MatrixXd rhs3 = g * (dm * tyh.innovation_weight * dm.adjoint());
            max_residual = std::max(max_residual, (lhs3[n] - rhs3).norm());
        }
    }
    return max_residual;
}

} // namespace jumpctl
