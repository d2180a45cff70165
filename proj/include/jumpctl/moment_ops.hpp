#pragma once

#include <Eigen/Dense>
#include <unsupported/Eigen/KroneckerProduct>

#include <cmath>
#include <utility>
#include <vector>

#include "jumpctl/block.hpp"
#include "jumpctl/channel.hpp"
#include "jumpctl/errors.hpp"
#include "jumpctl/model.hpp"

// Second-moment operator algebra for the error and state dynamics of a
// jump-linear loop over lossy channels.
//
// Conventions used throughout. Blocks are indexed by the channel mode that
// was active while the step being aggregated was taken:
//   m_n(k) = E[ e_k 1{eta_{k-1} = n} ],   Y_n(k) = E[ e_k e_k^* 1{eta_{k-1} = n} ],
// so a transition step first mixes blocks through the chain (the map D) and
// then conjugates by the step matrix of the delivery branch. With per-mode
// matrices On[n] (delivery) and Off[n] (loss) and delivery probabilities g:
//   D_n(S)  = sum_m q_{mn} S_m
//   V_n(S)  = g_n On[n] D_n(S) On[n]^* + (1-g_n) Off[n] D_n(S) Off[n]^*
//   J_m(S)  = sum_n q_{mn} [ g_n On[n]^* S_n On[n] + (1-g_n) Off[n]^* S_n Off[n] ]
// J is the adjoint of V under <S;T> = sum tr(S_m^* T_m). Both admit matrix
// representations on stacked vectorized blocks; the spectral radius of that
// representation decides mean-square stability.

namespace jumpctl {

using ModeMatrices = std::vector<Eigen::MatrixXd>;

namespace detail {

inline void require_mode_matrices(const MarkovChannel& ch, const ModeMatrices& on,
                                  const ModeMatrices& off, int dim) {
    if (static_cast<int>(on.size()) != ch.modes() || static_cast<int>(off.size()) != ch.modes())
        throw DimensionError("per-mode matrix list length does not match the channel");
    for (const auto& m : on)
        if (m.rows() != dim || m.cols() != dim)
            throw DimensionError("per-mode matrix has wrong dimension");
    for (const auto& m : off)
        if (m.rows() != dim || m.cols() != dim)
            throw DimensionError("per-mode matrix has wrong dimension");
}

} // namespace detail

// Chain-mixing of blocks: D_n(S) = sum_m q_{mn} S_m.
inline Eigen::MatrixXd op_D(const TransitionMatrix& tpm, const BlockCollection& s, int n) {
    if (s.count() != tpm.size()) throw DimensionError("op_D: block count does not match the chain");
    if (n < 0 || n >= tpm.size()) throw IndexError("op_D: mode out of range");
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(s.dim(), s.dim());
    for (int m = 0; m < s.count(); ++m) acc += tpm.entries(m, n) * s[m];
    return acc;
}

// Delivery-averaged second-moment update (one step forward).
inline BlockCollection op_V(const MarkovChannel& ch, const ModeMatrices& on,
                            const ModeMatrices& off, const BlockCollection& s) {
    detail::require_mode_matrices(ch, on, off, s.dim());
    std::vector<Eigen::MatrixXd> out(ch.modes());
    for (int n = 0; n < ch.modes(); ++n) {
        const Eigen::MatrixXd d = op_D(ch.tpm, s, n);
        const double g = ch.delivery_prob(n);
        out[n] = g * (on[n] * d * on[n].adjoint()) + (1.0 - g) * (off[n] * d * off[n].adjoint());
    }
    return BlockCollection(std::move(out));
}

// Adjoint of op_V under the trace inner product.
inline BlockCollection op_J(const MarkovChannel& ch, const ModeMatrices& on,
                            const ModeMatrices& off, const BlockCollection& s) {
    detail::require_mode_matrices(ch, on, off, s.dim());
    std::vector<Eigen::MatrixXd> out(ch.modes(), Eigen::MatrixXd::Zero(s.dim(), s.dim()));
    for (int m = 0; m < ch.modes(); ++m) {
        for (int n = 0; n < ch.modes(); ++n) {
            const double q = ch.tpm.entries(m, n);
            if (q == 0.0) continue;
            const double g = ch.delivery_prob(n);
            out[m] += q * (g * (on[n].adjoint() * s[n] * on[n]) +
                           (1.0 - g) * (off[n].adjoint() * s[n] * off[n]));
        }
    }
    return BlockCollection(std::move(out));
}

// Same averaging with a second family of step matrices; kept as a named
// entry point because stability comparisons use it with modified gains.
inline BlockCollection op_Vtilde(const MarkovChannel& ch, const ModeMatrices& on,
                                 const ModeMatrices& off, const BlockCollection& s) {
    return op_V(ch, on, off, s);
}

enum class OperatorKind {
    SecondMoment,        // matrix form of op_V
    SecondMomentAdjoint, // matrix form of op_J
    SecondMomentModified,
    FirstMoment,
    ControlDelay,
};

struct OperatorMatrix {
    Eigen::MatrixXd rep;
    OperatorKind kind = OperatorKind::SecondMoment;
    // A smaller matrix with the same nonzero spectrum, when the operator
    // factors through a lower-dimensional space; spectral_radius prefers it.
    std::optional<Eigen::MatrixXd> reduced_rep;

    int dim() const { return static_cast<int>(rep.rows()); }
};

// Matrix form of op_V on stacked vectorized blocks:
//   [ diag_n( g_n On_n (x) On_n + (1-g_n) Off_n (x) Off_n ) ] (Q' (x) I).
// Conjugates are elided because the build is real-valued.
inline OperatorMatrix matrix_rep_V(const MarkovChannel& ch, const ModeMatrices& on,
                                   const ModeMatrices& off) {
    const int modes = ch.modes();
    const int d = static_cast<int>(on.at(0).rows());
    detail::require_mode_matrices(ch, on, off, d);
    const int d2 = d * d;
    Eigen::MatrixXd rep(modes * d2, modes * d2);
    for (int n = 0; n < modes; ++n) {
        const double g = ch.delivery_prob(n);
        const Eigen::MatrixXd branch = g * Eigen::kroneckerProduct(on[n], on[n]).eval() +
                                       (1.0 - g) * Eigen::kroneckerProduct(off[n], off[n]).eval();
        for (int m = 0; m < modes; ++m)
            rep.block(n * d2, m * d2, d2, d2) = ch.tpm.entries(m, n) * branch;
    }
    return OperatorMatrix{std::move(rep), OperatorKind::SecondMoment};
}

inline OperatorMatrix matrix_rep_J(const MarkovChannel& ch, const ModeMatrices& on,
                                   const ModeMatrices& off) {
    OperatorMatrix v = matrix_rep_V(ch, on, off);
    return OperatorMatrix{v.rep.adjoint(), OperatorKind::SecondMomentAdjoint};
}

// Matrix form of the first-moment recursion m(k+1) = B m(k) on stacked
// per-mode mean vectors.
inline OperatorMatrix matrix_rep_firstmoment(const MarkovChannel& ch, const ModeMatrices& on,
                                             const ModeMatrices& off) {
    const int modes = ch.modes();
    const int d = static_cast<int>(on.at(0).rows());
    detail::require_mode_matrices(ch, on, off, d);
    Eigen::MatrixXd rep(modes * d, modes * d);
    for (int n = 0; n < modes; ++n) {
        const double g = ch.delivery_prob(n);
        const Eigen::MatrixXd branch = g * on[n] + (1.0 - g) * off[n];
        for (int m = 0; m < modes; ++m)
            rep.block(n * d, m * d, d, d) = ch.tpm.entries(m, n) * branch;
    }
    return OperatorMatrix{std::move(rep), OperatorKind::FirstMoment};
}

namespace detail {

// Dense nonsymmetric eigensolve below this dimension; power iteration above.
// The Schur decomposition above roughly this size is slower than iterating,
// and the operators here are positive maps whose dominant eigenvalue is real
// and nonnegative, which is exactly the friendly case for power iteration.
inline constexpr int kDenseEigLimit = 512;

inline double spectral_radius_dense(const Eigen::MatrixXd& a) {
    Eigen::EigenSolver<Eigen::MatrixXd> es(a, /*computeEigenvectors=*/false);
    if (es.info() != Eigen::Success)
        throw ConvergenceError("spectral_radius: dense eigensolver failed");
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

inline double spectral_radius_power(const Eigen::MatrixXd& a) {
    const int n = static_cast<int>(a.rows());
    Eigen::VectorXd x = Eigen::VectorXd::Constant(n, 1.0 / std::sqrt(static_cast<double>(n)));
    double estimate = 0.0;
    constexpr double tol = 1e-10;
    constexpr int max_iter = 100000;
    int stable_count = 0;
    for (int it = 0; it < max_iter; ++it) {
        // Two applications per sweep: the growth over a double step is
        // insensitive to a dominant +/- pair or complex-conjugate pair.
        Eigen::VectorXd y = a * (a * x);
        const double growth = y.norm();
        if (growth == 0.0) return 0.0;
        const double current = std::sqrt(growth);
        x = y / growth;
        if (std::abs(current - estimate) <= tol * std::max(1.0, current)) {
            if (++stable_count >= 3) return current;
        } else {
            stable_count = 0;
        }
        estimate = current;
    }
    throw ConvergenceError("spectral_radius: power iteration stagnated");
}

} // namespace detail

inline double spectral_radius(const Eigen::MatrixXd& rep) {
    if (rep.rows() != rep.cols()) throw DimensionError("spectral_radius: matrix must be square");
    if (rep.rows() <= detail::kDenseEigLimit) return detail::spectral_radius_dense(rep);
    return detail::spectral_radius_power(rep);
}

inline double spectral_radius(const OperatorMatrix& op) {
    return spectral_radius(op.reduced_rep ? *op.reduced_rep : op.rep);
}

// Step matrices of the estimation-error dynamics for output-injection gains
// M: delivered branch A + M_n L, lost branch A.
inline ModeMatrices error_on_matrices(const MjlsModel& model, const ModeMatrices& gains) {
    ModeMatrices on(gains.size());
    for (std::size_t n = 0; n < gains.size(); ++n) {
        if (gains[n].rows() != model.nx() || gains[n].cols() != model.ny())
            throw DimensionError("filter gain has wrong shape");
        on[n] = model.A + gains[n] * model.L;
    }
    return on;
}

inline ModeMatrices error_off_matrices(const MjlsModel& model, int modes) {
    return ModeMatrices(static_cast<std::size_t>(modes), model.A);
}

struct DetectabilityResult {
    bool detectable = false;
    double rho = 0.0;
};

// Error-moment contraction test for a candidate gain set.
inline DetectabilityResult is_ms_detectable_with_gain(const MarkovChannel& ch,
                                                      const MjlsModel& model,
                                                      const ModeMatrices& gains) {
    const double rho = spectral_radius(
        matrix_rep_V(ch, error_on_matrices(model, gains), error_off_matrices(model, ch.modes())));
    return DetectabilityResult{rho < 1.0, rho};
}

// Second-moment operator of the state under delayed-mode feedback
// u_k = F_{theta_{k-1}} x_k. Blocks are indexed by aggregated mode pairs
// (current, previous); the pair (i,l) moves to (j,i) with probability p_{ij},
// applying A + B F_l when the packet is delivered (probability nuhat_i) and A
// otherwise. The representation has dimension N^2 nx^2.
inline OperatorMatrix control_delay_operator(const MarkovChannel& ch_act, const MjlsModel& model,
                                             const ModeMatrices& feedback) {
    const int modes = ch_act.modes();
    const int d = model.nx();
    const int d2 = d * d;
    if (static_cast<int>(feedback.size()) != modes)
        throw DimensionError("control gain list length does not match the actuation channel");
    for (const auto& f : feedback)
        if (f.rows() != model.nu() || f.cols() != d)
            throw DimensionError("control gain has wrong shape");

    const Eigen::MatrixXd loss_branch = Eigen::kroneckerProduct(model.A, model.A);
    auto pair_index = [modes](int cur, int prev) { return cur * modes + prev; };

    Eigen::MatrixXd rep = Eigen::MatrixXd::Zero(modes * modes * d2, modes * modes * d2);
    for (int i = 0; i < modes; ++i) {
        const double nu = ch_act.delivery_prob(i);
        for (int l = 0; l < modes; ++l) {
            const Eigen::MatrixXd closed = model.A + model.B * feedback[l];
            const Eigen::MatrixXd branch =
                nu * Eigen::kroneckerProduct(closed, closed).eval() + (1.0 - nu) * loss_branch;
            for (int j = 0; j < modes; ++j) {
                const double p = ch_act.tpm.entries(i, j);
                if (p == 0.0) continue;
                rep.block(pair_index(j, i) * d2, pair_index(i, l) * d2, d2, d2) = p * branch;
            }
        }
    }

    // The image always has the form Z_{(j,i)} = p_{ij} V_i, so the nonzero
    // spectrum is carried by the collapsed map on single-mode blocks
    //   V_i <- sum_l p_{li} [ nuhat_i Phi_l V_l Phi_l^* + (1-nuhat_i) A V_l A^* ],
    // whose representation has dimension N nx^2 only.
    Eigen::MatrixXd reduced = Eigen::MatrixXd::Zero(modes * d2, modes * d2);
    for (int l = 0; l < modes; ++l) {
        const Eigen::MatrixXd closed = model.A + model.B * feedback[l];
        const Eigen::MatrixXd gain_branch = Eigen::kroneckerProduct(closed, closed);
        for (int i = 0; i < modes; ++i) {
            const double p = ch_act.tpm.entries(l, i);
            if (p == 0.0) continue;
            const double nu = ch_act.delivery_prob(i);
            reduced.block(i * d2, l * d2, d2, d2) =
                p * (nu * gain_branch + (1.0 - nu) * loss_branch);
        }
    }
    return OperatorMatrix{std::move(rep), OperatorKind::ControlDelay, std::move(reduced)};
}

struct StabilizabilityResult {
    bool stabilizing = false;
    double rho = 0.0;
};

inline StabilizabilityResult is_ms_stabilizing_control_gain(const MarkovChannel& ch_act,
                                                            const MjlsModel& model,
                                                            const ModeMatrices& feedback) {
    const double rho = spectral_radius(control_delay_operator(ch_act, model, feedback));
    return StabilizabilityResult{rho < 1.0, rho};
}

// Exact error-moment recursion state at step k:
//   m holds the stacked per-mode means, Y the per-mode second-moment blocks,
//   mode_dist the distribution of the sensing mode at step k.
struct MomentState {
    Eigen::VectorXd m;
    BlockCollection Y;
    Eigen::VectorXd mode_dist;
    long k = 0;
};

namespace detail {

// Noise loading per mode: GG^* + g_n M_n HH^* M_n^*, scaled by the noise
// variance; the caller weighs it by the mode probability.
inline Eigen::MatrixXd noise_block(const MjlsModel& model, const MarkovChannel& ch,
                                   const ModeMatrices& gains, int n) {
    const Eigen::MatrixXd gg = model.G * model.G.adjoint();
    const Eigen::MatrixXd hh = model.H * model.H.adjoint();
    return model.noise_scale *
           (gg + ch.delivery_prob(n) * (gains[n] * hh * gains[n].adjoint()));
}

} // namespace detail

// Moment state at k = 1 for a deterministic initial error e0 and an initial
// sensing-mode distribution pi0 (the first step is computed directly because
// the block index refers to the mode of the step just taken).
inline MomentState initial_moment_state(const MarkovChannel& ch, const ModeMatrices& gains,
                                        const MjlsModel& model, const Eigen::VectorXd& e0,
                                        const Eigen::VectorXd& pi0) {
    const int modes = ch.modes();
    const int d = model.nx();
    if (e0.size() != d) throw DimensionError("initial error has wrong dimension");
    if (pi0.size() != modes) throw DimensionError("initial mode distribution has wrong length");
    const ModeMatrices on = error_on_matrices(model, gains);
    const Eigen::MatrixXd e0e0 = e0 * e0.adjoint();

    MomentState s;
    s.m = Eigen::VectorXd::Zero(modes * d);
    s.Y = BlockCollection::zero(modes, d);
    for (int n = 0; n < modes; ++n) {
        const double g = ch.delivery_prob(n);
        const double p = pi0(n);
        s.m.segment(n * d, d) = p * (g * (on[n] * e0) + (1.0 - g) * (model.A * e0));
        s.Y[n] = p * (g * (on[n] * e0e0 * on[n].adjoint()) +
                      (1.0 - g) * (model.A * e0e0 * model.A.adjoint())) +
                 p * detail::noise_block(model, ch, gains, n);
        s.Y[n] = 0.5 * (s.Y[n] + s.Y[n].adjoint()).eval();
    }
    s.mode_dist = ch.tpm.entries.transpose() * pi0;
    s.k = 1;
    return s;
}

// One exact step of the error-moment recursion: first moment through the
// stacked linear map, second moment through op_V plus the mode-weighted
// noise loading at the current step.
inline MomentState propagate_moments(const MarkovChannel& ch, const ModeMatrices& gains,
                                     const MjlsModel& model, const MomentState& state) {
    const int modes = ch.modes();
    const int d = model.nx();
    if (state.m.size() != modes * d || state.Y.count() != modes || state.Y.dim() != d ||
        state.mode_dist.size() != modes)
        throw DimensionError("propagate_moments: state shape does not match channel/model");
    const ModeMatrices on = error_on_matrices(model, gains);
    const ModeMatrices off = error_off_matrices(model, modes);

    MomentState next;
    next.m = matrix_rep_firstmoment(ch, on, off).rep * state.m;
    next.Y = op_V(ch, on, off, state.Y);
    for (int n = 0; n < modes; ++n) {
        next.Y[n] += state.mode_dist(n) * detail::noise_block(model, ch, gains, n);
        next.Y[n] = 0.5 * (next.Y[n] + next.Y[n].adjoint()).eval();
    }
    next.mode_dist = ch.tpm.entries.transpose() * state.mode_dist;
    next.k = state.k + 1;
    return next;
}

inline Eigen::VectorXd total_first_moment(const MomentState& s) {
    const int d = s.Y.dim();
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(d);
    for (int n = 0; n < s.Y.count(); ++n) acc += s.m.segment(n * d, d);
    return acc;
}

inline Eigen::MatrixXd total_second_moment(const MomentState& s) {
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(s.Y.dim(), s.Y.dim());
    for (int n = 0; n < s.Y.count(); ++n) acc += s.Y[n];
    return acc;
}

// Solve Y = V(Y) + O for a contractive V. Solved exactly through the
// vectorized linear system when the stacked dimension is moderate, and by
// iterating the affine map otherwise. Blocks are symmetrized on exit.
inline BlockCollection solve_stein(const MarkovChannel& ch, const ModeMatrices& on,
                                   const ModeMatrices& off, const BlockCollection& load,
                                   double tol = 1e-12) {
    const int modes = ch.modes();
    const int d = load.dim();
    detail::require_mode_matrices(ch, on, off, d);
    if (load.count() != modes) throw DimensionError("solve_stein: load block count mismatch");
    const long stacked = static_cast<long>(modes) * d * d;
    BlockCollection y;
    if (stacked <= 4096) {
        const OperatorMatrix v = matrix_rep_V(ch, on, off);
        const Eigen::MatrixXd lhs = Eigen::MatrixXd::Identity(stacked, stacked) - v.rep;
        y = unstack(Eigen::PartialPivLU<Eigen::MatrixXd>(lhs).solve(vec_stack(load)), modes, d);
    } else {
        y = load;
        constexpr int max_iter = 1000000;
        int it = 0;
        for (; it < max_iter; ++it) {
            BlockCollection next = op_V(ch, on, off, y) + load;
            const double delta = (next - y).max_frobenius_norm();
            y = std::move(next);
            if (delta <= tol * std::max(1.0, y.max_frobenius_norm())) break;
        }
        if (it >= max_iter) throw NotConvergedError("solve_stein: affine iteration hit its cap");
    }
    y.symmetrize();
    return y;
}

} // namespace jumpctl
