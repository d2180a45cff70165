#pragma once

#include <Eigen/Dense>

#include <string>
#include <utility>
#include <vector>

#include "jumpctl/block.hpp"
#include "jumpctl/channel.hpp"
#include "jumpctl/errors.hpp"
#include "jumpctl/model.hpp"
#include "jumpctl/moment_ops.hpp"

// Mode-coupled Riccati equation for delayed-mode state feedback over the
// lossy actuation channel: the control gain applied at step k is indexed by
// the previous channel mode, and packet delivery enters through the per-mode
// delivery probabilities.

namespace jumpctl {

struct ControlCareTerms {
    Eigen::MatrixXd state_term;   // A^* (sum_i p_{li} X_i) A + C^*C
    Eigen::MatrixXd cross_term;   // A^* (sum_i p_{li} nuhat_i X_i) B
    Eigen::MatrixXd input_weight; // sum_i p_{li} nuhat_i (B^* X_i B + D^*D)
    Eigen::MatrixXd update;       // state_term - cross input_weight^{-1} cross^*
};

namespace detail {

inline void require_control_blocks(const MjlsModel& model, const MarkovChannel& ch,
                                   const BlockCollection& x) {
    if (x.count() != ch.modes() || x.dim() != model.nx())
        throw DimensionError("Riccati blocks do not match the actuation channel and model");
}

// Condition estimate via SVD of the (small) input-weight matrix.
inline void require_invertible_input_weight(const Eigen::MatrixXd& bt, int mode) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(bt);
    const double smin = svd.singularValues().minCoeff();
    const double smax = svd.singularValues().maxCoeff();
    if (smin <= 0.0 || smax / smin > 1e12)
        throw SingularBtildeError(
            "control input weight is singular for mode " + std::to_string(mode) +
            " (control is never delivered from its successor modes)");
}

} // namespace detail

// The four Riccati-map ingredients for mode l.
inline ControlCareTerms care_ops_control(const MjlsModel& model, const MarkovChannel& ch_act,
                                         const BlockCollection& x, int l) {
    detail::require_control_blocks(model, ch_act, x);
    if (l < 0 || l >= ch_act.modes()) throw IndexError("care_ops_control: mode out of range");

    const int d = model.nx();
    Eigen::MatrixXd mixed = Eigen::MatrixXd::Zero(d, d);          // sum p_{li} X_i
    Eigen::MatrixXd mixed_delivered = Eigen::MatrixXd::Zero(d, d); // sum p_{li} nuhat_i X_i
    double delivered_mass = 0.0;
    for (int i = 0; i < ch_act.modes(); ++i) {
        const double p = ch_act.tpm.entries(l, i);
        mixed += p * x[i];
        mixed_delivered += p * ch_act.delivery_prob(i) * x[i];
        delivered_mass += p * ch_act.delivery_prob(i);
    }

    ControlCareTerms t;
    t.state_term = model.A.adjoint() * mixed * model.A + model.Qc;
    t.cross_term = model.A.adjoint() * mixed_delivered * model.B;
    t.input_weight = model.B.adjoint() * mixed_delivered * model.B + delivered_mass * model.Rc;
    detail::require_invertible_input_weight(t.input_weight, l);
    t.update = t.state_term -
               t.cross_term * t.input_weight.ldlt().solve(t.cross_term.adjoint());
    t.update = 0.5 * (t.update + t.update.adjoint()).eval();
    return t;
}

// Optimal delayed-mode feedback gain for mode l: F_l = -input_weight^{-1} cross^*.
inline Eigen::MatrixXd control_gain(const MjlsModel& model, const MarkovChannel& ch_act,
                                    const BlockCollection& x, int l) {
    const ControlCareTerms t = care_ops_control(model, ch_act, x, l);
    return -t.input_weight.ldlt().solve(t.cross_term.adjoint()).eval();
}

// Long-run quadratic cost achieved by the solution blocks, weighted by the
// stationary mode distribution and scaled by the noise variance.
inline double optimal_control_cost(const MarkovChannel& ch_act, const MjlsModel& model,
                                   const BlockCollection& x) {
    detail::require_control_blocks(model, ch_act, x);
    const Eigen::VectorXd pi = stationary_of(ch_act);
    double cost = 0.0;
    for (int i = 0; i < ch_act.modes(); ++i)
        cost += pi(i) * (model.G.adjoint() * x[i] * model.G).trace();
    return model.noise_scale * cost;
}

struct ControlCareSolution {
    BlockCollection X;
    ModeMatrices F;
    double cost = 0.0;
    double residual = 0.0;
    double rho_control = 0.0;
    long iterations = 0;
    bool stabilizing = false; // rho_control < 1; false is a flagged result, not an error
};

// Value iteration on the coupled Riccati map from X = [C^*C], with Hermitian
// symmetrization each sweep. Divergence or the iteration cap raises
// NotConverged; a converged but non-contractive solution is returned with
// stabilizing = false.
inline ControlCareSolution solve_control_care(const MjlsModel& model, const MarkovChannel& ch_act,
                                              double tol = 1e-10, long max_iter = 100000) {
    const int modes = ch_act.modes();
    BlockCollection x = BlockCollection::constant(modes, model.Qc);
    double residual = 0.0;
    long it = 0;
    for (; it < max_iter; ++it) {
        BlockCollection next = x;
        for (int l = 0; l < modes; ++l) next[l] = care_ops_control(model, ch_act, x, l).update;
        residual = (next - x).max_frobenius_norm();
        x = std::move(next);
        if (residual <= tol) break;
        if (x.max_frobenius_norm() > 1e100)
            throw NotConvergedError("solve_control_care: iteration diverged");
    }
    if (residual > tol)
        throw NotConvergedError("solve_control_care: no fixed point within " +
                                std::to_string(max_iter) + " sweeps");

    ControlCareSolution sol;
    sol.X = x;
    sol.F.resize(modes);
    for (int l = 0; l < modes; ++l) sol.F[l] = control_gain(model, ch_act, x, l);
    sol.cost = optimal_control_cost(ch_act, model, x);
    sol.residual = residual;
    sol.iterations = it + 1;
    const StabilizabilityResult cert = is_ms_stabilizing_control_gain(ch_act, model, sol.F);
    sol.rho_control = cert.rho;
    sol.stabilizing = cert.stabilizing;
    return sol;
}

} // namespace jumpctl
