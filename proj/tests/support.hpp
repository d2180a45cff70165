#pragma once

// Shared instance generators for the test suites. Oracles that check library
// results are written inline in the tests themselves, from scratch, so they
// stay independent of the implementation paths they judge.

#include <Eigen/Dense>

#include <vector>

#include "jumpctl/channel.hpp"
#include "jumpctl/model.hpp"
#include "jumpctl/moment_ops.hpp"
#include "jumpctl/rng.hpp"

namespace testsupport {

inline Eigen::MatrixXd random_matrix(jumpctl::Rng& gen, int rows, int cols) {
    Eigen::MatrixXd m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = gen.gaussian();
    return m;
}

// Random ergodic chain: strictly positive rows, normalized.
inline jumpctl::TransitionMatrix random_tpm(jumpctl::Rng& gen, int modes) {
    Eigen::MatrixXd q(modes, modes);
    for (int i = 0; i < modes; ++i) {
        for (int j = 0; j < modes; ++j) q(i, j) = 0.05 + gen.uniform01();
        q.row(i) /= q.row(i).sum();
    }
    return jumpctl::TransitionMatrix(q);
}

inline jumpctl::MarkovChannel random_channel(jumpctl::Rng& gen, int modes, double g_lo = 0.2,
                                             double g_hi = 1.0) {
    Eigen::VectorXd g(modes);
    for (int i = 0; i < modes; ++i) g(i) = g_lo + (g_hi - g_lo) * gen.uniform01();
    return jumpctl::MarkovChannel{random_tpm(gen, modes), g, std::nullopt};
}

inline jumpctl::BlockCollection random_hermitian_blocks(jumpctl::Rng& gen, int count, int dim,
                                                        bool psd = false) {
    std::vector<Eigen::MatrixXd> blocks(count);
    for (int i = 0; i < count; ++i) {
        Eigen::MatrixXd m = random_matrix(gen, dim, dim);
        blocks[static_cast<std::size_t>(i)] = psd ? Eigen::MatrixXd(m * m.adjoint())
                                                  : Eigen::MatrixXd(0.5 * (m + m.adjoint()));
    }
    return jumpctl::BlockCollection(std::move(blocks));
}

inline std::vector<Eigen::MatrixXd> random_mode_matrices(jumpctl::Rng& gen, int count, int dim,
                                                         double scale = 1.0) {
    std::vector<Eigen::MatrixXd> out(count);
    for (int i = 0; i < count; ++i)
        out[static_cast<std::size_t>(i)] = scale * random_matrix(gen, dim, dim);
    return out;
}

// Random plant with exact structural properties: G = [Ghat, 0], H = [0, Hhat]
// so GH* = 0 and HH* > 0; weights Qc >= 0 (full rank), Rc > 0.
inline jumpctl::MjlsModel random_model(jumpctl::Rng& gen, int nx, int nu, int ny,
                                       double spectral_target, double alpha = 1.0) {
    Eigen::MatrixXd a = random_matrix(gen, nx, nx);
    const double rho = jumpctl::spectral_radius(a);
    if (rho > 0.0) a *= spectral_target / rho;
    const Eigen::MatrixXd b = random_matrix(gen, nx, nu);
    const Eigen::MatrixXd l = random_matrix(gen, ny, nx);

    Eigen::MatrixXd ghat = random_matrix(gen, nx, nx);
    ghat = ghat * ghat.adjoint() + 0.1 * Eigen::MatrixXd::Identity(nx, nx);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(ghat);
    ghat = es.operatorSqrt();
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(nx, nx + ny);
    g.leftCols(nx) = ghat;
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(ny, nx + ny);
    h.rightCols(ny) = Eigen::MatrixXd::Identity(ny, ny) +
                      0.2 * random_matrix(gen, ny, ny) * random_matrix(gen, ny, ny).adjoint();

    Eigen::MatrixXd qc = random_matrix(gen, nx, nx);
    qc = qc * qc.adjoint() + 0.01 * Eigen::MatrixXd::Identity(nx, nx);
    Eigen::MatrixXd rc = random_matrix(gen, nu, nu);
    rc = rc * rc.adjoint() + 0.1 * Eigen::MatrixXd::Identity(nu, nu);

    return jumpctl::MjlsModel::from_weights(a, b, g, l, h, qc, rc, alpha);
}

// Independent stationary distribution: least-squares solve of pi'Q = pi',
// sum(pi) = 1, with no library involvement.
inline Eigen::VectorXd oracle_stationary(const Eigen::MatrixXd& q) {
    const int n = static_cast<int>(q.rows());
    Eigen::MatrixXd sys(n + 1, n);
    sys.topRows(n) = q.transpose() - Eigen::MatrixXd::Identity(n, n);
    sys.bottomRows(1).setOnes();
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n + 1);
    rhs(n) = 1.0;
    return sys.colPivHouseholderQr().solve(rhs);
}

// Independent value-iteration oracle for the filtering fixed point, written
// directly from the map's definition on raw matrices.
inline jumpctl::BlockCollection oracle_filter_value_iteration(const jumpctl::MjlsModel& model,
                                                              const jumpctl::MarkovChannel& ch,
                                                              double tol = 1e-13,
                                                              long max_iter = 2000000) {
    const int modes = ch.modes();
    const int nx = model.nx();
    const Eigen::VectorXd pi = oracle_stationary(ch.tpm.entries);
    const Eigen::MatrixXd gg = model.noise_scale * (model.G * model.G.transpose());
    const Eigen::MatrixXd hh = model.noise_scale * (model.H * model.H.transpose());

    std::vector<Eigen::MatrixXd> y(modes);
    for (int n = 0; n < modes; ++n) y[n] = pi(n) * gg;
    for (long it = 0; it < max_iter; ++it) {
        std::vector<Eigen::MatrixXd> next(modes);
        double delta = 0.0;
        for (int n = 0; n < modes; ++n) {
            Eigen::MatrixXd d = Eigen::MatrixXd::Zero(nx, nx);
            for (int m = 0; m < modes; ++m) d += ch.tpm.entries(m, n) * y[m];
            const Eigen::MatrixXd at = model.A * d * model.A.transpose() + pi(n) * gg;
            const Eigen::MatrixXd ct =
                std::sqrt(ch.delivery_prob(n)) * (model.A * d * model.L.transpose());
            const Eigen::MatrixXd rt = pi(n) * hh + model.L * d * model.L.transpose();
            next[n] = at - ct * rt.inverse() * ct.transpose();
            next[n] = 0.5 * (next[n] + next[n].transpose()).eval();
            delta = std::max(delta, (next[n] - y[n]).norm());
        }
        y = next;
        if (delta <= tol) break;
    }
    return jumpctl::BlockCollection(y);
}

// Scalar plant in the two-channel loop; noise split keeps GH* = 0.
inline jumpctl::MjlsModel scalar_loop_model(double a, double b, double g, double c, double d,
                                            double l, double h, double alpha = 1.0) {
    auto m1 = [](double v) { return Eigen::MatrixXd::Constant(1, 1, v); };
    Eigen::MatrixXd gm(1, 2), hm(1, 2);
    gm << g, 0.0;
    hm << 0.0, h;
    return jumpctl::MjlsModel::from_outputs(m1(a), m1(b), gm, m1(l), hm, m1(c), m1(d), alpha);
}

inline jumpctl::MarkovChannel two_mode_channel(double q00, double q11, double g0, double g1) {
    Eigen::MatrixXd q(2, 2);
    q << q00, 1.0 - q00, 1.0 - q11, q11;
    Eigen::VectorXd g(2);
    g << g0, g1;
    return jumpctl::MarkovChannel{jumpctl::TransitionMatrix(q), g, std::nullopt};
}

inline jumpctl::MarkovChannel single_mode_channel(double delivery) {
    return jumpctl::MarkovChannel{
        jumpctl::TransitionMatrix(Eigen::MatrixXd::Constant(1, 1, 1.0)),
        Eigen::VectorXd::Constant(1, delivery), std::nullopt};
}

} // namespace testsupport
