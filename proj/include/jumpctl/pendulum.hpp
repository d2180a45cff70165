#pragma once

#include <Eigen/Dense>

#include <cmath>

#include "jumpctl/channel.hpp"
#include "jumpctl/model.hpp"

// Bundled demo plant: an inverted pendulum on a cart, linearized about the
// upright equilibrium and discretized at 10 ms, controlled over twelve-state
// wireless channels. The published channel matrix elides near-zero columns
// (entries whose first four decimals vanish), so the bundled transition
// matrix is a surrogate: the printed entries are kept, the elided columns
// share each row's missing mass equally, and the never-entered first mode
// receives a tiny 1e-5 so the chain stays irreducible. The measurement map is
// not part of the published data either; L = I is the bundled default.

namespace jumpctl {
namespace pendulum {

inline MjlsModel model() {
    Eigen::MatrixXd a(4, 4);
    a << 1.000, 0.010, 0.000, 0.000, //
        0.000, 0.998, 0.027, 0.000,  //
        0.000, 0.000, 1.002, 0.010,  //
        0.000, -0.005, 0.312, 1.002;
    Eigen::MatrixXd b(4, 1);
    b << 0.00091, 0.182, 0.0023, 0.474;
    b *= 0.1;

    // G = [K, 0], H = [0, I] with K = [I2; I2]: GG* is the 2x2 block pattern
    // of ones times I2, GH* = 0, HH* = I4.
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(4, 6);
    g.block(0, 0, 2, 2) = Eigen::MatrixXd::Identity(2, 2);
    g.block(2, 0, 2, 2) = Eigen::MatrixXd::Identity(2, 2);
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(4, 6);
    h.rightCols(4) = Eigen::MatrixXd::Identity(4, 4);

    Eigen::VectorXd qdiag(4);
    qdiag << 1000.0, 0.1, 10000.0, 0.1;
    const Eigen::MatrixXd l = Eigen::MatrixXd::Identity(4, 4);
    return MjlsModel::from_weights(a, b, g, l, h, qdiag.asDiagonal(),
                                   Eigen::MatrixXd::Identity(1, 1), 0.0002);
}

// Surrogate twelve-state channel shared by the actuation and sensing links.
inline MarkovChannel channel() {
    const int modes = 12;
    Eigen::VectorXd col11(modes), col12(modes);
    col11 << 0.0071, 0.0070, 0.0070, 0.0069, 0.0069, 0.0069, 0.0069, 0.0069, 0.0069, 0.0069,
        0.0068, 0.0063;
    col12 << 0.9922, 0.9923, 0.9924, 0.9924, 0.9924, 0.9924, 0.9924, 0.9924, 0.9924, 0.9924,
        0.9925, 0.9931;

    Eigen::MatrixXd q = Eigen::MatrixXd::Zero(modes, modes);
    for (int i = 0; i < modes; ++i) {
        q(i, 0) = 1e-5;
        q(i, 1) = 2e-4;
        q(i, 7) = 1e-4;
        q(i, 8) = 1e-4;
        q(i, 9) = 1e-4;
        q(i, 10) = col11(i);
        q(i, 11) = col12(i);
        const double remainder = 1.0 - q.row(i).sum();
        for (int j = 2; j <= 6; ++j) q(i, j) = remainder / 5.0;
    }

    Eigen::VectorXd delivery(modes);
    delivery << 0.0, 0.02, 0.15, 0.25, 0.35, 0.45, 0.55, 0.65, 0.75, 0.86, 0.99, 1.0;
    return MarkovChannel{TransitionMatrix(q), delivery, std::nullopt};
}

inline Eigen::VectorXd initial_state() {
    Eigen::VectorXd x0(4);
    x0 << 0.0, 0.0, M_PI / 10.0, 0.0;
    return x0;
}

inline Eigen::VectorXd initial_estimate() {
    Eigen::VectorXd xh(4);
    xh << 1.0, 0.0, 11.0 * M_PI / 100.0, 0.0;
    return xh;
}

} // namespace pendulum
} // namespace jumpctl
