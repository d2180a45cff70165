#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "jumpctl/errors.hpp"
#include "jumpctl/rng.hpp"

namespace jumpctl {

namespace detail {

// Symmetric PSD square root, clamping small negative eigenvalues to zero.
inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.adjoint()));
    Eigen::VectorXd d = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().adjoint();
}

} // namespace detail

// The jump-linear plant
//   x_{k+1} = A x_k + nu_k B u_k + G w_k
//   y_k     = gamma_k (L x_k + H w_k)
//   z_k     = C x_k + nu_k D u_k
// with E[w_k w_k^*] = noise_scale * I. Cost weights may be supplied either as
// explicit output factors (C, D) or directly as Qc = C^*C, Rc = D^*D; the
// synthesis path only ever reads Qc and Rc. When C, D are absent, z is formed
// with the stacked factor [Qc^{1/2}; 0], [0; Rc^{1/2}], which reproduces the
// same weights and keeps the cross term C^*D zero.
struct MjlsModel {
    Eigen::MatrixXd A, B, G, L, H;
    Eigen::MatrixXd Qc, Rc;
    std::optional<Eigen::MatrixXd> C, D;
    double noise_scale = 1.0;

    int nx() const { return static_cast<int>(A.rows()); }
    int nu() const { return static_cast<int>(B.cols()); }
    int nw() const { return static_cast<int>(G.cols()); }
    int ny() const { return static_cast<int>(L.rows()); }

    Eigen::MatrixXd output_weight_factor() const { // effective C
        if (C) return *C;
        Eigen::MatrixXd f = Eigen::MatrixXd::Zero(nx() + nu(), nx());
        f.topRows(nx()) = detail::psd_sqrt(Qc);
        return f;
    }
    Eigen::MatrixXd input_weight_factor() const { // effective D
        if (D) return *D;
        Eigen::MatrixXd f = Eigen::MatrixXd::Zero(nx() + nu(), nu());
        f.bottomRows(nu()) = detail::psd_sqrt(Rc);
        return f;
    }

    static MjlsModel from_outputs(Eigen::MatrixXd A, Eigen::MatrixXd B, Eigen::MatrixXd G,
                                  Eigen::MatrixXd L, Eigen::MatrixXd H, Eigen::MatrixXd C,
                                  Eigen::MatrixXd D, double noise_scale) {
        MjlsModel m;
        m.A = std::move(A);
        m.B = std::move(B);
        m.G = std::move(G);
        m.L = std::move(L);
        m.H = std::move(H);
        m.Qc = C.adjoint() * C;
        m.Rc = D.adjoint() * D;
        m.C = std::move(C);
        m.D = std::move(D);
        m.noise_scale = noise_scale;
        return m;
    }

    static MjlsModel from_weights(Eigen::MatrixXd A, Eigen::MatrixXd B, Eigen::MatrixXd G,
                                  Eigen::MatrixXd L, Eigen::MatrixXd H, Eigen::MatrixXd Qc,
                                  Eigen::MatrixXd Rc, double noise_scale) {
        MjlsModel m;
        m.A = std::move(A);
        m.B = std::move(B);
        m.G = std::move(G);
        m.L = std::move(L);
        m.H = std::move(H);
        m.Qc = std::move(Qc);
        m.Rc = std::move(Rc);
        m.noise_scale = noise_scale;
        return m;
    }
};

struct PlantState {
    Eigen::VectorXd x;
    long k = 0;
};

struct PlantStep {
    PlantState next;
    Eigen::VectorXd y;
    Eigen::VectorXd z;
};

// Diagnostics for the structural assumptions on the plant matrices; empty
// list means the model is usable. Definiteness is decided by eigenvalue sign
// with tolerance 1e-10.
inline std::vector<std::string> validate_model(const MjlsModel& m) {
    std::vector<std::string> out;
    const int nx = m.nx();
    constexpr double tol = 1e-10;

    if (m.A.rows() != m.A.cols()) out.push_back("A is not square");
    if (m.B.rows() != nx) out.push_back("B row count does not match A");
    if (m.G.rows() != nx) out.push_back("G row count does not match A");
    if (m.L.cols() != nx) out.push_back("L column count does not match A");
    if (m.H.rows() != m.L.rows()) out.push_back("H row count does not match L");
    if (m.H.cols() != m.G.cols()) out.push_back("H and G disagree on the noise dimension");
    if (m.Qc.rows() != nx || m.Qc.cols() != nx) out.push_back("state weight Qc is not nx by nx");
    if (m.Rc.rows() != m.B.cols() || m.Rc.cols() != m.B.cols())
        out.push_back("input weight Rc is not nu by nu");
    if (m.noise_scale < 0.0) out.push_back("noise_scale is negative");
    if (!out.empty()) return out;

    auto min_eig = [](const Eigen::MatrixXd& s) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (s + s.adjoint()),
                                                          Eigen::EigenvaluesOnly);
        return es.eigenvalues().minCoeff();
    };

    if (min_eig(m.G * m.G.adjoint()) < -tol) out.push_back("GG* not positive semidefinite");
    if ((m.G * m.H.adjoint()).lpNorm<Eigen::Infinity>() > tol) out.push_back("GH* is not zero");
    if (min_eig(m.H * m.H.adjoint()) <= tol) out.push_back("HH* not positive definite");
    if (min_eig(m.Qc) < -tol) out.push_back("C*C not positive semidefinite");
    if (min_eig(m.Rc) <= tol) out.push_back("D*D not positive definite");
    if ((m.Qc - m.Qc.adjoint()).lpNorm<Eigen::Infinity>() > tol) out.push_back("C*C not Hermitian");
    if ((m.Rc - m.Rc.adjoint()).lpNorm<Eigen::Infinity>() > tol) out.push_back("D*D not Hermitian");
    if (m.C && m.D) {
        if (m.C->rows() != m.D->rows()) out.push_back("C and D disagree on the output dimension");
        else if ((m.C->adjoint() * *m.D).lpNorm<Eigen::Infinity>() > tol)
            out.push_back("C*D is not zero");
    }
    return out;
}

// One step of the stochastic plant for a given delivery realization. The
// caller supplies w already scaled by sqrt(noise_scale).
inline PlantStep plant_step(const MjlsModel& m, const PlantState& s, const Eigen::VectorXd& u,
                            int nu_bit, int gamma_bit, const Eigen::VectorXd& w) {
    if (s.x.size() != m.nx() || u.size() != m.nu() || w.size() != m.nw())
        throw DimensionError("plant_step: input dimensions do not match the model");
    PlantStep out;
    out.next.x = m.A * s.x + static_cast<double>(nu_bit) * (m.B * u) + m.G * w;
    out.next.k = s.k + 1;
    out.y = static_cast<double>(gamma_bit) * (m.L * s.x + m.H * w);
    out.z = m.output_weight_factor() * s.x +
            static_cast<double>(nu_bit) * (m.input_weight_factor() * u);
    return out;
}

// i.i.d. N(0, noise_scale * I) draw, deterministic per (seed, k).
inline Eigen::VectorXd draw_noise(const MjlsModel& m, std::uint64_t seed, long k) {
    Eigen::VectorXd w = Eigen::VectorXd::Zero(m.nw());
    if (m.noise_scale == 0.0) return w;
    Rng gen = Rng::substream(seed, rng_domain::kPlantNoise, static_cast<std::uint64_t>(k));
    const double scale = std::sqrt(m.noise_scale);
    for (int i = 0; i < m.nw(); ++i) w(i) = scale * gen.gaussian();
    return w;
}

} // namespace jumpctl
