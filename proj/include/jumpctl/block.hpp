#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "jumpctl/errors.hpp"

namespace jumpctl {

// Mode-indexed list of square matrices of one common dimension: the carrier
// for Riccati solutions, second-moment blocks and operator arguments.
struct BlockCollection {
    std::vector<Eigen::MatrixXd> blocks;

    BlockCollection() = default;
    explicit BlockCollection(std::vector<Eigen::MatrixXd> b) : blocks(std::move(b)) {
        check_uniform();
    }

    static BlockCollection zero(int count, int dim) {
        return BlockCollection(std::vector<Eigen::MatrixXd>(count, Eigen::MatrixXd::Zero(dim, dim)));
    }
    static BlockCollection identity(int count, int dim) {
        return BlockCollection(
            std::vector<Eigen::MatrixXd>(count, Eigen::MatrixXd::Identity(dim, dim)));
    }
    static BlockCollection constant(int count, const Eigen::MatrixXd& m) {
        return BlockCollection(std::vector<Eigen::MatrixXd>(count, m));
    }

    int count() const { return static_cast<int>(blocks.size()); }
    int dim() const { return blocks.empty() ? 0 : static_cast<int>(blocks.front().rows()); }

    const Eigen::MatrixXd& operator[](int i) const { return blocks[static_cast<std::size_t>(i)]; }
    Eigen::MatrixXd& operator[](int i) { return blocks[static_cast<std::size_t>(i)]; }

    void check_uniform() const {
        for (const auto& b : blocks)
            if (b.rows() != b.cols() || b.rows() != dim())
                throw DimensionError("block collection must hold square blocks of one dimension");
    }

    bool is_hermitian(double tol = 1e-12) const {
        for (const auto& b : blocks)
            if ((b - b.adjoint()).lpNorm<Eigen::Infinity>() > tol) return false;
        return true;
    }

    void symmetrize() {
        for (auto& b : blocks) b = 0.5 * (b + b.adjoint()).eval();
    }

    // Smallest eigenvalue over all (Hermitian) blocks.
    double min_eigenvalue() const {
        double m = std::numeric_limits<double>::infinity();
        for (const auto& b : blocks) {
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (b + b.adjoint()),
                                                              Eigen::EigenvaluesOnly);
            m = std::min(m, es.eigenvalues().minCoeff());
        }
        return m;
    }

    double max_frobenius_norm() const {
        double m = 0.0;
        for (const auto& b : blocks) m = std::max(m, b.norm());
        return m;
    }

    double total_trace() const {
        double t = 0.0;
        for (const auto& b : blocks) t += b.trace();
        return t;
    }

    BlockCollection& operator+=(const BlockCollection& o) {
        require_same_shape(o);
        for (int i = 0; i < count(); ++i) blocks[i] += o.blocks[i];
        return *this;
    }
    BlockCollection& operator-=(const BlockCollection& o) {
        require_same_shape(o);
        for (int i = 0; i < count(); ++i) blocks[i] -= o.blocks[i];
        return *this;
    }
    BlockCollection& operator*=(double s) {
        for (auto& b : blocks) b *= s;
        return *this;
    }

    friend BlockCollection operator+(BlockCollection a, const BlockCollection& b) { return a += b; }
    friend BlockCollection operator-(BlockCollection a, const BlockCollection& b) { return a -= b; }
    friend BlockCollection operator*(double s, BlockCollection a) { return a *= s; }

    void require_same_shape(const BlockCollection& o) const {
        if (o.count() != count() || o.dim() != dim())
            throw DimensionError("block collections have mismatched shapes");
    }
};

// <S;T> = sum_m tr(S_m^* T_m)
inline double inner_product(const BlockCollection& s, const BlockCollection& t) {
    s.require_same_shape(t);
    double acc = 0.0;
    for (int i = 0; i < s.count(); ++i) acc += (s[i].adjoint() * t[i]).trace();
    return acc;
}

// Stacked column-major vectorization [vec(S_1); ...; vec(S_C)].
inline Eigen::VectorXd vec_stack(const BlockCollection& s) {
    const int d2 = s.dim() * s.dim();
    Eigen::VectorXd v(s.count() * d2);
    for (int i = 0; i < s.count(); ++i)
        v.segment(i * d2, d2) = Eigen::Map<const Eigen::VectorXd>(s[i].data(), d2);
    return v;
}

inline BlockCollection unstack(const Eigen::VectorXd& v, int count, int dim) {
    if (v.size() != static_cast<long>(count) * dim * dim)
        throw DimensionError("unstack: vector length does not match block shape");
    std::vector<Eigen::MatrixXd> blocks(count);
    for (int i = 0; i < count; ++i)
        blocks[static_cast<std::size_t>(i)] =
            Eigen::Map<const Eigen::MatrixXd>(v.data() + static_cast<long>(i) * dim * dim, dim, dim);
    return BlockCollection(std::move(blocks));
}

} // namespace jumpctl
