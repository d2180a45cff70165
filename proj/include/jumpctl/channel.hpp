#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "jumpctl/errors.hpp"
#include "jumpctl/rng.hpp"

namespace jumpctl {

// Row-stochastic transition matrix of a finite Markov chain. The container
// itself accepts arbitrary square data so that validation can report
// violations instead of throwing; solvers only consume validated channels.
struct TransitionMatrix {
    Eigen::MatrixXd entries;

    TransitionMatrix() = default;
    explicit TransitionMatrix(Eigen::MatrixXd m) : entries(std::move(m)) {
        if (entries.rows() != entries.cols() || entries.rows() < 1)
            throw DimensionError("transition matrix must be square and non-empty");
    }

    int size() const { return static_cast<int>(entries.rows()); }

    // Rows whose sums deviate from 1 by at most `renorm_tol` are rescaled in
    // place (printed matrices routinely drop near-zero columns); larger
    // deviations are left for validation to flag. Returns the number of rows
    // that were adjusted.
    int normalize_rows(double renorm_tol = 1e-9) {
        int adjusted = 0;
        for (int i = 0; i < size(); ++i) {
            const double s = entries.row(i).sum();
            if (s != 1.0 && std::abs(s - 1.0) <= renorm_tol) {
                entries.row(i) /= s;
                ++adjusted;
            }
        }
        return adjusted;
    }
};

namespace detail {

inline std::string fmt_double(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

// Strongly connected components of the positive-entry pattern (Kosaraju).
inline int count_sccs(const Eigen::MatrixXd& q) {
    const int n = static_cast<int>(q.rows());
    std::vector<int> order;
    std::vector<char> seen(n, 0);
    std::vector<int> stack, phase;
    for (int s = 0; s < n; ++s) {
        if (seen[s]) continue;
        stack = {s};
        phase = {0};
        seen[s] = 1;
        while (!stack.empty()) {
            const int u = stack.back();
            int& p = phase.back();
            bool advanced = false;
            while (p < n) {
                const int v = p++;
                if (q(u, v) > 0.0 && !seen[v]) {
                    seen[v] = 1;
                    stack.push_back(v);
                    phase.push_back(0);
                    advanced = true;
                    break;
                }
            }
            if (!advanced && p >= n) {
                order.push_back(u);
                stack.pop_back();
                phase.pop_back();
            }
        }
    }
    std::vector<char> seen2(n, 0);
    int comps = 0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if (seen2[*it]) continue;
        ++comps;
        std::vector<int> bfs = {*it};
        seen2[*it] = 1;
        while (!bfs.empty()) {
            const int u = bfs.back();
            bfs.pop_back();
            for (int v = 0; v < n; ++v) {
                if (q(v, u) > 0.0 && !seen2[v]) {
                    seen2[v] = 1;
                    bfs.push_back(v);
                }
            }
        }
    }
    return comps;
}

// Period of an irreducible chain: gcd of (level[u] + 1 - level[v]) over all
// positive edges, with levels from a BFS rooted at node 0.
inline int chain_period(const Eigen::MatrixXd& q) {
    const int n = static_cast<int>(q.rows());
    std::vector<int> level(n, -1);
    std::vector<int> queue = {0};
    level[0] = 0;
    for (std::size_t h = 0; h < queue.size(); ++h) {
        const int u = queue[h];
        for (int v = 0; v < n; ++v) {
            if (q(u, v) > 0.0 && level[v] < 0) {
                level[v] = level[u] + 1;
                queue.push_back(v);
            }
        }
    }
    int g = 0;
    for (int u = 0; u < n; ++u)
        for (int v = 0; v < n; ++v)
            if (q(u, v) > 0.0) g = std::gcd(g, std::abs(level[u] + 1 - level[v]));
    return g == 0 ? 1 : g;
}

} // namespace detail

// A packet-loss channel: mode chain plus per-mode delivery probabilities.
// `stationary` may cache the steady-state mode distribution.
struct MarkovChannel {
    TransitionMatrix tpm;
    Eigen::VectorXd delivery_prob;
    std::optional<Eigen::VectorXd> stationary;

    int modes() const { return tpm.size(); }
};

// A sampled realization of the channel over T steps. Stored mode labels are
// 1-based (the serialization convention used by trace files as well);
// everything else in the API indexes modes from 0.
struct ModePath {
    std::vector<int> modes;      // length T+1, values in 1..S
    std::vector<int> deliveries; // length T+1, values in {0,1}
    std::uint64_t seed = 0;
};

// Diagnostics for an arbitrary channel; empty means usable. Never throws.
inline std::vector<std::string> validate_channel(const MarkovChannel& ch) {
    std::vector<std::string> out;
    const Eigen::MatrixXd& q = ch.tpm.entries;
    const int n = ch.tpm.size();
    if (q.rows() != q.cols() || n < 1) {
        out.push_back("transition matrix is not square");
        return out;
    }
    bool rows_ok = true;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (q(i, j) < -1e-12 || q(i, j) > 1.0 + 1e-12)
                out.push_back("entry (" + std::to_string(i) + "," + std::to_string(j) +
                              ") = " + detail::fmt_double(q(i, j)) + " outside [0,1]");
        }
        const double s = q.row(i).sum();
        if (std::abs(s - 1.0) > 1e-9) {
            out.push_back("row " + std::to_string(i) + " sums to " + detail::fmt_double(s));
            rows_ok = false;
        }
    }
    if (ch.delivery_prob.size() != n) {
        out.push_back("delivery_prob has length " + std::to_string(ch.delivery_prob.size()) +
                      ", expected " + std::to_string(n));
    } else {
        for (int i = 0; i < n; ++i)
            if (ch.delivery_prob(i) < 0.0 || ch.delivery_prob(i) > 1.0)
                out.push_back("delivery probability for mode " + std::to_string(i) +
                              " outside [0,1]");
    }
    if (rows_ok) {
        const int sccs = detail::count_sccs(q);
        if (sccs > 1) {
            out.push_back("not ergodic: " + std::to_string(sccs) + " closed classes");
        } else {
            const int period = detail::chain_period(q);
            if (period > 1)
                out.push_back("not ergodic: periodic with period " + std::to_string(period));
        }
    }
    if (ch.stationary) {
        const Eigen::VectorXd& pi = *ch.stationary;
        if (pi.size() != n) {
            out.push_back("stationary vector has wrong length");
        } else {
            if (pi.minCoeff() < -1e-12) out.push_back("stationary vector has negative entries");
            if (std::abs(pi.sum() - 1.0) > 1e-12) out.push_back("stationary vector does not sum to 1");
            if (rows_ok && (q.transpose() * pi - pi).lpNorm<Eigen::Infinity>() > 1e-10)
                out.push_back("stationary vector is not invariant under the chain");
        }
    }
    return out;
}

// Steady-state distribution of an ergodic chain by power iteration
// (deterministic uniform start, tolerance 1e-14, cap 1e6 sweeps).
inline Eigen::VectorXd stationary_distribution(const TransitionMatrix& tpm) {
    const Eigen::MatrixXd& q = tpm.entries;
    const int n = tpm.size();
    {
        MarkovChannel probe{tpm, Eigen::VectorXd::Zero(n), std::nullopt};
        for (const auto& v : validate_channel(probe))
            if (v.rfind("not ergodic", 0) == 0 || v.rfind("row ", 0) == 0)
                throw NotErgodicError("stationary_distribution: " + v);
    }
    Eigen::VectorXd pi = Eigen::VectorXd::Constant(n, 1.0 / n);
    constexpr double tol = 1e-14;
    constexpr long max_iter = 1000000;
    for (long it = 0; it < max_iter; ++it) {
        Eigen::VectorXd next = q.transpose() * pi;
        next /= next.sum();
        const double delta = (next - pi).lpNorm<1>();
        pi = next;
        if (delta <= tol) {
            const double residual = (q.transpose() * pi - pi).lpNorm<Eigen::Infinity>();
            if (residual > 1e-12)
                throw NotErgodicError("stationary_distribution: fixed point residual " +
                                      detail::fmt_double(residual));
            return pi;
        }
    }
    throw NotErgodicError("stationary_distribution: power iteration did not contract");
}

inline Eigen::VectorXd stationary_of(const MarkovChannel& ch) {
    return ch.stationary ? *ch.stationary : stationary_distribution(ch.tpm);
}

// P(delivery bit, next mode n | current mode m); modes are 0-based.
inline double joint_delivery_probability(const MarkovChannel& ch, int from_mode, int to_mode,
                                         int delivered) {
    const int n = ch.modes();
    if (from_mode < 0 || from_mode >= n || to_mode < 0 || to_mode >= n)
        throw IndexError("joint_delivery_probability: mode index out of range");
    if (delivered != 0 && delivered != 1)
        throw IndexError("joint_delivery_probability: delivery bit must be 0 or 1");
    const double q = ch.tpm.entries(from_mode, to_mode);
    const double g = ch.delivery_prob(to_mode);
    return delivered ? g * q : (1.0 - g) * q;
}

// Mode distribution after k steps: initial' * Q^k.
inline Eigen::VectorXd mode_probabilities(const MarkovChannel& ch, const Eigen::VectorXd& initial,
                                          long k) {
    if (initial.size() != ch.modes())
        throw DimensionError("mode_probabilities: distribution length mismatch");
    if (std::abs(initial.sum() - 1.0) > 1e-9 || initial.minCoeff() < -1e-12)
        throw DimensionError("mode_probabilities: initial is not a distribution");
    Eigen::VectorXd pi = initial;
    for (long i = 0; i < k; ++i) pi = ch.tpm.entries.transpose() * pi;
    return pi;
}

// Sample a mode/delivery path of length T+1. `initial_mode` is 1-based to
// match the stored path. Fully deterministic per seed.
inline ModePath sample_path(const MarkovChannel& ch, int initial_mode, long length,
                            std::uint64_t seed) {
    const int n = ch.modes();
    if (initial_mode < 1 || initial_mode > n)
        throw InvalidInitialModeError("sample_path: initial mode " + std::to_string(initial_mode) +
                                      " not in 1.." + std::to_string(n));
    Rng gen = Rng::substream(seed, rng_domain::kModePath, 0);
    ModePath path;
    path.seed = seed;
    path.modes.resize(length + 1);
    path.deliveries.resize(length + 1);
    int mode = initial_mode - 1;
    for (long k = 0; k <= length; ++k) {
        if (k > 0) mode = gen.categorical(ch.tpm.entries.row(mode), n);
        path.modes[k] = mode + 1;
        path.deliveries[k] = gen.bernoulli(ch.delivery_prob(mode)) ? 1 : 0;
    }
    return path;
}

} // namespace jumpctl
