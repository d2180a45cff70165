#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <cmath>

#include "jumpctl/control_care.hpp"
#include "support.hpp"

using namespace jumpctl;
using testsupport::scalar_loop_model;
using testsupport::single_mode_channel;
using testsupport::two_mode_channel;

namespace {

Eigen::MatrixXd m1(double v) { return Eigen::MatrixXd::Constant(1, 1, v); }

// Closed-form fixed point of the scalar single-mode problem with sure
// delivery and a = 0.5, b = c = d = 1: the positive root of x^2 - x/4 - 1.
double scalar_fixed_point() { return (0.25 + std::sqrt(4.0625)) / 2.0; }

// Independent scalar oracle: bisection on the fixed-point gap of the scalar
// Riccati map x -> a^2 x + c^2 - (a x b)^2 / (b^2 x + d^2).
double scalar_riccati_bisection(double a, double b, double c, double d) {
    auto gap = [&](double x) {
        const double update = a * a * x + c * c - (a * x * b) * (a * x * b) / (b * b * x + d * d);
        return update - x;
    };
    double lo = 0.0, hi = 1.0;
    while (gap(hi) > 0.0) hi *= 2.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (gap(mid) > 0.0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

} // namespace

TEST(ControlCare, ScalarMapIngredients) {
    const auto ch = single_mode_channel(1.0);
    const auto model = scalar_loop_model(0.5, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0);
    const BlockCollection x({m1(1.0)});
    const ControlCareTerms t = care_ops_control(model, ch, x, 0);
    EXPECT_NEAR(t.state_term(0, 0), 1.25, 1e-15);
    EXPECT_NEAR(t.cross_term(0, 0), 0.5, 1e-15);
    EXPECT_NEAR(t.input_weight(0, 0), 2.0, 1e-15);
    EXPECT_NEAR(t.update(0, 0), 1.125, 1e-15);
}

TEST(ControlCare, SingularInputWeightWhenControlNeverDelivered) {
    const auto ch = two_mode_channel(0.8, 0.7, 0.0, 0.0);
    const auto model = scalar_loop_model(0.5, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0);
    const BlockCollection x = BlockCollection::identity(2, 1);
    EXPECT_THROW(care_ops_control(model, ch, x, 0), SingularBtildeError);
    EXPECT_THROW(solve_control_care(model, ch), SingularBtildeError);
}

TEST(ControlCare, NoControlAuthorityReducesToStateTerm) {
    const auto ch = two_mode_channel(0.8, 0.7, 0.9, 0.6);
    auto model = scalar_loop_model(0.5, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0);
    const BlockCollection x = BlockCollection::identity(2, 1);
    for (int l = 0; l < 2; ++l) {
        const ControlCareTerms t = care_ops_control(model, ch, x, l);
        EXPECT_EQ(t.cross_term(0, 0), 0.0);
        EXPECT_NEAR(t.update(0, 0), t.state_term(0, 0), 1e-15);
        EXPECT_EQ(control_gain(model, ch, x, l)(0, 0), 0.0);
    }
}

TEST(ControlCare, ScalarSolveMatchesClosedForm) {
    const auto ch = single_mode_channel(1.0);
    const auto model = scalar_loop_model(0.5, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0);
    const ControlCareSolution sol = solve_control_care(model, ch, 1e-12, 100000);
    EXPECT_NEAR(sol.X[0](0, 0), scalar_fixed_point(), 1e-9);
    EXPECT_NEAR(sol.F[0](0, 0), -0.5 * scalar_fixed_point() / (scalar_fixed_point() + 1.0), 1e-8);
    EXPECT_TRUE(sol.stabilizing);
    EXPECT_LT(sol.rho_control, 1.0);
    EXPECT_LE(sol.residual, 1e-12);
}

TEST(ControlCare, ScalarSolveMatchesBisectionOracle) {
    const auto ch = single_mode_channel(1.0);
    for (double a : {0.3, 0.9, 1.4}) {
        const auto model = scalar_loop_model(a, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0);
        const ControlCareSolution sol = solve_control_care(model, ch, 1e-12, 200000);
        EXPECT_NEAR(sol.X[0](0, 0), scalar_riccati_bisection(a, 1.0, 1.0, 1.0), 1e-9)
            << "a = " << a;
    }
}

TEST(ControlCare, GainSubstitutionIdentity) {
    // state + cross F + F^* cross^* + F^* weight F equals the Riccati update
    // at the optimizing gain.
    Rng gen(151);
    for (int rep = 0; rep < 20; ++rep) {
        const auto ch = testsupport::random_channel(gen, 3, 0.4, 1.0);
        const auto model = testsupport::random_model(gen, 3, 2, 2, 0.9);
        const BlockCollection x = testsupport::random_hermitian_blocks(gen, 3, 3, /*psd=*/true);
        for (int l = 0; l < 3; ++l) {
            const ControlCareTerms t = care_ops_control(model, ch, x, l);
            const Eigen::MatrixXd f = control_gain(model, ch, x, l);
            const Eigen::MatrixXd assembled = t.state_term + t.cross_term * f +
                                              f.adjoint() * t.cross_term.adjoint() +
                                              f.adjoint() * t.input_weight * f;
            EXPECT_LE((assembled - t.update).norm(), 1e-10 * std::max(1.0, t.update.norm()));
        }
    }
}

TEST(ControlCare, SolutionBlocksAreHermitianPsdWithCertificate) {
    Rng gen(161);
    int solved = 0;
    for (int rep = 0; rep < 10; ++rep) {
        const auto ch = testsupport::random_channel(gen, 2, 0.6, 1.0);
        const auto model = testsupport::random_model(gen, 2, 1, 2, 0.8);
        ControlCareSolution sol;
        try {
            sol = solve_control_care(model, ch);
        } catch (const NotConvergedError&) {
            continue;
        }
        ++solved;
        EXPECT_TRUE(sol.X.is_hermitian(1e-10));
        EXPECT_GE(sol.X.min_eigenvalue(), -1e-10);
        if (sol.stabilizing) EXPECT_LT(sol.rho_control, 1.0);
    }
    EXPECT_GE(solved, 5);
}

TEST(ControlCare, SingleModeSureDeliveryEqualsClassicRiccati) {
    // With one mode and sure delivery the coupled equation collapses to the
    // standard discrete Riccati fixed point; value-iterate it independently.
    Rng gen(171);
    const auto ch = single_mode_channel(1.0);
    const auto model = testsupport::random_model(gen, 3, 2, 3, 1.2);
    const ControlCareSolution sol = solve_control_care(model, ch, 1e-12, 200000);

    Eigen::MatrixXd p = model.Qc;
    for (int it = 0; it < 1000000; ++it) {
        const Eigen::MatrixXd apb = model.B.adjoint() * p * model.B + model.Rc;
        const Eigen::MatrixXd next =
            model.A.adjoint() * p * model.A + model.Qc -
            (model.A.adjoint() * p * model.B) * apb.ldlt().solve(model.B.adjoint() * p * model.A);
        const double delta = (next - p).norm();
        p = 0.5 * (next + next.adjoint());
        if (delta <= 1e-12) break;
    }
    EXPECT_LE((sol.X[0] - p).norm(), 1e-9 * std::max(1.0, p.norm()));
}

TEST(ControlCare, CostFormula) {
    const auto ch = single_mode_channel(1.0);
    // G = 0 gives zero cost.
    auto model = scalar_loop_model(0.5, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0);
    const ControlCareSolution sol0 = solve_control_care(model, ch);
    EXPECT_EQ(sol0.cost, 0.0);

    // Single mode: cost = alpha * tr(G^* X G).
    const double alpha = 0.3;
    auto model2 = scalar_loop_model(0.5, 1.0, 2.0, 1.0, 1.0, 1.0, 1.0, alpha);
    const ControlCareSolution sol = solve_control_care(model2, ch, 1e-12, 100000);
    EXPECT_NEAR(sol.cost, alpha * 4.0 * sol.X[0](0, 0), 1e-10);
}

TEST(ControlCare, CostMatchesClosedLoopMonteCarlo) {
    // Long-run average of z'z under delayed-mode state feedback, two-mode
    // scalar instance, within 5%.
    const auto ch = two_mode_channel(0.85, 0.7, 0.95, 0.6);
    const auto model = scalar_loop_model(1.02, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0);
    const ControlCareSolution sol = solve_control_care(model, ch, 1e-12, 200000);
    ASSERT_TRUE(sol.stabilizing);

    const Eigen::VectorXd pi = stationary_distribution(ch.tpm);
    const long trials = 400;
    const int horizon = 4000, burn = 400;
    double acc = 0.0;
    long count = 0;
    for (long t = 0; t < trials; ++t) {
        Rng gen = Rng::substream(5150, rng_domain::kTrial, static_cast<std::uint64_t>(t));
        int theta = gen.categorical(pi, 2);
        int theta_prev = theta;
        double x = 0.0;
        for (int k = 0; k < horizon; ++k) {
            const double u = sol.F[theta_prev](0, 0) * x;
            const bool nu = gen.bernoulli(ch.delivery_prob(theta));
            const double w = gen.gaussian();
            const double z2 = x * x * model.Qc(0, 0) + (nu ? u * u * model.Rc(0, 0) : 0.0);
            if (k >= burn) {
                acc += z2;
                ++count;
            }
            x = model.A(0, 0) * x + (nu ? model.B(0, 0) * u : 0.0) + model.G(0, 0) * w;
            theta_prev = theta;
            theta = gen.categorical(ch.tpm.entries.row(theta), 2);
        }
    }
    const double mc = acc / static_cast<double>(count);
    EXPECT_NEAR(mc, sol.cost, 0.05 * sol.cost);
}

TEST(ControlCare, ResidualSequenceEventuallyDecreases) {
    // Monitor the sweep-to-sweep residuals on a stabilizable instance.
    const auto ch = two_mode_channel(0.8, 0.7, 0.9, 0.8);
    const auto model = scalar_loop_model(1.1, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0);
    BlockCollection x = BlockCollection::constant(2, model.Qc);
    std::vector<double> residuals;
    for (int it = 0; it < 200; ++it) {
        BlockCollection next = x;
        for (int l = 0; l < 2; ++l) next[l] = care_ops_control(model, ch, x, l).update;
        residuals.push_back((next - x).max_frobenius_norm());
        x = next;
    }
    for (std::size_t i = 20; i + 1 < residuals.size(); ++i)
        EXPECT_LE(residuals[i + 1], residuals[i] * (1.0 + 1e-9)) << "at sweep " << i;
}
