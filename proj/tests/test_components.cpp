#include <cmath>
#include <random>

#include <gtest/gtest.h>
#include <unsupported/Eigen/MatrixFunctions>

#include "common.hpp"
#include "dhn/components.hpp"
#include "dhn/dimension.hpp"

using namespace dhn;
using dhn::test::rel;

namespace {

// Independent Darcy-Weisbach drop and brute-force least-squares fit.
double dw_oracle(double D, double L, double eps, double q) {
    const double pi = std::acos(-1.0);
    const double v = q / (pi * D * D / 4.0);
    const double re = v * D / 4.7e-7;
    const double f = re < 2000.0 ? 64.0 / re
                                 : 0.25 / std::pow(std::log10(eps / (3.7 * D) + 5.74 / std::pow(re, 0.9)), 2);
    return f * L / D * 983.0 * v * v / 2.0;
}

std::pair<double, double> fit_oracle(double D, double L, double eps) {
    // normal equations of min sum (a q^2 + b q - dp)^2 on 400 uniform points
    double s4 = 0, s3 = 0, s2 = 0, y2 = 0, y1 = 0;
    for (int i = 0; i < 400; ++i) {
        const double q = 1e-5 + (0.03 - 1e-5) * i / 399.0;
        const double y = dw_oracle(D, L, eps, q);
        s4 += q * q * q * q;
        s3 += q * q * q;
        s2 += q * q;
        y2 += y * q * q;
        y1 += y * q;
    }
    const double det = s4 * s2 - s3 * s3;
    return {(y2 * s2 - s3 * y1) / det, (s4 * y1 - s3 * y2) / det};
}

}  // namespace

TEST(Friction, ZeroFlowGivesZero) {
    EXPECT_EQ(friction(FrictionLaw{1e9, 1e5}, 0.0), 0.0);
}

TEST(Friction, DirectEvaluation) {
    EXPECT_NEAR(friction(FrictionLaw{1e9, 1e5}, 1e-3), 1100.0, 1e-9);
}

TEST(Friction, OddAndStrictlyIncreasing) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-0.03, 0.03);
    const FrictionLaw f = fit_friction(0.0825, 100.0, 4.5e-5);
    for (int i = 0; i < 1000; ++i) {
        const double q1 = u(rng), q2 = u(rng);
        EXPECT_EQ(friction(f, -q1), -friction(f, q1));
        if (q1 != q2) EXPECT_GT((q1 - q2) * (friction(f, q1) - friction(f, q2)), 0.0);
        const ValveParams v = test::consumer_valve();
        if (q1 != q2) EXPECT_GT((q1 - q2) * (mu_hat(v, q1) - mu_hat(v, q2)), 0.0);
    }
}

TEST(Friction, InverseRoundTrip) {
    const FrictionLaw f = fit_friction(0.0359, 25.0, 4.5e-5);
    for (double q : {-0.02, -1e-4, 0.0, 3e-7, 2e-3, 0.029}) {
        EXPECT_NEAR(friction_inverse(f, friction(f, q)), q, 1e-15 + 1e-12 * std::abs(q));
    }
}

TEST(FrictionFit, MatchesBruteForceOracleAndFrozenValues) {
    const auto [a80, b80] = fit_oracle(0.0825, 100.0, 4.5e-5);
    const FrictionLaw f80 = fit_friction(0.0825, 100.0, 4.5e-5);
    EXPECT_LT(rel(f80.a, a80), 1e-9);
    EXPECT_LT(rel(f80.b, b80), 1e-9);
    // frozen regression fixture
    EXPECT_LT(rel(f80.a, 358083674.2292835), 1e-12);
    EXPECT_LT(rel(f80.b, 275353.4347874603), 1e-12);

    const auto [a32, b32] = fit_oracle(0.0359, 25.0, 4.5e-5);
    const FrictionLaw f32 = fit_friction(0.0359, 25.0, 4.5e-5);
    EXPECT_LT(rel(f32.a, a32), 1e-9);
    EXPECT_LT(rel(f32.b, b32), 1e-9);
    EXPECT_LT(rel(f32.a, 6945405085.93092), 1e-12);
    EXPECT_LT(rel(f32.b, 1381921.2251710591), 1e-12);
}

TEST(FrictionFit, TracksDarcyWeisbachInTurbulentRange) {
    const FrictionLaw f = fit_friction(0.0825, 100.0, 4.5e-5);
    for (double q : {0.005, 0.01, 0.02, 0.03}) {
        EXPECT_LT(rel(friction(f, q), dw_oracle(0.0825, 100.0, 4.5e-5, q)), 0.05) << q;
    }
}

TEST(FrictionFit, DoublingLengthDoublesBoth) {
    const FrictionLaw f1 = fit_friction(0.0825, 50.0, 4.5e-5);
    const FrictionLaw f2 = fit_friction(0.0825, 100.0, 4.5e-5);
    EXPECT_LT(rel(f2.a, 2 * f1.a), 1e-9);
    EXPECT_LT(rel(f2.b, 2 * f1.b), 1e-9);
}

TEST(FrictionFit, SmallerDiameterIsMoreResistive) {
    EXPECT_GT(fit_friction(0.0359, 25.0, 4.5e-5).a, fit_friction(0.0825, 25.0, 4.5e-5).a);
}

TEST(FrictionFit, LaminarFloorOnB) {
    const double D = 0.0825, L = 100.0;
    const double b_hp = 128.0 * 983.0 * 4.7e-7 * L / (std::acos(-1.0) * std::pow(D, 4));
    EXPECT_GE(fit_friction(D, L, 4.5e-5).b, b_hp * (1 - 1e-12));
}

TEST(FrictionFit, RejectsBadGeometry) {
    EXPECT_THROW(fit_friction(0.0, 10.0, 1e-5), std::invalid_argument);
    EXPECT_THROW(fit_friction(0.1, -1.0, 1e-5), std::invalid_argument);
}

TEST(Valve, NominalKvsExample) {
    ValveParams v{0.025 / std::sqrt(1e5), ValveCharacteristic::Linear, 50.0, 0.05};
    EXPECT_NEAR(valve_drop(v, 1.0, 0.025), 1e5, 1e-6);
}

TEST(Valve, ZeroFlowZeroDrop) {
    const ValveParams v = test::consumer_valve(50.0);
    for (double s : {0.05, 0.3, 1.0}) EXPECT_EQ(valve_drop(v, s, 0.0), 0.0);
}

TEST(Valve, EqualPercentageExample) {
    const ValveParams v{7.9e-5, ValveCharacteristic::EqualPercentage, 50.0, 0.05};
    EXPECT_NEAR(v.input_of_stem(0.5), 50.0, 1e-12);
    EXPECT_NEAR(mu_hat(v, 0.01), 1e-4 / 6.241e-9, 1e-6);
    EXPECT_LT(rel(valve_drop(v, 0.5, 0.01), 50.0 * 1e-4 / 6.241e-9), 1e-12);
    EXPECT_NEAR(valve_drop(v, 0.5, 0.01), 8.01e5, 1e3);
}

TEST(Valve, StemOutOfRange) {
    const ValveParams v = test::consumer_valve(50.0);
    EXPECT_THROW(valve_drop(v, 0.01, 1e-3), std::domain_error);
    EXPECT_THROW(valve_drop(v, 1.2, 1e-3), std::domain_error);
}

TEST(Valve, StemFromInput) {
    const ValveParams lin{7.9e-5, ValveCharacteristic::Linear, 50.0, 0.05};
    const ValveParams eq{7.9e-5, ValveCharacteristic::EqualPercentage, 50.0, 0.05};
    EXPECT_DOUBLE_EQ(stem_from_input(lin, 1.0), 1.0);
    EXPECT_DOUBLE_EQ(stem_from_input(eq, 1.0), 1.0);
    EXPECT_NEAR(stem_from_input(lin, 4.0), 0.5, 1e-15);
    EXPECT_NEAR(stem_from_input(eq, 50.0), 0.5, 1e-15);
    EXPECT_THROW(stem_from_input(eq, 0.5), std::domain_error);
    EXPECT_THROW(stem_from_input(eq, eq.u_max() * 1.01), std::domain_error);
    EXPECT_NEAR(eq.u_max(), std::pow(50.0, 2 * 0.95), 1e-9);
    EXPECT_NEAR(lin.u_max(), 400.0, 1e-9);
}

TEST(Valve, InputStrictlyDecreasingInStem) {
    const ValveParams eq = test::consumer_valve(150.0);
    double prev = INFINITY;
    for (int i = 0; i <= 100; ++i) {
        const double s = eq.s_min + (1 - eq.s_min) * i / 100.0;
        const double u = eq.input_of_stem(s);
        EXPECT_LT(u, prev);
        prev = u;
        EXPECT_NEAR(stem_from_input(eq, u), s, 1e-12);
    }
    EXPECT_DOUBLE_EQ(eq.input_of_stem(1.0), 1.0);
}

TEST(Pump, RatiosFromResistance) {
    const PumpParams p = PumpParams::from_resistance(1e6);
    EXPECT_NEAR(p.R_P / p.J_P, 7.2878, 1e-12);
    EXPECT_NEAR(1.0 / (p.J_P * p.C_P), 341.4283, 1e-9);
    EXPECT_THROW(PumpParams::from_resistance(0.0), std::invalid_argument);
}

TEST(Pump, EquilibriumAndOrigin) {
    const PumpParams p = PumpParams::from_resistance(1e6);
    const double q = 2e-3, pp = 4e5;
    const auto r = pump_rhs(p, q, pp, pp + p.R_P * q, -q);
    EXPECT_EQ(r[0], 0.0);
    EXPECT_EQ(r[1], 0.0);
    const auto z = pump_rhs(p, 0, 0, 0, 0);
    EXPECT_EQ(z[0], 0.0);
    EXPECT_EQ(z[1], 0.0);
}

TEST(Pump, Linearity) {
    const PumpParams p = PumpParams::from_resistance(1e6);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int i = 0; i < 100; ++i) {
        const double al = u(rng);
        const double q1 = 1e-3 * u(rng), p1 = 1e5 * u(rng), u1 = 1e5 * u(rng), d1 = 1e-3 * u(rng);
        const double q2 = 1e-3 * u(rng), p2 = 1e5 * u(rng), u2 = 1e5 * u(rng), d2 = 1e-3 * u(rng);
        const auto mix = pump_rhs(p, al * q1 + (1 - al) * q2, al * p1 + (1 - al) * p2,
                                  al * u1 + (1 - al) * u2, al * d1 + (1 - al) * d2);
        const auto r1 = pump_rhs(p, q1, p1, u1, d1), r2 = pump_rhs(p, q2, p2, u2, d2);
        EXPECT_NEAR(mix[0], al * r1[0] + (1 - al) * r2[0], 1e-8 * (1 + std::abs(mix[0]) + 2e5));
        EXPECT_NEAR(mix[1], al * r1[1] + (1 - al) * r2[1], 1e-18);
    }
}

TEST(Pump, StepResponseMatchesMatrixExponential) {
    const PumpParams p = PumpParams::from_resistance(1e6);
    const double u = 1e5;
    // balanced coordinates y = (R_P q_P, p_P), d = 0
    const double R = p.R_P;
    Eigen::Matrix2d A;
    A << -R / p.J_P, -R / p.J_P, 1.0 / (R * p.C_P), 0.0;
    const Eigen::Vector2d b(R * u / p.J_P, 0.0);
    const Eigen::Vector2d y_inf = -A.inverse() * b;

    auto f = [&](const Eigen::Vector2d& x) {
        const auto r = pump_rhs(p, x(0), x(1), u, 0.0);
        return Eigen::Vector2d(r[0] / p.J_P, r[1] / p.C_P);
    };
    Eigen::Vector2d x = Eigen::Vector2d::Zero();
    const double h = 1e-4;
    for (int k = 1; k <= 20000; ++k) {
        const Eigen::Vector2d k1 = f(x), k2 = f(x + h / 2 * k1), k3 = f(x + h / 2 * k2), k4 = f(x + h * k3);
        x += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
        if (k == 1000 || k == 20000) {
            const double t = k * h;
            const Eigen::Vector2d ref = y_inf + (A * t).exp() * (-y_inf);
            EXPECT_LT(std::abs(x(1) - ref(1)) / u, 1e-8) << t;
            EXPECT_LT(std::abs(R * x(0) - ref(0)) / u, 1e-8) << t;
        }
    }
    EXPECT_NEAR(x(1), u, 1e-3 * u);  // settled
}

TEST(Circuit, DguWithoutValveTermIsPipeWithPump) {
    const auto pipe = pipe_from_geometry(0.0359, 25.0, 4.5e-5);
    const PumpParams pp = PumpParams::from_resistance(1e6);
    const ValveParams v = test::consumer_valve();
    const auto a = dgu_consumer_rhs(pipe, &pp, &v, 2e-3, 1e-3, 3e5, 0.0, 2e5, -1e5);
    const auto b = pipe_rhs(pipe, &pp, 2e-3, 1e-3, 3e5, 2e5, -1e5);
    for (int i = 0; i < 3; ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(Circuit, DguEquilibriumByNewton) {
    const auto pipe = pipe_from_geometry(0.0359, 25.0, 4.5e-5);
    const PumpParams pp = PumpParams::from_resistance(1e6);
    const ValveParams v = test::consumer_valve(50.0);
    const double d = 5e5, q_target = 3e-3;
    const double u_P = friction(pipe, q_target) + mu_hat(v, q_target) - d + pp.R_P * q_target;

    // Newton on the 3-state residual with a forward-difference Jacobian
    Eigen::Vector3d x(1e-3, 1e-3, 0.0);
    auto F = [&](const Eigen::Vector3d& y) {
        const auto r = dgu_consumer_rhs(pipe, &pp, &v, y(0), y(1), y(2), 1.0, u_P, d);
        return Eigen::Vector3d(r[0], r[1], r[2] * 1e6);
    };
    for (int it = 0; it < 50; ++it) {
        const Eigen::Vector3d r = F(x);
        Eigen::Matrix3d Jm;
        for (int j = 0; j < 3; ++j) {
            Eigen::Vector3d y = x;
            const double h = 1e-7 * std::max(1.0, std::abs(x(j)));
            y(j) += h;
            Jm.col(j) = (F(y) - r) / h;
        }
        x -= Jm.fullPivLu().solve(r);
    }
    EXPECT_LT(rel(x(0), q_target), 1e-9);
    const auto r = dgu_consumer_rhs(pipe, &pp, &v, x(0), x(1), x(2), 1.0, u_P, d);
    EXPECT_LT(std::abs(r[0]) / std::abs(d), 1e-9);
    EXPECT_LT(std::abs(r[1]) / std::abs(u_P), 1e-9);
    EXPECT_LT(std::abs(r[2]) / q_target, 1e-9);
}

TEST(Circuit, AlgebraicEquilibrium) {
    const auto pipe = pipe_from_geometry(0.0359, 25.0, 4.5e-5);
    const PumpParams pp = PumpParams::from_resistance(1e6);
    const ValveParams v = test::consumer_valve();
    const double q = 2.5e-3, u_v = 40.0, d = -3e5;
    const double p_P = friction(pipe, q) + mu_hat(v, q) * u_v - d;
    const auto r = dgu_consumer_rhs(pipe, &pp, &v, q, q, p_P, u_v, p_P + pp.R_P * q, d);
    EXPECT_NEAR(r[0], 0.0, 1e-9);
    EXPECT_NEAR(r[1], 0.0, 1e-9);
    EXPECT_EQ(r[2], 0.0);
}

TEST(Circuit, PipeMixingNodes) {
    const auto pipe = pipe_from_geometry(0.0825, 100.0, 4.5e-5);
    EXPECT_NEAR(pipe_rhs(pipe, nullptr, 4e-3, 0, 0, 0, friction(pipe, 4e-3))[0], 0.0, 1e-9);
    const ValveParams v = test::consumer_valve();
    const double q = 3e-3, u = 12.0;
    EXPECT_NEAR(mixing_rhs(pipe, v, q, u, friction(pipe, q) + mu_hat(v, q) * u), 0.0, 1e-9);
    EXPECT_EQ(capacitive_rhs(2e-3 - 2e-3), 0.0);

    // holding node: pump delivers q_P into the node, d is the net inflow
    const PumpParams hp = PumpParams::from_resistance(1e6);
    const double qP = 1e-3, p = 2e5;
    const auto h = holding_rhs(hp, qP, p, p + hp.R_P * qP, -qP);
    EXPECT_NEAR(h[0], 0.0, 1e-9);
    EXPECT_EQ(h[1], 0.0);
    const auto lin = pump_rhs(hp, qP, p, p + hp.R_P * qP, -qP);
    EXPECT_EQ(h[0], lin[0]);
    EXPECT_EQ(h[1], lin[1]);
}

// ---------------------------------------------------------------------------
// unit sanity

namespace units = dhn::units;

TEST(Units, LawsCarryConsistentDimensions) {
    using namespace units;
    using MomentumRate = decltype(law::friction(TurbulentCoeff{}, Resistance{}, Flow{}));
    static_assert(std::is_same_v<MomentumRate, Pressure>);
    static_assert(std::is_same_v<decltype(law::valve_mu_hat(ValveCoeff{}, Flow{})), Pressure>);
    static_assert(std::is_same_v<decltype(law::pump_momentum(Resistance{}, Flow{}, Pressure{}, Pressure{})),
                                 Pressure>);
    static_assert(std::is_same_v<decltype(law::pump_volume(Flow{}, Flow{})), Flow>);
    // second row: C_P p_P' carries m^3/s
    static_assert(std::is_same_v<decltype(Flow{} + Flow{}), Flow>);
    static_assert(std::is_same_v<decltype(Capacitance{} * Pressure{} / Time{}), Flow>);
    static_assert(std::is_same_v<decltype(Inertance{} * Flow{} / Time{}), Pressure>);
    static_assert(std::is_same_v<decltype(law::edge_momentum(Pressure{}, Pressure{}, Pressure{},
                                                             Scalar{}, Pressure{})),
                                 Pressure>);
}

TEST(Units, BundledNetworksEvaluateIdenticallyWithTags) {
    using namespace units;
    for (const auto& name : test::bundled_networks()) {
        const NetworkGraph g = test::bundled(name);
        for (const auto& [id, e] : g.edges) {
            const double q = 2.3e-3, d = -1.7e5;
            const Pressure lam = law::friction(TurbulentCoeff(e.pipe.friction.a),
                                               Resistance(e.pipe.friction.b), Flow(q));
            EXPECT_EQ(lam.v, friction(e.pipe, q)) << name << " e" << id;
            Pressure mu(0.0);
            if (e.valve) {
                mu = law::valve_mu_hat(ValveCoeff(e.valve->inv_cv2()), Flow(q));
                EXPECT_EQ(mu.v, mu_hat(*e.valve, q));
            }
            const Pressure rate = law::edge_momentum(Pressure(4e5), lam, mu, Scalar(3.0), Pressure(d));
            static_assert(std::is_same_v<decltype(rate / Inertance(e.pipe.J)), Quantity<0, 3, -2>>);
            if (e.pump) {
                const Pressure m = law::pump_momentum(Resistance(e.pump->R_P), Flow(q), Pressure(4e5), Pressure(6e5));
                const Flow vol = law::pump_volume(Flow(q), Flow(-q));
                const auto pd = law::pump(e.pump->R_P, q, 4e5, 6e5, -q);
                EXPECT_EQ(m.v, pd[0]);
                EXPECT_EQ(vol.v, pd[1]);
                const auto qP_dot = m / Inertance(e.pump->J_P);
                const auto pP_dot = vol / Capacitance(e.pump->C_P);
                static_assert(std::is_same_v<decltype(qP_dot), const Quantity<0, 3, -2>>);
                static_assert(std::is_same_v<decltype(pP_dot), const Quantity<1, -1, -3>>);
            }
        }
        for (const auto& [id, n] : g.nodes) {
            if (!n.pump) continue;
            const Pressure m = law::pump_momentum(Resistance(n.pump->R_P), Flow(1e-3), Pressure(2e5),
                                                  Pressure(2e5 + n.pump->R_P * 1e-3));
            EXPECT_EQ(m.v, 0.0);
            EXPECT_EQ(law::pump_volume(Flow(1e-3), Flow(-1e-3)).v, 0.0);
        }
    }
}
