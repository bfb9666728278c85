#include "doctest.h"

#include <cmath>
#include <numbers>

#include "chirpest/objective.hpp"
#include "chirpest/signal_model.hpp"
#include "fixtures.hpp"

using namespace chirpest;

namespace {

// J(x) = x^T A x + a^T x
class Quadratic final : public Potential {
public:
    Quadratic(Eigen::MatrixXd A, Eigen::VectorXd a) : A_(std::move(A)), a_(std::move(a)) {}
    std::size_t dimension() const override { return static_cast<std::size_t>(a_.size()); }
    double value(const Eigen::VectorXd& x) const override { return x.dot(A_ * x) + a_.dot(x); }
    Evaluation evaluate(const Eigen::VectorXd& x) const override {
        return {value(x), (A_ + A_.transpose()) * x + a_};
    }

private:
    Eigen::MatrixXd A_;
    Eigen::VectorXd a_;
};

ObjectiveContext noisy_table1(double snr_db, std::uint64_t seed) {
    const auto cfg = fixtures::table1_config();
    const auto clean = synthesize_mixture(fixtures::table1_truth(), cfg);
    return ObjectiveContext(add_complex_gaussian_noise(clean, snr_to_noise_variance(clean, snr_db), seed), cfg);
}

Eigen::VectorXd random_phi(std::size_t dim, std::mt19937_64& rng, double scale) {
    std::uniform_real_distribution<double> u(-scale, scale);
    Eigen::VectorXd x(static_cast<Eigen::Index>(dim));
    for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = u(rng);
    return x;
}

}  // namespace

TEST_CASE("time powers are exact") {
    const auto cfg = fixtures::table1_config();
    const ObjectiveContext ctx(synthesize_mixture(fixtures::table1_truth(), cfg), cfg);
    CHECK(ctx.num_time_powers() == 5);
    CHECK(ctx.time_power(0)(999) == 1.0);
    CHECK(ctx.time_power(3)(500) == doctest::Approx(0.125).epsilon(1e-15));
    CHECK(ctx.time_power(4)(999) == doctest::Approx(std::pow(0.999, 4)).epsilon(1e-15));
}

TEST_CASE("default ridge is scaled by the basis trace") {
    const auto cfg = fixtures::table1_config();
    double trace = 0.0;
    for (std::size_t c = 0; c < 2; ++c)
        for (int a = 0; a <= 3; ++a)
            for (int n = 0; n < 1000; ++n) trace += std::pow(n / 1000.0, 2.0 * a);
    CHECK(default_regularization(cfg) == doctest::Approx(1e-8 * trace / 8.0).epsilon(1e-12));
    auto explicit_cfg = cfg;
    explicit_cfg.regularization = 0.25;
    const ObjectiveContext ctx(synthesize_mixture(fixtures::table1_truth(), cfg), explicit_cfg);
    CHECK(ctx.gamma() == 0.25);
}

TEST_CASE("basis matrix") {
    SUBCASE("zero phase gives a column of ones") {
        const auto cfg = fixtures::make_config(3, 1.0, 1, 1, {0});
        const ObjectiveContext ctx(fixtures::as_signal(Eigen::VectorXcd::Ones(3), 1.0), cfg);
        const auto H = build_basis_matrix(Eigen::VectorXd::Zero(1), ctx);
        CHECK((H - Eigen::MatrixXcd::Ones(3, 1)).norm() == 0.0);
    }
    SUBCASE("matches the scalar oracle and carriers have unit modulus") {
        std::mt19937_64 rng(7);
        const auto cfg = fixtures::make_config(8, 10.0, 2, 3, {2, 1});
        const ObjectiveContext ctx(fixtures::as_signal(Eigen::VectorXcd::Ones(8), 10.0), cfg);
        for (int trial = 0; trial < 10; ++trial) {
            const Eigen::VectorXd phi = random_phi(6, rng, 30.0);
            const auto H = build_basis_matrix(phi, ctx);
            const auto want = fixtures::scalar_basis(phi, cfg);
            CHECK((H - want).cwiseAbs().maxCoeff() <= 1e-12);
            for (Eigen::Index n = 0; n < 8; ++n) {
                CHECK(std::abs(H(n, 0)) == doctest::Approx(1.0).epsilon(1e-14));
                CHECK(std::abs(H(n, 3)) == doctest::Approx(1.0).epsilon(1e-14));
            }
        }
    }
}

TEST_CASE("basis derivative") {
    std::mt19937_64 rng(11);
    const auto cfg = fixtures::make_config(12, 20.0, 2, 3, {1, 2});
    const ObjectiveContext ctx(fixtures::as_signal(Eigen::VectorXcd::Ones(12), 20.0), cfg);
    const Eigen::VectorXd phi = random_phi(6, rng, 10.0);

    SUBCASE("block sparsity and finite differences") {
        for (std::size_t c = 0; c < 2; ++c)
            for (std::size_t p = 1; p <= 3; ++p) {
                const auto D = build_basis_derivative(phi, c, p, ctx);
                const auto off = static_cast<Eigen::Index>(cfg.column_offset(c));
                const auto width = static_cast<Eigen::Index>(cfg.amp_orders[c] + 1);
                Eigen::MatrixXcd outside = D;
                outside.middleCols(off, width).setZero();
                CHECK(outside.norm() == 0.0);

                const double delta = 1e-6;
                Eigen::VectorXd up = phi;
                Eigen::VectorXd down = phi;
                up(static_cast<Eigen::Index>(c * 3 + p - 1)) += delta;
                down(static_cast<Eigen::Index>(c * 3 + p - 1)) -= delta;
                const Eigen::MatrixXcd fd = (fixtures::scalar_basis(up, cfg) - fixtures::scalar_basis(down, cfg)) / (2.0 * delta);
                CHECK((D - fd).norm() <= 1e-6 * fd.norm());
            }
    }
    SUBCASE("single tone closed form") {
        const auto tone_cfg = fixtures::make_config(5, 4.0, 1, 1, {0});
        const ObjectiveContext tone(fixtures::as_signal(Eigen::VectorXcd::Ones(5), 4.0), tone_cfg);
        const double f = 0.7;
        const auto D = build_basis_derivative(Eigen::VectorXd::Constant(1, f), 0, 1, tone);
        for (Eigen::Index n = 0; n < 5; ++n) {
            const double t = n / 4.0;
            const Complex want = Complex(0.0, 2.0 * std::numbers::pi * t) * std::exp(Complex(0.0, 2.0 * std::numbers::pi * f * t));
            CHECK(std::abs(D(n, 0) - want) <= 1e-13);
        }
    }
    SUBCASE("index checks") {
        CHECK_THROWS(build_basis_derivative(phi, 2, 1, ctx));
        CHECK_THROWS(build_basis_derivative(phi, 0, 0, ctx));
        CHECK_THROWS(build_basis_derivative(phi, 0, 4, ctx));
    }
}

TEST_CASE("amplitude solve") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> normal;
    auto cfg = fixtures::make_config(16, 16.0, 2, 2, {1, 1});

    SUBCASE("consistent system is recovered exactly") {
        cfg.regularization = 0.0;
        const Eigen::VectorXd phi = random_phi(4, rng, 3.0);
        const ObjectiveContext probe(fixtures::as_signal(Eigen::VectorXcd::Zero(16), 16.0), cfg);
        const auto H = build_basis_matrix(phi, probe);
        Eigen::VectorXcd b0(4);
        for (Eigen::Index i = 0; i < 4; ++i) b0(i) = Complex(normal(rng), normal(rng));
        const ObjectiveContext ctx(fixtures::as_signal(H * b0, 16.0), cfg);
        const auto fac = solve_amplitudes(H, ctx);
        CHECK((fac.b_hat - b0).norm() <= 1e-10 * b0.norm());
        CHECK((fac.residual - (ctx.y() - H * fac.b_hat)).norm() <= 1e-12);
    }
    SUBCASE("orthogonal data gives zero amplitudes") {
        cfg = fixtures::make_config(4, 4.0, 1, 1, {0});
        cfg.regularization = 0.0;
        Eigen::VectorXcd y(4);
        y << 1.0, -1.0, 1.0, -1.0;
        const ObjectiveContext ctx(fixtures::as_signal(y, 4.0), cfg);
        const auto fac = solve_amplitudes(build_basis_matrix(Eigen::VectorXd::Zero(1), ctx), ctx);
        CHECK(fac.b_hat.norm() <= 1e-15);
    }
    SUBCASE("ridge solution matches normal equations by QR") {
        cfg.regularization = 1e-6;
        Eigen::VectorXcd y(16);
        for (Eigen::Index i = 0; i < 16; ++i) y(i) = Complex(normal(rng), normal(rng));
        const ObjectiveContext ctx(fixtures::as_signal(y, 16.0), cfg);
        const auto H = build_basis_matrix(random_phi(4, rng, 3.0), ctx);
        const Eigen::MatrixXcd G = H.adjoint() * H + 1e-6 * Eigen::MatrixXcd::Identity(4, 4);
        const Eigen::VectorXcd want = G.householderQr().solve(H.adjoint() * y);
        CHECK((solve_amplitudes(H, ctx).b_hat - want).norm() <= 1e-8 * want.norm());
    }
    SUBCASE("rank deficiency without ridge") {
        cfg = fixtures::make_config(8, 8.0, 2, 1, {0, 0});
        cfg.regularization = 0.0;
        const ObjectiveContext ctx(fixtures::as_signal(Eigen::VectorXcd::Ones(8), 8.0), cfg);
        const Eigen::VectorXd same = Eigen::VectorXd::Constant(2, 1.5);
        CHECK_THROWS_AS(solve_amplitudes(build_basis_matrix(same, ctx), ctx), RankDeficiencyError);
    }
}

TEST_CASE("objective value") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> normal;

    SUBCASE("zero data") {
        const auto cfg = fixtures::make_config(8, 8.0, 1, 2, {1});
        const ObjectiveContext ctx(fixtures::as_signal(Eigen::VectorXcd::Zero(8), 8.0), cfg);
        CHECK(objective_value(random_phi(2, rng, 2.0), ctx) == 0.0);
        CHECK(objective_gradient(random_phi(2, rng, 2.0), ctx).norm() == 0.0);
    }
    SUBCASE("bounded by the data energy and equal to the explicit projection") {
        const auto cfg = fixtures::make_config(8, 8.0, 2, 2, {1, 0});
        for (int trial = 0; trial < 20; ++trial) {
            Eigen::VectorXcd y(8);
            for (Eigen::Index i = 0; i < 8; ++i) y(i) = Complex(normal(rng), normal(rng));
            const ObjectiveContext ctx(fixtures::as_signal(y, 8.0), cfg);
            const Eigen::VectorXd phi = random_phi(4, rng, 3.0);
            const double J = objective_value(phi, ctx);
            CHECK(J >= 0.0);
            CHECK(J <= y.squaredNorm());
            const double want = fixtures::explicit_projection_J(fixtures::scalar_basis(phi, cfg), y, ctx.gamma());
            CHECK(J == doctest::Approx(want).epsilon(1e-10));
        }
    }
    SUBCASE("noiseless truth fits exactly and is stationary") {
        auto cfg = fixtures::make_config(200, 200.0, 1, 2, {1});
        ChirpParams p;
        p.phase_coeffs.resize(1, 2);
        p.phase_coeffs << 12.0, 20.0;
        p.amp_coeffs = {{1.0, -0.5}};
        const auto y = synthesize_mixture(p, cfg);
        cfg.regularization = 1e-8;
        const ObjectiveContext ctx(y, cfg);
        CHECK(objective_value(p.flat_phase(), ctx) <= 1e-6 * y.samples.squaredNorm());
        cfg.regularization = 1e-10;
        const ObjectiveContext tight(y, cfg);
        CHECK(objective_gradient(p.flat_phase(), tight).cwiseAbs().maxCoeff() <= 1e-4 * y.samples.squaredNorm());
    }
    SUBCASE("quadratic scaling in the data at zero ridge") {
        auto cfg = fixtures::make_config(10, 10.0, 1, 2, {1});
        cfg.regularization = 0.0;
        Eigen::VectorXcd y(10);
        for (Eigen::Index i = 0; i < 10; ++i) y(i) = Complex(normal(rng), normal(rng));
        const Eigen::VectorXd phi = random_phi(2, rng, 2.0);
        const double J1 = objective_value(phi, ObjectiveContext(fixtures::as_signal(y, 10.0), cfg));
        const double J3 = objective_value(phi, ObjectiveContext(fixtures::as_signal(3.0 * y, 10.0), cfg));
        CHECK(J3 == doctest::Approx(9.0 * J1).epsilon(1e-10));
    }
    SUBCASE("projection is idempotent") {
        auto cfg = fixtures::make_config(10, 10.0, 1, 2, {1});
        cfg.regularization = 0.0;
        Eigen::VectorXcd y(10);
        for (Eigen::Index i = 0; i < 10; ++i) y(i) = Complex(normal(rng), normal(rng));
        const Eigen::VectorXd phi = random_phi(2, rng, 2.0);
        const ObjectiveContext ctx(fixtures::as_signal(y, 10.0), cfg);
        const auto once = solve_amplitudes(build_basis_matrix(phi, ctx), ctx).residual;
        const ObjectiveContext again_ctx(fixtures::as_signal(once, 10.0), cfg);
        const auto twice = solve_amplitudes(build_basis_matrix(phi, again_ctx), again_ctx).residual;
        CHECK((twice - once).norm() <= 1e-8 * once.norm());
    }
    SUBCASE("grid argmin of a single tone lands on the true cell") {
        const auto cfg = fixtures::make_config(64, 64.0, 1, 1, {0});
        ChirpParams p;
        p.phase_coeffs = Eigen::MatrixXd::Constant(1, 1, 9.3);
        p.amp_coeffs = {{1.0}};
        const auto clean = synthesize_mixture(p, cfg);
        const ObjectiveContext ctx(add_complex_gaussian_noise(clean, snr_to_noise_variance(clean, 20.0), 17), cfg);
        double best = 1e300;
        double arg = 0.0;
        for (int i = 0; i <= 320; ++i) {
            const double f = i * 0.1;
            const double J = objective_value(Eigen::VectorXd::Constant(1, f), ctx);
            if (J < best) {
                best = J;
                arg = f;
            }
        }
        CHECK(std::abs(arg - 9.3) <= 0.1 + 1e-9);
    }
}

TEST_CASE("analytic gradient matches central differences on random configs") {
    std::mt19937_64 rng(21);
    std::normal_distribution<double> normal;
    const std::vector<MixtureConfig> configs = {
        fixtures::make_config(64, 64.0, 1, 2, {1}), fixtures::make_config(48, 100.0, 2, 3, {2, 0}),
        fixtures::make_config(80, 40.0, 2, 2, {1, 1}), fixtures::make_config(40, 20.0, 3, 1, {0, 1, 0}),
        fixtures::make_config(100, 100.0, 1, 4, {3})};
    double worst = 0.0;
    for (const auto& cfg : configs) {
        const auto truth = fixtures::random_params(cfg, rng, 5.0);
        Eigen::VectorXcd y = synthesize_mixture(truth, cfg).samples;
        for (Eigen::Index i = 0; i < y.size(); ++i) y(i) += 0.3 * Complex(normal(rng), normal(rng));
        const ObjectiveContext ctx(fixtures::as_signal(y, cfg.sample_rate), cfg);
        for (int k = 0; k < 20; ++k) {
            const Eigen::VectorXd phi = random_phi(cfg.num_phase_params(), rng, 5.0);
            const Eigen::VectorXd g = objective_gradient(phi, ctx);
            const double floor = 1e-6 * g.cwiseAbs().maxCoeff();
            for (Eigen::Index i = 0; i < phi.size(); ++i) {
                const double h = 1e-6;
                Eigen::VectorXd up = phi;
                Eigen::VectorXd down = phi;
                up(i) += h;
                down(i) -= h;
                const double fd = (objective_value(up, ctx) - objective_value(down, ctx)) / (2.0 * h);
                worst = std::max(worst, std::abs(g(i) - fd) / std::max({std::abs(g(i)), std::abs(fd), floor}));
            }
        }
    }
    CHECK(worst <= 1e-4);
}

TEST_CASE("evaluate shares one factorization and agrees with the separate calls") {
    const auto ctx = noisy_table1(12.0, 4);
    std::mt19937_64 rng(8);
    const Eigen::VectorXd phi = fixtures::table1_truth().flat_phase() + random_phi(8, rng, 0.5);
    const auto e = evaluate_objective(phi, ctx);
    CHECK(e.value == objective_value(phi, ctx));
    CHECK(e.gradient == objective_gradient(phi, ctx));
}

TEST_CASE("smoothed gradient sample") {
    const auto ctx = noisy_table1(12.0, 2);
    const Eigen::VectorXd theta = fixtures::table1_truth().flat_phase();

    SUBCASE("zero sigma is the plain gradient") {
        const auto s = smoothed_gradient_sample(theta, 0.0, 99, ctx);
        CHECK(s.gradient == objective_gradient(theta, ctx));
    }
    SUBCASE("deterministic per seed") {
        const auto a = smoothed_gradient_sample(theta, 0.1, 5, ctx);
        const auto b = smoothed_gradient_sample(theta, 0.1, 5, ctx);
        CHECK(a.perturbation == b.perturbation);
        CHECK(a.gradient == b.gradient);
        CHECK(a.sigma_used == 0.1);
    }
    SUBCASE("symmetric quadratic averages to zero at the origin") {
        const Quadratic q(Eigen::MatrixXd::Identity(8, 8), Eigen::VectorXd::Zero(8));
        std::mt19937_64 rng(1);
        Eigen::VectorXd sum = Eigen::VectorXd::Zero(8);
        Eigen::VectorXd sum_sq = Eigen::VectorXd::Zero(8);
        const int n = 10000;
        for (int i = 0; i < n; ++i) {
            const auto s = smoothed_gradient_sample(Eigen::VectorXd::Zero(8), 0.5, rng, q);
            sum += s.gradient;
            sum_sq += s.gradient.cwiseAbs2();
        }
        const Eigen::VectorXd mean = sum / n;
        const Eigen::VectorXd se = ((sum_sq / n - mean.cwiseAbs2()) / n).cwiseSqrt();
        for (Eigen::Index i = 0; i < 8; ++i) CHECK(std::abs(mean(i)) <= 3.0 * se(i));
    }
}

TEST_CASE("Stein trace estimate") {
    std::mt19937_64 rng(77);
    std::normal_distribution<double> normal;
    const int n = 10000;

    SUBCASE("linear objective has zero mean") {
        Eigen::VectorXd a(8);
        for (Eigen::Index i = 0; i < 8; ++i) a(i) = normal(rng);
        const Quadratic lin(Eigen::MatrixXd::Zero(8, 8), a);
        double sum = 0.0;
        double sum_sq = 0.0;
        for (int i = 0; i < n; ++i) {
            const double t = hessian_trace_estimate(smoothed_gradient_sample(Eigen::VectorXd::Ones(8), 0.3, rng, lin));
            sum += t;
            sum_sq += t * t;
        }
        const double mean = sum / n;
        CHECK(std::abs(mean) <= 3.0 * std::sqrt((sum_sq / n - mean * mean) / n));
    }
    SUBCASE("quadratic objective recovers twice the trace") {
        for (int trial = 0; trial < 5; ++trial) {
            Eigen::MatrixXd B(8, 8);
            for (Eigen::Index i = 0; i < 64; ++i) B.data()[i] = normal(rng);
            const Eigen::MatrixXd A = B.transpose() * B / 8.0 + Eigen::MatrixXd::Identity(8, 8);
            const Quadratic q(A, Eigen::VectorXd::Zero(8));
            Eigen::VectorXd theta(8);
            for (Eigen::Index i = 0; i < 8; ++i) theta(i) = normal(rng);
            double sum = 0.0;
            for (int i = 0; i < n; ++i) sum += hessian_trace_estimate(smoothed_gradient_sample(theta, 0.2, rng, q));
            CHECK(sum / n == doctest::Approx(2.0 * A.trace()).epsilon(0.05));
        }
    }
    SUBCASE("forced zero perturbation and zero sigma") {
        SmoothedGradientSample s{Eigen::VectorXd::Ones(8), Eigen::VectorXd::Zero(8), 0.5, 0.0};
        CHECK(hessian_trace_estimate(s) == 0.0);
        s.sigma_used = 0.0;
        CHECK_THROWS(hessian_trace_estimate(s));
    }
}

TEST_CASE("amplitude recovery") {
    const auto cfg = fixtures::table1_config();
    const auto truth = fixtures::table1_truth();
    SUBCASE("noiseless truth returns the real amplitudes") {
        // The default ridge biases b by about gamma |rho| / lambda_min; the exact fit needs gamma = 0.
        auto exact = cfg;
        exact.regularization = 0.0;
        const ObjectiveContext ctx(synthesize_mixture(truth, cfg), exact);
        const auto est = recover_amplitudes(truth.flat_phase(), ctx);
        REQUIRE(est.rho.size() == 2);
        for (std::size_t c = 0; c < 2; ++c)
            for (std::size_t a = 0; a < 4; ++a) CHECK(std::abs(est.rho[c][a] - truth.amp_coeffs[c][a]) <= 1e-8);
        CHECK(est.b_hat.imag().cwiseAbs().maxCoeff() <= 1e-8);
    }
    SUBCASE("noisy instance stays bounded") {
        const auto ctx = noisy_table1(12.0, 3);
        const auto est = recover_amplitudes(truth.flat_phase(), ctx);
        for (const auto& row : est.rho)
            for (const double v : row) CHECK(std::isfinite(v));
        CHECK(est.residual_energy <= ctx.y().squaredNorm());
    }
}

TEST_CASE("whitened objective is the same function in other coordinates") {
    const auto ctx = noisy_table1(12.0, 6);
    const WhitenedObjective w(ctx);
    const Eigen::VectorXd phi = fixtures::table1_truth().flat_phase();
    const Eigen::VectorXd u = w.to_coords(phi);
    CHECK((w.to_phi(u) - phi).norm() <= 1e-9 * phi.norm());
    const auto e = w.evaluate(u);
    CHECK(e.value == doctest::Approx(objective_value(phi, ctx)).epsilon(1e-12));

    // Chain rule oracle: directional derivative along a random u-direction.
    std::mt19937_64 rng(4);
    const Eigen::VectorXd d = random_phi(8, rng, 1.0);
    const double h = 1e-6;
    const double fd = (w.value(u + h * d) - w.value(u - h * d)) / (2.0 * h);
    CHECK(e.gradient.dot(d) == doctest::Approx(fd).epsilon(1e-5));

    // One whitened unit is one RMS cycle of phase over the horizon.
    const Eigen::MatrixXd R = phase_whitening_factor(ctx.config(), ctx.num_samples());
    const Eigen::VectorXd unit = R.inverse().col(0);
    double ms = 0.0;
    for (int n = 0; n < 1000; ++n) {
        double cyc = 0.0;
        for (int p = 0; p < 4; ++p) cyc += unit(p) * std::pow(n / 1000.0, p + 1.0);
        ms += cyc * cyc;
    }
    CHECK(ms / 1000.0 == doctest::Approx(1.0).epsilon(1e-9));
}
