#include "doctest.h"

#include <cmath>

#include "chirpest/signal_model.hpp"
#include "fixtures.hpp"

using namespace chirpest;

TEST_CASE("zero phase and unit amplitude gives ones") {
    const auto cfg = fixtures::make_config(4, 1.0, 1, 1, {0});
    ChirpParams p;
    p.phase_coeffs = Eigen::MatrixXd::Zero(1, 1);
    p.amp_coeffs = {{1.0}};
    const auto s = synthesize_mixture(p, cfg);
    REQUIRE(s.size() == 4);
    for (Eigen::Index n = 0; n < 4; ++n) CHECK(s.samples(n) == Complex(1.0, 0.0));
}

TEST_CASE("zero amplitude annihilates any phase") {
    const auto cfg = fixtures::make_config(16, 100.0, 1, 3, {0});
    ChirpParams p;
    p.phase_coeffs.resize(1, 3);
    p.phase_coeffs << 13.0, -7.0, 250.0;
    p.amp_coeffs = {{0.0}};
    CHECK(synthesize_mixture(p, cfg).samples.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("synthesis matches the scalar oracle on random small configs") {
    std::mt19937_64 rng(42);
    std::uniform_int_distribution<int> n_dist(4, 32);
    std::uniform_int_distribution<int> small(1, 3);
    for (int trial = 0; trial < 100; ++trial) {
        const auto chirps = static_cast<std::size_t>(small(rng));
        std::vector<std::size_t> amps;
        for (std::size_t c = 0; c < chirps; ++c) amps.push_back(static_cast<std::size_t>(small(rng) - 1));
        auto cfg = fixtures::make_config(static_cast<std::size_t>(n_dist(rng)), 50.0, chirps,
                                         static_cast<std::size_t>(small(rng)), amps);
        if (cfg.num_samples < cfg.num_basis_columns()) cfg.num_samples = cfg.num_basis_columns();
        const auto p = fixtures::random_params(cfg, rng);
        const auto got = synthesize_mixture(p, cfg).samples;
        const auto want = fixtures::scalar_mixture(p, cfg);
        CHECK((got - want).norm() <= 1e-12 * std::max(1.0, want.norm()));
    }
}

TEST_CASE("synthesis is linear in the amplitudes") {
    const auto cfg = fixtures::table1_config();
    auto p = fixtures::table1_truth();
    const auto y1 = synthesize_mixture(p, cfg).samples;
    for (auto& row : p.amp_coeffs)
        for (auto& v : row) v *= 2.0;
    const auto y2 = synthesize_mixture(p, cfg).samples;
    CHECK((y2 - 2.0 * y1).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("mismatched params are rejected") {
    const auto cfg = fixtures::table1_config();
    auto p = fixtures::table1_truth();
    SUBCASE("phase shape") {
        p.phase_coeffs.resize(2, 3);
        CHECK_THROWS_AS(synthesize_mixture(p, cfg), DimensionError);
    }
    SUBCASE("amplitude row length") {
        p.amp_coeffs[1].pop_back();
        CHECK_THROWS_AS(synthesize_mixture(p, cfg), DimensionError);
    }
    SUBCASE("non-finite") {
        p.phase_coeffs(0, 0) = std::nan("");
        CHECK_THROWS_AS(synthesize_mixture(p, cfg), ValidationError);
    }
}

TEST_CASE("config validation") {
    auto cfg = fixtures::table1_config();
    CHECK_NOTHROW(cfg.validate());
    CHECK(cfg.num_basis_columns() == 8);
    CHECK(cfg.column_offset(1) == 4);
    CHECK(cfg.num_phase_params() == 8);
    SUBCASE("underdetermined") {
        cfg.num_samples = 7;
        CHECK_THROWS_AS(cfg.validate(), ValidationError);
    }
    SUBCASE("amp order count") {
        cfg.amp_orders = {3};
        CHECK_THROWS_AS(cfg.validate(), ValidationError);
    }
    SUBCASE("negative ridge") {
        cfg.regularization = -1.0;
        CHECK_THROWS_AS(cfg.validate(), ValidationError);
    }
}

TEST_CASE("flattening is chirp-major and round-trips") {
    const auto p = fixtures::table1_truth();
    const Eigen::VectorXd flat = p.flat_phase();
    CHECK(flat(1) == 40.0);
    CHECK(flat(4) == 50.0);
    CHECK(ChirpParams::unflatten_phase(flat, 2, 4) == p.phase_coeffs);
    CHECK_THROWS_AS(ChirpParams::unflatten_phase(flat, 2, 3), DimensionError);
}

TEST_CASE("max instantaneous frequency") {
    SUBCASE("constant tone") {
        const auto cfg = fixtures::make_config(100, 100.0, 1, 1, {0});
        ChirpParams p;
        p.phase_coeffs = Eigen::MatrixXd::Constant(1, 1, 10.0);
        p.amp_coeffs = {{1.0}};
        CHECK(max_instantaneous_frequency(p, cfg) == doctest::Approx(10.0));
    }
    SUBCASE("linear chirp peaks at the end of a 1 s span") {
        const auto cfg = fixtures::make_config(1001, 1000.0, 1, 2, {0});
        ChirpParams p;
        p.phase_coeffs.resize(1, 2);
        p.phase_coeffs << 10.0, 40.0;
        p.amp_coeffs = {{1.0}};
        CHECK(max_instantaneous_frequency(p, cfg) == doctest::Approx(90.0).epsilon(1e-12));
    }
    SUBCASE("table 1 mixture against a dense grid") {
        const auto cfg = fixtures::table1_config();
        const auto p = fixtures::table1_truth();
        const double t_end = (cfg.num_samples - 1) / cfg.sample_rate;
        double dense = 0.0;
        for (int i = 0; i <= 10000; ++i) {
            const double t = t_end * i / 10000.0;
            for (Eigen::Index c = 0; c < 2; ++c) {
                double f = 0.0;
                for (Eigen::Index q = 0; q < 4; ++q) f += (q + 1) * p.phase_coeffs(c, q) * std::pow(t, static_cast<double>(q));
                dense = std::max(dense, std::abs(f));
            }
        }
        const double exact = max_instantaneous_frequency(p, cfg);
        CHECK(exact >= dense - 1e-9);
        CHECK(exact == doctest::Approx(dense).epsilon(1e-6));
        CHECK(exact < 500.0);
    }
}

TEST_CASE("noise variance from SNR") {
    const ComplexSignal unit{Eigen::VectorXcd::Ones(64), 1.0};
    CHECK(snr_to_noise_variance(unit, 0.0) == doctest::Approx(1.0));
    CHECK(snr_to_noise_variance(unit, 10.0) == doctest::Approx(0.1));

    const auto clean = synthesize_mixture(fixtures::table1_truth(), fixtures::table1_config());
    double power = 0.0;
    for (Eigen::Index n = 0; n < clean.samples.size(); ++n) power += std::norm(clean.samples(n));
    power /= static_cast<double>(clean.samples.size());
    CHECK(snr_to_noise_variance(clean, 3.0) == doctest::Approx(power / std::pow(10.0, 0.3)));

    const ComplexSignal silent{Eigen::VectorXcd::Zero(8), 1.0};
    CHECK_THROWS_AS(snr_to_noise_variance(silent, 3.0), ValidationError);
}

TEST_CASE("complex gaussian noise") {
    const ComplexSignal base{Eigen::VectorXcd::Zero(100000), 1.0};
    SUBCASE("zero variance is the identity") {
        const auto clean = synthesize_mixture(fixtures::table1_truth(), fixtures::table1_config());
        const auto out = add_complex_gaussian_noise(clean, 0.0, 5);
        CHECK(out.samples == clean.samples);
    }
    SUBCASE("empirical power and quadrature split") {
        const auto out = add_complex_gaussian_noise(base, 1.0, 9);
        const double power = out.samples.squaredNorm() / 100000.0;
        CHECK(std::abs(power - 1.0) <= 0.02);
        const double re = out.samples.real().squaredNorm() / 100000.0;
        CHECK(std::abs(re - 0.5) <= 0.02);
    }
    SUBCASE("deterministic per seed") {
        CHECK(add_complex_gaussian_noise(base, 1.0, 3).samples == add_complex_gaussian_noise(base, 1.0, 3).samples);
        CHECK(add_complex_gaussian_noise(base, 1.0, 3).samples != add_complex_gaussian_noise(base, 1.0, 4).samples);
    }
    SUBCASE("negative variance") { CHECK_THROWS_AS(add_complex_gaussian_noise(base, -1.0, 1), ValidationError); }
}

TEST_CASE("prefix truncation") {
    const auto cfg = fixtures::table1_config();
    const auto s = synthesize_mixture(fixtures::table1_truth(), cfg);
    CHECK(truncate_prefix(s, 1000).samples == s.samples);
    const auto head = truncate_prefix(s, 250);
    CHECK(head.size() == 250);
    CHECK(head.samples == s.samples.head(250));
    CHECK(head.sample_rate == s.sample_rate);
    CHECK_THROWS_AS(truncate_prefix(s, 0), ValidationError);
    CHECK_THROWS_AS(truncate_prefix(s, 1001), ValidationError);

    CHECK(default_prefix_length(1000) == 250);
    CHECK(default_prefix_length(1001) == 251);
    const ObjectiveContext full(s, cfg);
    const auto short_ctx = full.prefix(default_prefix_length(cfg.num_samples));
    CHECK(short_ctx.num_samples() == 250);
    CHECK(std::isfinite(objective_value(fixtures::table1_truth().flat_phase(), short_ctx)));
}

TEST_CASE("empirical SNR tracks the target") {
    const auto clean = synthesize_mixture(fixtures::table1_truth(), fixtures::table1_config());
    for (const double target : {3.0, 12.0}) {
        double mean = 0.0;
        for (std::uint64_t seed = 0; seed < 20; ++seed)
            mean += empirical_snr_db(clean, add_complex_gaussian_noise(clean, snr_to_noise_variance(clean, target), seed));
        CHECK(std::abs(mean / 20.0 - target) <= 0.5);
    }
}
