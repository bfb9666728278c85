#pragma once

#include <cmath>
#include <complex>
#include <numbers>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "chirpest/objective.hpp"
#include "chirpest/signal_model.hpp"

namespace fixtures {

using chirpest::ChirpParams;
using chirpest::Complex;
using chirpest::ComplexSignal;
using chirpest::MixtureConfig;

inline MixtureConfig table1_config() {
    MixtureConfig cfg;
    cfg.num_samples = 1000;
    cfg.sample_rate = 1000.0;
    cfg.num_chirps = 2;
    cfg.phase_order = 4;
    cfg.amp_orders = {3, 3};
    return cfg;
}

inline ChirpParams table1_truth() {
    ChirpParams p;
    p.phase_coeffs.resize(2, 4);
    p.phase_coeffs << 10, 40, -70, 110, 50, 60, -90, 105;
    p.amp_coeffs = {{1.0, -0.5, 0.3, -0.2}, {0.8, 0.4, -0.6, 0.2}};
    return p;
}

inline MixtureConfig make_config(std::size_t n, double fs, std::size_t chirps, std::size_t order,
                                 std::vector<std::size_t> amp_orders) {
    MixtureConfig cfg;
    cfg.num_samples = n;
    cfg.sample_rate = fs;
    cfg.num_chirps = chirps;
    cfg.phase_order = order;
    cfg.amp_orders = std::move(amp_orders);
    return cfg;
}

inline ChirpParams random_params(const MixtureConfig& cfg, std::mt19937_64& rng, double phase_scale = 20.0) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    ChirpParams p;
    p.phase_coeffs.resize(static_cast<Eigen::Index>(cfg.num_chirps), static_cast<Eigen::Index>(cfg.phase_order));
    for (Eigen::Index i = 0; i < p.phase_coeffs.size(); ++i) p.phase_coeffs.data()[i] = phase_scale * u(rng);
    for (std::size_t c = 0; c < cfg.num_chirps; ++c) {
        std::vector<double> row;
        for (std::size_t a = 0; a <= cfg.amp_orders[c]; ++a) row.push_back(u(rng));
        p.amp_coeffs.push_back(row);
    }
    return p;
}

// Direct evaluation with std::pow and std::exp, sharing nothing with the library.
inline Eigen::VectorXcd scalar_mixture(const ChirpParams& p, const MixtureConfig& cfg) {
    Eigen::VectorXcd y = Eigen::VectorXcd::Zero(static_cast<Eigen::Index>(cfg.num_samples));
    for (std::size_t n = 0; n < cfg.num_samples; ++n) {
        const double t = static_cast<double>(n) / cfg.sample_rate;
        for (std::size_t c = 0; c < cfg.num_chirps; ++c) {
            double amp = 0.0;
            for (std::size_t a = 0; a < p.amp_coeffs[c].size(); ++a)
                amp += p.amp_coeffs[c][a] * std::pow(t, static_cast<double>(a));
            double phase = 0.0;
            for (std::size_t q = 0; q < cfg.phase_order; ++q)
                phase += p.phase_coeffs(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(q)) *
                         std::pow(t, static_cast<double>(q + 1));
            y(static_cast<Eigen::Index>(n)) += amp * std::exp(Complex(0.0, 2.0 * std::numbers::pi * phase));
        }
    }
    return y;
}

inline Eigen::MatrixXcd scalar_basis(const Eigen::VectorXd& phi, const MixtureConfig& cfg) {
    const auto N = static_cast<Eigen::Index>(cfg.num_samples);
    Eigen::MatrixXcd H(N, static_cast<Eigen::Index>(cfg.num_basis_columns()));
    Eigen::Index col = 0;
    for (std::size_t c = 0; c < cfg.num_chirps; ++c)
        for (std::size_t a = 0; a <= cfg.amp_orders[c]; ++a, ++col)
            for (Eigen::Index n = 0; n < N; ++n) {
                const double t = static_cast<double>(n) / cfg.sample_rate;
                double phase = 0.0;
                for (std::size_t q = 0; q < cfg.phase_order; ++q)
                    phase += phi(static_cast<Eigen::Index>(c * cfg.phase_order + q)) * std::pow(t, static_cast<double>(q + 1));
                H(n, col) = std::pow(t, static_cast<double>(a)) * std::exp(Complex(0.0, 2.0 * std::numbers::pi * phase));
            }
    return H;
}

// y* (I - H (H*H + gamma I)^-1 H*) y with the projector built explicitly.
inline double explicit_projection_J(const Eigen::MatrixXcd& H, const Eigen::VectorXcd& y, double gamma) {
    const auto M = H.cols();
    const Eigen::MatrixXcd G = H.adjoint() * H + gamma * Eigen::MatrixXcd::Identity(M, M);
    const Eigen::MatrixXcd P = Eigen::MatrixXcd::Identity(H.rows(), H.rows()) - H * G.fullPivLu().inverse() * H.adjoint();
    return (y.adjoint() * P * y)(0, 0).real();
}

inline ComplexSignal as_signal(Eigen::VectorXcd y, double fs) { return ComplexSignal{std::move(y), fs}; }

}  // namespace fixtures
