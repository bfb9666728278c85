#include "chirpest/signal_model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include <Eigen/Eigenvalues>

namespace chirpest {

std::size_t MixtureConfig::num_basis_columns() const {
    std::size_t m = 0;
    for (const auto a : amp_orders) m += a + 1;
    return m;
}

std::size_t MixtureConfig::column_offset(std::size_t chirp) const {
    std::size_t off = 0;
    for (std::size_t c = 0; c < chirp; ++c) off += amp_orders[c] + 1;
    return off;
}

std::size_t MixtureConfig::max_power() const {
    std::size_t m = phase_order;
    for (const auto a : amp_orders) m = std::max(m, a);
    return m;
}

void MixtureConfig::validate() const {
    if (num_samples == 0) throw ValidationError("num_samples must be positive");
    if (!(sample_rate > 0.0) || !std::isfinite(sample_rate))
        throw ValidationError("sample_rate must be positive and finite");
    if (num_chirps == 0) throw ValidationError("num_chirps must be positive");
    if (phase_order == 0) throw ValidationError("phase_order must be at least 1");
    if (amp_orders.size() != num_chirps)
        throw ValidationError("amp_orders has " + std::to_string(amp_orders.size()) +
                              " entries, expected num_chirps = " + std::to_string(num_chirps));
    if (num_samples < num_basis_columns())
        throw ValidationError("num_samples (" + std::to_string(num_samples) +
                              ") is smaller than the basis column count (" +
                              std::to_string(num_basis_columns()) + ")");
    if (regularization && (!(*regularization >= 0.0) || !std::isfinite(*regularization)))
        throw ValidationError("regularization must be finite and nonnegative");
}

MixtureConfig MixtureConfig::with_num_samples(std::size_t n) const {
    MixtureConfig out = *this;
    out.num_samples = n;
    return out;
}

Eigen::VectorXd ChirpParams::flat_phase() const {
    const auto rows = phase_coeffs.rows();
    const auto cols = phase_coeffs.cols();
    Eigen::VectorXd flat(rows * cols);
    for (Eigen::Index c = 0; c < rows; ++c)
        for (Eigen::Index p = 0; p < cols; ++p) flat(c * cols + p) = phase_coeffs(c, p);
    return flat;
}

Eigen::MatrixXd ChirpParams::unflatten_phase(const Eigen::VectorXd& flat, std::size_t num_chirps,
                                             std::size_t phase_order) {
    if (static_cast<std::size_t>(flat.size()) != num_chirps * phase_order)
        throw DimensionError("flattened phase vector has wrong length");
    Eigen::MatrixXd out(num_chirps, phase_order);
    for (std::size_t c = 0; c < num_chirps; ++c)
        for (std::size_t p = 0; p < phase_order; ++p)
            out(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(p)) =
                flat(static_cast<Eigen::Index>(c * phase_order + p));
    return out;
}

void ChirpParams::check_against(const MixtureConfig& config) const {
    if (static_cast<std::size_t>(phase_coeffs.rows()) != config.num_chirps ||
        static_cast<std::size_t>(phase_coeffs.cols()) != config.phase_order)
        throw DimensionError("phase_coeffs must be num_chirps x phase_order");
    if (amp_coeffs.size() != config.num_chirps)
        throw DimensionError("amp_coeffs must have one row per chirp");
    for (std::size_t c = 0; c < config.num_chirps; ++c)
        if (amp_coeffs[c].size() != config.amp_orders[c] + 1)
            throw DimensionError("amp_coeffs row " + std::to_string(c) + " must have A_c + 1 entries");
    if (!phase_coeffs.allFinite()) throw ValidationError("phase_coeffs contain non-finite values");
    for (const auto& row : amp_coeffs)
        for (const double v : row)
            if (!std::isfinite(v)) throw ValidationError("amp_coeffs contain non-finite values");
}

double ComplexSignal::mean_power() const {
    if (samples.size() == 0) return 0.0;
    return samples.squaredNorm() / static_cast<double>(samples.size());
}

ComplexSignal synthesize_mixture(const ChirpParams& params, const MixtureConfig& config) {
    config.validate();
    params.check_against(config);

    const auto n_samples = static_cast<Eigen::Index>(config.num_samples);
    ComplexSignal out{Eigen::VectorXcd::Zero(n_samples), config.sample_rate};
    for (Eigen::Index n = 0; n < n_samples; ++n) {
        const double t = static_cast<double>(n) / config.sample_rate;
        Complex acc{0.0, 0.0};
        for (std::size_t c = 0; c < config.num_chirps; ++c) {
            // Horner for both polynomials; the phase polynomial has no constant term.
            double amp = 0.0;
            const auto& rho = params.amp_coeffs[c];
            for (auto a = rho.size(); a-- > 0;) amp = amp * t + rho[a];
            double cycles = 0.0;
            for (auto p = config.phase_order; p-- > 0;)
                cycles = (cycles + params.phase_coeffs(static_cast<Eigen::Index>(c),
                                                       static_cast<Eigen::Index>(p))) * t;
            acc += amp * std::polar(1.0, 2.0 * std::numbers::pi * cycles);
        }
        out.samples(n) = acc;
    }
    return out;
}

namespace {

// IF(t) = sum_p p phi_p t^(p-1), as ascending coefficients.
std::vector<double> frequency_poly(const Eigen::MatrixXd& phase, Eigen::Index c) {
    std::vector<double> k(static_cast<std::size_t>(phase.cols()));
    for (Eigen::Index p = 0; p < phase.cols(); ++p)
        k[static_cast<std::size_t>(p)] = static_cast<double>(p + 1) * phase(c, p);
    return k;
}

double eval_poly(const std::vector<double>& k, double t) {
    double acc = 0.0;
    for (auto i = k.size(); i-- > 0;) acc = acc * t + k[i];
    return acc;
}

// Real roots of an ascending-coefficient polynomial via the companion matrix.
std::vector<double> real_roots(std::vector<double> k) {
    while (!k.empty() && k.back() == 0.0) k.pop_back();
    std::vector<double> roots;
    if (k.size() < 2) return roots;
    const auto deg = static_cast<Eigen::Index>(k.size() - 1);
    Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(deg, deg);
    for (Eigen::Index i = 1; i < deg; ++i) companion(i, i - 1) = 1.0;
    for (Eigen::Index i = 0; i < deg; ++i)
        companion(i, deg - 1) = -k[static_cast<std::size_t>(i)] / k.back();
    Eigen::EigenSolver<Eigen::MatrixXd> solver(companion, false);
    for (const auto& z : solver.eigenvalues())
        if (std::abs(z.imag()) <= 1e-9 * std::max(1.0, std::abs(z.real()))) roots.push_back(z.real());
    return roots;
}

}  // namespace

double max_instantaneous_frequency(const ChirpParams& params, const MixtureConfig& config) {
    const double t_end = static_cast<double>(config.num_samples - 1) / config.sample_rate;
    double best = 0.0;
    for (Eigen::Index c = 0; c < params.phase_coeffs.rows(); ++c) {
        const auto freq = frequency_poly(params.phase_coeffs, c);
        std::vector<double> slope;
        for (std::size_t i = 1; i < freq.size(); ++i) slope.push_back(static_cast<double>(i) * freq[i]);

        std::vector<double> candidates{0.0, t_end};
        for (const double r : real_roots(slope))
            if (r > 0.0 && r < t_end) candidates.push_back(r);
        for (const double t : candidates) best = std::max(best, std::abs(eval_poly(freq, t)));
    }
    return best;
}

double snr_to_noise_variance(const ComplexSignal& signal, double snr_db) {
    const double power = signal.mean_power();
    if (!(power > 0.0)) throw ValidationError("cannot calibrate noise against a zero-power signal");
    return power / std::pow(10.0, snr_db / 10.0);
}

ComplexSignal add_complex_gaussian_noise(const ComplexSignal& signal, double variance,
                                         std::uint64_t seed) {
    if (!(variance >= 0.0)) throw ValidationError("noise variance must be nonnegative");
    ComplexSignal out = signal;
    if (variance == 0.0) return out;

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, std::sqrt(variance / 2.0));
    for (Eigen::Index n = 0; n < out.samples.size(); ++n) {
        const double re = normal(rng);
        const double im = normal(rng);
        out.samples(n) += Complex{re, im};
    }
    return out;
}

ComplexSignal truncate_prefix(const ComplexSignal& signal, std::size_t new_length) {
    if (new_length == 0 || new_length > signal.size())
        throw ValidationError("prefix length " + std::to_string(new_length) + " outside (0, " +
                              std::to_string(signal.size()) + "]");
    return {signal.samples.head(static_cast<Eigen::Index>(new_length)), signal.sample_rate};
}

double empirical_snr_db(const ComplexSignal& clean, const ComplexSignal& noisy) {
    if (clean.size() != noisy.size()) throw DimensionError("signals differ in length");
    const double noise_power = (noisy.samples - clean.samples).squaredNorm();
    return 10.0 * std::log10(clean.samples.squaredNorm() / noise_power);
}

std::size_t default_prefix_length(std::size_t num_samples) { return (num_samples + 3) / 4; }

}  // namespace chirpest
