#pragma once

#include <complex>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace chirpest {

using Complex = std::complex<double>;

/// Raised when array shapes disagree with the mixture configuration.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised for inputs that are well-formed but semantically invalid.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Dimensions of a multi-component polynomial-phase mixture.
struct MixtureConfig {
    std::size_t num_samples = 0;
    double sample_rate = 1.0;
    std::size_t num_chirps = 1;
    std::size_t phase_order = 1;
    /// Amplitude polynomial order per chirp; size must equal num_chirps.
    std::vector<std::size_t> amp_orders{0};
    /// Ridge term of the amplitude subproblem. Unset means "use the scaled default".
    std::optional<double> regularization;

    [[nodiscard]] std::size_t num_phase_params() const { return num_chirps * phase_order; }
    [[nodiscard]] std::size_t num_basis_columns() const;
    /// Offset of chirp c's first column in the basis matrix.
    [[nodiscard]] std::size_t column_offset(std::size_t chirp) const;
    [[nodiscard]] std::size_t max_power() const;

    /// Throws ValidationError on a config that cannot define an overdetermined problem.
    void validate() const;

    /// Same config with a different sample count (used for prefix priming).
    [[nodiscard]] MixtureConfig with_num_samples(std::size_t n) const;
};

/// Ground truth or estimate: phase coefficients (chirp-major) and ragged amplitude rows.
struct ChirpParams {
    /// num_chirps x phase_order, row c holds phi_{c,1..P}.
    Eigen::MatrixXd phase_coeffs;
    /// amp_coeffs[c] holds rho_{c,0..A_c}.
    std::vector<std::vector<double>> amp_coeffs;

    /// Chirp-major flattening: (c=1,p=1..P), (c=2,p=1..P), ...
    [[nodiscard]] Eigen::VectorXd flat_phase() const;
    static Eigen::MatrixXd unflatten_phase(const Eigen::VectorXd& flat, std::size_t num_chirps,
                                           std::size_t phase_order);

    void check_against(const MixtureConfig& config) const;
};

struct ComplexSignal {
    Eigen::VectorXcd samples;
    double sample_rate = 1.0;

    [[nodiscard]] std::size_t size() const { return static_cast<std::size_t>(samples.size()); }
    [[nodiscard]] double mean_power() const;
};

/// Noiseless mixture: sum over chirps of (sum_a rho t^a) exp(j 2 pi sum_p phi t^p), t = n / f_s.
ComplexSignal synthesize_mixture(const ChirpParams& params, const MixtureConfig& config);

/// Largest |d/dt phase(t)| in Hz over all chirps and t in [0, (N-1)/f_s].
double max_instantaneous_frequency(const ChirpParams& params, const MixtureConfig& config);

/// Total complex noise variance that puts the signal at snr_db relative to its mean power.
double snr_to_noise_variance(const ComplexSignal& signal, double snr_db);

/// Adds circular complex Gaussian noise with total variance `variance` (variance/2 per quadrature).
ComplexSignal add_complex_gaussian_noise(const ComplexSignal& signal, double variance,
                                         std::uint64_t seed);

ComplexSignal truncate_prefix(const ComplexSignal& signal, std::size_t new_length);

/// 10 log10(P_clean / P_noise) where noise = noisy - clean.
double empirical_snr_db(const ComplexSignal& clean, const ComplexSignal& noisy);

/// ceil(N / 4): default prefix length for short-signal priming.
std::size_t default_prefix_length(std::size_t num_samples);

}  // namespace chirpest
