#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "chirpest/signal_model.hpp"

namespace chirpest {

/// G = H*H + gamma I could not be factorized (gamma = 0 with rank-deficient H).
class RankDeficiencyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Immutable measurement plus precomputed time powers; shareable across chains.
class ObjectiveContext {
public:
    ObjectiveContext(ComplexSignal signal, MixtureConfig config);

    [[nodiscard]] const Eigen::VectorXcd& y() const { return signal_.samples; }
    [[nodiscard]] const ComplexSignal& signal() const { return signal_; }
    [[nodiscard]] const MixtureConfig& config() const { return config_; }
    [[nodiscard]] std::size_t num_samples() const { return config_.num_samples; }
    [[nodiscard]] std::size_t dimension() const { return config_.num_phase_params(); }

    /// (n / f_s)^p for n = 0..N-1.
    [[nodiscard]] const Eigen::VectorXd& time_power(std::size_t p) const { return time_powers_.at(p); }
    [[nodiscard]] std::size_t num_time_powers() const { return time_powers_.size(); }

    /// Resolved ridge term: the configured value, or 1e-8 tr(H*H) / M.
    [[nodiscard]] double gamma() const { return gamma_; }
    [[nodiscard]] double signal_energy() const { return energy_; }

    /// Context over the first n samples; the ridge default is re-derived for the shorter basis.
    [[nodiscard]] ObjectiveContext prefix(std::size_t n) const;

private:
    ComplexSignal signal_;
    MixtureConfig config_;
    std::vector<Eigen::VectorXd> time_powers_;
    double gamma_ = 0.0;
    double energy_ = 0.0;
};

/// 1e-8 tr(H*H) / M. tr(H*H) = sum over columns of sum_n t_n^(2a), independent of phi.
double default_regularization(const MixtureConfig& config);

struct BasisFactorization {
    Eigen::MatrixXcd H;
    Eigen::LLT<Eigen::MatrixXcd> G_solver;
    Eigen::VectorXcd b_hat;
    Eigen::VectorXcd residual;
};

struct SmoothedGradientSample {
    Eigen::VectorXd gradient;
    Eigen::VectorXd perturbation;
    double sigma_used = 0.0;
    /// J at the perturbed point; free by-product of the gradient evaluation.
    double value_at_perturbed = 0.0;
};

/// Value and gradient at one point.
struct Evaluation {
    double value = 0.0;
    Eigen::VectorXd gradient;
};

/// Anything the samplers can descend: the chirp objective, or analytic surrogates in tests.
class Potential {
public:
    virtual ~Potential() = default;
    [[nodiscard]] virtual std::size_t dimension() const = 0;
    [[nodiscard]] virtual double value(const Eigen::VectorXd& x) const = 0;
    [[nodiscard]] virtual Evaluation evaluate(const Eigen::VectorXd& x) const = 0;
};

Eigen::MatrixXcd build_basis_matrix(const Eigen::VectorXd& phi, const ObjectiveContext& ctx);

/// dH/dphi_{c,p}; zero outside chirp c's column block. Indices are zero-based (c < N_c, 1 <= p <= P).
Eigen::MatrixXcd build_basis_derivative(const Eigen::VectorXd& phi, std::size_t chirp,
                                        std::size_t power, const ObjectiveContext& ctx);

/// Ridge-regularized amplitude fit b = (H*H + gamma I)^-1 H*y, with residual y - H b.
BasisFactorization solve_amplitudes(Eigen::MatrixXcd H, const ObjectiveContext& ctx);

/// J(phi) = Re(y* (y - H b_hat)) = y* P_perp y.
double objective_value(const Eigen::VectorXd& phi, const ObjectiveContext& ctx);

/// Residual-form gradient: entry (c,p) = -2 Re[r* (dH/dphi_{c,p}) b_hat], chirp-major.
Eigen::VectorXd objective_gradient(const Eigen::VectorXd& phi, const ObjectiveContext& ctx);

/// Value and gradient sharing one factorization of G.
Evaluation evaluate_objective(const Eigen::VectorXd& phi, const ObjectiveContext& ctx);

/// Gradient at theta + sigma * eps with eps ~ N(0, I): one Monte Carlo draw of the smoothed gradient.
SmoothedGradientSample smoothed_gradient_sample(const Eigen::VectorXd& theta, double sigma,
                                                std::mt19937_64& rng, const Potential& potential);
SmoothedGradientSample smoothed_gradient_sample(const Eigen::VectorXd& theta, double sigma,
                                                std::uint64_t seed, const Potential& potential);
SmoothedGradientSample smoothed_gradient_sample(const Eigen::VectorXd& theta, double sigma,
                                                std::uint64_t seed, const ObjectiveContext& ctx);

/// Single-draw Stein estimate of tr(Hess J_sigma): eps^T grad J(theta + sigma eps) / sigma.
double hessian_trace_estimate(const SmoothedGradientSample& sample);

struct AmplitudeEstimate {
    /// Real least-squares amplitudes, ragged per chirp.
    std::vector<std::vector<double>> rho;
    /// Unconstrained complex ridge solution, for diagnostics.
    Eigen::VectorXcd b_hat;
    double residual_energy = 0.0;
};

AmplitudeEstimate recover_amplitudes(const Eigen::VectorXd& phi_hat, const ObjectiveContext& ctx);

/// Potential adapter over an ObjectiveContext. Holds a reference; the context must outlive it.
class ChirpObjective final : public Potential {
public:
    explicit ChirpObjective(const ObjectiveContext& ctx) : ctx_(&ctx) {}
    [[nodiscard]] std::size_t dimension() const override { return ctx_->dimension(); }
    [[nodiscard]] double value(const Eigen::VectorXd& x) const override {
        return objective_value(x, *ctx_);
    }
    [[nodiscard]] Evaluation evaluate(const Eigen::VectorXd& x) const override {
        return evaluate_objective(x, *ctx_);
    }
    [[nodiscard]] const ObjectiveContext& context() const { return *ctx_; }

private:
    const ObjectiveContext* ctx_;
};

/// Upper Cholesky factor R of the per-chirp time-power Gram matrix (1/N) sum_n t_n^(p+q),
/// p, q = 1..P, stacked block-diagonally. |R phi_c|^2 is the mean-square phase polynomial of
/// chirp c in cycles^2, so R maps phi onto coordinates where one unit is one RMS cycle.
/// The Gram matrix is taken over the first `horizon` samples of the time axis (0 = the context's length).
Eigen::MatrixXd phase_whitening_factor(const MixtureConfig& config, std::size_t horizon);

/// The chirp objective seen through u = R phi (see phase_whitening_factor).
class WhitenedObjective final : public Potential {
public:
    explicit WhitenedObjective(const ObjectiveContext& ctx, std::size_t horizon = 0);
    [[nodiscard]] std::size_t dimension() const override { return ctx_->dimension(); }
    [[nodiscard]] double value(const Eigen::VectorXd& u) const override;
    [[nodiscard]] Evaluation evaluate(const Eigen::VectorXd& u) const override;

    [[nodiscard]] Eigen::VectorXd to_phi(const Eigen::VectorXd& u) const { return R_inv_ * u; }
    [[nodiscard]] Eigen::VectorXd to_coords(const Eigen::VectorXd& phi) const { return R_ * phi; }

private:
    const ObjectiveContext* ctx_;
    Eigen::MatrixXd R_;
    Eigen::MatrixXd R_inv_;
};

}  // namespace chirpest
