#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "chirpest/objective.hpp"

namespace chirpest {

enum class Variant { LMC, NA_LMC, CG_LMC };

std::string_view to_string(Variant v);
/// Accepts "LMC", "NA-LMC", "CG-LMC" (case-insensitive, '_' or '-').
Variant parse_variant(std::string_view name);

struct AnnealLevel {
    double sigma = 0.0;
    std::size_t iters = 0;
};

/// One priming pass over a signal prefix. Negative or zero overrides fall back to the chain config.
struct PrimingStage {
    std::size_t prefix_length = 0;
    std::size_t iters = 0;
    double step_size = 0.0;
    double sigma0 = -1.0;
    double sigma_step = -1.0;
    double sigma_min = -1.0;
    /// After this stage keep only the `keep` starts with the lowest prefix J (0 keeps all).
    std::size_t keep = 0;
};

struct PrimingConfig {
    /// 0 selects ceil(N / 4).
    std::size_t prefix_length = 0;
    std::size_t priming_iters = 0;
    std::size_t num_starts = 1;
    /// How many of the best-ranked primed starts get a full-length chain.
    std::size_t num_chains = 1;
    /// Multiplies the per-order initialization half-width (f_s/2) / (p T^(p-1)).
    double box_scale = 1.0;
    /// Step size used on the prefix signal; 0 reuses the main step size.
    double step_size = 0.0;
    /// Explicit stage list, run in order (typically growing prefixes). When empty, a single stage
    /// is formed from prefix_length, priming_iters and step_size.
    std::vector<PrimingStage> stages;

    /// Stages actually executed for a signal of `num_samples` samples (empty = no priming).
    [[nodiscard]] std::vector<PrimingStage> effective_stages(std::size_t num_samples) const;
};

struct SamplerConfig {
    double step_size = 1e-5;
    double inverse_temperature = 1.0;
    double sigma0 = 0.0;
    double sigma_min = 0.0;
    double sigma_step = 0.0;
    std::size_t max_iters = 1000;
    std::vector<AnnealLevel> anneal_schedule;
    bool mh_enabled = true;
    PrimingConfig priming;
    std::uint64_t seed = 0;
    /// Exponential moving average of the Stein estimate fed to the sigma update (decay 0.9).
    bool trace_ema = false;
    /// Run chirp-objective chains in whitened phase coordinates (WhitenedObjective). Records and
    /// final states are always reported as phi.
    bool whiten = false;
    /// Samples spanned by the whitening Gram matrix; 0 uses the chain's own signal length.
    std::size_t whiten_horizon = 0;
    /// Keep every k-th iteration in the trace (the final iteration is always kept).
    std::size_t trace_stride = 1;

    void validate() const;
};

struct ChainState {
    Eigen::VectorXd phi;
    double sigma = 0.0;
    std::size_t iter = 0;
    double last_J = 0.0;
    double last_trace_estimate = 0.0;
};

struct ChainRecord {
    std::size_t iter = 0;
    Eigen::VectorXd phi;
    double J = 0.0;
    double sigma = 0.0;
    double trace_estimate = 0.0;
    bool accepted = false;
};

struct ChainTrace {
    Variant variant = Variant::LMC;
    std::vector<ChainRecord> records;
    ChainState final_state;
    double wall_time_s = 0.0;
    std::size_t accepted_count = 0;
    std::size_t iterations = 0;
    bool aborted = false;
    std::string diagnostic;

    [[nodiscard]] double acceptance_rate() const {
        return iterations ? static_cast<double>(accepted_count) / static_cast<double>(iterations) : 0.0;
    }
};

/// Independent generators derived from one seed; stream ids keep draws decoupled across roles.
std::mt19937_64 make_stream(std::uint64_t seed, std::uint64_t stream);

/// phi - eta grad + sqrt(2 eta / beta) xi, xi ~ N(0, I).
Eigen::VectorXd lmc_propose(const Eigen::VectorXd& phi, const Eigen::VectorXd& grad,
                            const SamplerConfig& config, std::mt19937_64& rng);
Eigen::VectorXd lmc_propose(const ChainState& state, const Eigen::VectorXd& grad,
                            const SamplerConfig& config, std::uint64_t seed);

/// log min(1, pi(new) q(old | new) / (pi(old) q(new | old))) with pi ~ exp(-beta J) and the
/// Gaussian drift kernel of the Langevin proposal.
double mala_log_acceptance(const Eigen::VectorXd& phi_old, const Eigen::VectorXd& phi_new,
                           const Eigen::VectorXd& grad_old, const Eigen::VectorXd& grad_new,
                           double J_old, double J_new, const SamplerConfig& config);

/// max(sigma_min, sigma - mu |trace|).
double sigma_update(double sigma, double trace_estimate, const SamplerConfig& config);

/// Piecewise-constant annealing level at `iter`; the last level is held indefinitely.
double na_lmc_sigma(std::size_t iter, const SamplerConfig& config);

ChainTrace run_chain(Variant variant, const Potential& potential, const Eigen::VectorXd& init,
                     const SamplerConfig& config);
ChainTrace run_chain(Variant variant, const ObjectiveContext& ctx, const Eigen::VectorXd& init,
                     const SamplerConfig& config);

/// Uniform draw from the initialization box, rejecting draws whose instantaneous frequency
/// reaches f_s / 2.
Eigen::VectorXd draw_initial_phase(const MixtureConfig& config, double box_scale, std::mt19937_64& rng);

/// Seed of start s within a run: run_seed + s.
std::uint64_t start_seed(std::uint64_t run_seed, std::size_t start);

struct PrimedStart {
    Eigen::VectorXd phi;
    double full_J = 0.0;
    std::size_t start_index = 0;
};

/// Chain config for one priming stage: overrides applied, NA-LMC schedule rescaled to the stage.
SamplerConfig stage_config(const SamplerConfig& base, const PrimingStage& stage);

/// Random starts, each primed on the prefix signal, ranked by full-signal J (ascending, ties by
/// start index). Stages with `keep` drop the worst starts early, so fewer than num_starts may
/// come back. Without priming the raw draws come back in draw order.
std::vector<PrimedStart> multistart_primed_init(const ObjectiveContext& ctx_full,
                                                const SamplerConfig& config,
                                                Variant priming_variant = Variant::CG_LMC);

struct BestRun {
    Eigen::VectorXd phi_hat;
    double J = 0.0;
    std::size_t index = 0;
};

/// Minimum full-signal J over final states; ties go to the lowest index.
BestRun select_best_run(const std::vector<ChainTrace>& traces, const Potential& potential);

}  // namespace chirpest
