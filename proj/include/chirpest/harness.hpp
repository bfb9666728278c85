#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"

#include "chirpest/objective.hpp"
#include "chirpest/samplers.hpp"
#include "chirpest/signal_model.hpp"

namespace chirpest {

inline constexpr int kExperimentSchema = 1;

/// A config file that is not valid JSON; the message carries line and column.
class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct AlgorithmSetup {
    Variant variant = Variant::CG_LMC;
    SamplerConfig sampler;
};

struct ExperimentSpec {
    int schema = kExperimentSchema;
    std::string name;
    std::string description;
    MixtureConfig mixture;
    /// Ground truth for synthesized signals. Absent when only the mixture structure is given.
    std::optional<ChirpParams> truth;
    /// Ingested signal file. Replaces synthesis; snr_db must then be empty.
    std::optional<std::filesystem::path> signal_path;
    std::vector<double> snr_db;
    std::vector<AlgorithmSetup> algorithms;
    std::size_t runs_per_cell = 5;
    std::uint64_t base_seed = 0;
    std::filesystem::path output_dir;
    /// Fully resolved config, defaults included; feeding it back reproduces the experiment.
    /// output_dir is left out so the echo does not depend on where results are written.
    nlohmann::json echoed;
};

/// Parses and validates. ParseError for malformed JSON, ValidationError naming the offending field.
ExperimentSpec parse_experiment(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
ExperimentSpec parse_experiment_text(const std::string& text, const std::filesystem::path& base_dir = {});
ExperimentSpec load_experiment(const std::filesystem::path& path);

/// Run r of an experiment seeds every start s with run_seed(base, r) + s (s < 1000).
std::uint64_t run_seed(std::uint64_t base_seed, std::size_t run);
/// Noise realization of run r; sits past the last start index.
std::uint64_t noise_seed(std::uint64_t base_seed, std::size_t run);
inline constexpr std::size_t kMaxStarts = 999;

struct ParameterStats {
    double truth = 0.0;
    double mean = 0.0;
    /// Sample SD with n - 1 denominator; 0 for a single run.
    double sd = 0.0;
    double mae = 0.0;
    std::size_t count = 0;
};

/// Per-coordinate mean, SD and MAE against truth. Throws on an empty or ragged input.
std::vector<ParameterStats> compute_statistics(const std::vector<Eigen::VectorXd>& estimates,
                                               const Eigen::VectorXd& truth);

/// Reorders chirps by ascending first-order phase coefficient, carrying amplitudes along.
void sort_chirps_by_frequency(Eigen::VectorXd& phi, std::vector<std::vector<double>>& rho,
                              std::size_t num_chirps, std::size_t phase_order);

struct RunResult {
    std::size_t run = 0;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    /// Chirp-sorted estimates.
    Eigen::VectorXd phi_hat;
    std::vector<std::vector<double>> rho_hat;
    double final_J = 0.0;
    std::size_t iterations = 0;
    double acceptance_rate = 0.0;
    double wall_time_s = 0.0;
    std::size_t best_chain = 0;
    std::vector<ChainTrace> chains;
};

struct CellResult {
    Variant variant = Variant::CG_LMC;
    /// Target SNR; empty for an ingested signal.
    std::optional<double> snr_db;
    std::vector<RunResult> runs;
    std::vector<ParameterStats> phase_stats;
    std::vector<ParameterStats> amplitude_stats;

    [[nodiscard]] std::size_t succeeded() const;
};

struct ExperimentResult {
    std::vector<CellResult> cells;
    [[nodiscard]] bool all_cells_usable() const;
};

/// One (algorithm, snr, run) estimation: noise, primed multistart, chains, best run, amplitudes.
RunResult run_single(const ExperimentSpec& spec, const ComplexSignal& clean_or_measured,
                     const AlgorithmSetup& algo, std::optional<double> snr_db, std::size_t run);

/// Worker count: CHIRPEST_THREADS when set and positive, else hardware concurrency.
std::size_t worker_count(std::size_t cells);

/// All cells, in parallel; results folded in (algorithm, snr, run) order.
ExperimentResult run_experiment(const ExperimentSpec& spec);

std::string snr_key(std::optional<double> snr_db);
std::string parameter_name(std::size_t chirp, std::size_t power);

/// Summary document: echoed config plus per-cell statistics and per-run results. Contains no
/// wall-clock quantities, so reruns with the same seed serialize identically.
nlohmann::json summary_json(const ExperimentSpec& spec, const ExperimentResult& result);

void write_trace_csv(const std::filesystem::path& path, const ChainTrace& trace, std::size_t num_chirps,
                     std::size_t phase_order);

/// summary.json, timing.json, traces/ and plots/ under spec.output_dir.
void write_outputs(const ExperimentSpec& spec, const ExperimentResult& result);

struct SignalFile {
    ComplexSignal signal;
    nlohmann::json header;
};

/// Line 1: JSON header; line 2: "re,im"; then one sample per line in %.17g.
void write_signal_file(const std::filesystem::path& path, const ComplexSignal& signal, nlohmann::json header);
SignalFile read_signal_file(const std::filesystem::path& path);

struct GradientCheckReport {
    double max_relative_error = 0.0;
    std::size_t points = 0;
    std::size_t worst_point = 0;
    std::size_t worst_coordinate = 0;
};

/// Five-point central differences against the analytic gradient at `points` random draws from
/// the initialization box. The step for order p is 3e-4 / t_end^p, i.e. 3e-4 cycles of phase at
/// the last sample. Relative error per coordinate is |g - d| / max(|g|, |d|, floor) with
/// floor = 1e-6 max_i |g_i| at that point.
GradientCheckReport gradient_check(const ObjectiveContext& ctx, std::size_t points, std::uint64_t seed);

}  // namespace chirpest
