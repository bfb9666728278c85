#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "chirpest/harness.hpp"

using namespace chirpest;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kValidation = 1;
constexpr int kUsage = 2;

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<double> snr;
    std::string algo;
    std::string out;
};

const AlgorithmSetup& pick_algorithm(const ExperimentSpec& spec, const std::string& name) {
    if (name.empty()) return spec.algorithms.front();
    const Variant v = parse_variant(name);
    for (const auto& a : spec.algorithms)
        if (a.variant == v) return a;
    throw ValidationError("algorithm " + name + " is not configured in the experiment file");
}

std::string vec_text(const Eigen::VectorXd& v) {
    std::string s = "[";
    char buf[40];
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%s%.6g", i ? ", " : "", v(i));
        s += buf;
    }
    return s + "]";
}

int cmd_simulate(const Common& o) {
    const ExperimentSpec spec = load_experiment(o.config);
    if (!spec.truth) throw ValidationError("simulate needs ground-truth phase and amplitude in the config");
    const std::uint64_t seed = o.seed.value_or(spec.base_seed);
    ComplexSignal signal = synthesize_mixture(*spec.truth, spec.mixture);
    json header{{"seed", seed}, {"provenance", spec.echoed}};
    if (o.snr) {
        const ComplexSignal clean = signal;
        signal = add_complex_gaussian_noise(clean, snr_to_noise_variance(clean, *o.snr), seed);
        header["snr_db"] = *o.snr;
        header["empirical_snr_db"] = empirical_snr_db(clean, signal);
    } else {
        header["snr_db"] = nullptr;
    }
    const std::string out = o.out.empty() ? spec.name + ".signal" : o.out;
    write_signal_file(out, signal, header);
    std::cout << "wrote " << signal.size() << " samples to " << out << '\n';
    return kOk;
}

int cmd_estimate(const Common& o, const std::string& signal_path) {
    ExperimentSpec spec = load_experiment(o.config);
    const SignalFile file = read_signal_file(signal_path);
    spec.mixture.num_samples = file.signal.size();
    spec.mixture.sample_rate = file.signal.sample_rate;
    spec.mixture.validate();
    spec.signal_path = signal_path;
    spec.base_seed = o.seed.value_or(spec.base_seed);
    const AlgorithmSetup& algo = pick_algorithm(spec, o.algo);

    const RunResult r = run_single(spec, file.signal, algo, std::nullopt, 0);
    if (!r.ok) throw std::runtime_error("estimation failed: " + r.error);
    std::cout << "algorithm " << to_string(algo.variant) << "  J " << r.final_J << "  acceptance "
              << r.acceptance_rate << '\n';
    const auto P = static_cast<Eigen::Index>(spec.mixture.phase_order);
    for (std::size_t c = 0; c < spec.mixture.num_chirps; ++c) {
        std::cout << "chirp " << c + 1 << "  phi " << vec_text(r.phi_hat.segment(static_cast<Eigen::Index>(c) * P, P))
                  << "  rho "
                  << vec_text(Eigen::Map<const Eigen::VectorXd>(r.rho_hat[c].data(),
                                                                static_cast<Eigen::Index>(r.rho_hat[c].size())))
                  << '\n';
    }
    if (!o.out.empty()) {
        json doc{{"algorithm", std::string(to_string(algo.variant))},
                 {"seed", r.seed},
                 {"signal", signal_path},
                 {"final_J", r.final_J},
                 {"iterations", r.iterations},
                 {"acceptance_rate", r.acceptance_rate},
                 {"phi_hat", std::vector<double>(r.phi_hat.data(), r.phi_hat.data() + r.phi_hat.size())},
                 {"rho_hat", r.rho_hat},
                 {"config", spec.echoed}};
        std::ofstream out(o.out);
        if (!out) throw std::runtime_error("cannot write " + o.out);
        out << doc.dump(2) << '\n';
    }
    return kOk;
}

int cmd_benchmark(const Common& o) {
    ExperimentSpec spec = load_experiment(o.config);
    if (o.seed) {
        spec.base_seed = *o.seed;
        spec.echoed["base_seed"] = *o.seed;
    }
    if (o.snr) {
        if (spec.signal_path) throw ValidationError("--snr does not apply to an ingested signal");
        spec.snr_db = {*o.snr};
        spec.echoed["snr_db"] = spec.snr_db;
    }
    if (!o.algo.empty()) {
        const AlgorithmSetup chosen = pick_algorithm(spec, o.algo);
        spec.algorithms = {chosen};
        const std::string key(to_string(chosen.variant));
        spec.echoed["algorithms"] = json::array({key});
        spec.echoed["sampler_overrides"] = json{{key, spec.echoed["sampler_overrides"][key]}};
    }
    if (!o.out.empty()) spec.output_dir = o.out;

    const ExperimentResult result = run_experiment(spec);
    write_outputs(spec, result);

    for (const auto& cell : result.cells) {
        std::cout << to_string(cell.variant) << " @ " << snr_key(cell.snr_db) << " dB: " << cell.succeeded() << "/"
                  << cell.runs.size() << " runs ok\n";
        for (std::size_t i = 0; i < cell.phase_stats.size(); ++i) {
            const auto& s = cell.phase_stats[i];
            std::printf("  %-9s truth %10.4g  mean %10.4g  sd %9.3g  mae %9.3g\n",
                        parameter_name(i / spec.mixture.phase_order, i % spec.mixture.phase_order + 1).c_str(),
                        s.truth, s.mean, s.sd, s.mae);
        }
        for (const auto& r : cell.runs)
            if (!r.ok) std::cout << "  run " << r.run << " failed: " << r.error << '\n';
    }
    std::cout << "outputs in " << spec.output_dir.string() << '\n';
    if (!result.all_cells_usable()) {
        std::cerr << "error: every run of at least one cell failed\n";
        return kValidation;
    }
    return kOk;
}

int cmd_gradcheck(const Common& o, std::size_t points, double tolerance) {
    const ExperimentSpec spec = load_experiment(o.config);
    const std::uint64_t seed = o.seed.value_or(spec.base_seed);
    ComplexSignal signal;
    if (spec.signal_path) {
        signal = read_signal_file(*spec.signal_path).signal;
    } else {
        signal = synthesize_mixture(*spec.truth, spec.mixture);
        const std::optional<double> snr = o.snr ? o.snr
                                                : (spec.snr_db.empty() ? std::nullopt
                                                                       : std::optional<double>(spec.snr_db.front()));
        if (snr) signal = add_complex_gaussian_noise(signal, snr_to_noise_variance(signal, *snr), noise_seed(seed, 0));
    }
    const ObjectiveContext ctx(std::move(signal), spec.mixture);
    const GradientCheckReport rep = gradient_check(ctx, points, seed);
    std::printf("gradcheck: %zu points, dimension %zu, max relative error %.3e (tolerance %.1e)\n", rep.points,
                ctx.dimension(), rep.max_relative_error, tolerance);
    if (rep.max_relative_error > tolerance) {
        std::printf("worst: point %zu, coordinate %zu\n", rep.worst_point, rep.worst_coordinate);
        return kValidation;
    }
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Polynomial-phase chirp mixture estimation with Langevin samplers"};
    app.require_subcommand(1);
    Common o;
    std::string signal_path;
    std::size_t points = 20;
    double tolerance = 1e-4;

    auto add_common = [&](CLI::App* sub, bool needs_config) {
        auto* cfg = sub->add_option("--config", o.config, "Experiment JSON file");
        if (needs_config) cfg->required()->check(CLI::ExistingFile);
        sub->add_option("--seed", o.seed, "Base seed (overrides the config)");
        sub->add_option("--snr", o.snr, "SNR in dB");
        sub->add_option("--algo", o.algo, "LMC, NA-LMC or CG-LMC");
        sub->add_option("--out", o.out, "Output file or directory");
    };
    auto* simulate = app.add_subcommand("simulate", "Synthesize a mixture and write a signal file");
    add_common(simulate, true);
    auto* estimate = app.add_subcommand("estimate", "Estimate phase and amplitude from a signal file");
    add_common(estimate, true);
    estimate->add_option("signal", signal_path, "Signal file written by simulate")->required()->check(CLI::ExistingFile);
    auto* benchmark = app.add_subcommand("benchmark", "Run a full experiment and write its outputs");
    add_common(benchmark, true);
    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference audit of the analytic gradient");
    add_common(gradcheck, true);
    gradcheck->add_option("--points", points, "Random evaluation points")->check(CLI::PositiveNumber);
    gradcheck->add_option("--tolerance", tolerance, "Maximum accepted relative error")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*simulate) return cmd_simulate(o);
        if (*estimate) return cmd_estimate(o, signal_path);
        if (*benchmark) return cmd_benchmark(o);
        if (*gradcheck) return cmd_gradcheck(o, points, tolerance);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kValidation;
    }
    return kUsage;
}
