#include "chirpest/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

namespace chirpest {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Field reader that names the JSON path in every error and rejects unknown keys.
class Fields {
public:
    Fields(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
        if (!obj_.is_object()) fail("expected an object");
    }

    [[noreturn]] void fail(const std::string& what) const {
        throw ValidationError(path_.empty() ? what : path_ + ": " + what);
    }
    [[noreturn]] static void fail_at(const std::string& path, const std::string& what) {
        throw ValidationError(path + ": " + what);
    }

    std::string sub(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
    bool has(const std::string& key) const { return obj_.contains(key) && !obj_.at(key).is_null(); }
    const json& at(const std::string& key) const {
        used_.push_back(key);
        if (!obj_.contains(key)) fail("missing required field '" + key + "'");
        return obj_.at(key);
    }

    double number(const std::string& key) const {
        const json& v = at(key);
        if (!v.is_number()) fail_at(sub(key), "expected a number");
        const double x = v.get<double>();
        if (!std::isfinite(x)) fail_at(sub(key), "must be finite");
        return x;
    }
    double number(const std::string& key, double fallback) const {
        if (!has(key)) { used_.push_back(key); return fallback; }
        return number(key);
    }
    std::uint64_t count(const std::string& key) const {
        const json& v = at(key);
        if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
            fail_at(sub(key), "expected a nonnegative integer");
        return v.get<std::uint64_t>();
    }
    std::uint64_t count(const std::string& key, std::uint64_t fallback) const {
        if (!has(key)) { used_.push_back(key); return fallback; }
        return count(key);
    }
    bool flag(const std::string& key, bool fallback) const {
        if (!has(key)) { used_.push_back(key); return fallback; }
        const json& v = at(key);
        if (!v.is_boolean()) fail_at(sub(key), "expected true or false");
        return v.get<bool>();
    }
    std::string text(const std::string& key, const std::string& fallback) const {
        if (!has(key)) { used_.push_back(key); return fallback; }
        const json& v = at(key);
        if (!v.is_string()) fail_at(sub(key), "expected a string");
        return v.get<std::string>();
    }
    void ignore(const std::string& key) const { used_.push_back(key); }

    void reject_unknown() const {
        for (const auto& [key, value] : obj_.items())
            if (std::find(used_.begin(), used_.end(), key) == used_.end())
                fail("unknown field '" + key + "'");
    }

private:
    const json& obj_;
    std::string path_;
    mutable std::vector<std::string> used_;
};

std::vector<double> number_list(const json& v, const std::string& path) {
    if (!v.is_array()) Fields::fail_at(path, "expected an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!v[i].is_number()) Fields::fail_at(path + "[" + std::to_string(i) + "]", "expected a number");
        out.push_back(v[i].get<double>());
        if (!std::isfinite(out.back())) Fields::fail_at(path + "[" + std::to_string(i) + "]", "must be finite");
    }
    return out;
}

PrimingStage parse_stage(const json& v, const std::string& path) {
    const Fields f(v, path);
    PrimingStage st;
    st.prefix_length = f.count("prefix_length");
    st.iters = f.count("iters");
    st.step_size = f.number("step_size", 0.0);
    st.sigma0 = f.number("sigma0", -1.0);
    st.sigma_step = f.number("sigma_step", -1.0);
    st.sigma_min = f.number("sigma_min", -1.0);
    st.keep = f.count("keep", 0);
    f.reject_unknown();
    return st;
}

json stage_json(const PrimingStage& st) {
    json j{{"prefix_length", st.prefix_length}, {"iters", st.iters}, {"step_size", st.step_size},
           {"keep", st.keep}};
    if (st.sigma0 >= 0.0) j["sigma0"] = st.sigma0;
    if (st.sigma_step >= 0.0) j["sigma_step"] = st.sigma_step;
    if (st.sigma_min >= 0.0) j["sigma_min"] = st.sigma_min;
    return j;
}

// Reads sampler fields over `base`, so per-algorithm overrides only name what changes.
SamplerConfig parse_sampler(const json& v, const std::string& path, SamplerConfig base) {
    const Fields f(v, path);
    SamplerConfig c = base;
    c.step_size = f.number("step_size", c.step_size);
    c.inverse_temperature = f.number("inverse_temperature", c.inverse_temperature);
    c.sigma0 = f.number("sigma0", c.sigma0);
    c.sigma_min = f.number("sigma_min", c.sigma_min);
    c.sigma_step = f.number("sigma_step", c.sigma_step);
    c.max_iters = f.count("max_iters", c.max_iters);
    c.mh_enabled = f.flag("mh_enabled", c.mh_enabled);
    c.trace_ema = f.flag("trace_ema", c.trace_ema);
    c.whiten = f.flag("whiten", c.whiten);
    c.whiten_horizon = f.count("whiten_horizon", c.whiten_horizon);
    c.trace_stride = f.count("trace_stride", c.trace_stride);
    if (f.has("anneal_schedule")) {
        const json& a = f.at("anneal_schedule");
        if (!a.is_array()) Fields::fail_at(f.sub("anneal_schedule"), "expected an array of [sigma, iters]");
        c.anneal_schedule.clear();
        for (std::size_t i = 0; i < a.size(); ++i) {
            const std::string p = f.sub("anneal_schedule") + "[" + std::to_string(i) + "]";
            if (!a[i].is_array() || a[i].size() != 2 || !a[i][0].is_number() || !a[i][1].is_number_unsigned())
                Fields::fail_at(p, "expected [sigma, iters]");
            c.anneal_schedule.push_back(AnnealLevel{a[i][0].get<double>(), a[i][1].get<std::size_t>()});
        }
    } else {
        f.ignore("anneal_schedule");
    }
    if (f.has("priming")) {
        const Fields p(f.at("priming"), f.sub("priming"));
        auto& pc = c.priming;
        pc.prefix_length = p.count("prefix_length", pc.prefix_length);
        pc.priming_iters = p.count("priming_iters", pc.priming_iters);
        pc.num_starts = p.count("num_starts", pc.num_starts);
        pc.num_chains = p.count("num_chains", pc.num_chains);
        pc.box_scale = p.number("box_scale", pc.box_scale);
        pc.step_size = p.number("step_size", pc.step_size);
        if (p.has("stages")) {
            const json& s = p.at("stages");
            if (!s.is_array()) Fields::fail_at(p.sub("stages"), "expected an array");
            pc.stages.clear();
            for (std::size_t i = 0; i < s.size(); ++i)
                pc.stages.push_back(parse_stage(s[i], p.sub("stages") + "[" + std::to_string(i) + "]"));
        } else {
            p.ignore("stages");
        }
        p.reject_unknown();
    } else {
        f.ignore("priming");
    }
    f.reject_unknown();
    return c;
}

json sampler_json(const SamplerConfig& c) {
    json schedule = json::array();
    for (const auto& level : c.anneal_schedule) schedule.push_back(json::array({level.sigma, level.iters}));
    json stages = json::array();
    for (const auto& st : c.priming.stages) stages.push_back(stage_json(st));
    return json{{"step_size", c.step_size},
                {"inverse_temperature", c.inverse_temperature},
                {"sigma0", c.sigma0},
                {"sigma_min", c.sigma_min},
                {"sigma_step", c.sigma_step},
                {"max_iters", c.max_iters},
                {"anneal_schedule", schedule},
                {"mh_enabled", c.mh_enabled},
                {"trace_ema", c.trace_ema},
                {"whiten", c.whiten},
                {"whiten_horizon", c.whiten_horizon},
                {"trace_stride", c.trace_stride},
                {"priming",
                 {{"prefix_length", c.priming.prefix_length},
                  {"priming_iters", c.priming.priming_iters},
                  {"num_starts", c.priming.num_starts},
                  {"num_chains", c.priming.num_chains},
                  {"box_scale", c.priming.box_scale},
                  {"step_size", c.priming.step_size},
                  {"stages", stages}}}};
}

void validate_sampler(const SamplerConfig& c, Variant v, const std::string& path) {
    try {
        c.validate();
    } catch (const ValidationError& e) {
        throw ValidationError(path + ": " + e.what());
    }
    if (v == Variant::NA_LMC && c.anneal_schedule.empty())
        throw ValidationError(path + ": NA-LMC needs a nonempty anneal_schedule");
    if (c.priming.num_starts > kMaxStarts)
        throw ValidationError(path + ": priming.num_starts must be at most " + std::to_string(kMaxStarts));
}

std::string format_g(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

}  // namespace

ExperimentSpec parse_experiment(const json& doc, const fs::path& base_dir) {
    const Fields f(doc, "");
    ExperimentSpec spec;
    spec.schema = static_cast<int>(f.count("schema"));
    if (spec.schema != kExperimentSchema)
        Fields::fail_at("schema", "unsupported version " + std::to_string(spec.schema) + " (expected " +
                                      std::to_string(kExperimentSchema) + ")");
    spec.name = f.text("name", "experiment");
    spec.description = f.text("description", "");

    // Mixture: full ground truth (phase + amplitude), or structure only (for ingested signals).
    const Fields m(f.at("mixture"), "mixture");
    spec.mixture.sample_rate = m.number("sample_rate");
    spec.mixture.num_samples = m.count("num_samples", 0);
    if (m.has("regularization")) {
        spec.mixture.regularization = m.number("regularization");
    } else {
        m.ignore("regularization");
    }
    m.ignore("regularization_default");
    if (m.has("phase")) {
        const json& phase = m.at("phase");
        const json& amp = m.at("amplitude");
        if (!phase.is_array() || phase.empty()) Fields::fail_at("mixture.phase", "expected one row per chirp");
        if (!amp.is_array() || amp.size() != phase.size())
            Fields::fail_at("mixture.amplitude", "expected one row per chirp, matching mixture.phase");
        const std::size_t nc = phase.size();
        const std::size_t order = number_list(phase[0], "mixture.phase[0]").size();
        ChirpParams truth;
        truth.phase_coeffs.resize(static_cast<Eigen::Index>(nc), static_cast<Eigen::Index>(order));
        for (std::size_t c = 0; c < nc; ++c) {
            const std::string p = "mixture.phase[" + std::to_string(c) + "]";
            const auto row = number_list(phase[c], p);
            if (row.size() != order) Fields::fail_at(p, "every chirp needs the same phase order");
            for (std::size_t q = 0; q < order; ++q)
                truth.phase_coeffs(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(q)) = row[q];
            truth.amp_coeffs.push_back(number_list(amp[c], "mixture.amplitude[" + std::to_string(c) + "]"));
            if (truth.amp_coeffs.back().empty())
                Fields::fail_at("mixture.amplitude[" + std::to_string(c) + "]", "needs at least one coefficient");
        }
        spec.mixture.num_chirps = nc;
        spec.mixture.amp_orders.clear();
        spec.mixture.phase_order = order;
        for (const auto& row : truth.amp_coeffs) spec.mixture.amp_orders.push_back(row.size() - 1);
        spec.truth = std::move(truth);
        m.ignore("num_chirps");
        m.ignore("phase_order");
        m.ignore("amp_orders");
    } else {
        m.ignore("amplitude");
        spec.mixture.num_chirps = m.count("num_chirps");
        spec.mixture.phase_order = m.count("phase_order");
        const auto orders = number_list(m.at("amp_orders"), "mixture.amp_orders");
        spec.mixture.amp_orders.clear();
        for (const double a : orders) {
            if (a < 0 || a != std::floor(a)) Fields::fail_at("mixture.amp_orders", "expected nonnegative integers");
            spec.mixture.amp_orders.push_back(static_cast<std::size_t>(a));
        }
    }
    m.reject_unknown();

    if (f.has("signal")) {
        fs::path p = f.text("signal", "");
        spec.signal_path = p.is_absolute() || base_dir.empty() ? p : base_dir / p;
    } else {
        f.ignore("signal");
    }

    if (f.has("snr_db")) {
        spec.snr_db = number_list(f.at("snr_db"), "snr_db");
    } else {
        f.ignore("snr_db");
    }
    spec.runs_per_cell = f.count("runs_per_cell", 5);
    spec.base_seed = f.count("base_seed", 0);
    spec.output_dir = f.text("output_dir", "out/" + spec.name);

    const SamplerConfig common = f.has("sampler") ? parse_sampler(f.at("sampler"), "sampler", SamplerConfig{})
                                                  : SamplerConfig{};
    if (!f.has("sampler")) f.ignore("sampler");
    const json overrides = f.has("sampler_overrides") ? f.at("sampler_overrides") : json::object();
    if (!f.has("sampler_overrides")) f.ignore("sampler_overrides");
    if (!overrides.is_object()) Fields::fail_at("sampler_overrides", "expected an object keyed by algorithm");
    for (const auto& [key, value] : overrides.items()) (void)parse_variant(key);

    const json algos = f.has("algorithms") ? f.at("algorithms") : json::array({"CG-LMC"});
    if (!f.has("algorithms")) f.ignore("algorithms");
    if (!algos.is_array() || algos.empty()) Fields::fail_at("algorithms", "expected a nonempty array");
    for (std::size_t i = 0; i < algos.size(); ++i) {
        if (!algos[i].is_string()) Fields::fail_at("algorithms[" + std::to_string(i) + "]", "expected a name");
        AlgorithmSetup setup;
        setup.variant = parse_variant(algos[i].get<std::string>());
        setup.sampler = common;
        for (const auto& [key, value] : overrides.items())
            if (parse_variant(key) == setup.variant)
                setup.sampler = parse_sampler(value, "sampler_overrides." + key, common);
        for (const auto& other : spec.algorithms)
            if (other.variant == setup.variant)
                Fields::fail_at("algorithms", "duplicate entry " + std::string(to_string(setup.variant)));
        validate_sampler(setup.sampler, setup.variant,
                         "sampler configuration for " + std::string(to_string(setup.variant)));
        spec.algorithms.push_back(std::move(setup));
    }
    f.reject_unknown();

    // Semantic checks.
    if (spec.runs_per_cell == 0) Fields::fail_at("runs_per_cell", "must be at least 1");
    if (spec.signal_path) {
        if (!spec.snr_db.empty()) Fields::fail_at("snr_db", "must be empty when a signal file is ingested");
        const SignalFile file = read_signal_file(*spec.signal_path);
        if (spec.mixture.num_samples != 0 && spec.mixture.num_samples != file.signal.size())
            Fields::fail_at("mixture.num_samples", "does not match the signal file length " +
                                                       std::to_string(file.signal.size()));
        if (file.signal.sample_rate != spec.mixture.sample_rate)
            Fields::fail_at("mixture.sample_rate", "does not match the signal file header");
        spec.mixture.num_samples = file.signal.size();
    } else {
        if (!spec.truth) Fields::fail_at("mixture", "needs phase and amplitude ground truth, or a signal file");
        if (spec.snr_db.empty()) Fields::fail_at("snr_db", "needs at least one SNR");
        if (spec.mixture.num_samples == 0) Fields::fail_at("mixture.num_samples", "missing required field");
    }
    spec.mixture.validate();
    if (spec.truth) {
        spec.truth->check_against(spec.mixture);
        const double f_max = max_instantaneous_frequency(*spec.truth, spec.mixture);
        if (!(f_max < spec.mixture.sample_rate / 2.0))
            Fields::fail_at("mixture.phase", "instantaneous frequency reaches " + format_g(f_max) +
                                                 " Hz, at or above f_s/2 = " +
                                                 format_g(spec.mixture.sample_rate / 2.0) + " Hz");
    }

    // Echo: resolved values, so the echo alone reproduces the run.
    json mix{{"sample_rate", spec.mixture.sample_rate},
             {"num_samples", spec.mixture.num_samples},
             {"regularization", spec.mixture.regularization ? json(*spec.mixture.regularization) : json(nullptr)},
             {"regularization_default", default_regularization(spec.mixture)}};
    if (spec.truth) {
        json phase = json::array();
        for (Eigen::Index c = 0; c < spec.truth->phase_coeffs.rows(); ++c) {
            json row = json::array();
            for (Eigen::Index q = 0; q < spec.truth->phase_coeffs.cols(); ++q) row.push_back(spec.truth->phase_coeffs(c, q));
            phase.push_back(row);
        }
        mix["phase"] = phase;
        mix["amplitude"] = spec.truth->amp_coeffs;
    } else {
        mix["num_chirps"] = spec.mixture.num_chirps;
        mix["phase_order"] = spec.mixture.phase_order;
        mix["amp_orders"] = spec.mixture.amp_orders;
    }
    json algo_names = json::array();
    json per_algo = json::object();
    for (const auto& a : spec.algorithms) {
        algo_names.push_back(std::string(to_string(a.variant)));
        per_algo[std::string(to_string(a.variant))] = sampler_json(a.sampler);
    }
    spec.echoed = json{{"schema", spec.schema},
                       {"name", spec.name},
                       {"description", spec.description},
                       {"mixture", mix},
                       {"snr_db", spec.snr_db},
                       {"algorithms", algo_names},
                       {"runs_per_cell", spec.runs_per_cell},
                       {"base_seed", spec.base_seed},
                       {"sampler_overrides", per_algo}};
    if (spec.signal_path) spec.echoed["signal"] = spec.signal_path->generic_string();
    return spec;
}

ExperimentSpec parse_experiment_text(const std::string& text, const fs::path& base_dir) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        // Byte offset to line/column.
        const std::size_t upto = std::min<std::size_t>(e.byte ? e.byte - 1 : 0, text.size());
        const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(upto), '\n');
        const auto nl = text.rfind('\n', upto ? upto - 1 : 0);
        const auto col = nl == std::string::npos || upto == 0 ? upto + 1 : upto - nl;
        throw ParseError("line " + std::to_string(line) + ", column " + std::to_string(col) + ": " + e.what());
    }
    return parse_experiment(doc, base_dir);
}

ExperimentSpec load_experiment(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open experiment file " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    try {
        return parse_experiment_text(buf.str(), path.parent_path());
    } catch (const ParseError& e) {
        throw ParseError(path.string() + ": " + e.what());
    } catch (const ValidationError& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

std::uint64_t run_seed(std::uint64_t base_seed, std::size_t run) {
    return base_seed * 1000000ULL + static_cast<std::uint64_t>(run) * 1000ULL;
}

std::uint64_t noise_seed(std::uint64_t base_seed, std::size_t run) {
    return run_seed(base_seed, run) + kMaxStarts;
}

std::vector<ParameterStats> compute_statistics(const std::vector<Eigen::VectorXd>& estimates,
                                               const Eigen::VectorXd& truth) {
    if (estimates.empty()) throw ValidationError("compute_statistics needs at least one estimate");
    for (const auto& e : estimates)
        if (e.size() != truth.size()) throw DimensionError("estimate and truth differ in length");
    const auto n = static_cast<double>(estimates.size());
    std::vector<ParameterStats> out(static_cast<std::size_t>(truth.size()));
    for (Eigen::Index i = 0; i < truth.size(); ++i) {
        auto& s = out[static_cast<std::size_t>(i)];
        s.truth = truth(i);
        s.count = estimates.size();
        for (const auto& e : estimates) s.mean += e(i);
        s.mean /= n;
        double ss = 0.0;
        for (const auto& e : estimates) {
            ss += (e(i) - s.mean) * (e(i) - s.mean);
            s.mae += std::abs(e(i) - truth(i));
        }
        s.mae /= n;
        s.sd = estimates.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    }
    return out;
}

void sort_chirps_by_frequency(Eigen::VectorXd& phi, std::vector<std::vector<double>>& rho,
                              std::size_t num_chirps, std::size_t phase_order) {
    if (static_cast<std::size_t>(phi.size()) != num_chirps * phase_order)
        throw DimensionError("phi does not match num_chirps x phase_order");
    std::vector<std::size_t> order(num_chirps);
    std::iota(order.begin(), order.end(), 0);
    const auto P = static_cast<Eigen::Index>(phase_order);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return phi(static_cast<Eigen::Index>(a) * P) < phi(static_cast<Eigen::Index>(b) * P);
    });
    Eigen::VectorXd sorted(phi.size());
    std::vector<std::vector<double>> sorted_rho;
    for (std::size_t k = 0; k < num_chirps; ++k) {
        sorted.segment(static_cast<Eigen::Index>(k) * P, P) = phi.segment(static_cast<Eigen::Index>(order[k]) * P, P);
        if (!rho.empty()) sorted_rho.push_back(rho[order[k]]);
    }
    phi = std::move(sorted);
    if (!rho.empty()) rho = std::move(sorted_rho);
}

std::size_t CellResult::succeeded() const {
    return static_cast<std::size_t>(std::count_if(runs.begin(), runs.end(), [](const RunResult& r) { return r.ok; }));
}

bool ExperimentResult::all_cells_usable() const {
    return std::all_of(cells.begin(), cells.end(), [](const CellResult& c) { return c.succeeded() > 0; });
}

RunResult run_single(const ExperimentSpec& spec, const ComplexSignal& clean_or_measured,
                     const AlgorithmSetup& algo, std::optional<double> snr_db, std::size_t run) {
    RunResult out;
    out.run = run;
    out.seed = run_seed(spec.base_seed, run);
    const auto t0 = std::chrono::steady_clock::now();
    try {
        ComplexSignal measured = clean_or_measured;
        if (snr_db)
            measured = add_complex_gaussian_noise(clean_or_measured,
                                                  snr_to_noise_variance(clean_or_measured, *snr_db),
                                                  noise_seed(spec.base_seed, run));
        const ObjectiveContext ctx(std::move(measured), spec.mixture);

        SamplerConfig cfg = algo.sampler;
        cfg.seed = out.seed;
        const auto starts = multistart_primed_init(ctx, cfg, algo.variant);
        const std::size_t chains = std::min(cfg.priming.num_chains, starts.size());
        for (std::size_t k = 0; k < chains; ++k) {
            SamplerConfig chain_cfg = cfg;
            chain_cfg.seed = start_seed(out.seed, starts[k].start_index);
            out.chains.push_back(run_chain(algo.variant, ctx, starts[k].phi, chain_cfg));
            out.iterations += out.chains.back().iterations;
        }
        const BestRun best = select_best_run(out.chains, ChirpObjective(ctx));
        out.best_chain = best.index;
        out.final_J = best.J;
        out.acceptance_rate = out.chains[best.index].acceptance_rate();
        out.phi_hat = best.phi_hat;
        out.rho_hat = recover_amplitudes(best.phi_hat, ctx).rho;
        sort_chirps_by_frequency(out.phi_hat, out.rho_hat, spec.mixture.num_chirps, spec.mixture.phase_order);
        out.ok = true;
    } catch (const std::exception& e) {
        out.ok = false;
        out.error = e.what();
    }
    out.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

std::size_t worker_count(std::size_t cells) {
    std::size_t n = std::max<std::size_t>(std::thread::hardware_concurrency(), 1);
    if (const char* env = std::getenv("CHIRPEST_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v > 0) n = static_cast<std::size_t>(v);
    }
    return std::max<std::size_t>(std::min(n, cells), 1);
}

ExperimentResult run_experiment(const ExperimentSpec& spec) {
    ComplexSignal base;
    if (spec.signal_path) {
        base = read_signal_file(*spec.signal_path).signal;
    } else {
        base = synthesize_mixture(*spec.truth, spec.mixture);
    }
    std::vector<std::optional<double>> snrs;
    if (spec.signal_path) {
        snrs.push_back(std::nullopt);
    } else {
        for (const double s : spec.snr_db) snrs.emplace_back(s);
    }

    struct Job {
        std::size_t cell;
        std::size_t run;
    };
    ExperimentResult result;
    std::vector<Job> jobs;
    for (const auto& algo : spec.algorithms)
        for (const auto& snr : snrs) {
            CellResult cell;
            cell.variant = algo.variant;
            cell.snr_db = snr;
            cell.runs.resize(spec.runs_per_cell);
            for (std::size_t r = 0; r < spec.runs_per_cell; ++r) jobs.push_back(Job{result.cells.size(), r});
            result.cells.push_back(std::move(cell));
        }

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t j = next++; j < jobs.size(); j = next++) {
            const Job job = jobs[j];
            const std::size_t algo_index = job.cell / snrs.size();
            auto& cell = result.cells[job.cell];
            cell.runs[job.run] = run_single(spec, base, spec.algorithms[algo_index], cell.snr_db, job.run);
        }
    };
    const std::size_t workers = worker_count(jobs.size());
    std::vector<std::thread> pool;
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    // Fold in index order, independent of completion order.
    for (auto& cell : result.cells) {
        std::vector<Eigen::VectorXd> phis;
        std::vector<Eigen::VectorXd> rhos;
        for (const auto& r : cell.runs) {
            if (!r.ok) continue;
            phis.push_back(r.phi_hat);
            std::vector<double> flat;
            for (const auto& row : r.rho_hat) flat.insert(flat.end(), row.begin(), row.end());
            rhos.push_back(Eigen::Map<const Eigen::VectorXd>(flat.data(), static_cast<Eigen::Index>(flat.size())));
        }
        if (phis.empty() || !spec.truth) continue;
        Eigen::VectorXd phi_truth = spec.truth->flat_phase();
        std::vector<std::vector<double>> rho_truth = spec.truth->amp_coeffs;
        sort_chirps_by_frequency(phi_truth, rho_truth, spec.mixture.num_chirps, spec.mixture.phase_order);
        std::vector<double> flat;
        for (const auto& row : rho_truth) flat.insert(flat.end(), row.begin(), row.end());
        cell.phase_stats = compute_statistics(phis, phi_truth);
        cell.amplitude_stats = compute_statistics(
            rhos, Eigen::Map<const Eigen::VectorXd>(flat.data(), static_cast<Eigen::Index>(flat.size())));
    }
    return result;
}

std::string snr_key(std::optional<double> snr_db) {
    if (!snr_db) return "signal";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", *snr_db);
    return buf;
}

std::string parameter_name(std::size_t chirp, std::size_t power) {
    return "phi_" + std::to_string(chirp + 1) + "_" + std::to_string(power);
}

namespace {

json stats_json(const ParameterStats& s, bool with_truth) {
    json j{{"mean", s.mean}, {"sd", s.sd}, {"count", s.count}};
    if (with_truth) {
        j["truth"] = s.truth;
        j["mae"] = s.mae;
    }
    return j;
}

std::string cell_stem(const CellResult& cell) {
    return std::string(to_string(cell.variant)) + "_snr" + snr_key(cell.snr_db);
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw std::runtime_error("cannot create directory " + dir.string() + ": " + ec.message());
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    return out;
}

}  // namespace

json summary_json(const ExperimentSpec& spec, const ExperimentResult& result) {
    const auto& mc = spec.mixture;
    json cells = json::object();
    for (const auto& cell : result.cells) {
        json params = json::object();
        // Ingested signals have no truth: stats still carry mean and SD, computed here.
        std::vector<ParameterStats> stats = cell.phase_stats;
        if (stats.empty() && cell.succeeded() > 0) {
            std::vector<Eigen::VectorXd> phis;
            for (const auto& r : cell.runs)
                if (r.ok) phis.push_back(r.phi_hat);
            stats = compute_statistics(phis, Eigen::VectorXd::Zero(phis.front().size()));
        }
        for (std::size_t c = 0; c < mc.num_chirps; ++c)
            for (std::size_t p = 1; p <= mc.phase_order; ++p) {
                const std::size_t i = c * mc.phase_order + p - 1;
                if (i < stats.size()) params[parameter_name(c, p)] = stats_json(stats[i], spec.truth.has_value());
            }
        json amps = json::object();
        std::size_t k = 0;
        for (std::size_t c = 0; c < mc.num_chirps; ++c)
            for (std::size_t a = 0; a <= mc.amp_orders[c]; ++a, ++k)
                if (k < cell.amplitude_stats.size())
                    amps["rho_" + std::to_string(c + 1) + "_" + std::to_string(a)] =
                        stats_json(cell.amplitude_stats[k], true);
        json runs = json::array();
        for (const auto& r : cell.runs) {
            json jr{{"run", r.run}, {"seed", r.seed}, {"status", r.ok ? "ok" : "failed"}};
            if (r.ok) {
                jr["final_J"] = r.final_J;
                jr["iterations"] = r.iterations;
                jr["acceptance_rate"] = r.acceptance_rate;
                jr["best_chain"] = r.best_chain;
                jr["phi_hat"] = std::vector<double>(r.phi_hat.data(), r.phi_hat.data() + r.phi_hat.size());
                jr["rho_hat"] = r.rho_hat;
            } else {
                jr["error"] = r.error;
            }
            runs.push_back(jr);
        }
        cells[std::string(to_string(cell.variant))][snr_key(cell.snr_db)] =
            json{{"parameters", params}, {"amplitudes", amps}, {"succeeded", cell.succeeded()}, {"runs", runs}};
    }
    return json{{"schema", kExperimentSchema}, {"config", spec.echoed}, {"results", cells}};
}

void write_trace_csv(const fs::path& path, const ChainTrace& trace, std::size_t num_chirps,
                     std::size_t phase_order) {
    auto out = open_out(path);
    out << "iter,J,sigma,trace_hess,accepted";
    for (std::size_t c = 0; c < num_chirps; ++c)
        for (std::size_t p = 1; p <= phase_order; ++p) out << ',' << parameter_name(c, p);
    out << '\n';
    char buf[64];
    for (const auto& rec : trace.records) {
        out << rec.iter << ',' << format_g(rec.J) << ',' << format_g(rec.sigma) << ','
            << format_g(rec.trace_estimate) << ',' << (rec.accepted ? 1 : 0);
        for (Eigen::Index i = 0; i < rec.phi.size(); ++i) {
            std::snprintf(buf, sizeof buf, ",%.17g", rec.phi(i));
            out << buf;
        }
        out << '\n';
    }
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

void write_outputs(const ExperimentSpec& spec, const ExperimentResult& result) {
    const fs::path root = spec.output_dir;
    ensure_dir(root / "traces");
    ensure_dir(root / "plots");

    json timing = json::object();
    for (const auto& cell : result.cells) {
        const std::string stem = cell_stem(cell);
        const fs::path plot_dir = root / "plots" / stem;
        ensure_dir(plot_dir);
        json cell_timing = json::array();
        for (const auto& r : cell.runs) {
            cell_timing.push_back(json{{"run", r.run}, {"wall_time_s", r.wall_time_s}});
            if (!r.ok) continue;
            const ChainTrace& best = r.chains[r.best_chain];
            write_trace_csv(root / "traces" / (stem + "_run" + std::to_string(r.run) + ".csv"), best,
                            spec.mixture.num_chirps, spec.mixture.phase_order);
            const std::string suffix = "_run" + std::to_string(r.run) + ".csv";
            auto j_out = open_out(plot_dir / ("J" + suffix));
            auto s_out = open_out(plot_dir / ("sigma" + suffix));
            auto t_out = open_out(plot_dir / ("trace" + suffix));
            j_out << "iter,J\n";
            s_out << "iter,sigma\n";
            t_out << "iter,trace_hess\n";
            for (const auto& rec : best.records) {
                j_out << rec.iter << ',' << format_g(rec.J) << '\n';
                s_out << rec.iter << ',' << format_g(rec.sigma) << '\n';
                t_out << rec.iter << ',' << format_g(rec.trace_estimate) << '\n';
            }
        }
        timing[std::string(to_string(cell.variant))][snr_key(cell.snr_db)] = cell_timing;
    }
    {
        auto out = open_out(root / "summary.json");
        out << summary_json(spec, result).dump(2) << '\n';
    }
    {
        auto out = open_out(root / "timing.json");
        out << timing.dump(2) << '\n';
    }
}

void write_signal_file(const fs::path& path, const ComplexSignal& signal, json header) {
    header["format"] = "chirpest-signal";
    header["version"] = 1;
    header["num_samples"] = signal.size();
    header["sample_rate"] = signal.sample_rate;
    if (path.has_parent_path()) ensure_dir(path.parent_path());
    auto out = open_out(path);
    out << header.dump() << "\nre,im\n";
    char buf[96];
    for (Eigen::Index n = 0; n < signal.samples.size(); ++n) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", signal.samples(n).real(), signal.samples(n).imag());
        out << buf;
    }
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

SignalFile read_signal_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open signal file " + path.string());
    std::string line;
    std::getline(in, line);
    SignalFile file;
    try {
        file.header = json::parse(line);
    } catch (const json::parse_error& e) {
        throw ParseError(path.string() + ": line 1: header is not JSON: " + e.what());
    }
    if (!file.header.is_object() || file.header.value("format", "") != "chirpest-signal")
        throw ValidationError(path.string() + ": line 1: not a chirpest signal header");
    const auto n = file.header.value("num_samples", std::size_t{0});
    file.signal.sample_rate = file.header.value("sample_rate", 0.0);
    if (!(file.signal.sample_rate > 0.0)) throw ValidationError(path.string() + ": header sample_rate must be positive");
    std::getline(in, line);
    if (line != "re,im") throw ValidationError(path.string() + ": line 2: expected column header 're,im'");
    file.signal.samples.resize(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::getline(in, line))
            throw ValidationError(path.string() + ": expected " + std::to_string(n) + " samples, found " +
                                  std::to_string(i));
        double re = 0.0;
        double im = 0.0;
        char comma = 0;
        std::istringstream row(line);
        if (!(row >> re >> comma >> im) || comma != ',')
            throw ValidationError(path.string() + ": line " + std::to_string(i + 3) + ": expected 're,im'");
        file.signal.samples(static_cast<Eigen::Index>(i)) = Complex{re, im};
    }
    return file;
}

GradientCheckReport gradient_check(const ObjectiveContext& ctx, std::size_t points, std::uint64_t seed) {
    GradientCheckReport report;
    report.points = points;
    auto rng = make_stream(seed, 0);
    // Step per order moves the phase at the last sample by step_cycles.
    const auto P = static_cast<Eigen::Index>(ctx.config().phase_order);
    const double t_end = static_cast<double>(ctx.num_samples() - 1) / ctx.config().sample_rate;
    const double step_cycles = 3e-4;
    for (std::size_t k = 0; k < points; ++k) {
        const Eigen::VectorXd phi = draw_initial_phase(ctx.config(), 1.0, rng);
        const Eigen::VectorXd g = objective_gradient(phi, ctx);
        const double floor = 1e-6 * g.cwiseAbs().maxCoeff();
        for (Eigen::Index i = 0; i < phi.size(); ++i) {
            const double h = step_cycles / std::pow(t_end, static_cast<double>(i % P + 1));
            auto at = [&](double offset) {
                Eigen::VectorXd x = phi;
                x(i) += offset;
                return objective_value(x, ctx);
            };
            // Five-point central stencil.
            const double fd = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
            const double rel = std::abs(g(i) - fd) / std::max({std::abs(g(i)), std::abs(fd), floor});
            if (rel > report.max_relative_error) {
                report.max_relative_error = rel;
                report.worst_point = k;
                report.worst_coordinate = static_cast<std::size_t>(i);
            }
        }
    }
    return report;
}

}  // namespace chirpest
