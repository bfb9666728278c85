#include "chirpest/samplers.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <limits>

namespace chirpest {

namespace {

enum Stream : std::uint64_t { kInitStream = 0, kSmoothingStream = 1, kDiffusionStream = 2, kAcceptStream = 3 };

bool finite(const Evaluation& e) { return std::isfinite(e.value) && e.gradient.allFinite(); }

}  // namespace

std::string_view to_string(Variant v) {
    switch (v) {
        case Variant::LMC: return "LMC";
        case Variant::NA_LMC: return "NA-LMC";
        case Variant::CG_LMC: return "CG-LMC";
    }
    return "?";
}

Variant parse_variant(std::string_view name) {
    std::string key;
    for (const char ch : name) {
        if (ch == '-' || ch == '_') continue;
        key.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(ch))));
    }
    if (key == "LMC") return Variant::LMC;
    if (key == "NALMC") return Variant::NA_LMC;
    if (key == "CGLMC") return Variant::CG_LMC;
    throw ValidationError("unknown algorithm '" + std::string(name) + "' (expected LMC, NA-LMC or CG-LMC)");
}

void SamplerConfig::validate() const {
    if (!(step_size > 0.0)) throw ValidationError("step_size must be positive");
    if (!(inverse_temperature > 0.0)) throw ValidationError("inverse_temperature must be positive");
    if (!(sigma0 >= 0.0) || !(sigma_min >= 0.0) || !(sigma_step >= 0.0))
        throw ValidationError("sigma0, sigma_min and sigma_step must be nonnegative");
    if (sigma_min > sigma0) throw ValidationError("sigma_min must not exceed sigma0");
    if (max_iters == 0) throw ValidationError("max_iters must be positive");
    for (std::size_t i = 1; i < anneal_schedule.size(); ++i)
        if (!(anneal_schedule[i].sigma < anneal_schedule[i - 1].sigma))
            throw ValidationError("anneal_schedule sigma levels must be strictly decreasing");
    for (const auto& level : anneal_schedule)
        if (!(level.sigma >= 0.0)) throw ValidationError("anneal_schedule sigma levels must be nonnegative");
    if (priming.num_starts == 0) throw ValidationError("priming.num_starts must be positive");
    if (priming.num_chains == 0 || priming.num_chains > priming.num_starts)
        throw ValidationError("priming.num_chains must be in [1, num_starts]");
    if (!(priming.box_scale > 0.0)) throw ValidationError("priming.box_scale must be positive");
    if (!(priming.step_size >= 0.0)) throw ValidationError("priming.step_size must be nonnegative");
    for (const auto& st : priming.stages)
        if (st.prefix_length == 0) throw ValidationError("priming stage prefix_length must be positive");
    if (trace_stride == 0) throw ValidationError("trace_stride must be positive");
}

std::vector<PrimingStage> PrimingConfig::effective_stages(std::size_t num_samples) const {
    std::vector<PrimingStage> out;
    if (!stages.empty()) {
        for (auto st : stages) {
            st.prefix_length = std::min(st.prefix_length, num_samples);
            if (st.iters > 0) out.push_back(st);
        }
        return out;
    }
    if (priming_iters == 0) return out;
    PrimingStage st;
    st.prefix_length = std::min(prefix_length ? prefix_length : default_prefix_length(num_samples), num_samples);
    st.iters = priming_iters;
    st.step_size = step_size;
    out.push_back(st);
    return out;
}

std::mt19937_64 make_stream(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream)};
    return std::mt19937_64(seq);
}

Eigen::VectorXd lmc_propose(const Eigen::VectorXd& phi, const Eigen::VectorXd& grad,
                            const SamplerConfig& config, std::mt19937_64& rng) {
    std::normal_distribution<double> normal;
    const double diffusion = std::sqrt(2.0 * config.step_size / config.inverse_temperature);
    Eigen::VectorXd out = phi - config.step_size * grad;
    for (Eigen::Index i = 0; i < out.size(); ++i) out(i) += diffusion * normal(rng);
    return out;
}

Eigen::VectorXd lmc_propose(const ChainState& state, const Eigen::VectorXd& grad,
                            const SamplerConfig& config, std::uint64_t seed) {
    auto rng = make_stream(seed, kDiffusionStream);
    return lmc_propose(state.phi, grad, config, rng);
}

double mala_log_acceptance(const Eigen::VectorXd& phi_old, const Eigen::VectorXd& phi_new,
                           const Eigen::VectorXd& grad_old, const Eigen::VectorXd& grad_new,
                           double J_old, double J_new, const SamplerConfig& config) {
    const double eta = config.step_size;
    const double beta = config.inverse_temperature;
    // log q(to | from) = -beta / (4 eta) |to - from + eta grad(from)|^2 + const
    const double forward = (phi_new - phi_old + eta * grad_old).squaredNorm();
    const double backward = (phi_old - phi_new + eta * grad_new).squaredNorm();
    const double log_ratio = -beta * (J_new - J_old) - beta / (4.0 * eta) * (backward - forward);
    return std::min(0.0, log_ratio);
}

double sigma_update(double sigma, double trace_estimate, const SamplerConfig& config) {
    return std::max(config.sigma_min, sigma - config.sigma_step * std::abs(trace_estimate));
}

double na_lmc_sigma(std::size_t iter, const SamplerConfig& config) {
    if (config.anneal_schedule.empty()) throw ValidationError("NA-LMC needs a nonempty anneal_schedule");
    std::size_t start = 0;
    for (const auto& level : config.anneal_schedule) {
        if (iter < start + level.iters) return level.sigma;
        start += level.iters;
    }
    return config.anneal_schedule.back().sigma;
}

ChainTrace run_chain(Variant variant, const Potential& potential, const Eigen::VectorXd& init,
                     const SamplerConfig& config) {
    config.validate();
    if (static_cast<std::size_t>(init.size()) != potential.dimension())
        throw DimensionError("initial phi has wrong dimension");
    if (!init.allFinite()) throw ValidationError("initial phi must be finite");

    const auto t0 = std::chrono::steady_clock::now();
    auto smoothing_rng = make_stream(config.seed, kSmoothingStream);
    auto diffusion_rng = make_stream(config.seed, kDiffusionStream);
    auto accept_rng = make_stream(config.seed, kAcceptStream);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);

    ChainTrace trace;
    trace.variant = variant;
    trace.records.reserve(config.max_iters / config.trace_stride + 1);

    Eigen::VectorXd theta = init;
    Evaluation current = potential.evaluate(theta);
    double sigma = 0.0;
    if (variant == Variant::CG_LMC) sigma = config.sigma0;
    double smoothed_trace = 0.0;
    bool have_smoothed_trace = false;
    double last_trace = 0.0;

    auto finish = [&] {
        trace.final_state = ChainState{theta, sigma, trace.iterations, current.value, last_trace};
        trace.wall_time_s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return trace;
    };

    if (!finite(current)) {
        trace.aborted = true;
        trace.diagnostic = "non-finite objective at the initial point";
        return finish();
    }

    for (std::size_t k = 0; k < config.max_iters; ++k) {
        if (variant == Variant::NA_LMC) sigma = na_lmc_sigma(k, config);

        // Drift gradient: plain at sigma = 0, otherwise evaluated at the perturbed point.
        Eigen::VectorXd drift;
        Eigen::VectorXd eps;
        double trace_estimate = 0.0;
        if (variant != Variant::LMC && sigma > 0.0) {
            auto sample = smoothed_gradient_sample(theta, sigma, smoothing_rng, potential);
            if (!sample.gradient.allFinite()) {
                trace.aborted = true;
                trace.diagnostic = "non-finite gradient at smoothed point, iteration " + std::to_string(k);
                break;
            }
            trace_estimate = hessian_trace_estimate(sample);
            drift = std::move(sample.gradient);
            eps = std::move(sample.perturbation);
        } else {
            drift = current.gradient;
        }

        const Eigen::VectorXd proposal = lmc_propose(theta, drift, config, diffusion_rng);
        Evaluation candidate = potential.evaluate(proposal);
        if (!finite(candidate)) {
            trace.aborted = true;
            trace.diagnostic = "non-finite objective at proposal, iteration " + std::to_string(k);
            break;
        }

        bool accepted = true;
        if (config.mh_enabled) {
            Eigen::VectorXd reverse_drift;
            if (eps.size() > 0) {
                // Same eps for the reverse move keeps each eps-conditional kernel reversible.
                const Evaluation shifted = potential.evaluate(proposal + sigma * eps);
                reverse_drift = shifted.gradient;
            } else {
                reverse_drift = candidate.gradient;
            }
            const double log_alpha = mala_log_acceptance(theta, proposal, drift, reverse_drift,
                                                         current.value, candidate.value, config);
            accepted = std::log(uniform(accept_rng)) < log_alpha;
        }
        if (accepted) {
            theta = proposal;
            current = std::move(candidate);
            ++trace.accepted_count;
        }
        ++trace.iterations;
        last_trace = trace_estimate;

        if (k % config.trace_stride == 0 || k + 1 == config.max_iters)
            trace.records.push_back(ChainRecord{k, theta, current.value, sigma, trace_estimate, accepted});

        if (variant == Variant::CG_LMC) {
            double fed = trace_estimate;
            if (config.trace_ema) {
                smoothed_trace = have_smoothed_trace ? 0.9 * smoothed_trace + 0.1 * trace_estimate
                                                     : trace_estimate;
                have_smoothed_trace = true;
                fed = smoothed_trace;
            }
            sigma = sigma_update(sigma, fed, config);
        }
    }
    return finish();
}

ChainTrace run_chain(Variant variant, const ObjectiveContext& ctx, const Eigen::VectorXd& init,
                     const SamplerConfig& config) {
    if (!config.whiten) return run_chain(variant, ChirpObjective(ctx), init, config);
    const WhitenedObjective whitened(ctx, config.whiten_horizon);
    ChainTrace trace = run_chain(variant, whitened, whitened.to_coords(init), config);
    for (auto& rec : trace.records) rec.phi = whitened.to_phi(rec.phi);
    trace.final_state.phi = whitened.to_phi(trace.final_state.phi);
    return trace;
}

Eigen::VectorXd draw_initial_phase(const MixtureConfig& config, double box_scale, std::mt19937_64& rng) {
    const double nyquist = config.sample_rate / 2.0;
    const double duration = static_cast<double>(config.num_samples - 1) / config.sample_rate;
    const double span = std::max(duration, 1.0 / config.sample_rate);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    ChirpParams draw;
    draw.phase_coeffs.resize(static_cast<Eigen::Index>(config.num_chirps),
                             static_cast<Eigen::Index>(config.phase_order));
    for (int attempt = 0;; ++attempt) {
        for (Eigen::Index c = 0; c < draw.phase_coeffs.rows(); ++c) {
            draw.phase_coeffs(c, 0) = nyquist * unit(rng);
            for (Eigen::Index p = 1; p < draw.phase_coeffs.cols(); ++p) {
                const double order = static_cast<double>(p + 1);
                const double half_width = box_scale * nyquist / (order * std::pow(span, order - 1.0));
                draw.phase_coeffs(c, p) = half_width * (2.0 * unit(rng) - 1.0);
            }
        }
        if (max_instantaneous_frequency(draw, config) < nyquist) break;
        if (attempt == 10000) {
            // Shrink the higher orders until the bound holds; only reachable with a huge box_scale.
            while (max_instantaneous_frequency(draw, config) >= nyquist)
                draw.phase_coeffs.rightCols(draw.phase_coeffs.cols() - 1) *= 0.5;
            break;
        }
    }
    return draw.flat_phase();
}

std::uint64_t start_seed(std::uint64_t run_seed, std::size_t start) { return run_seed + start; }

SamplerConfig stage_config(const SamplerConfig& base, const PrimingStage& stage) {
    SamplerConfig cfg = base;
    cfg.max_iters = stage.iters;
    cfg.trace_stride = std::max<std::size_t>(stage.iters, 1);
    if (stage.step_size > 0.0) cfg.step_size = stage.step_size;
    if (stage.sigma0 >= 0.0) cfg.sigma0 = stage.sigma0;
    if (stage.sigma_step >= 0.0) cfg.sigma_step = stage.sigma_step;
    if (stage.sigma_min >= 0.0) cfg.sigma_min = stage.sigma_min;
    cfg.sigma_min = std::min(cfg.sigma_min, cfg.sigma0);
    if (!base.anneal_schedule.empty()) {
        // Same schedule shape, compressed into the stage budget and rescaled to the stage sigma0.
        const double scale = base.sigma0 > 0.0 ? cfg.sigma0 / base.sigma0 : 1.0;
        std::size_t total = 0;
        for (const auto& level : base.anneal_schedule) total += level.iters;
        cfg.anneal_schedule.clear();
        for (const auto& level : base.anneal_schedule) {
            const auto iters = total ? level.iters * stage.iters / total : stage.iters;
            cfg.anneal_schedule.push_back(AnnealLevel{level.sigma * scale, std::max<std::size_t>(iters, 1)});
        }
    }
    return cfg;
}

std::vector<PrimedStart> multistart_primed_init(const ObjectiveContext& ctx_full,
                                                const SamplerConfig& config, Variant priming_variant) {
    config.validate();
    const auto& pc = config.priming;
    const ChirpObjective full(ctx_full);

    std::vector<PrimedStart> starts;
    starts.reserve(pc.num_starts);
    for (std::size_t s = 0; s < pc.num_starts; ++s) {
        auto rng = make_stream(start_seed(config.seed, s), kInitStream);
        Eigen::VectorXd phi = draw_initial_phase(ctx_full.config(), pc.box_scale, rng);
        starts.push_back(PrimedStart{std::move(phi), 0.0, s});
    }

    const auto stages = pc.effective_stages(ctx_full.num_samples());
    for (const auto& stage : stages) {
        const ObjectiveContext short_ctx = ctx_full.prefix(stage.prefix_length);
        SamplerConfig prime = stage_config(config, stage);
        if (prime.whiten && prime.whiten_horizon == 0) prime.whiten_horizon = ctx_full.num_samples();
        for (auto& st : starts) {
            prime.seed = start_seed(config.seed, st.start_index);
            const auto trace = run_chain(priming_variant, short_ctx, st.phi, prime);
            if (!trace.aborted) st.phi = trace.final_state.phi;
            // Stage J is parked in full_J until the final ranking overwrites it.
            st.full_J = trace.aborted ? std::numeric_limits<double>::infinity() : trace.final_state.last_J;
        }
        if (stage.keep > 0 && stage.keep < starts.size()) {
            std::stable_sort(starts.begin(), starts.end(),
                             [](const PrimedStart& a, const PrimedStart& b) { return a.full_J < b.full_J; });
            starts.resize(std::max(stage.keep, pc.num_chains));
        }
    }

    for (auto& st : starts) {
        st.full_J = full.value(st.phi);
        if (!std::isfinite(st.full_J)) st.full_J = std::numeric_limits<double>::infinity();
    }
    if (!stages.empty())
        std::stable_sort(starts.begin(), starts.end(), [](const PrimedStart& a, const PrimedStart& b) {
            return a.full_J < b.full_J || (a.full_J == b.full_J && a.start_index < b.start_index);
        });
    return starts;
}

BestRun select_best_run(const std::vector<ChainTrace>& traces, const Potential& potential) {
    if (traces.empty()) throw ValidationError("select_best_run needs at least one trace");
    BestRun best;
    bool have = false;
    for (std::size_t i = 0; i < traces.size(); ++i) {
        const double J = potential.value(traces[i].final_state.phi);
        if (!std::isfinite(J)) continue;
        if (!have || J < best.J) {
            best = BestRun{traces[i].final_state.phi, J, i};
            have = true;
        }
    }
    if (!have) throw ValidationError("every trace ended at a non-finite objective");
    return best;
}

}  // namespace chirpest
