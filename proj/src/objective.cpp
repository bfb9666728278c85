#include "chirpest/objective.hpp"

#include <cmath>
#include <numbers>

#include <Eigen/LU>
#include <Eigen/QR>

namespace chirpest {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

void check_phi(const Eigen::VectorXd& phi, const ObjectiveContext& ctx) {
    if (static_cast<std::size_t>(phi.size()) != ctx.dimension())
        throw DimensionError("phi has " + std::to_string(phi.size()) + " entries, expected " +
                             std::to_string(ctx.dimension()));
}

// exp(j 2 pi sum_p phi_{c,p} t^p) for one chirp.
Eigen::VectorXcd carrier(const Eigen::VectorXd& phi, std::size_t chirp, const ObjectiveContext& ctx) {
    const auto P = ctx.config().phase_order;
    Eigen::VectorXd cycles = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ctx.num_samples()));
    for (std::size_t p = 1; p <= P; ++p)
        cycles += phi(static_cast<Eigen::Index>(chirp * P + p - 1)) * ctx.time_power(p);
    Eigen::VectorXcd out(cycles.size());
    for (Eigen::Index n = 0; n < cycles.size(); ++n) {
        // Whole cycles carry no phase; reducing first keeps the trig arguments in [-pi, pi].
        const double frac = cycles(n) - std::nearbyint(cycles(n));
        out(n) = Complex{std::cos(kTwoPi * frac), std::sin(kTwoPi * frac)};
    }
    return out;
}

}  // namespace

double default_regularization(const MixtureConfig& config) {
    double trace = 0.0;
    for (std::size_t n = 0; n < config.num_samples; ++n) {
        const double t = static_cast<double>(n) / config.sample_rate;
        for (const auto a : config.amp_orders)
            for (std::size_t k = 0; k <= a; ++k) trace += std::pow(t, 2.0 * static_cast<double>(k));
    }
    return 1e-8 * trace / static_cast<double>(config.num_basis_columns());
}

ObjectiveContext::ObjectiveContext(ComplexSignal signal, MixtureConfig config)
    : signal_(std::move(signal)), config_(std::move(config)) {
    config_.validate();
    if (signal_.size() != config_.num_samples)
        throw DimensionError("signal length " + std::to_string(signal_.size()) +
                             " does not match num_samples " + std::to_string(config_.num_samples));

    const auto n = static_cast<Eigen::Index>(config_.num_samples);
    time_powers_.reserve(config_.max_power() + 1);
    time_powers_.emplace_back(Eigen::VectorXd::Ones(n));
    Eigen::VectorXd t(n);
    for (Eigen::Index i = 0; i < n; ++i) t(i) = static_cast<double>(i) / config_.sample_rate;
    for (std::size_t p = 1; p <= config_.max_power(); ++p)
        time_powers_.emplace_back(time_powers_.back().cwiseProduct(t));

    gamma_ = config_.regularization.value_or(default_regularization(config_));
    energy_ = signal_.samples.squaredNorm();
}

ObjectiveContext ObjectiveContext::prefix(std::size_t n) const {
    MixtureConfig cfg = config_.with_num_samples(n);
    return ObjectiveContext(truncate_prefix(signal_, n), std::move(cfg));
}

Eigen::MatrixXcd build_basis_matrix(const Eigen::VectorXd& phi, const ObjectiveContext& ctx) {
    check_phi(phi, ctx);
    const auto& cfg = ctx.config();
    Eigen::MatrixXcd H(static_cast<Eigen::Index>(ctx.num_samples()),
                       static_cast<Eigen::Index>(cfg.num_basis_columns()));
    Eigen::Index col = 0;
    for (std::size_t c = 0; c < cfg.num_chirps; ++c) {
        const Eigen::VectorXcd e = carrier(phi, c, ctx);
        for (std::size_t a = 0; a <= cfg.amp_orders[c]; ++a)
            H.col(col++) = e.cwiseProduct(ctx.time_power(a).cast<Complex>());
    }
    return H;
}

Eigen::MatrixXcd build_basis_derivative(const Eigen::VectorXd& phi, std::size_t chirp,
                                        std::size_t power, const ObjectiveContext& ctx) {
    const auto& cfg = ctx.config();
    if (chirp >= cfg.num_chirps || power < 1 || power > cfg.phase_order)
        throw DimensionError("derivative index (c=" + std::to_string(chirp) +
                             ", p=" + std::to_string(power) + ") out of range");
    const Eigen::MatrixXcd H = build_basis_matrix(phi, ctx);
    Eigen::MatrixXcd dH = Eigen::MatrixXcd::Zero(H.rows(), H.cols());
    const auto off = static_cast<Eigen::Index>(cfg.column_offset(chirp));
    const auto width = static_cast<Eigen::Index>(cfg.amp_orders[chirp] + 1);
    const Eigen::VectorXcd scale = Complex{0.0, kTwoPi} * ctx.time_power(power).cast<Complex>();
    dH.middleCols(off, width) = scale.asDiagonal() * H.middleCols(off, width);
    return dH;
}

BasisFactorization solve_amplitudes(Eigen::MatrixXcd H, const ObjectiveContext& ctx) {
    if (H.rows() != ctx.y().size()) throw DimensionError("basis row count does not match signal");
    const auto M = H.cols();
    Eigen::MatrixXcd G = H.adjoint() * H;
    G.diagonal().array() += ctx.gamma();

    BasisFactorization out;
    out.G_solver.compute(G);
    if (out.G_solver.info() != Eigen::Success)
        throw RankDeficiencyError("G = H*H + gamma I is not positive definite");
    // LLT succeeds on numerically singular G; reject pivots that carry no information.
    const Eigen::VectorXd pivots = out.G_solver.matrixL().toDenseMatrix().diagonal().real();
    const double max_diag = G.diagonal().real().maxCoeff();
    if (M > 0 && pivots.cwiseAbs2().minCoeff() <= 1e-13 * max_diag)
        throw RankDeficiencyError("basis matrix is rank deficient and gamma is too small to regularize it");

    out.b_hat = out.G_solver.solve(H.adjoint() * ctx.y());
    out.residual = ctx.y() - H * out.b_hat;
    out.H = std::move(H);
    return out;
}

double objective_value(const Eigen::VectorXd& phi, const ObjectiveContext& ctx) {
    const auto fac = solve_amplitudes(build_basis_matrix(phi, ctx), ctx);
    return ctx.y().dot(fac.residual).real();
}

Evaluation evaluate_objective(const Eigen::VectorXd& phi, const ObjectiveContext& ctx) {
    const auto& cfg = ctx.config();
    const auto fac = solve_amplitudes(build_basis_matrix(phi, ctx), ctx);

    Evaluation out;
    out.value = ctx.y().dot(fac.residual).real();
    out.gradient.resize(static_cast<Eigen::Index>(cfg.num_phase_params()));
    for (std::size_t c = 0; c < cfg.num_chirps; ++c) {
        const auto off = static_cast<Eigen::Index>(cfg.column_offset(c));
        const auto width = static_cast<Eigen::Index>(cfg.amp_orders[c] + 1);
        // dH_{c,p} b = j 2 pi t^p .* (H_c b_c), so only the chirp's fitted component is needed.
        const Eigen::VectorXcd fitted = fac.H.middleCols(off, width) * fac.b_hat.segment(off, width);
        // Re[conj(r) . j 2 pi t^p . s] = -2 pi t^p Im[conj(r) s]
        const Eigen::VectorXd cross = (fac.residual.conjugate().cwiseProduct(fitted)).imag();
        for (std::size_t p = 1; p <= cfg.phase_order; ++p)
            out.gradient(static_cast<Eigen::Index>(c * cfg.phase_order + p - 1)) =
                2.0 * kTwoPi * ctx.time_power(p).dot(cross);
    }
    return out;
}

Eigen::VectorXd objective_gradient(const Eigen::VectorXd& phi, const ObjectiveContext& ctx) {
    return evaluate_objective(phi, ctx).gradient;
}

SmoothedGradientSample smoothed_gradient_sample(const Eigen::VectorXd& theta, double sigma,
                                                std::mt19937_64& rng, const Potential& potential) {
    if (!(sigma >= 0.0)) throw ValidationError("smoothing sigma must be nonnegative");
    std::normal_distribution<double> normal;
    SmoothedGradientSample out;
    out.perturbation.resize(theta.size());
    for (Eigen::Index i = 0; i < theta.size(); ++i) out.perturbation(i) = normal(rng);
    out.sigma_used = sigma;
    auto eval = potential.evaluate(theta + sigma * out.perturbation);
    out.gradient = std::move(eval.gradient);
    out.value_at_perturbed = eval.value;
    return out;
}

SmoothedGradientSample smoothed_gradient_sample(const Eigen::VectorXd& theta, double sigma,
                                                std::uint64_t seed, const Potential& potential) {
    std::mt19937_64 rng(seed);
    return smoothed_gradient_sample(theta, sigma, rng, potential);
}

SmoothedGradientSample smoothed_gradient_sample(const Eigen::VectorXd& theta, double sigma,
                                                std::uint64_t seed, const ObjectiveContext& ctx) {
    return smoothed_gradient_sample(theta, sigma, seed, ChirpObjective(ctx));
}

double hessian_trace_estimate(const SmoothedGradientSample& sample) {
    if (!(sample.sigma_used > 0.0))
        throw ValidationError("Stein trace estimate is undefined for sigma = 0");
    return sample.perturbation.dot(sample.gradient) / sample.sigma_used;
}

AmplitudeEstimate recover_amplitudes(const Eigen::VectorXd& phi_hat, const ObjectiveContext& ctx) {
    const auto& cfg = ctx.config();
    const auto fac = solve_amplitudes(build_basis_matrix(phi_hat, ctx), ctx);

    // Real-constrained fit: [Re H; Im H] rho ~ [Re y; Im y].
    const auto N = fac.H.rows();
    const auto M = fac.H.cols();
    Eigen::MatrixXd stacked(2 * N, M);
    stacked.topRows(N) = fac.H.real();
    stacked.bottomRows(N) = fac.H.imag();
    Eigen::VectorXd rhs(2 * N);
    rhs.head(N) = ctx.y().real();
    rhs.tail(N) = ctx.y().imag();

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(stacked);
    if (qr.rank() < M) throw RankDeficiencyError("real-stacked basis is rank deficient");
    const Eigen::VectorXd rho = qr.solve(rhs);

    AmplitudeEstimate out;
    out.b_hat = fac.b_hat;
    out.residual_energy = fac.residual.squaredNorm();
    for (std::size_t c = 0; c < cfg.num_chirps; ++c) {
        const auto off = static_cast<Eigen::Index>(cfg.column_offset(c));
        std::vector<double> row(cfg.amp_orders[c] + 1);
        for (std::size_t a = 0; a < row.size(); ++a) row[a] = rho(off + static_cast<Eigen::Index>(a));
        out.rho.push_back(std::move(row));
    }
    return out;
}

Eigen::MatrixXd phase_whitening_factor(const MixtureConfig& config, std::size_t horizon) {
    const auto P = static_cast<Eigen::Index>(config.phase_order);
    const auto Nc = static_cast<Eigen::Index>(config.num_chirps);
    if (horizon == 0) throw ValidationError("whitening horizon must be positive");
    Eigen::MatrixXd tp(static_cast<Eigen::Index>(horizon), P);
    for (Eigen::Index n = 0; n < tp.rows(); ++n) {
        const double t = static_cast<double>(n) / config.sample_rate;
        double power = t;
        for (Eigen::Index p = 0; p < P; ++p, power *= t) tp(n, p) = power;
    }
    const Eigen::MatrixXd gram = tp.transpose() * tp / static_cast<double>(horizon);
    Eigen::LLT<Eigen::MatrixXd> llt(gram);
    if (llt.info() != Eigen::Success)
        throw RankDeficiencyError("time-power Gram matrix is singular; horizon too short to whiten");
    const Eigen::MatrixXd block = llt.matrixU();
    Eigen::MatrixXd R = Eigen::MatrixXd::Zero(Nc * P, Nc * P);
    for (Eigen::Index c = 0; c < Nc; ++c) R.block(c * P, c * P, P, P) = block;
    return R;
}

WhitenedObjective::WhitenedObjective(const ObjectiveContext& ctx, std::size_t horizon)
    : ctx_(&ctx),
      R_(phase_whitening_factor(ctx.config(), horizon ? horizon : ctx.num_samples())),
      R_inv_(R_.inverse()) {}

double WhitenedObjective::value(const Eigen::VectorXd& u) const {
    return objective_value(R_inv_ * u, *ctx_);
}

Evaluation WhitenedObjective::evaluate(const Eigen::VectorXd& u) const {
    Evaluation e = evaluate_objective(R_inv_ * u, *ctx_);
    e.gradient = R_inv_.transpose() * e.gradient;
    return e;
}

}  // namespace chirpest
