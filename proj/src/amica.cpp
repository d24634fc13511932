#include "mixica/amica.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <random>

namespace mixica {
namespace {

constexpr double kTiny = 1e-12;        // floor on |u| before taking logs
constexpr double kWeightFloor = 1e-4;  // floor on |u| inside location weights
constexpr int kMaxHalvings = 5;
constexpr Index kChunk = 2048;
constexpr double kRhoRate = 0.1;
constexpr double kMaxRhoChange = 0.05;
constexpr double kMinNewtonDet = 1e-2; // pairs closer to Gaussian fall back to natural gradient
constexpr double kAlphaFloor = 1e-8;
constexpr double kBetaMin = 1e-4;
constexpr double kBetaMax = 1e4;
constexpr double kMinMass = 1e-10;
const double kLogDetFloor = std::log(1e-300);

double digamma(double x)
{
    double r = 0.0;
    while (x < 6.0) {
        r -= 1.0 / x;
        x += 1.0;
    }
    const double f = 1.0 / (x * x);
    return r + std::log(x) - 0.5 / x -
           f * (1.0 / 12 - f * (1.0 / 120 - f * (1.0 / 252 - f * (1.0 / 240 - f / 132))));
}

double log_norm(double beta, double rho)
{
    return std::log(0.5 * beta * rho) - std::lgamma(1.0 / rho);
}

double log_abs_det(const Matrix& w)
{
    const Eigen::PartialPivLU<Matrix> lu(w);
    double s = 0.0;
    for (Index i = 0; i < w.rows(); ++i)
        s += std::log(std::abs(lu.matrixLU()(i, i)));
    return s;
}

/// Per-source sufficient statistics, all as sample means.
struct SourceStats {
    double mean_log_q = 0.0;
    Vector phi_y;      // E[phi_i(y_i) y_k], k = 1..n
    double kappa = 0;  // E[phi_i^2], stands in for E[phi_i']
    double sigma2 = 0; // E[y_i^2]
    double lambda = 0; // E[(phi_i y_i - 1)^2]
    Vector z;          // E[z_j]
    Vector zw;         // E[z_j w_j], w = |u|^(rho-2)
    Vector zwy;        // E[z_j w_j y]
    Vector zp;         // E[z_j |u|^rho]
    Vector zpl;        // E[z_j |u|^rho log |u|^rho]
};

struct Evaluation {
    bool ok = false;
    Index bad_source = -1;
    double log_det = 0.0;
    double ll = -std::numeric_limits<double>::infinity();
    std::vector<SourceStats> sources;
};

void check_shapes(const ModelState& st, Index rows)
{
    if (st.W.rows() != st.W.cols())
        throw DataError("unmixing matrix must be square");
    if (st.W.rows() != rows)
        throw DataError("data has " + std::to_string(rows) + " channels but model has " +
                        std::to_string(st.W.rows()) + " sources");
    if (static_cast<Index>(st.densities.size()) != st.W.rows())
        throw DataError("model needs one density per source");
}

Evaluation evaluate(const ModelState& st, const Eigen::Ref<const Matrix>& x, bool with_stats)
{
    Evaluation ev;
    const Index n = st.W.rows();
    const Index t = x.cols();
    const double inv_t = 1.0 / static_cast<double>(t);

    ev.log_det = log_abs_det(st.W);
    if (!(ev.log_det > kLogDetFloor))
        return ev;

    // Samples x sources, so each source is a contiguous column.
    const Matrix yt = x.transpose() * st.W.transpose();
    ev.sources.resize(static_cast<std::size_t>(n));

    // Work arrays, chunk samples x components. Chunking keeps them cache resident;
    // the fixed chunk order keeps sums reproducible.
    Eigen::ArrayXXd logp, apow, absu, loga;
    Eigen::ArrayXd top, sum, phi;
    double total = ev.log_det;
    for (Index i = 0; i < n; ++i) {
        const SourceDensity& d = st.densities[static_cast<std::size_t>(i)];
        const Index m = d.size();
        Vector log_coef(m);
        for (Index j = 0; j < m; ++j)
            log_coef(j) = std::log(d.alpha(j)) + log_norm(d.beta(j), d.rho(j));

        SourceStats& s = ev.sources[static_cast<std::size_t>(i)];
        double sum_log_q = 0.0;
        if (with_stats) {
            s.phi_y.setZero(n);
            s.z.setZero(m);
            s.zw.setZero(m);
            s.zwy.setZero(m);
            s.zp.setZero(m);
            s.zpl.setZero(m);
        }

        for (Index c0 = 0; c0 < t; c0 += kChunk) {
            const Index len = std::min(kChunk, t - c0);
            const auto y = yt.col(i).segment(c0, len).array();
            logp.resize(len, m);
            apow.resize(len, m);
            absu.resize(len, m);
            loga.resize(len, m);
            for (Index j = 0; j < m; ++j) {
                absu.col(j) = (d.beta(j) * (y - d.mu(j))).abs().max(kTiny);
                loga.col(j) = absu.col(j).log();
                apow.col(j) = (d.rho(j) * loga.col(j)).exp();
                logp.col(j) = log_coef(j) - apow.col(j);
            }
            top = logp.col(0);
            for (Index j = 1; j < m; ++j)
                top = top.max(logp.col(j));
            // logp becomes exp(logp - top), then the responsibilities.
            sum.setZero(len);
            for (Index j = 0; j < m; ++j) {
                logp.col(j) = (logp.col(j) - top).exp();
                sum += logp.col(j);
            }
            sum_log_q += (top + sum.log()).sum();
            if (!with_stats)
                continue;

            auto& z = logp;
            sum = sum.inverse();
            phi.setZero(len);
            for (Index j = 0; j < m; ++j) {
                z.col(j) *= sum;
                phi += z.col(j) * (d.rho(j) * d.beta(j)) * (y - d.mu(j)).sign() * apow.col(j) / absu.col(j);
            }
            s.phi_y.noalias() += yt.middleRows(c0, len).transpose() * phi.matrix();
            s.kappa += phi.square().sum();
            s.sigma2 += y.square().sum();
            s.lambda += (phi * y - 1.0).square().sum();
            for (Index j = 0; j < m; ++j) {
                const auto zw = z.col(j) * apow.col(j) / absu.col(j).max(kWeightFloor).square();
                const auto zp = z.col(j) * apow.col(j);
                s.z(j) += z.col(j).sum();
                s.zw(j) += zw.sum();
                s.zwy(j) += (zw * y).sum();
                s.zp(j) += zp.sum();
                s.zpl(j) += (zp * loga.col(j)).sum() * d.rho(j);
            }
        }

        s.mean_log_q = sum_log_q * inv_t;
        if (!std::isfinite(s.mean_log_q)) {
            ev.bad_source = i;
            return ev;
        }
        total += s.mean_log_q;
        if (!with_stats)
            continue;
        s.phi_y *= inv_t;
        s.kappa *= inv_t;
        s.sigma2 *= inv_t;
        s.lambda *= inv_t;
        s.z *= inv_t;
        s.zw *= inv_t;
        s.zwy *= inv_t;
        s.zp *= inv_t;
        s.zpl *= inv_t;
        if (!(s.phi_y.allFinite() && std::isfinite(s.kappa) && std::isfinite(s.lambda))) {
            ev.bad_source = i;
            return ev;
        }
    }
    ev.ll = total;
    ev.ok = std::isfinite(total);
    return ev;
}

[[noreturn]] void throw_bad(const Evaluation& ev)
{
    if (!(ev.log_det > kLogDetFloor))
        throw NumericalError("unmixing matrix is singular (|det W| below 1e-300)");
    throw NumericalError("non-finite statistics for source " + std::to_string(ev.bad_source));
}

void normalize_alpha(Vector& alpha)
{
    alpha = alpha.cwiseMax(kAlphaFloor);
    alpha /= alpha.sum();
}

/// M-step targets. With `full` false only weights and scales move, which is
/// a plain EM step and cannot lower the likelihood.
std::vector<SourceDensity> updated_densities(const ModelState& st, const Evaluation& ev,
                                             const AmicaConfig& cfg, bool full)
{
    std::vector<SourceDensity> out = st.densities;
    for (std::size_t i = 0; i < out.size(); ++i) {
        SourceDensity& d = out[i];
        const SourceStats& s = ev.sources[i];
        for (Index j = 0; j < d.size(); ++j) {
            const double mass = s.z(j);
            if (!(mass > kMinMass))
                continue;
            d.alpha(j) = mass;
            const double rho = d.rho(j);
            if (s.zp(j) > 0.0) {
                const double ratio = mass / (rho * s.zp(j));
                d.beta(j) = std::clamp(d.beta(j) * std::pow(ratio, 1.0 / rho), kBetaMin, kBetaMax);
            }
            if (!full)
                continue;
            if (s.zw(j) > 0.0)
                d.mu(j) = s.zwy(j) / s.zw(j);
            const double psi = digamma(1.0 + 1.0 / rho);
            const double delta = kRhoRate * (1.0 - rho * (s.zpl(j) / mass) / psi);
            d.rho(j) = std::clamp(rho + std::clamp(delta, -kMaxRhoChange, kMaxRhoChange), cfg.rho_min,
                                  cfg.rho_max);
        }
        normalize_alpha(d.alpha);
    }
    return out;
}

std::vector<SourceDensity> blend(const std::vector<SourceDensity>& from,
                                 const std::vector<SourceDensity>& to, double f)
{
    if (f == 1.0)
        return to;
    std::vector<SourceDensity> out = from;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i].alpha += f * (to[i].alpha - from[i].alpha);
        out[i].mu += f * (to[i].mu - from[i].mu);
        out[i].beta += f * (to[i].beta - from[i].beta);
        out[i].rho += f * (to[i].rho - from[i].rho);
        normalize_alpha(out[i].alpha);
    }
    return out;
}

Matrix direction(const Evaluation& ev, Index n, bool newton)
{
    Matrix h = Matrix::Identity(n, n);
    for (Index i = 0; i < n; ++i)
        h.row(i) -= ev.sources[static_cast<std::size_t>(i)].phi_y.transpose();
    if (!newton)
        return h;

    Matrix d = h;
    for (Index i = 0; i < n; ++i) {
        const SourceStats& si = ev.sources[static_cast<std::size_t>(i)];
        if (si.lambda > 1e-8)
            d(i, i) = h(i, i) / si.lambda;
        for (Index j = i + 1; j < n; ++j) {
            const SourceStats& sj = ev.sources[static_cast<std::size_t>(j)];
            const double a = si.kappa * sj.sigma2;
            const double b = sj.kappa * si.sigma2;
            const double det = a * b - 1.0;
            if (det > kMinNewtonDet) {
                d(i, j) = (b * h(i, j) - h(j, i)) / det;
                d(j, i) = (a * h(j, i) - h(i, j)) / det;
            }
        }
    }
    return d;
}

struct Stepped {
    ModelState state;
    Evaluation eval;
};

Stepped step(const ModelState& st, const Evaluation& ev, const Eigen::Ref<const Matrix>& x,
             const AmicaConfig& cfg)
{
    const bool newton = st.iter >= cfg.newton_start_iter;
    const double rate = newton ? cfg.newton_step : cfg.base_step;
    const Matrix dw = direction(ev, st.W.rows(), newton) * st.W;
    const auto target = updated_densities(st, ev, cfg, true);

    for (int h = 0; h <= kMaxHalvings; ++h) {
        const double f = std::ldexp(1.0, -h);
        ModelState cand;
        cand.W = st.W + (rate * f) * dw;
        cand.densities = blend(st.densities, target, f);
        cand.iter = st.iter + 1;
        Evaluation ce = evaluate(cand, x, true);
        if (ce.ok && ce.ll >= ev.ll) {
            cand.ll = ce.ll;
            return {std::move(cand), std::move(ce)};
        }
    }

    ModelState cand = st;
    cand.iter = st.iter + 1;
    cand.densities = updated_densities(st, ev, cfg, false);
    Evaluation ce = evaluate(cand, x, true);
    if (ce.ok && ce.ll >= ev.ll) {
        cand.ll = ce.ll;
        return {std::move(cand), std::move(ce)};
    }

    ModelState same = st;
    same.iter = st.iter + 1;
    same.ll = ev.ll;
    return {std::move(same), ev};
}

std::mt19937_64 seeded_rng(const SeedPair& seeds)
{
    std::seed_seq seq{static_cast<std::uint32_t>(seeds.first), static_cast<std::uint32_t>(seeds.first >> 32),
                      static_cast<std::uint32_t>(seeds.second),
                      static_cast<std::uint32_t>(seeds.second >> 32)};
    return std::mt19937_64(seq);
}

} // namespace

void AmicaConfig::validate() const
{
    if (num_mix_comp < 1)
        throw DataError("num_mix_comp must be at least 1");
    if (max_iter < 1)
        throw DataError("max_iter must be at least 1");
    if (checkpoint_interval < 1 || checkpoint_interval > max_iter)
        throw DataError("checkpoint_interval must lie in [1, max_iter]");
    if (!(rho_min > 0.0 && rho_min <= rho_init && rho_init <= rho_max))
        throw DataError("shape bounds must satisfy 0 < rho_min <= rho_init <= rho_max");
    if (!(base_step > 0.0 && base_step <= 1.0) || !(newton_step > 0.0 && newton_step <= 1.0))
        throw DataError("step sizes must lie in (0, 1]");
    if (newton_start_iter < 0)
        throw DataError("newton_start_iter must be nonnegative");
    if (!(ll_tolerance >= 0.0))
        throw DataError("ll_tolerance must be nonnegative");
}

double SourceDensity::log_pdf(double s) const
{
    double top = -std::numeric_limits<double>::infinity();
    Vector terms(size());
    for (Index j = 0; j < size(); ++j) {
        terms(j) = std::log(alpha(j)) + log_norm(beta(j), rho(j)) -
                   std::pow(std::abs(beta(j) * (s - mu(j))), rho(j));
        top = std::max(top, terms(j));
    }
    return top + std::log((terms.array() - top).exp().sum());
}

double SourceDensity::pdf(double s) const { return std::exp(log_pdf(s)); }

ModelState initialize(const AmicaConfig& config, Index n_channels)
{
    config.validate();
    if (n_channels < 2)
        throw DataError("need at least 2 channels, got " + std::to_string(n_channels));

    auto rng = seeded_rng(config.seed_pair);
    std::uniform_real_distribution<double> jitter(-0.05, 0.05);
    std::uniform_real_distribution<double> location(-0.5, 0.5);
    std::uniform_real_distribution<double> scale(-0.1, 0.1);

    ModelState st;
    st.W = Matrix::Identity(n_channels, n_channels);
    for (Index r = 0; r < n_channels; ++r)
        for (Index c = 0; c < n_channels; ++c)
            st.W(r, c) += jitter(rng);

    const Index m = config.num_mix_comp;
    st.densities.resize(static_cast<std::size_t>(n_channels));
    for (auto& d : st.densities) {
        d.alpha = Vector::Constant(m, 1.0 / static_cast<double>(m));
        d.mu.resize(m);
        d.beta.resize(m);
        d.rho = Vector::Constant(m, config.rho_init);
        for (Index j = 0; j < m; ++j) {
            d.mu(j) = location(rng);
            d.beta(j) = 1.0 + scale(rng);
        }
    }
    return st;
}

double log_likelihood(const ModelState& state, const Eigen::Ref<const Matrix>& sphered)
{
    check_shapes(state, sphered.rows());
    const Evaluation ev = evaluate(state, sphered, false);
    if (!ev.ok)
        throw_bad(ev);
    return ev.ll;
}

Matrix update_direction(const ModelState& state, const Eigen::Ref<const Matrix>& sphered,
                        const AmicaConfig& config)
{
    check_shapes(state, sphered.rows());
    const Evaluation ev = evaluate(state, sphered, true);
    if (!ev.ok)
        throw_bad(ev);
    return direction(ev, state.W.rows(), state.iter >= config.newton_start_iter);
}

ModelState em_newton_step(const ModelState& state, const Eigen::Ref<const Matrix>& sphered,
                          const AmicaConfig& config)
{
    config.validate();
    check_shapes(state, sphered.rows());
    const Evaluation ev = evaluate(state, sphered, true);
    if (!ev.ok)
        throw_bad(ev);
    return step(state, ev, sphered, config).state;
}

DecompositionResult run(const Recording& rec, const AmicaConfig& config)
{
    using clock = std::chrono::steady_clock;
    config.validate();

    DecompositionResult out;
    auto [tf, white] = sphere(remove_epoch_means(rec));
    out.sphering = std::move(tf);
    const Matrix& x = white.data;

    ModelState st = initialize(config, rec.n_channels());
    Evaluation ev = evaluate(st, x, true);
    if (!ev.ok)
        throw_bad(ev);
    st.ll = ev.ll;
    out.initial = st;
    out.initial_ll = ev.ll;

    const auto iters = static_cast<std::size_t>(config.max_iter);
    out.ll_trace.reserve(iters);
    out.step_times.reserve(iters);
    for (long k = 1; k <= config.max_iter; ++k) {
        const auto t0 = clock::now();
        Stepped next = step(st, ev, x, config);
        const auto t1 = clock::now();
        st = std::move(next.state);
        ev = std::move(next.eval);
        out.step_times.push_back(std::chrono::duration<double>(t1 - t0).count());
        out.ll_trace.push_back(st.ll);
        if (k % config.checkpoint_interval == 0)
            out.checkpoints.push_back(st);
        if (config.ll_tolerance > 0.0 && k >= 10) {
            const double prior =
                k == 10 ? out.initial_ll : out.ll_trace[static_cast<std::size_t>(k - 11)];
            if (st.ll - prior < config.ll_tolerance)
                break;
        }
    }
    if (out.checkpoints.empty() || out.checkpoints.back().iter != st.iter)
        out.checkpoints.push_back(st);
    out.final_state = std::move(st);
    return out;
}

Matrix unmix(const DecompositionResult& result, const Recording& rec)
{
    const Index n = result.final_state.W.rows();
    if (rec.n_channels() != n || result.sphering.matrix.cols() != n)
        throw DataError("recording has " + std::to_string(rec.n_channels()) +
                        " channels but the decomposition expects " + std::to_string(n));
    return result.unmixing() * (rec.data.colwise() - result.sphering.means);
}

} // namespace mixica
