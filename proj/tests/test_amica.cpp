#include "mixica/amica.hpp"
#include "mixica/synth.hpp"

#include <doctest.h>

#include <cmath>

using namespace mixica;

namespace {

Synthetic laplace_mix(Index n, Index t, std::uint64_t seed)
{
    const std::vector<SourceSpec> specs(static_cast<std::size_t>(n), SourceSpec{SourceKind::laplacian});
    SynthOptions opts;
    opts.max_condition = 10.0;
    return generate(n, t, specs, seed, opts);
}

/// Direct evaluation of the mixture log-likelihood, one sample at a time.
double brute_force_ll(const ModelState& st, const Matrix& x)
{
    const Matrix y = st.W * x;
    double total = 0.0;
    for (Index t = 0; t < x.cols(); ++t)
        for (Index i = 0; i < y.rows(); ++i) {
            const SourceDensity& d = st.densities[static_cast<std::size_t>(i)];
            double q = 0.0;
            for (Index j = 0; j < d.size(); ++j) {
                const double u = d.beta(j) * (y(i, t) - d.mu(j));
                q += d.alpha(j) * d.beta(j) * d.rho(j) / (2.0 * std::tgamma(1.0 / d.rho(j))) *
                     std::exp(-std::pow(std::abs(u), d.rho(j)));
            }
            total += std::log(q);
        }
    return std::log(std::abs(st.W.determinant())) + total / static_cast<double>(x.cols());
}

} // namespace

TEST_CASE("configuration defaults and validation")
{
    const AmicaConfig c;
    CHECK(c.num_mix_comp == 3);
    CHECK(c.max_iter == 2000);
    CHECK(c.checkpoint_interval == 10);
    CHECK(c.seed_pair == SeedPair{123456, 654321});
    CHECK_NOTHROW(c.validate());

    AmicaConfig bad = c;
    bad.num_mix_comp = 0;
    CHECK_THROWS_AS(bad.validate(), DataError);
    bad = c;
    bad.rho_min = 2.5;
    CHECK_THROWS_AS(bad.validate(), DataError);
    bad = c;
    bad.checkpoint_interval = 0;
    CHECK_THROWS_AS(bad.validate(), DataError);
}

TEST_CASE("initialization is a pure function of the seed pair")
{
    AmicaConfig c;
    const ModelState a = initialize(c, 4);
    const ModelState b = initialize(c, 4);
    CHECK(a.W == b.W);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(a.densities[i].mu == b.densities[i].mu);
        CHECK(a.densities[i].alpha.sum() == doctest::Approx(1.0));
        CHECK((a.densities[i].rho.array() == c.rho_init).all());
    }
    c.seed_pair = {1, 2};
    CHECK(initialize(c, 4).W != a.W);
}

TEST_CASE("density integrates to one")
{
    const ModelState st = initialize(AmicaConfig{}, 2);
    const SourceDensity& d = st.densities[0];
    double area = 0.0;
    const double h = 1e-3;
    for (double s = -40.0; s < 40.0; s += h)
        area += d.pdf(s) * h;
    CHECK(area == doctest::Approx(1.0).epsilon(1e-4));
    CHECK(std::log(d.pdf(0.3)) == doctest::Approx(d.log_pdf(0.3)));
}

TEST_CASE("log-likelihood matches a direct per-sample evaluation")
{
    const Synthetic s = laplace_mix(3, 3000, 4);
    const auto [sph, white] = sphere(remove_epoch_means(s.recording));
    ModelState st = initialize(AmicaConfig{}, 3);
    CHECK(log_likelihood(st, white.data) == doctest::Approx(brute_force_ll(st, white.data)).epsilon(1e-10));
    AmicaConfig cfg;
    for (int k = 0; k < 5; ++k)
        st = em_newton_step(st, white.data, cfg);
    CHECK(log_likelihood(st, white.data) == doctest::Approx(brute_force_ll(st, white.data)).epsilon(1e-10));
    CHECK(st.iter == 5);
}

TEST_CASE("update direction vanishes near a stationary point")
{
    const Synthetic s = laplace_mix(3, 20000, 5);
    AmicaConfig cfg;
    cfg.max_iter = 200;
    const DecompositionResult r = run(s.recording, cfg);
    const auto [sph, white] = sphere(remove_epoch_means(s.recording));
    const ModelState start = initialize(cfg, 3);
    const double d0 = update_direction(start, white.data, cfg).norm();
    const double d1 = update_direction(r.final_state, white.data, cfg).norm();
    CHECK(d1 < 0.1 * d0);
}

TEST_CASE("run: monotone likelihood, checkpoints, recovery")
{
    const Synthetic s = laplace_mix(3, 20000, 6);
    AmicaConfig cfg;
    cfg.max_iter = 120;
    cfg.checkpoint_interval = 25;
    const DecompositionResult r = run(s.recording, cfg);

    REQUIRE(r.ll_trace.size() == 120);
    double prev = r.initial_ll;
    for (double ll : r.ll_trace) {
        CHECK(ll >= prev - 1e-6);
        prev = ll;
    }
    std::vector<long> iters;
    for (const auto& cp : r.checkpoints)
        iters.push_back(cp.iter);
    CHECK(iters == std::vector<long>{25, 50, 75, 100, 120});
    CHECK(r.initial.iter == 0);
    CHECK(r.step_times.size() == 120);
    CHECK(amari_index(r.unmixing() * s.truth.mixing) < 0.05);

    const Matrix y = unmix(r, s.recording);
    CHECK(y.rows() == 3);
    CHECK(y.cols() == 20000);
}

TEST_CASE("run is bitwise deterministic")
{
    const Synthetic s = laplace_mix(3, 5000, 7);
    AmicaConfig cfg;
    cfg.max_iter = 60;
    const DecompositionResult a = run(s.recording, cfg);
    const DecompositionResult b = run(s.recording, cfg);
    CHECK(a.final_state.W == b.final_state.W);
    CHECK(a.ll_trace == b.ll_trace);
}

TEST_CASE("tolerance stops a converged run early")
{
    const Synthetic s = laplace_mix(2, 5000, 8);
    AmicaConfig cfg;
    cfg.max_iter = 2000;
    cfg.ll_tolerance = 1e-4;
    const DecompositionResult r = run(s.recording, cfg);
    CHECK(r.final_state.iter < 2000);
    CHECK(r.checkpoints.back().iter == r.final_state.iter);
}

TEST_CASE("singular input state is rejected")
{
    const Synthetic s = laplace_mix(2, 2000, 9);
    const auto [sph, white] = sphere(remove_epoch_means(s.recording));
    ModelState st = initialize(AmicaConfig{}, 2);
    st.W.setZero();
    CHECK_THROWS_AS(em_newton_step(st, white.data, AmicaConfig{}), NumericalError);
}

TEST_CASE("a single Gaussian component reaches the Gaussian likelihood bound")
{
    const std::vector<SourceSpec> specs(2, SourceSpec{SourceKind::gaussian});
    const Synthetic s = generate(2, 20000, specs, 10);
    AmicaConfig cfg;
    cfg.num_mix_comp = 1;
    cfg.rho_min = cfg.rho_init = cfg.rho_max = 2.0;
    cfg.max_iter = 100;
    const DecompositionResult r = run(s.recording, cfg);
    const double bound = -2.0 * 0.5 * std::log(2.0 * M_PI * M_E);
    CHECK(std::abs(r.final_state.ll - bound) < 0.05);
    for (const auto& d : r.final_state.densities)
        CHECK(std::abs(d.alpha.sum() - 1.0) < 1e-12);
}

TEST_CASE("unmixed sources map back to the recording")
{
    const Synthetic s = laplace_mix(3, 4000, 11);
    AmicaConfig cfg;
    cfg.max_iter = 20;
    const DecompositionResult r = run(s.recording, cfg);
    const Matrix y = unmix(r, s.recording);
    const Matrix back = (r.unmixing().inverse() * y).colwise() + r.sphering.means;
    CHECK((back - s.recording.data).norm() / s.recording.data.norm() < 1e-8);
}
