#include "oracles.hpp"

#include "mixica/metrics.hpp"
#include "mixica/synth.hpp"

#include <doctest.h>

#include <filesystem>
#include <random>

using namespace mixica;

namespace {

Vector gaussian(Index t, std::uint64_t seed, double sigma = 1.0)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, sigma);
    Vector v(t);
    for (Index i = 0; i < t; ++i)
        v(i) = n(rng);
    return v;
}

std::vector<double> as_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

Matrix laplacian_sources(Index n, Index t, std::uint64_t seed)
{
    const std::vector<SourceSpec> specs(static_cast<std::size_t>(n), SourceSpec{SourceKind::laplacian});
    SynthOptions opts;
    opts.mixing = Matrix::Identity(n, n);
    return generate(n, t, specs, seed, opts).truth.sources;
}

} // namespace

TEST_CASE("histogram entropy agrees with a loop-based reference")
{
    const Vector g = gaussian(50000, 1);
    for (Index bins : {16, 64, 512}) {
        for (RangePolicy range : {RangePolicy::robust, RangePolicy::min_max}) {
            const HistogramSpec spec{bins, range};
            const double ref = oracle::histogram_entropy(as_std(g), bins, range == RangePolicy::robust);
            CHECK(marginal_entropy(g, spec).bits == doctest::Approx(ref).epsilon(1e-12));
        }
    }
    const Vector h = gaussian(50000, 2);
    CHECK(joint_entropy(g, h).bits ==
          doctest::Approx(oracle::joint_histogram_entropy(as_std(g), as_std(h), 64, true)).epsilon(1e-12));
}

TEST_CASE("entropy estimates near analytic values")
{
    CHECK(marginal_entropy(gaussian(200000, 3)).bits == doctest::Approx(oracle::gaussian_entropy_bits(1.0)).epsilon(0.02));
    CHECK(marginal_entropy(gaussian(200000, 4, 3.0)).bits ==
          doctest::Approx(oracle::gaussian_entropy_bits(3.0)).epsilon(0.02));
}

TEST_CASE("entropy shifts by log2 of a scale factor")
{
    const Vector g = gaussian(20000, 5);
    const double h1 = marginal_entropy(g).bits;
    const double h4 = marginal_entropy((4.0 * g).eval()).bits;
    CHECK(h4 - h1 == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("entropy accepts Eigen expressions")
{
    Matrix m(2, 1000);
    m.row(0) = gaussian(1000, 6).transpose();
    m.row(1) = gaussian(1000, 7).transpose();
    const Vector r0 = m.row(0).transpose();
    CHECK(marginal_entropy(m.row(0)).bits == marginal_entropy(r0).bits);
    CHECK(joint_entropy(m.row(0), m.row(1)).bits == joint_entropy(r0, Vector(m.row(1).transpose())).bits);
}

TEST_CASE("degenerate inputs are errors")
{
    CHECK_THROWS_AS(marginal_entropy(Vector::Constant(100, 3.0)), DataError);
    CHECK_THROWS_AS(marginal_entropy(Vector::Constant(1, 3.0)), DataError);
    Vector v = gaussian(100, 8);
    v(4) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(marginal_entropy(v), DataError);
    CHECK_THROWS_AS(marginal_entropy(gaussian(100, 9), HistogramSpec{1, RangePolicy::robust}), DataError);
}

TEST_CASE("pairwise MI: symmetric, zero diagonal, near zero for independent sources")
{
    const Matrix s = laplacian_sources(4, 100000, 10);
    const PmiMatrix p = pairwise_mi(s, 250.0);
    CHECK((p.M - p.M.transpose()).cwiseAbs().maxCoeff() == 0.0);
    CHECK(p.M.diagonal().cwiseAbs().maxCoeff() == 0.0);
    CHECK(p.aggregate >= 0.0);
    CHECK(p.aggregate < 0.02);
    CHECK(p.aggregate_kbps == doctest::Approx(p.aggregate * 0.25));
}

TEST_CASE("pairwise MI detects dependence")
{
    Matrix s = laplacian_sources(2, 50000, 11);
    s.row(1) = s.row(0) + 0.3 * s.row(1);
    CHECK(pairwise_mi(s, 250.0).aggregate > 0.5);
}

TEST_CASE("MIR identities")
{
    Matrix a(3, 3);
    a << 1, 0.4, -0.2, 0.3, 1, 0.5, 0.1, -0.6, 1;
    const Matrix x = a * laplacian_sources(3, 30000, 12);
    const MirEvaluator eval(x, HistogramSpec::marginal(), 250.0);

    CHECK(eval(Matrix::Identity(3, 3)).bits_per_sample == 0.0);

    const Matrix w = a.inverse();
    Matrix perm = Matrix::Zero(3, 3);
    perm(0, 2) = perm(1, 0) = perm(2, 1) = 1.0;
    CHECK(eval(perm * w).bits_per_sample == eval(w).bits_per_sample);
    CHECK(eval(w).bits_per_sample > 0.1);

    const Matrix d = Vector(Eigen::Vector3d(2.0, 0.5, 7.0)).asDiagonal();
    CHECK(std::abs(eval(d).bits_per_sample) < 0.02);

    CHECK(eval(w).kbits_per_second == doctest::Approx(eval(w).bits_per_sample * 0.25));
    CHECK_THROWS_AS(eval(Matrix::Zero(3, 3)), NumericalError);
    CHECK(mir(x, w, HistogramSpec::marginal(), 250.0).bits_per_sample == eval(w).bits_per_sample);
}

TEST_CASE("metric CSV round trip")
{
    const std::vector<MetricPoint> rows{{10, 0.5, 0.125, 0.01}, {20, 1.0 / 3.0, 1e-17, std::nan("")}};
    const auto path = std::filesystem::temp_directory_path() / "mixica_test_metric.csv";
    write_metric_csv(path, rows);
    const auto back = read_metric_csv(path);
    REQUIRE(back.size() == 2);
    CHECK(back[0] == rows[0]);
    CHECK(back[1].mir_bits == rows[1].mir_bits);
    CHECK(std::isnan(back[1].pmi_bits));
    CHECK(format_metric_csv(rows).starts_with("iteration,mir_bits,mir_kbps,pmi_bits\n10,0.5,0.125,0.01\n"));
}

TEST_CASE("range policy names")
{
    CHECK(parse_range_policy("robust") == RangePolicy::robust);
    CHECK(parse_range_policy(to_string(RangePolicy::min_max)) == RangePolicy::min_max);
    CHECK_THROWS_AS(parse_range_policy("quantile"), DataError);
}
