#include "oracles.hpp"

#include "mixica/io.hpp"
#include "mixica/metrics.hpp"
#include "mixica/synth.hpp"

#include <doctest.h>

#include <filesystem>

using namespace mixica;

namespace {

std::vector<SourceSpec> all(Index n, SourceSpec s) { return std::vector<SourceSpec>(static_cast<std::size_t>(n), s); }

std::vector<std::vector<double>> rows_of(const Matrix& m)
{
    std::vector<std::vector<double>> out(static_cast<std::size_t>(m.rows()));
    for (Index i = 0; i < m.rows(); ++i)
        for (Index j = 0; j < m.cols(); ++j)
            out[static_cast<std::size_t>(i)].push_back(m(i, j));
    return out;
}

} // namespace

TEST_CASE("source spec parsing round trips")
{
    for (const char* text : {"laplacian", "uniform", "gaussian", "bimodal", "gg:1.5", "gg:0.8*2", "uniform*0.5"})
        CHECK(to_string(parse_source_spec(text)) == text);
    CHECK_THROWS_AS(parse_source_spec("cauchy"), DataError);
    CHECK_THROWS_AS(parse_source_spec("laplacian*-1"), DataError);
    CHECK_THROWS_AS(parse_source_spec("gg:x"), DataError);
}

TEST_CASE("identity mixing reproduces the sources")
{
    SynthOptions opts;
    opts.mixing = Matrix::Identity(3, 3);
    const Synthetic s = generate(3, 1000, all(3, {SourceKind::uniform}), 4, opts);
    CHECK(s.recording.data == s.truth.sources);
}

TEST_CASE("generation is deterministic per seed")
{
    const auto specs = all(4, {SourceKind::laplacian});
    const Synthetic a = generate(4, 2000, specs, 9);
    const Synthetic b = generate(4, 2000, specs, 9);
    const Synthetic c = generate(4, 2000, specs, 10);
    CHECK(a.truth.mixing == b.truth.mixing);
    CHECK(a.truth.sources == b.truth.sources);
    CHECK(a.truth.mixing != c.truth.mixing);
    CHECK(condition_number(a.truth.mixing) <= 100.0);
}

TEST_CASE("laplacian sources are heavy tailed")
{
    const Synthetic s = generate(2, 100000, all(2, {SourceKind::laplacian}), 1);
    const Vector row = s.truth.sources.row(0).transpose();
    const Vector c = row.array() - row.mean();
    const double m2 = c.array().square().mean();
    const double m4 = c.array().pow(4).mean();
    CHECK(m4 / (m2 * m2) - 3.0 > 1.0);
}

TEST_CASE("generated sources pass the pairwise independence check")
{
    std::vector<SourceSpec> specs{{SourceKind::laplacian}, {SourceKind::uniform}, {SourceKind::bimodal},
                                  {SourceKind::generalized_gaussian, 1.0, 0.8}};
    const Synthetic s = generate(4, 100000, specs, 3);
    CHECK(pairwise_mi(s.truth.sources, 250.0).aggregate < 0.02);
}

TEST_CASE("generation preconditions")
{
    CHECK_THROWS_AS(generate(1, 100, all(1, {}), 1), DataError);
    CHECK_THROWS_AS(generate(4, 15, all(4, {}), 1), DataError);
    CHECK_THROWS_AS(generate(4, 100, all(3, {}), 1), DataError);
    SynthOptions tight;
    tight.max_condition = 1.0;
    CHECK_THROWS_AS(generate(4, 100, all(4, {}), 1, tight), NumericalError);
}

TEST_CASE("Amari index examples")
{
    CHECK(amari_index(Matrix::Identity(4, 4)) == 0.0);
    Matrix p = Matrix::Zero(4, 4);
    p(0, 1) = p(1, 3) = p(2, 0) = p(3, 2) = 3.0;
    CHECK(amari_index(p) == 0.0);
    CHECK(amari_index(Matrix::Ones(4, 4)) == doctest::Approx(1.0));

    Matrix q(3, 3);
    q << 1, 0.2, 0.1, -0.3, 2, 0.4, 0.05, 0.1, -1;
    CHECK(amari_index(q) == doctest::Approx(oracle::amari(rows_of(q))));

    Matrix perm = Matrix::Zero(3, 3);
    perm(0, 2) = perm(1, 0) = perm(2, 1) = 1.0;
    CHECK(amari_index(perm * q) == amari_index(q));
    CHECK(amari_index(q * perm) == doctest::Approx(amari_index(q)).epsilon(1e-15));
    const Matrix scaled = Vector(Eigen::Vector3d(2, -5, 0.1)).asDiagonal() * perm;
    CHECK(amari_index(scaled) == 0.0);
    Matrix zero_row = q;
    zero_row.row(1).setZero();
    CHECK_THROWS_AS(amari_index(zero_row), DataError);
}

TEST_CASE("ground truth files")
{
    const auto dir = std::filesystem::temp_directory_path() / "mixica_test_synth";
    std::filesystem::remove_all(dir);
    const Synthetic s = generate(3, 600, all(3, {SourceKind::laplacian}), 2);
    save_synthetic(s, dir, "mix");
    CHECK(std::filesystem::exists(dir / "mix.f32"));
    CHECK(std::filesystem::exists(dir / "mix.json"));
    CHECK(std::filesystem::exists(dir / "mix_sources.f32"));
    const auto truth = read_json(dir / "truth.json");
    CHECK((matrix_from_json(truth.at("mixing")) - s.truth.mixing).cwiseAbs().maxCoeff() < 1e-15);
    CHECK(truth.at("specs").at(0) == "laplacian");
    const Recording back = load_recording(dir / "mix.f32");
    CHECK((back.data - s.recording.data).cwiseAbs().maxCoeff() < 1e-5 * s.recording.data.cwiseAbs().maxCoeff());
}
