#include "oracles.hpp"

#include "mixica/io.hpp"
#include "mixica/recording.hpp"

#include <doctest.h>

#include <filesystem>
#include <random>
#include <set>

using namespace mixica;

namespace {

Matrix noise(Index rows, Index cols, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix m(rows, cols);
    for (Index c = 0; c < cols; ++c)
        for (Index r = 0; r < rows; ++r)
            m(r, c) = n(rng);
    return m;
}

std::filesystem::path scratch(const std::string& name)
{
    auto p = std::filesystem::temp_directory_path() / ("mixica_test_recording_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

} // namespace

TEST_CASE("recordings enforce whole epochs and finite data")
{
    CHECK_NOTHROW(make_recording(noise(2, 100, 1), 250.0, 50));
    CHECK_THROWS_AS(make_recording(noise(2, 101, 1), 250.0, 50), DataError);
    Matrix bad = noise(2, 10, 1);
    bad(1, 3) = std::nan("");
    CHECK_THROWS_AS(make_recording(bad, 250.0, 1), DataError);
    CHECK_THROWS_AS(make_recording(noise(2, 10, 1), -1.0, 1), DataError);
}

TEST_CASE("K is samples over squared channels")
{
    const KStat k = compute_k(100 * 64, 8);
    CHECK(k.k == doctest::Approx(100.0));
    CHECK_FALSE(k.below());
    CHECK(compute_k(21 * 16, 4).below());
}

TEST_CASE("epoch means are removed per epoch")
{
    Matrix x = noise(3, 40, 2);
    x.array() += 5.0;
    const Recording rec = make_recording(x, 100.0, 10);
    const Recording c = remove_epoch_means(rec);
    for (Index e = 0; e < 4; ++e)
        CHECK(c.data.middleCols(e * 10, 10).rowwise().mean().cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("continuous recordings are centered as one block")
{
    Matrix x = noise(2, 500, 3);
    x.array() += 2.0;
    const Recording c = remove_epoch_means(make_recording(x, 100.0, 1));
    CHECK(c.data.rowwise().mean().cwiseAbs().maxCoeff() < 1e-12);
    CHECK(c.data.cwiseAbs().maxCoeff() > 0.5);
}

TEST_CASE("sphering yields identity covariance")
{
    Matrix mix(3, 3);
    mix << 1, 0.5, 0.2, 0.1, 2, 0.3, -0.4, 0.2, 1;
    const Recording rec = make_recording(mix * noise(3, 20000, 4), 250.0, 1);
    const auto [sph, white] = sphere(rec);
    const Matrix cov = white.data * white.data.transpose() / static_cast<double>(white.n_samples());
    CHECK((cov - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((sph.matrix - sph.matrix.transpose()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("rank-deficient data is a numerical error naming the deficiency")
{
    Matrix x = noise(3, 1000, 5);
    x.row(2) = x.row(0) + x.row(1);
    try {
        sphere(make_recording(x, 250.0, 1));
        FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
        CHECK(std::string(e.what()).find("1") != std::string::npos);
    }
}

TEST_CASE("epoch selection is a sorted, distinct, seeded subset")
{
    const auto a = choose_epochs(100, 30, 7);
    CHECK(a == choose_epochs(100, 30, 7));
    CHECK(a != choose_epochs(100, 30, 8));
    CHECK(a.size() == 30);
    CHECK(std::is_sorted(a.begin(), a.end()));
    CHECK(std::set<Index>(a.begin(), a.end()).size() == 30);
    CHECK(a.back() < 100);
    CHECK_THROWS_AS(choose_epochs(10, 11, 1), DataError);
}

TEST_CASE("decimation keeps ceil(K n^2 / epoch_len) epochs")
{
    SUBCASE("71 channels, 350-sample blocks, K = 1")
    {
        const Recording rec = make_recording(noise(71, 350 * 20, 6), 250.0, 350);
        const Recording d = decimate_to_k(rec, 1.0, 3);
        CHECK(d.n_epochs() == 15);
        CHECK(d.n_samples() == 5250);
        CHECK(d.n_epochs() == oracle::epochs_for_k(1.0, 71, 350));
    }
    SUBCASE("continuous data uses 350-sample blocks")
    {
        const Recording rec = make_recording(noise(4, 10000, 7), 250.0, 1);
        const Recording d = decimate_to_k(rec, 30.0, 1);
        CHECK(d.n_samples() == oracle::epochs_for_k(30.0, 4, 350) * 350);
    }
    SUBCASE("epoched data, several K")
    {
        const Recording rec = make_recording(noise(8, 64 * 100, 8), 250.0, 64);
        for (double k : {1.0, 2.5, 5.0, 30.0, 77.7})
            CHECK(decimate_to_k(rec, k, 2).n_epochs() == oracle::epochs_for_k(k, 8, 64));
    }
    SUBCASE("asking for more than the recording holds is an error")
    {
        const Recording rec = make_recording(noise(4, 640, 9), 250.0, 64);
        CHECK_THROWS_AS(decimate_to_k(rec, 100.0, 1), DataError);
    }
}

TEST_CASE("subsampling keeps floor(fraction * epochs)")
{
    const Recording rec = make_recording(noise(2, 100 * 10, 10), 250.0, 10);
    CHECK(subsample_epochs(rec, 0.75, 1).n_epochs() == 75);
    CHECK(subsample_epochs(rec, 0.755, 1).n_epochs() == 75);
    CHECK(subsample_epochs(rec, 1.0, 1).data == rec.data);
}

TEST_CASE("raw f32 round trip and sidecar validation")
{
    const auto dir = scratch("io");
    Recording rec = make_recording(noise(3, 120, 11).cast<float>().cast<double>(), 512.0, 40, {"a", "b", "c"});
    save_raw_f32(rec, dir / "r.f32");
    const Recording back = load_recording(dir / "r.f32");
    CHECK(back.data == rec.data);
    CHECK(back.sample_rate_hz == 512.0);
    CHECK(back.epoch_len == 40);
    CHECK(back.channel_labels == rec.channel_labels);

    std::filesystem::resize_file(dir / "r.f32", 100);
    try {
        load_recording(dir / "r.f32");
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("metadata mismatch") != std::string::npos);
    }
    CHECK_THROWS_AS(load_recording(dir / "missing.f32"), DataError);
}

TEST_CASE("CSV input with and without header")
{
    const auto dir = scratch("csv");
    write_text(dir / "h.csv", "c1,c2\n1,2\n3,4\n5,7\n");
    write_text(dir / "n.csv", "1,2\n3,4\n5,7\n");
    const Recording h = load_recording(dir / "h.csv");
    const Recording n = load_recording(dir / "n.csv");
    CHECK(h.data == n.data);
    CHECK(h.n_channels() == 2);
    CHECK(h.n_samples() == 3);
    CHECK(h.data(1, 2) == 7.0);
    write_text(dir / "bad.csv", "1,2\n3,x\n");
    CHECK_THROWS_AS(load_recording(dir / "bad.csv"), DataError);
}
