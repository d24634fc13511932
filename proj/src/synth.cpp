#include "mixica/synth.hpp"

#include "mixica/io.hpp"

#include <cmath>
#include <random>

namespace mixica {
namespace {

std::mt19937_64 stream(std::uint64_t seed, std::uint32_t id)
{
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), id};
    return std::mt19937_64(seq);
}

double draw(const SourceSpec& spec, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const auto sign = [&] { return unit(rng) < 0.5 ? -1.0 : 1.0; };
    switch (spec.kind) {
    case SourceKind::laplacian:
        return sign() * std::exponential_distribution<double>(1.0 / spec.scale)(rng);
    case SourceKind::uniform:
        return std::uniform_real_distribution<double>(-spec.scale, spec.scale)(rng);
    case SourceKind::gaussian:
        return std::normal_distribution<double>(0.0, spec.scale)(rng);
    case SourceKind::generalized_gaussian: {
        const double g = std::gamma_distribution<double>(1.0 / spec.shape, 1.0)(rng);
        return sign() * spec.scale * std::pow(g, 1.0 / spec.shape);
    }
    case SourceKind::bimodal:
        return sign() * spec.scale + std::normal_distribution<double>(0.0, 0.5 * spec.scale)(rng);
    }
    return 0.0;
}

} // namespace

void SourceSpec::validate() const
{
    if (!(scale > 0.0) || !std::isfinite(scale))
        throw DataError("source scale must be positive");
    if (kind == SourceKind::generalized_gaussian && !(shape > 0.0 && std::isfinite(shape)))
        throw DataError("generalized Gaussian shape must be positive");
}

SourceSpec parse_source_spec(const std::string& text)
{
    SourceSpec spec;
    std::string body = text;
    if (const auto star = body.find('*'); star != std::string::npos) {
        try {
            spec.scale = std::stod(body.substr(star + 1));
        } catch (const std::exception&) {
            throw DataError("bad source scale in '" + text + "'");
        }
        body = body.substr(0, star);
    }
    if (body == "laplacian")
        spec.kind = SourceKind::laplacian;
    else if (body == "uniform")
        spec.kind = SourceKind::uniform;
    else if (body == "gaussian")
        spec.kind = SourceKind::gaussian;
    else if (body == "bimodal")
        spec.kind = SourceKind::bimodal;
    else if (body.rfind("gg:", 0) == 0) {
        spec.kind = SourceKind::generalized_gaussian;
        try {
            spec.shape = std::stod(body.substr(3));
        } catch (const std::exception&) {
            throw DataError("bad generalized Gaussian shape in '" + text + "'");
        }
    } else
        throw DataError("unknown source kind '" + text + "'");
    spec.validate();
    return spec;
}

std::string to_string(const SourceSpec& spec)
{
    std::string s;
    switch (spec.kind) {
    case SourceKind::laplacian: s = "laplacian"; break;
    case SourceKind::uniform: s = "uniform"; break;
    case SourceKind::gaussian: s = "gaussian"; break;
    case SourceKind::generalized_gaussian: s = "gg:" + format_double(spec.shape); break;
    case SourceKind::bimodal: s = "bimodal"; break;
    }
    if (spec.scale != 1.0)
        s += "*" + format_double(spec.scale);
    return s;
}

double condition_number(const Matrix& a)
{
    const Eigen::JacobiSVD<Matrix> svd(a);
    const Vector& sv = svd.singularValues();
    const double smin = sv(sv.size() - 1);
    return smin > 0.0 ? sv(0) / smin : std::numeric_limits<double>::infinity();
}

Synthetic generate(Index n, Index t, std::span<const SourceSpec> specs, std::uint64_t seed,
                   const SynthOptions& opts)
{
    if (n < 2)
        throw DataError("need at least 2 sources");
    if (t < n * n)
        throw DataError("need at least n^2 = " + std::to_string(n * n) + " samples");
    if (static_cast<Index>(specs.size()) != n)
        throw DataError("need one source spec per channel");
    for (const auto& s : specs)
        s.validate();

    Synthetic out;
    out.truth.seed = seed;
    out.truth.specs.assign(specs.begin(), specs.end());

    if (opts.mixing) {
        if (opts.mixing->rows() != n || opts.mixing->cols() != n)
            throw DataError("mixing matrix must be n x n");
        out.truth.mixing = *opts.mixing;
    } else {
        auto rng = stream(seed, 1);
        std::uniform_real_distribution<double> entry(-1.0, 1.0);
        bool found = false;
        for (int attempt = 0; attempt < 100 && !found; ++attempt) {
            Matrix a(n, n);
            for (Index r = 0; r < n; ++r)
                for (Index c = 0; c < n; ++c)
                    a(r, c) = entry(rng);
            if (condition_number(a) <= opts.max_condition) {
                out.truth.mixing = std::move(a);
                found = true;
            }
        }
        if (!found)
            throw NumericalError("no mixing matrix with condition <= " + format_double(opts.max_condition) +
                                 " after 100 draws");
    }

    auto rng = stream(seed, 0);
    out.truth.sources.resize(n, t);
    for (Index i = 0; i < n; ++i)
        for (Index s = 0; s < t; ++s)
            out.truth.sources(i, s) = draw(specs[static_cast<std::size_t>(i)], rng);

    out.recording = make_recording(out.truth.mixing * out.truth.sources, opts.sample_rate_hz, opts.epoch_len);
    return out;
}

double amari_index(const Matrix& p)
{
    const Index n = p.rows();
    if (n < 2 || p.cols() != n)
        throw DataError("Amari index needs a square matrix of size >= 2");
    if (!p.allFinite())
        throw DataError("Amari index needs a finite matrix");
    const Matrix a = p.cwiseAbs();
    double rows = 0.0, cols = 0.0;
    for (Index i = 0; i < n; ++i) {
        const double rmax = a.row(i).maxCoeff();
        const double cmax = a.col(i).maxCoeff();
        if (rmax == 0.0 || cmax == 0.0)
            throw DataError("Amari index undefined for an all-zero row or column");
        rows += (a.row(i).sum() / rmax - 1.0) / static_cast<double>(n - 1);
        cols += (a.col(i).sum() / cmax - 1.0) / static_cast<double>(n - 1);
    }
    return (rows + cols) / (2.0 * static_cast<double>(n));
}

nlohmann::json truth_to_json(const GroundTruth& truth)
{
    nlohmann::json specs = nlohmann::json::array();
    for (const auto& s : truth.specs)
        specs.push_back(to_string(s));
    return {{"seed", truth.seed},
            {"channels", truth.sources.rows()},
            {"samples", truth.sources.cols()},
            {"mixing", matrix_to_json(truth.mixing)},
            {"specs", std::move(specs)}};
}

void save_synthetic(const Synthetic& synth, const std::filesystem::path& dir, const std::string& name)
{
    std::filesystem::create_directories(dir);
    save_raw_f32(synth.recording, dir / (name + ".f32"));
    Recording sources = synth.recording;
    sources.data = synth.truth.sources;
    save_raw_f32(sources, dir / (name + "_sources.f32"));
    write_text(dir / "truth.json", truth_to_json(synth.truth).dump(2) + "\n");
}

} // namespace mixica
