#include "mixica/io.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

namespace mixica {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv(const std::string& line)
{
    std::vector<std::string> out;
    std::string field;
    std::istringstream ls(line);
    while (std::getline(ls, field, ','))
        out.push_back(trim(field));
    if (!line.empty() && line.back() == ',')
        out.emplace_back();
    return out;
}

bool parse_number(const std::string& s, double& v)
{
    if (s.empty())
        return false;
    const char* b = s.data();
    const char* e = b + s.size();
    if (*b == '+')
        ++b;
    const auto res = std::from_chars(b, e, v);
    return res.ec == std::errc() && res.ptr == e;
}

template <typename T>
T get_or(const json& j, const char* key, T fallback)
{
    return j.contains(key) && !j.at(key).is_null() ? j.at(key).get<T>() : fallback;
}

} // namespace

Format parse_format(const std::string& name)
{
    if (name == "raw-f32" || name == "f32")
        return Format::raw_f32;
    if (name == "csv")
        return Format::csv;
    throw DataError("unknown format '" + name + "' (expected raw-f32 or csv)");
}

Format guess_format(const fs::path& path)
{
    const auto ext = path.extension().string();
    if (ext == ".f32")
        return Format::raw_f32;
    if (ext == ".csv")
        return Format::csv;
    throw DataError("cannot infer format of " + path.string() + "; pass it explicitly");
}

fs::path sidecar_path(const fs::path& data_path)
{
    fs::path p = data_path;
    return p.replace_extension(".json");
}

json read_json(const fs::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw DataError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw DataError(path.string() + ": invalid JSON: " + e.what());
    }
}

void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw DataError("cannot write " + path.string());
    out << text;
    if (!out)
        throw DataError("failed writing " + path.string());
}

Recording load_recording(const fs::path& path, Format format, const LoadOptions& opts)
{
    if (!fs::exists(path))
        throw DataError("input file not found: " + path.string());

    Recording rec;
    if (format == Format::raw_f32) {
        const fs::path meta_path = sidecar_path(path);
        if (!fs::exists(meta_path))
            throw DataError("missing metadata sidecar " + meta_path.string());
        const json meta = read_json(meta_path);
        Index channels = 0, samples = 0;
        try {
            channels = meta.at("channels").get<Index>();
            samples = meta.at("samples").get<Index>();
            rec.sample_rate_hz = meta.at("sample_rate_hz").get<double>();
            rec.epoch_len = get_or<Index>(meta, "epoch_len", 1);
            rec.channel_labels = get_or<std::vector<std::string>>(meta, "labels", {});
        } catch (const json::exception& e) {
            throw DataError(meta_path.string() + ": bad metadata: " + e.what());
        }
        if (channels <= 0 || samples <= 0)
            throw DataError(meta_path.string() + ": channel and sample counts must be positive");

        const auto expected = static_cast<std::uintmax_t>(channels) * static_cast<std::uintmax_t>(samples) * 4u;
        const auto actual = fs::file_size(path);
        if (actual != expected)
            throw DataError("metadata mismatch: " + path.string() + " has " + std::to_string(actual) +
                            " bytes, sidecar implies " + std::to_string(expected));

        std::ifstream in(path, std::ios::binary);
        std::vector<unsigned char> bytes(static_cast<std::size_t>(expected));
        if (!in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size())))
            throw DataError("failed reading " + path.string());

        rec.data.resize(channels, samples);
        std::size_t off = 0;
        for (Index c = 0; c < channels; ++c)
            for (Index s = 0; s < samples; ++s, off += 4) {
                const std::uint32_t u = std::uint32_t(bytes[off]) | std::uint32_t(bytes[off + 1]) << 8 |
                                        std::uint32_t(bytes[off + 2]) << 16 |
                                        std::uint32_t(bytes[off + 3]) << 24;
                rec.data(c, s) = static_cast<double>(std::bit_cast<float>(u));
            }
    } else {
        std::ifstream in(path);
        if (!in)
            throw DataError("cannot open " + path.string());
        std::vector<std::vector<double>> rows;
        std::string line;
        std::size_t width = 0;
        bool first = true;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (trim(line).empty())
                continue;
            const auto fields = split_csv(line);
            std::vector<double> vals(fields.size());
            bool numeric = true;
            for (std::size_t i = 0; i < fields.size() && numeric; ++i)
                numeric = parse_number(fields[i], vals[i]);
            if (first) {
                width = fields.size();
                first = false;
                if (!numeric) {
                    rec.channel_labels = fields;
                    continue;
                }
            }
            if (!numeric)
                throw DataError(path.string() + ":" + std::to_string(lineno) + ": non-numeric value");
            if (fields.size() != width)
                throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                                std::to_string(width) + " columns, got " + std::to_string(fields.size()));
            rows.push_back(std::move(vals));
        }
        if (rows.empty())
            throw DataError(path.string() + ": no data rows");
        rec.data.resize(static_cast<Index>(width), static_cast<Index>(rows.size()));
        for (std::size_t s = 0; s < rows.size(); ++s)
            for (std::size_t c = 0; c < width; ++c)
                rec.data(static_cast<Index>(c), static_cast<Index>(s)) = rows[s][c];

        rec.sample_rate_hz = opts.sample_rate_hz;
        rec.epoch_len = opts.epoch_len > 0 ? opts.epoch_len : rec.n_samples();
        if (const fs::path meta_path = sidecar_path(path); fs::exists(meta_path)) {
            const json meta = read_json(meta_path);
            rec.sample_rate_hz = get_or<double>(meta, "sample_rate_hz", rec.sample_rate_hz);
            rec.epoch_len = get_or<Index>(meta, "epoch_len", rec.epoch_len);
        }
    }
    rec.validate();
    return rec;
}

void save_raw_f32(const Recording& rec, const fs::path& stem)
{
    rec.validate();
    fs::path data_path = stem;
    data_path.replace_extension(".f32");
    std::vector<unsigned char> bytes(static_cast<std::size_t>(rec.data.size()) * 4u);
    std::size_t off = 0;
    for (Index c = 0; c < rec.n_channels(); ++c)
        for (Index s = 0; s < rec.n_samples(); ++s, off += 4) {
            const auto u = std::bit_cast<std::uint32_t>(static_cast<float>(rec.data(c, s)));
            bytes[off] = static_cast<unsigned char>(u);
            bytes[off + 1] = static_cast<unsigned char>(u >> 8);
            bytes[off + 2] = static_cast<unsigned char>(u >> 16);
            bytes[off + 3] = static_cast<unsigned char>(u >> 24);
        }
    std::ofstream out(data_path, std::ios::binary);
    if (!out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size())))
        throw DataError("cannot write " + data_path.string());

    json meta{{"channels", rec.n_channels()},
              {"samples", rec.n_samples()},
              {"sample_rate_hz", rec.sample_rate_hz},
              {"epoch_len", rec.epoch_len}};
    if (!rec.channel_labels.empty())
        meta["labels"] = rec.channel_labels;
    write_text(sidecar_path(data_path), meta.dump(2) + "\n");
}

void save_csv(const Recording& rec, const fs::path& path)
{
    std::ostringstream os;
    for (Index c = 0; c < rec.n_channels(); ++c) {
        if (c)
            os << ',';
        os << (rec.channel_labels.empty() ? "ch" + std::to_string(c) : rec.channel_labels[static_cast<std::size_t>(c)]);
    }
    os << '\n';
    for (Index s = 0; s < rec.n_samples(); ++s) {
        for (Index c = 0; c < rec.n_channels(); ++c) {
            if (c)
                os << ',';
            os << format_double(rec.data(c, s));
        }
        os << '\n';
    }
    write_text(path, os.str());
}

json matrix_to_json(const Matrix& m)
{
    json rows = json::array();
    for (Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Index c = 0; c < m.cols(); ++c)
            row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

Matrix matrix_from_json(const json& j)
{
    if (!j.is_array() || j.empty())
        throw DataError("expected a non-empty array of rows");
    const auto rows = static_cast<Index>(j.size());
    const auto cols = static_cast<Index>(j.at(0).size());
    Matrix m(rows, cols);
    for (Index r = 0; r < rows; ++r) {
        const json& row = j.at(static_cast<std::size_t>(r));
        if (static_cast<Index>(row.size()) != cols)
            throw DataError("ragged matrix in JSON");
        for (Index c = 0; c < cols; ++c)
            m(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
    }
    return m;
}

json vector_to_json(const Vector& v) { return json(std::vector<double>(v.begin(), v.end())); }

Vector vector_from_json(const json& j)
{
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
}

json to_json(const AmicaConfig& c)
{
    return json{{"num_mix_comp", c.num_mix_comp},
                {"max_iter", c.max_iter},
                {"checkpoint_interval", c.checkpoint_interval},
                {"seed_pair", {c.seed_pair.first, c.seed_pair.second}},
                {"rho_init", c.rho_init},
                {"rho_min", c.rho_min},
                {"rho_max", c.rho_max},
                {"newton_start_iter", c.newton_start_iter},
                {"base_step", c.base_step},
                {"newton_step", c.newton_step},
                {"ll_tolerance", c.ll_tolerance}};
}

AmicaConfig config_from_json(const json& j, AmicaConfig c)
{
    try {
        c.num_mix_comp = get_or(j, "num_mix_comp", c.num_mix_comp);
        c.max_iter = get_or(j, "max_iter", c.max_iter);
        c.checkpoint_interval = get_or(j, "checkpoint_interval", c.checkpoint_interval);
        if (j.contains("seed_pair")) {
            const auto& s = j.at("seed_pair");
            if (!s.is_array() || s.size() != 2)
                throw DataError("seed_pair must be a two-element array");
            c.seed_pair = {s.at(0).get<std::uint64_t>(), s.at(1).get<std::uint64_t>()};
        }
        c.rho_init = get_or(j, "rho_init", c.rho_init);
        c.rho_min = get_or(j, "rho_min", c.rho_min);
        c.rho_max = get_or(j, "rho_max", c.rho_max);
        c.newton_start_iter = get_or(j, "newton_start_iter", c.newton_start_iter);
        c.base_step = get_or(j, "base_step", c.base_step);
        c.newton_step = get_or(j, "newton_step", c.newton_step);
        c.ll_tolerance = get_or(j, "ll_tolerance", c.ll_tolerance);
    } catch (const json::exception& e) {
        throw DataError(std::string("bad configuration: ") + e.what());
    }
    return c;
}

json checkpoint_to_json(const ModelState& state, const SpheringTransform& sphering)
{
    json dens = json::array();
    for (const SourceDensity& d : state.densities)
        dens.push_back({{"alpha", vector_to_json(d.alpha)},
                        {"mu", vector_to_json(d.mu)},
                        {"beta", vector_to_json(d.beta)},
                        {"rho", vector_to_json(d.rho)}});
    return json{{"iter", state.iter},
                {"ll", state.ll},
                {"W", matrix_to_json(state.W)},
                {"sphering", matrix_to_json(sphering.matrix)},
                {"means", vector_to_json(sphering.means)},
                {"densities", std::move(dens)}};
}

Checkpoint checkpoint_from_json(const json& j)
{
    Checkpoint cp;
    try {
        cp.state.iter = j.at("iter").get<long>();
        cp.state.ll = get_or<double>(j, "ll", 0.0);
        cp.state.W = matrix_from_json(j.at("W"));
        cp.sphering.matrix = matrix_from_json(j.at("sphering"));
        cp.sphering.means = j.contains("means") ? vector_from_json(j.at("means"))
                                                : Vector::Zero(cp.sphering.matrix.rows());
        for (const json& d : j.at("densities"))
            cp.state.densities.push_back({vector_from_json(d.at("alpha")), vector_from_json(d.at("mu")),
                                          vector_from_json(d.at("beta")), vector_from_json(d.at("rho"))});
    } catch (const json::exception& e) {
        throw DataError(std::string("bad checkpoint: ") + e.what());
    }
    const Index n = cp.state.W.rows();
    if (cp.state.W.cols() != n || cp.sphering.matrix.rows() != n || cp.sphering.matrix.cols() != n ||
        cp.sphering.means.size() != n)
        throw DataError("checkpoint matrices have inconsistent shapes");
    return cp;
}

void save_checkpoint(const fs::path& path, const ModelState& state, const SpheringTransform& sphering)
{
    write_text(path, checkpoint_to_json(state, sphering).dump() + "\n");
}

Checkpoint load_checkpoint(const fs::path& path) { return checkpoint_from_json(read_json(path)); }

} // namespace mixica
