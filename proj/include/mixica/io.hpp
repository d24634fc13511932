#pragma once

#include "mixica/amica.hpp"
#include "mixica/metrics.hpp"
#include "mixica/recording.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>

namespace mixica {

enum class Format { raw_f32, csv };

Format parse_format(const std::string& name);
/// Picks the format from the file extension (.f32 or .csv).
Format guess_format(const std::filesystem::path& path);

/// Fallbacks for CSV input without a sidecar. An epoch_len of 0 makes the
/// whole file one epoch.
struct LoadOptions {
    double sample_rate_hz = 250.0;
    Index epoch_len = 0;
};

/// raw-f32: `<name>.f32` little-endian float32, channel-major, plus a
/// `<name>.json` sidecar {channels, samples, sample_rate_hz, epoch_len, labels?}.
/// csv: optional header row, one column per channel, one row per sample. A
/// sidecar next to the CSV, if present, supplies sample rate and epoch length.
Recording load_recording(const std::filesystem::path& path, Format format, const LoadOptions& opts = {});

inline Recording load_recording(const std::filesystem::path& path)
{
    return load_recording(path, guess_format(path));
}

/// Writes `<stem>.f32` and `<stem>.json`; `stem` may carry the .f32 extension.
void save_raw_f32(const Recording& rec, const std::filesystem::path& stem);
void save_csv(const Recording& rec, const std::filesystem::path& path);

std::filesystem::path sidecar_path(const std::filesystem::path& data_path);

// JSON helpers shared by checkpoints, configs and sweep reports.
nlohmann::json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const nlohmann::json& j);
nlohmann::json vector_to_json(const Vector& v);
Vector vector_from_json(const nlohmann::json& j);

nlohmann::json to_json(const AmicaConfig& c);
/// Keys missing from `j` keep the values already in `base`.
AmicaConfig config_from_json(const nlohmann::json& j, AmicaConfig base = {});

/// {"iter", "ll", "W", "sphering", "means", "densities": [{alpha, mu, beta, rho}]}
nlohmann::json checkpoint_to_json(const ModelState& state, const SpheringTransform& sphering);

struct Checkpoint {
    ModelState state;
    SpheringTransform sphering;
};

Checkpoint checkpoint_from_json(const nlohmann::json& j);
void save_checkpoint(const std::filesystem::path& path, const ModelState& state,
                     const SpheringTransform& sphering);
Checkpoint load_checkpoint(const std::filesystem::path& path);

nlohmann::json read_json(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

} // namespace mixica
