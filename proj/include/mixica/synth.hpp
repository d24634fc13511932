#pragma once

#include "mixica/recording.hpp"
#include "mixica/types.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mixica {

enum class SourceKind {
    laplacian,
    uniform,
    gaussian,
    generalized_gaussian, ///< density ~ exp(-|s/scale|^shape)
    bimodal,              ///< equal mixture of N(-scale, (scale/2)^2) and N(scale, (scale/2)^2)
};

struct SourceSpec {
    SourceKind kind = SourceKind::laplacian;
    double scale = 1.0;
    double shape = 1.5; ///< only used by generalized_gaussian

    void validate() const;
};

/// Parses "laplacian", "uniform", "gaussian", "gg:<shape>", "bimodal",
/// optionally suffixed with "*<scale>" (e.g. "gg:1.2*2").
SourceSpec parse_source_spec(const std::string& text);
std::string to_string(const SourceSpec& spec);

struct GroundTruth {
    Matrix mixing;  ///< A, with x = A s
    Matrix sources; ///< n x T
    std::uint64_t seed = 0;
    std::vector<SourceSpec> specs;
};

struct SynthOptions {
    double sample_rate_hz = 250.0;
    Index epoch_len = 1;
    double max_condition = 100.0;
    std::optional<Matrix> mixing; ///< fixed A instead of a random draw
};

struct Synthetic {
    GroundTruth truth;
    Recording recording;
};

/// Independent sources per spec mixed by a random well-conditioned A
/// (entries uniform in [-1, 1], redrawn until cond(A) <= max_condition).
Synthetic generate(Index n, Index t, std::span<const SourceSpec> specs, std::uint64_t seed,
                   const SynthOptions& opts = {});

double condition_number(const Matrix& a);

/// Amari index of P = W S A; 0 iff P is a scaled permutation, at most 1.
double amari_index(const Matrix& p);

nlohmann::json truth_to_json(const GroundTruth& truth);
void save_synthetic(const Synthetic& synth, const std::filesystem::path& dir, const std::string& name);

} // namespace mixica
