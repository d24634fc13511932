#pragma once

#include "mixica/types.hpp"

#include <string>
#include <utility>
#include <vector>

namespace mixica {

/// Data-sufficiency threshold below which a recording is flagged.
inline constexpr double kRecommendedK = 22.0;

/// Block length used when decimating continuous (epoch_len == 1) data.
inline constexpr Index kContinuousBlockLen = 350;

/// Multichannel recording, channels x samples, with its epoch structure.
///
/// An epoch_len of 1 marks continuous data. Otherwise the sample count must
/// be a whole number of epochs.
struct Recording {
    Matrix data;
    double sample_rate_hz = 250.0;
    Index epoch_len = 1;
    std::vector<std::string> channel_labels;

    Index n_channels() const { return data.rows(); }
    Index n_samples() const { return data.cols(); }
    Index n_epochs() const { return epoch_len > 1 ? n_samples() / epoch_len : n_samples(); }

    /// Throws DataError if any invariant is violated.
    void validate() const;
};

/// Builds and validates a recording.
Recording make_recording(Matrix data, double sample_rate_hz, Index epoch_len,
                         std::vector<std::string> labels = {});

/// Samples per squared channel count.
struct KStat {
    double k = 0.0;
    Index n_samples = 0;
    Index n_channels = 0;

    bool below(double threshold = kRecommendedK) const { return k < threshold; }
};

KStat compute_k(Index n_samples, Index n_channels);

/// Symmetric whitening transform: white = matrix * (x - means).
struct SpheringTransform {
    Matrix matrix;
    Vector means;

    Matrix apply(const Matrix& x) const { return matrix * (x.colwise() - means); }
};

/// Subtracts each channel's mean within every epoch. Continuous recordings
/// are centered as a single block.
Recording remove_epoch_means(const Recording& rec);

/// Centers channels and whitens with the inverse symmetric square root of the
/// channel covariance. Throws NumericalError on rank deficiency.
std::pair<SpheringTransform, Recording> sphere(const Recording& rec);

/// Whole epochs needed to cover target_samples.
Index epochs_for_samples(double target_samples, Index epoch_len);

/// Selects `count` of `n_epochs` indices uniformly without replacement,
/// returned in ascending order. Pure function of its arguments.
std::vector<Index> choose_epochs(Index n_epochs, Index count, std::uint64_t seed);

/// Keeps whole epochs covering target_samples (rounded up to an epoch).
Recording decimate_to_samples(const Recording& rec, double target_samples, std::uint64_t seed);

/// Keeps whole epochs covering target_k * n_channels^2 samples.
Recording decimate_to_k(const Recording& rec, double target_k, std::uint64_t seed);

/// Keeps floor(fraction * n_epochs) randomly chosen epochs.
Recording subsample_epochs(const Recording& rec, double fraction, std::uint64_t seed);

/// Gathers the given epochs (in the given order) into a new recording.
/// `block_len` overrides the recording's epoch length for continuous data.
Recording gather_epochs(const Recording& rec, const std::vector<Index>& epochs, Index block_len);

} // namespace mixica
