#include "mixica/recording.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace mixica {

void Recording::validate() const
{
    if (n_channels() < 2)
        throw DataError("recording needs at least 2 channels, got " + std::to_string(n_channels()));
    if (n_samples() < n_channels())
        throw DataError("recording has fewer samples (" + std::to_string(n_samples()) +
                        ") than channels (" + std::to_string(n_channels()) + ")");
    if (!(sample_rate_hz > 0.0) || !std::isfinite(sample_rate_hz))
        throw DataError("sample rate must be positive");
    if (epoch_len < 1)
        throw DataError("epoch length must be positive");
    if (epoch_len > 1 && n_samples() % epoch_len != 0)
        throw DataError("sample count " + std::to_string(n_samples()) +
                        " is not a multiple of epoch length " + std::to_string(epoch_len));
    if (!channel_labels.empty() && static_cast<Index>(channel_labels.size()) != n_channels())
        throw DataError("channel label count does not match channel count");
    if (!data.allFinite())
        throw DataError("recording contains non-finite values");
}

Recording make_recording(Matrix data, double sample_rate_hz, Index epoch_len,
                         std::vector<std::string> labels)
{
    Recording rec{std::move(data), sample_rate_hz, epoch_len, std::move(labels)};
    rec.validate();
    return rec;
}

KStat compute_k(Index n_samples, Index n_channels)
{
    if (n_channels <= 0)
        throw DataError("channel count must be positive");
    if (n_samples <= 0)
        throw DataError("sample count must be positive");
    const double c = static_cast<double>(n_channels);
    return {static_cast<double>(n_samples) / (c * c), n_samples, n_channels};
}

Recording remove_epoch_means(const Recording& rec)
{
    rec.validate();
    Recording out = rec;
    const Index len = rec.epoch_len > 1 ? rec.epoch_len : rec.n_samples();
    for (Index e = 0; e < rec.n_samples() / len; ++e) {
        auto block = out.data.middleCols(e * len, len);
        const Vector means = block.rowwise().mean();
        block.colwise() -= means;
    }
    return out;
}

std::pair<SpheringTransform, Recording> sphere(const Recording& rec)
{
    rec.validate();
    const Index n = rec.n_channels();
    const double t = static_cast<double>(rec.n_samples());

    SpheringTransform tf;
    tf.means = rec.data.rowwise().mean();
    const Matrix centered = rec.data.colwise() - tf.means;
    const Matrix cov = (centered * centered.transpose()) / t;

    Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
    if (eig.info() != Eigen::Success)
        throw NumericalError("eigendecomposition of channel covariance failed");
    const Vector& vals = eig.eigenvalues();
    const double vmax = vals.maxCoeff();
    const double floor = 1e-12 * vmax;
    const Index deficient = (vals.array() <= floor).count();
    if (!(vmax > 0.0) || deficient > 0)
        throw NumericalError("channel covariance is rank deficient: " +
                             std::to_string(vmax > 0.0 ? deficient : n) + " of " +
                             std::to_string(n) + " dimensions below tolerance");

    const Matrix& vecs = eig.eigenvectors();
    tf.matrix = vecs * vals.array().rsqrt().matrix().asDiagonal() * vecs.transpose();

    Recording white = rec;
    white.data = tf.matrix * centered;
    return {std::move(tf), std::move(white)};
}

Index epochs_for_samples(double target_samples, Index epoch_len)
{
    if (!(target_samples > 0.0) || epoch_len < 1)
        throw DataError("target sample count and epoch length must be positive");
    // K * C^2 products land a few ulps off integral sample counts.
    const double nearest = std::round(target_samples);
    if (std::abs(target_samples - nearest) <= 1e-9 * std::max(1.0, target_samples))
        target_samples = nearest;
    return static_cast<Index>(std::ceil(target_samples / static_cast<double>(epoch_len)));
}

std::vector<Index> choose_epochs(Index n_epochs, Index count, std::uint64_t seed)
{
    if (count < 1 || count > n_epochs)
        throw DataError("cannot choose " + std::to_string(count) + " of " + std::to_string(n_epochs) +
                        " epochs");
    std::vector<Index> idx(static_cast<std::size_t>(n_epochs));
    std::iota(idx.begin(), idx.end(), Index{0});
    if (count < n_epochs) {
        std::mt19937_64 rng(seed);
        for (Index i = 0; i < count; ++i) {
            std::uniform_int_distribution<Index> pick(i, n_epochs - 1);
            std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
        }
        idx.resize(static_cast<std::size_t>(count));
        std::sort(idx.begin(), idx.end());
    }
    return idx;
}

Recording gather_epochs(const Recording& rec, const std::vector<Index>& epochs, Index block_len)
{
    Recording out;
    out.sample_rate_hz = rec.sample_rate_hz;
    out.epoch_len = rec.epoch_len;
    out.channel_labels = rec.channel_labels;
    out.data.resize(rec.n_channels(), static_cast<Index>(epochs.size()) * block_len);
    Index col = 0;
    for (Index e : epochs) {
        out.data.middleCols(col, block_len) = rec.data.middleCols(e * block_len, block_len);
        col += block_len;
    }
    out.validate();
    return out;
}

Recording decimate_to_samples(const Recording& rec, double target_samples, std::uint64_t seed)
{
    rec.validate();
    const double available = static_cast<double>(rec.n_samples());
    if (!(target_samples > 0.0))
        throw DataError("target sample count must be positive");
    if (target_samples > available * (1.0 + 1e-12))
        throw DataError("requested " + std::to_string(target_samples) + " samples but only " +
                        std::to_string(rec.n_samples()) + " are available");

    const Index block = rec.epoch_len > 1 ? rec.epoch_len : kContinuousBlockLen;
    const Index n_blocks = rec.n_samples() / block;
    const Index needed = epochs_for_samples(target_samples, block);
    if (needed * block >= rec.n_samples())
        return rec;
    if (needed > n_blocks)
        throw DataError("requested sample count needs " + std::to_string(needed) +
                        " blocks but only " + std::to_string(n_blocks) + " are available");
    return gather_epochs(rec, choose_epochs(n_blocks, needed, seed), block);
}

Recording decimate_to_k(const Recording& rec, double target_k, std::uint64_t seed)
{
    if (!(target_k > 0.0))
        throw DataError("target K must be positive");
    const double c = static_cast<double>(rec.n_channels());
    const KStat full = compute_k(rec.n_samples(), rec.n_channels());
    if (target_k > full.k * (1.0 + 1e-12))
        throw DataError("target K " + std::to_string(target_k) + " exceeds available K " +
                        std::to_string(full.k));
    return decimate_to_samples(rec, target_k * c * c, seed);
}

Recording subsample_epochs(const Recording& rec, double fraction, std::uint64_t seed)
{
    rec.validate();
    if (!(fraction > 0.0 && fraction <= 1.0))
        throw DataError("epoch fraction must lie in (0, 1]");
    const Index n = rec.n_epochs();
    const Index keep = static_cast<Index>(std::floor(fraction * static_cast<double>(n) + 1e-9));
    if (keep < 1)
        throw DataError("epoch fraction selects no epochs");
    const Index block = rec.epoch_len > 1 ? rec.epoch_len : 1;
    return gather_epochs(rec, choose_epochs(n, keep, seed), block);
}

} // namespace mixica
