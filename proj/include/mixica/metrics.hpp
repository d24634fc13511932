#pragma once

#include "mixica/amica.hpp"
#include "mixica/recording.hpp"
#include "mixica/types.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace mixica {

enum class RangePolicy {
    min_max, ///< histogram spans [min, max]
    robust,  ///< spans the 0.1% .. 99.9% quantiles; outliers land in the edge bins
};

RangePolicy parse_range_policy(const std::string& name);
std::string to_string(RangePolicy p);

struct HistogramSpec {
    Index bins = 512;
    RangePolicy range = RangePolicy::robust;

    static HistogramSpec marginal() { return {512, RangePolicy::robust}; }
    static HistogramSpec joint() { return {64, RangePolicy::robust}; }

    void validate() const;
};

/// Differential entropy estimate in bits.
struct EntropyEstimate {
    double bits = 0.0;
    Index n_samples = 0;
    HistogramSpec spec;
};

struct PmiMatrix {
    Matrix M;                 ///< bits; symmetric, zero diagonal
    double aggregate = 0.0;   ///< mean of the strict upper triangle, negatives clamped to 0
    double aggregate_kbps = 0.0;
};

struct MirValue {
    double bits_per_sample = 0.0;
    double kbits_per_second = 0.0;
};

inline double to_kbps(double bits_per_sample, double sample_rate_hz)
{
    return bits_per_sample * sample_rate_hz / 1000.0;
}

namespace detail {
EntropyEstimate marginal_entropy(std::span<const double> x, const HistogramSpec& spec);
EntropyEstimate joint_entropy(std::span<const double> x, std::span<const double> y,
                              const HistogramSpec& spec);

template <typename Derived>
std::vector<double> to_vector(const Eigen::DenseBase<Derived>& x)
{
    std::vector<double> v(static_cast<std::size_t>(x.size()));
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, 1>>(v.data(), x.size()) =
        x.derived().reshaped().template cast<double>();
    return v;
}
} // namespace detail

/// h = -sum_k (b_k/T) log2(b_k / (T * width_k)) over non-empty bins.
/// Accepts any real Eigen vector expression (a row of a matrix, a map, ...).
template <typename Derived>
EntropyEstimate marginal_entropy(const Eigen::DenseBase<Derived>& x,
                                 const HistogramSpec& spec = HistogramSpec::marginal())
{
    const auto v = detail::to_vector(x);
    return detail::marginal_entropy(v, spec);
}

/// Two-dimensional analogue of marginal_entropy with per-cell area.
template <typename DerivedX, typename DerivedY>
EntropyEstimate joint_entropy(const Eigen::DenseBase<DerivedX>& x, const Eigen::DenseBase<DerivedY>& y,
                              const HistogramSpec& spec = HistogramSpec::joint())
{
    const auto vx = detail::to_vector(x);
    const auto vy = detail::to_vector(y);
    return detail::joint_entropy(vx, vy, spec);
}

/// M_ij = h(x_i) + h(x_j) - h(x_i, x_j). Marginals use `marginal`, pairs use `joint`.
PmiMatrix pairwise_mi(const Matrix& sources, const HistogramSpec& marginal, const HistogramSpec& joint,
                      double sample_rate_hz);

inline PmiMatrix pairwise_mi(const Matrix& sources, double sample_rate_hz)
{
    return pairwise_mi(sources, HistogramSpec::marginal(), HistogramSpec::joint(), sample_rate_hz);
}

/// Mutual information reduction with the data-side entropies computed once.
class MirEvaluator {
public:
    MirEvaluator(Matrix x, HistogramSpec spec, double sample_rate_hz);

    /// log2|det U| + sum h(x_i) - sum h(y_i), y = U x. Throws on singular U.
    MirValue operator()(const Matrix& unmix) const;

    /// Unmixed rows y_i = u_i^T x, each computed independently of its position.
    Matrix apply(const Matrix& unmix) const;

    const Matrix& data() const { return x_; }
    double sum_data_entropy() const { return hx_sum_; }

private:
    Matrix x_;
    HistogramSpec spec_;
    double rate_;
    double hx_sum_ = 0.0;
};

MirValue mir(const Matrix& x, const Matrix& unmix, const HistogramSpec& spec, double sample_rate_hz);

/// Metric values along a decomposition.
struct MetricTrace {
    std::vector<long> iterations;
    std::vector<double> values;

    std::size_t size() const { return values.size(); }
};

/// One row of the exported metric table.
struct MetricPoint {
    long iteration = 0;
    double mir_bits = 0.0;
    double mir_kbps = 0.0;
    double pmi_bits = 0.0;

    friend bool operator==(const MetricPoint&, const MetricPoint&) = default;
};

/// Sensor data the traces are measured on: epoch means removed, then the
/// sphering means subtracted.
Matrix centered_sensor_data(const Recording& rec, const SpheringTransform& sphering);

MetricTrace mir_trace(std::span<const ModelState> checkpoints, const SpheringTransform& sphering,
                      const Recording& rec, const HistogramSpec& spec = HistogramSpec::marginal());

MetricTrace pmi_trace(std::span<const ModelState> checkpoints, const SpheringTransform& sphering,
                      const Recording& rec, const HistogramSpec& marginal = HistogramSpec::marginal(),
                      const HistogramSpec& joint = HistogramSpec::joint());

/// MIR and PMI for every checkpoint, in checkpoint order.
std::vector<MetricPoint> metric_table(std::span<const ModelState> checkpoints,
                                      const SpheringTransform& sphering, const Recording& rec,
                                      const HistogramSpec& marginal = HistogramSpec::marginal(),
                                      const HistogramSpec& joint = HistogramSpec::joint());

/// CSV with header `iteration,mir_bits,mir_kbps,pmi_bits`.
std::string format_metric_csv(std::span<const MetricPoint> rows);
void write_metric_csv(const std::filesystem::path& path, std::span<const MetricPoint> rows);
std::vector<MetricPoint> read_metric_csv(const std::filesystem::path& path);

/// Shortest round-trip decimal form of a double.
std::string format_double(double v);

} // namespace mixica
