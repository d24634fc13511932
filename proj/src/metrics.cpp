#include "mixica/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace mixica {
namespace {

struct Axis {
    double lo = 0.0;
    double width = 1.0;
    Index bins = 1;

    Index operator()(double v) const
    {
        const double f = (v - lo) / width;
        if (!(f >= 0.0))
            return 0;
        return std::min(static_cast<Index>(f), bins - 1);
    }
};

Axis make_axis(std::span<const double> x, const HistogramSpec& spec)
{
    spec.validate();
    if (x.size() < 2)
        throw DataError("entropy estimate needs at least 2 samples");
    const auto [mn, mx] = std::minmax_element(x.begin(), x.end());
    if (!std::isfinite(*mn) || !std::isfinite(*mx) ||
        !std::all_of(x.begin(), x.end(), [](double v) { return std::isfinite(v); }))
        throw DataError("entropy estimate needs finite samples");
    if (*mn == *mx)
        throw DataError("degenerate distribution: all samples identical");

    double lo = *mn;
    double hi = *mx;
    if (spec.range == RangePolicy::robust) {
        std::vector<double> sorted(x.begin(), x.end());
        const auto t = sorted.size();
        const auto k = static_cast<std::size_t>(std::floor(0.001 * static_cast<double>(t - 1)));
        std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k), sorted.end());
        const double qlo = sorted[k];
        std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(t - 1 - k), sorted.end());
        const double qhi = sorted[t - 1 - k];
        if (qhi > qlo) {
            lo = qlo;
            hi = qhi;
        }
    }
    return {lo, (hi - lo) / static_cast<double>(spec.bins), spec.bins};
}

double entropy_from_counts(const std::vector<Index>& counts, double t, double cell)
{
    double h = 0.0;
    for (Index b : counts) {
        if (b == 0)
            continue;
        const double p = static_cast<double>(b) / t;
        h -= p * std::log2(p / cell);
    }
    return h;
}

double joint_bits(std::span<const double> x, const Axis& ax, std::span<const double> y, const Axis& ay)
{
    std::vector<Index> counts(static_cast<std::size_t>(ax.bins * ay.bins), 0);
    for (std::size_t t = 0; t < x.size(); ++t)
        ++counts[static_cast<std::size_t>(ax(x[t]) * ay.bins + ay(y[t]))];
    return entropy_from_counts(counts, static_cast<double>(x.size()), ax.width * ay.width);
}

double marginal_bits(std::span<const double> x, const Axis& ax)
{
    std::vector<Index> counts(static_cast<std::size_t>(ax.bins), 0);
    for (double v : x)
        ++counts[static_cast<std::size_t>(ax(v))];
    return entropy_from_counts(counts, static_cast<double>(x.size()), ax.width);
}

double sorted_sum(std::vector<double> v)
{
    std::sort(v.begin(), v.end());
    return std::accumulate(v.begin(), v.end(), 0.0);
}

std::vector<double> row_copy(const Matrix& m, Index i)
{
    return detail::to_vector(m.row(i));
}

/// log2|det U| computed on a canonical row order so row permutations of U
/// give bit-identical results.
double log2_abs_det(const Matrix& u)
{
    std::vector<Index> order(static_cast<std::size_t>(u.rows()));
    std::iota(order.begin(), order.end(), Index{0});
    std::sort(order.begin(), order.end(), [&](Index a, Index b) {
        for (Index c = 0; c < u.cols(); ++c)
            if (u(a, c) != u(b, c))
                return u(a, c) < u(b, c);
        return false;
    });
    Matrix sorted(u.rows(), u.cols());
    for (Index r = 0; r < u.rows(); ++r)
        sorted.row(r) = u.row(order[static_cast<std::size_t>(r)]);
    const Eigen::PartialPivLU<Matrix> lu(sorted);
    double s = 0.0;
    for (Index i = 0; i < u.rows(); ++i)
        s += std::log2(std::abs(lu.matrixLU()(i, i)));
    if (!(s > std::log2(1e-300)))
        throw NumericalError("unmixing matrix is singular");
    return s;
}

} // namespace

RangePolicy parse_range_policy(const std::string& name)
{
    if (name == "robust")
        return RangePolicy::robust;
    if (name == "min-max" || name == "minmax")
        return RangePolicy::min_max;
    throw DataError("unknown range policy '" + name + "' (expected robust or min-max)");
}

std::string to_string(RangePolicy p) { return p == RangePolicy::robust ? "robust" : "min-max"; }

void HistogramSpec::validate() const
{
    if (bins < 2)
        throw DataError("histogram needs at least 2 bins");
}

namespace detail {

EntropyEstimate marginal_entropy(std::span<const double> x, const HistogramSpec& spec)
{
    const Axis ax = make_axis(x, spec);
    return {marginal_bits(x, ax), static_cast<Index>(x.size()), spec};
}

EntropyEstimate joint_entropy(std::span<const double> x, std::span<const double> y,
                              const HistogramSpec& spec)
{
    if (x.size() != y.size())
        throw DataError("joint entropy needs equal-length inputs");
    const Axis ax = make_axis(x, spec);
    const Axis ay = make_axis(y, spec);
    return {joint_bits(x, ax, y, ay), static_cast<Index>(x.size()), spec};
}

} // namespace detail

PmiMatrix pairwise_mi(const Matrix& sources, const HistogramSpec& marginal, const HistogramSpec& joint,
                      double sample_rate_hz)
{
    const Index n = sources.rows();
    if (n < 2 || sources.cols() < 2)
        throw DataError("pairwise MI needs at least 2 rows and 2 samples");

    std::vector<std::vector<double>> rows;
    std::vector<double> h(static_cast<std::size_t>(n));
    std::vector<Axis> axes;
    rows.reserve(static_cast<std::size_t>(n));
    axes.reserve(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
        rows.push_back(row_copy(sources, i));
        try {
            h[static_cast<std::size_t>(i)] = detail::marginal_entropy(rows.back(), marginal).bits;
            axes.push_back(make_axis(rows.back(), joint));
        } catch (const DataError& e) {
            throw DataError("row " + std::to_string(i) + ": " + e.what());
        }
    }

    PmiMatrix out;
    out.M = Matrix::Zero(n, n);
    double sum = 0.0;
    for (Index i = 0; i < n; ++i) {
        const auto ui = static_cast<std::size_t>(i);
        for (Index j = i + 1; j < n; ++j) {
            const auto uj = static_cast<std::size_t>(j);
            const double mij = h[ui] + h[uj] - joint_bits(rows[ui], axes[ui], rows[uj], axes[uj]);
            out.M(i, j) = mij;
            out.M(j, i) = mij;
            sum += std::max(mij, 0.0);
        }
    }
    out.aggregate = sum / (0.5 * static_cast<double>(n * (n - 1)));
    out.aggregate_kbps = to_kbps(out.aggregate, sample_rate_hz);
    return out;
}

MirEvaluator::MirEvaluator(Matrix x, HistogramSpec spec, double sample_rate_hz)
    : x_(std::move(x)), spec_(spec), rate_(sample_rate_hz)
{
    std::vector<double> h;
    for (Index i = 0; i < x_.rows(); ++i)
        h.push_back(detail::marginal_entropy(row_copy(x_, i), spec_).bits);
    hx_sum_ = sorted_sum(std::move(h));
}

Matrix MirEvaluator::apply(const Matrix& unmix) const
{
    if (unmix.rows() != x_.rows() || unmix.cols() != x_.rows())
        throw DataError("unmixing matrix must be " + std::to_string(x_.rows()) + " x " +
                        std::to_string(x_.rows()));
    Matrix y(unmix.rows(), x_.cols());
    for (Index i = 0; i < unmix.rows(); ++i) {
        const RowVector u = unmix.row(i);
        const RowVector yi = u * x_;
        y.row(i) = yi;
    }
    return y;
}

MirValue MirEvaluator::operator()(const Matrix& unmix) const
{
    const Matrix y = apply(unmix);
    const double logdet = log2_abs_det(unmix);
    std::vector<double> h;
    for (Index i = 0; i < y.rows(); ++i)
        h.push_back(detail::marginal_entropy(row_copy(y, i), spec_).bits);
    const double bits = logdet + hx_sum_ - sorted_sum(std::move(h));
    return {bits, to_kbps(bits, rate_)};
}

MirValue mir(const Matrix& x, const Matrix& unmix, const HistogramSpec& spec, double sample_rate_hz)
{
    return MirEvaluator(x, spec, sample_rate_hz)(unmix);
}

Matrix centered_sensor_data(const Recording& rec, const SpheringTransform& sphering)
{
    if (sphering.means.size() != rec.n_channels())
        throw DataError("sphering transform does not match the recording's channel count");
    return remove_epoch_means(rec).data.colwise() - sphering.means;
}

MetricTrace mir_trace(std::span<const ModelState> checkpoints, const SpheringTransform& sphering,
                      const Recording& rec, const HistogramSpec& spec)
{
    if (checkpoints.empty())
        throw DataError("no checkpoints to evaluate");
    const MirEvaluator eval(centered_sensor_data(rec, sphering), spec, rec.sample_rate_hz);
    MetricTrace out;
    for (const ModelState& st : checkpoints) {
        out.iterations.push_back(st.iter);
        out.values.push_back(eval(st.W * sphering.matrix).bits_per_sample);
    }
    return out;
}

MetricTrace pmi_trace(std::span<const ModelState> checkpoints, const SpheringTransform& sphering,
                      const Recording& rec, const HistogramSpec& marginal, const HistogramSpec& joint)
{
    if (checkpoints.empty())
        throw DataError("no checkpoints to evaluate");
    const Matrix x = centered_sensor_data(rec, sphering);
    MetricTrace out;
    for (const ModelState& st : checkpoints) {
        out.iterations.push_back(st.iter);
        out.values.push_back(
            pairwise_mi(st.W * sphering.matrix * x, marginal, joint, rec.sample_rate_hz).aggregate);
    }
    return out;
}

std::vector<MetricPoint> metric_table(std::span<const ModelState> checkpoints,
                                      const SpheringTransform& sphering, const Recording& rec,
                                      const HistogramSpec& marginal, const HistogramSpec& joint)
{
    if (checkpoints.empty())
        throw DataError("no checkpoints to evaluate");
    const MirEvaluator eval(centered_sensor_data(rec, sphering), marginal, rec.sample_rate_hz);
    std::vector<MetricPoint> out;
    for (const ModelState& st : checkpoints) {
        const Matrix u = st.W * sphering.matrix;
        const MirValue m = eval(u);
        const PmiMatrix p = pairwise_mi(eval.apply(u), marginal, joint, rec.sample_rate_hz);
        out.push_back({st.iter, m.bits_per_sample, m.kbits_per_second, p.aggregate});
    }
    return out;
}

std::string format_double(double v)
{
    if (std::isnan(v))
        return "nan";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string format_metric_csv(std::span<const MetricPoint> rows)
{
    std::ostringstream os;
    os << "iteration,mir_bits,mir_kbps,pmi_bits\n";
    for (const MetricPoint& p : rows)
        os << p.iteration << ',' << format_double(p.mir_bits) << ',' << format_double(p.mir_kbps) << ','
           << format_double(p.pmi_bits) << '\n';
    return os.str();
}

void write_metric_csv(const std::filesystem::path& path, std::span<const MetricPoint> rows)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw DataError("cannot write " + path.string());
    out << format_metric_csv(rows);
}

std::vector<MetricPoint> read_metric_csv(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw DataError("cannot read " + path.string());
    std::string line;
    std::getline(in, line);
    if (line.rfind("iteration,", 0) != 0)
        throw DataError(path.string() + ": missing metric CSV header");
    std::vector<MetricPoint> out;
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        std::istringstream ls(line);
        std::string a, b, c, d;
        std::getline(ls, a, ',');
        std::getline(ls, b, ',');
        std::getline(ls, c, ',');
        std::getline(ls, d, ',');
        try {
            out.push_back({std::stol(a), std::stod(b), std::stod(c), std::stod(d)});
        } catch (const std::exception&) {
            throw DataError(path.string() + ": malformed row '" + line + "'");
        }
    }
    return out;
}

} // namespace mixica
