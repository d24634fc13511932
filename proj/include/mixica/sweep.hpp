#pragma once

#include "mixica/amica.hpp"
#include "mixica/metrics.hpp"
#include "mixica/recording.hpp"

#include <json.hpp>

#include <filesystem>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mixica {

enum class SweepKind { iterations, mixtures, data_quantity, seeds, pmi_vs_mir };

SweepKind parse_sweep_kind(const std::string& name);
std::string to_string(SweepKind kind);

struct Dataset {
    std::string name;
    std::shared_ptr<const Recording> recording;
};

/// How the "random" condition of a seed study draws its seeds.
enum class RandomSeedMode {
    fresh_per_repeat, ///< every repeat draws a new pair
    reuse,            ///< one pair is drawn and reused for every repeat
};

struct SweepPlan {
    SweepKind kind = SweepKind::iterations;
    std::vector<Dataset> datasets;
    /// iterations: iteration budgets (the largest is run); mixtures: num_mix_comp values;
    /// data_quantity: K targets; pmi_vs_mir: epoch fractions.
    std::vector<double> grid;
    /// Seed study conditions; std::nullopt is the random condition.
    std::vector<std::optional<SeedPair>> seeds;
    RandomSeedMode random_seed_mode = RandomSeedMode::fresh_per_repeat;
    AmicaConfig base_config{};
    HistogramSpec marginal = HistogramSpec::marginal();
    HistogramSpec joint = HistogramSpec::joint();
    int repeats = 1;
    std::uint64_t selection_seed = 1; ///< seeds epoch selection for decimation and subsampling
    long drop_before = 100;           ///< trace normalization ignores earlier iterations
    int workers = 1;

    void validate() const;
};

/// One decomposition within a sweep.
struct SweepCell {
    std::string dataset;
    std::string grid_label;
    double grid_value = 0.0;
    int repeat = 0;
    bool missing = false;
    std::string error;

    SeedPair seed{};
    long iterations = 0;
    Index samples_used = 0;
    Index epochs_used = 0;
    double final_mir_bits = 0.0;
    double final_mir_kbps = 0.0;
    double final_pmi_bits = 0.0;
    double final_pmi_kbps = 0.0;
    double baseline_mir_bits = 0.0; ///< at initialization (iteration 0)
    double baseline_pmi_bits = 0.0;
    double median_step_seconds = 0.0;
    double max_ll_decrease = 0.0; ///< largest single-step drop of the log-likelihood (0 if monotone)
    double mir_percent = std::numeric_limits<double>::quiet_NaN(); ///< data_quantity only: relative to the full-data run
    double pmi_percent = std::numeric_limits<double>::quiet_NaN();
    std::vector<MetricPoint> trace;
};

/// Medians across datasets (and repeats) for one grid point.
struct GridAggregate {
    std::string label;
    double value = 0.0;
    double median_final_mir_bits = 0.0;
    double median_final_pmi_bits = 0.0;
    double median_step_seconds = 0.0;
    double median_mir_percent = std::numeric_limits<double>::quiet_NaN();
    double median_pmi_percent = std::numeric_limits<double>::quiet_NaN();
    int cells = 0;
};

/// Spread statistics in the units the seed study reports.
struct SeedStats {
    std::string label;
    int runs = 0;
    double mir_range_kbps = 0.0;
    double mir_std_kbps = 0.0;
    double pmi_range_kbps = 0.0;
    double pmi_std_kbps = 0.0;
    double mir_mean_bits = 0.0;
    double mir_std_bits = 0.0;
};

struct ClusterStats {
    std::string dataset;
    double centroid_mir_bits = 0.0;
    double centroid_pmi_bits = 0.0;
    double spread = 0.0;          ///< largest pairwise distance among the dataset's trials
    double nearest_centroid = 0.0; ///< distance to the closest other dataset's centroid
};

struct SweepReport {
    SweepKind kind = SweepKind::iterations;
    std::vector<std::string> datasets;
    std::vector<std::string> grid_labels;
    std::vector<double> grid_values;
    std::vector<SweepCell> cells;
    std::vector<GridAggregate> aggregates;

    // iterations
    std::vector<long> trace_iterations;
    std::vector<double> median_mir_trace;
    std::vector<double> median_pmi_trace;
    double median_baseline_mir_bits = 0.0;

    // seeds
    std::vector<SeedStats> seed_stats; ///< per condition, then one "all" entry

    // pmi_vs_mir
    std::vector<ClusterStats> clusters;
    int clustered_datasets = 0;
    double rank_correlation = 0.0; ///< Spearman, MIR vs -PMI over all points

    long drop_before = 100;

    std::vector<const SweepCell*> missing() const;
};

/// Median over the non-NaN entries; NaN when none remain.
double median(std::vector<double> values);

/// Spearman rank correlation with average ranks for ties.
double rank_correlation(std::span<const double> a, std::span<const double> b);

/// Per-dataset traces sampled at common iterations.
struct TraceSet {
    std::vector<long> iterations;
    std::vector<std::vector<double>> traces;
};

/// Each trace minus its own mean, over iterations >= min_iteration.
TraceSet normalize_mir_traces(const TraceSet& set, long min_iteration = 0);
/// Each trace minus its own minimum, over iterations >= min_iteration.
TraceSet normalize_pmi_traces(const TraceSet& set, long min_iteration = 0);
/// Pointwise median across traces.
std::vector<double> median_trace(const TraceSet& set);

SweepReport run_iteration_sweep(const SweepPlan& plan);
SweepReport run_mixture_sweep(const SweepPlan& plan);
SweepReport run_data_quantity_sweep(const SweepPlan& plan);
SweepReport run_seed_study(const SweepPlan& plan);
SweepReport run_pmi_vs_mir(const SweepPlan& plan);

/// Dispatches on plan.kind.
SweepReport run_sweep(const SweepPlan& plan);

nlohmann::json to_json(const SweepReport& report);
SweepReport report_from_json(const nlohmann::json& j);

/// Loads a plan file. Dataset paths resolve relative to the plan's directory;
/// datasets may also be described inline as synthetic recordings.
SweepPlan load_plan(const std::filesystem::path& path);
SweepPlan plan_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});

/// Writes summary.json, summary.csv and `<kind>/<dataset>/<grid>[_rep<k>].csv`.
void write_report(const SweepReport& report, const std::filesystem::path& dir);
SweepReport read_report(const std::filesystem::path& dir);

/// Grid table: one row per grid point with the median aggregates.
std::string format_summary_csv(const SweepReport& report);

/// Figure-ready tables: `iteration, <dataset>..., median` (raw and normalized
/// traces for iteration sweeps, per-grid values otherwise). Returns file name
/// -> CSV text.
std::vector<std::pair<std::string, std::string>> render_report_tables(const SweepReport& report);

} // namespace mixica
