#include "mixica/sweep.hpp"

#include "mixica/io.hpp"
#include "mixica/synth.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <thread>

namespace mixica {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// Runs job(i) for i in [0, n) on up to `workers` threads. Each job owns its
/// output slot, so results do not depend on scheduling.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& job)
{
    const auto threads = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, workers)));
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i)
            job(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < threads; ++w)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++)
                job(i);
        });
}

/// Runs every cell, recording failures as missing instead of aborting.
void run_cells(std::vector<SweepCell>& cells, int workers,
               const std::function<void(SweepCell&)>& body)
{
    parallel_for(cells.size(), workers, [&](std::size_t i) {
        SweepCell& cell = cells[i];
        try {
            body(cell);
        } catch (const std::exception& e) {
            cell.missing = true;
            cell.error = e.what();
        }
    });
}

const Dataset& find_dataset(const SweepPlan& plan, const std::string& name)
{
    for (const auto& d : plan.datasets)
        if (d.name == name)
            return d;
    throw DataError("unknown dataset " + name);
}

/// Decomposes `train`, then measures the result on `eval`.
void decompose_into(SweepCell& cell, const Recording& train, const Recording& eval, AmicaConfig cfg,
                    const SweepPlan& plan, bool full_trace)
{
    cfg.seed_pair = cell.seed;
    const DecompositionResult r = run(train, cfg);

    std::vector<ModelState> points;
    if (full_trace)
        points = r.checkpoints;
    else
        points.push_back(r.final_state);
    cell.trace = metric_table(points, r.sphering, eval, plan.marginal, plan.joint);
    if (full_trace) {
        const std::vector<ModelState> init{r.initial};
        const auto base = metric_table(init, r.sphering, eval, plan.marginal, plan.joint);
        cell.baseline_mir_bits = base.front().mir_bits;
        cell.baseline_pmi_bits = base.front().pmi_bits;
    }
    const MetricPoint& last = cell.trace.back();
    cell.iterations = r.final_state.iter;
    cell.final_mir_bits = last.mir_bits;
    cell.final_mir_kbps = last.mir_kbps;
    cell.final_pmi_bits = last.pmi_bits;
    cell.final_pmi_kbps = to_kbps(last.pmi_bits, eval.sample_rate_hz);
    cell.median_step_seconds = median(r.step_times);
    double prev = r.initial_ll;
    for (double ll : r.ll_trace) {
        cell.max_ll_decrease = std::max(cell.max_ll_decrease, prev - ll);
        prev = ll;
    }
    cell.samples_used = train.n_samples();
    cell.epochs_used = train.epoch_len > 1 ? train.n_epochs() : train.n_samples() / kContinuousBlockLen;
}

SweepCell make_cell(const std::string& dataset, const std::string& label, double value, int repeat, SeedPair seed)
{
    SweepCell c;
    c.dataset = dataset;
    c.grid_label = label;
    c.grid_value = value;
    c.repeat = repeat;
    c.seed = seed;
    return c;
}

std::string grid_label(SweepKind kind, double v)
{
    switch (kind) {
    case SweepKind::iterations: return "iters" + format_double(v);
    case SweepKind::mixtures: return "m" + format_double(v);
    case SweepKind::data_quantity: return "k" + format_double(v);
    case SweepKind::pmi_vs_mir: return "frac" + format_double(v);
    case SweepKind::seeds: break;
    }
    return format_double(v);
}

std::string seed_label(const std::optional<SeedPair>& s)
{
    return s ? "seed" + std::to_string(s->first) + "-" + std::to_string(s->second) : "random";
}

SweepReport start_report(const SweepPlan& plan)
{
    plan.validate();
    SweepReport rep;
    rep.kind = plan.kind;
    rep.drop_before = plan.drop_before;
    for (const auto& d : plan.datasets)
        rep.datasets.push_back(d.name);
    return rep;
}

void aggregate(SweepReport& rep)
{
    rep.aggregates.clear();
    for (std::size_t g = 0; g < rep.grid_labels.size(); ++g) {
        GridAggregate a;
        a.label = rep.grid_labels[g];
        a.value = rep.grid_values[g];
        std::vector<double> mir, pmi, step, mp, pp;
        for (const auto& c : rep.cells) {
            if (c.grid_label != a.label || c.missing)
                continue;
            ++a.cells;
            mir.push_back(c.final_mir_bits);
            pmi.push_back(c.final_pmi_bits);
            step.push_back(c.median_step_seconds);
            mp.push_back(c.mir_percent);
            pp.push_back(c.pmi_percent);
        }
        a.median_final_mir_bits = median(mir);
        a.median_final_pmi_bits = median(pmi);
        a.median_step_seconds = median(step);
        a.median_mir_percent = median(mp);
        a.median_pmi_percent = median(pp);
        rep.aggregates.push_back(a);
    }
}

double sample_std(const std::vector<double>& v)
{
    if (v.size() < 2)
        return 0.0;
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v)
        ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

double range_of(const std::vector<double>& v)
{
    if (v.empty())
        return kNaN;
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    return *hi - *lo;
}

SeedStats seed_stats_for(const std::string& label, const std::vector<const SweepCell*>& cells)
{
    SeedStats s;
    s.label = label;
    std::vector<double> mir_k, pmi_k, mir_b;
    for (const SweepCell* c : cells) {
        if (c->missing)
            continue;
        mir_k.push_back(c->final_mir_kbps);
        pmi_k.push_back(c->final_pmi_kbps);
        mir_b.push_back(c->final_mir_bits);
    }
    s.runs = static_cast<int>(mir_k.size());
    s.mir_range_kbps = range_of(mir_k);
    s.mir_std_kbps = sample_std(mir_k);
    s.pmi_range_kbps = range_of(pmi_k);
    s.pmi_std_kbps = sample_std(pmi_k);
    s.mir_mean_bits = mir_b.empty() ? kNaN
                                    : std::accumulate(mir_b.begin(), mir_b.end(), 0.0) /
                                          static_cast<double>(mir_b.size());
    s.mir_std_bits = sample_std(mir_b);
    return s;
}

TraceSet collect_traces(const SweepReport& rep, bool mir)
{
    TraceSet set;
    std::set<long> iters;
    for (const auto& c : rep.cells)
        if (!c.missing)
            for (const auto& p : c.trace)
                iters.insert(p.iteration);
    set.iterations.assign(iters.begin(), iters.end());
    for (const auto& name : rep.datasets) {
        std::vector<double> values(set.iterations.size(), kNaN);
        for (const auto& c : rep.cells) {
            if (c.dataset != name || c.missing)
                continue;
            for (const auto& p : c.trace) {
                const auto it = std::lower_bound(set.iterations.begin(), set.iterations.end(), p.iteration);
                values[static_cast<std::size_t>(it - set.iterations.begin())] = mir ? p.mir_bits : p.pmi_bits;
            }
        }
        set.traces.push_back(std::move(values));
    }
    return set;
}

TraceSet restrict_from(const TraceSet& set, long min_iteration)
{
    TraceSet out;
    for (std::size_t k = 0; k < set.iterations.size(); ++k)
        if (set.iterations[k] >= min_iteration)
            out.iterations.push_back(set.iterations[k]);
    const std::size_t skip = set.iterations.size() - out.iterations.size();
    for (const auto& tr : set.traces)
        out.traces.emplace_back(tr.begin() + static_cast<std::ptrdiff_t>(skip), tr.end());
    return out;
}

double json_num(const json& j)
{
    return j.is_null() ? kNaN : j.get<double>();
}

} // namespace

SweepKind parse_sweep_kind(const std::string& name)
{
    if (name == "iterations")
        return SweepKind::iterations;
    if (name == "mixtures")
        return SweepKind::mixtures;
    if (name == "data_quantity")
        return SweepKind::data_quantity;
    if (name == "seeds")
        return SweepKind::seeds;
    if (name == "pmi_vs_mir")
        return SweepKind::pmi_vs_mir;
    throw DataError("unknown sweep kind '" + name + "'");
}

std::string to_string(SweepKind kind)
{
    switch (kind) {
    case SweepKind::iterations: return "iterations";
    case SweepKind::mixtures: return "mixtures";
    case SweepKind::data_quantity: return "data_quantity";
    case SweepKind::seeds: return "seeds";
    case SweepKind::pmi_vs_mir: return "pmi_vs_mir";
    }
    return "unknown";
}

void SweepPlan::validate() const
{
    if (datasets.empty())
        throw DataError("sweep plan has no datasets");
    for (const auto& d : datasets)
        if (!d.recording)
            throw DataError("dataset " + d.name + " has no recording");
    if (grid.empty() && (kind == SweepKind::mixtures || kind == SweepKind::data_quantity))
        throw DataError("sweep plan has an empty grid");
    if (repeats < 1)
        throw DataError("repeats must be at least 1");
    if (workers < 1)
        throw DataError("workers must be at least 1");
    base_config.validate();
    marginal.validate();
    joint.validate();
}

std::vector<const SweepCell*> SweepReport::missing() const
{
    std::vector<const SweepCell*> out;
    for (const auto& c : cells)
        if (c.missing)
            out.push_back(&c);
    return out;
}

double median(std::vector<double> values)
{
    std::erase_if(values, [](double v) { return std::isnan(v); });
    if (values.empty())
        return kNaN;
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

double rank_correlation(std::span<const double> a, std::span<const double> b)
{
    if (a.size() != b.size() || a.size() < 2)
        throw DataError("rank correlation needs two equal-length series of at least 2 values");
    const auto ranks = [](std::span<const double> v) {
        std::vector<std::size_t> idx(v.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        std::sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
        std::vector<double> r(v.size());
        for (std::size_t k = 0; k < idx.size();) {
            std::size_t e = k;
            while (e + 1 < idx.size() && v[idx[e + 1]] == v[idx[k]])
                ++e;
            const double avg = 0.5 * static_cast<double>(k + e) + 1.0;
            for (std::size_t q = k; q <= e; ++q)
                r[idx[q]] = avg;
            k = e + 1;
        }
        return r;
    };
    const auto ra = ranks(a);
    const auto rb = ranks(b);
    const Eigen::Map<const Vector> va(ra.data(), static_cast<Index>(ra.size()));
    const Eigen::Map<const Vector> vb(rb.data(), static_cast<Index>(rb.size()));
    const Vector ca = va.array() - va.mean();
    const Vector cb = vb.array() - vb.mean();
    const double denom = ca.norm() * cb.norm();
    return denom > 0.0 ? ca.dot(cb) / denom : kNaN;
}

TraceSet normalize_mir_traces(const TraceSet& set, long min_iteration)
{
    TraceSet out = restrict_from(set, min_iteration);
    for (auto& tr : out.traces) {
        std::vector<double> present;
        std::copy_if(tr.begin(), tr.end(), std::back_inserter(present), [](double v) { return !std::isnan(v); });
        if (present.empty())
            continue;
        const double mean = std::accumulate(present.begin(), present.end(), 0.0) / static_cast<double>(present.size());
        for (double& v : tr)
            v -= mean;
    }
    return out;
}

TraceSet normalize_pmi_traces(const TraceSet& set, long min_iteration)
{
    TraceSet out = restrict_from(set, min_iteration);
    for (auto& tr : out.traces) {
        double lo = std::numeric_limits<double>::infinity();
        for (double v : tr)
            if (!std::isnan(v))
                lo = std::min(lo, v);
        if (!std::isfinite(lo))
            continue;
        for (double& v : tr)
            v -= lo;
    }
    return out;
}

std::vector<double> median_trace(const TraceSet& set)
{
    std::vector<double> out(set.iterations.size());
    for (std::size_t k = 0; k < out.size(); ++k) {
        std::vector<double> col;
        for (const auto& tr : set.traces)
            col.push_back(tr[k]);
        out[k] = median(std::move(col));
    }
    return out;
}

SweepReport run_iteration_sweep(const SweepPlan& plan)
{
    if (plan.kind != SweepKind::iterations)
        throw DataError("plan is not an iteration sweep");
    SweepReport rep = start_report(plan);
    AmicaConfig cfg = plan.base_config;
    if (!plan.grid.empty())
        cfg.max_iter = static_cast<long>(*std::max_element(plan.grid.begin(), plan.grid.end()));
    cfg.validate();
    const std::string label = grid_label(plan.kind, static_cast<double>(cfg.max_iter));
    rep.grid_labels = {label};
    rep.grid_values = {static_cast<double>(cfg.max_iter)};

    for (const auto& d : plan.datasets)
        for (int r = 0; r < plan.repeats; ++r)
            rep.cells.push_back(make_cell(d.name, label, static_cast<double>(cfg.max_iter), r, cfg.seed_pair));
    run_cells(rep.cells, plan.workers, [&](SweepCell& cell) {
        const Recording& rec = *find_dataset(plan, cell.dataset).recording;
        decompose_into(cell, rec, rec, cfg, plan, true);
    });

    aggregate(rep);
    const TraceSet mir = collect_traces(rep, true);
    const TraceSet pmi = collect_traces(rep, false);
    rep.trace_iterations = mir.iterations;
    rep.median_mir_trace = median_trace(mir);
    rep.median_pmi_trace = median_trace(pmi);
    std::vector<double> base;
    for (const auto& c : rep.cells)
        if (!c.missing)
            base.push_back(c.baseline_mir_bits);
    rep.median_baseline_mir_bits = median(base);
    return rep;
}

SweepReport run_mixture_sweep(const SweepPlan& plan)
{
    if (plan.kind != SweepKind::mixtures)
        throw DataError("plan is not a mixture sweep");
    SweepReport rep = start_report(plan);
    for (double g : plan.grid) {
        if (g < 1 || g != std::floor(g))
            throw DataError("mixture counts must be positive integers");
        rep.grid_labels.push_back(grid_label(plan.kind, g));
        rep.grid_values.push_back(g);
    }
    for (std::size_t g = 0; g < plan.grid.size(); ++g)
        for (const auto& d : plan.datasets)
            for (int r = 0; r < plan.repeats; ++r)
                rep.cells.push_back(make_cell(d.name, rep.grid_labels[g], plan.grid[g], r, plan.base_config.seed_pair));
    run_cells(rep.cells, plan.workers, [&](SweepCell& cell) {
        const Recording& rec = *find_dataset(plan, cell.dataset).recording;
        AmicaConfig cfg = plan.base_config;
        cfg.num_mix_comp = static_cast<int>(cell.grid_value);
        decompose_into(cell, rec, rec, cfg, plan, false);
    });
    aggregate(rep);
    return rep;
}

SweepReport run_data_quantity_sweep(const SweepPlan& plan)
{
    if (plan.kind != SweepKind::data_quantity)
        throw DataError("plan is not a data-quantity sweep");
    SweepReport rep = start_report(plan);
    rep.grid_labels.push_back("full");
    rep.grid_values.push_back(kNaN);
    for (double k : plan.grid) {
        if (!(k > 0.0))
            throw DataError("K targets must be positive");
        rep.grid_labels.push_back(grid_label(plan.kind, k));
        rep.grid_values.push_back(k);
    }
    for (std::size_t g = 0; g < rep.grid_labels.size(); ++g)
        for (const auto& d : plan.datasets)
            for (int r = 0; r < plan.repeats; ++r) {
                SweepCell c = make_cell(d.name, rep.grid_labels[g], rep.grid_values[g], r, plan.base_config.seed_pair);
                if (g == 0)
                    c.grid_value = compute_k(d.recording->n_samples(), d.recording->n_channels()).k;
                rep.cells.push_back(std::move(c));
            }

    run_cells(rep.cells, plan.workers, [&](SweepCell& cell) {
        const Recording& rec = *find_dataset(plan, cell.dataset).recording;
        if (cell.grid_label == "full") {
            decompose_into(cell, rec, rec, plan.base_config, plan, false);
            return;
        }
        const Recording train =
            decimate_to_k(rec, cell.grid_value, plan.selection_seed + static_cast<std::uint64_t>(cell.repeat));
        decompose_into(cell, train, rec, plan.base_config, plan, false);
    });

    for (auto& c : rep.cells) {
        const auto full = std::find_if(rep.cells.begin(), rep.cells.end(), [&](const SweepCell& f) {
            return f.grid_label == "full" && f.dataset == c.dataset && f.repeat == c.repeat && !f.missing;
        });
        if (c.missing || full == rep.cells.end()) {
            c.mir_percent = c.pmi_percent = kNaN;
            continue;
        }
        const auto percent = [](double v, double ref) {
            return ref == 0.0 ? kNaN : v == ref ? 100.0 : 100.0 * v / ref;
        };
        c.mir_percent = percent(c.final_mir_bits, full->final_mir_bits);
        c.pmi_percent = percent(c.final_pmi_bits, full->final_pmi_bits);
    }
    aggregate(rep);
    return rep;
}

SweepReport run_seed_study(const SweepPlan& plan)
{
    if (plan.kind != SweepKind::seeds)
        throw DataError("plan is not a seed study");
    SweepReport rep = start_report(plan);
    std::vector<std::optional<SeedPair>> conditions = plan.seeds;
    if (conditions.empty())
        conditions.emplace_back(plan.base_config.seed_pair);

    std::random_device entropy;
    const auto fresh = [&] { return SeedPair{entropy(), entropy()}; };
    for (std::size_t g = 0; g < conditions.size(); ++g) {
        const std::string label = seed_label(conditions[g]);
        rep.grid_labels.push_back(label);
        rep.grid_values.push_back(static_cast<double>(g));
        const SeedPair reused = conditions[g] ? *conditions[g] : fresh();
        for (const auto& d : plan.datasets)
            for (int r = 0; r < plan.repeats; ++r) {
                SeedPair seed = reused;
                if (!conditions[g] && plan.random_seed_mode == RandomSeedMode::fresh_per_repeat && r > 0)
                    seed = fresh();
                rep.cells.push_back(make_cell(d.name, label, static_cast<double>(g), r, seed));
            }
    }
    run_cells(rep.cells, plan.workers, [&](SweepCell& cell) {
        const Recording& rec = *find_dataset(plan, cell.dataset).recording;
        decompose_into(cell, rec, rec, plan.base_config, plan, false);
    });
    aggregate(rep);

    std::vector<const SweepCell*> all;
    for (const auto& label : rep.grid_labels) {
        std::vector<const SweepCell*> cells;
        for (const auto& c : rep.cells)
            if (c.grid_label == label)
                cells.push_back(&c);
        all.insert(all.end(), cells.begin(), cells.end());
        rep.seed_stats.push_back(seed_stats_for(label, cells));
    }
    rep.seed_stats.push_back(seed_stats_for("all", all));
    return rep;
}

SweepReport run_pmi_vs_mir(const SweepPlan& plan)
{
    if (plan.kind != SweepKind::pmi_vs_mir)
        throw DataError("plan is not a PMI-vs-MIR study");
    SweepReport rep = start_report(plan);
    const std::vector<double> fractions = plan.grid.empty() ? std::vector<double>{0.75} : plan.grid;
    for (double f : fractions) {
        if (!(f > 0.0 && f <= 1.0))
            throw DataError("epoch fractions must lie in (0, 1]");
        rep.grid_labels.push_back(grid_label(plan.kind, f));
        rep.grid_values.push_back(f);
    }
    for (std::size_t g = 0; g < fractions.size(); ++g)
        for (const auto& d : plan.datasets)
            for (int r = 0; r < plan.repeats; ++r)
                rep.cells.push_back(make_cell(d.name, rep.grid_labels[g], fractions[g], r, plan.base_config.seed_pair));
    run_cells(rep.cells, plan.workers, [&](SweepCell& cell) {
        const Recording& rec = *find_dataset(plan, cell.dataset).recording;
        const Recording train =
            subsample_epochs(rec, cell.grid_value, plan.selection_seed + static_cast<std::uint64_t>(cell.repeat));
        decompose_into(cell, train, rec, plan.base_config, plan, false);
    });
    aggregate(rep);

    std::vector<double> mirs, neg_pmis;
    for (const auto& name : rep.datasets) {
        ClusterStats cs;
        cs.dataset = name;
        std::vector<std::pair<double, double>> pts;
        for (const auto& c : rep.cells)
            if (c.dataset == name && !c.missing) {
                pts.emplace_back(c.final_mir_bits, c.final_pmi_bits);
                mirs.push_back(c.final_mir_bits);
                neg_pmis.push_back(-c.final_pmi_bits);
            }
        if (pts.empty()) {
            cs.centroid_mir_bits = cs.centroid_pmi_bits = cs.spread = kNaN;
        } else {
            for (const auto& [m, p] : pts) {
                cs.centroid_mir_bits += m / static_cast<double>(pts.size());
                cs.centroid_pmi_bits += p / static_cast<double>(pts.size());
            }
            for (std::size_t a = 0; a < pts.size(); ++a)
                for (std::size_t b = a + 1; b < pts.size(); ++b)
                    cs.spread = std::max(cs.spread, std::hypot(pts[a].first - pts[b].first,
                                                               pts[a].second - pts[b].second));
        }
        rep.clusters.push_back(cs);
    }
    for (auto& cs : rep.clusters) {
        cs.nearest_centroid = std::numeric_limits<double>::infinity();
        for (const auto& other : rep.clusters)
            if (&other != &cs && !std::isnan(other.centroid_mir_bits))
                cs.nearest_centroid = std::min(cs.nearest_centroid,
                                               std::hypot(cs.centroid_mir_bits - other.centroid_mir_bits,
                                                          cs.centroid_pmi_bits - other.centroid_pmi_bits));
        if (!std::isfinite(cs.nearest_centroid))
            cs.nearest_centroid = kNaN;
        if (cs.spread < cs.nearest_centroid)
            ++rep.clustered_datasets;
    }
    rep.rank_correlation = mirs.size() >= 2 ? rank_correlation(mirs, neg_pmis) : kNaN;
    return rep;
}

SweepReport run_sweep(const SweepPlan& plan)
{
    switch (plan.kind) {
    case SweepKind::iterations: return run_iteration_sweep(plan);
    case SweepKind::mixtures: return run_mixture_sweep(plan);
    case SweepKind::data_quantity: return run_data_quantity_sweep(plan);
    case SweepKind::seeds: return run_seed_study(plan);
    case SweepKind::pmi_vs_mir: return run_pmi_vs_mir(plan);
    }
    throw DataError("unknown sweep kind");
}

// ---------------------------------------------------------------------------
// Serialization

json to_json(const SweepReport& rep)
{
    json cells = json::array();
    for (const auto& c : rep.cells) {
        json trace = json::array();
        for (const auto& p : c.trace)
            trace.push_back({p.iteration, p.mir_bits, p.mir_kbps, p.pmi_bits});
        cells.push_back({{"dataset", c.dataset},
                         {"grid_label", c.grid_label},
                         {"grid_value", c.grid_value},
                         {"repeat", c.repeat},
                         {"missing", c.missing},
                         {"error", c.error},
                         {"seed", {c.seed.first, c.seed.second}},
                         {"iterations", c.iterations},
                         {"samples_used", c.samples_used},
                         {"epochs_used", c.epochs_used},
                         {"final_mir_bits", c.final_mir_bits},
                         {"final_mir_kbps", c.final_mir_kbps},
                         {"final_pmi_bits", c.final_pmi_bits},
                         {"final_pmi_kbps", c.final_pmi_kbps},
                         {"baseline_mir_bits", c.baseline_mir_bits},
                         {"baseline_pmi_bits", c.baseline_pmi_bits},
                         {"median_step_seconds", c.median_step_seconds},
                         {"max_ll_decrease", c.max_ll_decrease},
                         {"mir_percent", c.mir_percent},
                         {"pmi_percent", c.pmi_percent},
                         {"trace", std::move(trace)}});
    }
    json aggs = json::array();
    for (const auto& a : rep.aggregates)
        aggs.push_back({{"label", a.label},
                        {"value", a.value},
                        {"cells", a.cells},
                        {"median_final_mir_bits", a.median_final_mir_bits},
                        {"median_final_pmi_bits", a.median_final_pmi_bits},
                        {"median_step_seconds", a.median_step_seconds},
                        {"median_mir_percent", a.median_mir_percent},
                        {"median_pmi_percent", a.median_pmi_percent}});
    json seeds = json::array();
    for (const auto& s : rep.seed_stats)
        seeds.push_back({{"label", s.label},
                         {"runs", s.runs},
                         {"mir_range_kbps", s.mir_range_kbps},
                         {"mir_std_kbps", s.mir_std_kbps},
                         {"pmi_range_kbps", s.pmi_range_kbps},
                         {"pmi_std_kbps", s.pmi_std_kbps},
                         {"mir_mean_bits", s.mir_mean_bits},
                         {"mir_std_bits", s.mir_std_bits}});
    json clusters = json::array();
    for (const auto& c : rep.clusters)
        clusters.push_back({{"dataset", c.dataset},
                            {"centroid_mir_bits", c.centroid_mir_bits},
                            {"centroid_pmi_bits", c.centroid_pmi_bits},
                            {"spread", c.spread},
                            {"nearest_centroid", c.nearest_centroid}});
    json missing = json::array();
    for (const SweepCell* c : rep.missing())
        missing.push_back({{"dataset", c->dataset}, {"grid_label", c->grid_label}, {"repeat", c->repeat},
                           {"error", c->error}});
    return json{{"kind", to_string(rep.kind)},
                {"datasets", rep.datasets},
                {"grid_labels", rep.grid_labels},
                {"grid_values", rep.grid_values},
                {"aggregates", std::move(aggs)},
                {"missing", std::move(missing)},
                {"normalization",
                 {{"mir", "zero-mean"}, {"pmi", "zero-min"}, {"drop_before", rep.drop_before}}},
                {"trace_iterations", rep.trace_iterations},
                {"median_mir_trace", rep.median_mir_trace},
                {"median_pmi_trace", rep.median_pmi_trace},
                {"median_baseline_mir_bits", rep.median_baseline_mir_bits},
                {"seed_stats", std::move(seeds)},
                {"clusters", std::move(clusters)},
                {"clustered_datasets", rep.clustered_datasets},
                {"rank_correlation", rep.rank_correlation},
                {"cells", std::move(cells)}};
}

SweepReport report_from_json(const json& j)
{
    const auto nums = [](const json& arr) {
        std::vector<double> v;
        for (const auto& x : arr)
            v.push_back(json_num(x));
        return v;
    };
    SweepReport rep;
    try {
        rep.kind = parse_sweep_kind(j.at("kind").get<std::string>());
        rep.datasets = j.at("datasets").get<std::vector<std::string>>();
        rep.grid_labels = j.at("grid_labels").get<std::vector<std::string>>();
        rep.grid_values = nums(j.at("grid_values"));
        rep.drop_before = j.at("normalization").at("drop_before").get<long>();
        rep.trace_iterations = j.at("trace_iterations").get<std::vector<long>>();
        rep.median_mir_trace = nums(j.at("median_mir_trace"));
        rep.median_pmi_trace = nums(j.at("median_pmi_trace"));
        rep.median_baseline_mir_bits = json_num(j.at("median_baseline_mir_bits"));
        rep.clustered_datasets = j.at("clustered_datasets").get<int>();
        rep.rank_correlation = json_num(j.at("rank_correlation"));
        for (const auto& a : j.at("aggregates"))
            rep.aggregates.push_back({a.at("label").get<std::string>(), json_num(a.at("value")),
                                      json_num(a.at("median_final_mir_bits")),
                                      json_num(a.at("median_final_pmi_bits")),
                                      json_num(a.at("median_step_seconds")),
                                      json_num(a.at("median_mir_percent")),
                                      json_num(a.at("median_pmi_percent")), a.at("cells").get<int>()});
        for (const auto& s : j.at("seed_stats"))
            rep.seed_stats.push_back({s.at("label").get<std::string>(), s.at("runs").get<int>(),
                                      json_num(s.at("mir_range_kbps")), json_num(s.at("mir_std_kbps")),
                                      json_num(s.at("pmi_range_kbps")), json_num(s.at("pmi_std_kbps")),
                                      json_num(s.at("mir_mean_bits")), json_num(s.at("mir_std_bits"))});
        for (const auto& c : j.at("clusters"))
            rep.clusters.push_back({c.at("dataset").get<std::string>(), json_num(c.at("centroid_mir_bits")),
                                    json_num(c.at("centroid_pmi_bits")), json_num(c.at("spread")),
                                    json_num(c.at("nearest_centroid"))});
        for (const auto& c : j.at("cells")) {
            SweepCell cell;
            cell.dataset = c.at("dataset").get<std::string>();
            cell.grid_label = c.at("grid_label").get<std::string>();
            cell.grid_value = json_num(c.at("grid_value"));
            cell.repeat = c.at("repeat").get<int>();
            cell.missing = c.at("missing").get<bool>();
            cell.error = c.at("error").get<std::string>();
            cell.seed = {c.at("seed").at(0).get<std::uint64_t>(), c.at("seed").at(1).get<std::uint64_t>()};
            cell.iterations = c.at("iterations").get<long>();
            cell.samples_used = c.at("samples_used").get<Index>();
            cell.epochs_used = c.at("epochs_used").get<Index>();
            cell.final_mir_bits = json_num(c.at("final_mir_bits"));
            cell.final_mir_kbps = json_num(c.at("final_mir_kbps"));
            cell.final_pmi_bits = json_num(c.at("final_pmi_bits"));
            cell.final_pmi_kbps = json_num(c.at("final_pmi_kbps"));
            cell.baseline_mir_bits = json_num(c.at("baseline_mir_bits"));
            cell.baseline_pmi_bits = json_num(c.at("baseline_pmi_bits"));
            cell.median_step_seconds = json_num(c.at("median_step_seconds"));
            cell.max_ll_decrease = json_num(c.at("max_ll_decrease"));
            cell.mir_percent = json_num(c.at("mir_percent"));
            cell.pmi_percent = json_num(c.at("pmi_percent"));
            for (const auto& p : c.at("trace"))
                cell.trace.push_back({p.at(0).get<long>(), json_num(p.at(1)), json_num(p.at(2)), json_num(p.at(3))});
            rep.cells.push_back(std::move(cell));
        }
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed sweep report: ") + e.what());
    }
    return rep;
}

SweepPlan plan_from_json(const json& j, const fs::path& base_dir)
{
    SweepPlan plan;
    try {
        plan.kind = parse_sweep_kind(j.at("kind").get<std::string>());
        if (j.contains("grid"))
            plan.grid = j.at("grid").get<std::vector<double>>();
        if (j.contains("config"))
            plan.base_config = config_from_json(j.at("config"));
        if (j.contains("histogram")) {
            const json& h = j.at("histogram");
            plan.marginal.bins = h.value("bins", plan.marginal.bins);
            plan.joint.bins = h.value("joint_bins", plan.joint.bins);
            if (h.contains("range"))
                plan.marginal.range = plan.joint.range = parse_range_policy(h.at("range").get<std::string>());
        }
        const int default_repeats = plan.kind == SweepKind::pmi_vs_mir ? 4 : plan.kind == SweepKind::seeds ? 5 : 1;
        plan.repeats = j.value("repeats", default_repeats);
        plan.selection_seed = j.value("selection_seed", plan.selection_seed);
        plan.drop_before = j.value("drop_before", plan.drop_before);
        plan.workers = j.value("workers", plan.workers);
        if (j.contains("random_seed_mode")) {
            const auto mode = j.at("random_seed_mode").get<std::string>();
            if (mode == "fresh")
                plan.random_seed_mode = RandomSeedMode::fresh_per_repeat;
            else if (mode == "reuse")
                plan.random_seed_mode = RandomSeedMode::reuse;
            else
                throw DataError("random_seed_mode must be fresh or reuse");
        }
        if (j.contains("seeds")) {
            for (const auto& s : j.at("seeds")) {
                if (s.is_string() && s.get<std::string>() == "random")
                    plan.seeds.emplace_back(std::nullopt);
                else
                    plan.seeds.emplace_back(SeedPair{s.at(0).get<std::uint64_t>(), s.at(1).get<std::uint64_t>()});
            }
        } else if (plan.kind == SweepKind::seeds) {
            const SeedPair b = plan.base_config.seed_pair;
            plan.seeds.emplace_back(std::nullopt);
            for (std::uint64_t k = 0; k < 4; ++k)
                plan.seeds.emplace_back(SeedPair{b.first + k, b.second + k});
        }

        for (const auto& d : j.at("datasets")) {
            Dataset ds;
            ds.name = d.at("name").get<std::string>();
            if (d.contains("synth")) {
                const json& s = d.at("synth");
                const Index n = s.at("channels").get<Index>();
                std::vector<SourceSpec> specs;
                if (s.at("sources").is_string())
                    specs.assign(static_cast<std::size_t>(n), parse_source_spec(s.at("sources").get<std::string>()));
                else
                    for (const auto& src : s.at("sources"))
                        specs.push_back(parse_source_spec(src.get<std::string>()));
                SynthOptions opts;
                opts.sample_rate_hz = s.value("sample_rate_hz", opts.sample_rate_hz);
                opts.epoch_len = s.value("epoch_len", opts.epoch_len);
                opts.max_condition = s.value("max_condition", opts.max_condition);
                ds.recording = std::make_shared<const Recording>(
                    generate(n, s.at("samples").get<Index>(), specs, s.value("seed", std::uint64_t{1}), opts)
                        .recording);
            } else {
                fs::path p = d.at("path").get<std::string>();
                if (p.is_relative())
                    p = base_dir / p;
                LoadOptions opts;
                opts.sample_rate_hz = d.value("sample_rate_hz", opts.sample_rate_hz);
                opts.epoch_len = d.value("epoch_len", opts.epoch_len);
                const Format fmt = d.contains("format") ? parse_format(d.at("format").get<std::string>())
                                                        : guess_format(p);
                ds.recording = std::make_shared<const Recording>(load_recording(p, fmt, opts));
            }
            plan.datasets.push_back(std::move(ds));
        }
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed sweep plan: ") + e.what());
    }
    plan.validate();
    return plan;
}

SweepPlan load_plan(const fs::path& path)
{
    return plan_from_json(read_json(path), path.parent_path());
}

std::string format_summary_csv(const SweepReport& rep)
{
    std::ostringstream os;
    os << "grid,value,cells,median_final_mir_bits,median_final_pmi_bits,median_step_seconds,"
          "median_mir_percent,median_pmi_percent\n";
    for (const auto& a : rep.aggregates)
        os << a.label << ',' << format_double(a.value) << ',' << a.cells << ','
           << format_double(a.median_final_mir_bits) << ',' << format_double(a.median_final_pmi_bits) << ','
           << format_double(a.median_step_seconds) << ',' << format_double(a.median_mir_percent) << ','
           << format_double(a.median_pmi_percent) << '\n';
    return os.str();
}

void write_report(const SweepReport& rep, const fs::path& dir)
{
    fs::create_directories(dir);
    write_text(dir / "summary.json", to_json(rep).dump(2) + "\n");
    write_text(dir / "summary.csv", format_summary_csv(rep));
    const bool repeated = std::any_of(rep.cells.begin(), rep.cells.end(), [](const SweepCell& c) { return c.repeat > 0; });
    for (const auto& c : rep.cells) {
        if (c.missing)
            continue;
        const fs::path sub = dir / to_string(rep.kind) / c.dataset;
        fs::create_directories(sub);
        const std::string file = c.grid_label + (repeated ? "_rep" + std::to_string(c.repeat) : "") + ".csv";
        write_metric_csv(sub / file, c.trace);
    }
}

SweepReport read_report(const fs::path& dir)
{
    const fs::path summary = dir / "summary.json";
    if (!fs::exists(summary))
        throw DataError("no cells found in " + dir.string());
    SweepReport rep = report_from_json(read_json(summary));
    if (rep.cells.empty())
        throw DataError("no cells found in " + dir.string());
    return rep;
}

std::vector<std::pair<std::string, std::string>> render_report_tables(const SweepReport& rep)
{
    std::vector<std::pair<std::string, std::string>> out;
    const auto header = [&](std::ostringstream& os, const char* first) {
        os << first;
        for (const auto& d : rep.datasets)
            os << ',' << d;
        os << ",median\n";
    };
    const auto trace_table = [&](const TraceSet& set) {
        std::ostringstream os;
        header(os, "iteration");
        const auto med = median_trace(set);
        for (std::size_t k = 0; k < set.iterations.size(); ++k) {
            os << set.iterations[k];
            for (const auto& tr : set.traces)
                os << ',' << format_double(tr[k]);
            os << ',' << format_double(med[k]) << '\n';
        }
        return os.str();
    };

    if (rep.kind == SweepKind::iterations) {
        const TraceSet mir = collect_traces(rep, true);
        const TraceSet pmi = collect_traces(rep, false);
        out.emplace_back("mir_traces.csv", trace_table(mir));
        out.emplace_back("mir_normalized.csv", trace_table(normalize_mir_traces(mir, rep.drop_before)));
        out.emplace_back("pmi_traces.csv", trace_table(pmi));
        out.emplace_back("pmi_normalized.csv", trace_table(normalize_pmi_traces(pmi, rep.drop_before)));
        return out;
    }

    const auto grid_table = [&](auto field) {
        std::ostringstream os;
        header(os, "grid");
        for (const auto& label : rep.grid_labels) {
            os << label;
            std::vector<double> all;
            for (const auto& d : rep.datasets) {
                std::vector<double> vals;
                for (const auto& c : rep.cells)
                    if (c.grid_label == label && c.dataset == d && !c.missing)
                        vals.push_back(field(c));
                const double m = median(vals);
                all.push_back(m);
                os << ',' << format_double(m);
            }
            os << ',' << format_double(median(all)) << '\n';
        }
        return os.str();
    };
    out.emplace_back("final_mir.csv", grid_table([](const SweepCell& c) { return c.final_mir_bits; }));
    out.emplace_back("final_pmi.csv", grid_table([](const SweepCell& c) { return c.final_pmi_bits; }));
    out.emplace_back("step_seconds.csv", grid_table([](const SweepCell& c) { return c.median_step_seconds; }));
    if (rep.kind == SweepKind::data_quantity) {
        out.emplace_back("mir_percent.csv", grid_table([](const SweepCell& c) { return c.mir_percent; }));
        out.emplace_back("pmi_percent.csv", grid_table([](const SweepCell& c) { return c.pmi_percent; }));
    }
    if (rep.kind == SweepKind::seeds) {
        std::ostringstream os;
        os << "condition,runs,mir_range_kbps,mir_std_kbps,pmi_range_kbps,pmi_std_kbps\n";
        for (const auto& s : rep.seed_stats)
            os << s.label << ',' << s.runs << ',' << format_double(s.mir_range_kbps) << ','
               << format_double(s.mir_std_kbps) << ',' << format_double(s.pmi_range_kbps) << ','
               << format_double(s.pmi_std_kbps) << '\n';
        out.emplace_back("seed_stats.csv", os.str());
    }
    if (rep.kind == SweepKind::pmi_vs_mir) {
        std::ostringstream os;
        os << "dataset,grid,trial,mir_bits,pmi_bits\n";
        for (const auto& c : rep.cells)
            if (!c.missing)
                os << c.dataset << ',' << c.grid_label << ',' << c.repeat << ',' << format_double(c.final_mir_bits)
                   << ',' << format_double(c.final_pmi_bits) << '\n';
        out.emplace_back("scatter.csv", os.str());
        std::ostringstream cs;
        cs << "dataset,centroid_mir_bits,centroid_pmi_bits,spread,nearest_centroid\n";
        for (const auto& c : rep.clusters)
            cs << c.dataset << ',' << format_double(c.centroid_mir_bits) << ','
               << format_double(c.centroid_pmi_bits) << ',' << format_double(c.spread) << ','
               << format_double(c.nearest_centroid) << '\n';
        out.emplace_back("clusters.csv", cs.str());
    }
    return out;
}

} // namespace mixica
