#include "oracles.hpp"

#include "mixica/io.hpp"
#include "mixica/sweep.hpp"
#include "mixica/synth.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace mixica;
namespace fs = std::filesystem;

namespace {

Dataset synthetic(const std::string& name, std::uint64_t seed, Index n = 3, Index t = 4000, Index epoch_len = 100,
                  SourceKind kind = SourceKind::laplacian)
{
    SynthOptions opts;
    opts.epoch_len = epoch_len;
    opts.max_condition = 10.0;
    const std::vector<SourceSpec> specs(static_cast<std::size_t>(n), SourceSpec{kind});
    return {name, std::make_shared<const Recording>(generate(n, t, specs, seed, opts).recording)};
}

SweepPlan small_plan(SweepKind kind)
{
    SweepPlan plan;
    plan.kind = kind;
    plan.datasets = {synthetic("a", 1), synthetic("b", 2), synthetic("c", 3)};
    plan.base_config.max_iter = 30;
    plan.base_config.checkpoint_interval = 10;
    return plan;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void check_same_numbers(const SweepReport& a, const SweepReport& b)
{
    REQUIRE(a.cells.size() == b.cells.size());
    const auto same = [](double x, double y) { return (std::isnan(x) && std::isnan(y)) || x == y; };
    for (std::size_t i = 0; i < a.cells.size(); ++i) {
        const SweepCell& x = a.cells[i];
        const SweepCell& y = b.cells[i];
        CHECK(x.dataset == y.dataset);
        CHECK(x.grid_label == y.grid_label);
        CHECK(same(x.grid_value, y.grid_value));
        CHECK(x.seed == y.seed);
        CHECK(same(x.final_mir_bits, y.final_mir_bits));
        CHECK(same(x.final_pmi_kbps, y.final_pmi_kbps));
        CHECK(same(x.median_step_seconds, y.median_step_seconds));
        CHECK(same(x.mir_percent, y.mir_percent));
        CHECK(x.trace.size() == y.trace.size());
        for (std::size_t k = 0; k < x.trace.size(); ++k)
            CHECK(x.trace[k] == y.trace[k]);
    }
    REQUIRE(a.aggregates.size() == b.aggregates.size());
    for (std::size_t g = 0; g < a.aggregates.size(); ++g)
        CHECK(same(a.aggregates[g].median_final_mir_bits, b.aggregates[g].median_final_mir_bits));
    CHECK(a.median_mir_trace.size() == b.median_mir_trace.size());
}

} // namespace

TEST_CASE("trace normalization examples")
{
    const TraceSet set{{1, 2, 3}, {{1, 2, 3}, {5, 5, 5}}};
    const TraceSet m = normalize_mir_traces(set);
    const TraceSet p = normalize_pmi_traces(set);
    CHECK(m.traces[0] == std::vector<double>{-1, 0, 1});
    CHECK(p.traces[0] == std::vector<double>{0, 1, 2});
    CHECK(m.traces[1] == std::vector<double>{0, 0, 0});
    CHECK(p.traces[1] == std::vector<double>{0, 0, 0});

    const TraceSet late = normalize_pmi_traces(TraceSet{{50, 100, 150}, {{9, 4, 6}}}, 100);
    CHECK(late.iterations == std::vector<long>{100, 150});
    CHECK(late.traces[0] == std::vector<double>{0, 2});
}

TEST_CASE("median trace matches a sort-based median")
{
    TraceSet set;
    set.iterations = {1, 2, 3, 4};
    set.traces = {{0.3, 1.0, -2.0, 5.0}, {0.1, 1.5, std::nan(""), 4.0}, {0.2, 0.5, -1.0, 9.0}, {0.4, 0.9, 3.0, 1.0}};
    const auto norm = normalize_mir_traces(set);
    const auto med = median_trace(norm);
    for (std::size_t k = 0; k < 4; ++k) {
        std::vector<double> col;
        for (const auto& tr : norm.traces)
            col.push_back(tr[k]);
        CHECK(med[k] == oracle::median(col));
    }
    CHECK(std::isnan(median({})));
    CHECK(median({3.0, std::nan(""), 1.0}) == 2.0);
}

TEST_CASE("Spearman rank correlation")
{
    const std::vector<double> a{1, 2, 3, 4, 5};
    const std::vector<double> b{10, 20, 25, 100, 1000};
    const std::vector<double> c{5, 4, 3, 2, 1};
    CHECK(rank_correlation(a, b) == doctest::Approx(1.0));
    CHECK(rank_correlation(a, c) == doctest::Approx(-1.0));
    const std::vector<double> tied{1, 1, 2, 2, 3};
    CHECK(rank_correlation(tied, a) == doctest::Approx(0.9486832980505138));
}

TEST_CASE("plan validation")
{
    SweepPlan plan = small_plan(SweepKind::mixtures);
    CHECK_THROWS_AS(run_sweep(plan), DataError);
    plan.grid = {3};
    plan.repeats = 0;
    CHECK_THROWS_AS(run_sweep(plan), DataError);
    plan.repeats = 1;
    plan.datasets.clear();
    CHECK_THROWS_AS(run_sweep(plan), DataError);
}

TEST_CASE("iteration sweep shape and determinism across workers")
{
    SweepPlan plan = small_plan(SweepKind::iterations);
    plan.grid = {30};
    const SweepReport r = run_sweep(plan);
    REQUIRE(r.cells.size() == 3);
    for (const auto& c : r.cells) {
        CHECK_FALSE(c.missing);
        CHECK(c.trace.size() == 3);
        CHECK(c.max_ll_decrease <= 1e-6);
    }
    CHECK(r.trace_iterations == std::vector<long>{10, 20, 30});
    CHECK(r.median_mir_trace.size() == 3);
    for (std::size_t k = 0; k < 3; ++k)
        CHECK(r.median_mir_trace[k] == oracle::median({r.cells[0].trace[k].mir_bits, r.cells[1].trace[k].mir_bits,
                                                       r.cells[2].trace[k].mir_bits}));

    plan.workers = 3;
    const SweepReport threaded = run_sweep(plan);
    for (std::size_t i = 0; i < 3; ++i)
        CHECK(format_metric_csv(threaded.cells[i].trace) == format_metric_csv(r.cells[i].trace));
}

TEST_CASE("report files, round trip and tables")
{
    SweepPlan plan = small_plan(SweepKind::iterations);
    plan.drop_before = 20;
    const SweepReport r = run_sweep(plan);
    const fs::path dir = fs::temp_directory_path() / "mixica_test_sweep_report";
    fs::remove_all(dir);
    write_report(r, dir);
    CHECK(fs::exists(dir / "summary.json"));
    CHECK(fs::exists(dir / "summary.csv"));
    CHECK(fs::exists(dir / "iterations" / "a" / "iters30.csv"));
    CHECK(slurp(dir / "iterations" / "b" / "iters30.csv") == format_metric_csv(r.cells[1].trace));

    const SweepReport back = read_report(dir);
    check_same_numbers(r, back);
    CHECK(report_from_json(to_json(r)).drop_before == 20);

    const auto tables = render_report_tables(back);
    REQUIRE(tables.size() == 4);
    CHECK(tables[0].first == "mir_traces.csv");
    CHECK(tables[0].second.starts_with("iteration,a,b,c,median\n10,"));
    CHECK(tables[1].second.find("\n10,") == std::string::npos);

    fs::remove_all(dir);
    fs::create_directories(dir);
    try {
        read_report(dir);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("no cells found") != std::string::npos);
    }
}

TEST_CASE("mixture sweep reports one aggregate per grid point")
{
    SweepPlan plan = small_plan(SweepKind::mixtures);
    plan.grid = {2, 3};
    const SweepReport r = run_sweep(plan);
    REQUIRE(r.aggregates.size() == 2);
    for (const auto& a : r.aggregates) {
        CHECK(a.cells == 3);
        CHECK(a.median_step_seconds > 0.0);
        std::vector<double> mirs;
        for (const auto& c : r.cells)
            if (c.grid_label == a.label)
                mirs.push_back(c.final_mir_bits);
        CHECK(a.median_final_mir_bits == oracle::median(mirs));
    }
    CHECK(format_summary_csv(r).starts_with("grid,value,cells,"));
}

TEST_CASE("data-quantity sweep: full is 100 percent, infeasible K is missing")
{
    SweepPlan plan = small_plan(SweepKind::data_quantity);
    plan.grid = {100, 1000};
    const SweepReport r = run_sweep(plan);
    for (const auto& c : r.cells) {
        if (c.grid_label == "full") {
            CHECK(c.mir_percent == 100.0);
            CHECK(c.pmi_percent == 100.0);
        } else if (c.grid_value == 100) {
            CHECK_FALSE(c.missing);
            CHECK(c.epochs_used == oracle::epochs_for_k(100, 3, 100));
            CHECK(c.samples_used == c.epochs_used * 100);
        } else {
            CHECK(c.missing);
            CHECK_FALSE(c.error.empty());
        }
    }
    CHECK(r.missing().size() == 3);
    CHECK(r.aggregates.size() == 3);
    CHECK(r.aggregates[2].cells == 0);
    CHECK(std::isnan(r.aggregates[2].median_final_mir_bits));
    check_same_numbers(r, report_from_json(to_json(r)));
}

TEST_CASE("seed study: fixed seeds repeat exactly")
{
    SweepPlan plan = small_plan(SweepKind::seeds);
    plan.datasets.resize(1);
    plan.seeds = {SeedPair{1, 2}, SeedPair{3, 4}, std::nullopt};
    plan.repeats = 3;
    const SweepReport r = run_sweep(plan);
    REQUIRE(r.seed_stats.size() == 4);
    CHECK(r.seed_stats[0].mir_range_kbps == 0.0);
    CHECK(r.seed_stats[0].pmi_std_kbps == 0.0);
    CHECK(r.seed_stats[1].mir_range_kbps == 0.0);
    CHECK(r.seed_stats[3].label == "all");
    CHECK(r.seed_stats[3].runs == 9);

    std::vector<SeedPair> random_seeds;
    for (const auto& c : r.cells)
        if (c.grid_label == "random")
            random_seeds.push_back(c.seed);
    REQUIRE(random_seeds.size() == 3);
    CHECK_FALSE(random_seeds[0] == random_seeds[1]);

    plan.random_seed_mode = RandomSeedMode::reuse;
    plan.seeds = {std::nullopt};
    const SweepReport reused = run_sweep(plan);
    CHECK(reused.cells[0].seed == reused.cells[2].seed);
    CHECK(reused.seed_stats[0].mir_range_kbps == 0.0);
}

TEST_CASE("PMI vs MIR scatter and clusters")
{
    SweepPlan plan = small_plan(SweepKind::pmi_vs_mir);
    plan.repeats = 2;
    const SweepReport r = run_sweep(plan);
    CHECK(r.cells.size() == 6);
    CHECK(r.clusters.size() == 3);
    for (const auto& c : r.cells)
        CHECK(c.samples_used == 3000);
    const auto tables = render_report_tables(r);
    const auto scatter = std::find_if(tables.begin(), tables.end(), [](const auto& t) { return t.first == "scatter.csv"; });
    REQUIRE(scatter != tables.end());
    CHECK(std::count(scatter->second.begin(), scatter->second.end(), '\n') == 7);
}

TEST_CASE("plans from JSON")
{
    const fs::path dir = fs::temp_directory_path() / "mixica_test_plan";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const Synthetic s = generate(3, 2000, std::vector<SourceSpec>(3, SourceSpec{}), 5);
    save_raw_f32(s.recording, dir / "rec.f32");
    write_text(dir / "plan.json", R"({
        "kind": "mixtures", "grid": [3, 4], "repeats": 2,
        "config": {"max_iter": 20, "checkpoint_interval": 10},
        "histogram": {"bins": 128, "joint_bins": 32, "range": "min-max"},
        "datasets": [
            {"name": "file", "path": "rec.f32"},
            {"name": "gen", "synth": {"channels": 3, "samples": 3000, "sources": ["laplacian", "uniform", "gg:1.2"], "seed": 2}}
        ]})");
    const SweepPlan plan = load_plan(dir / "plan.json");
    CHECK(plan.kind == SweepKind::mixtures);
    CHECK(plan.grid == std::vector<double>{3, 4});
    CHECK(plan.repeats == 2);
    CHECK(plan.base_config.max_iter == 20);
    CHECK(plan.marginal.bins == 128);
    CHECK(plan.joint.bins == 32);
    CHECK(plan.marginal.range == RangePolicy::min_max);
    REQUIRE(plan.datasets.size() == 2);
    CHECK(plan.datasets[0].recording->n_samples() == 2000);
    CHECK(plan.datasets[1].recording->n_samples() == 3000);

    const auto seeds = plan_from_json(nlohmann::json::parse(R"({"kind": "seeds", "seeds": [[1, 2], "random"],
        "datasets": [{"name": "g", "synth": {"channels": 2, "samples": 100, "sources": "laplacian"}}]})"));
    CHECK(seeds.repeats == 5);
    REQUIRE(seeds.seeds.size() == 2);
    CHECK(*seeds.seeds[0] == SeedPair{1, 2});
    CHECK_FALSE(seeds.seeds[1].has_value());

    CHECK_THROWS_AS(plan_from_json(nlohmann::json::parse(R"({"kind": "nope", "datasets": []})")), DataError);
    CHECK_THROWS_AS(plan_from_json(nlohmann::json::parse(R"({"kind": "iterations"})")), DataError);
}
