#include "mixica/cli.hpp"

#include "mixica/amica.hpp"
#include "mixica/io.hpp"
#include "mixica/metrics.hpp"
#include "mixica/sweep.hpp"
#include "mixica/synth.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <sstream>

namespace mixica::cli {
namespace {

namespace fs = std::filesystem;

struct UsageError : Error {
    using Error::Error;
};

SeedPair parse_seed(const std::string& text)
{
    const auto comma = text.find(',');
    if (comma == std::string::npos)
        throw UsageError("--seed expects two integers as a,b");
    SeedPair s;
    const auto parse = [&](std::string_view part, std::uint64_t& v) {
        const auto [p, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
        if (ec != std::errc{} || p != part.data() + part.size())
            throw UsageError("--seed expects two integers as a,b");
    };
    const std::string_view sv(text);
    parse(sv.substr(0, comma), s.first);
    parse(sv.substr(comma + 1), s.second);
    return s;
}

/// Config file layout: AmicaConfig keys at the top level plus an optional
/// "histogram" object {bins, joint_bins, range}.
struct FileConfig {
    AmicaConfig amica;
    HistogramSpec marginal = HistogramSpec::marginal();
    HistogramSpec joint = HistogramSpec::joint();
};

FileConfig load_config(const std::string& path)
{
    FileConfig fc;
    if (path.empty())
        return fc;
    const nlohmann::json j = read_json(path);
    fc.amica = config_from_json(j);
    if (j.contains("histogram")) {
        try {
            const auto& h = j.at("histogram");
            fc.marginal.bins = h.value("bins", fc.marginal.bins);
            fc.joint.bins = h.value("joint_bins", fc.joint.bins);
            if (h.contains("range"))
                fc.marginal.range = fc.joint.range = parse_range_policy(h.at("range").get<std::string>());
        } catch (const nlohmann::json::exception& e) {
            throw DataError(std::string("bad histogram configuration: ") + e.what());
        }
    }
    return fc;
}

bool given(const CLI::Option* opt) { return opt->count() > 0; }

Recording load_input(const std::string& input, const std::string& format, double rate, Index epoch_len)
{
    LoadOptions opts{rate, epoch_len};
    const Format fmt = format.empty() ? guess_format(input) : parse_format(format);
    return load_recording(input, fmt, opts);
}

std::string checkpoint_name(long iter)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "checkpoint_%06ld.json", iter);
    return buf;
}

/// Checkpoints in a model directory in iteration order; final.json alone when
/// there are none. A file path is used as-is.
std::vector<fs::path> model_files(const fs::path& model)
{
    if (fs::is_regular_file(model))
        return {model};
    if (!fs::is_directory(model))
        throw DataError("model not found: " + model.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(model)) {
        const auto name = e.path().filename().string();
        if (name.starts_with("checkpoint_") && name.ends_with(".json"))
            files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty() && fs::exists(model / "final.json"))
        files.push_back(model / "final.json");
    if (files.empty())
        throw DataError("no checkpoints in " + model.string());
    return files;
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Adaptive mixture ICA with histogram MIR/PMI metrics and sweep harness", "mixica"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Help for every subcommand");

    const AmicaConfig defaults;
    const HistogramSpec hdef = HistogramSpec::marginal();
    const HistogramSpec jdef = HistogramSpec::joint();

    // decompose
    auto* dec = app.add_subcommand("decompose", "Run AMICA on a recording and write checkpoints");
    std::string d_input, d_format, d_config, d_out, d_seed = to_string(defaults.seed_pair);
    double d_rate = 250.0;
    Index d_epoch = 0;
    long d_iters = defaults.max_iter, d_every = defaults.checkpoint_interval;
    int d_mix = defaults.num_mix_comp;
    dec->add_option("input", d_input, "Recording (.f32 with sidecar, or .csv)")->required();
    dec->add_option("--format", d_format, "raw-f32 or csv (default: from extension)");
    dec->add_option("--sample-rate", d_rate, "Sample rate for CSV input without sidecar")->capture_default_str();
    dec->add_option("--epoch-len", d_epoch, "Epoch length for CSV input without sidecar (0: one epoch)")
        ->capture_default_str();
    auto* d_iters_opt = dec->add_option("--iters", d_iters, "Iterations")->capture_default_str();
    auto* d_mix_opt = dec->add_option("--mix", d_mix, "Mixture components per source")->capture_default_str();
    auto* d_seed_opt = dec->add_option("--seed", d_seed, "Seed pair a,b")->capture_default_str();
    auto* d_every_opt =
        dec->add_option("--checkpoint-every", d_every, "Checkpoint interval")->capture_default_str();
    dec->add_option("--config", d_config, "JSON config file (flags take precedence)");
    dec->add_option("--out", d_out, "Output directory")->required();

    // metrics
    auto* met = app.add_subcommand("metrics", "MIR and PMI for every checkpoint of a model");
    std::string m_input, m_model, m_format, m_range = to_string(hdef.range), m_out, m_config;
    double m_rate = 250.0;
    Index m_epoch = 0, m_bins = hdef.bins, m_joint = jdef.bins;
    met->add_option("input", m_input, "Recording the model was fit to")->required();
    met->add_option("model", m_model, "Model directory or checkpoint file")->required();
    met->add_option("--format", m_format, "raw-f32 or csv (default: from extension)");
    met->add_option("--sample-rate", m_rate, "Sample rate for CSV input without sidecar")->capture_default_str();
    met->add_option("--epoch-len", m_epoch, "Epoch length for CSV input without sidecar")->capture_default_str();
    auto* m_bins_opt = met->add_option("--bins", m_bins, "Marginal histogram bins")->capture_default_str();
    auto* m_joint_opt = met->add_option("--joint-bins", m_joint, "Joint histogram bins per axis")
                            ->capture_default_str();
    auto* m_range_opt = met->add_option("--range", m_range, "Histogram range: robust or min-max")
                            ->capture_default_str();
    met->add_option("--config", m_config, "JSON config file with a histogram object");
    met->add_option("--out", m_out, "Output CSV (default: <model dir>/metrics.csv)");

    // synth
    auto* syn = app.add_subcommand("synth", "Generate mixed synthetic sources with ground truth");
    Index s_channels = 4, s_samples = 100000, s_epoch = 1;
    std::string s_sources = "laplacian", s_out, s_name = "synth";
    std::uint64_t s_seed = 1;
    double s_rate = 250.0, s_cond = 100.0;
    bool s_identity = false;
    syn->add_option("--channels", s_channels, "Channels (= sources)")->capture_default_str();
    syn->add_option("--samples", s_samples, "Samples")->capture_default_str();
    syn->add_option("--sources", s_sources,
                    "Source kinds: one for all, or a comma list (laplacian, uniform, gaussian, gg:<rho>, bimodal; "
                    "optional *scale)")
        ->capture_default_str();
    syn->add_option("--seed", s_seed, "Generator seed")->capture_default_str();
    syn->add_option("--epoch-len", s_epoch, "Epoch length (1: continuous)")->capture_default_str();
    syn->add_option("--sample-rate", s_rate, "Sample rate in Hz")->capture_default_str();
    syn->add_option("--max-cond", s_cond, "Largest accepted condition number of A")->capture_default_str();
    syn->add_flag("--identity", s_identity, "Use A = I");
    syn->add_option("--out", s_out, "Output directory")->required();
    syn->add_option("--name", s_name, "File stem")->capture_default_str();

    // sweep
    auto* swp = app.add_subcommand("sweep", "Run a sweep plan");
    std::string w_plan, w_out;
    int w_workers = 1;
    swp->add_option("plan", w_plan, "Plan JSON")->required();
    swp->add_option("--out", w_out, "Output directory")->required();
    auto* w_workers_opt = swp->add_option("--workers", w_workers, "Concurrent cells (fallback: MIXICA_WORKERS)")
                              ->capture_default_str()
                              ->check(CLI::PositiveNumber);

    // report
    auto* rep = app.add_subcommand("report", "Render figure-ready tables from a sweep directory");
    std::string r_dir, r_out;
    rep->add_option("dir", r_dir, "Sweep output directory")->required();
    rep->add_option("--out", r_out, "Output directory (default: <dir>/tables)");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? ok : usage_error;
    }

    try {
        if (*dec) {
            FileConfig fc = load_config(d_config);
            AmicaConfig cfg = fc.amica;
            if (given(d_iters_opt))
                cfg.max_iter = d_iters;
            if (given(d_mix_opt))
                cfg.num_mix_comp = d_mix;
            if (given(d_seed_opt))
                cfg.seed_pair = parse_seed(d_seed);
            if (given(d_every_opt))
                cfg.checkpoint_interval = d_every;
            cfg.validate();
            const Recording rec = load_input(d_input, d_format, d_rate, d_epoch);
            const DecompositionResult r = run(rec, cfg);

            const fs::path dir(d_out);
            fs::create_directories(dir);
            for (const auto& cp : r.checkpoints)
                if (cp.iter % cfg.checkpoint_interval == 0)
                    save_checkpoint(dir / checkpoint_name(cp.iter), cp, r.sphering);
            save_checkpoint(dir / "final.json", r.final_state, r.sphering);
            write_text(dir / "config.json", to_json(cfg).dump(2) + "\n");
            std::ostringstream ll, st;
            ll << "iteration,ll\n0," << format_double(r.initial_ll) << '\n';
            st << "iteration,seconds\n";
            for (std::size_t k = 0; k < r.ll_trace.size(); ++k) {
                ll << k + 1 << ',' << format_double(r.ll_trace[k]) << '\n';
                st << k + 1 << ',' << format_double(r.step_times[k]) << '\n';
            }
            write_text(dir / "ll_trace.csv", ll.str());
            write_text(dir / "step_times.csv", st.str());
            out << "iterations " << r.final_state.iter << " ll " << format_double(r.final_state.ll) << '\n';
        } else if (*met) {
            FileConfig fc = load_config(m_config);
            if (given(m_bins_opt))
                fc.marginal.bins = m_bins;
            if (given(m_joint_opt))
                fc.joint.bins = m_joint;
            if (given(m_range_opt))
                fc.marginal.range = fc.joint.range = parse_range_policy(m_range);
            fc.marginal.validate();
            fc.joint.validate();
            const Recording rec = load_input(m_input, m_format, m_rate, m_epoch);
            const auto files = model_files(m_model);
            std::vector<ModelState> states;
            SpheringTransform sph;
            for (const auto& f : files) {
                Checkpoint cp = load_checkpoint(f);
                if (states.empty())
                    sph = cp.sphering;
                else if (cp.sphering.matrix != sph.matrix || cp.sphering.means != sph.means)
                    throw DataError("checkpoints in " + m_model + " use different sphering transforms");
                states.push_back(std::move(cp.state));
            }
            if (sph.matrix.rows() != rec.n_channels())
                throw DataError("model has " + std::to_string(sph.matrix.rows()) + " channels, recording has " +
                                std::to_string(rec.n_channels()));
            const auto table = metric_table(states, sph, rec, fc.marginal, fc.joint);
            const fs::path dest = m_out.empty() ? (fs::is_directory(m_model) ? fs::path(m_model)
                                                                             : fs::path(m_model).parent_path()) /
                                                      "metrics.csv"
                                                : fs::path(m_out);
            if (dest.has_parent_path())
                fs::create_directories(dest.parent_path());
            write_metric_csv(dest, table);
            out << "wrote " << dest.string() << '\n';
        } else if (*syn) {
            std::vector<SourceSpec> specs;
            std::stringstream ss(s_sources);
            for (std::string item; std::getline(ss, item, ',');)
                specs.push_back(parse_source_spec(item));
            if (specs.size() == 1)
                specs.assign(static_cast<std::size_t>(std::max<Index>(s_channels, 0)), specs.front());
            SynthOptions opts;
            opts.sample_rate_hz = s_rate;
            opts.epoch_len = s_epoch;
            opts.max_condition = s_cond;
            if (s_identity)
                opts.mixing = Matrix::Identity(s_channels, s_channels);
            const Synthetic synth = generate(s_channels, s_samples, specs, s_seed, opts);
            save_synthetic(synth, s_out, s_name);
            out << "wrote " << (fs::path(s_out) / (s_name + ".f32")).string() << " cond "
                << format_double(condition_number(synth.truth.mixing)) << '\n';
        } else if (*swp) {
            SweepPlan plan = load_plan(w_plan);
            if (given(w_workers_opt))
                plan.workers = w_workers;
            else if (const char* env = std::getenv("MIXICA_WORKERS"); env && *env) {
                int n = 0;
                const auto [p, ec] = std::from_chars(env, env + std::strlen(env), n);
                if (ec != std::errc{} || *p != '\0' || n < 1)
                    throw UsageError("MIXICA_WORKERS must be a positive integer");
                plan.workers = n;
            }
            const SweepReport report = run_sweep(plan);
            write_report(report, w_out);
            out << format_summary_csv(report);
            for (const SweepCell* c : report.missing())
                err << "missing cell " << c->dataset << '/' << c->grid_label << " rep " << c->repeat << ": "
                    << c->error << '\n';
        } else if (*rep) {
            const SweepReport report = read_report(r_dir);
            const fs::path dest = r_out.empty() ? fs::path(r_dir) / "tables" : fs::path(r_out);
            fs::create_directories(dest);
            for (const auto& [name, text] : render_report_tables(report)) {
                write_text(dest / name, text);
                out << "wrote " << (dest / name).string() << '\n';
            }
        }
    } catch (const UsageError& e) {
        err << "mixica: " << e.what() << '\n';
        return usage_error;
    } catch (const NumericalError& e) {
        err << "mixica: numerical failure: " << e.what() << '\n';
        return numerical_error;
    } catch (const DataError& e) {
        err << "mixica: " << e.what() << '\n';
        return data_error;
    } catch (const fs::filesystem_error& e) {
        err << "mixica: " << e.what() << '\n';
        return data_error;
    } catch (const std::exception& e) {
        err << "mixica: " << e.what() << '\n';
        return data_error;
    }
    return ok;
}

int run(int argc, char** argv)
{
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(args, std::cout, std::cerr);
}

} // namespace mixica::cli
