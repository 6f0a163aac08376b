#pragma once

#include <chrono>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pdeseq/config.hpp"
#include "pdeseq/experiments.hpp"
#include "pdeseq/report.hpp"
#include "pdeseq/version.hpp"

namespace pdeseq::cli {

namespace detail {

inline std::pair<std::size_t, std::size_t> default_grid(const ExperimentConfig& cfg) {
    if (const auto* cs = std::get_if<ContextSweep>(&cfg.sweep))
        return {cs->n_x, cs->n_t_values.back()};
    if (const auto* os = std::get_if<OutputSweep>(&cfg.sweep))
        return {os->n_x_values.back(), os->n_t};
    if (const auto* ms = std::get_if<MultiStepSweep>(&cfg.sweep)) return {ms->n_x, ms->n_t};
    const auto& es = std::get<EnergySweep>(cfg.sweep);
    return {es.n_x, es.n_t};
}

inline std::ostream& open_out(std::ofstream& file, const std::string& path) {
    if (path.empty() || path == "-") return std::cout;
    file.open(path);
    if (!file) throw ConfigError("cannot open output file '" + path + "'");
    return file;
}

inline SolutionField make_reference(const ExperimentConfig& cfg, const ICSpline& ic,
                                    std::size_t n_x, std::size_t n_t) {
    auto [space, time] = build_grids(cfg.half_width, n_x, cfg.final_time, n_t);
    const std::size_t refine_t =
        stable_refine_t(cfg.pde, space, time, cfg.refine_x, cfg.refine_t);
    return reference_solution(cfg.pde, ic, space, time, cfg.refine_x, refine_t);
}

inline std::shared_ptr<Backend> probe_backend(const ExperimentConfig& cfg) {
    const BackendConfig& b = cfg.backend;
    if (const auto* http = std::get_if<HttpOptions>(&b.kind))
        return std::make_shared<HttpBackend>(*http);
    if (std::holds_alternative<RepeatLastBackendConfig>(b.kind))
        return std::make_shared<RepeatLastBackend>();
    if (const auto* rp = std::get_if<std::shared_ptr<ReplayBackendConfig>>(&b.kind)) {
        // recording wraps a live endpoint: probe that endpoint directly
        if ((*rp)->inner) {
            if (const auto* ih = std::get_if<HttpOptions>(&(*rp)->inner->kind))
                return std::make_shared<HttpBackend>(*ih);
            return std::make_shared<RepeatLastBackend>();
        }
        return std::make_shared<ReplayBackend>((*rp)->fixture, ReplayBackend::Mode::Replay);
    }
    return nullptr; // oracle
}

inline std::string unique_run_dir(const std::string& experiment) {
    const auto now = std::chrono::system_clock::now().time_since_epoch();
    const auto stamp = std::chrono::duration_cast<std::chrono::milliseconds>(now).count();
    return "runs/" + experiment + "-" + std::to_string(stamp);
}

} // namespace detail

inline int run(int argc, const char* const* argv) {
    CLI::App app{"PDE continuation harness: finite-difference references, numeric token "
                 "streams, pluggable autoregressive backends, and the full metric suite"};
    app.set_version_flag("--version", version_string);
    app.require_subcommand(1);

    // --- gen-ic ---
    auto* gen = app.add_subcommand("gen-ic", "emit random initial-condition records as JSONL");
    struct {
        std::uint64_t seed = 1;
        std::size_t trials = 1, n_x = 14;
        double lo = -0.5, hi = 0.5, u_bc = -1.0, half_width = 1.0;
        bool neumann = false;
        std::string out;
    } gi;
    gen->add_option("--seed", gi.seed, "base seed; trial m uses the derived stream seed");
    gen->add_option("--trials", gi.trials);
    gen->add_option("--n-x", gi.n_x, "interior knot count");
    gen->add_option("--lo", gi.lo, "sampling interval lower bound a");
    gen->add_option("--hi", gi.hi, "sampling interval upper bound b");
    gen->add_option("--u-bc", gi.u_bc, "endpoint knot value (dirichlet)");
    gen->add_flag("--neumann", gi.neumann, "neumann walls: endpoint knots at (a+b)/2");
    gen->add_option("--half-width", gi.half_width);
    gen->add_option("--out", gi.out, "output path, '-' for stdout");

    // --- solve ---
    auto* solve_cmd = app.add_subcommand("solve", "write a reference or baseline solution as CSV");
    struct {
        std::string config, what = "reference", out;
        std::size_t trial = 0;
        std::size_t n_x = 0, n_t = 0;
    } so;
    solve_cmd->add_option("--config", so.config)->required();
    solve_cmd->add_option("--what", so.what, "reference or a scheme name (ftcs, imex, ...)");
    solve_cmd->add_option("--trial", so.trial, "trial index selecting the IC stream");
    solve_cmd->add_option("--n-x", so.n_x, "override interior point count");
    solve_cmd->add_option("--n-t", so.n_t, "override step count");
    solve_cmd->add_option("--out", so.out, "output path, '-' for stdout");

    // --- encode ---
    auto* encode_cmd = app.add_subcommand("encode", "serialize a reference field to a token stream");
    struct {
        std::string config, out;
        std::size_t trial = 0;
        std::size_t from = 0;
        long long to = -1;
    } en;
    encode_cmd->add_option("--config", en.config)->required();
    encode_cmd->add_option("--trial", en.trial);
    encode_cmd->add_option("--from", en.from, "first slice (time column)");
    encode_cmd->add_option("--to", en.to, "one past the last slice; -1 = all");
    encode_cmd->add_option("--out", en.out, "output path, '-' for stdout");

    // --- probe ---
    auto* probe_cmd = app.add_subcommand("probe", "check the backend's tokenization granularity");
    std::string probe_config;
    probe_cmd->add_option("--config", probe_config)->required();

    // --- run ---
    auto* run_cmd = app.add_subcommand("run", "execute an experiment described by a config file");
    struct {
        std::string config, run_dir, backend_override;
        std::size_t jobs = 0;
        std::uint64_t seed = 0;
        bool have_seed = false;
    } rn;
    run_cmd->add_option("--config", rn.config)->required();
    run_cmd->add_option("--run-dir", rn.run_dir,
                        "run directory (re-use to resume); default: unique under runs/");
    run_cmd->add_option("--backend", rn.backend_override,
                        "override the configured backend: oracle or repeat_last");
    run_cmd->add_option("--jobs", rn.jobs, "worker threads (overrides config)");
    run_cmd->add_option("--seed", rn.seed, "override the base seed")
        ->each([&](const std::string&) { rn.have_seed = true; });

    // --- metrics ---
    auto* metrics_cmd = app.add_subcommand("metrics", "aggregate records.jsonl into metrics.csv");
    std::string metrics_run;
    metrics_cmd->add_option("--run", metrics_run)->required();

    // --- plotdata ---
    auto* plot_cmd = app.add_subcommand("plotdata", "emit per-figure CSV files from a run");
    struct {
        std::string run, figure, out;
        std::size_t trial = 0, top_k = 8;
    } pl;
    plot_cmd->add_option("--run", pl.run)->required();
    plot_cmd->add_option("--figure", pl.figure)->required()->check(CLI::IsMember(plot_figures()));
    plot_cmd->add_option("--out", pl.out, "output directory; default <run>/plots");
    plot_cmd->add_option("--trial", pl.trial, "trial for temporal-diff/topk");
    plot_cmd->add_option("--top-k", pl.top_k, "tokens per position for topk");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (*gen) {
            std::ofstream file;
            std::ostream& os = detail::open_out(file, gi.out);
            const BoundarySpec bc =
                gi.neumann ? BoundarySpec::neumann() : BoundarySpec::dirichlet(gi.u_bc);
            for (std::size_t m = 0; m < gi.trials; ++m) {
                const ICSpline ic = sample_random_ic(trial_seed(gi.seed, m), gi.n_x, gi.lo,
                                                     gi.hi, bc, gi.half_width);
                nlohmann::ordered_json j;
                j["seed"] = ic.seed;
                j["n_x"] = ic.n_x;
                j["a"] = ic.lo;
                j["b"] = ic.hi;
                j["u_bc"] = ic.u_bc;
                j["knots"] = ic.values;
                os << j.dump() << "\n";
            }
            return 0;
        }

        if (*solve_cmd) {
            const ExperimentConfig cfg = load_config(so.config);
            auto [n_x, n_t] = detail::default_grid(cfg);
            if (so.n_x) n_x = so.n_x;
            if (so.n_t) n_t = so.n_t;
            const ICSpline ic =
                sample_random_ic(trial_seed(cfg.seed, so.trial), cfg.ic_knot_count(), cfg.ic_lo,
                                 cfg.ic_hi, cfg.ic_boundary(), cfg.half_width);
            SolutionField field;
            if (so.what == "reference") {
                field = detail::make_reference(cfg, ic, n_x, n_t);
            } else {
                auto [space, time] = build_grids(cfg.half_width, n_x, cfg.final_time, n_t);
                field = solve(cfg.pde, scheme_from_name(so.what),
                              resample_interior(ic, n_x), space, time);
            }
            std::ofstream file;
            write_solution_csv(field, detail::open_out(file, so.out));
            return 0;
        }

        if (*encode_cmd) {
            const ExperimentConfig cfg = load_config(en.config);
            auto [n_x, n_t] = detail::default_grid(cfg);
            const ICSpline ic =
                sample_random_ic(trial_seed(cfg.seed, en.trial), cfg.ic_knot_count(), cfg.ic_lo,
                                 cfg.ic_hi, cfg.ic_boundary(), cfg.half_width);
            const SolutionField ref = detail::make_reference(cfg, ic, n_x, n_t);
            const QuantizedField q = quantize(ref.values);
            const std::size_t to =
                en.to < 0 ? q.codes.cols() : static_cast<std::size_t>(en.to);
            const std::string stream = serialize(q, en.from, to);
            const std::size_t slices = to - en.from;
            if (count_tokens(stream) != token_count(slices, n_x))
                throw std::logic_error("encode: token accounting mismatch");
            std::ofstream file;
            detail::open_out(file, en.out) << stream;
            std::cerr << "slices=" << slices << " n_x=" << n_x
                      << " tokens=" << token_count(slices, n_x) << "\n";
            return 0;
        }

        if (*probe_cmd) {
            const ExperimentConfig cfg = load_config(probe_config);
            auto backend = detail::probe_backend(cfg);
            const ProbeReport report =
                backend ? probe_tokenization(*backend)
                        : ProbeReport{ProbeReport::Status::Pass,
                                      "canonical tokenizer (oracle backend)", {}};
            std::cout << "probe: " << (report.passed() ? "pass" : "warn") << " - " << report.note
                      << "\n";
            return 0;
        }

        if (*run_cmd) {
            ExperimentConfig cfg = load_config(rn.config);
            if (!rn.backend_override.empty()) {
                if (rn.backend_override == "oracle")
                    cfg.backend.kind = OracleBackendConfig{};
                else if (rn.backend_override == "repeat_last")
                    cfg.backend.kind = RepeatLastBackendConfig{};
                else
                    throw ConfigError("run: --backend override must be oracle or repeat_last");
            }
            if (rn.jobs) cfg.jobs = rn.jobs;
            if (rn.have_seed) cfg.seed = rn.seed;

            RunPaths paths{fs::path(rn.run_dir.empty()
                                        ? detail::unique_run_dir(cfg.experiment_name())
                                        : rn.run_dir)};
            ExperimentRunner runner(cfg, paths);

            auto finish_metrics = [&]() {
                const auto records = read_records(paths.records());
                const auto rows = compute_metrics(records, cfg, paths.dir.filename().string());
                std::ofstream csv(paths.metrics());
                write_metrics_csv(rows, csv);
            };

            try {
                const RunSummary summary = runner.run();
                finish_metrics();
                std::cout << "run: " << paths.dir.string() << "\n"
                          << "probe: " << (summary.probe.passed() ? "pass" : "warn") << " - "
                          << summary.probe.note << "\n"
                          << "units: " << summary.total << " completed: " << summary.completed
                          << " failed: " << summary.failed << " skipped: " << summary.skipped
                          << "\n";
            } catch (const ExcessiveFailures&) {
                finish_metrics(); // keep what we have measurable
                throw;
            }
            return 0;
        }

        if (*metrics_cmd) {
            RunPaths paths{fs::path(metrics_run)};
            std::ifstream manifest(paths.manifest());
            if (!manifest) throw ConfigError("metrics: missing " + paths.manifest().string());
            const ExperimentConfig cfg =
                config_from_json(nlohmann::json::parse(manifest).at("config"));
            const auto records = read_records(paths.records());
            const auto rows = compute_metrics(records, cfg, paths.dir.filename().string());
            std::ofstream csv(paths.metrics());
            write_metrics_csv(rows, csv);
            std::cout << "metrics: " << rows.size() << " rows -> " << paths.metrics().string()
                      << "\n";
            return 0;
        }

        if (*plot_cmd) {
            RunPaths paths{fs::path(pl.run)};
            const fs::path out = pl.out.empty() ? paths.dir / "plots" : fs::path(pl.out);
            write_plotdata(pl.figure, paths, out, {pl.trial, pl.top_k});
            std::cout << "plotdata: " << pl.figure << " -> " << out.string() << "\n";
            return 0;
        }
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const TransportError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const CapabilityError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ExcessiveFailures& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

inline int run(const std::vector<std::string>& args) {
    std::vector<std::string> argv_storage;
    argv_storage.reserve(args.size() + 1);
    argv_storage.push_back("pdeseq");
    for (const auto& a : args) argv_storage.push_back(a);
    std::vector<const char*> argv;
    for (const auto& a : argv_storage) argv.push_back(a.c_str());
    return run(static_cast<int>(argv.size()), argv.data());
}

} // namespace pdeseq::cli
