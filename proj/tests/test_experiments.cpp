#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <random>

#include "pdeseq/experiments.hpp"
#include "pdeseq/report.hpp"

using namespace pdeseq;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("pdeseq_exp_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

ExperimentConfig oracle_context_config(std::vector<std::size_t> n_t_values, std::size_t trials) {
    ExperimentConfig cfg;
    cfg.pde = PDESpec::allen_cahn();
    cfg.sweep = ContextSweep{14, std::move(n_t_values)};
    cfg.trials = trials;
    cfg.seed = 11;
    cfg.backend = BackendConfig{OracleBackendConfig{"", 64, 8}, 0.6, 20};
    cfg.baselines = {SchemeId::Ftcs, SchemeId::Imex};
    return cfg;
}

std::string strip_volatile(const fs::path& records) {
    std::ifstream in(records);
    std::string line, out;
    while (std::getline(in, line)) {
        auto j = nlohmann::ordered_json::parse(line);
        j.erase("wall_ms");
        out += j.dump();
        out += '\n';
    }
    return out;
}

} // namespace

TEST_CASE("records serialize and parse back losslessly") {
    TempDir dir;
    auto cfg = oracle_context_config({2, 5}, 2);
    ExperimentRunner runner(cfg, RunPaths{dir.path / "run"});
    auto summary = runner.run();
    CHECK(summary.total == 4);
    CHECK(summary.completed == 4);
    CHECK(summary.failed == 0);

    auto records = read_records(RunPaths{dir.path / "run"}.records());
    REQUIRE(records.size() == 4);
    for (const auto& r : records) {
        auto round = record_from_json(record_to_json(r));
        CHECK(round.key() == r.key());
        CHECK(round.predicted == r.predicted);
        CHECK(round.reference == r.reference);
        CHECK(round.ic_knot_values == r.ic_knot_values);
        CHECK(round.range == r.range);
        // shapes agree across predicted/reference/baselines
        for (const auto& [name, m] : r.baselines) {
            CHECK(m.rows() == r.predicted.rows());
            CHECK(m.cols() == r.predicted.cols());
        }
    }
}

TEST_CASE("seed discipline: reruns reproduce identical records") {
    TempDir dir;
    auto cfg = oracle_context_config({3, 7}, 2);
    ExperimentRunner a(cfg, RunPaths{dir.path / "a"});
    a.run();
    ExperimentRunner b(cfg, RunPaths{dir.path / "b"});
    b.run();
    CHECK(strip_volatile(RunPaths{dir.path / "a"}.records()) ==
          strip_volatile(RunPaths{dir.path / "b"}.records()));
}

TEST_CASE("sweep isolation: one spline per trial across all sweep points") {
    TempDir dir;
    auto cfg = oracle_context_config({2, 6, 9}, 2);
    ExperimentRunner runner(cfg, RunPaths{dir.path / "run"});
    runner.run();
    auto records = read_records(RunPaths{dir.path / "run"}.records());
    std::map<std::size_t, std::vector<double>> knots_by_trial;
    for (const auto& r : records) {
        auto [it, inserted] = knots_by_trial.emplace(r.trial, r.ic_knot_values);
        if (!inserted) CHECK(it->second == r.ic_knot_values);
    }
    CHECK(knots_by_trial.size() == 2);
    // trial seeds derive from (base seed, trial index) alone
    for (const auto& r : records) CHECK(r.ic_seed == trial_seed(11, r.trial));
}

TEST_CASE("repeat-last trial is the persistence forecast") {
    TempDir dir;
    auto cfg = oracle_context_config({8}, 1);
    cfg.backend = BackendConfig{RepeatLastBackendConfig{}, 0.6, 20};
    cfg.trials = 1;
    ExperimentRunner runner(cfg, RunPaths{dir.path / "run"});
    runner.run();
    auto records = read_records(RunPaths{dir.path / "run"}.records());
    REQUIRE(records.size() == 1);
    const auto& r = records[0];
    REQUIRE(r.ok);

    // reproduce the expectation directly from the reference columns
    ICSpline ic = sample_random_ic(r.ic_seed, 14, cfg.ic_lo, cfg.ic_hi,
                                   BoundarySpec::dirichlet(-1.0), 1.0);
    auto [space, time] = build_grids(1.0, 14, 0.5, 8);
    auto ref = reference_solution(cfg.pde, ic, space, time, cfg.refine_x,
                                  stable_refine_t(cfg.pde, space, time, cfg.refine_x, 64));
    auto q = quantize(ref.values);
    auto recon = reconstruct(q);

    double sq = 0.0;
    for (std::size_t i = 0; i < 14; ++i) {
        const double e = recon(i, 7) - recon(i, 8);
        sq += e * e;
        CHECK(r.predicted(i, 0) == Catch::Approx(recon(i, 7)).margin(1e-12));
    }
    const double expected_rmse = std::sqrt(sq / 14.0);
    CHECK(rmse_per_step(r.predicted, r.reference)[0] ==
          Catch::Approx(expected_rmse).margin(1e-12));
}

TEST_CASE("output sweep resamples one function and counts tokens per slice") {
    TempDir dir;
    ExperimentConfig cfg;
    cfg.pde = PDESpec::allen_cahn();
    cfg.sweep = OutputSweep{12, {4, 14, 40}};
    cfg.trials = 1;
    cfg.seed = 5;
    cfg.backend = BackendConfig{OracleBackendConfig{"", 64, 8}, 0.6, 20};
    cfg.baselines = {SchemeId::Ftcs};
    ExperimentRunner runner(cfg, RunPaths{dir.path / "run"});
    runner.run();

    auto records = read_records(RunPaths{dir.path / "run"}.records());
    REQUIRE(records.size() == 3);
    for (const auto& r : records) {
        CHECK(r.ic_n_x == 14); // sampling resolution fixed across the sweep
        CHECK(r.grid.n_x == r.axis_value);
        CHECK(r.predicted.rows() == r.axis_value);
    }

    auto rows = compute_metrics(records, cfg, "t");
    bool saw_40 = false;
    for (const auto& row : rows)
        if (row.axis_value == 40 && row.metric == "rmse.llm") {
            CHECK(row.token_count == 79); // 2 * 40 - 1
            saw_40 = true;
        }
    CHECK(saw_40);
}

TEST_CASE("multi-step run produces the documented split and rollout metrics") {
    TempDir dir;
    ExperimentConfig cfg;
    cfg.pde = PDESpec::allen_cahn();
    cfg.sweep = MultiStepSweep{14, 25, 2};
    cfg.trials = 2;
    cfg.seed = 3;
    cfg.backend = BackendConfig{OracleBackendConfig{"", 64, 8}, 0.6, 20};
    cfg.baselines = {SchemeId::Ftcs, SchemeId::Imex};
    RunPaths paths{dir.path / "run"};
    ExperimentRunner runner(cfg, paths);
    auto summary = runner.run();
    CHECK(summary.total == 4); // 2 trials x 2 generations

    auto records = read_records(paths.records());
    REQUIRE(records.size() == 4);
    for (const auto& r : records) {
        REQUIRE(r.ok);
        CHECK(r.grid.context_steps == 16);
        CHECK(r.predicted.cols() == 10);
        CHECK(r.reference.cols() == 10);
        CHECK(r.floor_rmse.size() == 10);
        CHECK(r.entropy_per_step.size() == 10); // oracle distributions are one-hot
        for (double h : r.entropy_per_step) CHECK(h == 0.0);
        for (const auto& [name, m] : r.baselines) CHECK(m.cols() == 10);
    }

    auto rows = compute_metrics(records, cfg, "t");
    std::size_t rmse_rows = 0;
    for (const auto& row : rows) {
        if (row.metric == "rmse.llm") {
            ++rmse_rows;
            CHECK(row.token_count == token_count(static_cast<std::size_t>(row.axis_value), 14));
            CHECK(row.m_effective == 2); // aggregated across trials
        }
    }
    CHECK(rmse_rows == 10);

    // prompts hold the exact context payload
    auto prompt_file = paths.prompts() / "multi_step_nt25_t0_g0.txt";
    REQUIRE(fs::exists(prompt_file));
    std::ifstream in(prompt_file);
    std::string prompt((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(count_tokens(prompt) == token_count(16, 14) + 1); // trailing semicolon
    CHECK(prompt.back() == ';');
}

TEST_CASE("energy experiment orders the deviation curves") {
    TempDir dir;
    ExperimentConfig cfg;
    cfg.pde = PDESpec::heat(0.01, BoundarySpec::neumann());
    cfg.ic_lo = 0.0;
    cfg.ic_hi = 1.0;
    cfg.sweep = EnergySweep{14, 25, 1};
    cfg.trials = 3;
    cfg.seed = 7;
    cfg.backend = BackendConfig{OracleBackendConfig{"", 64, 8}, 0.6, 20};
    cfg.baselines = {SchemeId::Ftcs, SchemeId::Btcs};
    RunPaths paths{dir.path / "run"};
    ExperimentRunner runner(cfg, paths);
    runner.run();

    auto records = read_records(paths.records());
    REQUIRE(records.size() == 3);
    for (const auto& r : records) {
        REQUIRE(r.ok);
        CHECK(r.e0 > 0.5); // a = 0, b = 1 keeps E(0) away from zero
        REQUIRE(r.delta_e.size() == 10);
        REQUIRE(r.reference_delta_e.size() == 10);
        for (double d : r.reference_delta_e) {
            CHECK(d >= 0.0);
            // dominated by the wall reconstruction across the (still
            // unrelaxed) boundary layer; a couple percent at worst
            CHECK(d < 3.0);
        }
        for (const auto& [name, v] : r.baseline_delta_e) REQUIRE(v.size() == 10);
    }

    auto rows = compute_metrics(records, cfg, "t");
    bool saw_reference = false, saw_llm = false;
    for (const auto& row : rows) {
        if (row.metric == "delta_e.reference") saw_reference = true;
        if (row.metric == "delta_e.llm") saw_llm = true;
    }
    CHECK(saw_reference);
    CHECK(saw_llm);
}

TEST_CASE("runs are resumable: completed units are skipped") {
    TempDir dir;
    auto cfg = oracle_context_config({2, 4}, 2);
    RunPaths paths{dir.path / "run"};
    {
        ExperimentRunner runner(cfg, paths);
        auto first = runner.run();
        CHECK(first.completed == 4);
    }
    const std::string before = strip_volatile(paths.records());
    {
        ExperimentRunner runner(cfg, paths);
        auto second = runner.run();
        CHECK(second.completed == 0);
        CHECK(second.skipped == 4);
    }
    CHECK(strip_volatile(paths.records()) == before);
}

TEST_CASE("excessive trial failures abort with the records kept") {
    TempDir dir;
    auto cfg = oracle_context_config({2, 3}, 2);
    // a replay backend over an empty fixture misses on every request
    const fs::path fixture = dir.path / "empty.jsonl";
    std::ofstream(fixture).close();
    auto replay = std::make_shared<ReplayBackendConfig>();
    replay->fixture = fixture.string();
    replay->record = false;
    cfg.backend.kind = replay;

    RunPaths paths{dir.path / "run"};
    ExperimentRunner runner(cfg, paths);
    CHECK_THROWS_AS(runner.run(), ExcessiveFailures);

    auto records = read_records(paths.records());
    CHECK(records.size() == 4);
    for (const auto& r : records) {
        CHECK_FALSE(r.ok);
        CHECK(!r.reason.empty());
    }
}

TEST_CASE("solution cache leaves results identical") {
    TempDir dir;
    auto cfg = oracle_context_config({4}, 2);
    ExperimentRunner plain(cfg, RunPaths{dir.path / "plain"});
    plain.run();

    cfg.cache_dir = (dir.path / "cache").string();
    ExperimentRunner cached(cfg, RunPaths{dir.path / "cached"});
    cached.run();
    // run again, now hitting the cache
    fs::remove(RunPaths{dir.path / "cached2"}.records());
    ExperimentRunner cached2(cfg, RunPaths{dir.path / "cached2"});
    cached2.run();

    const std::string a = strip_volatile(RunPaths{dir.path / "plain"}.records());
    const std::string b = strip_volatile(RunPaths{dir.path / "cached"}.records());
    const std::string c = strip_volatile(RunPaths{dir.path / "cached2"}.records());
    CHECK(a == b);
    CHECK(b == c);
    CHECK(fs::exists(dir.path / "cache"));
    CHECK(!fs::is_empty(dir.path / "cache"));
}

TEST_CASE("manifest is written before trials and echoes a loadable config") {
    TempDir dir;
    auto cfg = oracle_context_config({2}, 1);
    RunPaths paths{dir.path / "run"};
    ExperimentRunner runner(cfg, paths);
    runner.run();

    std::ifstream in(paths.manifest());
    REQUIRE(in.good());
    auto manifest = nlohmann::json::parse(in);
    CHECK(manifest.at("tool") == "pdeseq");
    CHECK(manifest.at("probe").at("status") == "pass");
    // the echoed config round-trips through the strict loader
    ExperimentConfig echo = config_from_json(manifest.at("config"));
    CHECK(echo.trials == cfg.trials);
    CHECK(echo.seed == cfg.seed);
    CHECK(echo.experiment_name() == cfg.experiment_name());
}

TEST_CASE("averaged-prediction aggregation averages fields before the error") {
    TempDir dir;
    ExperimentConfig cfg;
    cfg.pde = PDESpec::allen_cahn();
    cfg.sweep = MultiStepSweep{6, 6, 3};
    cfg.trials = 1;
    cfg.seed = 13;
    cfg.backend = BackendConfig{OracleBackendConfig{"", 16, 4}, 0.6, 20};
    cfg.baselines = {SchemeId::Ftcs};
    RunPaths paths{dir.path / "run"};
    ExperimentRunner runner(cfg, paths);
    runner.run();
    auto records = read_records(paths.records());
    REQUIRE(records.size() == 3);

    cfg.averaged_prediction = true;
    auto rows = compute_metrics(records, cfg, "t");

    // deterministic backend: all generations coincide, so averaging the
    // predictions first must equal the error of any single generation
    const auto rmse = rmse_per_step(records[0].predicted, records[0].reference);
    for (const auto& row : rows)
        if (row.metric == "rmse.llm") {
            const std::size_t n = static_cast<std::size_t>(row.axis_value);
            CHECK(row.mean == Catch::Approx(rmse[n - 1]).margin(1e-12));
            CHECK(row.m_effective == 1);
        }
}

TEST_CASE("fisher-kpp and wave families run end to end") {
    TempDir dir;
    {
        ExperimentConfig cfg;
        cfg.pde = PDESpec::fisher_kpp();
        cfg.ic_lo = 0.2;
        cfg.ic_hi = 0.8;
        cfg.sweep = ContextSweep{10, {3, 6}};
        cfg.trials = 2;
        cfg.seed = 21;
        cfg.backend = BackendConfig{OracleBackendConfig{"", 32, 8}, 0.6, 20};
        cfg.baselines = {SchemeId::Ftcs, SchemeId::Imex};
        ExperimentRunner runner(cfg, RunPaths{dir.path / "fisher"});
        auto summary = runner.run();
        CHECK(summary.failed == 0);
        for (const auto& r : read_records(RunPaths{dir.path / "fisher"}.records())) {
            REQUIRE(r.ok);
            // the oracle stays near the quantization floor here too
            CHECK(rmse_per_step(r.predicted, r.reference)[0] <= 5.0 * r.floor_rmse[0]);
        }
    }
    {
        ExperimentConfig cfg;
        cfg.pde = PDESpec::wave(0.2, BoundarySpec::dirichlet(0.0));
        cfg.sweep = MultiStepSweep{10, 9, 1};
        cfg.trials = 2;
        cfg.seed = 22;
        cfg.backend =
            BackendConfig{OracleBackendConfig{"leapfrog", 16, 8}, 0.6, 20};
        cfg.baselines = {SchemeId::LeapfrogWave, SchemeId::CrankNicolsonWave};
        ExperimentRunner runner(cfg, RunPaths{dir.path / "wave"});
        auto summary = runner.run();
        CHECK(summary.failed == 0);
        for (const auto& r : read_records(RunPaths{dir.path / "wave"}.records())) {
            REQUIRE(r.ok);
            CHECK(r.grid.context_steps == 6);  // floor(2*9/3)
            CHECK(r.predicted.cols() == 4);    // 9 + 1 - 6
            for (double v : r.predicted.data()) CHECK(std::isfinite(v));
        }
    }
}

TEST_CASE("parallel jobs produce the same record set") {
    TempDir dir;
    auto cfg = oracle_context_config({2, 3, 5, 8}, 3);
    ExperimentRunner serial(cfg, RunPaths{dir.path / "serial"});
    serial.run();
    cfg.jobs = 4;
    ExperimentRunner parallel(cfg, RunPaths{dir.path / "parallel"});
    parallel.run();

    auto sorted_keys = [](const fs::path& p) {
        std::vector<std::string> keys;
        for (const auto& r : read_records(p)) keys.push_back(r.key());
        std::sort(keys.begin(), keys.end());
        return keys;
    };
    CHECK(sorted_keys(RunPaths{dir.path / "serial"}.records()) ==
          sorted_keys(RunPaths{dir.path / "parallel"}.records()));

    auto by_key = [](const fs::path& p) {
        std::map<std::string, std::string> m;
        for (const auto& r : read_records(p)) {
            auto j = record_to_json(r);
            j.erase("wall_ms");
            m[r.key()] = j.dump();
        }
        return m;
    };
    CHECK(by_key(RunPaths{dir.path / "serial"}.records()) ==
          by_key(RunPaths{dir.path / "parallel"}.records()));
}
