#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "pdeseq/backend.hpp"
#include "pdeseq/codec.hpp"
#include "pdeseq/config.hpp"
#include "pdeseq/metrics.hpp"
#include "pdeseq/rng.hpp"
#include "pdeseq/solver.hpp"
#include "pdeseq/version.hpp"

namespace pdeseq {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Trial records
// ---------------------------------------------------------------------------

struct GridMeta {
    double half_width = 1.0;
    double final_time = 0.5;
    std::size_t n_x = 0;
    std::size_t n_t = 0;
    std::size_t context_steps = 0;
    double dx = 0.0;
    double dt = 0.0;
};

/// Everything one work unit produced. A failed unit keeps its provenance and
/// a reason; metric aggregation skips it.
struct TrialRecord {
    std::string experiment;
    std::string axis_name;   // n_t | n_x | step
    std::size_t axis_value = 0;
    std::size_t trial = 0;
    std::size_t generation = 0;
    bool ok = true;
    std::string reason;

    std::uint64_t ic_seed = 0;
    std::size_t ic_n_x = 0;
    double ic_lo = 0.0, ic_hi = 0.0, ic_u_bc = 0.0;
    std::vector<double> ic_knot_values;

    QuantRange range;
    GridMeta grid;

    Matrix<double> predicted;  // columns = predicted steps
    Matrix<double> reference;  // reconstructed reference, same shape
    std::map<std::string, Matrix<double>> baselines;
    std::vector<double> floor_rmse, floor_maxae;

    std::vector<double> entropy_per_step;
    std::size_t entropy_k = 0;
    bool entropy_lower_bound = false;
    std::vector<std::vector<PositionDistribution>> value_distributions; // per step
    std::vector<PositionDistribution> separator_distributions;         // first step

    std::size_t ood_count = 0, malformed_count = 0, nonstandard_count = 0, retries = 0;

    double e0 = 0.0;
    std::vector<double> delta_e;                              // backend rollout
    std::map<std::string, std::vector<double>> baseline_delta_e;
    std::vector<double> reference_delta_e;                    // grid-induced

    double wall_ms = 0.0;

    std::string key() const {
        return experiment + "|" + axis_name + "|" + std::to_string(axis_value) + "|" +
               std::to_string(trial) + "|" + std::to_string(generation);
    }
};

namespace rec_detail {

inline nlohmann::ordered_json matrix_to_json(const Matrix<double>& m) {
    auto cols = nlohmann::ordered_json::array();
    for (std::size_t j = 0; j < m.cols(); ++j) {
        auto col = nlohmann::ordered_json::array();
        for (std::size_t i = 0; i < m.rows(); ++i) col.push_back(m(i, j));
        cols.push_back(std::move(col));
    }
    return cols;
}

inline Matrix<double> matrix_from_json(const nlohmann::json& j) {
    if (j.empty()) return {};
    Matrix<double> m(j.at(0).size(), j.size());
    for (std::size_t c = 0; c < j.size(); ++c)
        for (std::size_t r = 0; r < j.at(c).size(); ++r)
            m(r, c) = j.at(c).at(r).get<double>();
    return m;
}

inline nlohmann::ordered_json dists_to_json(const std::vector<PositionDistribution>& ds) {
    auto out = nlohmann::ordered_json::array();
    for (const auto& d : ds) {
        nlohmann::ordered_json dj;
        auto entries = nlohmann::ordered_json::array();
        for (const auto& e : d.entries) entries.push_back({e.token, e.prob});
        dj["entries"] = std::move(entries);
        dj["remainder"] = d.remainder;
        out.push_back(std::move(dj));
    }
    return out;
}

inline std::vector<PositionDistribution> dists_from_json(const nlohmann::json& j) {
    std::vector<PositionDistribution> out;
    for (const auto& dj : j) {
        PositionDistribution d;
        for (const auto& e : dj.at("entries"))
            d.entries.push_back({e.at(0).get<std::string>(), e.at(1).get<double>()});
        d.remainder = dj.at("remainder").get<double>();
        out.push_back(std::move(d));
    }
    return out;
}

} // namespace rec_detail

inline nlohmann::ordered_json record_to_json(const TrialRecord& r) {
    using rec_detail::dists_to_json;
    using rec_detail::matrix_to_json;
    nlohmann::ordered_json j;
    j["key"] = r.key();
    j["experiment"] = r.experiment;
    j["axis"] = {{"name", r.axis_name}, {"value", r.axis_value}};
    j["trial"] = r.trial;
    j["generation"] = r.generation;
    j["ok"] = r.ok;
    if (!r.ok) j["reason"] = r.reason;
    j["ic"] = {{"seed", r.ic_seed}, {"n_x", r.ic_n_x},    {"lo", r.ic_lo},
               {"hi", r.ic_hi},     {"u_bc", r.ic_u_bc},  {"knots", r.ic_knot_values}};
    j["range"] = {{"u_min", r.range.u_min}, {"u_max", r.range.u_max}};
    j["grid"] = {{"half_width", r.grid.half_width}, {"final_time", r.grid.final_time},
                 {"n_x", r.grid.n_x},               {"n_t", r.grid.n_t},
                 {"context_steps", r.grid.context_steps},
                 {"dx", r.grid.dx},                 {"dt", r.grid.dt}};
    j["predicted"] = matrix_to_json(r.predicted);
    j["reference"] = matrix_to_json(r.reference);
    nlohmann::ordered_json baselines;
    for (const auto& [name, m] : r.baselines) baselines[name] = matrix_to_json(m);
    j["baselines"] = std::move(baselines);
    j["floor_rmse"] = r.floor_rmse;
    j["floor_maxae"] = r.floor_maxae;
    if (!r.entropy_per_step.empty())
        j["entropy"] = {{"per_step", r.entropy_per_step},
                        {"k", r.entropy_k},
                        {"lower_bound", r.entropy_lower_bound}};
    auto value_dists = nlohmann::ordered_json::array();
    for (const auto& step : r.value_distributions) value_dists.push_back(dists_to_json(step));
    j["distributions"] = {{"values", std::move(value_dists)},
                          {"separators", dists_to_json(r.separator_distributions)}};
    j["parse"] = {{"ood", r.ood_count},
                  {"malformed", r.malformed_count},
                  {"nonstandard", r.nonstandard_count},
                  {"retries", r.retries}};
    if (!r.delta_e.empty() || !r.reference_delta_e.empty()) {
        nlohmann::ordered_json energy;
        energy["e0"] = r.e0;
        energy["llm"] = r.delta_e;
        nlohmann::ordered_json be;
        for (const auto& [name, v] : r.baseline_delta_e) be[name] = v;
        energy["baselines"] = std::move(be);
        energy["reference"] = r.reference_delta_e;
        j["energy"] = std::move(energy);
    }
    j["wall_ms"] = r.wall_ms;
    return j;
}

inline TrialRecord record_from_json(const nlohmann::json& j) {
    using rec_detail::dists_from_json;
    using rec_detail::matrix_from_json;
    TrialRecord r;
    r.experiment = j.at("experiment").get<std::string>();
    r.axis_name = j.at("axis").at("name").get<std::string>();
    r.axis_value = j.at("axis").at("value").get<std::size_t>();
    r.trial = j.at("trial").get<std::size_t>();
    r.generation = j.at("generation").get<std::size_t>();
    r.ok = j.at("ok").get<bool>();
    r.reason = j.value("reason", "");
    const auto& ic = j.at("ic");
    r.ic_seed = ic.at("seed").get<std::uint64_t>();
    r.ic_n_x = ic.at("n_x").get<std::size_t>();
    r.ic_lo = ic.at("lo").get<double>();
    r.ic_hi = ic.at("hi").get<double>();
    r.ic_u_bc = ic.at("u_bc").get<double>();
    r.ic_knot_values = ic.at("knots").get<std::vector<double>>();
    r.range = {j.at("range").at("u_min").get<double>(), j.at("range").at("u_max").get<double>()};
    const auto& g = j.at("grid");
    r.grid = {g.at("half_width").get<double>(), g.at("final_time").get<double>(),
              g.at("n_x").get<std::size_t>(),   g.at("n_t").get<std::size_t>(),
              g.at("context_steps").get<std::size_t>(),
              g.at("dx").get<double>(),         g.at("dt").get<double>()};
    r.predicted = matrix_from_json(j.at("predicted"));
    r.reference = matrix_from_json(j.at("reference"));
    for (const auto& [name, m] : j.at("baselines").items())
        r.baselines[name] = matrix_from_json(m);
    r.floor_rmse = j.at("floor_rmse").get<std::vector<double>>();
    r.floor_maxae = j.at("floor_maxae").get<std::vector<double>>();
    if (j.contains("entropy")) {
        r.entropy_per_step = j.at("entropy").at("per_step").get<std::vector<double>>();
        r.entropy_k = j.at("entropy").at("k").get<std::size_t>();
        r.entropy_lower_bound = j.at("entropy").at("lower_bound").get<bool>();
    }
    for (const auto& step : j.at("distributions").at("values"))
        r.value_distributions.push_back(dists_from_json(step));
    r.separator_distributions = dists_from_json(j.at("distributions").at("separators"));
    const auto& p = j.at("parse");
    r.ood_count = p.at("ood").get<std::size_t>();
    r.malformed_count = p.at("malformed").get<std::size_t>();
    r.nonstandard_count = p.at("nonstandard").get<std::size_t>();
    r.retries = p.at("retries").get<std::size_t>();
    if (j.contains("energy")) {
        const auto& e = j.at("energy");
        r.e0 = e.at("e0").get<double>();
        r.delta_e = e.at("llm").get<std::vector<double>>();
        for (const auto& [name, v] : e.at("baselines").items())
            r.baseline_delta_e[name] = v.get<std::vector<double>>();
        r.reference_delta_e = e.at("reference").get<std::vector<double>>();
    }
    r.wall_ms = j.value("wall_ms", 0.0);
    return r;
}

inline std::vector<TrialRecord> read_records(const fs::path& path) {
    std::ifstream file(path);
    if (!file) throw ConfigError("records: cannot open " + path.string());
    std::map<std::string, TrialRecord> latest; // resume may append retries of failed units
    std::vector<std::string> order;
    std::string line;
    while (std::getline(file, line)) {
        if (line.empty()) continue;
        TrialRecord r;
        try {
            r = record_from_json(nlohmann::json::parse(line));
        } catch (const nlohmann::json::exception&) {
            continue; // tolerate a line truncated by an interrupted run
        }
        if (!latest.count(r.key())) order.push_back(r.key());
        latest[r.key()] = std::move(r);
    }
    std::vector<TrialRecord> out;
    out.reserve(order.size());
    for (const auto& k : order) out.push_back(std::move(latest[k]));
    return out;
}

// ---------------------------------------------------------------------------
// Reference cache
// ---------------------------------------------------------------------------

/// Binary store of restricted reference solutions, keyed by everything that
/// determines them. Purely an accelerator: results are identical with the
/// cache off.
class SolutionCache {
public:
    explicit SolutionCache(fs::path dir) : dir_(std::move(dir)) {
        if (!dir_.empty()) fs::create_directories(dir_);
    }

    static std::string key(const PDESpec& pde, SchemeId scheme, const ICSpline& ic,
                           const SpatialGrid& space, const TimeGrid& time, std::size_t refine_x,
                           std::size_t refine_t) {
        std::ostringstream os;
        os.precision(17);
        os << pde.name() << '|' << pde.diffusion_coefficient() << '|'
           << (pde.boundary.is_dirichlet() ? pde.boundary.value : 1e308) << '|'
           << scheme_name(scheme) << '|' << space.half_width << '|' << space.n_x << '|'
           << time.final_time << '|' << time.n_t << '|' << refine_x << '|' << refine_t;
        for (double v : ic.values) os << '|' << v;
        return hex64(fnv1a64(os.str()));
    }

    std::optional<Matrix<double>> load(const std::string& key) const {
        if (dir_.empty()) return std::nullopt;
        std::ifstream file(dir_ / (key + ".bin"), std::ios::binary);
        if (!file) return std::nullopt;
        std::uint64_t rows = 0, cols = 0;
        file.read(reinterpret_cast<char*>(&rows), sizeof rows);
        file.read(reinterpret_cast<char*>(&cols), sizeof cols);
        Matrix<double> m(rows, cols);
        file.read(reinterpret_cast<char*>(m.data().data()),
                  static_cast<std::streamsize>(rows * cols * sizeof(double)));
        if (!file) return std::nullopt;
        return m;
    }

    void store(const std::string& key, const Matrix<double>& m) const {
        if (dir_.empty()) return;
        std::ofstream file(dir_ / (key + ".bin"), std::ios::binary);
        const std::uint64_t rows = m.rows(), cols = m.cols();
        file.write(reinterpret_cast<const char*>(&rows), sizeof rows);
        file.write(reinterpret_cast<const char*>(&cols), sizeof cols);
        file.write(reinterpret_cast<const char*>(m.data().data()),
                   static_cast<std::streamsize>(rows * cols * sizeof(double)));
    }

private:
    fs::path dir_;
};

// ---------------------------------------------------------------------------
// Runner
// ---------------------------------------------------------------------------

struct RunPaths {
    fs::path dir;
    fs::path records() const { return dir / "records.jsonl"; }
    fs::path metrics() const { return dir / "metrics.csv"; }
    fs::path manifest() const { return dir / "manifest.json"; }
    fs::path prompts() const { return dir / "prompts"; }
    fs::path fixtures() const { return dir / "fixtures"; }
};

struct RunSummary {
    std::size_t total = 0;
    std::size_t completed = 0;
    std::size_t failed = 0;
    std::size_t skipped = 0; // already present from a previous invocation
    ProbeReport probe;
};

class ExperimentRunner {
public:
    ExperimentRunner(ExperimentConfig cfg, RunPaths paths)
        : cfg_(std::move(cfg)), paths_(std::move(paths)), cache_(cfg_.cache_dir) {}

    /// Execute every missing work unit, appending records as they finish.
    /// The manifest is persisted before the first trial starts.
    RunSummary run() {
        fs::create_directories(paths_.dir);
        if (cfg_.dump_prompts) fs::create_directories(paths_.prompts());

        make_shared_backend();
        RunSummary summary;
        summary.probe = shared_backend_ ? probe_tokenization(*shared_backend_)
                                        : ProbeReport{ProbeReport::Status::Pass,
                                                      "canonical tokenizer (oracle backend)",
                                                      {}};
        write_manifest(summary.probe);

        const auto units = build_units();
        summary.total = units.size();

        std::set<std::string> done;
        if (fs::exists(paths_.records()))
            for (const auto& r : read_records(paths_.records()))
                if (r.ok) done.insert(r.key());

        std::ofstream records(paths_.records(), std::ios::app);
        if (!records) throw ConfigError("run: cannot open " + paths_.records().string());

        std::atomic<std::size_t> next{0};
        std::atomic<std::size_t> failed{0}, completed{0}, skipped{0};
        std::mutex write_mutex;

        auto worker = [&]() {
            while (true) {
                const std::size_t idx = next.fetch_add(1);
                if (idx >= units.size()) return;
                const Unit& unit = units[idx];
                if (done.count(unit_key(unit))) {
                    ++skipped;
                    continue;
                }
                TrialRecord record = execute(unit);
                record.ok ? ++completed : ++failed;
                std::lock_guard lock(write_mutex);
                records << record_to_json(record).dump() << "\n";
                records.flush();
            }
        };

        if (cfg_.jobs <= 1) {
            worker();
        } else {
            std::vector<std::thread> pool;
            for (std::size_t t = 0; t < cfg_.jobs; ++t) pool.emplace_back(worker);
            for (auto& t : pool) t.join();
        }

        summary.completed = completed;
        summary.failed = failed;
        summary.skipped = skipped;

        const std::size_t attempted = summary.completed + summary.failed;
        if (attempted > 0 &&
            static_cast<double>(summary.failed) >
                cfg_.max_failure_fraction * static_cast<double>(attempted))
            throw ExcessiveFailures("run: " + std::to_string(summary.failed) + " of " +
                                    std::to_string(attempted) + " trials failed");
        return summary;
    }

private:
    struct Unit {
        std::size_t trial = 0;
        std::size_t generation = 0;
        std::size_t sweep_value = 0; // n_t or n_x for the one-step sweeps
    };

    ExperimentConfig cfg_;
    RunPaths paths_;
    SolutionCache cache_;
    std::shared_ptr<Backend> shared_backend_;

    std::string unit_key(const Unit& u) const {
        const std::string exp = cfg_.experiment_name();
        if (exp == "one_step_context")
            return exp + "|n_t|" + std::to_string(u.sweep_value) + "|" +
                   std::to_string(u.trial) + "|0";
        if (exp == "one_step_output")
            return exp + "|n_x|" + std::to_string(u.sweep_value) + "|" +
                   std::to_string(u.trial) + "|0";
        return exp + "|step|0|" + std::to_string(u.trial) + "|" + std::to_string(u.generation);
    }

    std::vector<Unit> build_units() const {
        std::vector<Unit> units;
        if (const auto* cs = std::get_if<ContextSweep>(&cfg_.sweep)) {
            for (std::size_t m = 0; m < cfg_.trials; ++m)
                for (std::size_t v : cs->n_t_values) units.push_back({m, 0, v});
        } else if (const auto* os = std::get_if<OutputSweep>(&cfg_.sweep)) {
            for (std::size_t m = 0; m < cfg_.trials; ++m)
                for (std::size_t v : os->n_x_values) units.push_back({m, 0, v});
        } else {
            const std::size_t generations =
                std::holds_alternative<MultiStepSweep>(cfg_.sweep)
                    ? std::get<MultiStepSweep>(cfg_.sweep).generations
                    : std::get<EnergySweep>(cfg_.sweep).generations;
            for (std::size_t m = 0; m < cfg_.trials; ++m)
                for (std::size_t g = 0; g < generations; ++g) units.push_back({m, g, 0});
        }
        return units;
    }

    void make_shared_backend() {
        const BackendConfig& b = cfg_.backend;
        if (const auto* http = std::get_if<HttpOptions>(&b.kind)) {
            shared_backend_ = std::make_shared<HttpBackend>(*http);
        } else if (std::holds_alternative<RepeatLastBackendConfig>(b.kind)) {
            shared_backend_ = std::make_shared<RepeatLastBackend>();
        } else if (const auto* rp = std::get_if<std::shared_ptr<ReplayBackendConfig>>(&b.kind)) {
            fs::path fixture = (*rp)->fixture.empty()
                                   ? paths_.fixtures() / "backend.jsonl"
                                   : fs::path((*rp)->fixture);
            if (fixture.has_parent_path()) fs::create_directories(fixture.parent_path());
            std::shared_ptr<Backend> inner;
            if ((*rp)->inner) {
                if (const auto* ih = std::get_if<HttpOptions>(&(*rp)->inner->kind))
                    inner = std::make_shared<HttpBackend>(*ih);
                else
                    inner = std::make_shared<RepeatLastBackend>();
            }
            shared_backend_ = std::make_shared<ReplayBackend>(
                fixture.string(),
                (*rp)->record ? ReplayBackend::Mode::Record : ReplayBackend::Mode::Replay, inner);
        }
        // oracle: constructed per unit, nothing shared
    }

    std::unique_ptr<Backend> unit_backend(const PDESpec& pde, const SpatialGrid& space,
                                          const TimeGrid& time, const QuantRange& range) const {
        const auto* oc = std::get_if<OracleBackendConfig>(&cfg_.backend.kind);
        if (!oc) return nullptr;
        const SchemeId scheme =
            oc->scheme.empty() ? reference_scheme(pde) : scheme_from_name(oc->scheme);
        return std::make_unique<OracleBackend>(pde, space, time, range, scheme, oc->substeps,
                                               oc->refine_x);
    }

    Matrix<double> cached_reference(const ICSpline& ic, const SpatialGrid& space,
                                    const TimeGrid& time, std::size_t refine_t_eff) const {
        const std::string key = SolutionCache::key(cfg_.pde, reference_scheme(cfg_.pde), ic,
                                                   space, time, cfg_.refine_x, refine_t_eff);
        if (auto hit = cache_.load(key)) return *hit;
        Matrix<double> values =
            reference_solution(cfg_.pde, ic, space, time, cfg_.refine_x, refine_t_eff).values;
        cache_.store(key, values);
        return values;
    }

    void dump_prompt(const Unit& unit, const std::string& axis, const std::string& context) const {
        if (!cfg_.dump_prompts) return;
        std::ostringstream name;
        name << cfg_.experiment_name() << "_" << axis << "_t" << unit.trial << "_g"
             << unit.generation << ".txt";
        std::ofstream file(paths_.prompts() / name.str(), std::ios::binary);
        file << context;
    }

    void write_manifest(const ProbeReport& probe) const {
        nlohmann::ordered_json j;
        j["tool"] = "pdeseq";
        j["version"] = version_string;
        const auto now = std::chrono::system_clock::now();
        j["created_at_unix"] =
            std::chrono::duration_cast<std::chrono::seconds>(now.time_since_epoch()).count();
        j["run_dir"] = paths_.dir.string();
        j["probe"] = {{"status", probe.passed() ? "pass" : "warn"},
                      {"note", probe.note},
                      {"observed", probe.observed}};
        j["config"] = config_to_json(cfg_);
        std::ofstream file(paths_.manifest());
        if (!file) throw ConfigError("run: cannot write manifest");
        file << j.dump(2) << "\n";
    }

    // --- unit execution ----------------------------------------------------

    TrialRecord execute(const Unit& unit) {
        const std::string exp = cfg_.experiment_name();
        const auto started = std::chrono::steady_clock::now();
        TrialRecord record;
        try {
            if (exp == "one_step_context") {
                record = one_step_unit(unit, std::get<ContextSweep>(cfg_.sweep).n_x,
                                       unit.sweep_value, "n_t");
            } else if (exp == "one_step_output") {
                record = one_step_unit(unit, unit.sweep_value,
                                       std::get<OutputSweep>(cfg_.sweep).n_t, "n_x");
            } else {
                record = rollout_unit(unit);
            }
        } catch (const std::exception& e) {
            record = failure_stub(unit);
            record.reason = e.what();
            record.ok = false;
        }
        record.wall_ms = std::chrono::duration<double, std::milli>(
                             std::chrono::steady_clock::now() - started)
                             .count();
        return record;
    }

    TrialRecord failure_stub(const Unit& unit) const {
        TrialRecord r;
        r.experiment = cfg_.experiment_name();
        if (r.experiment == "one_step_context") {
            r.axis_name = "n_t";
            r.axis_value = unit.sweep_value;
        } else if (r.experiment == "one_step_output") {
            r.axis_name = "n_x";
            r.axis_value = unit.sweep_value;
        } else {
            r.axis_name = "step";
        }
        r.trial = unit.trial;
        r.generation = unit.generation;
        r.ic_seed = trial_seed(cfg_.seed, unit.trial);
        return r;
    }

    void fill_ic_provenance(TrialRecord& r, const ICSpline& ic) const {
        r.ic_seed = ic.seed;
        r.ic_n_x = ic.n_x;
        r.ic_lo = ic.lo;
        r.ic_hi = ic.hi;
        r.ic_u_bc = ic.u_bc;
        r.ic_knot_values = ic.values;
    }

    void fill_slice_diagnostics(TrialRecord& r, const SliceResult& slice) const {
        r.ood_count += slice.report.ood_flags.size();
        r.malformed_count += slice.report.malformed.size();
        r.nonstandard_count += slice.report.nonstandard_groups.size();
        r.retries += slice.retries;
    }

    Matrix<double> decode_slices(const std::vector<const SliceResult*>& slices,
                                 const QuantRange& range, std::size_t n_x) const {
        Matrix<double> out(n_x, slices.size());
        for (std::size_t j = 0; j < slices.size(); ++j)
            for (std::size_t i = 0; i < n_x; ++i)
                out(i, j) = reconstruct_value(slices[j]->codes[i], range);
        return out;
    }

    void fill_entropy(TrialRecord& r, const std::vector<const SliceResult*>& slices,
                      std::size_t n_x) const {
        for (const auto* slice : slices) {
            if (slice->value_distributions.size() != n_x) {
                r.entropy_per_step.clear();
                return;
            }
            std::vector<DistributionRecord> records;
            for (std::size_t i = 0; i < n_x; ++i)
                records.push_back({i, slice->value_distributions[i], false});
            const EntropyResult h = mean_entropy(records, n_x, cfg_.entropy_log);
            r.entropy_per_step.push_back(h.value);
            r.entropy_k = std::max(r.entropy_k, h.k);
            r.entropy_lower_bound = r.entropy_lower_bound || h.lower_bound;
        }
    }

    /// One-step prediction: context is columns 0..n_t-1, target column n_t.
    TrialRecord one_step_unit(const Unit& unit, std::size_t n_x, std::size_t n_t,
                              const std::string& axis_name) {
        TrialRecord r;
        r.experiment = cfg_.experiment_name();
        r.axis_name = axis_name;
        r.axis_value = unit.sweep_value;
        r.trial = unit.trial;
        r.generation = 0;

        const ICSpline ic = sample_random_ic(trial_seed(cfg_.seed, unit.trial),
                                             cfg_.ic_knot_count(), cfg_.ic_lo, cfg_.ic_hi,
                                             cfg_.ic_boundary(), cfg_.half_width);
        fill_ic_provenance(r, ic);

        auto [space, time] = build_grids(cfg_.half_width, n_x, cfg_.final_time, n_t);
        const std::size_t refine_t_eff =
            stable_refine_t(cfg_.pde, space, time, cfg_.refine_x, cfg_.refine_t);
        const Matrix<double> ref = cached_reference(ic, space, time, refine_t_eff);

        const QuantizedField q = quantize(ref);
        const Matrix<double> recon = reconstruct(q);
        r.range = q.range;
        r.grid = {cfg_.half_width, cfg_.final_time, n_x, n_t, n_t, space.dx, time.dt};

        std::string context = serialize(q, 0, n_t);
        if (cfg_.trailing_semicolon) context += ';';
        dump_prompt(unit, axis_name + std::to_string(unit.sweep_value), context);

        auto oracle = unit_backend(cfg_.pde, space, time, q.range);
        Backend& backend = oracle ? *oracle : *shared_backend_;
        const SliceResult slice = generate_slice(
            backend, context, n_x, {cfg_.backend.temperature, cfg_.backend.top_k});
        fill_slice_diagnostics(r, slice);

        const std::vector<const SliceResult*> slices{&slice};
        r.predicted = decode_slices(slices, q.range, n_x);
        r.reference = Matrix<double>(n_x, 1);
        r.reference.set_col(0, recon.col(n_t));
        fill_entropy(r, slices, n_x);
        r.value_distributions.push_back(slice.value_distributions);
        r.separator_distributions = slice.separator_distributions;

        const FloorSeries floor = quantization_floor(ref);
        r.floor_rmse = {floor.rmse[n_t]};
        r.floor_maxae = {floor.maxae[n_t]};

        for (SchemeId scheme : cfg_.baselines) {
            StepState state{recon.col(n_t - 1)};
            if (cfg_.pde.second_order_in_time()) state.previous = recon.col(n_t - 2);
            const auto col = advance(cfg_.pde, scheme, state, space, time, n_t);
            Matrix<double> m(n_x, 1);
            m.set_col(0, col);
            r.baselines[scheme_name(scheme)] = std::move(m);
        }
        return r;
    }

    /// Multi-step rollout (and the energy variant): context is the first
    /// floor(2 n_t / 3) columns, prediction the remaining n_t + 1 - C.
    TrialRecord rollout_unit(const Unit& unit) {
        const bool energy = std::holds_alternative<EnergySweep>(cfg_.sweep);
        const std::size_t n_x = energy ? std::get<EnergySweep>(cfg_.sweep).n_x
                                       : std::get<MultiStepSweep>(cfg_.sweep).n_x;
        const std::size_t n_t = energy ? std::get<EnergySweep>(cfg_.sweep).n_t
                                       : std::get<MultiStepSweep>(cfg_.sweep).n_t;
        const std::size_t context_steps = 2 * n_t / 3; // includes the IC column
        const std::size_t prediction_steps = n_t + 1 - context_steps;

        TrialRecord r;
        r.experiment = cfg_.experiment_name();
        r.axis_name = "step";
        r.axis_value = 0;
        r.trial = unit.trial;
        r.generation = unit.generation;

        const ICSpline ic = sample_random_ic(trial_seed(cfg_.seed, unit.trial),
                                             cfg_.ic_knot_count(), cfg_.ic_lo, cfg_.ic_hi,
                                             cfg_.ic_boundary(), cfg_.half_width);
        fill_ic_provenance(r, ic);

        auto [space, time] = build_grids(cfg_.half_width, n_x, cfg_.final_time, n_t);
        const std::size_t refine_t_eff =
            stable_refine_t(cfg_.pde, space, time, cfg_.refine_x, cfg_.refine_t);
        const Matrix<double> ref = cached_reference(ic, space, time, refine_t_eff);

        double e0 = 0.0;
        if (energy) {
            e0 = ic_energy(ic.spline);
            if (std::abs(e0) <= 1e-6)
                throw TrialFailure("energy trial rejected: |E(0)| <= 1e-6");
        }

        const QuantizedField q = quantize(ref);
        const Matrix<double> recon = reconstruct(q);
        r.range = q.range;
        r.grid = {cfg_.half_width, cfg_.final_time, n_x, n_t, context_steps, space.dx, time.dt};

        std::string context = serialize(q, 0, context_steps);
        if (cfg_.trailing_semicolon) context += ';';
        dump_prompt(unit, "nt" + std::to_string(n_t), context);

        auto oracle = unit_backend(cfg_.pde, space, time, q.range);
        Backend& backend = oracle ? *oracle : *shared_backend_;
        const RolloutResult roll = rollout(backend, context, n_x, prediction_steps,
                                           {cfg_.backend.temperature, cfg_.backend.top_k});

        std::vector<const SliceResult*> slices;
        for (const auto& s : roll.steps) {
            slices.push_back(&s);
            fill_slice_diagnostics(r, s);
        }
        r.predicted = decode_slices(slices, q.range, n_x);
        r.reference = Matrix<double>(n_x, prediction_steps);
        for (std::size_t s = 0; s < prediction_steps; ++s)
            r.reference.set_col(s, recon.col(context_steps + s));
        fill_entropy(r, slices, n_x);
        for (const auto& s : roll.steps) r.value_distributions.push_back(s.value_distributions);
        if (!roll.steps.empty()) r.separator_distributions = roll.steps[0].separator_distributions;

        const FloorSeries floor = quantization_floor(ref);
        r.floor_rmse.assign(floor.rmse.begin() + static_cast<std::ptrdiff_t>(context_steps),
                            floor.rmse.end());
        r.floor_maxae.assign(floor.maxae.begin() + static_cast<std::ptrdiff_t>(context_steps),
                             floor.maxae.end());

        for (SchemeId scheme : cfg_.baselines)
            r.baselines[scheme_name(scheme)] =
                baseline_rollout(scheme, recon, context_steps, prediction_steps, space, time);

        if (energy) {
            r.e0 = e0;
            r.delta_e = energy_deviation(r.predicted, space.dx, e0);
            for (const auto& [name, m] : r.baselines)
                r.baseline_delta_e[name] = energy_deviation(m, space.dx, e0);
            // grid-induced reference: the raw restricted fine solution
            Matrix<double> raw(n_x, prediction_steps);
            for (std::size_t s = 0; s < prediction_steps; ++s)
                raw.set_col(s, ref.col(context_steps + s));
            r.reference_delta_e = energy_deviation(raw, space.dx, e0);
        }
        return r;
    }

    /// Classical IVP from the final context slice, advanced through the
    /// prediction window at the experiment discretization. Three-level wave
    /// schemes restart from the last two context slices.
    Matrix<double> baseline_rollout(SchemeId scheme, const Matrix<double>& recon,
                                    std::size_t context_steps, std::size_t prediction_steps,
                                    const SpatialGrid& space, const TimeGrid& time) const {
        const std::size_t n_x = space.n_x;
        Matrix<double> out(n_x, prediction_steps);
        std::vector<double> current(recon.col(context_steps - 1).begin(),
                                    recon.col(context_steps - 1).end());
        std::vector<double> previous;
        if (cfg_.pde.second_order_in_time())
            previous.assign(recon.col(context_steps - 2).begin(),
                            recon.col(context_steps - 2).end());
        for (std::size_t s = 0; s < prediction_steps; ++s) {
            StepState state{current};
            if (cfg_.pde.second_order_in_time()) state.previous = previous;
            auto next = advance(cfg_.pde, scheme, state, space, time, context_steps + s);
            out.set_col(s, next);
            previous = std::move(current);
            current = std::move(next);
        }
        return out;
    }
};

/// Export one solution as CSV: header row of time levels, first column the
/// interior abscissae.
inline void write_solution_csv(const SolutionField& field, std::ostream& os) {
    os.precision(17);
    os << "x";
    for (double t : field.time.levels) os << ',' << t;
    os << '\n';
    for (std::size_t i = 0; i < field.space.n_x; ++i) {
        os << field.space.interior(i);
        for (std::size_t j = 0; j <= field.time.n_t; ++j) os << ',' << field.values(i, j);
        os << '\n';
    }
}

} // namespace pdeseq
