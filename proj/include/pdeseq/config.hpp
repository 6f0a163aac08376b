#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "pdeseq/backend.hpp"
#include "pdeseq/errors.hpp"
#include "pdeseq/metrics.hpp"
#include "pdeseq/pde.hpp"

namespace pdeseq {

// ---------------------------------------------------------------------------
// Config model
// ---------------------------------------------------------------------------

struct OracleBackendConfig {
    std::string scheme; // empty = canonical explicit scheme for the pde
    std::size_t substeps = 64;
    std::size_t refine_x = 8;
};

struct RepeatLastBackendConfig {};

struct ReplayBackendConfig;

struct BackendConfig {
    std::variant<HttpOptions, OracleBackendConfig, RepeatLastBackendConfig,
                 std::shared_ptr<ReplayBackendConfig>>
        kind;
    double temperature = 0.6; // applied server-side; Llama-3 generation default
    std::size_t top_k = 20;

    std::string name() const;
    bool is_oracle() const { return std::holds_alternative<OracleBackendConfig>(kind); }
};

struct ReplayBackendConfig {
    std::string fixture;
    bool record = false;
    std::optional<BackendConfig> inner; // required when recording
};

inline std::string BackendConfig::name() const {
    if (std::holds_alternative<HttpOptions>(kind)) return "http";
    if (std::holds_alternative<OracleBackendConfig>(kind)) return "oracle";
    if (std::holds_alternative<RepeatLastBackendConfig>(kind)) return "repeat_last";
    return "replay";
}

struct ContextSweep {
    std::size_t n_x = 14;
    std::vector<std::size_t> n_t_values; // default 2..40
};

struct OutputSweep {
    std::size_t n_t = 50;
    std::vector<std::size_t> n_x_values; // default 2,4,...,40
};

struct MultiStepSweep {
    std::size_t n_x = 14;
    std::size_t n_t = 25;
    std::size_t generations = 20;
};

struct EnergySweep {
    std::size_t n_x = 14;
    std::size_t n_t = 25;
    std::size_t generations = 1;
};

using SweepConfig = std::variant<ContextSweep, OutputSweep, MultiStepSweep, EnergySweep>;

struct ExperimentConfig {
    PDESpec pde = PDESpec::allen_cahn();
    double half_width = 1.0;
    double final_time = 0.5;

    double ic_lo = -0.5;
    double ic_hi = 0.5;
    std::optional<double> ic_u_bc;      // endpoint knot override
    std::optional<std::size_t> ic_knots; // sampling resolution override

    SweepConfig sweep = ContextSweep{};
    std::size_t trials = 50;
    std::uint64_t seed = 1;

    std::size_t refine_x = 8;
    std::size_t refine_t = 64;
    std::vector<SchemeId> baselines; // default per pde

    BackendConfig backend = BackendConfig{OracleBackendConfig{}, 0.6, 20};

    bool trailing_semicolon = true; // context ends at a slice boundary
    EntropyLog entropy_log = EntropyLog::Nat;

    std::size_t jobs = 1;
    double max_failure_fraction = 0.10;
    bool averaged_prediction = false; // average fields across generations first
    bool dump_prompts = true;
    std::string cache_dir;

    std::string experiment_name() const {
        if (std::holds_alternative<ContextSweep>(sweep)) return "one_step_context";
        if (std::holds_alternative<OutputSweep>(sweep)) return "one_step_output";
        if (std::holds_alternative<MultiStepSweep>(sweep)) return "multi_step";
        return "energy";
    }

    /// Knot resolution the random IC is sampled at. The output-length sweep
    /// keeps it fixed so every resolution sees the same random function.
    std::size_t ic_knot_count() const {
        if (ic_knots) return *ic_knots;
        if (const auto* cs = std::get_if<ContextSweep>(&sweep)) return cs->n_x;
        if (std::holds_alternative<OutputSweep>(sweep)) return 14;
        if (const auto* ms = std::get_if<MultiStepSweep>(&sweep)) return ms->n_x;
        return std::get<EnergySweep>(sweep).n_x;
    }

    BoundarySpec ic_boundary() const {
        if (ic_u_bc) return BoundarySpec::dirichlet(*ic_u_bc);
        return pde.boundary;
    }

    void validate() const;
};

// ---------------------------------------------------------------------------
// Strict JSON loading: unknown keys are configuration errors.
// ---------------------------------------------------------------------------

namespace cfg_detail {

inline void expect_keys(const nlohmann::json& j, const std::string& where,
                        const std::set<std::string>& allowed) {
    if (!j.is_object()) throw ConfigError("config: '" + where + "' must be an object");
    for (const auto& [key, value] : j.items())
        if (!allowed.count(key))
            throw ConfigError("config: unknown key '" + where + "." + key + "'");
}

template <typename T>
T get_or(const nlohmann::json& j, const std::string& key, const T& fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config: bad value for '" + key + "': " + e.what());
    }
}

inline BoundarySpec parse_boundary(const nlohmann::json& j) {
    expect_keys(j, "pde.boundary", {"kind", "value"});
    const std::string kind = get_or<std::string>(j, "kind", "dirichlet");
    if (kind == "dirichlet") return BoundarySpec::dirichlet(get_or<double>(j, "value", 0.0));
    if (kind == "neumann") {
        if (j.contains("value")) throw ConfigError("config: neumann boundary takes no value");
        return BoundarySpec::neumann();
    }
    throw ConfigError("config: boundary kind must be dirichlet or neumann");
}

inline PDESpec parse_pde(const nlohmann::json& j) {
    expect_keys(j, "pde",
                {"family", "boundary", "eps2", "diffusion", "rate", "diffusivity", "speed"});
    const std::string family = get_or<std::string>(j, "family", "allen_cahn");
    BoundarySpec bc = j.contains("boundary") ? parse_boundary(j.at("boundary"))
                                             : BoundarySpec::dirichlet(-1.0);
    if (family == "allen_cahn")
        return PDESpec{AllenCahn{get_or<double>(j, "eps2", 0.001)},
                       j.contains("boundary") ? bc : BoundarySpec::dirichlet(-1.0)};
    if (family == "fisher_kpp")
        return PDESpec{FisherKpp{get_or<double>(j, "diffusion", 0.002),
                                 get_or<double>(j, "rate", 1.0)},
                       j.contains("boundary") ? bc : BoundarySpec::dirichlet(0.0)};
    if (family == "heat")
        return PDESpec{Heat{get_or<double>(j, "diffusivity", 0.01)},
                       j.contains("boundary") ? bc : BoundarySpec::dirichlet(0.0)};
    if (family == "wave")
        return PDESpec{Wave{get_or<double>(j, "speed", 0.2)},
                       j.contains("boundary") ? bc : BoundarySpec::dirichlet(0.0)};
    throw ConfigError("config: unknown pde family '" + family + "'");
}

inline SweepConfig parse_sweep(const nlohmann::json& j) {
    expect_keys(j, "sweep",
                {"kind", "n_x", "n_t", "n_t_values", "n_x_values", "generations"});
    const std::string kind = get_or<std::string>(j, "kind", "one_step_context");
    if (kind == "one_step_context") {
        ContextSweep s;
        s.n_x = get_or<std::size_t>(j, "n_x", 14);
        s.n_t_values = get_or<std::vector<std::size_t>>(j, "n_t_values", {});
        if (s.n_t_values.empty())
            for (std::size_t v = 2; v <= 40; ++v) s.n_t_values.push_back(v);
        return s;
    }
    if (kind == "one_step_output") {
        OutputSweep s;
        s.n_t = get_or<std::size_t>(j, "n_t", 50);
        s.n_x_values = get_or<std::vector<std::size_t>>(j, "n_x_values", {});
        if (s.n_x_values.empty())
            for (std::size_t v = 2; v <= 40; v += 2) s.n_x_values.push_back(v);
        return s;
    }
    if (kind == "multi_step") {
        MultiStepSweep s;
        s.n_x = get_or<std::size_t>(j, "n_x", 14);
        s.n_t = get_or<std::size_t>(j, "n_t", 25);
        s.generations = get_or<std::size_t>(j, "generations", 20);
        return s;
    }
    if (kind == "energy") {
        EnergySweep s;
        s.n_x = get_or<std::size_t>(j, "n_x", 14);
        s.n_t = get_or<std::size_t>(j, "n_t", 25);
        s.generations = get_or<std::size_t>(j, "generations", 1);
        return s;
    }
    throw ConfigError("config: unknown sweep kind '" + kind + "'");
}

inline BackendConfig parse_backend(const nlohmann::json& j, const std::string& where) {
    expect_keys(j, where,
                {"kind", "endpoint", "model", "auth_env", "timeout_s", "retries", "max_in_flight",
                 "scheme", "substeps", "refine_x", "fixture", "record", "inner", "temperature",
                 "top_k"});
    BackendConfig out;
    out.temperature = get_or<double>(j, "temperature", 0.6);
    out.top_k = get_or<std::size_t>(j, "top_k", 20);
    const std::string kind = get_or<std::string>(j, "kind", "oracle");
    if (kind == "http") {
        HttpOptions o;
        o.endpoint = get_or<std::string>(j, "endpoint", "");
        if (o.endpoint.empty()) throw ConfigError("config: http backend needs 'endpoint'");
        o.model = get_or<std::string>(j, "model", "");
        o.auth_env = get_or<std::string>(j, "auth_env", o.auth_env);
        o.timeout_s = get_or<double>(j, "timeout_s", 120.0);
        o.retries = get_or<std::size_t>(j, "retries", 3);
        o.max_in_flight = get_or<std::size_t>(j, "max_in_flight", 4);
        out.kind = o;
    } else if (kind == "oracle") {
        OracleBackendConfig o;
        o.scheme = get_or<std::string>(j, "scheme", "");
        o.substeps = get_or<std::size_t>(j, "substeps", 64);
        o.refine_x = get_or<std::size_t>(j, "refine_x", 8);
        out.kind = o;
    } else if (kind == "repeat_last") {
        out.kind = RepeatLastBackendConfig{};
    } else if (kind == "replay") {
        auto r = std::make_shared<ReplayBackendConfig>();
        r->fixture = get_or<std::string>(j, "fixture", "");
        r->record = get_or<bool>(j, "record", false);
        if (j.contains("inner")) r->inner = parse_backend(j.at("inner"), where + ".inner");
        if (r->record && !r->inner)
            throw ConfigError("config: replay record mode needs 'inner'");
        if (r->inner && r->inner->is_oracle())
            throw ConfigError("config: recording an oracle backend is unnecessary; run it directly");
        out.kind = std::move(r);
    } else {
        throw ConfigError("config: unknown backend kind '" + kind + "'");
    }
    return out;
}

} // namespace cfg_detail

inline ExperimentConfig config_from_json(const nlohmann::json& root) {
    using namespace cfg_detail;
    expect_keys(root, "$",
                {"schema_version", "pde", "domain", "ic", "sweep", "trials", "seed", "reference",
                 "baselines", "backend", "prompt", "entropy", "run"});
    const int version = get_or<int>(root, "schema_version", 1);
    if (version != 1) throw ConfigError("config: unsupported schema_version");

    ExperimentConfig cfg;
    if (root.contains("pde")) cfg.pde = parse_pde(root.at("pde"));
    if (root.contains("domain")) {
        expect_keys(root.at("domain"), "domain", {"half_width", "final_time"});
        cfg.half_width = get_or<double>(root.at("domain"), "half_width", 1.0);
        cfg.final_time = get_or<double>(root.at("domain"), "final_time", 0.5);
    }
    if (root.contains("ic")) {
        expect_keys(root.at("ic"), "ic", {"lo", "hi", "u_bc", "knots"});
        cfg.ic_lo = get_or<double>(root.at("ic"), "lo", -0.5);
        cfg.ic_hi = get_or<double>(root.at("ic"), "hi", 0.5);
        if (root.at("ic").contains("u_bc"))
            cfg.ic_u_bc = root.at("ic").at("u_bc").get<double>();
        if (root.at("ic").contains("knots"))
            cfg.ic_knots = root.at("ic").at("knots").get<std::size_t>();
    }
    cfg.sweep = parse_sweep(root.contains("sweep") ? root.at("sweep")
                                                   : nlohmann::json::object());
    cfg.trials = get_or<std::size_t>(root, "trials", 50);
    cfg.seed = get_or<std::uint64_t>(root, "seed", 1);
    if (root.contains("reference")) {
        expect_keys(root.at("reference"), "reference", {"refine_x", "refine_t"});
        cfg.refine_x = get_or<std::size_t>(root.at("reference"), "refine_x", 8);
        cfg.refine_t = get_or<std::size_t>(root.at("reference"), "refine_t", 64);
    }
    if (root.contains("baselines"))
        for (const auto& name : root.at("baselines"))
            cfg.baselines.push_back(scheme_from_name(name.get<std::string>()));
    if (root.contains("backend")) cfg.backend = cfg_detail::parse_backend(root.at("backend"), "backend");
    if (root.contains("prompt")) {
        expect_keys(root.at("prompt"), "prompt", {"trailing_semicolon"});
        cfg.trailing_semicolon = get_or<bool>(root.at("prompt"), "trailing_semicolon", true);
    }
    if (root.contains("entropy")) {
        expect_keys(root.at("entropy"), "entropy", {"log"});
        const std::string log = get_or<std::string>(root.at("entropy"), "log", "nat");
        if (log == "nat")
            cfg.entropy_log = EntropyLog::Nat;
        else if (log == "bits")
            cfg.entropy_log = EntropyLog::Bits;
        else
            throw ConfigError("config: entropy.log must be nat or bits");
    }
    if (root.contains("run")) {
        expect_keys(root.at("run"), "run",
                    {"jobs", "max_failure_fraction", "averaged_prediction", "dump_prompts",
                     "cache_dir"});
        cfg.jobs = get_or<std::size_t>(root.at("run"), "jobs", 1);
        cfg.max_failure_fraction = get_or<double>(root.at("run"), "max_failure_fraction", 0.10);
        cfg.averaged_prediction = get_or<bool>(root.at("run"), "averaged_prediction", false);
        cfg.dump_prompts = get_or<bool>(root.at("run"), "dump_prompts", true);
        cfg.cache_dir = get_or<std::string>(root.at("run"), "cache_dir", "");
    }

    if (cfg.baselines.empty()) {
        if (cfg.pde.second_order_in_time())
            cfg.baselines = {SchemeId::LeapfrogWave, SchemeId::CrankNicolsonWave};
        else if (std::holds_alternative<Heat>(cfg.pde.family))
            cfg.baselines = {SchemeId::Ftcs, SchemeId::Btcs};
        else
            cfg.baselines = {SchemeId::Ftcs, SchemeId::Imex};
    }

    cfg.validate();
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream file(path);
    if (!file) throw ConfigError("config: cannot open '" + path + "'");
    nlohmann::json root;
    try {
        root = nlohmann::json::parse(file);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config: invalid JSON in '" + path + "': " + e.what());
    }
    return config_from_json(root);
}

inline void ExperimentConfig::validate() const {
    pde.validate();
    if (half_width <= 0.0 || final_time <= 0.0)
        throw ConfigError("config: domain sizes must be positive");
    if (!(ic_lo < ic_hi)) throw ConfigError("config: ic needs lo < hi");
    if (trials < 1) throw ConfigError("config: trials must be >= 1");
    if (refine_x < 1 || refine_t < 1) throw ConfigError("config: refinements must be >= 1");
    if (jobs < 1) throw ConfigError("config: jobs must be >= 1");
    if (max_failure_fraction < 0.0 || max_failure_fraction > 1.0)
        throw ConfigError("config: max_failure_fraction in [0, 1]");

    auto check_sorted = [](const std::vector<std::size_t>& v, const char* what) {
        if (v.empty()) throw ConfigError(std::string("config: empty sweep list for ") + what);
        if (!std::is_sorted(v.begin(), v.end()))
            throw ConfigError(std::string("config: sweep list must be ascending for ") + what);
        if (v.front() < 1) throw ConfigError(std::string("config: sweep values must be >= 1"));
    };
    if (const auto* cs = std::get_if<ContextSweep>(&sweep)) {
        check_sorted(cs->n_t_values, "n_t_values");
        if (cs->n_x < 1) throw ConfigError("config: sweep n_x must be >= 1");
        if (cs->n_t_values.front() < 2)
            throw ConfigError("config: context sweep needs n_t >= 2");
    } else if (const auto* os = std::get_if<OutputSweep>(&sweep)) {
        check_sorted(os->n_x_values, "n_x_values");
        if (os->n_t < 2) throw ConfigError("config: output sweep needs n_t >= 2");
    } else if (const auto* ms = std::get_if<MultiStepSweep>(&sweep)) {
        if (ms->n_t < 3) throw ConfigError("config: multi_step needs n_t >= 3");
        if (ms->generations < 1) throw ConfigError("config: generations must be >= 1");
    } else if (const auto* es = std::get_if<EnergySweep>(&sweep)) {
        if (es->n_t < 3) throw ConfigError("config: energy needs n_t >= 3");
        if (es->generations < 1) throw ConfigError("config: generations must be >= 1");
        if (!std::holds_alternative<Heat>(pde.family) || pde.boundary.is_dirichlet())
            throw ConfigError("config: energy experiment needs the heat equation with neumann walls");
    }

    for (SchemeId scheme : baselines)
        if (!scheme_compatible(scheme, pde))
            throw ConfigError("config: baseline '" + scheme_name(scheme) +
                              "' incompatible with pde '" + pde.name() + "'");
    if (const auto* oc = std::get_if<OracleBackendConfig>(&backend.kind)) {
        if (!oc->scheme.empty() && !scheme_compatible(scheme_from_name(oc->scheme), pde))
            throw ConfigError("config: oracle scheme incompatible with pde");
        if (oc->substeps < 1) throw ConfigError("config: oracle substeps must be >= 1");
        if (oc->refine_x < 1) throw ConfigError("config: oracle refine_x must be >= 1");
    }
    if (backend.temperature < 0.0) throw ConfigError("config: temperature must be >= 0");
    if (backend.top_k < 1) throw ConfigError("config: top_k must be >= 1");
}

/// Echo of the resolved configuration, written into the run manifest.
inline nlohmann::ordered_json config_to_json(const ExperimentConfig& cfg) {
    nlohmann::ordered_json j;
    j["schema_version"] = 1;

    nlohmann::ordered_json pde;
    pde["family"] = cfg.pde.name();
    if (const auto* ac = std::get_if<AllenCahn>(&cfg.pde.family)) pde["eps2"] = ac->eps2;
    if (const auto* fk = std::get_if<FisherKpp>(&cfg.pde.family)) {
        pde["diffusion"] = fk->diffusion;
        pde["rate"] = fk->rate;
    }
    if (const auto* h = std::get_if<Heat>(&cfg.pde.family)) pde["diffusivity"] = h->diffusivity;
    if (const auto* w = std::get_if<Wave>(&cfg.pde.family)) pde["speed"] = w->speed;
    nlohmann::ordered_json bc;
    bc["kind"] = cfg.pde.boundary.is_dirichlet() ? "dirichlet" : "neumann";
    if (cfg.pde.boundary.is_dirichlet()) bc["value"] = cfg.pde.boundary.value;
    pde["boundary"] = std::move(bc);
    j["pde"] = std::move(pde);

    j["domain"] = {{"half_width", cfg.half_width}, {"final_time", cfg.final_time}};
    nlohmann::ordered_json ic;
    ic["lo"] = cfg.ic_lo;
    ic["hi"] = cfg.ic_hi;
    if (cfg.ic_u_bc) ic["u_bc"] = *cfg.ic_u_bc;
    ic["knots"] = cfg.ic_knot_count();
    j["ic"] = std::move(ic);

    nlohmann::ordered_json sweep;
    sweep["kind"] = cfg.experiment_name();
    if (const auto* cs = std::get_if<ContextSweep>(&cfg.sweep)) {
        sweep["n_x"] = cs->n_x;
        sweep["n_t_values"] = cs->n_t_values;
    } else if (const auto* os = std::get_if<OutputSweep>(&cfg.sweep)) {
        sweep["n_t"] = os->n_t;
        sweep["n_x_values"] = os->n_x_values;
    } else if (const auto* ms = std::get_if<MultiStepSweep>(&cfg.sweep)) {
        sweep["n_x"] = ms->n_x;
        sweep["n_t"] = ms->n_t;
        sweep["generations"] = ms->generations;
    } else if (const auto* es = std::get_if<EnergySweep>(&cfg.sweep)) {
        sweep["n_x"] = es->n_x;
        sweep["n_t"] = es->n_t;
        sweep["generations"] = es->generations;
    }
    j["sweep"] = std::move(sweep);

    j["trials"] = cfg.trials;
    j["seed"] = cfg.seed;
    j["reference"] = {{"refine_x", cfg.refine_x}, {"refine_t", cfg.refine_t}};
    auto baselines = nlohmann::ordered_json::array();
    for (SchemeId s : cfg.baselines) baselines.push_back(scheme_name(s));
    j["baselines"] = std::move(baselines);

    std::function<nlohmann::ordered_json(const BackendConfig&)> backend_json =
        [&](const BackendConfig& b) {
            nlohmann::ordered_json out;
            out["kind"] = b.name();
            if (const auto* http = std::get_if<HttpOptions>(&b.kind)) {
                out["endpoint"] = http->endpoint;
                out["model"] = http->model;
                out["auth_env"] = http->auth_env;
                out["timeout_s"] = http->timeout_s;
                out["retries"] = http->retries;
                out["max_in_flight"] = http->max_in_flight;
            } else if (const auto* oc = std::get_if<OracleBackendConfig>(&b.kind)) {
                if (!oc->scheme.empty()) out["scheme"] = oc->scheme;
                out["substeps"] = oc->substeps;
                out["refine_x"] = oc->refine_x;
            } else if (const auto* rp =
                           std::get_if<std::shared_ptr<ReplayBackendConfig>>(&b.kind)) {
                out["fixture"] = (*rp)->fixture;
                out["record"] = (*rp)->record;
                if ((*rp)->inner) out["inner"] = backend_json(*(*rp)->inner);
            }
            out["temperature"] = b.temperature;
            out["top_k"] = b.top_k;
            return out;
        };
    j["backend"] = backend_json(cfg.backend);

    j["prompt"] = {{"trailing_semicolon", cfg.trailing_semicolon}};
    j["entropy"] = {{"log", cfg.entropy_log == EntropyLog::Nat ? "nat" : "bits"}};
    j["run"] = {{"jobs", cfg.jobs},
                {"max_failure_fraction", cfg.max_failure_fraction},
                {"averaged_prediction", cfg.averaged_prediction},
                {"dump_prompts", cfg.dump_prompts},
                {"cache_dir", cfg.cache_dir}};
    return j;
}

} // namespace pdeseq
