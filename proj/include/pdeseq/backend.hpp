#pragma once

#include <cctype>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <deque>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "pdeseq/codec.hpp"
#include "pdeseq/distribution.hpp"
#include "pdeseq/errors.hpp"
#include "pdeseq/solver.hpp"

namespace pdeseq {

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[v & 0xF];
        v >>= 4;
    }
    return out;
}

struct GenerationRequest {
    std::string prompt;
    std::size_t max_tokens = 1;
    double temperature = 0.6;
    std::size_t top_k_probs = 20;
    std::optional<std::string> stop;
    bool echo = false;

    void validate() const {
        if (max_tokens < 1) throw std::invalid_argument("GenerationRequest: max_tokens >= 1");
        if (temperature < 0.0) throw std::invalid_argument("GenerationRequest: temperature >= 0");
        if (top_k_probs < 1) throw std::invalid_argument("GenerationRequest: top_k_probs >= 1");
    }
};

struct GenerationResult {
    std::vector<std::string> tokens;                  // emitted text pieces, in order
    std::vector<PositionDistribution> distributions;  // per position; may be empty

    std::string text() const {
        std::string out;
        for (const auto& t : tokens) out += t;
        return out;
    }
};

/// Anything that can continue a token stream. Implementations must be safe
/// to call from several trial workers at once.
class Backend {
public:
    virtual ~Backend() = default;
    virtual GenerationResult generate(const GenerationRequest& request) = 0;
    virtual std::string kind() const = 0;
};

/// Split a numeric stream into the tokens the assumed tokenizer yields:
/// digit groups and single-character delimiters.
inline std::vector<std::string> tokenize_stream(std::string_view text) {
    std::vector<std::string> tokens;
    std::string group;
    for (char c : text) {
        if (c >= '0' && c <= '9') {
            group.push_back(c);
        } else {
            if (!group.empty()) {
                tokens.push_back(group);
                group.clear();
            }
            tokens.emplace_back(1, c);
        }
    }
    if (!group.empty()) tokens.push_back(group);
    return tokens;
}

inline bool is_numeric_token(std::string_view t) {
    return !t.empty() && std::all_of(t.begin(), t.end(), [](char c) { return c >= '0' && c <= '9'; });
}

// ---------------------------------------------------------------------------
// Deterministic local backends
// ---------------------------------------------------------------------------

/// Persistence baseline: re-emits the last complete context slice.
class RepeatLastBackend final : public Backend {
public:
    GenerationResult generate(const GenerationRequest& request) override {
        request.validate();
        const std::string_view prompt = request.prompt;
        // last non-empty ';'-delimited segment
        std::size_t end = prompt.size();
        while (end > 0 && prompt[end - 1] == ';') --end;
        const std::size_t begin = prompt.rfind(';', end == 0 ? 0 : end - 1);
        const std::string_view segment =
            prompt.substr(begin == std::string_view::npos ? 0 : begin + 1,
                          end - (begin == std::string_view::npos ? 0 : begin + 1));

        GenerationResult out;
        for (auto& token : tokenize_stream(segment)) {
            if (out.tokens.size() >= request.max_tokens) break;
            if (request.stop && token == *request.stop) break;
            out.distributions.push_back(PositionDistribution::one_hot(token));
            out.tokens.push_back(std::move(token));
        }
        return out;
    }

    std::string kind() const override { return "repeat_last"; }
};

/// Test double that plays back a scripted sequence of results and records
/// the requests it saw.
class ScriptedBackend final : public Backend {
public:
    explicit ScriptedBackend(std::vector<GenerationResult> script)
        : script_(script.begin(), script.end()) {}

    GenerationResult generate(const GenerationRequest& request) override {
        std::lock_guard lock(mutex_);
        requests.push_back(request);
        if (script_.empty()) throw CapabilityError("ScriptedBackend: script exhausted");
        GenerationResult out = std::move(script_.front());
        script_.pop_front();
        return out;
    }

    std::string kind() const override { return "scripted"; }

    std::vector<GenerationRequest> requests;

private:
    std::mutex mutex_;
    std::deque<GenerationResult> script_;
};

/// The classical solver wearing a backend interface. First-order families:
/// the first context slice is the sampled initial condition on its own
/// knots, so the oracle decodes it, refits the not-a-knot interpolant, and
/// re-solves the whole refined trajectory up to the next slice. The emitted
/// slice then tracks the restricted reference to within the quantization
/// noise carried by the prompt, which is exactly what the pipeline-level
/// accuracy bounds check. Distributions are one-hot, so the metric path is
/// exercised with known-exact inputs.
class OracleBackend final : public Backend {
public:
    OracleBackend(PDESpec pde, SpatialGrid space, TimeGrid time, QuantRange range,
                  SchemeId scheme, std::size_t substeps, std::size_t refine_x = 8)
        : pde_(std::move(pde)), space_(std::move(space)), time_(std::move(time)), range_(range),
          scheme_(scheme), substeps_(substeps), refine_x_(refine_x) {
        if (substeps_ < 1 || refine_x_ < 1)
            throw std::invalid_argument("OracleBackend: refinement must be >= 1");
    }

    GenerationResult generate(const GenerationRequest& request) override {
        request.validate();
        const ParseReport context = parse(request.prompt, space_.n_x);
        if (context.slices.empty())
            throw CapabilityError("OracleBackend: context has no complete slice");

        const std::vector<double> next = pde_.second_order_in_time()
                                             ? advance_wave(context)
                                             : resolve_from_ic(context);

        std::vector<int> codes(space_.n_x);
        for (std::size_t i = 0; i < next.size(); ++i) codes[i] = quantize_value(next[i], range_);

        GenerationResult out;
        for (auto& token : tokenize_stream(serialize_slice(codes))) {
            if (out.tokens.size() >= request.max_tokens) break;
            if (request.stop && token == *request.stop) break;
            out.distributions.push_back(PositionDistribution::one_hot(token));
            out.tokens.push_back(std::move(token));
        }
        return out;
    }

    std::string kind() const override { return "oracle"; }

private:
    PDESpec pde_;
    SpatialGrid space_;
    TimeGrid time_;
    QuantRange range_;
    SchemeId scheme_;
    std::size_t substeps_;
    std::size_t refine_x_;

    std::vector<double> decode(const std::vector<int>& codes) const {
        std::vector<double> u(codes.size());
        for (std::size_t i = 0; i < codes.size(); ++i) u[i] = reconstruct_value(codes[i], range_);
        return u;
    }

    ICSpline interpolate(const std::vector<double>& interior) const {
        const auto [left, right] = boundary_values(pde_.boundary, interior);
        std::vector<double> values;
        values.reserve(interior.size() + 2);
        values.push_back(left);
        values.insert(values.end(), interior.begin(), interior.end());
        values.push_back(right);
        return ic_from_values(space_.points, values);
    }

    // Refined solve from the decoded IC through all J context slices; the
    // restricted column J is the next slice.
    std::vector<double> resolve_from_ic(const ParseReport& context) const {
        const std::size_t j = context.slices.size();
        const ICSpline ic = interpolate(decode(context.slices.front()));
        auto [space, time] = build_grids(space_.half_width, space_.n_x,
                                         static_cast<double>(j) * time_.dt, j);
        std::size_t refine_t = substeps_;
        if (scheme_ == SchemeId::Ftcs)
            refine_t = stable_refine_t(pde_, space, time, refine_x_, substeps_);

        const std::size_t n_x_fine = refine_x_ * (space_.n_x + 1) - 1;
        auto [fine_space, fine_time] =
            build_grids(space_.half_width, n_x_fine, time.final_time, refine_t * j);
        const SolutionField fine =
            solve(pde_, scheme_, resample_interior(ic, n_x_fine), fine_space, fine_time);

        std::vector<double> out(space_.n_x);
        for (std::size_t i = 0; i < space_.n_x; ++i)
            out[i] = fine.values(refine_x_ * (i + 1) - 1, refine_t * j);
        return out;
    }

    // The wave oracle steps at the coarse dt on the coarse grid: the two
    // most recent context slices are one coarse step apart, which is exactly
    // the three-level state the schemes need; there is no sub-dt history to
    // substep from.
    std::vector<double> advance_wave(const ParseReport& context) const {
        std::vector<double> current = decode(context.slices.back());
        std::vector<double> previous = context.slices.size() >= 2
                                           ? decode(context.slices[context.slices.size() - 2])
                                           : current;
        return advance(pde_, scheme_, StepState{current, previous}, space_, time_,
                       context.slices.size());
    }
};

// ---------------------------------------------------------------------------
// Record/replay
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json request_to_json(const GenerationRequest& r) {
    nlohmann::ordered_json j;
    j["prompt"] = r.prompt;
    j["max_tokens"] = r.max_tokens;
    j["temperature"] = r.temperature;
    j["top_k_probs"] = r.top_k_probs;
    j["stop"] = r.stop ? nlohmann::ordered_json(*r.stop) : nlohmann::ordered_json(nullptr);
    j["echo"] = r.echo;
    return j;
}

inline nlohmann::ordered_json result_to_json(const GenerationResult& r) {
    nlohmann::ordered_json j;
    j["tokens"] = r.tokens;
    auto dists = nlohmann::ordered_json::array();
    for (const auto& d : r.distributions) {
        nlohmann::ordered_json dj;
        auto entries = nlohmann::ordered_json::array();
        for (const auto& e : d.entries) entries.push_back({e.token, e.prob});
        dj["entries"] = std::move(entries);
        dj["remainder"] = d.remainder;
        dists.push_back(std::move(dj));
    }
    j["distributions"] = std::move(dists);
    return j;
}

inline GenerationResult result_from_json(const nlohmann::json& j) {
    GenerationResult r;
    r.tokens = j.at("tokens").get<std::vector<std::string>>();
    for (const auto& dj : j.at("distributions")) {
        PositionDistribution d;
        for (const auto& e : dj.at("entries"))
            d.entries.push_back({e.at(0).get<std::string>(), e.at(1).get<double>()});
        d.remainder = dj.at("remainder").get<double>();
        r.distributions.push_back(std::move(d));
    }
    return r;
}

inline std::string request_hash(const GenerationRequest& r) {
    return hex64(fnv1a64(request_to_json(r).dump()));
}

/// JSON-lines store of (request hash, request, response). In record mode it
/// forwards misses to the wrapped backend and appends; in replay mode a miss
/// is an error. Repeated identical requests replay in recording order.
class ReplayBackend final : public Backend {
public:
    enum class Mode { Replay, Record };

    ReplayBackend(std::string fixture_path, Mode mode, std::shared_ptr<Backend> inner = nullptr)
        : path_(std::move(fixture_path)), mode_(mode), inner_(std::move(inner)) {
        if (mode_ == Mode::Record && !inner_)
            throw std::invalid_argument("ReplayBackend: record mode needs an inner backend");
        load();
    }

    GenerationResult generate(const GenerationRequest& request) override {
        const std::string key = request_hash(request);
        {
            std::lock_guard lock(mutex_);
            auto it = queues_.find(key);
            if (it != queues_.end() && !it->second.empty()) {
                GenerationResult out = result_from_json(it->second.front());
                it->second.pop_front();
                return out;
            }
        }
        if (mode_ == Mode::Replay)
            throw CapabilityError("ReplayBackend: no recorded response for request " + key);

        GenerationResult out = inner_->generate(request);
        std::lock_guard lock(mutex_);
        nlohmann::ordered_json line;
        line["hash"] = key;
        line["request"] = request_to_json(request);
        line["response"] = result_to_json(out);
        std::ofstream file(path_, std::ios::app);
        if (!file) throw ConfigError("ReplayBackend: cannot write fixture file " + path_);
        file << line.dump() << "\n";
        return out;
    }

    std::string kind() const override { return "replay"; }

private:
    std::string path_;
    Mode mode_;
    std::shared_ptr<Backend> inner_;
    std::mutex mutex_;
    std::map<std::string, std::deque<nlohmann::json>> queues_;

    void load() {
        std::ifstream file(path_);
        if (!file) {
            if (mode_ == Mode::Replay)
                throw ConfigError("ReplayBackend: fixture file not found: " + path_);
            return;
        }
        std::string line;
        while (std::getline(file, line)) {
            if (line.empty()) continue;
            auto j = nlohmann::json::parse(line);
            queues_[j.at("hash").get<std::string>()].push_back(j.at("response"));
        }
    }
};

// ---------------------------------------------------------------------------
// HTTP (OpenAI-compatible completions)
// ---------------------------------------------------------------------------

struct HttpOptions {
    std::string endpoint;           // e.g. http://localhost:8000/v1
    std::string model;
    std::string auth_env = "PDESEQ_API_TOKEN";
    double timeout_s = 120.0;
    std::size_t retries = 3;
    std::size_t max_in_flight = 4;
};

class HttpBackend final : public Backend {
public:
    explicit HttpBackend(HttpOptions options)
        : options_(std::move(options)),
          slots_(static_cast<std::ptrdiff_t>(std::max<std::size_t>(1, options_.max_in_flight))) {
        split_endpoint();
    }

    GenerationResult generate(const GenerationRequest& request) override {
        request.validate();
        slots_.acquire();
        struct Release {
            std::counting_semaphore<>& s;
            ~Release() { s.release(); }
        } release{slots_};

        const std::string body = build_body(request).dump();
        std::string response;
        transport(body, response);
        return parse_response(response);
    }

    std::string kind() const override { return "http"; }

private:
    HttpOptions options_;
    std::string host_;         // scheme://authority
    std::string path_prefix_;  // e.g. /v1
    std::counting_semaphore<> slots_;

    void split_endpoint();
    void transport(const std::string& body, std::string& response_out);

    nlohmann::ordered_json build_body(const GenerationRequest& r) const {
        nlohmann::ordered_json j;
        j["model"] = options_.model;
        j["prompt"] = r.prompt;
        j["max_tokens"] = r.max_tokens;
        j["temperature"] = r.temperature;
        j["logprobs"] = r.top_k_probs;
        j["stream"] = false;
        if (r.stop) j["stop"] = nlohmann::ordered_json::array({*r.stop});
        if (r.echo) j["echo"] = true;
        return j;
    }

    static GenerationResult parse_response(const std::string& body) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(body);
        } catch (const nlohmann::json::exception& e) {
            throw TransportError(std::string("HttpBackend: unparseable response: ") + e.what());
        }
        if (!j.contains("choices") || j["choices"].empty())
            throw TransportError("HttpBackend: response has no choices: " + body.substr(0, 200));
        const auto& choice = j["choices"][0];
        if (!choice.contains("logprobs") || choice["logprobs"].is_null())
            throw CapabilityError("HttpBackend: endpoint returned no logprobs");
        const auto& lp = choice["logprobs"];
        if (!lp.contains("tokens"))
            throw CapabilityError("HttpBackend: logprobs lack token list");

        GenerationResult out;
        out.tokens = lp["tokens"].get<std::vector<std::string>>();
        const auto top = lp.value("top_logprobs", nlohmann::json::array());
        for (std::size_t i = 0; i < out.tokens.size(); ++i) {
            PositionDistribution d;
            if (i < top.size() && top[i].is_object()) {
                for (const auto& [token, logprob] : top[i].items())
                    d.entries.push_back({token, std::exp(logprob.get<double>())});
                d.canonicalize();
            }
            out.distributions.push_back(std::move(d));
        }
        return out;
    }
};

inline void HttpBackend::split_endpoint() {
    const std::string& url = options_.endpoint;
    const std::size_t scheme = url.find("://");
    if (scheme == std::string::npos)
        throw ConfigError("HttpBackend: endpoint needs a scheme, e.g. http://localhost:8000/v1");
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
    if (url.rfind("https://", 0) == 0)
        throw ConfigError("HttpBackend: built without TLS support; use an http:// endpoint");
#endif
    const std::size_t path = url.find('/', scheme + 3);
    if (path == std::string::npos) {
        host_ = url;
    } else {
        host_ = url.substr(0, path);
        path_prefix_ = url.substr(path);
    }
    while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
    // allow an endpoint that already names the completions route
    const std::string suffix = "/completions";
    if (path_prefix_.size() >= suffix.size() &&
        path_prefix_.compare(path_prefix_.size() - suffix.size(), suffix.size(), suffix) == 0)
        path_prefix_.resize(path_prefix_.size() - suffix.size());
}

inline void HttpBackend::transport(const std::string& body, std::string& response_out) {
    const std::string path = path_prefix_ + "/completions";
    std::string last_error;
    for (std::size_t attempt = 0; attempt <= options_.retries; ++attempt) {
        if (attempt > 0)
            std::this_thread::sleep_for(std::chrono::milliseconds(250LL << (attempt - 1)));

        httplib::Client client(host_);
        const auto timeout = std::chrono::milliseconds(
            static_cast<long long>(options_.timeout_s * 1000.0));
        client.set_connection_timeout(timeout);
        client.set_read_timeout(timeout);
        client.set_write_timeout(timeout);

        httplib::Headers headers;
        if (!options_.auth_env.empty())
            if (const char* token = std::getenv(options_.auth_env.c_str()))
                headers.emplace("Authorization", std::string("Bearer ") + token);

        auto res = client.Post(path, headers, body, "application/json");
        if (!res) {
            last_error = "transport failure (" + httplib::to_string(res.error()) + ")";
            continue;
        }
        if (res->status >= 200 && res->status < 300) {
            response_out = res->body;
            return;
        }
        if (res->status >= 500) {
            last_error = "HTTP " + std::to_string(res->status);
            continue; // server-side hiccup, retry
        }
        throw TransportError("HttpBackend: HTTP " + std::to_string(res->status) + ": " +
                             res->body.substr(0, 200));
    }
    throw TransportError("HttpBackend: " + last_error + " after " +
                         std::to_string(options_.retries + 1) + " attempt(s) to " + host_ + path);
}

// ---------------------------------------------------------------------------
// Slice-level drivers
// ---------------------------------------------------------------------------

struct SliceOptions {
    double temperature = 0.6;
    std::size_t top_k_probs = 20;
};

struct SliceResult {
    std::vector<int> codes;                                   // the parsed slice
    std::vector<PositionDistribution> value_distributions;    // per value position
    std::vector<PositionDistribution> separator_distributions;
    ParseReport report;
    std::string raw_text;   // emitted text, truncated at the slice boundary
    std::size_t retries = 0;
};

namespace detail {

inline std::optional<SliceResult> try_slice(Backend& backend, const std::string& context,
                                            std::size_t n_x, const SliceOptions& options) {
    GenerationRequest request;
    request.prompt = context;
    request.max_tokens = token_count(1, n_x); // 2 n_x - 1
    request.temperature = options.temperature;
    request.top_k_probs = options.top_k_probs;
    request.stop = ";";

    GenerationResult result = backend.generate(request);
    std::string text = result.text();
    if (const auto cut = text.find(';'); cut != std::string::npos) text.resize(cut);

    SliceResult slice;
    slice.report = parse(text, n_x);
    slice.raw_text = std::move(text);
    if (slice.report.slices.empty()) return std::nullopt;
    slice.codes = slice.report.slices.front();

    // Distributions line up with emitted tokens: numeric tokens are value
    // positions, everything else separators. Only the first slice counts.
    std::size_t values_seen = 0;
    const bool have = result.distributions.size() == result.tokens.size();
    for (std::size_t i = 0; i < result.tokens.size() && values_seen < n_x; ++i) {
        if (is_numeric_token(result.tokens[i])) {
            ++values_seen;
            if (have) slice.value_distributions.push_back(result.distributions[i]);
        } else if (have) {
            slice.separator_distributions.push_back(result.distributions[i]);
        }
    }
    if (slice.value_distributions.size() != n_x) slice.value_distributions.clear();
    return slice;
}

} // namespace detail

/// One predicted slice from a context that ends at a slice boundary.
/// Malformed output gets one retry; a second failure fails the trial.
inline SliceResult generate_slice(Backend& backend, const std::string& context, std::size_t n_x,
                                  const SliceOptions& options = {}) {
    if (auto first = detail::try_slice(backend, context, n_x, options)) return *first;
    auto second = detail::try_slice(backend, context, n_x, options);
    if (!second)
        throw TrialFailure("generate_slice: malformed slice from backend '" + backend.kind() +
                           "' after one retry");
    second->retries = 1;
    return *second;
}

struct RolloutResult {
    std::vector<SliceResult> steps;
    std::string final_context;
};

/// Recursive continuation: each generated slice plus a semicolon joins the
/// context for the next step. Nothing but the model's own output is fed
/// back.
inline RolloutResult rollout(Backend& backend, std::string context, std::size_t n_x,
                             std::size_t n_steps, const SliceOptions& options = {}) {
    if (n_steps < 1) throw std::invalid_argument("rollout: n_steps >= 1");
    RolloutResult out;
    for (std::size_t step = 0; step < n_steps; ++step) {
        try {
            SliceResult slice = generate_slice(backend, context, n_x, options);
            context += slice.raw_text;
            context += ';';
            out.steps.push_back(std::move(slice));
        } catch (const TrialFailure& e) {
            throw TrialFailure(std::string(e.what()) + " (rollout step " + std::to_string(step) +
                               ")");
        }
    }
    out.final_context = std::move(context);
    return out;
}

// ---------------------------------------------------------------------------
// Tokenization probe
// ---------------------------------------------------------------------------

struct ProbeReport {
    enum class Status { Pass, Warn };
    Status status = Status::Pass;
    std::string note;
    std::vector<std::string> observed;

    bool passed() const { return status == Status::Pass; }
};

inline constexpr const char* probe_prompt = "123,456;789";

/// Check that the endpoint's tokenizer yields one token per 3-digit group
/// and per delimiter, via an echoed completion. Local deterministic
/// backends tokenize canonically by construction and short-circuit to pass.
inline ProbeReport probe_tokenization(Backend& backend) {
    const std::string kind = backend.kind();
    if (kind != "http" && kind != "replay")
        return {ProbeReport::Status::Pass, "canonical tokenizer (" + kind + " backend)", {}};

    GenerationRequest request;
    request.prompt = probe_prompt;
    request.max_tokens = 1;
    request.temperature = 0.0;
    request.top_k_probs = 1;
    request.echo = true;

    GenerationResult result;
    try {
        result = backend.generate(request);
    } catch (const CapabilityError& e) {
        return {ProbeReport::Status::Warn,
                std::string("endpoint lacks echo/logprobs support: ") + e.what(), {}};
    }

    // Find the echoed prompt inside the token list (a BOS-style token may
    // precede it, generated tokens may follow).
    const std::string want = probe_prompt;
    for (std::size_t start = 0; start < result.tokens.size(); ++start) {
        std::string acc;
        std::vector<std::string> span;
        for (std::size_t i = start; i < result.tokens.size() && acc.size() < want.size(); ++i) {
            acc += result.tokens[i];
            span.push_back(result.tokens[i]);
        }
        if (acc != want) continue;
        const std::vector<std::string> canonical = tokenize_stream(want);
        if (span == canonical)
            return {ProbeReport::Status::Pass, "3-digit groups and delimiters are single tokens",
                    span};
        const bool digit_level = std::all_of(span.begin(), span.end(), [](const std::string& t) {
            return t.size() == 1;
        });
        return {ProbeReport::Status::Warn,
                digit_level ? "digit-level tokenizer; entropy unavailable"
                            : "unexpected token granularity; entropy unavailable",
                span};
    }
    return {ProbeReport::Status::Warn, "endpoint did not echo the probe prompt", result.tokens};
}

} // namespace pdeseq
