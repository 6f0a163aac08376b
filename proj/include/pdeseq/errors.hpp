#pragma once

#include <stdexcept>
#include <string>

namespace pdeseq {

/// Bad run configuration (malformed file, unknown key, invalid combination).
/// The CLI maps this to exit code 1.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Network-level failure talking to a generation endpoint (after retries).
/// The CLI maps this and CapabilityError to exit code 2.
struct TransportError : std::runtime_error {
    explicit TransportError(const std::string& what) : std::runtime_error(what) {}
};

/// The endpoint answered but cannot do what the experiment needs
/// (e.g. no logprobs support, missing replay fixture).
struct CapabilityError : std::runtime_error {
    explicit CapabilityError(const std::string& what) : std::runtime_error(what) {}
};

/// A finite-difference step produced NaN/Inf or blew past the sanity bound.
struct DivergenceError : std::runtime_error {
    explicit DivergenceError(const std::string& what) : std::runtime_error(what) {}
};

/// Requested reference refinement violates the explicit-scheme stability bound.
struct StabilityError : std::runtime_error {
    explicit StabilityError(const std::string& what) : std::runtime_error(what) {}
};

/// Zero pivot while eliminating a tridiagonal system.
struct SingularSystemError : std::runtime_error {
    explicit SingularSystemError(const std::string& what) : std::runtime_error(what) {}
};

/// One trial could not produce a usable prediction (malformed slice after retry, ...).
/// Recorded per trial; only excessive rates abort a run.
struct TrialFailure : std::runtime_error {
    explicit TrialFailure(const std::string& what) : std::runtime_error(what) {}
};

/// More than the configured fraction of trials failed. CLI exit code 3.
struct ExcessiveFailures : std::runtime_error {
    explicit ExcessiveFailures(const std::string& what) : std::runtime_error(what) {}
};

} // namespace pdeseq
