#pragma once

#include <stdexcept>
#include <string>
#include <variant>

#include "pdeseq/grid.hpp"

namespace pdeseq {

// The four problem families. First-order-in-time variants all read
//   u_t = coef * u_xx - reaction(u)
// so one stepping kernel covers them; the wave equation is second order in
// time and gets its own schemes.

struct AllenCahn {
    double eps2 = 0.001;            // diffusion coefficient
    bool operator==(const AllenCahn&) const = default;
};

struct FisherKpp {
    double diffusion = 0.002;       // D
    double rate = 1.0;              // r
    bool operator==(const FisherKpp&) const = default;
};

struct Heat {
    double diffusivity = 0.01;      // k
    bool operator==(const Heat&) const = default;
};

struct Wave {
    double speed = 0.2;             // c
    bool operator==(const Wave&) const = default;
};

struct PDESpec {
    std::variant<AllenCahn, FisherKpp, Heat, Wave> family;
    BoundarySpec boundary;

    static PDESpec allen_cahn(double eps2 = 0.001,
                              BoundarySpec bc = BoundarySpec::dirichlet(-1.0)) {
        return {AllenCahn{eps2}, bc};
    }
    static PDESpec fisher_kpp(double diffusion = 0.002, double rate = 1.0,
                              BoundarySpec bc = BoundarySpec::dirichlet(0.0)) {
        return {FisherKpp{diffusion, rate}, bc};
    }
    static PDESpec heat(double diffusivity = 0.01,
                        BoundarySpec bc = BoundarySpec::dirichlet(0.0)) {
        return {Heat{diffusivity}, bc};
    }
    static PDESpec wave(double speed = 0.2, BoundarySpec bc = BoundarySpec::dirichlet(0.0)) {
        return {Wave{speed}, bc};
    }

    bool second_order_in_time() const { return std::holds_alternative<Wave>(family); }

    /// Coefficient on u_xx (c^2 for the wave equation).
    double diffusion_coefficient() const {
        if (const auto* ac = std::get_if<AllenCahn>(&family)) return ac->eps2;
        if (const auto* fk = std::get_if<FisherKpp>(&family)) return fk->diffusion;
        if (const auto* h = std::get_if<Heat>(&family)) return h->diffusivity;
        const double c = std::get<Wave>(family).speed;
        return c * c;
    }

    /// Reaction term in the u_t = coef u_xx - reaction(u) convention.
    /// Allen-Cahn uses the double-well f(u) = 2(u^3 - u); Fisher-KPP's
    /// logistic growth r u (1 - u) enters with a sign flip.
    double reaction(double u) const {
        if (const auto* ac = std::get_if<AllenCahn>(&family)) {
            (void)ac;
            return 2.0 * (u * u * u - u);
        }
        if (const auto* fk = std::get_if<FisherKpp>(&family))
            return -fk->rate * u * (1.0 - u);
        return 0.0;
    }

    std::string name() const {
        if (std::holds_alternative<AllenCahn>(family)) return "allen_cahn";
        if (std::holds_alternative<FisherKpp>(family)) return "fisher_kpp";
        if (std::holds_alternative<Heat>(family)) return "heat";
        return "wave";
    }

    void validate() const {
        if (diffusion_coefficient() <= 0.0)
            throw std::invalid_argument("PDESpec: coefficients must be > 0");
        if (const auto* fk = std::get_if<FisherKpp>(&family))
            if (fk->rate <= 0.0)
                throw std::invalid_argument("PDESpec: reaction rate must be > 0");
    }

    bool operator==(const PDESpec&) const = default;
};

enum class SchemeId { Ftcs, Imex, Btcs, LeapfrogWave, CrankNicolsonWave };

inline std::string scheme_name(SchemeId s) {
    switch (s) {
        case SchemeId::Ftcs: return "ftcs";
        case SchemeId::Imex: return "imex";
        case SchemeId::Btcs: return "btcs";
        case SchemeId::LeapfrogWave: return "leapfrog";
        case SchemeId::CrankNicolsonWave: return "crank_nicolson";
    }
    return "unknown";
}

inline SchemeId scheme_from_name(const std::string& name) {
    if (name == "ftcs") return SchemeId::Ftcs;
    if (name == "imex") return SchemeId::Imex;
    if (name == "btcs") return SchemeId::Btcs;
    if (name == "leapfrog") return SchemeId::LeapfrogWave;
    if (name == "crank_nicolson") return SchemeId::CrankNicolsonWave;
    throw std::invalid_argument("unknown scheme '" + name + "'");
}

/// FTCS steps any first-order-in-time family; IMEX needs a reaction term to
/// split off; BTCS is the implicit heat scheme; the two wave schemes need a
/// second-order-in-time problem.
inline bool scheme_compatible(SchemeId scheme, const PDESpec& pde) {
    switch (scheme) {
        case SchemeId::Ftcs: return !pde.second_order_in_time();
        case SchemeId::Imex:
            return std::holds_alternative<AllenCahn>(pde.family) ||
                   std::holds_alternative<FisherKpp>(pde.family);
        case SchemeId::Btcs: return std::holds_alternative<Heat>(pde.family);
        case SchemeId::LeapfrogWave:
        case SchemeId::CrankNicolsonWave: return pde.second_order_in_time();
    }
    return false;
}

} // namespace pdeseq
