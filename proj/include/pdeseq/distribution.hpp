#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace pdeseq {

struct TokenProb {
    std::string token;
    double prob = 0.0;

    bool operator==(const TokenProb&) const = default;
};

/// Top-k view of one softmax: the k most probable tokens plus a single
/// remainder bucket for the unreturned tail. Entries are kept sorted by
/// descending probability and the total mass is held at 1.
struct PositionDistribution {
    std::vector<TokenProb> entries;
    double remainder = 0.0;

    void canonicalize() {
        std::stable_sort(entries.begin(), entries.end(),
                         [](const TokenProb& a, const TokenProb& b) { return a.prob > b.prob; });
        double mass = 0.0;
        for (const auto& e : entries) mass += e.prob;
        if (mass > 1.0) {
            for (auto& e : entries) e.prob /= mass; // a sloppy endpoint rounded past one
            mass = 1.0;
        }
        remainder = 1.0 - mass;
    }

    double total_mass() const {
        double mass = remainder;
        for (const auto& e : entries) mass += e.prob;
        return mass;
    }

    static PositionDistribution one_hot(std::string token) {
        PositionDistribution d;
        d.entries.push_back({std::move(token), 1.0});
        return d;
    }

    bool operator==(const PositionDistribution&) const = default;
};

} // namespace pdeseq
