#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pdeseq/errors.hpp"
#include "pdeseq/matrix.hpp"

namespace pdeseq {

// The 3-digit code set. 000-149 and 851-999 are reserved; a backend emitting
// them signals an out-of-distribution event, which the parser flags.
inline constexpr int code_min = 150;
inline constexpr int code_max = 850;
inline constexpr int code_mid = 500;
inline constexpr int code_span = code_max - code_min;

/// Field extrema defining the affine value<->code map.
struct QuantRange {
    double u_min = 0.0;
    double u_max = 0.0;

    bool degenerate() const { return u_max == u_min; }
    double width() const { return u_max - u_min; }
    /// Largest possible |reconstruct(quantize(u)) - u| for u in range.
    double half_step() const { return degenerate() ? 0.0 : width() / (2.0 * code_span); }

    bool operator==(const QuantRange&) const = default;
};

struct QuantizedField {
    Matrix<int> codes;   // n_x rows, n_t + 1 columns
    QuantRange range;

    bool operator==(const QuantizedField&) const = default;
};

inline int quantize_value(double u, const QuantRange& range) {
    if (range.degenerate()) return code_mid;
    const double scaled = code_min + (u - range.u_min) * static_cast<double>(code_span) / range.width();
    const long code = std::lround(scaled);
    return static_cast<int>(std::clamp(code, static_cast<long>(code_min), static_cast<long>(code_max)));
}

inline double reconstruct_value(int code, const QuantRange& range) {
    if (range.degenerate()) return range.u_min;
    const int clamped = std::clamp(code, code_min, code_max); // parsed OOD codes clamp, flags stay
    return range.u_min + static_cast<double>(clamped - code_min) * range.width() / static_cast<double>(code_span);
}

inline QuantizedField quantize(const Matrix<double>& field) {
    if (field.empty()) throw std::invalid_argument("quantize: empty field");
    QuantRange range{field.data()[0], field.data()[0]};
    for (double u : field.data()) {
        if (!std::isfinite(u)) throw std::invalid_argument("quantize: non-finite field entry");
        range.u_min = std::min(range.u_min, u);
        range.u_max = std::max(range.u_max, u);
    }
    QuantizedField out{Matrix<int>(field.rows(), field.cols()), range};
    for (std::size_t j = 0; j < field.cols(); ++j)
        for (std::size_t i = 0; i < field.rows(); ++i)
            out.codes(i, j) = quantize_value(field(i, j), range);
    return out;
}

inline Matrix<double> reconstruct(const QuantizedField& q) {
    Matrix<double> out(q.codes.rows(), q.codes.cols());
    for (std::size_t j = 0; j < q.codes.cols(); ++j)
        for (std::size_t i = 0; i < q.codes.rows(); ++i)
            out(i, j) = reconstruct_value(q.codes(i, j), q.range);
    return out;
}

/// Exactly three ASCII digits per code.
inline void append_code(std::string& out, int code) {
    if (code < 0 || code > 999)
        throw std::invalid_argument("serialize: code outside the 3-digit range");
    out.push_back(static_cast<char>('0' + code / 100));
    out.push_back(static_cast<char>('0' + (code / 10) % 10));
    out.push_back(static_cast<char>('0' + code % 10));
}

inline std::string serialize_slice(std::span<const int> codes) {
    std::string out;
    out.reserve(codes.size() * 4);
    for (std::size_t i = 0; i < codes.size(); ++i) {
        if (i > 0) out.push_back(',');
        append_code(out, codes[i]);
    }
    return out;
}

/// Serialize columns [col_begin, col_end) as comma-separated 3-digit values,
/// slices joined by semicolons. No whitespace, no trailing semicolon.
inline std::string serialize(const QuantizedField& q, std::size_t col_begin, std::size_t col_end) {
    if (col_begin >= col_end || col_end > q.codes.cols())
        throw std::invalid_argument("serialize: bad slice range");
    std::string out;
    out.reserve((col_end - col_begin) * q.codes.rows() * 4);
    for (std::size_t j = col_begin; j < col_end; ++j) {
        if (j > col_begin) out.push_back(';');
        auto col = q.codes.col(j);
        for (std::size_t i = 0; i < col.size(); ++i) {
            if (i > 0) out.push_back(',');
            append_code(out, col[i]);
        }
    }
    return out;
}

inline std::string serialize(const QuantizedField& q) { return serialize(q, 0, q.codes.cols()); }

/// Tokens in a stream of `slices` full slices under the one-token-per-value,
/// one-token-per-delimiter assumption: slices * 2 * n_x - 1.
inline std::size_t token_count(std::size_t slices, std::size_t n_x) {
    return slices * 2 * n_x - 1;
}

/// Count tokens the way the assumed tokenizer would: each digit group and
/// each delimiter is one token.
inline std::size_t count_tokens(std::string_view text) {
    std::size_t tokens = 0;
    bool in_group = false;
    for (char c : text) {
        if (c >= '0' && c <= '9') {
            if (!in_group) {
                ++tokens;
                in_group = true;
            }
        } else {
            ++tokens;
            in_group = false;
        }
    }
    return tokens;
}

struct OodFlag {
    std::size_t slice = 0;
    std::size_t index = 0;
    int code = 0;
    bool operator==(const OodFlag&) const = default;
};

struct MalformedSlice {
    std::size_t slice = 0;
    std::size_t got = 0;
    std::size_t want = 0;
    std::string what;
};

struct GroupDeviation {
    std::size_t slice = 0;
    std::size_t index = 0;
    std::string text; // the 1- or 2-digit group as received
};

/// Everything the parser learned about a backend's output. Anomalies are
/// diagnostics, never exceptions: callers decide policy.
struct ParseReport {
    std::vector<std::vector<int>> slices;        // complete slices only, each of size n_x
    std::vector<OodFlag> ood_flags;              // codes outside 150..850, per complete slice
    std::vector<MalformedSlice> malformed;       // under/overfull slices, bad characters, partial tail
    std::vector<GroupDeviation> nonstandard_groups; // accepted 1-2 digit groups
    std::string raw_tail;                        // text of an unterminated final partial slice

    bool clean() const { return malformed.empty(); }
};

/// Split on semicolons to segment time, commas to recover space. Accepts
/// arbitrary text; a slice joins `slices` only when it has exactly n_x
/// parseable values. 1-3 digit groups parse as values (shorter than 3 is
/// recorded as a deviation); anything else marks the slice malformed.
inline ParseReport parse(std::string_view text, std::size_t n_x) {
    if (n_x == 0) throw std::invalid_argument("parse: n_x must be >= 1");
    ParseReport report;

    std::size_t slice_index = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const std::size_t end = std::min(text.find(';', pos), text.size());
        const std::string_view segment = text.substr(pos, end - pos);
        const bool terminated = end < text.size();

        if (!terminated && segment.empty()) break; // text ended at a slice boundary

        std::vector<int> values;
        std::vector<GroupDeviation> deviations;
        std::string defect;

        std::size_t gpos = 0;
        std::size_t value_index = 0;
        while (gpos <= segment.size()) {
            const std::size_t gend = std::min(segment.find(',', gpos), segment.size());
            const std::string_view group = segment.substr(gpos, gend - gpos);
            const bool digits_only =
                !group.empty() &&
                std::all_of(group.begin(), group.end(), [](char c) { return c >= '0' && c <= '9'; });
            if (!digits_only) {
                defect = group.empty() ? "empty value group"
                                       : "non-numeric value group '" + std::string(group) + "'";
            } else if (group.size() > 3) {
                defect = "value group longer than 3 digits '" + std::string(group) + "'";
            } else {
                if (group.size() < 3)
                    deviations.push_back({slice_index, value_index, std::string(group)});
                values.push_back(std::stoi(std::string(group)));
            }
            ++value_index;
            if (gend == segment.size()) break;
            gpos = gend + 1;
        }

        if (defect.empty() && values.size() == n_x) {
            const std::size_t out_index = report.slices.size();
            for (std::size_t i = 0; i < values.size(); ++i)
                if (values[i] < code_min || values[i] > code_max)
                    report.ood_flags.push_back({out_index, i, values[i]});
            for (auto& d : deviations) {
                d.slice = out_index;
                report.nonstandard_groups.push_back(std::move(d));
            }
            report.slices.push_back(std::move(values));
        } else {
            std::string what = !defect.empty()          ? defect
                               : values.size() < n_x    ? (terminated ? "underfull slice" : "incomplete final slice")
                                                        : "overfull slice";
            report.malformed.push_back({slice_index, values.size(), n_x, std::move(what)});
            if (!terminated) report.raw_tail = std::string(segment);
        }

        ++slice_index;
        if (end == text.size()) break;
        pos = end + 1;
    }
    return report;
}

/// Irreducible per-step error from pushing a field through the code set and
/// back.
struct FloorSeries {
    std::vector<double> rmse;
    std::vector<double> maxae;
};

inline FloorSeries quantization_floor(const Matrix<double>& field) {
    const QuantizedField q = quantize(field);
    const Matrix<double> recon = reconstruct(q);
    FloorSeries floor;
    floor.rmse.resize(field.cols());
    floor.maxae.resize(field.cols());
    for (std::size_t j = 0; j < field.cols(); ++j) {
        double sq = 0.0, mx = 0.0;
        for (std::size_t i = 0; i < field.rows(); ++i) {
            const double e = recon(i, j) - field(i, j);
            sq += e * e;
            mx = std::max(mx, std::abs(e));
        }
        floor.rmse[j] = std::sqrt(sq / static_cast<double>(field.rows()));
        floor.maxae[j] = mx;
    }
    return floor;
}

/// Code deltas between adjacent time slices; all-zero columns mean the task
/// degenerates to copying.
inline Matrix<int> temporal_differences(const QuantizedField& q) {
    if (q.codes.cols() < 2)
        throw std::invalid_argument("temporal_differences: need at least two time levels");
    Matrix<int> diff(q.codes.rows(), q.codes.cols() - 1);
    for (std::size_t j = 0; j + 1 < q.codes.cols(); ++j)
        for (std::size_t i = 0; i < q.codes.rows(); ++i)
            diff(i, j) = q.codes(i, j + 1) - q.codes(i, j);
    return diff;
}

inline double zero_fraction(const Matrix<int>& m) {
    if (m.empty()) return 1.0;
    std::size_t zeros = 0;
    for (int v : m.data())
        if (v == 0) ++zeros;
    return static_cast<double>(zeros) / static_cast<double>(m.data().size());
}

} // namespace pdeseq
