#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <random>
#include <regex>
#include <string>

#include "pdeseq/codec.hpp"

using namespace pdeseq;

namespace {

Matrix<double> field_from(std::initializer_list<std::initializer_list<double>> cols) {
    const std::size_t n_cols = cols.size();
    const std::size_t n_rows = cols.begin()->size();
    Matrix<double> m(n_rows, n_cols);
    std::size_t j = 0;
    for (const auto& col : cols) {
        std::size_t i = 0;
        for (double v : col) m(i++, j) = v;
        ++j;
    }
    return m;
}

Matrix<double> random_field(std::mt19937_64& engine, std::size_t rows, std::size_t cols,
                            double lo, double hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Matrix<double> m(rows, cols);
    for (double& v : m.data()) v = dist(engine);
    return m;
}

} // namespace

TEST_CASE("affine map endpoints and midpoint") {
    auto q = quantize(field_from({{-1.0, 1.0, 0.0}}));
    CHECK(q.range == QuantRange{-1.0, 1.0});
    CHECK(q.codes(0, 0) == 150);
    CHECK(q.codes(1, 0) == 850);
    CHECK(q.codes(2, 0) == 500);

    auto unit = quantize(field_from({{0.0, 700.0, 351.0}}));
    CHECK(unit.codes(2, 0) == 501);
}

TEST_CASE("constant field quantizes to 500 and reconstructs exactly") {
    Matrix<double> field(4, 3, 3.0);
    auto q = quantize(field);
    for (int c : q.codes.data()) CHECK(c == 500);
    auto back = reconstruct(q);
    for (double v : back.data()) CHECK(v == 3.0);
}

TEST_CASE("reconstruct maps single codes as documented") {
    QuantRange sym{-1.0, 1.0};
    CHECK(reconstruct_value(500, sym) == Catch::Approx(0.0).margin(1e-15));
    QuantRange wide{0.0, 7.0};
    CHECK(reconstruct_value(850, wide) == 7.0);
    CHECK(reconstruct_value(150, wide) == 0.0);
    // OOD codes clamp into the representable range.
    CHECK(reconstruct_value(999, wide) == 7.0);
    CHECK(reconstruct_value(3, wide) == 0.0);
}

TEST_CASE("round trip stays within the half-step bound") {
    std::mt19937_64 engine(404);
    auto field = random_field(engine, 10, 100, -1.0, 1.0);
    auto q = quantize(field);
    auto back = reconstruct(q);
    const double bound = q.range.width() / 1400.0 + 1e-12;
    for (std::size_t idx = 0; idx < field.data().size(); ++idx)
        CHECK(std::abs(back.data()[idx] - field.data()[idx]) <= bound);
}

TEST_CASE("quantize preserves ordering elementwise") {
    std::mt19937_64 engine(405);
    auto field = random_field(engine, 6, 40, -3.0, 5.0);
    auto q = quantize(field);
    const auto& u = field.data();
    const auto& c = q.codes.data();
    for (std::size_t a = 0; a < u.size(); a += 7)
        for (std::size_t b = 0; b < u.size(); b += 11)
            if (u[a] <= u[b]) CHECK(c[a] <= c[b]);
}

TEST_CASE("non-finite entries are rejected") {
    Matrix<double> bad(2, 2, 0.0);
    bad(1, 1) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(quantize(bad), std::invalid_argument);
    bad(1, 1) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(quantize(bad), std::invalid_argument);
}

TEST_CASE("serialization format is exact") {
    QuantizedField q;
    q.codes = Matrix<int>(2, 2);
    q.codes(0, 0) = 150;
    q.codes(1, 0) = 500;
    q.codes(0, 1) = 850;
    q.codes(1, 1) = 151;
    CHECK(serialize(q) == "150,500;850,151");
    CHECK(serialize(q, 0, 1) == "150,500");
    CHECK(serialize(q, 1, 2) == "850,151");
    CHECK_THROWS_AS(serialize(q, 1, 1), std::invalid_argument);
    CHECK_THROWS_AS(serialize(q, 0, 3), std::invalid_argument);
}

TEST_CASE("one slice of 14 values is 27 tokens") {
    std::mt19937_64 engine(9);
    auto q = quantize(random_field(engine, 14, 1, -1.0, 1.0));
    const std::string text = serialize(q);
    CHECK(count_tokens(text) == 27);
    CHECK(token_count(1, 14) == 27);
    CHECK(token_count(26, 14) == 727);
}

TEST_CASE("serialized streams stay inside the grammar") {
    const std::regex grammar(R"(\d{3}(,\d{3})*(;\d{3}(,\d{3})*)*)");
    std::mt19937_64 engine(77);
    for (int t = 0; t < 20; ++t) {
        auto q = quantize(random_field(engine, 1 + engine() % 8, 1 + engine() % 6, -2.0, 2.0));
        const std::string text = serialize(q);
        CHECK(std::regex_match(text, grammar));
        CHECK(count_tokens(text) == token_count(q.codes.cols(), q.codes.rows()));
    }
}

TEST_CASE("parse round-trips serialized fields exactly") {
    std::mt19937_64 engine(1234);
    for (int t = 0; t < 100; ++t) {
        const std::size_t n_x = 1 + engine() % 12;
        const std::size_t slices = 1 + engine() % 8;
        auto q = quantize(random_field(engine, n_x, slices, -1.0, 1.0));
        auto report = parse(serialize(q), n_x);
        REQUIRE(report.clean());
        REQUIRE(report.slices.size() == slices);
        CHECK(report.ood_flags.empty());
        CHECK(report.nonstandard_groups.empty());
        CHECK(report.raw_tail.empty());
        for (std::size_t j = 0; j < slices; ++j)
            for (std::size_t i = 0; i < n_x; ++i)
                CHECK(report.slices[j][i] == q.codes(i, j));
    }
}

TEST_CASE("parse flags out-of-distribution codes") {
    auto report = parse("150,999", 2);
    REQUIRE(report.slices.size() == 1);
    REQUIRE(report.ood_flags.size() == 1);
    CHECK(report.ood_flags[0] == OodFlag{0, 1, 999});
    CHECK(report.clean());

    auto low = parse("000,150;149,851", 2);
    CHECK(low.ood_flags.size() == 3);
}

TEST_CASE("parse reports a partial final slice instead of dropping it") {
    auto report = parse("150,500;850", 2);
    REQUIRE(report.slices.size() == 1);
    CHECK(report.slices[0] == std::vector<int>{150, 500});
    REQUIRE(report.malformed.size() == 1);
    CHECK(report.malformed[0].slice == 1);
    CHECK(report.malformed[0].got == 1);
    CHECK(report.malformed[0].want == 2);
    CHECK(report.raw_tail == "850");
}

TEST_CASE("trailing semicolon means a clean boundary") {
    auto report = parse("150,500;", 2);
    CHECK(report.slices.size() == 1);
    CHECK(report.clean());
    CHECK(report.raw_tail.empty());
}

TEST_CASE("short digit groups are accepted but recorded") {
    auto report = parse("7,500", 2);
    REQUIRE(report.slices.size() == 1);
    CHECK(report.slices[0] == std::vector<int>{7, 500});
    REQUIRE(report.nonstandard_groups.size() == 1);
    CHECK(report.nonstandard_groups[0].text == "7");
    REQUIRE(report.ood_flags.size() == 1);
    CHECK(report.ood_flags[0].code == 7);
}

TEST_CASE("malformed slices do not block later complete slices") {
    auto report = parse("abc;150,500;1234,555;150,,500;850,851", 2);
    REQUIRE(report.slices.size() == 2);
    CHECK(report.slices[0] == std::vector<int>{150, 500});
    CHECK(report.slices[1] == std::vector<int>{850, 851});
    CHECK(report.malformed.size() == 3);
    REQUIRE(report.ood_flags.size() == 1);
    CHECK(report.ood_flags[0] == OodFlag{1, 1, 851});
}

TEST_CASE("fuzzed streams never crash and anomalies are reported") {
    std::mt19937_64 engine(8675309);
    const std::string alphabet = "0123456789,;";
    for (int t = 0; t < 500; ++t) {
        const std::size_t n_x = 1 + engine() % 6;
        auto q = quantize(random_field(engine, n_x, 1 + engine() % 5, -1.0, 1.0));
        std::string text = serialize(q);
        const int edits = 1 + static_cast<int>(engine() % 6);
        for (int e = 0; e < edits; ++e) {
            if (text.empty()) break;
            const std::size_t at = engine() % text.size();
            if (engine() % 2 == 0)
                text.insert(at, 1, alphabet[engine() % alphabet.size()]);
            else
                text.erase(at, 1);
        }
        auto report = parse(text, n_x);
        for (const auto& s : report.slices) CHECK(s.size() == n_x);
        for (const auto& s : report.slices)
            for (std::size_t i = 0; i < s.size(); ++i)
                if (s[i] < code_min || s[i] > code_max) {
                    const bool flagged = std::any_of(
                        report.ood_flags.begin(), report.ood_flags.end(),
                        [&](const OodFlag& f) { return f.code == s[i]; });
                    CHECK(flagged);
                }
    }
}

TEST_CASE("quantization floor vanishes on lattice and constant fields") {
    auto lattice = field_from({{0.0, 700.0}, {350.0, 7.0}});
    auto floor = quantization_floor(lattice);
    for (double v : floor.rmse) CHECK(v == Catch::Approx(0.0).margin(1e-12));
    for (double v : floor.maxae) CHECK(v == Catch::Approx(0.0).margin(1e-12));

    Matrix<double> constant(5, 4, 1.25);
    auto cfloor = quantization_floor(constant);
    for (double v : cfloor.maxae) CHECK(v == 0.0);
}

TEST_CASE("quantization floor respects the half-step bound") {
    std::mt19937_64 engine(2718);
    auto field = random_field(engine, 14, 26, -1.0, 1.0);
    auto floor = quantization_floor(field);
    auto q = quantize(field);
    auto recon = reconstruct(q);
    const double bound = q.range.width() / 1400.0 + 1e-12;
    for (std::size_t j = 0; j < field.cols(); ++j) {
        CHECK(floor.maxae[j] <= bound);
        CHECK(floor.rmse[j] <= floor.maxae[j] + 1e-15);
        // brute-force the column maximum independently
        double mx = 0.0;
        for (std::size_t i = 0; i < field.rows(); ++i)
            mx = std::max(mx, std::abs(recon(i, j) - field(i, j)));
        CHECK(floor.maxae[j] == Catch::Approx(mx).margin(1e-15));
    }
}

TEST_CASE("temporal differences expose degeneracy") {
    Matrix<double> constant(3, 5, 2.0);
    auto qc = quantize(constant);
    auto dc = temporal_differences(qc);
    CHECK(zero_fraction(dc) == 1.0);

    Matrix<double> rising(2, 4);
    for (std::size_t j = 0; j < 4; ++j)
        for (std::size_t i = 0; i < 2; ++i)
            rising(i, j) = static_cast<double>(j) + 0.1 * static_cast<double>(i);
    auto qr = quantize(rising);
    auto dr = temporal_differences(qr);
    CHECK(dr.rows() == 2);
    CHECK(dr.cols() == 3);
    for (int v : dr.data()) CHECK(v >= 0);

    QuantizedField single{Matrix<int>(2, 1), {0.0, 1.0}};
    CHECK_THROWS_AS(temporal_differences(single), std::invalid_argument);
}
