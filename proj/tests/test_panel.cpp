#include <doctest.h>

#include <algorithm>
#include <functional>
#include <numeric>

#include "sparsetx/error.hpp"
#include "sparsetx/io.hpp"
#include "sparsetx/panel.hpp"
#include "support.hpp"

using namespace sparsetx;
using namespace sparsetx::panel;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("no error thrown");
    return ErrorKind::StageError;
}

}  // namespace

TEST_SUITE("panel") {

TEST_CASE("long csv rows map to records") {
    const auto recs = parse_long_csv("country,sector,year,value\nKEN,Agriculture,2001,23.5\nKEN,Agriculture,2002,\n");
    REQUIRE(recs.size() == 2);
    CHECK(recs[0] == LongRecord{"KEN", Sector::Agriculture, 2001, 23.5, true});
    CHECK(recs[1].present == false);
    CHECK(recs[1].year == 2002);
}

TEST_CASE("NA and column order from the schema") {
    CsvSchema schema;
    schema.value = "val";
    const auto recs = parse_long_csv("year,val,sector,country\n2001,NA,gdp,NGA\n2002,4,GDP,NGA\n", schema);
    REQUIRE(recs.size() == 2);
    CHECK_FALSE(recs[0].present);
    CHECK(recs[0].sector == Sector::GDP);
    CHECK(recs[1].value == 4.0);
}

TEST_CASE("malformed rows are rejected with their row index") {
    try {
        parse_long_csv("country,sector,year,value\nKEN,Agriculture,2001,1\nKEN,Agriculture,19xx,5\n");
        FAIL("expected ParseError");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::ParseError);
        CHECK(e.detail() == 2);
    }
    CHECK(kind_of([] { parse_long_csv("country,sector,year,value\n,GDP,2001,1\n"); }) == ErrorKind::ParseError);
    CHECK(kind_of([] { parse_long_csv("country,sector,year,value\nKEN,Mining,2001,1\n"); }) == ErrorKind::ParseError);
    CHECK(kind_of([] { parse_long_csv("country,sector,year,value\nKEN,GDP,2001,abc\n"); }) == ErrorKind::ParseError);
    CHECK(kind_of([] { parse_long_csv("country,sector,year,value\nKEN,GDP,1200,1\n"); }) == ErrorKind::ParseError);
    CHECK(kind_of([] { parse_long_csv("country,year,value\nKEN,2001,1\n"); }) == ErrorKind::SchemaMismatch);
    CHECK(kind_of([] { load_long_csv("/nonexistent/panel.csv"); }) == ErrorKind::FileNotFound);
}

TEST_CASE("to_wide_matrix shapes and masks") {
    std::vector<LongRecord> recs;
    for (const auto& c : {"A", "B"})
        for (int y = 2000; y < 2003; ++y) recs.push_back({c, Sector::GDP, y, static_cast<double>(y), true});
    const auto full = to_wide_matrix(recs);
    CHECK(full.rows() == 2);
    CHECK(full.cols() == 3);
    CHECK(full.fully_observed());

    recs.erase(recs.begin() + 4);
    const auto holed = to_wide_matrix(recs);
    CHECK(holed.observed_count() == 5);
    CHECK_FALSE(holed.observed(1, 1));

    recs.push_back({"A", Sector::GDP, 2000, -1.0, true});
    CHECK(kind_of([&] { to_wide_matrix(recs); }) == ErrorKind::DuplicateCell);
    CHECK(kind_of([] { to_wide_matrix({}); }) == ErrorKind::EmptyMatrix);
}

TEST_CASE("interior unobserved years become missing cells") {
    const auto m = to_wide_matrix({{"A", Sector::GDP, 2000, 1.0, true}, {"A", Sector::GDP, 2003, 2.0, true}});
    CHECK(m.years() == std::vector<int>{2000, 2001, 2002, 2003});
    CHECK(m.observed_count() == 2);
}

TEST_CASE("missing fraction") {
    support::Rng rng(1);
    const auto m = support::random_panel(rng, 1, 5, 0.0);
    CHECK(missing_fraction(m) == 0.0);
    CHECK(missing_fraction(m.with_cells(m.values(), Mask::Constant(4, 5, false))) == 1.0);

    Mask mask = Mask::Constant(2, 5, true);
    mask(0, 1) = mask(1, 3) = mask(1, 4) = false;
    const PanelMatrix ten({{"A", Sector::GDP}, {"B", Sector::GDP}}, {1, 2, 3, 4, 5}, Eigen::MatrixXd::Zero(2, 5), mask);
    CHECK(missing_fraction(ten) == doctest::Approx(0.3));
    CHECK(kind_of([] { missing_fraction(PanelMatrix()); }) == ErrorKind::EmptyMatrix);
}

TEST_CASE("panel invariants are enforced") {
    const std::vector<Entity> two{{"A", Sector::GDP}, {"A", Sector::GDP}};
    CHECK(kind_of([&] { PanelMatrix(two, {1}, Eigen::MatrixXd::Zero(2, 1), Mask::Constant(2, 1, true)); }) ==
          ErrorKind::InvalidConfig);
    CHECK(kind_of([] { PanelMatrix({{"A", Sector::GDP}}, {2, 1}, Eigen::MatrixXd::Zero(1, 2), Mask::Constant(1, 2, true)); }) ==
          ErrorKind::InvalidConfig);
    CHECK(kind_of([] { PanelMatrix({{"A", Sector::GDP}}, {1}, Eigen::MatrixXd::Zero(1, 2), Mask::Constant(1, 2, true)); }) ==
          ErrorKind::ShapeMismatch);
    Eigen::MatrixXd nan = Eigen::MatrixXd::Constant(1, 1, std::nan(""));
    CHECK(kind_of([&] { PanelMatrix({{"A", Sector::GDP}}, {1}, nan, Mask::Constant(1, 1, true)); }) == ErrorKind::InvalidConfig);
    // A non-finite value under a false mask carries no meaning.
    CHECK_NOTHROW(PanelMatrix({{"A", Sector::GDP}}, {1}, nan, Mask::Constant(1, 1, false)));
}

TEST_CASE("entity labels") {
    const Entity e{"KEN", Sector::Services};
    CHECK(e.label() == "KEN:Services");
    CHECK(Entity::parse("KEN:Services") == e);
    CHECK(kind_of([] { Entity::parse("KEN"); }) == ErrorKind::ParseError);
    CHECK(parse_sector("agriculture") == Sector::Agriculture);
}

TEST_CASE("wide csv layout") {
    Mask mask = Mask::Constant(1, 2, true);
    mask(0, 1) = false;
    const PanelMatrix m({{"KEN", Sector::GDP}}, {1991, 1992}, Eigen::MatrixXd::Constant(1, 2, 1.5), mask);
    CHECK(wide_csv(m) == "entity,1991,1992\nKEN:GDP,1.5,\n");
}

TEST_CASE("property: long -> wide -> long keeps every present cell") {
    support::Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        const auto m = support::random_panel(rng, support::uniform_int(rng, 1, 4), support::uniform_int(rng, 1, 12), 0.3);
        const auto recs = to_long(m);
        const auto again = to_wide_matrix(recs);
        REQUIRE((again == m));
        REQUIRE((to_wide_matrix(parse_long_csv(long_csv(recs))) == m));
    }
}

TEST_CASE("property: missing fraction ignores row and column order") {
    support::Rng rng(12);
    for (int trial = 0; trial < 50; ++trial) {
        const auto m = support::random_panel(rng, 2, 9, rng.uniform());
        std::vector<Eigen::Index> rows(static_cast<std::size_t>(m.rows()));
        std::vector<Eigen::Index> cols(static_cast<std::size_t>(m.cols()));
        std::iota(rows.begin(), rows.end(), 0);
        std::iota(cols.begin(), cols.end(), 0);
        for (std::size_t k = rows.size(); k > 1; --k) std::swap(rows[k - 1], rows[rng.index(k)]);
        for (std::size_t k = cols.size(); k > 1; --k) std::swap(cols[k - 1], cols[rng.index(k)]);
        Mask permuted(m.rows(), m.cols());
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j)
                permuted(i, j) = m.mask()(rows[static_cast<std::size_t>(i)], cols[static_cast<std::size_t>(j)]);
        REQUIRE(missing_fraction(m.with_cells(m.values(), permuted)) == missing_fraction(m));
    }
}

TEST_CASE("share summaries") {
    ShareSeries constant{"A", {1, 2, 3}, {{0.4, 0.3, 0.3}, {0.4, 0.3, 0.3}, {0.4, 0.3, 0.3}}};
    const auto s = summarize_shares({constant});
    CHECK(s[0].mean.agriculture == doctest::Approx(0.4));
    CHECK(s[0].mean.industry == doctest::Approx(0.3));
    CHECK(s[0].sd.agriculture == doctest::Approx(0.0));

    // Sample sd of {0.2, 0.6}: sqrt(((0.2)^2 + (0.2)^2) / 1) = 0.2828427...
    ShareSeries two{"B", {1, 2}, {{0.2, 0.4, 0.4}, {0.6, 0.2, 0.2}}};
    const auto t = summarize_shares({two});
    CHECK(t[0].mean.agriculture == doctest::Approx(0.4).epsilon(1e-12));
    CHECK(t[0].sd.agriculture == doctest::Approx(0.282843).epsilon(1e-6));

    CHECK(kind_of([] { summarize_shares({ShareSeries{"C", {1}, {{0.4, 0.3, 0.3}}}}); }) == ErrorKind::InsufficientData);
    CHECK(kind_of([] { summarize_shares({ShareSeries{"C", {1, 2}, {{0.4, 0.3, 0.4}, {0.4, 0.3, 0.3}}}}); }) ==
          ErrorKind::InvalidShare);
}

TEST_CASE("property: share means sum to one and sds are nonnegative") {
    support::Rng rng(13);
    for (int trial = 0; trial < 100; ++trial) {
        ShareSeries s{"X", {}, {}};
        const int n = support::uniform_int(rng, 2, 30);
        for (int k = 0; k < n; ++k) {
            const double a = rng.uniform(), b = rng.uniform(), c = rng.uniform();
            const double total = a + b + c;
            s.years.push_back(k);
            s.shares.push_back({a / total, b / total, 1.0 - a / total - b / total});
        }
        if (!std::all_of(s.shares.begin(), s.shares.end(), [](const ShareTriple& t) { return t.valid(); })) continue;
        const auto sum = summarize_shares({s})[0];
        REQUIRE(sum.mean.agriculture + sum.mean.industry + sum.mean.services == doctest::Approx(1.0).epsilon(1e-9));
        REQUIRE(sum.sd.agriculture >= 0.0);
        REQUIRE(sum.sd.industry >= 0.0);
        REQUIRE(sum.sd.services >= 0.0);
    }
}

}
