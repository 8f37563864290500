#include <doctest.h>

#include <functional>

#include "sparsetx/error.hpp"
#include "sparsetx/synth.hpp"
#include "support.hpp"

using namespace sparsetx;
using namespace sparsetx::synth;

TEST_SUITE("synth") {

TEST_CASE("zero noise and zero drift give constant shares") {
    SynthConfig cfg;
    cfg.n_countries = 3;
    cfg.share_noise_sd = 0.0;
    ShareTrend flat;
    flat.agriculture_drop = 0.0;
    flat.services_rise = 0.0;
    cfg.share_trend.assign(3, flat);
    for (const auto& series : gen_sector_shares(cfg)) {
        REQUIRE(series.shares.size() == static_cast<std::size_t>(cfg.n_years()));
        for (const auto& s : series.shares) {
            CHECK(s.agriculture == doctest::Approx(0.665).epsilon(1e-12));
            CHECK(s.services == doctest::Approx(0.125).epsilon(1e-12));
            CHECK(s.industry == doctest::Approx(0.21).epsilon(1e-12));
        }
    }
}

TEST_CASE("calibrated shares land near the reported moments") {
    const auto summary = panel::summarize_shares(gen_sector_shares(SynthConfig{}));
    double mean = 0.0, sd = 0.0;
    for (const auto& s : summary) {
        mean += s.mean.agriculture / static_cast<double>(summary.size());
        sd += s.sd.agriculture / static_cast<double>(summary.size());
    }
    CHECK(std::abs(mean - 0.398353) <= 0.05);
    CHECK(std::abs(sd - 0.194547) <= 0.05);
}

TEST_CASE("share trends move the right way and every triple sums to one") {
    SynthConfig cfg;
    cfg.n_countries = 8;
    for (const auto& series : gen_sector_shares(cfg)) {
        for (const auto& s : series.shares) REQUIRE(s.valid());
        const auto& first = series.shares.front();
        const auto& last = series.shares.back();
        CHECK(last.agriculture < first.agriculture);
        CHECK(last.services > first.services);
    }
}

TEST_CASE("generators are pure functions of the config") {
    SynthConfig cfg;
    cfg.seed = 99;
    const auto a = gen_lowrank_panel(cfg);
    const auto b = gen_lowrank_panel(cfg);
    CHECK(a.panel == b.panel);
    CHECK(a.U == b.U);
    const auto s1 = gen_sector_shares(cfg);
    const auto s2 = gen_sector_shares(cfg);
    CHECK(panel::shares_csv(s1) == panel::shares_csv(s2));
    cfg.seed = 100;
    CHECK_FALSE(gen_lowrank_panel(cfg).panel == a.panel);
}

TEST_CASE("noiseless rank one panel has vanishing 2x2 minors") {
    SynthConfig cfg;
    cfg.rank = 1;
    cfg.noise_sd = 0.0;
    const auto lr = gen_lowrank_panel(cfg);
    const auto& v = lr.panel.values();
    double worst = 0.0;
    for (Eigen::Index i = 0; i + 1 < v.rows(); ++i)
        for (Eigen::Index j = 0; j + 1 < v.cols(); ++j)
            worst = std::max(worst, std::abs(v(i, j) * v(i + 1, j + 1) - v(i, j + 1) * v(i + 1, j)));
    CHECK(worst < 1e-9);
    CHECK((lr.signal - lr.U * lr.V.transpose()).norm() == 0.0);
}

TEST_CASE("rank two panel with small noise has a clear spectral gap") {
    SynthConfig cfg;
    cfg.n_countries = 25;  // 100 entities
    cfg.year_start = 1981;
    cfg.year_end = 2020;
    cfg.rank = 2;
    const auto clean = gen_lowrank_panel([&] { auto c = cfg; c.noise_sd = 0.0; return c; }());
    Eigen::JacobiSVD<Eigen::MatrixXd> s0(clean.panel.values());
    cfg.noise_sd = 0.01 * s0.singularValues()(0) / std::sqrt(100.0 * 40.0);
    const auto lr = gen_lowrank_panel(cfg);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(lr.panel.values());
    const auto& sv = svd.singularValues();
    CHECK(sv(2) / sv(0) < 0.05);
}

TEST_CASE("inject_missing hits the requested fraction") {
    SynthConfig cfg;
    cfg.n_countries = 25;
    cfg.year_start = 1981;
    cfg.year_end = 2020;
    const auto full = gen_lowrank_panel(cfg).panel;
    CHECK(inject_missing(full, {Mechanism::MCAR, 0.0, 1}) == full);
    const auto mcar = inject_missing(full, {Mechanism::MCAR, 0.6, 3});
    CHECK(panel::missing_fraction(mcar) >= 0.58);
    CHECK(panel::missing_fraction(mcar) <= 0.62);
    CHECK(full.fully_observed());
}

TEST_CASE("tail years remove a suffix of the year axis") {
    SynthConfig cfg;
    cfg.n_countries = 10;
    const auto full = gen_lowrank_panel(cfg).panel;
    const auto tail = inject_missing(full, {Mechanism::TailYears, 0.5, 4});
    CHECK(std::abs(panel::missing_fraction(tail) - 0.5) <= 0.02);
    for (Eigen::Index i = 0; i < tail.rows(); ++i) {
        Eigen::Index j = 0;
        while (j < tail.cols() && tail.observed(i, j)) ++j;
        for (Eigen::Index k = j; k < tail.cols(); ++k) REQUIRE_FALSE(tail.observed(i, k));
    }
}

TEST_CASE("block missingness removes whole countries in year blocks") {
    SynthConfig cfg;
    cfg.n_countries = 10;
    const auto full = gen_lowrank_panel(cfg).panel;
    const auto blocked = inject_missing(full, {Mechanism::BlockByCountry, 0.3, 5});
    CHECK(std::abs(panel::missing_fraction(blocked) - 0.3) <= 0.02);
}

TEST_CASE("invalid configs and infeasible fractions are rejected") {
    SynthConfig cfg;
    cfg.rank = 0;
    CHECK_THROWS_AS(gen_lowrank_panel(cfg), Error);
    cfg.rank = 500;
    CHECK_THROWS_AS(gen_lowrank_panel(cfg), Error);
    cfg.rank = 2;
    cfg.noise_sd = -1.0;
    CHECK_THROWS_AS(gen_lowrank_panel(cfg), Error);

    cfg.noise_sd = 0.01;
    const auto half = inject_missing(gen_lowrank_panel(cfg).panel, {Mechanism::MCAR, 0.5, 1});
    try {
        inject_missing(half, {Mechanism::MCAR, 0.2, 1});
        FAIL("expected InfeasibleFraction");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::InfeasibleFraction);
    }
}

TEST_CASE("property: inject_missing only ever removes cells") {
    Rng rng(21);
    const Mechanism mechs[] = {Mechanism::MCAR, Mechanism::BlockByCountry, Mechanism::TailYears};
    for (int trial = 0; trial < 40; ++trial) {
        const auto base = support::random_panel(rng, support::uniform_int(rng, 2, 6), support::uniform_int(rng, 8, 30), 0.05);
        const double start = panel::missing_fraction(base);
        const double frac = start + 0.03 + 0.5 * rng.uniform();
        const auto mech = mechs[rng.index(3)];
        panel::PanelMatrix out;
        try {
            out = inject_missing(base, {mech, frac, rng()});
        } catch (const Error& e) {
            REQUIRE(e.kind() == ErrorKind::InfeasibleFraction);
            continue;
        }
        REQUIRE(std::abs(panel::missing_fraction(out) - frac) <= 0.02);
        for (Eigen::Index i = 0; i < base.rows(); ++i)
            for (Eigen::Index j = 0; j < base.cols(); ++j) {
                if (!base.observed(i, j)) REQUIRE_FALSE(out.observed(i, j));
                else if (out.observed(i, j)) REQUIRE(out.values()(i, j) == base.values()(i, j));
            }
    }
}

TEST_CASE("hierarchical panel effects sum to zero") {
    const auto h = gen_hierarchical_panel(SynthConfig{});
    CHECK(std::abs(h.gamma.sum()) < 1e-9);
    CHECK(std::abs(h.delta.sum()) < 1e-9);
    CHECK(h.x.fully_observed());
    CHECK(h.y.rows() == h.gamma.size());
}

TEST_CASE("country codes") {
    CHECK(country_code(0) == "A");
    CHECK(country_code(25) == "Z");
    CHECK(country_code(26) == "AA");
    CHECK(country_code(27) == "AB");
}

}
