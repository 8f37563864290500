#include <doctest.h>

#include <cmath>
#include <numbers>

#include "sparsetx/error.hpp"
#include "sparsetx/factor.hpp"
#include "support.hpp"

using namespace sparsetx;
using namespace sparsetx::factor;

namespace {

/// n draws of Lambda f + e with f ~ N(0, I_k), e ~ N(0, diag(psi)).
Eigen::MatrixXd factor_data(Rng& rng, Eigen::Index n, const Eigen::MatrixXd& lambda, const Eigen::VectorXd& psi) {
    const Eigen::MatrixXd F = support::normal_matrix(rng, n, lambda.cols());
    Eigen::MatrixXd E = support::normal_matrix(rng, n, lambda.rows());
    E = E * psi.cwiseSqrt().asDiagonal();
    return F * lambda.transpose() + E;
}

Eigen::MatrixXd sample_cov(const Eigen::MatrixXd& Y) {
    const Eigen::MatrixXd c = Y.rowwise() - Y.colwise().mean();
    return c.transpose() * c / static_cast<double>(Y.rows());
}

}  // namespace

TEST_SUITE("factor") {

TEST_CASE("one factor loading direction is recovered") {
    Rng rng(1);
    const Eigen::MatrixXd lambda = Eigen::MatrixXd::Ones(4, 1);
    const Eigen::MatrixXd Y = factor_data(rng, 500, lambda, Eigen::VectorXd::Constant(4, 0.01));
    const auto m = fit_em(Y);
    CHECK(std::abs(support::cosine(m.loadings.col(0), lambda.col(0))) > 0.99);
    CHECK((m.psi.array() > 0.0).all());
    Eigen::LLT<Eigen::MatrixXd> llt(m.implied_covariance());
    CHECK(llt.info() == Eigen::Success);
}

TEST_CASE("pure noise leaves little common variance") {
    // Maximum likelihood on pure noise lands on a Heywood boundary for about
    // half the draws: one variable takes a unit loading and a floored
    // uniqueness. That explains its own variance but no covariance, so the
    // check is on the off-diagonal part, with the total-norm bound applied
    // to the interior solutions.
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        Rng rng(seed);
        const Eigen::MatrixXd Y = support::normal_matrix(rng, 1000, 6);
        // EM crawls toward the boundary, so run it to convergence.
        FactorConfig cfg;
        cfg.max_iters = 100000;
        cfg.tol = 1e-12;
        const auto m = fit_em(Y, cfg);
        const Eigen::MatrixXd common = m.loadings * m.loadings.transpose();
        const Eigen::VectorXd var = sample_cov(Y).diagonal();
        const Eigen::MatrixXd off = common - Eigen::MatrixXd(common.diagonal().asDiagonal());
        CHECK(off.cwiseAbs().maxCoeff() < 0.15);
        if ((m.psi.array() > 0.5 * var.array()).all()) CHECK(common.norm() < 0.2 * var.norm());
    }
}

TEST_CASE("property: EM log-likelihood never decreases") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const Eigen::Index p = support::uniform_int(rng, 3, 8);
        FactorConfig cfg;
        cfg.k = support::uniform_int(rng, 1, static_cast<int>(p) - 1);
        cfg.max_iters = 200;
        cfg.seed = static_cast<std::uint64_t>(trial);
        const Eigen::MatrixXd Y = trial % 2 == 0 ? support::normal_matrix(rng, 60, p)
                                                 : factor_data(rng, 60, support::normal_matrix(rng, p, 2), Eigen::VectorXd::Constant(p, 0.3));
        const auto m = fit_em(Y, cfg);
        for (std::size_t k = 1; k < m.loglik_trace.size(); ++k)
            REQUIRE(m.loglik_trace[k] >= m.loglik_trace[k - 1] - 1e-8 * std::abs(m.loglik_trace[k - 1]));
        REQUIRE(m.loglik_trace.back() == doctest::Approx(model_loglik(m, Y)).epsilon(1e-9));
    }
}

TEST_CASE("property: orthogonal rotation of the loadings leaves the likelihood unchanged") {
    Rng rng(4);
    for (int trial = 0; trial < 30; ++trial) {
        const Eigen::Index p = support::uniform_int(rng, 3, 9);
        FactorModel m;
        m.k = support::uniform_int(rng, 1, static_cast<int>(p) - 1);
        m.loadings = support::normal_matrix(rng, p, m.k);
        m.psi = (support::normal_vector(rng, p).array().square() + 0.1).matrix();
        m.mean = support::normal_vector(rng, p);
        const Eigen::MatrixXd Y = support::normal_matrix(rng, 40, p);
        FactorModel rotated = m;
        rotated.loadings = m.loadings * support::random_orthogonal(rng, m.k);
        const double a = model_loglik(m, Y);
        REQUIRE(std::abs(model_loglik(rotated, Y) - a) <= 1e-9 * std::max(1.0, std::abs(a)));
    }
}

TEST_CASE("zero loadings and unit uniquenesses give the standard normal density") {
    Rng rng(5);
    const Eigen::MatrixXd Y = support::normal_matrix(rng, 25, 4);
    FactorModel m;
    m.k = 1;
    m.loadings = Eigen::MatrixXd::Zero(4, 1);
    m.psi = Eigen::VectorXd::Ones(4);
    m.mean = Y.colwise().mean().transpose();
    const Eigen::MatrixXd c = Y.rowwise() - m.mean.transpose();
    const double expected = -0.5 * c.squaredNorm() - 0.5 * static_cast<double>(c.size()) * std::log(2.0 * std::numbers::pi);
    CHECK(model_loglik(m, Y) == doctest::Approx(expected).epsilon(1e-12));

    // Duplicating a row adds that row's density.
    Eigen::MatrixXd more(26, 4);
    more << Y, Y.row(3);
    const double row3 = -0.5 * c.row(3).squaredNorm() - 2.0 * std::log(2.0 * std::numbers::pi);
    CHECK(model_loglik(m, more) - model_loglik(m, Y) == doctest::Approx(row3).epsilon(1e-10));

    CHECK(model_loglik(fit_em(Y), Y) >= model_loglik(m, Y));
}

TEST_CASE("scores") {
    Rng rng(6);
    const Eigen::Vector4d lam(1.0, 2.0, -1.0, 0.5);
    const Eigen::VectorXd f = support::normal_vector(rng, 300);
    const Eigen::MatrixXd Y = f * lam.transpose() + 1e-3 * support::normal_matrix(rng, 300, 4);
    const auto m = fit_em(Y);
    const Eigen::MatrixXd s = factor_scores(m, Y);
    const Eigen::VectorXd sc = s.col(0).array() - s.col(0).mean();
    const Eigen::VectorXd fc = f.array() - f.mean();
    CHECK(std::abs(support::cosine(sc, fc)) > 0.999);

    const Eigen::MatrixXd at_mean = m.mean.transpose().replicate(5, 1);
    CHECK(factor_scores(m, at_mean).cwiseAbs().maxCoeff() < 1e-12);

    FactorModel flipped = m;
    flipped.loadings = -m.loadings;
    CHECK((factor_scores(flipped, Y) + s).cwiseAbs().maxCoeff() < 1e-12);
    CHECK_THROWS_AS(factor_scores(m, Y.leftCols(3)), Error);
}

TEST_CASE("well specified fit reproduces the covariance diagonal") {
    Rng rng(7);
    Eigen::MatrixXd lambda = support::normal_matrix(rng, 8, 2);
    const Eigen::VectorXd psi = Eigen::VectorXd::Constant(8, 0.5);
    const Eigen::MatrixXd Y = factor_data(rng, 2000, lambda, psi);
    FactorConfig cfg;
    cfg.k = 2;
    const auto m = fit_em(Y, cfg);
    const Eigen::VectorXd implied = m.implied_covariance().diagonal();
    const Eigen::VectorXd sample = sample_cov(Y).diagonal();
    CHECK(((implied - sample).cwiseQuotient(sample)).cwiseAbs().maxCoeff() < 0.10);
    const Eigen::MatrixXd scores = factor_scores(m, Y);
    const Eigen::MatrixXd cov = sample_cov(scores);
    // Regression scores shrink, so their covariance is I minus the posterior variance.
    CHECK((cov - Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() < 0.25);
}

TEST_CASE("multi-start picks the best likelihood deterministically") {
    Rng rng(8);
    const Eigen::MatrixXd Y = factor_data(rng, 200, support::normal_matrix(rng, 6, 2), Eigen::VectorXd::Constant(6, 0.4));
    FactorConfig cfg;
    cfg.k = 2;
    cfg.starts = 4;
    cfg.threads = 1;
    const auto a = fit_em(Y, cfg);
    cfg.threads = 4;
    const auto b = fit_em(Y, cfg);
    CHECK(a.start == b.start);
    CHECK(a.loadings == b.loadings);
    cfg.starts = 1;
    CHECK(a.loglik_trace.back() >= fit_em(Y, cfg).loglik_trace.back() - 1e-9);
}

TEST_CASE("invalid factor counts") {
    Rng rng(9);
    const Eigen::MatrixXd Y = support::normal_matrix(rng, 30, 4);
    FactorConfig cfg;
    cfg.k = 4;
    try {
        fit_em(Y, cfg);
        FAIL("expected KTooLarge");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::KTooLarge);
    }
    cfg.k = 0;
    CHECK_THROWS_AS(fit_em(Y, cfg), Error);
}

TEST_CASE("panel observations put years in rows") {
    Rng rng(10);
    const auto m = support::full_panel(support::normal_matrix(rng, 8, 5));
    const auto Y = panel_observations(m);
    CHECK(Y.rows() == 5);
    CHECK(Y.cols() == 8);
    CHECK(Y(2, 3) == m.values()(3, 2));
    FactorModel model;
    model.k = 1;
    model.loadings = Eigen::MatrixXd::Ones(2, 1);
    model.psi = Eigen::VectorXd::Ones(2);
    CHECK(loadings_csv(model, {"a", "b"}) == "variable,psi,f1\na,1,1\nb,1,1\n");
}

}
