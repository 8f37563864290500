#include "sparsetx/factor.hpp"

#include <cmath>
#include <numbers>
#include <optional>
#include <sstream>

#include "sparsetx/error.hpp"
#include "sparsetx/io.hpp"
#include "sparsetx/parallel.hpp"
#include "sparsetx/rng.hpp"

namespace sparsetx::factor {

namespace {

Eigen::LLT<Eigen::MatrixXd> factorize(const Eigen::MatrixXd& sigma) {
    Eigen::LLT<Eigen::MatrixXd> llt(sigma);
    if (llt.info() != Eigen::Success) throw Error(ErrorKind::SingularCovariance, "implied covariance is not positive definite");
    return llt;
}

double log_det(const Eigen::LLT<Eigen::MatrixXd>& llt) {
    return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

/// -n/2 (p log 2 pi + log|Sigma| + tr(Sigma^-1 S)) for sample covariance S.
double covariance_loglik(const Eigen::MatrixXd& S, const Eigen::MatrixXd& sigma, Eigen::Index n) {
    const auto llt = factorize(sigma);
    const double trace = llt.solve(S).trace();
    const auto p = static_cast<double>(S.rows());
    return -0.5 * static_cast<double>(n) * (p * std::log(2.0 * std::numbers::pi) + log_det(llt) + trace);
}

FactorModel run_em(const Eigen::MatrixXd& S, const Eigen::VectorXd& floor, Eigen::MatrixXd lambda, Eigen::VectorXd psi,
                   Eigen::Index n, const FactorConfig& cfg) {
    const Eigen::Index k = lambda.cols();
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(k, k);
    FactorModel m;
    m.k = static_cast<int>(k);
    m.n_obs = n;

    auto implied = [&] {
        Eigen::MatrixXd sigma = lambda * lambda.transpose();
        sigma.diagonal() += psi;
        return sigma;
    };
    m.loglik_trace.push_back(covariance_loglik(S, implied(), n));
    for (int it = 1; it <= cfg.max_iters; ++it) {
        const auto llt = factorize(implied());
        const Eigen::MatrixXd beta = llt.solve(lambda).transpose();  // k x p
        const Eigen::MatrixXd s_beta = S * beta.transpose();         // p x k
        const Eigen::MatrixXd ezz = eye - beta * lambda + beta * s_beta;
        lambda = ezz.ldlt().solve(s_beta.transpose()).transpose();
        psi = (S.diagonal() - (lambda.cwiseProduct(s_beta)).rowwise().sum()).cwiseMax(floor);

        const double ll = covariance_loglik(S, implied(), n);
        if (!std::isfinite(ll)) throw Error(ErrorKind::SingularCovariance, "non-finite log-likelihood");
        const double prev = m.loglik_trace.back();
        m.loglik_trace.push_back(ll);
        m.iterations = it;
        if (std::abs(ll - prev) <= cfg.tol * std::abs(prev)) {
            m.converged = true;
            break;
        }
    }
    m.loadings = std::move(lambda);
    m.psi = std::move(psi);
    return m;
}

}  // namespace

Eigen::MatrixXd FactorModel::implied_covariance() const {
    Eigen::MatrixXd sigma = loadings * loadings.transpose();
    sigma.diagonal() += psi;
    return sigma;
}

FactorModel fit_em(const Eigen::MatrixXd& Y, const FactorConfig& cfg) {
    const Eigen::Index n = Y.rows();
    const Eigen::Index p = Y.cols();
    if (cfg.k < 1 || cfg.k >= p) throw Error(ErrorKind::KTooLarge, "need 1 <= k < number of columns");
    if (n < 2) throw Error(ErrorKind::InsufficientData, "need at least 2 rows");
    if (cfg.max_iters < 1 || !(cfg.tol > 0.0) || cfg.starts < 1 || !(cfg.psi_floor > 0.0)) {
        throw Error(ErrorKind::InvalidConfig, "max_iters >= 1, tol > 0, starts >= 1 and psi_floor > 0 required");
    }
    if (!Y.allFinite()) throw Error(ErrorKind::InvalidConfig, "factor input must be complete and finite");

    const Eigen::VectorXd mean = Y.colwise().mean().transpose();
    const Eigen::MatrixXd centered = Y.rowwise() - mean.transpose();
    const Eigen::MatrixXd S = centered.transpose() * centered / static_cast<double>(n);
    if ((S.diagonal().array() <= 0.0).any()) throw Error(ErrorKind::SingularCovariance, "a column has zero variance");
    const Eigen::VectorXd floor = cfg.psi_floor * S.diagonal();

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(S);
    const Eigen::Index k = cfg.k;
    Eigen::MatrixXd lambda0(p, k);
    for (Eigen::Index j = 0; j < k; ++j) {
        const Eigen::Index src = p - 1 - j;  // eigenvalues ascend
        lambda0.col(j) = eig.eigenvectors().col(src) * std::sqrt(std::max(eig.eigenvalues()(src), 0.0));
    }
    const Eigen::VectorXd psi0 =
        (S.diagonal() - lambda0.rowwise().squaredNorm()).cwiseMax(0.05 * S.diagonal()).cwiseMax(floor);

    std::vector<std::optional<FactorModel>> fits(static_cast<std::size_t>(cfg.starts));
    parallel_for(
        fits.size(),
        [&](std::size_t s) {
            Eigen::MatrixXd lambda = lambda0;
            if (s > 0) {
                Rng rng(cfg.seed, stream_id({tag_of("factor-start"), s}));
                for (Eigen::Index j = 0; j < k; ++j)
                    for (Eigen::Index i = 0; i < p; ++i) lambda(i, j) += 0.1 * std::sqrt(S(i, i)) * rng.normal();
            }
            fits[s].emplace(run_em(S, floor, std::move(lambda), psi0, n, cfg));
            fits[s]->start = static_cast<int>(s);
        },
        cfg.threads);

    std::size_t best = 0;
    for (std::size_t s = 1; s < fits.size(); ++s)
        if (fits[s]->loglik_trace.back() > fits[best]->loglik_trace.back()) best = s;
    FactorModel out = std::move(*fits[best]);
    out.mean = mean;
    return out;
}

Eigen::MatrixXd factor_scores(const FactorModel& model, const Eigen::MatrixXd& Y) {
    if (Y.cols() != model.loadings.rows()) throw Error(ErrorKind::ShapeMismatch, "column count differs from the model");
    const auto llt = factorize(model.implied_covariance());
    const Eigen::MatrixXd weights = llt.solve(model.loadings);  // p x k
    return (Y.rowwise() - model.mean.transpose()) * weights;
}

double model_loglik(const FactorModel& model, const Eigen::MatrixXd& Y) {
    if (Y.cols() != model.loadings.rows() || model.mean.size() != Y.cols()) {
        throw Error(ErrorKind::ShapeMismatch, "column count differs from the model");
    }
    const auto llt = factorize(model.implied_covariance());
    const Eigen::MatrixXd centered = (Y.rowwise() - model.mean.transpose()).transpose();
    const double quad = llt.matrixL().solve(centered).squaredNorm();
    const auto n = static_cast<double>(Y.rows());
    const auto p = static_cast<double>(Y.cols());
    return -0.5 * (n * (p * std::log(2.0 * std::numbers::pi) + log_det(llt)) + quad);
}

Eigen::MatrixXd panel_observations(const panel::PanelMatrix& completed) {
    if (!completed.fully_observed()) throw Error(ErrorKind::InvalidConfig, "factor analysis needs a completed panel");
    return completed.values().transpose();
}

std::string loadings_csv(const FactorModel& model, const std::vector<std::string>& names) {
    if (static_cast<Eigen::Index>(names.size()) != model.loadings.rows()) throw Error(ErrorKind::ShapeMismatch, "name count differs");
    std::ostringstream out;
    out << "variable,psi";
    for (int j = 0; j < model.k; ++j) out << ",f" << j + 1;
    out << '\n';
    for (Eigen::Index i = 0; i < model.loadings.rows(); ++i) {
        out << io::csv_escape(names[static_cast<std::size_t>(i)]) << ',' << io::format_double(model.psi(i));
        for (Eigen::Index j = 0; j < model.loadings.cols(); ++j) out << ',' << io::format_double(model.loadings(i, j));
        out << '\n';
    }
    return out.str();
}

std::string scores_csv(const Eigen::MatrixXd& scores, const std::vector<std::string>& row_labels) {
    if (static_cast<Eigen::Index>(row_labels.size()) != scores.rows()) throw Error(ErrorKind::ShapeMismatch, "label count differs");
    std::ostringstream out;
    out << "row";
    for (Eigen::Index j = 0; j < scores.cols(); ++j) out << ",f" << j + 1;
    out << '\n';
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        out << io::csv_escape(row_labels[static_cast<std::size_t>(i)]);
        for (Eigen::Index j = 0; j < scores.cols(); ++j) out << ',' << io::format_double(scores(i, j));
        out << '\n';
    }
    return out.str();
}

}  // namespace sparsetx::factor
