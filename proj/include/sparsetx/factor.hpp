#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sparsetx/panel.hpp"

namespace sparsetx::factor {

struct FactorModel {
    Eigen::MatrixXd loadings;  // p x k
    Eigen::VectorXd psi;       // uniquenesses
    Eigen::VectorXd mean;      // column means of the training data
    int k = 0;
    Eigen::Index n_obs = 0;
    std::vector<double> loglik_trace;
    int iterations = 0;
    bool converged = false;
    /// Index of the winning start in a multi-start fit.
    int start = 0;

    Eigen::MatrixXd implied_covariance() const;
};

struct FactorConfig {
    int k = 1;
    int max_iters = 1000;
    /// Relative log-likelihood change that ends EM.
    double tol = 1e-8;
    std::uint64_t seed = 1;
    /// Start 0 is the principal-component start; later starts jitter it.
    int starts = 1;
    /// Uniqueness floor as a fraction of each column's variance.
    double psi_floor = 1e-4;
    unsigned threads = 0;
};

/// Maximum-likelihood factor analysis by EM on the sample covariance.
FactorModel fit_em(const Eigen::MatrixXd& Y, const FactorConfig& cfg = {});

/// Regression-method scores Lambda^T Sigma^-1 (y - mean) per row.
Eigen::MatrixXd factor_scores(const FactorModel& model, const Eigen::MatrixXd& Y);

/// Sum over rows of the N(mean, Lambda Lambda^T + Psi) log-density.
double model_loglik(const FactorModel& model, const Eigen::MatrixXd& Y);

/// Years as observations, entities as variables; the panel must be complete.
Eigen::MatrixXd panel_observations(const panel::PanelMatrix& completed);

/// `variable,psi,f1..fk`.
std::string loadings_csv(const FactorModel& model, const std::vector<std::string>& names);
/// `row,f1..fk`.
std::string scores_csv(const Eigen::MatrixXd& scores, const std::vector<std::string>& row_labels);

}  // namespace sparsetx::factor
