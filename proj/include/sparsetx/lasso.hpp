#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sparsetx/panel.hpp"

namespace sparsetx::lasso {

struct Standardization {
    Eigen::VectorXd mean;
    Eigen::VectorXd sd;  // population sd; 0 for constant columns
    std::vector<bool> constant;
};

struct Standardized {
    Eigen::MatrixXd Z;  // constant columns are zero
    Standardization stats;
    std::vector<std::string> warnings;
};

/// Centers and scales each column to mean 0 and population sd 1. Constant
/// columns become zero columns and are never selected.
Standardized standardize(const Eigen::MatrixXd& X);
Eigen::MatrixXd apply_standardization(const Standardization& s, const Eigen::MatrixXd& X);

struct LassoOptions {
    double tol = 1e-7;
    int max_iters = 100000;  // full coordinate cycles
};

struct LassoFit {
    Eigen::VectorXd beta;
    double intercept = 0.0;
    double lambda = 0.0;
    std::vector<int> selected;
    int cycles = 0;
    bool converged = false;
    /// Objective (1/2n) RSS + lambda |beta|_1 after each full cycle.
    std::vector<double> objective_trace;
};

/// max_k |z_k^T (y - mean y)| / n.
double lambda_max(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y);

/// Cyclic coordinate descent in ascending column order on
/// (1/2n)|y - b0 - Z beta|^2 + lambda |beta|_1 with unpenalized b0.
/// Multiply lambda by 2n to get the penalty on the unnormalized residual sum
/// of squares. Running out of cycles sets converged = false.
LassoFit fit_lasso(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y, double lambda, const LassoOptions& opt = {},
                   const LassoFit* warm = nullptr);

/// Log-spaced grid from lambda_max down to ratio * lambda_max.
std::vector<double> lambda_grid(double lambda_max, int n_lambdas, double ratio);

/// Fits along the grid with warm starts.
std::vector<LassoFit> lambda_path(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y, int n_lambdas = 100,
                                  double ratio = 1e-3, const LassoOptions& opt = {});

/// Largest violation of the stationarity conditions; zero at an exact optimum.
double kkt_violation(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y, const LassoFit& fit);

struct CvConfig {
    int folds = 5;
    int n_lambdas = 100;
    double ratio = 1e-3;
    std::uint64_t seed = 1;
    LassoOptions options;
    unsigned threads = 0;
};

struct CvPoint {
    double lambda = 0.0;
    double mse = 0.0;
    double se = 0.0;
};

struct CvResult {
    std::vector<CvPoint> curve;
    std::vector<int> fold_of;  // fold index per row
    int best_index = 0;
    int one_se_index = 0;
    double best_lambda = 0.0;
    double one_se_lambda = 0.0;
    /// Full-data fit at best_lambda.
    LassoFit fit;
};

/// K-fold cross-validation over the full-data grid. Folds come from a seeded
/// permutation; fold fits are independent and run in parallel.
CvResult cv_lasso(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y, const CvConfig& cfg = {});

/// Regression of one sector on the others: rows are (country, year) for
/// countries that report every sector, columns are the remaining sectors.
struct SectorDesign {
    Eigen::MatrixXd X;
    Eigen::VectorXd y;
    std::vector<std::string> names;
    std::vector<std::string> row_labels;
};
SectorDesign sector_design(const panel::PanelMatrix& completed, panel::Sector target = panel::Sector::GDP);

/// {lambda, intercept, beta[], selected[], names[], lambda_1se, cv_curve[{lambda, mse, se}]}.
std::string fit_json(const CvResult& cv, const std::vector<std::string>& names);
std::string fit_json(const LassoFit& fit, const std::vector<std::string>& names);

}  // namespace sparsetx::lasso
