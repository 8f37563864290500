#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "sparsetx/forest.hpp"
#include "sparsetx/panel.hpp"

namespace sparsetx::impute {

enum class Method { SoftImpute, Mean, LinearInterp, Chained };

std::string to_string(Method m);
Method parse_method(const std::string& name);

enum class Centering { None, Column };

struct SoftImputeConfig {
    /// Absolute nuclear-norm penalty; ignored when lambda_as_fraction is set.
    double lambda = 0.0;
    int max_iters = 1000;
    /// Iteration ends once the relative change in observed-cell MAE and the
    /// relative squared change of the filled matrix both fall below tol.
    double tol = 1e-5;
    /// Penalty as a fraction of the largest singular value of the centered,
    /// zero-filled input.
    std::optional<double> lambda_as_fraction = 0.02;
    /// After convergence, refit the retained singular values by least squares
    /// on the observed cells and refill the missing cells from the refit.
    bool debias = false;
    /// Column centering on observed means before the zero fill. Estimated
    /// means add a full-rank perturbation, so the default leaves data as is.
    Centering centering = Centering::None;
};

struct TraceRow {
    int iter = 0;
    double observed_mae = 0.0;
    int rank = 0;
};

struct ImputationResult {
    panel::PanelMatrix completed;
    int iterations = 0;
    std::vector<TraceRow> trace;
    Method method = Method::Mean;
    bool converged = true;
    /// SoftImpute only.
    double lambda = 0.0;
    double initial_max_singular_value = 0.0;
    /// Refitted singular values when SoftImputeConfig::debias is set.
    Eigen::VectorXd debiased_singular_values;
    /// Chained only: mean squared training error on observed rows, per sweep.
    std::vector<double> sweep_loss;
};

/// sign(x) * max(|x| - t, 0).
double soft_threshold(double x, double t) noexcept;

/// Nuclear-norm regularized completion by iterated SVD soft-thresholding with
/// observed cells restored after every step. Missing cells start at zero, or at
/// the column's observed mean under Centering::Column.
ImputationResult soft_impute(const panel::PanelMatrix& m, const SoftImputeConfig& cfg = {});

/// Each missing cell takes its row's observed mean.
ImputationResult mean_impute(const panel::PanelMatrix& m);

/// Straight-line fill between observed neighbours along the year axis; leading
/// and trailing gaps copy the nearest observed value.
ImputationResult linear_interpolate(const panel::PanelMatrix& m);

struct RowMeanLearner {};
struct ForestLearner {
    ForestConfig config;
};
using Learner = std::variant<ForestLearner, RowMeanLearner>;

/// Chained-equation imputation over year columns: start from the row-mean fill,
/// then repeatedly regress each incomplete column on all other columns using
/// its observed rows and re-predict its missing rows. Columns are visited from
/// fewest to most missing cells.
ImputationResult chained_impute(const panel::PanelMatrix& m, const Learner& learner, int sweeps, double tol = 1e-8);

/// Trace as `iter,observed_mae,rank`.
std::string trace_csv(const ImputationResult& r);

}  // namespace sparsetx::impute
