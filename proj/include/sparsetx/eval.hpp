#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sparsetx/bhm.hpp"
#include "sparsetx/impute.hpp"
#include "sparsetx/panel.hpp"
#include "sparsetx/synth.hpp"

namespace sparsetx::eval {

struct MetricSet {
    double rmse = 0.0;
    double mae = 0.0;
    double mse = 0.0;
    std::optional<double> r2;  // empty when the truth is constant
    std::optional<double> bic;
};

/// Throws LengthMismatch on differing or empty inputs.
MetricSet metrics(const Eigen::VectorXd& y_true, const Eigen::VectorXd& y_pred);
/// 1 - SS_res / SS_tot; throws ConstantTruth.
double r2(const Eigen::VectorXd& y_true, const Eigen::VectorXd& y_pred);
/// n_params ln(n) - 2 loglik.
double bic(double loglik, double n, double n_params);

/// Gaussian log-likelihood of the hierarchical model at the posterior means
/// in `summary`. The BIC counts location parameters only:
/// 1 + p + (N - 1) + (T - 1).
double bhm_loglik(const bhm::BhmData& data, const std::vector<bhm::SummaryRow>& summary);
double bhm_bic(const bhm::BhmData& data, const std::vector<bhm::SummaryRow>& summary);

struct MethodOptions {
    impute::SoftImputeConfig soft;
    impute::ForestConfig forest;
    int chained_sweeps = 3;
};

/// Runs one imputer; the forest seed is replaced by `seed`.
impute::ImputationResult run_imputer(const panel::PanelMatrix& m, impute::Method method, const MethodOptions& opt,
                                     std::uint64_t seed);

struct SweepRow {
    synth::Mechanism mechanism = synth::Mechanism::MCAR;
    double fraction = 0.0;
    impute::Method method = impute::Method::Mean;
    int rep = 0;
    std::uint64_t mask_seed = 0;
    /// Empty when the imputer or the mask injection failed.
    std::optional<MetricSet> metrics;
    std::string error;
};

/// Masks `truth` per spec once per replication, runs every method on the same
/// masked panel and scores only the newly masked cells. Failures are recorded
/// on the row.
std::vector<SweepRow> compare_imputers(const panel::PanelMatrix& truth, const synth::MissingnessSpec& spec,
                                       const std::vector<impute::Method>& methods, const MethodOptions& opt, int reps);

struct SweepConfig {
    std::vector<synth::Mechanism> mechanisms{synth::Mechanism::MCAR};
    std::vector<double> fractions{0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
    std::vector<impute::Method> methods{impute::Method::SoftImpute, impute::Method::Mean};
    int reps = 10;
    std::uint64_t seed = 1;
    MethodOptions options;
    unsigned threads = 0;
};

/// Full factorial over mechanisms x fractions; rows ordered by mechanism,
/// fraction, rep, method.
std::vector<SweepRow> missingness_sweep(const panel::PanelMatrix& truth, const SweepConfig& cfg);

/// `mechanism,fraction,method,rep,rmse,mae,r2`; failed rows leave metrics empty.
std::string sweep_csv(const std::vector<SweepRow>& rows);

struct SweepCell {
    synth::Mechanism mechanism;
    double fraction;
    impute::Method method;
    double median_rmse;
    int ok;
    int failed;
};
std::vector<SweepCell> summarize_sweep(const std::vector<SweepRow>& rows);

struct OutputFile {
    std::string name;
    std::string contents;
};

struct StageRecord {
    std::string stage;
    bool present = false;
    std::string inputs_sha256;
    std::uint64_t seed = 0;
    double wall_time_s = 0.0;
    std::vector<OutputFile> outputs;
    /// Free-form stage facts for the manifest (counts, chosen lambda, ...).
    std::vector<std::pair<std::string, std::string>> facts;
};

struct Report {
    std::string pipeline;
    std::uint64_t seed = 0;
    /// Resolved configuration serialized as JSON text.
    std::string config_json = "{}";
    std::vector<StageRecord> stages;
};

/// Writes every present stage's outputs and `manifest.json` into `dir`.
void pipeline_report(const std::filesystem::path& dir, const Report& report);
std::string manifest_json(const Report& report);

}  // namespace sparsetx::eval
