#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sparsetx/panel.hpp"

namespace sparsetx::bhm {

/// Observations for y = beta0 + X beta + gamma[group] + delta[time] + e.
/// Several observations may share a (group, time) cell.
struct BhmData {
    Eigen::VectorXd y;
    Eigen::MatrixXd X;  // n x p covariates, p may be 0
    std::vector<int> group;
    std::vector<int> time;
    std::vector<std::string> group_labels;
    std::vector<std::string> time_labels;
    std::vector<std::string> covariate_names;

    Eigen::Index n() const noexcept { return y.size(); }
    Eigen::Index p() const noexcept { return X.cols(); }
    void validate() const;
};

/// Stacks a fully observed panel (rows = groups, years = times) and optional
/// covariate panels of the same layout.
BhmData from_panel(const panel::PanelMatrix& y, const std::vector<panel::PanelMatrix>& covariates = {},
                   std::vector<std::string> covariate_names = {});

/// Unset scales are resolved from the data by resolve().
struct BhmSpec {
    double prior_intercept_mean = 0.0;
    std::optional<double> prior_intercept_sd;  // default 10 * max(|mean y|, sd y)
    double prior_beta_mean = 0.0;
    std::optional<double> prior_beta_sd;  // default 10 * sd y / sd x_k
    std::optional<double> prior_gamma_sd;  // default 2.5 * sd y
    std::optional<double> prior_delta_sd;  // default 2.5 * sd y
    std::optional<double> prior_sigma_scale;  // half-Normal scale, default 2.5 * sd y
    /// Holds sigma at this value instead of sampling it.
    std::optional<double> fixed_sigma;
    bool sum_to_zero_gamma = true;
    bool sum_to_zero_delta = true;
};

struct ResolvedPrior {
    Eigen::VectorXd mean;  // over the reduced coefficient vector
    Eigen::VectorXd sd;
    double sigma_scale = 1.0;
    std::optional<double> fixed_sigma;
};

struct SamplerInfo {
    std::string method;  // "gibbs" or "vi"
    int chains = 0;
    int warmup = 0;
    int thin = 1;
    int kept = 0;
    std::uint64_t seed = 0;
    std::vector<std::string> warnings;
};

struct PosteriorSamples {
    std::vector<std::string> names;
    /// One matrix per chain, kept draws x parameters.
    std::vector<Eigen::MatrixXd> chains;
    SamplerInfo info;

    int n_chains() const noexcept { return static_cast<int>(chains.size()); }
    int n_kept() const noexcept { return chains.empty() ? 0 : static_cast<int>(chains.front().rows()); }
    int index_of(const std::string& name) const;
    /// n_kept x n_chains draws of one parameter.
    Eigen::MatrixXd param(int k) const;
    Eigen::MatrixXd param(const std::string& name) const { return param(index_of(name)); }
};

struct McmcConfig {
    int chains = 4;
    int warmup = 1000;
    int samples = 1000;
    int thin = 1;
    std::uint64_t seed = 1;
    unsigned threads = 0;
};

/// Blocked Gibbs sampler: all regression coefficients and effects are drawn
/// jointly from their Gaussian full conditional, sigma by slice sampling on
/// log sigma. With sum-to-zero identification the effects live in an
/// orthonormal contrast basis, so every draw satisfies the constraint exactly.
PosteriorSamples fit_mcmc(const BhmData& data, const BhmSpec& spec = {}, const McmcConfig& cfg = {});

struct ViConfig {
    int iters = 3000;
    double learning_rate = 0.3;
    /// Step size at iteration t is learning_rate / (1 + t / decay_iters)^0.6.
    int decay_iters = 300;
    std::uint64_t seed = 1;
};

struct ViApprox {
    /// Reported parameters, as in PosteriorSamples.
    std::vector<std::string> names;
    Eigen::VectorXd mean;
    Eigen::VectorXd sd;
    /// Variational factors over the reduced coordinates, with log sigma last
    /// when sigma is free.
    std::vector<std::string> factor_names;
    Eigen::VectorXd factor_mean;
    Eigen::VectorXd factor_log_sd;
    std::vector<double> elbo_trace;
    SamplerInfo info;
};

/// Mean-field Gaussian VI with one-sample reparameterization gradients,
/// diagonally preconditioned steps and iterate averaging over the second half.
ViApprox fit_vi(const BhmData& data, const BhmSpec& spec = {}, const ViConfig& cfg = {});

/// Rank-normalized split R-hat (max of bulk and folded tail).
double rhat(const PosteriorSamples& s, int param);
double rhat(const Eigen::MatrixXd& draws);
/// Bulk effective sample size.
double ess(const PosteriorSamples& s, int param);
double ess(const Eigen::MatrixXd& draws);

struct SummaryRow {
    std::string name;
    double mean = 0.0;
    double sd = 0.0;
    double q05 = 0.0;
    double q50 = 0.0;
    double q95 = 0.0;
    std::optional<double> rhat;
    std::optional<double> ess;
};

/// Type-7 quantile (linear interpolation of order statistics) of sorted data.
double quantile_sorted(const std::vector<double>& sorted, double p);

std::vector<SummaryRow> posterior_summary(const PosteriorSamples& s);
std::vector<SummaryRow> posterior_summary(const ViApprox& a);

/// `param,mean,sd,q5,q50,q95,rhat,ess`.
std::string summary_csv(const std::vector<SummaryRow>& rows);
/// `chain,iter,param,value`.
std::string draws_csv(const PosteriorSamples& s);
/// `iter,elbo`.
std::string elbo_csv(const ViApprox& a);

/// Exposed for tests.
ResolvedPrior resolve(const BhmData& data, const BhmSpec& spec);

}  // namespace sparsetx::bhm
