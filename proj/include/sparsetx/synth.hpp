#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sparsetx/panel.hpp"

namespace sparsetx::synth {

/// Logistic drift of one country's sector shares. With the normalized logistic
/// L(τ) rising from 0 at the first year to 1 at the last year:
///   agriculture(τ) = agriculture0 - agriculture_drop * L(τ)
///   services(τ)    = services0    + services_rise    * L(τ)
///   industry(τ)    = 1 - agriculture - services
struct ShareTrend {
    double agriculture0 = 0.665;
    double services0 = 0.125;
    double agriculture_drop = 0.53;
    double services_rise = 0.35;
    double steepness = 6.0;
    double midpoint = 0.5;  // position on the normalized time axis [0, 1]
};

struct SynthConfig {
    int n_countries = 5;
    int year_start = 1995;
    int year_end = 2020;
    int rank = 2;
    double noise_sd = 0.01;
    double share_noise_sd = 0.01;
    /// Per-country trends; empty means calibrated defaults jittered per country.
    std::vector<ShareTrend> share_trend;
    std::uint64_t seed = 7;

    int n_years() const noexcept { return year_end - year_start + 1; }
    /// Low-rank panel rows: one per (country, sector) pair.
    int n_entities() const noexcept { return 4 * n_countries; }
    /// Throws InvalidConfig.
    void validate() const;
};

enum class Mechanism { MCAR, BlockByCountry, TailYears };

std::string to_string(Mechanism m);
Mechanism parse_mechanism(const std::string& name);

struct MissingnessSpec {
    Mechanism mechanism = Mechanism::MCAR;
    double fraction = 0.0;
    std::uint64_t seed = 0;
};

/// Synthetic country codes "A".."Z", "AA", "AB"...
std::string country_code(int index);

std::vector<panel::ShareSeries> gen_sector_shares(const SynthConfig& config);

struct LowRankPanel {
    panel::PanelMatrix panel;  // fully observed U V^T + E
    Eigen::MatrixXd U;         // N x r
    Eigen::MatrixXd V;         // T x r
    Eigen::MatrixXd signal;    // U V^T
};

LowRankPanel gen_lowrank_panel(const SynthConfig& config);

/// Sector value added (share x GDP) plus GDP, current-US$-like magnitudes.
panel::PanelMatrix gen_value_added_panel(const SynthConfig& config, const std::vector<panel::ShareSeries>& shares);

/// Standard-normal covariate on the same layout as `like` (fully observed).
panel::PanelMatrix gen_standard_normal_panel(const panel::PanelMatrix& like, std::uint64_t seed);

struct HierarchicalTruth {
    double beta0 = 1.0;
    double beta1 = 2.0;
    double gamma_sd = 0.5;
    double delta_sd = 0.3;
    double sigma = 0.5;
};

struct HierarchicalPanel {
    panel::PanelMatrix y;
    panel::PanelMatrix x;  // one standard-normal covariate
    Eigen::VectorXd gamma;  // per entity, sums to zero
    Eigen::VectorXd delta;  // per year, sums to zero
};

/// y_it = beta0 + beta1 x_it + gamma_i + delta_t + N(0, sigma^2).
HierarchicalPanel gen_hierarchical_panel(const SynthConfig& config, const HierarchicalTruth& truth = {});

/// Returns a copy of `m` with additional cells masked so that the overall
/// missing fraction lands within 0.02 of spec.fraction. Throws InfeasibleFraction.
panel::PanelMatrix inject_missing(const panel::PanelMatrix& m, const MissingnessSpec& spec);

}  // namespace sparsetx::synth
