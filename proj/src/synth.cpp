#include "sparsetx/synth.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "sparsetx/error.hpp"
#include "sparsetx/rng.hpp"

namespace sparsetx::synth {

using panel::Entity;
using panel::Mask;
using panel::PanelMatrix;
using panel::Sector;
using panel::ShareSeries;
using panel::ShareTriple;

namespace {

constexpr double kShareFloor = 0.01;
constexpr double kShareCeil = 0.98;
constexpr double kFractionTolerance = 0.02;
constexpr Sector kSectors[] = {Sector::Agriculture, Sector::Industry, Sector::Services, Sector::GDP};

double normalized_logistic(double tau, double steepness, double midpoint) {
    if (steepness <= 0.0) return tau;
    const auto f = [&](double x) { return 1.0 / (1.0 + std::exp(-steepness * (x - midpoint))); };
    const double lo = f(0.0);
    const double hi = f(1.0);
    return (f(tau) - lo) / (hi - lo);
}

double truncated_normal(Rng& rng, double sd) {
    if (sd <= 0.0) return 0.0;
    for (;;) {
        const double z = rng.normal();
        if (std::abs(z) <= 2.5) return sd * z;
    }
}

std::vector<int> year_range(const SynthConfig& c) {
    std::vector<int> years(static_cast<std::size_t>(c.n_years()));
    std::iota(years.begin(), years.end(), c.year_start);
    return years;
}

std::vector<Entity> country_sector_entities(int n_countries) {
    std::vector<Entity> entities;
    for (int c = 0; c < n_countries; ++c) {
        for (const auto s : kSectors) entities.push_back(Entity{country_code(c), s});
    }
    return entities;
}

}  // namespace

void SynthConfig::validate() const {
    if (n_countries < 1) throw Error(ErrorKind::InvalidConfig, "n_countries must be >= 1");
    if (year_end < year_start) throw Error(ErrorKind::InvalidConfig, "empty year range");
    if (rank < 1 || rank > std::min(n_entities(), n_years())) {
        throw Error(ErrorKind::InvalidConfig, "rank must be in [1, min(N, T)]");
    }
    if (!(noise_sd >= 0.0) || !(share_noise_sd >= 0.0)) throw Error(ErrorKind::InvalidConfig, "noise sd must be >= 0");
    if (!share_trend.empty() && static_cast<int>(share_trend.size()) != n_countries) {
        throw Error(ErrorKind::InvalidConfig, "share_trend must have one entry per country");
    }
}

std::string to_string(Mechanism m) {
    switch (m) {
        case Mechanism::MCAR: return "MCAR";
        case Mechanism::BlockByCountry: return "BlockByCountry";
        case Mechanism::TailYears: return "TailYears";
    }
    return "MCAR";
}

Mechanism parse_mechanism(const std::string& name) {
    if (name == "MCAR" || name == "mcar") return Mechanism::MCAR;
    if (name == "BlockByCountry" || name == "block") return Mechanism::BlockByCountry;
    if (name == "TailYears" || name == "tail") return Mechanism::TailYears;
    throw Error(ErrorKind::InvalidConfig, "unknown missingness mechanism '" + name + "'");
}

std::string country_code(int index) {
    std::string code;
    int k = index;
    do {
        code.insert(code.begin(), static_cast<char>('A' + k % 26));
        k = k / 26 - 1;
    } while (k >= 0);
    return code;
}

std::vector<ShareSeries> gen_sector_shares(const SynthConfig& config) {
    config.validate();
    Rng rng(config.seed, tag_of("shares"));
    const auto years = year_range(config);
    const int t_count = config.n_years();

    std::vector<ShareSeries> out;
    for (int c = 0; c < config.n_countries; ++c) {
        Rng crng = rng.derive(static_cast<std::uint64_t>(c));
        ShareTrend trend;
        if (!config.share_trend.empty()) {
            trend = config.share_trend[static_cast<std::size_t>(c)];
        } else {
            trend.steepness *= crng.uniform(0.85, 1.15);
            trend.midpoint += crng.uniform(-0.04, 0.04);
            trend.agriculture_drop *= crng.uniform(0.94, 1.06);
            trend.services_rise *= crng.uniform(0.94, 1.06);
        }

        ShareSeries series{country_code(c), years, {}};
        for (int k = 0; k < t_count; ++k) {
            const double tau = t_count > 1 ? static_cast<double>(k) / (t_count - 1) : 0.0;
            const double l = normalized_logistic(tau, trend.steepness, trend.midpoint);
            double a = trend.agriculture0 - trend.agriculture_drop * l;
            double s = trend.services0 + trend.services_rise * l;
            double i = 1.0 - a - s;
            if (config.share_noise_sd > 0.0) {
                a += truncated_normal(crng, config.share_noise_sd);
                i += truncated_normal(crng, config.share_noise_sd);
                s += truncated_normal(crng, config.share_noise_sd);
                a = std::clamp(a, kShareFloor, kShareCeil);
                i = std::clamp(i, kShareFloor, kShareCeil);
                s = std::clamp(s, kShareFloor, kShareCeil);
                const double total = a + i + s;
                a /= total;
                i /= total;
                s /= total;
            }
            // Industry absorbs the rounding residual so the triple sums to one.
            series.shares.push_back(ShareTriple{a, 1.0 - a - s, s});
        }
        out.push_back(std::move(series));
    }
    return out;
}

LowRankPanel gen_lowrank_panel(const SynthConfig& config) {
    config.validate();
    Rng rng(config.seed, tag_of("lowrank"));
    const Eigen::Index n = config.n_entities();
    const Eigen::Index t = config.n_years();
    const Eigen::Index r = config.rank;

    Eigen::MatrixXd U(n, r);
    Eigen::MatrixXd V(t, r);
    for (Eigen::Index j = 0; j < r; ++j)
        for (Eigen::Index i = 0; i < n; ++i) U(i, j) = rng.normal();
    for (Eigen::Index j = 0; j < r; ++j)
        for (Eigen::Index i = 0; i < t; ++i) V(i, j) = rng.normal();
    Eigen::MatrixXd signal = U * V.transpose();
    Eigen::MatrixXd values = signal;
    for (Eigen::Index j = 0; j < t; ++j)
        for (Eigen::Index i = 0; i < n; ++i) values(i, j) += config.noise_sd * rng.normal();

    PanelMatrix p(country_sector_entities(config.n_countries), year_range(config), std::move(values),
                  Mask::Constant(n, t, true));
    return LowRankPanel{std::move(p), std::move(U), std::move(V), std::move(signal)};
}

HierarchicalPanel gen_hierarchical_panel(const SynthConfig& config, const HierarchicalTruth& truth) {
    config.validate();
    Rng rng(config.seed, tag_of("hierarchical"));
    const Eigen::Index n = config.n_entities();
    const Eigen::Index t = config.n_years();
    Eigen::VectorXd gamma(n);
    Eigen::VectorXd delta(t);
    for (Eigen::Index i = 0; i < n; ++i) gamma(i) = rng.normal(0.0, truth.gamma_sd);
    for (Eigen::Index j = 0; j < t; ++j) delta(j) = rng.normal(0.0, truth.delta_sd);
    gamma.array() -= gamma.mean();
    delta.array() -= delta.mean();

    Eigen::MatrixXd x(n, t);
    Eigen::MatrixXd y(n, t);
    for (Eigen::Index j = 0; j < t; ++j) {
        for (Eigen::Index i = 0; i < n; ++i) {
            x(i, j) = rng.normal();
            y(i, j) = truth.beta0 + truth.beta1 * x(i, j) + gamma(i) + delta(j) + rng.normal(0.0, truth.sigma);
        }
    }
    const auto entities = country_sector_entities(config.n_countries);
    const auto years = year_range(config);
    const Mask all = Mask::Constant(n, t, true);
    return HierarchicalPanel{PanelMatrix(entities, years, std::move(y), all), PanelMatrix(entities, years, std::move(x), all),
                             std::move(gamma), std::move(delta)};
}

PanelMatrix gen_value_added_panel(const SynthConfig& config, const std::vector<ShareSeries>& shares) {
    config.validate();
    if (static_cast<int>(shares.size()) != config.n_countries) {
        throw Error(ErrorKind::ShapeMismatch, "share panel does not match n_countries");
    }
    Rng rng(config.seed, tag_of("gdp"));
    const Eigen::Index t = config.n_years();
    const auto entities = country_sector_entities(config.n_countries);
    Eigen::MatrixXd values(static_cast<Eigen::Index>(entities.size()), t);

    for (int c = 0; c < config.n_countries; ++c) {
        Rng crng = rng.derive(static_cast<std::uint64_t>(c));
        const double log_gdp0 = std::log(2.0e10) + crng.normal(0.0, 0.8);
        const double growth = crng.uniform(0.02, 0.06);
        double shock = 0.0;
        const auto& series = shares[static_cast<std::size_t>(c)];
        if (static_cast<Eigen::Index>(series.shares.size()) != t) {
            throw Error(ErrorKind::ShapeMismatch, "share series length does not match year range");
        }
        for (Eigen::Index k = 0; k < t; ++k) {
            shock = 0.6 * shock + crng.normal(0.0, 0.03);
            const double gdp = std::exp(log_gdp0 + growth * static_cast<double>(k) + shock);
            const auto& sh = series.shares[static_cast<std::size_t>(k)];
            const Eigen::Index base = 4 * c;
            values(base + 0, k) = sh.agriculture * gdp;
            values(base + 1, k) = sh.industry * gdp;
            values(base + 2, k) = sh.services * gdp;
            values(base + 3, k) = gdp;
        }
    }
    return PanelMatrix(entities, year_range(config), std::move(values),
                       Mask::Constant(static_cast<Eigen::Index>(entities.size()), t, true));
}

PanelMatrix gen_standard_normal_panel(const PanelMatrix& like, std::uint64_t seed) {
    Rng rng(seed, tag_of("covariate"));
    Eigen::MatrixXd values(like.rows(), like.cols());
    for (Eigen::Index i = 0; i < like.rows(); ++i)
        for (Eigen::Index t = 0; t < like.cols(); ++t) values(i, t) = rng.normal();
    return like.completed_with(std::move(values));
}

PanelMatrix inject_missing(const PanelMatrix& m, const MissingnessSpec& spec) {
    if (!(spec.fraction >= 0.0 && spec.fraction < 1.0)) {
        throw Error(ErrorKind::InvalidConfig, "missing fraction must be in [0, 1)");
    }
    const Eigen::Index n = m.rows();
    const Eigen::Index t = m.cols();
    const Eigen::Index cells = n * t;
    if (cells == 0) throw Error(ErrorKind::EmptyMatrix, "panel has no cells");
    if (spec.fraction == 0.0) return m;

    const Eigen::Index existing = cells - m.observed_count();
    const auto target = static_cast<Eigen::Index>(std::llround(spec.fraction * static_cast<double>(cells)));
    if (static_cast<double>(existing) / cells > spec.fraction + kFractionTolerance) {
        throw Error(ErrorKind::InfeasibleFraction, "panel already more sparse than requested");
    }
    const Eigen::Index needed = std::max<Eigen::Index>(0, target - existing);

    Rng rng(spec.seed, tag_of(to_string(spec.mechanism).c_str()));
    Mask mask = m.mask();
    Eigen::Index removed = 0;

    switch (spec.mechanism) {
        case Mechanism::MCAR: {
            std::vector<Eigen::Index> cand;
            for (Eigen::Index j = 0; j < t; ++j)
                for (Eigen::Index i = 0; i < n; ++i)
                    if (mask(i, j)) cand.push_back(j * n + i);
            const auto take = std::min<std::size_t>(static_cast<std::size_t>(needed), cand.size());
            for (std::size_t k = 0; k < take; ++k) {
                const auto pick = k + rng.index(cand.size() - k);
                std::swap(cand[k], cand[pick]);
                mask(cand[k] % n, cand[k] / n) = false;
            }
            removed = static_cast<Eigen::Index>(take);
            break;
        }
        case Mechanism::BlockByCountry: {
            std::map<std::string, std::vector<Eigen::Index>> rows_of;
            for (Eigen::Index i = 0; i < n; ++i) rows_of[m.entities()[static_cast<std::size_t>(i)].country].push_back(i);
            std::vector<std::vector<Eigen::Index>> countries;
            for (auto& [name, rows] : rows_of) countries.push_back(rows);
            const Eigen::Index block = std::max<Eigen::Index>(1, static_cast<Eigen::Index>(std::lround(0.25 * t)));
            Eigen::Index remaining_observed = mask.count();
            for (long attempt = 0; removed < needed && remaining_observed > 0 && attempt < 100000; ++attempt) {
                const auto& rows = countries[rng.index(countries.size())];
                const auto start = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(t - block + 1)));
                for (Eigen::Index j = start; j < start + block && removed < needed; ++j) {
                    for (const auto i : rows) {
                        if (mask(i, j)) {
                            mask(i, j) = false;
                            ++removed;
                            --remaining_observed;
                        }
                    }
                }
            }
            break;
        }
        case Mechanism::TailYears: {
            const auto k = static_cast<Eigen::Index>(std::ceil(spec.fraction * static_cast<double>(t)));
            const auto wanted = static_cast<Eigen::Index>(
                std::llround(static_cast<double>(needed) / static_cast<double>(std::max<Eigen::Index>(k, 1))));
            std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
            std::iota(order.begin(), order.end(), 0);
            for (std::size_t a = 0; a + 1 < order.size(); ++a) std::swap(order[a], order[a + rng.index(order.size() - a)]);
            const auto affected = std::min<Eigen::Index>(wanted, n);
            for (Eigen::Index e = 0; e < affected; ++e) {
                const auto i = order[static_cast<std::size_t>(e)];
                for (Eigen::Index j = t - k; j < t; ++j) {
                    if (mask(i, j)) {
                        mask(i, j) = false;
                        ++removed;
                    }
                }
            }
            break;
        }
    }

    const double achieved = static_cast<double>(existing + removed) / static_cast<double>(cells);
    if (std::abs(achieved - spec.fraction) > kFractionTolerance) {
        throw Error(ErrorKind::InfeasibleFraction, to_string(spec.mechanism) + " reached " + std::to_string(achieved) +
                                                       " for requested " + std::to_string(spec.fraction));
    }
    return m.with_cells(m.values(), std::move(mask));
}

}  // namespace sparsetx::synth
