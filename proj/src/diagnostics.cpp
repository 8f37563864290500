#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <boost/math/distributions/normal.hpp>

#include "sparsetx/bhm.hpp"
#include "sparsetx/error.hpp"
#include "sparsetx/io.hpp"

namespace sparsetx::bhm {

namespace {

/// Splits each chain into its first and second half (the middle draw of an
/// odd-length chain is dropped).
Eigen::MatrixXd split_chains(const Eigen::MatrixXd& draws) {
    const Eigen::Index n = draws.rows();
    const Eigen::Index half = n / 2;
    Eigen::MatrixXd out(half, 2 * draws.cols());
    for (Eigen::Index c = 0; c < draws.cols(); ++c) {
        out.col(2 * c) = draws.col(c).head(half);
        out.col(2 * c + 1) = draws.col(c).tail(half);
    }
    return out;
}

/// Normal scores of pooled average ranks, (r - 3/8) / (S + 1/4).
Eigen::MatrixXd rank_normalize(const Eigen::MatrixXd& x) {
    const Eigen::Index total = x.size();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(total));
    std::iota(order.begin(), order.end(), 0);
    const double* data = x.data();
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return data[a] < data[b]; });
    Eigen::MatrixXd z(x.rows(), x.cols());
    const boost::math::normal_distribution<double> unit;
    double* out = z.data();
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && data[order[j + 1]] == data[order[i]]) ++j;
        const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
        const double score = boost::math::quantile(unit, (rank - 0.375) / (static_cast<double>(total) + 0.25));
        for (std::size_t k = i; k <= j; ++k) out[order[k]] = score;
        i = j + 1;
    }
    return z;
}

double basic_rhat(const Eigen::MatrixXd& chains) {
    const auto n = static_cast<double>(chains.rows());
    const Eigen::RowVectorXd means = chains.colwise().mean();
    const double w = ((chains.rowwise() - means).array().square().colwise().sum() / (n - 1.0)).mean();
    const double b_over_n = chains.cols() > 1 ? (means.array() - means.mean()).square().sum() / static_cast<double>(chains.cols() - 1) : 0.0;
    if (w <= 0.0) return b_over_n <= 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
    const double var_plus = (n - 1.0) / n * w + b_over_n;
    return std::sqrt(var_plus / w);
}

double basic_ess(const Eigen::MatrixXd& chains) {
    const Eigen::Index n = chains.rows();
    const Eigen::Index m = chains.cols();
    const auto nd = static_cast<double>(n);
    const Eigen::RowVectorXd means = chains.colwise().mean();
    const Eigen::MatrixXd centered = chains.rowwise() - means;
    const double mean_var = (centered.array().square().colwise().sum() / (nd - 1.0)).mean();
    double var_plus = mean_var * (nd - 1.0) / nd;
    if (m > 1) var_plus += (means.array() - means.mean()).square().sum() / static_cast<double>(m - 1);

    auto acov_mean = [&](Eigen::Index lag) {
        double s = 0.0;
        for (Eigen::Index c = 0; c < m; ++c)
            s += centered.col(c).head(n - lag).dot(centered.col(c).tail(n - lag)) / nd;
        return s / static_cast<double>(m);
    };
    auto rho = [&](Eigen::Index lag) { return 1.0 - (mean_var - acov_mean(lag)) / var_plus; };

    // Geyer's initial positive sequence made monotone.
    std::vector<double> r(static_cast<std::size_t>(n), 0.0);
    double even = 1.0;
    double odd = rho(1);
    r[0] = even;
    r[1] = odd;
    Eigen::Index s = 1;
    while (s < n - 4 && even + odd > 0.0) {
        even = rho(s + 1);
        odd = rho(s + 2);
        if (even + odd >= 0.0) {
            r[static_cast<std::size_t>(s + 1)] = even;
            r[static_cast<std::size_t>(s + 2)] = odd;
        }
        s += 2;
    }
    const Eigen::Index max_s = s;
    if (even > 0.0) r[static_cast<std::size_t>(max_s + 1)] = even;
    for (Eigen::Index k = 1; k + 3 <= max_s; k += 2) {
        const auto u = static_cast<std::size_t>(k);
        if (r[u + 1] + r[u + 2] > r[u - 1] + r[u]) {
            r[u + 1] = 0.5 * (r[u - 1] + r[u]);
            r[u + 2] = r[u + 1];
        }
    }
    double tau = -1.0 + r[static_cast<std::size_t>(max_s + 1)];
    for (Eigen::Index k = 0; k < max_s; ++k) tau += 2.0 * r[static_cast<std::size_t>(k)];
    const double total = static_cast<double>(n * m);
    return std::min(total / tau, total * std::log10(total));
}

void require_draws(const Eigen::MatrixXd& draws) {
    if (draws.cols() < 2 || draws.rows() < 10) {
        throw Error(ErrorKind::InsufficientDraws, "diagnostics need >= 2 chains of >= 10 draws");
    }
}

bool constant(const Eigen::MatrixXd& draws) { return draws.maxCoeff() == draws.minCoeff(); }

}  // namespace

double rhat(const Eigen::MatrixXd& draws) {
    require_draws(draws);
    if (constant(draws)) return 1.0;
    const Eigen::MatrixXd split = split_chains(draws);
    const double bulk = basic_rhat(rank_normalize(split));
    std::vector<double> pooled(split.data(), split.data() + split.size());
    std::sort(pooled.begin(), pooled.end());
    const double median = quantile_sorted(pooled, 0.5);
    const double tail = basic_rhat(rank_normalize((split.array() - median).abs().matrix()));
    return std::max(bulk, tail);
}

double ess(const Eigen::MatrixXd& draws) {
    require_draws(draws);
    if (constant(draws)) return static_cast<double>(draws.size());
    return basic_ess(rank_normalize(split_chains(draws)));
}

double rhat(const PosteriorSamples& s, int param) { return rhat(s.param(param)); }
double ess(const PosteriorSamples& s, int param) { return ess(s.param(param)); }

double quantile_sorted(const std::vector<double>& sorted, double p) {
    if (sorted.empty()) throw Error(ErrorKind::InsufficientDraws, "quantile of empty sample");
    const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    if (lo + 1 >= sorted.size()) return sorted.back();
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

std::vector<SummaryRow> posterior_summary(const PosteriorSamples& s) {
    std::vector<SummaryRow> rows;
    const bool diagnose = s.n_chains() >= 2 && s.n_kept() >= 10;
    for (std::size_t k = 0; k < s.names.size(); ++k) {
        const Eigen::MatrixXd d = s.param(static_cast<int>(k));
        std::vector<double> v(d.data(), d.data() + d.size());
        std::sort(v.begin(), v.end());
        SummaryRow r;
        r.name = s.names[k];
        r.mean = d.mean();
        r.sd = d.size() > 1 ? std::sqrt((d.array() - r.mean).square().sum() / static_cast<double>(d.size() - 1)) : 0.0;
        r.q05 = quantile_sorted(v, 0.05);
        r.q50 = quantile_sorted(v, 0.5);
        r.q95 = quantile_sorted(v, 0.95);
        if (diagnose) {
            r.rhat = rhat(d);
            r.ess = ess(d);
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

std::vector<SummaryRow> posterior_summary(const ViApprox& a) {
    constexpr double z95 = 1.6448536269514722;
    std::vector<SummaryRow> rows;
    const std::size_t sigma = a.names.size() - 1;
    const bool free_sigma = a.factor_names.back() == "log_sigma";
    for (std::size_t k = 0; k < a.names.size(); ++k) {
        SummaryRow r;
        r.name = a.names[k];
        const auto i = static_cast<Eigen::Index>(k);
        r.mean = a.mean(i);
        r.sd = a.sd(i);
        if (k == sigma && free_sigma) {
            const double mw = a.factor_mean(a.factor_mean.size() - 1);
            const double sw = std::exp(a.factor_log_sd(a.factor_log_sd.size() - 1));
            r.q05 = std::exp(mw - z95 * sw);
            r.q50 = std::exp(mw);
            r.q95 = std::exp(mw + z95 * sw);
        } else {
            r.q05 = r.mean - z95 * r.sd;
            r.q50 = r.mean;
            r.q95 = r.mean + z95 * r.sd;
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

std::string summary_csv(const std::vector<SummaryRow>& rows) {
    std::ostringstream out;
    out << "param,mean,sd,q5,q50,q95,rhat,ess\n";
    for (const auto& r : rows) {
        out << io::csv_escape(r.name) << ',' << io::format_double(r.mean) << ',' << io::format_double(r.sd) << ','
            << io::format_double(r.q05) << ',' << io::format_double(r.q50) << ',' << io::format_double(r.q95) << ','
            << (r.rhat ? io::format_double(*r.rhat) : "") << ',' << (r.ess ? io::format_double(*r.ess) : "") << '\n';
    }
    return out.str();
}

std::string draws_csv(const PosteriorSamples& s) {
    std::string out = "chain,iter,param,value\n";
    std::vector<std::string> names;
    for (const auto& n : s.names) names.push_back(io::csv_escape(n));
    for (int c = 0; c < s.n_chains(); ++c) {
        const auto& m = s.chains[static_cast<std::size_t>(c)];
        const std::string chain = std::to_string(c + 1) + ',';
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            const std::string prefix = chain + std::to_string(i + 1) + ',';
            for (Eigen::Index k = 0; k < m.cols(); ++k) {
                out += prefix;
                out += names[static_cast<std::size_t>(k)];
                out += ',';
                out += io::format_double(m(i, k));
                out += '\n';
            }
        }
    }
    return out;
}

std::string elbo_csv(const ViApprox& a) {
    std::ostringstream out;
    out << "iter,elbo\n";
    for (std::size_t i = 0; i < a.elbo_trace.size(); ++i) out << i + 1 << ',' << io::format_double(a.elbo_trace[i]) << '\n';
    return out.str();
}

}  // namespace sparsetx::bhm
