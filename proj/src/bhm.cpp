#include "sparsetx/bhm.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "sparsetx/error.hpp"
#include "sparsetx/parallel.hpp"
#include "sparsetx/rng.hpp"

namespace sparsetx::bhm {

namespace {

double sample_sd(const Eigen::VectorXd& v) {
    if (v.size() < 2) return 0.0;
    return std::sqrt((v.array() - v.mean()).square().sum() / static_cast<double>(v.size() - 1));
}

/// Orthonormal basis of the sum-to-zero subspace of R^n (Helmert contrasts).
Eigen::MatrixXd helmert(Eigen::Index n) {
    Eigen::MatrixXd c = Eigen::MatrixXd::Zero(n, std::max<Eigen::Index>(n - 1, 0));
    for (Eigen::Index k = 1; k < n; ++k) {
        const double scale = 1.0 / std::sqrt(static_cast<double>(k * (k + 1)));
        c.col(k - 1).head(k).setConstant(scale);
        c(k, k - 1) = -static_cast<double>(k) * scale;
    }
    return c;
}

/// The linear model in reduced coordinates theta = [beta0, beta, g, d] with
/// gamma = Cg g and delta = Ct d.
struct Model {
    Eigen::MatrixXd A;
    Eigen::MatrixXd AtA;
    Eigen::VectorXd Aty;
    Eigen::VectorXd y;
    Eigen::MatrixXd report;  // reported coefficients = report * theta
    std::vector<std::string> factor_names;
    std::vector<std::string> names;  // reported, sigma last
    ResolvedPrior prior;
    std::vector<std::string> warnings;

    Eigen::Index n() const { return A.rows(); }
    Eigen::Index d() const { return A.cols(); }
};

Model build_model(const BhmData& data, const BhmSpec& spec) {
    data.validate();
    Model m;
    m.prior = resolve(data, spec);

    const auto n_groups = static_cast<Eigen::Index>(data.group_labels.size());
    const auto n_times = static_cast<Eigen::Index>(data.time_labels.size());
    const Eigen::MatrixXd cg = spec.sum_to_zero_gamma ? helmert(n_groups) : Eigen::MatrixXd::Identity(n_groups, n_groups);
    const Eigen::MatrixXd ct = spec.sum_to_zero_delta ? helmert(n_times) : Eigen::MatrixXd::Identity(n_times, n_times);
    const Eigen::Index p = data.p();
    const Eigen::Index ng = cg.cols();
    const Eigen::Index nt = ct.cols();
    const Eigen::Index d = 1 + p + ng + nt;

    m.y = data.y;
    m.A.resize(data.n(), d);
    for (Eigen::Index i = 0; i < data.n(); ++i) {
        m.A(i, 0) = 1.0;
        if (p > 0) m.A.row(i).segment(1, p) = data.X.row(i);
        if (ng > 0) m.A.row(i).segment(1 + p, ng) = cg.row(data.group[static_cast<std::size_t>(i)]);
        if (nt > 0) m.A.row(i).segment(1 + p + ng, nt) = ct.row(data.time[static_cast<std::size_t>(i)]);
    }
    m.AtA = m.A.transpose() * m.A;
    m.Aty = m.A.transpose() * m.y;

    const Eigen::Index reported_g = ng > 0 ? n_groups : 0;
    const Eigen::Index reported_t = nt > 0 ? n_times : 0;
    m.report = Eigen::MatrixXd::Zero(1 + p + reported_g + reported_t, d);
    m.report.topLeftCorner(1 + p, 1 + p).setIdentity();
    if (ng > 0) m.report.block(1 + p, 1 + p, n_groups, ng) = cg;
    if (nt > 0) m.report.block(1 + p + reported_g, 1 + p + ng, n_times, nt) = ct;

    m.names.push_back("beta0");
    m.factor_names.push_back("beta0");
    for (Eigen::Index k = 0; k < p; ++k) {
        m.names.push_back("beta" + std::to_string(k + 1));
        m.factor_names.push_back("beta" + std::to_string(k + 1));
    }
    if (ng > 0)
        for (const auto& g : data.group_labels) m.names.push_back("gamma[" + g + "]");
    if (nt > 0)
        for (const auto& t : data.time_labels) m.names.push_back("delta[" + t + "]");
    for (Eigen::Index k = 0; k < ng; ++k)
        m.factor_names.push_back(spec.sum_to_zero_gamma ? "gamma_contrast[" + std::to_string(k + 1) + "]"
                                                       : "gamma[" + data.group_labels[static_cast<std::size_t>(k)] + "]");
    for (Eigen::Index k = 0; k < nt; ++k)
        m.factor_names.push_back(spec.sum_to_zero_delta ? "delta_contrast[" + std::to_string(k + 1) + "]"
                                                       : "delta[" + data.time_labels[static_cast<std::size_t>(k)] + "]");
    m.names.push_back("sigma");

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(m.A);
    if (qr.rank() < d) {
        m.warnings.push_back("DesignRankDeficient: design rank " + std::to_string(qr.rank()) + " < " +
                             std::to_string(d) + " coefficients; priors regularize");
    }
    return m;
}

/// log p(sigma | rest) on omega = log sigma, up to a constant.
double log_sigma_density(double omega, double rss, double n, double scale) {
    const double s2 = std::exp(2.0 * omega);
    return -n * omega - 0.5 * rss / s2 - 0.5 * s2 / (scale * scale) + omega;
}

/// Univariate slice sampler with stepping out and shrinkage.
template <class F>
double slice_step(double x0, F&& logf, double width, Rng& rng) {
    const double level = logf(x0) - rng.exponential();
    double lo = x0 - width * rng.uniform();
    double hi = lo + width;
    int budget = 64;
    while (budget-- > 0 && logf(lo) > level) lo -= width;
    budget = 64;
    while (budget-- > 0 && logf(hi) > level) hi += width;
    for (int k = 0; k < 200; ++k) {
        const double x = rng.uniform(lo, hi);
        if (logf(x) > level) return x;
        if (x < x0) lo = x;
        else hi = x;
    }
    return x0;
}

Eigen::MatrixXd run_chain(const Model& m, const McmcConfig& cfg, int chain) {
    Rng rng(cfg.seed, stream_id({tag_of("chain"), static_cast<std::uint64_t>(chain)}));
    const Eigen::Index d = m.d();
    const auto n = static_cast<double>(m.n());
    const Eigen::VectorXd prior_prec = m.prior.sd.array().square().inverse();
    const Eigen::VectorXd prior_shift = m.prior.mean.cwiseProduct(prior_prec);
    const double width = std::clamp(1.0 / std::sqrt(std::max(n, 1.0)), 0.01, 1.0);

    double sigma = m.prior.fixed_sigma ? *m.prior.fixed_sigma : sample_sd(m.y) * std::exp(rng.uniform(-1.0, 1.0));
    if (!(sigma > 0.0)) sigma = m.prior.sigma_scale;

    const int total = cfg.warmup + cfg.samples * cfg.thin;
    Eigen::MatrixXd kept(cfg.samples, m.report.rows() + 1);
    Eigen::VectorXd theta(d);
    Eigen::VectorXd z(d);
    int row = 0;
    for (int it = 0; it < total; ++it) {
        const double prec = 1.0 / (sigma * sigma);
        Eigen::MatrixXd q = m.AtA * prec;
        q.diagonal() += prior_prec;
        const Eigen::VectorXd b = m.Aty * prec + prior_shift;
        Eigen::LLT<Eigen::MatrixXd> llt(q);
        if (llt.info() != Eigen::Success) throw Error(ErrorKind::NonFiniteLikelihood, "conditional precision is not positive definite");
        for (Eigen::Index k = 0; k < d; ++k) z(k) = rng.normal();
        theta = llt.solve(b) + llt.matrixU().solve(z);

        const double rss = (m.y - m.A * theta).squaredNorm();
        if (!std::isfinite(rss) || !theta.allFinite()) throw Error(ErrorKind::NonFiniteLikelihood, "non-finite draw");
        if (!m.prior.fixed_sigma) {
            const double scale = m.prior.sigma_scale;
            auto logf = [&](double w) { return log_sigma_density(w, rss, n, scale); };
            sigma = std::exp(slice_step(std::log(sigma), logf, width, rng));
        }

        if (it >= cfg.warmup && (it - cfg.warmup) % cfg.thin == 0) {
            kept.row(row).head(m.report.rows()) = (m.report * theta).transpose();
            kept(row, m.report.rows()) = sigma;
            ++row;
        }
    }
    return kept;
}

}  // namespace

void BhmData::validate() const {
    const auto n = static_cast<std::size_t>(y.size());
    if (n == 0) throw Error(ErrorKind::InsufficientData, "no observations");
    if (X.rows() != y.size() || group.size() != n || time.size() != n) {
        throw Error(ErrorKind::ShapeMismatch, "y, X, group and time lengths differ");
    }
    if (group_labels.empty() || time_labels.empty()) throw Error(ErrorKind::ShapeMismatch, "group and time labels required");
    if (!covariate_names.empty() && static_cast<Eigen::Index>(covariate_names.size()) != X.cols()) {
        throw Error(ErrorKind::ShapeMismatch, "covariate names do not match X columns");
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (group[i] < 0 || group[i] >= static_cast<int>(group_labels.size()) || time[i] < 0 ||
            time[i] >= static_cast<int>(time_labels.size())) {
            throw Error(ErrorKind::ShapeMismatch, "group or time index out of range");
        }
    }
    if (!y.allFinite() || !X.allFinite()) throw Error(ErrorKind::NonFiniteLikelihood, "non-finite response or covariate");
}

BhmData from_panel(const panel::PanelMatrix& y, const std::vector<panel::PanelMatrix>& covariates,
                   std::vector<std::string> covariate_names) {
    if (!y.fully_observed()) throw Error(ErrorKind::InvalidConfig, "response panel has missing cells; impute first");
    for (const auto& c : covariates) {
        if (c.entities() != y.entities() || c.years() != y.years()) {
            throw Error(ErrorKind::ShapeMismatch, "covariate panel layout differs from response");
        }
        if (!c.fully_observed()) throw Error(ErrorKind::InvalidConfig, "covariate panel has missing cells");
    }
    if (covariate_names.empty())
        for (std::size_t k = 0; k < covariates.size(); ++k) covariate_names.push_back("x" + std::to_string(k + 1));
    if (covariate_names.size() != covariates.size()) throw Error(ErrorKind::ShapeMismatch, "covariate names do not match panels");

    BhmData d;
    const Eigen::Index n = y.rows() * y.cols();
    d.y.resize(n);
    d.X.resize(n, static_cast<Eigen::Index>(covariates.size()));
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
        for (Eigen::Index t = 0; t < y.cols(); ++t, ++k) {
            d.y(k) = y.values()(i, t);
            for (std::size_t c = 0; c < covariates.size(); ++c) d.X(k, static_cast<Eigen::Index>(c)) = covariates[c].values()(i, t);
            d.group.push_back(static_cast<int>(i));
            d.time.push_back(static_cast<int>(t));
        }
    }
    for (const auto& e : y.entities()) d.group_labels.push_back(e.label());
    for (const int yr : y.years()) d.time_labels.push_back(std::to_string(yr));
    d.covariate_names = std::move(covariate_names);
    return d;
}

ResolvedPrior resolve(const BhmData& data, const BhmSpec& spec) {
    auto positive = [](const std::optional<double>& v, const char* what) {
        if (v && !(*v > 0.0 && std::isfinite(*v))) throw Error(ErrorKind::InvalidConfig, std::string(what) + " must be > 0");
    };
    positive(spec.prior_intercept_sd, "prior_intercept_sd");
    positive(spec.prior_beta_sd, "prior_beta_sd");
    positive(spec.prior_gamma_sd, "prior_gamma_sd");
    positive(spec.prior_delta_sd, "prior_delta_sd");
    positive(spec.prior_sigma_scale, "prior_sigma_scale");
    positive(spec.fixed_sigma, "fixed_sigma");

    double sd_y = sample_sd(data.y);
    if (!(sd_y > 0.0)) sd_y = std::max(std::abs(data.y.mean()), 1.0);
    const auto n_groups = static_cast<Eigen::Index>(data.group_labels.size());
    const auto n_times = static_cast<Eigen::Index>(data.time_labels.size());
    const Eigen::Index ng = spec.sum_to_zero_gamma ? n_groups - 1 : n_groups;
    const Eigen::Index nt = spec.sum_to_zero_delta ? n_times - 1 : n_times;
    const Eigen::Index p = data.p();

    ResolvedPrior r;
    r.mean = Eigen::VectorXd::Zero(1 + p + ng + nt);
    r.sd.resize(r.mean.size());
    r.mean(0) = spec.prior_intercept_mean;
    r.sd(0) = spec.prior_intercept_sd.value_or(10.0 * std::max(std::abs(data.y.mean()), sd_y));
    for (Eigen::Index k = 0; k < p; ++k) {
        r.mean(1 + k) = spec.prior_beta_mean;
        double sd_x = sample_sd(data.X.col(k));
        if (!(sd_x > 0.0)) sd_x = 1.0;
        r.sd(1 + k) = spec.prior_beta_sd.value_or(10.0 * sd_y / sd_x);
    }
    r.sd.segment(1 + p, ng).setConstant(spec.prior_gamma_sd.value_or(2.5 * sd_y));
    r.sd.segment(1 + p + ng, nt).setConstant(spec.prior_delta_sd.value_or(2.5 * sd_y));
    r.sigma_scale = spec.prior_sigma_scale.value_or(2.5 * sd_y);
    r.fixed_sigma = spec.fixed_sigma;
    return r;
}

int PosteriorSamples::index_of(const std::string& name) const {
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw Error(ErrorKind::InvalidConfig, "unknown parameter '" + name + "'");
    return static_cast<int>(it - names.begin());
}

Eigen::MatrixXd PosteriorSamples::param(int k) const {
    Eigen::MatrixXd out(n_kept(), n_chains());
    for (int c = 0; c < n_chains(); ++c) out.col(c) = chains[static_cast<std::size_t>(c)].col(k);
    return out;
}

PosteriorSamples fit_mcmc(const BhmData& data, const BhmSpec& spec, const McmcConfig& cfg) {
    if (cfg.chains < 1 || cfg.warmup < 0 || cfg.samples < 1 || cfg.thin < 1) {
        throw Error(ErrorKind::InvalidConfig, "chains >= 1, warmup >= 0, samples >= 1 and thin >= 1 required");
    }
    const Model m = build_model(data, spec);

    PosteriorSamples out;
    out.names = m.names;
    out.chains.resize(static_cast<std::size_t>(cfg.chains));
    parallel_for(
        out.chains.size(), [&](std::size_t c) { out.chains[c] = run_chain(m, cfg, static_cast<int>(c)); }, cfg.threads);
    out.info = SamplerInfo{"gibbs", cfg.chains, cfg.warmup, cfg.thin, cfg.samples, cfg.seed, m.warnings};
    return out;
}

ViApprox fit_vi(const BhmData& data, const BhmSpec& spec, const ViConfig& cfg) {
    if (cfg.iters < 2 || !(cfg.learning_rate > 0.0) || cfg.decay_iters < 1) {
        throw Error(ErrorKind::InvalidConfig, "iters >= 2, learning_rate > 0 and decay_iters >= 1 required");
    }
    const Model m = build_model(data, spec);
    const Eigen::Index d = m.d();
    const double n = static_cast<double>(m.n());
    const bool free_sigma = !m.prior.fixed_sigma;
    const Eigen::VectorXd prior_var = m.prior.sd.array().square();
    const Eigen::VectorXd ata_diag = m.AtA.diagonal();
    const double scale2 = m.prior.sigma_scale * m.prior.sigma_scale;
    constexpr double kHalfLog2PiE = 1.4189385332046727;  // 0.5 * log(2 pi e)
    const double log2pi = std::log(2.0 * std::numbers::pi);

    double sd_y = sample_sd(m.y);
    if (!(sd_y > 0.0)) sd_y = m.prior.sigma_scale;

    Eigen::VectorXd mu = m.prior.mean;
    mu(0) = m.y.mean();
    double mu_w = free_sigma ? std::log(sd_y) : std::log(*m.prior.fixed_sigma);
    double rho_w = std::log(0.5 / std::sqrt(std::max(n, 1.0)));
    const double inv_s2_init = std::exp(-2.0 * mu_w);
    Eigen::VectorXd rho = (-0.5 * (ata_diag * inv_s2_init + prior_var.cwiseInverse()).array().log()).matrix();

    auto expected_inv_s2 = [&](double mw, double rw) {
        return free_sigma ? std::exp(-2.0 * mw + 2.0 * std::exp(2.0 * rw)) : std::exp(-2.0 * mw);
    };
    // rss_mean is |y - A mv|^2.
    auto elbo = [&](double rss_mean, const Eigen::VectorXd& mv, const Eigen::VectorXd& rv, double mw, double rw) {
        const Eigen::VectorXd s2 = (2.0 * rv.array()).exp();
        const double erss = rss_mean + ata_diag.dot(s2);
        double v = -0.5 * n * log2pi - n * mw - 0.5 * erss * expected_inv_s2(mw, rw);
        v += (-0.5 * (log2pi + prior_var.array().log()) -
              ((mv - m.prior.mean).array().square() + s2.array()) / (2.0 * prior_var.array()))
                 .sum();
        v += rv.sum() + static_cast<double>(d) * kHalfLog2PiE;
        if (free_sigma) {
            const double sw2 = std::exp(2.0 * rw);
            v += std::log(2.0) - 0.5 * std::log(2.0 * std::numbers::pi * scale2) - std::exp(2.0 * mw + 2.0 * sw2) / (2.0 * scale2);
            v += mw + rw + kHalfLog2PiE;
        }
        return v;
    };

    Rng rng(cfg.seed, tag_of("vi"));
    ViApprox out;
    out.elbo_trace.reserve(static_cast<std::size_t>(cfg.iters));
    Eigen::VectorXd avg_mu = Eigen::VectorXd::Zero(d);
    Eigen::VectorXd avg_rho = Eigen::VectorXd::Zero(d);
    double avg_mw = 0.0;
    double avg_rw = 0.0;
    int averaged = 0;
    const int average_from = cfg.iters / 2;

    // Gaussian likelihood: every residual quantity comes from y'y, A'y and
    // A'A, so an iteration costs O(d^2) whatever the number of cells.
    const double yty = m.y.squaredNorm();
    auto rss_at = [&](const Eigen::VectorXd& v, const Eigen::VectorXd& ata_v) {
        return std::max(0.0, yty - 2.0 * v.dot(m.Aty) + v.dot(ata_v));
    };
    Eigen::VectorXd eps(d);
    Eigen::VectorXd ata_mu = m.AtA * mu;
    Eigen::VectorXd at_r = m.Aty - ata_mu;
    double rss_mean = rss_at(mu, ata_mu);
    for (int it = 0; it < cfg.iters; ++it) {
        const double lr = cfg.learning_rate / std::pow(1.0 + static_cast<double>(it) / cfg.decay_iters, 0.6);
        for (Eigen::Index k = 0; k < d; ++k) eps(k) = rng.normal();
        const double eps_w = free_sigma ? rng.normal() : 0.0;
        const Eigen::VectorXd s = rho.array().exp();
        const Eigen::VectorXd u = s.cwiseProduct(eps);
        const Eigen::VectorXd ata_u = m.AtA * u;
        const double omega = free_sigma ? mu_w + std::exp(rho_w) * eps_w : mu_w;
        const double inv_s2 = std::exp(-2.0 * omega);

        const double rss = std::max(0.0, rss_mean - 2.0 * at_r.dot(u) + u.dot(ata_u));
        const Eigen::VectorXd grad_theta =
            (at_r - ata_u) * inv_s2 - (mu + u - m.prior.mean).cwiseQuotient(prior_var);
        const Eigen::VectorXd curvature = ata_diag * expected_inv_s2(mu_w, rho_w) + prior_var.cwiseInverse();

        // The scale gradients subtract the gradient at the mean (same sigma
        // draw), which has zero expectation against eps and removes the
        // first-order noise term.
        const Eigen::VectorXd grad_at_mean = at_r * inv_s2 - (mu - m.prior.mean).cwiseQuotient(prior_var);
        mu += lr * grad_theta.cwiseQuotient(curvature);
        rho += 0.5 * lr * ((grad_theta - grad_at_mean).cwiseProduct(u).array() + 1.0).matrix();
        if (free_sigma) {
            auto grad_omega = [&](double w) { return -n + rss * std::exp(-2.0 * w) - std::exp(2.0 * w) / scale2 + 1.0; };
            const double grad_w = grad_omega(omega);
            const double sw = std::exp(rho_w);
            const double curv_w = std::max(2.0 * rss * inv_s2 + 2.0 * std::exp(2.0 * omega) / scale2, 2.0 * std::max(n, 1.0));
            const double control = grad_omega(mu_w);
            mu_w += lr * grad_w / curv_w;
            rho_w += 0.5 * lr * ((grad_w - control) * eps_w * sw + 1.0);
        }

        ata_mu.noalias() = m.AtA * mu;
        at_r = m.Aty - ata_mu;
        rss_mean = rss_at(mu, ata_mu);
        const double e = elbo(rss_mean, mu, rho, mu_w, rho_w);
        if (!std::isfinite(e) || !mu.allFinite() || !rho.allFinite()) {
            throw Error(ErrorKind::ElboDiverged, "ELBO became non-finite at iteration " + std::to_string(it + 1));
        }
        out.elbo_trace.push_back(e);
        if (it >= average_from) {
            avg_mu += mu;
            avg_rho += rho;
            avg_mw += mu_w;
            avg_rw += rho_w;
            ++averaged;
        }
    }
    avg_mu /= averaged;
    avg_rho /= averaged;
    avg_mw /= averaged;
    avg_rw /= averaged;

    out.names = m.names;
    out.factor_names = m.factor_names;
    out.factor_mean = avg_mu;
    out.factor_log_sd = avg_rho;
    if (free_sigma) {
        out.factor_names.push_back("log_sigma");
        out.factor_mean.conservativeResize(d + 1);
        out.factor_log_sd.conservativeResize(d + 1);
        out.factor_mean(d) = avg_mw;
        out.factor_log_sd(d) = avg_rw;
    }
    const Eigen::VectorXd var = (2.0 * avg_rho.array()).exp();
    const Eigen::Index r = m.report.rows();
    out.mean.resize(r + 1);
    out.sd.resize(r + 1);
    out.mean.head(r) = m.report * avg_mu;
    out.sd.head(r) = (m.report.array().square().matrix() * var).cwiseSqrt();
    if (free_sigma) {
        const double sw2 = std::exp(2.0 * avg_rw);
        out.mean(r) = std::exp(avg_mw + 0.5 * sw2);
        out.sd(r) = out.mean(r) * std::sqrt(std::expm1(sw2));
    } else {
        out.mean(r) = *m.prior.fixed_sigma;
        out.sd(r) = 0.0;
    }
    out.info = SamplerInfo{"vi", 0, 0, 1, cfg.iters, cfg.seed, m.warnings};
    return out;
}

}  // namespace sparsetx::bhm
