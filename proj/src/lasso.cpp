#include "sparsetx/lasso.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include <json.hpp>

#include "sparsetx/error.hpp"
#include "sparsetx/parallel.hpp"
#include "sparsetx/rng.hpp"

namespace sparsetx::lasso {

namespace {

double response_scale(const Eigen::VectorXd& y) {
    if (y.size() < 2) return 1.0;
    const double sd = std::sqrt((y.array() - y.mean()).square().mean());
    return sd > 0.0 ? sd : 1.0;
}

double objective(const Eigen::VectorXd& r, const Eigen::VectorXd& beta, double lambda) {
    return 0.5 * r.squaredNorm() / static_cast<double>(r.size()) + lambda * beta.lpNorm<1>();
}

void check_inputs(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y) {
    if (Z.rows() != y.size()) throw Error(ErrorKind::ShapeMismatch, "Z rows and y length differ");
    if (y.size() == 0) throw Error(ErrorKind::TooFewRows, "no rows");
    if (!Z.allFinite() || !y.allFinite()) throw Error(ErrorKind::InvalidConfig, "non-finite design or response");
}

nlohmann::json number(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

nlohmann::json fit_object(const LassoFit& fit, const std::vector<std::string>& names) {
    nlohmann::json j;
    j["lambda"] = number(fit.lambda);
    j["intercept"] = number(fit.intercept);
    j["beta"] = nlohmann::json::array();
    for (Eigen::Index k = 0; k < fit.beta.size(); ++k) j["beta"].push_back(number(fit.beta(k)));
    j["selected"] = fit.selected;
    j["names"] = names;
    j["converged"] = fit.converged;
    j["cycles"] = fit.cycles;
    return j;
}

}  // namespace

Standardized standardize(const Eigen::MatrixXd& X) {
    if (X.rows() == 0 || X.cols() == 0) throw Error(ErrorKind::AllConstantDesign, "empty design");
    if (!X.allFinite()) throw Error(ErrorKind::InvalidConfig, "non-finite design");
    Standardized out;
    const auto n = static_cast<double>(X.rows());
    out.stats.mean = X.colwise().mean().transpose();
    out.stats.sd.resize(X.cols());
    out.stats.constant.assign(static_cast<std::size_t>(X.cols()), false);
    out.Z.resize(X.rows(), X.cols());
    int constant = 0;
    for (Eigen::Index k = 0; k < X.cols(); ++k) {
        const Eigen::ArrayXd c = X.col(k).array() - out.stats.mean(k);
        const double sd = std::sqrt(c.square().sum() / n);
        const double level = std::max(std::abs(out.stats.mean(k)), 1.0);
        if (!(sd > 1e-12 * level)) {
            out.stats.sd(k) = 0.0;
            out.stats.constant[static_cast<std::size_t>(k)] = true;
            out.Z.col(k).setZero();
            out.warnings.push_back("column " + std::to_string(k) + " is constant and excluded");
            ++constant;
        } else {
            out.stats.sd(k) = sd;
            out.Z.col(k) = (c / sd).matrix();
        }
    }
    if (constant == X.cols()) throw Error(ErrorKind::AllConstantDesign, "every design column is constant");
    return out;
}

Eigen::MatrixXd apply_standardization(const Standardization& s, const Eigen::MatrixXd& X) {
    if (X.cols() != s.mean.size()) throw Error(ErrorKind::ShapeMismatch, "column count differs from standardization");
    Eigen::MatrixXd Z(X.rows(), X.cols());
    for (Eigen::Index k = 0; k < X.cols(); ++k) {
        if (s.constant[static_cast<std::size_t>(k)]) Z.col(k).setZero();
        else Z.col(k) = (X.col(k).array() - s.mean(k)) / s.sd(k);
    }
    return Z;
}

double lambda_max(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y) {
    check_inputs(Z, y);
    const Eigen::VectorXd centered = y.array() - y.mean();
    return (Z.transpose() * centered).cwiseAbs().maxCoeff() / static_cast<double>(y.size());
}

LassoFit fit_lasso(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y, double lambda, const LassoOptions& opt,
                   const LassoFit* warm) {
    check_inputs(Z, y);
    if (!(lambda >= 0.0)) throw Error(ErrorKind::InvalidConfig, "lambda must be >= 0");
    if (opt.max_iters < 1 || !(opt.tol > 0.0)) throw Error(ErrorKind::InvalidConfig, "max_iters >= 1 and tol > 0 required");
    const Eigen::Index p = Z.cols();
    const auto n = static_cast<double>(Z.rows());
    // Coefficients carry response units, so the change tolerance is relative
    // to the response scale.
    const double tol = opt.tol * response_scale(y);

    LassoFit fit;
    fit.lambda = lambda;
    fit.beta = Eigen::VectorXd::Zero(p);
    fit.intercept = y.mean();
    if (warm && warm->beta.size() == p) {
        fit.beta = warm->beta;
        fit.intercept = warm->intercept;
    }
    // At or above lambda_max the null model satisfies KKT exactly; coordinate
    // updates would only add rounding-level coefficients.
    if (lambda >= lambda_max(Z, y)) {
        fit.beta.setZero();
        fit.intercept = y.mean();
        fit.objective_trace.push_back(objective((y.array() - fit.intercept).matrix(), fit.beta, lambda));
        fit.cycles = 1;
        fit.converged = true;
        return fit;
    }
    const Eigen::VectorXd col_scale = Z.colwise().squaredNorm().transpose() / n;
    Eigen::VectorXd r = y - Z * fit.beta;
    r.array() -= fit.intercept;

    for (int cycle = 1; cycle <= opt.max_iters; ++cycle) {
        double max_change = 0.0;
        const double shift = r.mean();
        fit.intercept += shift;
        r.array() -= shift;
        max_change = std::abs(shift);
        for (Eigen::Index k = 0; k < p; ++k) {
            if (col_scale(k) <= 0.0) continue;
            const double old = fit.beta(k);
            const double rho = Z.col(k).dot(r) / n + col_scale(k) * old;
            const double mag = std::abs(rho) - lambda;
            const double updated = mag > 0.0 ? std::copysign(mag, rho) / col_scale(k) : 0.0;
            if (updated != old) {
                r.noalias() -= (updated - old) * Z.col(k);
                fit.beta(k) = updated;
                max_change = std::max(max_change, std::abs(updated - old));
            }
        }
        fit.objective_trace.push_back(objective(r, fit.beta, lambda));
        fit.cycles = cycle;
        if (max_change < tol) {
            fit.converged = true;
            break;
        }
    }
    for (Eigen::Index k = 0; k < p; ++k)
        if (fit.beta(k) != 0.0) fit.selected.push_back(static_cast<int>(k));
    return fit;
}

std::vector<double> lambda_grid(double lmax, int n_lambdas, double ratio) {
    if (n_lambdas < 2) throw Error(ErrorKind::InvalidConfig, "n_lambdas must be >= 2");
    if (!(ratio > 0.0 && ratio < 1.0)) throw Error(ErrorKind::InvalidConfig, "ratio must be in (0, 1)");
    std::vector<double> grid(static_cast<std::size_t>(n_lambdas));
    for (int i = 0; i < n_lambdas; ++i) {
        grid[static_cast<std::size_t>(i)] = lmax * std::pow(ratio, static_cast<double>(i) / (n_lambdas - 1));
    }
    grid.front() = lmax;
    return grid;
}

std::vector<LassoFit> lambda_path(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y, int n_lambdas, double ratio,
                                  const LassoOptions& opt) {
    const auto grid = lambda_grid(lambda_max(Z, y), n_lambdas, ratio);
    std::vector<LassoFit> path;
    path.reserve(grid.size());
    for (const double lam : grid) path.push_back(fit_lasso(Z, y, lam, opt, path.empty() ? nullptr : &path.back()));
    return path;
}

double kkt_violation(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y, const LassoFit& fit) {
    const auto n = static_cast<double>(y.size());
    Eigen::VectorXd r = y - Z * fit.beta;
    r.array() -= fit.intercept;
    double worst = std::abs(r.mean());
    for (Eigen::Index k = 0; k < Z.cols(); ++k) {
        const double g = Z.col(k).dot(r) / n;
        const double v = fit.beta(k) == 0.0 ? std::max(0.0, std::abs(g) - fit.lambda)
                                            : std::abs(g - std::copysign(fit.lambda, fit.beta(k)));
        worst = std::max(worst, v);
    }
    return worst;
}

CvResult cv_lasso(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y, const CvConfig& cfg) {
    check_inputs(Z, y);
    const Eigen::Index n = Z.rows();
    if (cfg.folds < 2) throw Error(ErrorKind::InvalidConfig, "folds must be >= 2");
    if (n < cfg.folds) throw Error(ErrorKind::TooFewRows, "fewer rows than folds");
    const auto grid = lambda_grid(lambda_max(Z, y), cfg.n_lambdas, cfg.ratio);

    CvResult out;
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(cfg.seed, tag_of("cv-folds"));
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
    out.fold_of.assign(static_cast<std::size_t>(n), 0);
    for (std::size_t i = 0; i < perm.size(); ++i) out.fold_of[static_cast<std::size_t>(perm[i])] = static_cast<int>(i % cfg.folds);

    const auto n_folds = static_cast<std::size_t>(cfg.folds);
    std::vector<std::vector<double>> fold_mse(n_folds);
    parallel_for(
        n_folds,
        [&](std::size_t f) {
            std::vector<Eigen::Index> train;
            std::vector<Eigen::Index> test;
            for (Eigen::Index i = 0; i < n; ++i) (out.fold_of[static_cast<std::size_t>(i)] == static_cast<int>(f) ? test : train).push_back(i);
            const Eigen::MatrixXd ztr = Z(train, Eigen::all);
            const Eigen::VectorXd ytr = y(train);
            const Eigen::MatrixXd zte = Z(test, Eigen::all);
            const Eigen::VectorXd yte = y(test);
            auto& mse = fold_mse[f];
            LassoFit prev;
            for (std::size_t g = 0; g < grid.size(); ++g) {
                prev = fit_lasso(ztr, ytr, grid[g], cfg.options, g == 0 ? nullptr : &prev);
                const Eigen::VectorXd pred = (zte * prev.beta).array() + prev.intercept;
                mse.push_back((yte - pred).squaredNorm() / static_cast<double>(yte.size()));
            }
        },
        cfg.threads);

    const auto k = static_cast<double>(cfg.folds);
    for (std::size_t g = 0; g < grid.size(); ++g) {
        double mean = 0.0;
        for (const auto& f : fold_mse) mean += f[g];
        mean /= k;
        double var = 0.0;
        for (const auto& f : fold_mse) var += (f[g] - mean) * (f[g] - mean);
        var /= k - 1.0;
        out.curve.push_back(CvPoint{grid[g], mean, std::sqrt(var / k)});
    }
    for (std::size_t g = 1; g < out.curve.size(); ++g)
        if (out.curve[g].mse < out.curve[static_cast<std::size_t>(out.best_index)].mse) out.best_index = static_cast<int>(g);
    const auto& best = out.curve[static_cast<std::size_t>(out.best_index)];
    out.one_se_index = out.best_index;
    for (int g = 0; g <= out.best_index; ++g) {
        if (out.curve[static_cast<std::size_t>(g)].mse <= best.mse + best.se) {
            out.one_se_index = g;
            break;
        }
    }
    out.best_lambda = best.lambda;
    out.one_se_lambda = out.curve[static_cast<std::size_t>(out.one_se_index)].lambda;

    LassoFit prev;
    for (int g = 0; g <= out.best_index; ++g) {
        prev = fit_lasso(Z, y, grid[static_cast<std::size_t>(g)], cfg.options, g == 0 ? nullptr : &prev);
    }
    out.fit = std::move(prev);
    return out;
}

SectorDesign sector_design(const panel::PanelMatrix& completed, panel::Sector target) {
    if (!completed.fully_observed()) throw Error(ErrorKind::InvalidConfig, "sector design needs a completed panel");
    constexpr panel::Sector kAll[] = {panel::Sector::Agriculture, panel::Sector::Industry, panel::Sector::Services,
                                      panel::Sector::GDP};
    std::map<std::string, std::map<panel::Sector, Eigen::Index>> rows;
    for (std::size_t i = 0; i < completed.entities().size(); ++i) {
        const auto& e = completed.entities()[i];
        rows[e.country][e.sector] = static_cast<Eigen::Index>(i);
    }
    SectorDesign d;
    std::vector<panel::Sector> predictors;
    for (const auto s : kAll) {
        if (s == target) continue;
        predictors.push_back(s);
        d.names.emplace_back(panel::to_string(s));
    }
    std::vector<std::string> countries;
    for (const auto& [country, sectors] : rows)
        if (sectors.size() == std::size(kAll)) countries.push_back(country);
    if (countries.empty()) throw Error(ErrorKind::ShapeMismatch, "no country reports every sector");

    const Eigen::Index t = completed.cols();
    const auto n = static_cast<Eigen::Index>(countries.size()) * t;
    d.X.resize(n, static_cast<Eigen::Index>(predictors.size()));
    d.y.resize(n);
    Eigen::Index r = 0;
    for (const auto& c : countries) {
        const auto& idx = rows[c];
        for (Eigen::Index j = 0; j < t; ++j, ++r) {
            d.y(r) = completed.values()(idx.at(target), j);
            for (std::size_t k = 0; k < predictors.size(); ++k)
                d.X(r, static_cast<Eigen::Index>(k)) = completed.values()(idx.at(predictors[k]), j);
            d.row_labels.push_back(c + ":" + std::to_string(completed.years()[static_cast<std::size_t>(j)]));
        }
    }
    return d;
}

std::string fit_json(const LassoFit& fit, const std::vector<std::string>& names) {
    return fit_object(fit, names).dump(2) + "\n";
}

std::string fit_json(const CvResult& cv, const std::vector<std::string>& names) {
    nlohmann::json j = fit_object(cv.fit, names);
    j["lambda_1se"] = number(cv.one_se_lambda);
    j["cv_curve"] = nlohmann::json::array();
    for (const auto& p : cv.curve) j["cv_curve"].push_back({{"lambda", number(p.lambda)}, {"mse", number(p.mse)}, {"se", number(p.se)}});
    return j.dump(2) + "\n";
}

}  // namespace sparsetx::lasso
