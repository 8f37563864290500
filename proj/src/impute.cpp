#include "sparsetx/impute.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "sparsetx/error.hpp"
#include "sparsetx/io.hpp"
#include "sparsetx/rng.hpp"

namespace sparsetx::impute {

using panel::Mask;
using panel::PanelMatrix;

namespace {

constexpr double kRankCutoff = 1e-10;
constexpr double kTiny = std::numeric_limits<double>::min();

void require_observed_rows(const PanelMatrix& m, ErrorKind kind) {
    if (m.rows() == 0 || m.cols() == 0) throw Error(ErrorKind::EmptyMatrix, "panel has no cells");
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        if (!m.mask().row(i).any()) {
            throw Error(kind, "row " + m.entities()[static_cast<std::size_t>(i)].label() + " has no observed cells");
        }
    }
}

Eigen::VectorXd observed_row_means(const PanelMatrix& m) {
    Eigen::VectorXd means(m.rows());
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        double s = 0.0;
        Eigen::Index c = 0;
        for (Eigen::Index t = 0; t < m.cols(); ++t) {
            if (m.observed(i, t)) {
                s += m.values()(i, t);
                ++c;
            }
        }
        means(i) = s / static_cast<double>(c);
    }
    return means;
}

}  // namespace

std::string to_string(Method m) {
    switch (m) {
        case Method::SoftImpute: return "softimpute";
        case Method::Mean: return "mean";
        case Method::LinearInterp: return "interp";
        case Method::Chained: return "chained";
    }
    return "mean";
}

Method parse_method(const std::string& name) {
    if (name == "softimpute") return Method::SoftImpute;
    if (name == "mean") return Method::Mean;
    if (name == "interp") return Method::LinearInterp;
    if (name == "chained") return Method::Chained;
    throw Error(ErrorKind::InvalidConfig, "unknown imputation method '" + name + "'");
}

double soft_threshold(double x, double t) noexcept {
    const double mag = std::abs(x) - t;
    if (mag <= 0.0) return 0.0;
    return x > 0.0 ? mag : -mag;
}

ImputationResult soft_impute(const PanelMatrix& m, const SoftImputeConfig& cfg) {
    if (cfg.max_iters < 1 || !(cfg.tol > 0.0)) throw Error(ErrorKind::InvalidConfig, "max_iters >= 1 and tol > 0 required");
    if (cfg.lambda_as_fraction && !(*cfg.lambda_as_fraction > 0.0 && *cfg.lambda_as_fraction <= 1.0)) {
        throw Error(ErrorKind::InvalidConfig, "lambda_as_fraction must be in (0, 1]");
    }
    if (!cfg.lambda_as_fraction && !(cfg.lambda >= 0.0)) throw Error(ErrorKind::InvalidConfig, "lambda must be >= 0");
    if (m.observed_count() == 0) throw Error(ErrorKind::NoObservedCells, "panel has no observed cells");
    require_observed_rows(m, ErrorKind::NoObservedCells);

    const Eigen::Index n = m.rows();
    const Eigen::Index t = m.cols();
    const Mask& mask = m.mask();

    double grand = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < t; ++j)
            if (mask(i, j)) grand += m.values()(i, j);
    grand /= static_cast<double>(m.observed_count());

    Eigen::RowVectorXd centers(t);
    for (Eigen::Index j = 0; j < t; ++j) {
        double s = 0.0;
        Eigen::Index c = 0;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (mask(i, j)) {
                s += m.values()(i, j);
                ++c;
            }
        }
        centers(j) = cfg.centering == Centering::None ? 0.0 : c > 0 ? s / static_cast<double>(c) : grand;
    }

    Eigen::MatrixXd target(n, t);  // centered observations, zero where missing
    for (Eigen::Index j = 0; j < t; ++j)
        for (Eigen::Index i = 0; i < n; ++i) target(i, j) = mask(i, j) ? m.values()(i, j) - centers(j) : 0.0;

    const bool any_missing = !m.fully_observed();
    const auto observed = static_cast<double>(m.observed_count());

    ImputationResult result;
    result.method = Method::SoftImpute;
    result.converged = false;

    Eigen::MatrixXd current = target;
    Eigen::MatrixXd basis_u;
    Eigen::MatrixXd basis_v;
    double previous_mae = 0.0;
    for (int iter = 1; iter <= cfg.max_iters; ++iter) {
        Eigen::BDCSVD<Eigen::MatrixXd> svd(current, Eigen::ComputeThinU | Eigen::ComputeThinV);
        if (svd.info() != Eigen::Success || !svd.singularValues().allFinite()) {
            throw Error(ErrorKind::SvdFailure, "SVD did not converge at iteration " + std::to_string(iter));
        }
        const Eigen::VectorXd& sv = svd.singularValues();
        if (iter == 1) {
            result.initial_max_singular_value = sv.size() > 0 ? sv(0) : 0.0;
            result.lambda = cfg.lambda_as_fraction ? *cfg.lambda_as_fraction * result.initial_max_singular_value
                                                   : cfg.lambda;
        }
        Eigen::VectorXd shrunk = sv.unaryExpr([&](double s) { return soft_threshold(s, result.lambda); });
        const double top = sv.size() > 0 ? sv(0) : 0.0;
        const int rank = static_cast<int>((shrunk.array() > kRankCutoff * top).count());
        Eigen::MatrixXd estimate = svd.matrixU() * shrunk.asDiagonal() * svd.matrixV().transpose();
        if (cfg.debias) {
            basis_u = svd.matrixU().leftCols(rank);
            basis_v = svd.matrixV().leftCols(rank);
        }

        double abs_err = 0.0;
        for (Eigen::Index j = 0; j < t; ++j)
            for (Eigen::Index i = 0; i < n; ++i)
                if (mask(i, j)) abs_err += std::abs(estimate(i, j) - target(i, j));
        const double mae = abs_err / observed;
        result.trace.push_back(TraceRow{iter, mae, rank});
        result.iterations = iter;

        for (Eigen::Index j = 0; j < t; ++j)
            for (Eigen::Index i = 0; i < n; ++i)
                if (mask(i, j)) estimate(i, j) = target(i, j);
        const double step = (estimate - current).squaredNorm() / std::max(current.squaredNorm(), kTiny);
        current = std::move(estimate);

        if (!any_missing) {
            // With nothing to fill, the restored iterate is already the fixed point.
            result.converged = true;
            break;
        }
        if (iter > 1) {
            const double change = std::abs(mae - previous_mae);
            // The observed MAE can stall where it turns around early on, so the
            // iterate itself has to have settled as well.
            if (change <= cfg.tol * std::max(previous_mae, kTiny) && step <= cfg.tol) {
                result.converged = true;
                break;
            }
        }
        previous_mae = mae;
    }

    if (cfg.debias && any_missing && basis_u.cols() > 0) {
        const Eigen::Index r = basis_u.cols();
        Eigen::MatrixXd design(static_cast<Eigen::Index>(observed), r);
        Eigen::VectorXd response(design.rows());
        Eigen::Index row = 0;
        for (Eigen::Index j = 0; j < t; ++j) {
            for (Eigen::Index i = 0; i < n; ++i) {
                if (!mask(i, j)) continue;
                design.row(row) = basis_u.row(i).cwiseProduct(basis_v.row(j));
                response(row) = target(i, j);
                ++row;
            }
        }
        const Eigen::VectorXd d = design.colPivHouseholderQr().solve(response);
        const Eigen::MatrixXd refit = basis_u * d.asDiagonal() * basis_v.transpose();
        for (Eigen::Index j = 0; j < t; ++j)
            for (Eigen::Index i = 0; i < n; ++i)
                if (!mask(i, j)) current(i, j) = refit(i, j);
        result.debiased_singular_values = d;
    }

    Eigen::MatrixXd completed = current.rowwise() + centers;
    for (Eigen::Index j = 0; j < t; ++j)
        for (Eigen::Index i = 0; i < n; ++i)
            if (mask(i, j)) completed(i, j) = m.values()(i, j);
    if (!completed.allFinite()) throw Error(ErrorKind::SvdFailure, "non-finite completion");
    result.completed = m.completed_with(std::move(completed));
    return result;
}

ImputationResult mean_impute(const PanelMatrix& m) {
    require_observed_rows(m, ErrorKind::EmptyRow);
    const Eigen::VectorXd means = observed_row_means(m);
    Eigen::MatrixXd out = m.values();
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index t = 0; t < m.cols(); ++t)
            if (!m.observed(i, t)) out(i, t) = means(i);
    ImputationResult r;
    r.method = Method::Mean;
    r.iterations = 1;
    r.completed = m.completed_with(std::move(out));
    return r;
}

ImputationResult linear_interpolate(const PanelMatrix& m) {
    require_observed_rows(m, ErrorKind::EmptyRow);
    Eigen::MatrixXd out = m.values();
    const auto& years = m.years();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        std::vector<Eigen::Index> obs;
        for (Eigen::Index t = 0; t < m.cols(); ++t)
            if (m.observed(i, t)) obs.push_back(t);
        for (Eigen::Index t = 0; t < obs.front(); ++t) out(i, t) = m.values()(i, obs.front());
        for (Eigen::Index t = obs.back() + 1; t < m.cols(); ++t) out(i, t) = m.values()(i, obs.back());
        for (std::size_t k = 0; k + 1 < obs.size(); ++k) {
            const auto a = obs[k];
            const auto b = obs[k + 1];
            const double ya = m.values()(i, a);
            const double yb = m.values()(i, b);
            const double span = static_cast<double>(years[static_cast<std::size_t>(b)] - years[static_cast<std::size_t>(a)]);
            for (Eigen::Index t = a + 1; t < b; ++t) {
                const double w = static_cast<double>(years[static_cast<std::size_t>(t)] - years[static_cast<std::size_t>(a)]) / span;
                out(i, t) = ya + w * (yb - ya);
            }
        }
    }
    ImputationResult r;
    r.method = Method::LinearInterp;
    r.iterations = 1;
    r.completed = m.completed_with(std::move(out));
    return r;
}

ImputationResult chained_impute(const PanelMatrix& m, const Learner& learner, int sweeps, double tol) {
    if (sweeps < 1) throw Error(ErrorKind::InvalidConfig, "sweeps must be >= 1");
    ImputationResult r = mean_impute(m);
    r.method = Method::Chained;
    r.iterations = 0;
    if (m.fully_observed()) return r;

    const Eigen::Index n = m.rows();
    const Eigen::Index t = m.cols();
    const Mask& mask = m.mask();
    Eigen::MatrixXd X = r.completed.values();

    std::vector<Eigen::Index> columns;
    std::vector<Eigen::Index> missing_count(static_cast<std::size_t>(t));
    for (Eigen::Index j = 0; j < t; ++j) {
        missing_count[static_cast<std::size_t>(j)] = n - mask.col(j).count();
        if (missing_count[static_cast<std::size_t>(j)] > 0) columns.push_back(j);
    }
    std::stable_sort(columns.begin(), columns.end(), [&](Eigen::Index a, Eigen::Index b) {
        return missing_count[static_cast<std::size_t>(a)] < missing_count[static_cast<std::size_t>(b)];
    });

    for (int sweep = 1; sweep <= sweeps; ++sweep) {
        double loss = 0.0;
        Eigen::Index loss_count = 0;
        double max_change = 0.0;
        for (const auto j : columns) {
            std::vector<Eigen::Index> obs_rows;
            std::vector<Eigen::Index> miss_rows;
            for (Eigen::Index i = 0; i < n; ++i) (mask(i, j) ? obs_rows : miss_rows).push_back(i);
            if (t < 2 || obs_rows.empty()) continue;

            auto features = [&](const std::vector<Eigen::Index>& rows) {
                Eigen::MatrixXd F(static_cast<Eigen::Index>(rows.size()), t - 1);
                for (std::size_t a = 0; a < rows.size(); ++a) {
                    Eigen::Index c = 0;
                    for (Eigen::Index k = 0; k < t; ++k)
                        if (k != j) F(static_cast<Eigen::Index>(a), c++) = X(rows[a], k);
                }
                return F;
            };
            const Eigen::MatrixXd f_obs = features(obs_rows);
            const Eigen::MatrixXd f_miss = features(miss_rows);
            Eigen::VectorXd y_obs(static_cast<Eigen::Index>(obs_rows.size()));
            for (std::size_t a = 0; a < obs_rows.size(); ++a) y_obs(static_cast<Eigen::Index>(a)) = X(obs_rows[a], j);

            Eigen::VectorXd fit_obs;
            Eigen::VectorXd pred_miss;
            if (const auto* fl = std::get_if<ForestLearner>(&learner)) {
                if (static_cast<Eigen::Index>(obs_rows.size()) < 2 * fl->config.min_leaf) continue;
                ForestConfig cfg = fl->config;
                cfg.seed = stream_id({fl->config.seed, static_cast<std::uint64_t>(j)});
                const auto model = fit_forest(f_obs, y_obs, cfg);
                fit_obs = predict_forest(model, f_obs);
                pred_miss = predict_forest(model, f_miss);
            } else {
                fit_obs = f_obs.rowwise().mean();
                pred_miss = f_miss.rowwise().mean();
            }
            loss += (fit_obs - y_obs).squaredNorm();
            loss_count += y_obs.size();
            for (std::size_t a = 0; a < miss_rows.size(); ++a) {
                const double v = pred_miss(static_cast<Eigen::Index>(a));
                max_change = std::max(max_change, std::abs(v - X(miss_rows[a], j)));
                X(miss_rows[a], j) = v;
            }
        }
        r.sweep_loss.push_back(loss_count > 0 ? loss / static_cast<double>(loss_count) : 0.0);
        r.iterations = sweep;
        if (max_change < tol) break;
    }

    for (Eigen::Index j = 0; j < t; ++j)
        for (Eigen::Index i = 0; i < n; ++i)
            if (mask(i, j)) X(i, j) = m.values()(i, j);
    r.completed = m.completed_with(std::move(X));
    return r;
}

std::string trace_csv(const ImputationResult& r) {
    std::ostringstream out;
    out << "iter,observed_mae,rank\n";
    for (const auto& row : r.trace) out << row.iter << ',' << io::format_double(row.observed_mae) << ',' << row.rank << '\n';
    return out.str();
}

}  // namespace sparsetx::impute
