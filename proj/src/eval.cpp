#include "sparsetx/eval.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <map>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "sparsetx/error.hpp"
#include "sparsetx/io.hpp"
#include "sparsetx/parallel.hpp"
#include "sparsetx/rng.hpp"
#include "sparsetx/version.hpp"

namespace sparsetx::eval {

namespace {

std::vector<SweepRow> run_rep(const panel::PanelMatrix& truth, synth::Mechanism mechanism, double fraction,
                              std::uint64_t seed, int rep, const std::vector<impute::Method>& methods,
                              const MethodOptions& opt) {
    const std::uint64_t mask_seed =
        stream_id({seed, tag_of(synth::to_string(mechanism).c_str()), std::bit_cast<std::uint64_t>(fraction),
                   static_cast<std::uint64_t>(rep)});
    std::vector<SweepRow> rows;
    for (const auto method : methods) rows.push_back(SweepRow{mechanism, fraction, method, rep, mask_seed, std::nullopt, {}});

    panel::PanelMatrix masked;
    try {
        masked = synth::inject_missing(truth, {mechanism, fraction, mask_seed});
    } catch (const Error& e) {
        for (auto& r : rows) r.error = e.what();
        return rows;
    }

    std::vector<std::pair<Eigen::Index, Eigen::Index>> scored;
    for (Eigen::Index j = 0; j < truth.cols(); ++j)
        for (Eigen::Index i = 0; i < truth.rows(); ++i)
            if (truth.observed(i, j) && !masked.observed(i, j)) scored.emplace_back(i, j);

    for (std::size_t k = 0; k < methods.size(); ++k) {
        auto& row = rows[k];
        try {
            const auto result = run_imputer(masked, methods[k], opt, stream_id({mask_seed, static_cast<std::uint64_t>(k)}));
            if (scored.empty()) {
                row.metrics = MetricSet{};
                continue;
            }
            Eigen::VectorXd t(static_cast<Eigen::Index>(scored.size()));
            Eigen::VectorXd p(t.size());
            for (std::size_t c = 0; c < scored.size(); ++c) {
                t(static_cast<Eigen::Index>(c)) = truth.values()(scored[c].first, scored[c].second);
                p(static_cast<Eigen::Index>(c)) = result.completed.values()(scored[c].first, scored[c].second);
            }
            row.metrics = metrics(t, p);
        } catch (const Error& e) {
            row.error = e.what();
        }
    }
    return rows;
}

void require_truth(const panel::PanelMatrix& truth, const std::vector<impute::Method>& methods) {
    if (!truth.fully_observed()) throw Error(ErrorKind::InvalidConfig, "ground-truth panel must be fully observed");
    if (methods.empty()) throw Error(ErrorKind::InvalidConfig, "no imputation methods given");
}

}  // namespace

MetricSet metrics(const Eigen::VectorXd& y_true, const Eigen::VectorXd& y_pred) {
    if (y_true.size() != y_pred.size() || y_true.size() == 0) {
        throw Error(ErrorKind::LengthMismatch, "metric inputs must have equal, nonzero length");
    }
    const Eigen::ArrayXd e = (y_true - y_pred).array();
    MetricSet m;
    m.mse = e.square().mean();
    m.rmse = std::sqrt(m.mse);
    m.mae = e.abs().mean();
    try {
        m.r2 = r2(y_true, y_pred);
    } catch (const Error&) {
        m.r2.reset();
    }
    return m;
}

double r2(const Eigen::VectorXd& y_true, const Eigen::VectorXd& y_pred) {
    if (y_true.size() != y_pred.size() || y_true.size() == 0) {
        throw Error(ErrorKind::LengthMismatch, "metric inputs must have equal, nonzero length");
    }
    const double ss_tot = (y_true.array() - y_true.mean()).square().sum();
    if (!(ss_tot > 0.0)) throw Error(ErrorKind::ConstantTruth, "R^2 is undefined for constant truth");
    return 1.0 - (y_true - y_pred).squaredNorm() / ss_tot;
}

double bic(double loglik, double n, double n_params) {
    if (!(n >= 1.0)) throw Error(ErrorKind::InvalidConfig, "BIC needs n >= 1");
    return n_params * std::log(n) - 2.0 * loglik;
}

double bhm_loglik(const bhm::BhmData& data, const std::vector<bhm::SummaryRow>& summary) {
    data.validate();
    std::map<std::string, double> mean;
    for (const auto& r : summary) mean[r.name] = r.mean;
    auto get = [&](const std::string& name) {
        const auto it = mean.find(name);
        return it == mean.end() ? 0.0 : it->second;
    };
    const double sigma = get("sigma");
    if (!(sigma > 0.0)) throw Error(ErrorKind::NonFiniteLikelihood, "summary lacks a positive sigma");
    double ll = 0.0;
    for (Eigen::Index i = 0; i < data.n(); ++i) {
        double mu = get("beta0");
        for (Eigen::Index k = 0; k < data.p(); ++k) mu += get("beta" + std::to_string(k + 1)) * data.X(i, k);
        mu += get("gamma[" + data.group_labels[static_cast<std::size_t>(data.group[static_cast<std::size_t>(i)])] + "]");
        mu += get("delta[" + data.time_labels[static_cast<std::size_t>(data.time[static_cast<std::size_t>(i)])] + "]");
        const double z = (data.y(i) - mu) / sigma;
        ll += -0.5 * z * z - std::log(sigma) - 0.5 * std::log(2.0 * std::numbers::pi);
    }
    return ll;
}

double bhm_bic(const bhm::BhmData& data, const std::vector<bhm::SummaryRow>& summary) {
    const auto k = static_cast<double>(1 + data.p() + static_cast<Eigen::Index>(data.group_labels.size()) - 1 +
                                       static_cast<Eigen::Index>(data.time_labels.size()) - 1);
    return bic(bhm_loglik(data, summary), static_cast<double>(data.n()), k);
}

impute::ImputationResult run_imputer(const panel::PanelMatrix& m, impute::Method method, const MethodOptions& opt,
                                     std::uint64_t seed) {
    switch (method) {
        case impute::Method::SoftImpute: return impute::soft_impute(m, opt.soft);
        case impute::Method::Mean: return impute::mean_impute(m);
        case impute::Method::LinearInterp: return impute::linear_interpolate(m);
        case impute::Method::Chained: {
            impute::ForestConfig f = opt.forest;
            f.seed = seed;
            return impute::chained_impute(m, impute::ForestLearner{f}, opt.chained_sweeps);
        }
    }
    throw Error(ErrorKind::InvalidConfig, "unknown imputation method");
}

std::vector<SweepRow> compare_imputers(const panel::PanelMatrix& truth, const synth::MissingnessSpec& spec,
                                       const std::vector<impute::Method>& methods, const MethodOptions& opt, int reps) {
    require_truth(truth, methods);
    if (reps < 1) throw Error(ErrorKind::InvalidConfig, "reps must be >= 1");
    std::vector<SweepRow> rows;
    for (int r = 0; r < reps; ++r) {
        auto rep = run_rep(truth, spec.mechanism, spec.fraction, spec.seed, r, methods, opt);
        rows.insert(rows.end(), rep.begin(), rep.end());
    }
    return rows;
}

std::vector<SweepRow> missingness_sweep(const panel::PanelMatrix& truth, const SweepConfig& cfg) {
    require_truth(truth, cfg.methods);
    if (cfg.mechanisms.empty() || cfg.fractions.empty()) throw Error(ErrorKind::InvalidConfig, "empty sweep grid");
    if (cfg.reps < 1) throw Error(ErrorKind::InvalidConfig, "reps must be >= 1");
    struct Cell {
        synth::Mechanism mechanism;
        double fraction;
        int rep;
    };
    std::vector<Cell> cells;
    for (const auto m : cfg.mechanisms)
        for (const double f : cfg.fractions)
            for (int r = 0; r < cfg.reps; ++r) cells.push_back(Cell{m, f, r});

    std::vector<std::vector<SweepRow>> results(cells.size());
    parallel_for(
        cells.size(),
        [&](std::size_t c) {
            results[c] = run_rep(truth, cells[c].mechanism, cells[c].fraction, cfg.seed, cells[c].rep, cfg.methods, cfg.options);
        },
        cfg.threads);
    std::vector<SweepRow> rows;
    for (auto& r : results) rows.insert(rows.end(), r.begin(), r.end());
    return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
    std::ostringstream out;
    out << "mechanism,fraction,method,rep,rmse,mae,r2\n";
    for (const auto& r : rows) {
        out << synth::to_string(r.mechanism) << ',' << io::format_double(r.fraction) << ',' << impute::to_string(r.method)
            << ',' << r.rep << ',';
        if (r.metrics) {
            out << io::format_double(r.metrics->rmse) << ',' << io::format_double(r.metrics->mae) << ','
                << (r.metrics->r2 ? io::format_double(*r.metrics->r2) : "");
        } else {
            out << ",,";
        }
        out << '\n';
    }
    return out.str();
}

std::vector<SweepCell> summarize_sweep(const std::vector<SweepRow>& rows) {
    std::vector<SweepCell> cells;
    std::vector<std::vector<double>> values;
    for (const auto& r : rows) {
        auto it = std::find_if(cells.begin(), cells.end(), [&](const SweepCell& c) {
            return c.mechanism == r.mechanism && c.fraction == r.fraction && c.method == r.method;
        });
        if (it == cells.end()) {
            cells.push_back(SweepCell{r.mechanism, r.fraction, r.method, 0.0, 0, 0});
            values.emplace_back();
            it = cells.end() - 1;
        }
        auto& v = values[static_cast<std::size_t>(it - cells.begin())];
        if (r.metrics) {
            v.push_back(r.metrics->rmse);
            ++it->ok;
        } else {
            ++it->failed;
        }
    }
    for (std::size_t c = 0; c < cells.size(); ++c) {
        auto& v = values[c];
        if (v.empty()) {
            cells[c].median_rmse = std::numeric_limits<double>::quiet_NaN();
            continue;
        }
        std::sort(v.begin(), v.end());
        cells[c].median_rmse = bhm::quantile_sorted(v, 0.5);
    }
    return cells;
}

std::string manifest_json(const Report& report) {
    nlohmann::ordered_json j;
    j["pipeline"] = report.pipeline;
    j["version"] = kVersion;
    j["seed"] = report.seed;
    j["config"] = nlohmann::ordered_json::parse(report.config_json);
    j["stages"] = nlohmann::ordered_json::array();
    for (const auto& s : report.stages) {
        nlohmann::ordered_json st;
        st["stage"] = s.stage;
        st["present"] = s.present;
        st["inputs_sha256"] = s.inputs_sha256;
        st["seed"] = s.seed;
        st["wall_time_s"] = s.wall_time_s;
        nlohmann::ordered_json outputs = nlohmann::ordered_json::array();
        for (const auto& f : s.outputs) outputs.push_back({{"file", f.name}, {"sha256", io::sha256_hex(f.contents)}});
        st["outputs"] = outputs;
        nlohmann::ordered_json facts = nlohmann::ordered_json::object();
        for (const auto& [k, v] : s.facts) facts[k] = v;
        st["facts"] = facts;
        j["stages"].push_back(st);
    }
    return j.dump(2) + "\n";
}

void pipeline_report(const std::filesystem::path& dir, const Report& report) {
    if (std::none_of(report.stages.begin(), report.stages.end(), [](const StageRecord& s) { return s.present; })) {
        throw Error(ErrorKind::InvalidConfig, "report has no present stage");
    }
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error(ErrorKind::IoError, "cannot create " + dir.string() + ": " + ec.message());
    for (const auto& s : report.stages)
        if (s.present)
            for (const auto& f : s.outputs) io::write_file_atomic(dir / f.name, f.contents);
    io::write_file_atomic(dir / "manifest.json", manifest_json(report));
}

}  // namespace sparsetx::eval
