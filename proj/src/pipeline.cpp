#include "sparsetx/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

#include "sparsetx/io.hpp"

namespace sparsetx::pipeline {

namespace {

using Clock = std::chrono::steady_clock;

std::string fact(double v) { return io::format_double(v); }

template <class Fn>
eval::StageRecord timed(const std::string& stage, std::uint64_t seed, Fn&& body) {
    eval::StageRecord rec;
    rec.stage = stage;
    rec.seed = seed;
    rec.present = true;
    const auto t0 = Clock::now();
    try {
        body(rec);
    } catch (const StageFailure&) {
        throw;
    } catch (const Error& e) {
        throw StageFailure(stage, e.what(), e.kind());
    } catch (const std::exception& e) {
        throw StageFailure(stage, e.what(), ErrorKind::StageError);
    }
    rec.wall_time_s = std::chrono::duration<double>(Clock::now() - t0).count();
    return rec;
}

eval::StageRecord absent(const std::string& stage, std::uint64_t seed, std::string reason) {
    eval::StageRecord rec;
    rec.stage = stage;
    rec.seed = seed;
    rec.present = false;
    rec.facts.emplace_back("reason", std::move(reason));
    return rec;
}

std::string joined(const std::vector<std::string>& parts, char sep) {
    std::string out;
    for (const auto& p : parts) {
        if (!out.empty()) out += sep;
        out += p;
    }
    return out;
}

struct LassoRun {
    lasso::CvResult cv;
    std::vector<std::string> names;
};

LassoRun run_lasso(const panel::PanelMatrix& completed, const Config& cfg) {
    const auto design = lasso::sector_design(completed, cfg.target);
    const auto z = lasso::standardize(design.X);
    lasso::CvConfig cv = cfg.cv;
    cv.seed = cfg.seed;
    return LassoRun{lasso::cv_lasso(z.Z, design.y, cv), design.names};
}

std::string comparison_row(const std::string& label, const LassoRun& r) {
    std::vector<std::string> selected;
    for (std::size_t k = 0; k < r.names.size(); ++k)
        if (r.cv.fit.beta(static_cast<Eigen::Index>(k)) != 0.0) selected.push_back(r.names[k]);
    const auto& best = r.cv.curve[static_cast<std::size_t>(r.cv.best_index)];
    return label + ',' + io::format_double(r.cv.best_lambda) + ',' + io::format_double(std::sqrt(best.mse)) + ',' +
           std::to_string(selected.size()) + ',' + io::csv_escape(joined(selected, ';')) + '\n';
}

}  // namespace

std::string panel_digest(const panel::PanelMatrix& m) { return io::sha256_hex(panel::long_csv(panel::to_long(m))); }

eval::Report run(Kind kind, const panel::PanelMatrix& input, const std::vector<panel::PanelMatrix>& covariates,
                 const Config& cfg) {
    eval::Report report;
    report.pipeline = kind == Kind::Mcmc ? "pipeline-mcmc" : "pipeline-vi";
    report.seed = cfg.seed;
    report.config_json = cfg.config_json;

    const std::string input_sha = panel_digest(input);
    panel::PanelMatrix completed;

    report.stages.push_back(timed("impute", cfg.seed, [&](eval::StageRecord& rec) {
        impute::SoftImputeConfig soft = cfg.soft;
        if (kind == Kind::Vi) soft.tol /= 10.0;
        const auto result = impute::soft_impute(input, soft);
        completed = result.completed;
        rec.inputs_sha256 = input_sha;
        rec.outputs.push_back({"imputation_trace.csv", impute::trace_csv(result)});
        rec.outputs.push_back({"completed_panel.csv", panel::long_csv(panel::to_long(completed))});
        rec.facts.emplace_back("missing_fraction", fact(panel::missing_fraction(input)));
        rec.facts.emplace_back("iterations", std::to_string(result.iterations));
        rec.facts.emplace_back("converged", result.converged ? "true" : "false");
        rec.facts.emplace_back("lambda", fact(result.lambda));
        rec.facts.emplace_back("tol", fact(soft.tol));
        rec.facts.emplace_back("final_rank", std::to_string(result.trace.empty() ? 0 : result.trace.back().rank));
    }));

    const std::string completed_sha = panel_digest(completed);

    report.stages.push_back(timed("bhm", cfg.seed, [&](eval::StageRecord& rec) {
        std::string covariate_sha;
        std::vector<std::string> names;
        for (std::size_t k = 0; k < covariates.size(); ++k) {
            covariate_sha += panel_digest(covariates[k]);
            names.push_back("x" + std::to_string(k + 1));
        }
        rec.inputs_sha256 = io::sha256_hex(completed_sha + covariate_sha);
        const auto data = bhm::from_panel(completed, covariates, names);
        std::vector<bhm::SummaryRow> summary;
        std::vector<std::string> warnings;
        if (kind == Kind::Mcmc) {
            bhm::McmcConfig mc = cfg.mcmc;
            mc.seed = cfg.seed;
            const auto samples = bhm::fit_mcmc(data, cfg.spec, mc);
            summary = bhm::posterior_summary(samples);
            rec.outputs.push_back({"posterior_summary.csv", bhm::summary_csv(summary)});
            rec.outputs.push_back({"posterior_draws.csv", bhm::draws_csv(samples)});
            double max_rhat = 0.0;
            double min_ess = std::numeric_limits<double>::infinity();
            for (const auto& r : summary) {
                if (r.rhat) max_rhat = std::max(max_rhat, *r.rhat);
                if (r.ess) min_ess = std::min(min_ess, *r.ess);
            }
            rec.facts.emplace_back("method", "gibbs");
            rec.facts.emplace_back("chains", std::to_string(mc.chains));
            rec.facts.emplace_back("kept_per_chain", std::to_string(samples.n_kept()));
            rec.facts.emplace_back("max_rhat", fact(max_rhat));
            rec.facts.emplace_back("min_ess", fact(min_ess));
            warnings = samples.info.warnings;
        } else {
            bhm::ViConfig vc = cfg.vi;
            vc.seed = cfg.seed;
            const auto approx = bhm::fit_vi(data, cfg.spec, vc);
            summary = bhm::posterior_summary(approx);
            rec.outputs.push_back({"posterior_summary.csv", bhm::summary_csv(summary)});
            rec.outputs.push_back({"elbo_trace.csv", bhm::elbo_csv(approx)});
            rec.facts.emplace_back("method", "vi");
            rec.facts.emplace_back("iters", std::to_string(vc.iters));
            rec.facts.emplace_back("final_elbo", fact(approx.elbo_trace.empty() ? 0.0 : approx.elbo_trace.back()));
            warnings = approx.info.warnings;
        }
        rec.facts.emplace_back("bic", fact(eval::bhm_bic(data, summary)));
        rec.facts.emplace_back("warnings", joined(warnings, ';'));
    }));

    bool lasso_ok = true;
    try {
        (void)lasso::sector_design(completed, cfg.target);
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::ShapeMismatch) throw StageFailure("lasso", e.what(), e.kind());
        lasso_ok = false;
        report.stages.push_back(absent("lasso", cfg.seed, e.what()));
    }
    if (lasso_ok) {
        report.stages.push_back(timed("lasso", cfg.seed, [&](eval::StageRecord& rec) {
            rec.inputs_sha256 = io::sha256_hex(completed_sha + input_sha);
            const auto soft = run_lasso(completed, cfg);
            const auto mean = run_lasso(impute::mean_impute(input).completed, cfg);
            rec.outputs.push_back({"lasso.json", lasso::fit_json(soft.cv, soft.names)});
            rec.outputs.push_back({"lasso_mean_imputed.json", lasso::fit_json(mean.cv, mean.names)});
            rec.outputs.push_back({"lasso_comparison.csv", "imputation,lambda,cv_rmse,n_selected,selected\n" +
                                                               comparison_row("softimpute", soft) +
                                                               comparison_row("mean", mean)});
            rec.facts.emplace_back("target", std::string(panel::to_string(cfg.target)));
            rec.facts.emplace_back("folds", std::to_string(cfg.cv.folds));
            rec.facts.emplace_back("best_lambda", fact(soft.cv.best_lambda));
        }));
    }

    if (!cfg.run_sweep) {
        report.stages.push_back(absent("sweep", cfg.seed, "disabled"));
    } else {
        report.stages.push_back(timed("sweep", cfg.seed, [&](eval::StageRecord& rec) {
            rec.inputs_sha256 = completed_sha;
            eval::SweepConfig sc = cfg.sweep;
            sc.seed = cfg.seed;
            const auto rows = eval::missingness_sweep(completed, sc);
            rec.outputs.push_back({"sweep.csv", eval::sweep_csv(rows)});
            std::ostringstream summary;
            summary << "mechanism,fraction,method,median_rmse,ok,failed\n";
            for (const auto& c : eval::summarize_sweep(rows)) {
                summary << synth::to_string(c.mechanism) << ',' << io::format_double(c.fraction) << ','
                        << impute::to_string(c.method) << ',' << io::format_double(c.median_rmse) << ',' << c.ok << ','
                        << c.failed << '\n';
            }
            rec.outputs.push_back({"sweep_summary.csv", summary.str()});
            rec.facts.emplace_back("rows", std::to_string(rows.size()));
        }));
    }
    return report;
}

}  // namespace sparsetx::pipeline
