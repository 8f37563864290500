#include "sparsetx/cli.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "sparsetx/bhm.hpp"
#include "sparsetx/error.hpp"
#include "sparsetx/eval.hpp"
#include "sparsetx/factor.hpp"
#include "sparsetx/impute.hpp"
#include "sparsetx/io.hpp"
#include "sparsetx/lasso.hpp"
#include "sparsetx/panel.hpp"
#include "sparsetx/pipeline.hpp"
#include "sparsetx/rng.hpp"
#include "sparsetx/synth.hpp"
#include "sparsetx/version.hpp"
#include "sparsetx/wb.hpp"

namespace sparsetx::cli {

namespace {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

enum class Type { Int, UInt, Real, OptReal, Text, Flag, TextList, RealList, Years, Path, PathList };

struct Opt {
    std::string flag;  // without leading dashes
    Type type;
    json def;
    std::string help;
    bool required = false;

    std::string key() const {
        std::string k = flag;
        for (auto& c : k)
            if (c == '-') c = '_';
        return k;
    }
};

using Handler = std::function<eval::Report(const json& cfg)>;

struct Command {
    std::string name;
    std::string about;
    std::vector<Opt> opts;
    Handler handler;
};

std::shared_ptr<spdlog::logger> g_log;

[[noreturn]] void config_error(const std::string& msg) { throw Error(ErrorKind::ConfigError, msg); }

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, sep)) {
        const auto b = cur.find_first_not_of(" \t");
        const auto e = cur.find_last_not_of(" \t");
        if (b != std::string::npos) out.push_back(cur.substr(b, e - b + 1));
    }
    return out;
}

long long parse_int(const std::string& flag, const std::string& s) {
    long long v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) config_error("--" + flag + ": '" + s + "' is not an integer");
    return v;
}

double parse_real(const std::string& flag, const std::string& s) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v)) {
        config_error("--" + flag + ": '" + s + "' is not a finite number");
    }
    return v;
}

json parse_years(const std::string& flag, const std::string& s) {
    const auto colon = s.find(':');
    if (colon == std::string::npos) config_error("--" + flag + ": expected START:END, got '" + s + "'");
    const long long a = parse_int(flag, s.substr(0, colon));
    const long long b = parse_int(flag, s.substr(colon + 1));
    if (a > b) config_error("--" + flag + ": start year after end year");
    return json::array({a, b});
}

/// Value given on the command line.
json from_text(const Opt& o, const std::vector<std::string>& given) {
    const std::string& s = given.back();
    switch (o.type) {
        case Type::Int: return parse_int(o.flag, s);
        case Type::UInt: {
            const long long v = parse_int(o.flag, s);
            if (v < 0) config_error("--" + o.flag + " must be >= 0");
            return static_cast<std::uint64_t>(v);
        }
        case Type::Real:
        case Type::OptReal: return parse_real(o.flag, s);
        case Type::Text:
        case Type::Path: return s;
        case Type::Flag: return true;
        case Type::Years: return parse_years(o.flag, s);
        case Type::TextList:
        case Type::PathList: {
            json out = json::array();
            for (const auto& g : given)
                for (const auto& part : split(g, ',')) out.push_back(part);
            return out;
        }
        case Type::RealList: {
            json out = json::array();
            for (const auto& g : given)
                for (const auto& part : split(g, ',')) out.push_back(parse_real(o.flag, part));
            return out;
        }
    }
    config_error("unhandled option type");
}

/// Value found in the config file.
json from_config(const Opt& o, const json& v) {
    const std::string where = "config key '" + o.key() + "'";
    switch (o.type) {
        case Type::Int:
            if (!v.is_number_integer()) config_error(where + " must be an integer");
            return v;
        case Type::UInt:
            if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)) {
                config_error(where + " must be a nonnegative integer");
            }
            return v.get<std::uint64_t>();
        case Type::Real:
            if (!v.is_number()) config_error(where + " must be a number");
            return v;
        case Type::OptReal:
            if (!v.is_number() && !v.is_null()) config_error(where + " must be a number or null");
            return v;
        case Type::Text:
        case Type::Path:
            if (!v.is_string()) config_error(where + " must be a string");
            return v;
        case Type::Flag:
            if (!v.is_boolean()) config_error(where + " must be true or false");
            return v;
        case Type::Years:
            if (v.is_string()) return parse_years(o.flag, v.get<std::string>());
            if (!v.is_array() || v.size() != 2 || !v[0].is_number_integer() || !v[1].is_number_integer() ||
                v[0].get<long long>() > v[1].get<long long>()) {
                config_error(where + " must be \"START:END\" or [START, END]");
            }
            return v;
        case Type::TextList:
        case Type::PathList:
            if (v.is_string()) return from_text(o, {v.get<std::string>()});
            if (!v.is_array()) config_error(where + " must be a list of strings");
            for (const auto& e : v)
                if (!e.is_string()) config_error(where + " must be a list of strings");
            return v;
        case Type::RealList:
            if (!v.is_array()) config_error(where + " must be a list of numbers");
            for (const auto& e : v)
                if (!e.is_number()) config_error(where + " must be a list of numbers");
            return v;
    }
    config_error("unhandled option type");
}

const char* type_name(Type t) {
    switch (t) {
        case Type::Int: return "INT";
        case Type::UInt: return "UINT";
        case Type::Real: return "REAL";
        case Type::OptReal: return "REAL";
        case Type::Text: return "TEXT";
        case Type::Flag: return "";
        case Type::TextList: return "TEXT,...";
        case Type::RealList: return "REAL,...";
        case Type::Years: return "START:END";
        case Type::Path: return "FILE";
        case Type::PathList: return "FILE...";
    }
    return "TEXT";
}

std::string shown_default(const json& def) {
    if (def.is_string()) return def.get<std::string>();
    if (def.is_array() && def.size() == 2 && def[0].is_number_integer()) {
        return std::to_string(def[0].get<long long>()) + ":" + std::to_string(def[1].get<long long>());
    }
    if (def.is_array()) {
        std::string out;
        for (const auto& e : def) out += (out.empty() ? "" : ",") + (e.is_string() ? e.get<std::string>() : e.dump());
        return out;
    }
    return def.dump();
}

// ---- typed views of the resolved config ----

int as_int(const json& c, const char* k) { return c.at(k).get<int>(); }
double as_real(const json& c, const char* k) { return c.at(k).get<double>(); }
std::string as_text(const json& c, const char* k) { return c.at(k).get<std::string>(); }
std::optional<double> as_opt(const json& c, const char* k) {
    if (!c.contains(k) || c.at(k).is_null()) return std::nullopt;
    return c.at(k).get<double>();
}
std::vector<std::string> as_list(const json& c, const char* k) { return c.at(k).get<std::vector<std::string>>(); }
std::uint64_t seed_of(const json& c) { return c.at("seed").get<std::uint64_t>(); }
unsigned threads_of(const json& c) { return static_cast<unsigned>(std::max(0, as_int(c, "threads"))); }

impute::SoftImputeConfig soft_of(const json& c) {
    impute::SoftImputeConfig s;
    s.lambda_as_fraction = as_real(c, "lambda_fraction");
    if (const auto l = as_opt(c, "lambda")) {
        s.lambda = *l;
        s.lambda_as_fraction.reset();
    }
    s.max_iters = as_int(c, "max_iters");
    s.tol = as_real(c, "tol");
    s.debias = c.at("debias").get<bool>();
    s.centering = c.at("center").get<bool>() ? impute::Centering::Column : impute::Centering::None;
    return s;
}

bhm::BhmSpec spec_of(const json& c) {
    bhm::BhmSpec s;
    s.prior_sigma_scale = as_opt(c, "prior_sigma_scale");
    s.fixed_sigma = as_opt(c, "fixed_sigma");
    return s;
}

bhm::McmcConfig mcmc_of(const json& c) {
    bhm::McmcConfig m;
    m.chains = as_int(c, "chains");
    m.warmup = as_int(c, "warmup");
    m.samples = as_int(c, "samples");
    m.thin = as_int(c, "thin");
    m.seed = seed_of(c);
    m.threads = threads_of(c);
    return m;
}

bhm::ViConfig vi_of(const json& c) {
    bhm::ViConfig v;
    v.iters = as_int(c, "iters");
    v.learning_rate = as_real(c, "learning_rate");
    v.seed = seed_of(c);
    return v;
}

lasso::CvConfig cv_of(const json& c) {
    lasso::CvConfig cv;
    cv.folds = as_int(c, "cv_folds");
    cv.n_lambdas = as_int(c, "n_lambdas");
    cv.ratio = as_real(c, "lambda_ratio");
    cv.seed = seed_of(c);
    cv.threads = threads_of(c);
    return cv;
}

eval::SweepConfig sweep_of(const json& c) {
    eval::SweepConfig s;
    s.mechanisms.clear();
    for (const auto& m : as_list(c, "mechanisms")) s.mechanisms.push_back(synth::parse_mechanism(m));
    s.fractions = c.at("fractions").get<std::vector<double>>();
    s.methods.clear();
    for (const auto& m : as_list(c, "methods")) s.methods.push_back(impute::parse_method(m));
    s.reps = as_int(c, "reps");
    s.seed = seed_of(c);
    s.threads = threads_of(c);
    s.options.soft.lambda_as_fraction = as_real(c, "lambda_fraction");
    return s;
}

panel::Sector target_of(const json& c) { return panel::parse_sector(as_text(c, "target")); }

panel::PanelMatrix load_panel(const std::string& path) { return panel::to_wide_matrix(panel::load_long_csv(path)); }

std::string file_digest(const std::vector<std::string>& paths) {
    std::string all;
    for (const auto& p : paths) all += io::sha256_hex(io::read_file(p));
    return paths.size() == 1 ? all : io::sha256_hex(all);
}

std::string fact(double v) { return io::format_double(v); }

/// The output location is not part of a run's identity.
std::string manifest_config(const json& c) {
    json copy = c;
    copy.erase("out");
    return copy.dump();
}

std::string config_digest(const json& c) { return io::sha256_hex(manifest_config(c)); }

eval::Report single_stage(const std::string& command, const json& cfg, eval::StageRecord rec) {
    eval::Report r;
    r.pipeline = command;
    r.seed = seed_of(cfg);
    r.config_json = manifest_config(cfg);
    rec.stage = command;
    rec.present = true;
    rec.seed = r.seed;
    r.stages.push_back(std::move(rec));
    return r;
}

std::string long_panel(const panel::PanelMatrix& m) { return panel::long_csv(panel::to_long(m)); }

// ---- subcommands ----

eval::Report cmd_simulate(const json& c) {
    synth::SynthConfig sc;
    sc.n_countries = as_int(c, "countries");
    sc.year_start = c.at("years")[0].get<int>();
    sc.year_end = c.at("years")[1].get<int>();
    sc.rank = as_int(c, "rank");
    sc.noise_sd = as_real(c, "noise_sd");
    sc.share_noise_sd = as_real(c, "share_noise_sd");
    sc.seed = seed_of(c);
    sc.validate();
    const std::string kind = as_text(c, "kind");

    eval::StageRecord rec;
    rec.inputs_sha256 = config_digest(c);
    panel::PanelMatrix full;
    if (kind == "shares") {
        const auto shares = synth::gen_sector_shares(sc);
        full = synth::gen_value_added_panel(sc, shares);
        const auto summary = panel::summarize_shares(shares);
        rec.outputs.push_back({"shares.csv", panel::shares_csv(shares)});
        rec.outputs.push_back({"share_summary.csv", panel::share_summary_csv(summary)});
        double mean_agr = 0.0;
        for (const auto& s : summary) mean_agr += s.mean.agriculture / static_cast<double>(summary.size());
        rec.facts.emplace_back("mean_agriculture_share", fact(mean_agr));
    } else if (kind == "lowrank") {
        full = synth::gen_lowrank_panel(sc).panel;
    } else if (kind == "hierarchical") {
        const auto hp = synth::gen_hierarchical_panel(sc);
        full = hp.y;
        rec.outputs.push_back({"covariate.csv", long_panel(hp.x)});
        const synth::HierarchicalTruth truth;
        json t;
        t["beta0"] = truth.beta0;
        t["beta1"] = truth.beta1;
        t["sigma"] = truth.sigma;
        t["gamma"] = std::vector<double>(hp.gamma.data(), hp.gamma.data() + hp.gamma.size());
        t["delta"] = std::vector<double>(hp.delta.data(), hp.delta.data() + hp.delta.size());
        rec.outputs.push_back({"truth.json", t.dump(2) + "\n"});
    } else {
        config_error("--kind must be shares, lowrank or hierarchical, got '" + kind + "'");
    }

    const double frac = as_real(c, "missing_fraction");
    if (frac > 0.0) {
        const synth::MissingnessSpec ms{synth::parse_mechanism(as_text(c, "mechanism")), frac,
                                        stream_id({sc.seed, tag_of("simulate-mask")})};
        const auto masked = synth::inject_missing(full, ms);
        rec.outputs.push_back({"panel.csv", long_panel(masked)});
        rec.outputs.push_back({"complete_panel.csv", long_panel(full)});
        rec.facts.emplace_back("missing_fraction", fact(panel::missing_fraction(masked)));
    } else {
        rec.outputs.push_back({"panel.csv", long_panel(full)});
        rec.facts.emplace_back("missing_fraction", "0");
    }
    rec.facts.emplace_back("kind", kind);
    rec.facts.emplace_back("entities", std::to_string(full.rows()));
    rec.facts.emplace_back("years", std::to_string(full.cols()));
    return single_stage("simulate", c, std::move(rec));
}

eval::Report cmd_fetch(const json& c) {
    std::shared_ptr<wb::HttpTransport> transport;
    const std::string fixtures = as_text(c, "fixtures");
    if (!fixtures.empty()) transport = std::make_shared<wb::FixtureTransport>(fixtures);
    else transport = std::make_shared<wb::HttplibTransport>();
    wb::Client client(transport);

    wb::IndicatorSet set;
    set.codes[panel::Sector::Agriculture] = as_text(c, "agriculture_code");
    set.codes[panel::Sector::Industry] = as_text(c, "industry_code");
    set.codes[panel::Sector::Services] = as_text(c, "services_code");
    set.codes[panel::Sector::GDP] = as_text(c, "gdp_code");
    const std::string cache = as_text(c, "cache_dir");
    const fs::path cache_dir = cache.empty() ? wb::default_cache_dir() : fs::path(cache);
    const auto years = c.at("years");
    const auto m = client.fetch_panel(as_list(c, "countries"), years[0].get<int>(), years[1].get<int>(), cache_dir,
                                      c.at("offline").get<bool>(), set);
    g_log->info("fetched {} x {} panel with {} network requests", m.rows(), m.cols(), client.network_requests());

    eval::StageRecord rec;
    rec.inputs_sha256 = config_digest(c);
    rec.outputs.push_back({"panel.csv", long_panel(m)});
    rec.outputs.push_back({"panel_wide.csv", panel::wide_csv(m)});
    rec.facts.emplace_back("entities", std::to_string(m.rows()));
    rec.facts.emplace_back("years", std::to_string(m.cols()));
    rec.facts.emplace_back("missing_fraction", fact(panel::missing_fraction(m)));
    rec.facts.emplace_back("network_requests", std::to_string(client.network_requests()));
    return single_stage("fetch", c, std::move(rec));
}

eval::Report cmd_impute(const json& c) {
    const std::string input = as_text(c, "input");
    const auto m = load_panel(input);
    eval::MethodOptions opt;
    opt.soft = soft_of(c);
    opt.forest.n_trees = as_int(c, "trees");
    opt.forest.threads = threads_of(c);
    opt.chained_sweeps = as_int(c, "sweeps");
    const auto method = impute::parse_method(as_text(c, "method"));
    const auto result = eval::run_imputer(m, method, opt, seed_of(c));

    eval::StageRecord rec;
    rec.inputs_sha256 = file_digest({input});
    rec.outputs.push_back({"imputed_panel.csv", long_panel(result.completed)});
    rec.outputs.push_back({"imputation_trace.csv", impute::trace_csv(result)});
    rec.facts.emplace_back("method", impute::to_string(method));
    rec.facts.emplace_back("missing_fraction", fact(panel::missing_fraction(m)));
    rec.facts.emplace_back("iterations", std::to_string(result.iterations));
    rec.facts.emplace_back("converged", result.converged ? "true" : "false");
    if (method == impute::Method::SoftImpute) rec.facts.emplace_back("lambda", fact(result.lambda));
    return single_stage("impute", c, std::move(rec));
}

eval::Report cmd_fit_bhm(const json& c) {
    const std::string input = as_text(c, "input");
    const auto cov_paths = as_list(c, "covariate");
    const auto y = load_panel(input);
    std::vector<panel::PanelMatrix> covs;
    std::vector<std::string> names;
    for (const auto& p : cov_paths) {
        covs.push_back(load_panel(p));
        names.push_back(fs::path(p).stem().string());
    }
    const auto data = bhm::from_panel(y, covs, names);
    const auto spec = spec_of(c);
    const std::string method = as_text(c, "method");

    eval::StageRecord rec;
    std::vector<std::string> all = {input};
    all.insert(all.end(), cov_paths.begin(), cov_paths.end());
    rec.inputs_sha256 = file_digest(all);
    std::vector<bhm::SummaryRow> summary;
    std::vector<std::string> warnings;
    if (method == "mcmc") {
        const auto samples = bhm::fit_mcmc(data, spec, mcmc_of(c));
        summary = bhm::posterior_summary(samples);
        rec.outputs.push_back({"posterior_summary.csv", bhm::summary_csv(summary)});
        rec.outputs.push_back({"posterior_draws.csv", bhm::draws_csv(samples)});
        warnings = samples.info.warnings;
    } else if (method == "vi") {
        const auto approx = bhm::fit_vi(data, spec, vi_of(c));
        summary = bhm::posterior_summary(approx);
        rec.outputs.push_back({"posterior_summary.csv", bhm::summary_csv(summary)});
        rec.outputs.push_back({"elbo_trace.csv", bhm::elbo_csv(approx)});
        warnings = approx.info.warnings;
    } else {
        config_error("--method must be mcmc or vi, got '" + method + "'");
    }
    for (const auto& w : warnings) g_log->warn("{}", w);
    rec.facts.emplace_back("method", method);
    rec.facts.emplace_back("bic", fact(eval::bhm_bic(data, summary)));
    return single_stage("fit-bhm", c, std::move(rec));
}

eval::Report cmd_lasso(const json& c) {
    const std::string input = as_text(c, "input");
    const auto m = load_panel(input);
    const auto design = lasso::sector_design(m, target_of(c));
    const auto z = lasso::standardize(design.X);
    for (const auto& w : z.warnings) g_log->warn("{}", w);

    eval::StageRecord rec;
    rec.inputs_sha256 = file_digest({input});
    const auto cv = cv_of(c);
    if (const auto lambda = as_opt(c, "lambda")) {
        const auto fit = lasso::fit_lasso(z.Z, design.y, *lambda, cv.options);
        rec.outputs.push_back({"lasso.json", lasso::fit_json(fit, design.names)});
        rec.facts.emplace_back("lambda", fact(*lambda));
    } else {
        const auto res = lasso::cv_lasso(z.Z, design.y, cv);
        rec.outputs.push_back({"lasso.json", lasso::fit_json(res, design.names)});
        rec.facts.emplace_back("lambda", fact(res.best_lambda));
        rec.facts.emplace_back("lambda_1se", fact(res.one_se_lambda));
    }
    rec.facts.emplace_back("target", as_text(c, "target"));
    rec.facts.emplace_back("rows", std::to_string(design.y.size()));
    return single_stage("lasso", c, std::move(rec));
}

eval::Report cmd_factor(const json& c) {
    const std::string input = as_text(c, "input");
    const auto m = load_panel(input);
    if (!m.fully_observed()) config_error("factor needs a fully observed panel; run impute first");
    const Eigen::MatrixXd Y = factor::panel_observations(m);
    factor::FactorConfig fc;
    fc.k = as_int(c, "k");
    fc.starts = as_int(c, "starts");
    fc.max_iters = as_int(c, "max_iters");
    fc.tol = as_real(c, "tol");
    fc.seed = seed_of(c);
    fc.threads = threads_of(c);
    const auto model = factor::fit_em(Y, fc);

    std::vector<std::string> vars;
    for (const auto& e : m.entities()) vars.push_back(e.label());
    std::vector<std::string> rows;
    for (const int y : m.years()) rows.push_back(std::to_string(y));
    std::string trace = "iter,loglik\n";
    for (std::size_t i = 0; i < model.loglik_trace.size(); ++i)
        trace += std::to_string(i + 1) + "," + io::format_double(model.loglik_trace[i]) + "\n";

    eval::StageRecord rec;
    rec.inputs_sha256 = file_digest({input});
    rec.outputs.push_back({"loadings.csv", factor::loadings_csv(model, vars)});
    rec.outputs.push_back({"scores.csv", factor::scores_csv(factor::factor_scores(model, Y), rows)});
    rec.outputs.push_back({"loglik_trace.csv", trace});
    rec.facts.emplace_back("k", std::to_string(model.k));
    rec.facts.emplace_back("loglik", fact(model.loglik_trace.empty() ? 0.0 : model.loglik_trace.back()));
    rec.facts.emplace_back("iterations", std::to_string(model.iterations));
    rec.facts.emplace_back("converged", model.converged ? "true" : "false");
    return single_stage("factor", c, std::move(rec));
}

eval::Report cmd_sweep(const json& c) {
    const std::string input = as_text(c, "input");
    panel::PanelMatrix truth;
    eval::StageRecord rec;
    if (!input.empty()) {
        truth = load_panel(input);
        rec.inputs_sha256 = file_digest({input});
    } else {
        synth::SynthConfig sc;
        sc.n_countries = as_int(c, "countries");
        sc.year_start = c.at("years")[0].get<int>();
        sc.year_end = c.at("years")[1].get<int>();
        sc.rank = as_int(c, "rank");
        // Entries of U V^T have sd sqrt(rank); the default noise is 1% of that.
        sc.noise_sd = as_opt(c, "noise_sd").value_or(0.01 * std::sqrt(static_cast<double>(sc.rank)));
        sc.seed = seed_of(c);
        truth = synth::gen_lowrank_panel(sc).panel;
        rec.inputs_sha256 = config_digest(c);
    }
    const auto rows = eval::missingness_sweep(truth, sweep_of(c));
    std::ostringstream summary;
    summary << "mechanism,fraction,method,median_rmse,ok,failed\n";
    for (const auto& cell : eval::summarize_sweep(rows)) {
        summary << synth::to_string(cell.mechanism) << ',' << io::format_double(cell.fraction) << ','
                << impute::to_string(cell.method) << ',' << io::format_double(cell.median_rmse) << ',' << cell.ok << ','
                << cell.failed << '\n';
    }
    for (const auto& r : rows)
        if (!r.error.empty()) g_log->warn("{} at {} rep {}: {}", impute::to_string(r.method), r.fraction, r.rep, r.error);
    rec.outputs.push_back({"sweep.csv", eval::sweep_csv(rows)});
    rec.outputs.push_back({"sweep_summary.csv", summary.str()});
    rec.facts.emplace_back("rows", std::to_string(rows.size()));
    return single_stage("sweep", c, std::move(rec));
}

eval::Report cmd_pipeline(pipeline::Kind kind, const json& c) {
    const auto input = load_panel(as_text(c, "input"));
    std::vector<panel::PanelMatrix> covs;
    for (const auto& p : as_list(c, "covariate")) covs.push_back(load_panel(p));
    pipeline::Config pc;
    pc.seed = seed_of(c);
    pc.soft = soft_of(c);
    pc.spec = spec_of(c);
    pc.mcmc = mcmc_of(c);
    pc.vi = vi_of(c);
    pc.cv = cv_of(c);
    pc.target = target_of(c);
    pc.run_sweep = c.at("sweep").get<bool>();
    pc.sweep = sweep_of(c);
    pc.config_json = manifest_config(c);
    return pipeline::run(kind, input, covs, pc);
}

// ---- option tables ----

std::vector<Opt> soft_opts() {
    return {
        {"lambda-fraction", Type::Real, 0.02, "SoftImpute penalty as a fraction of the top singular value"},
        {"lambda", Type::OptReal, nullptr, "absolute SoftImpute penalty (overrides --lambda-fraction)"},
        {"max-iters", Type::Int, 1000, "SoftImpute iteration cap"},
        {"tol", Type::Real, 1e-5, "SoftImpute relative-change tolerance"},
        {"debias", Type::Flag, false, "least-squares refit of retained singular values"},
        {"center", Type::Flag, false, "start missing cells at observed column means instead of zero"},
    };
}

std::vector<Opt> bhm_opts() {
    return {
        {"chains", Type::Int, 4, "MCMC chains"},
        {"warmup", Type::Int, 1000, "MCMC warmup iterations per chain"},
        {"samples", Type::Int, 1000, "MCMC kept iterations per chain (before thinning)"},
        {"thin", Type::Int, 1, "MCMC thinning interval"},
        {"iters", Type::Int, 3000, "VI iterations"},
        {"learning-rate", Type::Real, 0.3, "VI base step size"},
        {"prior-sigma-scale", Type::OptReal, nullptr, "half-Normal scale of sigma (default 2.5 sd(y))"},
        {"fixed-sigma", Type::OptReal, nullptr, "hold sigma fixed at this value"},
    };
}

std::vector<Opt> lasso_opts() {
    return {
        {"target", Type::Text, "GDP", "sector regressed on the other sectors"},
        {"cv-folds", Type::Int, 5, "cross-validation folds"},
        {"n-lambdas", Type::Int, 100, "lambda grid size"},
        {"lambda-ratio", Type::Real, 1e-3, "smallest lambda as a fraction of lambda_max"},
    };
}

std::vector<Opt> sweep_opts() {
    return {
        {"mechanisms", Type::TextList, json::array({"MCAR"}), "missingness mechanisms: MCAR, BlockByCountry, TailYears"},
        {"fractions", Type::RealList, json::array({0.1, 0.2, 0.3, 0.4, 0.5, 0.6}), "missing fractions"},
        {"methods", Type::TextList, json::array({"softimpute", "mean"}), "imputers: softimpute, mean, interp, chained"},
        {"reps", Type::Int, 10, "replications per cell"},
    };
}

template <class... Lists>
std::vector<Opt> concat(std::vector<Opt> first, Lists... rest) {
    (first.insert(first.end(), rest.begin(), rest.end()), ...);
    return first;
}

std::vector<Command> commands() {
    const Opt input{"input", Type::Path, "", "long CSV panel (country,sector,year,value)", true};
    const Opt covariate{"covariate", Type::PathList, json::array(), "covariate panels (long CSV, same layout); repeatable"};
    std::vector<Command> out;

    out.push_back({"simulate", "Generate a synthetic panel",
                   {
                       {"kind", Type::Text, "shares", "shares (sector value added), lowrank or hierarchical"},
                       {"countries", Type::Int, 5, "number of countries"},
                       {"years", Type::Years, json::array({1995, 2020}), "year range START:END"},
                       {"rank", Type::Int, 2, "rank of the lowrank panel"},
                       {"noise-sd", Type::Real, 0.01, "noise sd of the lowrank panel"},
                       {"share-noise-sd", Type::Real, 0.01, "noise sd on sector shares"},
                       {"missing-fraction", Type::Real, 0.0, "fraction of cells to mask"},
                       {"mechanism", Type::Text, "MCAR", "masking mechanism"},
                   },
                   cmd_simulate});
    out.push_back({"fetch", "Download sector value added and GDP from the World Bank API",
                   {
                       {"countries", Type::TextList, json::array({"KEN", "NGA", "ZAF"}), "ISO3 country codes"},
                       {"years", Type::Years, json::array({1991, 2020}), "year range START:END"},
                       {"cache-dir", Type::Text, "", "response cache (default $SPARSETX_CACHE_DIR or ~/.cache/sparsetx)"},
                       {"offline", Type::Flag, false, "serve from the cache only"},
                       {"fixtures", Type::Path, "", "serve recorded responses from this directory"},
                       {"agriculture-code", Type::Text, "NV.AGR.TOTL.CD", "agriculture indicator"},
                       {"industry-code", Type::Text, "NV.IND.TOTL.CD", "industry indicator"},
                       {"services-code", Type::Text, "NV.SRV.TOTL.CD", "services indicator"},
                       {"gdp-code", Type::Text, "NY.GDP.MKTP.CD", "GDP indicator"},
                   },
                   cmd_fetch});
    out.push_back({"impute", "Complete a panel",
                   concat({input, {"method", Type::Text, "softimpute", "softimpute, mean, interp or chained"}}, soft_opts(),
                          std::vector<Opt>{{"trees", Type::Int, 100, "forest size for chained imputation"},
                                           {"sweeps", Type::Int, 3, "chained-equation sweeps"}}),
                   cmd_impute});
    out.push_back({"fit-bhm", "Fit the hierarchical panel model",
                   concat({input, covariate, {"method", Type::Text, "mcmc", "mcmc or vi"}}, bhm_opts()), cmd_fit_bhm});
    out.push_back({"lasso", "LASSO of one sector on the others",
                   concat({input, {"lambda", Type::OptReal, nullptr, "fixed penalty; cross-validate when unset"}},
                          lasso_opts()),
                   cmd_lasso});
    out.push_back({"factor", "Maximum-likelihood factor analysis of a completed panel",
                   {input,
                    {"k", Type::Int, 2, "number of factors"},
                    {"starts", Type::Int, 1, "EM starts"},
                    {"max-iters", Type::Int, 1000, "EM iteration cap"},
                    {"tol", Type::Real, 1e-8, "relative log-likelihood tolerance"}},
                   cmd_factor});
    Opt sweep_input = input;
    sweep_input.required = false;
    sweep_input.help = "fully observed ground-truth panel; a synthetic low-rank panel when unset";
    out.push_back({"sweep", "Imputation accuracy across missingness levels",
                   concat({sweep_input,
                           {"countries", Type::Int, 25, "synthetic panel countries (4 rows each)"},
                           {"years", Type::Years, json::array({1981, 2020}), "synthetic panel years"},
                           {"rank", Type::Int, 2, "synthetic panel rank"},
                           {"noise-sd", Type::OptReal, nullptr, "synthetic noise sd (default 1% of the signal sd)"},
                           {"lambda-fraction", Type::Real, 0.02, "SoftImpute penalty fraction"}},
                          sweep_opts()),
                   cmd_sweep});
    const auto pipeline_opts = concat({input, covariate, {"sweep", Type::Flag, false, "add the missingness sweep stage"}},
                                      soft_opts(), bhm_opts(), lasso_opts(), sweep_opts());
    out.push_back({"pipeline-mcmc", "Impute, fit the model by MCMC, select predictors", pipeline_opts,
                   [](const json& c) { return cmd_pipeline(pipeline::Kind::Mcmc, c); }});
    out.push_back({"pipeline-vi", "Impute, fit the model by VI, select predictors", pipeline_opts,
                   [](const json& c) { return cmd_pipeline(pipeline::Kind::Vi, c); }});

    const std::uint64_t default_seed = 1;
    for (auto& cmd : out) {
        cmd.opts.insert(cmd.opts.begin(), Opt{"seed", Type::UInt, cmd.name == "simulate" ? 7 : default_seed, "RNG seed"});
        cmd.opts.push_back({"threads", Type::Int, 0, "worker threads (0 = hardware)"});
        cmd.opts.push_back({"out", Type::Text, "sparsetx-out", "output directory"});
    }
    return out;
}

struct Slot {
    std::vector<std::string> values;
    bool flag = false;
    CLI::Option* option = nullptr;
};

json resolve(const Command& cmd, std::map<std::string, Slot>& slots, const std::string& config_path) {
    json cfg = json::object();
    for (const auto& o : cmd.opts) cfg[o.key()] = o.def;

    if (!config_path.empty()) {
        json file;
        try {
            file = json::parse(io::read_file(config_path));
        } catch (const json::exception& e) {
            config_error("config file " + config_path + " is not valid JSON: " + e.what());
        } catch (const Error& e) {
            config_error(e.what());
        }
        if (!file.is_object()) config_error("config file must hold a JSON object");
        for (const auto& [key, value] : file.items()) {
            const auto it = std::find_if(cmd.opts.begin(), cmd.opts.end(), [&](const Opt& o) { return o.key() == key; });
            if (it == cmd.opts.end()) config_error("unknown config key '" + key + "' for " + cmd.name);
            cfg[key] = from_config(*it, value);
        }
    }
    for (const auto& o : cmd.opts) {
        const auto& s = slots.at(o.flag);
        if (s.option->count() == 0) continue;
        cfg[o.key()] = o.type == Type::Flag ? json(true) : from_text(o, s.values);
    }
    for (const auto& o : cmd.opts) {
        const auto& v = cfg[o.key()];
        if (o.required && (!v.is_string() || v.get<std::string>().empty())) config_error("--" + o.flag + " is required");
        std::vector<std::string> paths;
        if (o.type == Type::Path && v.is_string() && !v.get<std::string>().empty()) paths.push_back(v.get<std::string>());
        if (o.type == Type::PathList) paths = v.get<std::vector<std::string>>();
        for (const auto& p : paths)
            if (!fs::exists(p)) config_error("--" + o.flag + ": no such file " + p);
    }
    return cfg;
}

void error_line(const std::string& error, ErrorKind kind, const std::string& stage, const std::string& message) {
    json j;
    j["error"] = error;
    j["kind"] = std::string(to_string(kind));
    if (!stage.empty()) j["stage"] = stage;
    j["message"] = message;
    std::cerr << j.dump() << std::endl;
}

}  // namespace

int run(int argc, const char* const* argv) {
    g_log = std::make_shared<spdlog::logger>("sparsetx", std::make_shared<spdlog::sinks::stderr_sink_st>());
    g_log->set_pattern("[%l] %v");
    g_log->set_level(spdlog::level::info);

    CLI::App app{"Sparse-panel toolkit: matrix completion, hierarchical models, LASSO, factor analysis"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    auto cmds = commands();
    std::map<std::string, std::map<std::string, Slot>> slots;
    std::string config_path;
    bool quiet = false;
    bool verbose = false;
    std::vector<std::pair<CLI::App*, const Command*>> subs;
    for (const auto& cmd : cmds) {
        auto* sub = app.add_subcommand(cmd.name, cmd.about);
        sub->add_option("--config", config_path, "JSON config file; flags take precedence")->check(CLI::ExistingFile);
        sub->add_flag("-q,--quiet", quiet, "only log errors");
        sub->add_flag("-v,--verbose", verbose, "debug logging");
        auto& mine = slots[cmd.name];
        for (const auto& o : cmd.opts) {
            auto& slot = mine[o.flag];
            std::string help = o.help;
            if (o.type == Type::Flag) {
                slot.option = sub->add_flag("--" + o.flag, slot.flag, help);
                continue;
            }
            if (o.required) help += " (required)";
            else if (!o.def.is_null() && !(o.def.is_string() && o.def.get<std::string>().empty()))
                help += " [default: " + shown_default(o.def) + "]";
            if (o.type == Type::TextList || o.type == Type::PathList || o.type == Type::RealList) {
                slot.option = sub->add_option("--" + o.flag, slot.values, help);
            } else {
                slot.option = sub->add_option("--" + o.flag, slot.values, help)->expected(1);
            }
            slot.option->type_name(type_name(o.type));
        }
        subs.emplace_back(sub, &cmd);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        error_line("ConfigError", ErrorKind::ConfigError, "", e.what());
        return kExitConfig;
    }

    const Command* cmd = nullptr;
    for (const auto& [sub, c] : subs)
        if (sub->parsed()) cmd = c;
    if (quiet) g_log->set_level(spdlog::level::err);
    if (verbose) g_log->set_level(spdlog::level::debug);

    json cfg;
    try {
        cfg = resolve(*cmd, slots.at(cmd->name), config_path);
    } catch (const Error& e) {
        error_line("ConfigError", e.kind(), "", e.what());
        return kExitConfig;
    }
    json echo;
    echo["command"] = cmd->name;
    echo["seed"] = cfg.at("seed");
    echo["config"] = cfg;
    std::cerr << echo.dump() << std::endl;

    try {
        const auto t0 = std::chrono::steady_clock::now();
        auto report = cmd->handler(cfg);
        if (report.stages.size() == 1 && report.stages[0].wall_time_s == 0.0)
            report.stages[0].wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const fs::path out = as_text(cfg, "out");
        eval::pipeline_report(out, report);
        for (const auto& s : report.stages)
            g_log->info("{}: {} ({:.3f} s)", s.stage, s.present ? "done" : "absent", s.wall_time_s);
        g_log->info("wrote {}", (out / "manifest.json").string());
    } catch (const pipeline::StageFailure& e) {
        const bool config = e.cause() == ErrorKind::InvalidConfig || e.cause() == ErrorKind::ConfigError;
        error_line(config ? "ConfigError" : "StageError", e.cause(), e.stage(), e.what());
        return config ? kExitConfig : kExitStage;
    } catch (const Error& e) {
        const bool config = e.kind() == ErrorKind::InvalidConfig || e.kind() == ErrorKind::ConfigError;
        error_line(config ? "ConfigError" : "StageError", e.kind(), cmd->name, e.what());
        return config ? kExitConfig : kExitStage;
    } catch (const std::exception& e) {
        error_line("StageError", ErrorKind::StageError, cmd->name, e.what());
        return kExitStage;
    }
    return kExitOk;
}

int run(const std::vector<std::string>& args) {
    std::vector<const char*> argv{"sparsetx"};
    for (const auto& a : args) argv.push_back(a.c_str());
    return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace sparsetx::cli
