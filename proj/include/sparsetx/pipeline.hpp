#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sparsetx/bhm.hpp"
#include "sparsetx/error.hpp"
#include "sparsetx/eval.hpp"
#include "sparsetx/impute.hpp"
#include "sparsetx/lasso.hpp"
#include "sparsetx/panel.hpp"

namespace sparsetx::pipeline {

enum class Kind { Mcmc, Vi };

/// StageError that remembers which stage failed and what it failed with.
class StageFailure : public Error {
public:
    StageFailure(std::string stage, const std::string& cause, ErrorKind cause_kind)
        : Error(ErrorKind::StageError, "stage '" + stage + "' failed: " + cause), stage_(std::move(stage)), cause_(cause_kind) {}
    const std::string& stage() const noexcept { return stage_; }
    ErrorKind cause() const noexcept { return cause_; }

private:
    std::string stage_;
    ErrorKind cause_;
};

struct Config {
    std::uint64_t seed = 1;
    impute::SoftImputeConfig soft;
    bhm::BhmSpec spec;
    bhm::McmcConfig mcmc;
    bhm::ViConfig vi;
    lasso::CvConfig cv;
    panel::Sector target = panel::Sector::GDP;
    bool run_sweep = false;
    eval::SweepConfig sweep;
    /// Resolved configuration echoed into the manifest.
    std::string config_json = "{}";
};

/// Canonical text used for input hashes: the long CSV of the panel.
std::string panel_digest(const panel::PanelMatrix& m);

/// Runs impute -> bhm -> lasso [-> sweep]. The VI variant fits the model by
/// variational inference and tightens the SoftImpute tolerance tenfold. The
/// lasso stage is marked absent when no country reports every sector; the
/// sweep stage is absent unless enabled. Stage failures throw StageFailure.
/// Every stage seed is cfg.seed.
eval::Report run(Kind kind, const panel::PanelMatrix& input, const std::vector<panel::PanelMatrix>& covariates,
                 const Config& cfg);

}  // namespace sparsetx::pipeline
