#pragma once

#include "deepchoice/crossfit.hpp"
#include "deepchoice/dataio.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace deepchoice {

enum class LambdaMode {
    Pooled,   // average over every observed contrast row (default)
    OwnRows,  // average over the respondent's own rows only
};

/// Per-respondent information matrices Lambda(Z_i), already ridged.
struct LambdaSet {
    std::vector<Matrix> perRespondent;
    std::vector<double> ridge;  // ridge actually added for each respondent
    LambdaMode mode = LambdaMode::Pooled;
};

/// Lambda(Z_i) = mean over contrast rows dx of G'(dx' beta_i) dx dx' + ridge I.
/// Without an explicit ridge, 1e-6 * trace / p is used for each respondent.
LambdaSet estimateLambda(const PreferenceMatrix& pm, const ConjointDataset& ds,
                         std::optional<double> ridge = std::nullopt, LambdaMode mode = LambdaMode::Pooled);

struct InfluenceTable {
    RowMatrix psi;  // N x p
    Vector ghat;    // N
    LambdaSet lambda;
    bool plugIn = false;
};

/// psi_it = beta_i + Lambda_i^{-1} dx_it (y_it - G(dx_it' beta_i)).
/// Throws InferenceError when a Lambda_i is not positive definite.
InfluenceTable influence(const PreferenceMatrix& pm, const ConjointDataset& ds, const LambdaSet& lambda);
/// Uncorrected table: psi_it = beta_i.
InfluenceTable plugInInfluence(const PreferenceMatrix& pm, const ConjointDataset& ds);

struct DmlEstimate {
    std::vector<std::string> columnNames;
    Vector theta;
    Vector seClustered;
    Vector seIid;
    Vector ciLow;
    Vector ciHigh;
    Vector seRatio;
    Vector pValues;
    std::size_t respondents = 0;
    std::size_t rows = 0;
    bool centered = false;
    bool plugIn = false;

    std::size_t width() const { return static_cast<std::size_t>(theta.size()); }
    bool covers(std::size_t k, double truth) const { return ciLow[static_cast<Eigen::Index>(k)] <= truth && truth <= ciHigh[static_cast<Eigen::Index>(k)]; }
};

constexpr double kNormal975 = 1.96;

/// theta = column means of psi. Clustered variance
/// M/(M-1) * N^-2 * sum_m (sum_{t in m} psi)^2, with cluster sums taken about
/// zero (as printed) unless `centered` subtracts theta first.
DmlEstimate estimate(const InfluenceTable& it, const ConjointDataset& ds, bool centered = false);

struct DmlOptions {
    std::optional<double> ridge;
    LambdaMode mode = LambdaMode::Pooled;
    bool centered = false;
    bool plugIn = false;
};

/// Lambda, psi and estimate in one call.
DmlEstimate debiasedEstimate(const PreferenceMatrix& pm, const ConjointDataset& ds, const DmlOptions& opt = {});

struct ProbeResult {
    std::vector<double> steps;  // includes r = 0
    Matrix theta;               // steps x p, DML estimate at beta + r h
    Matrix plugIn;              // steps x p, mean(beta + r h)
    Vector linear;              // fitted d theta / dr at 0
    Vector quadratic;
    Vector plugInSlope;
};

/// Re-runs the full psi pipeline at beta + r h over the step grid (default
/// +-{0.01, 0.02, 0.05}) and fits theta(r) = a + b r + c r^2 per column.
ProbeResult orthogonalityProbe(const PreferenceMatrix& pm, const ConjointDataset& ds, const Matrix& direction,
                               std::vector<double> steps = {}, const DmlOptions& opt = {});

void writeEstimateCsv(const DmlEstimate& est, const std::filesystem::path& path);
nlohmann::json toJson(const DmlEstimate& est);
DmlEstimate estimateFromJson(const nlohmann::json& j);

}  // namespace deepchoice
