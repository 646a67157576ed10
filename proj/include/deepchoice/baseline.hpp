#pragma once

#include "deepchoice/crossfit.hpp"
#include "deepchoice/dataio.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace deepchoice {

/// Homogeneous no-intercept logit of y on deltaX. Dropped (collinear) columns
/// carry NaN coefficients and standard errors.
struct LogitFit {
    Vector coef;
    Vector seClustered;
    Vector seIid;
    std::vector<bool> dropped;
    bool converged = false;
    std::size_t iterations = 0;
    double logLik = 0.0;
    std::vector<double> logLikTrace;  // starting value, then one per iteration
    double gradientNorm = 0.0;
    std::size_t rows = 0;
    std::size_t clusters = 0;
};

struct LogitOptions {
    std::size_t maxIterations = 100;
    double separationThreshold = 30.0;
};

/// Newton-Raphson with step halving. rowMask (one entry per row, nonzero =
/// use) restricts the fit to a subset. Throws TrainError if it fails to
/// converge; warns on apparent separation.
LogitFit fitLogit(const ConjointDataset& ds, const std::vector<char>* rowMask = nullptr, const LogitOptions& opt = {});

struct ComparisonRow {
    std::string group;
    std::string level;
    double dnnMean = 0.0;
    double logitCoef = 0.0;
    double absDiff = 0.0;
};

struct GroupComparison {
    std::string group;
    std::size_t respondents = 0;
    std::size_t rows = 0;
    bool skipped = false;
    std::string note;
    double correlation = std::nan("");
    double meanAbsDiff = std::nan("");
};

struct ValidationReport {
    std::vector<ComparisonRow> rows;
    std::vector<GroupComparison> groups;
    double correlation = std::nan("");  // across every compared (group, level) pair
    double meanAbsDiff = std::nan("");
};

/// Compares the mean fitted beta within each group with that group's logit.
/// `groups` holds one label per respondent; without it the whole sample is a
/// single group named "all". Groups with fewer than minRows rows are skipped.
ValidationReport validateAverages(const PreferenceMatrix& pm, const ConjointDataset& ds,
                                  const std::vector<std::string>* groups = nullptr, std::size_t minRows = 200);

void writeValidationCsv(const ValidationReport& report, const std::filesystem::path& path);
nlohmann::json toJson(const ValidationReport& report);
nlohmann::json toJson(const LogitFit& fit, const std::vector<std::string>& columnNames);

}  // namespace deepchoice
