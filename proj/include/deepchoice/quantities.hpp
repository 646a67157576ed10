#pragma once

#include "deepchoice/crossfit.hpp"
#include "deepchoice/dataio.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace deepchoice {

// ---- average marginal effect -------------------------------------------------

enum class AmeMode {
    // Profile A with the attribute at level k versus its reference, against an
    // opponent profile B drawn from the design. Matches the AMCE estimand.
    PairContrast,
    // Single-profile version: G(beta_k + x'beta) - G(x'beta), x drawn from the
    // design with the attribute at its reference.
    SingleProfile,
};

struct AmeOptions {
    AmeMode mode = AmeMode::PairContrast;
    std::size_t draws = 4000;         // Monte Carlo draws when enumeration is too large
    std::size_t exactLimit = 10000;   // enumerate when the design grid has at most this many cells
    std::uint64_t seed = 0;
    bool forceMonteCarlo = false;
};

struct AmeResult {
    double ame = 0.0;
    double mcSE = 0.0;  // 0 when enumerated exactly
    std::size_t draws = 0;
    bool exact = false;
};

/// Probability-scale effect of moving the attribute that owns column k from its
/// reference to level k (continuous: one unit up), averaged over respondents
/// and the empirical profile distribution. Needs profile-level data.
AmeResult averageMarginalEffect(const PreferenceMatrix& pm, const ConjointDataset& ds, std::size_t k,
                                const AmeOptions& opt = {});

/// Linear-probability AMCE: stacked-profile difference in choice rates between
/// level k and the reference (continuous: OLS slope). Pre-differenced data
/// falls back to half the difference in y between deltaX_k = +1 and -1.
double lpmAmce(const ConjointDataset& ds, std::size_t k);

// ---- sign and share summaries --------------------------------------------------

struct Polarization {
    double fracPositive = 0.0;
    double fracNegative = 0.0;
    double fracZero = 0.0;
};

/// Fractions of respondents with beta_k > tol, < -tol, and |beta_k| <= tol.
Polarization polarization(const PreferenceMatrix& pm, std::size_t k, double tol = 0.0);

struct ImportanceShares {
    Matrix shares;                 // M x A
    std::vector<bool> degenerate;  // all-zero utility variance; row set to uniform
};

/// share_{i,g} = sum_{k in g} beta_ik^2 Var(X_k) / sum over all columns.
ImportanceShares importanceShares(const PreferenceMatrix& pm, const ConjointDataset& ds);

// ---- ratios -------------------------------------------------------------------

struct MrsResult {
    Vector ratio;  // NaN where |beta_k| < epsilon
    std::size_t undefinedCount = 0;
    double meanRatio = std::nan("");
    double medianRatio = std::nan("");
    double ratioOfMeans = std::nan("");  // mean(beta_j) / mean(beta_k) over all respondents
};

MrsResult mrs(const PreferenceMatrix& pm, std::size_t j, std::size_t k, double epsilon = 1e-6);

struct Benefit {
    enum class Kind { None, Single, Weighted, MaxOver };
    Kind kind = Kind::None;
    std::vector<std::size_t> columns;
    std::vector<double> weights;  // Weighted only; one per column
    bool absolute = false;        // Weighted only: use |beta|

    static Benefit none() { return {}; }
    static Benefit single(std::size_t k) { return {Kind::Single, {k}, {}, false}; }
    static Benefit weighted(std::vector<std::size_t> cols, std::vector<double> w, bool absolute) {
        return {Kind::Weighted, std::move(cols), std::move(w), absolute};
    }
    static Benefit maxOver(std::vector<std::size_t> cols) { return {Kind::MaxOver, std::move(cols), {}, false}; }
};

struct CompensationResult {
    Vector holds;  // 1 when beta_j + benefit >= 0
    Vector benefit;
    double fraction = 0.0;
};

CompensationResult compensatingDifferential(const PreferenceMatrix& pm, std::size_t penalty, const Benefit& benefit);

// ---- profile comparisons ---------------------------------------------------------

struct ChoiceProbabilities {
    Vector probability;  // per respondent, P(choose A)
    double mean = 0.0;
    double shareAboveHalf = 0.0;
};

ChoiceProbabilities choiceProbability(const PreferenceMatrix& pm, const AttributeSchema& schema,
                                      const ProfileSelection& a, const ProfileSelection& b);

struct MajorityPreference {
    double fracPositive = 0.0;
    double fracNegative = 0.0;
    double fracTie = 0.0;
};

MajorityPreference majorityPreference(const PreferenceMatrix& pm, const AttributeSchema& schema,
                                      const ProfileSelection& a, const ProfileSelection& b);

// ---- application indices -----------------------------------------------------------

struct SlopeResult {
    Vector slope;  // per respondent
    double fracPositive = 0.0;
    double fracTopAboveBottom = 0.0;
};

/// Within-respondent OLS slope of beta over the listed columns on log(midpoint).
SlopeResult progressivitySlope(const PreferenceMatrix& pm, const std::vector<std::size_t>& columns,
                               const std::vector<double>& midpoints);

/// Mean |beta| over a column set, per respondent.
Vector sensitivityIndex(const PreferenceMatrix& pm, const std::vector<std::size_t>& columns);

// ---- subgroups --------------------------------------------------------------------

/// Group label per respondent from one covariate (raw scale). Covariates with
/// at most `maxDiscrete` distinct values are grouped by value, others by
/// terciles.
std::vector<std::string> binCovariate(const ConjointDataset& ds, const std::string& covariate,
                                      std::size_t maxDiscrete = 5);

struct GroupMean {
    std::string group;
    std::size_t count = 0;
    double mean = std::nan("");
};

/// Means of `values` per label, in first-appearance order; NaN entries skipped.
std::vector<GroupMean> groupMeans(const Vector& values, const std::vector<std::string>& labels);

}  // namespace deepchoice
