#pragma once

#include "deepchoice/dataio.hpp"
#include "deepchoice/net.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace deepchoice {

/// Respondent-level fold assignment.
struct FoldPlan {
    std::size_t K = 10;
    std::vector<std::size_t> assignment;  // fold id per respondent
    std::uint64_t seed = 0;

    std::vector<std::size_t> members(std::size_t fold) const;
    std::vector<std::size_t> complement(std::size_t fold) const;
};

/// Shuffles respondents and deals them round-robin into K folds, so fold
/// sizes differ by at most one. Requires 2 <= K <= M.
FoldPlan makeFolds(std::size_t M, std::size_t K, std::uint64_t seed);

/// Fitted beta(Z_i), one row per respondent.
struct PreferenceMatrix {
    Matrix beta;                       // M x p
    std::vector<std::size_t> foldOf;   // empty for a full-data fit
    std::vector<Network> perFoldNets;  // K nets, or one for a full-data fit
    std::vector<std::string> respondentIds;
    std::vector<std::string> columnNames;

    std::size_t respondents() const { return static_cast<std::size_t>(beta.rows()); }
    std::size_t width() const { return static_cast<std::size_t>(beta.cols()); }
    bool crossFitted() const { return !foldOf.empty(); }
    Vector column(std::size_t k) const { return beta.col(static_cast<Eigen::Index>(k)); }
};

/// Wraps an externally supplied beta matrix (tests, simulation truth).
PreferenceMatrix preferenceMatrixFrom(const ConjointDataset& ds, Matrix beta);

/// Trains one network per fold on the other K-1 folds and fills each
/// respondent's row from the network that never saw it. Fold k trains with
/// seed cfg.seed + k. Folds run on up to `threads` workers.
PreferenceMatrix crossFit(const ConjointDataset& ds, const NetworkConfig& cfg, const FoldPlan& plan,
                          std::size_t threads = 1);

/// One network trained on all respondents (no sample splitting).
PreferenceMatrix fullDataFit(const ConjointDataset& ds, const NetworkConfig& cfg);

/// CSV: respondent_id, fold, then one column per encoded level.
void writePreferenceMatrix(const PreferenceMatrix& pm, const std::filesystem::path& path);
/// Reads a matrix written by writePreferenceMatrix; networks are not restored.
PreferenceMatrix readPreferenceMatrix(const std::filesystem::path& path);

}  // namespace deepchoice
