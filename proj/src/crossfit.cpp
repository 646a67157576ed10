#include "deepchoice/crossfit.hpp"

#include "deepchoice/csv.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>

namespace deepchoice {

std::vector<std::size_t> FoldPlan::members(std::size_t fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < assignment.size(); ++i)
        if (assignment[i] == fold) out.push_back(i);
    return out;
}

std::vector<std::size_t> FoldPlan::complement(std::size_t fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < assignment.size(); ++i)
        if (assignment[i] != fold) out.push_back(i);
    return out;
}

FoldPlan makeFolds(std::size_t M, std::size_t K, std::uint64_t seed) {
    if (K < 2) throw ConfigError("cross-fitting needs at least 2 folds (got " + std::to_string(K) + ")");
    if (K > M)
        throw ConfigError("cannot split " + std::to_string(M) + " respondents into " + std::to_string(K) + " folds");
    std::vector<std::size_t> order(M);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    FoldPlan plan;
    plan.K = K;
    plan.seed = seed;
    plan.assignment.assign(M, 0);
    for (std::size_t j = 0; j < M; ++j) plan.assignment[order[j]] = j % K;
    return plan;
}

PreferenceMatrix preferenceMatrixFrom(const ConjointDataset& ds, Matrix beta) {
    if (static_cast<std::size_t>(beta.rows()) != ds.respondents() || static_cast<std::size_t>(beta.cols()) != ds.width())
        throw std::invalid_argument("preference matrix shape does not match the dataset");
    PreferenceMatrix pm;
    pm.beta = std::move(beta);
    pm.respondentIds = ds.respondentIds;
    pm.columnNames = ds.schema.columnNames();
    return pm;
}

PreferenceMatrix crossFit(const ConjointDataset& ds, const NetworkConfig& cfg, const FoldPlan& plan,
                          std::size_t threads) {
    cfg.validate();
    if (plan.assignment.size() != ds.respondents())
        throw ConfigError("fold plan covers " + std::to_string(plan.assignment.size()) + " respondents, dataset has " +
                          std::to_string(ds.respondents()));
    PreferenceMatrix pm;
    pm.beta = Matrix::Zero(static_cast<Eigen::Index>(ds.respondents()), static_cast<Eigen::Index>(ds.width()));
    pm.foldOf = plan.assignment;
    pm.respondentIds = ds.respondentIds;
    pm.columnNames = ds.schema.columnNames();
    pm.perFoldNets.resize(plan.K);

    parallelFor(plan.K, threads, [&](std::size_t fold) {
        const auto train_ids = plan.complement(fold);
        const auto held_out = plan.members(fold);
        if (held_out.empty()) return;
        NetworkConfig foldCfg = cfg;
        foldCfg.seed = cfg.seed + fold;
        Network net;
        try {
            net = train(ds.subsetRespondents(train_ids), foldCfg);
        } catch (const Error& e) {
            throw TrainError("fold " + std::to_string(fold) + ": " + e.what());
        }
        Matrix zt(static_cast<Eigen::Index>(ds.covariateWidth()), static_cast<Eigen::Index>(held_out.size()));
        for (std::size_t c = 0; c < held_out.size(); ++c)
            zt.col(static_cast<Eigen::Index>(c)) = ds.z.row(static_cast<Eigen::Index>(held_out[c])).transpose();
        const Matrix beta = net.forwardBatch(zt);
        for (std::size_t c = 0; c < held_out.size(); ++c)
            pm.beta.row(static_cast<Eigen::Index>(held_out[c])) = beta.col(static_cast<Eigen::Index>(c)).transpose();
        pm.perFoldNets[fold] = std::move(net);
    });
    return pm;
}

PreferenceMatrix fullDataFit(const ConjointDataset& ds, const NetworkConfig& cfg) {
    Network net = train(ds, cfg);
    PreferenceMatrix pm = preferenceMatrixFrom(ds, net.predict(ds.z));
    pm.perFoldNets.push_back(std::move(net));
    return pm;
}

void writePreferenceMatrix(const PreferenceMatrix& pm, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw ArtifactError("cannot write '" + path.string() + "'");
    std::vector<std::string> header{"respondent_id", "fold"};
    header.insert(header.end(), pm.columnNames.begin(), pm.columnNames.end());
    csv::writeRow(out, header);
    for (std::size_t i = 0; i < pm.respondents(); ++i) {
        std::vector<std::string> row{pm.respondentIds.at(i), pm.crossFitted() ? std::to_string(pm.foldOf[i]) : "NA"};
        for (std::size_t k = 0; k < pm.width(); ++k)
            row.push_back(csv::formatNumber(pm.beta(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k))));
        csv::writeRow(out, row);
    }
}

PreferenceMatrix readPreferenceMatrix(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw ArtifactError("missing preference matrix '" + path.string() + "'");
    const auto table = csv::read(path);
    if (table.header.size() < 3 || table.header[0] != "respondent_id" || table.header[1] != "fold")
        throw ArtifactError("'" + path.string() + "' is not a preference matrix file");
    PreferenceMatrix pm;
    pm.columnNames.assign(table.header.begin() + 2, table.header.end());
    pm.beta.resize(static_cast<Eigen::Index>(table.rows.size()), static_cast<Eigen::Index>(pm.columnNames.size()));
    bool folds = true;
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        const auto& row = table.rows[i];
        pm.respondentIds.push_back(row[0]);
        if (row[1] == "NA") {
            folds = false;
        } else {
            const auto f = csv::parseNumber(row[1]);
            if (!f) throw ArtifactError(path.string() + ": bad fold id on row " + std::to_string(i + 2));
            pm.foldOf.push_back(static_cast<std::size_t>(*f));
        }
        for (std::size_t k = 0; k < pm.columnNames.size(); ++k) {
            const auto v = csv::parseNumber(row[k + 2]);
            if (!v) throw ArtifactError(path.string() + ": non-numeric value on row " + std::to_string(i + 2));
            pm.beta(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = *v;
        }
    }
    if (!folds) pm.foldOf.clear();
    return pm;
}

}  // namespace deepchoice
