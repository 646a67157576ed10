#include "deepchoice/dml.hpp"

#include "deepchoice/csv.hpp"

#include <algorithm>
#include <fstream>
#include <map>

namespace deepchoice {

namespace {

// Distinct contrast rows with multiplicities; dummy-coded designs repeat the
// same few contrasts many times.
struct ContrastSet {
    RowMatrix rows;
    Vector weight;  // count / total
};

ContrastSet compressContrasts(const ConjointDataset& ds, std::size_t begin, std::size_t end) {
    std::map<std::vector<double>, std::size_t> counts;
    const auto p = static_cast<Eigen::Index>(ds.width());
    std::vector<double> key(static_cast<std::size_t>(p));
    for (std::size_t r = begin; r < end; ++r) {
        for (Eigen::Index k = 0; k < p; ++k) key[static_cast<std::size_t>(k)] = ds.deltaX(static_cast<Eigen::Index>(r), k);
        ++counts[key];
    }
    ContrastSet cs;
    cs.rows.resize(static_cast<Eigen::Index>(counts.size()), p);
    cs.weight.resize(static_cast<Eigen::Index>(counts.size()));
    Eigen::Index j = 0;
    const double total = static_cast<double>(end - begin);
    for (const auto& [row, n] : counts) {
        for (Eigen::Index k = 0; k < p; ++k) cs.rows(j, k) = row[static_cast<std::size_t>(k)];
        cs.weight[j] = static_cast<double>(n) / total;
        ++j;
    }
    return cs;
}

Matrix informationAt(const ContrastSet& cs, const Vector& beta) {
    const Eigen::Index p = beta.size();
    Matrix lambda = Matrix::Zero(p, p);
    if (cs.rows.rows() == 0) return lambda;
    const Vector index = cs.rows * beta;
    Vector w(index.size());
    for (Eigen::Index j = 0; j < index.size(); ++j) w[j] = cs.weight[j] * logisticDensity(index[j]);
    lambda.noalias() = cs.rows.transpose() * w.asDiagonal() * cs.rows;
    return lambda;
}

void checkShapes(const PreferenceMatrix& pm, const ConjointDataset& ds) {
    if (pm.respondents() != ds.respondents() || pm.width() != ds.width())
        throw InferenceError("preference matrix is " + std::to_string(pm.respondents()) + "x" +
                             std::to_string(pm.width()) + ", dataset needs " + std::to_string(ds.respondents()) + "x" +
                             std::to_string(ds.width()));
}

}  // namespace

LambdaSet estimateLambda(const PreferenceMatrix& pm, const ConjointDataset& ds, std::optional<double> ridge,
                         LambdaMode mode) {
    checkShapes(pm, ds);
    if (ridge && !(*ridge >= 0.0)) throw InferenceError("ridge must be nonnegative");
    const std::size_t M = ds.respondents();
    const auto p = static_cast<Eigen::Index>(ds.width());
    LambdaSet out;
    out.mode = mode;
    out.perRespondent.resize(M);
    out.ridge.resize(M);
    ContrastSet pooled;
    if (mode == LambdaMode::Pooled) pooled = compressContrasts(ds, 0, ds.rows());
    for (std::size_t i = 0; i < M; ++i) {
        const Vector beta = pm.beta.row(static_cast<Eigen::Index>(i)).transpose();
        Matrix lambda = mode == LambdaMode::Pooled
                            ? informationAt(pooled, beta)
                            : informationAt(compressContrasts(ds, ds.rowBegin[i], ds.rowBegin[i + 1]), beta);
        const double r = ridge ? *ridge : 1e-6 * lambda.trace() / static_cast<double>(p);
        lambda.diagonal().array() += r;
        out.perRespondent[i] = std::move(lambda);
        out.ridge[i] = r;
    }
    return out;
}

InfluenceTable influence(const PreferenceMatrix& pm, const ConjointDataset& ds, const LambdaSet& lambda) {
    checkShapes(pm, ds);
    if (lambda.perRespondent.size() != ds.respondents()) throw InferenceError("information matrices do not match the dataset");
    InfluenceTable it;
    it.lambda = lambda;
    it.psi.resize(static_cast<Eigen::Index>(ds.rows()), static_cast<Eigen::Index>(ds.width()));
    it.ghat.resize(static_cast<Eigen::Index>(ds.rows()));
    for (std::size_t i = 0; i < ds.respondents(); ++i) {
        Eigen::LLT<Matrix> llt(lambda.perRespondent[i]);
        if (llt.info() != Eigen::Success)
            throw InferenceError("information matrix for respondent '" + ds.respondentIds[i] +
                                 "' is not positive definite; increase the ridge");
        const Vector beta = pm.beta.row(static_cast<Eigen::Index>(i)).transpose();
        for (std::size_t r = ds.rowBegin[i]; r < ds.rowBegin[i + 1]; ++r) {
            const auto row = static_cast<Eigen::Index>(r);
            const Vector dx = ds.deltaX.row(row).transpose();
            const double g = logistic(dx.dot(beta));
            it.ghat[row] = g;
            it.psi.row(row) = (beta + llt.solve(dx * (ds.y[row] - g))).transpose();
        }
    }
    return it;
}

InfluenceTable plugInInfluence(const PreferenceMatrix& pm, const ConjointDataset& ds) {
    checkShapes(pm, ds);
    InfluenceTable it;
    it.plugIn = true;
    it.psi.resize(static_cast<Eigen::Index>(ds.rows()), static_cast<Eigen::Index>(ds.width()));
    it.ghat.resize(static_cast<Eigen::Index>(ds.rows()));
    for (std::size_t r = 0; r < ds.rows(); ++r) {
        const auto row = static_cast<Eigen::Index>(r);
        const auto beta = pm.beta.row(static_cast<Eigen::Index>(ds.respondentOf[r]));
        it.psi.row(row) = beta;
        it.ghat[row] = logistic(ds.deltaX.row(row).dot(beta));
    }
    return it;
}

DmlEstimate estimate(const InfluenceTable& it, const ConjointDataset& ds, bool centered) {
    const auto N = it.psi.rows();
    const auto p = it.psi.cols();
    if (static_cast<std::size_t>(N) != ds.rows()) throw InferenceError("influence table does not match the dataset");
    if (N < 2 || ds.respondents() < 2) throw InferenceError("need at least two respondents for inference");
    const double n = static_cast<double>(N);
    const double m = static_cast<double>(ds.respondents());

    DmlEstimate est;
    est.columnNames = ds.schema.columnNames();
    est.respondents = ds.respondents();
    est.rows = ds.rows();
    est.centered = centered;
    est.plugIn = it.plugIn;
    est.theta = it.psi.colwise().mean().transpose();

    Vector clusterSq = Vector::Zero(p);
    for (std::size_t i = 0; i < ds.respondents(); ++i) {
        Vector s = Vector::Zero(p);
        for (std::size_t r = ds.rowBegin[i]; r < ds.rowBegin[i + 1]; ++r) {
            s += it.psi.row(static_cast<Eigen::Index>(r)).transpose();
            if (centered) s -= est.theta;
        }
        clusterSq += s.cwiseProduct(s);
    }
    const Vector varClustered = (m / (m - 1.0)) * clusterSq / (n * n);

    Vector varIid(p);
    for (Eigen::Index k = 0; k < p; ++k) {
        const double mean = est.theta[k];
        const double ss = (it.psi.col(k).array() - mean).square().sum();
        varIid[k] = ss / (n - 1.0) / n;
    }
    est.seClustered = varClustered.cwiseSqrt();
    est.seIid = varIid.cwiseSqrt();
    est.ciLow = est.theta - kNormal975 * est.seClustered;
    est.ciHigh = est.theta + kNormal975 * est.seClustered;
    est.seRatio.resize(p);
    est.pValues.resize(p);
    for (Eigen::Index k = 0; k < p; ++k) {
        est.seRatio[k] = est.seIid[k] > 0.0 ? est.seClustered[k] / est.seIid[k] : std::nan("");
        est.pValues[k] = est.seClustered[k] > 0.0 ? twoSidedNormalPValue(est.theta[k] / est.seClustered[k])
                                                  : (est.theta[k] == 0.0 ? 1.0 : 0.0);
    }
    return est;
}

DmlEstimate debiasedEstimate(const PreferenceMatrix& pm, const ConjointDataset& ds, const DmlOptions& opt) {
    if (opt.plugIn) return estimate(plugInInfluence(pm, ds), ds, opt.centered);
    return estimate(influence(pm, ds, estimateLambda(pm, ds, opt.ridge, opt.mode)), ds, opt.centered);
}

ProbeResult orthogonalityProbe(const PreferenceMatrix& pm, const ConjointDataset& ds, const Matrix& direction,
                               std::vector<double> steps, const DmlOptions& opt) {
    checkShapes(pm, ds);
    if (direction.rows() != pm.beta.rows() || direction.cols() != pm.beta.cols())
        throw InferenceError("probe direction must match the preference matrix shape");
    if (steps.empty()) steps = {-0.05, -0.02, -0.01, 0.0, 0.01, 0.02, 0.05};
    if (std::find(steps.begin(), steps.end(), 0.0) == steps.end()) steps.push_back(0.0);
    std::sort(steps.begin(), steps.end());
    if (steps.size() < 3) throw InferenceError("orthogonality probe needs at least three steps");

    ProbeResult res;
    res.steps = steps;
    const auto S = static_cast<Eigen::Index>(steps.size());
    const auto p = static_cast<Eigen::Index>(ds.width());
    res.theta.resize(S, p);
    res.plugIn.resize(S, p);
    DmlOptions dmlOpt = opt;
    dmlOpt.plugIn = false;
    for (Eigen::Index s = 0; s < S; ++s) {
        PreferenceMatrix shifted = pm;
        shifted.beta = pm.beta + steps[static_cast<std::size_t>(s)] * direction;
        res.theta.row(s) = debiasedEstimate(shifted, ds, dmlOpt).theta.transpose();
        res.plugIn.row(s) = shifted.beta.colwise().mean();
    }
    // Least-squares quadratic in r.
    Matrix X(S, 3);
    for (Eigen::Index s = 0; s < S; ++s) {
        const double r = steps[static_cast<std::size_t>(s)];
        X(s, 0) = 1.0;
        X(s, 1) = r;
        X(s, 2) = r * r;
    }
    const Matrix coefTheta = X.colPivHouseholderQr().solve(res.theta);
    const Matrix coefPlug = X.colPivHouseholderQr().solve(res.plugIn);
    res.linear = coefTheta.row(1).transpose();
    res.quadratic = coefTheta.row(2).transpose();
    res.plugInSlope = coefPlug.row(1).transpose();
    return res;
}

void writeEstimateCsv(const DmlEstimate& est, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw ArtifactError("cannot write '" + path.string() + "'");
    csv::writeRow(out, {"level", "theta", "se_clustered", "se_iid", "ci_lo", "ci_hi", "p_value", "se_ratio"});
    for (std::size_t k = 0; k < est.width(); ++k) {
        const auto j = static_cast<Eigen::Index>(k);
        csv::writeRow(out, {est.columnNames.at(k), csv::formatNumber(est.theta[j]), csv::formatNumber(est.seClustered[j]),
                            csv::formatNumber(est.seIid[j]), csv::formatNumber(est.ciLow[j]),
                            csv::formatNumber(est.ciHigh[j]), csv::formatNumber(est.pValues[j]),
                            csv::formatNumber(est.seRatio[j])});
    }
}

namespace {
Vector fromStd(const std::vector<double>& v) { return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())); }
}  // namespace

nlohmann::json toJson(const DmlEstimate& est) {
    nlohmann::json levels = nlohmann::json::array();
    for (std::size_t k = 0; k < est.width(); ++k) {
        const auto j = static_cast<Eigen::Index>(k);
        auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
        levels.push_back({{"level", est.columnNames.at(k)},
                          {"theta", num(est.theta[j])},
                          {"se_clustered", num(est.seClustered[j])},
                          {"se_iid", num(est.seIid[j])},
                          {"ci_lo", num(est.ciLow[j])},
                          {"ci_hi", num(est.ciHigh[j])},
                          {"p_value", num(est.pValues[j])},
                          {"se_ratio", num(est.seRatio[j])}});
    }
    return nlohmann::json{{"respondents", est.respondents},
                          {"rows", est.rows},
                          {"variance", est.centered ? "clustered-centered" : "clustered"},
                          {"estimator", est.plugIn ? "plug-in" : "debiased"},
                          {"critical_value", kNormal975},
                          {"levels", levels}};
}

DmlEstimate estimateFromJson(const nlohmann::json& j) {
    try {
        DmlEstimate est;
        est.respondents = j.at("respondents").get<std::size_t>();
        est.rows = j.at("rows").get<std::size_t>();
        est.centered = j.value("variance", std::string()) == "clustered-centered";
        est.plugIn = j.value("estimator", std::string()) == "plug-in";
        std::vector<double> cols[7];
        const char* keys[7] = {"theta", "se_clustered", "se_iid", "ci_lo", "ci_hi", "p_value", "se_ratio"};
        for (const auto& lv : j.at("levels")) {
            est.columnNames.push_back(lv.at("level").get<std::string>());
            for (int c = 0; c < 7; ++c)
                cols[c].push_back(lv.at(keys[c]).is_null() ? std::nan("") : lv.at(keys[c]).get<double>());
        }
        est.theta = fromStd(cols[0]);
        est.seClustered = fromStd(cols[1]);
        est.seIid = fromStd(cols[2]);
        est.ciLow = fromStd(cols[3]);
        est.ciHigh = fromStd(cols[4]);
        est.pValues = fromStd(cols[5]);
        est.seRatio = fromStd(cols[6]);
        return est;
    } catch (const nlohmann::json::exception& e) {
        throw ArtifactError(std::string("malformed estimate file: ") + e.what());
    }
}

}  // namespace deepchoice
