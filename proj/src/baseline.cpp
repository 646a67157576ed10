#include "deepchoice/baseline.hpp"

#include "deepchoice/csv.hpp"

#include <fstream>
#include <map>
#include <sstream>

namespace deepchoice {

namespace {

double logLikelihood(const Matrix& X, const Vector& y, const Vector& beta) {
    double ll = 0.0;
    const Vector v = X * beta;
    for (Eigen::Index r = 0; r < v.size(); ++r) {
        // log G(v) = -log1p(exp(-v)), written stably for both signs.
        const double a = v[r] >= 0 ? -std::log1p(std::exp(-v[r])) : v[r] - std::log1p(std::exp(v[r]));
        const double b = a - v[r];  // log(1 - G(v))
        ll += y[r] * a + (1.0 - y[r]) * b;
    }
    return ll;
}

// Greedy left-to-right column selection on X'X.
std::vector<bool> collinearColumns(const Matrix& X) {
    const Matrix xtx = X.transpose() * X;
    const auto p = xtx.rows();
    std::vector<bool> dropped(static_cast<std::size_t>(p), false);
    std::vector<Eigen::Index> kept;
    const double scale = std::max(1.0, xtx.diagonal().maxCoeff());
    for (Eigen::Index k = 0; k < p; ++k) {
        std::vector<Eigen::Index> trial = kept;
        trial.push_back(k);
        Matrix sub(trial.size(), trial.size());
        for (std::size_t a = 0; a < trial.size(); ++a)
            for (std::size_t b = 0; b < trial.size(); ++b) sub(a, b) = xtx(trial[a], trial[b]);
        Eigen::SelfAdjointEigenSolver<Matrix> eig(sub, Eigen::EigenvaluesOnly);
        if (eig.eigenvalues().minCoeff() > 1e-10 * scale)
            kept = trial;
        else
            dropped[static_cast<std::size_t>(k)] = true;
    }
    return dropped;
}

}  // namespace

LogitFit fitLogit(const ConjointDataset& ds, const std::vector<char>* rowMask, const LogitOptions& opt) {
    if (rowMask && rowMask->size() != ds.rows()) throw std::invalid_argument("fitLogit: row mask has the wrong length");
    std::vector<std::size_t> use;
    for (std::size_t r = 0; r < ds.rows(); ++r)
        if (!rowMask || (*rowMask)[r]) use.push_back(r);
    if (use.empty()) throw TrainError("logit fit: no rows selected");

    const auto n = static_cast<Eigen::Index>(use.size());
    const auto pFull = static_cast<Eigen::Index>(ds.width());
    Matrix Xfull(n, pFull);
    Vector y(n);
    for (Eigen::Index j = 0; j < n; ++j) {
        Xfull.row(j) = ds.deltaX.row(static_cast<Eigen::Index>(use[static_cast<std::size_t>(j)]));
        y[j] = ds.y[static_cast<Eigen::Index>(use[static_cast<std::size_t>(j)])];
    }

    LogitFit fit;
    fit.rows = use.size();
    fit.dropped = collinearColumns(Xfull);
    std::vector<Eigen::Index> active;
    for (Eigen::Index k = 0; k < pFull; ++k) {
        if (fit.dropped[static_cast<std::size_t>(k)])
            warn("logit fit: column '" + ds.schema.columnNames()[static_cast<std::size_t>(k)] +
                 "' is collinear or constant on the selected rows and was dropped");
        else
            active.push_back(k);
    }
    const auto p = static_cast<Eigen::Index>(active.size());
    Matrix X(n, p);
    for (Eigen::Index c = 0; c < p; ++c) X.col(c) = Xfull.col(active[static_cast<std::size_t>(c)]);

    Vector beta = Vector::Zero(p);
    double ll = logLikelihood(X, y, beta);
    fit.logLikTrace.push_back(ll);
    Vector grad(p);
    Matrix hess(p, p);
    auto derivatives = [&](const Vector& b) {
        const Vector v = X * b;
        Vector resid(n), w(n);
        for (Eigen::Index r = 0; r < n; ++r) {
            const double g = logistic(v[r]);
            resid[r] = y[r] - g;
            w[r] = g * (1.0 - g);
        }
        grad = X.transpose() * resid;
        hess.noalias() = X.transpose() * w.asDiagonal() * X;
    };
    const double tol = 1e-8 * static_cast<double>(n);
    derivatives(beta);
    while (p > 0 && grad.norm() >= tol && fit.iterations < opt.maxIterations) {
        const Vector step = hess.ldlt().solve(grad);
        double t = 1.0;
        Vector next = beta + step;
        double llNext = logLikelihood(X, y, next);
        for (int h = 0; h < 40 && !(llNext >= ll); ++h) {
            t *= 0.5;
            next = beta + t * step;
            llNext = logLikelihood(X, y, next);
        }
        if (!(llNext >= ll)) break;  // no ascent possible; gradient check below decides
        beta = next;
        ll = llNext;
        fit.logLikTrace.push_back(ll);
        ++fit.iterations;
        derivatives(beta);
    }
    fit.gradientNorm = grad.norm();
    fit.converged = p == 0 || fit.gradientNorm < tol;
    fit.logLik = ll;
    if (!fit.converged) {
        std::ostringstream s;
        s << "logit fit did not converge after " << fit.iterations << " iterations (gradient norm " << fit.gradientNorm
          << ")";
        throw TrainError(s.str());
    }

    // Respondent-clustered sandwich.
    Matrix bread = Matrix::Zero(p, p);
    Matrix meat = Matrix::Zero(p, p);
    if (p > 0) {
        bread = hess.ldlt().solve(Matrix::Identity(p, p));
        std::map<std::size_t, Vector> scores;
        const Vector v = X * beta;
        for (Eigen::Index j = 0; j < n; ++j) {
            const std::size_t resp = ds.respondentOf[use[static_cast<std::size_t>(j)]];
            auto it = scores.try_emplace(resp, Vector::Zero(p)).first;
            it->second += X.row(j).transpose() * (y[j] - logistic(v[j]));
        }
        for (const auto& [_, s] : scores) meat += s * s.transpose();
        fit.clusters = scores.size();
        if (fit.clusters > 1) meat *= static_cast<double>(fit.clusters) / static_cast<double>(fit.clusters - 1);
    }
    const Matrix sandwich = bread * meat * bread;

    const double nan = std::nan("");
    fit.coef = Vector::Constant(pFull, nan);
    fit.seClustered = Vector::Constant(pFull, nan);
    fit.seIid = Vector::Constant(pFull, nan);
    for (Eigen::Index c = 0; c < p; ++c) {
        const Eigen::Index k = active[static_cast<std::size_t>(c)];
        fit.coef[k] = beta[c];
        fit.seClustered[k] = std::sqrt(sandwich(c, c));
        fit.seIid[k] = std::sqrt(bread(c, c));
        if (std::abs(beta[c]) > opt.separationThreshold)
            warn("logit fit: |coefficient| of '" + ds.schema.columnNames()[static_cast<std::size_t>(k)] +
                 "' exceeds " + csv::formatNumber(opt.separationThreshold) + "; the data may be separated");
    }
    return fit;
}

ValidationReport validateAverages(const PreferenceMatrix& pm, const ConjointDataset& ds,
                                  const std::vector<std::string>* groups, std::size_t minRows) {
    if (pm.respondents() != ds.respondents() || pm.width() != ds.width())
        throw InferenceError("preference matrix does not match the dataset");
    if (groups && groups->size() != ds.respondents())
        throw std::invalid_argument("validateAverages: need one group label per respondent");

    std::vector<std::string> order;
    std::map<std::string, std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < ds.respondents(); ++i) {
        const std::string g = groups ? (*groups)[i] : "all";
        if (!members.count(g)) order.push_back(g);
        members[g].push_back(i);
    }

    ValidationReport report;
    std::vector<double> allDnn, allLogit;
    for (const auto& g : order) {
        GroupComparison gc;
        gc.group = g;
        gc.respondents = members[g].size();
        std::vector<char> mask(ds.rows(), 0);
        for (auto i : members[g]) {
            gc.rows += ds.taskCount(i);
            for (std::size_t r = ds.rowBegin[i]; r < ds.rowBegin[i + 1]; ++r) mask[r] = 1;
        }
        if (gc.rows < minRows) {
            gc.skipped = true;
            gc.note = "skipped: " + std::to_string(gc.rows) + " rows (< " + std::to_string(minRows) + ")";
            warn("validation group '" + g + "' " + gc.note);
            report.groups.push_back(gc);
            continue;
        }
        LogitFit fit;
        try {
            fit = fitLogit(ds, &mask);
        } catch (const TrainError& e) {
            gc.skipped = true;
            gc.note = std::string("skipped: ") + e.what();
            warn("validation group '" + g + "' " + gc.note);
            report.groups.push_back(gc);
            continue;
        }
        std::vector<double> dnn, logit;
        for (std::size_t k = 0; k < ds.width(); ++k) {
            double mean = 0.0;
            for (auto i : members[g]) mean += pm.beta(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
            mean /= static_cast<double>(members[g].size());
            const double coef = fit.coef[static_cast<Eigen::Index>(k)];
            report.rows.push_back({g, ds.schema.columnNames()[k], mean, coef, std::abs(mean - coef)});
            if (std::isfinite(coef)) {
                dnn.push_back(mean);
                logit.push_back(coef);
            }
        }
        gc.correlation = correlation(dnn, logit);
        double mad = 0.0;
        for (std::size_t j = 0; j < dnn.size(); ++j) mad += std::abs(dnn[j] - logit[j]);
        gc.meanAbsDiff = dnn.empty() ? std::nan("") : mad / static_cast<double>(dnn.size());
        allDnn.insert(allDnn.end(), dnn.begin(), dnn.end());
        allLogit.insert(allLogit.end(), logit.begin(), logit.end());
        report.groups.push_back(gc);
    }
    if (!allDnn.empty()) {
        report.correlation = correlation(allDnn, allLogit);
        double mad = 0.0;
        for (std::size_t j = 0; j < allDnn.size(); ++j) mad += std::abs(allDnn[j] - allLogit[j]);
        report.meanAbsDiff = mad / static_cast<double>(allDnn.size());
    }
    return report;
}

void writeValidationCsv(const ValidationReport& report, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw ArtifactError("cannot write '" + path.string() + "'");
    csv::writeRow(out, {"group", "level", "dnn_mean", "logit_coef", "abs_diff"});
    for (const auto& r : report.rows)
        csv::writeRow(out, {r.group, r.level, csv::formatNumber(r.dnnMean), csv::formatNumber(r.logitCoef),
                            csv::formatNumber(r.absDiff)});
}

namespace {
nlohmann::json num(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }
}  // namespace

nlohmann::json toJson(const ValidationReport& report) {
    nlohmann::json groups = nlohmann::json::array();
    for (const auto& g : report.groups) {
        nlohmann::json j{{"group", g.group},
                         {"respondents", g.respondents},
                         {"rows", g.rows},
                         {"skipped", g.skipped},
                         {"correlation", num(g.correlation)},
                         {"mean_abs_diff", num(g.meanAbsDiff)}};
        if (!g.note.empty()) j["note"] = g.note;
        groups.push_back(j);
    }
    return nlohmann::json{
        {"correlation", num(report.correlation)}, {"mean_abs_diff", num(report.meanAbsDiff)}, {"groups", groups}};
}

nlohmann::json toJson(const LogitFit& fit, const std::vector<std::string>& columnNames) {
    nlohmann::json levels = nlohmann::json::array();
    for (std::size_t k = 0; k < columnNames.size(); ++k) {
        const auto j = static_cast<Eigen::Index>(k);
        levels.push_back({{"level", columnNames[k]},
                          {"coef", num(fit.coef[j])},
                          {"se_clustered", num(fit.seClustered[j])},
                          {"se_iid", num(fit.seIid[j])},
                          {"dropped", static_cast<bool>(fit.dropped[k])}});
    }
    return nlohmann::json{{"converged", fit.converged},
                          {"iterations", fit.iterations},
                          {"log_likelihood", fit.logLik},
                          {"gradient_norm", fit.gradientNorm},
                          {"rows", fit.rows},
                          {"clusters", fit.clusters},
                          {"levels", levels}};
}

}  // namespace deepchoice
