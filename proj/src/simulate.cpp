#include "deepchoice/simulate.hpp"

#include "deepchoice/baseline.hpp"
#include "deepchoice/csv.hpp"
#include "deepchoice/quantities.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

namespace deepchoice {

namespace {

using Clock = std::chrono::steady_clock;

double secondsSince(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::vector<double> toStd(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vector fromStd(const std::vector<double>& v) {
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

nlohmann::json matrixJson(const Matrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(toStd(m.row(r).transpose()));
    return rows;
}

Matrix matrixFromJson(const nlohmann::json& j) {
    const auto rows = j.get<std::vector<std::vector<double>>>();
    if (rows.empty()) return Matrix();
    Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != rows[0].size()) throw ConfigError("ragged matrix in simulation config");
        for (std::size_t c = 0; c < rows[r].size(); ++c)
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
    return m;
}

nlohmann::json num(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

double normalUpperTail(double x) { return 0.5 * std::erfc(x / std::sqrt(2.0)); }

}  // namespace

// ---------------------------------------------------------------------------
// BetaMap

std::string toString(BetaMapKind kind) {
    switch (kind) {
        case BetaMapKind::Homogeneous: return "homogeneous";
        case BetaMapKind::Linear: return "linear";
        case BetaMapKind::PiecewiseTwoType: return "two-type";
        case BetaMapKind::SmoothNonlinear: return "smooth";
        case BetaMapKind::FromNetwork: return "network";
    }
    return "unknown";
}

Vector BetaMap::operator()(const Vector& z) const {
    switch (kind) {
        case BetaMapKind::Homogeneous: return beta0;
        case BetaMapKind::Linear: return B * z + c;
        case BetaMapKind::PiecewiseTwoType:
            return z[static_cast<Eigen::Index>(splitCovariate)] > threshold ? betaHigh : betaLow;
        case BetaMapKind::SmoothNonlinear: {
            const Vector s = W * z;
            Vector out(s.size());
            for (Eigen::Index k = 0; k < s.size(); ++k) out[k] = amplitude[k] * std::tanh(s[k]) + c[k];
            return out;
        }
        case BetaMapKind::FromNetwork: return network->forwardBeta(z);
    }
    return {};
}

Matrix BetaMap::evaluate(const Matrix& Z) const {
    if (kind == BetaMapKind::FromNetwork) return network->predict(Z);
    if (Z.rows() == 0) return Matrix();
    const Vector first = (*this)(Z.row(0).transpose());
    Matrix out(Z.rows(), first.size());
    out.row(0) = first.transpose();
    for (Eigen::Index i = 1; i < Z.rows(); ++i) out.row(i) = (*this)(Z.row(i).transpose()).transpose();
    return out;
}

BetaMap BetaMap::homogeneous(Vector beta0) {
    BetaMap m;
    m.kind = BetaMapKind::Homogeneous;
    m.beta0 = std::move(beta0);
    return m;
}

BetaMap BetaMap::linear(Matrix B, Vector c) {
    BetaMap m;
    m.kind = BetaMapKind::Linear;
    m.B = std::move(B);
    m.c = std::move(c);
    return m;
}

BetaMap BetaMap::twoType(std::size_t split, double threshold, Vector high, Vector low) {
    BetaMap m;
    m.kind = BetaMapKind::PiecewiseTwoType;
    m.splitCovariate = split;
    m.threshold = threshold;
    m.betaHigh = std::move(high);
    m.betaLow = std::move(low);
    return m;
}

BetaMap BetaMap::smooth(Vector amplitude, Matrix W, Vector c) {
    BetaMap m;
    m.kind = BetaMapKind::SmoothNonlinear;
    m.amplitude = std::move(amplitude);
    m.W = std::move(W);
    m.c = std::move(c);
    return m;
}

BetaMap BetaMap::smoothFromSeed(std::size_t p, std::size_t pZ, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> unit;
    const auto P = static_cast<Eigen::Index>(p), Q = static_cast<Eigen::Index>(pZ);
    Matrix W(P, Q);
    Vector a(P), c(P);
    for (Eigen::Index k = 0; k < P; ++k) {
        for (Eigen::Index j = 0; j < Q; ++j) W(k, j) = normal(rng);
        const double norm = W.row(k).norm();
        if (norm > 0) W.row(k) *= 1.5 / norm;
        const double sign = unit(rng) < 0.5 ? -1.0 : 1.0;
        a[k] = sign * (0.8 + 0.8 * unit(rng));
        c[k] = -0.4 + 0.8 * unit(rng);
    }
    return smooth(std::move(a), std::move(W), std::move(c));
}

BetaMap BetaMap::fromNetwork(std::shared_ptr<const Network> net, std::string path) {
    BetaMap m;
    m.kind = BetaMapKind::FromNetwork;
    m.network = std::move(net);
    m.networkPath = std::move(path);
    return m;
}

nlohmann::json BetaMap::toJson() const {
    nlohmann::json j{{"kind", toString(kind)}};
    switch (kind) {
        case BetaMapKind::Homogeneous: j["beta"] = toStd(beta0); break;
        case BetaMapKind::Linear:
            j["B"] = matrixJson(B);
            j["c"] = toStd(c);
            break;
        case BetaMapKind::PiecewiseTwoType:
            j["split_covariate"] = splitCovariate;
            j["threshold"] = threshold;
            j["beta_high"] = toStd(betaHigh);
            j["beta_low"] = toStd(betaLow);
            break;
        case BetaMapKind::SmoothNonlinear:
            j["amplitude"] = toStd(amplitude);
            j["W"] = matrixJson(W);
            j["c"] = toStd(c);
            break;
        case BetaMapKind::FromNetwork: j["network"] = networkPath; break;
    }
    return j;
}

BetaMap BetaMap::fromJson(const nlohmann::json& j, std::size_t p, std::size_t pZ, std::uint64_t dgpSeed) {
    try {
        const std::string kind = j.value("kind", std::string("smooth"));
        if (kind == "homogeneous") return homogeneous(fromStd(j.at("beta").get<std::vector<double>>()));
        if (kind == "linear") return linear(matrixFromJson(j.at("B")), fromStd(j.at("c").get<std::vector<double>>()));
        if (kind == "two-type")
            return twoType(j.at("split_covariate").get<std::size_t>(), j.value("threshold", 0.0),
                           fromStd(j.at("beta_high").get<std::vector<double>>()),
                           fromStd(j.at("beta_low").get<std::vector<double>>()));
        if (kind == "smooth") {
            if (j.contains("W"))
                return smooth(fromStd(j.at("amplitude").get<std::vector<double>>()), matrixFromJson(j.at("W")),
                              fromStd(j.at("c").get<std::vector<double>>()));
            return smoothFromSeed(p, pZ, dgpSeed);
        }
        if (kind == "network") {
            const std::string path = j.at("network").get<std::string>();
            auto net = std::make_shared<Network>(loadNetwork(path));
            return fromNetwork(std::move(net), path);
        }
        throw ConfigError("unknown beta map kind '" + kind + "'");
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("invalid beta map: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// SimSpec

std::size_t SimSpec::width() const {
    std::size_t p = 0;
    for (auto l : levels) p += l - 1;
    return p;
}

AttributeSchema SimSpec::schema() const {
    std::vector<AttributeSpec> attrs;
    for (std::size_t a = 0; a < levels.size(); ++a) {
        AttributeSpec s;
        s.name = "attr" + std::to_string(a + 1);
        for (std::size_t l = 0; l < levels[a]; ++l) s.levels.push_back("L" + std::to_string(l));
        s.reference = 0;
        attrs.push_back(std::move(s));
    }
    return AttributeSchema(std::move(attrs));
}

void SimSpec::validate() const {
    if (M < 2 || T < 1 || pZ < 1) throw ConfigError("simulation needs M >= 2, T >= 1 and at least one covariate");
    if (levels.empty()) throw ConfigError("simulation needs at least one attribute");
    for (auto l : levels)
        if (l < 2) throw ConfigError("every simulated attribute needs at least two levels");
    if (replications < 1) throw ConfigError("replications must be at least 1");
    if (folds < 2 || folds > M) throw ConfigError("fold count must lie in [2, M]");
    network.validate();
    const auto p = static_cast<Eigen::Index>(width());
    const auto q = static_cast<Eigen::Index>(pZ);
    auto need = [](bool ok, const std::string& what) {
        if (!ok) throw ConfigError("beta map does not match the design: " + what);
    };
    switch (map.kind) {
        case BetaMapKind::Homogeneous: need(map.beta0.size() == p, "beta has wrong length"); break;
        case BetaMapKind::Linear: need(map.B.rows() == p && map.B.cols() == q && map.c.size() == p, "B must be p x pZ"); break;
        case BetaMapKind::PiecewiseTwoType:
            need(map.betaHigh.size() == p && map.betaLow.size() == p, "two-type vectors have wrong length");
            need(map.splitCovariate < pZ, "split covariate out of range");
            break;
        case BetaMapKind::SmoothNonlinear:
            need(map.W.rows() == p && map.W.cols() == q && map.amplitude.size() == p && map.c.size() == p,
                 "W must be p x pZ");
            break;
        case BetaMapKind::FromNetwork:
            need(map.network && map.network->inputWidth() == pZ && map.network->outputWidth() == width(),
                 "network dimensions");
            break;
    }
}

nlohmann::json SimSpec::toJson() const {
    nlohmann::json j{{"M", M},
                     {"T", T},
                     {"pZ", pZ},
                     {"binary_covariates", binaryCovariates},
                     {"levels", levels},
                     {"map", map.toJson()},
                     {"replications", replications},
                     {"seed", seed},
                     {"dgp_seed", dgpSeed},
                     {"network", network.toJson()},
                     {"folds", folds},
                     {"lambda", dml.mode == LambdaMode::Pooled ? "pooled" : "own-rows"},
                     {"centered", dml.centered},
                     {"run_logit", runLogit},
                     {"profile_pairs", profilePairs}};
    j["ridge"] = dml.ridge ? nlohmann::json(*dml.ridge) : nlohmann::json("auto");
    return j;
}

SimSpec SimSpec::fromJson(const nlohmann::json& j) {
    try {
        SimSpec s;
        s.M = j.value("M", s.M);
        s.T = j.value("T", s.T);
        s.pZ = j.value("pZ", s.pZ);
        s.binaryCovariates = j.value("binary_covariates", s.binaryCovariates);
        if (j.contains("levels")) s.levels = j["levels"].get<std::vector<std::size_t>>();
        s.replications = j.value("replications", s.replications);
        s.seed = j.value("seed", s.seed);
        s.dgpSeed = j.value("dgp_seed", s.dgpSeed);
        if (j.contains("network")) s.network = NetworkConfig::fromJson(j["network"]);
        s.folds = j.value("folds", s.folds);
        const std::string lambda = j.value("lambda", std::string("pooled"));
        if (lambda == "pooled")
            s.dml.mode = LambdaMode::Pooled;
        else if (lambda == "own-rows")
            s.dml.mode = LambdaMode::OwnRows;
        else
            throw ConfigError("lambda must be 'pooled' or 'own-rows'");
        if (j.contains("ridge") && j["ridge"].is_number()) s.dml.ridge = j["ridge"].get<double>();
        s.dml.centered = j.value("centered", false);
        s.runLogit = j.value("run_logit", true);
        s.profilePairs = j.value("profile_pairs", s.profilePairs);
        s.threads = j.value("threads", s.threads);
        s.map = j.contains("map") ? BetaMap::fromJson(j["map"], s.width(), s.pZ, s.dgpSeed)
                                  : BetaMap::smoothFromSeed(s.width(), s.pZ, s.dgpSeed);
        s.validate();
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("invalid simulation config: ") + e.what());
    }
}

std::uint64_t replicationSeed(const SimSpec& spec, std::size_t r) {
    return combineSeeds({spec.seed, spec.M, spec.T, spec.width(), r});
}

// ---------------------------------------------------------------------------
// Generation

ProfileSelection drawProfile(const SimSpec& spec, std::mt19937_64& rng) {
    ProfileSelection sel(spec.levels.size());
    for (std::size_t a = 0; a < spec.levels.size(); ++a) {
        std::uniform_int_distribution<std::size_t> pick(0, spec.levels[a] - 1);
        sel[a] = AttributeValue::categorical(pick(rng));
    }
    return sel;
}

Vector trueTheta(const BetaMap& map, std::size_t pZ, std::size_t binaryBlock, std::uint64_t seed) {
    const std::size_t continuous = pZ - binaryBlock;
    switch (map.kind) {
        case BetaMapKind::Homogeneous: return map.beta0;
        case BetaMapKind::Linear: {
            Vector ez = Vector::Zero(static_cast<Eigen::Index>(pZ));
            for (std::size_t j = continuous; j < pZ; ++j) ez[static_cast<Eigen::Index>(j)] = 0.5;
            return map.B * ez + map.c;
        }
        case BetaMapKind::PiecewiseTwoType: {
            double high = 0.0;
            if (map.splitCovariate < continuous)
                high = normalUpperTail(map.threshold);
            else
                high = map.threshold < 0.0 ? 1.0 : (map.threshold < 1.0 ? 0.5 : 0.0);
            return high * map.betaHigh + (1.0 - high) * map.betaLow;
        }
        case BetaMapKind::SmoothNonlinear: {
            // Continuous part of w'z is N(0, |w_cont|^2); enumerate the binary block
            // and integrate the normal part with the trapezoid rule.
            const auto P = map.W.rows();
            Vector out(P);
            const std::size_t combos = std::size_t{1} << binaryBlock;
            constexpr int kNodes = 8001;
            constexpr double kSpan = 10.0;
            const double h = 2.0 * kSpan / (kNodes - 1);
            for (Eigen::Index k = 0; k < P; ++k) {
                double sigma = 0.0;
                for (std::size_t j = 0; j < continuous; ++j) sigma += std::pow(map.W(k, static_cast<Eigen::Index>(j)), 2);
                sigma = std::sqrt(sigma);
                double mean = 0.0;
                for (std::size_t b = 0; b < combos; ++b) {
                    double shift = 0.0;
                    for (std::size_t j = 0; j < binaryBlock; ++j)
                        if (b >> j & 1U) shift += map.W(k, static_cast<Eigen::Index>(continuous + j));
                    double e = 0.0;
                    if (sigma == 0.0) {
                        e = std::tanh(shift);
                    } else {
                        for (int n = 0; n < kNodes; ++n) {
                            const double s = -kSpan + h * n;
                            const double w = (n == 0 || n == kNodes - 1) ? 0.5 : 1.0;
                            e += w * std::tanh(shift + sigma * s) * std::exp(-0.5 * s * s);
                        }
                        e *= h / std::sqrt(2.0 * M_PI);
                    }
                    mean += e / static_cast<double>(combos);
                }
                out[k] = map.amplitude[k] * mean + map.c[k];
            }
            return out;
        }
        case BetaMapKind::FromNetwork: {
            constexpr Eigen::Index kDraws = 200000;
            std::mt19937_64 rng(seed);
            std::normal_distribution<double> normal;
            std::bernoulli_distribution coin(0.5);
            Matrix Z(kDraws, static_cast<Eigen::Index>(pZ));
            for (Eigen::Index i = 0; i < kDraws; ++i)
                for (std::size_t j = 0; j < pZ; ++j)
                    Z(i, static_cast<Eigen::Index>(j)) = j < continuous ? normal(rng) : (coin(rng) ? 1.0 : 0.0);
            return map.network->predict(Z).colwise().mean().transpose();
        }
    }
    return {};
}

SimulatedData generate(const SimSpec& spec, std::size_t r) {
    spec.validate();
    std::mt19937_64 rng(replicationSeed(spec, r));
    std::normal_distribution<double> normal;
    std::bernoulli_distribution coin(0.5);
    std::uniform_real_distribution<double> unit;

    const auto M = static_cast<Eigen::Index>(spec.M);
    const auto pZ = static_cast<Eigen::Index>(spec.pZ);
    const std::size_t continuous = spec.pZ - spec.binaryBlock();
    Matrix Z(M, pZ);
    for (Eigen::Index i = 0; i < M; ++i)
        for (Eigen::Index j = 0; j < pZ; ++j)
            Z(i, j) = static_cast<std::size_t>(j) < continuous ? normal(rng) : (coin(rng) ? 1.0 : 0.0);

    SimulatedData out;
    out.trueBeta = spec.map.evaluate(Z);
    const AttributeSchema schema = spec.schema();
    const auto p = static_cast<Eigen::Index>(schema.width());
    const auto N = static_cast<Eigen::Index>(spec.rows());

    ChoiceData cd;
    const int digits = static_cast<int>(std::to_string(spec.M).size());
    for (std::size_t i = 0; i < spec.M; ++i) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "R%0*zu", digits, i + 1);
        cd.respondentIds.emplace_back(buf);
    }
    cd.taskCounts.assign(spec.M, spec.T);
    cd.profileA.resize(N, p);
    cd.profileB.resize(N, p);
    cd.y.resize(N);
    Eigen::Index row = 0;
    for (Eigen::Index i = 0; i < M; ++i) {
        const Vector beta = out.trueBeta.row(i).transpose();
        for (std::size_t t = 0; t < spec.T; ++t, ++row) {
            const Vector a = schema.encode(drawProfile(spec, rng));
            const Vector b = schema.encode(drawProfile(spec, rng));
            cd.profileA.row(row) = a.transpose();
            cd.profileB.row(row) = b.transpose();
            cd.y[row] = unit(rng) < logistic((a - b).dot(beta)) ? 1.0 : 0.0;
        }
    }
    cd.covariates = Z;
    for (std::size_t j = 0; j < spec.pZ; ++j)
        cd.covariateNames.push_back(j < continuous ? "z" + std::to_string(j + 1)
                                                   : "bin" + std::to_string(j - continuous + 1));
    out.data = buildDataset(schema, std::move(cd));
    out.trueTheta = trueTheta(spec.map, spec.pZ, spec.binaryBlock());
    return out;
}

// ---------------------------------------------------------------------------
// Metrics

double individualCorrelation(const Matrix& estimate, const Matrix& truth) {
    if (estimate.rows() != truth.rows() || estimate.cols() != truth.cols() || truth.cols() == 0)
        throw std::invalid_argument("individualCorrelation: shape mismatch");
    double s = 0.0;
    for (Eigen::Index k = 0; k < truth.cols(); ++k) s += correlation(Vector(estimate.col(k)), Vector(truth.col(k)));
    return s / static_cast<double>(truth.cols());
}

double individualRmse(const Matrix& estimate, const Matrix& truth) {
    return std::sqrt((estimate - truth).squaredNorm() / static_cast<double>(truth.size()));
}

ProfileDeviation profileDeviation(const Matrix& estimate, const Matrix& truth, const RowMatrix& contrasts) {
    ProfileDeviation out;
    if (contrasts.rows() == 0) return out;
    const Matrix vEst = estimate * contrasts.transpose();  // M x pairs
    const Matrix vTrue = truth * contrasts.transpose();
    const auto M = static_cast<double>(estimate.rows());
    for (Eigen::Index c = 0; c < contrasts.rows(); ++c) {
        double mEst = 0.0, mTrue = 0.0, indiv = 0.0;
        for (Eigen::Index i = 0; i < estimate.rows(); ++i) {
            const double gEst = logistic(vEst(i, c));
            const double gTrue = logistic(vTrue(i, c));
            mEst += gEst;
            mTrue += gTrue;
            indiv += std::abs(gEst - gTrue);
        }
        out.population += std::abs(mEst - mTrue) / M;
        out.individual += indiv / M;
    }
    out.population /= static_cast<double>(contrasts.rows());
    out.individual /= static_cast<double>(contrasts.rows());
    return out;
}

RowMatrix randomContrasts(const SimSpec& spec, std::size_t pairs, std::uint64_t seed) {
    const AttributeSchema schema = spec.schema();
    std::mt19937_64 rng(seed);
    RowMatrix out(static_cast<Eigen::Index>(pairs), static_cast<Eigen::Index>(schema.width()));
    for (std::size_t j = 0; j < pairs; ++j) {
        const Vector a = schema.encode(drawProfile(spec, rng));
        const Vector b = schema.encode(drawProfile(spec, rng));
        out.row(static_cast<Eigen::Index>(j)) = (a - b).transpose();
    }
    return out;
}

// ---------------------------------------------------------------------------
// Benchmark

namespace {

std::vector<bool> coverage(const Vector& lo, const Vector& hi, const Vector& truth) {
    std::vector<bool> out(static_cast<std::size_t>(truth.size()));
    for (Eigen::Index k = 0; k < truth.size(); ++k) out[static_cast<std::size_t>(k)] = lo[k] <= truth[k] && truth[k] <= hi[k];
    return out;
}

double meanAbs(const Vector& v) { return v.size() ? v.cwiseAbs().mean() : 0.0; }

Vector meanShares(const ImportanceShares& s) { return s.shares.colwise().mean().transpose(); }

}  // namespace

ReplicationResult runReplication(const SimSpec& spec, std::size_t r) {
    ReplicationResult res;
    res.replication = r;
    res.seed = replicationSeed(spec, r);
    try {
        const SimulatedData sim = generate(spec, r);
        const ConjointDataset& ds = sim.data;
        res.trueTheta = sim.trueTheta;

        auto t0 = Clock::now();
        NetworkConfig cfg = spec.network;
        cfg.seed = combineSeeds({res.seed, 1});
        const FoldPlan plan = makeFolds(ds.respondents(), spec.folds, combineSeeds({res.seed, 2}));
        const PreferenceMatrix pm = crossFit(ds, cfg, plan, 1);
        res.secondsFit = secondsSince(t0);

        t0 = Clock::now();
        const DmlEstimate dml = debiasedEstimate(pm, ds, spec.dml);
        DmlOptions plugOpt = spec.dml;
        plugOpt.plugIn = true;
        const DmlEstimate plug = debiasedEstimate(pm, ds, plugOpt);
        res.secondsDml = secondsSince(t0);

        res.thetaDml = dml.theta;
        res.seDml = dml.seClustered;
        res.seRatio = dml.seRatio;
        res.coveredDml = coverage(dml.ciLow, dml.ciHigh, sim.trueTheta);
        res.thetaPlugIn = plug.theta;
        res.sePlugIn = plug.seClustered;
        res.coveredPlugIn = coverage(plug.ciLow, plug.ciHigh, sim.trueTheta);
        res.meanAbsBiasDml = meanAbs(dml.theta - sim.trueTheta);
        res.meanAbsBiasPlugIn = meanAbs(plug.theta - sim.trueTheta);

        res.betaCorrelationDnn = individualCorrelation(pm.beta, sim.trueBeta);
        res.betaRmseDnn = individualRmse(pm.beta, sim.trueBeta);
        const RowMatrix contrasts = randomContrasts(spec, spec.profilePairs, combineSeeds({res.seed, 3}));
        res.profileDnn = profileDeviation(pm.beta, sim.trueBeta, contrasts);

        std::vector<double> fracEst, fracTrue;
        const PreferenceMatrix truthPm = preferenceMatrixFrom(ds, sim.trueBeta);
        for (std::size_t k = 0; k < ds.width(); ++k) {
            fracEst.push_back(polarization(pm, k).fracPositive);
            fracTrue.push_back(polarization(truthPm, k).fracPositive);
        }
        res.polarizationCorrelation = correlation(fracEst, fracTrue);
        res.importanceCorrelation =
            correlation(meanShares(importanceShares(pm, ds)), meanShares(importanceShares(truthPm, ds)));

        if (spec.runLogit) {
            t0 = Clock::now();
            const LogitFit fit = fitLogit(ds);
            res.secondsLogit = secondsSince(t0);
            res.thetaLogit = fit.coef;
            res.seLogit = fit.seClustered;
            res.coveredLogit = coverage(fit.coef - kNormal975 * fit.seClustered, fit.coef + kNormal975 * fit.seClustered,
                                        sim.trueTheta);
            res.meanAbsBiasLogit = meanAbs(fit.coef - sim.trueTheta);
            const Matrix logitBeta = fit.coef.transpose().replicate(static_cast<Eigen::Index>(ds.respondents()), 1);
            res.betaCorrelationLogit = individualCorrelation(logitBeta, sim.trueBeta);
            res.betaRmseLogit = individualRmse(logitBeta, sim.trueBeta);
            res.profileLogit = profileDeviation(logitBeta, sim.trueBeta, contrasts);
        }
    } catch (const Error& e) {
        res.failed = true;
        res.error = e.what();
    }
    return res;
}

std::pair<double, double> SimReport::summarize(double ReplicationResult::*metric) const {
    return summarize([metric](const ReplicationResult& r) { return r.*metric; });
}

std::pair<double, double> SimReport::summarize(const std::function<double(const ReplicationResult&)>& metric) const {
    std::vector<double> v;
    for (const auto& r : replications)
        if (!r.failed) v.push_back(metric(r));
    if (v.empty()) return {std::nan(""), std::nan("")};
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    const double sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
    return {mean, sd};
}

void aggregate(SimReport& report) {
    const auto p = static_cast<Eigen::Index>(report.spec.width());
    report.columnNames = report.spec.schema().columnNames();
    report.coverageDml = Vector::Zero(p);
    report.coveragePlugIn = Vector::Zero(p);
    report.coverageLogit = Vector::Zero(p);
    report.failures = 0;
    std::size_t ok = 0, okLogit = 0;
    for (const auto& r : report.replications) {
        if (r.failed) {
            ++report.failures;
            continue;
        }
        ++ok;
        for (Eigen::Index k = 0; k < p; ++k) {
            report.coverageDml[k] += r.coveredDml[static_cast<std::size_t>(k)];
            report.coveragePlugIn[k] += r.coveredPlugIn[static_cast<std::size_t>(k)];
        }
        if (!r.coveredLogit.empty()) {
            ++okLogit;
            for (Eigen::Index k = 0; k < p; ++k) report.coverageLogit[k] += r.coveredLogit[static_cast<std::size_t>(k)];
        }
    }
    if (ok) {
        report.coverageDml /= static_cast<double>(ok);
        report.coveragePlugIn /= static_cast<double>(ok);
    }
    if (okLogit)
        report.coverageLogit /= static_cast<double>(okLogit);
    else
        report.coverageLogit.setConstant(std::nan(""));
}

SimReport runBenchmark(const SimSpec& spec, std::size_t first, std::size_t count) {
    spec.validate();
    if (count == 0) count = spec.replications;
    SimReport report;
    report.spec = spec;
    report.replications.resize(count);
    parallelFor(count, spec.threads, [&](std::size_t j) { report.replications[j] = runReplication(spec, first + j); });
    for (const auto& r : report.replications)
        if (r.failed) warn("replication " + std::to_string(r.replication) + " failed: " + r.error);
    aggregate(report);
    return report;
}

void writeBenchmarkCsv(const SimReport& report, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw ArtifactError("cannot write '" + path.string() + "'");
    csv::writeRow(out, {"replication", "metric", "level", "value"});
    const auto& names = report.columnNames;
    for (const auto& r : report.replications) {
        const std::string rep = std::to_string(r.replication);
        if (r.failed) {
            csv::writeRow(out, {rep, "failed", "", "1"});
            continue;
        }
        auto perLevel = [&](const std::string& metric, const Vector& v) {
            for (Eigen::Index k = 0; k < v.size(); ++k)
                csv::writeRow(out, {rep, metric, names.at(static_cast<std::size_t>(k)), csv::formatNumber(v[k])});
        };
        auto perLevelFlag = [&](const std::string& metric, const std::vector<bool>& v) {
            for (std::size_t k = 0; k < v.size(); ++k) csv::writeRow(out, {rep, metric, names.at(k), v[k] ? "1" : "0"});
        };
        auto scalar = [&](const std::string& metric, double v) { csv::writeRow(out, {rep, metric, "", csv::formatNumber(v)}); };
        perLevel("theta_true", r.trueTheta);
        perLevel("theta_dml", r.thetaDml);
        perLevel("se_dml", r.seDml);
        perLevelFlag("covered_dml", r.coveredDml);
        perLevel("theta_plugin", r.thetaPlugIn);
        perLevel("se_plugin", r.sePlugIn);
        perLevelFlag("covered_plugin", r.coveredPlugIn);
        perLevel("se_ratio", r.seRatio);
        if (!r.coveredLogit.empty()) {
            perLevel("theta_logit", r.thetaLogit);
            perLevel("se_logit", r.seLogit);
            perLevelFlag("covered_logit", r.coveredLogit);
        }
        scalar("abs_bias_dml", r.meanAbsBiasDml);
        scalar("abs_bias_plugin", r.meanAbsBiasPlugIn);
        scalar("beta_corr_dnn", r.betaCorrelationDnn);
        scalar("beta_rmse_dnn", r.betaRmseDnn);
        scalar("profile_mad_dnn", r.profileDnn.population);
        scalar("profile_mad_dnn_individual", r.profileDnn.individual);
        scalar("polarization_corr", r.polarizationCorrelation);
        scalar("importance_corr", r.importanceCorrelation);
        if (!r.coveredLogit.empty()) {
            scalar("abs_bias_logit", r.meanAbsBiasLogit);
            scalar("beta_corr_logit", r.betaCorrelationLogit);
            scalar("beta_rmse_logit", r.betaRmseLogit);
            scalar("profile_mad_logit", r.profileLogit.population);
            scalar("profile_mad_logit_individual", r.profileLogit.individual);
        }
    }
}

nlohmann::json toJson(const SimReport& report) {
    auto stat = [&](const std::function<double(const ReplicationResult&)>& f) {
        const auto [mean, sd] = report.summarize(f);
        return nlohmann::json{{"mean", num(mean)}, {"sd", num(sd)}};
    };
    nlohmann::json coverage = nlohmann::json::array();
    for (std::size_t k = 0; k < report.columnNames.size(); ++k) {
        const auto j = static_cast<Eigen::Index>(k);
        coverage.push_back({{"level", report.columnNames[k]},
                            {"dml", num(report.coverageDml[j])},
                            {"plugin", num(report.coveragePlugIn[j])},
                            {"logit", num(report.coverageLogit[j])}});
    }
    std::size_t ok = report.replications.size() - report.failures;
    nlohmann::json j{{"mode", "benchmark"},
                     {"spec", report.spec.toJson()},
                     {"replications", report.replications.size()},
                     {"succeeded", ok},
                     {"failures", report.failures},
                     {"coverage", coverage},
                     {"metrics",
                      {{"abs_bias_dml", stat([](const auto& r) { return r.meanAbsBiasDml; })},
                       {"abs_bias_plugin", stat([](const auto& r) { return r.meanAbsBiasPlugIn; })},
                       {"beta_corr_dnn", stat([](const auto& r) { return r.betaCorrelationDnn; })},
                       {"beta_rmse_dnn", stat([](const auto& r) { return r.betaRmseDnn; })},
                       {"profile_mad_dnn", stat([](const auto& r) { return r.profileDnn.population; })},
                       {"profile_mad_dnn_individual", stat([](const auto& r) { return r.profileDnn.individual; })},
                       {"polarization_corr", stat([](const auto& r) { return r.polarizationCorrelation; })},
                       {"importance_corr", stat([](const auto& r) { return r.importanceCorrelation; })}}}};
    if (report.spec.runLogit) {
        j["metrics"]["abs_bias_logit"] = stat([](const auto& r) { return r.meanAbsBiasLogit; });
        j["metrics"]["beta_corr_logit"] = stat([](const auto& r) { return r.betaCorrelationLogit; });
        j["metrics"]["profile_mad_logit"] = stat([](const auto& r) { return r.profileLogit.population; });
    }
    nlohmann::json failed = nlohmann::json::array();
    for (const auto& r : report.replications)
        if (r.failed) failed.push_back({{"replication", r.replication}, {"error", r.error}});
    if (!failed.empty()) j["failed"] = failed;
    return j;
}

// ---------------------------------------------------------------------------
// Factorial

void FactorialSpec::validate() const {
    if (Ns.empty() || Ts.empty() || ps.empty()) throw ConfigError("factorial grid needs at least one N, T and p");
    for (auto n : Ns)
        if (n < base.folds || n < 2) throw ConfigError("every grid N must be at least the fold count");
    for (auto t : Ts)
        if (t < 1) throw ConfigError("grid T values must be positive");
    for (auto p : ps)
        if (p < 1) throw ConfigError("grid p values must be positive");
    if (replications < 1) throw ConfigError("replications per cell must be at least 1");
}

nlohmann::json FactorialSpec::toJson() const {
    nlohmann::json b = base.toJson();
    b.erase("M");
    b.erase("T");
    b.erase("levels");
    b.erase("map");
    b.erase("replications");
    return nlohmann::json{{"N", Ns},          {"T", Ts},       {"p", ps}, {"replications", replications},
                          {"targets", targets}, {"l2_reference_rows", l2ReferenceRows},
                          {"base", b},        {"map", "smooth (constants from dgp_seed and p)"}};
}

FactorialSpec FactorialSpec::fromJson(const nlohmann::json& j) {
    try {
        FactorialSpec f;
        if (j.contains("base")) {
            nlohmann::json b = j["base"];
            b.erase("map");
            f.base = SimSpec::fromJson(b);
        }
        if (j.contains("N")) f.Ns = j["N"].get<std::vector<std::size_t>>();
        if (j.contains("T")) f.Ts = j["T"].get<std::vector<std::size_t>>();
        if (j.contains("p")) f.ps = j["p"].get<std::vector<std::size_t>>();
        f.replications = j.value("replications", f.replications);
        if (j.contains("targets")) f.targets = j["targets"].get<std::vector<double>>();
        f.l2ReferenceRows = j.value("l2_reference_rows", f.l2ReferenceRows);
        return f;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("invalid factorial config: ") + e.what());
    }
}

SimSpec FactorialSpec::cellSpec(std::size_t N, std::size_t T, std::size_t p) const {
    SimSpec s = base;
    s.M = N;
    s.T = T;
    s.levels.assign(p, 2);
    s.replications = replications;
    if (l2ReferenceRows > 0)
        s.network.l2Penalty = base.network.l2Penalty * static_cast<double>(l2ReferenceRows) / static_cast<double>(N * T);
    s.runLogit = false;
    s.threads = 1;
    s.map = BetaMap::smoothFromSeed(p, s.pZ, combineSeeds({base.dgpSeed, p}));
    return s;
}

CompositionTest welchTest(const std::vector<double>& a, const std::vector<double>& b) {
    CompositionTest t;
    auto moments = [](const std::vector<double>& v) {
        const double n = static_cast<double>(v.size());
        const double m = std::accumulate(v.begin(), v.end(), 0.0) / n;
        double ss = 0.0;
        for (double x : v) ss += (x - m) * (x - m);
        return std::tuple<double, double, double>(n, m, n > 1 ? ss / (n - 1) : 0.0);
    };
    if (a.size() < 2 || b.size() < 2) {
        t.pValue = std::nan("");
        return t;
    }
    const auto [n1, m1, v1] = moments(a);
    const auto [n2, m2, v2] = moments(b);
    t.meanDiff = m1 - m2;
    const double se2 = v1 / n1 + v2 / n2;
    if (se2 <= 0.0) {
        t.pValue = t.meanDiff == 0.0 ? 1.0 : 0.0;
        return t;
    }
    t.t = t.meanDiff / std::sqrt(se2);
    t.df = se2 * se2 / (std::pow(v1 / n1, 2) / (n1 - 1) + std::pow(v2 / n2, 2) / (n2 - 1));
    boost::math::students_t dist(t.df);
    t.pValue = 2.0 * boost::math::cdf(dist, -std::abs(t.t));
    return t;
}

void summarizeFactorial(FactorialReport& report) {
    // Cell means.
    for (auto& c : report.cells) {
        c.flagged = c.correlations.empty();
        if (c.flagged) continue;
        const double n = static_cast<double>(c.correlations.size());
        c.meanCorrelation = std::accumulate(c.correlations.begin(), c.correlations.end(), 0.0) / n;
        double ss = 0.0;
        for (double x : c.correlations) ss += (x - c.meanCorrelation) * (x - c.meanCorrelation);
        c.sdCorrelation = n > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
        c.meanThetaBias = std::accumulate(c.thetaBias.begin(), c.thetaBias.end(), 0.0) / n;
    }

    // Main-effect sums of squares over replication-level observations.
    std::vector<std::tuple<std::size_t, std::size_t, std::size_t, double>> obs;
    for (const auto& c : report.cells)
        for (double x : c.correlations) obs.emplace_back(c.N, c.T, c.p, x);
    report.shareN = report.shareT = report.shareP = 0.0;
    if (!obs.empty()) {
        double grand = 0.0;
        for (const auto& o : obs) grand += std::get<3>(o);
        grand /= static_cast<double>(obs.size());
        double total = 0.0;
        for (const auto& o : obs) total += std::pow(std::get<3>(o) - grand, 2);
        auto factorSS = [&](auto key) {
            std::map<std::size_t, std::pair<double, double>> levels;  // sum, count
            for (const auto& o : obs) {
                auto& l = levels[key(o)];
                l.first += std::get<3>(o);
                l.second += 1.0;
            }
            double ss = 0.0;
            for (const auto& [_, l] : levels) ss += l.second * std::pow(l.first / l.second - grand, 2);
            return ss;
        };
        if (total > 0.0) {
            report.shareN = factorSS([](const auto& o) { return std::get<0>(o); }) / total;
            report.shareT = factorSS([](const auto& o) { return std::get<1>(o); }) / total;
            report.shareP = factorSS([](const auto& o) { return std::get<2>(o); }) / total;
        }
    }

    report.fits.clear();
    report.guidance.clear();
    report.composition.clear();
    report.adjacentPairs = report.rankViolations = 0;
    std::set<std::size_t> ps;
    for (const auto& c : report.cells) ps.insert(c.p);
    for (std::size_t p : ps) {
        std::vector<const FactorialCell*> cells;
        for (const auto& c : report.cells)
            if (c.p == p && !c.flagged) cells.push_back(&c);

        // Log-linear fit of cell mean correlation on log(NT).
        LogLinearFit fit;
        fit.p = p;
        if (cells.size() >= 2) {
            double sx = 0, sy = 0, n = static_cast<double>(cells.size());
            for (auto* c : cells) {
                sx += std::log(static_cast<double>(c->NT()));
                sy += c->meanCorrelation;
            }
            const double mx = sx / n, my = sy / n;
            double sxx = 0, sxy = 0, syy = 0;
            for (auto* c : cells) {
                const double dx = std::log(static_cast<double>(c->NT())) - mx, dy = c->meanCorrelation - my;
                sxx += dx * dx;
                sxy += dx * dy;
                syy += dy * dy;
            }
            fit.slope = sxx > 0 ? sxy / sxx : 0.0;
            fit.intercept = my - fit.slope * mx;
            fit.r2 = (sxx > 0 && syy > 0) ? sxy * sxy / (sxx * syy) : 0.0;
        }
        report.fits.push_back(fit);

        for (double target : report.spec.targets) {
            DesignGuidance g;
            g.p = p;
            g.target = target;
            if (fit.slope > 0) g.fittedNT = std::exp((target - fit.intercept) / fit.slope);
            for (auto* c : cells)
                if (c->meanCorrelation >= target && !(static_cast<double>(c->NT()) >= g.observedNT))
                    g.observedNT = static_cast<double>(c->NT());
            report.guidance.push_back(g);
        }

        // Monotonicity across distinct NT levels (cells sharing an NT are averaged).
        std::map<std::size_t, std::pair<double, double>> byNT;
        for (auto* c : cells) {
            byNT[c->NT()].first += c->meanCorrelation;
            byNT[c->NT()].second += 1.0;
        }
        double prev = std::nan("");
        for (const auto& [nt, v] : byNT) {
            const double m = v.first / v.second;
            if (!std::isnan(prev)) {
                ++report.adjacentPairs;
                if (m < prev) ++report.rankViolations;
            }
            prev = m;
        }

        // Same NT, different composition.
        for (std::size_t a = 0; a < cells.size(); ++a)
            for (std::size_t b = a + 1; b < cells.size(); ++b)
                if (cells[a]->NT() == cells[b]->NT() && cells[a]->N != cells[b]->N) {
                    const auto* lo = cells[a]->N < cells[b]->N ? cells[a] : cells[b];
                    const auto* hi = lo == cells[a] ? cells[b] : cells[a];
                    CompositionTest t = welchTest(lo->correlations, hi->correlations);
                    t.p = p;
                    t.N1 = lo->N;
                    t.T1 = lo->T;
                    t.N2 = hi->N;
                    t.T2 = hi->T;
                    report.composition.push_back(t);
                }
    }
}

FactorialReport runFactorial(const FactorialSpec& spec) {
    spec.validate();
    FactorialReport report;
    report.spec = spec;
    for (auto p : spec.ps)
        for (auto N : spec.Ns)
            for (auto T : spec.Ts) {
                FactorialCell c;
                c.N = N;
                c.T = T;
                c.p = p;
                report.cells.push_back(c);
            }
    const std::size_t R = spec.replications;
    std::vector<ReplicationResult> results(report.cells.size() * R);
    parallelFor(results.size(), spec.base.threads, [&](std::size_t job) {
        const auto& c = report.cells[job / R];
        results[job] = runReplication(spec.cellSpec(c.N, c.T, c.p), job % R);
    });
    for (std::size_t job = 0; job < results.size(); ++job) {
        auto& c = report.cells[job / R];
        const auto& r = results[job];
        if (r.failed) {
            ++c.failures;
            warn("factorial cell N=" + std::to_string(c.N) + " T=" + std::to_string(c.T) + " p=" + std::to_string(c.p) +
                 " replication " + std::to_string(r.replication) + " failed: " + r.error);
            continue;
        }
        c.correlations.push_back(r.betaCorrelationDnn);
        c.thetaBias.push_back(r.meanAbsBiasDml);
    }
    summarizeFactorial(report);
    return report;
}

void writeFactorialCsv(const FactorialReport& report, const std::filesystem::path& cellsPath,
                       const std::filesystem::path& guidancePath) {
    {
        std::ofstream out(cellsPath);
        if (!out) throw ArtifactError("cannot write '" + cellsPath.string() + "'");
        csv::writeRow(out, {"p", "N", "T", "NT", "replications", "failures", "mean_beta_corr", "sd_beta_corr",
                            "mean_abs_theta_bias", "flagged"});
        for (const auto& c : report.cells)
            csv::writeRow(out, {std::to_string(c.p), std::to_string(c.N), std::to_string(c.T), std::to_string(c.NT()),
                                std::to_string(c.correlations.size()), std::to_string(c.failures),
                                csv::formatNumber(c.meanCorrelation), csv::formatNumber(c.sdCorrelation),
                                csv::formatNumber(c.meanThetaBias), c.flagged ? "1" : "0"});
    }
    std::ofstream out(guidancePath);
    if (!out) throw ArtifactError("cannot write '" + guidancePath.string() + "'");
    csv::writeRow(out, {"p", "target_corr", "min_NT_fitted", "min_NT_observed"});
    for (const auto& g : report.guidance)
        csv::writeRow(out, {std::to_string(g.p), csv::formatNumber(g.target), csv::formatNumber(std::round(g.fittedNT)),
                            csv::formatNumber(g.observedNT)});
}

nlohmann::json toJson(const FactorialReport& report) {
    nlohmann::json fits = nlohmann::json::array();
    for (const auto& f : report.fits)
        fits.push_back({{"p", f.p}, {"intercept", num(f.intercept)}, {"slope_log_nt", num(f.slope)}, {"r2", num(f.r2)}});
    nlohmann::json comp = nlohmann::json::array();
    for (const auto& c : report.composition)
        comp.push_back({{"p", c.p},
                        {"a", {{"N", c.N1}, {"T", c.T1}}},
                        {"b", {{"N", c.N2}, {"T", c.T2}}},
                        {"mean_diff", num(c.meanDiff)},
                        {"t", num(c.t)},
                        {"df", num(c.df)},
                        {"p_value", num(c.pValue)}});
    std::size_t flagged = 0;
    for (const auto& c : report.cells) flagged += c.flagged;
    return nlohmann::json{{"mode", "factorial"},
                          {"note", "every cell trains with the base network architecture, epoch budget and fold count; "
                                   "only N, T, p and the smooth map constants vary"},
                          {"spec", report.spec.toJson()},
                          {"cells", report.cells.size()},
                          {"flagged_cells", flagged},
                          {"variance_share", {{"N", num(report.shareN)}, {"T", num(report.shareT)}, {"p", num(report.shareP)}}},
                          {"log_linear", fits},
                          {"adjacent_pairs", report.adjacentPairs},
                          {"rank_violations", report.rankViolations},
                          {"violation_rate", num(report.violationRate())},
                          {"composition", comp}};
}

// ---------------------------------------------------------------------------
// Presets

SimSpec benchmarkPreset(const std::string& name) {
    SimSpec s;
    if (name == "desk") {
        s.M = 1000;
        s.T = 5;
        s.pZ = 6;
        s.levels.assign(5, 2);
        s.replications = 20;
        s.folds = 10;
        s.network.epochs = 500;
        s.network.learningRate = 5e-3;
        s.network.l2Penalty = 0.01;
    } else if (name == "tiny") {
        s.M = 200;
        s.T = 4;
        s.pZ = 4;
        s.levels.assign(3, 2);
        s.replications = 2;
        s.folds = 3;
        s.network.hiddenSizes = {16, 8};
        s.network.epochs = 60;
        s.network.learningRate = 1e-2;
    } else {
        throw ConfigError("unknown preset '" + name + "' (expected desk or tiny)");
    }
    s.map = BetaMap::smoothFromSeed(s.width(), s.pZ, s.dgpSeed);
    return s;
}

FactorialSpec factorialPreset(const std::string& name) {
    FactorialSpec f;
    if (name == "desk") {
        f.base = benchmarkPreset("desk");
        f.base.folds = 5;
        f.base.network.epochs = 300;
        f.l2ReferenceRows = f.base.rows();
        f.Ns = {250, 500, 1000, 2000};
        f.Ts = {2, 4, 8};
        f.ps = {5, 8};
        f.replications = 4;
    } else if (name == "tiny") {
        f.base = benchmarkPreset("tiny");
        f.Ns = {100, 200};
        f.Ts = {2, 4};
        f.ps = {3};
        f.replications = 3;
    } else {
        throw ConfigError("unknown preset '" + name + "' (expected desk or tiny)");
    }
    return f;
}

}  // namespace deepchoice
