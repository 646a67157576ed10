#pragma once

#include "deepchoice/crossfit.hpp"
#include "deepchoice/dataio.hpp"
#include "deepchoice/dml.hpp"
#include "deepchoice/net.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace deepchoice {

struct SimulationError : Error {
    explicit SimulationError(const std::string& what) : Error(ErrorKind::Simulation, what) {}
};

enum class BetaMapKind { Homogeneous, Linear, PiecewiseTwoType, SmoothNonlinear, FromNetwork };

/// True preference map beta*(Z). Z is on the raw simulation scale: standard
/// normal columns followed by a block of {0,1} columns.
struct BetaMap {
    BetaMapKind kind = BetaMapKind::Homogeneous;
    Vector beta0;  // Homogeneous

    Matrix B;   // Linear: beta = B z + c, p x pZ
    Vector c;   // Linear, SmoothNonlinear offsets

    std::size_t splitCovariate = 0;  // PiecewiseTwoType: betaHigh where z_j > threshold
    double threshold = 0.0;
    Vector betaHigh;
    Vector betaLow;

    Vector amplitude;  // SmoothNonlinear: beta_k = a_k tanh(w_k' z) + c_k
    Matrix W;          // p x pZ

    std::shared_ptr<const Network> network;  // FromNetwork
    std::string networkPath;

    Vector operator()(const Vector& z) const;
    Matrix evaluate(const Matrix& Z) const;  // M x pZ -> M x p

    static BetaMap homogeneous(Vector beta0);
    static BetaMap linear(Matrix B, Vector c);
    static BetaMap twoType(std::size_t split, double threshold, Vector high, Vector low);
    static BetaMap smooth(Vector amplitude, Matrix W, Vector c);
    /// Smooth map with constants drawn from `seed`: rows of W scaled to norm
    /// 1.5, |a_k| in [0.8, 1.6] with random sign, c_k in [-0.4, 0.4].
    static BetaMap smoothFromSeed(std::size_t p, std::size_t pZ, std::uint64_t seed);
    static BetaMap fromNetwork(std::shared_ptr<const Network> net, std::string path = {});

    nlohmann::json toJson() const;
    static BetaMap fromJson(const nlohmann::json& j, std::size_t p, std::size_t pZ, std::uint64_t dgpSeed);
};

std::string toString(BetaMapKind kind);

struct SimSpec {
    std::size_t M = 1000;
    std::size_t T = 5;
    std::size_t pZ = 6;
    std::size_t binaryCovariates = 2;  // trailing {0,1} columns (used when pZ >= 4)
    std::vector<std::size_t> levels{2, 2, 2, 2, 2};  // per attribute, uniform randomization
    BetaMap map;
    std::size_t replications = 20;
    std::uint64_t seed = 1;
    std::uint64_t dgpSeed = 2024;

    NetworkConfig network;
    std::size_t folds = 10;
    DmlOptions dml;
    bool runLogit = true;
    std::size_t profilePairs = 200;  // random pairs for the counterfactual metric
    std::size_t threads = 1;

    std::size_t width() const;  // encoded p
    std::size_t rows() const { return M * T; }
    std::size_t binaryBlock() const { return pZ >= 4 ? std::min(binaryCovariates, pZ) : 0; }
    AttributeSchema schema() const;
    void validate() const;

    nlohmann::json toJson() const;
    static SimSpec fromJson(const nlohmann::json& j);
};

/// Sub-seed for one replication: combineSeeds(seed, M, T, p, r).
std::uint64_t replicationSeed(const SimSpec& spec, std::size_t r);

struct SimulatedData {
    ConjointDataset data;
    Matrix trueBeta;   // M x p
    Vector trueTheta;  // population E[beta*(Z)]
};

/// Deterministic in (spec.seed, r).
SimulatedData generate(const SimSpec& spec, std::size_t r);

/// Population mean of beta*(Z) under the simulation's covariate law: exact for
/// homogeneous/linear/two-type maps, quadrature for the smooth map, Monte
/// Carlo (200k draws) for network maps.
Vector trueTheta(const BetaMap& map, std::size_t pZ, std::size_t binaryBlock, std::uint64_t seed = 7);

/// Draws one level per attribute uniformly.
ProfileSelection drawProfile(const SimSpec& spec, std::mt19937_64& rng);

// ---- metrics ----------------------------------------------------------------

/// Mean over columns of corr_i(estimate_ik, truth_ik); constant columns count as 0.
double individualCorrelation(const Matrix& estimate, const Matrix& truth);
double individualRmse(const Matrix& estimate, const Matrix& truth);

struct ProfileDeviation {
    double population = 0.0;  // mean |avg_i G(dx'b_i) - avg_i G(dx'b*_i)| over pairs
    double individual = 0.0;  // mean |G(dx'b_i) - G(dx'b*_i)| over pairs and respondents
};

ProfileDeviation profileDeviation(const Matrix& estimate, const Matrix& truth, const RowMatrix& contrasts);

/// Random profile-pair contrasts drawn from the design.
RowMatrix randomContrasts(const SimSpec& spec, std::size_t pairs, std::uint64_t seed);

// ---- benchmark -----------------------------------------------------------------

struct ReplicationResult {
    std::size_t replication = 0;
    std::uint64_t seed = 0;
    bool failed = false;
    std::string error;

    Vector trueTheta;
    Vector thetaDml, seDml;
    Vector thetaPlugIn, sePlugIn;
    Vector thetaLogit, seLogit;
    std::vector<bool> coveredDml, coveredPlugIn, coveredLogit;
    Vector seRatio;

    double meanAbsBiasDml = 0.0;
    double meanAbsBiasPlugIn = 0.0;
    double meanAbsBiasLogit = 0.0;
    double betaCorrelationDnn = 0.0;
    double betaCorrelationLogit = 0.0;
    double betaRmseDnn = 0.0;
    double betaRmseLogit = 0.0;
    ProfileDeviation profileDnn;
    ProfileDeviation profileLogit;
    double polarizationCorrelation = 0.0;
    double importanceCorrelation = 0.0;

    double secondsFit = 0.0;
    double secondsDml = 0.0;
    double secondsLogit = 0.0;
};

/// Runs one replication end to end: generate, cross-fit, debias, baseline logit.
ReplicationResult runReplication(const SimSpec& spec, std::size_t r);

struct SimReport {
    SimSpec spec;
    std::vector<ReplicationResult> replications;
    std::size_t failures = 0;

    Vector coverageDml, coveragePlugIn, coverageLogit;  // per column over successful reps
    std::vector<std::string> columnNames;

    /// Mean and across-replication SD of a scalar metric over successful reps.
    std::pair<double, double> summarize(double ReplicationResult::*metric) const;
    std::pair<double, double> summarize(const std::function<double(const ReplicationResult&)>& metric) const;
};

/// Runs replications [first, first + count) (default: all of spec.replications).
SimReport runBenchmark(const SimSpec& spec, std::size_t first = 0, std::size_t count = 0);
void aggregate(SimReport& report);

/// CSV with one row per replication per metric (columns replication, metric,
/// level, value), plus a summary JSON.
void writeBenchmarkCsv(const SimReport& report, const std::filesystem::path& path);
nlohmann::json toJson(const SimReport& report);

// ---- factorial grid ----------------------------------------------------------------

struct FactorialSpec {
    std::vector<std::size_t> Ns{250, 500, 1000, 2000};
    std::vector<std::size_t> Ts{2, 4, 8};
    std::vector<std::size_t> ps{5, 8};  // number of binary attributes
    std::size_t replications = 4;
    SimSpec base;
    std::vector<double> targets{0.3, 0.5, 0.7};
    // When nonzero, base.network.l2Penalty applies at this many choice rows and each
    // cell uses l2Penalty * l2ReferenceRows / (N T), i.e. a fixed penalty on the
    // summed log-likelihood. A per-row penalty that does not shrink with NT caps
    // beta recovery at large cells.
    std::size_t l2ReferenceRows = 0;

    void validate() const;
    nlohmann::json toJson() const;
    static FactorialSpec fromJson(const nlohmann::json& j);
    /// The base spec adjusted to one cell (smooth map constants from dgpSeed and p).
    SimSpec cellSpec(std::size_t N, std::size_t T, std::size_t p) const;
};

struct FactorialCell {
    std::size_t N = 0, T = 0, p = 0;
    std::vector<double> correlations;  // per successful replication
    std::vector<double> thetaBias;     // mean |theta_hat - theta| per replication
    std::size_t failures = 0;
    double meanCorrelation = std::nan("");
    double sdCorrelation = std::nan("");
    double meanThetaBias = std::nan("");
    bool flagged = false;  // every replication failed
    std::size_t NT() const { return N * T; }
};

struct LogLinearFit {
    std::size_t p = 0;
    double intercept = 0.0;
    double slope = 0.0;  // per unit log(NT)
    double r2 = 0.0;
};

struct DesignGuidance {
    std::size_t p = 0;
    double target = 0.0;
    double fittedNT = std::nan("");      // from the log-linear fit
    double observedNT = std::nan("");    // smallest grid NT whose cell mean reaches the target
};

struct CompositionTest {
    std::size_t p = 0;
    std::size_t N1 = 0, T1 = 0, N2 = 0, T2 = 0;
    double meanDiff = 0.0;
    double t = 0.0;
    double df = 0.0;
    double pValue = 1.0;
};

struct FactorialReport {
    FactorialSpec spec;
    std::vector<FactorialCell> cells;
    double shareN = 0.0, shareT = 0.0, shareP = 0.0;  // main-effect sums of squares / total
    std::vector<LogLinearFit> fits;
    std::vector<DesignGuidance> guidance;
    std::size_t adjacentPairs = 0;
    std::size_t rankViolations = 0;
    std::vector<CompositionTest> composition;

    double violationRate() const {
        return adjacentPairs ? static_cast<double>(rankViolations) / static_cast<double>(adjacentPairs) : 0.0;
    }
};

FactorialReport runFactorial(const FactorialSpec& spec);
/// Recomputes the summaries from filled-in cells.
void summarizeFactorial(FactorialReport& report);

/// Two-sided Welch t-test.
CompositionTest welchTest(const std::vector<double>& a, const std::vector<double>& b);

void writeFactorialCsv(const FactorialReport& report, const std::filesystem::path& cellsPath,
                       const std::filesystem::path& guidancePath);
nlohmann::json toJson(const FactorialReport& report);

// ---- presets -----------------------------------------------------------------------

/// "desk" or "tiny".
SimSpec benchmarkPreset(const std::string& name);
FactorialSpec factorialPreset(const std::string& name);

}  // namespace deepchoice
