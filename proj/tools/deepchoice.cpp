// deepchoice command-line interface: fit, quantify, validate, simulate.

#include "deepchoice/baseline.hpp"
#include "deepchoice/crossfit.hpp"
#include "deepchoice/csv.hpp"
#include "deepchoice/dataio.hpp"
#include "deepchoice/dml.hpp"
#include "deepchoice/manifest.hpp"
#include "deepchoice/net.hpp"
#include "deepchoice/quantities.hpp"
#include "deepchoice/simulate.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>

namespace fs = std::filesystem;
using namespace deepchoice;

namespace {

enum ExitCode : int {
    kOk = 0,
    kUsage = 1,
    kLoad = 2,
    kTrain = 3,
    kInference = 4,
    kArtifact = 5,
    kSimulation = 6,
    kInternal = 7,
};

int exitCodeFor(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Load:
        case ErrorKind::Schema: return kLoad;
        case ErrorKind::Train: return kTrain;
        case ErrorKind::Inference: return kInference;
        case ErrorKind::Artifact: return kArtifact;
        case ErrorKind::Config: return kUsage;
        case ErrorKind::Simulation: return kSimulation;
    }
    return kInternal;
}

void ensureDir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw ArtifactError("cannot create output directory '" + dir.string() + "': " + ec.message());
}

void writeJson(const nlohmann::json& j, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw ArtifactError("cannot write '" + path.string() + "'");
    out << j.dump(2) << '\n';
}

// ---- fit ----------------------------------------------------------------------

struct FitArgs {
    std::string data, covariates, schema, out;
    std::size_t k = 10;
    std::size_t epochs = 2000;
    std::vector<std::size_t> hidden{32, 32, 16};
    double lr = 1e-3;
    double l2 = 0.0;
    std::size_t batch = 0;
    std::string optimizer = "adam";
    std::uint64_t seed = 0;
    std::size_t threads = 0;
    double ridge = -1.0;
    std::string lambda = "pooled";
    bool centered = false;
    bool differenced = false;
    bool fullData = false;
};

ConjointDataset loadInputs(const std::string& data, const std::string& covariates, const AttributeSchema& schema,
                           bool differenced) {
    return differenced ? loadDifferencedDataset(data, covariates, schema) : loadDataset(data, covariates, schema);
}

DmlOptions dmlOptions(double ridge, const std::string& lambda, bool centered) {
    DmlOptions opt;
    if (ridge >= 0.0) opt.ridge = ridge;
    if (lambda == "pooled")
        opt.mode = LambdaMode::Pooled;
    else if (lambda == "own-rows")
        opt.mode = LambdaMode::OwnRows;
    else
        throw ConfigError("--lambda must be 'pooled' or 'own-rows'");
    opt.centered = centered;
    return opt;
}

int cmdFit(const FitArgs& a) {
    Stopwatch total;
    const fs::path out(a.out);
    RunManifest manifest("fit");

    Stopwatch sw;
    const AttributeSchema schema = AttributeSchema::fromFile(a.schema);
    const ConjointDataset ds = loadInputs(a.data, a.covariates, schema, a.differenced);
    std::cout << ds.summary();
    const RandomizationCheck rc = randomizationCheck(ds);
    for (const auto& [k, j] : rc.flagged)
        warn("randomization check: |corr(" + ds.schema.columnNames()[k] + ", " + ds.scaling.names[j] +
             ")| = " + csv::formatNumber(rc.absCorrelation(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j))) +
             " exceeds " + csv::formatNumber(rc.threshold));
    manifest.addStageTime("load", sw.seconds());

    NetworkConfig cfg;
    cfg.hiddenSizes = a.hidden;
    cfg.epochs = a.epochs;
    cfg.learningRate = a.lr;
    cfg.l2Penalty = a.l2;
    cfg.batchSize = a.batch;
    cfg.seed = a.seed;
    if (a.optimizer == "sgd")
        cfg.optimizer = OptimizerKind::Sgd;
    else if (a.optimizer != "adam")
        throw ConfigError("--optimizer must be adam or sgd");
    cfg.validate();
    const DmlOptions opt = dmlOptions(a.ridge, a.lambda, a.centered);
    const std::size_t threads = resolveThreads(a.threads);

    ensureDir(out);
    ensureDir(out / "nets");

    sw = Stopwatch();
    PreferenceMatrix pm;
    if (a.fullData) {
        pm = fullDataFit(ds, cfg);
    } else {
        const FoldPlan plan = makeFolds(ds.respondents(), a.k, a.seed);
        pm = crossFit(ds, cfg, plan, threads);
    }
    manifest.addStageTime("train", sw.seconds());

    sw = Stopwatch();
    const DmlEstimate est = debiasedEstimate(pm, ds, opt);
    manifest.addStageTime("inference", sw.seconds());

    writePreferenceMatrix(pm, out / "preference_matrix.csv");
    manifest.addOutput(out / "preference_matrix.csv");
    writeEstimateCsv(est, out / "estimate.csv");
    manifest.addOutput(out / "estimate.csv");
    writeJson(toJson(est), out / "estimate.json");
    manifest.addOutput(out / "estimate.json");
    for (std::size_t f = 0; f < pm.perFoldNets.size(); ++f) {
        char name[32];
        std::snprintf(name, sizeof(name), a.fullData ? "full.json" : "fold_%02zu.json", f);
        const fs::path p = out / "nets" / name;
        saveNetwork(pm.perFoldNets[f], p);
        manifest.addOutput(p);
    }

    manifest.setConfig({{"data", fs::absolute(a.data).string()},
                        {"covariates", fs::absolute(a.covariates).string()},
                        {"schema", fs::absolute(a.schema).string()},
                        {"differenced", a.differenced},
                        {"cross_fitted", !a.fullData},
                        {"k", a.k},
                        {"network", cfg.toJson()},
                        {"ridge", a.ridge >= 0 ? nlohmann::json(a.ridge) : nlohmann::json("auto")},
                        {"lambda", a.lambda},
                        {"centered", a.centered},
                        {"threads", threads}});
    manifest.addSeed("folds", a.seed);
    manifest.addSeed("network", a.seed);
    manifest.addInput("data", a.data);
    manifest.addInput("covariates", a.covariates);
    manifest.addInput("schema", a.schema);
    manifest.note("randomization_flags", rc.flagged.size());
    manifest.addStageTime("total", total.seconds());
    manifest.write(out);

    std::cout << "\nlevel                      theta      se_clust   se_iid     p_value\n";
    for (std::size_t k = 0; k < est.width(); ++k) {
        const auto j = static_cast<Eigen::Index>(k);
        std::printf("%-24s %10.4f %10.4f %10.4f %10.4g\n", est.columnNames[k].c_str(), est.theta[j], est.seClustered[j],
                    est.seIid[j], est.pValues[j]);
    }
    std::cout << "\nwrote " << (out / "preference_matrix.csv").string() << ", estimate.csv/json, "
              << pm.perFoldNets.size() << " network file(s), manifest.json\n";
    return kOk;
}

// ---- fitted artifacts -----------------------------------------------------------

struct Fitted {
    nlohmann::json manifest;
    ConjointDataset ds;
    PreferenceMatrix pm;
};

Fitted loadFitted(const fs::path& dir) {
    Fitted f;
    if (!fs::is_directory(dir)) throw ArtifactError("fit directory '" + dir.string() + "' does not exist");
    f.manifest = RunManifest::read(dir);
    const auto& cfg = f.manifest.at("config");
    try {
        const AttributeSchema schema = AttributeSchema::fromFile(cfg.at("schema").get<std::string>());
        f.ds = loadInputs(cfg.at("data").get<std::string>(), cfg.at("covariates").get<std::string>(), schema,
                          cfg.value("differenced", false));
    } catch (const nlohmann::json::exception& e) {
        throw ArtifactError(std::string("manifest lacks input paths: ") + e.what());
    }
    if (f.manifest.contains("inputs"))
        for (const auto& [role, entry] : f.manifest["inputs"].items())
            if (entry.contains("path") && entry.contains("sha256") &&
                sha256File(entry["path"].get<std::string>()) != entry["sha256"].get<std::string>())
                warn(role + " input '" + entry["path"].get<std::string>() + "' changed since the fit");
    f.pm = readPreferenceMatrix(dir / "preference_matrix.csv");
    if (f.pm.respondentIds != f.ds.respondentIds || f.pm.columnNames != f.ds.schema.columnNames())
        throw ArtifactError("preference matrix in '" + dir.string() + "' does not match the recorded input data");
    return f;
}

std::vector<std::size_t> resolveLevels(const AttributeSchema& schema, const std::vector<std::string>& keys) {
    std::vector<std::size_t> out;
    for (const auto& k : keys) {
        if (k == "all") {
            for (std::size_t c = 0; c < schema.width(); ++c) out.push_back(c);
        } else {
            out.push_back(schema.columnIndex(k));
        }
    }
    return out;
}

ProfileSelection readProfile(const AttributeSchema& schema, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open profile file '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw LoadError("profile file '" + path + "' is not valid JSON: " + e.what());
    }
    return schema.parseProfile(j);
}

// ---- quantify -------------------------------------------------------------------

struct QuantifyArgs {
    std::string quantity;
    std::string fit;
    std::string out;
    std::vector<std::string> levels{"all"};
    std::string num, den;
    std::string penalty;
    std::string benefitKind = "single";
    std::vector<std::string> benefit;
    std::vector<double> weights;
    bool absolute = false;
    std::string profileA, profileB;
    std::vector<std::string> brackets;
    std::vector<double> midpoints;
    std::string by;
    double tol = 0.0;
    double epsilon = 1e-6;
    std::size_t draws = 4000;
    std::uint64_t seed = 0;
    std::string ameMode = "pair";
};

class QuantityWriter {
  public:
    QuantityWriter(const fs::path& path, RunManifest& manifest) : path_(path), out_(path), manifest_(manifest) {
        if (!out_) throw ArtifactError("cannot write '" + path.string() + "'");
    }
    ~QuantityWriter() {
        out_.close();
        manifest_.addOutput(path_);
    }
    void row(const std::vector<std::string>& fields) { csv::writeRow(out_, fields); }

  private:
    fs::path path_;
    std::ofstream out_;
    RunManifest& manifest_;
};

std::string fmt(double v) { return csv::formatNumber(v); }

int cmdQuantify(const QuantifyArgs& a) {
    Stopwatch total;
    const fs::path fitDir(a.fit);
    const fs::path out = a.out.empty() ? fitDir / "quantities" : fs::path(a.out);
    const Fitted f = loadFitted(fitDir);
    const auto& ds = f.ds;
    const auto& pm = f.pm;
    const auto& schema = ds.schema;
    const auto& names = schema.columnNames();
    ensureDir(out);
    RunManifest manifest("quantify " + a.quantity);
    manifest.addInput("preference_matrix", fitDir / "preference_matrix.csv");
    manifest.addInput("fit_manifest", fitDir / "manifest.json");

    const std::vector<std::string> groups = a.by.empty() ? std::vector<std::string>{} : binCovariate(ds, a.by);
    const bool grouped = !groups.empty();
    // Respondent subsets: "all" plus one per group label.
    std::vector<std::pair<std::string, std::vector<std::size_t>>> subsets{{"all", {}}};
    for (std::size_t i = 0; i < pm.respondents(); ++i) subsets[0].second.push_back(i);
    if (grouped) {
        std::map<std::string, std::size_t> index;
        for (std::size_t i = 0; i < groups.size(); ++i) {
            auto [it, fresh] = index.try_emplace(groups[i], subsets.size());
            if (fresh) subsets.push_back({groups[i], {}});
            subsets[it->second].second.push_back(i);
        }
    }
    auto subsetPm = [&](const std::vector<std::size_t>& ids) {
        PreferenceMatrix s;
        s.beta.resize(static_cast<Eigen::Index>(ids.size()), pm.beta.cols());
        for (std::size_t r = 0; r < ids.size(); ++r)
            s.beta.row(static_cast<Eigen::Index>(r)) = pm.beta.row(static_cast<Eigen::Index>(ids[r]));
        s.columnNames = pm.columnNames;
        for (auto i : ids) s.respondentIds.push_back(pm.respondentIds[i]);
        return s;
    };
    auto groupOf = [&](std::size_t i) { return grouped ? groups[i] : std::string("all"); };
    auto respondentRows = [&](QuantityWriter& w, const std::string& column, const Vector& values,
                              std::vector<std::string> header) {
        header.insert(header.begin(), {"respondent_id", "group"});
        header.insert(header.begin() + 2, column);
        w.row(header);
        for (std::size_t i = 0; i < pm.respondents(); ++i) {
            std::vector<std::string> row{pm.respondentIds[i], groupOf(i), fmt(values[static_cast<Eigen::Index>(i)])};
            row.resize(header.size(), "");
            w.row(row);
        }
    };

    const std::string& q = a.quantity;
    if (q == "polarization") {
        QuantityWriter w(out / "polarization.csv", manifest);
        w.row({"group", "level", "frac_positive", "frac_negative", "frac_zero", "respondents"});
        for (const auto& [g, ids] : subsets) {
            const PreferenceMatrix s = subsetPm(ids);
            for (auto k : resolveLevels(schema, a.levels)) {
                const Polarization pol = polarization(s, k, a.tol);
                w.row({g, names[k], fmt(pol.fracPositive), fmt(pol.fracNegative), fmt(pol.fracZero),
                       std::to_string(ids.size())});
            }
        }
    } else if (q == "ame") {
        AmeOptions opt;
        opt.draws = a.draws;
        opt.seed = a.seed;
        if (a.ameMode == "single")
            opt.mode = AmeMode::SingleProfile;
        else if (a.ameMode != "pair")
            throw ConfigError("--ame-mode must be pair or single");
        QuantityWriter w(out / "ame.csv", manifest);
        w.row({"group", "level", "ame", "mc_se", "exact", "lpm_amce"});
        for (const auto& [g, ids] : subsets) {
            const PreferenceMatrix s = subsetPm(ids);
            for (auto k : resolveLevels(schema, a.levels)) {
                const AmeResult r = averageMarginalEffect(s, ds, k, opt);
                w.row({g, names[k], fmt(r.ame), fmt(r.mcSE), r.exact ? "1" : "0", g == "all" ? fmt(lpmAmce(ds, k)) : "NA"});
            }
        }
    } else if (q == "importance") {
        const ImportanceShares imp = importanceShares(pm, ds);
        std::vector<std::string> attrs;
        for (const auto& at : schema.attributes()) attrs.push_back(at.name);
        {
            QuantityWriter w(out / "importance.csv", manifest);
            std::vector<std::string> header{"respondent_id", "group"};
            header.insert(header.end(), attrs.begin(), attrs.end());
            header.push_back("degenerate");
            w.row(header);
            for (std::size_t i = 0; i < pm.respondents(); ++i) {
                std::vector<std::string> row{pm.respondentIds[i], groupOf(i)};
                for (std::size_t g = 0; g < attrs.size(); ++g)
                    row.push_back(fmt(imp.shares(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(g))));
                row.push_back(imp.degenerate[i] ? "1" : "0");
                w.row(row);
            }
        }
        QuantityWriter w(out / "importance_summary.csv", manifest);
        w.row({"group", "attribute", "mean_share", "respondents"});
        for (const auto& [g, ids] : subsets)
            for (std::size_t at = 0; at < attrs.size(); ++at) {
                double m = 0;
                for (auto i : ids) m += imp.shares(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(at));
                w.row({g, attrs[at], fmt(ids.empty() ? std::nan("") : m / static_cast<double>(ids.size())),
                       std::to_string(ids.size())});
            }
    } else if (q == "mrs") {
        if (a.num.empty() || a.den.empty()) throw ConfigError("mrs needs --num and --den");
        const std::size_t j = schema.columnIndex(a.num), k = schema.columnIndex(a.den);
        const MrsResult all = mrs(pm, j, k, a.epsilon);
        QuantityWriter w(out / "mrs.csv", manifest);
        const std::vector<std::string> extra{"mean", "median", "ratio_of_means", "undefined"};
        respondentRows(w, "mrs", all.ratio, extra);
        for (const auto& [g, ids] : subsets) {
            const MrsResult r = mrs(subsetPm(ids), j, k, a.epsilon);
            w.row({"summary", g, "NA", fmt(r.meanRatio), fmt(r.medianRatio), fmt(r.ratioOfMeans),
                   std::to_string(r.undefinedCount)});
        }
    } else if (q == "compdiff") {
        if (a.penalty.empty()) throw ConfigError("compdiff needs --penalty");
        const std::size_t j = schema.columnIndex(a.penalty);
        Benefit b;
        const auto cols = resolveLevels(schema, a.benefit);
        if (a.benefitKind == "none") {
            b = Benefit::none();
        } else if (cols.empty()) {
            throw ConfigError("compdiff: empty benefit set (use --benefit, or --benefit-kind none)");
        } else if (a.benefitKind == "single") {
            if (cols.size() != 1) throw ConfigError("--benefit-kind single takes exactly one level");
            b = Benefit::single(cols[0]);
        } else if (a.benefitKind == "weighted") {
            std::vector<double> w = a.weights.empty() ? std::vector<double>(cols.size(), 1.0) : a.weights;
            if (w.size() != cols.size()) throw ConfigError("--weights needs one value per benefit level");
            b = Benefit::weighted(cols, w, a.absolute);
        } else if (a.benefitKind == "max") {
            b = Benefit::maxOver(cols);
        } else {
            throw ConfigError("--benefit-kind must be none, single, weighted or max");
        }
        {
            const CompensationResult all = compensatingDifferential(pm, j, b);
            QuantityWriter w(out / "compdiff_respondents.csv", manifest);
            respondentRows(w, "holds", all.holds, {"benefit"});
        }
        QuantityWriter w(out / "compdiff.csv", manifest);
        w.row({"group", "penalty", "benefit_kind", "fraction", "respondents"});
        for (const auto& [g, ids] : subsets)
            w.row({g, names[j], a.benefitKind, fmt(compensatingDifferential(subsetPm(ids), j, b).fraction),
                   std::to_string(ids.size())});
    } else if (q == "chooseprob" || q == "majority") {
        if (a.profileA.empty() || a.profileB.empty()) throw ConfigError(q + " needs --profile-a and --profile-b");
        const ProfileSelection pa = readProfile(schema, a.profileA), pb = readProfile(schema, a.profileB);
        manifest.addInput("profile_a", a.profileA);
        manifest.addInput("profile_b", a.profileB);
        if (q == "chooseprob") {
            {
                const ChoiceProbabilities all = choiceProbability(pm, schema, pa, pb);
                QuantityWriter w(out / "chooseprob.csv", manifest);
                respondentRows(w, "probability", all.probability, {});
            }
            QuantityWriter w(out / "chooseprob_summary.csv", manifest);
            w.row({"group", "mean_probability", "share_above_half", "respondents"});
            for (const auto& [g, ids] : subsets) {
                const ChoiceProbabilities cp = choiceProbability(subsetPm(ids), schema, pa, pb);
                w.row({g, fmt(cp.mean), fmt(cp.shareAboveHalf), std::to_string(ids.size())});
            }
        } else {
            QuantityWriter w(out / "majority.csv", manifest);
            w.row({"group", "frac_prefer_a", "frac_prefer_b", "frac_tie", "respondents"});
            for (const auto& [g, ids] : subsets) {
                const MajorityPreference mp = majorityPreference(subsetPm(ids), schema, pa, pb);
                w.row({g, fmt(mp.fracPositive), fmt(mp.fracNegative), fmt(mp.fracTie), std::to_string(ids.size())});
            }
        }
    } else if (q == "slope") {
        const auto cols = resolveLevels(schema, a.brackets);
        if (cols.size() < 2) throw ConfigError("slope needs at least two --brackets");
        const SlopeResult all = progressivitySlope(pm, cols, a.midpoints);
        {
            QuantityWriter w(out / "slope.csv", manifest);
            respondentRows(w, "slope", all.slope, {});
        }
        QuantityWriter w(out / "slope_summary.csv", manifest);
        w.row({"group", "mean_slope", "frac_positive", "frac_top_above_bottom", "respondents"});
        for (const auto& [g, ids] : subsets) {
            const SlopeResult r = progressivitySlope(subsetPm(ids), cols, a.midpoints);
            w.row({g, fmt(r.slope.size() ? r.slope.mean() : std::nan("")), fmt(r.fracPositive),
                   fmt(r.fracTopAboveBottom), std::to_string(ids.size())});
        }
    } else if (q == "sensitivity") {
        const auto cols = resolveLevels(schema, a.levels);
        const Vector idx = sensitivityIndex(pm, cols);
        {
            QuantityWriter w(out / "sensitivity.csv", manifest);
            respondentRows(w, "sensitivity", idx, {});
        }
        QuantityWriter w(out / "sensitivity_summary.csv", manifest);
        w.row({"group", "mean_sensitivity", "respondents"});
        for (const auto& [g, ids] : subsets) {
            const Vector s = sensitivityIndex(subsetPm(ids), cols);
            w.row({g, fmt(s.size() ? s.mean() : std::nan("")), std::to_string(ids.size())});
        }
    } else {
        throw ConfigError("unknown quantity '" + q +
                          "' (expected ame, polarization, importance, mrs, compdiff, chooseprob, majority, slope, "
                          "sensitivity)");
    }

    manifest.setConfig({{"quantity", q},
                        {"fit", fs::absolute(fitDir).string()},
                        {"levels", a.levels},
                        {"by", a.by},
                        {"tol", a.tol},
                        {"epsilon", a.epsilon},
                        {"draws", a.draws}});
    manifest.addSeed("ame", a.seed);
    manifest.addStageTime("total", total.seconds());
    manifest.write(out);
    for (const auto& p : manifest.outputs()) std::cout << "wrote " << p.string() << "\n";
    return kOk;
}

// ---- validate --------------------------------------------------------------------

int cmdValidate(const std::string& fitDir, const std::string& outArg, const std::string& by, std::size_t minRows) {
    Stopwatch total;
    const Fitted f = loadFitted(fitDir);
    const fs::path out = outArg.empty() ? fs::path(fitDir) / "validate" : fs::path(outArg);
    ensureDir(out);
    RunManifest manifest("validate");
    manifest.addInput("preference_matrix", fs::path(fitDir) / "preference_matrix.csv");

    const LogitFit pooled = fitLogit(f.ds);
    writeJson(toJson(pooled, f.ds.schema.columnNames()), out / "logit.json");
    manifest.addOutput(out / "logit.json");

    std::vector<std::string> groups;
    if (!by.empty()) groups = binCovariate(f.ds, by);
    const ValidationReport rep = validateAverages(f.pm, f.ds, by.empty() ? nullptr : &groups, minRows);
    writeValidationCsv(rep, out / "validation.csv");
    manifest.addOutput(out / "validation.csv");
    writeJson(toJson(rep), out / "validation.json");
    manifest.addOutput(out / "validation.json");

    manifest.setConfig({{"fit", fs::absolute(fitDir).string()}, {"by", by}, {"min_rows", minRows}});
    manifest.addStageTime("total", total.seconds());
    manifest.write(out);

    for (const auto& g : rep.groups) {
        if (g.skipped)
            std::printf("%-16s %s\n", g.group.c_str(), g.note.c_str());
        else
            std::printf("%-16s rows %-7zu corr %.4f  MAD %.4f\n", g.group.c_str(), g.rows, g.correlation, g.meanAbsDiff);
    }
    std::printf("overall          corr %.4f  MAD %.4f\n", rep.correlation, rep.meanAbsDiff);
    return kOk;
}

// ---- simulate ---------------------------------------------------------------------

struct SimulateArgs {
    std::string mode = "benchmark";
    std::string preset;
    std::string spec;
    std::string out;
    std::size_t replications = 0;
    std::size_t threads = 0;
    std::uint64_t seed = 0;
    bool seedSet = false;
    std::size_t epochs = 0;
    double lr = 0.0;
    std::size_t k = 0;
    std::size_t M = 0, T = 0;
};

nlohmann::json readJsonFile(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open simulation spec '" + path + "'");
    try {
        nlohmann::json j;
        in >> j;
        return j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("simulation spec '" + path + "' is not valid JSON: " + e.what());
    }
}

void applyOverrides(SimSpec& s, const SimulateArgs& a) {
    if (a.replications) s.replications = a.replications;
    if (a.seedSet) s.seed = a.seed;
    if (a.epochs) s.network.epochs = a.epochs;
    if (a.lr > 0) s.network.learningRate = a.lr;
    if (a.k) s.folds = a.k;
    if (a.M) s.M = a.M;
    if (a.T) s.T = a.T;
    s.threads = resolveThreads(a.threads);
}

int cmdSimulate(const SimulateArgs& a) {
    Stopwatch total;
    if (a.out.empty()) throw ConfigError("simulate needs --out");
    const fs::path out(a.out);
    ensureDir(out);
    RunManifest manifest("simulate " + a.mode);
    if (!a.spec.empty()) manifest.addInput("spec", a.spec);
    const std::string preset = a.preset.empty() ? "desk" : a.preset;

    if (a.mode == "benchmark" || a.mode == "export") {
        SimSpec spec = a.spec.empty() ? benchmarkPreset(preset) : SimSpec::fromJson(readJsonFile(a.spec));
        applyOverrides(spec, a);
        spec.validate();
        manifest.setConfig(spec.toJson());
        manifest.addSeed("master", spec.seed);
        manifest.addSeed("dgp", spec.dgpSeed);
        if (a.mode == "export") {
            const SimulatedData sim = generate(spec, 0);
            writeLongFormat(sim.data, out / "profiles.csv", out / "covariates.csv");
            writeJson(sim.data.schema.toJson(), out / "schema.json");
            PreferenceMatrix truth = preferenceMatrixFrom(sim.data, sim.trueBeta);
            writePreferenceMatrix(truth, out / "true_beta.csv");
            nlohmann::json theta = nlohmann::json::object();
            for (std::size_t k = 0; k < sim.data.width(); ++k)
                theta[sim.data.schema.columnNames()[k]] = sim.trueTheta[static_cast<Eigen::Index>(k)];
            writeJson({{"true_theta", theta}, {"spec", spec.toJson()}}, out / "truth.json");
            for (const char* n : {"profiles.csv", "covariates.csv", "schema.json", "true_beta.csv", "truth.json"})
                manifest.addOutput(out / n);
            std::cout << sim.data.summary();
        } else {
            const SimReport rep = runBenchmark(spec);
            writeBenchmarkCsv(rep, out / "benchmark.csv");
            writeJson(toJson(rep), out / "benchmark.json");
            manifest.addOutput(out / "benchmark.csv");
            manifest.addOutput(out / "benchmark.json");
            double fit = 0, dml = 0, logit = 0;
            for (const auto& r : rep.replications) {
                fit += r.secondsFit;
                dml += r.secondsDml;
                logit += r.secondsLogit;
            }
            manifest.addStageTime("fit", fit);
            manifest.addStageTime("dml", dml);
            manifest.addStageTime("logit", logit);
            std::printf("replications %zu (failed %zu)\n", rep.replications.size(), rep.failures);
            std::printf("%-16s %8s %8s %8s\n", "coverage", "dml", "plug-in", "logit");
            for (std::size_t k = 0; k < rep.columnNames.size(); ++k) {
                const auto j = static_cast<Eigen::Index>(k);
                std::printf("%-16s %8.3f %8.3f %8.3f\n", rep.columnNames[k].c_str(), rep.coverageDml[j],
                            rep.coveragePlugIn[j], rep.coverageLogit[j]);
            }
            std::printf("beta corr: dnn %.3f, logit %.3f; profile MAD %.4f\n",
                        rep.summarize(&ReplicationResult::betaCorrelationDnn).first,
                        rep.summarize(&ReplicationResult::betaCorrelationLogit).first,
                        rep.summarize([](const ReplicationResult& r) { return r.profileDnn.population; }).first);
        }
    } else if (a.mode == "factorial") {
        FactorialSpec spec = a.spec.empty() ? factorialPreset(preset) : FactorialSpec::fromJson(readJsonFile(a.spec));
        applyOverrides(spec.base, a);
        if (a.replications) spec.replications = a.replications;
        manifest.setConfig(spec.toJson());
        manifest.addSeed("master", spec.base.seed);
        manifest.addSeed("dgp", spec.base.dgpSeed);
        const FactorialReport rep = runFactorial(spec);
        writeFactorialCsv(rep, out / "factorial_cells.csv", out / "design_guidance.csv");
        writeJson(toJson(rep), out / "factorial.json");
        for (const char* n : {"factorial_cells.csv", "design_guidance.csv", "factorial.json"}) manifest.addOutput(out / n);
        std::printf("%3s %6s %3s %8s %10s\n", "p", "N", "T", "NT", "corr");
        for (const auto& c : rep.cells)
            std::printf("%3zu %6zu %3zu %8zu %10.4f\n", c.p, c.N, c.T, c.NT(), c.meanCorrelation);
        std::printf("variance share N %.3f, T %.3f, p %.3f; rank violations %zu/%zu\n", rep.shareN, rep.shareT,
                    rep.shareP, rep.rankViolations, rep.adjacentPairs);
    } else {
        throw ConfigError("--mode must be benchmark, factorial or export");
    }
    manifest.addStageTime("total", total.seconds());
    manifest.write(out);
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Heterogeneous-preference logit estimation for forced-choice conjoint data"};
    app.set_config("--config", "", "Read options from a TOML/INI config file");
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kVersion));

    FitArgs fit;
    auto* fitCmd = app.add_subcommand("fit", "Cross-fit the preference network and compute debiased estimates");
    fitCmd->add_option("--data", fit.data, "Long-format profiles CSV (or differenced rows with --differenced)")->required();
    fitCmd->add_option("--covariates", fit.covariates, "Respondent covariates CSV")->required();
    fitCmd->add_option("--schema", fit.schema, "Attribute schema JSON")->required();
    fitCmd->add_option("--out", fit.out, "Output directory")->required();
    fitCmd->add_option("--k", fit.k, "Cross-fitting folds")->capture_default_str();
    fitCmd->add_option("--epochs", fit.epochs, "Training epochs per fold")->capture_default_str();
    fitCmd->add_option("--hidden", fit.hidden, "Hidden layer widths, comma separated")->delimiter(',')->capture_default_str();
    fitCmd->add_option("--lr", fit.lr, "Learning rate")->capture_default_str();
    fitCmd->add_option("--l2", fit.l2, "L2 penalty on weights")->capture_default_str();
    fitCmd->add_option("--batch-size", fit.batch, "Respondents per mini-batch (0 = full batch)")->capture_default_str();
    fitCmd->add_option("--optimizer", fit.optimizer, "adam or sgd")->capture_default_str();
    fitCmd->add_option("--seed", fit.seed, "Seed for folds and network initialization")->capture_default_str();
    fitCmd->add_option("--threads", fit.threads, "Worker threads (0 = all cores, 1 = bitwise reproducible)")
        ->capture_default_str();
    fitCmd->add_option("--ridge", fit.ridge, "Ridge added to each information matrix (default 1e-6 * trace / p)");
    fitCmd->add_option("--lambda", fit.lambda, "Information matrix estimator: pooled or own-rows")->capture_default_str();
    fitCmd->add_flag("--centered", fit.centered, "Center cluster sums in the clustered variance");
    fitCmd->add_flag("--differenced", fit.differenced, "Input rows are already differenced");
    fitCmd->add_flag("--full-data", fit.fullData, "Train one network on all respondents (no cross-fitting)");

    QuantifyArgs qa;
    auto* qCmd = app.add_subcommand("quantify", "Compute structural quantities from a fitted run");
    qCmd->add_option("quantity", qa.quantity,
                     "ame, polarization, importance, mrs, compdiff, chooseprob, majority, slope or sensitivity")
        ->required();
    qCmd->add_option("--fit", qa.fit, "Directory written by `fit`")->required();
    qCmd->add_option("--out", qa.out, "Output directory (default <fit>/quantities)");
    qCmd->add_option("--level,--levels", qa.levels, "Levels ('attr:level', column index, or all)")->delimiter(',');
    qCmd->add_option("--num", qa.num, "MRS numerator level");
    qCmd->add_option("--den", qa.den, "MRS denominator level");
    qCmd->add_option("--penalty", qa.penalty, "Compensating differential penalty level");
    qCmd->add_option("--benefit", qa.benefit, "Benefit levels")->delimiter(',');
    qCmd->add_option("--benefit-kind", qa.benefitKind, "none, single, weighted or max")->capture_default_str();
    qCmd->add_option("--weights", qa.weights, "Weights for --benefit-kind weighted")->delimiter(',');
    qCmd->add_flag("--abs", qa.absolute, "Weighted benefit uses absolute coefficients");
    qCmd->add_option("--profile-a", qa.profileA, "Profile A JSON ({\"attr\": \"level\", ...})");
    qCmd->add_option("--profile-b", qa.profileB, "Profile B JSON");
    qCmd->add_option("--brackets", qa.brackets, "Ordered bracket levels for slope")->delimiter(',');
    qCmd->add_option("--midpoints", qa.midpoints, "Bracket midpoints for slope")->delimiter(',');
    qCmd->add_option("--by", qa.by, "Covariate for subgroup summaries (terciles if continuous)");
    qCmd->add_option("--tol", qa.tol, "Polarization zero band")->capture_default_str();
    qCmd->add_option("--epsilon", qa.epsilon, "MRS denominator guard")->capture_default_str();
    qCmd->add_option("--draws", qa.draws, "AME Monte Carlo draws")->capture_default_str();
    qCmd->add_option("--seed", qa.seed, "AME Monte Carlo seed")->capture_default_str();
    qCmd->add_option("--ame-mode", qa.ameMode, "pair or single")->capture_default_str();

    std::string valFit, valOut, valBy;
    std::size_t valMinRows = 200;
    auto* vCmd = app.add_subcommand("validate", "Compare network averages with homogeneous logit fits");
    vCmd->add_option("--fit", valFit, "Directory written by `fit`")->required();
    vCmd->add_option("--out", valOut, "Output directory (default <fit>/validate)");
    vCmd->add_option("--by", valBy, "Covariate defining comparison groups");
    vCmd->add_option("--min-rows", valMinRows, "Skip groups with fewer rows")->capture_default_str();

    SimulateArgs sa;
    auto* sCmd = app.add_subcommand("simulate", "Monte Carlo benchmark, factorial grid, or synthetic data export");
    sCmd->add_option("--mode", sa.mode, "benchmark, factorial or export")->capture_default_str();
    sCmd->add_option("--preset", sa.preset, "desk or tiny (default desk)");
    sCmd->add_option("--spec", sa.spec, "Simulation spec JSON (overrides --preset)");
    sCmd->add_option("--out", sa.out, "Output directory")->required();
    sCmd->add_option("--replications", sa.replications, "Replications (per cell for factorial)");
    sCmd->add_option("--threads", sa.threads, "Worker threads (0 = all cores)")->capture_default_str();
    auto* seedOpt = sCmd->add_option("--seed", sa.seed, "Master seed");
    sCmd->add_option("--epochs", sa.epochs, "Training epochs override");
    sCmd->add_option("--lr", sa.lr, "Learning rate override");
    sCmd->add_option("--k", sa.k, "Fold count override");
    sCmd->add_option("--respondents", sa.M, "Respondent count override");
    sCmd->add_option("--tasks", sa.T, "Tasks per respondent override");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }

    try {
        if (fitCmd->parsed()) return cmdFit(fit);
        if (qCmd->parsed()) return cmdQuantify(qa);
        if (vCmd->parsed()) return cmdValidate(valFit, valOut, valBy, valMinRows);
        if (sCmd->parsed()) {
            sa.seedSet = seedOpt->count() > 0;
            return cmdSimulate(sa);
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exitCodeFor(e.kind());
    } catch (const std::out_of_range& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return kInternal;
    }
    return kUsage;
}
