#include "deepchoice/quantities.hpp"

#include "deepchoice/csv.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <random>
#include <set>

namespace deepchoice {

namespace {

void checkColumn(const PreferenceMatrix& pm, std::size_t k) {
    if (k >= pm.width())
        throw std::out_of_range("level index " + std::to_string(k) + " out of range (width " +
                                std::to_string(pm.width()) + ")");
}

struct WeightedRows {
    RowMatrix rows;
    Vector weight;
};

WeightedRows distinctRows(const std::map<std::vector<double>, double>& counts, Eigen::Index p) {
    WeightedRows out;
    out.rows.resize(static_cast<Eigen::Index>(counts.size()), p);
    out.weight.resize(static_cast<Eigen::Index>(counts.size()));
    double total = 0.0;
    for (const auto& kv : counts) total += kv.second;
    Eigen::Index j = 0;
    for (const auto& [row, w] : counts) {
        for (Eigen::Index c = 0; c < p; ++c) out.rows(j, c) = row[static_cast<std::size_t>(c)];
        out.weight[j] = w / total;
        ++j;
    }
    return out;
}

std::vector<double> rowKey(const RowMatrix& m, Eigen::Index r) {
    return std::vector<double>(m.row(r).data(), m.row(r).data() + m.cols());
}

}  // namespace

AmeResult averageMarginalEffect(const PreferenceMatrix& pm, const ConjointDataset& ds, std::size_t k,
                                const AmeOptions& opt) {
    checkColumn(pm, k);
    if (pm.respondents() == 0) throw InferenceError("average marginal effect: empty preference matrix");
    if (!ds.hasProfiles())
        throw InferenceError("average marginal effect needs profile-level data; pre-differenced input only has contrasts");
    if (pm.width() != ds.width()) throw InferenceError("preference matrix does not match the dataset");

    const auto p = static_cast<Eigen::Index>(ds.width());
    const std::size_t a = ds.schema.attributeOf(k);
    const ColumnRange block = ds.schema.columns(a);
    const bool continuous = ds.schema.attribute(a).continuous;
    const bool pair = opt.mode == AmeMode::PairContrast;

    // Pooled single profiles; "base" has the attribute at its reference.
    const auto N = ds.deltaX.rows();
    RowMatrix profiles(2 * N, p);
    profiles.topRows(N) = ds.profileA;
    profiles.bottomRows(N) = ds.profileB;
    RowMatrix base = profiles;
    if (!continuous)
        for (std::size_t c = block.begin; c < block.end; ++c) base.col(static_cast<Eigen::Index>(c)).setZero();

    std::map<std::vector<double>, double> baseCounts, oppCounts;
    for (Eigen::Index r = 0; r < 2 * N; ++r) {
        baseCounts[rowKey(base, r)] += 1.0;
        if (pair) oppCounts[rowKey(profiles, r)] += 1.0;
    }
    const double cells = pair ? static_cast<double>(baseCounts.size()) * static_cast<double>(oppCounts.size())
                              : static_cast<double>(baseCounts.size());

    AmeResult res;
    const auto kk = static_cast<Eigen::Index>(k);
    if (!opt.forceMonteCarlo && cells <= static_cast<double>(opt.exactLimit)) {
        // Exact enumeration of the index contrast distribution.
        std::map<std::vector<double>, double> contrastCounts;
        if (pair) {
            for (const auto& [x, wx] : baseCounts)
                for (const auto& [b, wb] : oppCounts) {
                    std::vector<double> c(x.size());
                    for (std::size_t j = 0; j < c.size(); ++j) c[j] = x[j] - b[j];
                    contrastCounts[c] += wx * wb;
                }
        } else {
            contrastCounts = baseCounts;
        }
        const WeightedRows contrasts = distinctRows(contrastCounts, p);
        double total = 0.0;
        for (std::size_t i = 0; i < pm.respondents(); ++i) {
            const Vector beta = pm.beta.row(static_cast<Eigen::Index>(i)).transpose();
            const Vector index = contrasts.rows * beta;
            double s = 0.0;
            for (Eigen::Index c = 0; c < index.size(); ++c)
                s += contrasts.weight[c] * (logistic(beta[kk] + index[c]) - logistic(index[c]));
            total += s;
        }
        res.ame = total / static_cast<double>(pm.respondents());
        res.exact = true;
        res.draws = static_cast<std::size_t>(cells);
        return res;
    }

    if (opt.draws < 1000) throw InferenceError("average marginal effect needs at least 1000 Monte Carlo draws");
    std::mt19937_64 rng(opt.seed);
    std::uniform_int_distribution<std::size_t> pickResp(0, pm.respondents() - 1);
    std::uniform_int_distribution<Eigen::Index> pickProfile(0, 2 * N - 1);
    double sum = 0.0, sumSq = 0.0;
    for (std::size_t d = 0; d < opt.draws; ++d) {
        const auto i = static_cast<Eigen::Index>(pickResp(rng));
        Eigen::RowVectorXd c = base.row(pickProfile(rng));
        if (pair) c -= profiles.row(pickProfile(rng));
        const double index = c.dot(pm.beta.row(i));
        const double v = logistic(pm.beta(i, kk) + index) - logistic(index);
        sum += v;
        sumSq += v * v;
    }
    const double n = static_cast<double>(opt.draws);
    res.ame = sum / n;
    const double var = std::max(0.0, (sumSq - n * res.ame * res.ame) / (n - 1.0));
    res.mcSE = std::sqrt(var / n);
    res.draws = opt.draws;
    return res;
}

double lpmAmce(const ConjointDataset& ds, std::size_t k) {
    if (k >= ds.width()) throw std::out_of_range("level index out of range");
    const auto kk = static_cast<Eigen::Index>(k);
    const auto N = static_cast<Eigen::Index>(ds.rows());
    if (!ds.hasProfiles()) {
        double up = 0, nUp = 0, down = 0, nDown = 0;
        for (Eigen::Index r = 0; r < N; ++r) {
            if (ds.deltaX(r, kk) > 0.5) {
                up += ds.y[r];
                ++nUp;
            } else if (ds.deltaX(r, kk) < -0.5) {
                down += ds.y[r];
                ++nDown;
            }
        }
        if (nUp == 0 || nDown == 0) return std::nan("");
        return 0.5 * (up / nUp - down / nDown);
    }
    const std::size_t a = ds.schema.attributeOf(k);
    const ColumnRange block = ds.schema.columns(a);
    const bool continuous = ds.schema.attribute(a).continuous;
    double sx = 0, sy = 0, sxx = 0, sxy = 0, n = 0;
    double level = 0, nLevel = 0, ref = 0, nRef = 0;
    for (int side = 0; side < 2; ++side) {
        const RowMatrix& X = side == 0 ? ds.profileA : ds.profileB;
        for (Eigen::Index r = 0; r < N; ++r) {
            const double chosen = side == 0 ? ds.y[r] : 1.0 - ds.y[r];
            if (continuous) {
                const double x = X(r, kk);
                sx += x;
                sy += chosen;
                sxx += x * x;
                sxy += x * chosen;
                ++n;
                continue;
            }
            if (X(r, kk) > 0.5) {
                level += chosen;
                ++nLevel;
            } else {
                bool isRef = true;
                for (std::size_t c = block.begin; c < block.end; ++c)
                    if (X(r, static_cast<Eigen::Index>(c)) != 0.0) isRef = false;
                if (isRef) {
                    ref += chosen;
                    ++nRef;
                }
            }
        }
    }
    if (continuous) {
        const double den = n * sxx - sx * sx;
        return den > 0 ? (n * sxy - sx * sy) / den : std::nan("");
    }
    if (nLevel == 0 || nRef == 0) return std::nan("");
    return level / nLevel - ref / nRef;
}

Polarization polarization(const PreferenceMatrix& pm, std::size_t k, double tol) {
    checkColumn(pm, k);
    if (tol < 0) throw std::invalid_argument("polarization tolerance must be nonnegative");
    Polarization out;
    const auto M = pm.respondents();
    if (M == 0) return out;
    std::size_t pos = 0, neg = 0;
    for (std::size_t i = 0; i < M; ++i) {
        const double b = pm.beta(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
        if (b > tol)
            ++pos;
        else if (b < -tol)
            ++neg;
    }
    out.fracPositive = static_cast<double>(pos) / static_cast<double>(M);
    out.fracNegative = static_cast<double>(neg) / static_cast<double>(M);
    out.fracZero = static_cast<double>(M - pos - neg) / static_cast<double>(M);
    return out;
}

ImportanceShares importanceShares(const PreferenceMatrix& pm, const ConjointDataset& ds) {
    if (pm.width() != ds.width()) throw InferenceError("preference matrix does not match the dataset");
    const auto A = static_cast<Eigen::Index>(ds.schema.attributeCount());
    ImportanceShares out;
    out.shares = Matrix::Zero(static_cast<Eigen::Index>(pm.respondents()), A);
    out.degenerate.assign(pm.respondents(), false);
    for (std::size_t i = 0; i < pm.respondents(); ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        for (std::size_t k = 0; k < ds.width(); ++k) {
            const double b = pm.beta(ii, static_cast<Eigen::Index>(k));
            out.shares(ii, static_cast<Eigen::Index>(ds.schema.attributeOf(k))) +=
                b * b * ds.designVar[static_cast<Eigen::Index>(k)];
        }
        const double total = out.shares.row(ii).sum();
        if (total > 0.0) {
            out.shares.row(ii) /= total;
        } else {
            out.shares.row(ii).setConstant(1.0 / static_cast<double>(A));
            out.degenerate[i] = true;
        }
    }
    return out;
}

MrsResult mrs(const PreferenceMatrix& pm, std::size_t j, std::size_t k, double epsilon) {
    checkColumn(pm, j);
    checkColumn(pm, k);
    MrsResult out;
    const auto M = static_cast<Eigen::Index>(pm.respondents());
    out.ratio.resize(M);
    std::vector<double> defined;
    for (Eigen::Index i = 0; i < M; ++i) {
        const double den = pm.beta(i, static_cast<Eigen::Index>(k));
        if (std::abs(den) < epsilon) {
            out.ratio[i] = std::nan("");
            ++out.undefinedCount;
        } else {
            out.ratio[i] = pm.beta(i, static_cast<Eigen::Index>(j)) / den;
            defined.push_back(out.ratio[i]);
        }
    }
    if (!defined.empty()) {
        double s = 0;
        for (double v : defined) s += v;
        out.meanRatio = s / static_cast<double>(defined.size());
        std::sort(defined.begin(), defined.end());
        const std::size_t h = defined.size() / 2;
        out.medianRatio = defined.size() % 2 ? defined[h] : 0.5 * (defined[h - 1] + defined[h]);
    }
    if (M > 0) {
        const double meanK = pm.beta.col(static_cast<Eigen::Index>(k)).mean();
        if (std::abs(meanK) >= epsilon) out.ratioOfMeans = pm.beta.col(static_cast<Eigen::Index>(j)).mean() / meanK;
    }
    return out;
}

CompensationResult compensatingDifferential(const PreferenceMatrix& pm, std::size_t penalty, const Benefit& benefit) {
    checkColumn(pm, penalty);
    if (benefit.kind != Benefit::Kind::None && benefit.columns.empty())
        throw std::invalid_argument("compensating differential: empty benefit set");
    if (benefit.kind == Benefit::Kind::Weighted && benefit.weights.size() != benefit.columns.size())
        throw std::invalid_argument("compensating differential: one weight per benefit level required");
    for (auto c : benefit.columns) checkColumn(pm, c);
    const auto M = static_cast<Eigen::Index>(pm.respondents());
    CompensationResult out;
    out.holds.resize(M);
    out.benefit.resize(M);
    for (Eigen::Index i = 0; i < M; ++i) {
        double b = 0.0;
        switch (benefit.kind) {
            case Benefit::Kind::None:
                break;
            case Benefit::Kind::Single:
                b = pm.beta(i, static_cast<Eigen::Index>(benefit.columns[0]));
                break;
            case Benefit::Kind::Weighted:
                for (std::size_t c = 0; c < benefit.columns.size(); ++c) {
                    const double v = pm.beta(i, static_cast<Eigen::Index>(benefit.columns[c]));
                    b += benefit.weights[c] * (benefit.absolute ? std::abs(v) : v);
                }
                break;
            case Benefit::Kind::MaxOver:
                b = -std::numeric_limits<double>::infinity();
                for (auto c : benefit.columns) b = std::max(b, pm.beta(i, static_cast<Eigen::Index>(c)));
                break;
        }
        out.benefit[i] = b;
        out.holds[i] = pm.beta(i, static_cast<Eigen::Index>(penalty)) + b >= 0.0 ? 1.0 : 0.0;
    }
    out.fraction = M > 0 ? out.holds.mean() : 0.0;
    return out;
}

namespace {

Vector profileContrast(const PreferenceMatrix& pm, const AttributeSchema& schema, const ProfileSelection& a,
                       const ProfileSelection& b) {
    if (schema.width() != pm.width())
        throw SchemaError("schema width " + std::to_string(schema.width()) + " does not match the preference matrix (" +
                          std::to_string(pm.width()) + ")");
    return schema.encode(a) - schema.encode(b);
}

}  // namespace

ChoiceProbabilities choiceProbability(const PreferenceMatrix& pm, const AttributeSchema& schema,
                                      const ProfileSelection& a, const ProfileSelection& b) {
    const Vector dx = profileContrast(pm, schema, a, b);
    const Vector index = pm.beta * dx;
    ChoiceProbabilities out;
    out.probability.resize(index.size());
    std::size_t above = 0;
    for (Eigen::Index i = 0; i < index.size(); ++i) {
        out.probability[i] = logistic(index[i]);
        if (out.probability[i] > 0.5) ++above;
    }
    if (index.size() > 0) {
        out.mean = out.probability.mean();
        out.shareAboveHalf = static_cast<double>(above) / static_cast<double>(index.size());
    }
    return out;
}

MajorityPreference majorityPreference(const PreferenceMatrix& pm, const AttributeSchema& schema,
                                      const ProfileSelection& a, const ProfileSelection& b) {
    const Vector dx = profileContrast(pm, schema, a, b);
    const Vector index = pm.beta * dx;
    MajorityPreference out;
    if (index.size() == 0) return out;
    std::size_t pos = 0, neg = 0;
    for (Eigen::Index i = 0; i < index.size(); ++i) {
        if (index[i] > 0)
            ++pos;
        else if (index[i] < 0)
            ++neg;
    }
    const double M = static_cast<double>(index.size());
    out.fracPositive = static_cast<double>(pos) / M;
    out.fracNegative = static_cast<double>(neg) / M;
    out.fracTie = static_cast<double>(static_cast<std::size_t>(index.size()) - pos - neg) / M;
    return out;
}

SlopeResult progressivitySlope(const PreferenceMatrix& pm, const std::vector<std::size_t>& columns,
                               const std::vector<double>& midpoints) {
    if (columns.size() < 2) throw std::invalid_argument("progressivity slope needs at least two brackets");
    if (midpoints.size() != columns.size()) throw std::invalid_argument("one midpoint per bracket required");
    for (auto c : columns) checkColumn(pm, c);
    std::vector<double> x;
    for (double m : midpoints) {
        if (!(m > 0)) throw std::invalid_argument("bracket midpoints must be positive");
        x.push_back(std::log(m));
    }
    double xbar = 0;
    for (double v : x) xbar += v;
    xbar /= static_cast<double>(x.size());
    double sxx = 0;
    for (double v : x) sxx += (v - xbar) * (v - xbar);
    if (!(sxx > 0)) throw std::invalid_argument("bracket midpoints must not all be equal");

    const auto M = static_cast<Eigen::Index>(pm.respondents());
    SlopeResult out;
    out.slope.resize(M);
    std::size_t pos = 0, top = 0;
    for (Eigen::Index i = 0; i < M; ++i) {
        double sxy = 0;
        for (std::size_t c = 0; c < columns.size(); ++c)
            sxy += (x[c] - xbar) * pm.beta(i, static_cast<Eigen::Index>(columns[c]));
        out.slope[i] = sxy / sxx;
        if (out.slope[i] > 0) ++pos;
        if (pm.beta(i, static_cast<Eigen::Index>(columns.back())) > pm.beta(i, static_cast<Eigen::Index>(columns.front())))
            ++top;
    }
    if (M > 0) {
        out.fracPositive = static_cast<double>(pos) / static_cast<double>(M);
        out.fracTopAboveBottom = static_cast<double>(top) / static_cast<double>(M);
    }
    return out;
}

Vector sensitivityIndex(const PreferenceMatrix& pm, const std::vector<std::size_t>& columns) {
    if (columns.empty()) throw std::invalid_argument("sensitivity index: empty level set");
    for (auto c : columns) checkColumn(pm, c);
    Vector out = Vector::Zero(static_cast<Eigen::Index>(pm.respondents()));
    for (auto c : columns) out += pm.beta.col(static_cast<Eigen::Index>(c)).cwiseAbs();
    return out / static_cast<double>(columns.size());
}

std::vector<std::string> binCovariate(const ConjointDataset& ds, const std::string& covariate, std::size_t maxDiscrete) {
    const auto& names = ds.scaling.names;
    const auto it = std::find(names.begin(), names.end(), covariate);
    if (it == names.end()) {
        std::string known;
        for (const auto& n : names) known += (known.empty() ? "" : ", ") + n;
        throw ConfigError("unknown covariate '" + covariate + "' (available: " + known + ")");
    }
    const auto col = static_cast<Eigen::Index>(it - names.begin());
    const Vector x = ds.zRaw.col(col);
    std::set<double> distinct(x.data(), x.data() + x.size());
    std::vector<std::string> labels(static_cast<std::size_t>(x.size()));
    if (distinct.size() <= maxDiscrete) {
        for (Eigen::Index i = 0; i < x.size(); ++i)
            labels[static_cast<std::size_t>(i)] = covariate + "=" + csv::formatNumber(x[i]);
        return labels;
    }
    std::vector<double> sorted(x.data(), x.data() + x.size());
    std::sort(sorted.begin(), sorted.end());
    auto quantile = [&](double q) {
        const double h = q * static_cast<double>(sorted.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(h));
        const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
        return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
    };
    const double c1 = quantile(1.0 / 3.0), c2 = quantile(2.0 / 3.0);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const int t = x[i] <= c1 ? 1 : (x[i] <= c2 ? 2 : 3);
        labels[static_cast<std::size_t>(i)] = covariate + ":T" + std::to_string(t);
    }
    return labels;
}

std::vector<GroupMean> groupMeans(const Vector& values, const std::vector<std::string>& labels) {
    if (static_cast<std::size_t>(values.size()) != labels.size())
        throw std::invalid_argument("groupMeans: one label per value required");
    std::vector<GroupMean> out;
    std::map<std::string, std::size_t> index;
    std::vector<double> sums;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        auto [it, fresh] = index.try_emplace(labels[i], out.size());
        if (fresh) {
            out.push_back({labels[i], 0, std::nan("")});
            sums.push_back(0.0);
        }
        const double v = values[static_cast<Eigen::Index>(i)];
        if (std::isnan(v)) continue;
        ++out[it->second].count;
        sums[it->second] += v;
    }
    for (std::size_t g = 0; g < out.size(); ++g)
        if (out[g].count > 0) out[g].mean = sums[g] / static_cast<double>(out[g].count);
    return out;
}

}  // namespace deepchoice
