#include "deepchoice/dataio.hpp"

#include "deepchoice/csv.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

namespace deepchoice {

// ---------------------------------------------------------------------------
// AttributeSchema

AttributeSchema::AttributeSchema(std::vector<AttributeSpec> attributes) : attributes_(std::move(attributes)) {
    std::set<std::string> names;
    for (std::size_t a = 0; a < attributes_.size(); ++a) {
        const auto& spec = attributes_[a];
        if (spec.name.empty()) throw SchemaError("attribute " + std::to_string(a) + " has an empty name");
        if (!names.insert(spec.name).second) throw SchemaError("duplicate attribute name '" + spec.name + "'");
        ColumnRange range{columnNames_.size(), columnNames_.size()};
        if (spec.continuous) {
            columnNames_.push_back(spec.name);
            attributeOfColumn_.push_back(a);
            levelOfColumn_.push_back(0);
        } else {
            if (spec.levels.size() < 2)
                throw SchemaError("attribute '" + spec.name + "' needs at least two levels");
            if (spec.reference >= spec.levels.size())
                throw SchemaError("attribute '" + spec.name + "' has an out-of-range reference level");
            std::set<std::string> levels(spec.levels.begin(), spec.levels.end());
            if (levels.size() != spec.levels.size())
                throw SchemaError("attribute '" + spec.name + "' has duplicate level names");
            for (std::size_t l = 0; l < spec.levels.size(); ++l) {
                if (l == spec.reference) continue;
                columnNames_.push_back(spec.name + ":" + spec.levels[l]);
                attributeOfColumn_.push_back(a);
                levelOfColumn_.push_back(l);
            }
        }
        range.end = columnNames_.size();
        ranges_.push_back(range);
    }
}

AttributeSchema AttributeSchema::fromJson(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("attributes") || !j["attributes"].is_array())
        throw SchemaError("schema must be an object with an 'attributes' array");
    std::vector<AttributeSpec> specs;
    for (const auto& a : j["attributes"]) {
        AttributeSpec s;
        if (!a.contains("name") || !a["name"].is_string()) throw SchemaError("schema attribute without a name");
        s.name = a["name"].get<std::string>();
        s.continuous = a.value("continuous", false);
        if (!s.continuous) {
            if (!a.contains("levels") || !a["levels"].is_array())
                throw SchemaError("attribute '" + s.name + "' has no 'levels' array");
            for (const auto& l : a["levels"]) {
                if (l.is_string())
                    s.levels.push_back(l.get<std::string>());
                else
                    s.levels.push_back(l.dump());
            }
            if (a.contains("reference")) {
                const auto& r = a["reference"];
                if (r.is_number_integer()) {
                    s.reference = r.get<std::size_t>();
                } else if (r.is_string()) {
                    auto it = std::find(s.levels.begin(), s.levels.end(), r.get<std::string>());
                    if (it == s.levels.end())
                        throw SchemaError("attribute '" + s.name + "': unknown reference level '" +
                                          r.get<std::string>() + "'");
                    s.reference = static_cast<std::size_t>(it - s.levels.begin());
                } else {
                    throw SchemaError("attribute '" + s.name + "': reference must be a name or index");
                }
            }
        }
        specs.push_back(std::move(s));
    }
    return AttributeSchema(std::move(specs));
}

AttributeSchema AttributeSchema::fromFile(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open schema file '" + path.string() + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError("schema file '" + path.string() + "' is not valid JSON: " + e.what());
    }
    return fromJson(j);
}

nlohmann::json AttributeSchema::toJson() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& s : attributes_) {
        nlohmann::json a;
        a["name"] = s.name;
        if (s.continuous) {
            a["continuous"] = true;
        } else {
            a["levels"] = s.levels;
            a["reference"] = s.levels[s.reference];
        }
        arr.push_back(a);
    }
    return nlohmann::json{{"attributes", arr}};
}

std::size_t AttributeSchema::attributeIndex(const std::string& name) const {
    for (std::size_t a = 0; a < attributes_.size(); ++a)
        if (attributes_[a].name == name) return a;
    throw SchemaError("unknown attribute '" + name + "'");
}

std::size_t AttributeSchema::levelIndex(std::size_t attribute, const std::string& level) const {
    const auto& spec = attributes_.at(attribute);
    auto it = std::find(spec.levels.begin(), spec.levels.end(), level);
    if (it == spec.levels.end())
        throw SchemaError("unknown level '" + level + "' for attribute '" + spec.name + "'");
    return static_cast<std::size_t>(it - spec.levels.begin());
}

std::size_t AttributeSchema::columnIndex(const std::string& key) const {
    for (std::size_t k = 0; k < columnNames_.size(); ++k)
        if (columnNames_[k] == key) return k;
    std::size_t hit = columnNames_.size();
    int hits = 0;
    for (std::size_t k = 0; k < columnNames_.size(); ++k) {
        const auto& spec = attributes_[attributeOfColumn_[k]];
        if (!spec.continuous && spec.levels[levelOfColumn_[k]] == key) {
            hit = k;
            ++hits;
        }
    }
    if (hits == 1) return hit;
    if (hits > 1) throw SchemaError("level name '" + key + "' is ambiguous; use 'attribute:level'");
    std::size_t idx = 0;
    auto res = std::from_chars(key.data(), key.data() + key.size(), idx);
    if (res.ec == std::errc() && res.ptr == key.data() + key.size() && idx < columnNames_.size()) return idx;
    throw SchemaError("unknown attribute level '" + key + "'");
}

Vector AttributeSchema::encode(const ProfileSelection& profile) const {
    if (profile.size() != attributes_.size())
        throw SchemaError("profile has " + std::to_string(profile.size()) + " attribute values, schema has " +
                          std::to_string(attributes_.size()));
    Vector x = Vector::Zero(static_cast<Eigen::Index>(width()));
    for (std::size_t a = 0; a < attributes_.size(); ++a) {
        const auto& spec = attributes_[a];
        const auto range = ranges_[a];
        if (spec.continuous) {
            if (!std::isfinite(profile[a].value))
                throw SchemaError("non-finite value for continuous attribute '" + spec.name + "'");
            x[static_cast<Eigen::Index>(range.begin)] = profile[a].value;
            continue;
        }
        const std::size_t level = profile[a].level;
        if (level >= spec.levels.size())
            throw SchemaError("invalid level " + std::to_string(level) + " for attribute '" + spec.name + "'");
        if (level == spec.reference) continue;
        const std::size_t offset = level < spec.reference ? level : level - 1;
        x[static_cast<Eigen::Index>(range.begin + offset)] = 1.0;
    }
    return x;
}

ProfileSelection AttributeSchema::decode(const Vector& encoded) const {
    if (static_cast<std::size_t>(encoded.size()) != width()) throw SchemaError("encoded profile has wrong width");
    ProfileSelection out(attributes_.size());
    for (std::size_t a = 0; a < attributes_.size(); ++a) {
        const auto& spec = attributes_[a];
        const auto range = ranges_[a];
        if (spec.continuous) {
            out[a] = AttributeValue::numeric(encoded[static_cast<Eigen::Index>(range.begin)]);
            continue;
        }
        std::size_t level = spec.reference;
        int active = 0;
        for (std::size_t k = range.begin; k < range.end; ++k) {
            const double v = encoded[static_cast<Eigen::Index>(k)];
            if (v == 1.0) {
                level = levelOfColumn_[k];
                ++active;
            } else if (v != 0.0) {
                throw SchemaError("encoded value is not a dummy for attribute '" + spec.name + "'");
            }
        }
        if (active > 1) throw SchemaError("more than one active level for attribute '" + spec.name + "'");
        out[a] = AttributeValue::categorical(level);
    }
    return out;
}

AttributeValue AttributeSchema::parseValue(std::size_t a, const std::string& cell) const {
    const auto& spec = attributes_.at(a);
    if (spec.continuous) {
        auto v = csv::parseNumber(cell);
        if (!v || !std::isfinite(*v))
            throw SchemaError("attribute '" + spec.name + "': '" + cell + "' is not a finite number");
        return AttributeValue::numeric(*v);
    }
    return AttributeValue::categorical(levelIndex(a, cell));
}

std::string AttributeSchema::formatValue(std::size_t a, const AttributeValue& v) const {
    const auto& spec = attributes_.at(a);
    if (spec.continuous) return csv::formatNumber(v.value);
    return spec.levels.at(v.level);
}

ProfileSelection AttributeSchema::parseProfile(const nlohmann::json& j) const {
    if (!j.is_object()) throw SchemaError("profile must be a JSON object mapping attribute to level");
    ProfileSelection out(attributes_.size());
    for (std::size_t a = 0; a < attributes_.size(); ++a) {
        const auto& spec = attributes_[a];
        if (!j.contains(spec.name)) throw SchemaError("profile is missing attribute '" + spec.name + "'");
        const auto& v = j[spec.name];
        if (spec.continuous) {
            if (!v.is_number()) throw SchemaError("attribute '" + spec.name + "' expects a number");
            out[a] = AttributeValue::numeric(v.get<double>());
        } else {
            out[a] = AttributeValue::categorical(levelIndex(a, v.is_string() ? v.get<std::string>() : v.dump()));
        }
    }
    for (auto it = j.begin(); it != j.end(); ++it) attributeIndex(it.key());
    return out;
}

// ---------------------------------------------------------------------------
// Covariates

Vector CovariateScaling::apply(const Vector& raw) const {
    if (raw.size() != mean.size()) throw SchemaError("covariate vector has wrong length");
    return ((raw - mean).array() / sd.array()).matrix();
}

CovariateScaling standardizeColumns(Matrix& z, const std::vector<std::string>& names) {
    CovariateScaling s;
    const Eigen::Index n = z.rows();
    std::vector<Eigen::Index> keep;
    std::vector<double> means, sds;
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
        const double m = n > 0 ? z.col(j).mean() : 0.0;
        double ss = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) ss += (z(i, j) - m) * (z(i, j) - m);
        const double sd = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
        const std::string name = j < static_cast<Eigen::Index>(names.size()) ? names[static_cast<std::size_t>(j)]
                                                                            : "z" + std::to_string(j);
        if (!(sd > 1e-12 * std::max(1.0, std::abs(m)))) {
            warn("covariate '" + name + "' is constant and was dropped");
            s.dropped.push_back(name);
            continue;
        }
        keep.push_back(j);
        means.push_back(m);
        sds.push_back(sd);
        s.names.push_back(name);
    }
    Matrix out(n, static_cast<Eigen::Index>(keep.size()));
    for (std::size_t c = 0; c < keep.size(); ++c)
        out.col(static_cast<Eigen::Index>(c)) = (z.col(keep[c]).array() - means[c]) / sds[c];
    s.mean = Eigen::Map<Vector>(means.data(), static_cast<Eigen::Index>(means.size()));
    s.sd = Eigen::Map<Vector>(sds.data(), static_cast<Eigen::Index>(sds.size()));
    z = std::move(out);
    return s;
}

// ---------------------------------------------------------------------------
// Dataset

ConjointDataset ConjointDataset::subsetRespondents(const std::vector<std::size_t>& ids) const {
    ConjointDataset out;
    out.schema = schema;
    out.scaling = scaling;
    out.designVar = designVar;
    std::size_t n = 0;
    for (auto i : ids) n += taskCount(i);
    const auto p = static_cast<Eigen::Index>(width());
    out.deltaX.resize(static_cast<Eigen::Index>(n), p);
    if (hasProfiles()) {
        out.profileA.resize(static_cast<Eigen::Index>(n), p);
        out.profileB.resize(static_cast<Eigen::Index>(n), p);
    }
    out.y.resize(static_cast<Eigen::Index>(n));
    out.z.resize(static_cast<Eigen::Index>(ids.size()), z.cols());
    out.zRaw.resize(static_cast<Eigen::Index>(ids.size()), zRaw.cols());
    out.rowBegin.push_back(0);
    std::size_t r = 0;
    for (std::size_t c = 0; c < ids.size(); ++c) {
        const std::size_t i = ids[c];
        out.respondentIds.push_back(respondentIds[i]);
        out.z.row(static_cast<Eigen::Index>(c)) = z.row(static_cast<Eigen::Index>(i));
        out.zRaw.row(static_cast<Eigen::Index>(c)) = zRaw.row(static_cast<Eigen::Index>(i));
        for (std::size_t src = rowBegin[i]; src < rowBegin[i + 1]; ++src, ++r) {
            const auto s = static_cast<Eigen::Index>(src), d = static_cast<Eigen::Index>(r);
            out.deltaX.row(d) = deltaX.row(s);
            if (hasProfiles()) {
                out.profileA.row(d) = profileA.row(s);
                out.profileB.row(d) = profileB.row(s);
            }
            out.y[d] = y[s];
            out.taskIds.push_back(taskIds[src]);
            out.respondentOf.push_back(c);
        }
        out.rowBegin.push_back(r);
    }
    return out;
}

std::string ConjointDataset::summary() const {
    std::ostringstream s;
    s << "respondents (M): " << respondents() << "\n"
      << "choice rows (N): " << rows() << "\n"
      << "encoded width (p): " << width() << "\n"
      << "covariates (p_Z): " << covariateWidth();
    if (!scaling.dropped.empty()) s << " (" << scaling.dropped.size() << " constant dropped)";
    s << "\n";
    return s.str();
}

ConjointDataset buildDataset(AttributeSchema schema, ChoiceData data) {
    ConjointDataset ds;
    const std::size_t m = data.respondentIds.size();
    const auto p = static_cast<Eigen::Index>(schema.width());
    if (data.taskCounts.size() != m) throw LoadError("task counts do not match respondent count");
    if (static_cast<std::size_t>(data.covariates.rows()) != m)
        throw LoadError("covariate rows do not match respondent count");
    std::size_t n = 0;
    for (auto t : data.taskCounts) n += t;
    if (static_cast<std::size_t>(data.y.size()) != n) throw LoadError("outcome count does not match task counts");
    const bool haveProfiles = data.profileA.rows() > 0 || data.profileB.rows() > 0;
    if (haveProfiles) {
        if (static_cast<std::size_t>(data.profileA.rows()) != n || static_cast<std::size_t>(data.profileB.rows()) != n ||
            data.profileA.cols() != p || data.profileB.cols() != p)
            throw LoadError("profile matrices have the wrong shape");
        ds.deltaX = data.profileA - data.profileB;
        ds.profileA = std::move(data.profileA);
        ds.profileB = std::move(data.profileB);
    } else {
        if (static_cast<std::size_t>(data.deltaX.rows()) != n || data.deltaX.cols() != p)
            throw LoadError("difference matrix has the wrong shape");
        ds.deltaX = std::move(data.deltaX);
    }
    for (Eigen::Index r = 0; r < data.y.size(); ++r)
        if (data.y[r] != 0.0 && data.y[r] != 1.0) throw LoadError("outcomes must be 0 or 1");

    ds.schema = std::move(schema);
    ds.respondentIds = std::move(data.respondentIds);
    ds.y = std::move(data.y);
    ds.rowBegin.reserve(m + 1);
    ds.rowBegin.push_back(0);
    ds.respondentOf.reserve(n);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t t = 0; t < data.taskCounts[i]; ++t) ds.respondentOf.push_back(i);
        ds.rowBegin.push_back(ds.rowBegin.back() + data.taskCounts[i]);
    }
    if (data.taskIds.size() == n) {
        ds.taskIds = std::move(data.taskIds);
    } else {
        ds.taskIds.reserve(n);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t t = 0; t < data.taskCounts[i]; ++t) ds.taskIds.push_back(std::to_string(t + 1));
    }

    if (data.covariateNames.size() != static_cast<std::size_t>(data.covariates.cols())) {
        data.covariateNames.clear();
        for (Eigen::Index j = 0; j < data.covariates.cols(); ++j) data.covariateNames.push_back("z" + std::to_string(j + 1));
    }
    Matrix z = data.covariates;
    ds.scaling = standardizeColumns(z, data.covariateNames);
    ds.z = std::move(z);
    ds.zRaw.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(ds.scaling.names.size()));
    for (std::size_t c = 0; c < ds.scaling.names.size(); ++c) {
        auto it = std::find(data.covariateNames.begin(), data.covariateNames.end(), ds.scaling.names[c]);
        ds.zRaw.col(static_cast<Eigen::Index>(c)) = data.covariates.col(it - data.covariateNames.begin());
    }

    // Single-profile design variances; for pre-differenced data
    // Var(dX) = 2 Var(X) under independent draws of the two profiles.
    ds.designVar = Vector::Zero(p);
    if (n > 0) {
        if (ds.hasProfiles()) {
            const double count = 2.0 * static_cast<double>(n);
            const Vector mean = (ds.profileA.colwise().sum() + ds.profileB.colwise().sum()).transpose() / count;
            for (Eigen::Index k = 0; k < p; ++k) {
                const double ss = (ds.profileA.col(k).array() - mean[k]).square().sum() +
                                  (ds.profileB.col(k).array() - mean[k]).square().sum();
                ds.designVar[k] = ss / count;
            }
        } else {
            const Vector mean = ds.deltaX.colwise().mean().transpose();
            for (Eigen::Index k = 0; k < p; ++k)
                ds.designVar[k] = (ds.deltaX.col(k).array() - mean[k]).square().mean() / 2.0;
        }
        for (Eigen::Index k = 0; k < p; ++k)
            if (!(ds.designVar[k] > 0.0))
                throw LoadError("encoded column '" + ds.schema.columnNames()[static_cast<std::size_t>(k)] +
                                "' never varies in the design");
    }
    return ds;
}

namespace {

struct CovariateFile {
    std::unordered_map<std::string, std::size_t> rowOf;
    std::vector<std::string> names;
    Matrix values;
};

CovariateFile readCovariates(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw LoadError("covariates file not found: '" + path.string() + "'");
    const auto table = csv::read(path);
    const std::string ctx = path.string();
    const std::size_t idCol = table.requireColumn("respondent_id", ctx);
    CovariateFile f;
    std::vector<std::size_t> cols;
    for (std::size_t c = 0; c < table.header.size(); ++c) {
        if (c == idCol) continue;
        cols.push_back(c);
        f.names.push_back(table.header[c]);
    }
    f.values.resize(static_cast<Eigen::Index>(table.rows.size()), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        if (!f.rowOf.emplace(row[idCol], r).second)
            throw LoadError(ctx + ": respondent '" + row[idCol] + "' appears more than once");
        for (std::size_t c = 0; c < cols.size(); ++c) {
            auto v = csv::parseNumber(row[cols[c]]);
            if (!v || !std::isfinite(*v))
                throw LoadError(ctx + ": non-numeric covariate '" + f.names[c] + "' for respondent '" + row[idCol] +
                                "'");
            f.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = *v;
        }
    }
    return f;
}

Matrix covariatesFor(const CovariateFile& f, const std::vector<std::string>& ids, const std::string& ctx) {
    Matrix out(static_cast<Eigen::Index>(ids.size()), f.values.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        auto it = f.rowOf.find(ids[i]);
        if (it == f.rowOf.end()) throw LoadError(ctx + ": respondent '" + ids[i] + "' missing from covariates file");
        out.row(static_cast<Eigen::Index>(i)) = f.values.row(static_cast<Eigen::Index>(it->second));
    }
    return out;
}

// Groups row indices by respondent (first-appearance order), then by task.
struct TaskIndex {
    std::vector<std::string> respondents;
    std::vector<std::vector<std::string>> tasks;                // per respondent
    std::vector<std::vector<std::vector<std::size_t>>> rowsOf;  // per respondent, per task
};

TaskIndex indexTasks(const csv::Table& t, std::size_t idCol, std::size_t taskCol) {
    TaskIndex ix;
    std::unordered_map<std::string, std::size_t> respIndex;
    std::vector<std::unordered_map<std::string, std::size_t>> taskIndex;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& id = t.rows[r][idCol];
        const auto& task = t.rows[r][taskCol];
        auto [it, fresh] = respIndex.emplace(id, ix.respondents.size());
        if (fresh) {
            ix.respondents.push_back(id);
            ix.tasks.emplace_back();
            ix.rowsOf.emplace_back();
            taskIndex.emplace_back();
        }
        const std::size_t i = it->second;
        auto [tt, tfresh] = taskIndex[i].emplace(task, ix.tasks[i].size());
        if (tfresh) {
            ix.tasks[i].push_back(task);
            ix.rowsOf[i].emplace_back();
        }
        ix.rowsOf[i][tt->second].push_back(r);
    }
    return ix;
}

}  // namespace

ConjointDataset loadDataset(const std::filesystem::path& profiles, const std::filesystem::path& covariates,
                            const AttributeSchema& schema) {
    if (!std::filesystem::exists(profiles)) throw LoadError("profiles file not found: '" + profiles.string() + "'");
    const auto table = csv::read(profiles);
    const std::string ctx = profiles.string();
    const std::size_t idCol = table.requireColumn("respondent_id", ctx);
    const std::size_t taskCol = table.requireColumn("task_id", ctx);
    const std::size_t altCol = table.requireColumn("alternative", ctx);
    const std::size_t chosenCol = table.requireColumn("chosen", ctx);
    std::vector<std::size_t> attrCols;
    for (const auto& spec : schema.attributes()) attrCols.push_back(table.requireColumn(spec.name, ctx));

    const auto ix = indexTasks(table, idCol, taskCol);
    const auto cov = readCovariates(covariates);

    ChoiceData data;
    data.respondentIds = ix.respondents;
    data.covariates = covariatesFor(cov, ix.respondents, covariates.string());
    data.covariateNames = cov.names;
    std::size_t n = 0;
    for (const auto& t : ix.tasks) n += t.size();
    const auto p = static_cast<Eigen::Index>(schema.width());
    data.profileA.resize(static_cast<Eigen::Index>(n), p);
    data.profileB.resize(static_cast<Eigen::Index>(n), p);
    data.y.resize(static_cast<Eigen::Index>(n));

    auto encodeRow = [&](std::size_t r) {
        ProfileSelection sel(schema.attributeCount());
        for (std::size_t a = 0; a < schema.attributeCount(); ++a) {
            try {
                sel[a] = schema.parseValue(a, table.rows[r][attrCols[a]]);
            } catch (const SchemaError& e) {
                throw SchemaError(ctx + ", row " + std::to_string(r + 2) + ": " + e.what());
            }
        }
        return schema.encode(sel);
    };

    std::size_t row = 0;
    for (std::size_t i = 0; i < ix.respondents.size(); ++i) {
        data.taskCounts.push_back(ix.tasks[i].size());
        for (std::size_t t = 0; t < ix.tasks[i].size(); ++t, ++row) {
            const auto& rows = ix.rowsOf[i][t];
            const std::string where = "respondent '" + ix.respondents[i] + "', task '" + ix.tasks[i][t] + "'";
            if (rows.size() != 2)
                throw LoadError(ctx + ": " + where + " has " + std::to_string(rows.size()) +
                                " alternatives (expected 2)");
            constexpr std::size_t none = static_cast<std::size_t>(-1);
            std::size_t first = none, second = none;
            int chosenCount = 0;
            double chosenFirst = 0.0;
            for (std::size_t q = 0; q < 2; ++q) {
                const auto& cells = table.rows[rows[q]];
                const auto alt = csv::parseNumber(cells[altCol]);
                const auto ch = csv::parseNumber(cells[chosenCol]);
                if (!alt || (*alt != 1.0 && *alt != 2.0))
                    throw LoadError(ctx + ": " + where + " has alternative '" + cells[altCol] + "' (expected 1 or 2)");
                if (!ch || (*ch != 0.0 && *ch != 1.0))
                    throw LoadError(ctx + ": " + where + " has chosen '" + cells[chosenCol] + "' (expected 0 or 1)");
                if (*alt == 1.0) {
                    first = rows[q];
                    chosenFirst = *ch;
                } else {
                    second = rows[q];
                }
                chosenCount += static_cast<int>(*ch);
            }
            if (first == none || second == none)
                throw LoadError(ctx + ": " + where + " must have alternatives 1 and 2");
            if (chosenCount != 1)
                throw LoadError(ctx + ": " + where + " has " + std::to_string(chosenCount) +
                                " chosen alternatives (expected 1)");
            data.profileA.row(static_cast<Eigen::Index>(row)) = encodeRow(first).transpose();
            data.profileB.row(static_cast<Eigen::Index>(row)) = encodeRow(second).transpose();
            data.y[static_cast<Eigen::Index>(row)] = chosenFirst;
            data.taskIds.push_back(ix.tasks[i][t]);
        }
    }
    return buildDataset(schema, std::move(data));
}

ConjointDataset loadDifferencedDataset(const std::filesystem::path& rowsPath, const std::filesystem::path& covariates,
                                       const AttributeSchema& schema) {
    if (!std::filesystem::exists(rowsPath)) throw LoadError("data file not found: '" + rowsPath.string() + "'");
    const auto table = csv::read(rowsPath);
    const std::string ctx = rowsPath.string();
    const std::size_t idCol = table.requireColumn("respondent_id", ctx);
    const std::size_t taskCol = table.requireColumn("task_id", ctx);
    const std::size_t yCol = table.requireColumn("y", ctx);
    std::vector<std::size_t> cols;
    for (const auto& name : schema.columnNames()) cols.push_back(table.requireColumn(name, ctx));

    const auto ix = indexTasks(table, idCol, taskCol);
    const auto cov = readCovariates(covariates);
    ChoiceData data;
    data.respondentIds = ix.respondents;
    data.covariates = covariatesFor(cov, ix.respondents, covariates.string());
    data.covariateNames = cov.names;
    const auto n = static_cast<Eigen::Index>(table.rows.size());
    data.deltaX.resize(n, static_cast<Eigen::Index>(cols.size()));
    data.y.resize(n);
    std::size_t row = 0;
    for (std::size_t i = 0; i < ix.respondents.size(); ++i) {
        data.taskCounts.push_back(ix.tasks[i].size());
        for (std::size_t t = 0; t < ix.tasks[i].size(); ++t, ++row) {
            const auto& rows = ix.rowsOf[i][t];
            if (rows.size() != 1)
                throw LoadError(ctx + ": respondent '" + ix.respondents[i] + "', task '" + ix.tasks[i][t] +
                                "' appears " + std::to_string(rows.size()) + " times");
            const auto& cells = table.rows[rows[0]];
            const auto yv = csv::parseNumber(cells[yCol]);
            if (!yv || (*yv != 0.0 && *yv != 1.0))
                throw LoadError(ctx + ": task '" + ix.tasks[i][t] + "' has outcome '" + cells[yCol] + "'");
            data.y[static_cast<Eigen::Index>(row)] = *yv;
            for (std::size_t k = 0; k < cols.size(); ++k) {
                const auto v = csv::parseNumber(cells[cols[k]]);
                if (!v || !std::isfinite(*v))
                    throw LoadError(ctx + ": task '" + ix.tasks[i][t] + "' has non-numeric '" +
                                    schema.columnNames()[k] + "'");
                data.deltaX(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(k)) = *v;
            }
            data.taskIds.push_back(ix.tasks[i][t]);
        }
    }
    return buildDataset(schema, std::move(data));
}

void writeLongFormat(const ConjointDataset& ds, const std::filesystem::path& profiles,
                     const std::filesystem::path& covariates) {
    if (!ds.hasProfiles()) throw ArtifactError("long-format export needs single-profile data");
    std::ofstream out(profiles);
    if (!out) throw ArtifactError("cannot write '" + profiles.string() + "'");
    std::vector<std::string> header{"respondent_id", "task_id", "alternative", "chosen"};
    for (const auto& a : ds.schema.attributes()) header.push_back(a.name);
    csv::writeRow(out, header);
    for (std::size_t r = 0; r < ds.rows(); ++r) {
        const auto row = static_cast<Eigen::Index>(r);
        for (int alt = 1; alt <= 2; ++alt) {
            const Vector x = (alt == 1 ? ds.profileA.row(row) : ds.profileB.row(row)).transpose();
            const auto sel = ds.schema.decode(x);
            const bool chosen = (alt == 1) == (ds.y[row] == 1.0);
            std::vector<std::string> cells{ds.respondentIds[ds.respondentOf[r]], ds.taskIds[r], std::to_string(alt),
                                           chosen ? "1" : "0"};
            for (std::size_t a = 0; a < sel.size(); ++a) cells.push_back(ds.schema.formatValue(a, sel[a]));
            csv::writeRow(out, cells);
        }
    }
    std::ofstream cov(covariates);
    if (!cov) throw ArtifactError("cannot write '" + covariates.string() + "'");
    std::vector<std::string> ch{"respondent_id"};
    for (const auto& n : ds.scaling.names) ch.push_back(n);
    csv::writeRow(cov, ch);
    for (std::size_t i = 0; i < ds.respondents(); ++i) {
        std::vector<std::string> cells{ds.respondentIds[i]};
        for (Eigen::Index j = 0; j < ds.zRaw.cols(); ++j)
            cells.push_back(csv::formatNumber(ds.zRaw(static_cast<Eigen::Index>(i), j)));
        csv::writeRow(cov, cells);
    }
}

RandomizationCheck randomizationCheck(const ConjointDataset& ds, double threshold) {
    RandomizationCheck rc;
    rc.threshold = threshold;
    const auto p = static_cast<Eigen::Index>(ds.width());
    const auto pz = static_cast<Eigen::Index>(ds.covariateWidth());
    rc.absCorrelation = Matrix::Zero(p, pz);
    const std::size_t n = ds.rows();
    if (n < 2) return rc;
    std::vector<double> zcol(n), xcol(n);
    for (Eigen::Index j = 0; j < pz; ++j) {
        for (std::size_t r = 0; r < n; ++r) zcol[r] = ds.z(static_cast<Eigen::Index>(ds.respondentOf[r]), j);
        for (Eigen::Index k = 0; k < p; ++k) {
            for (std::size_t r = 0; r < n; ++r) xcol[r] = ds.deltaX(static_cast<Eigen::Index>(r), k);
            const double c = std::abs(correlation(xcol, zcol));
            rc.absCorrelation(k, j) = c;
            if (c > threshold) rc.flagged.emplace_back(static_cast<std::size_t>(k), static_cast<std::size_t>(j));
        }
    }
    return rc;
}

}  // namespace deepchoice
