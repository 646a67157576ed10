#pragma once

#include "deepchoice/common.hpp"

#include <json.hpp>

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace deepchoice {

/// One conjoint attribute. Categorical attributes are dummy coded against
/// `reference`; continuous attributes contribute a single pass-through column.
struct AttributeSpec {
    std::string name;
    std::vector<std::string> levels;
    std::size_t reference = 0;
    bool continuous = false;
};

/// The value an attribute takes in one profile: a level index for categorical
/// attributes, a number for continuous ones.
struct AttributeValue {
    std::size_t level = 0;
    double value = 0.0;

    static AttributeValue categorical(std::size_t level) { return {level, 0.0}; }
    static AttributeValue numeric(double value) { return {0, value}; }
    bool operator==(const AttributeValue&) const = default;
};

using ProfileSelection = std::vector<AttributeValue>;

struct ColumnRange {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t size() const { return end - begin; }
};

class AttributeSchema {
  public:
    AttributeSchema() = default;
    explicit AttributeSchema(std::vector<AttributeSpec> attributes);

    /// Accepts {"attributes": [{"name", "levels", "reference"} | {"name", "continuous": true}]}.
    /// `reference` may be a level name or a zero-based index (default 0).
    static AttributeSchema fromJson(const nlohmann::json& j);
    static AttributeSchema fromFile(const std::filesystem::path& path);
    nlohmann::json toJson() const;

    std::size_t width() const { return columnNames_.size(); }
    std::size_t attributeCount() const { return attributes_.size(); }
    const std::vector<AttributeSpec>& attributes() const { return attributes_; }
    const AttributeSpec& attribute(std::size_t a) const { return attributes_.at(a); }

    ColumnRange columns(std::size_t attribute) const { return ranges_.at(attribute); }
    std::size_t attributeOf(std::size_t column) const { return attributeOfColumn_.at(column); }
    /// Level index represented by a dummy column (0 for continuous columns).
    std::size_t levelOf(std::size_t column) const { return levelOfColumn_.at(column); }
    const std::vector<std::string>& columnNames() const { return columnNames_; }

    /// Resolves "attr:level", a bare level name if unique, an attribute name for
    /// continuous attributes, or a decimal column index.
    std::size_t columnIndex(const std::string& key) const;
    std::size_t attributeIndex(const std::string& name) const;
    std::size_t levelIndex(std::size_t attribute, const std::string& level) const;

    Vector encode(const ProfileSelection& profile) const;
    ProfileSelection decode(const Vector& encoded) const;

    /// Parses one cell value for attribute `a` (level name or number).
    AttributeValue parseValue(std::size_t a, const std::string& cell) const;
    std::string formatValue(std::size_t a, const AttributeValue& v) const;
    /// {"attr": "level" | number, ...}; every attribute must be present.
    ProfileSelection parseProfile(const nlohmann::json& j) const;

  private:
    std::vector<AttributeSpec> attributes_;
    std::vector<ColumnRange> ranges_;
    std::vector<std::size_t> attributeOfColumn_;
    std::vector<std::size_t> levelOfColumn_;
    std::vector<std::string> columnNames_;
};

/// Column means/SDs used to standardize respondent covariates.
struct CovariateScaling {
    std::vector<std::string> names;    // retained columns
    std::vector<std::string> dropped;  // constant columns removed at load
    Vector mean;
    Vector sd;

    Vector apply(const Vector& raw) const;
};

/// Standardizes columns in place (sample SD). Constant columns are removed
/// with a warning and listed in `dropped`.
CovariateScaling standardizeColumns(Matrix& z, const std::vector<std::string>& names);

/// Encoded forced-choice data. Rows of one respondent are contiguous:
/// rows [rowBegin[i], rowBegin[i+1]) belong to respondent i.
struct ConjointDataset {
    AttributeSchema schema;
    std::vector<std::string> respondentIds;
    std::vector<std::size_t> rowBegin;
    std::vector<std::size_t> respondentOf;
    std::vector<std::string> taskIds;
    RowMatrix deltaX;    // N x p, profile 1 minus profile 2
    RowMatrix profileA;  // N x p, empty for pre-differenced input
    RowMatrix profileB;
    Vector y;            // 1 if profile 1 chosen
    Matrix z;            // M x pZ, standardized
    Matrix zRaw;         // M x pZ, retained columns on the original scale
    CovariateScaling scaling;
    Vector designVar;    // single-profile Var(X_k)

    std::size_t respondents() const { return respondentIds.size(); }
    std::size_t rows() const { return static_cast<std::size_t>(y.size()); }
    std::size_t width() const { return schema.width(); }
    std::size_t covariateWidth() const { return static_cast<std::size_t>(z.cols()); }
    std::size_t taskCount(std::size_t i) const { return rowBegin[i + 1] - rowBegin[i]; }
    bool hasProfiles() const { return profileA.rows() == deltaX.rows() && profileA.rows() > 0; }

    /// Copies the given respondents (in the given order). Covariates keep the
    /// parent's standardization.
    ConjointDataset subsetRespondents(const std::vector<std::size_t>& ids) const;
    std::string summary() const;
};

/// Builder input for datasets assembled in memory (loader, simulator).
struct ChoiceData {
    std::vector<std::string> respondentIds;
    std::vector<std::size_t> taskCounts;
    std::vector<std::string> taskIds;  // optional; defaults to 1..T_i
    RowMatrix profileA;
    RowMatrix profileB;
    RowMatrix deltaX;                  // used only when profiles are empty
    Vector y;
    Matrix covariates;                 // M x pZ raw
    std::vector<std::string> covariateNames;
};

ConjointDataset buildDataset(AttributeSchema schema, ChoiceData data);

/// Long-format input: one row per (respondent, task, alternative).
ConjointDataset loadDataset(const std::filesystem::path& profiles, const std::filesystem::path& covariates,
                            const AttributeSchema& schema);

/// Pre-differenced input: respondent_id, task_id, y and one column per encoded
/// schema column holding profile 1 minus profile 2.
ConjointDataset loadDifferencedDataset(const std::filesystem::path& rows, const std::filesystem::path& covariates,
                                       const AttributeSchema& schema);

/// Writes the dataset back out in long format (requires profiles).
void writeLongFormat(const ConjointDataset& ds, const std::filesystem::path& profiles,
                     const std::filesystem::path& covariates);

struct RandomizationCheck {
    Matrix absCorrelation;  // p x pZ, |corr(deltaX_k, Z_j)| at row level
    double threshold = 0.05;
    std::vector<std::pair<std::size_t, std::size_t>> flagged;
};

RandomizationCheck randomizationCheck(const ConjointDataset& ds, double threshold = 0.05);

}  // namespace deepchoice
