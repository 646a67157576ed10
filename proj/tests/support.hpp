#pragma once

#include "deepchoice/dataio.hpp"

#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

namespace testing_support {

using namespace deepchoice;

inline AttributeSchema binarySchema(std::size_t p) {
    std::vector<AttributeSpec> attrs;
    for (std::size_t a = 0; a < p; ++a) attrs.push_back({"a" + std::to_string(a + 1), {"off", "on"}, 0, false});
    return AttributeSchema(attrs);
}

// Dataset from explicit difference rows; covariates default to one random column.
inline ConjointDataset fromDifferences(const AttributeSchema& schema, const RowMatrix& dx, const Vector& y,
                                       const std::vector<std::size_t>& taskCounts, Matrix cov = {}) {
    ChoiceData d;
    for (std::size_t i = 0; i < taskCounts.size(); ++i) d.respondentIds.push_back("r" + std::to_string(i + 1));
    d.taskCounts = taskCounts;
    d.deltaX = dx;
    d.y = y;
    if (cov.size() == 0) {
        std::mt19937_64 rng(99);
        std::normal_distribution<double> n01;
        cov.resize(static_cast<Eigen::Index>(taskCounts.size()), 1);
        for (Eigen::Index i = 0; i < cov.rows(); ++i) cov(i, 0) = n01(rng);
    }
    d.covariates = cov;
    return buildDataset(schema, std::move(d));
}

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratchDir(const std::string& tag) {
    auto dir = std::filesystem::temp_directory_path() / ("deepchoice_test_" + tag);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline void writeText(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path);
    out << text;
}

}  // namespace testing_support
