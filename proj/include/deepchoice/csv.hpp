#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace deepchoice::csv {

// RFC 4180 style table: header row plus string cells. Quoted fields may contain
// commas, doubled quotes and newlines.
struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::optional<std::size_t> column(const std::string& name) const;
    std::size_t requireColumn(const std::string& name, const std::string& context) const;
};

/// Throws LoadError when the file is missing or a row has the wrong arity.
Table read(const std::filesystem::path& path);
Table parse(const std::string& text, const std::string& context = "<string>");

std::string escape(const std::string& field);
void writeRow(std::ostream& out, const std::vector<std::string>& fields);

/// Shortest round-tripping decimal form of a double.
std::string formatNumber(double v);

/// Strict numeric parse of a whole cell; nullopt on failure.
std::optional<double> parseNumber(const std::string& cell);

}  // namespace deepchoice::csv
