#include "deepchoice/csv.hpp"

#include "deepchoice/common.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace deepchoice::csv {

std::optional<std::size_t> Table::column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return i;
    return std::nullopt;
}

std::size_t Table::requireColumn(const std::string& name, const std::string& context) const {
    if (auto c = column(name)) return *c;
    throw LoadError(context + ": missing required column '" + name + "'");
}

namespace {

std::string trimCell(std::string s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.pop_back();
    std::size_t b = 0;
    while (b < s.size() && (s[b] == ' ' || s[b] == '\t')) ++b;
    return s.substr(b);
}

}  // namespace

Table parse(const std::string& text, const std::string& context) {
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> record;
    std::string field;
    bool inQuotes = false;
    bool fieldQuoted = false;
    bool any = false;

    auto endField = [&] {
        record.push_back(fieldQuoted ? field : trimCell(field));
        field.clear();
        fieldQuoted = false;
    };
    auto endRecord = [&] {
        endField();
        if (!(record.size() == 1 && record[0].empty())) records.push_back(std::move(record));
        record.clear();
    };

    std::size_t i = 0;
    // Skip a UTF-8 byte-order mark.
    if (text.size() >= 3 && text.compare(0, 3, "\xEF\xBB\xBF") == 0) i = 3;
    for (; i < text.size(); ++i) {
        const char c = text[i];
        any = true;
        if (inQuotes) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    inQuotes = false;
                }
            } else {
                field.push_back(c);
            }
        } else if (c == '"') {
            inQuotes = true;
            fieldQuoted = true;
        } else if (c == ',') {
            endField();
        } else if (c == '\n') {
            endRecord();
            any = false;
        } else {
            field.push_back(c);
        }
    }
    if (inQuotes) throw LoadError(context + ": unterminated quoted field");
    if (any) endRecord();

    Table t;
    if (records.empty()) throw LoadError(context + ": empty file (header row required)");
    t.header = std::move(records.front());
    for (std::size_t r = 1; r < records.size(); ++r) {
        if (records[r].size() != t.header.size())
            throw LoadError(context + ": row " + std::to_string(r + 1) + " has " + std::to_string(records[r].size()) +
                            " fields, header has " + std::to_string(t.header.size()));
        t.rows.push_back(std::move(records[r]));
    }
    return t;
}

Table read(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open file '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.string());
}

std::string escape(const std::string& field) {
    if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

void writeRow(std::ostream& out, const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) out << ',';
        out << escape(fields[i]);
    }
    out << '\n';
}

std::string formatNumber(double v) {
    if (std::isnan(v)) return "NA";
    if (std::isinf(v)) return v > 0 ? "Inf" : "-Inf";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::optional<double> parseNumber(const std::string& cell) {
    if (cell.empty()) return std::nullopt;
    if (cell == "NA") return std::nan("");
    double v = 0.0;
    const char* first = cell.data();
    if (*first == '+') ++first;
    auto res = std::from_chars(first, cell.data() + cell.size(), v);
    if (res.ec != std::errc() || res.ptr != cell.data() + cell.size()) return std::nullopt;
    return v;
}

}  // namespace deepchoice::csv
