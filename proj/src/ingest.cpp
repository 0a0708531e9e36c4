#include "klfuse/harness.hpp"

#include "klfuse/error.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <string>
#include <string_view>

namespace klfuse {

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

[[noreturn]] void parse_error(const std::string& path, long line, const std::string& what) {
    fail(ErrorKind::Parse, path + ": line " + std::to_string(line) + ": " + what);
}

}  // namespace

Dataset ingest_csv(const std::string& path, const CsvSchema& schema) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Parse, path + ": cannot open file");
    std::vector<double> values;
    std::optional<int> width;
    std::string text;
    long line = 0;
    Eigen::Index rows = 0;
    while (std::getline(in, text)) {
        ++line;
        if (line == 1 && schema.header) continue;
        const std::string_view body = trim(text);
        if (body.empty()) continue;

        int column = 0;
        int kept = 0;
        std::size_t start = 0;
        while (true) {
            const std::size_t comma = body.find(',', start);
            const std::string_view cell = trim(body.substr(start, comma == std::string_view::npos ? body.npos : comma - start));
            if (!schema.label_column || column != *schema.label_column) {
                double v = 0.0;
                const auto [end, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
                if (cell.empty() || ec != std::errc() || end != cell.data() + cell.size() || !std::isfinite(v)) {
                    parse_error(path, line, "column " + std::to_string(column + 1) + ": non-numeric value '" +
                                                std::string(cell) + "'");
                }
                values.push_back(v);
                ++kept;
            }
            ++column;
            if (comma == std::string_view::npos) break;
            start = comma + 1;
        }
        if (schema.label_column && *schema.label_column >= column) {
            parse_error(path, line, "label column " + std::to_string(*schema.label_column + 1) + " does not exist");
        }
        if (!width) {
            width = kept;
            if (schema.dim && *schema.dim != kept) {
                parse_error(path, line, "expected " + std::to_string(*schema.dim) + " features, found " + std::to_string(kept));
            }
        } else if (*width != kept) {
            parse_error(path, line, "expected " + std::to_string(*width) + " features, found " + std::to_string(kept));
        }
        ++rows;
    }
    if (rows == 0 || !width || *width == 0) fail(ErrorKind::Parse, path + ": no data rows");
    RowMatrix matrix = Eigen::Map<const RowMatrix>(values.data(), rows, *width);
    return Dataset(std::move(matrix));
}

}  // namespace klfuse
