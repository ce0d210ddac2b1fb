#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "cordkit/segmetrics.hpp"

namespace cordkit {

/// Splits on a single-character delimiter; no quoting (fields never contain
/// the delimiter in our tables).
std::vector<std::string> split_fields(std::string_view line, char delim);

/// Reads a delimited text table: first row is the header. Blank lines are
/// skipped; a trailing CR is stripped.
struct TextTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(const std::string& name) const; ///< throws config error if absent
};

TextTable read_table(const std::filesystem::path& path, char delim);
void write_text_file(const std::filesystem::path& path, const std::string& content);
std::string read_text_file(const std::filesystem::path& path);

/// "%.6f"
std::string format_fixed6(double v);

/// Header `subject,slice,fold,method,class,dsc,hdrfdst,volsmty`. Rows are
/// sorted by (subject, slice, method, class, fold); an invalid Hausdorff value
/// is written as NA.
std::string metrics_csv(std::vector<MetricsRecord> records);
void write_metrics_csv(const std::vector<MetricsRecord>& records, const std::filesystem::path& path);
std::vector<MetricsRecord> read_metrics_csv(const std::filesystem::path& path);

} // namespace cordkit
