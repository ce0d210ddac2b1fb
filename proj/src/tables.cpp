#include "cordkit/tables.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <tuple>

#include "cordkit/error.hpp"

namespace cordkit {

namespace fs = std::filesystem;

std::vector<std::string> split_fields(std::string_view line, char delim) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = line.find(delim, start);
        if (pos == std::string_view::npos) {
            out.emplace_back(line.substr(start));
            return out;
        }
        out.emplace_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

std::size_t TextTable::column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) fail(ErrorCode::config, "table has no column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
}

std::string read_text_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::io, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorCode::io, "cannot write " + path.string());
    out << content;
    if (!out) fail(ErrorCode::io, "write failed: " + path.string());
}

TextTable read_table(const fs::path& path, char delim) {
    const auto text = read_text_file(path);
    TextTable t;
    std::istringstream in(text);
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fields = split_fields(line, delim);
        if (first) {
            t.header = std::move(fields);
            first = false;
            continue;
        }
        if (fields.size() != t.header.size())
            fail(ErrorCode::config, path.string() + ": row has " + std::to_string(fields.size()) + " fields, header has " +
                                        std::to_string(t.header.size()));
        t.rows.push_back(std::move(fields));
    }
    if (first) fail(ErrorCode::config, path.string() + ": missing header row");
    return t;
}

std::string format_fixed6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::string metrics_csv(std::vector<MetricsRecord> records) {
    std::stable_sort(records.begin(), records.end(), [](const MetricsRecord& a, const MetricsRecord& b) {
        return std::tie(a.subject, a.slice, a.method, a.cls, a.fold) <
               std::tie(b.subject, b.slice, b.method, b.cls, b.fold);
    });
    std::string out = "subject,slice,fold,method,class,dsc,hdrfdst,volsmty\n";
    for (const auto& r : records) {
        out += r.subject + ',' + std::to_string(r.slice) + ',' + std::to_string(r.fold) + ',' + r.method + ',' +
               to_string(r.cls) + ',' + format_fixed6(r.dsc) + ',' + (r.hd_valid ? format_fixed6(r.hdrfdst) : "NA") +
               ',' + format_fixed6(r.volsmty) + '\n';
    }
    return out;
}

void write_metrics_csv(const std::vector<MetricsRecord>& records, const fs::path& path) {
    write_text_file(path, metrics_csv(records));
}

namespace {

double parse_double(const std::string& s, const fs::path& path) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) fail(ErrorCode::config, path.string() + ": bad number '" + s + "'");
    return v;
}

int parse_int(const std::string& s, const fs::path& path) {
    int v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) fail(ErrorCode::config, path.string() + ": bad integer '" + s + "'");
    return v;
}

} // namespace

std::vector<MetricsRecord> read_metrics_csv(const fs::path& path) {
    const auto t = read_table(path, ',');
    const auto c_subject = t.column("subject"), c_slice = t.column("slice"), c_fold = t.column("fold"),
               c_method = t.column("method"), c_class = t.column("class"), c_dsc = t.column("dsc"),
               c_hd = t.column("hdrfdst"), c_vs = t.column("volsmty");
    std::vector<MetricsRecord> out;
    out.reserve(t.rows.size());
    for (const auto& row : t.rows) {
        MetricsRecord r;
        r.subject = row[c_subject];
        r.slice = parse_int(row[c_slice], path);
        r.fold = parse_int(row[c_fold], path);
        r.method = row[c_method];
        r.cls = metric_class_from_string(row[c_class]);
        r.dsc = parse_double(row[c_dsc], path);
        if (row[c_hd] == "NA") {
            r.hd_valid = false;
            r.hdrfdst = 0.0;
        } else {
            r.hdrfdst = parse_double(row[c_hd], path);
        }
        r.volsmty = parse_double(row[c_vs], path);
        out.push_back(std::move(r));
    }
    return out;
}

} // namespace cordkit
