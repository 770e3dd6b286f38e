#ifndef PANELSYNTH_CSV_HPP
#define PANELSYNTH_CSV_HPP

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "panelsynth/common.hpp"

namespace panelsynth {
namespace csv {

/// Splits one CSV line. Handles double-quoted fields with embedded commas and
/// "" escapes; no multi-line fields (none of the supported inputs use them).
inline std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(field));
            field.clear();
        } else if (c != '\r') {
            field.push_back(c);
        }
    }
    out.push_back(std::move(field));
    return out;
}

inline std::string quote_if_needed(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out += "\"";
    return out;
}

inline std::string join_row(const std::vector<std::string>& fields) {
    std::string out;
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) out.push_back(',');
        out += quote_if_needed(fields[i]);
    }
    return out;
}

/// Header-indexed CSV file reader; loads the whole file.
class Table {
public:
    static Table read_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw Error("cannot open CSV file: " + path);
        Table t;
        std::string line;
        if (!std::getline(in, line)) throw Error("empty CSV file: " + path);
        t.header_ = split_line(line);
        for (std::size_t i = 0; i < t.header_.size(); ++i)
            t.index_[detail::trim(t.header_[i])] = i;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            t.rows_.push_back(split_line(line));
        }
        return t;
    }

    const std::vector<std::string>& header() const { return header_; }
    std::size_t n_rows() const { return rows_.size(); }
    const std::vector<std::string>& row(std::size_t i) const { return rows_[i]; }

    bool has_column(const std::string& name) const { return index_.count(name) > 0; }

    std::size_t column(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw Error("CSV is missing column '" + name + "'");
        return it->second;
    }

    const std::string& cell(std::size_t row, const std::string& col) const {
        std::size_t c = column(col);
        if (c >= rows_[row].size())
            throw Error("CSV row " + std::to_string(row + 1) + " is short of column '" + col + "'");
        return rows_[row][c];
    }

private:
    std::vector<std::string> header_;
    std::map<std::string, std::size_t> index_;
    std::vector<std::vector<std::string>> rows_;
};

/// Row-at-a-time writer; every write goes through format_double for doubles so
/// identical runs produce identical bytes.
class Writer {
public:
    explicit Writer(const std::string& path) : out_(path) {
        if (!out_) throw Error("cannot open file for writing: " + path);
    }

    void write_row(const std::vector<std::string>& fields) {
        out_ << join_row(fields) << "\n";
    }

    void close() { out_.close(); }

private:
    std::ofstream out_;
};

} // namespace csv
} // namespace panelsynth

#endif
