#ifndef PANELSYNTH_INGEST_HPP
#define PANELSYNTH_INGEST_HPP

#include <algorithm>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "panelsynth/calendar.hpp"
#include "panelsynth/common.hpp"
#include "panelsynth/csv.hpp"

namespace panelsynth {

// ---------------------------------------------------------------------------
// Incident-level records and the crime taxonomy
// ---------------------------------------------------------------------------

struct IncidentRecord {
    std::string city_id;
    Date event_date;
    std::vector<std::string> offense_texts; // offense / law / agency descriptors
    std::optional<std::string> agency_code; // UCR/NIBRS code when the feed has one
};

/// Level-2 crime categories. `unmapped` is a first-class bucket so that audits
/// can account for every classifiable row.
enum class Level2 {
    Homicide,
    Rape,
    Robbery,
    Assault,
    Burglary,
    Theft,
    OtherProperty,
    Drug,
    WhiteCollar,
    Gambling,
    Arson,
    Unmapped,
};

inline const std::vector<std::pair<Level2, std::string>>& level2_names() {
    static const std::vector<std::pair<Level2, std::string>> names = {
        {Level2::Homicide, "homicide"},       {Level2::Rape, "rape"},
        {Level2::Robbery, "robbery"},         {Level2::Assault, "assault"},
        {Level2::Burglary, "burglary"},       {Level2::Theft, "theft"},
        {Level2::OtherProperty, "other_property"}, {Level2::Drug, "drug"},
        {Level2::WhiteCollar, "white_collar"}, {Level2::Gambling, "gambling"},
        {Level2::Arson, "arson"},             {Level2::Unmapped, "unmapped"},
    };
    return names;
}

inline std::string to_string(Level2 c) {
    for (const auto& [cat, name] : level2_names())
        if (cat == c) return name;
    return "unmapped";
}

inline Level2 level2_from_string(const std::string& s) {
    std::string n = detail::normalize_text(s);
    for (const auto& [cat, name] : level2_names())
        if (name == n) return cat;
    throw Error("unknown level-2 category '" + s + "'");
}

/// Ordered first-match-wins mapping from descriptor prefixes to categories.
/// Patterns and probe text are both normalized (lowercase, trimmed, collapsed
/// whitespace); a rule matches when it is a prefix of the descriptor.
class CategoryMap {
public:
    struct Rule {
        std::string pattern; // normalized prefix
        std::string level1;
        Level2 level2;
    };

    void add_rule(const std::string& pattern, const std::string& level1, Level2 level2) {
        std::string p = detail::normalize_text(pattern);
        if (p.empty()) throw Error("category map rule with empty pattern");
        rules_.push_back(Rule{p, detail::normalize_text(level1), level2});
    }

    const std::vector<Rule>& rules() const { return rules_; }

    /// Classifies one descriptor; no rule means `unmapped`.
    Level2 classify_text(std::string_view text) const {
        std::string probe = detail::normalize_text(text);
        for (const Rule& r : rules_)
            if (detail::starts_with(probe, r.pattern)) return r.level2;
        return Level2::Unmapped;
    }

    /// Tab-separated file: pattern, level1, level2. '#' lines are comments.
    static CategoryMap load_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw Error("cannot open category map: " + path);
        CategoryMap map;
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            std::string t = detail::trim(line);
            if (t.empty() || t[0] == '#') continue;
            std::vector<std::string> parts;
            std::stringstream ss(t);
            std::string part;
            while (std::getline(ss, part, '\t')) parts.push_back(detail::trim(part));
            if (parts.size() != 3)
                throw Error("category map " + path + ":" + std::to_string(line_no) +
                            ": expected 3 tab-separated fields");
            map.add_rule(parts[0], parts[1], level2_from_string(parts[2]));
        }
        if (map.rules_.empty()) throw Error("category map " + path + " declares no rules");
        return map;
    }

    /// Checks totality against a declared vocabulary (one descriptor per line).
    /// Returns the descriptors with no matching rule.
    std::vector<std::string> unmatched_vocabulary(const std::vector<std::string>& vocab) const {
        std::vector<std::string> missing;
        for (const auto& v : vocab)
            if (classify_text(v) == Level2::Unmapped) missing.push_back(v);
        return missing;
    }

private:
    std::vector<Rule> rules_;
};

// ---------------------------------------------------------------------------
// CSV parsing
// ---------------------------------------------------------------------------

/// Column-name map for one incident file. `city_column` empty means every row
/// belongs to `fixed_city`.
struct IncidentSchema {
    std::string date_column;
    std::vector<std::string> descriptor_columns;
    std::string city_column;      // optional
    std::string fixed_city;       // used when city_column is empty
    std::string agency_code_column; // optional
    DateFormat date_format = DateFormat::Iso;
};

struct RowIssue {
    std::size_t row = 0; // 1-based data row index
    std::string message;
};

struct ParseResult {
    std::vector<IncidentRecord> records;
    std::vector<RowIssue> issues; // malformed rows, counted not dropped silently
};

/// Reads one incident CSV. Unreadable files throw; malformed rows are recorded
/// in `issues` and parsing continues, preserving input order for good rows.
inline ParseResult parse_incidents(const std::string& path, const IncidentSchema& schema) {
    csv::Table table = csv::Table::read_file(path);
    if (schema.date_column.empty()) throw Error("incident schema must name a date column");
    if (schema.descriptor_columns.empty())
        throw Error("incident schema must name at least one descriptor column");
    table.column(schema.date_column); // fail fast on missing columns
    for (const auto& c : schema.descriptor_columns) table.column(c);
    if (!schema.city_column.empty()) table.column(schema.city_column);

    ParseResult out;
    out.records.reserve(table.n_rows());
    for (std::size_t i = 0; i < table.n_rows(); ++i) {
        IncidentRecord rec;
        try {
            rec.city_id = schema.city_column.empty() ? schema.fixed_city
                                                     : detail::trim(table.cell(i, schema.city_column));
            if (rec.city_id.empty()) throw Error("empty city id");
            rec.event_date = parse_date(table.cell(i, schema.date_column), schema.date_format);
            for (const auto& c : schema.descriptor_columns)
                rec.offense_texts.push_back(table.cell(i, c));
            if (!schema.agency_code_column.empty() && table.has_column(schema.agency_code_column)) {
                std::string code = detail::trim(table.cell(i, schema.agency_code_column));
                if (!code.empty()) rec.agency_code = code;
            }
        } catch (const Error& e) {
            out.issues.push_back(RowIssue{i + 1, e.what()});
            continue;
        }
        out.records.push_back(std::move(rec));
    }
    return out;
}

/// First matching rule wins, scanning rules in declaration order and testing
/// each of the record's descriptors against a rule before moving on.
inline Level2 classify_incident(const IncidentRecord& record, const CategoryMap& map) {
    std::vector<std::string> probes;
    probes.reserve(record.offense_texts.size());
    for (const auto& t : record.offense_texts) probes.push_back(detail::normalize_text(t));
    for (const auto& rule : map.rules()) {
        for (const auto& probe : probes)
            if (detail::starts_with(probe, rule.pattern)) return rule.level2;
    }
    return Level2::Unmapped;
}

// ---------------------------------------------------------------------------
// Daily counts
// ---------------------------------------------------------------------------

/// Gapless daily counts for one (city, category) within the study window.
struct DailyCountSeries {
    std::string city_id;
    Level2 category = Level2::Unmapped;
    Date start;
    std::vector<long long> counts; // one entry per day, >= 0

    Date end() const { return start.plus_days(static_cast<int>(counts.size()) - 1); }

    long long total() const {
        long long s = 0;
        for (long long c : counts) s += c;
        return s;
    }
};

struct DailyCountsResult {
    std::map<std::pair<std::string, Level2>, DailyCountSeries> series;
    std::map<std::string, long long> unmapped_descriptor_counts; // audit
    long long in_window_records = 0;
    long long out_of_window_records = 0;
};

/// Buckets classified records into per-(city, category) daily series covering
/// [window_start, window_end]; days without incidents hold zero.
inline DailyCountsResult build_daily_counts(const std::vector<IncidentRecord>& records,
                                            const CategoryMap& map, Date window_start,
                                            Date window_end) {
    if (window_end < window_start) throw Error("daily-count window end precedes start");
    const int n_days = window_start.days_until(window_end) + 1;
    DailyCountsResult out;
    for (const IncidentRecord& rec : records) {
        if (rec.event_date < window_start || window_end < rec.event_date) {
            ++out.out_of_window_records;
            continue;
        }
        ++out.in_window_records;
        Level2 cat = classify_incident(rec, map);
        if (cat == Level2::Unmapped) {
            std::string key = rec.offense_texts.empty()
                                  ? std::string("<no descriptor>")
                                  : detail::normalize_text(rec.offense_texts.front());
            ++out.unmapped_descriptor_counts[key];
        }
        auto key = std::make_pair(rec.city_id, cat);
        auto it = out.series.find(key);
        if (it == out.series.end()) {
            DailyCountSeries s;
            s.city_id = rec.city_id;
            s.category = cat;
            s.start = window_start;
            s.counts.assign(static_cast<std::size_t>(n_days), 0);
            it = out.series.emplace(key, std::move(s)).first;
        }
        it->second.counts[static_cast<std::size_t>(window_start.days_until(rec.event_date))] += 1;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reporting-discontinuity screen
// ---------------------------------------------------------------------------

struct DiscontinuityFlag {
    bool flagged = false;
    Date changepoint;   // first day of the offending window
    double ratio = 1.0; // later-window mean over earlier-window mean
};

/// Compares means of consecutive disjoint 30-day windows; flags the series if
/// any adjacent pair differs by a factor outside [1/threshold, threshold].
/// A trailing partial window is ignored.
inline DiscontinuityFlag detect_reporting_discontinuity(const DailyCountSeries& series,
                                                        double threshold = 3.0) {
    constexpr int kWindow = 30;
    if (series.counts.size() < 4 * kWindow)
        throw Error("discontinuity screen needs at least 120 days, got " +
                    std::to_string(series.counts.size()));
    if (threshold <= 1.0) throw Error("discontinuity threshold must exceed 1");
    const std::size_t n_blocks = series.counts.size() / kWindow;
    std::vector<double> block_means(n_blocks, 0.0);
    for (std::size_t b = 0; b < n_blocks; ++b) {
        double s = 0.0;
        for (int i = 0; i < kWindow; ++i) s += static_cast<double>(series.counts[b * kWindow + i]);
        block_means[b] = s / kWindow;
    }
    for (std::size_t b = 1; b < n_blocks; ++b) {
        double before = block_means[b - 1];
        double after = block_means[b];
        double ratio;
        if (before == 0.0 && after == 0.0) ratio = 1.0;
        else if (before == 0.0) ratio = std::numeric_limits<double>::infinity();
        else ratio = after / before;
        if (ratio > threshold || ratio < 1.0 / threshold) {
            DiscontinuityFlag f;
            f.flagged = true;
            f.changepoint = series.start.plus_days(static_cast<int>(b) * kWindow);
            f.ratio = ratio;
            return f;
        }
    }
    return DiscontinuityFlag{};
}

// ---------------------------------------------------------------------------
// Audit report
// ---------------------------------------------------------------------------

struct IngestAudit {
    long long rows_read = 0;
    long long rows_malformed = 0;
    std::vector<RowIssue> issues;
    long long records_in_window = 0;
    long long records_out_of_window = 0;
    std::map<std::string, long long> unmapped_descriptors;
    struct Discontinuity {
        std::string city;
        Level2 category;
        Date changepoint;
        double ratio;
    };
    std::vector<Discontinuity> discontinuities;

    std::string to_text() const {
        std::ostringstream os;
        os << "ingest audit\n";
        os << "rows_read: " << rows_read << "\n";
        os << "rows_malformed: " << rows_malformed << "\n";
        for (const auto& issue : issues)
            os << "  row " << issue.row << ": " << issue.message << "\n";
        os << "records_in_window: " << records_in_window << "\n";
        os << "records_out_of_window: " << records_out_of_window << "\n";
        os << "unmapped_descriptors: " << unmapped_descriptors.size() << "\n";
        for (const auto& [desc, n] : unmapped_descriptors)
            os << "  '" << desc << "': " << n << "\n";
        os << "flagged_discontinuities: " << discontinuities.size() << "\n";
        for (const auto& d : discontinuities)
            os << "  " << d.city << "/" << to_string(d.category) << " at " << to_iso(d.changepoint)
               << " (ratio " << detail::format_double(d.ratio) << ")\n";
        return os.str();
    }
};

} // namespace panelsynth

#endif
