#pragma once

// Parsing of delimited crime-incident report files into validated records,
// category filtering and ingest statistics.

#include <charconv>
#include <cstdio>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "crimemap/common.hpp"
#include "crimemap/csv.hpp"

namespace crimemap {

struct Date {
  int year = 0;
  int month = 0;  // 1..12
  int day = 0;    // 1..31
  auto operator<=>(const Date&) const = default;

  std::string iso() const {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", year, month, day);
    return buf;
  }
};

struct TimeOfDay {
  int hour = 0;
  int minute = 0;
  auto operator<=>(const TimeOfDay&) const = default;

  std::string hhmm() const {
    char buf[8];
    std::snprintf(buf, sizeof(buf), "%02d:%02d", hour, minute);
    return buf;
  }
};

struct CrimeReport {
  std::string report_id;
  Date date;
  std::optional<TimeOfDay> time;
  double latitude = 0.0;
  double longitude = 0.0;
  std::string category;

  bool operator==(const CrimeReport&) const = default;
};

// Maps CrimeReport fields onto source columns, by name (header row) or index.
struct ColumnMapping {
  using ColumnRef = std::variant<int, std::string>;
  ColumnRef report_id{0};
  ColumnRef date{1};
  ColumnRef time{2};
  ColumnRef latitude{3};
  ColumnRef longitude{4};
  ColumnRef category{5};
  std::string date_format = "%m/%d/%Y";  // tokens: %Y %y %m %d
  bool has_header = false;
  char delimiter = ',';
};

struct CategoryPolicy {
  enum class Mode { Allowlist, Denylist };
  Mode mode = Mode::Denylist;
  std::set<std::string> categories;  // normalized

  void validate() const {
    if (mode == Mode::Allowlist && categories.empty())
      throw ConfigError("category policy: allowlist must be non-empty");
  }
  bool passes(const std::string& normalized) const {
    bool listed = categories.count(normalized) > 0;
    return mode == Mode::Allowlist ? listed : !listed;
  }
};

// Categories the paper's three cities tag as violent, lowercased.
inline CategoryPolicy default_violent_policy() {
  return CategoryPolicy{CategoryPolicy::Mode::Allowlist,
                        {"homicide", "assault", "battery", "robbery", "arson", "kidnapping",
                         "criminal sexual assault"}};
}

struct RowError {
  size_t row_number = 0;  // 1-based, counting data rows after any header
  std::string reason;
};

struct IngestStats {
  size_t rows_read = 0;
  size_t rows_parsed = 0;
  size_t rows_rejected = 0;
  size_t rows_after_filter = 0;
  std::map<std::string, size_t> rejection_reasons;
};

struct ParseResult {
  std::vector<CrimeReport> reports;
  std::vector<RowError> errors;
  size_t rows_read = 0;
};

namespace detail {

inline bool parse_int(std::string_view s, int& out) {
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

inline bool parse_double(std::string_view s, double& out) {
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

// Explicit-format date parser; tokens %Y (4-digit), %y (2-digit, 2000-based),
// %m, %d (1-2 digits). Literal characters must match exactly.
inline bool parse_date(std::string_view text, const std::string& fmt, Date& out) {
  size_t ti = 0;
  Date d;
  bool have_y = false, have_m = false, have_d = false;
  auto read_num = [&](int max_digits, int& value) {
    int n = 0, digits = 0;
    while (ti < text.size() && digits < max_digits &&
           std::isdigit(static_cast<unsigned char>(text[ti]))) {
      n = n * 10 + (text[ti] - '0');
      ++ti;
      ++digits;
    }
    if (digits == 0) return false;
    value = n;
    return true;
  };
  for (size_t fi = 0; fi < fmt.size(); ++fi) {
    if (fmt[fi] == '%' && fi + 1 < fmt.size()) {
      char tok = fmt[++fi];
      switch (tok) {
        case 'Y':
          if (!read_num(4, d.year)) return false;
          have_y = true;
          break;
        case 'y': {
          int yy;
          if (!read_num(2, yy)) return false;
          d.year = 2000 + yy;
          have_y = true;
          break;
        }
        case 'm':
          if (!read_num(2, d.month)) return false;
          have_m = true;
          break;
        case 'd':
          if (!read_num(2, d.day)) return false;
          have_d = true;
          break;
        case '%':
          if (ti >= text.size() || text[ti] != '%') return false;
          ++ti;
          break;
        default:
          return false;
      }
    } else {
      if (ti >= text.size() || text[ti] != fmt[fi]) return false;
      ++ti;
    }
  }
  if (ti != text.size() || !have_y || !have_m || !have_d) return false;
  static const int mdays[] = {31, 29, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  if (d.month < 1 || d.month > 12 || d.day < 1 || d.day > mdays[d.month - 1]) return false;
  out = d;
  return true;
}

// Accepts "HH:MM" or "HH:MM:SS" (seconds ignored).
inline bool parse_time(std::string_view text, TimeOfDay& out) {
  int h = 0, m = 0;
  size_t colon = text.find(':');
  if (colon == std::string_view::npos) return false;
  if (!parse_int(text.substr(0, colon), h)) return false;
  std::string_view rest = text.substr(colon + 1);
  size_t colon2 = rest.find(':');
  std::string_view mm = colon2 == std::string_view::npos ? rest : rest.substr(0, colon2);
  if (!parse_int(mm, m)) return false;
  if (colon2 != std::string_view::npos) {
    int s = 0;
    if (!parse_int(rest.substr(colon2 + 1), s) || s < 0 || s > 59) return false;
  }
  if (h < 0 || h > 23 || m < 0 || m > 59) return false;
  out = {h, m};
  return true;
}

struct ResolvedMapping {
  int report_id, date, time, latitude, longitude, category;
};

inline int resolve_column(const ColumnMapping::ColumnRef& ref,
                          const std::vector<std::string>& header, const char* field_name) {
  if (std::holds_alternative<int>(ref)) return std::get<int>(ref);
  const std::string& name = std::get<std::string>(ref);
  for (size_t i = 0; i < header.size(); ++i)
    if (to_lower(trim(header[i])) == to_lower(trim(name))) return static_cast<int>(i);
  throw ConfigError(std::string("column mapping: no header column named '") + name + "' for " +
                    field_name);
}

}  // namespace detail

// Parses a delimited stream. Bad rows never abort the parse; each yields one
// RowError with its 1-based data-row number.
inline ParseResult parse_reports(std::istream& in, const ColumnMapping& mapping) {
  ParseResult result;
  std::vector<std::string> fields;
  std::vector<std::string> header;
  if (mapping.has_header) {
    if (!csv::read_record(in, mapping.delimiter, header)) return result;
  }
  auto need_header = [&](const ColumnMapping::ColumnRef& r) {
    return std::holds_alternative<std::string>(r);
  };
  if (!mapping.has_header &&
      (need_header(mapping.report_id) || need_header(mapping.date) || need_header(mapping.time) ||
       need_header(mapping.latitude) || need_header(mapping.longitude) ||
       need_header(mapping.category)))
    throw ConfigError("column mapping uses names but input has no header row");

  detail::ResolvedMapping cols{
      detail::resolve_column(mapping.report_id, header, "report_id"),
      detail::resolve_column(mapping.date, header, "date"),
      detail::resolve_column(mapping.time, header, "time"),
      detail::resolve_column(mapping.latitude, header, "latitude"),
      detail::resolve_column(mapping.longitude, header, "longitude"),
      detail::resolve_column(mapping.category, header, "category"),
  };

  size_t row_number = 0;
  while (csv::read_record(in, mapping.delimiter, fields)) {
    ++row_number;
    ++result.rows_read;
    auto reject = [&](const std::string& reason) {
      result.errors.push_back({row_number, reason});
    };
    int max_col = std::max({cols.report_id, cols.date, cols.time, cols.latitude, cols.longitude,
                            cols.category});
    if (static_cast<int>(fields.size()) <= max_col) {
      reject("missing field: row has " + std::to_string(fields.size()) + " columns, need " +
             std::to_string(max_col + 1));
      continue;
    }
    CrimeReport r;
    r.report_id = trim(fields[cols.report_id]);
    if (!detail::parse_date(trim(fields[cols.date]), mapping.date_format, r.date)) {
      reject("unparseable date: '" + trim(fields[cols.date]) + "'");
      continue;
    }
    std::string time_text = trim(fields[cols.time]);
    if (!time_text.empty()) {
      TimeOfDay t;
      if (detail::parse_time(time_text, t))
        r.time = t;
      else {
        reject("unparseable time: '" + time_text + "'");
        continue;
      }
    }
    std::string lat_text = trim(fields[cols.latitude]);
    std::string lon_text = trim(fields[cols.longitude]);
    if (lat_text.empty() || lon_text.empty()) {
      reject("missing coordinates");
      continue;
    }
    if (!detail::parse_double(lat_text, r.latitude) || !detail::parse_double(lon_text, r.longitude)) {
      reject("bad coordinate: '" + lat_text + "', '" + lon_text + "'");
      continue;
    }
    if (r.latitude < -90.0 || r.latitude > 90.0 || r.longitude < -180.0 || r.longitude > 180.0) {
      reject("coordinate out of range: " + lat_text + ", " + lon_text);
      continue;
    }
    r.category = trim(fields[cols.category]);
    if (r.category.empty()) {
      reject("empty category");
      continue;
    }
    result.reports.push_back(std::move(r));
  }
  return result;
}

// Keeps exactly the reports whose normalized category passes the policy;
// order preserved.
inline std::vector<CrimeReport> filter_violent(const std::vector<CrimeReport>& reports,
                                               const CategoryPolicy& policy) {
  policy.validate();
  std::vector<CrimeReport> out;
  out.reserve(reports.size());
  for (const auto& r : reports)
    if (policy.passes(normalize_category(r.category))) out.push_back(r);
  return out;
}

inline IngestStats summarize(const ParseResult& parsed, size_t rows_after_filter) {
  IngestStats s;
  s.rows_read = parsed.rows_read;
  s.rows_parsed = parsed.reports.size();
  s.rows_rejected = parsed.errors.size();
  s.rows_after_filter = rows_after_filter;
  for (const auto& e : parsed.errors) {
    // Bucket by the part before ':' so the histogram stays small.
    size_t colon = e.reason.find(':');
    s.rejection_reasons[e.reason.substr(0, colon)]++;
  }
  return s;
}

inline IngestStats summarize(const ParseResult& parsed) {
  return summarize(parsed, parsed.reports.size());
}

// One-JSON-object-per-line persistence of normalized reports.
inline void write_reports_jsonl(std::ostream& out, const std::vector<CrimeReport>& reports) {
  auto escape = [](const std::string& s) {
    std::string o;
    for (char c : s) {
      if (c == '"' || c == '\\') o.push_back('\\');
      if (c == '\n') {
        o += "\\n";
        continue;
      }
      o.push_back(c);
    }
    return o;
  };
  char buf[64];
  for (const auto& r : reports) {
    out << "{\"report_id\":\"" << escape(r.report_id) << "\",\"date\":\"" << r.date.iso()
        << "\",\"time\":";
    if (r.time)
      out << '"' << r.time->hhmm() << '"';
    else
      out << "null";
    std::snprintf(buf, sizeof(buf), "%.7f", r.latitude);
    out << ",\"lat\":" << buf;
    std::snprintf(buf, sizeof(buf), "%.7f", r.longitude);
    out << ",\"lon\":" << buf;
    out << ",\"category\":\"" << escape(r.category) << "\"}\n";
  }
}

// Serializes reports back to delimited text in the Table-1 column order
// (id, date, time, lat, lon, category).
inline void write_reports_csv(std::ostream& out, const std::vector<CrimeReport>& reports,
                              const std::string& date_format = "%m/%d/%Y", char delim = ',') {
  char buf[64];
  for (const auto& r : reports) {
    std::vector<std::string> fields;
    fields.push_back(r.report_id);
    std::string date_text;
    for (size_t i = 0; i < date_format.size(); ++i) {
      if (date_format[i] == '%' && i + 1 < date_format.size()) {
        switch (date_format[++i]) {
          case 'Y':
            std::snprintf(buf, sizeof(buf), "%04d", r.date.year);
            date_text += buf;
            break;
          case 'y':
            std::snprintf(buf, sizeof(buf), "%02d", r.date.year % 100);
            date_text += buf;
            break;
          case 'm':
            std::snprintf(buf, sizeof(buf), "%02d", r.date.month);
            date_text += buf;
            break;
          case 'd':
            std::snprintf(buf, sizeof(buf), "%02d", r.date.day);
            date_text += buf;
            break;
          default:
            date_text += date_format[i];
        }
      } else {
        date_text += date_format[i];
      }
    }
    fields.push_back(date_text);
    fields.push_back(r.time ? r.time->hhmm() : "");
    // Shortest round-trip formatting keeps write→parse exact.
    auto fmt_coord = [&](double v) {
      auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
      (void)ec;
      return std::string(buf, p);
    };
    fields.push_back(fmt_coord(r.latitude));
    fields.push_back(fmt_coord(r.longitude));
    fields.push_back(r.category);
    csv::write_record(out, fields, delim);
  }
}

}  // namespace crimemap
