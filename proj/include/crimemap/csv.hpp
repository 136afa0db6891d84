#pragma once

// Minimal delimited-text reader/writer (RFC 4180 style quoting, configurable
// delimiter). Government open-data exports are messy; the parser never throws
// on a malformed row, it just returns the raw fields and leaves semantic
// validation to the caller.

#include <istream>
#include <ostream>
#include <string>
#include <vector>

namespace crimemap::csv {

// Reads one logical record (quoted fields may contain embedded newlines).
// Returns false at end of stream.
inline bool read_record(std::istream& in, char delim, std::vector<std::string>& fields) {
  fields.clear();
  int c = in.get();
  if (c == EOF) return false;
  std::string field;
  bool in_quotes = false;
  bool any = false;
  while (true) {
    if (c == EOF) break;
    char ch = static_cast<char>(c);
    any = true;
    if (in_quotes) {
      if (ch == '"') {
        int next = in.peek();
        if (next == '"') {
          in.get();
          field.push_back('"');
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(ch);
      }
    } else {
      if (ch == '"' && field.empty()) {
        in_quotes = true;
      } else if (ch == delim) {
        fields.push_back(std::move(field));
        field.clear();
      } else if (ch == '\n') {
        break;
      } else if (ch == '\r') {
        if (in.peek() == '\n') in.get();
        break;
      } else {
        field.push_back(ch);
      }
    }
    c = in.get();
  }
  if (!any) return false;
  fields.push_back(std::move(field));
  return true;
}

inline void write_field(std::ostream& out, const std::string& f, char delim) {
  bool needs_quote = f.find(delim) != std::string::npos || f.find('"') != std::string::npos ||
                     f.find('\n') != std::string::npos || f.find('\r') != std::string::npos;
  if (!needs_quote) {
    out << f;
    return;
  }
  out << '"';
  for (char c : f) {
    if (c == '"') out << '"';
    out << c;
  }
  out << '"';
}

inline void write_record(std::ostream& out, const std::vector<std::string>& fields, char delim) {
  for (size_t i = 0; i < fields.size(); ++i) {
    if (i) out << delim;
    write_field(out, fields[i], delim);
  }
  out << '\n';
}

}  // namespace crimemap::csv
