#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "tembed/errors.hpp"

namespace tembed::csv {

// Minimal RFC-4180 reader: quoted fields, doubled-quote escapes, CRLF
// tolerant. Dataset sentences contain commas, so naive splitting is not
// an option.
inline std::vector<std::string> parse_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool in_quotes = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      in_quotes = true;
    } else if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c == '\r') {
      // swallow
    } else {
      cur.push_back(c);
    }
  }
  if (in_quotes) throw FormatError("csv: unterminated quote in line: " + line);
  fields.push_back(cur);
  return fields;
}

inline std::vector<std::vector<std::string>> read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgError("csv: cannot open " + path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    rows.push_back(parse_line(line));
  }
  return rows;
}

inline std::string quote(const std::string& s) {
  bool need = s.find_first_of(",\"\n") != std::string::npos;
  if (!need) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out += "\"";
  return out;
}

inline std::string join_row(const std::vector<std::string>& fields) {
  std::ostringstream os;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) os << ',';
    os << quote(fields[i]);
  }
  return os.str();
}

}  // namespace tembed::csv
