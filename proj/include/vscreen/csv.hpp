#pragma once

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "vscreen/errors.hpp"
#include "vscreen/io_util.hpp"

namespace vscreen {

// Minimal CSV: fixed header, comma separators, no quoting (cell values here
// are identifiers and numbers). Written atomically.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline void write_csv(const std::filesystem::path& path, const CsvTable& t) {
  std::string out;
  for (std::size_t i = 0; i < t.header.size(); ++i) {
    if (i) out += ',';
    out += t.header[i];
  }
  out += '\n';
  for (const auto& row : t.rows) {
    if (row.size() != t.header.size())
      throw ValueError("write_csv: row width " + std::to_string(row.size()) +
                       " != header width " + std::to_string(t.header.size()));
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out += ',';
      out += row[i];
    }
    out += '\n';
  }
  atomic_write_text(path, out);
}

inline CsvTable read_csv(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  CsvTable t;
  std::vector<std::string> cur;
  std::string cell;
  bool in_header = true;
  auto flush_cell = [&]() {
    cur.push_back(cell);
    cell.clear();
  };
  auto flush_row = [&]() {
    flush_cell();
    if (in_header) {
      t.header = cur;
      in_header = false;
    } else {
      if (cur.size() != t.header.size())
        throw FormatError(path.string() + ": ragged csv row");
      t.rows.push_back(cur);
    }
    cur.clear();
  };
  for (std::uint8_t b : bytes) {
    const char c = static_cast<char>(b);
    if (c == ',')
      flush_cell();
    else if (c == '\n')
      flush_row();
    else if (c != '\r')
      cell += c;
  }
  if (!cell.empty() || !cur.empty()) flush_row();
  return t;
}

// Fixed-format float cells keep outputs byte-stable across identical runs.
inline std::string fmt_double(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

inline std::string fmt_g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace vscreen
