#pragma once

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "segcls/error.hpp"

// AudioSet-style dataset manifests:
//   manifest.csv: clip_id,wav_path,start_sec,end_sec,labels   (labels "3;17")
//   classes.csv:  index,mid,display_name
namespace segcls::manifest {

struct ClassInfo {
  int index = 0;
  std::string machine_id;
  std::string display_name;
  bool operator==(const ClassInfo&) const = default;
};

struct Row {
  std::string clip_id;
  std::string wav_path;
  double start_sec = 0.0;
  double end_sec = 0.0;
  std::vector<int> labels;
  bool operator==(const Row&) const = default;
};

struct Manifest {
  std::vector<Row> rows;
  std::vector<ClassInfo> classes;
  std::filesystem::path base_dir;  // wav paths resolve against this

  std::size_t class_count() const { return classes.size(); }
  std::filesystem::path resolve(const Row& r) const {
    std::filesystem::path p(r.wav_path);
    return p.is_absolute() ? p : base_dir / p;
  }
  bool operator==(const Manifest& o) const { return rows == o.rows && classes == o.classes; }
};

namespace detail {

/// Splits one CSV line, honouring double-quoted fields.
inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

inline std::string quote_csv(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError(where + ": '" + s + "' is not a number");
  }
}

inline int parse_int(const std::string& s, const std::string& where) {
  int v = 0;
  const auto t = trim(s);
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size()) throw DataError(where + ": '" + s + "' is not an integer");
  return v;
}

inline std::vector<std::string> read_lines(std::istream& is) {
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!trim(line).empty()) lines.push_back(line);
  }
  return lines;
}

}  // namespace detail

inline std::vector<int> parse_labels(const std::string& field, const std::string& where) {
  std::vector<int> out;
  std::stringstream ss(field);
  std::string tok;
  while (std::getline(ss, tok, ';')) {
    if (detail::trim(tok).empty()) continue;
    out.push_back(detail::parse_int(tok, where));
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

inline std::vector<ClassInfo> read_classes(std::istream& is) {
  const auto lines = detail::read_lines(is);
  if (lines.empty()) throw DataError("class map is empty");
  std::vector<ClassInfo> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto f = detail::split_csv(lines[i]);
    if (f.size() < 3) throw DataError("class map line " + std::to_string(i + 1) + ": expected 3 fields");
    ClassInfo c{detail::parse_int(f[0], "class map"), f[1], f[2]};
    if (c.index != static_cast<int>(out.size()))
      throw DataError("class map indices must be 0..K-1 in order (line " + std::to_string(i + 1) + ")");
    out.push_back(std::move(c));
  }
  return out;
}

inline void write_classes(std::ostream& os, const std::vector<ClassInfo>& classes) {
  os << "index,mid,display_name\n";
  for (const auto& c : classes) {
    os << c.index << "," << detail::quote_csv(c.machine_id) << "," << detail::quote_csv(c.display_name) << "\n";
  }
}

/// Parses manifest rows and checks them against the class map.
inline std::vector<Row> read_rows(std::istream& is, std::size_t class_count) {
  const auto lines = detail::read_lines(is);
  if (lines.empty()) throw DataError("manifest is empty");
  const auto header = detail::split_csv(lines[0]);
  const std::vector<std::string> expected{"clip_id", "wav_path", "start_sec", "end_sec", "labels"};
  std::vector<std::string> trimmed;
  for (const auto& h : header) trimmed.push_back(detail::trim(h));
  if (trimmed != expected) throw DataError("manifest header must be clip_id,wav_path,start_sec,end_sec,labels");
  std::vector<Row> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::string where = "manifest line " + std::to_string(i + 1);
    const auto f = detail::split_csv(lines[i]);
    if (f.size() != 5) throw DataError(where + ": expected 5 fields");
    Row r;
    r.clip_id = detail::trim(f[0]);
    r.wav_path = detail::trim(f[1]);
    r.start_sec = detail::parse_double(detail::trim(f[2]), where);
    r.end_sec = detail::parse_double(detail::trim(f[3]), where);
    r.labels = parse_labels(f[4], where);
    if (r.clip_id.empty()) throw DataError(where + ": empty clip_id");
    if (!(r.end_sec > r.start_sec)) throw DataError(where + ": end_sec must exceed start_sec");
    for (int l : r.labels) {
      if (l < 0 || static_cast<std::size_t>(l) >= class_count)
        throw DataError(where + ": label " + std::to_string(l) + " outside the class map");
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

inline std::string format_seconds(double s) {
  std::ostringstream os;
  os.precision(17);
  os << s;
  return os.str();
}

inline void write_rows(std::ostream& os, const std::vector<Row>& rows) {
  os << "clip_id,wav_path,start_sec,end_sec,labels\n";
  for (const auto& r : rows) {
    std::string labels;
    for (std::size_t i = 0; i < r.labels.size(); ++i) labels += (i ? ";" : "") + std::to_string(r.labels[i]);
    os << detail::quote_csv(r.clip_id) << "," << detail::quote_csv(r.wav_path) << "," << format_seconds(r.start_sec)
       << "," << format_seconds(r.end_sec) << "," << labels << "\n";
  }
}

/// Loads manifest.csv plus its class map (default: classes.csv next to it).
inline Manifest load(const std::filesystem::path& manifest_path, std::filesystem::path classes_path = {}) {
  if (classes_path.empty()) classes_path = manifest_path.parent_path() / "classes.csv";
  std::ifstream cs(classes_path);
  if (!cs) throw DataError("cannot read class map " + classes_path.string());
  Manifest m;
  m.classes = read_classes(cs);
  std::ifstream ms(manifest_path);
  if (!ms) throw DataError("cannot read manifest " + manifest_path.string());
  m.rows = read_rows(ms, m.classes.size());
  m.base_dir = manifest_path.parent_path();
  return m;
}

inline void save(const Manifest& m, const std::filesystem::path& manifest_path,
                 std::filesystem::path classes_path = {}) {
  if (classes_path.empty()) classes_path = manifest_path.parent_path() / "classes.csv";
  std::ofstream ms(manifest_path);
  if (!ms) throw DataError("cannot write " + manifest_path.string());
  write_rows(ms, m.rows);
  std::ofstream cs(classes_path);
  if (!cs) throw DataError("cannot write " + classes_path.string());
  write_classes(cs, m.classes);
}

}  // namespace segcls::manifest
