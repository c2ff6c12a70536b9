#include "ssgp/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ssgp/error.hpp"

namespace ssgp::io {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  cells.push_back(trim(cur));
  return cells;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  return out;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

// Days from 1970-01-01 to y-m-d in the proleptic Gregorian calendar.
long long days_from_civil(long long y, unsigned m, unsigned d) {
  y -= m <= 2;
  const long long era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<long long>(doe) - 719468;
}

void civil_from_days(long long z, long long& y, unsigned& m, unsigned& d) {
  z += 719468;
  const long long era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  y = static_cast<long long>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = doy - (153 * mp + 2) / 5 + 1;
  m = mp < 10 ? mp + 3 : mp - 9;
  y += m <= 2;
}

int parse_fixed_int(const std::string& s, std::size_t pos, std::size_t len, const std::string& whole) {
  if (pos + len > s.size()) throw ConfigError("malformed timestamp '" + whole + "'");
  int v = 0;
  for (std::size_t i = pos; i < pos + len; ++i) {
    if (s[i] < '0' || s[i] > '9') throw ConfigError("malformed timestamp '" + whole + "'");
    v = v * 10 + (s[i] - '0');
  }
  return v;
}

}  // namespace

std::size_t CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  throw ConfigError("CSV column '" + name + "' not found");
}

bool CsvTable::has_column(const std::string& name) const {
  return std::find(header.begin(), header.end(), name) != header.end();
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in = open_in(path);
  CsvTable t;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (trim(line).empty() || line[0] == '#') continue;
    auto cells = split_csv_line(line);
    if (first) {
      t.header = std::move(cells);
      first = false;
      continue;
    }
    if (cells.size() != t.header.size())
      throw ConfigError(path.string() + ": row " + std::to_string(t.rows.size() + 1) + " has " +
                        std::to_string(cells.size()) + " cells, header has " + std::to_string(t.header.size()));
    t.rows.push_back(std::move(cells));
  }
  if (first) throw ConfigError(path.string() + ": empty CSV");
  return t;
}

double parse_double(const std::string& text, const std::string& context) {
  const std::string s = trim(text);
  if (s.empty()) throw ConfigError(context + ": empty numeric field");
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw ConfigError(context + ": '" + s + "' is not a number");
  }
  if (used != s.size()) throw ConfigError(context + ": '" + s + "' is not a number");
  return v;
}

Matrix read_csv_matrix(const std::filesystem::path& path, bool has_header) {
  std::ifstream in = open_in(path);
  std::vector<std::vector<double>> rows;
  std::string line;
  bool skip = has_header;
  while (std::getline(in, line)) {
    if (trim(line).empty() || line[0] == '#') continue;
    if (skip) {
      skip = false;
      continue;
    }
    std::vector<double> r;
    for (const auto& c : split_csv_line(line)) r.push_back(parse_double(c, path.string()));
    if (!rows.empty() && r.size() != rows.front().size()) throw ConfigError(path.string() + ": ragged rows");
    rows.push_back(std::move(r));
  }
  if (rows.empty()) return Matrix(0, 0);
  Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  return m;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_csv_matrix(const std::filesystem::path& path, const Matrix& m, const std::vector<std::string>& header) {
  std::ofstream out = open_out(path);
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  if (!header.empty()) out << '\n';
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) out << (j ? "," : "") << format_double(m(i, j));
    out << '\n';
  }
}

void write_csv_vector(const std::filesystem::path& path, const Vector& v, const std::string& header) {
  std::vector<std::string> h;
  if (!header.empty()) h.push_back(header);
  write_csv_matrix(path, Matrix(v), h);
}

namespace {

struct MmHeader {
  bool coordinate = true;
  std::string field;
  std::string symmetry;
};

MmHeader read_mm_header(std::istream& in, const std::string& name) {
  std::string line;
  if (!std::getline(in, line)) throw ConfigError(name + ": empty Matrix Market file");
  std::istringstream ss(line);
  std::string banner, object, format, field, symmetry;
  ss >> banner >> object >> format >> field >> symmetry;
  if (banner != "%%MatrixMarket" || lower(object) != "matrix")
    throw ConfigError(name + ": missing %%MatrixMarket matrix header");
  MmHeader h;
  format = lower(format);
  if (format == "coordinate")
    h.coordinate = true;
  else if (format == "array")
    h.coordinate = false;
  else
    throw ConfigError(name + ": unsupported Matrix Market format '" + format + "'");
  h.field = lower(field);
  h.symmetry = lower(symmetry);
  if (h.field != "real" && h.field != "integer" && h.field != "double" && h.field != "pattern")
    throw ConfigError(name + ": unsupported Matrix Market field '" + field + "'");
  if (h.symmetry != "general" && h.symmetry != "symmetric")
    throw ConfigError(name + ": unsupported Matrix Market symmetry '" + symmetry + "'");
  return h;
}

std::string next_data_line(std::istream& in) {
  std::string line;
  while (std::getline(in, line)) {
    const std::string t = trim(line);
    if (!t.empty() && t[0] != '%') return t;
  }
  return {};
}

}  // namespace

SparseMatrix read_matrix_market(const std::filesystem::path& path) {
  std::ifstream in = open_in(path);
  const std::string name = path.string();
  const MmHeader h = read_mm_header(in, name);
  if (!h.coordinate) {
    const Matrix d = read_matrix_market_dense(path);
    return d.sparseView();
  }
  std::istringstream size_line(next_data_line(in));
  long long rows = -1, cols = -1, nnz = -1;
  if (!(size_line >> rows >> cols >> nnz) || rows < 0 || cols < 0 || nnz < 0)
    throw ConfigError(name + ": malformed size line");
  std::vector<Triplet> trips;
  trips.reserve(static_cast<std::size_t>(nnz) * (h.symmetry == "symmetric" ? 2 : 1));
  for (long long k = 0; k < nnz; ++k) {
    const std::string line = next_data_line(in);
    std::istringstream ss(line);
    long long i = 0, j = 0;
    double v = 1.0;
    if (!(ss >> i >> j) || (h.field != "pattern" && !(ss >> v)))
      throw ConfigError(name + ": malformed entry " + std::to_string(k + 1));
    if (i < 1 || i > rows || j < 1 || j > cols) throw ConfigError(name + ": entry index out of range");
    trips.emplace_back(static_cast<Index>(i - 1), static_cast<Index>(j - 1), v);
    if (h.symmetry == "symmetric" && i != j) trips.emplace_back(static_cast<Index>(j - 1), static_cast<Index>(i - 1), v);
  }
  SparseMatrix m(static_cast<Index>(rows), static_cast<Index>(cols));
  m.setFromTriplets(trips.begin(), trips.end());
  return m;
}

Matrix read_matrix_market_dense(const std::filesystem::path& path) {
  std::ifstream in = open_in(path);
  const std::string name = path.string();
  const MmHeader h = read_mm_header(in, name);
  if (h.coordinate) return Matrix(read_matrix_market(path));
  std::istringstream size_line(next_data_line(in));
  long long rows = -1, cols = -1;
  if (!(size_line >> rows >> cols) || rows < 0 || cols < 0) throw ConfigError(name + ": malformed size line");
  Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
  const bool sym = h.symmetry == "symmetric";
  for (Index j = 0; j < m.cols(); ++j) {
    for (Index i = sym ? j : 0; i < m.rows(); ++i) {
      const std::string line = next_data_line(in);
      if (line.empty()) throw ConfigError(name + ": truncated array data");
      m(i, j) = parse_double(line, name);
      if (sym) m(j, i) = m(i, j);
    }
  }
  return m;
}

void write_matrix_market(const std::filesystem::path& path, const SparseMatrix& m, bool symmetric) {
  std::ofstream out = open_out(path);
  out << "%%MatrixMarket matrix coordinate real " << (symmetric ? "symmetric" : "general") << '\n';
  std::vector<std::tuple<Index, Index, double>> entries;
  for (Index k = 0; k < m.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(m, k); it; ++it)
      if (!symmetric || it.row() >= it.col()) entries.emplace_back(it.row(), it.col(), it.value());
  out << m.rows() << ' ' << m.cols() << ' ' << entries.size() << '\n';
  for (const auto& [i, j, v] : entries) out << i + 1 << ' ' << j + 1 << ' ' << format_double(v) << '\n';
}

void write_matrix_market_dense(const std::filesystem::path& path, const Matrix& m) {
  std::ofstream out = open_out(path);
  out << "%%MatrixMarket matrix array real general\n" << m.rows() << ' ' << m.cols() << '\n';
  for (Index j = 0; j < m.cols(); ++j)
    for (Index i = 0; i < m.rows(); ++i) out << format_double(m(i, j)) << '\n';
}

double parse_iso8601(const std::string& text) {
  const std::string s = trim(text);
  if (s.size() < 16 || s[4] != '-' || s[7] != '-' || (s[10] != 'T' && s[10] != ' ') || s[13] != ':')
    throw ConfigError("malformed timestamp '" + s + "'");
  const int year = parse_fixed_int(s, 0, 4, s);
  const int month = parse_fixed_int(s, 5, 2, s);
  const int day = parse_fixed_int(s, 8, 2, s);
  const int hour = parse_fixed_int(s, 11, 2, s);
  const int minute = parse_fixed_int(s, 14, 2, s);
  std::size_t pos = 16;
  double second = 0.0;
  if (pos < s.size() && s[pos] == ':') {
    second = parse_fixed_int(s, pos + 1, 2, s);
    pos += 3;
    if (pos < s.size() && s[pos] == '.') {
      std::size_t e = pos + 1;
      while (e < s.size() && std::isdigit(static_cast<unsigned char>(s[e]))) ++e;
      if (e == pos + 1) throw ConfigError("malformed timestamp '" + s + "'");
      second += std::stod("0" + s.substr(pos, e - pos));
      pos = e;
    }
  }
  double offset = 0.0;
  if (pos < s.size()) {
    if (s[pos] == 'Z' && pos + 1 == s.size()) {
      // UTC
    } else if ((s[pos] == '+' || s[pos] == '-') && s.size() == pos + 6 && s[pos + 3] == ':') {
      const double sign = s[pos] == '+' ? 1.0 : -1.0;
      offset = sign * (parse_fixed_int(s, pos + 1, 2, s) * 3600.0 + parse_fixed_int(s, pos + 4, 2, s) * 60.0);
    } else {
      throw ConfigError("malformed timestamp '" + s + "'");
    }
  }
  if (month < 1 || month > 12 || day < 1 || day > 31 || hour > 23 || minute > 59 || second >= 61.0)
    throw ConfigError("timestamp field out of range '" + s + "'");
  const long long days = days_from_civil(year, static_cast<unsigned>(month), static_cast<unsigned>(day));
  return static_cast<double>(days) * kSecondsPerDay + hour * 3600.0 + minute * 60.0 + second - offset;
}

std::string format_iso8601(double seconds) {
  const long long total = std::llround(seconds);
  long long days = total / 86400;
  long long rem = total % 86400;
  if (rem < 0) {
    rem += 86400;
    --days;
  }
  long long y = 0;
  unsigned m = 0, d = 0;
  civil_from_days(days, y, m, d);
  char buf[40];
  std::snprintf(buf, sizeof buf, "%04lld-%02u-%02uT%02lld:%02lld:%02lldZ", y, m, d, rem / 3600, (rem / 60) % 60,
                rem % 60);
  return buf;
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in = open_in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out = open_out(path);
  out << text;
}

}  // namespace ssgp::io
