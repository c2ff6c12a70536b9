#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ssgp/linalg.hpp"

namespace ssgp::io {

/// A parsed CSV file: one header row plus string cells.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column index by name; throws ConfigError when absent.
  std::size_t column(const std::string& name) const;
  bool has_column(const std::string& name) const;
};

CsvTable read_csv(const std::filesystem::path& path);

/// Numeric matrix from a headerless or headered CSV. With `has_header`, the
/// first line is skipped.
Matrix read_csv_matrix(const std::filesystem::path& path, bool has_header = false);

/// Writes with %.17g so a round trip reproduces every double exactly.
void write_csv_matrix(const std::filesystem::path& path, const Matrix& m,
                      const std::vector<std::string>& header = {});
void write_csv_vector(const std::filesystem::path& path, const Vector& v, const std::string& header = {});

/// Shortest round-trip representation of a double (%.17g).
std::string format_double(double v);

double parse_double(const std::string& text, const std::string& context);

/// Matrix Market coordinate (real/integer/pattern, general/symmetric) into a
/// sparse matrix; symmetric storage is expanded.
SparseMatrix read_matrix_market(const std::filesystem::path& path);
/// Matrix Market array (dense, column-major).
Matrix read_matrix_market_dense(const std::filesystem::path& path);
void write_matrix_market(const std::filesystem::path& path, const SparseMatrix& m, bool symmetric = false);
void write_matrix_market_dense(const std::filesystem::path& path, const Matrix& m);

/// ISO-8601 UTC timestamp (YYYY-MM-DDThh:mm[:ss[.fff]][Z|±hh:mm]) to
/// seconds since 1970-01-01T00:00:00Z.
double parse_iso8601(const std::string& text);
/// Seconds since the epoch to YYYY-MM-DDThh:mm:ssZ (fractional seconds
/// rounded to the nearest second).
std::string format_iso8601(double seconds);

constexpr double kSecondsPerDay = 86400.0;

/// FNV-1a 64-bit hash, rendered as 16 hex digits.
std::string fnv1a_hex(const std::string& bytes);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace ssgp::io
