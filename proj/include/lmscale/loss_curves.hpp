#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <string>
#include <vector>

namespace lmscale {

/// One row of the loss-curve interchange CSV.
struct LossRecord {
  std::string dataset;
  std::string arch;
  std::uint32_t T = 0;
  double P = 0.0;
  std::uint32_t n = 0;
  double loss = 0.0;
};

/// L_n for n = first_n, first_n + 1, ... at fixed (dataset, arch, T, P).
/// Gaps in n hold NaN.
struct LossCurve {
  std::string dataset;
  std::string arch;
  std::uint32_t T = 0;
  double P = 0.0;
  std::uint32_t first_n = 1;
  std::vector<double> losses;

  std::uint32_t last_n() const { return first_n + static_cast<std::uint32_t>(losses.size()) - 1; }
  bool has(std::uint32_t n) const;
  /// Throws DataError when n is absent.
  double at(std::uint32_t n) const;
  /// n values missing between first_n and last_n.
  std::vector<std::uint32_t> gaps() const;
};

struct LossCurveSet {
  /// Sorted by (dataset, arch, T, P).
  std::vector<LossCurve> curves;

  std::vector<LossRecord> records() const;
  static LossCurveSet from_records(const std::vector<LossRecord>& records);
};

struct ValidationIssue {
  std::size_t line = 0;  // 1-based, 0 when not tied to a line
  std::string message;
};

struct ValidationReport {
  std::vector<ValidationIssue> errors;
  std::vector<ValidationIssue> warnings;
  std::size_t rows = 0;
  bool ok() const { return errors.empty(); }
  std::string summary() const;
};

inline constexpr const char* kLossCsvHeader = "dataset,arch,T,P,n,loss";

/// Strict schema check: exact header, six fields per row, integer T and n
/// with 1 <= n <= T, P > 0, finite loss >= 0, no duplicate keys. Losses that
/// increase with n by more than `monotone_tol` at fixed (dataset, arch, T, P)
/// are reported as warnings, not errors.
ValidationReport validate_loss_csv(std::istream& in, std::vector<LossRecord>* records = nullptr,
                                   double monotone_tol = 1e-6);
ValidationReport validate_loss_csv_file(const std::filesystem::path& path,
                                        std::vector<LossRecord>* records = nullptr,
                                        double monotone_tol = 1e-6);

/// Validates and loads; throws DataError listing the first errors.
LossCurveSet read_loss_csv(const std::filesystem::path& path, ValidationReport* report = nullptr);

std::string to_csv(const LossCurveSet& set);
void write_loss_csv(const std::filesystem::path& path, const LossCurveSet& set);

/// Shortest decimal that round-trips to the same double.
std::string format_double(double v);

}  // namespace lmscale
