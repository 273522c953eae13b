#include "lmscale/loss_curves.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "lmscale/error.hpp"

namespace lmscale {

namespace {

using CurveKey = std::tuple<std::string, std::string, std::uint32_t, double>;

bool parse_uint(const std::string& s, std::uint32_t& out) {
  if (s.empty()) return false;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

bool parse_real(const std::string& s, double& out) {
  if (s.empty()) return false;
  const char* begin = s.data();
  if (*begin == '+') ++begin;
  const auto [ptr, ec] = std::from_chars(begin, s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string current;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(ch);
    }
  }
  fields.push_back(std::move(current));
  return fields;
}

}  // namespace

bool LossCurve::has(std::uint32_t n) const {
  if (n < first_n || n > last_n() || losses.empty()) return false;
  return !std::isnan(losses[n - first_n]);
}

double LossCurve::at(std::uint32_t n) const {
  if (!has(n))
    throw DataError("curve " + dataset + "/" + arch + " T=" + std::to_string(T) +
                    " P=" + format_double(P) + " has no loss at n=" + std::to_string(n));
  return losses[n - first_n];
}

std::vector<std::uint32_t> LossCurve::gaps() const {
  std::vector<std::uint32_t> out;
  for (std::size_t i = 0; i < losses.size(); ++i)
    if (std::isnan(losses[i])) out.push_back(first_n + static_cast<std::uint32_t>(i));
  return out;
}

std::vector<LossRecord> LossCurveSet::records() const {
  std::vector<LossRecord> out;
  for (const auto& c : curves)
    for (std::size_t i = 0; i < c.losses.size(); ++i)
      if (!std::isnan(c.losses[i]))
        out.push_back({c.dataset, c.arch, c.T, c.P, c.first_n + static_cast<std::uint32_t>(i), c.losses[i]});
  return out;
}

LossCurveSet LossCurveSet::from_records(const std::vector<LossRecord>& records) {
  std::map<CurveKey, std::map<std::uint32_t, double>> grouped;
  for (const auto& r : records) {
    auto& curve = grouped[{r.dataset, r.arch, r.T, r.P}];
    if (!curve.emplace(r.n, r.loss).second)
      throw DataError("duplicate loss record for " + r.dataset + "/" + r.arch + " T=" +
                      std::to_string(r.T) + " P=" + format_double(r.P) + " n=" + std::to_string(r.n));
  }
  LossCurveSet set;
  for (const auto& [key, by_n] : grouped) {
    LossCurve c;
    std::tie(c.dataset, c.arch, c.T, c.P) = key;
    c.first_n = by_n.begin()->first;
    c.losses.assign(by_n.rbegin()->first - c.first_n + 1, std::nan(""));
    for (const auto& [n, loss] : by_n) c.losses[n - c.first_n] = loss;
    set.curves.push_back(std::move(c));
  }
  return set;
}

std::string ValidationReport::summary() const {
  std::ostringstream out;
  out << rows << " rows, " << errors.size() << " errors, " << warnings.size() << " warnings";
  for (std::size_t i = 0; i < std::min<std::size_t>(errors.size(), 10); ++i)
    out << "\n  error line " << errors[i].line << ": " << errors[i].message;
  for (std::size_t i = 0; i < std::min<std::size_t>(warnings.size(), 10); ++i)
    out << "\n  warning line " << warnings[i].line << ": " << warnings[i].message;
  return out.str();
}

ValidationReport validate_loss_csv(std::istream& in, std::vector<LossRecord>* records,
                                   double monotone_tol) {
  ValidationReport report;
  std::string line;
  if (!std::getline(in, line)) {
    report.errors.push_back({1, "empty file, expected header '" + std::string(kLossCsvHeader) + "'"});
    return report;
  }
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  if (line != kLossCsvHeader) {
    report.errors.push_back({1, "header must be exactly '" + std::string(kLossCsvHeader) + "', got '" + line + "'"});
    return report;
  }

  std::map<std::tuple<std::string, std::string, std::uint32_t, double, std::uint32_t>, std::size_t> seen;
  std::map<CurveKey, std::map<std::uint32_t, std::pair<double, std::size_t>>> curves;
  std::vector<LossRecord> parsed;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++report.rows;
    const auto f = split_csv_line(line);
    if (f.size() != 6) {
      report.errors.push_back({line_no, "expected 6 fields, found " + std::to_string(f.size())});
      continue;
    }
    LossRecord r;
    r.dataset = f[0];
    r.arch = f[1];
    bool ok = true;
    auto fail = [&](const std::string& msg) {
      report.errors.push_back({line_no, msg});
      ok = false;
    };
    if (r.dataset.empty()) fail("dataset must be nonempty");
    if (r.arch.empty()) fail("arch must be nonempty");
    if (!parse_uint(f[2], r.T) || r.T == 0) fail("T must be a positive integer, got '" + f[2] + "'");
    if (!parse_real(f[3], r.P) || !std::isfinite(r.P) || !(r.P > 0))
      fail("P must be a positive number, got '" + f[3] + "'");
    if (!parse_uint(f[4], r.n) || r.n == 0) fail("n must be a positive integer, got '" + f[4] + "'");
    if (!parse_real(f[5], r.loss) || !std::isfinite(r.loss) || r.loss < 0)
      fail("loss must be a finite number >= 0, got '" + f[5] + "'");
    if (!ok) continue;
    if (r.n > r.T) {
      fail("n=" + std::to_string(r.n) + " exceeds context T=" + std::to_string(r.T));
      continue;
    }
    const auto key = std::make_tuple(r.dataset, r.arch, r.T, r.P, r.n);
    if (const auto it = seen.find(key); it != seen.end()) {
      fail("duplicate record (first seen on line " + std::to_string(it->second) + ")");
      continue;
    }
    seen.emplace(key, line_no);
    curves[{r.dataset, r.arch, r.T, r.P}][r.n] = {r.loss, line_no};
    parsed.push_back(std::move(r));
  }

  for (const auto& [key, by_n] : curves) {
    const std::pair<double, std::size_t>* prev = nullptr;
    std::uint32_t prev_n = 0;
    for (const auto& [n, value] : by_n) {
      if (prev && value.first > prev->first + monotone_tol)
        report.warnings.push_back(
            {value.second, "loss increases from n=" + std::to_string(prev_n) + " to n=" +
                               std::to_string(n) + " by " + format_double(value.first - prev->first)});
      prev = &value;
      prev_n = n;
    }
  }
  if (records) *records = std::move(parsed);
  return report;
}

ValidationReport validate_loss_csv_file(const std::filesystem::path& path, std::vector<LossRecord>* records,
                                        double monotone_tol) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  return validate_loss_csv(in, records, monotone_tol);
}

LossCurveSet read_loss_csv(const std::filesystem::path& path, ValidationReport* report) {
  std::vector<LossRecord> records;
  ValidationReport r = validate_loss_csv_file(path, &records);
  if (report) *report = r;
  if (!r.ok()) throw DataError(path.string() + ": invalid loss-curve CSV: " + r.summary());
  if (records.empty()) throw DataError(path.string() + ": no loss records");
  return LossCurveSet::from_records(records);
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) return std::to_string(v);
  return std::string(buf, ptr);
}

std::string to_csv(const LossCurveSet& set) {
  std::string out = std::string(kLossCsvHeader) + "\n";
  for (const auto& r : set.records()) {
    if (r.dataset.find_first_of(",\n\r") != std::string::npos ||
        r.arch.find_first_of(",\n\r") != std::string::npos)
      throw DataError("dataset and arch names may not contain commas or line breaks");
    out += r.dataset + "," + r.arch + "," + std::to_string(r.T) + "," + format_double(r.P) + "," +
           std::to_string(r.n) + "," + format_double(r.loss) + "\n";
  }
  return out;
}

void write_loss_csv(const std::filesystem::path& path, const LossCurveSet& set) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << to_csv(set);
  if (!out) throw DataError("failed writing " + path.string());
}

}  // namespace lmscale
