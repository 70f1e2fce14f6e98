#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <algorithm>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ncl {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Rng = std::mt19937_64;

enum class ErrorCode {
  SizeMismatch,
  DimensionMismatch,
  ShapeError,
  InvalidCost,
  InvalidProgram,
  BudgetExceeded,
  DegenerateSampling,
  InconsistentData,
  InfeasibleGrid,
  LocalSearchFailed,
  StiffnessError,
  SynthesisFailed,
  TubePackingFailed,
  FitFailed,
  NumericalFailure,
  DataTooSparse,
  NotConverged,
  InvalidTime,
  StepError,
  UsageError,
  ConfigError,
  IoError,
};

inline std::string_view to_string(ErrorCode c) {
  switch (c) {
    case ErrorCode::SizeMismatch: return "SizeMismatch";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::ShapeError: return "ShapeError";
    case ErrorCode::InvalidCost: return "InvalidCost";
    case ErrorCode::InvalidProgram: return "InvalidProgram";
    case ErrorCode::BudgetExceeded: return "BudgetExceeded";
    case ErrorCode::DegenerateSampling: return "DegenerateSampling";
    case ErrorCode::InconsistentData: return "InconsistentData";
    case ErrorCode::InfeasibleGrid: return "InfeasibleGrid";
    case ErrorCode::LocalSearchFailed: return "LocalSearchFailed";
    case ErrorCode::StiffnessError: return "StiffnessError";
    case ErrorCode::SynthesisFailed: return "SynthesisFailed";
    case ErrorCode::TubePackingFailed: return "TubePackingFailed";
    case ErrorCode::FitFailed: return "FitFailed";
    case ErrorCode::NumericalFailure: return "NumericalFailure";
    case ErrorCode::DataTooSparse: return "DataTooSparse";
    case ErrorCode::NotConverged: return "NotConverged";
    case ErrorCode::InvalidTime: return "InvalidTime";
    case ErrorCode::StepError: return "StepError";
    case ErrorCode::UsageError: return "UsageError";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline double relu(double s) { return s > 0.0 ? s : 0.0; }
inline double relu_prime(double s) { return s > 0.0 ? 1.0 : 0.0; }

// relu(x A' + b) for a batch of row inputs.
inline Mat feature_matrix(const Mat& x, const Mat& a, const Vec& b) {
  Mat s = x * a.transpose();
  s.rowwise() += b.transpose();
  return s.cwiseMax(0.0);
}

inline bool all_finite(const Mat& m) { return m.allFinite(); }

// Child seed for sub-task k; splitmix64 keeps streams decorrelated.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t k) {
  std::uint64_t z = master + 0x9E3779B97F4A7C15ULL * (k + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline Vec gaussian_vec(Rng& rng, Eigen::Index n) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = nd(rng);
  return v;
}

inline Mat gaussian_mat(Rng& rng, Eigen::Index r, Eigen::Index c) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Mat m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = nd(rng);
  return m;
}

inline Mat uniform_mat(Rng& rng, Eigen::Index r, Eigen::Index c, double lo, double hi) {
  std::uniform_real_distribution<double> ud(lo, hi);
  Mat m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = ud(rng);
  return m;
}

// Uniform sample from the closed ball of given radius in R^n.
inline Vec sample_ball(Rng& rng, Eigen::Index n, double radius) {
  Vec v = gaussian_vec(rng, n);
  double nv = v.norm();
  while (nv == 0.0) {
    v = gaussian_vec(rng, n);
    nv = v.norm();
  }
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  double r = radius * std::pow(ud(rng), 1.0 / static_cast<double>(n));
  return v * (r / nv);
}

inline double min_pairwise_distance(const Mat& pts) {
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < pts.rows(); ++i)
    for (Eigen::Index j = i + 1; j < pts.rows(); ++j)
      best = std::min(best, (pts.row(i) - pts.row(j)).norm());
  return best;
}

namespace csv {

inline Mat read(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw Error(ErrorCode::IoError, "bad number '" + cell + "' in " + path);
      }
    }
    if (!row.empty()) rows.push_back(std::move(row));
  }
  if (rows.empty()) return Mat(0, 0);
  Mat m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows[0].size())
      throw Error(ErrorCode::IoError, "ragged row " + std::to_string(i + 1) + " in " + path);
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  }
  return m;
}

inline void write(std::ostream& out, const Mat& m) {
  out.precision(17);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out << ',';
      out << m(i, j);
    }
    out << '\n';
  }
}

inline void write(const std::string& path, const Mat& m, const std::string& header = {}) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
  if (!header.empty()) out << header << '\n';
  write(out, m);
}

}  // namespace csv
}  // namespace ncl
