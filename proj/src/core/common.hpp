#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mppm {

using Vec = std::vector<double>;

enum class ErrorCode {
  ok = 0,
  config = 1,
  io = 2,
  dimension = 3,
  degenerate_gradient = 4,
  score_underflow = 5,
  numerics = 6,
  state = 7,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error(ErrorCode::config, msg) {}
};
struct IoError : Error {
  explicit IoError(const std::string& msg) : Error(ErrorCode::io, msg) {}
};
struct DimensionError : Error {
  explicit DimensionError(const std::string& msg) : Error(ErrorCode::dimension, msg) {}
};
struct DegenerateGradient : Error {
  explicit DegenerateGradient(const std::string& msg) : Error(ErrorCode::degenerate_gradient, msg) {}
};
struct ScoreUnderflow : Error {
  explicit ScoreUnderflow(const std::string& msg) : Error(ErrorCode::score_underflow, msg) {}
};
struct NumericsError : Error {
  explicit NumericsError(const std::string& msg) : Error(ErrorCode::numerics, msg) {}
};
struct StateError : Error {
  explicit StateError(const std::string& msg) : Error(ErrorCode::state, msg) {}
};

// Dense row-major matrix. Rows are samples unless stated otherwise.
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {}

  double* row(int i) { return data.data() + static_cast<size_t>(i) * cols; }
  const double* row(int i) const { return data.data() + static_cast<size_t>(i) * cols; }
  std::span<double> row_span(int i) { return {row(i), static_cast<size_t>(cols)}; }
  std::span<const double> row_span(int i) const { return {row(i), static_cast<size_t>(cols)}; }
  double& at(int i, int j) { return data[static_cast<size_t>(i) * cols + j]; }
  double at(int i, int j) const { return data[static_cast<size_t>(i) * cols + j]; }
  bool empty() const { return rows == 0 || cols == 0; }
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double squared_norm(std::span<const double> a) { return dot(a, a); }

inline double norm(std::span<const double> a) { return std::sqrt(squared_norm(a)); }

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  for (size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline void require(bool cond, const char* msg) {
  if (!cond) throw DimensionError(msg);
}

}  // namespace mppm
