#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ctxrel {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

using Vec = std::vector<double>;

/// Dense row-major matrix of doubles.
class Mat {
 public:
  Mat() = default;
  Mat(std::size_t rows, std::size_t cols, double fill = 0.0);
  Mat(std::size_t rows, std::size_t cols, std::vector<double> values);

  static Mat identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {values_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {values_.data() + r * cols_, cols_}; }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  std::string shape_string() const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

// Read-only row-major matrix view over externally owned storage, used for
// the slices of parameter tensors.
struct MatView {
  std::span<const double> values;
  std::size_t rows = 0;
  std::size_t cols = 0;

  MatView() = default;
  MatView(const Mat& m) : values(m.values()), rows(m.rows()), cols(m.cols()) {}
  MatView(std::span<const double> v, std::size_t r, std::size_t c) : values(v), rows(r), cols(c) {}

  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

Vec matvec(MatView a, std::span<const double> x);
/// Computes A^T x.
Vec matvec_transposed(MatView a, std::span<const double> x);
/// out += alpha * u v^T, with out viewed as a rows x cols row-major block.
void add_outer(std::span<double> out, double alpha, std::span<const double> u, std::span<const double> v);
void axpy(double alpha, std::span<const double> x, std::span<double> y);

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> x);
/// Frobenius norm of any flat buffer.
double frobenius_norm(std::span<const double> values);
Vec concat(std::span<const double> a, std::span<const double> b);

Vec relu(std::span<const double> x);
/// Derivative of ReLU; 0 at exactly 0.
double relu_grad(double x);

Vec softmax(std::span<const double> x);
std::size_t argmax(std::span<const double> x);

struct LossAndGrad {
  double loss = 0.0;
  Vec grad;
};

LossAndGrad cross_entropy_with_grad(std::span<const double> scores, std::size_t label);

using ScalarFn = std::function<double(std::span<const double>)>;

/// Central-difference gradient of `f` at `x`.
Vec finite_diff_grad(const ScalarFn& f, std::span<const double> x, double h = 1e-5);

bool all_finite(std::span<const double> x);

}  // namespace ctxrel
