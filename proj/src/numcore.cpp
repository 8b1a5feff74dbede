#include "ctxrel/numcore.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace ctxrel {

namespace {

std::string shape_of(std::size_t rows, std::size_t cols) {
  std::ostringstream os;
  os << rows << "x" << cols;
  return os.str();
}

}  // namespace

Mat::Mat(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

Mat::Mat(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
  if (values_.size() != rows * cols) {
    throw ShapeError("matrix " + shape_of(rows, cols) + " given " + std::to_string(values_.size()) +
                     " values");
  }
}

Mat Mat::identity(std::size_t n) {
  Mat m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

std::string Mat::shape_string() const { return shape_of(rows_, cols_); }

Vec matvec(MatView a, std::span<const double> x) {
  if (a.cols != x.size()) {
    throw ShapeError("matvec: matrix " + shape_of(a.rows, a.cols) + " times vector of length " +
                     std::to_string(x.size()));
  }
  Vec out(a.rows, 0.0);
  for (std::size_t r = 0; r < a.rows; ++r) {
    const double* row = a.values.data() + r * a.cols;
    double acc = 0.0;
    for (std::size_t c = 0; c < a.cols; ++c) acc += row[c] * x[c];
    out[r] = acc;
  }
  return out;
}

Vec matvec_transposed(MatView a, std::span<const double> x) {
  if (a.rows != x.size()) {
    throw ShapeError("matvec_transposed: matrix " + shape_of(a.rows, a.cols) +
                     " (transposed) times vector of length " + std::to_string(x.size()));
  }
  Vec out(a.cols, 0.0);
  for (std::size_t r = 0; r < a.rows; ++r) {
    const double* row = a.values.data() + r * a.cols;
    for (std::size_t c = 0; c < a.cols; ++c) out[c] += row[c] * x[r];
  }
  return out;
}

void add_outer(std::span<double> out, double alpha, std::span<const double> u, std::span<const double> v) {
  if (out.size() != u.size() * v.size()) {
    throw ShapeError("add_outer: block of " + std::to_string(out.size()) + " values vs outer product " +
                     shape_of(u.size(), v.size()));
  }
  for (std::size_t r = 0; r < u.size(); ++r) {
    const double s = alpha * u[r];
    double* row = out.data() + r * v.size();
    for (std::size_t c = 0; c < v.size(); ++c) row[c] += s * v[c];
  }
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) {
    throw ShapeError("axpy: length " + std::to_string(x.size()) + " vs " + std::to_string(y.size()));
  }
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ShapeError("dot: length " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double l2_norm(std::span<const double> x) { return std::sqrt(dot(x, x)); }

double frobenius_norm(std::span<const double> values) { return l2_norm(values); }

Vec concat(std::span<const double> a, std::span<const double> b) {
  Vec out;
  out.reserve(a.size() + b.size());
  out.insert(out.end(), a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

Vec relu(std::span<const double> x) {
  Vec out(x.size());
  std::transform(x.begin(), x.end(), out.begin(), [](double v) { return v > 0.0 ? v : 0.0; });
  return out;
}

double relu_grad(double x) { return x > 0.0 ? 1.0 : 0.0; }

Vec softmax(std::span<const double> x) {
  if (x.empty()) throw ShapeError("softmax: empty input");
  const double peak = *std::max_element(x.begin(), x.end());
  Vec out(x.size());
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp(x[i] - peak);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

std::size_t argmax(std::span<const double> x) {
  if (x.empty()) throw ShapeError("argmax: empty input");
  return static_cast<std::size_t>(std::distance(x.begin(), std::max_element(x.begin(), x.end())));
}

LossAndGrad cross_entropy_with_grad(std::span<const double> scores, std::size_t label) {
  if (label >= scores.size()) {
    throw Error("cross_entropy: label " + std::to_string(label) + " out of range for " +
                std::to_string(scores.size()) + " classes");
  }
  // log-sum-exp with log1p keeps tiny losses accurate (1 - p underflows otherwise).
  const std::size_t top = argmax(scores);
  const double peak = scores[top];
  double rest = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (i != top) rest += std::exp(scores[i] - peak);
  }
  const double log_rest = std::log1p(rest);
  const double log_z = peak + log_rest;

  LossAndGrad out;
  out.loss = (peak - scores[label]) + log_rest;
  out.grad.resize(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) out.grad[i] = std::exp(scores[i] - log_z);
  out.grad[label] -= 1.0;
  return out;
}

Vec finite_diff_grad(const ScalarFn& f, std::span<const double> x, double h) {
  if (!(h > 0.0)) throw Error("finite_diff_grad: step must be positive");
  Vec probe(x.begin(), x.end());
  Vec grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + h;
    const double up = f(probe);
    probe[i] = saved - h;
    const double down = f(probe);
    probe[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw Error("finite_diff_grad: non-finite function value at coordinate " + std::to_string(i));
    }
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

bool all_finite(std::span<const double> x) {
  return std::all_of(x.begin(), x.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace ctxrel
