#pragma once

#include <cstdint>
#include <vector>

#include "ctxrel/model.hpp"

namespace ctxrel {

struct GradCheckConfig {
  std::size_t instances = 20;
  std::uint64_t seed = 7;
  std::size_t max_dim = 6;  // bound on P, d, m, c, M, N (and K)
  double step = 1e-6;
  double tolerance = 1e-5;
  // Below this magnitude the error is measured absolutely.
  double magnitude_floor = 1e-3;
};

struct GradCheckWorst {
  std::size_t instance = 0;
  TensorId tensor{};
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double error = 0.0;
};

struct GradCheckReport {
  ModelKind kind{};
  std::size_t instances = 0;
  std::size_t coordinates = 0;
  GradCheckWorst worst;
  bool passed = true;
};

/// |a - n| / max(|a|, |n|, floor).
double gradient_error(double analytic, double numeric, double floor);

/// Compares Model::backward against central differences of the
/// cross-entropy loss on seeded random instances of `kind`. Instances whose
/// ReLU pre-activations sit within 1e-3 of the kink are redrawn.
GradCheckReport check_gradients(ModelKind kind, const GradCheckConfig& config);

}  // namespace ctxrel
