#include "ctxrel/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace ctxrel {

namespace {

constexpr double kKinkMargin = 1e-3;

struct Instance {
  Model model;
  FeatureInput input;
  Vec pair;
  std::size_t label = 0;
};

double min_abs(std::span<const double> v) {
  double m = std::numeric_limits<double>::infinity();
  for (double x : v) m = std::min(m, std::abs(x));
  return m;
}

// Smallest distance of any ReLU pre-activation to zero.
double kink_distance(const Instance& inst) {
  const Model& model = inst.model;
  double margin = std::numeric_limits<double>::infinity();
  if (!uses_context(model.kind())) return margin;
  const ModelParams& params = model.params();
  const Tensor& q = params.at(TensorId::Projection);
  const Vec pre_code = matvec(MatView(q.value, q.shape[0], q.shape[1]), inst.pair);
  margin = min_abs(pre_code);
  if (!uses_attention(model.kind())) return margin;

  const FeatureMap& fm = *std::get<std::shared_ptr<const FeatureMap>>(inst.input);
  const Vec code = relu(pre_code);
  const std::size_t heads = model.kind() == ModelKind::APCCAT ? model.dims().predicates : 1;
  for (std::size_t p = 0; p < heads; ++p) {
    Vec weight;
    double bias = 0.0;
    if (model.kind() == ModelKind::APCAT) {
      weight = params.at(TensorId::AttentionWeight).value;
      bias = params.at(TensorId::AttentionBias).value[0];
    } else {
      const Tensor& gen = params.at(TensorId::AttentionGen);
      const std::size_t c = gen.shape[1], m = gen.shape[2];
      weight = matvec(MatView(std::span<const double>(gen.value).subspan(p * c * m, c * m), c, m), code);
      const Tensor& base = params.at(TensorId::AttentionBase);
      axpy(1.0, std::span<const double>(base.value).subspan(p * c, c), weight);
      bias = params.at(TensorId::AttentionBias).value[p];
    }
    for (std::size_t l = 0; l < fm.locations(); ++l) {
      margin = std::min(margin, std::abs(dot(weight, fm.fiber(l)) + bias));
    }
  }
  return margin;
}

Instance draw_instance(ModelKind kind, const GradCheckConfig& cfg, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> dim(1, cfg.max_dim);
  std::uniform_int_distribution<std::size_t> classes(2, std::max<std::size_t>(2, cfg.max_dim));
  std::uniform_int_distribution<std::size_t> emb(1, 3);
  std::normal_distribution<double> gauss(0.0, 1.0);

  ModelDims d;
  d.predicates = classes(rng);
  d.feature_dim = dim(rng);
  d.code_dim = dim(rng);
  d.embedding_dim = emb(rng);
  d.combos = is_combination_kind(kind) ? classes(rng) : 0;

  Instance inst{Model(kind, d), Vec{}, Vec{}, 0};
  for (Tensor& t : inst.model.params().tensors()) {
    for (double& v : t.value) v = 0.5 * gauss(rng);
  }
  if (uses_appearance(kind)) {
    const std::size_t rows = dim(rng), cols = dim(rng);
    Vec values(rows * cols * d.feature_dim);
    for (double& v : values) v = gauss(rng);
    inst.input = std::make_shared<const FeatureMap>(rows, cols, d.feature_dim, std::move(values));
  } else {
    Vec x(d.feature_dim);
    for (double& v : x) v = gauss(rng);
    inst.input = std::move(x);
  }
  if (uses_context(kind)) {
    inst.pair.resize(2 * d.embedding_dim);
    for (double& v : inst.pair) v = gauss(rng);
  }
  inst.label = std::uniform_int_distribution<std::size_t>(0, inst.model.output_dim() - 1)(rng);
  return inst;
}

}  // namespace

double gradient_error(double analytic, double numeric, double floor) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

GradCheckReport check_gradients(ModelKind kind, const GradCheckConfig& cfg) {
  std::mt19937_64 rng(cfg.seed ^ (0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(kind) + 1)));
  GradCheckReport report;
  report.kind = kind;

  for (std::size_t n = 0; n < cfg.instances; ++n) {
    Instance inst = draw_instance(kind, cfg, rng);
    for (int tries = 0; kink_distance(inst) < kKinkMargin; ++tries) {
      if (tries > 1000) throw Error("gradient check: could not draw an instance away from ReLU kinks");
      inst = draw_instance(kind, cfg, rng);
    }

    inst.model.params().zero_grad();
    inst.model.backward(inst.input, inst.pair, inst.label);

    Model probe = inst.model;
    const std::size_t count = inst.model.params().tensors().size();
    for (std::size_t ti = 0; ti < count; ++ti) {
      const Tensor& tensor = inst.model.params().tensors()[ti];
      auto loss_at = [&](std::span<const double> x) {
        auto& target = probe.params().tensors()[ti].value;
        std::copy(x.begin(), x.end(), target.begin());
        return cross_entropy_with_grad(probe.forward(inst.input, inst.pair).scores, inst.label).loss;
      };
      const Vec numeric = finite_diff_grad(loss_at, tensor.value, cfg.step);
      probe.params().tensors()[ti].value = tensor.value;

      for (std::size_t i = 0; i < numeric.size(); ++i) {
        const double err = gradient_error(tensor.grad[i], numeric[i], cfg.magnitude_floor);
        ++report.coordinates;
        if (err > report.worst.error || (report.coordinates == 1)) {
          report.worst = {n, tensor.id, i, tensor.grad[i], numeric[i], err};
        }
      }
    }
    ++report.instances;
  }
  report.passed = report.worst.error < cfg.tolerance;
  return report;
}

}  // namespace ctxrel
