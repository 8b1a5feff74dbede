#include "ctxrel/model.hpp"

#include <algorithm>
#include <cctype>
#include <random>

namespace ctxrel {

namespace {

std::string compact(std::string_view text) {
  std::string out;
  for (char ch : text) {
    if (ch == '+' || ch == '-' || ch == '_' || ch == ' ') continue;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  }
  return out;
}

std::size_t product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t s : shape) n *= s;
  return n;
}

std::vector<TensorId> tensors_for(ModelKind kind) {
  switch (kind) {
    case ModelKind::Baseline1App:
    case ModelKind::Baseline1Spatial:
      return {TensorId::InteractionWeights};
    case ModelKind::Baseline2App:
    case ModelKind::Baseline2Spatial:
      return {TensorId::CombinationWeights};
    case ModelKind::SpatialC:
    case ModelKind::APC:
      return {TensorId::ClassifierBase, TensorId::ClassifierGen, TensorId::Projection};
    case ModelKind::APCAT:
      return {TensorId::ClassifierBase, TensorId::ClassifierGen, TensorId::Projection, TensorId::AttentionWeight,
              TensorId::AttentionBias};
    case ModelKind::APCCAT:
      return {TensorId::ClassifierBase, TensorId::ClassifierGen, TensorId::Projection,
              TensorId::AttentionBase,  TensorId::AttentionGen,  TensorId::AttentionBias};
  }
  return {};
}

std::vector<std::size_t> shape_for(TensorId id, ModelKind kind, const ModelDims& d) {
  switch (id) {
    case TensorId::ClassifierBase: return {d.predicates, d.feature_dim};
    case TensorId::ClassifierGen: return {d.predicates, d.feature_dim, d.code_dim};
    case TensorId::Projection: return {d.code_dim, 2 * d.embedding_dim};
    case TensorId::AttentionWeight: return {d.feature_dim};
    case TensorId::AttentionBias: return {kind == ModelKind::APCCAT ? d.predicates : 1};
    case TensorId::AttentionBase: return {d.predicates, d.feature_dim};
    case TensorId::AttentionGen: return {d.predicates, d.feature_dim, d.code_dim};
    case TensorId::InteractionWeights: return {d.predicates, d.feature_dim};
    case TensorId::CombinationWeights: return {d.combos, d.feature_dim};
  }
  return {};
}

void validate_dims(ModelKind kind, const ModelDims& d) {
  if (d.predicates == 0) throw ShapeError("model needs at least one predicate");
  if (d.feature_dim == 0) throw ShapeError("feature dimension must be positive");
  if (uses_context(kind) && (d.code_dim == 0 || d.embedding_dim == 0)) {
    throw ShapeError("context-aware kinds need positive code and embedding dimensions");
  }
  if (is_combination_kind(kind) && d.combos == 0) throw ShapeError("combination baseline needs at least one combo");
  if (!(d.attention_eps > 0.0)) throw ShapeError("attention epsilon must be positive");
}

// Slice of a P x rows x cols tensor.
MatView block(const Tensor& t, std::size_t p) {
  const std::size_t rows = t.shape[1];
  const std::size_t cols = t.shape[2];
  return {std::span<const double>(t.value).subspan(p * rows * cols, rows * cols), rows, cols};
}

std::span<const double> row_of(const Tensor& t, std::size_t p) {
  const std::size_t cols = t.shape[1];
  return std::span<const double>(t.value).subspan(p * cols, cols);
}

std::span<double> grad_row(Tensor& t, std::size_t p) {
  const std::size_t cols = t.shape.back();
  return std::span<double>(t.grad).subspan(p * cols, cols);
}

std::span<double> grad_block(Tensor& t, std::size_t p) {
  const std::size_t n = t.shape[1] * t.shape[2];
  return std::span<double>(t.grad).subspan(p * n, n);
}

struct Head {
  Vec weight;      // effective attention weight
  double bias = 0.0;
  Vec pre;         // w . h_l + b per location
  Vec normalized;  // abar per location
  double total = 0.0;
  Vec pooled;
};

Head run_head(const FeatureMap& fm, Vec weight, double bias, double eps) {
  Head h;
  h.weight = std::move(weight);
  h.bias = bias;
  const std::size_t n = fm.locations();
  h.pre.resize(n);
  h.normalized.resize(n);
  for (std::size_t l = 0; l < n; ++l) {
    h.pre[l] = dot(h.weight, fm.fiber(l)) + bias;
    h.normalized[l] = std::max(h.pre[l], 0.0) + eps;
    h.total += h.normalized[l];
  }
  for (double& v : h.normalized) v /= h.total;
  h.pooled.assign(fm.channels(), 0.0);
  for (std::size_t l = 0; l < n; ++l) axpy(h.normalized[l], fm.fiber(l), h.pooled);
  const double scale = 1.0 / static_cast<double>(n);
  for (double& v : h.pooled) v *= scale;
  return h;
}

// Returns d(loss)/d(effective weight) and d(loss)/d(bias) for one head given
// d(loss)/d(pooled).
std::pair<Vec, double> backprop_head(const FeatureMap& fm, const Head& h, std::span<const double> d_pooled) {
  const std::size_t n = fm.locations();
  const double scale = 1.0 / static_cast<double>(n);
  Vec d_norm(n);
  double weighted = 0.0;
  for (std::size_t l = 0; l < n; ++l) {
    d_norm[l] = scale * dot(d_pooled, fm.fiber(l));
    weighted += d_norm[l] * h.normalized[l];
  }
  Vec d_weight(fm.channels(), 0.0);
  double d_bias = 0.0;
  for (std::size_t l = 0; l < n; ++l) {
    const double d_pre = (d_norm[l] - weighted) / h.total * relu_grad(h.pre[l]);
    if (d_pre == 0.0) continue;
    axpy(d_pre, fm.fiber(l), d_weight);
    d_bias += d_pre;
  }
  return {std::move(d_weight), d_bias};
}

}  // namespace

std::string_view display_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::Baseline1App: return "Baseline1-app";
    case ModelKind::Baseline1Spatial: return "Baseline1-spatial";
    case ModelKind::Baseline2App: return "Baseline2-app";
    case ModelKind::Baseline2Spatial: return "Baseline2-spatial";
    case ModelKind::SpatialC: return "Spatial+C";
    case ModelKind::APC: return "AP+C";
    case ModelKind::APCAT: return "AP+C+AT";
    case ModelKind::APCCAT: return "AP+C+CAT";
  }
  return "?";
}

std::string flag_name(ModelKind kind) {
  std::string s(display_name(kind));
  for (char& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return s;
}

ModelKind parse_model_kind(std::string_view text) {
  const std::string key = compact(text);
  for (ModelKind kind : kAllModelKinds) {
    if (compact(display_name(kind)) == key) return kind;
  }
  throw Error("unknown model kind '" + std::string(text) + "'");
}

bool uses_context(ModelKind kind) {
  return kind == ModelKind::SpatialC || kind == ModelKind::APC || kind == ModelKind::APCAT ||
         kind == ModelKind::APCCAT;
}

bool uses_appearance(ModelKind kind) {
  return kind == ModelKind::Baseline1App || kind == ModelKind::Baseline2App || kind == ModelKind::APC ||
         kind == ModelKind::APCAT || kind == ModelKind::APCCAT;
}

bool uses_attention(ModelKind kind) { return kind == ModelKind::APCAT || kind == ModelKind::APCCAT; }

bool is_combination_kind(ModelKind kind) {
  return kind == ModelKind::Baseline2App || kind == ModelKind::Baseline2Spatial;
}

std::string_view tensor_name(TensorId id) {
  switch (id) {
    case TensorId::ClassifierBase: return "classifier_base";
    case TensorId::ClassifierGen: return "classifier_gen";
    case TensorId::Projection: return "projection";
    case TensorId::AttentionWeight: return "attention_weight";
    case TensorId::AttentionBias: return "attention_bias";
    case TensorId::AttentionBase: return "attention_base";
    case TensorId::AttentionGen: return "attention_gen";
    case TensorId::InteractionWeights: return "interaction_weights";
    case TensorId::CombinationWeights: return "combination_weights";
  }
  return "?";
}

ModelParams::ModelParams(ModelKind kind, const ModelDims& dims) {
  validate_dims(kind, dims);
  slot_.fill(-1);
  for (TensorId id : tensors_for(kind)) {
    Tensor t;
    t.id = id;
    t.shape = shape_for(id, kind, dims);
    t.value.assign(product(t.shape), 0.0);
    t.grad.assign(t.value.size(), 0.0);
    slot_[static_cast<std::size_t>(id)] = static_cast<int>(tensors_.size());
    tensors_.push_back(std::move(t));
  }
}

Tensor& ModelParams::at(TensorId id) {
  const int s = slot_[static_cast<std::size_t>(id)];
  if (s < 0) throw Error("tensor '" + std::string(tensor_name(id)) + "' is not active for this model");
  return tensors_[static_cast<std::size_t>(s)];
}

const Tensor& ModelParams::at(TensorId id) const { return const_cast<ModelParams*>(this)->at(id); }

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor& t : tensors_) n += t.size();
  return n;
}

void ModelParams::zero_grad() {
  for (Tensor& t : tensors_) std::fill(t.grad.begin(), t.grad.end(), 0.0);
}

std::size_t expected_parameter_count(ModelKind kind, const ModelDims& d) {
  const std::size_t P = d.predicates, D = d.feature_dim, m = d.code_dim, e = d.embedding_dim;
  const std::size_t context = P * D + P * D * m + m * 2 * e;
  switch (kind) {
    case ModelKind::Baseline1App:
    case ModelKind::Baseline1Spatial: return P * D;
    case ModelKind::Baseline2App:
    case ModelKind::Baseline2Spatial: return d.combos * D;
    case ModelKind::SpatialC:
    case ModelKind::APC: return context;
    case ModelKind::APCAT: return context + D + 1;
    case ModelKind::APCCAT: return context + P * D + P * D * m + P;
  }
  return 0;
}

std::optional<std::size_t> ComboTable::find(std::string_view subject, std::size_t predicate,
                                            std::string_view object) const {
  for (std::size_t k = 0; k < combos.size(); ++k) {
    const Combo& c = combos[k];
    if (c.predicate == predicate && c.subject == subject && c.object == object) return k;
  }
  return std::nullopt;
}

std::size_t combo_to_predicate(std::size_t combo, const ComboTable& table) {
  if (combo >= table.size()) {
    throw Error("unknown combo index " + std::to_string(combo) + " (table has " + std::to_string(table.size()) +
                ")");
  }
  return table.combos[combo].predicate;
}

PredicateScores make_scores(Vec scores) {
  PredicateScores out;
  out.probabilities = softmax(scores);
  out.scores = std::move(scores);
  return out;
}

Vec attention_pool(const FeatureMap& fm, const Mat& attention, double eps) {
  if (attention.rows() != fm.rows() || attention.cols() != fm.cols()) {
    throw ShapeError("attention grid " + attention.shape_string() + " does not match feature map " +
                     std::to_string(fm.rows()) + "x" + std::to_string(fm.cols()));
  }
  if (!(eps > 0.0)) throw Error("attention epsilon must be positive");
  const std::span<const double> a = attention.values();
  double total = 0.0;
  for (double v : a) {
    if (v < 0.0) throw Error("attention values must be non-negative");
    total += v + eps;
  }
  Vec pooled(fm.channels(), 0.0);
  for (std::size_t l = 0; l < fm.locations(); ++l) axpy((a[l] + eps) / total, fm.fiber(l), pooled);
  const double scale = 1.0 / static_cast<double>(fm.locations());
  for (double& v : pooled) v *= scale;
  return pooled;
}

struct Model::Trace {
  Vec pair;
  Vec pre_code;
  Vec code;
  Vec feature;               // shared pooled or spatial feature
  std::vector<Head> heads;   // one shared head (AP+C+AT) or P heads (AP+C+CAT)
  std::vector<Vec> classifiers;
  Vec scores;
};

Model::Model(ModelKind kind, const ModelDims& dims) : kind_(kind), dims_(dims), params_(kind, dims) {}

void Model::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 0.01);
  for (Tensor& t : params_.tensors()) {
    const bool random = t.id == TensorId::ClassifierGen || t.id == TensorId::AttentionGen ||
                        t.id == TensorId::Projection || t.id == TensorId::AttentionWeight;
    for (double& v : t.value) v = random ? gauss(rng) : 0.0;
    std::fill(t.grad.begin(), t.grad.end(), 0.0);
  }
}

std::size_t Model::output_dim() const { return is_combination_kind(kind_) ? dims_.combos : dims_.predicates; }

Vec Model::context_code(std::span<const double> pair_embedding) const {
  if (!uses_context(kind_)) throw Error(std::string(display_name(kind_)) + " does not use context");
  const Tensor& q = params_.at(TensorId::Projection);
  return relu(matvec(MatView(q.value, q.shape[0], q.shape[1]), pair_embedding));
}

Vec Model::context_classifier(std::size_t predicate, std::span<const double> code) const {
  if (predicate >= dims_.predicates) throw Error("predicate index " + std::to_string(predicate) + " out of range");
  if (code.size() != dims_.code_dim) throw ShapeError("context code has wrong length");
  const Tensor& base = params_.at(TensorId::ClassifierBase);
  Vec w = matvec(block(params_.at(TensorId::ClassifierGen), predicate), code);
  axpy(1.0, row_of(base, predicate), w);
  return w;
}

PredicateScores Model::score_predicates(std::span<const double> feature, std::span<const double> code) const {
  if (feature.size() != dims_.feature_dim) {
    throw ShapeError("feature of length " + std::to_string(feature.size()) + ", model expects " +
                     std::to_string(dims_.feature_dim));
  }
  if (is_combination_kind(kind_)) {
    const Tensor& w = params_.at(TensorId::CombinationWeights);
    return make_scores(matvec(MatView(w.value, w.shape[0], w.shape[1]), feature));
  }
  if (!uses_context(kind_)) {
    const Tensor& w = params_.at(TensorId::InteractionWeights);
    return make_scores(matvec(MatView(w.value, w.shape[0], w.shape[1]), feature));
  }
  if (code.size() != dims_.code_dim) {
    throw Error(std::string(display_name(kind_)) + " needs a context code of length " +
                std::to_string(dims_.code_dim));
  }
  Vec scores(dims_.predicates);
  for (std::size_t p = 0; p < dims_.predicates; ++p) scores[p] = dot(context_classifier(p, code), feature);
  return make_scores(std::move(scores));
}

Mat Model::attention_values(const FeatureMap& fm, std::size_t predicate, std::span<const double> code) const {
  if (!uses_attention(kind_)) throw Error(std::string(display_name(kind_)) + " has no attention head");
  if (fm.channels() != dims_.feature_dim) throw ShapeError("feature map channels do not match model");
  Vec weight;
  double bias = 0.0;
  if (kind_ == ModelKind::APCAT) {
    weight = params_.at(TensorId::AttentionWeight).value;
    bias = params_.at(TensorId::AttentionBias).value[0];
  } else {
    if (predicate >= dims_.predicates) throw Error("predicate index out of range");
    if (code.size() != dims_.code_dim) throw Error("AP+C+CAT attention needs a context code");
    weight = matvec(block(params_.at(TensorId::AttentionGen), predicate), code);
    axpy(1.0, row_of(params_.at(TensorId::AttentionBase), predicate), weight);
    bias = params_.at(TensorId::AttentionBias).value[predicate];
  }
  Mat a(fm.rows(), fm.cols());
  for (std::size_t l = 0; l < fm.locations(); ++l) a.values()[l] = std::max(dot(weight, fm.fiber(l)) + bias, 0.0);
  return a;
}

void Model::check_input(const FeatureInput& input, std::span<const double> pair_embedding) const {
  if (uses_appearance(kind_)) {
    const auto* fm = std::get_if<std::shared_ptr<const FeatureMap>>(&input);
    if (fm == nullptr || !*fm) {
      throw Error(std::string(display_name(kind_)) + " expects a feature map input");
    }
    if ((*fm)->channels() != dims_.feature_dim) {
      throw ShapeError("feature map has " + std::to_string((*fm)->channels()) + " channels, model expects " +
                       std::to_string(dims_.feature_dim));
    }
  } else {
    const auto* v = std::get_if<Vec>(&input);
    if (v == nullptr) throw Error(std::string(display_name(kind_)) + " expects a spatial feature vector");
    if (v->size() != dims_.feature_dim) {
      throw ShapeError("spatial feature of length " + std::to_string(v->size()) + ", model expects " +
                       std::to_string(dims_.feature_dim));
    }
  }
  if (uses_context(kind_) && pair_embedding.size() != 2 * dims_.embedding_dim) {
    throw Error(std::string(display_name(kind_)) + " needs a pair embedding of length " +
                std::to_string(2 * dims_.embedding_dim) + ", got " + std::to_string(pair_embedding.size()));
  }
}

Model::Trace Model::run(const FeatureInput& input, std::span<const double> pair_embedding) const {
  check_input(input, pair_embedding);
  Trace tr;
  if (uses_context(kind_)) {
    tr.pair.assign(pair_embedding.begin(), pair_embedding.end());
    const Tensor& q = params_.at(TensorId::Projection);
    tr.pre_code = matvec(MatView(q.value, q.shape[0], q.shape[1]), tr.pair);
    tr.code = relu(tr.pre_code);
  }

  const FeatureMap* fm = nullptr;
  if (uses_appearance(kind_)) {
    fm = std::get<std::shared_ptr<const FeatureMap>>(input).get();
  } else {
    tr.feature = std::get<Vec>(input);
  }

  switch (kind_) {
    case ModelKind::Baseline1App:
    case ModelKind::Baseline2App:
    case ModelKind::APC:
      tr.feature = mean_pool(*fm);
      break;
    case ModelKind::APCAT:
      tr.heads.push_back(run_head(*fm, params_.at(TensorId::AttentionWeight).value,
                                  params_.at(TensorId::AttentionBias).value[0], dims_.attention_eps));
      tr.feature = tr.heads.front().pooled;
      break;
    case ModelKind::APCCAT:
      for (std::size_t p = 0; p < dims_.predicates; ++p) {
        Vec weight = matvec(block(params_.at(TensorId::AttentionGen), p), tr.code);
        axpy(1.0, row_of(params_.at(TensorId::AttentionBase), p), weight);
        tr.heads.push_back(run_head(*fm, std::move(weight), params_.at(TensorId::AttentionBias).value[p],
                                    dims_.attention_eps));
      }
      break;
    default:
      break;
  }

  if (!uses_context(kind_)) {
    tr.scores = score_predicates(tr.feature, {}).scores;
    return tr;
  }
  tr.scores.resize(dims_.predicates);
  for (std::size_t p = 0; p < dims_.predicates; ++p) {
    tr.classifiers.push_back(context_classifier(p, tr.code));
    const Vec& feature = kind_ == ModelKind::APCCAT ? tr.heads[p].pooled : tr.feature;
    tr.scores[p] = dot(tr.classifiers[p], feature);
  }
  return tr;
}

PredicateScores Model::forward(const FeatureInput& input, std::span<const double> pair_embedding) const {
  return make_scores(run(input, pair_embedding).scores);
}

double Model::backward(const FeatureInput& input, std::span<const double> pair_embedding, std::size_t label,
                       std::size_t* predicted) {
  const Trace tr = run(input, pair_embedding);
  if (predicted != nullptr) *predicted = argmax(tr.scores);
  const LossAndGrad ce = cross_entropy_with_grad(tr.scores, label);
  const Vec& g = ce.grad;

  if (!uses_context(kind_)) {
    Tensor& w = params_.at(is_combination_kind(kind_) ? TensorId::CombinationWeights : TensorId::InteractionWeights);
    add_outer(w.grad, 1.0, g, tr.feature);
    return ce.loss;
  }

  Tensor& base = params_.at(TensorId::ClassifierBase);
  Tensor& gen = params_.at(TensorId::ClassifierGen);
  Vec d_code(dims_.code_dim, 0.0);
  Vec d_shared(dims_.feature_dim, 0.0);

  for (std::size_t p = 0; p < dims_.predicates; ++p) {
    const Vec& feature = kind_ == ModelKind::APCCAT ? tr.heads[p].pooled : tr.feature;
    axpy(g[p], feature, grad_row(base, p));
    add_outer(grad_block(gen, p), g[p], feature, tr.code);
    axpy(g[p], matvec_transposed(block(gen, p), feature), d_code);

    if (kind_ == ModelKind::APCAT) {
      axpy(g[p], tr.classifiers[p], d_shared);
    } else if (kind_ == ModelKind::APCCAT) {
      Vec d_pooled = tr.classifiers[p];
      for (double& v : d_pooled) v *= g[p];
      const FeatureMap& fm = *std::get<std::shared_ptr<const FeatureMap>>(input);
      auto [d_weight, d_bias] = backprop_head(fm, tr.heads[p], d_pooled);
      Tensor& att_gen = params_.at(TensorId::AttentionGen);
      axpy(1.0, d_weight, grad_row(params_.at(TensorId::AttentionBase), p));
      add_outer(grad_block(att_gen, p), 1.0, d_weight, tr.code);
      axpy(1.0, matvec_transposed(block(att_gen, p), d_weight), d_code);
      params_.at(TensorId::AttentionBias).grad[p] += d_bias;
    }
  }

  if (kind_ == ModelKind::APCAT) {
    const FeatureMap& fm = *std::get<std::shared_ptr<const FeatureMap>>(input);
    auto [d_weight, d_bias] = backprop_head(fm, tr.heads.front(), d_shared);
    axpy(1.0, d_weight, params_.at(TensorId::AttentionWeight).grad);
    params_.at(TensorId::AttentionBias).grad[0] += d_bias;
  }

  // Q receives the classifier and attention paths through the shared code.
  for (std::size_t i = 0; i < d_code.size(); ++i) d_code[i] *= relu_grad(tr.pre_code[i]);
  add_outer(params_.at(TensorId::Projection).grad, 1.0, d_code, tr.pair);
  return ce.loss;
}

}  // namespace ctxrel
