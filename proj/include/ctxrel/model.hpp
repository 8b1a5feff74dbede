#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "ctxrel/features.hpp"
#include "ctxrel/numcore.hpp"

namespace ctxrel {

/// The eight compared methods. Baseline1 kinds classify the interaction
/// without context, Baseline2 kinds classify whole (subject, predicate,
/// object) combinations, the rest use context-generated classifiers.
enum class ModelKind {
  Baseline1App,
  Baseline1Spatial,
  Baseline2App,
  Baseline2Spatial,
  SpatialC,
  APC,
  APCAT,
  APCCAT,
};

inline constexpr std::array<ModelKind, 8> kAllModelKinds{
    ModelKind::Baseline1App, ModelKind::Baseline1Spatial, ModelKind::Baseline2App, ModelKind::Baseline2Spatial,
    ModelKind::SpatialC,     ModelKind::APC,              ModelKind::APCAT,        ModelKind::APCCAT};

/// Display name as used in report rows, e.g. "AP+C+CAT".
std::string_view display_name(ModelKind kind);
/// Lowercased display name, e.g. "ap+c+cat".
std::string flag_name(ModelKind kind);
/// Accepts flag names case-insensitively, with or without '+', '-', '_'
/// ("ap+c+cat", "apccat", "Baseline1-spatial").
ModelKind parse_model_kind(std::string_view text);

bool uses_context(ModelKind kind);
bool uses_appearance(ModelKind kind);
bool uses_attention(ModelKind kind);
bool is_combination_kind(ModelKind kind);

struct ModelDims {
  std::size_t predicates = 0;     // P
  std::size_t feature_dim = 0;    // d (14 for spatial kinds, channel count c for appearance kinds)
  std::size_t code_dim = 20;      // m
  std::size_t embedding_dim = 0;  // e
  std::size_t combos = 0;         // K, Baseline2 kinds only
  double attention_eps = 1e-8;
};

enum class TensorId : std::uint8_t {
  ClassifierBase,      // w̄_p, P x d
  ClassifierGen,       // V_p, P x d x m
  Projection,          // Q, m x 2e
  AttentionWeight,     // w_att, c
  AttentionBias,       // b: 1 (shared head) or P (per-predicate heads)
  AttentionBase,       // w̄ᵃ_p, P x c
  AttentionGen,        // Vᵃ_p, P x c x m
  InteractionWeights,  // Baseline1, P x d
  CombinationWeights,  // Baseline2, K x d
};
inline constexpr std::size_t kTensorIdCount = 9;

std::string_view tensor_name(TensorId id);

struct Tensor {
  TensorId id{};
  std::vector<std::size_t> shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool backbone = false;

  std::size_t size() const { return value.size(); }
};

/// Learnable tensors of one model kind, each paired with a gradient buffer.
/// Only the tensors the kind needs are allocated, in a fixed declared order.
class ModelParams {
 public:
  ModelParams() = default;
  ModelParams(ModelKind kind, const ModelDims& dims);

  bool has(TensorId id) const { return slot_[static_cast<std::size_t>(id)] >= 0; }
  Tensor& at(TensorId id);
  const Tensor& at(TensorId id) const;

  std::vector<Tensor>& tensors() { return tensors_; }
  const std::vector<Tensor>& tensors() const { return tensors_; }

  std::size_t parameter_count() const;
  void zero_grad();

 private:
  std::vector<Tensor> tensors_;
  std::array<int, kTensorIdCount> slot_{};
};

/// Closed-form parameter count for a kind, independent of allocation.
std::size_t expected_parameter_count(ModelKind kind, const ModelDims& dims);

/// Triplet classes of the combination baseline, built from training data.
struct ComboTable {
  struct Combo {
    std::string subject;
    std::size_t predicate = 0;
    std::string object;
    friend bool operator==(const Combo&, const Combo&) = default;
  };
  std::vector<Combo> combos;

  std::size_t size() const { return combos.size(); }
  std::optional<std::size_t> find(std::string_view subject, std::size_t predicate, std::string_view object) const;
};

std::size_t combo_to_predicate(std::size_t combo, const ComboTable& table);

using FeatureInput = std::variant<Vec, std::shared_ptr<const FeatureMap>>;

struct PredicateScores {
  Vec scores;
  Vec probabilities;
};

PredicateScores make_scores(Vec scores);

/// Attention pooling: normalizes (a + eps) over the grid and returns
/// (1 / MN) * sum_ij abar_ij h_ij.
Vec attention_pool(const FeatureMap& fm, const Mat& attention, double eps);

class Model {
 public:
  Model() = default;
  Model(ModelKind kind, const ModelDims& dims);

  /// Gaussian(0, 0.01) for generators, projection and direct attention
  /// weight; zeros for base weights, biases and baseline classifiers.
  void initialize(std::uint64_t seed);

  ModelKind kind() const { return kind_; }
  const ModelDims& dims() const { return dims_; }
  ModelParams& params() { return params_; }
  const ModelParams& params() const { return params_; }
  std::size_t parameter_count() const { return params_.parameter_count(); }
  /// Length of the score vector: P, or K for Baseline2 kinds.
  std::size_t output_dim() const;

  ComboTable& combos() { return combos_; }
  const ComboTable& combos() const { return combos_; }
  std::vector<std::string>& predicate_names() { return predicate_names_; }
  const std::vector<std::string>& predicate_names() const { return predicate_names_; }

  /// relu(Q E) for a pair embedding E of length 2e.
  Vec context_code(std::span<const double> pair_embedding) const;
  /// w_p = w̄_p + V_p code.
  Vec context_classifier(std::size_t predicate, std::span<const double> code) const;
  /// Scores of a pooled feature; `code` is ignored by context-free kinds.
  PredicateScores score_predicates(std::span<const double> feature, std::span<const double> code) const;
  /// Raw attention a_ij; the shared head for AP+C+AT, head `predicate` for AP+C+CAT.
  Mat attention_values(const FeatureMap& fm, std::size_t predicate, std::span<const double> code) const;

  PredicateScores forward(const FeatureInput& input, std::span<const double> pair_embedding = {}) const;
  /// Adds d(cross-entropy)/d(theta) into the gradient buffers and returns
  /// the loss. `predicted`, when given, receives the argmax output.
  double backward(const FeatureInput& input, std::span<const double> pair_embedding, std::size_t label,
                  std::size_t* predicted = nullptr);

  /// Throws unless `input` and the pair embedding fit this kind and shape.
  void check_input(const FeatureInput& input, std::span<const double> pair_embedding) const;

 private:
  struct Trace;
  Trace run(const FeatureInput& input, std::span<const double> pair_embedding) const;

  ModelKind kind_ = ModelKind::SpatialC;
  ModelDims dims_;
  ModelParams params_;
  ComboTable combos_;
  std::vector<std::string> predicate_names_;
};

}  // namespace ctxrel
