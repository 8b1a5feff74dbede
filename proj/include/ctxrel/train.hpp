#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "ctxrel/data.hpp"
#include "ctxrel/embed.hpp"
#include "ctxrel/model.hpp"

namespace ctxrel {

struct TrainConfig {
  double lr = 1e-3;            // newly added layers
  double backbone_lr = 1e-4;   // only used by tensors flagged as backbone
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch_size = 32;
  std::size_t epochs = 100;
  std::uint64_t seed = 1;

  void validate() const;
};

/// First/second moment per tensor plus the step counter.
struct AdamState {
  std::vector<Vec> first;
  std::vector<Vec> second;
  std::uint64_t step = 0;

  AdamState() = default;
  explicit AdamState(const ModelParams& params);
};

/// One bias-corrected Adam update from the gradients held in `params`.
void adam_step(ModelParams& params, AdamState& state, const TrainConfig& cfg);

struct Sample {
  FeatureInput input;
  Vec pair_embedding;      // empty for context-free kinds
  std::size_t label = 0;   // index into the model's output (combo for Baseline2)
  std::size_t predicate = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double train_accuracy = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  /// Tab-separated: header line then one row per epoch.
  void write(std::ostream& out) const;
};

/// Shuffled mini-batch training with batch-averaged gradients. The last
/// partial batch is kept.
TrainLog train(Model& model, std::span<const Sample> samples, const TrainConfig& cfg);

double mean_loss(const Model& model, std::span<const Sample> samples);
/// Predicate predicted for a sample; Baseline2 combos map to their predicate.
std::size_t predict_predicate(const Model& model, const Sample& sample);
double predicate_accuracy(const Model& model, std::span<const Sample> samples);

using FeatureMapResolver = std::function<std::shared_ptr<const FeatureMap>(const std::string&)>;

/// Loads maps relative to `base_dir`, caching each file after first use.
FeatureMapResolver directory_resolver(std::string base_dir);

/// Distinct (subject, predicate, object) classes of a training set, sorted.
ComboTable build_combo_table(const Dataset& train);

struct ModelOptions {
  std::size_t code_dim = 20;
  double attention_eps = 1e-8;
  std::uint64_t seed = 1;
};

/// Sizes a model for `kind` from the training data and initializes it.
Model make_model(ModelKind kind, const Dataset& train, const EmbeddingStore& store,
                 const FeatureMapResolver& resolver, const ModelOptions& options);

/// Turns every relationship into a training sample for `model`. For
/// Baseline2 kinds, relationships whose triplet is not a known combo are
/// skipped.
std::vector<Sample> make_samples(const Model& model, const Dataset& dataset, const EmbeddingStore& store,
                                 const FeatureMapResolver& resolver,
                                 UnknownWordPolicy policy = UnknownWordPolicy::Fallback);

}  // namespace ctxrel
