#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <set>
#include <string>

#include "ctxrel/data.hpp"
#include "ctxrel/embed.hpp"
#include "ctxrel/features.hpp"

namespace ctxrel {

enum class PlantedRule {
  // predicate = group(subject) XOR [subject lies right of object]; with two
  // predicates no context-blind classifier beats chance.
  ContextXor,
  // predicate = argmax_p (a_p + B_p E(O1, O2)) . z for a latent appearance
  // vector z carried by the feature map; smooth in embedding space.
  ContextLinear,
};

std::string_view rule_name(PlantedRule rule);
PlantedRule parse_rule(std::string_view text);

struct SynthConfig {
  std::size_t object_classes = 8;
  std::size_t predicates = 2;
  std::size_t train_images = 2000;  // one relationship per image
  std::size_t test_images = 500;
  std::size_t embedding_dim = 16;
  PlantedRule rule = PlantedRule::ContextXor;
  double noise = 0.0;             // label corruption rate
  double holdout_fraction = 0.0;  // share of triplet types never used for training
  std::uint64_t seed = 1;

  bool feature_maps = true;
  std::size_t fmap_rows = 3;
  std::size_t fmap_cols = 3;
  std::size_t fmap_channels = 8;
  double fmap_noise = 0.2;
  // Minimum score gap between the winning predicate and the runner-up for
  // ContextLinear draws.
  double linear_margin = 0.5;
  bool detections = true;

  /// Preset for the zero-shot experiment: ContextLinear, 20% held out.
  static SynthConfig zero_shot_preset();
};

struct SynthOutput {
  Dataset train;
  Dataset test;
  EmbeddingStore embeddings;
  std::string embedding_text;
  std::map<std::string, std::shared_ptr<const FeatureMap>> feature_maps;
  std::set<TripletType> held_out;
};

/// Deterministic in `cfg.seed`. Every image holds a subject, an object and
/// one relationship between them.
SynthOutput synth_generate(const SynthConfig& cfg);

std::string object_class_name(std::size_t index);
std::string predicate_class_name(std::size_t index);

}  // namespace ctxrel
