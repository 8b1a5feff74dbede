#include "ctxrel/synth.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <random>
#include <sstream>

namespace ctxrel {

namespace {

constexpr double kImageWidth = 640.0;
constexpr double kImageHeight = 480.0;

struct Geometry {
  BoundingBox subject;
  BoundingBox object;
  bool subject_right = false;
  double offset = 0.0;  // (x - x') / w'
};

class Generator {
 public:
  explicit Generator(const SynthConfig& cfg) : cfg_(cfg), rng_(cfg.seed) {}

  SynthOutput run();

 private:
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  double gauss() { return normal_(rng_); }
  std::size_t pick(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_); }
  bool coin() { return std::bernoulli_distribution(0.5)(rng_); }

  EmbeddingStore make_embeddings();
  Geometry draw_geometry();
  Vec linear_scores(std::size_t subject, std::size_t object, std::span<const double> latent) const;
  std::shared_ptr<const FeatureMap> make_feature_map(std::span<const double> latent);
  BoundingBox jitter(const BoundingBox& b);
  std::size_t corrupt(std::size_t label);
  Dataset make_split(const std::string& split, std::size_t count, bool training, SynthOutput& out);

  const SynthConfig& cfg_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};

  std::vector<Vec> embeddings_;
  Vec xor_direction_;
  std::vector<Vec> linear_base_;
  std::vector<Mat> linear_gen_;
  std::set<TripletType> held_out_;
};

EmbeddingStore Generator::make_embeddings() {
  const std::size_t e = cfg_.embedding_dim;
  embeddings_.clear();
  for (std::size_t k = 0; k < cfg_.object_classes; ++k) {
    Vec v(e);
    for (double& x : v) x = gauss();
    // Gram-Schmidt against earlier vectors while an orthogonal direction exists.
    if (k < e) {
      for (const Vec& prev : embeddings_) axpy(-dot(v, prev), prev, v);
    }
    const double norm = l2_norm(v);
    for (double& x : v) x /= norm;
    embeddings_.push_back(std::move(v));
  }
  std::map<std::string, Vec> table;
  for (std::size_t k = 0; k < embeddings_.size(); ++k) table[object_class_name(k)] = embeddings_[k];
  return EmbeddingStore(std::move(table));
}

Geometry Generator::draw_geometry() {
  Geometry g;
  g.object.w = uniform(40.0, 100.0);
  g.object.h = uniform(40.0, 100.0);
  g.object.x = uniform(150.0, kImageWidth - 250.0 - g.object.w);
  g.object.y = uniform(50.0, 280.0);
  g.subject.w = uniform(40.0, 100.0);
  g.subject.h = uniform(40.0, 100.0);
  g.subject_right = coin();
  const double ratio = uniform(0.3, 1.5);
  g.offset = g.subject_right ? ratio : -ratio;
  g.subject.x = g.object.x + g.offset * g.object.w;
  g.subject.y = g.object.y + uniform(-0.5, 0.5) * g.object.h;
  return g;
}

Vec Generator::linear_scores(std::size_t subject, std::size_t object, std::span<const double> latent) const {
  const Vec pair = concat(embeddings_[subject], embeddings_[object]);
  Vec scores(cfg_.predicates);
  for (std::size_t p = 0; p < cfg_.predicates; ++p) {
    Vec w = matvec(linear_gen_[p], pair);
    axpy(1.0, linear_base_[p], w);
    scores[p] = dot(w, latent);
  }
  return scores;
}

std::shared_ptr<const FeatureMap> Generator::make_feature_map(std::span<const double> latent) {
  const std::size_t c = cfg_.fmap_channels;
  const std::size_t locations = cfg_.fmap_rows * cfg_.fmap_cols;
  std::vector<double> values(locations * c);
  for (std::size_t l = 0; l < locations; ++l) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      // Round through float so in-memory maps equal what the file stores.
      values[l * c + ch] = static_cast<double>(static_cast<float>(latent[ch] + cfg_.fmap_noise * gauss()));
    }
  }
  return std::make_shared<const FeatureMap>(cfg_.fmap_rows, cfg_.fmap_cols, c, std::move(values));
}

BoundingBox Generator::jitter(const BoundingBox& b) {
  BoundingBox j;
  j.w = b.w * (1.0 + uniform(-0.05, 0.05));
  j.h = b.h * (1.0 + uniform(-0.05, 0.05));
  j.x = std::clamp(b.x + b.w * uniform(-0.05, 0.05), 0.0, kImageWidth - j.w);
  j.y = std::clamp(b.y + b.h * uniform(-0.05, 0.05), 0.0, kImageHeight - j.h);
  return j;
}

std::size_t Generator::corrupt(std::size_t label) {
  if (cfg_.noise <= 0.0 || !std::bernoulli_distribution(cfg_.noise)(rng_)) return label;
  const std::size_t shift = 1 + pick(cfg_.predicates - 1);
  return (label + shift) % cfg_.predicates;
}

Dataset Generator::make_split(const std::string& split, std::size_t count, bool training, SynthOutput& out) {
  Dataset ds;
  for (std::size_t p = 0; p < cfg_.predicates; ++p) ds.predicates.push_back(predicate_class_name(p));
  const std::size_t groups_split = cfg_.object_classes / 2;

  while (ds.images.size() < count) {
    const std::size_t subject = pick(cfg_.object_classes);
    const std::size_t object = pick(cfg_.object_classes);
    const Geometry geo = draw_geometry();

    std::size_t label = 0;
    Vec latent(cfg_.fmap_channels);
    if (cfg_.rule == PlantedRule::ContextXor) {
      const bool group = subject >= groups_split;
      label = (group != geo.subject_right) ? 1 : 0;
      for (std::size_t ch = 0; ch < latent.size(); ++ch) latent[ch] = geo.offset * xor_direction_[ch];
    } else {
      Vec scores;
      double gap = 0.0;
      do {
        for (double& z : latent) z = gauss();
        scores = linear_scores(subject, object, latent);
        Vec sorted = scores;
        std::sort(sorted.begin(), sorted.end(), std::greater<>());
        gap = sorted.size() > 1 ? sorted[0] - sorted[1] : 1e9;
      } while (gap < cfg_.linear_margin);
      label = argmax(scores);
    }
    label = corrupt(label);

    const TripletType type{object_class_name(subject), predicate_class_name(label), object_class_name(object)};
    if (training && held_out_.count(type) != 0) continue;

    std::ostringstream id;
    id << split << '_' << std::setw(6) << std::setfill('0') << ds.images.size();
    ImageAnnotation img;
    img.id = id.str();
    img.size = {kImageWidth, kImageHeight};

    const bool subject_first = coin();
    const std::size_t s_idx = subject_first ? 0 : 1;
    const std::size_t o_idx = 1 - s_idx;
    img.objects.resize(2);
    img.objects[s_idx] = {object_class_name(subject), geo.subject};
    img.objects[o_idx] = {object_class_name(object), geo.object};

    Relationship rel{s_idx, label, o_idx, {}};
    if (cfg_.feature_maps) {
      rel.feature_map = split + "/" + id.str() + ".fmap";
      out.feature_maps[rel.feature_map] = make_feature_map(latent);
    }
    if (cfg_.detections) {
      for (const auto& obj : img.objects) img.detections.push_back({obj.label, jitter(obj.box), uniform(0.5, 1.0)});
      if (cfg_.feature_maps) img.detection_features.push_back({s_idx, o_idx, rel.feature_map});
    }
    img.relationships.push_back(std::move(rel));
    ds.images.push_back(std::move(img));
  }
  refresh_vocabulary(ds);
  return ds;
}

SynthOutput Generator::run() {
  if (cfg_.object_classes < 2) throw Error("synthetic data needs at least 2 object classes");
  if (cfg_.predicates < 2) throw Error("synthetic data needs at least 2 predicates");
  if (cfg_.rule == PlantedRule::ContextXor && cfg_.predicates != 2) {
    throw Error("the context-xor rule is defined for exactly 2 predicates");
  }
  if (cfg_.embedding_dim == 0 || cfg_.fmap_channels == 0 || cfg_.fmap_rows == 0 || cfg_.fmap_cols == 0) {
    throw Error("synthetic dimensions must be positive");
  }
  if (!(cfg_.noise >= 0.0 && cfg_.noise < 1.0)) throw Error("noise rate must lie in [0, 1)");
  if (!(cfg_.holdout_fraction >= 0.0 && cfg_.holdout_fraction < 1.0)) {
    throw Error("holdout fraction must lie in [0, 1)");
  }
  if (cfg_.train_images == 0 || cfg_.test_images == 0) throw Error("synthetic splits must be non-empty");

  SynthOutput out;
  out.embeddings = make_embeddings();
  std::ostringstream emb;
  write_embeddings(emb, out.embeddings);
  out.embedding_text = emb.str();

  xor_direction_.resize(cfg_.fmap_channels);
  for (double& v : xor_direction_) v = gauss();
  const double norm = l2_norm(xor_direction_);
  for (double& v : xor_direction_) v /= norm;

  if (cfg_.rule == PlantedRule::ContextLinear) {
    const std::size_t c = cfg_.fmap_channels;
    const std::size_t pair_dim = 2 * cfg_.embedding_dim;
    for (std::size_t p = 0; p < cfg_.predicates; ++p) {
      Vec base(c);
      for (double& v : base) v = gauss();
      Mat gen(c, pair_dim);
      for (double& v : gen.values()) v = gauss();
      linear_base_.push_back(std::move(base));
      linear_gen_.push_back(std::move(gen));
    }
  }

  std::vector<TripletType> all_types;
  for (std::size_t s = 0; s < cfg_.object_classes; ++s) {
    for (std::size_t p = 0; p < cfg_.predicates; ++p) {
      for (std::size_t o = 0; o < cfg_.object_classes; ++o) {
        all_types.push_back({object_class_name(s), predicate_class_name(p), object_class_name(o)});
      }
    }
  }
  std::shuffle(all_types.begin(), all_types.end(), rng_);
  const auto held = static_cast<std::size_t>(std::llround(cfg_.holdout_fraction * static_cast<double>(all_types.size())));
  held_out_.insert(all_types.begin(), all_types.begin() + static_cast<std::ptrdiff_t>(held));
  out.held_out = held_out_;

  out.train = make_split("train", cfg_.train_images, true, out);
  out.test = make_split("test", cfg_.test_images, false, out);
  return out;
}

}  // namespace

std::string_view rule_name(PlantedRule rule) {
  return rule == PlantedRule::ContextXor ? "xor" : "linear";
}

PlantedRule parse_rule(std::string_view text) {
  if (text == "xor" || text == "context-xor") return PlantedRule::ContextXor;
  if (text == "linear" || text == "context-linear") return PlantedRule::ContextLinear;
  throw Error("unknown planted rule '" + std::string(text) + "' (expected xor or linear)");
}

SynthConfig SynthConfig::zero_shot_preset() {
  SynthConfig cfg;
  cfg.rule = PlantedRule::ContextLinear;
  cfg.predicates = 4;
  cfg.holdout_fraction = 0.2;
  return cfg;
}

std::string object_class_name(std::size_t index) {
  std::ostringstream os;
  os << "obj" << std::setw(2) << std::setfill('0') << index;
  return os.str();
}

std::string predicate_class_name(std::size_t index) {
  std::ostringstream os;
  os << "pred" << std::setw(2) << std::setfill('0') << index;
  return os.str();
}

SynthOutput synth_generate(const SynthConfig& cfg) { return Generator(cfg).run(); }

}  // namespace ctxrel
