#include "ctxrel/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <map>
#include <mutex>
#include <numeric>
#include <random>

namespace ctxrel {

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !(backbone_lr >= 0.0)) throw Error("learning rates must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw Error("Adam betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw Error("Adam epsilon must be positive");
  if (batch_size == 0) throw Error("batch size must be at least 1");
}

AdamState::AdamState(const ModelParams& params) {
  for (const Tensor& t : params.tensors()) {
    first.emplace_back(t.size(), 0.0);
    second.emplace_back(t.size(), 0.0);
  }
}

void adam_step(ModelParams& params, AdamState& state, const TrainConfig& cfg) {
  auto& tensors = params.tensors();
  if (state.first.size() != tensors.size()) throw ShapeError("Adam state does not match parameter set");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correct1 = 1.0 - std::pow(cfg.beta1, t);
  const double correct2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    Tensor& tensor = tensors[i];
    Vec& m = state.first[i];
    Vec& v = state.second[i];
    if (m.size() != tensor.size()) throw ShapeError("Adam moment size does not match tensor");
    const double lr = tensor.backbone ? cfg.backbone_lr : cfg.lr;
    for (std::size_t k = 0; k < tensor.size(); ++k) {
      const double g = tensor.grad[k];
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g;
      const double m_hat = m[k] / correct1;
      const double v_hat = v[k] / correct2;
      tensor.value[k] -= lr * m_hat / (std::sqrt(v_hat) + cfg.adam_eps);
    }
  }
}

void TrainLog::write(std::ostream& out) const {
  out << "epoch\tmean_loss\ttrain_accuracy\n";
  const auto flags = out.flags();
  const auto precision = out.precision();
  out << std::fixed << std::setprecision(6);
  for (const auto& r : epochs) out << r.epoch << '\t' << r.mean_loss << '\t' << r.train_accuracy << '\n';
  out.flags(flags);
  out.precision(precision);
}

TrainLog train(Model& model, std::span<const Sample> samples, const TrainConfig& cfg) {
  cfg.validate();
  if (samples.empty()) throw Error("training set is empty");
  for (const Sample& s : samples) {
    model.check_input(s.input, s.pair_embedding);
    if (s.label >= model.output_dim()) throw Error("training label out of range for model output");
  }

  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(cfg.seed ^ 0x5deece66dULL);
  AdamState state(model.params());
  TrainLog log;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total_loss = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(start + cfg.batch_size, order.size());
      model.params().zero_grad();
      for (std::size_t k = start; k < end; ++k) {
        const Sample& s = samples[order[k]];
        std::size_t predicted = 0;
        total_loss += model.backward(s.input, s.pair_embedding, s.label, &predicted);
        if (predicted == s.label) ++correct;
      }
      const double scale = 1.0 / static_cast<double>(end - start);
      for (Tensor& t : model.params().tensors()) {
        for (double& g : t.grad) g *= scale;
      }
      adam_step(model.params(), state, cfg);
    }
    const double n = static_cast<double>(samples.size());
    log.epochs.push_back({epoch, total_loss / n, static_cast<double>(correct) / n});
  }
  model.params().zero_grad();
  return log;
}

double mean_loss(const Model& model, std::span<const Sample> samples) {
  if (samples.empty()) return 0.0;
  double total = 0.0;
  for (const Sample& s : samples) {
    total += cross_entropy_with_grad(model.forward(s.input, s.pair_embedding).scores, s.label).loss;
  }
  return total / static_cast<double>(samples.size());
}

std::size_t predict_predicate(const Model& model, const Sample& sample) {
  const std::size_t best = argmax(model.forward(sample.input, sample.pair_embedding).scores);
  return is_combination_kind(model.kind()) ? combo_to_predicate(best, model.combos()) : best;
}

double predicate_accuracy(const Model& model, std::span<const Sample> samples) {
  if (samples.empty()) return 0.0;
  std::size_t correct = 0;
  for (const Sample& s : samples) {
    if (predict_predicate(model, s) == s.predicate) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

FeatureMapResolver directory_resolver(std::string base_dir) {
  struct Cache {
    std::mutex lock;
    std::map<std::string, std::shared_ptr<const FeatureMap>> maps;
  };
  auto cache = std::make_shared<Cache>();
  return [base = std::move(base_dir), cache](const std::string& ref) -> std::shared_ptr<const FeatureMap> {
    std::lock_guard guard(cache->lock);
    auto it = cache->maps.find(ref);
    if (it != cache->maps.end()) return it->second;
    const std::string path = (std::filesystem::path(base) / ref).string();
    auto fm = std::make_shared<const FeatureMap>(load_feature_map_file(path));
    cache->maps.emplace(ref, fm);
    return fm;
  };
}

ComboTable build_combo_table(const Dataset& train) {
  ComboTable table;
  for (const TripletType& t : split_triplet_types(train)) {
    table.combos.push_back({t.subject, train.predicate_index(t.predicate), t.object});
  }
  return table;
}

Model make_model(ModelKind kind, const Dataset& train, const EmbeddingStore& store,
                 const FeatureMapResolver& resolver, const ModelOptions& options) {
  if (train.relationship_count() == 0) throw Error("training set has no relationships");
  ModelDims dims;
  dims.predicates = train.predicates.size();
  dims.code_dim = options.code_dim;
  dims.embedding_dim = store.dimension();
  dims.attention_eps = options.attention_eps;
  ComboTable combos;
  if (is_combination_kind(kind)) {
    combos = build_combo_table(train);
    dims.combos = combos.size();
  }
  if (uses_appearance(kind)) {
    if (!resolver) throw Error(std::string(display_name(kind)) + " needs feature maps");
    const Relationship* first = nullptr;
    for (const auto& img : train.images) {
      for (const auto& rel : img.relationships) {
        if (first == nullptr) first = &rel;
      }
    }
    if (first->feature_map.empty()) throw Error("training relationships carry no feature map references");
    dims.feature_dim = resolver(first->feature_map)->channels();
  } else {
    dims.feature_dim = kSpatialFeatureDim;
  }
  Model model(kind, dims);
  model.initialize(options.seed);
  model.combos() = std::move(combos);
  model.predicate_names() = train.predicates;
  return model;
}

std::vector<Sample> make_samples(const Model& model, const Dataset& dataset, const EmbeddingStore& store,
                                 const FeatureMapResolver& resolver, UnknownWordPolicy policy) {
  const ModelKind kind = model.kind();
  std::vector<Sample> samples;
  for (const auto& img : dataset.images) {
    for (const auto& rel : img.relationships) {
      const auto& subj = img.objects.at(rel.subject);
      const auto& obj = img.objects.at(rel.object);
      const std::string& pname = dataset.predicates.at(rel.predicate);
      const auto it = std::find(model.predicate_names().begin(), model.predicate_names().end(), pname);
      if (it == model.predicate_names().end()) {
        throw Error("image '" + img.id + "': predicate '" + pname + "' is unknown to the model");
      }
      Sample s;
      s.predicate = static_cast<std::size_t>(it - model.predicate_names().begin());
      s.label = s.predicate;
      if (is_combination_kind(kind)) {
        const auto combo = model.combos().find(subj.label, s.predicate, obj.label);
        if (!combo) continue;
        s.label = *combo;
      }
      if (uses_appearance(kind)) {
        if (rel.feature_map.empty()) {
          throw Error("image '" + img.id + "': relationship has no feature map reference");
        }
        s.input = resolver(rel.feature_map);
      } else {
        s.input = spatial_feature(subj.box, obj.box, img.size);
      }
      if (uses_context(kind)) s.pair_embedding = encode_pair(store, subj.label, obj.label, policy);
      samples.push_back(std::move(s));
    }
  }
  return samples;
}

}  // namespace ctxrel
