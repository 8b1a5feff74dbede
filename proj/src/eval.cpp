#include "ctxrel/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

namespace ctxrel {

namespace {

struct Candidate {
  Detection detection;
  std::size_t index = 0;
};

std::vector<Candidate> candidates_for(const ImageAnnotation& image, Task task, bool top50) {
  std::vector<Candidate> out;
  if (task == Task::Predicate) {
    for (std::size_t i = 0; i < image.objects.size(); ++i) {
      out.push_back({{image.objects[i].label, image.objects[i].box, 1.0}, i});
    }
    return out;
  }
  for (std::size_t i = 0; i < image.detections.size(); ++i) out.push_back({image.detections[i], i});
  if (top50 && out.size() > kProposalCap) {
    std::stable_sort(out.begin(), out.end(), [](const Candidate& a, const Candidate& b) {
      return a.detection.objectness > b.detection.objectness;
    });
    out.resize(kProposalCap);
    std::sort(out.begin(), out.end(), [](const Candidate& a, const Candidate& b) { return a.index < b.index; });
  }
  return out;
}

// Feature-map reference per ordered pair, first occurrence wins.
std::map<std::pair<std::size_t, std::size_t>, std::string> pair_maps(const ImageAnnotation& image, Task task) {
  std::map<std::pair<std::size_t, std::size_t>, std::string> out;
  if (task == Task::Predicate) {
    for (const auto& rel : image.relationships) {
      if (!rel.feature_map.empty()) out.emplace(std::pair{rel.subject, rel.object}, rel.feature_map);
    }
  } else {
    for (const auto& pf : image.detection_features) {
      if (!pf.feature_map.empty()) out.emplace(std::pair{pf.subject, pf.object}, pf.feature_map);
    }
  }
  return out;
}

bool try_augment(std::size_t pred, const std::vector<std::vector<std::size_t>>& adj, std::vector<char>& seen,
                 std::vector<std::size_t>& owner) {
  for (std::size_t g : adj[pred]) {
    if (seen[g]) continue;
    seen[g] = 1;
    if (owner[g] == kNoIndex || try_augment(owner[g], adj, seen, owner)) {
      owner[g] = pred;
      return true;
    }
  }
  return false;
}

std::string format_box(const BoundingBox& b) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << b.x << ',' << b.y << ',' << b.w << ','
     << b.h;
  return os.str();
}

}  // namespace

std::string_view task_name(Task task) {
  switch (task) {
    case Task::Predicate: return "predicate";
    case Task::Phrase: return "phrase";
    case Task::Relationship: return "relationship";
  }
  return "?";
}

std::string_view task_title(Task task) {
  switch (task) {
    case Task::Predicate: return "Predicate Det.";
    case Task::Phrase: return "Phrase Det.";
    case Task::Relationship: return "Relationship Det.";
  }
  return "?";
}

Task parse_task(std::string_view text) {
  for (Task t : kAllTasks) {
    if (task_name(t) == text) return t;
  }
  throw Error("unknown task '" + std::string(text) + "' (expected predicate, phrase or relationship)");
}

double iou(const BoundingBox& a, const BoundingBox& b) {
  const double iw = std::min(a.right(), b.right()) - std::max(a.x, b.x);
  const double ih = std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

BoundingBox union_box(const BoundingBox& a, const BoundingBox& b) {
  const double x = std::min(a.x, b.x);
  const double y = std::min(a.y, b.y);
  return {x, y, std::max(a.right(), b.right()) - x, std::max(a.bottom(), b.bottom()) - y};
}

void rank_predictions(std::vector<RankedPrediction>& predictions) {
  std::sort(predictions.begin(), predictions.end(), [](const RankedPrediction& a, const RankedPrediction& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.subject.label != b.subject.label) return a.subject.label < b.subject.label;
    if (a.object.label != b.object.label) return a.object.label < b.object.label;
    if (a.predicate != b.predicate) return a.predicate < b.predicate;
    if (a.subject_index != b.subject_index) return a.subject_index < b.subject_index;
    return a.object_index < b.object_index;
  });
}

bool prediction_matches(const RankedPrediction& pred, const GroundTruth& gt, Task task, double iou_threshold) {
  if (pred.predicate != gt.predicate) return false;
  if (task == Task::Predicate) {
    return pred.subject_index == gt.subject_index && pred.object_index == gt.object_index;
  }
  if (pred.subject.label != gt.subject_label || pred.object.label != gt.object_label) return false;
  if (task == Task::Phrase) {
    return iou(union_box(pred.subject.box, pred.object.box), union_box(gt.subject_box, gt.object_box)) >=
           iou_threshold;
  }
  return iou(pred.subject.box, gt.subject_box) >= iou_threshold && iou(pred.object.box, gt.object_box) >= iou_threshold;
}

std::size_t count_matches(std::span<const RankedPrediction> ranked, std::span<const GroundTruth> truth, std::size_t k,
                          Task task, double iou_threshold) {
  if (k == 0) throw Error("recall needs k >= 1");
  const std::size_t n = std::min(k, ranked.size());
  std::vector<std::vector<std::size_t>> adj(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t g = 0; g < truth.size(); ++g) {
      if (prediction_matches(ranked[i], truth[g], task, iou_threshold)) adj[i].push_back(g);
    }
  }
  std::vector<std::size_t> owner(truth.size(), kNoIndex);
  std::size_t matched = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (adj[i].empty()) continue;
    std::vector<char> seen(truth.size(), 0);
    if (try_augment(i, adj, seen, owner)) ++matched;
  }
  return matched;
}

double RecallResult::value() const {
  return total == 0 ? 0.0 : static_cast<double>(matched) / static_cast<double>(total);
}

RecallResult recall_at_k(std::span<const std::vector<RankedPrediction>> ranked,
                         std::span<const std::vector<GroundTruth>> truth, std::size_t k, Task task,
                         double iou_threshold) {
  if (ranked.size() != truth.size()) throw ShapeError("predictions and ground truth cover different image counts");
  RecallResult r;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    r.matched += count_matches(ranked[i], truth[i], k, task, iou_threshold);
    r.total += truth[i].size();
  }
  return r;
}

std::set<TripletType> zero_shot_split(const Dataset& train, const Dataset& test) {
  const auto seen = split_triplet_types(train);
  std::set<TripletType> out;
  for (const auto& t : split_triplet_types(test)) {
    if (seen.count(t) == 0) out.insert(t);
  }
  return out;
}

void LanguagePrior::set(const TripletType& type, double weight) {
  if (!(weight >= 0.0) || !std::isfinite(weight)) {
    throw LanguagePriorError("language prior weight for (" + type.subject + ", " + type.predicate + ", " +
                             type.object + ") must be finite and non-negative");
  }
  weights_[type] = weight;
}

double LanguagePrior::weight(std::string_view subject, std::string_view predicate, std::string_view object) const {
  const auto it = weights_.find({std::string(subject), std::string(predicate), std::string(object)});
  return it == weights_.end() ? 1.0 : it->second;
}

LanguagePrior load_language_prior(std::istream& in) {
  LanguagePrior prior;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view body = trim(line);
    if (body.empty() || body.front() == '#') continue;
    std::istringstream fields{std::string(body)};
    TripletType type;
    std::string weight_text, extra;
    if (!(fields >> type.subject >> type.predicate >> type.object >> weight_text) || (fields >> extra)) {
      throw LanguagePriorError("language prior line " + std::to_string(line_no) +
                               ": expected 'subject predicate object weight'");
    }
    double weight = 0.0;
    const auto [end, ec] = std::from_chars(weight_text.data(), weight_text.data() + weight_text.size(), weight);
    if (ec != std::errc() || end != weight_text.data() + weight_text.size()) {
      throw LanguagePriorError("language prior line " + std::to_string(line_no) + ": bad weight '" + weight_text +
                               "'");
    }
    try {
      prior.set(type, weight);
    } catch (const LanguagePriorError& e) {
      throw LanguagePriorError("language prior line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return prior;
}

LanguagePrior load_language_prior_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LanguagePriorError("cannot open language prior file '" + path + "'");
  return load_language_prior(in);
}

PredicateScores apply_language_prior(const PredicateScores& scores, const LanguagePrior& prior,
                                     std::string_view subject, std::string_view object,
                                     std::span<const std::string> predicate_names) {
  if (scores.probabilities.size() != predicate_names.size()) {
    throw ShapeError("language prior needs one probability per predicate");
  }
  PredicateScores out = scores;
  for (std::size_t p = 0; p < predicate_names.size(); ++p) {
    out.probabilities[p] *= prior.weight(subject, predicate_names[p], object);
  }
  return out;
}

std::vector<RankedPrediction> predict_image(const Model& model, const ImageAnnotation& image, Task task,
                                            const PredictContext& ctx) {
  const ModelKind kind = model.kind();
  const auto& names = model.predicate_names();
  if (names.size() != model.dims().predicates) throw Error("model has no predicate vocabulary");
  if (uses_context(kind) && ctx.embeddings == nullptr) throw Error("context kinds need word embeddings");
  if (uses_appearance(kind) && !ctx.resolver) throw Error("appearance kinds need feature maps");

  const auto cands = candidates_for(image, task, ctx.top50);
  std::vector<RankedPrediction> out;
  if (cands.size() < 2) return out;
  const auto maps = uses_appearance(kind) ? pair_maps(image, task)
                                          : std::map<std::pair<std::size_t, std::size_t>, std::string>{};

  for (const Candidate& s : cands) {
    for (const Candidate& o : cands) {
      if (s.index == o.index) continue;
      FeatureInput input;
      if (uses_appearance(kind)) {
        const auto it = maps.find({s.index, o.index});
        if (it == maps.end()) continue;
        input = ctx.resolver(it->second);
      } else {
        input = spatial_feature(s.detection.box, o.detection.box, image.size);
      }
      Vec pair;
      if (uses_context(kind)) pair = encode_pair(*ctx.embeddings, s.detection.label, o.detection.label, ctx.policy);
      const PredicateScores raw = model.forward(input, pair);

      // Per-predicate probability; Baseline2 maps combos back to predicates.
      PredicateScores per_predicate;
      std::vector<char> present(names.size(), 1);
      if (is_combination_kind(kind)) {
        per_predicate.scores.assign(names.size(), 0.0);
        per_predicate.probabilities.assign(names.size(), 0.0);
        for (std::size_t p = 0; p < names.size(); ++p) {
          const auto combo = model.combos().find(s.detection.label, p, o.detection.label);
          if (!combo) {
            present[p] = 0;
            continue;
          }
          per_predicate.scores[p] = raw.scores[*combo];
          per_predicate.probabilities[p] = raw.probabilities[*combo];
        }
      } else {
        per_predicate = raw;
      }
      if (ctx.prior != nullptr) {
        per_predicate = apply_language_prior(per_predicate, *ctx.prior, s.detection.label, o.detection.label, names);
      }
      const double objectness = s.detection.objectness * o.detection.objectness;
      for (std::size_t p = 0; p < names.size(); ++p) {
        if (!present[p]) continue;
        out.push_back({s.detection, o.detection, s.index, o.index, p, objectness * per_predicate.probabilities[p]});
      }
    }
  }
  rank_predictions(out);
  return out;
}

std::vector<GroundTruth> image_ground_truth(const Dataset& dataset, const ImageAnnotation& image,
                                            std::span<const std::string> predicate_names,
                                            const std::set<TripletType>* only) {
  std::vector<GroundTruth> out;
  for (const auto& rel : image.relationships) {
    if (only != nullptr && only->count(triplet_of(dataset, image, rel)) == 0) continue;
    const auto& s = image.objects.at(rel.subject);
    const auto& o = image.objects.at(rel.object);
    GroundTruth gt{s.label, o.label, s.box, o.box, rel.subject, rel.object, kNoIndex};
    const std::string& name = dataset.predicates.at(rel.predicate);
    const auto it = std::find(predicate_names.begin(), predicate_names.end(), name);
    if (it != predicate_names.end()) gt.predicate = static_cast<std::size_t>(it - predicate_names.begin());
    out.push_back(std::move(gt));
  }
  return out;
}

EvalResult evaluate(const Model& model, const Dataset& test, const PredictContext& ctx, const EvalOptions& options) {
  if (options.ks.empty()) throw Error("evaluation needs at least one k");
  for (std::size_t k : options.ks) {
    if (k == 0) throw Error("k values must be >= 1");
  }
  if (options.tasks.empty()) throw Error("evaluation needs at least one task");
  const std::size_t keep = *std::max_element(options.ks.begin(), options.ks.end());

  std::vector<std::vector<GroundTruth>> truth;
  truth.reserve(test.images.size());
  for (const auto& img : test.images) {
    truth.push_back(image_ground_truth(test, img, model.predicate_names(), options.only_types));
  }

  EvalResult result;
  for (Task task : options.tasks) {
    if (task != Task::Predicate && !test.has_detections()) {
      throw Error(std::string(task_title(task)) + " needs detections in the test set");
    }
    std::vector<std::vector<RankedPrediction>> ranked;
    ranked.reserve(test.images.size());
    for (std::size_t i = 0; i < test.images.size(); ++i) {
      auto preds = predict_image(model, test.images[i], task, ctx);
      if (preds.size() > keep) preds.resize(keep);
      for (const auto& p : preds) result.predictions.push_back({test.images[i].id, task, p});
      ranked.push_back(std::move(preds));
    }
    for (std::size_t k : options.ks) {
      result.rows.push_back({task, k, recall_at_k(ranked, truth, k, task, options.iou_threshold)});
    }
  }
  return result;
}

void write_results(std::ostream& out, std::string_view method, std::string_view split,
                   std::span<const RecallRow> rows) {
  out << "method\tsplit\ttask\tk\tmatched\ttotal\trecall\n";
  std::ostringstream os;
  os << std::fixed << std::setprecision(6);
  for (const auto& r : rows) {
    os << method << '\t' << split << '\t' << task_name(r.task) << '\t' << r.k << '\t' << r.result.matched << '\t'
       << r.result.total << '\t' << r.result.value() << '\n';
  }
  out << os.str();
}

void write_predictions(std::ostream& out, std::span<const PredictionRecord> records,
                       std::span<const std::string> predicate_names) {
  out << "image\ttask\tsubject\tsubject_box\tobject\tobject_box\tpredicate\tscore\n";
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& r : records) {
    const auto& p = r.prediction;
    os << r.image_id << '\t' << task_name(r.task) << '\t' << p.subject.label << '\t' << format_box(p.subject.box)
       << '\t' << p.object.label << '\t' << format_box(p.object.box) << '\t' << predicate_names[p.predicate] << '\t'
       << p.score << '\n';
  }
  out << os.str();
}

}  // namespace ctxrel
