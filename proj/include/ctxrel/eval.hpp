#pragma once

#include <array>
#include <cstddef>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ctxrel/data.hpp"
#include "ctxrel/embed.hpp"
#include "ctxrel/model.hpp"
#include "ctxrel/train.hpp"

namespace ctxrel {

/// Predicate detection scores ground-truth boxes. Phrase and relationship
/// detection score detector output.
enum class Task { Predicate, Phrase, Relationship };

inline constexpr std::array<Task, 3> kAllTasks{Task::Predicate, Task::Phrase, Task::Relationship};

/// "predicate", "phrase" or "relationship".
std::string_view task_name(Task task);
/// Column title, e.g. "Predicate Det.".
std::string_view task_title(Task task);
Task parse_task(std::string_view text);

/// Intersection over union; 0 for disjoint boxes.
double iou(const BoundingBox& a, const BoundingBox& b);
/// Smallest axis-aligned box covering both.
BoundingBox union_box(const BoundingBox& a, const BoundingBox& b);

struct RankedPrediction {
  Detection subject;
  Detection object;
  std::size_t subject_index = 0;  // index among the image's candidate boxes
  std::size_t object_index = 0;
  std::size_t predicate = 0;      // index into the model's predicate names
  double score = 0.0;
};

struct GroundTruth {
  std::string subject_label;
  std::string object_label;
  BoundingBox subject_box;
  BoundingBox object_box;
  std::size_t subject_index = 0;  // index into the image's objects
  std::size_t object_index = 0;
  std::size_t predicate = kNoIndex;  // index into the model's predicate names
};

/// Descending score; ties broken by subject label, object label, predicate,
/// subject index, object index.
void rank_predictions(std::vector<RankedPrediction>& predictions);

/// Predicate task: same object indices and predicate. Phrase: same labels
/// and predicate with union-box IoU >= threshold. Relationship: same labels
/// and predicate with subject and object IoU each >= threshold.
bool prediction_matches(const RankedPrediction& pred, const GroundTruth& gt, Task task,
                        double iou_threshold = 0.5);

/// Size of a maximum one-to-one matching between the first `k` ranked
/// predictions and the ground truth. Predictions are tried in rank order.
std::size_t count_matches(std::span<const RankedPrediction> ranked, std::span<const GroundTruth> truth,
                          std::size_t k, Task task, double iou_threshold = 0.5);

struct RecallResult {
  std::size_t matched = 0;
  std::size_t total = 0;
  /// matched / total, or 0 when there is no ground truth.
  double value() const;
};

/// Top-k pooling is per image. `ranked[i]` and `truth[i]` belong to image i.
RecallResult recall_at_k(std::span<const std::vector<RankedPrediction>> ranked,
                         std::span<const std::vector<GroundTruth>> truth, std::size_t k, Task task,
                         double iou_threshold = 0.5);

/// Test triplet types absent from the training set.
std::set<TripletType> zero_shot_split(const Dataset& train, const Dataset& test);

class LanguagePriorError : public Error {
 public:
  using Error::Error;
};

/// Non-negative weights on (subject, predicate, object) types; missing
/// entries weigh 1.
class LanguagePrior {
 public:
  void set(const TripletType& type, double weight);
  double weight(std::string_view subject, std::string_view predicate, std::string_view object) const;
  std::size_t size() const { return weights_.size(); }

 private:
  std::map<TripletType, double> weights_;
};

/// Whitespace-separated "subject predicate object weight" lines; '#' starts
/// a comment line.
LanguagePrior load_language_prior(std::istream& in);
LanguagePrior load_language_prior_file(const std::string& path);

/// Multiplies each predicate probability by its prior weight. Raw scores
/// are kept.
PredicateScores apply_language_prior(const PredicateScores& scores, const LanguagePrior& prior,
                                     std::string_view subject, std::string_view object,
                                     std::span<const std::string> predicate_names);

struct PredictContext {
  const EmbeddingStore* embeddings = nullptr;  // required by context kinds
  FeatureMapResolver resolver;                 // required by appearance kinds
  const LanguagePrior* prior = nullptr;
  UnknownWordPolicy policy = UnknownWordPolicy::Fallback;
  bool top50 = false;  // keep only the 50 most confident detections
};

inline constexpr std::size_t kProposalCap = 50;

/// Scores every ordered pair of distinct candidate boxes: the image's
/// objects (objectness 1) for the predicate task, its detections otherwise.
/// Appearance kinds only score pairs that carry a feature map. Baseline2
/// kinds only emit predicates whose (subject, predicate, object) combo was
/// seen in training. Returns ranked predictions.
std::vector<RankedPrediction> predict_image(const Model& model, const ImageAnnotation& image, Task task,
                                            const PredictContext& ctx);

/// Ground truth of one image with predicates mapped onto the model's names.
/// When `only` is given, relationships of other types are dropped.
std::vector<GroundTruth> image_ground_truth(const Dataset& dataset, const ImageAnnotation& image,
                                            std::span<const std::string> predicate_names,
                                            const std::set<TripletType>* only = nullptr);

struct EvalOptions {
  std::vector<std::size_t> ks{50, 100};
  std::vector<Task> tasks{Task::Predicate};
  double iou_threshold = 0.5;
  /// When set, ground truth is restricted to these triplet types.
  const std::set<TripletType>* only_types = nullptr;
};

struct RecallRow {
  Task task = Task::Predicate;
  std::size_t k = 0;
  RecallResult result;
};

struct PredictionRecord {
  std::string image_id;
  Task task = Task::Predicate;
  RankedPrediction prediction;
};

struct EvalResult {
  std::vector<RecallRow> rows;
  std::vector<PredictionRecord> predictions;  // the top max(k) per image and task
};

EvalResult evaluate(const Model& model, const Dataset& test, const PredictContext& ctx, const EvalOptions& options);

/// Tab-separated: method, split, task, k, matched, total, recall.
void write_results(std::ostream& out, std::string_view method, std::string_view split,
                   std::span<const RecallRow> rows);
/// Tab-separated: image id, task, subject label and box, object label and
/// box, predicate name, score.
void write_predictions(std::ostream& out, std::span<const PredictionRecord> records,
                       std::span<const std::string> predicate_names);

}  // namespace ctxrel
