#pragma once

#include <compare>
#include <cstddef>
#include <istream>
#include <limits>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "ctxrel/features.hpp"
#include "ctxrel/numcore.hpp"

namespace ctxrel {

class DatasetError : public Error {
 public:
  using Error::Error;
};

inline constexpr int kDatasetSchemaVersion = 1;
inline constexpr std::size_t kNoIndex = std::numeric_limits<std::size_t>::max();

struct ObjectAnnotation {
  std::string label;
  BoundingBox box;
  friend bool operator==(const ObjectAnnotation&, const ObjectAnnotation&) = default;
};

struct Relationship {
  std::size_t subject = 0;
  std::size_t predicate = 0;
  std::size_t object = 0;
  std::string feature_map;  // optional reference, empty when absent
  friend bool operator==(const Relationship&, const Relationship&) = default;
};

/// Externally supplied detector output.
struct Detection {
  std::string label;
  BoundingBox box;
  double objectness = 1.0;
  friend bool operator==(const Detection&, const Detection&) = default;
};

/// Feature-map reference for an ordered pair of detections.
struct PairFeature {
  std::size_t subject = 0;
  std::size_t object = 0;
  std::string feature_map;
  friend bool operator==(const PairFeature&, const PairFeature&) = default;
};

struct ImageAnnotation {
  std::string id;
  ImageSize size;
  std::vector<ObjectAnnotation> objects;
  std::vector<Relationship> relationships;
  std::vector<Detection> detections;
  std::vector<PairFeature> detection_features;
  friend bool operator==(const ImageAnnotation&, const ImageAnnotation&) = default;
};

struct Dataset {
  std::vector<std::string> predicates;     // sorted, unique
  std::vector<std::string> object_labels;  // sorted, unique
  std::vector<ImageAnnotation> images;

  std::size_t relationship_count() const;
  /// Index of `name` in `predicates`, or kNoIndex.
  std::size_t predicate_index(std::string_view name) const;
  bool has_detections() const;
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct TripletType {
  std::string subject;
  std::string predicate;
  std::string object;
  friend auto operator<=>(const TripletType&, const TripletType&) = default;
};

struct Violation {
  std::string image_id;
  std::string message;
};

/// Labels are trimmed and inner whitespace runs become '_'.
std::string normalize_label(std::string_view raw);

/// Parses and validates an annotation document. Predicates may be given by
/// index or by name; vocabularies come back sorted and deduplicated.
Dataset load_dataset(std::istream& in);
Dataset load_dataset_file(const std::string& path);
void save_dataset(std::ostream& out, const Dataset& dataset);

/// Recomputes the sorted object vocabulary from objects and detections.
void refresh_vocabulary(Dataset& dataset);

std::vector<Violation> validate(const Dataset& dataset);

std::set<TripletType> split_triplet_types(const Dataset& dataset);
TripletType triplet_of(const Dataset& dataset, const ImageAnnotation& image, const Relationship& rel);

}  // namespace ctxrel
