#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>

#include "ctxrel/numcore.hpp"

namespace ctxrel {

/// Axis-aligned box in pixels: top-left corner (x, y), extent (w, h); x grows
/// rightward, y downward.
struct BoundingBox {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  double area() const { return w * h; }
  double right() const { return x + w; }
  double bottom() const { return y + h; }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct ImageSize {
  double width = 0.0;
  double height = 0.0;

  friend bool operator==(const ImageSize&, const ImageSize&) = default;
};

class GeometryError : public Error {
 public:
  using Error::Error;
};

bool box_is_valid(const BoundingBox& b);
bool box_inside(const BoundingBox& b, const ImageSize& img);

/// [x/W, y/H, (x+w)/W, (y+h)/H, area(b)/area(I)].
Vec single_box_spatial(const BoundingBox& b, const ImageSize& img);
/// [(x-x')/w', (y-y')/h', ln(w/w'), ln(h/h')] for subject (x,y,w,h), object (x',y',w',h').
Vec pairwise_spatial(const BoundingBox& subject, const BoundingBox& object);

inline constexpr std::size_t kSpatialFeatureDim = 14;

/// single(subject) ++ single(object) ++ pairwise(subject, object).
Vec spatial_feature(const BoundingBox& subject, const BoundingBox& object, const ImageSize& img);

/// M x N grid of c-channel activation fibers, row-major over (i, j, channel).
class FeatureMap {
 public:
  FeatureMap() = default;
  FeatureMap(std::size_t rows, std::size_t cols, std::size_t channels, std::vector<double> values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t channels() const { return channels_; }
  std::size_t locations() const { return rows_ * cols_; }

  std::span<const double> fiber(std::size_t i, std::size_t j) const {
    return {values_.data() + (i * cols_ + j) * channels_, channels_};
  }
  /// Fiber at flat location index i * N + j.
  std::span<const double> fiber(std::size_t loc) const { return {values_.data() + loc * channels_, channels_}; }
  std::span<const double> values() const { return values_; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::size_t channels_ = 0;
  std::vector<double> values_;
};

Vec mean_pool(const FeatureMap& fm);

class FeatureMapError : public Error {
 public:
  enum class Kind { BadMagic, BadShape, Truncated, NonFinite, Io };
  FeatureMapError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// Binary layout: "FMAP", u32 M, u32 N, u32 c (little-endian), then M*N*c
/// little-endian float32 values in (i, j, channel) order.
FeatureMap load_feature_map(std::istream& in);
FeatureMap load_feature_map_file(const std::string& path);
void save_feature_map(std::ostream& out, const FeatureMap& fm);

}  // namespace ctxrel
