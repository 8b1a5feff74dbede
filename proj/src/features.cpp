#include "ctxrel/features.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace ctxrel {

namespace {

std::string describe(const BoundingBox& b) {
  std::ostringstream os;
  os << "(" << b.x << "," << b.y << "," << b.w << "," << b.h << ")";
  return os.str();
}

std::uint32_t read_u32_le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void write_u32_le(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> bytes{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                                  static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(bytes.data(), bytes.size());
}

}  // namespace

bool box_is_valid(const BoundingBox& b) {
  return std::isfinite(b.x) && std::isfinite(b.y) && std::isfinite(b.w) && std::isfinite(b.h) && b.w > 0.0 &&
         b.h > 0.0;
}

bool box_inside(const BoundingBox& b, const ImageSize& img) {
  return b.x >= 0.0 && b.y >= 0.0 && b.right() <= img.width && b.bottom() <= img.height;
}

Vec single_box_spatial(const BoundingBox& b, const ImageSize& img) {
  if (!(img.width > 0.0 && img.height > 0.0)) throw GeometryError("image size must be positive");
  if (!box_is_valid(b)) throw GeometryError("degenerate box " + describe(b));
  if (!box_inside(b, img)) throw GeometryError("box " + describe(b) + " exceeds image bounds");
  return {b.x / img.width, b.y / img.height, b.right() / img.width, b.bottom() / img.height,
          b.area() / (img.width * img.height)};
}

Vec pairwise_spatial(const BoundingBox& subject, const BoundingBox& object) {
  if (!box_is_valid(object)) throw GeometryError("degenerate object box " + describe(object));
  if (!box_is_valid(subject)) throw GeometryError("degenerate subject box " + describe(subject));
  return {(subject.x - object.x) / object.w, (subject.y - object.y) / object.h, std::log(subject.w / object.w),
          std::log(subject.h / object.h)};
}

Vec spatial_feature(const BoundingBox& subject, const BoundingBox& object, const ImageSize& img) {
  Vec out = single_box_spatial(subject, img);
  const Vec obj = single_box_spatial(object, img);
  const Vec pair = pairwise_spatial(subject, object);
  out.insert(out.end(), obj.begin(), obj.end());
  out.insert(out.end(), pair.begin(), pair.end());
  return out;
}

FeatureMap::FeatureMap(std::size_t rows, std::size_t cols, std::size_t channels, std::vector<double> values)
    : rows_(rows), cols_(cols), channels_(channels), values_(std::move(values)) {
  if (rows == 0 || cols == 0 || channels == 0) {
    throw FeatureMapError(FeatureMapError::Kind::BadShape, "feature map dimensions must be at least 1");
  }
  if (values_.size() != rows * cols * channels) {
    throw FeatureMapError(FeatureMapError::Kind::BadShape, "feature map payload size does not match shape");
  }
  if (!all_finite(values_)) {
    throw FeatureMapError(FeatureMapError::Kind::NonFinite, "feature map contains non-finite values");
  }
}

Vec mean_pool(const FeatureMap& fm) {
  Vec out(fm.channels(), 0.0);
  for (std::size_t loc = 0; loc < fm.locations(); ++loc) axpy(1.0, fm.fiber(loc), out);
  const double n = static_cast<double>(fm.locations());
  for (double& v : out) v /= n;
  return out;
}

FeatureMap load_feature_map(std::istream& in) {
  std::array<unsigned char, 16> header{};
  in.read(reinterpret_cast<char*>(header.data()), header.size());
  if (in.gcount() < 4 || std::memcmp(header.data(), "FMAP", 4) != 0) {
    throw FeatureMapError(FeatureMapError::Kind::BadMagic, "feature map: missing FMAP magic");
  }
  if (in.gcount() != static_cast<std::streamsize>(header.size())) {
    throw FeatureMapError(FeatureMapError::Kind::Truncated, "feature map: truncated header");
  }
  const std::uint32_t rows = read_u32_le(header.data() + 4);
  const std::uint32_t cols = read_u32_le(header.data() + 8);
  const std::uint32_t channels = read_u32_le(header.data() + 12);
  if (rows == 0 || cols == 0 || channels == 0) {
    throw FeatureMapError(FeatureMapError::Kind::BadShape, "feature map: zero dimension in header (" +
                                                               std::to_string(rows) + "x" + std::to_string(cols) +
                                                               "x" + std::to_string(channels) + ")");
  }
  const std::size_t count = static_cast<std::size_t>(rows) * cols * channels;
  std::vector<unsigned char> payload(count * 4);
  in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (static_cast<std::size_t>(in.gcount()) != payload.size()) {
    throw FeatureMapError(FeatureMapError::Kind::Truncated, "feature map: payload has " +
                                                                std::to_string(in.gcount() / 4) + " of " +
                                                                std::to_string(count) + " values");
  }
  std::vector<double> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    const float f = std::bit_cast<float>(read_u32_le(payload.data() + 4 * i));
    if (!std::isfinite(f)) {
      throw FeatureMapError(FeatureMapError::Kind::NonFinite,
                            "feature map: non-finite value at index " + std::to_string(i));
    }
    values[i] = static_cast<double>(f);
  }
  return FeatureMap(rows, cols, channels, std::move(values));
}

FeatureMap load_feature_map_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FeatureMapError(FeatureMapError::Kind::Io, "cannot open feature map: " + path);
  try {
    return load_feature_map(in);
  } catch (const FeatureMapError& e) {
    throw FeatureMapError(e.kind(), path + ": " + e.what());
  }
}

void save_feature_map(std::ostream& out, const FeatureMap& fm) {
  out.write("FMAP", 4);
  write_u32_le(out, static_cast<std::uint32_t>(fm.rows()));
  write_u32_le(out, static_cast<std::uint32_t>(fm.cols()));
  write_u32_le(out, static_cast<std::uint32_t>(fm.channels()));
  for (double v : fm.values()) write_u32_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

}  // namespace ctxrel
