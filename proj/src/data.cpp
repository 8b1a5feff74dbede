#include "ctxrel/data.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

namespace ctxrel {

using nlohmann::json;

namespace {

std::string image_context(const std::string& id) { return "image '" + id + "'"; }

const json& require(const json& obj, const char* key, const std::string& where) {
  const auto it = obj.find(key);
  if (it == obj.end()) throw DatasetError(where + ": missing field '" + key + "'");
  return *it;
}

double number(const json& obj, const char* key, const std::string& where) {
  const json& v = require(obj, key, where);
  if (!v.is_number()) throw DatasetError(where + ": field '" + key + "' must be a number");
  return v.get<double>();
}

std::size_t index_field(const json& obj, const char* key, const std::string& where) {
  const json& v = require(obj, key, where);
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw DatasetError(where + ": field '" + key + "' must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

std::string text(const json& obj, const char* key, const std::string& where) {
  const json& v = require(obj, key, where);
  if (!v.is_string()) throw DatasetError(where + ": field '" + key + "' must be a string");
  return v.get<std::string>();
}

BoundingBox box_of(const json& obj, const std::string& where) {
  return {number(obj, "x", where), number(obj, "y", where), number(obj, "w", where), number(obj, "h", where)};
}

json box_json(json obj, const BoundingBox& b) {
  obj["x"] = b.x;
  obj["y"] = b.y;
  obj["w"] = b.w;
  obj["h"] = b.h;
  return obj;
}

std::string describe(const BoundingBox& b) {
  std::ostringstream os;
  os << "(" << b.x << "," << b.y << "," << b.w << "," << b.h << ")";
  return os.str();
}

}  // namespace

std::size_t Dataset::relationship_count() const {
  std::size_t n = 0;
  for (const auto& img : images) n += img.relationships.size();
  return n;
}

std::size_t Dataset::predicate_index(std::string_view name) const {
  const auto it = std::lower_bound(predicates.begin(), predicates.end(), name);
  if (it == predicates.end() || *it != name) return kNoIndex;
  return static_cast<std::size_t>(it - predicates.begin());
}

bool Dataset::has_detections() const {
  return std::any_of(images.begin(), images.end(), [](const auto& img) { return !img.detections.empty(); });
}

std::string normalize_label(std::string_view raw) {
  std::string out;
  bool pending_space = false;
  for (char ch : raw) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back('_');
    pending_space = false;
    out.push_back(ch);
  }
  return out;
}

void refresh_vocabulary(Dataset& dataset) {
  std::set<std::string> labels;
  for (const auto& img : dataset.images) {
    for (const auto& obj : img.objects) labels.insert(obj.label);
    for (const auto& det : img.detections) labels.insert(det.label);
  }
  dataset.object_labels.assign(labels.begin(), labels.end());
}

Dataset load_dataset(std::istream& in) {
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw DatasetError(std::string("annotation is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw DatasetError("annotation root must be an object");
  const json& version = require(doc, "version", "annotation");
  if (!version.is_number_integer() || version.get<int>() != kDatasetSchemaVersion) {
    throw DatasetError("unsupported annotation version (expected " + std::to_string(kDatasetSchemaVersion) + ")");
  }

  const json& preds = require(doc, "predicates", "annotation");
  if (!preds.is_array()) throw DatasetError("annotation: 'predicates' must be an array");
  std::vector<std::string> declared;
  for (const json& p : preds) {
    if (!p.is_string()) throw DatasetError("annotation: predicate names must be strings");
    declared.push_back(normalize_label(p.get<std::string>()));
  }

  Dataset ds;
  std::set<std::string> unique(declared.begin(), declared.end());
  ds.predicates.assign(unique.begin(), unique.end());

  const json& images = require(doc, "images", "annotation");
  if (!images.is_array()) throw DatasetError("annotation: 'images' must be an array");
  for (std::size_t n = 0; n < images.size(); ++n) {
    const json& jimg = images[n];
    ImageAnnotation img;
    const std::string fallback_where = "image #" + std::to_string(n);
    img.id = text(jimg, "id", fallback_where);
    const std::string where = image_context(img.id);
    img.size = {number(jimg, "width", where), number(jimg, "height", where)};

    if (const auto it = jimg.find("objects"); it != jimg.end()) {
      for (const json& jo : *it) img.objects.push_back({normalize_label(text(jo, "label", where)), box_of(jo, where)});
    }
    if (const auto it = jimg.find("relationships"); it != jimg.end()) {
      for (const json& jr : *it) {
        Relationship rel;
        rel.subject = index_field(jr, "s", where);
        rel.object = index_field(jr, "o", where);
        const json& p = require(jr, "p", where);
        if (p.is_string()) {
          const std::string name = normalize_label(p.get<std::string>());
          rel.predicate = ds.predicate_index(name);
          if (rel.predicate == kNoIndex) throw DatasetError(where + ": unknown predicate '" + name + "'");
        } else if (p.is_number_integer() && p.get<long long>() >= 0) {
          const auto idx = p.get<std::size_t>();
          if (idx >= declared.size()) {
            throw DatasetError(where + ": predicate index " + std::to_string(idx) + " out of range (" +
                               std::to_string(declared.size()) + " predicates)");
          }
          rel.predicate = ds.predicate_index(declared[idx]);
        } else {
          throw DatasetError(where + ": field 'p' must be a predicate index or name");
        }
        if (const auto f = jr.find("fmap"); f != jr.end()) rel.feature_map = f->get<std::string>();
        img.relationships.push_back(std::move(rel));
      }
    }
    if (const auto it = jimg.find("detections"); it != jimg.end()) {
      for (const json& jd : *it) {
        img.detections.push_back({normalize_label(text(jd, "label", where)), box_of(jd, where),
                                  number(jd, "score", where)});
      }
    }
    if (const auto it = jimg.find("detection_fmaps"); it != jimg.end()) {
      for (const json& jf : *it) {
        img.detection_features.push_back(
            {index_field(jf, "s", where), index_field(jf, "o", where), text(jf, "fmap", where)});
      }
    }
    ds.images.push_back(std::move(img));
  }
  refresh_vocabulary(ds);

  const auto violations = validate(ds);
  if (!violations.empty()) {
    std::string msg = image_context(violations.front().image_id) + ": " + violations.front().message;
    if (violations.size() > 1) msg += " (and " + std::to_string(violations.size() - 1) + " more violations)";
    throw DatasetError(msg);
  }
  return ds;
}

Dataset load_dataset_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open annotation file: " + path);
  try {
    return load_dataset(in);
  } catch (const DatasetError& e) {
    throw DatasetError(path + ": " + e.what());
  }
}

void save_dataset(std::ostream& out, const Dataset& ds) {
  json doc;
  doc["version"] = kDatasetSchemaVersion;
  doc["predicates"] = ds.predicates;
  json images = json::array();
  for (const auto& img : ds.images) {
    json jimg;
    jimg["id"] = img.id;
    jimg["width"] = img.size.width;
    jimg["height"] = img.size.height;
    json objects = json::array();
    for (const auto& obj : img.objects) objects.push_back(box_json({{"label", obj.label}}, obj.box));
    jimg["objects"] = std::move(objects);
    json rels = json::array();
    for (const auto& rel : img.relationships) {
      json jr{{"s", rel.subject}, {"p", rel.predicate}, {"o", rel.object}};
      if (!rel.feature_map.empty()) jr["fmap"] = rel.feature_map;
      rels.push_back(std::move(jr));
    }
    jimg["relationships"] = std::move(rels);
    if (!img.detections.empty()) {
      json dets = json::array();
      for (const auto& d : img.detections) {
        json jd = box_json({{"label", d.label}}, d.box);
        jd["score"] = d.objectness;
        dets.push_back(std::move(jd));
      }
      jimg["detections"] = std::move(dets);
    }
    if (!img.detection_features.empty()) {
      json feats = json::array();
      for (const auto& f : img.detection_features) feats.push_back({{"s", f.subject}, {"o", f.object}, {"fmap", f.feature_map}});
      jimg["detection_fmaps"] = std::move(feats);
    }
    images.push_back(std::move(jimg));
  }
  doc["images"] = std::move(images);
  out << doc.dump(1) << '\n';
}

std::vector<Violation> validate(const Dataset& ds) {
  std::vector<Violation> out;
  std::set<std::string> seen_ids;
  for (const auto& img : ds.images) {
    auto flag = [&](std::string msg) { out.push_back({img.id, std::move(msg)}); };
    if (!seen_ids.insert(img.id).second) flag("duplicate image id");
    if (!(img.size.width > 0.0 && img.size.height > 0.0)) flag("image size must be positive");

    auto check_box = [&](const BoundingBox& b, const std::string& what) {
      if (!box_is_valid(b)) {
        flag(what + " has degenerate box " + describe(b));
      } else if (!box_inside(b, img.size)) {
        flag(what + " box " + describe(b) + " exceeds image bounds");
      }
    };
    for (std::size_t i = 0; i < img.objects.size(); ++i) {
      if (img.objects[i].label.empty()) flag("object " + std::to_string(i) + " has an empty label");
      check_box(img.objects[i].box, "object " + std::to_string(i));
    }
    for (std::size_t r = 0; r < img.relationships.size(); ++r) {
      const auto& rel = img.relationships[r];
      const std::string what = "relationship " + std::to_string(r);
      if (rel.subject >= img.objects.size()) flag(what + ": subject index " + std::to_string(rel.subject) + " out of range");
      if (rel.object >= img.objects.size()) flag(what + ": object index " + std::to_string(rel.object) + " out of range");
      if (rel.subject == rel.object) flag(what + ": subject and object are the same object");
      if (rel.predicate >= ds.predicates.size()) {
        flag(what + ": predicate index " + std::to_string(rel.predicate) + " out of range");
      }
    }
    for (std::size_t i = 0; i < img.detections.size(); ++i) {
      const auto& d = img.detections[i];
      check_box(d.box, "detection " + std::to_string(i));
      if (!(d.objectness >= 0.0 && d.objectness <= 1.0)) {
        flag("detection " + std::to_string(i) + " objectness outside [0, 1]");
      }
    }
    for (const auto& f : img.detection_features) {
      if (f.subject >= img.detections.size() || f.object >= img.detections.size()) {
        flag("detection feature map refers to a missing detection");
      }
    }
  }
  return out;
}

TripletType triplet_of(const Dataset& ds, const ImageAnnotation& image, const Relationship& rel) {
  return {image.objects.at(rel.subject).label, ds.predicates.at(rel.predicate), image.objects.at(rel.object).label};
}

std::set<TripletType> split_triplet_types(const Dataset& ds) {
  std::set<TripletType> types;
  for (const auto& img : ds.images) {
    for (const auto& rel : img.relationships) types.insert(triplet_of(ds, img, rel));
  }
  return types;
}

}  // namespace ctxrel
