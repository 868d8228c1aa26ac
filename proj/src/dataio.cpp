#include "detkit/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <fmt/format.h>

#include "detkit/digest.hpp"

namespace detkit {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

const json& field(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object()) throw SchemaError(fmt::format("{}: expected an object", where));
  const auto it = obj.find(key);
  if (it == obj.end()) throw SchemaError(fmt::format("{}: missing field '{}'", where, key));
  return *it;
}

int64_t int_field(const json& obj, const char* key, const std::string& where) {
  const json& v = field(obj, key, where);
  if (v.is_number_integer()) return v.get<int64_t>();
  if (v.is_number_float()) {
    const double d = v.get<double>();
    if (std::floor(d) == d && std::abs(d) < 9.0e15) return static_cast<int64_t>(d);
  }
  throw SchemaError(fmt::format("{}: field '{}' must be an integer", where, key));
}

double number_field(const json& obj, const char* key, const std::string& where) {
  const json& v = field(obj, key, where);
  if (!v.is_number()) throw SchemaError(fmt::format("{}: field '{}' must be a number", where, key));
  return v.get<double>();
}

std::array<double, 4> bbox_field(const json& obj, const std::string& where) {
  const json& v = field(obj, "bbox", where);
  if (!v.is_array() || v.size() != 4) throw SchemaError(fmt::format("{}: bbox must be [x, y, w, h]", where));
  std::array<double, 4> b{};
  for (std::size_t i = 0; i < 4; ++i) {
    if (!v[i].is_number()) throw SchemaError(fmt::format("{}: bbox entries must be numbers", where));
    b[i] = v[i].get<double>();
    if (!std::isfinite(b[i])) throw SchemaError(fmt::format("{}: bbox entries must be finite", where));
  }
  return b;
}

const json& array_field(const json& doc, const char* key) {
  const auto it = doc.find(key);
  if (it == doc.end()) throw SchemaError(fmt::format("annotation file: missing top-level '{}' array", key));
  if (!it->is_array()) throw SchemaError(fmt::format("annotation file: '{}' must be an array", key));
  return *it;
}

ordered_json number_json(double v) {
  if (std::floor(v) == v && std::abs(v) < 9.0e15) return static_cast<int64_t>(v);
  return v;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataIoError(fmt::format("cannot open '{}' for reading", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw DataIoError(fmt::format("read error on '{}'", path.string()));
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataIoError(fmt::format("cannot open '{}' for writing", path.string()));
  out << text;
  if (!out) throw DataIoError(fmt::format("write error on '{}'", path.string()));
}

double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace

json read_json_file(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw MalformedJsonError(fmt::format("'{}': malformed JSON at byte {}: {}", path.string(), e.byte, e.what()),
                             e.byte);
  }
}

AnnotationSet parse_annotations(const json& doc) {
  if (!doc.is_object()) throw SchemaError("annotation file: top level must be an object");
  AnnotationSet set;
  const json& images = array_field(doc, "images");
  for (std::size_t i = 0; i < images.size(); ++i) {
    const std::string where = fmt::format("images[{}]", i);
    ImageRecord r;
    r.id = int_field(images[i], "id", where);
    const json& name = field(images[i], "file_name", where);
    if (!name.is_string()) throw SchemaError(where + ": file_name must be a string");
    r.file_name = name.get<std::string>();
    r.width = number_field(images[i], "width", where);
    r.height = number_field(images[i], "height", where);
    set.images.push_back(std::move(r));
  }
  const json& anns = array_field(doc, "annotations");
  for (std::size_t i = 0; i < anns.size(); ++i) {
    const std::string where = fmt::format("annotations[{}]", i);
    AnnotationRecord r;
    r.id = int_field(anns[i], "id", where);
    r.image_id = int_field(anns[i], "image_id", where);
    r.category_id = int_field(anns[i], "category_id", where);
    r.bbox = bbox_field(anns[i], where);
    if (const auto a = anns[i].find("area"); a != anns[i].end() && !a->is_null()) {
      if (!a->is_number()) throw SchemaError(where + ": area must be a number");
      r.area = a->get<double>();
    }
    if (const auto c = anns[i].find("iscrowd"); c != anns[i].end()) {
      const bool crowd = c->is_boolean() ? c->get<bool>() : (c->is_number() && c->get<double>() != 0.0);
      if (crowd) {
        throw SchemaError(where + ": crowd annotations (iscrowd != 0) are not supported by this toolkit");
      }
    }
    set.annotations.push_back(r);
  }
  const json& cats = array_field(doc, "categories");
  for (std::size_t i = 0; i < cats.size(); ++i) {
    const std::string where = fmt::format("categories[{}]", i);
    CategoryRecord r;
    r.id = int_field(cats[i], "id", where);
    if (const auto n = cats[i].find("name"); n != cats[i].end() && n->is_string()) r.name = n->get<std::string>();
    set.categories.push_back(std::move(r));
  }
  return set;
}

AnnotationSet load_annotations(const std::filesystem::path& path) {
  const json doc = read_json_file(path);
  try {
    return parse_annotations(doc);
  } catch (const SchemaError& e) {
    throw SchemaError(fmt::format("'{}': {}", path.string(), e.what()));
  }
}

ordered_json to_json(const AnnotationSet& set) {
  ordered_json doc;
  ordered_json images = ordered_json::array();
  for (const auto& r : set.images) {
    ordered_json o;
    o["id"] = r.id;
    o["file_name"] = r.file_name;
    o["width"] = number_json(r.width);
    o["height"] = number_json(r.height);
    images.push_back(std::move(o));
  }
  ordered_json anns = ordered_json::array();
  for (const auto& r : set.annotations) {
    ordered_json o;
    o["id"] = r.id;
    o["image_id"] = r.image_id;
    o["category_id"] = r.category_id;
    o["bbox"] = ordered_json::array();
    for (double v : r.bbox) o["bbox"].push_back(v);
    if (r.area) o["area"] = *r.area;
    anns.push_back(std::move(o));
  }
  ordered_json cats = ordered_json::array();
  for (const auto& r : set.categories) {
    ordered_json o;
    o["id"] = r.id;
    o["name"] = r.name;
    cats.push_back(std::move(o));
  }
  doc["images"] = std::move(images);
  doc["annotations"] = std::move(anns);
  doc["categories"] = std::move(cats);
  return doc;
}

void save_annotations(const AnnotationSet& set, const std::filesystem::path& path) {
  write_file(path, to_json(set).dump(2) + "\n");
}

std::string content_digest(const AnnotationSet& set) { return sha256_hex(to_json(set).dump()); }

GroundTruthSet to_ground_truth(const AnnotationSet& set) {
  GroundTruthSet gt;
  std::unordered_set<int64_t> image_ids;
  std::unordered_set<int64_t> cat_ids;
  for (const auto& im : set.images) {
    if (image_ids.insert(im.id).second) gt.image_ids.push_back(im.id);
  }
  for (const auto& c : set.categories) {
    if (cat_ids.insert(c.id).second) gt.category_ids.push_back(c.id);
  }
  for (const auto& a : set.annotations) {
    if (!image_ids.contains(a.image_id)) {
      throw SchemaError(fmt::format("annotation {} refers to unknown image {}", a.id, a.image_id));
    }
    if (!cat_ids.contains(a.category_id)) {
      throw SchemaError(fmt::format("annotation {} refers to unknown category {}", a.id, a.category_id));
    }
    const auto& b = a.bbox;
    if (b[2] < 0.0 || b[3] < 0.0) throw SchemaError(fmt::format("annotation {} has a negative box extent", a.id));
    GroundTruth g;
    g.box = BBox::from_xywh(b[0], b[1], b[2], b[3]);
    g.class_id = a.category_id;
    g.image_id = a.image_id;
    g.area = a.area.value_or(area(g.box));
    gt.gts.push_back(g);
  }
  return gt;
}

std::vector<Detection> parse_detections(const json& doc) {
  if (!doc.is_array()) throw SchemaError("result file: top level must be an array of detections");
  std::vector<Detection> out;
  out.reserve(doc.size());
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const std::string where = fmt::format("results[{}]", i);
    Detection d;
    d.image_id = int_field(doc[i], "image_id", where);
    d.class_id = int_field(doc[i], "category_id", where);
    const auto b = bbox_field(doc[i], where);
    if (b[2] < 0.0 || b[3] < 0.0) throw SchemaError(where + ": bbox width and height must be non-negative");
    d.box = BBox::from_xywh(b[0], b[1], b[2], b[3]);
    d.score = number_field(doc[i], "score", where);
    if (!(d.score >= 0.0 && d.score <= 1.0)) throw SchemaError(fmt::format("{}: score {} outside [0, 1]", where, d.score));
    out.push_back(d);
  }
  return out;
}

std::vector<Detection> load_detections(const std::filesystem::path& path) {
  const json doc = read_json_file(path);
  try {
    return parse_detections(doc);
  } catch (const SchemaError& e) {
    throw SchemaError(fmt::format("'{}': {}", path.string(), e.what()));
  }
}

ordered_json detections_to_json(std::span<const Detection> dets) {
  ordered_json out = ordered_json::array();
  for (const auto& d : dets) {
    ordered_json o;
    o["image_id"] = d.image_id;
    o["category_id"] = d.class_id;
    o["bbox"] = {d.box.x1, d.box.y1, d.box.width(), d.box.height()};
    o["score"] = d.score;
    out.push_back(std::move(o));
  }
  return out;
}

const char* defect_name(DefectKind kind) {
  switch (kind) {
    case DefectKind::kOrphanAnnotation:
      return "orphan_annotation";
    case DefectKind::kDuplicateImageId:
      return "duplicate_image_id";
    case DefectKind::kOutOfBounds:
      return "out_of_bounds_box";
    case DefectKind::kDegenerateBox:
      return "degenerate_box";
    case DefectKind::kUnknownCategory:
      return "unknown_category";
    case DefectKind::kMissingImage:
      return "missing_image";
  }
  return "unknown";
}

ImageCheck image_exists_under(std::filesystem::path root) {
  return [root = std::move(root)](const ImageRecord& im) {
    std::error_code ec;
    return std::filesystem::is_regular_file(root / im.file_name, ec);
  };
}

ValidationReport validate(const AnnotationSet& set, const ImageCheck& image_check) {
  ValidationReport r;
  r.source_digest = content_digest(set);
  auto flag = [&](DefectKind kind, const char* type, int64_t id, std::size_t index, std::size_t& counter) {
    r.offenders.push_back({kind, type, id, index});
    ++counter;
  };

  // First record wins for image geometry lookups.
  std::unordered_map<int64_t, const ImageRecord*> image_by_id;
  for (std::size_t i = 0; i < set.images.size(); ++i) {
    const ImageRecord& im = set.images[i];
    if (!image_by_id.emplace(im.id, &im).second) {
      flag(DefectKind::kDuplicateImageId, "image", im.id, i, r.duplicate_image_ids);
    }
    if (image_check && !image_check(im)) flag(DefectKind::kMissingImage, "image", im.id, i, r.missing_images);
  }
  std::unordered_set<int64_t> cat_ids;
  for (const auto& c : set.categories) cat_ids.insert(c.id);

  for (std::size_t i = 0; i < set.annotations.size(); ++i) {
    const AnnotationRecord& a = set.annotations[i];
    const auto [x, y, w, h] = a.bbox;
    const auto im = image_by_id.find(a.image_id);
    if (im == image_by_id.end()) {
      flag(DefectKind::kOrphanAnnotation, "annotation", a.id, i, r.orphan_annotations);
    } else if (x < 0.0 || y < 0.0 || x + w > im->second->width || y + h > im->second->height) {
      flag(DefectKind::kOutOfBounds, "annotation", a.id, i, r.out_of_bounds_boxes);
    }
    if (w <= 0.0 || h <= 0.0) flag(DefectKind::kDegenerateBox, "annotation", a.id, i, r.degenerate_boxes);
    if (!cat_ids.contains(a.category_id)) {
      flag(DefectKind::kUnknownCategory, "annotation", a.id, i, r.unknown_categories);
    }
  }

  std::stable_sort(r.offenders.begin(), r.offenders.end(), [](const Defect& a, const Defect& b) {
    return std::tie(a.record_type, a.record_index, a.kind) < std::tie(b.record_type, b.record_index, b.kind);
  });
  return r;
}

AnnotationSet clean(const AnnotationSet& set, const ValidationReport& report) {
  if (report.source_digest != content_digest(set)) {
    throw StaleReportError("validation report was produced from a different annotation set; re-run validate");
  }
  std::vector<bool> drop_image(set.images.size(), false);
  std::vector<bool> drop_ann(set.annotations.size(), false);
  for (const Defect& d : report.offenders) {
    auto& mask = d.record_type == "image" ? drop_image : drop_ann;
    if (d.record_index >= mask.size()) throw StaleReportError("validation report refers to a missing record");
    mask[d.record_index] = true;
  }

  AnnotationSet out;
  out.categories = set.categories;
  std::unordered_set<int64_t> kept_ids;
  for (std::size_t i = 0; i < set.images.size(); ++i) {
    if (drop_image[i]) continue;
    out.images.push_back(set.images[i]);
    kept_ids.insert(set.images[i].id);
  }
  for (std::size_t i = 0; i < set.annotations.size(); ++i) {
    if (drop_ann[i] || !kept_ids.contains(set.annotations[i].image_id)) continue;
    out.annotations.push_back(set.annotations[i]);
  }
  return out;
}

ordered_json to_json(const ValidationReport& report) {
  ordered_json o;
  o["source_digest"] = report.source_digest;
  ordered_json counts;
  counts["orphan_annotations"] = report.orphan_annotations;
  counts["duplicate_image_ids"] = report.duplicate_image_ids;
  counts["out_of_bounds_boxes"] = report.out_of_bounds_boxes;
  counts["degenerate_boxes"] = report.degenerate_boxes;
  counts["unknown_categories"] = report.unknown_categories;
  counts["missing_images"] = report.missing_images;
  o["counts"] = std::move(counts);
  o["total"] = report.total();
  ordered_json offenders = ordered_json::array();
  for (const Defect& d : report.offenders) {
    ordered_json e;
    e["defect"] = defect_name(d.kind);
    e["record_type"] = d.record_type;
    e["record_id"] = d.record_id;
    e["record_index"] = d.record_index;
    offenders.push_back(std::move(e));
  }
  o["offenders"] = std::move(offenders);
  return o;
}

std::vector<BBox> hflip_boxes(std::span<const BBox> boxes, double image_width) {
  if (!(image_width > 0.0)) throw std::invalid_argument(fmt::format("image width must be positive, got {}", image_width));
  std::vector<BBox> out;
  out.reserve(boxes.size());
  for (const BBox& b : boxes) out.push_back({image_width - b.x2, b.y1, image_width - b.x1, b.y2});
  return out;
}

std::vector<BBox> scale_boxes(std::span<const BBox> boxes, double factor) {
  if (!(factor > 0.0) || !std::isfinite(factor)) {
    throw std::invalid_argument(fmt::format("scale factor must be positive and finite, got {}", factor));
  }
  std::vector<BBox> out;
  out.reserve(boxes.size());
  for (const BBox& b : boxes) out.push_back({b.x1 * factor, b.y1 * factor, b.x2 * factor, b.y2 * factor});
  return out;
}

std::vector<BBox> jitter_boxes(std::span<const BBox> boxes, uint64_t seed, double magnitude, double image_width,
                               double image_height) {
  if (!(magnitude >= 0.0)) throw std::invalid_argument(fmt::format("jitter magnitude must be >= 0, got {}", magnitude));
  if (!(image_width > 0.0 && image_height > 0.0)) throw std::invalid_argument("image size must be positive");
  if (magnitude == 0.0) return {boxes.begin(), boxes.end()};
  std::mt19937_64 rng(seed);
  auto noise = [&] { return magnitude * (2.0 * unit_uniform(rng) - 1.0); };
  std::vector<BBox> out;
  out.reserve(boxes.size());
  for (const BBox& b : boxes) {
    const double x1 = std::clamp(b.x1 + noise(), 0.0, image_width);
    const double y1 = std::clamp(b.y1 + noise(), 0.0, image_height);
    const double x2 = std::clamp(b.x2 + noise(), 0.0, image_width);
    const double y2 = std::clamp(b.y2 + noise(), 0.0, image_height);
    out.push_back({std::min(x1, x2), std::min(y1, y2), std::max(x1, x2), std::max(y1, y2)});
  }
  return out;
}

}  // namespace detkit
