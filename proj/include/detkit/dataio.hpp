#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "detkit/detection.hpp"
#include "detkit/eval.hpp"

namespace detkit {

class DataIoError : public std::runtime_error {
 public:
  explicit DataIoError(const std::string& what) : std::runtime_error(what) {}
};

/// Unparseable JSON. `byte_offset` points at the failing byte.
class MalformedJsonError : public DataIoError {
 public:
  MalformedJsonError(const std::string& what, std::size_t byte_offset)
      : DataIoError(what), byte_offset_(byte_offset) {}
  std::size_t byte_offset() const { return byte_offset_; }

 private:
  std::size_t byte_offset_;
};

/// Well-formed JSON that does not follow the expected schema.
class SchemaError : public DataIoError {
 public:
  explicit SchemaError(const std::string& what) : DataIoError(what) {}
};

class StaleReportError : public std::logic_error {
 public:
  explicit StaleReportError(const std::string& what) : std::logic_error(what) {}
};

struct ImageRecord {
  int64_t id = 0;
  std::string file_name;
  double width = 0.0;
  double height = 0.0;

  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

struct AnnotationRecord {
  int64_t id = 0;
  int64_t image_id = 0;
  int64_t category_id = 0;
  /// [x, y, w, h] as stored; w or h may be non-positive in dirty files.
  std::array<double, 4> bbox{};
  /// Annotated area when present in the file.
  std::optional<double> area;

  friend bool operator==(const AnnotationRecord&, const AnnotationRecord&) = default;
};

struct CategoryRecord {
  int64_t id = 0;
  std::string name;

  friend bool operator==(const CategoryRecord&, const CategoryRecord&) = default;
};

/// COCO object-detection annotation file. Referential problems (orphans,
/// duplicate ids, unknown categories) are kept as loaded; `validate` reports
/// them.
struct AnnotationSet {
  std::vector<ImageRecord> images;
  std::vector<AnnotationRecord> annotations;
  std::vector<CategoryRecord> categories;

  friend bool operator==(const AnnotationSet&, const AnnotationSet&) = default;
};

AnnotationSet parse_annotations(const nlohmann::json& doc);
AnnotationSet load_annotations(const std::filesystem::path& path);
nlohmann::ordered_json to_json(const AnnotationSet& set);
void save_annotations(const AnnotationSet& set, const std::filesystem::path& path);

/// Stable SHA-256 of the canonical serialization.
std::string content_digest(const AnnotationSet& set);

/// Ground truth for evaluation. Annotation area falls back to the box area.
/// Throws SchemaError on references that evaluation cannot resolve.
GroundTruthSet to_ground_truth(const AnnotationSet& set);

/// Result file: array of {image_id, category_id, bbox: [x, y, w, h], score}.
std::vector<Detection> parse_detections(const nlohmann::json& doc);
std::vector<Detection> load_detections(const std::filesystem::path& path);
nlohmann::ordered_json detections_to_json(std::span<const Detection> dets);

/// Reads and parses a JSON file, mapping failures to DataIoError /
/// MalformedJsonError.
nlohmann::json read_json_file(const std::filesystem::path& path);

enum class DefectKind {
  kOrphanAnnotation,
  kDuplicateImageId,
  kOutOfBounds,
  kDegenerateBox,
  kUnknownCategory,
  kMissingImage,
};

const char* defect_name(DefectKind kind);

struct Defect {
  DefectKind kind;
  /// "image" or "annotation".
  std::string record_type;
  int64_t record_id = 0;
  /// Position in the images or annotations array; tells duplicate image
  /// records apart.
  std::size_t record_index = 0;

  friend bool operator==(const Defect&, const Defect&) = default;
};

struct ValidationReport {
  std::size_t orphan_annotations = 0;
  std::size_t duplicate_image_ids = 0;
  std::size_t out_of_bounds_boxes = 0;
  std::size_t degenerate_boxes = 0;
  std::size_t unknown_categories = 0;
  std::size_t missing_images = 0;
  /// Sorted by (record type, record index, kind). A record flagged for
  /// several reasons appears once per reason.
  std::vector<Defect> offenders;
  /// Digest of the set this report describes.
  std::string source_digest;

  std::size_t total() const {
    return orphan_annotations + duplicate_image_ids + out_of_bounds_boxes + degenerate_boxes + unknown_categories +
           missing_images;
  }
  bool clean() const { return total() == 0; }
};

/// Returns false for image records whose file is missing or does not match.
using ImageCheck = std::function<bool(const ImageRecord&)>;

/// Checks that `root / file_name` exists as a regular file.
ImageCheck image_exists_under(std::filesystem::path root);

ValidationReport validate(const AnnotationSet& set, const ImageCheck& image_check = {});

/// Drops every flagged record. Flagged images take their annotations with
/// them; of several records sharing an image id only the first is kept.
/// Throws StaleReportError when `report` was produced from a different set.
AnnotationSet clean(const AnnotationSet& set, const ValidationReport& report);

nlohmann::ordered_json to_json(const ValidationReport& report);

// Box-space augmentation.

std::vector<BBox> hflip_boxes(std::span<const BBox> boxes, double image_width);
std::vector<BBox> scale_boxes(std::span<const BBox> boxes, double factor);

/// Adds seeded uniform noise in [-magnitude, magnitude] to every coordinate,
/// clips to [0, width] x [0, height] and reorders corners when they cross.
std::vector<BBox> jitter_boxes(std::span<const BBox> boxes, uint64_t seed, double magnitude, double image_width,
                               double image_height);

}  // namespace detkit
