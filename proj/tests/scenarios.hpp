#pragma once

// Synthetic annotation sets shared by the dataio, CLI and acceptance tests.

#include <algorithm>
#include <random>
#include <set>
#include <string>

#include <fmt/format.h>

#include "detkit/dataio.hpp"

namespace detkit::scenario {

/// Consistent set: `images` 640x480 images, 1-4 in-bounds boxes each.
inline AnnotationSet clean_set(uint64_t seed, int images) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> n_box(1, 4), cls(1, 3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  AnnotationSet s;
  s.categories = {{1, "person"}, {2, "car"}, {3, "dog"}};
  int64_t ann_id = 1;
  for (int i = 1; i <= images; ++i) {
    s.images.push_back({i, fmt::format("{:06d}.jpg", i), 640, 480});
    const int n = n_box(rng);
    for (int b = 0; b < n; ++b) {
      const double w = 10 + u(rng) * 200, h = 10 + u(rng) * 200;
      const double x = u(rng) * (640 - w), y = u(rng) * (480 - h);
      s.annotations.push_back({ann_id++, i, cls(rng), {x, y, w, h}, w * h});
    }
  }
  return s;
}

/// `corrupt` of the image records point at files that are not on disk.
struct CorruptScenario {
  AnnotationSet set;
  std::set<std::string> files_on_disk;
  std::set<int64_t> corrupt_ids;

  ImageCheck check() const {
    return [this](const ImageRecord& im) { return files_on_disk.contains(im.file_name); };
  }
};

inline CorruptScenario corrupt_scenario(uint64_t seed, int images = 120, int corrupt = 30) {
  CorruptScenario sc;
  sc.set = clean_set(seed, images);
  std::vector<int64_t> ids;
  for (const auto& im : sc.set.images) ids.push_back(im.id);
  std::mt19937_64 rng(seed ^ 0x5eed);
  std::shuffle(ids.begin(), ids.end(), rng);
  sc.corrupt_ids.insert(ids.begin(), ids.begin() + corrupt);
  for (auto& im : sc.set.images) {
    if (sc.corrupt_ids.contains(im.id)) {
      im.file_name = fmt::format("renamed/{:06d}.jpg", im.id);
    }
  }
  for (const auto& im : sc.set.images) {
    if (!sc.corrupt_ids.contains(im.id)) sc.files_on_disk.insert(im.file_name);
  }
  return sc;
}

}  // namespace detkit::scenario
