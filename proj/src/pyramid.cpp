#include "detkit/pyramid.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

#include <fmt/format.h>
#include "json.hpp"

#include "detkit/parallel.hpp"

namespace detkit {
namespace {

// 53 random bits mapped to [0, 1); std::uniform_real_distribution is not
// specified bit-for-bit across standard libraries.
double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * unit_uniform(rng); }

ConvKernel random_kernel(std::mt19937_64& rng, int out, int in, int size) {
  ConvKernel k = ConvKernel::zeros(out, in, size);
  for (double& v : k.w) v = uniform(rng, -0.1, 0.1);
  return k;
}

void check_levels(const Pyramid& p, const char* name) {
  for (int i = 0; i < kNumLevels; ++i) {
    const FeatureMap& m = p[i];
    const int level = kMinLevel + i;
    if (m.level != level) {
      throw ShapeError(fmt::format("{}: slot {} holds level {}, expected level {}", name, i, m.level, level));
    }
    if (m.channels <= 0 || m.height <= 0 || m.width <= 0) {
      throw ShapeError(fmt::format("{}{}: non-positive shape {}x{}x{}", name, level, m.channels, m.height, m.width));
    }
    if (m.data.size() != static_cast<std::size_t>(m.channels) * m.height * m.width) {
      throw ShapeError(fmt::format("{}{}: data length {} does not match shape", name, level, m.data.size()));
    }
    if (i > 0) {
      const FeatureMap& finer = p[i - 1];
      if (finer.height != 2 * m.height) {
        throw ShapeError(fmt::format("{}{}: height {} is not half of level {} height {}", name, level, m.height,
                                     level - 1, finer.height));
      }
      if (finer.width != 2 * m.width) {
        throw ShapeError(fmt::format("{}{}: width {} is not half of level {} width {}", name, level, m.width,
                                     level - 1, finer.width));
      }
    }
  }
}

void add_inplace(FeatureMap& dst, const FeatureMap& src, const char* what) {
  if (!dst.same_shape(src)) {
    throw ShapeError(fmt::format("{} at level {}: cannot add {}x{}x{} to {}x{}x{}", what, dst.level, src.channels,
                                 src.height, src.width, dst.channels, dst.height, dst.width));
  }
  for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

void activate(FeatureMap& m, Activation a) {
  if (a == Activation::kRelu) {
    for (double& v : m.data) v = std::max(v, 0.0);
  }
}

FeatureMap with_level(FeatureMap m, int level) {
  m.level = level;
  return m;
}

void put_f64_le(std::ostream& out, double v) {
  uint64_t bits = std::bit_cast<uint64_t>(v);
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(bytes), 8);
}

double get_f64_le(std::istream& in) {
  unsigned char bytes[8];
  if (!in.read(reinterpret_cast<char*>(bytes), 8)) throw std::runtime_error("tensor dump truncated");
  uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(bytes[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

FeatureMap::FeatureMap(int level_, int channels_, int height_, int width_)
    : level(level_),
      channels(channels_),
      height(height_),
      width(width_),
      data(static_cast<std::size_t>(channels_) * height_ * width_, 0.0) {}

ConvKernel ConvKernel::zeros(int out_channels, int in_channels, int size) {
  ConvKernel k;
  k.out_channels = out_channels;
  k.in_channels = in_channels;
  k.size = size;
  k.w.assign(static_cast<std::size_t>(out_channels) * in_channels * size * size, 0.0);
  return k;
}

ConvKernel ConvKernel::identity(int channels, int size) {
  ConvKernel k = zeros(channels, channels, size);
  for (int c = 0; c < channels; ++c) k.at(c, c, size / 2, size / 2) = 1.0;
  return k;
}

PyramidWeights PyramidWeights::generate(uint64_t seed, std::span<const int> in_channels, int width) {
  if (in_channels.size() != static_cast<std::size_t>(kNumLevels)) {
    throw ShapeError(fmt::format("expected {} input channel counts, got {}", kNumLevels, in_channels.size()));
  }
  if (width <= 0) throw ShapeError(fmt::format("pyramid width must be positive, got {}", width));
  std::mt19937_64 rng(seed);
  PyramidWeights w;
  w.width = width;
  for (int i = 0; i < kNumLevels; ++i) {
    if (in_channels[i] <= 0) {
      throw ShapeError(fmt::format("C{}: channel count must be positive, got {}", kMinLevel + i, in_channels[i]));
    }
    w.lateral[i] = random_kernel(rng, width, in_channels[i], 1);
  }
  for (auto& k : w.smooth) k = random_kernel(rng, width, width, 3);
  for (auto& k : w.downsample) k = random_kernel(rng, width, width, 3);
  for (auto& k : w.pa_smooth) k = random_kernel(rng, width, width, 3);
  return w;
}

void PyramidWeights::sever_bottom_up() {
  for (auto& k : downsample) k = ConvKernel::zeros(width, width, 3);
  for (auto& k : pa_smooth) k = ConvKernel::identity(width, 3);
}

void PyramidWeights::set_identity_smoothing() {
  for (auto& k : smooth) k = ConvKernel::identity(width, 3);
  for (auto& k : pa_smooth) k = ConvKernel::identity(width, 3);
}

FeatureMap conv2d(const FeatureMap& input, const ConvKernel& kernel, int stride, int padding, unsigned threads) {
  if (kernel.in_channels != input.channels) {
    throw ShapeError(fmt::format("level {}: kernel expects {} input channels, feature map has {}", input.level,
                                 kernel.in_channels, input.channels));
  }
  if (stride <= 0 || padding < 0) throw ShapeError("conv2d: stride must be positive and padding non-negative");
  const int k = kernel.size;
  const int out_h = (input.height + 2 * padding - k) / stride + 1;
  const int out_w = (input.width + 2 * padding - k) / stride + 1;
  if (out_h <= 0 || out_w <= 0) {
    throw ShapeError(fmt::format("level {}: {}x{} input too small for {}x{} kernel", input.level, input.height,
                                 input.width, k, k));
  }
  FeatureMap out(input.level, kernel.out_channels, out_h, out_w);
  parallel_for(static_cast<std::size_t>(kernel.out_channels), threads, [&](std::size_t oc) {
    const int o = static_cast<int>(oc);
    for (int oy = 0; oy < out_h; ++oy) {
      for (int ox = 0; ox < out_w; ++ox) {
        double acc = 0.0;
        for (int i = 0; i < input.channels; ++i) {
          for (int ky = 0; ky < k; ++ky) {
            const int iy = oy * stride + ky - padding;
            if (iy < 0 || iy >= input.height) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int ix = ox * stride + kx - padding;
              if (ix < 0 || ix >= input.width) continue;
              acc += kernel.at(o, i, ky, kx) * input.at(i, iy, ix);
            }
          }
        }
        out.at(o, oy, ox) = acc;
      }
    }
  });
  return out;
}

FeatureMap upsample_nearest2x(const FeatureMap& input) {
  FeatureMap out(input.level, input.channels, 2 * input.height, 2 * input.width);
  for (int c = 0; c < out.channels; ++c)
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x) out.at(c, y, x) = input.at(c, y / 2, x / 2);
  return out;
}

Pyramid fpn_forward(const Pyramid& backbone, const PyramidWeights& w, const PyramidOptions& opts) {
  check_levels(backbone, "C");
  Pyramid out;
  FeatureMap top_down;  // pre-smoothing sum of the coarser level
  for (int i = kNumLevels - 1; i >= 0; --i) {
    const int level = kMinLevel + i;
    if (w.lateral[i].in_channels != backbone[i].channels) {
      throw ShapeError(fmt::format("C{}: channel count {} does not match lateral kernel input {}", level,
                                   backbone[i].channels, w.lateral[i].in_channels));
    }
    FeatureMap sum = conv2d(backbone[i], w.lateral[i], 1, 0, opts.threads);
    if (i < kNumLevels - 1) add_inplace(sum, upsample_nearest2x(top_down), "top-down fusion");
    FeatureMap p = conv2d(sum, w.smooth[i], 1, 1, opts.threads);
    activate(p, opts.activation);
    out[i] = with_level(std::move(p), level);
    top_down = std::move(sum);
  }
  return out;
}

Pyramid pafpn_forward(const Pyramid& fpn_levels, const PyramidWeights& w, const PyramidOptions& opts) {
  check_levels(fpn_levels, "P");
  for (int i = 0; i < kNumLevels; ++i) {
    if (fpn_levels[i].channels != w.width) {
      throw ShapeError(fmt::format("P{}: channel count {} does not match pyramid width {}", kMinLevel + i,
                                   fpn_levels[i].channels, w.width));
    }
  }
  Pyramid out;
  out[0] = fpn_levels[0];
  for (int i = 0; i + 1 < kNumLevels; ++i) {
    FeatureMap fused = conv2d(out[i], w.downsample[i], 2, 1, opts.threads);
    fused.level = kMinLevel + i + 1;
    add_inplace(fused, fpn_levels[i + 1], "bottom-up fusion");
    FeatureMap n = conv2d(fused, w.pa_smooth[i], 1, 1, opts.threads);
    activate(n, opts.activation);
    out[i + 1] = with_level(std::move(n), kMinLevel + i + 1);
  }
  return out;
}

Pyramid pyramid_pipeline(const Pyramid& backbone, const PyramidWeights& w, PyramidMode mode,
                         const PyramidOptions& opts) {
  Pyramid p = fpn_forward(backbone, w, opts);
  if (mode == PyramidMode::kFpn) return p;
  return pafpn_forward(p, w, opts);
}

Pyramid random_backbone(uint64_t seed, int base_size, std::span<const int> channels) {
  if (channels.size() != static_cast<std::size_t>(kNumLevels)) {
    throw ShapeError(fmt::format("expected {} channel counts, got {}", kNumLevels, channels.size()));
  }
  if (base_size <= 0 || base_size % (1 << kMaxLevel) != 0) {
    throw ShapeError(fmt::format("base size {} must be a positive multiple of {}", base_size, 1 << kMaxLevel));
  }
  std::mt19937_64 rng(seed);
  Pyramid p;
  for (int i = 0; i < kNumLevels; ++i) {
    const int level = kMinLevel + i;
    const int side = base_size >> level;
    p[i] = FeatureMap(level, channels[i], side, side);
    for (double& v : p[i].data) v = uniform(rng, -1.0, 1.0);
  }
  return p;
}

void write_tensor_dump(std::ostream& out, const Pyramid& levels, const std::string& prefix) {
  nlohmann::ordered_json header;
  header["format"] = "detkit-tensor-dump";
  header["version"] = 1;
  header["dtype"] = "float64";
  header["byte_order"] = "little";
  nlohmann::ordered_json entries = nlohmann::ordered_json::array();
  std::size_t offset = 0;
  for (const FeatureMap& m : levels) {
    nlohmann::ordered_json e;
    e["name"] = prefix + std::to_string(m.level);
    e["level"] = m.level;
    e["shape"] = {m.channels, m.height, m.width};
    e["offset"] = offset;
    e["count"] = m.data.size();
    offset += m.data.size();
    entries.push_back(std::move(e));
  }
  header["levels"] = std::move(entries);
  out << header.dump() << '\n';
  for (const FeatureMap& m : levels)
    for (double v : m.data) put_f64_le(out, v);
}

Pyramid read_tensor_dump(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("tensor dump: missing header line");
  const auto header = nlohmann::json::parse(line);
  if (header.at("format") != "detkit-tensor-dump" || header.at("dtype") != "float64") {
    throw std::runtime_error("tensor dump: unsupported header " + line);
  }
  const auto& entries = header.at("levels");
  if (entries.size() != static_cast<std::size_t>(kNumLevels)) {
    throw std::runtime_error(fmt::format("tensor dump: expected {} levels, found {}", kNumLevels, entries.size()));
  }
  Pyramid p;
  for (int i = 0; i < kNumLevels; ++i) {
    const auto& e = entries[i];
    const auto& shape = e.at("shape");
    p[i] = FeatureMap(e.at("level").get<int>(), shape[0].get<int>(), shape[1].get<int>(), shape[2].get<int>());
  }
  for (auto& m : p)
    for (double& v : m.data) v = get_f64_le(in);
  return p;
}

std::string shape_summary(const Pyramid& levels, const std::string& prefix) {
  std::ostringstream os;
  for (const FeatureMap& m : levels) {
    os << fmt::format("{}{}: {}x{}x{}\n", prefix, m.level, m.channels, m.height, m.width);
  }
  return os.str();
}

}  // namespace detkit
