#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace detkit {

inline constexpr int kMinLevel = 2;
inline constexpr int kMaxLevel = 5;
inline constexpr int kNumLevels = kMaxLevel - kMinLevel + 1;

class ShapeError : public std::invalid_argument {
 public:
  explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

/// Dense (channels, height, width) tensor tagged with its pyramid level.
/// Element (c, y, x) lives at data[(c * height + y) * width + x].
struct FeatureMap {
  int level = kMinLevel;
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  FeatureMap() = default;
  FeatureMap(int level, int channels, int height, int width);

  double& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  double at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }

  bool same_shape(const FeatureMap& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }

  friend bool operator==(const FeatureMap&, const FeatureMap&) = default;
};

/// Levels 2..5 in order; index 0 holds level 2.
using Pyramid = std::array<FeatureMap, kNumLevels>;

/// Square convolution kernel of shape (out, in, size, size), element
/// (o, i, ky, kx) at w[((o * in + i) * size + ky) * size + kx].
struct ConvKernel {
  int out_channels = 0;
  int in_channels = 0;
  int size = 0;
  std::vector<double> w;

  static ConvKernel zeros(int out_channels, int in_channels, int size);
  /// Maps channel c to channel c through the kernel center.
  static ConvKernel identity(int channels, int size);

  double& at(int o, int i, int ky, int kx) {
    return w[((static_cast<std::size_t>(o) * in_channels + i) * size + ky) * size + kx];
  }
  double at(int o, int i, int ky, int kx) const {
    return w[((static_cast<std::size_t>(o) * in_channels + i) * size + ky) * size + kx];
  }

  friend bool operator==(const ConvKernel&, const ConvKernel&) = default;
};

/// Weights for the top-down (FPN) and bottom-up (PA-FPN) passes.
struct PyramidWeights {
  int width = 0;
  std::array<ConvKernel, kNumLevels> lateral;       // 1x1, C_l -> width
  std::array<ConvKernel, kNumLevels> smooth;        // 3x3 on P2..P5
  std::array<ConvKernel, kNumLevels - 1> downsample;  // 3x3 stride 2: N2->N3, N3->N4, N4->N5
  std::array<ConvKernel, kNumLevels - 1> pa_smooth;   // 3x3 on N3..N5

  /// Uniform weights in [-0.1, 0.1] drawn from a 64-bit Mersenne Twister.
  /// The draw order and the mapping to doubles are fixed, so a seed gives
  /// the same weights on every platform.
  static PyramidWeights generate(uint64_t seed, std::span<const int> in_channels, int width);

  /// Zero downsample kernels and identity bottom-up smoothing; PA-FPN then
  /// passes the FPN levels through unchanged.
  void sever_bottom_up();
  void set_identity_smoothing();

  friend bool operator==(const PyramidWeights&, const PyramidWeights&) = default;
};

enum class Activation { kIdentity, kRelu };
enum class PyramidMode { kFpn, kPaFpn };

struct PyramidOptions {
  Activation activation = Activation::kIdentity;
  unsigned threads = 1;
};

/// Zero-padded, bias-free 2D convolution.
FeatureMap conv2d(const FeatureMap& input, const ConvKernel& kernel, int stride, int padding, unsigned threads = 1);
FeatureMap upsample_nearest2x(const FeatureMap& input);

Pyramid fpn_forward(const Pyramid& backbone, const PyramidWeights& w, const PyramidOptions& opts = {});
Pyramid pafpn_forward(const Pyramid& fpn_levels, const PyramidWeights& w, const PyramidOptions& opts = {});
Pyramid pyramid_pipeline(const Pyramid& backbone, const PyramidWeights& w, PyramidMode mode,
                         const PyramidOptions& opts = {});

/// Backbone-like input for a base image size (divisible by 32): level l has
/// spatial size base/2^l. Values uniform in [-1, 1].
Pyramid random_backbone(uint64_t seed, int base_size, std::span<const int> channels);

/// Writes a one-line JSON header followed by the levels as little-endian
/// float64, concatenated in level order.
void write_tensor_dump(std::ostream& out, const Pyramid& levels, const std::string& prefix);
Pyramid read_tensor_dump(std::istream& in);

std::string shape_summary(const Pyramid& levels, const std::string& prefix);

}  // namespace detkit
