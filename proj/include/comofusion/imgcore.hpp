#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "comofusion/tensor.hpp"

namespace comofusion {

/// Nominal intensity range of a GrayImage.
enum class RangeTag {
  unit,   ///< [0, 1]
  model,  ///< [-1, 1], network input/output range
  byte,   ///< [0, 255], metric range
};

std::string_view to_string(RangeTag tag);
double range_min(RangeTag tag);
double range_max(RangeTag tag);

/// Single-channel row-major intensity grid.
///
/// Construction does not clamp or reject out-of-range values: loss-side
/// constructs such as the redundant image legitimately leave the nominal
/// range. Use validate() at I/O boundaries.
class GrayImage {
 public:
  GrayImage() = default;
  GrayImage(int height, int width, RangeTag tag, double fill = 0.0);
  GrayImage(int height, int width, RangeTag tag, std::vector<double> data);

  int height() const { return height_; }
  int width() const { return width_; }
  RangeTag range() const { return range_; }
  std::size_t size() const { return data_.size(); }

  double& at(int y, int x) { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  double at(int y, int x) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  friend bool operator==(const GrayImage&, const GrayImage&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  RangeTag range_ = RangeTag::unit;
  std::vector<double> data_;
};

/// Throws ValidationError if any value is non-finite or outside the range tag.
void validate(const GrayImage& img);

/// Requires a minimum extent (both dimensions) for stencil operations.
void require_min_size(const GrayImage& img, int min_side, std::string_view op);

void require_same_shape(const GrayImage& a, const GrayImage& b, std::string_view op);

/// unit -> model, v -> 2v - 1.
GrayImage to_model_range(const GrayImage& img);
/// model -> unit, v -> (v + 1) / 2.
GrayImage to_unit_range(const GrayImage& img);
/// unit or model -> byte, without rounding.
GrayImage to_byte_range(const GrayImage& img);

GrayImage transpose(const GrayImage& img);

struct GradientField {
  int height = 0;
  int width = 0;
  std::vector<double> gx;
  std::vector<double> gy;
  std::vector<double> magnitude;
};

/// 3x3 Sobel responses with replicate padding. gx responds to left-to-right
/// increase, gy to top-to-bottom increase.
GradientField sobel(const GrayImage& img);

/// Adjoint of the Sobel operator: returns S_x^T wx + S_y^T wy with the same
/// replicate-padding convention as sobel().
std::vector<double> sobel_adjoint(int height, int width, std::span<const double> wx,
                                  std::span<const double> wy);

/// g_I = mean over pixels of (gx^2 + gy^2).
double gradient_energy(const GrayImage& img);

/// 2-channel (infrared, visible) tensor of shape (1, 2, H, W) in model range.
/// Channel 0 is infrared, channel 1 is visible.
struct MultiModalTensor {
  Tensor data;

  int height() const { return data.shape().h; }
  int width() const { return data.shape().w; }
};

inline constexpr int kInfraredChannel = 0;
inline constexpr int kVisibleChannel = 1;

MultiModalTensor concat_pair(const GrayImage& ir, const GrayImage& vis);
/// Inverse of concat_pair: returns (ir, vis) in model range.
std::pair<GrayImage, GrayImage> split_pair(const MultiModalTensor& x);

struct CropWindow {
  int top = 0;
  int left = 0;
  int size = 0;
};

/// Uniform crop placement for an image of the given extent.
CropWindow sample_crop_window(int height, int width, int size, std::mt19937_64& rng);
GrayImage crop(const GrayImage& img, const CropWindow& window);

/// Same random window applied to both images; deterministic in `seed`.
std::pair<GrayImage, GrayImage> random_crop_pair(const GrayImage& ir, const GrayImage& vis,
                                                 int size, std::uint64_t seed);
std::pair<GrayImage, GrayImage> random_crop_pair(const GrayImage& ir, const GrayImage& vis,
                                                 int size, std::mt19937_64& rng);

}  // namespace comofusion
