#include "comofusion/imgcore.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "comofusion/errors.hpp"

namespace comofusion {

std::string_view to_string(RangeTag tag) {
  switch (tag) {
    case RangeTag::unit: return "unit";
    case RangeTag::model: return "model";
    case RangeTag::byte: return "byte";
  }
  return "?";
}

double range_min(RangeTag tag) { return tag == RangeTag::model ? -1.0 : 0.0; }

double range_max(RangeTag tag) {
  switch (tag) {
    case RangeTag::unit: return 1.0;
    case RangeTag::model: return 1.0;
    case RangeTag::byte: return 255.0;
  }
  return 0.0;
}

GrayImage::GrayImage(int height, int width, RangeTag tag, double fill)
    : height_(height), width_(width), range_(tag) {
  if (height <= 0 || width <= 0) {
    throw ValidationError("image must have positive extent, got " + std::to_string(height) +
                          "x" + std::to_string(width));
  }
  data_.assign(static_cast<std::size_t>(height) * width, fill);
}

GrayImage::GrayImage(int height, int width, RangeTag tag, std::vector<double> data)
    : height_(height), width_(width), range_(tag), data_(std::move(data)) {
  if (height <= 0 || width <= 0) {
    throw ValidationError("image must have positive extent, got " + std::to_string(height) +
                          "x" + std::to_string(width));
  }
  if (data_.size() != static_cast<std::size_t>(height) * width) {
    throw ValidationError("image data size does not match extent");
  }
}

void validate(const GrayImage& img) {
  const double lo = range_min(img.range());
  const double hi = range_max(img.range());
  for (double v : img.data()) {
    if (!std::isfinite(v)) throw ValidationError("image contains non-finite value");
    if (v < lo || v > hi) {
      throw ValidationError("value " + std::to_string(v) + " outside " +
                            std::string(to_string(img.range())) + " range");
    }
  }
}

void require_min_size(const GrayImage& img, int min_side, std::string_view op) {
  if (img.height() < min_side || img.width() < min_side) {
    throw ValidationError(std::string(op) + ": image must be at least " +
                          std::to_string(min_side) + "x" + std::to_string(min_side) +
                          ", got " + std::to_string(img.height()) + "x" +
                          std::to_string(img.width()));
  }
}

void require_same_shape(const GrayImage& a, const GrayImage& b, std::string_view op) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw ValidationError(std::string(op) + ": shape mismatch " + std::to_string(a.height()) +
                          "x" + std::to_string(a.width()) + " vs " +
                          std::to_string(b.height()) + "x" + std::to_string(b.width()));
  }
}

namespace {

GrayImage affine(const GrayImage& img, double scale, double offset, RangeTag tag) {
  GrayImage out(img.height(), img.width(), tag);
  auto src = img.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = scale * src[i] + offset;
  return out;
}

}  // namespace

GrayImage to_model_range(const GrayImage& img) {
  if (img.range() != RangeTag::unit) {
    throw ValidationError("to_model_range expects a unit-range image, got " +
                          std::string(to_string(img.range())));
  }
  return affine(img, 2.0, -1.0, RangeTag::model);
}

GrayImage to_unit_range(const GrayImage& img) {
  if (img.range() != RangeTag::model) {
    throw ValidationError("to_unit_range expects a model-range image, got " +
                          std::string(to_string(img.range())));
  }
  return affine(img, 0.5, 0.5, RangeTag::unit);
}

GrayImage to_byte_range(const GrayImage& img) {
  switch (img.range()) {
    case RangeTag::byte: return img;
    case RangeTag::unit: return affine(img, 255.0, 0.0, RangeTag::byte);
    case RangeTag::model: return affine(img, 127.5, 127.5, RangeTag::byte);
  }
  return img;
}

GrayImage transpose(const GrayImage& img) {
  GrayImage out(img.width(), img.height(), img.range());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) out.at(x, y) = img.at(y, x);
  return out;
}

namespace {

// Correlation weights, row-major over (dy, dx) in {-1,0,1}^2.
constexpr double kSobelX[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
constexpr double kSobelY[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};

inline int clamp_index(int v, int n) { return std::clamp(v, 0, n - 1); }

}  // namespace

GradientField sobel(const GrayImage& img) {
  require_min_size(img, 3, "sobel");
  const int h = img.height();
  const int w = img.width();
  GradientField g;
  g.height = h;
  g.width = w;
  g.gx.assign(img.size(), 0.0);
  g.gy.assign(img.size(), 0.0);
  g.magnitude.assign(img.size(), 0.0);
  // Written as sums of differences so constant regions give exactly zero.
  for (int y = 0; y < h; ++y) {
    const int ya = clamp_index(y - 1, h);
    const int yb = clamp_index(y + 1, h);
    for (int x = 0; x < w; ++x) {
      const int xa = clamp_index(x - 1, w);
      const int xb = clamp_index(x + 1, w);
      const double sx = (img.at(ya, xb) - img.at(ya, xa)) + 2.0 * (img.at(y, xb) - img.at(y, xa)) +
                        (img.at(yb, xb) - img.at(yb, xa));
      const double sy = (img.at(yb, xa) - img.at(ya, xa)) + 2.0 * (img.at(yb, x) - img.at(ya, x)) +
                        (img.at(yb, xb) - img.at(ya, xb));
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      g.gx[i] = sx;
      g.gy[i] = sy;
      g.magnitude[i] = std::sqrt(sx * sx + sy * sy);
    }
  }
  return g;
}

std::vector<double> sobel_adjoint(int height, int width, std::span<const double> wx,
                                  std::span<const double> wy) {
  const std::size_t n = static_cast<std::size_t>(height) * width;
  if (wx.size() != n || wy.size() != n) {
    throw ValidationError("sobel_adjoint: weight size does not match extent");
  }
  std::vector<double> out(n, 0.0);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * width + x;
      const double ax = wx[i];
      const double ay = wy[i];
      if (ax == 0.0 && ay == 0.0) continue;
      for (int dy = -1; dy <= 1; ++dy) {
        const int yy = clamp_index(y + dy, height);
        for (int dx = -1; dx <= 1; ++dx) {
          const int xx = clamp_index(x + dx, width);
          out[static_cast<std::size_t>(yy) * width + xx] +=
              kSobelX[dy + 1][dx + 1] * ax + kSobelY[dy + 1][dx + 1] * ay;
        }
      }
    }
  }
  return out;
}

double gradient_energy(const GrayImage& img) {
  const GradientField g = sobel(img);
  double sum = 0.0;
  for (std::size_t i = 0; i < g.gx.size(); ++i) sum += g.gx[i] * g.gx[i] + g.gy[i] * g.gy[i];
  return sum / static_cast<double>(g.gx.size());
}

MultiModalTensor concat_pair(const GrayImage& ir, const GrayImage& vis) {
  require_same_shape(ir, vis, "concat_pair");
  if (ir.range() != RangeTag::model || vis.range() != RangeTag::model) {
    throw ValidationError("concat_pair expects model-range inputs");
  }
  const int h = ir.height();
  const int w = ir.width();
  Tensor t(Shape{1, 2, h, w});
  auto dst = t.data();
  std::copy(ir.data().begin(), ir.data().end(), dst.begin());
  std::copy(vis.data().begin(), vis.data().end(), dst.begin() + static_cast<std::ptrdiff_t>(ir.size()));
  return MultiModalTensor{std::move(t)};
}

std::pair<GrayImage, GrayImage> split_pair(const MultiModalTensor& x) {
  const Shape& s = x.data.shape();
  if (s.n != 1 || s.c != 2) {
    throw ValidationError("split_pair expects a (1, 2, H, W) tensor, got " + to_string(s));
  }
  const auto src = x.data.data();
  const auto plane = static_cast<std::ptrdiff_t>(s.plane());
  GrayImage ir(s.h, s.w, RangeTag::model, std::vector<double>(src.begin(), src.begin() + plane));
  GrayImage vis(s.h, s.w, RangeTag::model,
                std::vector<double>(src.begin() + plane, src.begin() + 2 * plane));
  return {std::move(ir), std::move(vis)};
}

CropWindow sample_crop_window(int height, int width, int size, std::mt19937_64& rng) {
  if (size <= 0) throw ValidationError("crop size must be positive");
  if (height < size || width < size) {
    throw ValidationError("image " + std::to_string(height) + "x" + std::to_string(width) +
                          " is smaller than crop " + std::to_string(size));
  }
  std::uniform_int_distribution<int> top(0, height - size);
  std::uniform_int_distribution<int> left(0, width - size);
  CropWindow win;
  win.top = top(rng);
  win.left = left(rng);
  win.size = size;
  return win;
}

GrayImage crop(const GrayImage& img, const CropWindow& win) {
  if (win.top < 0 || win.left < 0 || win.top + win.size > img.height() ||
      win.left + win.size > img.width()) {
    throw ValidationError("crop window outside image");
  }
  GrayImage out(win.size, win.size, img.range());
  for (int y = 0; y < win.size; ++y)
    for (int x = 0; x < win.size; ++x) out.at(y, x) = img.at(win.top + y, win.left + x);
  return out;
}

std::pair<GrayImage, GrayImage> random_crop_pair(const GrayImage& ir, const GrayImage& vis,
                                                 int size, std::mt19937_64& rng) {
  require_same_shape(ir, vis, "random_crop_pair");
  const CropWindow win = sample_crop_window(ir.height(), ir.width(), size, rng);
  return {crop(ir, win), crop(vis, win)};
}

std::pair<GrayImage, GrayImage> random_crop_pair(const GrayImage& ir, const GrayImage& vis,
                                                 int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return random_crop_pair(ir, vis, size, rng);
}

}  // namespace comofusion
