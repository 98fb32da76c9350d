#include "comofusion/image_io.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "comofusion/errors.hpp"

namespace comofusion {

namespace {

constexpr double kLumaR = 0.299;
constexpr double kLumaG = 0.587;
constexpr double kLumaB = 0.114;

template <typename T>
GrayImage to_gray(const cv::Mat& m, double scale) {
  GrayImage out(m.rows, m.cols, RangeTag::unit);
  const int ch = m.channels();
  for (int y = 0; y < m.rows; ++y) {
    const T* row = m.ptr<T>(y);
    for (int x = 0; x < m.cols; ++x) {
      const T* px = row + static_cast<std::ptrdiff_t>(x) * ch;
      double v = 0.0;
      if (ch == 1 || ch == 2) {
        v = px[0];
      } else {
        // OpenCV decodes colour as BGR(A).
        v = kLumaR * px[2] + kLumaG * px[1] + kLumaB * px[0];
      }
      out.at(y, x) = std::clamp(v * scale, 0.0, 1.0);
    }
  }
  return out;
}

}  // namespace

GrayImage load_gray(const std::filesystem::path& path) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) {
    throw IoError("cannot read image " + path.string() + ": no such file");
  }
  cv::Mat m;
  try {
    m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  } catch (const cv::Exception& e) {
    throw IoError("cannot decode image " + path.string() + ": " + e.what());
  }
  if (m.data == nullptr) {
    throw IoError("cannot decode image " + path.string());
  }
  if (m.rows == 0 || m.cols == 0) {
    throw ValidationError("image " + path.string() + " has zero extent");
  }
  switch (m.depth()) {
    case CV_8U: return to_gray<std::uint8_t>(m, 1.0 / 255.0);
    case CV_16U: return to_gray<std::uint16_t>(m, 1.0 / 65535.0);
    case CV_32F: return to_gray<float>(m, 1.0);
    default:
      throw IoError("unsupported pixel depth in " + path.string());
  }
}

void save_gray(const GrayImage& img, const std::filesystem::path& path) {
  const GrayImage bytes = to_byte_range(img);
  cv::Mat m(bytes.height(), bytes.width(), CV_8UC1);
  for (int y = 0; y < bytes.height(); ++y) {
    auto* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < bytes.width(); ++x) {
      const double v = std::clamp(std::round(bytes.at(y, x)), 0.0, 255.0);
      row[x] = static_cast<std::uint8_t>(v);
    }
  }
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), m);
  } catch (const cv::Exception& e) {
    throw IoError("cannot write image " + path.string() + ": " + e.what());
  }
  if (!ok) throw IoError("cannot write image " + path.string());
}

}  // namespace comofusion
