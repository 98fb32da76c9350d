#include <doctest.h>

#include <filesystem>
#include <fstream>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "comofusion/errors.hpp"
#include "comofusion/image_io.hpp"
#include "comofusion/imgcore.hpp"
#include "oracles.hpp"

using namespace comofusion;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("comofusion_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

GrayImage ramp(int h, int w, double step) {
  GrayImage img(h, w, RangeTag::byte);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) img.at(y, x) = step * x;
  return img;
}

}  // namespace

TEST_SUITE("imgcore") {

TEST_CASE("range conversions") {
  GrayImage u(1, 3, RangeTag::unit, std::vector<double>{0.0, 0.5, 1.0});
  const GrayImage m = to_model_range(u);
  CHECK(m.range() == RangeTag::model);
  CHECK(m.at(0, 0) == -1.0);
  CHECK(m.at(0, 1) == 0.0);
  CHECK(m.at(0, 2) == 1.0);
  CHECK_THROWS_AS(to_model_range(m), ValidationError);
  CHECK(to_byte_range(u).at(0, 2) == 255.0);
  CHECK(to_byte_range(m).at(0, 0) == 0.0);

  std::mt19937_64 rng(3);
  const GrayImage r = oracle::random_image(9, 7, RangeTag::unit, rng);
  const GrayImage back = to_unit_range(to_model_range(r));
  for (std::size_t k = 0; k < r.size(); ++k) CHECK(std::abs(back.data()[k] - r.data()[k]) < 1e-12);
}

TEST_CASE("validate rejects non-finite and out-of-range values") {
  GrayImage img(3, 3, RangeTag::unit, 0.5);
  CHECK_NOTHROW(validate(img));
  img.at(1, 1) = 1.5;
  CHECK_THROWS_AS(validate(img), ValidationError);
  img.at(1, 1) = std::nan("");
  CHECK_THROWS_AS(validate(img), ValidationError);
}

TEST_CASE("sobel anchors") {
  const GradientField flat = sobel(GrayImage(5, 6, RangeTag::unit, 0.3));
  for (std::size_t k = 0; k < flat.gx.size(); ++k) {
    CHECK(flat.gx[k] == 0.0);
    CHECK(flat.gy[k] == 0.0);
  }
  const GrayImage r = ramp(6, 7, 2.0);
  const GradientField g = sobel(r);
  for (int y = 1; y < 5; ++y)
    for (int x = 1; x < 6; ++x) {
      CHECK(g.gx[y * 7 + x] == doctest::Approx(16.0));
      CHECK(g.gy[y * 7 + x] == 0.0);
    }
  CHECK_THROWS_AS(sobel(GrayImage(2, 5, RangeTag::unit)), ValidationError);
}

TEST_CASE("sobel matches oracle and swaps under transpose") {
  std::mt19937_64 rng(11);
  const GrayImage img = oracle::random_image(8, 9, RangeTag::unit, rng);
  const GradientField g = sobel(img);
  const oracle::Sobel o = oracle::sobel(oracle::grid_of(img));
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 9; ++x) {
      CHECK(std::abs(g.gx[y * 9 + x] - static_cast<double>(o.gx[y][x])) < 1e-12);
      CHECK(std::abs(g.gy[y * 9 + x] - static_cast<double>(o.gy[y][x])) < 1e-12);
      CHECK(g.magnitude[y * 9 + x] >= 0.0);
    }
  const GradientField t = sobel(transpose(img));
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 9; ++x) {
      CHECK(t.gx[x * 8 + y] == doctest::Approx(g.gy[y * 9 + x]));
      CHECK(t.gy[x * 8 + y] == doctest::Approx(g.gx[y * 9 + x]));
    }
}

TEST_CASE("sobel_adjoint is the transpose of sobel") {
  std::mt19937_64 rng(5);
  const GrayImage x = oracle::random_image(7, 10, RangeTag::model, rng);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> wx(70), wy(70);
  for (auto& v : wx) v = n(rng);
  for (auto& v : wy) v = n(rng);
  const GradientField g = sobel(x);
  double lhs = 0.0;
  for (std::size_t k = 0; k < 70; ++k) lhs += g.gx[k] * wx[k] + g.gy[k] * wy[k];
  const std::vector<double> adj = sobel_adjoint(7, 10, wx, wy);
  double rhs = 0.0;
  for (std::size_t k = 0; k < 70; ++k) rhs += x.data()[k] * adj[k];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("gradient energy") {
  CHECK(gradient_energy(GrayImage(4, 4, RangeTag::unit, 0.7)) == 0.0);
  std::mt19937_64 rng(9);
  GrayImage img = oracle::random_image(8, 8, RangeTag::unit, rng);
  const double e = gradient_energy(img);
  CHECK(e == doctest::Approx(static_cast<double>(oracle::gradient_energy(oracle::grid_of(img)))).epsilon(1e-12));

  GrayImage scaled = img;
  GrayImage shifted = img;
  for (auto& v : scaled.data()) v *= 0.3;
  for (auto& v : shifted.data()) v += 0.1;
  CHECK(gradient_energy(scaled) == doctest::Approx(0.09 * e).epsilon(1e-12));
  CHECK(gradient_energy(shifted) == doctest::Approx(e).epsilon(1e-12));
}

TEST_CASE("concat and split") {
  std::mt19937_64 rng(2);
  const GrayImage ir = oracle::random_image(4, 8, RangeTag::model, rng);
  const GrayImage vis = oracle::random_image(4, 8, RangeTag::model, rng);
  const MultiModalTensor x = concat_pair(ir, vis);
  CHECK(x.data.shape() == Shape{1, 2, 4, 8});
  CHECK(x.data.at(0, kInfraredChannel, 2, 3) == ir.at(2, 3));
  CHECK(x.data.at(0, kVisibleChannel, 1, 5) == vis.at(1, 5));
  const auto [ir2, vis2] = split_pair(x);
  CHECK(ir2 == ir);
  CHECK(vis2 == vis);

  const MultiModalTensor same = concat_pair(ir, ir);
  for (int y = 0; y < 4; ++y)
    for (int x2 = 0; x2 < 8; ++x2) CHECK(same.data.at(0, 0, y, x2) == same.data.at(0, 1, y, x2));

  CHECK_THROWS_AS(concat_pair(ir, GrayImage(4, 7, RangeTag::model)), ValidationError);
  CHECK_THROWS_AS(concat_pair(GrayImage(4, 8, RangeTag::unit), vis), ValidationError);
}

TEST_CASE("random crop pair") {
  GrayImage coords_y(512, 640, RangeTag::byte);
  GrayImage coords_x(512, 640, RangeTag::byte);
  for (int y = 0; y < 512; ++y)
    for (int x = 0; x < 640; ++x) {
      coords_y.at(y, x) = y;
      coords_x.at(y, x) = x;
    }
  const auto [a, b] = random_crop_pair(coords_y, coords_x, 160, 42);
  CHECK(a.height() == 160);
  CHECK(a.width() == 160);
  const int top = static_cast<int>(a.at(0, 0));
  const int left = static_cast<int>(b.at(0, 0));
  CHECK(top + 160 <= 512);
  CHECK(left + 160 <= 640);
  for (int y = 0; y < 160; y += 17)
    for (int x = 0; x < 160; x += 13) {
      CHECK(a.at(y, x) == top + y);
      CHECK(b.at(y, x) == left + x);
    }
  const auto [a2, b2] = random_crop_pair(coords_y, coords_x, 160, 42);
  CHECK(a2 == a);
  CHECK(b2 == b);

  const auto [full_a, full_b] = random_crop_pair(coords_y, coords_x, 512, 1);
  CHECK(full_a.height() == 512);
  CHECK_THROWS_AS(random_crop_pair(coords_y, coords_x, 513, 1), ValidationError);
}

}  // TEST_SUITE

TEST_SUITE("image_io") {

TEST_CASE("load and save gray images") {
  const fs::path dir = scratch_dir("io");
  cv::Mat gray(2, 2, CV_8UC1);
  gray.at<uchar>(0, 0) = 0;
  gray.at<uchar>(0, 1) = 255;
  gray.at<uchar>(1, 0) = 51;
  gray.at<uchar>(1, 1) = 102;
  cv::imwrite((dir / "g.png").string(), gray);
  const GrayImage g = load_gray(dir / "g.png");
  CHECK(g.range() == RangeTag::unit);
  CHECK(g.at(0, 0) == 0.0);
  CHECK(g.at(0, 1) == 1.0);
  CHECK(g.at(1, 0) == doctest::Approx(0.2));

  cv::Mat color(1, 2, CV_8UC3, cv::Scalar(255, 255, 255));
  color.at<cv::Vec3b>(0, 1) = cv::Vec3b(0, 0, 255);  // BGR red
  cv::imwrite((dir / "c.png").string(), color);
  const GrayImage c = load_gray(dir / "c.png");
  CHECK(c.at(0, 0) == doctest::Approx(1.0));
  CHECK(c.at(0, 1) == doctest::Approx(0.299).epsilon(1e-6));

  save_gray(g, dir / "sub" / "out.png");
  const GrayImage round = load_gray(dir / "sub" / "out.png");
  CHECK(round == g);

  CHECK_THROWS_AS(load_gray(dir / "missing.png"), IoError);
  std::ofstream(dir / "junk.png") << "not an image";
  CHECK_THROWS_AS(load_gray(dir / "junk.png"), IoError);
  fs::remove_all(dir);
}

}  // TEST_SUITE
