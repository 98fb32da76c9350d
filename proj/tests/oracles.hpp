#pragma once

// Independent reference implementations used only by the tests. They favour
// plain loops and long double over speed, and share no code with the library.

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <vector>

#include "comofusion/imgcore.hpp"

namespace oracle {

using Grid = std::vector<std::vector<long double>>;

inline Grid grid_of(const comofusion::GrayImage& img, long double scale = 1.0L,
                    long double offset = 0.0L) {
  Grid g(img.height(), std::vector<long double>(img.width()));
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) g[y][x] = scale * img.at(y, x) + offset;
  return g;
}

inline long double schedule_time(int i, long double eps, long double t_max, long double rho, int n) {
  const long double a = std::pow(eps, 1.0L / rho);
  const long double b = std::pow(t_max, 1.0L / rho);
  return std::pow(a + static_cast<long double>(i - 1) / (n - 1) * (b - a), rho);
}

// Sobel with edge replication, written as explicit kernels.
struct Sobel {
  Grid gx, gy;
};

inline Sobel sobel(const Grid& img) {
  static const int kx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
  static const int ky[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
  const int h = static_cast<int>(img.size());
  const int w = static_cast<int>(img[0].size());
  Sobel s{Grid(h, std::vector<long double>(w)), Grid(h, std::vector<long double>(w))};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      long double ax = 0, ay = 0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const long double v = img[std::clamp(y + dy, 0, h - 1)][std::clamp(x + dx, 0, w - 1)];
          ax += kx[dy + 1][dx + 1] * v;
          ay += ky[dy + 1][dx + 1] * v;
        }
      s.gx[y][x] = ax;
      s.gy[y][x] = ay;
    }
  return s;
}

inline long double gradient_energy(const Grid& img) {
  const Sobel s = sobel(img);
  long double acc = 0;
  std::size_t n = 0;
  for (std::size_t y = 0; y < img.size(); ++y)
    for (std::size_t x = 0; x < img[0].size(); ++x, ++n)
      acc += s.gx[y][x] * s.gx[y][x] + s.gy[y][x] * s.gy[y][x];
  return acc / n;
}

inline long double pvs_loss(const Grid& vis, const Grid& ir, const Grid& f, long double eps) {
  Grid r = f;
  for (std::size_t y = 0; y < f.size(); ++y)
    for (std::size_t x = 0; x < f[0].size(); ++x) r[y][x] = vis[y][x] + ir[y][x] - f[y][x];
  return gradient_energy(r) / (gradient_energy(f) + eps);
}

inline long double grad_loss(const Grid& vis, const Grid& ir, const Grid& f) {
  const Sobel sv = sobel(vis), si = sobel(ir), sf = sobel(f);
  long double acc = 0;
  std::size_t n = 0;
  for (std::size_t y = 0; y < f.size(); ++y)
    for (std::size_t x = 0; x < f[0].size(); ++x, ++n) {
      const long double target = std::max(std::hypot(sv.gx[y][x], sv.gy[y][x]),
                                          std::hypot(si.gx[y][x], si.gy[y][x]));
      acc += std::fabs(std::hypot(sf.gx[y][x], sf.gy[y][x]) - target);
    }
  return acc / n;
}

inline long double entropy(const Grid& b) {
  std::map<long, long> counts;
  long total = 0;
  for (const auto& row : b)
    for (long double v : row) {
      long level = std::lround(static_cast<double>(v));
      level = std::clamp(level, 0L, 255L);
      ++counts[level];
      ++total;
    }
  long double h = 0;
  for (const auto& [level, c] : counts) {
    const long double p = static_cast<long double>(c) / total;
    h -= p * std::log(p) / std::log(2.0L);
  }
  return h;
}

inline long double spatial_frequency(const Grid& b) {
  const std::size_t h = b.size(), w = b[0].size();
  long double rf = 0, cf = 0;
  std::size_t nr = 0, nc = 0;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      if (x > 0) {
        rf += (b[y][x] - b[y][x - 1]) * (b[y][x] - b[y][x - 1]);
        ++nr;
      }
      if (y > 0) {
        cf += (b[y][x] - b[y - 1][x]) * (b[y][x] - b[y - 1][x]);
        ++nc;
      }
    }
  return std::sqrt(rf / nr + cf / nc);
}

inline long double average_gradient(const Grid& b) {
  long double acc = 0;
  std::size_t n = 0;
  for (std::size_t y = 0; y + 1 < b.size(); ++y)
    for (std::size_t x = 0; x + 1 < b[0].size(); ++x, ++n) {
      const long double dx = b[y][x + 1] - b[y][x];
      const long double dy = b[y + 1][x] - b[y][x];
      acc += std::sqrt((dx * dx + dy * dy) / 2);
    }
  return acc / n;
}

// Welford's running variance.
inline long double std_dev(const Grid& b) {
  long double mean = 0, m2 = 0;
  std::size_t n = 0;
  for (const auto& row : b)
    for (long double v : row) {
      ++n;
      const long double d = v - mean;
      mean += d / n;
      m2 += d * (v - mean);
    }
  return std::sqrt(m2 / n);
}

// Edge-preservation score evaluated pixel by pixel.
inline long double qabf(const Grid& a, const Grid& b, const Grid& f, bool normalize = true) {
  const long double pi = std::numbers::pi_v<long double>;
  auto alpha = [&](long double gx, long double gy) { return gx == 0 ? pi / 2 : std::atan(gy / gx); };
  auto sig = [](long double gamma, long double k, long double sigma, long double v) {
    return gamma / (1 + std::exp(k * (v - sigma)));
  };
  const long double ng = normalize ? sig(0.9994L, -15, 0.5L, 1) : 1;
  const long double na = normalize ? sig(0.9879L, -22, 0.8L, 1) : 1;
  const Sobel sa = sobel(a), sb = sobel(b), sf = sobel(f);
  long double num = 0, den = 0;
  for (std::size_t y = 0; y < a.size(); ++y)
    for (std::size_t x = 0; x < a[0].size(); ++x) {
      const long double gf = std::hypot(sf.gx[y][x], sf.gy[y][x]);
      const long double af = alpha(sf.gx[y][x], sf.gy[y][x]);
      auto q = [&](const Sobel& s, long double& weight) {
        const long double g = std::hypot(s.gx[y][x], s.gy[y][x]);
        weight = g;
        long double ratio;
        if (g == gf) ratio = 1;
        else if (g > gf) ratio = gf / g;
        else ratio = g / gf;
        const long double orient = 1 - std::fabs(alpha(s.gx[y][x], s.gy[y][x]) - af) / (pi / 2);
        return sig(0.9994L, -15, 0.5L, ratio) / ng * sig(0.9879L, -22, 0.8L, orient) / na;
      };
      long double wa = 0, wb = 0;
      const long double qa = q(sa, wa);
      const long double qb = q(sb, wb);
      num += qa * wa + qb * wb;
      den += wa + wb;
    }
  if (den == 0) return 1;
  return std::clamp(num / den, 0.0L, 1.0L);
}

// SSIM with a full 2-D Gaussian window evaluated per window position.
inline long double ssim(const Grid& a, const Grid& b) {
  const int win = 11;
  const long double sigma = 1.5L;
  long double wts[11][11];
  long double total = 0;
  for (int i = 0; i < win; ++i)
    for (int j = 0; j < win; ++j) {
      wts[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2 * sigma * sigma));
      total += wts[i][j];
    }
  const long double c1 = std::pow(0.01L * 255, 2), c2 = std::pow(0.03L * 255, 2);
  const int h = static_cast<int>(a.size()), w = static_cast<int>(a[0].size());
  long double acc = 0;
  int count = 0;
  for (int y = 0; y + win <= h; ++y)
    for (int x = 0; x + win <= w; ++x) {
      long double ma = 0, mb = 0;
      for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j) {
          ma += wts[i][j] / total * a[y + i][x + j];
          mb += wts[i][j] / total * b[y + i][x + j];
        }
      long double va = 0, vb = 0, cov = 0;
      for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j) {
          const long double p = wts[i][j] / total;
          va += p * (a[y + i][x + j] - ma) * (a[y + i][x + j] - ma);
          vb += p * (b[y + i][x + j] - mb) * (b[y + i][x + j] - mb);
          cov += p * (a[y + i][x + j] - ma) * (b[y + i][x + j] - mb);
        }
      acc += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  return acc / count;
}

inline comofusion::GrayImage random_image(int h, int w, comofusion::RangeTag tag,
                                          std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(comofusion::range_min(tag), comofusion::range_max(tag));
  comofusion::GrayImage img(h, w, tag);
  for (auto& v : img.data()) v = u(rng);
  return img;
}

}  // namespace oracle
