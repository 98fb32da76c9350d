#include "comofusion/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>
#include <set>

#include "comofusion/errors.hpp"
#include "comofusion/image_io.hpp"

namespace comofusion {

namespace fs = std::filesystem;

namespace {

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".png" || ext == ".pgm" || ext == ".ppm" || ext == ".bmp";
}

}  // namespace

std::vector<fs::path> list_images(const fs::path& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw IoError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && is_image_file(entry.path())) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

PairDataset load_pair_dataset(const fs::path& ir_dir, const fs::path& vis_dir) {
  std::set<std::string> ir_names;
  std::set<std::string> vis_names;
  for (const auto& p : list_images(ir_dir)) ir_names.insert(p.filename().string());
  for (const auto& p : list_images(vis_dir)) vis_names.insert(p.filename().string());

  std::vector<std::string> orphans;
  for (const auto& n : ir_names)
    if (!vis_names.contains(n)) orphans.push_back("ir/" + n);
  for (const auto& n : vis_names)
    if (!ir_names.contains(n)) orphans.push_back("vis/" + n);
  if (!orphans.empty()) {
    std::string msg = "unpaired images:";
    for (const auto& o : orphans) msg += " " + o;
    throw ValidationError(msg);
  }

  PairDataset ds;
  for (const auto& name : ir_names) {
    ImagePair pair;
    pair.name = name;
    pair.ir = load_gray(ir_dir / name);
    pair.vis = load_gray(vis_dir / name);
    if (pair.ir.height() != pair.vis.height() || pair.ir.width() != pair.vis.width()) {
      throw ValidationError("pair " + name + " has mismatched dimensions");
    }
    ds.pairs.push_back(std::move(pair));
  }
  return ds;
}

std::mt19937_64 derive_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
  std::vector<std::uint32_t> words;
  words.push_back(static_cast<std::uint32_t>(seed));
  words.push_back(static_cast<std::uint32_t>(seed >> 32));
  for (auto k : keys) {
    words.push_back(static_cast<std::uint32_t>(k));
    words.push_back(static_cast<std::uint32_t>(k >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

Tensor make_batch(const PairDataset& dataset, std::span<const std::size_t> indices, int size,
                  std::mt19937_64& rng) {
  if (indices.empty()) throw ValidationError("make_batch: empty index list");
  std::vector<Tensor> samples;
  samples.reserve(indices.size());
  for (std::size_t idx : indices) {
    if (idx >= dataset.size()) throw ValidationError("make_batch: index out of range");
    const ImagePair& p = dataset.pairs[idx];
    auto [ir, vis] = random_crop_pair(p.ir, p.vis, size, rng);
    samples.push_back(concat_pair(to_model_range(ir), to_model_range(vis)).data);
  }
  return stack(samples);
}

Tensor channel_of(const Tensor& x, int channel) {
  const Shape s = x.shape();
  if (channel < 0 || channel >= s.c) throw ValidationError("channel index out of range");
  Tensor out(Shape{s.n, 1, s.h, s.w});
  for (int n = 0; n < s.n; ++n) {
    std::copy_n(x.raw() + (static_cast<std::size_t>(n) * s.c + channel) * s.plane(), s.plane(),
                out.raw() + static_cast<std::size_t>(n) * s.plane());
  }
  return out;
}

namespace {

GrayImage synthetic_visible(int size, std::mt19937_64& rng, std::vector<double>& layout) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  GrayImage img(size, size, RangeTag::unit);
  layout.assign(static_cast<std::size_t>(size) * size, 0.0);

  const double gx = u(rng) - 0.5;
  const double gy = u(rng) - 0.5;
  const double base = 0.3 + 0.3 * u(rng);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      img.at(y, x) = base + 0.3 * (gx * x + gy * y) / size;

  const int rects = 3 + static_cast<int>(u(rng) * 4);
  for (int r = 0; r < rects; ++r) {
    const int w = 4 + static_cast<int>(u(rng) * size / 2);
    const int h = 4 + static_cast<int>(u(rng) * size / 2);
    const int x0 = static_cast<int>(u(rng) * (size - 1));
    const int y0 = static_cast<int>(u(rng) * (size - 1));
    const double level = u(rng);
    const bool striped = u(rng) < 0.5;
    const double period = 2.0 + u(rng) * 6.0;
    const double angle = u(rng) * std::numbers::pi;
    for (int y = y0; y < std::min(size, y0 + h); ++y) {
      for (int x = x0; x < std::min(size, x0 + w); ++x) {
        double v = level;
        if (striped) {
          const double phase = (std::cos(angle) * x + std::sin(angle) * y) / period;
          v = level + 0.25 * std::sin(2.0 * std::numbers::pi * phase);
        }
        img.at(y, x) = v;
        layout[static_cast<std::size_t>(y) * size + x] = level;
      }
    }
  }
  std::normal_distribution<double> noise(0.0, 0.02);
  for (auto& v : img.data()) v = std::clamp(v + noise(rng), 0.0, 1.0);
  return img;
}

GrayImage synthetic_infrared(int size, std::mt19937_64& rng, const std::vector<double>& layout) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  GrayImage img(size, size, RangeTag::unit);
  const double ambient = 0.15 + 0.2 * u(rng);
  // Low-contrast, box-blurred copy of the scene layout.
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      double acc = 0.0;
      int cnt = 0;
      for (int dy = -2; dy <= 2; ++dy)
        for (int dx = -2; dx <= 2; ++dx) {
          const int yy = std::clamp(y + dy, 0, size - 1);
          const int xx = std::clamp(x + dx, 0, size - 1);
          acc += layout[static_cast<std::size_t>(yy) * size + xx];
          ++cnt;
        }
      img.at(y, x) = ambient + 0.25 * acc / cnt;
    }
  }
  const int targets = 1 + static_cast<int>(u(rng) * 3);
  for (int k = 0; k < targets; ++k) {
    const double cx = u(rng) * size;
    const double cy = u(rng) * size;
    const double sx = 2.0 + u(rng) * size / 10.0;
    const double sy = sx * (1.0 + u(rng) * 1.5);
    const double heat = 0.4 + 0.5 * u(rng);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const double d = (x - cx) * (x - cx) / (2 * sx * sx) + (y - cy) * (y - cy) / (2 * sy * sy);
        img.at(y, x) += heat * std::exp(-d);
      }
  }
  std::normal_distribution<double> noise(0.0, 0.03);
  for (auto& v : img.data()) v = std::clamp(v + noise(rng), 0.0, 1.0);
  return img;
}

}  // namespace

PairDataset make_synthetic_pairs(int count, int size, std::uint64_t seed) {
  if (count < 0 || size < 4) throw ValidationError("synthetic pairs need count >= 0, size >= 4");
  PairDataset ds;
  for (int k = 0; k < count; ++k) {
    std::mt19937_64 rng = derive_rng(seed, {static_cast<std::uint64_t>(k)});
    std::vector<double> layout;
    ImagePair p;
    char name[32];
    std::snprintf(name, sizeof name, "%05d.png", k);
    p.name = name;
    p.vis = synthetic_visible(size, rng, layout);
    p.ir = synthetic_infrared(size, rng, layout);
    ds.pairs.push_back(std::move(p));
  }
  return ds;
}

void write_pair_dataset(const PairDataset& dataset, const fs::path& ir_dir,
                        const fs::path& vis_dir) {
  fs::create_directories(ir_dir);
  fs::create_directories(vis_dir);
  for (const auto& p : dataset.pairs) {
    save_gray(p.ir, ir_dir / p.name);
    save_gray(p.vis, vis_dir / p.name);
  }
}

}  // namespace comofusion
