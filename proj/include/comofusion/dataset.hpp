#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "comofusion/imgcore.hpp"

namespace comofusion {

/// Registered infrared/visible pair in unit range.
struct ImagePair {
  std::string name;
  GrayImage ir;
  GrayImage vis;
};

struct PairDataset {
  std::vector<ImagePair> pairs;

  std::size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }
};

/// Pairs files with identical names across the two directories (sorted by
/// name). Throws ValidationError listing orphans when any file lacks its
/// partner, IoError naming the file when an image cannot be decoded.
PairDataset load_pair_dataset(const std::filesystem::path& ir_dir,
                              const std::filesystem::path& vis_dir);

/// Image files (png/pgm/ppm/bmp, case-insensitive) in a directory, sorted.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

/// Seed sequence for an independent, reproducible stream keyed by indices.
std::mt19937_64 derive_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> keys);

/// Crops each selected pair with an independent window, maps to model range
/// and stacks into x0 of shape (B, 2, size, size), infrared first.
Tensor make_batch(const PairDataset& dataset, std::span<const std::size_t> indices, int size,
                  std::mt19937_64& rng);

/// Single-channel planes (B, 1, H, W) from a batch: channel 0 infrared,
/// channel 1 visible.
Tensor channel_of(const Tensor& x, int channel);

/// Deterministic synthetic scenes: the visible image carries textured
/// structure, the infrared image a low-contrast copy of the layout plus hot
/// targets. Sizes are square.
PairDataset make_synthetic_pairs(int count, int size, std::uint64_t seed);

/// Writes pairs as PNG files into ir_dir and vis_dir (identical names).
void write_pair_dataset(const PairDataset& dataset, const std::filesystem::path& ir_dir,
                        const std::filesystem::path& vis_dir);

}  // namespace comofusion
