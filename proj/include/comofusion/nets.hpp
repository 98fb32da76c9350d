#pragma once

#include <array>
#include <cstdint>
#include <string_view>

#include "comofusion/autograd.hpp"
#include "comofusion/edm_schedule.hpp"
#include "comofusion/layers.hpp"

namespace comofusion {

/// Three-scale feature maps: f1 at HxW, f2 at H/2xW/2, f3 at H/4xW/4.
/// Also used for the decoder's mirrored maps.
struct EncoderFeatures {
  ag::Var f1;
  ag::Var f2;
  ag::Var f3;
};

enum class FeatureSource { encoder, decoder };

std::string_view to_string(FeatureSource source);
FeatureSource parse_feature_source(std::string_view text);

struct ConsistencyNetConfig {
  std::array<int, 3> widths{16, 32, 64};
  int embed_dim = 32;
  std::uint64_t seed = 0;
};

struct ConsistencyOutput {
  ag::Var output;             ///< F_theta(x_t, t), same shape as x_t
  EncoderFeatures encoder;
  EncoderFeatures decoder;    ///< empty when run encoder-only
};

/// Time-conditioned U-shaped network F_theta(x_t, t) on 2-channel input.
///
/// Encoder: conv (HxW) -> stride-2 conv (H/2) -> stride-2 conv (H/4).
/// Decoder: conv (H/4) -> 1x1 projection, upsample, add f2, conv (H/2) ->
/// 1x1 projection, upsample, add f1, conv (HxW), then a 3x3 projection back
/// to 2 channels. Every stage is
/// conv -> FiLM(t) -> SiLU, where FiLM is a per-stage affine (scale, shift)
/// from a sinusoidal embedding of log t.
///
/// Not copyable (layers share parameter nodes with the store); use clone().
class ConsistencyNetwork {
 public:
  explicit ConsistencyNetwork(const ConsistencyNetConfig& config = {});
  ConsistencyNetwork(ConsistencyNetwork&&) = default;
  ConsistencyNetwork& operator=(ConsistencyNetwork&&) = default;
  ConsistencyNetwork(const ConsistencyNetwork&) = delete;
  ConsistencyNetwork& operator=(const ConsistencyNetwork&) = delete;

  ConsistencyNetwork clone() const;

  const ConsistencyNetConfig& config() const { return config_; }
  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }

  ConsistencyOutput forward(const ag::Var& x_t, double t, bool encoder_only = false) const;

 private:
  struct Stage {
    Conv2d conv;
    Linear film;
  };
  ag::Var run_stage(const Stage& stage, const ag::Var& x, const ag::Var& embedding) const;

  ConsistencyNetConfig config_;
  ParameterStore store_;
  std::array<Stage, 3> enc_;
  std::array<Stage, 3> dec_;  // dec_[0] at H/4, dec_[1] at H/2, dec_[2] at H
  std::array<Conv2d, 2> up_;
  Conv2d out_;
};

/// (N, dim, 1, 1) sinusoidal embedding of log t, identical for every sample.
Tensor time_embedding(double t, int dim, int batch);

/// F_theta and its features. Requires x_t of shape (N, 2, H, W) with H and W
/// positive multiples of 4.
ConsistencyOutput consistency_forward(const ConsistencyNetwork& net, const ag::Var& x_t,
                                      double t);

/// D_theta(x_t, t) = c_skip(t) x_t + c_out(t) F_theta(x_t, t). Identity at
/// t = epsilon for any parameters.
ag::Var consistency_apply(const ConsistencyNetwork& net, const ag::Var& x_t, double t,
                          const NoiseSchedule& schedule);

/// Frozen feature extraction at (x_eps, eps), taking x_eps = x0. Runs without
/// graph recording so no backbone parameter can receive gradient.
EncoderFeatures extract_features(const ConsistencyNetwork& net, const Tensor& x0,
                                 const NoiseSchedule& schedule,
                                 FeatureSource source = FeatureSource::encoder);

/// Concurrent spatial and channel squeeze-and-excitation:
///   cSE(u) = u * sigmoid(W2 relu(W1 gap(u)))    (per channel)
///   sSE(u) = u * sigmoid(conv1x1(u))            (per pixel)
///   scSE(u) = cSE(u) + sSE(u)
class ScSE {
 public:
  ScSE() = default;
  ScSE(ParameterStore& store, const std::string& name, int channels, int reduction,
       std::mt19937_64& rng);

  ag::Var operator()(const ag::Var& u) const;

  const Linear& squeeze() const { return fc1_; }
  const Linear& excite() const { return fc2_; }
  const Conv2d& spatial() const { return spatial_; }

 private:
  int channels_ = 0;
  Linear fc1_;
  Linear fc2_;
  Conv2d spatial_;
};

struct FusionNetConfig {
  std::array<int, 3> widths{16, 32, 64};  ///< must match the feature widths
  int reduction = 2;
  std::uint64_t seed = 1;
};

/// Fusion head: three ConvBlocks (3x3 conv + ReLU), two SCABlocks (3x3 conv,
/// ReLU, scSE, 2x nearest upsample) and ConvT (3x3 conv + tanh).
///
///   f3 -> CB3 -> SCA3 (up) -+
///   f2 -> CB2 --------------+-> concat -> SCA2 (up) -+
///   f1 -> CB1 ---------------------------------------+-> concat -> ConvT
class FusionNetwork {
 public:
  explicit FusionNetwork(const FusionNetConfig& config = {});
  FusionNetwork(FusionNetwork&&) = default;
  FusionNetwork& operator=(FusionNetwork&&) = default;
  FusionNetwork(const FusionNetwork&) = delete;
  FusionNetwork& operator=(const FusionNetwork&) = delete;

  const FusionNetConfig& config() const { return config_; }
  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }

  /// (N, 1, H, W) in (-1, 1).
  ag::Var forward(const EncoderFeatures& features) const;

 private:
  FusionNetConfig config_;
  ParameterStore store_;
  std::array<Conv2d, 3> conv_blocks_;
  std::array<Conv2d, 2> sca_convs_;
  std::array<ScSE, 2> sca_scse_;
  Conv2d conv_t_;
};

ag::Var fusion_forward(const FusionNetwork& head, const EncoderFeatures& features);

/// Validates the three-scale shape contract against `widths`.
void check_feature_scales(const EncoderFeatures& features, const std::array<int, 3>& widths);

}  // namespace comofusion
