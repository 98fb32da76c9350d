#include "comofusion/nets.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "comofusion/errors.hpp"

namespace comofusion {

std::string_view to_string(FeatureSource source) {
  return source == FeatureSource::encoder ? "encoder" : "decoder";
}

FeatureSource parse_feature_source(std::string_view text) {
  if (text == "encoder") return FeatureSource::encoder;
  if (text == "decoder") return FeatureSource::decoder;
  throw ValidationError("feature source must be 'encoder' or 'decoder', got '" +
                        std::string(text) + "'");
}

namespace {

constexpr double kFilmInitScale = 0.1;
constexpr double kMinEmbeddingTime = 1e-12;
constexpr int kInputChannels = 2;

void check_widths(const std::array<int, 3>& widths) {
  for (int w : widths) {
    if (w <= 0) throw ValidationError("channel widths must be positive");
  }
}

}  // namespace

Tensor time_embedding(double t, int dim, int batch) {
  if (dim <= 0 || dim % 2 != 0) throw ValidationError("embedding dim must be positive and even");
  const double c = std::log(std::max(t, kMinEmbeddingTime));
  const int half = dim / 2;
  Tensor e(Shape{batch, dim, 1, 1});
  for (int k = 0; k < half; ++k) {
    // Frequencies span [1, 1/100] geometrically; log t lives in roughly [-7, 5].
    const double freq = std::exp(-std::log(100.0) * k / std::max(half - 1, 1));
    const double s = std::sin(c * freq);
    const double co = std::cos(c * freq);
    for (int n = 0; n < batch; ++n) {
      e.at(n, k, 0, 0) = s;
      e.at(n, half + k, 0, 0) = co;
    }
  }
  return e;
}

ConsistencyNetwork::ConsistencyNetwork(const ConsistencyNetConfig& config) : config_(config) {
  check_widths(config.widths);
  if (config.embed_dim <= 0 || config.embed_dim % 2 != 0) {
    throw ValidationError("embed_dim must be positive and even");
  }
  std::mt19937_64 rng(config.seed);
  const auto& w = config.widths;
  const int e = config.embed_dim;
  enc_[0] = {Conv2d(store_, "enc1.conv", kInputChannels, w[0], 3, 1, rng),
             Linear(store_, "enc1.film", e, 2 * w[0], rng, kFilmInitScale)};
  enc_[1] = {Conv2d(store_, "enc2.conv", w[0], w[1], 3, 2, rng),
             Linear(store_, "enc2.film", e, 2 * w[1], rng, kFilmInitScale)};
  enc_[2] = {Conv2d(store_, "enc3.conv", w[1], w[2], 3, 2, rng),
             Linear(store_, "enc3.film", e, 2 * w[2], rng, kFilmInitScale)};
  dec_[0] = {Conv2d(store_, "dec3.conv", w[2], w[2], 3, 1, rng),
             Linear(store_, "dec3.film", e, 2 * w[2], rng, kFilmInitScale)};
  up_[0] = Conv2d(store_, "dec2.up", w[2], w[1], 1, 1, rng);
  dec_[1] = {Conv2d(store_, "dec2.conv", w[1], w[1], 3, 1, rng),
             Linear(store_, "dec2.film", e, 2 * w[1], rng, kFilmInitScale)};
  up_[1] = Conv2d(store_, "dec1.up", w[1], w[0], 1, 1, rng);
  dec_[2] = {Conv2d(store_, "dec1.conv", w[0], w[0], 3, 1, rng),
             Linear(store_, "dec1.film", e, 2 * w[0], rng, kFilmInitScale)};
  out_ = Conv2d(store_, "out.conv", w[0], kInputChannels, 3, 1, rng);
}

ConsistencyNetwork ConsistencyNetwork::clone() const {
  ConsistencyNetwork copy(config_);
  copy.store_.copy_from(store_);
  return copy;
}

ag::Var ConsistencyNetwork::run_stage(const Stage& stage, const ag::Var& x,
                                      const ag::Var& embedding) const {
  return ag::silu(ag::modulate(stage.conv(x), stage.film(embedding)));
}

ConsistencyOutput ConsistencyNetwork::forward(const ag::Var& x_t, double t,
                                              bool encoder_only) const {
  const Shape s = x_t.shape();
  if (s.c != kInputChannels) {
    throw ValidationError("consistency network expects 2 input channels, got " +
                          to_string(s));
  }
  if (s.h < 4 || s.w < 4 || s.h % 4 != 0 || s.w % 4 != 0) {
    throw ValidationError("consistency network input must be a multiple of 4 in H and W, got " +
                          std::to_string(s.h) + "x" + std::to_string(s.w));
  }
  if (!std::isfinite(t) || t < 0.0) throw ValidationError("time must be finite and >= 0");

  const ag::Var emb = ag::constant(time_embedding(t, config_.embed_dim, s.n));
  ConsistencyOutput out;
  out.encoder.f1 = run_stage(enc_[0], x_t, emb);
  out.encoder.f2 = run_stage(enc_[1], out.encoder.f1, emb);
  out.encoder.f3 = run_stage(enc_[2], out.encoder.f2, emb);
  if (encoder_only) return out;

  out.decoder.f3 = run_stage(dec_[0], out.encoder.f3, emb);
  out.decoder.f2 = run_stage(
      dec_[1], ag::add(ag::upsample_nearest2x(up_[0](out.decoder.f3)), out.encoder.f2), emb);
  out.decoder.f1 = run_stage(
      dec_[2], ag::add(ag::upsample_nearest2x(up_[1](out.decoder.f2)), out.encoder.f1), emb);
  out.output = out_(out.decoder.f1);
  return out;
}

ConsistencyOutput consistency_forward(const ConsistencyNetwork& net, const ag::Var& x_t,
                                      double t) {
  return net.forward(x_t, t);
}

ag::Var consistency_apply(const ConsistencyNetwork& net, const ag::Var& x_t, double t,
                          const NoiseSchedule& schedule) {
  const double skip = c_skip(t, schedule);
  const double out = c_out(t, schedule);
  return ag::axpby(skip, x_t, out, net.forward(x_t, t).output);
}

EncoderFeatures extract_features(const ConsistencyNetwork& net, const Tensor& x0,
                                 const NoiseSchedule& schedule, FeatureSource source) {
  ag::NoGradGuard no_grad;
  const bool encoder_only = source == FeatureSource::encoder;
  ConsistencyOutput out = net.forward(ag::constant(x0), schedule.epsilon(), encoder_only);
  return encoder_only ? out.encoder : out.decoder;
}

ScSE::ScSE(ParameterStore& store, const std::string& name, int channels, int reduction,
           std::mt19937_64& rng)
    : channels_(channels) {
  if (reduction <= 0 || channels <= 0 || channels % reduction != 0) {
    throw ValidationError("scSE: channel count " + std::to_string(channels) +
                          " is not divisible by reduction " + std::to_string(reduction));
  }
  fc1_ = Linear(store, name + ".cse_fc1", channels, channels / reduction, rng);
  fc2_ = Linear(store, name + ".cse_fc2", channels / reduction, channels, rng);
  spatial_ = Conv2d(store, name + ".sse_conv", channels, 1, 1, 1, rng);
}

ag::Var ScSE::operator()(const ag::Var& u) const {
  if (u.shape().c != channels_) {
    throw ValidationError("scSE: expected " + std::to_string(channels_) + " channels, got " +
                          to_string(u.shape()));
  }
  const ag::Var channel_gate = ag::sigmoid(fc2_(ag::relu(fc1_(ag::global_avg_pool(u)))));
  const ag::Var spatial_gate = ag::sigmoid(spatial_(u));
  return ag::add(ag::scale_channels(u, channel_gate), ag::scale_spatial(u, spatial_gate));
}

FusionNetwork::FusionNetwork(const FusionNetConfig& config) : config_(config) {
  check_widths(config.widths);
  std::mt19937_64 rng(config.seed);
  const auto& w = config.widths;
  conv_blocks_[0] = Conv2d(store_, "cb1", w[0], w[0], 3, 1, rng);
  conv_blocks_[1] = Conv2d(store_, "cb2", w[1], w[1], 3, 1, rng);
  conv_blocks_[2] = Conv2d(store_, "cb3", w[2], w[2], 3, 1, rng);
  sca_convs_[1] = Conv2d(store_, "sca3.conv", w[2], w[1], 3, 1, rng);
  sca_scse_[1] = ScSE(store_, "sca3.scse", w[1], config.reduction, rng);
  sca_convs_[0] = Conv2d(store_, "sca2.conv", 2 * w[1], w[0], 3, 1, rng);
  sca_scse_[0] = ScSE(store_, "sca2.scse", w[0], config.reduction, rng);
  conv_t_ = Conv2d(store_, "conv_t", 2 * w[0], 1, 3, 1, rng);
}

void check_feature_scales(const EncoderFeatures& f, const std::array<int, 3>& widths) {
  if (!f.f1.defined() || !f.f2.defined() || !f.f3.defined()) {
    throw ValidationError("feature pyramid is incomplete");
  }
  const Shape s1 = f.f1.shape();
  const Shape expect2{s1.n, widths[1], s1.h / 2, s1.w / 2};
  const Shape expect3{s1.n, widths[2], s1.h / 4, s1.w / 4};
  if (s1.c != widths[0] || s1.h % 4 != 0 || s1.w % 4 != 0 || f.f2.shape() != expect2 ||
      f.f3.shape() != expect3) {
    throw ValidationError("feature scales " + to_string(s1) + ", " + to_string(f.f2.shape()) +
                          ", " + to_string(f.f3.shape()) + " do not form an H, H/2, H/4 pyramid");
  }
}

ag::Var FusionNetwork::forward(const EncoderFeatures& features) const {
  check_feature_scales(features, config_.widths);
  const ag::Var c3 = ag::relu(conv_blocks_[2](features.f3));
  const ag::Var s3 =
      ag::upsample_nearest2x(sca_scse_[1](ag::relu(sca_convs_[1](c3))));
  const ag::Var c2 = ag::relu(conv_blocks_[1](features.f2));
  const ag::Var s2 = ag::upsample_nearest2x(
      sca_scse_[0](ag::relu(sca_convs_[0](ag::concat_channels(s3, c2)))));
  const ag::Var c1 = ag::relu(conv_blocks_[0](features.f1));
  return ag::tanh(conv_t_(ag::concat_channels(s2, c1)));
}

ag::Var fusion_forward(const FusionNetwork& head, const EncoderFeatures& features) {
  return head.forward(features);
}

}  // namespace comofusion
