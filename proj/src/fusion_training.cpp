#include "comofusion/fusion_training.hpp"

#include <algorithm>
#include <numeric>

#include "comofusion/checkpoint.hpp"
#include "comofusion/consistency_training.hpp"
#include "comofusion/errors.hpp"
#include "comofusion/optim.hpp"

namespace comofusion {

namespace {

constexpr std::uint64_t kEpochStream = 2;
constexpr std::uint64_t kBatchStream = 3;

GrayImage plane_image(const Tensor& t, int n) {
  const Shape s = t.shape();
  const double* src = t.raw() + static_cast<std::size_t>(n) * s.sample();
  return GrayImage(s.h, s.w, RangeTag::model, std::vector<double>(src, src + s.plane()));
}

}  // namespace

FusionBatchLoss fusion_batch_loss(const Tensor& vis, const Tensor& ir, const Tensor& fused,
                                  const FusionTrainConfig& cfg) {
  const Shape s = fused.shape();
  if (s.c != 1 || vis.shape() != s || ir.shape() != s) {
    throw ValidationError("fusion_batch_loss: expected matching (N, 1, H, W) planes, got " +
                          to_string(vis.shape()) + ", " + to_string(ir.shape()) + ", " +
                          to_string(s));
  }
  FusionBatchLoss out;
  out.grad_fused = Tensor(s);
  const double inv_n = 1.0 / s.n;
  for (int n = 0; n < s.n; ++n) {
    const GrayImage v = plane_image(vis, n);
    const GrayImage i = plane_image(ir, n);
    const GrayImage f = plane_image(fused, n);
    const LossWithGradient pvs = pvs_loss_with_gradient(v, i, f, cfg.epsilon_div);
    const LossWithGradient grad = grad_loss_with_gradient(v, i, f);
    out.pvs += pvs.value * inv_n;
    out.grad += grad.value * inv_n;
    out.total += (pvs.value + cfg.lambda_tradeoff * grad.value) * inv_n;
    double* dst = out.grad_fused.raw() + static_cast<std::size_t>(n) * s.plane();
    for (std::size_t k = 0; k < s.plane(); ++k) {
      dst[k] = (pvs.grad_fused[k] + cfg.lambda_tradeoff * grad.grad_fused[k]) * inv_n;
    }
  }
  return out;
}

FusionTrainResult train_fusion(const PairDataset& dataset, const ConsistencyNetwork& cm,
                               FusionNetwork& head, const FusionTrainConfig& cfg,
                               const NoiseSchedule& schedule) {
  validate(cfg);
  if (dataset.empty()) throw ValidationError("train_fusion: dataset is empty");
  if (head.config().widths != cm.config().widths) {
    throw ValidationError("fusion head widths do not match consistency network widths");
  }
  head.parameters().set_requires_grad(true);
  Adam adam(head.parameters(), AdamConfig{cfg.learning_rate});

  FusionTrainResult result;
  const std::size_t n = dataset.size();
  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffle_rng = derive_rng(cfg.seed, {kEpochStream, static_cast<std::uint64_t>(epoch)});
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    for (std::size_t start = 0, b = 0; start < n; start += batch, ++b) {
      const std::size_t end = std::min(n, start + batch);
      std::mt19937_64 rng = derive_rng(
          cfg.seed, {kBatchStream, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(b)});
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      const Tensor x0 = make_batch(dataset, idx, cfg.crop, rng);

      const EncoderFeatures features = extract_features(cm, x0, schedule, cfg.feature_source);
      adam.zero_grad();
      const ag::Var fused = fusion_forward(head, features);
      const FusionBatchLoss loss = fusion_batch_loss(channel_of(x0, kVisibleChannel),
                                                     channel_of(x0, kInfraredChannel),
                                                     fused.value(), cfg);
      ag::backward(fused, loss.grad_fused);
      adam.step();
      result.losses.push_back(loss.total);
    }
  }
  adam.zero_grad();
  return result;
}

GrayImage reflect_pad(const GrayImage& img, int pad_bottom, int pad_right) {
  if (pad_bottom < 0 || pad_right < 0) throw ValidationError("padding must be non-negative");
  if (pad_bottom == 0 && pad_right == 0) return img;
  const int h = img.height();
  const int w = img.width();
  auto reflect = [](int v, int n) {
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    v %= period;
    return v < n ? v : period - v;
  };
  GrayImage out(h + pad_bottom, w + pad_right, img.range());
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x) out.at(y, x) = img.at(reflect(y, h), reflect(x, w));
  return out;
}

GrayImage fuse_pair(const ConsistencyNetwork& cm, const FusionNetwork& head,
                    const NoiseSchedule& schedule, FeatureSource source, const GrayImage& ir,
                    const GrayImage& vis) {
  require_same_shape(ir, vis, "fuse");
  require_min_size(ir, 3, "fuse");
  const int h = ir.height();
  const int w = ir.width();
  const int pad_b = (4 - h % 4) % 4;
  const int pad_r = (4 - w % 4) % 4;
  const GrayImage ir_m = to_model_range(reflect_pad(ir, pad_b, pad_r));
  const GrayImage vis_m = to_model_range(reflect_pad(vis, pad_b, pad_r));
  const MultiModalTensor x0 = concat_pair(ir_m, vis_m);

  Tensor fused;
  {
    ag::NoGradGuard no_grad;
    fused = fusion_forward(head, extract_features(cm, x0.data, schedule, source)).value();
  }
  GrayImage out(h, w, RangeTag::model);
  const int pw = fused.shape().w;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out.at(y, x) = fused[static_cast<std::size_t>(y) * pw + x];
  return to_unit_range(out);
}

FusionStatistics fusion_statistics(const PairDataset& dataset, const ConsistencyNetwork& cm,
                                   const FusionNetwork& head, const NoiseSchedule& schedule,
                                   const FusionTrainConfig& cfg) {
  if (dataset.empty()) throw ValidationError("fusion_statistics: dataset is empty");
  FusionStatistics st;
  for (const auto& p : dataset.pairs) {
    const GrayImage fused = to_model_range(
        fuse_pair(cm, head, schedule, cfg.feature_source, p.ir, p.vis));
    const GrayImage vis = to_model_range(p.vis);
    const GrayImage ir = to_model_range(p.ir);
    st.mean_g_fused += gradient_energy(fused);
    st.mean_g_redundant += gradient_energy(redundant_image(vis, ir, fused));
    st.mean_pvs += pvs_loss(vis, ir, fused, cfg.epsilon_div);
    st.mean_grad += grad_loss(vis, ir, fused);
  }
  const double inv = 1.0 / static_cast<double>(dataset.size());
  st.mean_g_fused *= inv;
  st.mean_g_redundant *= inv;
  st.mean_pvs *= inv;
  st.mean_grad *= inv;
  return st;
}

void save_fusion_checkpoint(const std::filesystem::path& path, const FusionNetwork& head,
                            const NoiseSchedule& schedule, FeatureSource source) {
  Archive ar;
  ar.meta = {{"format_version", kArchiveFormatVersion},
             {"stage", "fusion"},
             {"schedule", schedule_to_json(schedule.params())},
             {"widths", head.config().widths},
             {"reduction", head.config().reduction},
             {"head_seed", head.config().seed},
             {"feature_source", std::string(to_string(source))}};
  for (const auto& p : head.parameters().items()) ar.tensors.emplace("head/" + p.name, p.var.value());
  write_archive(path, ar);
}

FusionCheckpoint load_fusion_checkpoint(const std::filesystem::path& path) {
  const Archive ar = read_archive(path);
  try {
    if (ar.meta.at("stage").get<std::string>() != "fusion") {
      throw ValidationError(path.string() + " is not a fusion checkpoint");
    }
    if (ar.meta.at("format_version").get<int>() != kArchiveFormatVersion) {
      throw ValidationError("unsupported checkpoint format version in " + path.string());
    }
    FusionNetConfig cfg;
    cfg.widths = ar.meta.at("widths").get<std::array<int, 3>>();
    cfg.reduction = ar.meta.at("reduction").get<int>();
    cfg.seed = ar.meta.at("head_seed").get<std::uint64_t>();
    FusionCheckpoint ck{schedule_from_json(ar.meta.at("schedule")),
                        parse_feature_source(ar.meta.at("feature_source").get<std::string>()),
                        FusionNetwork(cfg)};
    for (const auto& p : ck.head.parameters().items()) {
      const auto it = ar.tensors.find("head/" + p.name);
      if (it == ar.tensors.end()) throw IoError(path.string() + " lacks tensor head/" + p.name);
      if (it->second.shape() != p.var.shape()) {
        throw ValidationError("checkpoint tensor head/" + p.name + " has wrong shape");
      }
      ag::Var v = p.var;
      v.mutable_value() = it->second;
    }
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed checkpoint metadata in " + path.string() + ": " + e.what());
  }
}

}  // namespace comofusion
