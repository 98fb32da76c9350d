#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "comofusion/checkpoint.hpp"
#include "comofusion/consistency_training.hpp"
#include "comofusion/errors.hpp"
#include "comofusion/fusion_training.hpp"

using namespace comofusion;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("comofusion_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Tensor normal_tensor(Shape s, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor t(s);
  for (auto& v : t.data()) v = n(rng);
  return t;
}

CMTrainConfig tiny_cm_config(int steps) {
  CMTrainConfig cfg;
  cfg.net = {{4, 8, 8}, 8, 11};
  cfg.batch_size = 3;
  cfg.crop = 16;
  cfg.steps = steps;
  cfg.seed = 5;
  cfg.learning_rate = 1e-3;
  return cfg;
}

FusionTrainConfig tiny_fusion_config() {
  FusionTrainConfig cfg;
  cfg.head = {{4, 8, 8}, 2, 12};
  cfg.batch_size = 3;
  cfg.crop = 16;
  cfg.epochs = 2;
  cfg.seed = 5;
  cfg.learning_rate = 1e-3;
  return cfg;
}

void require_bitwise_equal(const ParameterStore& a, const ParameterStore& b) {
  REQUIRE(a.size() == b.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    const Tensor& x = a.items()[k].var.value();
    const Tensor& y = b.items()[k].var.value();
    REQUIRE(x.shape() == y.shape());
    for (std::size_t j = 0; j < x.numel(); ++j) REQUIRE(x[j] == y[j]);
  }
}

const ConsistencyFn kIdentity = [](const ag::Var& x, double) { return x; };

}  // namespace

TEST_SUITE("training") {

TEST_CASE("consistency loss with identity D and squared L2") {
  const NoiseSchedule s = make_schedule();
  CMTrainConfig cfg;
  cfg.distance = DistanceKind::squared_l2;
  cfg.weight = [](double t) { return 1.0 + t; };
  std::mt19937_64 rng(31);
  const Tensor x0 = normal_tensor({2, 2, 4, 4}, rng);
  for (int trial = 0; trial < 20; ++trial) {
    const int i = 1 + static_cast<int>(rng() % 39);
    const Tensor z = normal_tensor(x0.shape(), rng);
    double mean_z2 = 0.0;
    for (double v : z.data()) mean_z2 += v * v;
    mean_z2 /= static_cast<double>(z.numel());
    const double dt = s.time(i + 1) - s.time(i);
    const ConsistencyLossResult r = consistency_loss(kIdentity, kIdentity, x0, s, i, z, cfg);
    CHECK(std::abs(r.value - (1.0 + s.time(i)) * dt * dt * mean_z2) < 1e-9 * std::max(1.0, r.value));
  }
  CHECK_THROWS_AS(consistency_loss(kIdentity, kIdentity, x0, s, 0, x0, cfg), ValidationError);
  CHECK_THROWS_AS(consistency_loss(kIdentity, kIdentity, x0, s, 40, x0, cfg), ValidationError);
}

TEST_CASE("pseudo-Huber closed form") {
  const NoiseSchedule s = make_schedule();
  CMTrainConfig cfg;
  std::mt19937_64 rng(32);
  const Tensor x0 = normal_tensor({3, 2, 4, 4}, rng);
  const Tensor z = normal_tensor(x0.shape(), rng);
  const int i = 7;
  const double dt = s.time(i + 1) - s.time(i);
  const double c = 0.00054 * std::sqrt(32.0);
  double expected = 0.0;
  for (int n = 0; n < 3; ++n) {
    double sq = 0.0;
    for (int k = 0; k < 32; ++k) sq += z[n * 32 + k] * z[n * 32 + k];
    expected += std::sqrt(dt * dt * sq + c * c) - c;
  }
  expected /= 3;
  CHECK(consistency_loss(kIdentity, kIdentity, x0, s, i, z, cfg).value == doctest::Approx(expected).epsilon(1e-12));

  // Same z on both branches: with zero noise the two points coincide.
  const Tensor zero(x0.shape());
  CHECK(consistency_loss(kIdentity, kIdentity, x0, s, i, zero, cfg).value == 0.0);
}

TEST_CASE("distance gradients") {
  std::mt19937_64 rng(33);
  const Tensor a = normal_tensor({2, 2, 3, 3}, rng);
  const Tensor b = normal_tensor({2, 2, 3, 3}, rng);
  for (DistanceKind kind : {DistanceKind::squared_l2, DistanceKind::pseudo_huber}) {
    CMTrainConfig cfg;
    cfg.distance = kind;
    cfg.huber_c = 0.3;
    Tensor grad;
    batch_distance(a, b, cfg, &grad);
    for (std::size_t k = 0; k < a.numel(); ++k) {
      Tensor p = a, m = a;
      p[k] += 1e-6;
      m[k] -= 1e-6;
      const double numeric = (batch_distance(p, b, cfg, nullptr) - batch_distance(m, b, cfg, nullptr)) / 2e-6;
      CHECK(grad[k] == doctest::Approx(numeric).epsilon(1e-6));
    }
  }
  CMTrainConfig missing;
  missing.distance = DistanceKind::perceptual;
  CHECK_THROWS_AS(batch_distance(a, b, missing, nullptr), ValidationError);
  CHECK(parse_distance("pseudo-huber") == DistanceKind::pseudo_huber);
  CHECK_THROWS_AS(parse_distance("l7"), ValidationError);
}

TEST_CASE("ema update") {
  ConsistencyNetwork theta({{4, 8, 8}, 8, 1});
  ConsistencyNetwork ema({{4, 8, 8}, 8, 2});
  ConsistencyNetwork before = ema.clone();

  ema_update(ema, theta, 0.95);
  for (std::size_t k = 0; k < ema.parameters().size(); ++k) {
    const Tensor& e = ema.parameters().items()[k].var.value();
    const Tensor& t = theta.parameters().items()[k].var.value();
    const Tensor& b = before.parameters().items()[k].var.value();
    for (std::size_t j = 0; j < e.numel(); ++j) CHECK(e[j] == doctest::Approx(0.95 * b[j] + 0.05 * t[j]));
  }
  ema_update(ema, theta, 0.0);
  require_bitwise_equal(ema.parameters(), theta.parameters());

  CHECK_THROWS_AS(ema_update(ema, theta, 1.0), ValidationError);
  ConsistencyNetwork other({{4, 8, 16}, 8, 1});
  CHECK_THROWS_AS(ema_update(ema, other, 0.5), ValidationError);
}

TEST_CASE("stage-1 training is deterministic and resumable") {
  const PairDataset data = make_synthetic_pairs(6, 20, 3);
  const NoiseSchedule s = make_schedule();
  const CMTrainState full = train_consistency(data, tiny_cm_config(6), s);
  REQUIRE(full.losses.size() == 6);
  for (double l : full.losses) CHECK(std::isfinite(l));

  const CMTrainState again = train_consistency(data, tiny_cm_config(6), s);
  CHECK(again.losses == full.losses);
  require_bitwise_equal(again.theta.parameters(), full.theta.parameters());

  const fs::path dir = scratch_dir("resume");
  CMTrainState half = train_consistency(data, tiny_cm_config(3), s);
  save_cm_checkpoint(dir / "cm.ckpt", half, s);
  CMCheckpoint loaded = load_cm_checkpoint(dir / "cm.ckpt");
  CHECK(loaded.schedule == s.params());
  CHECK(loaded.state.step == 3);
  train_consistency(data, tiny_cm_config(6), s, loaded.state);
  CHECK(loaded.state.losses == full.losses);
  require_bitwise_equal(loaded.state.theta.parameters(), full.theta.parameters());
  require_bitwise_equal(loaded.state.ema.parameters(), full.ema.parameters());

  int hooks = 0;
  CMTrainConfig hooked = tiny_cm_config(4);
  hooked.checkpoint_every = 2;
  CMTrainState st = init_consistency_state(hooked);
  train_consistency(data, hooked, s, st, [&](const CMTrainState& cur) {
    ++hooks;
    CHECK(cur.step % 2 == 0);
  });
  CHECK(hooks == 2);
  fs::remove_all(dir);
}

TEST_CASE("checkpoint corruption and compatibility") {
  const fs::path dir = scratch_dir("ckpt");
  const NoiseSchedule s = make_schedule();
  CMTrainState st = init_consistency_state(tiny_cm_config(1));
  save_cm_checkpoint(dir / "cm.ckpt", st, s);

  CHECK_THROWS_AS(load_cm_checkpoint(dir / "absent.ckpt"), IoError);

  const auto size = fs::file_size(dir / "cm.ckpt");
  fs::copy_file(dir / "cm.ckpt", dir / "short.ckpt");
  fs::resize_file(dir / "short.ckpt", size - 16);
  CHECK_THROWS_AS(load_cm_checkpoint(dir / "short.ckpt"), IoError);

  std::ofstream(dir / "junk.ckpt") << "definitely not an archive";
  CHECK_THROWS_AS(load_cm_checkpoint(dir / "junk.ckpt"), IoError);

  FusionNetwork head({{4, 8, 8}, 2, 1});
  save_fusion_checkpoint(dir / "fusion.ckpt", head, s, FeatureSource::decoder);
  CHECK_THROWS_AS(load_cm_checkpoint(dir / "fusion.ckpt"), ValidationError);

  ScheduleParams other = s.params();
  other.rho = 5.0;
  CHECK_THROWS_AS(require_compatible_schedule(s.params(), other), ValidationError);
  CHECK_NOTHROW(require_compatible_schedule(s.params(), s.params()));
  fs::remove_all(dir);
}

TEST_CASE("archive roundtrip") {
  const fs::path dir = scratch_dir("archive");
  Archive ar;
  ar.meta = {{"k", 3}};
  std::mt19937_64 rng(34);
  ar.tensors.emplace("a", normal_tensor({1, 2, 3, 4}, rng));
  ar.tensors.emplace("b", normal_tensor({2, 1, 1, 1}, rng));
  write_archive(dir / "x.bin", ar);
  const Archive back = read_archive(dir / "x.bin");
  CHECK(back.meta.at("k") == 3);
  REQUIRE(back.tensors.size() == 2);
  for (const auto& [name, t] : ar.tensors) {
    const Tensor& u = back.tensors.at(name);
    REQUIRE(u.shape() == t.shape());
    for (std::size_t k = 0; k < t.numel(); ++k) CHECK(u[k] == t[k]);
  }
  fs::remove_all(dir);
}

TEST_CASE("fusion batch loss averages per-sample losses") {
  std::mt19937_64 rng(35);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor vis({2, 1, 6, 6}), ir({2, 1, 6, 6}), fused({2, 1, 6, 6});
  for (Tensor* t : {&vis, &ir, &fused})
    for (auto& v : t->data()) v = u(rng);
  FusionTrainConfig cfg;
  cfg.lambda_tradeoff = 0.5;
  const FusionBatchLoss b = fusion_batch_loss(vis, ir, fused, cfg);
  double total = 0.0;
  for (int n = 0; n < 2; ++n) {
    auto plane = [&](const Tensor& t) {
      const Tensor s = t.sample(n);
      return GrayImage(6, 6, RangeTag::model, std::vector<double>(s.data().begin(), s.data().end()));
    };
    const LossWithGradient l = fusion_total_loss_with_gradient(plane(vis), plane(ir), plane(fused), cfg);
    total += l.value;
    for (int k = 0; k < 36; ++k) CHECK(b.grad_fused[n * 36 + k] == doctest::Approx(l.grad_fused[k] / 2));
  }
  CHECK(b.total == doctest::Approx(total / 2));
  CHECK(b.total == doctest::Approx(b.pvs + 0.5 * b.grad));
}

TEST_CASE("stage-2 training freezes the backbone") {
  const PairDataset data = make_synthetic_pairs(6, 20, 4);
  const NoiseSchedule s = make_schedule();
  const ConsistencyNetwork cm({{4, 8, 8}, 8, 13});
  const ConsistencyNetwork cm_before = cm.clone();

  for (FeatureSource source : {FeatureSource::encoder, FeatureSource::decoder}) {
    FusionTrainConfig cfg = tiny_fusion_config();
    cfg.feature_source = source;
    FusionNetwork head(cfg.head);
    const FusionNetwork head_before = [&] {
      FusionNetwork h(cfg.head);
      h.parameters().copy_from(head.parameters());
      return h;
    }();
    const FusionTrainResult r = train_fusion(data, cm, head, cfg, s);
    CHECK(r.losses.size() == 4);  // 2 epochs of ceil(6 / 3) batches
    require_bitwise_equal(cm.parameters(), cm_before.parameters());
    for (const auto& p : cm.parameters().items()) CHECK_FALSE(p.var.has_grad());

    bool changed = false;
    for (std::size_t k = 0; k < head.parameters().size(); ++k) {
      const Tensor& a = head.parameters().items()[k].var.value();
      const Tensor& b = head_before.parameters().items()[k].var.value();
      for (std::size_t j = 0; j < a.numel(); ++j) changed |= a[j] != b[j];
    }
    CHECK(changed);

    FusionNetwork head2(cfg.head);
    CHECK(train_fusion(data, cm, head2, cfg, s).losses == r.losses);
  }

  FusionTrainConfig bad = tiny_fusion_config();
  bad.head.widths = {4, 8, 16};
  FusionNetwork mismatched(bad.head);
  CHECK_THROWS_AS(train_fusion(data, cm, mismatched, bad, s), ValidationError);
  CHECK_THROWS_AS(train_fusion(PairDataset{}, cm, mismatched, tiny_fusion_config(), s), ValidationError);
}

TEST_CASE("fuse_pair handles arbitrary sizes") {
  const NoiseSchedule s = make_schedule();
  const ConsistencyNetwork cm({{4, 8, 8}, 8, 14});
  const FusionNetwork head({{4, 8, 8}, 2, 15});
  std::mt19937_64 rng(36);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto [h, w] : {std::pair{13, 10}, {16, 16}, {3, 7}}) {
    GrayImage ir(h, w, RangeTag::unit), vis(h, w, RangeTag::unit);
    for (auto& v : ir.data()) v = u(rng);
    for (auto& v : vis.data()) v = u(rng);
    for (FeatureSource src : {FeatureSource::encoder, FeatureSource::decoder}) {
      const GrayImage f = fuse_pair(cm, head, s, src, ir, vis);
      CHECK(f.height() == h);
      CHECK(f.width() == w);
      CHECK(f.range() == RangeTag::unit);
      CHECK_NOTHROW(validate(f));
    }
  }
  CHECK_THROWS_AS(fuse_pair(cm, head, s, FeatureSource::encoder, GrayImage(8, 8, RangeTag::unit),
                            GrayImage(8, 9, RangeTag::unit)),
                  ValidationError);
}

TEST_CASE("reflect padding") {
  const GrayImage img(2, 3, RangeTag::unit, std::vector<double>{0.0, 0.1, 0.2, 0.3, 0.4, 0.5});
  const GrayImage p = reflect_pad(img, 3, 2);
  CHECK(p.height() == 5);
  CHECK(p.width() == 5);
  // Columns 0 1 2 | 1 0, rows 0 1 | 0 1 0.
  CHECK(p.at(0, 3) == 0.1);
  CHECK(p.at(0, 4) == 0.0);
  CHECK(p.at(2, 0) == 0.0);
  CHECK(p.at(3, 2) == 0.5);
  CHECK(p.at(4, 4) == 0.0);
  CHECK(reflect_pad(img, 0, 0) == img);
}

TEST_CASE("fusion checkpoint roundtrip") {
  const fs::path dir = scratch_dir("fusion_ckpt");
  const NoiseSchedule s = make_schedule();
  const ConsistencyNetwork cm({{4, 8, 8}, 8, 16});
  const FusionNetwork head({{4, 8, 8}, 2, 17});
  save_fusion_checkpoint(dir / "f.ckpt", head, s, FeatureSource::decoder);
  const FusionCheckpoint back = load_fusion_checkpoint(dir / "f.ckpt");
  CHECK(back.feature_source == FeatureSource::decoder);
  CHECK(back.schedule == s.params());
  require_bitwise_equal(back.head.parameters(), head.parameters());

  CMTrainState st = init_consistency_state(tiny_cm_config(1));
  save_cm_checkpoint(dir / "cm.ckpt", st, s);
  CHECK_THROWS_AS(load_fusion_checkpoint(dir / "cm.ckpt"), ValidationError);
  CHECK_THROWS_AS(load_fusion_checkpoint(dir / "none.ckpt"), IoError);
  fs::remove_all(dir);
}

}  // TEST_SUITE

TEST_SUITE("dataset") {

TEST_CASE("synthetic pairs and batches") {
  const PairDataset a = make_synthetic_pairs(4, 24, 9);
  const PairDataset b = make_synthetic_pairs(4, 24, 9);
  REQUIRE(a.size() == 4);
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(a.pairs[k].ir == b.pairs[k].ir);
    CHECK(a.pairs[k].vis == b.pairs[k].vis);
    CHECK_NOTHROW(validate(a.pairs[k].ir));
  }
  std::mt19937_64 rng = derive_rng(1, {2, 3});
  const std::vector<std::size_t> idx{0, 3, 3};
  const Tensor x = make_batch(a, idx, 16, rng);
  CHECK(x.shape() == Shape{3, 2, 16, 16});
  for (double v : x.data()) {
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }
  CHECK(channel_of(x, 1).shape() == Shape{3, 1, 16, 16});
  CHECK(derive_rng(1, {2, 3})() == derive_rng(1, {2, 3})());
  CHECK(derive_rng(1, {2, 3})() != derive_rng(1, {3, 2})());
}

TEST_CASE("directory datasets") {
  const fs::path dir = scratch_dir("dataset");
  const PairDataset a = make_synthetic_pairs(3, 12, 2);
  write_pair_dataset(a, dir / "ir", dir / "vis");
  const PairDataset back = load_pair_dataset(dir / "ir", dir / "vis");
  REQUIRE(back.size() == 3);
  CHECK(back.pairs[0].ir.height() == 12);

  fs::copy_file(dir / "ir" / (a.pairs[0].name), dir / "ir" / "orphan.png");
  CHECK_THROWS_AS(load_pair_dataset(dir / "ir", dir / "vis"), ValidationError);
  CHECK_THROWS_AS(load_pair_dataset(dir / "missing", dir / "vis"), IoError);
  fs::remove_all(dir);
}

}  // TEST_SUITE
