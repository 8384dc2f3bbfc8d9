#include <cmath>

#include "doctest.h"
#include "ttlab/attack.hpp"
#include "ttlab/synth.hpp"

using namespace ttlab;

namespace {

SynthConfig fixture_cfg() {
  SynthConfig cfg;
  cfg.train_n = 600;
  cfg.test_n = 120;
  cfg.seed = 77;
  cfg.cue_amp = 0.85f;
  cfg.cue_count = 4;
  cfg.smooth_noise = 0.10f;
  cfg.white_noise = 0.05f;
  return cfg;
}

const Model& tiny_model() {
  static Model m = [] {
    SynthConfig cfg = fixture_cfg();
    Dataset tr = synth_cifar_split(cfg, false);
    Dataset te = synth_cifar_split(cfg, true);
    Model mm = build_model("mini_vgg", 10, 11);
    TrainConfig tc;
    tc.epochs = 3;
    tc.batch_size = 32;
    tc.lr = 0.02f;
    tc.decay_epochs = {};
    tc.seed = 5;
    train(mm, tr, te, tc);
    return mm;
  }();
  return m;
}

const Dataset& fixture_test_set() {
  static Dataset ds = synth_cifar_split(fixture_cfg(), true);
  return ds;
}

bool same_vec(const std::vector<float>& a, const std::vector<float>& b) {
  return a == b;
}

AttackConfig quick_cfg() {
  AttackConfig cfg;
  cfg.loss.kind = LossKind::logit;
  cfg.iterations = 6;
  cfg.checkpoints = {3, 6};
  cfg.seed = 9;
  return cfg;
}

}  // namespace

TEST_CASE("smoothing kernel is a normalized symmetric gaussian") {
  Tensor k1 = make_ti_kernel(1);
  CHECK(k1.shape == std::vector<int>{1, 1});
  CHECK(k1.data[0] == 1.0f);

  Tensor k5 = make_ti_kernel(5);
  float sum = 0.f;
  for (float v : k5.data) sum += v;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 5; ++x) {
      CHECK(k5.data[static_cast<std::size_t>(y) * 5 + x] ==
            k5.data[static_cast<std::size_t>(y) * 5 + (4 - x)]);
      CHECK(k5.data[static_cast<std::size_t>(y) * 5 + x] ==
            k5.data[static_cast<std::size_t>(4 - y) * 5 + x]);
      CHECK(k5.data[12] >= k5.data[static_cast<std::size_t>(y) * 5 + x]);
    }

  Tensor k3 = make_ti_kernel(3);
  CHECK(k3.data[4] == doctest::Approx(0.204180).epsilon(1e-4));

  CHECK_THROWS_AS(make_ti_kernel(4), UsageError);
  CHECK_THROWS_AS(make_ti_kernel(0), UsageError);
}

TEST_CASE("gradient smoothing convolves each channel with zero padding") {
  Tensor g({2, 7, 7});
  g.data[static_cast<std::size_t>(3) * 7 + 3] = 9.f;            // channel 0 interior
  g.data[49 + static_cast<std::size_t>(0) * 7 + 0] = 9.f;       // channel 1 corner

  Tensor uniform({3, 3}, std::vector<float>(9, 1.f / 9.f));
  Tensor s = ti_smooth(g, uniform);
  CHECK(s.shape == g.shape);
  for (int y = 2; y <= 4; ++y)
    for (int x = 2; x <= 4; ++x)
      CHECK(s.data[static_cast<std::size_t>(y) * 7 + x] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(s.data[0] == 0.f);

  float in_sum = 0.f, out_sum = 0.f;
  for (int i = 0; i < 49; ++i) {
    in_sum += g.data[static_cast<std::size_t>(i)];
    out_sum += s.data[static_cast<std::size_t>(i)];
  }
  CHECK(out_sum == doctest::Approx(in_sum).epsilon(1e-6));

  Tensor ident = ti_smooth(g, make_ti_kernel(1));
  CHECK(same_vec(ident.data, g.data));
}

TEST_CASE("diverse-input transform obeys its probability and band") {
  const Tensor& img = fixture_test_set().images[0];

  StreamRng off(3);
  for (int i = 0; i < 20; ++i) CHECK(same_vec(di_transform(img, 0.f, 29, 32, off).data, img.data));

  StreamRng forced(4);
  CHECK(same_vec(di_transform(img, 1.f, 32, 32, forced).data, img.data));

  StreamRng a(5), b(5);
  int changed = 0;
  for (int i = 0; i < 100; ++i) {
    Tensor ta = di_transform(img, 1.f, 29, 32, a);
    Tensor tb = di_transform(img, 1.f, 29, 32, b);
    CHECK(ta.shape == img.shape);
    CHECK(same_vec(ta.data, tb.data));
    if (!same_vec(ta.data, img.data)) ++changed;
    for (float v : ta.data) CHECK((v >= 0.f && v <= 1.f));
  }
  CHECK(changed > 50);

  StreamRng r(6);
  CHECK_THROWS_AS(di_transform(img, 1.f, 0, 32, r), UsageError);
  CHECK_THROWS_AS(di_transform(img, 1.f, 30, 40, r), UsageError);
}

TEST_CASE("momentum accumulation normalizes by the gradient l1 norm") {
  Tensor zero({2});
  Tensor g1({2}, {2.f, -2.f});
  Tensor m1 = mi_accumulate(zero, g1, 1.f);
  CHECK(m1.data == std::vector<float>{0.5f, -0.5f});

  Tensor g2({2}, {4.f, 4.f});
  Tensor m2 = mi_accumulate(m1, g2, 1.f);
  CHECK(m2.data[0] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(m2.data[1] == doctest::Approx(0.0).epsilon(1e-6));

  bool zero_event = false;
  Tensor m3 = mi_accumulate(m1, Tensor({2}), 0.5f, &zero_event);
  CHECK(zero_event);
  CHECK(m3.data == std::vector<float>{0.25f, -0.25f});

  Tensor m4 = mi_accumulate(m1, g2, 0.f);
  for (std::size_t i = 0; i < 2; ++i)
    CHECK((m4.data[i] > 0.f) == (g2.data[i] > 0.f));
}

TEST_CASE("step and projection arithmetic") {
  AttackConfig cfg;
  cfg.alpha = 2.f / 255.f;
  cfg.epsilon = 16.f / 255.f;

  Tensor orig({1}, {0.5f});
  Tensor step1 = step_and_project(orig, orig, Tensor({1}, {-1.f}), cfg);
  CHECK(step1.data[0] == doctest::Approx(0.5 + 2.0 / 255).epsilon(1e-7));

  Tensor far({1}, {0.9f + 2.f / 255.f});
  Tensor clamped = step_and_project(far, orig, Tensor({1}, {1.f}), cfg);
  CHECK(clamped.data[0] == doctest::Approx(0.5 + 16.0 / 255).epsilon(1e-7));

  Tensor low({1}, {-0.05f + 2.f / 255.f});
  Tensor lo_orig({1}, {0.0f});
  CHECK(step_and_project(low, lo_orig, Tensor({1}, {1.f}), cfg).data[0] == 0.0f);

  AttackConfig l2;
  l2.norm = NormKind::l2;
  l2.alpha = 0.1f;
  l2.epsilon = 0.05f;
  Tensor o2({2}, {0.5f, 0.5f});
  Tensor p = step_and_project(o2, o2, Tensor({2}, {-3.f, -4.f}), l2);
  CHECK(p.data[0] == doctest::Approx(0.53).epsilon(1e-5));
  CHECK(p.data[1] == doctest::Approx(0.54).epsilon(1e-5));

  AttackConfig ub = l2;
  ub.unbounded = true;
  Tensor q = step_and_project(o2, o2, Tensor({2}, {-3.f, -4.f}), ub);
  CHECK(q.data[0] == doctest::Approx(0.56).epsilon(1e-5));
  CHECK(q.data[1] == doctest::Approx(0.58).epsilon(1e-5));

  Tensor stalled = step_and_project(o2, o2, Tensor({2}), l2);
  CHECK(same_vec(stalled.data, o2.data));
}

TEST_CASE("ensemble fusion averages logits") {
  const Model& m = tiny_model();
  const Tensor& img = fixture_test_set().images[1];

  Graph eg = m.graph;
  std::vector<float> solo = predict_logits_one(eg, m, img);
  CHECK(ensemble_logits({&m}, img) == solo);
  CHECK(ensemble_logits({&m, &m, &m}, img) == solo);

  Model other = build_model("mini_res", 10, 2);
  Graph og = other.graph;
  std::vector<float> oz = predict_logits_one(og, other, img);
  std::vector<float> fused = ensemble_logits({&m, &other}, img);
  for (std::size_t j = 0; j < fused.size(); ++j)
    CHECK(fused[j] == doctest::Approx(0.5 * (solo[j] + oz[j])).epsilon(1e-6));

  Model narrow = build_model("mini_vgg", 8, 2);
  CHECK_THROWS_AS(ensemble_logits({&m, &narrow}, img), UsageError);
}

TEST_CASE("attack is reproducible and records full trajectories") {
  const Model& m = tiny_model();
  const Dataset& ds = fixture_test_set();
  AttackConfig cfg = quick_cfg();
  cfg.use_mi = true;
  cfg.use_ti = true;
  cfg.use_di = true;

  AttackResult a = attack({&m}, ds.images[2], 4, ds.labels[2], cfg);
  AttackResult b = attack({&m}, ds.images[2], 4, ds.labels[2], cfg);

  CHECK(a.loss_trace.size() == 6);
  CHECK(a.grad_l1_trace.size() == 6);
  CHECK(a.target_logit_trace.size() == 6);
  CHECK(a.target_prob_trace.size() == 6);
  CHECK(a.target_rank_trace.size() == 6);
  CHECK(a.checkpoint_iters == std::vector<int>{3, 6});
  CHECK(a.checkpoint_images.size() == 2);
  CHECK(a.seed == cfg.seed);
  for (int r : a.target_rank_trace) CHECK((r >= 1 && r <= 10));
  for (float p : a.target_prob_trace) CHECK((p >= 0.f && p <= 1.f));

  CHECK(same_vec(a.final_image.data, b.final_image.data));
  CHECK(same_vec(a.loss_trace, b.loss_trace));
  CHECK(same_vec(a.checkpoint_images[0].data, b.checkpoint_images[0].data));

  for (const Tensor& snap : a.checkpoint_images) {
    CHECK(linf_dist(snap.data, ds.images[2].data) <= cfg.epsilon + 1e-7f);
    for (float v : snap.data) CHECK((v >= 0.f && v <= 1.f));
  }

  AttackConfig other_seed = cfg;
  other_seed.seed = 10;
  AttackResult c = attack({&m}, ds.images[2], 4, ds.labels[2], other_seed);
  CHECK(!same_vec(c.final_image.data, a.final_image.data));
}

TEST_CASE("disabled methods reduce to their absent forms bitwise") {
  const Model& m = tiny_model();
  const Dataset& ds = fixture_test_set();
  AttackConfig base = quick_cfg();

  AttackConfig mi0 = base;
  mi0.use_mi = true;
  mi0.mi_mu = 0.f;
  CHECK(same_vec(attack({&m}, ds.images[3], 2, ds.labels[3], mi0).final_image.data,
                 attack({&m}, ds.images[3], 2, ds.labels[3], base).final_image.data));

  AttackConfig ti1 = base;
  ti1.use_ti = true;
  ti1.ti_kernel = 1;
  CHECK(same_vec(attack({&m}, ds.images[3], 2, ds.labels[3], ti1).final_image.data,
                 attack({&m}, ds.images[3], 2, ds.labels[3], base).final_image.data));

  AttackConfig di0 = base;
  di0.use_di = true;
  di0.di_prob = 0.f;
  CHECK(same_vec(attack({&m}, ds.images[3], 2, ds.labels[3], di0).final_image.data,
                 attack({&m}, ds.images[3], 2, ds.labels[3], base).final_image.data));
}

TEST_CASE("plain iterations match a hand-rolled signed descent") {
  const Model& m = tiny_model();
  const Dataset& ds = fixture_test_set();
  const Tensor& img = ds.images[4];
  int target = 1, original = ds.labels[4];

  AttackConfig cfg = quick_cfg();
  cfg.iterations = 5;
  cfg.checkpoints = {5};
  AttackResult res = attack({&m}, img, target, original, cfg);

  Graph g = m.graph;
  int loss = g.add_loss_logit(m.logits_id, target);
  g.set_grad_targets({m.input_id});
  Tensor x = img;
  for (int i = 0; i < 5; ++i) {
    g.set_value(m.input_id, x);
    g.forward();
    g.backward(loss);
    const std::vector<float>& gr = g.grad(m.input_id);
    for (std::size_t j = 0; j < x.data.size(); ++j) {
      float s = gr[j] > 0.f ? 1.f : (gr[j] < 0.f ? -1.f : 0.f);
      float v = x.data[j] - cfg.alpha * s;
      v = std::min(std::max(v, img.data[j] - cfg.epsilon), img.data[j] + cfg.epsilon);
      x.data[j] = std::min(std::max(v, 0.f), 1.f);
    }
  }
  CHECK(same_vec(res.final_image.data, x.data));
}

TEST_CASE("one-step attack at alpha == epsilon is the one-shot sign method") {
  const Model& m = tiny_model();
  const Dataset& ds = fixture_test_set();
  const Tensor& img = ds.images[5];

  AttackConfig cfg;
  cfg.loss.kind = LossKind::ce;
  cfg.iterations = 1;
  cfg.alpha = cfg.epsilon;
  cfg.checkpoints = {1};
  AttackResult res = attack({&m}, img, 3, ds.labels[5], cfg);

  Graph g = m.graph;
  int loss = g.add_loss_ce(m.logits_id, 3);
  g.set_grad_targets({m.input_id});
  g.set_value(m.input_id, img);
  g.forward();
  g.backward(loss);
  const std::vector<float>& gr = g.grad(m.input_id);
  for (std::size_t j = 0; j < img.data.size(); ++j) {
    float s = gr[j] > 0.f ? 1.f : (gr[j] < 0.f ? -1.f : 0.f);
    float want = std::min(std::max(img.data[j] - cfg.epsilon * s, 0.f), 1.f);
    CHECK(res.final_image.data[j] == want);
  }
}

TEST_CASE("checkpoint images match shorter runs of the same seed") {
  const Model& m = tiny_model();
  const Dataset& ds = fixture_test_set();
  AttackConfig full = quick_cfg();
  full.iterations = 30;
  full.checkpoints = {10, 30};
  full.use_mi = true;
  full.use_ti = true;
  full.use_di = true;

  AttackConfig part = full;
  part.iterations = 10;
  part.checkpoints = {10};

  AttackResult r_full = attack({&m}, ds.images[6], 7, ds.labels[6], full);
  AttackResult r_part = attack({&m}, ds.images[6], 7, ds.labels[6], part);
  CHECK(same_vec(r_full.checkpoint_images[0].data, r_part.final_image.data));
}

TEST_CASE("zero input gradients are logged and leave the image alone") {
  Model frozen = tiny_model();
  for (int id : frozen.graph.weight_ids())
    if (frozen.graph.node(id).name == "fc.w") {
      Tensor zeros(frozen.graph.val(id).shape);
      frozen.graph.set_value(id, zeros);
    }
  const Dataset& ds = fixture_test_set();

  AttackConfig cfg = quick_cfg();
  cfg.loss.kind = LossKind::ce;
  cfg.iterations = 5;
  cfg.checkpoints = {5};
  cfg.use_mi = true;
  AttackResult res = attack({&frozen}, ds.images[7], 2, ds.labels[7], cfg);
  CHECK(res.zero_grad_events == 5);
  CHECK(res.zero_grad_flags == std::vector<std::uint8_t>(5, 1));
  CHECK(same_vec(res.final_image.data, ds.images[7].data));
}

TEST_CASE("white-box attack drives the target logit up") {
  const Model& m = tiny_model();
  const Dataset& ds = fixture_test_set();

  for (int i : {8, 9}) {
    int original = ds.labels[i];
    int target = (original + 4) % 10;
    AttackConfig cfg;
    cfg.loss.kind = LossKind::logit;
    cfg.epsilon = 48.f / 255.f;
    cfg.alpha = 4.f / 255.f;
    cfg.iterations = 120;
    cfg.checkpoints = {120};
    cfg.use_mi = true;
    cfg.seed = 31;
    AttackResult res = attack({&m}, ds.images[i], target, original, cfg);

    Graph eg = m.graph;
    std::vector<float> z = predict_logits_one(eg, m, res.final_image);
    CHECK(static_cast<int>(argmax(z)) == target);
    CHECK(res.target_logit_trace.back() > res.target_logit_trace.front());
  }
}

TEST_CASE("attacks on model ensembles stay inside the ball") {
  const Model& m = tiny_model();
  Model second = build_model("mini_res", 10, 2);
  const Dataset& ds = fixture_test_set();

  AttackConfig cfg = quick_cfg();
  cfg.use_di = true;
  AttackResult res = attack({&m, &second}, ds.images[0], 5, ds.labels[0], cfg);
  CHECK(linf_dist(res.final_image.data, ds.images[0].data) <= cfg.epsilon + 1e-7f);
  for (float v : res.final_image.data) CHECK((v >= 0.f && v <= 1.f));
  for (float v : res.loss_trace) CHECK(std::isfinite(v));
}

TEST_CASE("unbounded mode escapes the epsilon ball but not the pixel box") {
  const Model& m = tiny_model();
  const Dataset& ds = fixture_test_set();

  AttackConfig cfg;
  cfg.loss.kind = LossKind::logit;
  cfg.unbounded = true;
  cfg.init = InitKind::gaussian;
  cfg.init_sigma = 0.1f;
  cfg.epsilon = 1.f / 255.f;
  cfg.alpha = 4.f / 255.f;
  cfg.iterations = 10;
  cfg.checkpoints = {10};
  cfg.seed = 17;
  AttackResult res = attack({&m}, ds.images[1], 6, ds.labels[1], cfg);
  CHECK(linf_dist(res.final_image.data, ds.images[1].data) > cfg.epsilon);
  for (float v : res.final_image.data) CHECK((v >= 0.f && v <= 1.f));
}

TEST_CASE("attack configuration and argument validation") {
  const Model& m = tiny_model();
  const Dataset& ds = fixture_test_set();
  const Tensor& img = ds.images[0];

  AttackConfig cfg = quick_cfg();
  cfg.checkpoints = {7};
  CHECK_THROWS_AS(attack({&m}, img, 1, 0, cfg), UsageError);

  cfg = quick_cfg();
  cfg.ti_kernel = 4;
  CHECK_THROWS_AS(attack({&m}, img, 1, 0, cfg), UsageError);

  cfg = quick_cfg();
  cfg.alpha = 0.f;
  CHECK_THROWS_AS(attack({&m}, img, 1, 0, cfg), UsageError);

  cfg = quick_cfg();
  cfg.iterations = 0;
  CHECK_THROWS_AS(attack({&m}, img, 1, 0, cfg), UsageError);

  cfg = quick_cfg();
  cfg.di_low = 0;
  CHECK_THROWS_AS(attack({&m}, img, 1, 0, cfg), UsageError);

  cfg = quick_cfg();
  cfg.use_di = true;
  cfg.di_high = 40;
  CHECK_THROWS_AS(attack({&m}, img, 1, 0, cfg), UsageError);

  cfg = quick_cfg();
  CHECK_THROWS_AS(attack({}, img, 1, 0, cfg), UsageError);
  CHECK_THROWS_AS(attack({&m}, img, 10, 0, cfg), UsageError);
  CHECK_THROWS_AS(attack({&m}, Tensor({3, 16, 16}), 1, 0, cfg), ShapeError);

  Tensor bad = img;
  bad.data[0] = 1.5f;
  CHECK_THROWS_AS(attack({&m}, bad, 1, 0, cfg), UsageError);
}
