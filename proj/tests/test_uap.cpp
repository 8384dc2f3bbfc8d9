#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "ttlab/synth.hpp"
#include "ttlab/uap.hpp"

using namespace ttlab;

namespace {

SynthConfig uap_cfg() {
  SynthConfig cfg;
  cfg.train_n = 600;
  cfg.test_n = 100;
  cfg.seed = 414;
  cfg.cue_amp = 0.85f;
  cfg.cue_count = 4;
  cfg.smooth_noise = 0.10f;
  cfg.white_noise = 0.05f;
  return cfg;
}

const Dataset& uap_test_set() {
  static Dataset ds = synth_cifar_split(uap_cfg(), true);
  return ds;
}

const std::vector<NamedModel>& uap_models() {
  static std::vector<NamedModel> ms = [] {
    Dataset tr = synth_cifar_split(uap_cfg(), false);
    std::vector<NamedModel> v;
    for (auto [id, arch, seed] : {std::tuple{"vgg_u", "mini_vgg", 31ULL},
                                  std::tuple{"dense_u", "mini_dense", 32ULL}}) {
      Model m = build_model(arch, 10, seed);
      TrainConfig tc;
      tc.epochs = 3;
      tc.batch_size = 32;
      tc.lr = 0.02f;
      tc.decay_epochs = {};
      tc.seed = seed;
      train(m, tr, uap_test_set(), tc);
      v.push_back({id, std::move(m)});
    }
    return v;
  }();
  return ms;
}

Model raw_model() { return build_model("mini_res", 10, 8); }

AttackConfig uap_attack_cfg() {
  AttackConfig cfg;
  cfg.loss.kind = LossKind::logit;
  cfg.iterations = 5;
  cfg.checkpoints = {5};
  cfg.seed = 40;
  return cfg;
}

struct TempDir {
  std::filesystem::path p;
  TempDir() {
    p = std::filesystem::temp_directory_path() / "ttlab_test_uap";
    std::filesystem::create_directories(p);
  }
  ~TempDir() { std::filesystem::remove_all(p); }
  std::string file(const std::string& name) const { return (p / name).string(); }
};

}  // namespace

TEST_CASE("zero-iteration zero-init perturbation is exactly zero") {
  Model m = raw_model();
  AttackConfig cfg = uap_attack_cfg();
  cfg.iterations = 0;
  cfg.checkpoints = {};
  UapArtifact u = generate_uap({&m}, "res", 3, cfg);
  for (float v : u.delta.data) CHECK(v == 0.f);
  CHECK(u.target == 3);
  CHECK(u.epsilon == cfg.epsilon);
  CHECK(u.arch_id == "res");

  float base = evaluate_uap(u, m, uap_test_set());
  Graph g = m.graph;
  std::size_t hits = 0;
  for (const Tensor& img : uap_test_set().images)
    hits += argmax(predict_logits_one(g, m, img)) == 3;
  CHECK(base == static_cast<float>(hits) / uap_test_set().size());
}

TEST_CASE("gaussian init survives the projection inside the ball") {
  Model m = raw_model();
  AttackConfig cfg = uap_attack_cfg();
  cfg.iterations = 0;
  cfg.checkpoints = {};
  cfg.init = InitKind::gaussian;
  UapArtifact u = generate_uap({&m}, "res", 3, cfg);
  float peak = 0.f;
  bool moved = false;
  for (float v : u.delta.data) {
    peak = std::max(peak, std::abs(v));
    moved = moved || v != 0.f;
  }
  CHECK(moved);
  CHECK(peak <= cfg.epsilon + 1e-7f);
}

TEST_CASE("perturbation generation is deterministic and stays bounded") {
  const Model& m = uap_models()[0].model;
  AttackConfig cfg = uap_attack_cfg();
  cfg.init = InitKind::gaussian;
  UapArtifact a = generate_uap({&m}, "res", 6, cfg);
  UapArtifact b = generate_uap({&m}, "res", 6, cfg);
  CHECK(a.delta.data == b.delta.data);

  float peak = 0.f;
  for (float v : a.delta.data) peak = std::max(peak, std::abs(v));
  CHECK(peak <= cfg.epsilon + 1e-7f);
  CHECK(peak > 0.f);

  cfg.seed = 41;
  UapArtifact c = generate_uap({&m}, "res", 6, cfg);
  CHECK(a.delta.data != c.delta.data);
}

TEST_CASE("perturbation generation refuses unbounded configs") {
  Model m = raw_model();
  AttackConfig cfg = uap_attack_cfg();
  cfg.unbounded = true;
  CHECK_THROWS_AS(generate_uap({&m}, "res", 1, cfg), UsageError);
  cfg = uap_attack_cfg();
  cfg.norm = NormKind::l2;
  CHECK_THROWS_AS(generate_uap({&m}, "res", 1, cfg), UsageError);
  cfg = uap_attack_cfg();
  cfg.epsilon = 0.f;
  CHECK_THROWS_AS(generate_uap({&m}, "res", 1, cfg), UsageError);
  cfg = uap_attack_cfg();
  CHECK_THROWS_AS(generate_uap({&m}, "res", 10, cfg), UsageError);
  CHECK_THROWS_AS(generate_uap({}, "res", 1, cfg), UsageError);
}

TEST_CASE("perturbation files round trip bitwise and reject corruption") {
  TempDir td;
  Model m = raw_model();
  AttackConfig cfg = uap_attack_cfg();
  cfg.init = InitKind::gaussian;
  UapArtifact u = generate_uap({&m}, "mini_res", 9, cfg);
  std::string path = td.file("u.uap");
  save_uap(u, path);

  UapArtifact back = load_uap(path);
  CHECK(back.delta.shape == u.delta.shape);
  CHECK(back.delta.data == u.delta.data);
  CHECK(back.target == 9);
  CHECK(back.epsilon == u.epsilon);
  CHECK(back.arch_id == "mini_res");
  CHECK(back.seed == u.seed);

  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
  }
  CHECK_THROWS_AS(load_uap(path), FormatError);

  save_uap(u, path);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 5);
  CHECK_THROWS_AS(load_uap(path), FormatError);

  save_uap(u, path);
  {
    std::ofstream f(path, std::ios::app | std::ios::binary);
    f.write("z", 1);
  }
  CHECK_THROWS_AS(load_uap(path), FormatError);

  UapArtifact fat = u;
  for (float& v : fat.delta.data) v = 0.9f;
  save_uap(fat, td.file("fat.uap"));
  CHECK_THROWS_AS(load_uap(td.file("fat.uap")), FormatError);

  CHECK_THROWS_AS(load_uap(td.file("missing.uap")), IoError);
}

TEST_CASE("evaluation rejects mismatched shapes and bad targets") {
  Model m = raw_model();
  UapArtifact u;
  u.delta = Tensor({1, 28, 28});
  u.target = 2;
  u.epsilon = 16.f / 255.f;
  CHECK_THROWS_AS(evaluate_uap(u, m, uap_test_set()), ShapeError);
  u.delta = Tensor({3, 32, 32});
  u.target = 12;
  CHECK_THROWS_AS(evaluate_uap(u, m, uap_test_set()), UsageError);
  u.target = 2;
  Dataset empty;
  CHECK_THROWS_AS(evaluate_uap(u, m, empty), UsageError);
  CHECK(evaluate_uap(u, m, uap_test_set(), 10) >= 0.f);
}

TEST_CASE("perturbation suite emits one averaged row per model and loss") {
  SuiteConfig sc;
  sc.attack = uap_attack_cfg();
  sc.attack.iterations = 4;
  sc.attack.checkpoints = {4};
  sc.attack.init = InitKind::gaussian;
  TransferReport rep = run_uap_suite(uap_models(), uap_test_set(), sc, 40);
  REQUIRE(rep.rows.size() == 4);
  CHECK(rep.rows[0].loss == "ce");
  CHECK(rep.rows[2].loss == "logit");
  for (const TransferRow& r : rep.rows) {
    CHECK(r.source == r.target);
    CHECK(r.checkpoint == 4);
    CHECK(r.n_images == 40);
    CHECK(r.targeted_sr >= 0.0);
    CHECK(r.targeted_sr <= 1.0);
    CHECK(r.mean_target_rank >= 1.0);
  }
  CHECK(rep.rows[0].source == "vgg_u");
  CHECK(rep.rows[1].source == "dense_u");

  std::string serial = transfer_csv(rep);
  sc.jobs = 2;
  CHECK(transfer_csv(run_uap_suite(uap_models(), uap_test_set(), sc, 40)) == serial);
}

TEST_CASE("perturbation suite refuses untrained models") {
  std::vector<NamedModel> ms;
  ms.push_back({"raw", raw_model()});
  SuiteConfig sc;
  sc.attack = uap_attack_cfg();
  CHECK_THROWS_AS(run_uap_suite(ms, uap_test_set(), sc, 20), UsageError);
}
