#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "ttlab/errors.hpp"
#include "ttlab/runconfig.hpp"

using namespace ttlab;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const char* name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const char* name) const { return (path / name).string(); }
};

std::string write_cfg(const TempDir& dir, const char* name, const std::string& text) {
  std::string p = dir.file(name);
  std::ofstream out(p);
  out << text;
  return p;
}

}  // namespace

TEST_CASE("config files parse comments, spacing and later-wins order") {
  TempDir dir("ttlab_test_cfg1");
  std::string path = write_cfg(dir, "a.cfg",
                               "# comment line\n"
                               "\n"
                               "epsilon = 16\n"
                               "  loss=ce   # trailing comment\n"
                               "epsilon = 8\n");
  ConfigBag bag;
  bag.load_file(path);
  CHECK(bag.get_float("epsilon", 0.f) == 8.f);
  CHECK(bag.get_str("loss", "") == "ce");
}

TEST_CASE("malformed config lines name the file and line") {
  TempDir dir("ttlab_test_cfg2");
  std::string path = write_cfg(dir, "bad.cfg", "alpha = 2\nnonsense\n");
  ConfigBag bag;
  try {
    bag.load_file(path);
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    std::string msg = e.what();
    CHECK(msg.find("bad.cfg:2") != std::string::npos);
    CHECK(msg.find("nonsense") != std::string::npos);
  }
  CHECK_THROWS_AS(bag.load_file(dir.file("missing.cfg")), IoError);
}

TEST_CASE("command line pairs override the file") {
  TempDir dir("ttlab_test_cfg3");
  std::string path = write_cfg(dir, "a.cfg", "iterations = 300\n");
  ConfigBag bag;
  bag.load_file(path);
  bag.set_pair("iterations=20");
  CHECK(bag.get_int("iterations", 0) == 20);
  CHECK_THROWS_AS(bag.set_pair("no-equals"), UsageError);
  CHECK_THROWS_AS(bag.set_pair("=5"), UsageError);
}

TEST_CASE("unconsumed keys are reported by name") {
  ConfigBag bag;
  bag.set("alpha", "2");
  bag.set("typo_key", "1");
  bag.set("other_typo", "2");
  bag.get_float("alpha", 0.f);
  try {
    bag.finish("attack");
    FAIL("expected a usage error");
  } catch (const UsageError& e) {
    std::string msg = e.what();
    CHECK(msg.find("attack") != std::string::npos);
    CHECK(msg.find("typo_key") != std::string::npos);
    CHECK(msg.find("other_typo") != std::string::npos);
    CHECK(msg.find("alpha") == std::string::npos);
  }
  CHECK_NOTHROW(ConfigBag{}.finish("empty"));
}

TEST_CASE("typed getters parse strictly and name the key on failure") {
  ConfigBag bag;
  bag.set("n", "12");
  bag.set("x", "2.5");
  bag.set("flag", "yes");
  bag.set("big", "18446744073709551615");
  bag.set("ints", "20, 100 ,300");
  bag.set("floats", "1,2.5,4");
  CHECK(bag.get_int("n", 0) == 12);
  CHECK(bag.get_float("x", 0.f) == 2.5f);
  CHECK(bag.get_bool("flag", false) == true);
  CHECK(bag.get_u64("big", 0) == 18446744073709551615ull);
  CHECK(bag.get_int_list("ints", {}) == std::vector<int>{20, 100, 300});
  CHECK(bag.get_float_list("floats", {}) == std::vector<float>{1.f, 2.5f, 4.f});

  ConfigBag bad;
  bad.set("n", "12x");
  bad.set("x", "two");
  bad.set("flag", "maybe");
  bad.set("big", "-3");
  bad.set("ints", "1,two");
  try {
    bad.get_int("n", 0);
    FAIL("expected a usage error");
  } catch (const UsageError& e) {
    CHECK(std::string(e.what()).find("'n'") != std::string::npos);
  }
  CHECK_THROWS_AS(bad.get_float("x", 0.f), UsageError);
  CHECK_THROWS_AS(bad.get_bool("flag", false), UsageError);
  CHECK_THROWS_AS(bad.get_u64("big", 0), UsageError);
  CHECK_THROWS_AS(bad.get_int_list("ints", {}), UsageError);
}

TEST_CASE("absent keys fall back and land in the resolved map") {
  ConfigBag bag;
  CHECK(bag.get_int("iterations", 300) == 300);
  CHECK(bag.get_bool("mi", true) == true);
  CHECK(bag.get_int_list("checkpoints", {20, 300}) == std::vector<int>{20, 300});
  const auto& r = bag.resolved();
  CHECK(r.at("iterations") == "300");
  CHECK(r.at("mi") == "true");
  CHECK(r.at("checkpoints") == "20,300");
  CHECK(bag.provided("iterations") == false);
}

TEST_CASE("float keys serialize to the shortest round-tripping decimal") {
  CHECK(format_float_key(0.5f) == "0.5");
  CHECK(format_float_key(16.f) == "16");
  CHECK(format_float_key(1e-5f) == "1e-05");
  for (float v : {0.7f, 1.f / 3.f, 0.1f, 2.f / 255.f, 123.456f}) {
    std::string s = format_float_key(v);
    CHECK(std::strtof(s.c_str(), nullptr) == v);
  }
}

TEST_CASE("config files write sorted and reload identically") {
  TempDir dir("ttlab_test_cfg4");
  ConfigBag bag;
  bag.set("epsilon", "16");
  bag.get_float("epsilon", 0.f);
  bag.get_str("loss", "logit");
  bag.get_int("iterations", 300);
  std::string path = dir.file("resolved.cfg");
  write_config_file(path, bag.resolved());

  std::ifstream in(path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(text == "epsilon = 16\niterations = 300\nloss = logit\n");

  ConfigBag again;
  again.load_file(path);
  again.get_float("epsilon", 0.f);
  again.get_str("loss", "");
  again.get_int("iterations", 0);
  CHECK(again.resolved() == bag.resolved());
}

TEST_CASE("attack configs resolve external pixel units and method defaults") {
  ConfigBag bag;
  AttackConfig c = attack_config_from(bag);
  CHECK(c.epsilon == doctest::Approx(16.f / 255.f));
  CHECK(c.alpha == doctest::Approx(2.f / 255.f));
  CHECK(c.iterations == 300);
  CHECK(c.checkpoints == std::vector<int>{20, 100, 300});
  CHECK(c.loss.kind == LossKind::logit);
  CHECK(c.use_mi);
  CHECK(c.use_ti);
  CHECK(c.use_di);
  CHECK(c.init == InitKind::zero);
  CHECK(c.norm == NormKind::linf);

  ConfigBag bag2;
  bag2.set("epsilon", "8");
  bag2.set("alpha", "1");
  bag2.set("loss", "cw");
  bag2.set("mi", "false");
  AttackConfig c2 = attack_config_from(bag2);
  CHECK(c2.epsilon == doctest::Approx(8.f / 255.f));
  CHECK(c2.alpha == doctest::Approx(1.f / 255.f));
  CHECK(c2.loss.kind == LossKind::cw);
  CHECK_FALSE(c2.use_mi);

  ConfigBag bad;
  bad.set("init", "random");
  CHECK_THROWS_AS(attack_config_from(bad), UsageError);
}

TEST_CASE("unbounded attacks default to a gaussian start with momentum off") {
  ConfigBag bag;
  bag.set("unbounded", "true");
  AttackConfig c = attack_config_from(bag);
  CHECK(c.unbounded);
  CHECK(c.init == InitKind::gaussian);
  CHECK_FALSE(c.use_mi);
  CHECK(bag.resolved().at("init") == "gaussian");
  CHECK(bag.resolved().at("mi") == "false");

  ConfigBag keep;
  keep.set("unbounded", "true");
  keep.set("mi", "true");
  keep.set("init", "zero");
  AttackConfig c2 = attack_config_from(keep);
  CHECK(c2.use_mi);
  CHECK(c2.init == InitKind::zero);
}

TEST_CASE("the uap preset starts from gaussian noise unless told otherwise") {
  ConfigBag bag;
  AttackConfig c = attack_config_from(bag, true);
  CHECK(c.init == InitKind::gaussian);
  CHECK(c.use_mi);

  ConfigBag zero;
  zero.set("init", "zero");
  AttackConfig c2 = attack_config_from(zero, true);
  CHECK(c2.init == InitKind::zero);
}

TEST_CASE("suite configs parse loss lists and sample counts") {
  ConfigBag bag;
  SuiteConfig sc = suite_config_from(bag);
  CHECK(sc.losses == std::vector<LossKind>{LossKind::ce, LossKind::logit});
  CHECK(sc.n_images == 200);
  CHECK_FALSE(sc.include_whitebox);

  ConfigBag bag2;
  bag2.set("losses", "po_trip,cw,logit");
  bag2.set("n_images", "16");
  bag2.set("include_whitebox", "true");
  SuiteConfig sc2 = suite_config_from(bag2);
  CHECK(sc2.losses == std::vector<LossKind>{LossKind::po_trip, LossKind::cw, LossKind::logit});
  CHECK(sc2.n_images == 16);
  CHECK(sc2.include_whitebox);

  ConfigBag bad;
  bad.set("losses", "");
  CHECK_THROWS_AS(suite_config_from(bad), UsageError);
  ConfigBag bad2;
  bad2.set("n_images", "0");
  CHECK_THROWS_AS(suite_config_from(bad2), UsageError);
}

TEST_CASE("train and synth configs pick up every key") {
  ConfigBag bag;
  bag.set("epochs", "4");
  bag.set("lr", "0.1");
  bag.set("decay_epochs", "2,3");
  bag.set("train_subset", "500");
  bag.set("flip_augment", "false");
  TrainConfig tc = train_config_from(bag);
  CHECK(tc.epochs == 4);
  CHECK(tc.lr == 0.1f);
  CHECK(tc.decay_epochs == std::vector<int>{2, 3});
  CHECK(tc.train_subset == 500);
  CHECK_FALSE(tc.flip_augment);
  CHECK_NOTHROW(bag.finish("train"));

  ConfigBag neg;
  neg.set("train_subset", "-1");
  CHECK_THROWS_AS(train_config_from(neg), UsageError);

  ConfigBag sb;
  sb.set("train_n", "128");
  sb.set("cue_amp", "0.5");
  sb.set("cue_count", "3");
  sb.set("cue_floor", "0.1");
  SynthConfig sc = synth_config_from(sb);
  CHECK(sc.train_n == 128);
  CHECK(sc.cue_amp == 0.5f);
  CHECK(sc.cue_count == 3);
  CHECK(sc.cue_floor == 0.1f);
  CHECK_NOTHROW(sb.finish("synth-data"));
}
