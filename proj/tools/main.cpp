#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ttlab/attack.hpp"
#include "ttlab/data.hpp"
#include "ttlab/errors.hpp"
#include "ttlab/evaluation.hpp"
#include "ttlab/model.hpp"
#include "ttlab/runconfig.hpp"
#include "ttlab/synth.hpp"
#include "ttlab/uap.hpp"

namespace fs = std::filesystem;
using namespace ttlab;

namespace {

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> sets;
};

void add_config_opts(CLI::App* cmd, CommonOpts& co) {
  cmd->add_option("--config", co.config_path, "flat 'key = value' config file");
  cmd->add_option("--set", co.sets, "override a config key, key=value")
      ->take_all();
}

ConfigBag make_bag(const CommonOpts& co) {
  ConfigBag bag;
  if (!co.config_path.empty()) bag.load_file(co.config_path);
  for (const std::string& p : co.sets) bag.set_pair(p);
  return bag;
}

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

std::pair<Dataset, Dataset> load_data_dir(const std::string& dir) {
  if (fs::exists(fs::path(dir) / "data_batch_1.bin")) return load_cifar10(dir);
  if (fs::exists(fs::path(dir) / "train-images-idx3-ubyte")) return load_mnist(dir);
  throw UsageError("no dataset in " + dir +
                   " (expected CIFAR-10 batch files or MNIST idx files)");
}

Dataset load_test_split(const std::string& dir) {
  auto [train, test] = load_data_dir(dir);
  return std::move(test);
}

std::vector<NamedModel> load_models(const std::vector<std::string>& paths,
                                    const std::vector<int>& input_shape) {
  std::vector<std::string> missing;
  for (const std::string& p : paths)
    if (!fs::exists(p)) missing.push_back(p);
  if (!missing.empty())
    throw UsageError("missing model files: " + join(missing, ", "));

  std::vector<NamedModel> out;
  for (const std::string& p : paths) {
    std::string id = fs::path(p).stem().string();
    for (const NamedModel& seen : out)
      if (seen.id == id)
        throw UsageError("duplicate model id '" + id + "' from " + p);
    out.push_back({id, load_weights(p, input_shape)});
  }
  return out;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << content;
  if (!out) throw IoError("failed writing " + path);
}

// 8-bit preview of a [3,H,W] (P6) or [1,H,W] (P5) image in [0,1].
void write_ppm(const std::string& path, const Tensor& img) {
  if (img.shape.size() != 3 || (img.shape[0] != 3 && img.shape[0] != 1))
    throw ShapeError("ppm preview needs a [3,H,W] or [1,H,W] image");
  int c = img.shape[0], h = img.shape[1], w = img.shape[2];
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << (c == 3 ? "P6\n" : "P5\n") << w << " " << h << "\n255\n";
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch) {
        float v = img.data[(static_cast<std::size_t>(ch) * h + y) * w + x];
        int byte = static_cast<int>(v * 255.f + 0.5f);
        if (byte < 0) byte = 0;
        if (byte > 255) byte = 255;
        out.put(static_cast<char>(byte));
      }
  if (!out) throw IoError("failed writing " + path);
}

void write_resolved(const std::string& out_dir, const std::string& name,
                    const ConfigBag& bag) {
  write_config_file((fs::path(out_dir) / (name + ".resolved.cfg")).string(),
                    bag.resolved());
}

void cmd_synth_data(const CommonOpts& co, const std::string& out_dir,
                    const std::string& format) {
  ConfigBag bag = make_bag(co);
  SynthConfig cfg = synth_config_from(bag);
  bag.finish("synth-data");
  if (format != "cifar" && format != "mnist")
    throw UsageError("--format must be cifar or mnist, got " + format);
  fs::create_directories(out_dir);
  write_resolved(out_dir, "synth-data", bag);
  if (format == "cifar") synth_cifar_to_dir(cfg, out_dir);
  else synth_mnist_to_dir(cfg, out_dir);
  std::printf("wrote %s dataset (%zu train, %zu test) to %s\n", format.c_str(),
              cfg.train_n, cfg.test_n, out_dir.c_str());
}

void cmd_train(const CommonOpts& co, const std::string& data_dir,
               const std::string& arch, const std::string& out_dir) {
  ConfigBag bag = make_bag(co);
  TrainConfig tc = train_config_from(bag);
  bag.finish("train");
  auto [train_ds, test_ds] = load_data_dir(data_dir);

  Model m = build_model(arch, test_ds.num_classes, tc.seed,
                        test_ds.images.at(0).shape);
  TrainMetrics met = train(m, train_ds, test_ds, tc);

  fs::create_directories(out_dir);
  std::string stem = arch + "_s" + std::to_string(tc.seed);
  save_weights(m, (fs::path(out_dir) / (stem + ".mzw")).string());
  char line[160];
  std::snprintf(line, sizeof line, "%s,%llu,%d,%.6f\n", arch.c_str(),
                static_cast<unsigned long long>(tc.seed), tc.epochs,
                static_cast<double>(met.test_accuracy));
  write_text_file((fs::path(out_dir) / (stem + ".metrics.csv")).string(),
                  std::string("arch,seed,epochs,test_acc\n") + line);
  write_resolved(out_dir, "train", bag);
  std::printf("%s", line);
}

void cmd_attack(const CommonOpts& co, const std::string& data_dir,
                const std::vector<std::string>& model_paths, int index,
                int target, int target_rank, const std::string& out_dir) {
  ConfigBag bag = make_bag(co);
  AttackConfig cfg = attack_config_from(bag);
  bag.finish("attack");

  Dataset test = load_test_split(data_dir);
  if (index < 0 || index >= static_cast<int>(test.size()))
    throw UsageError("--index " + std::to_string(index) + " outside the test split (" +
                     std::to_string(test.size()) + " images)");
  std::vector<NamedModel> models =
      load_models(model_paths, test.images.at(0).shape);
  std::vector<const Model*> ptrs;
  for (const NamedModel& nm : models) ptrs.push_back(&nm.model);

  const Tensor& image = test.images[index];
  int original = test.labels[index];
  if (target >= 0 && target_rank > 0)
    throw UsageError("give either --target or --target-rank, not both");
  int t = target >= 0 ? target
                      : select_target_by_rank(models.front().model, image,
                                              target_rank > 0 ? target_rank : 2);
  if (t < 0 || t >= test.num_classes)
    throw UsageError("--target outside [0, " + std::to_string(test.num_classes - 1) + "]");

  AttackResult res = attack(ptrs, image, t, original, cfg);

  fs::create_directories(out_dir);
  write_resolved(out_dir, "attack", bag);
  write_ppm((fs::path(out_dir) / "clean.ppm").string(), image);
  write_ppm((fs::path(out_dir) / "adv_final.ppm").string(), res.final_image);
  for (std::size_t i = 0; i < res.checkpoint_iters.size(); ++i) {
    char name[48];
    std::snprintf(name, sizeof name, "adv_%06d.ppm", res.checkpoint_iters[i]);
    write_ppm((fs::path(out_dir) / name).string(), res.checkpoint_images[i]);
  }

  std::string csv = "iteration,loss,grad_l1,target_logit,target_prob,target_rank\n";
  for (std::size_t i = 0; i < res.loss_trace.size(); ++i) {
    char row[192];
    std::snprintf(row, sizeof row, "%zu,%.6f,%.6f,%.6f,%.6f,%d\n", i + 1,
                  static_cast<double>(res.loss_trace[i]),
                  static_cast<double>(res.grad_l1_trace[i]),
                  static_cast<double>(res.target_logit_trace[i]),
                  static_cast<double>(res.target_prob_trace[i]),
                  res.target_rank_trace[i]);
    csv += row;
  }
  write_text_file((fs::path(out_dir) / "trace.csv").string(), csv);

  std::printf("index=%d original=%d target=%d iterations=%d zero_grad=%d\n", index,
              original, t, cfg.iterations, res.zero_grad_events);
  for (const NamedModel& nm : models) {
    TargetStats st = target_stats(nm.model, res.final_image, t);
    std::printf("model %s: target_rank=%d target_prob=%.6f\n", nm.id.c_str(),
                st.rank, static_cast<double>(st.confidence));
  }
}

struct SuiteArgs {
  CommonOpts co;
  std::string data_dir;
  std::vector<std::string> model_paths;
  std::vector<std::string> sibling_paths;
  std::string out_dir;
  int jobs = 1;
};

// Loads the shared pieces, runs one suite flavor, writes its CSV and the
// resolved config it ran from.
void run_suite(const SuiteArgs& sa, const std::string& name,
               const std::function<std::string(ConfigBag&, const std::vector<NamedModel>&,
                                               const Dataset&, SuiteConfig&)>& body) {
  ConfigBag bag = make_bag(sa.co);
  Dataset test = load_test_split(sa.data_dir);
  std::vector<NamedModel> models =
      load_models(sa.model_paths, test.images.at(0).shape);
  SuiteConfig sc;  // filled by the body so uap can flip the preset
  sc.jobs = sa.jobs;
  std::string csv = body(bag, models, test, sc);
  fs::create_directories(sa.out_dir);
  write_resolved(sa.out_dir, "suite-" + name, bag);
  std::string csv_path = (fs::path(sa.out_dir) / (name + ".csv")).string();
  write_text_file(csv_path, csv);
  std::size_t rows = 0;
  for (char ch : csv)
    if (ch == '\n') ++rows;
  std::printf("wrote %s (%zu data rows)\n", csv_path.c_str(), rows ? rows - 1 : 0);
}

int run_cli(int argc, char** argv) {
  CLI::App app{"desk-scale laboratory for transferable targeted adversarial attacks"};
  app.require_subcommand(1);

  // synth-data
  auto* synth = app.add_subcommand("synth-data", "generate a deterministic synthetic dataset");
  CommonOpts synth_co;
  std::string synth_out, synth_format = "cifar";
  add_config_opts(synth, synth_co);
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--format", synth_format, "cifar or mnist");
  synth->callback([&] { cmd_synth_data(synth_co, synth_out, synth_format); });

  // train
  auto* tr = app.add_subcommand("train", "train one classifier and save its weights");
  CommonOpts tr_co;
  std::string tr_data, tr_arch, tr_out;
  add_config_opts(tr, tr_co);
  tr->add_option("--data", tr_data, "dataset directory")->required();
  tr->add_option("--arch", tr_arch, "architecture id")->required();
  tr->add_option("--out", tr_out, "output directory for weights")->required();
  tr->callback([&] { cmd_train(tr_co, tr_data, tr_arch, tr_out); });

  // attack
  auto* atk = app.add_subcommand("attack", "run one targeted attack and dump its trace");
  CommonOpts atk_co;
  std::string atk_data, atk_out;
  std::vector<std::string> atk_models;
  int atk_index = 0, atk_target = -1, atk_rank = 0;
  add_config_opts(atk, atk_co);
  atk->add_option("--data", atk_data, "dataset directory")->required();
  atk->add_option("--models", atk_models, "weight files, attacked jointly")
      ->required()
      ->delimiter(',');
  atk->add_option("--index", atk_index, "test image index")->required();
  atk->add_option("--target", atk_target, "target class");
  atk->add_option("--target-rank", atk_rank, "pick target by clean logit rank (default 2)");
  atk->add_option("--out", atk_out, "output directory")->required();
  atk->callback([&] {
    cmd_attack(atk_co, atk_data, atk_models, atk_index, atk_target, atk_rank, atk_out);
  });

  // suite
  auto* suite = app.add_subcommand("suite", "transfer measurement batteries");
  suite->require_subcommand(1);
  SuiteArgs sa;

  auto add_suite_common = [&](CLI::App* cmd, bool with_siblings) {
    add_config_opts(cmd, sa.co);
    cmd->add_option("--data", sa.data_dir, "dataset directory")->required();
    cmd->add_option("--models", sa.model_paths, "weight files")->required()->delimiter(',');
    if (with_siblings)
      cmd->add_option("--siblings", sa.sibling_paths,
                      "second-seed weight files for the easy hold-out rule")
          ->required()
          ->delimiter(',');
    cmd->add_option("--out", sa.out_dir, "output directory")->required();
    cmd->add_option("--jobs", sa.jobs, "worker threads");
  };

  auto* s_single = suite->add_subcommand("single", "every source to every other model");
  add_suite_common(s_single, false);
  s_single->callback([&] {
    run_suite(sa, "single", [](ConfigBag& bag, const std::vector<NamedModel>& models,
                               const Dataset& test, SuiteConfig& sc) {
      int jobs = sc.jobs;
      sc = suite_config_from(bag);
      sc.jobs = jobs;
      bag.finish("suite single");
      return transfer_csv(run_single_transfer(models, test, sc));
    });
  });

  auto* s_easy = suite->add_subcommand(
      "ensemble-easy", "hold-out transfer with a second seed of the hold-out arch inside");
  add_suite_common(s_easy, true);
  s_easy->callback([&] {
    run_suite(sa, "ensemble-easy", [&sa](ConfigBag& bag, const std::vector<NamedModel>& models,
                                         const Dataset& test, SuiteConfig& sc) {
      int jobs = sc.jobs;
      sc = suite_config_from(bag);
      sc.jobs = jobs;
      bag.finish("suite ensemble-easy");
      std::vector<NamedModel> siblings =
          load_models(sa.sibling_paths, test.images.at(0).shape);
      return transfer_csv(run_ensemble_transfer(models, HoldoutRule::easy, siblings, test, sc));
    });
  });

  auto* s_hard = suite->add_subcommand("ensemble-hard",
                                       "hold-out transfer, hold-out arch fully unseen");
  add_suite_common(s_hard, false);
  s_hard->callback([&] {
    run_suite(sa, "ensemble-hard", [](ConfigBag& bag, const std::vector<NamedModel>& models,
                                      const Dataset& test, SuiteConfig& sc) {
      int jobs = sc.jobs;
      sc = suite_config_from(bag);
      sc.jobs = jobs;
      bag.finish("suite ensemble-hard");
      return transfer_csv(run_ensemble_transfer(models, HoldoutRule::hard, {}, test, sc));
    });
  });

  auto* s_rank = suite->add_subcommand("ranksweep",
                                       "targets picked at fixed clean-logit ranks");
  add_suite_common(s_rank, false);
  s_rank->callback([&] {
    run_suite(sa, "ranksweep", [](ConfigBag& bag, const std::vector<NamedModel>& models,
                                  const Dataset& test, SuiteConfig& sc) {
      int jobs = sc.jobs;
      sc = suite_config_from(bag);
      sc.jobs = jobs;
      std::vector<int> ranks = bag.get_int_list("ranks", {2, 5, 10});
      bag.finish("suite ranksweep");
      if (models.size() != 2)
        throw UsageError("ranksweep needs exactly two --models: source, hold-out");
      return transfer_csv(run_rank_sweep(models[0], models[1], ranks, test, sc));
    });
  });

  auto* s_step = suite->add_subcommand("stepsweep", "step size sensitivity");
  add_suite_common(s_step, false);
  s_step->callback([&] {
    run_suite(sa, "stepsweep", [](ConfigBag& bag, const std::vector<NamedModel>& models,
                                  const Dataset& test, SuiteConfig& sc) {
      int jobs = sc.jobs;
      sc = suite_config_from(bag);
      sc.jobs = jobs;
      std::vector<float> alphas = bag.get_float_list("alphas", {1.f, 2.f, 4.f});
      bag.finish("suite stepsweep");
      for (float& a : alphas) a /= 255.f;
      if (models.size() != 2)
        throw UsageError("stepsweep needs exactly two --models: source, hold-out");
      return transfer_csv(run_stepsize_sweep(models[0], models[1], alphas, test, sc));
    });
  });

  auto* s_trend = suite->add_subcommand("trends", "mean per-iteration optimization traces");
  add_suite_common(s_trend, false);
  s_trend->callback([&] {
    run_suite(sa, "trends", [](ConfigBag& bag, const std::vector<NamedModel>& models,
                               const Dataset& test, SuiteConfig& sc) {
      int jobs = sc.jobs;
      sc = suite_config_from(bag);
      sc.jobs = jobs;
      bag.finish("suite trends");
      if (models.size() != 1)
        throw UsageError("trends needs exactly one --models entry: the source");
      return trend_csv(run_trend_analysis(models[0], test, sc));
    });
  });

  auto* s_uap = suite->add_subcommand("uap", "data-free universal perturbations per model");
  add_suite_common(s_uap, false);
  s_uap->callback([&] {
    run_suite(sa, "uap", [](ConfigBag& bag, const std::vector<NamedModel>& models,
                            const Dataset& test, SuiteConfig& sc) {
      int jobs = sc.jobs;
      sc = suite_config_from(bag, /*uap_preset=*/true);
      sc.jobs = jobs;
      int eval_n = bag.get_int("uap_eval_n", 1000);
      bag.finish("suite uap");
      if (eval_n <= 0) throw UsageError("config key 'uap_eval_n': must be positive");
      return transfer_csv(
          run_uap_suite(models, test, sc, static_cast<std::size_t>(eval_n)));
    });
  });

  // uap-gen
  auto* ug = app.add_subcommand("uap-gen", "generate one universal perturbation file");
  CommonOpts ug_co;
  std::vector<std::string> ug_models;
  std::string ug_out, ug_data;
  int ug_target = -1;
  add_config_opts(ug, ug_co);
  ug->add_option("--models", ug_models, "weight files the perturbation is trained on")
      ->required()
      ->delimiter(',');
  ug->add_option("--target", ug_target, "target class")->required();
  ug->add_option("--out", ug_out, "output .uap file")->required();
  ug->add_option("--data", ug_data, "dataset directory, reports per-model success when given");
  ug->callback([&] {
    ConfigBag bag = make_bag(ug_co);
    AttackConfig cfg = attack_config_from(bag, /*uap_preset=*/true);
    bag.finish("uap-gen");

    Dataset test;
    if (!ug_data.empty()) test = load_test_split(ug_data);
    std::vector<int> shape = test.size() ? test.images[0].shape : std::vector<int>{3, 32, 32};
    std::vector<NamedModel> models = load_models(ug_models, shape);
    std::vector<const Model*> ptrs;
    std::vector<std::string> ids;
    for (const NamedModel& nm : models) {
      ptrs.push_back(&nm.model);
      ids.push_back(nm.id);
    }
    UapArtifact uap = generate_uap(ptrs, join(ids, "+"), ug_target, cfg);
    if (fs::path(ug_out).has_parent_path())
      fs::create_directories(fs::path(ug_out).parent_path());
    save_uap(uap, ug_out);
    write_config_file(ug_out + ".resolved.cfg", bag.resolved());
    float peak = 0.f;
    for (float v : uap.delta.data) peak = std::max(peak, std::abs(v));
    std::printf("wrote %s target=%d peak=%.6f\n", ug_out.c_str(), uap.target,
                static_cast<double>(peak));
    for (const NamedModel& nm : models)
      if (test.size())
        std::printf("model %s: success=%.6f\n", nm.id.c_str(),
                    static_cast<double>(evaluate_uap(uap, nm.model, test, 1000)));
  });

  CLI11_PARSE(app, argc, argv);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
