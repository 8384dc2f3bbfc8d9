#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ttlab/attack.hpp"
#include "ttlab/data.hpp"

namespace ttlab {

struct NamedModel {
  std::string id;
  Model model;
};

struct TransferRow {
  std::string source;
  std::string target;
  std::string loss;
  std::string methods;
  int checkpoint = 0;
  float epsilon = 0.f;
  float alpha = 0.f;
  std::uint64_t seed = 0;
  int n_images = 0;
  double targeted_sr = 0.0;
  double nontargeted_sr = 0.0;
  double mean_target_conf = 0.0;
  double mean_target_rank = 0.0;
};

struct TransferReport {
  std::vector<TransferRow> rows;
};

struct TrendSeries {
  std::string loss;
  std::vector<float> norm_loss;
  std::vector<float> norm_grad_l1;
  std::vector<float> target_logit;
};

std::string methods_string(const AttackConfig& cfg);
std::string transfer_csv(const TransferReport& rep);
std::string trend_csv(const std::vector<TrendSeries>& series);

struct EvalImage {
  std::size_t index = 0;
  int original = 0;
  int target = 0;
};

// First n test images every listed model classifies correctly, each with a
// pseudorandom attack target != original drawn from `seed`.
std::vector<EvalImage> select_eval_images(const std::vector<const Model*>& models,
                                          const Dataset& ds, std::size_t n,
                                          std::uint64_t seed);

float success_rate(const Model& target_model, const std::vector<Tensor>& adv_images,
                   const std::vector<int>& targets);

struct TargetStats {
  float confidence = 0.f;
  int rank = 0;
};
TargetStats target_stats(const Model& m, const Tensor& adv_image, int target);

// Class at position `rank` in the model's descending clean-logit order,
// ties broken toward the lower class index. rank 1 is the prediction.
int select_target_by_rank(const Model& m, const Tensor& image, int rank);

// Refuses models below the accuracy gate so transfer rates are not measured
// against untrained weights. Accuracy is taken on the first `limit` test
// images (0 = all).
void ensure_trained(const std::vector<NamedModel>& models, const Dataset& test_set,
                    float min_accuracy = 0.6f, std::size_t limit = 1000);

struct SuiteConfig {
  AttackConfig attack;
  std::vector<LossKind> losses = {LossKind::ce, LossKind::logit};
  std::size_t n_images = 200;
  bool include_whitebox = false;
  int jobs = 1;
};

TransferReport run_single_transfer(const std::vector<NamedModel>& models,
                                   const Dataset& test_set, const SuiteConfig& sc);

enum class HoldoutRule { easy, hard };

// hard: each model in turn is the hold-out target of an ensemble of all
// others. easy: the ensemble additionally contains a second-seed sibling of
// the hold-out architecture, looked up in `siblings` by arch.
TransferReport run_ensemble_transfer(const std::vector<NamedModel>& models,
                                     HoldoutRule rule,
                                     const std::vector<NamedModel>& siblings,
                                     const Dataset& test_set, const SuiteConfig& sc);

TransferReport run_rank_sweep(const NamedModel& source, const NamedModel& target_model,
                              const std::vector<int>& ranks, const Dataset& test_set,
                              const SuiteConfig& sc);

std::vector<float> normalize_trend(const std::vector<float>& series);

// Mean per-iteration traces over the evaluation sample, attack run on
// `source` alone; losses and gradients normalized per image by their first
// iteration, target logits kept raw.
std::vector<TrendSeries> run_trend_analysis(const NamedModel& source,
                                            const Dataset& test_set,
                                            const SuiteConfig& sc);

TransferReport run_stepsize_sweep(const NamedModel& source, const NamedModel& target_model,
                                  const std::vector<float>& alphas, const Dataset& test_set,
                                  const SuiteConfig& sc);

// Runs fn(worker, item) for every item < n on `jobs` threads (serial when
// jobs <= 1). Items are claimed dynamically; callers must keep per-item
// outputs in preallocated slots and reduce in item order for determinism.
void run_parallel(std::size_t n, int jobs,
                  const std::function<void(int, std::size_t)>& fn);

}  // namespace ttlab
