#include "ttlab/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <iostream>
#include <mutex>
#include <numeric>
#include <thread>

#include "ttlab/errors.hpp"
#include "ttlab/rng.hpp"

namespace ttlab {

namespace {

constexpr std::uint64_t kPhaseTargetPick = 11;

struct Outcome {
  std::uint8_t targeted = 0;
  std::uint8_t nontargeted = 0;
  float conf = 0.f;
  int rank = 0;
};

std::string fmt(double v) {
  char b[48];
  std::snprintf(b, sizeof b, "%.6f", v);
  return b;
}

std::vector<int> sorted_checkpoints(const AttackConfig& cfg) {
  std::vector<int> s = cfg.checkpoints;
  std::sort(s.begin(), s.end());
  s.erase(std::unique(s.begin(), s.end()), s.end());
  return s;
}

int rank_of(const std::vector<float>& z, int idx) {
  int r = 1;
  for (std::size_t j = 0; j < z.size(); ++j)
    if (z[j] > z[static_cast<std::size_t>(idx)]) ++r;
  return r;
}

Outcome judge(Graph& eval_graph, const Model& m, const Tensor& adv, int target,
              int original) {
  std::vector<float> z = predict_logits_one(eval_graph, m, adv);
  Outcome o;
  int am = argmax(z);
  o.targeted = am == target;
  o.nontargeted = am != original;
  o.conf = softmax_vec(z)[static_cast<std::size_t>(target)];
  o.rank = rank_of(z, target);
  return o;
}

// One (loss, source spec, target set) block: attacks every evaluation image
// on the source set, judges each checkpoint on each target model, appends
// one row per (target, checkpoint). Image work fans out over sc.jobs.
void run_transfer_cell(const std::vector<NamedModel>& all,
                       const std::vector<const Model*>& sources,
                       const std::string& source_label,
                       const std::vector<int>& target_idx, LossKind loss,
                       const std::vector<EvalImage>& images, const Dataset& ds,
                       const SuiteConfig& sc, TransferReport& out) {
  if (images.empty()) throw UsageError("no evaluation images available");
  std::vector<int> snaps = sorted_checkpoints(sc.attack);
  if (snaps.empty()) throw UsageError("attack config has no checkpoints");
  std::size_t n = images.size();
  std::size_t cells = target_idx.size() * snaps.size();
  std::vector<std::vector<Outcome>> outcomes(n, std::vector<Outcome>(cells));

  int nw = std::max(1, sc.jobs);
  std::vector<std::vector<Graph>> eval_graphs(static_cast<std::size_t>(nw));

  run_parallel(n, sc.jobs, [&](int w, std::size_t i) {
    std::vector<Graph>& graphs = eval_graphs[static_cast<std::size_t>(w)];
    if (graphs.empty())
      for (int ti : target_idx) graphs.push_back(all[static_cast<std::size_t>(ti)].model.graph);

    AttackConfig cfg = sc.attack;
    cfg.loss.kind = loss;
    cfg.checkpoints = snaps;
    cfg.seed = hash_combine(mix64(sc.attack.seed), images[i].index);
    AttackResult res = attack(sources, ds.images[images[i].index], images[i].target,
                              images[i].original, cfg);
    for (std::size_t t = 0; t < target_idx.size(); ++t)
      for (std::size_t c = 0; c < snaps.size(); ++c)
        outcomes[i][t * snaps.size() + c] =
            judge(graphs[t], all[static_cast<std::size_t>(target_idx[t])].model,
                  res.checkpoint_images[c], images[i].target, images[i].original);
  });

  for (std::size_t t = 0; t < target_idx.size(); ++t)
    for (std::size_t c = 0; c < snaps.size(); ++c) {
      double hit = 0, moved = 0, conf = 0, rank = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const Outcome& o = outcomes[i][t * snaps.size() + c];
        hit += o.targeted;
        moved += o.nontargeted;
        conf += o.conf;
        rank += o.rank;
      }
      TransferRow row;
      row.source = source_label;
      row.target = all[static_cast<std::size_t>(target_idx[t])].id;
      row.loss = loss_name(loss);
      row.methods = methods_string(sc.attack);
      row.checkpoint = snaps[c];
      row.epsilon = sc.attack.epsilon;
      row.alpha = sc.attack.alpha;
      row.seed = sc.attack.seed;
      row.n_images = static_cast<int>(n);
      row.targeted_sr = hit / static_cast<double>(n);
      row.nontargeted_sr = moved / static_cast<double>(n);
      row.mean_target_conf = conf / static_cast<double>(n);
      row.mean_target_rank = rank / static_cast<double>(n);
      out.rows.push_back(std::move(row));
    }
}

}  // namespace

std::string methods_string(const AttackConfig& cfg) {
  std::string s;
  if (cfg.use_mi) s += "mi";
  if (cfg.use_ti) s += s.empty() ? "ti" : "+ti";
  if (cfg.use_di) s += s.empty() ? "di" : "+di";
  return s.empty() ? "none" : s;
}

std::string transfer_csv(const TransferReport& rep) {
  std::string out =
      "source,target,loss,methods,checkpoint,epsilon,alpha,seed,n_images,"
      "targeted_sr,nontargeted_sr,mean_target_conf,mean_target_rank\n";
  for (const TransferRow& r : rep.rows) {
    out += r.source + ',' + r.target + ',' + r.loss + ',' + r.methods + ',' +
           std::to_string(r.checkpoint) + ',' + fmt(r.epsilon) + ',' + fmt(r.alpha) +
           ',' + std::to_string(static_cast<unsigned long long>(r.seed)) + ',' +
           std::to_string(r.n_images) + ',' + fmt(r.targeted_sr) + ',' +
           fmt(r.nontargeted_sr) + ',' + fmt(r.mean_target_conf) + ',' +
           fmt(r.mean_target_rank) + '\n';
  }
  return out;
}

std::string trend_csv(const std::vector<TrendSeries>& series) {
  std::string out = "loss,iteration,norm_loss,norm_grad_l1,target_logit\n";
  for (const TrendSeries& s : series)
    for (std::size_t i = 0; i < s.norm_loss.size(); ++i)
      out += s.loss + ',' + std::to_string(i + 1) + ',' + fmt(s.norm_loss[i]) + ',' +
             fmt(s.norm_grad_l1[i]) + ',' + fmt(s.target_logit[i]) + '\n';
  return out;
}

std::vector<EvalImage> select_eval_images(const std::vector<const Model*>& models,
                                          const Dataset& ds, std::size_t n,
                                          std::uint64_t seed) {
  if (models.empty()) throw UsageError("select_eval_images: no models");
  int k = models[0]->num_classes;
  for (const Model* m : models)
    if (m->num_classes != k)
      throw UsageError("select_eval_images: models disagree on class count");
  CounterRng ctr(seed);
  std::vector<Graph> graphs;
  for (const Model* m : models) graphs.push_back(m->graph);

  std::vector<EvalImage> out;
  for (std::size_t i = 0; i < ds.size() && out.size() < n; ++i) {
    int label = ds.labels[i];
    bool ok = true;
    for (std::size_t m = 0; m < models.size() && ok; ++m)
      ok = argmax(predict_logits_one(graphs[m], *models[m], ds.images[i])) == label;
    if (!ok) continue;
    int target = static_cast<int>(
        ctr.below(static_cast<std::uint64_t>(k - 1), kPhaseTargetPick, i, 0));
    if (target >= label) ++target;
    out.push_back({i, label, target});
  }
  return out;
}

float success_rate(const Model& target_model, const std::vector<Tensor>& adv_images,
                   const std::vector<int>& targets) {
  if (adv_images.empty()) throw UsageError("success_rate: no images");
  if (adv_images.size() != targets.size())
    throw UsageError("success_rate: image and target counts differ");
  Graph g = target_model.graph;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < adv_images.size(); ++i)
    if (argmax(predict_logits_one(g, target_model, adv_images[i])) == targets[i]) ++hits;
  return static_cast<float>(hits) / static_cast<float>(adv_images.size());
}

TargetStats target_stats(const Model& m, const Tensor& adv_image, int target) {
  if (target < 0 || target >= m.num_classes)
    throw UsageError("target_stats: class index out of range");
  Graph g = m.graph;
  std::vector<float> z = predict_logits_one(g, m, adv_image);
  TargetStats s;
  s.confidence = softmax_vec(z)[static_cast<std::size_t>(target)];
  s.rank = rank_of(z, target);
  return s;
}

int select_target_by_rank(const Model& m, const Tensor& image, int rank) {
  if (rank < 1 || rank > m.num_classes)
    throw UsageError("select_target_by_rank: rank " + std::to_string(rank) +
                     " outside [1," + std::to_string(m.num_classes) + "]");
  Graph g = m.graph;
  std::vector<float> z = predict_logits_one(g, m, image);
  std::vector<int> order(z.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return z[static_cast<std::size_t>(a)] > z[static_cast<std::size_t>(b)];
  });
  return order[static_cast<std::size_t>(rank - 1)];
}

void ensure_trained(const std::vector<NamedModel>& models, const Dataset& test_set,
                    float min_accuracy, std::size_t limit) {
  std::string bad;
  for (const NamedModel& nm : models) {
    float acc = accuracy(nm.model, test_set, limit);
    if (acc < min_accuracy) {
      if (!bad.empty()) bad += "; ";
      char b[64];
      std::snprintf(b, sizeof b, "%s at %.3f", nm.id.c_str(), acc);
      bad += b;
    }
  }
  if (!bad.empty())
    throw UsageError("models below the " + fmt(min_accuracy) +
                     " accuracy gate: " + bad + "; train them before evaluating");
}

TransferReport run_single_transfer(const std::vector<NamedModel>& models,
                                   const Dataset& test_set, const SuiteConfig& sc) {
  if (models.size() < 2) throw UsageError("single transfer needs at least 2 models");
  ensure_trained(models, test_set);
  std::vector<const Model*> all_ptrs;
  for (const NamedModel& nm : models) all_ptrs.push_back(&nm.model);
  std::vector<EvalImage> images =
      select_eval_images(all_ptrs, test_set, sc.n_images, sc.attack.seed);

  TransferReport rep;
  for (LossKind loss : sc.losses)
    for (std::size_t s = 0; s < models.size(); ++s) {
      std::vector<int> targets;
      for (std::size_t t = 0; t < models.size(); ++t)
        if (t != s || sc.include_whitebox) targets.push_back(static_cast<int>(t));
      run_transfer_cell(models, {&models[s].model}, models[s].id, targets, loss, images,
                        test_set, sc, rep);
    }
  return rep;
}

TransferReport run_ensemble_transfer(const std::vector<NamedModel>& models,
                                     HoldoutRule rule,
                                     const std::vector<NamedModel>& siblings,
                                     const Dataset& test_set, const SuiteConfig& sc) {
  if (models.size() < 3) throw UsageError("ensemble transfer needs at least 3 models");
  ensure_trained(models, test_set);
  if (rule == HoldoutRule::easy) ensure_trained(siblings, test_set);

  std::vector<const Model*> all_ptrs;
  for (const NamedModel& nm : models) all_ptrs.push_back(&nm.model);
  std::vector<EvalImage> images =
      select_eval_images(all_ptrs, test_set, sc.n_images, sc.attack.seed);

  TransferReport rep;
  for (LossKind loss : sc.losses)
    for (std::size_t h = 0; h < models.size(); ++h) {
      std::vector<const Model*> sources;
      std::string label = "ens(";
      for (std::size_t s = 0; s < models.size(); ++s) {
        if (s == h) continue;
        sources.push_back(&models[s].model);
        if (label.size() > 4) label += '+';
        label += models[s].id;
      }
      if (rule == HoldoutRule::easy) {
        const NamedModel* sib = nullptr;
        for (const NamedModel& cand : siblings)
          if (cand.model.arch_id == models[h].model.arch_id && cand.id != models[h].id)
            sib = &cand;
        if (!sib)
          throw UsageError("easy ensemble hold-out of " + models[h].id +
                           " needs a second-seed sibling of arch " +
                           models[h].model.arch_id);
        sources.push_back(&sib->model);
        label += '+' + sib->id;
      }
      label += ')';
      run_transfer_cell(models, sources, label, {static_cast<int>(h)}, loss, images,
                        test_set, sc, rep);
    }
  return rep;
}

TransferReport run_rank_sweep(const NamedModel& source, const NamedModel& target_model,
                              const std::vector<int>& ranks, const Dataset& test_set,
                              const SuiteConfig& sc) {
  for (int r : ranks)
    if (r < 2 || r > source.model.num_classes)
      throw UsageError("rank sweep: rank " + std::to_string(r) + " outside [2," +
                       std::to_string(source.model.num_classes) + "]");
  std::vector<NamedModel> pair;
  pair.push_back({source.id, source.model});
  pair.push_back({target_model.id, target_model.model});
  ensure_trained(pair, test_set);

  std::vector<EvalImage> images =
      select_eval_images({&source.model}, test_set, sc.n_images, sc.attack.seed);

  SuiteConfig final_only = sc;
  final_only.attack.checkpoints = {sc.attack.iterations};

  TransferReport rep;
  for (LossKind loss : sc.losses)
    for (int r : ranks) {
      std::vector<EvalImage> ranked = images;
      for (EvalImage& e : ranked)
        e.target = select_target_by_rank(source.model, test_set.images[e.index], r);
      run_transfer_cell(pair, {&pair[0].model}, source.id + ":rank" + std::to_string(r),
                        {1}, loss, ranked, test_set, final_only, rep);
    }
  return rep;
}

std::vector<float> normalize_trend(const std::vector<float>& series) {
  if (series.empty()) throw UsageError("normalize_trend: empty series");
  if (series[0] == 0.f)
    throw NumericalDomainError("normalize_trend: first value is zero");
  std::vector<float> out(series.size());
  for (std::size_t i = 0; i < series.size(); ++i) out[i] = series[i] / series[0];
  return out;
}

std::vector<TrendSeries> run_trend_analysis(const NamedModel& source,
                                            const Dataset& test_set,
                                            const SuiteConfig& sc) {
  std::vector<NamedModel> one;
  one.push_back({source.id, source.model});
  ensure_trained(one, test_set);
  std::vector<EvalImage> images =
      select_eval_images({&source.model}, test_set, sc.n_images, sc.attack.seed);
  if (images.empty()) throw UsageError("no evaluation images available");
  std::size_t n = images.size();
  std::size_t iters = static_cast<std::size_t>(sc.attack.iterations);

  std::vector<TrendSeries> out;
  for (LossKind loss : sc.losses) {
    struct Traces {
      std::vector<float> nl, ng, z;
    };
    std::vector<Traces> per_image(n);
    run_parallel(n, sc.jobs, [&](int, std::size_t i) {
      AttackConfig cfg = sc.attack;
      cfg.loss.kind = loss;
      cfg.checkpoints = {};
      cfg.seed = hash_combine(mix64(sc.attack.seed), images[i].index);
      AttackResult res = attack({&source.model}, test_set.images[images[i].index],
                                images[i].target, images[i].original, cfg);
      per_image[i] = {normalize_trend(res.loss_trace), normalize_trend(res.grad_l1_trace),
                      res.target_logit_trace};
    });

    TrendSeries s;
    s.loss = loss_name(loss);
    s.norm_loss.resize(iters);
    s.norm_grad_l1.resize(iters);
    s.target_logit.resize(iters);
    for (std::size_t it = 0; it < iters; ++it) {
      double a = 0, b = 0, c = 0;
      for (std::size_t i = 0; i < n; ++i) {
        a += per_image[i].nl[it];
        b += per_image[i].ng[it];
        c += per_image[i].z[it];
      }
      s.norm_loss[it] = static_cast<float>(a / static_cast<double>(n));
      s.norm_grad_l1[it] = static_cast<float>(b / static_cast<double>(n));
      s.target_logit[it] = static_cast<float>(c / static_cast<double>(n));
    }
    out.push_back(std::move(s));
  }
  return out;
}

TransferReport run_stepsize_sweep(const NamedModel& source, const NamedModel& target_model,
                                  const std::vector<float>& alphas, const Dataset& test_set,
                                  const SuiteConfig& sc) {
  std::vector<float> uniq;
  for (float a : alphas) {
    if (!(a > 0.f)) throw UsageError("step-size sweep: alpha must be > 0");
    if (std::find(uniq.begin(), uniq.end(), a) != uniq.end()) {
      std::cerr << "warning: duplicate step size " << a << " ignored\n";
      continue;
    }
    uniq.push_back(a);
  }
  if (uniq.empty()) throw UsageError("step-size sweep: no step sizes");

  std::vector<NamedModel> pair;
  pair.push_back({source.id, source.model});
  pair.push_back({target_model.id, target_model.model});
  ensure_trained(pair, test_set);

  std::vector<EvalImage> images =
      select_eval_images({&source.model}, test_set, sc.n_images, sc.attack.seed);

  TransferReport rep;
  for (LossKind loss : sc.losses)
    for (float a : uniq) {
      SuiteConfig one = sc;
      one.attack.alpha = a;
      one.attack.checkpoints = {sc.attack.iterations};
      run_transfer_cell(pair, {&pair[0].model}, source.id, {1}, loss, images, test_set,
                        one, rep);
    }
  return rep;
}

void run_parallel(std::size_t n, int jobs,
                  const std::function<void(int, std::size_t)>& fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(0, i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::exception_ptr first_err;
  int nw = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(jobs), n));
  std::vector<std::thread> workers;
  for (int w = 0; w < nw; ++w)
    workers.emplace_back([&, w] {
      for (;;) {
        std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(w, i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mu);
          if (!first_err) first_err = std::current_exception();
          next.store(n);
          return;
        }
      }
    });
  for (std::thread& t : workers) t.join();
  if (first_err) std::rethrow_exception(first_err);
}

}  // namespace ttlab
