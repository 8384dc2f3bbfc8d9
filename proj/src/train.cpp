#include <cmath>

#include "ttlab/model.hpp"
#include "ttlab/rng.hpp"

namespace ttlab {

namespace {

Tensor hflip(const Tensor& img) {
  Tensor out(img.shape);
  int c = img.shape[0], h = img.shape[1], w = img.shape[2];
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        out.data[(static_cast<std::size_t>(ch) * h + y) * w + x] =
            img.data[(static_cast<std::size_t>(ch) * h + y) * w + (w - 1 - x)];
  return out;
}

}  // namespace

TrainMetrics train(Model& m, const Dataset& train_ds, const Dataset& test_ds,
                   const TrainConfig& cfg) {
  if (cfg.epochs < 1) throw UsageError("train: epochs must be >= 1");
  if (cfg.batch_size < 1) throw UsageError("train: batch size must be >= 1");
  if (!(cfg.lr >= 0.f) || !(cfg.momentum >= 0.f) || !(cfg.weight_decay >= 0.f) ||
      !(cfg.decay_factor >= 0.f))
    throw UsageError("train: rates must be >= 0");
  if (train_ds.num_classes != m.num_classes)
    throw UsageError("train: dataset has " + std::to_string(train_ds.num_classes) +
                     " classes, model expects " + std::to_string(m.num_classes));

  Dataset subset;
  const Dataset* tr = &train_ds;
  if (cfg.train_subset > 0 && cfg.train_subset < train_ds.size()) {
    subset.num_classes = train_ds.num_classes;
    subset.split = train_ds.split;
    for (std::size_t i = 0; i < cfg.train_subset; ++i) {
      subset.images.push_back(train_ds.images[i]);
      subset.labels.push_back(train_ds.labels[i]);
    }
    tr = &subset;
  }

  Graph tg = m.graph;
  int loss_id = tg.add_loss_ce(m.logits_id, 0);
  auto wids = tg.weight_ids();
  tg.set_grad_targets(wids);

  std::vector<std::vector<float>> velocity, accum;
  for (int id : wids) {
    velocity.emplace_back(tg.val(id).numel(), 0.f);
    accum.emplace_back(tg.val(id).numel(), 0.f);
  }

  TrainMetrics metrics;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    float lr = cfg.lr;
    for (int d : cfg.decay_epochs)
      if (epoch >= d) lr *= cfg.decay_factor;

    StreamRng flip_rng(hash_combine(hash_combine(cfg.seed, 0xF11Au), static_cast<std::uint64_t>(epoch)));
    BatchIter it(*tr, static_cast<std::size_t>(cfg.batch_size),
                 hash_combine(cfg.seed, static_cast<std::uint64_t>(epoch)), true);
    Batch batch;
    double epoch_loss = 0.0;
    std::size_t epoch_count = 0;

    while (it.next(batch)) {
      for (auto& a : accum) std::fill(a.begin(), a.end(), 0.f);
      double batch_loss = 0.0;
      for (std::size_t i = 0; i < batch.images.size(); ++i) {
        bool flip = cfg.flip_augment && flip_rng.next_float() < 0.5f;
        if (flip)
          tg.set_value(m.input_id, hflip(*batch.images[i]));
        else
          tg.set_value(m.input_id, *batch.images[i]);
        tg.node(loss_id).p.i0 = batch.labels[i];
        tg.forward();
        tg.backward(loss_id);
        batch_loss += tg.val(loss_id).data[0];
        for (std::size_t wi = 0; wi < wids.size(); ++wi) {
          const auto& gr = tg.grad(wids[wi]);
          auto& a = accum[wi];
          for (std::size_t j = 0; j < gr.size(); ++j) a[j] += gr[j];
        }
      }
      float inv = 1.f / static_cast<float>(batch.images.size());
      if (!std::isfinite(batch_loss))
        throw TrainingError("loss diverged at epoch " + std::to_string(epoch));
      epoch_loss += batch_loss;
      epoch_count += batch.images.size();

      for (std::size_t wi = 0; wi < wids.size(); ++wi) {
        auto& w = tg.val(wids[wi]).data;
        auto& v = velocity[wi];
        const auto& a = accum[wi];
        for (std::size_t j = 0; j < w.size(); ++j) {
          float g = a[j] * inv + cfg.weight_decay * w[j];
          v[j] = cfg.momentum * v[j] - lr * g;
          w[j] += v[j];
        }
      }
    }
    metrics.epoch_mean_loss.push_back(static_cast<float>(epoch_loss / static_cast<double>(epoch_count)));
  }

  for (int id : wids) m.graph.node(id).val = tg.val(id);
  metrics.test_accuracy = accuracy(m, test_ds);
  return metrics;
}

}  // namespace ttlab
