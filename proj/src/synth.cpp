#include "ttlab/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "ttlab/errors.hpp"
#include "ttlab/rng.hpp"

namespace ttlab {

namespace {

// Half-pixel-center bilinear upsample of a coarse [C,gh,gw] grid to [C,H,W].
Tensor bilerp_up(const Tensor& grid, int h, int w) {
  int c = grid.shape[0], gh = grid.shape[1], gw = grid.shape[2];
  Tensor out({c, h, w});
  const auto tap = [](int i, int big, int small) {
    double src = (i + 0.5) * static_cast<double>(small) / big - 0.5;
    double fl = std::floor(src);
    int lo = static_cast<int>(fl);
    double f = src - fl;
    if (lo < 0) {
      lo = 0;
      f = 0.0;
    } else if (lo >= small - 1) {
      lo = small - 1;
      f = 0.0;
    }
    return std::pair<int, double>{lo, f};
  };
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y) {
      auto [ylo, fy] = tap(y, h, gh);
      int y1 = std::min(ylo + 1, gh - 1);
      for (int x = 0; x < w; ++x) {
        auto [xlo, fx] = tap(x, w, gw);
        int x1 = std::min(xlo + 1, gw - 1);
        const auto at = [&](int yy, int xx) {
          return grid.data[(static_cast<std::size_t>(ch) * gh + yy) * gw + xx];
        };
        double top = (1 - fx) * at(ylo, xlo) + fx * at(ylo, x1);
        double bot = (1 - fx) * at(y1, xlo) + fx * at(y1, x1);
        out.data[(static_cast<std::size_t>(ch) * h + y) * w + x] =
            static_cast<float>((1 - fy) * top + fy * bot);
      }
    }
  return out;
}

// Per-class cue banks. Each cue is a unit-contrast pattern: a blob grid at a
// random coarse resolution or an oriented sinusoid stripe with random
// frequency, orientation, phase and per-channel sign.
std::vector<std::vector<Tensor>> make_cues(const SynthConfig& cfg, int c, int h, int w) {
  std::vector<std::vector<Tensor>> banks;
  for (int cls = 0; cls < cfg.classes; ++cls) {
    std::vector<Tensor> bank;
    for (int k = 0; k < cfg.cue_count; ++k) {
      StreamRng r(hash_combine(hash_combine(cfg.seed, 0x7e3f),
                               hash_combine(static_cast<std::uint64_t>(cls),
                                            static_cast<std::uint64_t>(k))));
      if (r.next_float() < 0.35f) {
        int gh = 3 + static_cast<int>(r.next_below(6));
        Tensor grid({c, gh, gh});
        for (float& v : grid.data) v = 2.f * r.next_float() - 1.f;
        bank.push_back(bilerp_up(grid, h, w));
      } else {
        float freq = 1.5f + 5.f * r.next_float();
        float theta = r.uniform(0.f, static_cast<float>(std::numbers::pi));
        float phase = r.uniform(0.f, 2.f * static_cast<float>(std::numbers::pi));
        float ct = std::cos(theta), st = std::sin(theta);
        std::vector<float> amp(static_cast<std::size_t>(c));
        for (float& a : amp) a = r.next_float() < 0.5f ? -1.f : 1.f;
        Tensor t({c, h, w});
        for (int ch = 0; ch < c; ++ch)
          for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
              float u = (static_cast<float>(x) * ct + static_cast<float>(y) * st) /
                        static_cast<float>(h);
              t.data[(static_cast<std::size_t>(ch) * h + y) * w + x] =
                  amp[static_cast<std::size_t>(ch)] *
                  std::sin(2.f * static_cast<float>(std::numbers::pi) * freq * u + phase);
            }
        bank.push_back(std::move(t));
      }
    }
    banks.push_back(std::move(bank));
  }
  return banks;
}

Dataset synth_split(const SynthConfig& cfg, bool test_split, int c, int h, int w) {
  if (cfg.classes < 2) throw UsageError("synth: need at least 2 classes");
  if (cfg.cue_count < 1) throw UsageError("synth: need at least 1 cue per class");
  Dataset ds;
  ds.num_classes = cfg.classes;
  ds.split = test_split ? "test" : "train";
  std::size_t n = test_split ? cfg.test_n : cfg.train_n;
  auto banks = make_cues(cfg, c, h, w);
  float scale = cfg.cue_amp / std::sqrt(static_cast<float>(cfg.cue_count));
  std::uint64_t split_id = test_split ? 2 : 1;
  std::size_t plane = static_cast<std::size_t>(h) * w;

  for (std::size_t i = 0; i < n; ++i) {
    int cls = static_cast<int>(i % static_cast<std::size_t>(cfg.classes));
    StreamRng r(hash_combine(hash_combine(cfg.seed, split_id), static_cast<std::uint64_t>(i)));
    const std::vector<Tensor>& bank = banks[static_cast<std::size_t>(cls)];
    Tensor img({c, h, w});

    int dy = static_cast<int>(r.next_below(static_cast<std::uint64_t>(2 * cfg.max_shift + 1))) -
             cfg.max_shift;
    int dx = static_cast<int>(r.next_below(static_cast<std::uint64_t>(2 * cfg.max_shift + 1))) -
             cfg.max_shift;
    bool flip = r.next_float() < 0.5f;
    float contrast = 1.f + cfg.contrast_jitter * (2.f * r.next_float() - 1.f);
    float bright = cfg.brightness_jitter * (2.f * r.next_float() - 1.f);
    std::vector<float> wk(bank.size());
    for (float& v : wk) v = cfg.cue_floor + (1.f - cfg.cue_floor) * r.next_float();

    Tensor noise_grid({c, 4, 4});
    for (float& v : noise_grid.data) v = 2.f * r.next_float() - 1.f;
    Tensor smooth = bilerp_up(noise_grid, h, w);

    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          int sy = ((y + dy) % h + h) % h;
          int sx0 = flip ? w - 1 - x : x;
          int sx = ((sx0 + dx) % w + w) % w;
          std::size_t src = static_cast<std::size_t>(ch) * plane +
                            static_cast<std::size_t>(sy) * w + sx;
          float sig = 0.f;
          for (std::size_t k = 0; k < bank.size(); ++k) sig += wk[k] * bank[k].data[src];
          float v = 0.5f + scale * sig;
          v = (v - 0.5f) * contrast + 0.5f + bright;
          v += cfg.smooth_noise * smooth.data[static_cast<std::size_t>(ch) * plane +
                                              static_cast<std::size_t>(y) * w + x];
          v += cfg.white_noise * (2.f * r.next_float() - 1.f);
          img.data[static_cast<std::size_t>(ch) * plane + static_cast<std::size_t>(y) * w + x] =
              std::clamp(v, 0.f, 1.f);
        }
    ds.images.push_back(std::move(img));
    ds.labels.push_back(cls);
  }
  return ds;
}

}  // namespace

Dataset synth_cifar_split(const SynthConfig& cfg, bool test_split) {
  return synth_split(cfg, test_split, 3, 32, 32);
}

Dataset synth_mnist_split(const SynthConfig& cfg, bool test_split) {
  return synth_split(cfg, test_split, 1, 28, 28);
}

void synth_cifar_to_dir(const SynthConfig& cfg, const std::string& dir) {
  write_cifar10(dir, synth_cifar_split(cfg, false), synth_cifar_split(cfg, true));
}

void synth_mnist_to_dir(const SynthConfig& cfg, const std::string& dir) {
  write_mnist(dir, synth_mnist_split(cfg, false), synth_mnist_split(cfg, true));
}

}  // namespace ttlab
