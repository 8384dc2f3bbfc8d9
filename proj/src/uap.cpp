#include "ttlab/uap.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "ttlab/errors.hpp"
#include "ttlab/rng.hpp"

namespace ttlab {

namespace {

void put_u32(std::ofstream& f, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  f.write(reinterpret_cast<char*>(b), 4);
}

void put_u64(std::ofstream& f, std::uint64_t v) {
  put_u32(f, static_cast<std::uint32_t>(v));
  put_u32(f, static_cast<std::uint32_t>(v >> 32));
}

void put_f32(std::ofstream& f, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(f, bits);
}

std::uint32_t get_u32(std::ifstream& f, const std::string& path) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  if (!f) throw FormatError(path + ": truncated");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t get_u64(std::ifstream& f, const std::string& path) {
  std::uint64_t lo = get_u32(f, path);
  std::uint64_t hi = get_u32(f, path);
  return lo | (hi << 32);
}

float get_f32(std::ifstream& f, const std::string& path) {
  std::uint32_t bits = get_u32(f, path);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

struct UapEval {
  double targeted = 0, nontargeted = 0, conf = 0, rank = 0;
};

UapEval eval_stats(const UapArtifact& uap, const Model& m, const Dataset& ds,
                   std::size_t n) {
  Graph g = m.graph;
  Tensor x(m.input_shape);
  UapEval e;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < x.data.size(); ++j)
      x.data[j] = std::clamp(ds.images[i].data[j] + uap.delta.data[j], 0.f, 1.f);
    std::vector<float> z = predict_logits_one(g, m, x);
    int am = argmax(z);
    e.targeted += am == uap.target;
    e.nontargeted += am != ds.labels[i];
    e.conf += softmax_vec(z)[static_cast<std::size_t>(uap.target)];
    int r = 1;
    for (float zj : z) r += zj > z[static_cast<std::size_t>(uap.target)];
    e.rank += r;
  }
  double dn = static_cast<double>(n);
  e.targeted /= dn;
  e.nontargeted /= dn;
  e.conf /= dn;
  e.rank /= dn;
  return e;
}

}  // namespace

UapArtifact generate_uap(const std::vector<const Model*>& models,
                         const std::string& source_id, int target,
                         const AttackConfig& cfg) {
  if (models.empty()) throw UsageError("generate_uap: no models");
  if (cfg.unbounded || cfg.norm != NormKind::linf || !(cfg.epsilon > 0.f))
    throw UsageError("generate_uap: a universal perturbation needs a bounded linf ball");
  if (cfg.iterations < 0) throw UsageError("generate_uap: negative iteration count");
  int k = models[0]->num_classes;
  if (target < 0 || target >= k)
    throw UsageError("generate_uap: target class out of range");

  Tensor gray(models[0]->input_shape);
  for (float& v : gray.data) v = 0.5f;
  int original = argmax(ensemble_logits(models, gray));
  if (original == target) original = (original + 1) % k;

  Tensor fin;
  if (cfg.iterations == 0) {
    fin = attack_init_image(gray, cfg);
  } else {
    AttackConfig run = cfg;
    run.checkpoints = {};
    AttackResult res = attack(models, gray, target, original, run);
    fin = std::move(res.final_image);
  }

  UapArtifact u;
  u.delta = Tensor(gray.shape);
  for (std::size_t i = 0; i < fin.data.size(); ++i)
    u.delta.data[i] = fin.data[i] - 0.5f;
  u.target = target;
  u.epsilon = cfg.epsilon;
  u.arch_id = source_id;
  u.seed = cfg.seed;
  return u;
}

void save_uap(const UapArtifact& uap, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f.write("UAP1", 4);
  put_u32(f, static_cast<std::uint32_t>(uap.delta.rank()));
  for (int d : uap.delta.shape) put_u32(f, static_cast<std::uint32_t>(d));
  put_f32(f, uap.epsilon);
  put_u32(f, static_cast<std::uint32_t>(uap.target));
  put_u32(f, static_cast<std::uint32_t>(uap.arch_id.size()));
  f.write(uap.arch_id.data(), static_cast<std::streamsize>(uap.arch_id.size()));
  put_u64(f, uap.seed);
  for (float v : uap.delta.data) put_f32(f, v);
  if (!f) throw IoError("short write on " + path);
}

UapArtifact load_uap(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "UAP1", 4) != 0)
    throw FormatError(path + ": not a UAP1 perturbation file");
  std::uint32_t rank = get_u32(f, path);
  if (rank == 0 || rank > 8)
    throw FormatError(path + ": implausible rank " + std::to_string(rank));
  std::vector<int> shape;
  for (std::uint32_t i = 0; i < rank; ++i) {
    std::uint32_t d = get_u32(f, path);
    if (d == 0 || d > 1u << 20) throw FormatError(path + ": implausible dimension");
    shape.push_back(static_cast<int>(d));
  }
  UapArtifact u;
  u.epsilon = get_f32(f, path);
  u.target = static_cast<int>(get_u32(f, path));
  std::uint32_t idn = get_u32(f, path);
  if (idn > 4096) throw FormatError(path + ": implausible id length");
  u.arch_id.assign(idn, '\0');
  f.read(u.arch_id.data(), idn);
  if (!f) throw FormatError(path + ": truncated");
  u.seed = get_u64(f, path);
  u.delta = Tensor(shape);
  for (float& v : u.delta.data) v = get_f32(f, path);
  if (f.peek() != std::ifstream::traits_type::eof())
    throw FormatError(path + ": trailing bytes");
  float peak = 0.f;
  for (float v : u.delta.data) peak = std::max(peak, std::abs(v));
  if (!(u.epsilon >= 0.f) || peak > u.epsilon + 1e-6f)
    throw FormatError(path + ": perturbation exceeds its epsilon ball");
  return u;
}

float evaluate_uap(const UapArtifact& uap, const Model& m, const Dataset& ds,
                   std::size_t limit) {
  if (uap.delta.shape != m.input_shape)
    throw ShapeError("evaluate_uap: perturbation shape " + shape_str(uap.delta.shape) +
                     " does not match model input " + shape_str(m.input_shape));
  if (uap.target < 0 || uap.target >= m.num_classes)
    throw UsageError("evaluate_uap: target class out of range");
  if (ds.size() == 0) throw UsageError("evaluate_uap: empty dataset");
  std::size_t n = limit && limit < ds.size() ? limit : ds.size();
  return static_cast<float>(eval_stats(uap, m, ds, n).targeted);
}

TransferReport run_uap_suite(const std::vector<NamedModel>& models,
                             const Dataset& test_set, const SuiteConfig& sc,
                             std::size_t eval_n) {
  if (models.empty()) throw UsageError("run_uap_suite: no models");
  ensure_trained(models, test_set);
  int k = models[0].model.num_classes;
  std::size_t n_eval = eval_n && eval_n < test_set.size() ? eval_n : test_set.size();

  std::size_t n_combo = sc.losses.size() * models.size() * static_cast<std::size_t>(k);
  std::vector<UapEval> slots(n_combo);
  run_parallel(n_combo, sc.jobs, [&](int, std::size_t item) {
    std::size_t t = item % static_cast<std::size_t>(k);
    std::size_t m = (item / static_cast<std::size_t>(k)) % models.size();
    std::size_t l = item / (static_cast<std::size_t>(k) * models.size());
    AttackConfig cfg = sc.attack;
    cfg.loss.kind = sc.losses[l];
    cfg.seed = hash_combine(
        hash_combine(mix64(sc.attack.seed), fnv1a(models[m].id) + l), t);
    UapArtifact uap =
        generate_uap({&models[m].model}, models[m].id, static_cast<int>(t), cfg);
    slots[item] = eval_stats(uap, models[m].model, test_set, n_eval);
  });

  TransferReport rep;
  for (std::size_t l = 0; l < sc.losses.size(); ++l)
    for (std::size_t m = 0; m < models.size(); ++m) {
      UapEval sum;
      for (std::size_t t = 0; t < static_cast<std::size_t>(k); ++t) {
        const UapEval& e = slots[(l * models.size() + m) * static_cast<std::size_t>(k) + t];
        sum.targeted += e.targeted;
        sum.nontargeted += e.nontargeted;
        sum.conf += e.conf;
        sum.rank += e.rank;
      }
      TransferRow row;
      row.source = models[m].id;
      row.target = models[m].id;
      row.loss = loss_name(sc.losses[l]);
      row.methods = methods_string(sc.attack);
      row.checkpoint = sc.attack.iterations;
      row.epsilon = sc.attack.epsilon;
      row.alpha = sc.attack.alpha;
      row.seed = sc.attack.seed;
      row.n_images = static_cast<int>(n_eval);
      row.targeted_sr = sum.targeted / k;
      row.nontargeted_sr = sum.nontargeted / k;
      row.mean_target_conf = sum.conf / k;
      row.mean_target_rank = sum.rank / k;
      rep.rows.push_back(std::move(row));
    }
  return rep;
}

}  // namespace ttlab
