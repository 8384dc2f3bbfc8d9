#include "ttlab/runconfig.hpp"

#include <cerrno>
#include <climits>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "ttlab/errors.hpp"

namespace ttlab {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::stringstream ss(s);
  while (std::getline(ss, cur, ',')) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

std::string join_floats(const std::vector<float>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += format_float_key(v[i]);
  }
  return out;
}

}  // namespace

std::string format_float_key(float v) {
  char buf[64];
  for (int prec = 1; prec <= 9; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, static_cast<double>(v));
    if (std::strtof(buf, nullptr) == v) return buf;
  }
  std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(v));
  return buf;
}

void ConfigBag::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw FormatError(path + ":" + std::to_string(lineno) +
                        ": expected 'key = value', got '" + line + "'");
    std::string key = trim(line.substr(0, eq));
    if (key.empty())
      throw FormatError(path + ":" + std::to_string(lineno) + ": empty key");
    values_[key] = trim(line.substr(eq + 1));
  }
}

void ConfigBag::set_pair(const std::string& pair) {
  std::size_t eq = pair.find('=');
  if (eq == std::string::npos)
    throw UsageError("override '" + pair + "' is not of the form key=value");
  std::string key = trim(pair.substr(0, eq));
  if (key.empty()) throw UsageError("override '" + pair + "' has an empty key");
  values_[key] = trim(pair.substr(eq + 1));
}

void ConfigBag::set(const std::string& key, const std::string& value) {
  values_[key] = value;
}

bool ConfigBag::provided(const std::string& key) const {
  return values_.count(key) != 0;
}

const std::string* ConfigBag::lookup(const std::string& key) const {
  auto it = values_.find(key);
  return it == values_.end() ? nullptr : &it->second;
}

std::string ConfigBag::get_str(const std::string& key, const std::string& fallback) {
  const std::string* v = lookup(key);
  consumed_.insert(key);
  std::string out = v ? *v : fallback;
  resolved_[key] = out;
  return out;
}

int ConfigBag::get_int(const std::string& key, int fallback) {
  const std::string* v = lookup(key);
  consumed_.insert(key);
  int out = fallback;
  if (v) {
    errno = 0;
    char* end = nullptr;
    long parsed = std::strtol(v->c_str(), &end, 10);
    if (errno != 0 || end == v->c_str() || *end != '\0' || parsed < INT_MIN || parsed > INT_MAX)
      throw UsageError("config key '" + key + "': '" + *v + "' is not an integer");
    out = static_cast<int>(parsed);
  }
  resolved_[key] = std::to_string(out);
  return out;
}

float ConfigBag::get_float(const std::string& key, float fallback) {
  const std::string* v = lookup(key);
  consumed_.insert(key);
  float out = fallback;
  if (v) {
    errno = 0;
    char* end = nullptr;
    float parsed = std::strtof(v->c_str(), &end);
    if (errno != 0 || end == v->c_str() || *end != '\0')
      throw UsageError("config key '" + key + "': '" + *v + "' is not a number");
    out = parsed;
  }
  resolved_[key] = format_float_key(out);
  return out;
}

bool ConfigBag::get_bool(const std::string& key, bool fallback) {
  const std::string* v = lookup(key);
  consumed_.insert(key);
  bool out = fallback;
  if (v) {
    if (*v == "true" || *v == "1" || *v == "yes" || *v == "on") out = true;
    else if (*v == "false" || *v == "0" || *v == "no" || *v == "off") out = false;
    else throw UsageError("config key '" + key + "': '" + *v + "' is not a boolean");
  }
  resolved_[key] = out ? "true" : "false";
  return out;
}

std::uint64_t ConfigBag::get_u64(const std::string& key, std::uint64_t fallback) {
  const std::string* v = lookup(key);
  consumed_.insert(key);
  std::uint64_t out = fallback;
  if (v) {
    errno = 0;
    char* end = nullptr;
    unsigned long long parsed = std::strtoull(v->c_str(), &end, 10);
    if (errno != 0 || end == v->c_str() || *end != '\0' || v->find('-') != std::string::npos)
      throw UsageError("config key '" + key + "': '" + *v + "' is not an unsigned integer");
    out = parsed;
  }
  resolved_[key] = std::to_string(out);
  return out;
}

std::vector<int> ConfigBag::get_int_list(const std::string& key,
                                         const std::vector<int>& fallback) {
  const std::string* v = lookup(key);
  consumed_.insert(key);
  std::vector<int> out = fallback;
  if (v) {
    out.clear();
    for (const std::string& item : split_commas(*v)) {
      errno = 0;
      char* end = nullptr;
      long parsed = std::strtol(item.c_str(), &end, 10);
      if (errno != 0 || end == item.c_str() || *end != '\0')
        throw UsageError("config key '" + key + "': '" + item + "' is not an integer");
      out.push_back(static_cast<int>(parsed));
    }
  }
  resolved_[key] = join_ints(out);
  return out;
}

std::vector<float> ConfigBag::get_float_list(const std::string& key,
                                             const std::vector<float>& fallback) {
  const std::string* v = lookup(key);
  consumed_.insert(key);
  std::vector<float> out = fallback;
  if (v) {
    out.clear();
    for (const std::string& item : split_commas(*v)) {
      errno = 0;
      char* end = nullptr;
      float parsed = std::strtof(item.c_str(), &end);
      if (errno != 0 || end == item.c_str() || *end != '\0')
        throw UsageError("config key '" + key + "': '" + item + "' is not a number");
      out.push_back(parsed);
    }
  }
  resolved_[key] = join_floats(out);
  return out;
}

void ConfigBag::note(const std::string& key, const std::string& value) {
  resolved_[key] = value;
}

void ConfigBag::finish(const std::string& context) const {
  std::vector<std::string> unknown;
  for (const auto& [key, value] : values_)
    if (!consumed_.count(key)) unknown.push_back(key);
  if (unknown.empty()) return;
  std::string msg = "unknown " + context + " config key";
  if (unknown.size() > 1) msg += 's';
  msg += ": ";
  for (std::size_t i = 0; i < unknown.size(); ++i) {
    if (i) msg += ", ";
    msg += unknown[i];
  }
  throw UsageError(msg);
}

void write_config_file(const std::string& path,
                       const std::map<std::string, std::string>& values) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write config file " + path);
  for (const auto& [key, value] : values) out << key << " = " << value << "\n";
  if (!out) throw IoError("failed writing config file " + path);
}

SynthConfig synth_config_from(ConfigBag& bag) {
  SynthConfig d;
  SynthConfig c;
  c.train_n = bag.get_int("train_n", d.train_n);
  c.test_n = bag.get_int("test_n", d.test_n);
  c.seed = bag.get_u64("seed", d.seed);
  c.classes = bag.get_int("classes", d.classes);
  c.cue_amp = bag.get_float("cue_amp", d.cue_amp);
  c.cue_count = bag.get_int("cue_count", d.cue_count);
  c.cue_floor = bag.get_float("cue_floor", d.cue_floor);
  c.max_shift = bag.get_int("max_shift", d.max_shift);
  c.contrast_jitter = bag.get_float("contrast_jitter", d.contrast_jitter);
  c.brightness_jitter = bag.get_float("brightness_jitter", d.brightness_jitter);
  c.smooth_noise = bag.get_float("smooth_noise", d.smooth_noise);
  c.white_noise = bag.get_float("white_noise", d.white_noise);
  return c;
}

TrainConfig train_config_from(ConfigBag& bag) {
  TrainConfig d;
  TrainConfig c;
  c.epochs = bag.get_int("epochs", d.epochs);
  c.batch_size = bag.get_int("batch_size", d.batch_size);
  c.lr = bag.get_float("lr", d.lr);
  c.decay_epochs = bag.get_int_list("decay_epochs", d.decay_epochs);
  c.decay_factor = bag.get_float("decay_factor", d.decay_factor);
  c.momentum = bag.get_float("momentum", d.momentum);
  c.weight_decay = bag.get_float("weight_decay", d.weight_decay);
  c.seed = bag.get_u64("seed", d.seed);
  c.flip_augment = bag.get_bool("flip_augment", d.flip_augment);
  int subset = bag.get_int("train_subset", static_cast<int>(d.train_subset));
  if (subset < 0) throw UsageError("config key 'train_subset': must be >= 0");
  c.train_subset = static_cast<std::size_t>(subset);
  return c;
}

AttackConfig attack_config_from(ConfigBag& bag, bool uap_preset) {
  AttackConfig c;
  c.loss.kind = parse_loss(bag.get_str("loss", "logit"));
  c.loss.cw_k = bag.get_float("cw_k", c.loss.cw_k);
  c.loss.po_lambda = bag.get_float("po_lambda", c.loss.po_lambda);
  c.loss.trip_gamma = bag.get_float("trip_gamma", c.loss.trip_gamma);
  c.loss.xi = bag.get_float("xi", c.loss.xi);
  c.epsilon = bag.get_float("epsilon", 16.f) / 255.f;
  c.alpha = bag.get_float("alpha", 2.f) / 255.f;
  c.iterations = bag.get_int("iterations", 300);
  c.checkpoints = bag.get_int_list("checkpoints", {20, 100, 300});
  c.unbounded = bag.get_bool("unbounded", false);
  c.use_mi = bag.get_bool("mi", !c.unbounded);
  c.use_ti = bag.get_bool("ti", true);
  c.use_di = bag.get_bool("di", true);
  c.mi_mu = bag.get_float("mu", c.mi_mu);
  c.ti_kernel = bag.get_int("ti_kernel", c.ti_kernel);
  c.di_prob = bag.get_float("di_prob", c.di_prob);
  c.di_low = bag.get_int("di_low", c.di_low);
  c.di_high = bag.get_int("di_high", c.di_high);
  c.norm = parse_norm(bag.get_str("norm", "linf"));
  const char* init_default = (uap_preset || c.unbounded) ? "gaussian" : "zero";
  std::string init = bag.get_str("init", init_default);
  if (init == "zero") c.init = InitKind::zero;
  else if (init == "gaussian") c.init = InitKind::gaussian;
  else throw UsageError("config key 'init': '" + init + "' is not zero or gaussian");
  c.init_sigma = bag.get_float("init_sigma", c.init_sigma);
  c.seed = bag.get_u64("seed", 0);
  validate_attack_config(c);
  return c;
}

SuiteConfig suite_config_from(ConfigBag& bag, bool uap_preset) {
  SuiteConfig c;
  c.attack = attack_config_from(bag, uap_preset);
  std::vector<std::string> names = split_commas(bag.get_str("losses", "ce,logit"));
  if (names.empty()) throw UsageError("config key 'losses': needs at least one loss");
  c.losses.clear();
  for (const std::string& n : names) c.losses.push_back(parse_loss(n));
  int n_images = bag.get_int("n_images", static_cast<int>(c.n_images));
  if (n_images <= 0) throw UsageError("config key 'n_images': must be positive");
  c.n_images = static_cast<std::size_t>(n_images);
  c.include_whitebox = bag.get_bool("include_whitebox", c.include_whitebox);
  return c;
}

}  // namespace ttlab
