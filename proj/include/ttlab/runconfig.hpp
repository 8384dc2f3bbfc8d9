#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "ttlab/attack.hpp"
#include "ttlab/evaluation.hpp"
#include "ttlab/model.hpp"
#include "ttlab/synth.hpp"

namespace ttlab {

// Flat "key = value" run configuration. One pair per line, '#' starts a
// comment, blank lines are skipped. Later assignments win, so command line
// overrides are applied on top of the file. Every key must be consumed by
// the resolver that builds the typed configs; leftovers raise an error,
// which catches typos before a long run starts.
//
// epsilon, alpha and step sweep alphas are external-facing and written in
// 1/255 pixel steps (epsilon = 16 means 16/255).

class ConfigBag {
 public:
  void load_file(const std::string& path);
  // "key=value" as typed on the command line.
  void set_pair(const std::string& pair);
  void set(const std::string& key, const std::string& value);

  bool provided(const std::string& key) const;

  std::string get_str(const std::string& key, const std::string& fallback);
  int get_int(const std::string& key, int fallback);
  float get_float(const std::string& key, float fallback);
  bool get_bool(const std::string& key, bool fallback);
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback);
  std::vector<int> get_int_list(const std::string& key, const std::vector<int>& fallback);
  std::vector<float> get_float_list(const std::string& key, const std::vector<float>& fallback);

  // Overwrites the remembered effective value for `key`; used when a later
  // resolution rule changes a default that was already read.
  void note(const std::string& key, const std::string& value);

  // Throws UsageError naming every provided key nothing consumed.
  void finish(const std::string& context) const;

  // Effective configuration: every key a getter touched, with the value it
  // resolved to. Defaults are included, so writing this map reproduces the
  // run byte for byte.
  const std::map<std::string, std::string>& resolved() const { return resolved_; }

 private:
  const std::string* lookup(const std::string& key) const;
  std::map<std::string, std::string> values_;
  std::set<std::string> consumed_;
  std::map<std::string, std::string> resolved_;
};

// Sorted "key = value" lines.
void write_config_file(const std::string& path,
                       const std::map<std::string, std::string>& values);

std::string format_float_key(float v);  // shortest round-tripping decimal

SynthConfig synth_config_from(ConfigBag& bag);
TrainConfig train_config_from(ConfigBag& bag);

// uap_preset switches the defaults to the data-free generation recipe
// (gaussian start). An unbounded attack defaults to a gaussian start with
// momentum off unless the keys are given explicitly.
AttackConfig attack_config_from(ConfigBag& bag, bool uap_preset = false);
SuiteConfig suite_config_from(ConfigBag& bag, bool uap_preset = false);

}  // namespace ttlab
