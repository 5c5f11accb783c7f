#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "advlab/train.hpp"

namespace advlab {

/// Flat `key = value` configuration. One assignment per line, '#' starts a
/// comment, keys may be dotted. Duplicate keys in a file are rejected;
/// set() (command-line overrides) replaces silently. Typed getters record
/// which keys were consumed so finish() can reject typos.
class KvConfig {
 public:
  static KvConfig parse_file(const std::string& path);
  static KvConfig parse_text(const std::string& text, const std::string& origin = "<text>");

  void set(const std::string& key, const std::string& value);
  /// Applies a "key=value" override string (the --set flag payload).
  void set_pair(const std::string& pair);

  bool has(const std::string& key) const;

  std::string get_str(const std::string& key, const std::string& def) const;
  int get_int(const std::string& key, int def) const;
  float get_float(const std::string& key, float def) const;
  double get_double(const std::string& key, double def) const;
  bool get_bool(const std::string& key, bool def) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t def) const;
  /// parse_fraction applied to the raw value ("8/255" stays exact).
  float get_fraction(const std::string& key, float def) const;
  /// Comma-separated fractions; empty value -> empty list.
  std::vector<float> get_fraction_list(const std::string& key) const;

  /// Throws listing every key never consumed by a getter.
  void finish() const;

  /// Round-trippable snapshot: original assignment order, overrides applied
  /// in place, appended keys at the end, raw value strings preserved.
  std::string snapshot() const;

  const std::vector<std::pair<std::string, std::string>>& items() const { return items_; }

 private:
  std::string raw(const std::string& key) const;  // marks consumed
  std::vector<std::pair<std::string, std::string>> items_;
  std::string origin_ = "<empty>";
  mutable std::set<std::string> consumed_;
};

/// Everything a command needs beyond TrainConfig: data selection, evaluation
/// grid, and report provenance. Assembled from the documented key schema.
struct RunSettings {
  TrainConfig train;

  std::string data_kind = "cifar10";  // cifar10 | synthetic-two-gaussians |
                                      // synthetic-striped | container
  std::string data_dir = "";          // cifar10 root (see resolve_data_dir)
  std::string data_train_file = "";   // container kind
  std::string data_val_file = "";
  std::string data_test_file = "";
  int data_limit = 0;  // keep the first N training images; 0 keeps all
  double val_fraction = 0.1;
  int synth_n = 512;
  int synth_classes = 2;
  int synth_test_n = 256;

  std::string checkpoint = "";  // eval/sweep/corrupt subject, or train warm start
  std::vector<float> eval_eps;  // empty -> default grid for the attack norm
  int eval_batch = 256;
  int eval_restarts = 1;
  std::uint64_t eval_seed = 0;

  std::string corrupt_kinds = "";  // comma list; empty -> all kinds
  int corrupt_severities = 5;
};

/// Reads the full key schema from cfg (so any command accepts any schema
/// key) and validates ranges. Does not call cfg.finish().
RunSettings assemble_settings(const KvConfig& cfg);

/// data.dir resolution: absolute wins; a relative path is joined to
/// $ADVLAB_DATA_ROOT when set; an empty path means $ADVLAB_DATA_ROOT/cifar10
/// and requires the variable.
std::string resolve_data_dir(const std::string& dir);

}  // namespace advlab
