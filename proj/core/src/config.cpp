#include "advlab/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace advlab {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

bool valid_key(const std::string& k) {
  if (k.empty()) return false;
  for (char c : k)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '.' && c != '_' && c != '-')
      return false;
  return true;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const std::string& want) {
  throw std::invalid_argument("config key '" + key + "': expected " + want + ", got '" + value +
                              "'");
}

}  // namespace

KvConfig KvConfig::parse_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read config file: " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return parse_text(text.str(), path);
}

KvConfig KvConfig::parse_text(const std::string& text, const std::string& origin) {
  KvConfig cfg;
  cfg.origin_ = origin;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument(origin + ":" + std::to_string(lineno) +
                                  ": expected 'key = value', got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!valid_key(key))
      throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": bad key '" + key +
                                  "'");
    for (const auto& [k, v] : cfg.items_)
      if (k == key)
        throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": duplicate key '" +
                                    key + "'");
    cfg.items_.emplace_back(key, value);
  }
  return cfg;
}

void KvConfig::set(const std::string& key, const std::string& value) {
  if (!valid_key(key)) throw std::invalid_argument("bad config key '" + key + "'");
  for (auto& [k, v] : items_)
    if (k == key) {
      v = value;
      return;
    }
  items_.emplace_back(key, value);
}

void KvConfig::set_pair(const std::string& pair) {
  const std::size_t eq = pair.find('=');
  if (eq == std::string::npos)
    throw std::invalid_argument("override must look like key=value, got '" + pair + "'");
  set(trim(pair.substr(0, eq)), trim(pair.substr(eq + 1)));
}

bool KvConfig::has(const std::string& key) const {
  for (const auto& [k, v] : items_)
    if (k == key) return true;
  return false;
}

std::string KvConfig::raw(const std::string& key) const {
  consumed_.insert(key);
  for (const auto& [k, v] : items_)
    if (k == key) return v;
  throw std::out_of_range("config key '" + key + "' not present");
}

std::string KvConfig::get_str(const std::string& key, const std::string& def) const {
  consumed_.insert(key);
  return has(key) ? raw(key) : def;
}

int KvConfig::get_int(const std::string& key, int def) const {
  consumed_.insert(key);
  if (!has(key)) return def;
  const std::string v = raw(key);
  int out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size()) bad_value(key, v, "an integer");
  return out;
}

std::uint64_t KvConfig::get_u64(const std::string& key, std::uint64_t def) const {
  consumed_.insert(key);
  if (!has(key)) return def;
  const std::string v = raw(key);
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size()) bad_value(key, v, "an unsigned integer");
  return out;
}

double KvConfig::get_double(const std::string& key, double def) const {
  consumed_.insert(key);
  if (!has(key)) return def;
  const std::string v = raw(key);
  char* end = nullptr;
  const double out = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size()) bad_value(key, v, "a number");
  return out;
}

float KvConfig::get_float(const std::string& key, float def) const {
  return static_cast<float>(get_double(key, static_cast<double>(def)));
}

bool KvConfig::get_bool(const std::string& key, bool def) const {
  consumed_.insert(key);
  if (!has(key)) return def;
  const std::string v = raw(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, v, "a boolean (true/false)");
}

float KvConfig::get_fraction(const std::string& key, float def) const {
  consumed_.insert(key);
  if (!has(key)) return def;
  const std::string v = raw(key);
  try {
    return parse_fraction(v);
  } catch (const std::exception&) {
    bad_value(key, v, "a decimal or fraction like 8/255");
  }
}

std::vector<float> KvConfig::get_fraction_list(const std::string& key) const {
  consumed_.insert(key);
  std::vector<float> out;
  if (!has(key)) return out;
  const std::string v = raw(key);
  std::istringstream in(v);
  std::string cell;
  while (std::getline(in, cell, ',')) {
    cell = trim(cell);
    if (cell.empty()) continue;
    try {
      out.push_back(parse_fraction(cell));
    } catch (const std::exception&) {
      bad_value(key, v, "a comma-separated list of decimals or fractions");
    }
  }
  return out;
}

void KvConfig::finish() const {
  std::vector<std::string> unknown;
  for (const auto& [k, v] : items_)
    if (consumed_.find(k) == consumed_.end()) unknown.push_back(k);
  if (unknown.empty()) return;
  std::string msg = "unknown config key";
  if (unknown.size() > 1) msg += 's';
  msg += ": ";
  for (std::size_t i = 0; i < unknown.size(); ++i) {
    if (i) msg += ", ";
    msg += '\'' + unknown[i] + '\'';
  }
  msg += " (from " + origin_ + ")";
  throw std::invalid_argument(msg);
}

std::string KvConfig::snapshot() const {
  std::ostringstream out;
  for (const auto& [k, v] : items_) out << k << " = " << v << '\n';
  return out.str();
}

RunSettings assemble_settings(const KvConfig& cfg) {
  RunSettings s;
  auto& t = s.train;

  t.arch.preset = cfg.get_str("arch", "tiny-cnn");
  t.arch.width = cfg.get_float("width", 1.0f);

  t.mode.tag = parse_mode_tag(cfg.get_str("mode", "T0"));
  t.mode.lambda1 = cfg.get_float("lambda1", 0.0f);
  const bool is_t3 = t.mode.tag == TrainMode::Tag::T3;

  auto& a = t.mode.attack;
  a.norm = parse_norm(cfg.get_str("attack.norm", "linf"));
  a.epsilon = cfg.get_fraction("attack.eps", 8.0f / 255.0f);
  a.steps = cfg.get_int("attack.steps", 10);
  a.restarts = cfg.get_int("attack.restarts", 1);
  const float alpha_default = a.norm == Norm::Linf
                                  ? 2.0f / 255.0f
                                  : a.epsilon * 2.0f / static_cast<float>(std::max(a.steps, 1));
  a.alpha = cfg.get_fraction("attack.alpha", alpha_default);
  a.random_start = cfg.get_bool("attack.random_start", true);
  a.use_ss_loss = cfg.get_bool("attack.use_ss_loss", is_t3);
  a.lambda2 = cfg.get_float("lambda2", is_t3 ? 1.0f : 0.0f);

  t.task_kind = cfg.get_str("task", "rotation");
  t.jigsaw_grid = cfg.get_int("jigsaw_grid", 2);
  t.jigsaw_perms = cfg.get_int("jigsaw_perms", 24);
  t.arch.ss_classes = t.task_kind == "jigsaw" ? t.jigsaw_perms : 4;

  t.epochs = cfg.get_int("epochs", 20);
  t.batch_size = cfg.get_int("batch_size", 128);
  t.lr = cfg.get_float("lr", 0.1f);
  t.lr_drop_every = cfg.get_int("lr_drop_every", 40);
  t.lr_drop_factor = cfg.get_float("lr_drop_factor", 10.0f);
  t.momentum = cfg.get_float("momentum", 0.9f);
  t.weight_decay = cfg.get_float("weight_decay", 5e-4f);
  t.seed = cfg.get_u64("seed", 0);
  t.augment = cfg.get_bool("augment", true);
  t.checkpoint_every = cfg.get_int("checkpoint_every", 0);
  t.model_id = cfg.get_str("model_id", "");

  s.data_kind = cfg.get_str("data.kind", "cifar10");
  s.data_dir = cfg.get_str("data.dir", "");
  s.data_train_file = cfg.get_str("data.train_file", "");
  s.data_val_file = cfg.get_str("data.val_file", "");
  s.data_test_file = cfg.get_str("data.test_file", "");
  s.data_limit = cfg.get_int("data.limit", 0);
  s.val_fraction = cfg.get_double("data.val_fraction", 0.1);
  s.synth_n = cfg.get_int("data.n", 512);
  s.synth_classes = cfg.get_int("data.classes", 2);
  s.synth_test_n = cfg.get_int("data.test_n", 256);

  s.checkpoint = cfg.get_str("checkpoint", "");
  s.eval_eps = cfg.get_fraction_list("eval.eps_grid");
  s.eval_batch = cfg.get_int("eval.batch_size", 256);
  s.eval_restarts = cfg.get_int("eval.restarts", 1);
  s.eval_seed = cfg.get_u64("eval.seed", t.seed);

  s.corrupt_kinds = cfg.get_str("corrupt.kinds", "");
  s.corrupt_severities = cfg.get_int("corrupt.severities", 5);

  if (s.data_limit < 0)
    throw std::invalid_argument("config key 'data.limit': must be >= 0");
  if (s.val_fraction <= 0.0 || s.val_fraction >= 1.0)
    throw std::invalid_argument("config key 'data.val_fraction': must lie in (0, 1)");
  if (s.synth_n <= 0 || s.synth_test_n <= 0)
    throw std::invalid_argument("config key 'data.n'/'data.test_n': must be > 0");
  if (s.eval_batch <= 0)
    throw std::invalid_argument("config key 'eval.batch_size': must be > 0");
  if (s.eval_restarts < 1)
    throw std::invalid_argument("config key 'eval.restarts': must be >= 1");
  if (s.corrupt_severities < 1 || s.corrupt_severities > 5)
    throw std::invalid_argument("config key 'corrupt.severities': must lie in [1, 5]");
  if (t.epochs < 0) throw std::invalid_argument("config key 'epochs': must be >= 0");
  if (t.batch_size <= 0) throw std::invalid_argument("config key 'batch_size': must be > 0");

  return s;
}

std::string resolve_data_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  const char* root = std::getenv("ADVLAB_DATA_ROOT");
  const bool have_root = root != nullptr && *root != '\0';
  if (dir.empty()) {
    if (!have_root)
      throw std::runtime_error(
          "no data directory: set data.dir in the config or export ADVLAB_DATA_ROOT");
    return (fs::path(root) / "cifar10").string();
  }
  fs::path p(dir);
  if (p.is_absolute() || !have_root) return dir;
  return (fs::path(root) / p).string();
}

}  // namespace advlab
