#include "advlab/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "CLI11.hpp"
#include "advlab/config.hpp"
#include "advlab/eval.hpp"
#include "advlab/train.hpp"
#include "json.hpp"

namespace advlab {

namespace fs = std::filesystem;

namespace {

KvConfig load_config(const CliOptions& opt) {
  KvConfig cfg;
  if (!opt.config_path.empty()) cfg = KvConfig::parse_file(opt.config_path);
  for (const auto& ov : opt.overrides) cfg.set_pair(ov);
  if (opt.has_seed) cfg.set("seed", std::to_string(opt.seed));
  if (!opt.checkpoint.empty()) cfg.set("checkpoint", opt.checkpoint);
  return cfg;
}

void write_snapshot(const std::string& out_dir, const std::string& command,
                    const KvConfig& cfg) {
  fs::create_directories(out_dir);
  const std::string path = out_dir + "/resolved.cfg";
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "# advlab " << command << "\n" << cfg.snapshot();
  if (!os) throw std::runtime_error("write failed: " + path);
}

std::string require_out(const CliOptions& opt, const char* command) {
  if (opt.out_dir.empty())
    throw std::invalid_argument(std::string(command) + " requires --out DIR");
  return opt.out_dir;
}

std::string synth_kind(const std::string& data_kind) {
  if (data_kind == "synthetic-two-gaussians") return "two-gaussians-images";
  if (data_kind == "synthetic-striped") return "striped-classes";
  return "";
}

ImageDataset limited(ImageDataset ds, int limit) {
  if (limit <= 0 || limit >= ds.size()) return ds;
  std::vector<int> idx(static_cast<std::size_t>(limit));
  std::iota(idx.begin(), idx.end(), 0);
  return ds.subset(idx);
}

struct DataBundle {
  ImageDataset train, val;
};

DataBundle load_train_val(const RunSettings& s) {
  if (s.data_kind == "cifar10") {
    const std::string dir = resolve_data_dir(s.data_dir);
    if (!fs::exists(dir)) throw std::runtime_error("data directory not found: " + dir);
    ImageDataset full = limited(load_cifar10_bin(dir, "train"), s.data_limit);
    auto [tr, va] = split_train_val(full, s.val_fraction, s.train.seed);
    return {std::move(tr), std::move(va)};
  }
  if (s.data_kind == "container") {
    if (s.data_train_file.empty())
      throw std::invalid_argument("data.kind 'container' requires data.train_file");
    ImageDataset tr = limited(ImageDataset::load(s.data_train_file), s.data_limit);
    if (!s.data_val_file.empty()) return {std::move(tr), ImageDataset::load(s.data_val_file)};
    auto [a, b] = split_train_val(tr, s.val_fraction, s.train.seed);
    return {std::move(a), std::move(b)};
  }
  const std::string kind = synth_kind(s.data_kind);
  if (kind.empty())
    throw std::invalid_argument(
        "unknown data.kind '" + s.data_kind +
        "' (expected cifar10, container, synthetic-two-gaussians or synthetic-striped)");
  SyntheticOpts so;
  so.class_count = s.synth_classes;
  ImageDataset full = synthetic_dataset(kind, s.synth_n, s.train.seed, so);
  auto [a, b] = split_train_val(full, s.val_fraction, s.train.seed);
  return {std::move(a), std::move(b)};
}

ImageDataset load_test_set(const RunSettings& s) {
  if (s.data_kind == "cifar10") {
    const std::string dir = resolve_data_dir(s.data_dir);
    if (!fs::exists(dir)) throw std::runtime_error("data directory not found: " + dir);
    return load_cifar10_bin(dir, "test");
  }
  if (s.data_kind == "container") {
    const std::string file = !s.data_test_file.empty() ? s.data_test_file : s.data_train_file;
    if (file.empty())
      throw std::invalid_argument("data.kind 'container' requires data.test_file for evaluation");
    return ImageDataset::load(file);
  }
  const std::string kind = synth_kind(s.data_kind);
  if (kind.empty())
    throw std::invalid_argument("unknown data.kind '" + s.data_kind + "'");
  SyntheticOpts so;
  so.class_count = s.synth_classes;
  return synthetic_dataset(kind, s.synth_test_n, s.train.seed + 1, so);
}

void fit_arch_to_data(TrainConfig& t, const ImageDataset& ds) {
  t.arch.in_c = ds.c;
  t.arch.in_h = ds.h;
  t.arch.in_w = ds.w;
  t.arch.sup_classes = ds.class_count;
}

std::string path_stem(const std::string& path) {
  return fs::path(path).stem().string();
}

/// Provenance for report rows: the checkpoint's own record wins, the
/// config's values fill gaps (older or hand-built checkpoints).
ReportRow provenance_row(const RunSettings& s, const std::string& ckpt_path) {
  ReportRow r;
  r.model_id = path_stem(ckpt_path);
  r.mode = mode_tag_name(s.train.mode.tag);
  r.norm = norm_name(s.train.mode.attack.norm);
  r.eps_train = s.train.mode.attack.epsilon;
  r.lambda1 = s.train.mode.lambda1;
  r.lambda2 = s.train.mode.attack.lambda2;
  const std::string prov = read_checkpoint_provenance(ckpt_path);
  if (!prov.empty()) {
    const auto j = nlohmann::json::parse(prov);
    r.model_id = j.value("model_id", r.model_id);
    r.mode = j.value("mode", r.mode);
    r.norm = j.value("norm", r.norm);
    r.eps_train = j.value("eps_train", r.eps_train);
    r.lambda1 = j.value("lambda1", r.lambda1);
    r.lambda2 = j.value("lambda2", r.lambda2);
  }
  return r;
}

AttackConfig eval_attack(const RunSettings& s) {
  AttackConfig a = s.train.mode.attack;
  a.use_ss_loss = false;  // test-time attacks score the supervised head only
  a.lambda2 = 0.0f;
  a.restarts = s.eval_restarts;
  return a;
}

EvalReport robust_report(TwoHeadModel& model, const ImageDataset& test, const RunSettings& s,
                         const std::string& ckpt_path) {
  AttackConfig base = eval_attack(s);
  const std::vector<float> grid =
      s.eval_eps.empty() ? default_eps_grid(base.norm) : s.eval_eps;
  model.set_training(false);
  const auto points = eval_robust(model, test, grid, base, s.eval_batch, s.eval_seed);
  EvalReport rep;
  ReportRow proto = provenance_row(s, ckpt_path);
  proto.n_samples = test.size();
  proto.seed = s.eval_seed;
  for (const auto& p : points) {
    ReportRow row = proto;
    row.metric = p.eps_test == 0.0f ? "TA" : "RA";
    row.eps_test = p.eps_test;
    row.accuracy = p.accuracy;
    rep.add(row);
  }
  return rep;
}

std::vector<std::string> split_csv_list(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string cell;
  while (std::getline(in, cell, ',')) {
    const auto a = cell.find_first_not_of(" \t");
    if (a == std::string::npos) continue;
    const auto b = cell.find_last_not_of(" \t");
    out.push_back(cell.substr(a, b - a + 1));
  }
  return out;
}

std::uint64_t mix_seed(std::uint64_t seed, const std::string& kind, int severity) {
  std::uint64_t h = 1469598103934665603ull ^ seed;
  for (char ch : kind) {
    h ^= static_cast<unsigned char>(ch);
    h *= 1099511628211ull;
  }
  h ^= static_cast<std::uint64_t>(severity);
  h *= 1099511628211ull;
  return h;
}

int guarded(const char* name, const std::function<void()>& body) {
  try {
    body();
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "advlab " << name << ": error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace

int cmd_train(const CliOptions& opt) {
  return guarded("train", [&] {
    const std::string out = require_out(opt, "train");
    KvConfig cfg = load_config(opt);
    RunSettings s = assemble_settings(cfg);
    cfg.finish();
    validate_mode(s.train.mode);
    s.train.init_checkpoint = s.checkpoint;
    DataBundle data = load_train_val(s);
    fit_arch_to_data(s.train, data.train);
    SSTask task = make_ss_task(s.train.task_kind, s.train.jigsaw_grid, s.train.jigsaw_perms,
                               s.train.seed);
    write_snapshot(out, "train", cfg);
    TrainResult res = adv_train(s.train, task, data.train, data.val, out, opt.resume);
    std::printf("trained %d epochs; best epoch %d, val TA %.2f%%\n",
                static_cast<int>(res.history.records.size()), res.best_epoch, res.best_val_ta);
    std::printf("outputs: %s/best.ckpt %s/last.ckpt %s/history.csv\n", out.c_str(), out.c_str(),
                out.c_str());
  });
}

int cmd_pretrain(const CliOptions& opt) {
  return guarded("pretrain", [&] {
    const std::string out = require_out(opt, "pretrain");
    KvConfig cfg = load_config(opt);
    RunSettings s = assemble_settings(cfg);
    cfg.finish();
    DataBundle data = load_train_val(s);
    fit_arch_to_data(s.train, data.train);
    SSTask task = make_ss_task(s.train.task_kind, s.train.jigsaw_grid, s.train.jigsaw_perms,
                               s.train.seed);
    write_snapshot(out, "pretrain", cfg);
    TrainResult res = ss_pretrain(s.train, task, data.train, data.val, out);
    std::printf("pretrained %d epochs; best epoch %d, SS val accuracy %.2f%%\n",
                static_cast<int>(res.history.records.size()), res.best_epoch, res.best_val_ta);
    std::printf("outputs: %s/best.ckpt %s/last.ckpt %s/history.csv\n", out.c_str(), out.c_str(),
                out.c_str());
  });
}

int cmd_eval(const CliOptions& opt) {
  return guarded("eval", [&] {
    const std::string out = require_out(opt, "eval");
    KvConfig cfg = load_config(opt);
    RunSettings s = assemble_settings(cfg);
    cfg.finish();
    if (s.checkpoint.empty())
      throw std::invalid_argument("eval needs a model: pass --checkpoint FILE");
    TwoHeadModel model = load_checkpoint(s.checkpoint);
    ImageDataset test = load_test_set(s);
    if (model.sup_classes() != test.class_count)
      throw std::runtime_error("checkpoint predicts " + std::to_string(model.sup_classes()) +
                               " classes but the test set has " +
                               std::to_string(test.class_count));
    write_snapshot(out, "eval", cfg);
    EvalReport rep = robust_report(model, test, s, s.checkpoint);
    emit_report(rep, out + "/report.csv");
    std::printf("wrote %zu rows to %s/report.csv\n", rep.rows.size(), out.c_str());
  });
}

int cmd_sweep(const CliOptions& opt) {
  return guarded("sweep", [&] {
    const std::string out = require_out(opt, "sweep");
    KvConfig cfg = load_config(opt);
    RunSettings s = assemble_settings(cfg);
    cfg.finish();
    std::vector<std::string> subjects = opt.checkpoints;
    if (subjects.empty() && !s.checkpoint.empty()) subjects.push_back(s.checkpoint);
    if (subjects.empty())
      throw std::invalid_argument("sweep needs at least one --checkpoint (baseline first)");

    write_snapshot(out, "sweep", cfg);
    EvalReport all;
    std::unordered_map<std::string, float> baseline;  // condition -> accuracy
    std::vector<float> diffs;
    for (std::size_t si = 0; si < subjects.size(); ++si) {
      TwoHeadModel model = load_checkpoint(subjects[si]);
      ImageDataset test = load_test_set(s);
      if (model.sup_classes() != test.class_count)
        throw std::runtime_error("checkpoint '" + subjects[si] + "' predicts " +
                                 std::to_string(model.sup_classes()) +
                                 " classes but the test set has " +
                                 std::to_string(test.class_count));
      EvalReport rep = robust_report(model, test, s, subjects[si]);
      for (const auto& r : rep.rows) {
        std::ostringstream cond;
        cond << r.metric << '|' << r.eps_test << '|' << r.corruption << '|' << r.severity;
        if (si == 0) baseline.emplace(cond.str(), r.accuracy);
        const auto it = baseline.find(cond.str());
        if (it == baseline.end())
          throw std::runtime_error("sweep: no baseline row for condition " + cond.str());
        diffs.push_back(r.accuracy - it->second);
        all.rows.push_back(r);
      }
    }
    const std::string path = out + "/sweep.csv";
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << kReportHeader << ",accuracy_diff\n";
    char buf[40];
    for (std::size_t i = 0; i < all.rows.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.2f", static_cast<double>(diffs[i]));
      os << format_report_row(all.rows[i]) << ',' << buf << '\n';
    }
    if (!os) throw std::runtime_error("write failed: " + path);
    std::printf("wrote %zu rows to %s (baseline: %s)\n", all.rows.size(), path.c_str(),
                path_stem(subjects[0]).c_str());
  });
}

int cmd_corrupt(const CliOptions& opt) {
  return guarded("corrupt", [&] {
    const std::string out = require_out(opt, "corrupt");
    KvConfig cfg = load_config(opt);
    RunSettings s = assemble_settings(cfg);
    cfg.finish();
    ImageDataset test = load_test_set(s);
    std::vector<std::string> kinds = s.corrupt_kinds.empty()
                                         ? corruption_kinds()
                                         : split_csv_list(s.corrupt_kinds);
    write_snapshot(out, "corrupt", cfg);

    std::vector<CorruptionSet> sets;
    for (const auto& kind : kinds)
      for (int sev = 1; sev <= s.corrupt_severities; ++sev) {
        CorruptionSet set = generate_corruptions(test, kind, sev,
                                                 mix_seed(s.train.seed, kind, sev));
        const std::string path = out + "/" + kind + "-s" + std::to_string(sev) + ".ds";
        set.data.save(path);
        sets.push_back(std::move(set));
      }
    std::printf("wrote %zu corruption sets to %s\n", sets.size(), out.c_str());

    if (!opt.with_eval) return;
    if (s.checkpoint.empty())
      throw std::invalid_argument("corrupt --eval needs a model: pass --checkpoint FILE");
    TwoHeadModel model = load_checkpoint(s.checkpoint);
    model.set_training(false);
    CorruptionEval ce = eval_corruptions(model, sets, /*attacked=*/false, eval_attack(s),
                                         s.eval_batch, s.eval_seed);
    EvalReport rep;
    ReportRow proto = provenance_row(s, s.checkpoint);
    proto.metric = "corruption";
    proto.seed = s.eval_seed;
    for (const auto& cell : ce.cells) {
      ReportRow row = proto;
      row.corruption = cell.kind;
      row.severity = cell.severity;
      row.accuracy = cell.accuracy;
      row.n_samples = cell.n_samples;
      rep.add(row);
    }
    emit_report(rep, out + "/report.csv");
    std::printf("corruption mean accuracy %.2f%%; wrote %zu rows to %s/report.csv\n",
                static_cast<double>(ce.mean_accuracy), rep.rows.size(), out.c_str());
  });
}

int cmd_report_merge(const CliOptions& opt) {
  return guarded("report-merge", [&] {
    if (opt.inputs.empty())
      throw std::invalid_argument("report-merge needs at least one input CSV");
    std::string out_file = opt.output_file;
    if (out_file.empty()) {
      if (opt.out_dir.empty())
        throw std::invalid_argument("report-merge needs -o FILE or --out DIR");
      fs::create_directories(opt.out_dir);
      out_file = opt.out_dir + "/report.csv";
    }
    EvalReport merged;
    for (const auto& path : opt.inputs) merged.merge(parse_report(path));
    emit_report(merged, out_file);
    std::printf("merged %zu files into %s (%zu rows)\n", opt.inputs.size(), out_file.c_str(),
                merged.rows.size());
  });
}

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"adversarial training laboratory with self-supervised auxiliary tasks"};
  app.require_subcommand(1);

  CliOptions opt;
  int exit_code = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config_path, "key = value configuration file");
    sub->add_option("--set", opt.overrides, "override a config key (key=value, repeatable)");
    sub->add_option("--out", opt.out_dir, "output directory");
    return sub->add_option("--seed", opt.seed, "override the config seed");
  };
  auto dispatch = [&](CLI::App* sub, CLI::Option* seed_opt, int (*fn)(const CliOptions&)) {
    sub->callback([&opt, &exit_code, seed_opt, fn] {
      opt.has_seed = seed_opt->count() > 0;
      exit_code = fn(opt);
    });
  };

  auto* train = app.add_subcommand("train", "adversarial training (modes T0-T3, T_rotonly)");
  train->add_flag("--resume", opt.resume, "continue from --out's last checkpoint");
  train->add_option("--checkpoint", opt.checkpoint,
                    "warm-start weights from this checkpoint (full fine-tune)");
  dispatch(train, add_common(train), &cmd_train);

  auto* pretrain = app.add_subcommand("pretrain", "adversarial self-supervised pre-training");
  dispatch(pretrain, add_common(pretrain), &cmd_pretrain);

  auto* eval = app.add_subcommand("eval", "TA / RA sweep over an epsilon grid");
  eval->add_option("--checkpoint", opt.checkpoint, "model checkpoint to evaluate");
  dispatch(eval, add_common(eval), &cmd_eval);

  auto* sweep = app.add_subcommand("sweep", "evaluate several checkpoints; baseline diffs");
  sweep->add_option("--checkpoint", opt.checkpoints,
                    "checkpoint to include (repeatable; first is the baseline)");
  dispatch(sweep, add_common(sweep), &cmd_sweep);

  auto* corrupt = app.add_subcommand("corrupt", "generate corruption sets; optional evaluation");
  corrupt->add_flag("--eval", opt.with_eval, "also evaluate --checkpoint on the sets");
  corrupt->add_option("--checkpoint", opt.checkpoint, "model for --eval");
  dispatch(corrupt, add_common(corrupt), &cmd_corrupt);

  auto* merge = app.add_subcommand("report-merge", "merge report CSVs, first row per key wins");
  merge->add_option("inputs", opt.inputs, "input CSV files")->expected(-1);
  merge->add_option("-o,--output", opt.output_file, "merged CSV path");
  merge->add_option("--out", opt.out_dir, "output directory (writes report.csv)");
  merge->callback([&] { exit_code = cmd_report_merge(opt); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  return exit_code;
}

}  // namespace advlab
