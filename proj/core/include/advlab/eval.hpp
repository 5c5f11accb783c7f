#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "advlab/attack.hpp"
#include "advlab/data.hpp"
#include "advlab/model.hpp"
#include "advlab/ss_task.hpp"

namespace advlab {

/// Top-1 accuracy percent of the supervised head over the full set.
/// Argmax ties resolve to the lowest class index. Model must be in eval mode.
float eval_standard(TwoHeadModel& model, const ImageDataset& ds, int batch_size);

/// SS-head accuracy on deterministically transformed inputs (fresh rng from
/// seed, so every call sees the same transforms).
float eval_ss_accuracy(TwoHeadModel& model, const SSTask& task, const ImageDataset& ds,
                       int batch_size, std::uint64_t seed);

struct RobustPoint {
  float eps_test = 0.0f;
  float accuracy = 0.0f;
};

/// RA sweep. Test attacks use the supervised loss only (use_ss_loss must be
/// off in base); per epsilon the step size follows the norm rule
/// (l2: eps*2/steps, linf: 2/255) and eps = 0 short-circuits to TA.
std::vector<RobustPoint> eval_robust(TwoHeadModel& model, const ImageDataset& ds,
                                     const std::vector<float>& eps_list,
                                     const AttackConfig& base, int batch_size,
                                     std::uint64_t seed);

/// The papers' default test grids per norm.
std::vector<float> default_eps_grid(Norm norm);

struct CorruptionCell {
  std::string kind;
  int severity = 0;
  float accuracy = 0.0f;
  int n_samples = 0;
};

struct CorruptionEval {
  std::vector<CorruptionCell> cells;
  float mean_accuracy = 0.0f;
};

/// Accuracy per corruption set, clean or under a supervised-loss PGD attack
/// on top of the corrupted images, plus the mean over all cells.
CorruptionEval eval_corruptions(TwoHeadModel& model, const std::vector<CorruptionSet>& sets,
                                bool attacked, const AttackConfig& attack_cfg, int batch_size,
                                std::uint64_t seed);

struct ReportRow {
  std::string model_id;
  std::string norm;  // training norm of the evaluated model
  float eps_train = 0.0f;
  std::string mode;
  float lambda1 = 0.0f;
  float lambda2 = 0.0f;
  std::string metric;  // TA | RA | corruption | corruption_RA
  float eps_test = 0.0f;
  std::string corruption;
  int severity = 0;
  float accuracy = 0.0f;  // percent, stored already rounded to 2 decimals
  int n_samples = 0;
  std::uint64_t seed = 0;

  /// Identity tuple (everything except accuracy) used for merge dedup.
  std::string key() const;
};

struct EvalReport {
  std::vector<ReportRow> rows;

  void add(ReportRow row);  // rounds accuracy to 2 decimals
  /// Keeps the first row seen per key.
  void merge(const EvalReport& other);
};

/// Fixed-header UTF-8 CSV; accuracy printed with 2 decimals.
void emit_report(const EvalReport& report, const std::string& path);
EvalReport parse_report(const std::string& path);
/// One CSV line (no trailing newline) in kReportHeader column order.
std::string format_report_row(const ReportRow& row);

extern const char* kReportHeader;

}  // namespace advlab
