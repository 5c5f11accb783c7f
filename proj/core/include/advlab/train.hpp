#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "advlab/attack.hpp"
#include "advlab/data.hpp"
#include "advlab/model.hpp"
#include "advlab/optim.hpp"
#include "advlab/ss_task.hpp"

namespace advlab {

struct TrainMode {
  enum class Tag { T0, T1, T2, T3, TRotOnly };
  Tag tag = Tag::T0;
  float lambda1 = 0.0f;
  AttackConfig attack;
};

TrainMode::Tag parse_mode_tag(const std::string& s);
std::string mode_tag_name(TrainMode::Tag tag);

/// Rejects contradictory mode/attack combinations at startup:
/// T0 forms no SS batch (lambda1 must be 0, no SS attack loss); T1 leaves the
/// SS batch clean; T2 attacks with the supervised loss only; T3 requires the
/// lambda2 SS attack term.
void validate_mode(const TrainMode& mode);

/// sup + lambda1 * ss (T0: sup alone). Exact arithmetic contract shared by
/// the tensor overload.
float compose_loss(TrainMode::Tag tag, float lambda1, float sup, const float* ss);
Tensor compose_loss(Graph& g, TrainMode::Tag tag, float lambda1, const Tensor& sup,
                    const Tensor* ss);

struct TrainConfig {
  ArchConfig arch;
  TrainMode mode;
  std::string task_kind = "rotation";
  int jigsaw_grid = 2;
  int jigsaw_perms = 24;
  int epochs = 20;
  int batch_size = 128;
  float lr = 0.1f;
  int lr_drop_every = 40;
  float lr_drop_factor = 10.0f;
  float momentum = 0.9f;
  float weight_decay = 5e-4f;
  std::uint64_t seed = 0;
  bool augment = true;
  int checkpoint_every = 0;     // extra epoch-NNN.ckpt files; 0 disables
  std::string model_id = "";    // provenance tag carried into checkpoints and reports
  // Warm start (P1/P2 -> adversarial training): restore matching tensors from
  // this checkpoint via load_for_finetune instead of fresh initialization.
  std::string init_checkpoint = "";
};

/// Provenance JSON stored in checkpoints written by adv_train / ss_pretrain.
std::string train_provenance(const TrainConfig& cfg);

float lr_at_epoch(const TrainConfig& cfg, int epoch);

/// Independently seeded streams so enabling one consumer (augmentation, SS
/// transform, attack) never shifts the draws of another.
struct RngBundle {
  std::mt19937 shuffle, augment, ss, attack;
  static RngBundle make(std::uint64_t seed);
};

struct EpochStats {
  float sup_loss = 0.0f;
  float ss_loss = 0.0f;
  bool has_ss = false;
};

EpochStats train_epoch(TwoHeadModel& model, SgdMomentum& opt, const ImageDataset& ds,
                       const TrainMode& mode, const SSTask& task, bool augment_on,
                       int batch_size, RngBundle& rngs);

struct EpochRecord {
  int epoch = 0;
  float lr = 0.0f;
  float sup_loss = 0.0f;
  bool has_ss = false;
  float ss_loss = 0.0f;
  float val_ta = 0.0f;
  double seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> records;
  void save_csv(const std::string& path) const;
  static TrainHistory load_csv(const std::string& path);
};

struct TrainResult {
  TwoHeadModel model;  // weights of the best-validation-TA epoch
  TrainHistory history;
  int best_epoch = -1;
  float best_val_ta = 0.0f;
};

/// Full adversarial training: per-epoch LR schedule, clean-validation model
/// selection (ties keep the earliest epoch), best/last checkpoints and
/// resume state under out_dir (when non-empty).
TrainResult adv_train(const TrainConfig& cfg, const SSTask& task, const ImageDataset& train,
                      const ImageDataset& val, const std::string& out_dir = "",
                      bool resume = false);

/// Adversarial self-supervised pre-training: the attacked batch is
/// (X_SS, y_SS) on the SS head and the objective is L_SS alone. Selection by
/// clean SS validation accuracy. Initializes adv_train via
/// load_for_finetune.
TrainResult ss_pretrain(const TrainConfig& cfg, const SSTask& task, const ImageDataset& train,
                        const ImageDataset& val, const std::string& out_dir = "");

}  // namespace advlab
