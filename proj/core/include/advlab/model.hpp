#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "advlab/graph.hpp"
#include "advlab/optim.hpp"
#include "advlab/ss_task.hpp"
#include "advlab/tensor.hpp"

namespace advlab {

struct ArchConfig {
  std::string preset = "tiny-cnn";  // tiny-cnn | resnet-18 | resnet-34
  float width = 1.0f;
  int in_c = 3, in_h = 32, in_w = 32;
  int sup_classes = 10;
  int ss_classes = 4;
};

/// One trunk instruction; the forward pass interprets the plan in order.
/// Save/AddSaved implement residual connections (AddSaved optionally routes
/// the saved tensor through a 1x1 projection conv + norm first).
struct PlanStep {
  enum class Op { Conv, Norm, Relu, Pool, GlobalPool, Save, AddSaved };
  Op op = Op::Relu;
  int conv = -1;  // conv weight index
  int stride = 1, pad = 1;
  int norm = -1;    // norm layer index
  int window = 2;   // pool
  int slot = -1;    // Save/AddSaved
  int proj_conv = -1, proj_norm = -1, proj_stride = 1;
};

struct NormLayer {
  Tensor gamma;
  Tensor beta;
  NormStats stats;
};

class TwoHeadModel {
 public:
  const ArchConfig& config() const { return cfg_; }
  void set_training(bool on) { training_ = on; }
  bool training() const { return training_; }

  /// Gate for running-statistic updates during training forwards. Trainers
  /// disable this for auxiliary SS-batch forwards so eval-time statistics
  /// track only each step's primary batch.
  void set_stats_update(bool on) { stats_update_ = on; }
  bool stats_update() const { return stats_update_; }

  Tensor trunk_features(Graph& g, const Tensor& x);  // [B, feature_dim]
  Tensor predict_sup(Graph& g, const Tensor& x);
  Tensor predict_ss(Graph& g, const Tensor& x);

  struct BothHeads {
    Tensor features, sup, ss;
  };
  /// Single trunk pass shared by both heads.
  BothHeads predict_both(Graph& g, const Tensor& x);

  /// Trainable tensors in stable order with weight-decay flags
  /// (conv/linear weights decay; biases and norm affine terms do not).
  std::vector<NamedParam> parameters();

  int feature_dim() const { return feature_dim_; }
  int sup_classes() const { return cfg_.sup_classes; }
  int ss_classes() const { return cfg_.ss_classes; }
  std::int64_t param_count() const;
  /// FNV-1a over the raw bytes of trainable parameters, in parameter order.
  std::uint64_t param_checksum() const;

  /// Deep copy: fresh tensor storage for every parameter and stat buffer.
  /// (Plain copies share storage; use this to snapshot weights.)
  TwoHeadModel clone() const;

  const std::vector<PlanStep>& plan() const { return plan_; }
  int conv_count() const { return static_cast<int>(convs_.size()); }
  int norm_count() const { return static_cast<int>(norms_.size()); }
  const Tensor& conv_weight(int i) const { return convs_.at(static_cast<std::size_t>(i)); }
  NormLayer& norm_layer(int i) { return norms_.at(static_cast<std::size_t>(i)); }
  const NormLayer& norm_layer(int i) const { return norms_.at(static_cast<std::size_t>(i)); }
  const Tensor& sup_w() const { return sup_w_; }
  const Tensor& sup_b() const { return sup_b_; }
  const Tensor& ss_w() const { return ss_w_; }
  const Tensor& ss_b() const { return ss_b_; }

 private:
  friend struct ModelBuilder;
  friend TwoHeadModel build_model(const ArchConfig&, std::uint64_t);
  friend TwoHeadModel load_checkpoint(const std::string&, SSTask*);
  friend TwoHeadModel load_for_finetune(const std::string&, const ArchConfig&, std::uint64_t);

  void check_input(const Tensor& x) const;

  ArchConfig cfg_;
  bool training_ = false;
  bool stats_update_ = true;
  int feature_dim_ = 0;
  int save_slots_ = 0;
  std::vector<PlanStep> plan_;
  std::vector<Tensor> convs_;
  std::vector<NormLayer> norms_;
  Tensor sup_w_, sup_b_, ss_w_, ss_b_;
};

/// Deterministic He fan-in initialization for the given seed.
TwoHeadModel build_model(const ArchConfig& cfg, std::uint64_t seed);

/// Self-describing checkpoint: parameters, norm statistics, architecture
/// descriptor, and (optionally) the SS task's permutation set. provenance is
/// an opaque JSON string recorded verbatim (training mode, lambdas, seed)
/// for report rows.
void save_checkpoint(const TwoHeadModel& model, const std::string& path,
                     const SSTask* task = nullptr, const std::string& provenance = "");
TwoHeadModel load_checkpoint(const std::string& path, SSTask* task_out = nullptr);
/// Provenance JSON recorded at save time, or "" when absent.
std::string read_checkpoint_provenance(const std::string& path);

/// Builds a fresh model for cfg, then restores every checkpoint tensor whose
/// name and shape match. Mismatched heads stay freshly initialized (so a
/// pretraining checkpoint can seed a differently-headed fine-tune); a
/// mismatched trunk is an architecture error.
TwoHeadModel load_for_finetune(const std::string& path, const ArchConfig& cfg,
                               std::uint64_t seed);

}  // namespace advlab
