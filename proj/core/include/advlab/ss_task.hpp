#pragma once

#include <random>
#include <string>
#include <vector>

#include "advlab/graph.hpp"
#include "advlab/tensor.hpp"

namespace advlab {

class TwoHeadModel;

struct SSTask {
  enum class Kind { Rotation, Jigsaw };
  Kind kind = Kind::Rotation;
  int class_count = 4;
  int grid = 2;                          // jigsaw n
  std::vector<std::vector<int>> perms;   // jigsaw permutation set, entry 0 = identity

  std::string kind_name() const { return kind == Kind::Rotation ? "rotation" : "jigsaw"; }
};

SSTask make_rotation_task();
SSTask make_jigsaw_task(int grid, int count, std::uint64_t seed);
/// Parses "rotation" or "jigsaw"; jigsaw uses the given grid/count defaults.
SSTask make_ss_task(const std::string& kind, int grid = 2, int count = 24,
                    std::uint64_t seed = 0);

/// Transformed batch with self-derived labels.
struct SsBatch {
  std::vector<float> images;
  std::vector<int> labels;
};

/// Rotates counter-clockwise by quarter_turns*90 degrees; exact index
/// permutation, no interpolation. Requires h == w for odd quarter turns.
void rotate90(const float* img, int c, int h, int w, int quarter_turns, float* out);

/// out tile d = in tile perm[d]; tiles indexed row-major on the grid.
void apply_jigsaw_perm(const float* img, int c, int h, int w, int grid,
                       const std::vector<int>& perm, float* out);

/// One uniform label draw per image, consumed in batch order.
SsBatch rotate_batch(const std::vector<float>& images, int n, int c, int h, int w,
                     std::mt19937& rng);
SsBatch jigsaw_batch(const std::vector<float>& images, int n, int c, int h, int w,
                     const SSTask& task, std::mt19937& rng);
SsBatch apply_ss(const SSTask& task, const std::vector<float>& images, int n, int c, int h, int w,
                 std::mt19937& rng);

/// Greedy max-min Hamming selection starting from the identity permutation;
/// ties broken by a seeded draw. Exhaustive candidate pool for grids up to
/// 3x3, seeded random pool above that.
std::vector<std::vector<int>> make_permutation_set(int n, int count, std::uint64_t seed);

/// Mean-reduced cross entropy on the SS head (Graph::cross_entropy_mean of
/// the SS logits). Rejects a task whose class count is not the head's.
Tensor ss_loss(TwoHeadModel& model, const SSTask& task, Graph& g, const Tensor& x_ss,
               const std::vector<int>& y_ss);

}  // namespace advlab
