#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "advlab/tensor.hpp"

namespace advlab {

/// Running normalization statistics owned by a model layer; channel_norm
/// updates them in training mode and reads them frozen in eval mode.
struct NormStats {
  std::vector<float> mean;
  std::vector<float> var;

  explicit NormStats(int channels = 0)
      : mean(static_cast<std::size_t>(channels), 0.0f),
        var(static_cast<std::size_t>(channels), 1.0f) {}
};

/// Reverse-mode tape. Records every op whose result needs a gradient, in
/// execution (= topological) order; backward walks the tape once in reverse.
/// One graph instance per forward pass, confined to a single thread.
class Graph {
 public:
  enum class Scope {
    All,         // gradients for every leaf that requires them
    InputsOnly,  // skip parameter leaves (attack graphs want d/dx only)
  };

  explicit Graph(Scope scope = Scope::All, bool grad_enabled = true);

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  void set_check_finite(bool on) { check_finite_ = on; }

  Tensor add(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor scale(const Tensor& a, float s);
  Tensor bias_add(const Tensor& a, const Tensor& bias);  // bias over dim 1
  Tensor matmul(const Tensor& a, const Tensor& b);
  Tensor relu(const Tensor& a);
  Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int pad);
  Tensor avg_pool2d(const Tensor& x, int window);
  /// training selects the statistics source (batch vs running); the running
  /// buffers are written only when update_running is also set, so auxiliary
  /// forwards can use batch statistics without disturbing eval-time state.
  Tensor channel_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                      NormStats& stats, bool training, bool update_running = true,
                      float momentum = 0.1f, float eps = 1e-5f);
  Tensor reshape(const Tensor& x, Shape shape);
  Tensor mean_all(const Tensor& x);
  Tensor cross_entropy_mean(const Tensor& logits, const std::vector<int>& labels);

  /// Seeds d(loss)/d(loss)=1 and accumulates gradients into every tracked
  /// leaf. Repeated calls keep accumulating. Throws on non-scalar loss or on
  /// a loss this graph did not produce.
  void backward(const Tensor& loss);

  int node_count() const { return static_cast<int>(recs_.size()); }
  std::int64_t last_backward_visits() const { return visits_; }

 private:
  struct Rec {
    std::shared_ptr<detail::Storage> out;
    std::function<void(Graph&, const float* gout)> back;
  };

  static constexpr int kLeaf = -1;
  static constexpr int kNone = -2;

  bool tracks(const Tensor& t) const;
  int sink_of(const Tensor& t) const;
  Tensor make_out(Shape shape, std::vector<float> values, bool tracked);
  void push(Tensor& out, std::function<void(Graph&, const float*)> back);
  void accum(int sink, detail::Storage* leaf, const float* g, std::size_t n);
  const float* grad_of(int node) const { return gbuf_[static_cast<std::size_t>(node)].data(); }
  void check_input(const Tensor& t, const char* op) const;

  Scope scope_;
  bool grad_enabled_;
  bool check_finite_ = false;
  std::uint64_t id_;
  std::vector<Rec> recs_;
  std::vector<std::vector<float>> gbuf_;
  std::int64_t visits_ = 0;
};

}  // namespace advlab
