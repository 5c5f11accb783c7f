#include "advlab/ss_task.hpp"

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <stdexcept>

#include "advlab/model.hpp"
#include "advlab/rng.hpp"

namespace advlab {

namespace {

std::int64_t factorial(int n) {
  std::int64_t f = 1;
  for (int i = 2; i <= n; ++i) f *= i;
  return f;
}

int hamming(const std::vector<int>& a, const std::vector<int>& b) {
  int d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += a[i] != b[i];
  return d;
}

}  // namespace

SSTask make_rotation_task() {
  SSTask t;
  t.kind = SSTask::Kind::Rotation;
  t.class_count = 4;
  return t;
}

SSTask make_jigsaw_task(int grid, int count, std::uint64_t seed) {
  SSTask t;
  t.kind = SSTask::Kind::Jigsaw;
  t.grid = grid;
  t.perms = make_permutation_set(grid, count, seed);
  t.class_count = count;
  return t;
}

SSTask make_ss_task(const std::string& kind, int grid, int count, std::uint64_t seed) {
  if (kind == "rotation") return make_rotation_task();
  if (kind == "jigsaw") return make_jigsaw_task(grid, count, seed);
  throw std::invalid_argument("ss task: unknown kind '" + kind + "' (want rotation or jigsaw)");
}

void rotate90(const float* img, int c, int h, int w, int quarter_turns, float* out) {
  const int k = ((quarter_turns % 4) + 4) % 4;
  const auto plane = static_cast<std::size_t>(h) * w;
  if (k == 0) {
    std::copy(img, img + static_cast<std::size_t>(c) * plane, out);
    return;
  }
  if (h != w)
    throw std::invalid_argument("rotate90: non-square image " + std::to_string(h) + "x" +
                                std::to_string(w));
  std::vector<float> cur(img, img + static_cast<std::size_t>(c) * plane);
  std::vector<float> nxt(cur.size());
  for (int t = 0; t < k; ++t) {
    for (int ch = 0; ch < c; ++ch) {
      const float* src = cur.data() + static_cast<std::size_t>(ch) * plane;
      float* dst = nxt.data() + static_cast<std::size_t>(ch) * plane;
      // counter-clockwise: out[r][col] = in[col][w-1-r]
      for (int r = 0; r < h; ++r)
        for (int col = 0; col < w; ++col)
          dst[static_cast<std::size_t>(r) * w + col] =
              src[static_cast<std::size_t>(col) * w + (w - 1 - r)];
    }
    std::swap(cur, nxt);
  }
  std::copy(cur.begin(), cur.end(), out);
}

void apply_jigsaw_perm(const float* img, int c, int h, int w, int grid,
                       const std::vector<int>& perm, float* out) {
  if (h % grid != 0 || w % grid != 0)
    throw std::invalid_argument("jigsaw: image " + std::to_string(h) + "x" + std::to_string(w) +
                                " not divisible by grid " + std::to_string(grid));
  if (static_cast<int>(perm.size()) != grid * grid)
    throw std::invalid_argument("jigsaw: permutation size " + std::to_string(perm.size()) +
                                " for grid " + std::to_string(grid));
  const int th = h / grid, tw = w / grid;
  for (int ch = 0; ch < c; ++ch) {
    const float* plane = img + static_cast<std::size_t>(ch) * h * w;
    float* oplane = out + static_cast<std::size_t>(ch) * h * w;
    for (int d = 0; d < grid * grid; ++d) {
      const int s = perm[static_cast<std::size_t>(d)];
      const int dy = (d / grid) * th, dx = (d % grid) * tw;
      const int sy = (s / grid) * th, sx = (s % grid) * tw;
      for (int y = 0; y < th; ++y)
        std::copy(plane + static_cast<std::size_t>(sy + y) * w + sx,
                  plane + static_cast<std::size_t>(sy + y) * w + sx + tw,
                  oplane + static_cast<std::size_t>(dy + y) * w + dx);
    }
  }
}

SsBatch rotate_batch(const std::vector<float>& images, int n, int c, int h, int w,
                     std::mt19937& rng) {
  if (h != w)
    throw std::invalid_argument("rotate_batch: non-square images " + std::to_string(h) + "x" +
                                std::to_string(w));
  const auto d = static_cast<std::size_t>(c) * h * w;
  SsBatch out;
  out.images.resize(images.size());
  out.labels.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const auto label = static_cast<int>(uniform_below(rng, 4));
    rotate90(images.data() + static_cast<std::size_t>(i) * d, c, h, w, label,
             out.images.data() + static_cast<std::size_t>(i) * d);
    out.labels.push_back(label);
  }
  return out;
}

SsBatch jigsaw_batch(const std::vector<float>& images, int n, int c, int h, int w,
                     const SSTask& task, std::mt19937& rng) {
  if (task.perms.empty()) throw std::invalid_argument("jigsaw_batch: task has no permutations");
  const auto d = static_cast<std::size_t>(c) * h * w;
  SsBatch out;
  out.images.resize(images.size());
  out.labels.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const auto label =
        static_cast<int>(uniform_below(rng, static_cast<std::uint32_t>(task.perms.size())));
    apply_jigsaw_perm(images.data() + static_cast<std::size_t>(i) * d, c, h, w, task.grid,
                      task.perms[static_cast<std::size_t>(label)],
                      out.images.data() + static_cast<std::size_t>(i) * d);
    out.labels.push_back(label);
  }
  return out;
}

SsBatch apply_ss(const SSTask& task, const std::vector<float>& images, int n, int c, int h, int w,
                 std::mt19937& rng) {
  return task.kind == SSTask::Kind::Rotation ? rotate_batch(images, n, c, h, w, rng)
                                             : jigsaw_batch(images, n, c, h, w, task, rng);
}

std::vector<std::vector<int>> make_permutation_set(int n, int count, std::uint64_t seed) {
  const int cells = n * n;
  if (n < 1) throw std::invalid_argument("permutation set: grid " + std::to_string(n) + " < 1");
  const std::int64_t total = cells <= 12 ? factorial(cells) : -1;
  if (total > 0 && count > total)
    throw std::invalid_argument("permutation set: " + std::to_string(count) +
                                " permutations requested but only " + std::to_string(total) +
                                " exist for " + std::to_string(cells) + " cells");
  if (count < 1)
    throw std::invalid_argument("permutation set: count " + std::to_string(count) + " < 1");

  std::mt19937 rng(static_cast<std::uint32_t>(seed));
  std::vector<int> identity(static_cast<std::size_t>(cells));
  std::iota(identity.begin(), identity.end(), 0);

  std::vector<std::vector<int>> pool;
  if (cells <= 9) {
    std::vector<int> p = identity;
    do pool.push_back(p);
    while (std::next_permutation(p.begin(), p.end()));
  } else {
    // random candidate pool, deduplicated; large enough that the greedy
    // choice has room
    const int want = std::max(64 * count, 1024);
    pool.push_back(identity);
    while (static_cast<int>(pool.size()) < want) {
      std::vector<int> p = identity;
      for (int i = cells - 1; i > 0; --i) {
        const auto j = static_cast<int>(uniform_below(rng, static_cast<std::uint32_t>(i + 1)));
        std::swap(p[static_cast<std::size_t>(i)], p[static_cast<std::size_t>(j)]);
      }
      if (std::find(pool.begin(), pool.end(), p) == pool.end()) pool.push_back(std::move(p));
    }
  }

  std::vector<std::vector<int>> chosen = {identity};
  std::vector<bool> used(pool.size(), false);
  for (std::size_t i = 0; i < pool.size(); ++i)
    if (pool[i] == identity) used[i] = true;

  while (static_cast<int>(chosen.size()) < count) {
    int best = -1;
    std::vector<std::size_t> best_ids;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      if (used[i]) continue;
      int mind = cells + 1;
      for (const auto& c : chosen) mind = std::min(mind, hamming(pool[i], c));
      if (mind > best) {
        best = mind;
        best_ids = {i};
      } else if (mind == best) {
        best_ids.push_back(i);
      }
    }
    if (best_ids.empty())
      throw std::invalid_argument("permutation set: candidate pool exhausted at " +
                                  std::to_string(chosen.size()) + " of " + std::to_string(count));
    const auto pick = best_ids[uniform_below(rng, static_cast<std::uint32_t>(best_ids.size()))];
    used[pick] = true;
    chosen.push_back(pool[pick]);
  }
  return chosen;
}

Tensor ss_loss(TwoHeadModel& model, const SSTask& task, Graph& g, const Tensor& x_ss,
               const std::vector<int>& y_ss) {
  if (task.class_count != model.ss_classes())
    throw std::invalid_argument("ss_loss: task has " + std::to_string(task.class_count) +
                                " classes but SS head has " + std::to_string(model.ss_classes()));
  return g.cross_entropy_mean(model.predict_ss(g, x_ss), y_ss);
}

}  // namespace advlab
