#include "advlab/model.hpp"

#include <cmath>
#include <stdexcept>

#include "advlab/container.hpp"
#include "advlab/rng.hpp"
#include "json.hpp"

namespace advlab {

namespace {

int widen(int base, float width) {
  return static_cast<int>(std::ceil(static_cast<double>(base) * width));
}

Tensor he_conv(int co, int ci, int kh, int kw, std::mt19937& rng) {
  const float scale = std::sqrt(2.0f / static_cast<float>(ci * kh * kw));
  std::vector<float> v(static_cast<std::size_t>(co) * ci * kh * kw);
  for (auto& x : v) x = scale * normal_unit(rng);
  Tensor t({co, ci, kh, kw}, std::move(v));
  t.mark_parameter();
  return t;
}

Tensor linear_weight(int in, int out, std::mt19937& rng) {
  const float scale = 1.0f / std::sqrt(static_cast<float>(in));
  std::vector<float> v(static_cast<std::size_t>(in) * out);
  for (auto& x : v) x = scale * normal_unit(rng);
  Tensor t({in, out}, std::move(v));
  t.mark_parameter();
  return t;
}

Tensor param_full(Shape shape, float value) {
  Tensor t = Tensor::full(std::move(shape), value);
  t.mark_parameter();
  return t;
}

}  // namespace

struct ModelBuilder {
  TwoHeadModel* m;
  std::mt19937* rng;

  int add_conv(int co, int ci, int kh, int kw) {
    m_convs().push_back(he_conv(co, ci, kh, kw, *rng));
    return static_cast<int>(m_convs().size()) - 1;
  }
  int add_norm(int channels) {
    m_norms().push_back(
        {param_full({channels}, 1.0f), param_full({channels}, 0.0f), NormStats(channels)});
    return static_cast<int>(m_norms().size()) - 1;
  }
  std::vector<Tensor>& m_convs();
  std::vector<NormLayer>& m_norms();
  std::vector<PlanStep>& m_plan();

  void conv(int co, int ci, int k, int stride, int pad) {
    PlanStep s;
    s.op = PlanStep::Op::Conv;
    s.conv = add_conv(co, ci, k, k);
    s.stride = stride;
    s.pad = pad;
    m_plan().push_back(s);
  }
  void norm(int channels) {
    PlanStep s;
    s.op = PlanStep::Op::Norm;
    s.norm = add_norm(channels);
    m_plan().push_back(s);
  }
  void relu() {
    PlanStep s;
    s.op = PlanStep::Op::Relu;
    m_plan().push_back(s);
  }
  void pool(int window) {
    PlanStep s;
    s.op = PlanStep::Op::Pool;
    s.window = window;
    m_plan().push_back(s);
  }
  void global_pool() {
    PlanStep s;
    s.op = PlanStep::Op::GlobalPool;
    m_plan().push_back(s);
  }
  int save();
  void add_saved(int slot, int in_ch, int out_ch, int stride) {
    PlanStep s;
    s.op = PlanStep::Op::AddSaved;
    s.slot = slot;
    if (stride != 1 || in_ch != out_ch) {
      s.proj_conv = add_conv(out_ch, in_ch, 1, 1);
      s.proj_norm = add_norm(out_ch);
      s.proj_stride = stride;
    }
    m_plan().push_back(s);
  }

  void residual_block(int in_ch, int out_ch, int stride) {
    const int slot = save();
    conv(out_ch, in_ch, 3, stride, 1);
    norm(out_ch);
    relu();
    conv(out_ch, out_ch, 3, 1, 1);
    norm(out_ch);
    add_saved(slot, in_ch, out_ch, stride);
    relu();
  }
};

std::vector<Tensor>& ModelBuilder::m_convs() { return m->convs_; }
std::vector<NormLayer>& ModelBuilder::m_norms() { return m->norms_; }
std::vector<PlanStep>& ModelBuilder::m_plan() { return m->plan_; }
int ModelBuilder::save() {
  PlanStep s;
  s.op = PlanStep::Op::Save;
  s.slot = m->save_slots_++;
  m->plan_.push_back(s);
  return s.slot;
}

TwoHeadModel build_model(const ArchConfig& cfg, std::uint64_t seed) {
  if (cfg.in_h != cfg.in_w)
    throw std::invalid_argument("build_model: non-square input " + std::to_string(cfg.in_h) +
                                "x" + std::to_string(cfg.in_w));
  if (cfg.width <= 0.0f)
    throw std::invalid_argument("build_model: width " + std::to_string(cfg.width) + " <= 0");
  if (cfg.sup_classes < 2 || cfg.ss_classes < 2)
    throw std::invalid_argument("build_model: class counts " + std::to_string(cfg.sup_classes) +
                                "/" + std::to_string(cfg.ss_classes) + " must be >= 2");

  TwoHeadModel m;
  m.cfg_ = cfg;
  auto rng = make_rng(seed, RngStream::Init);
  ModelBuilder b{&m, &rng};

  if (cfg.preset == "tiny-cnn") {
    if (cfg.in_h % 4 != 0)
      throw std::invalid_argument("build_model: input " + std::to_string(cfg.in_h) +
                                  " not divisible by tiny-cnn downsampling 4");
    const int c1 = widen(32, cfg.width), c2 = widen(64, cfg.width), c3 = widen(128, cfg.width);
    int prev = cfg.in_c;
    for (int c : {c1, c1}) {
      b.conv(c, prev, 3, 1, 1);
      b.norm(c);
      b.relu();
      prev = c;
    }
    b.pool(2);
    for (int c : {c2, c2}) {
      b.conv(c, prev, 3, 1, 1);
      b.norm(c);
      b.relu();
      prev = c;
    }
    b.pool(2);
    for (int c : {c3, c3}) {
      b.conv(c, prev, 3, 1, 1);
      b.norm(c);
      b.relu();
      prev = c;
    }
    b.global_pool();
    m.feature_dim_ = c3;
  } else if (cfg.preset == "resnet-18" || cfg.preset == "resnet-34") {
    if (cfg.in_h % 8 != 0)
      throw std::invalid_argument("build_model: input " + std::to_string(cfg.in_h) +
                                  " not divisible by resnet downsampling 8");
    const bool deep = cfg.preset == "resnet-34";
    const int blocks[4] = {deep ? 3 : 2, deep ? 4 : 2, deep ? 6 : 2, deep ? 3 : 2};
    const int chans[4] = {widen(64, cfg.width), widen(128, cfg.width), widen(256, cfg.width),
                          widen(512, cfg.width)};
    b.conv(chans[0], cfg.in_c, 3, 1, 1);  // CIFAR stem: 3x3, no initial pooling
    b.norm(chans[0]);
    b.relu();
    int prev = chans[0];
    for (int stage = 0; stage < 4; ++stage) {
      for (int i = 0; i < blocks[stage]; ++i) {
        const int stride = (stage > 0 && i == 0) ? 2 : 1;
        b.residual_block(prev, chans[stage], stride);
        prev = chans[stage];
      }
    }
    b.global_pool();
    m.feature_dim_ = chans[3];
  } else {
    throw std::invalid_argument("build_model: unknown preset '" + cfg.preset + "'");
  }

  m.sup_w_ = linear_weight(m.feature_dim_, cfg.sup_classes, rng);
  m.sup_b_ = param_full({cfg.sup_classes}, 0.0f);
  m.ss_w_ = linear_weight(m.feature_dim_, cfg.ss_classes, rng);
  m.ss_b_ = param_full({cfg.ss_classes}, 0.0f);
  return m;
}

void TwoHeadModel::check_input(const Tensor& x) const {
  if (x.shape().size() != 4 || x.dim(1) != cfg_.in_c || x.dim(2) != cfg_.in_h ||
      x.dim(3) != cfg_.in_w)
    throw std::invalid_argument("model: input " + shape_str(x.shape()) + " does not match [B, " +
                                std::to_string(cfg_.in_c) + ", " + std::to_string(cfg_.in_h) +
                                ", " + std::to_string(cfg_.in_w) + "]");
}

Tensor TwoHeadModel::trunk_features(Graph& g, const Tensor& x) {
  check_input(x);
  std::vector<Tensor> saved(static_cast<std::size_t>(save_slots_));
  Tensor cur = x;
  for (const auto& s : plan_) {
    switch (s.op) {
      case PlanStep::Op::Conv:
        cur = g.conv2d(cur, convs_[static_cast<std::size_t>(s.conv)], s.stride, s.pad);
        break;
      case PlanStep::Op::Norm: {
        auto& nl = norms_[static_cast<std::size_t>(s.norm)];
        cur = g.channel_norm(cur, nl.gamma, nl.beta, nl.stats, training_, stats_update_);
        break;
      }
      case PlanStep::Op::Relu:
        cur = g.relu(cur);
        break;
      case PlanStep::Op::Pool:
        cur = g.avg_pool2d(cur, s.window);
        break;
      case PlanStep::Op::GlobalPool:
        cur = g.avg_pool2d(cur, cur.dim(2));
        cur = g.reshape(cur, {cur.dim(0), cur.dim(1)});
        break;
      case PlanStep::Op::Save:
        saved[static_cast<std::size_t>(s.slot)] = cur;
        break;
      case PlanStep::Op::AddSaved: {
        Tensor sc = saved[static_cast<std::size_t>(s.slot)];
        if (s.proj_conv >= 0) {
          sc = g.conv2d(sc, convs_[static_cast<std::size_t>(s.proj_conv)], s.proj_stride, 0);
          auto& nl = norms_[static_cast<std::size_t>(s.proj_norm)];
          sc = g.channel_norm(sc, nl.gamma, nl.beta, nl.stats, training_, stats_update_);
        }
        cur = g.add(cur, sc);
        break;
      }
    }
  }
  return cur;
}

Tensor TwoHeadModel::predict_sup(Graph& g, const Tensor& x) {
  return g.bias_add(g.matmul(trunk_features(g, x), sup_w_), sup_b_);
}

Tensor TwoHeadModel::predict_ss(Graph& g, const Tensor& x) {
  return g.bias_add(g.matmul(trunk_features(g, x), ss_w_), ss_b_);
}

TwoHeadModel::BothHeads TwoHeadModel::predict_both(Graph& g, const Tensor& x) {
  BothHeads out;
  out.features = trunk_features(g, x);
  out.sup = g.bias_add(g.matmul(out.features, sup_w_), sup_b_);
  out.ss = g.bias_add(g.matmul(out.features, ss_w_), ss_b_);
  return out;
}

TwoHeadModel TwoHeadModel::clone() const {
  TwoHeadModel copy = *this;
  auto deep = [](const Tensor& t) {
    Tensor c(t.shape(), std::vector<float>(t.values().begin(), t.values().end()));
    if (t.is_parameter())
      c.mark_parameter();
    else if (t.requires_grad())
      c.set_requires_grad();
    return c;
  };
  for (auto& t : copy.convs_) t = deep(t);
  for (auto& nl : copy.norms_) {
    nl.gamma = deep(nl.gamma);
    nl.beta = deep(nl.beta);
  }
  copy.sup_w_ = deep(copy.sup_w_);
  copy.sup_b_ = deep(copy.sup_b_);
  copy.ss_w_ = deep(copy.ss_w_);
  copy.ss_b_ = deep(copy.ss_b_);
  return copy;
}

std::vector<NamedParam> TwoHeadModel::parameters() {
  std::vector<NamedParam> out;
  for (std::size_t i = 0; i < convs_.size(); ++i)
    out.push_back({"conv" + std::to_string(i) + ".w", convs_[i], true});
  for (std::size_t i = 0; i < norms_.size(); ++i) {
    out.push_back({"norm" + std::to_string(i) + ".gamma", norms_[i].gamma, false});
    out.push_back({"norm" + std::to_string(i) + ".beta", norms_[i].beta, false});
  }
  out.push_back({"sup.w", sup_w_, true});
  out.push_back({"sup.b", sup_b_, false});
  out.push_back({"ss.w", ss_w_, true});
  out.push_back({"ss.b", ss_b_, false});
  return out;
}

std::int64_t TwoHeadModel::param_count() const {
  std::int64_t n = 0;
  for (const auto& t : convs_) n += t.numel();
  for (const auto& nl : norms_) n += nl.gamma.numel() + nl.beta.numel();
  n += sup_w_.numel() + sup_b_.numel() + ss_w_.numel() + ss_b_.numel();
  return n;
}

std::uint64_t TwoHeadModel::param_checksum() const {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const Tensor& t) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(t.data());
    const auto n = static_cast<std::size_t>(t.numel()) * sizeof(float);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& t : convs_) mix(t);
  for (const auto& nl : norms_) {
    mix(nl.gamma);
    mix(nl.beta);
  }
  mix(sup_w_);
  mix(sup_b_);
  mix(ss_w_);
  mix(ss_b_);
  return h;
}

namespace {

nlohmann::json arch_json(const ArchConfig& cfg) {
  return {{"preset", cfg.preset},   {"width", cfg.width},
          {"in_c", cfg.in_c},       {"in_h", cfg.in_h},
          {"in_w", cfg.in_w},       {"sup_classes", cfg.sup_classes},
          {"ss_classes", cfg.ss_classes}};
}

ArchConfig arch_from_json(const nlohmann::json& j) {
  ArchConfig cfg;
  cfg.preset = j.at("preset").get<std::string>();
  cfg.width = j.at("width").get<float>();
  cfg.in_c = j.at("in_c").get<int>();
  cfg.in_h = j.at("in_h").get<int>();
  cfg.in_w = j.at("in_w").get<int>();
  cfg.sup_classes = j.at("sup_classes").get<int>();
  cfg.ss_classes = j.at("ss_classes").get<int>();
  return cfg;
}

}  // namespace

void save_checkpoint(const TwoHeadModel& model, const std::string& path, const SSTask* task,
                     const std::string& provenance) {
  Container ct;
  nlohmann::json meta = {{"format", 1}, {"arch", arch_json(model.config())}};
  if (!provenance.empty()) ct.put_bytes("provenance", provenance);
  if (task) {
    meta["task"] = {{"kind", task->kind_name()},
                    {"class_count", task->class_count},
                    {"grid", task->grid}};
    if (!task->perms.empty()) {
      std::vector<std::int32_t> flat;
      for (const auto& p : task->perms) flat.insert(flat.end(), p.begin(), p.end());
      meta["task"]["perm_count"] = task->perms.size();
      ct.put_i32("task.perms", std::move(flat));
    }
  }
  ct.put_bytes("meta", meta.dump());
  auto& m = const_cast<TwoHeadModel&>(model);
  for (const auto& p : m.parameters())
    ct.put_f32("param/" + p.name, p.tensor.shape(), p.tensor.values());
  for (int i = 0; i < model.norm_count(); ++i) {
    const auto& stats = model.norm_layer(i).stats;
    ct.put_f32("stats/" + std::to_string(i) + ".mean",
               {static_cast<int>(stats.mean.size())}, stats.mean);
    ct.put_f32("stats/" + std::to_string(i) + ".var", {static_cast<int>(stats.var.size())},
               stats.var);
  }
  ct.save(path);
}

namespace {

SSTask task_from_meta(const nlohmann::json& meta, const Container& ct) {
  const auto& tj = meta.at("task");
  SSTask task;
  task.kind =
      tj.at("kind").get<std::string>() == "jigsaw" ? SSTask::Kind::Jigsaw : SSTask::Kind::Rotation;
  task.class_count = tj.at("class_count").get<int>();
  task.grid = tj.at("grid").get<int>();
  if (tj.contains("perm_count")) {
    const auto count = tj.at("perm_count").get<std::size_t>();
    const auto& flat = ct.get_i32("task.perms");
    const std::size_t cells = flat.size() / count;
    for (std::size_t i = 0; i < count; ++i)
      task.perms.emplace_back(flat.begin() + static_cast<std::ptrdiff_t>(i * cells),
                              flat.begin() + static_cast<std::ptrdiff_t>((i + 1) * cells));
  }
  return task;
}

void restore_stats(TwoHeadModel& m, const Container& ct) {
  for (int i = 0; i < m.norm_count(); ++i) {
    auto& nl = m.norm_layer(i);
    const auto& mean = ct.get_f32("stats/" + std::to_string(i) + ".mean");
    const auto& var = ct.get_f32("stats/" + std::to_string(i) + ".var");
    if (mean.size() != nl.stats.mean.size() || var.size() != nl.stats.var.size())
      throw std::runtime_error("checkpoint: norm " + std::to_string(i) + " stats have " +
                               std::to_string(mean.size()) + " channels, model wants " +
                               std::to_string(nl.stats.mean.size()));
    nl.stats.mean = mean;
    nl.stats.var = var;
  }
}

}  // namespace

std::string read_checkpoint_provenance(const std::string& path) {
  Container ct = Container::load(path);
  return ct.has("provenance") ? ct.get_text("provenance") : std::string();
}

TwoHeadModel load_checkpoint(const std::string& path, SSTask* task_out) {
  Container ct = Container::load(path);
  const auto meta = nlohmann::json::parse(ct.get_text("meta"));
  TwoHeadModel m = build_model(arch_from_json(meta.at("arch")), 0);
  for (auto& p : m.parameters()) {
    const auto& e = ct.get("param/" + p.name);
    if (e.dims != p.tensor.shape())
      throw std::runtime_error("checkpoint: '" + p.name + "' has shape " + shape_str(e.dims) +
                               ", model wants " + shape_str(p.tensor.shape()));
    std::copy(e.f32.begin(), e.f32.end(), p.tensor.data());
  }
  restore_stats(m, ct);
  if (task_out && meta.contains("task")) *task_out = task_from_meta(meta, ct);
  return m;
}

TwoHeadModel load_for_finetune(const std::string& path, const ArchConfig& cfg,
                               std::uint64_t seed) {
  Container ct = Container::load(path);
  TwoHeadModel m = build_model(cfg, seed);
  for (auto& p : m.parameters()) {
    const std::string key = "param/" + p.name;
    const bool head = p.name.rfind("sup.", 0) == 0 || p.name.rfind("ss.", 0) == 0;
    if (!ct.has(key)) {
      if (head) continue;
      throw std::runtime_error("checkpoint: trunk tensor '" + p.name + "' missing in '" + path +
                               "'");
    }
    const auto& e = ct.get(key);
    if (e.dims != p.tensor.shape()) {
      if (head) continue;  // re-initialized head on size mismatch
      throw std::runtime_error("checkpoint: trunk tensor '" + p.name + "' has shape " +
                               shape_str(e.dims) + ", model wants " +
                               shape_str(p.tensor.shape()));
    }
    std::copy(e.f32.begin(), e.f32.end(), p.tensor.data());
  }
  restore_stats(m, ct);
  return m;
}

}  // namespace advlab
