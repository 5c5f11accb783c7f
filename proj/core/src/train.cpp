#include "advlab/train.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "advlab/container.hpp"
#include "advlab/eval.hpp"
#include "advlab/rng.hpp"
#include "json.hpp"

namespace advlab {

namespace {

std::string fmt_g(float v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
  return buf;
}

Tensor to_tensor(std::vector<float> pixels, int n, int c, int h, int w) {
  return Tensor({n, c, h, w}, std::move(pixels));
}

}  // namespace

TrainMode::Tag parse_mode_tag(const std::string& s) {
  if (s == "T0") return TrainMode::Tag::T0;
  if (s == "T1") return TrainMode::Tag::T1;
  if (s == "T2") return TrainMode::Tag::T2;
  if (s == "T3") return TrainMode::Tag::T3;
  if (s == "T_rotonly") return TrainMode::Tag::TRotOnly;
  throw std::invalid_argument("unknown training mode '" + s +
                              "' (expected T0, T1, T2, T3 or T_rotonly)");
}

std::string mode_tag_name(TrainMode::Tag tag) {
  switch (tag) {
    case TrainMode::Tag::T0: return "T0";
    case TrainMode::Tag::T1: return "T1";
    case TrainMode::Tag::T2: return "T2";
    case TrainMode::Tag::T3: return "T3";
    case TrainMode::Tag::TRotOnly: return "T_rotonly";
  }
  throw std::logic_error("mode_tag_name: bad tag");
}

void validate_mode(const TrainMode& mode) {
  mode.attack.validate();
  const std::string name = mode_tag_name(mode.tag);
  if (mode.tag == TrainMode::Tag::T0) {
    if (mode.lambda1 != 0.0f)
      throw std::invalid_argument("mode T0 forms no SS batch but lambda1 = " +
                                  fmt_g(mode.lambda1));
    if (mode.attack.use_ss_loss)
      throw std::invalid_argument("mode T0 forms no SS batch but the attack requests the SS loss term");
    return;
  }
  if (mode.lambda1 < 0.0f)
    throw std::invalid_argument("mode " + name + ": lambda1 must be >= 0, got " +
                                fmt_g(mode.lambda1));
  const bool wants_joint = mode.attack.use_ss_loss;
  switch (mode.tag) {
    case TrainMode::Tag::T1:
      if (wants_joint)
        throw std::invalid_argument("mode T1 keeps the SS batch clean; attack use_ss_loss must be off");
      break;
    case TrainMode::Tag::T2:
      if (wants_joint)
        throw std::invalid_argument(
            "mode T2 attacks both batches with the supervised loss alone; attack use_ss_loss must be off");
      break;
    case TrainMode::Tag::T3:
      if (!wants_joint)
        throw std::invalid_argument("mode T3 requires the joint attack objective; set attack use_ss_loss");
      break;
    case TrainMode::Tag::TRotOnly:
      if (wants_joint)
        throw std::invalid_argument(
            "mode T_rotonly attacks the transformed batch with the supervised loss; attack use_ss_loss must be off");
      break;
    default:
      break;
  }
}

float compose_loss(TrainMode::Tag tag, float lambda1, float sup, const float* ss) {
  if (tag == TrainMode::Tag::T0) {
    if (ss != nullptr)
      throw std::invalid_argument("compose_loss: T0 takes no SS term");
    if (lambda1 != 0.0f)
      throw std::invalid_argument("compose_loss: T0 requires lambda1 = 0");
    return sup;
  }
  if (ss == nullptr)
    throw std::invalid_argument("compose_loss: mode " + mode_tag_name(tag) +
                                " requires an SS term");
  return sup + lambda1 * *ss;
}

Tensor compose_loss(Graph& g, TrainMode::Tag tag, float lambda1, const Tensor& sup,
                    const Tensor* ss) {
  if (tag == TrainMode::Tag::T0) {
    if (ss != nullptr)
      throw std::invalid_argument("compose_loss: T0 takes no SS term");
    if (lambda1 != 0.0f)
      throw std::invalid_argument("compose_loss: T0 requires lambda1 = 0");
    return sup;
  }
  if (ss == nullptr)
    throw std::invalid_argument("compose_loss: mode " + mode_tag_name(tag) +
                                " requires an SS term");
  return g.add(sup, g.scale(*ss, lambda1));
}

std::string train_provenance(const TrainConfig& cfg) {
  nlohmann::json j = {{"model_id", cfg.model_id.empty() ? mode_tag_name(cfg.mode.tag)
                                                        : cfg.model_id},
                      {"mode", mode_tag_name(cfg.mode.tag)},
                      {"lambda1", cfg.mode.lambda1},
                      {"lambda2", cfg.mode.attack.lambda2},
                      {"norm", norm_name(cfg.mode.attack.norm)},
                      {"eps_train", cfg.mode.attack.epsilon},
                      {"seed", cfg.seed},
                      {"task", cfg.task_kind},
                      {"arch", cfg.arch.preset}};
  return j.dump();
}

float lr_at_epoch(const TrainConfig& cfg, int epoch) {
  if (epoch < 0) throw std::invalid_argument("lr_at_epoch: negative epoch");
  if (cfg.lr_drop_every <= 0) return cfg.lr;
  float lr = cfg.lr;
  for (int k = 0; k < epoch / cfg.lr_drop_every; ++k) lr /= cfg.lr_drop_factor;
  return lr;
}

RngBundle RngBundle::make(std::uint64_t seed) {
  RngBundle b;
  b.shuffle = make_rng(seed, RngStream::Shuffle);
  b.augment = make_rng(seed, RngStream::Augment);
  b.ss = make_rng(seed, RngStream::SsTransform);
  b.attack = make_rng(seed, RngStream::Attack);
  return b;
}

EpochStats train_epoch(TwoHeadModel& model, SgdMomentum& opt, const ImageDataset& ds,
                       const TrainMode& mode, const SSTask& task, bool augment_on,
                       int batch_size, RngBundle& rngs) {
  validate_mode(mode);
  if (batch_size <= 0)
    throw std::invalid_argument("train_epoch: batch_size must be positive");
  const int n = ds.size();
  if (n == 0) throw std::invalid_argument("train_epoch: empty dataset");
  const bool use_ss = mode.tag != TrainMode::Tag::T0;
  if (use_ss && task.class_count != model.ss_classes())
    throw std::invalid_argument("train_epoch: task emits " + std::to_string(task.class_count) +
                                " classes but the SS head has " +
                                std::to_string(model.ss_classes()));

  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  for (int i = n - 1; i > 0; --i) {
    const int j = static_cast<int>(uniform_below(rngs.shuffle, static_cast<std::uint32_t>(i + 1)));
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
  }

  double sup_sum = 0.0, ss_sum = 0.0;
  std::int64_t seen = 0;
  for (int start = 0; start < n; start += batch_size) {
    const int b = std::min(batch_size, n - start);
    std::vector<int> idx(order.begin() + start, order.begin() + start + b);
    std::vector<float> pixels = gather_images(ds, idx);
    if (augment_on) augment_images(pixels, b, ds.c, ds.h, ds.w, rngs.augment);
    const std::vector<int> y = ds.batch_labels(idx);

    SsBatch ssb;
    if (use_ss) ssb = apply_ss(task, pixels, b, ds.c, ds.h, ds.w, rngs.ss);

    Tensor x = to_tensor(std::move(pixels), b, ds.c, ds.h, ds.w);

    model.set_training(false);
    Tensor x_used, x_ss_used;
    switch (mode.tag) {
      case TrainMode::Tag::T0: {
        x_used = pgd_attack(model, x, y, nullptr, nullptr, mode.attack, rngs.attack).x_adv;
        break;
      }
      case TrainMode::Tag::T1: {
        x_used = pgd_attack(model, x, y, nullptr, nullptr, mode.attack, rngs.attack).x_adv;
        x_ss_used = to_tensor(std::move(ssb.images), b, ds.c, ds.h, ds.w);
        break;
      }
      case TrainMode::Tag::T2: {
        // Both batches attacked independently with the supervised objective;
        // the transformed batch keeps the original labels y. Attack draws are
        // consumed in batch order: X first, then X_SS.
        x_used = pgd_attack(model, x, y, nullptr, nullptr, mode.attack, rngs.attack).x_adv;
        Tensor x_ss = to_tensor(std::move(ssb.images), b, ds.c, ds.h, ds.w);
        x_ss_used = pgd_attack(model, x_ss, y, nullptr, nullptr, mode.attack, rngs.attack).x_adv;
        break;
      }
      case TrainMode::Tag::T3: {
        Tensor x_ss = to_tensor(std::move(ssb.images), b, ds.c, ds.h, ds.w);
        AdvBatch adv = pgd_attack(model, x, y, &x_ss, &ssb.labels, mode.attack, rngs.attack);
        x_used = adv.x_adv;
        x_ss_used = adv.x_ss_adv;
        break;
      }
      case TrainMode::Tag::TRotOnly: {
        // The transformed batch is the only batch: attacked through the
        // supervised head against y, then scored by both heads.
        Tensor x_ss = to_tensor(std::move(ssb.images), b, ds.c, ds.h, ds.w);
        x_ss_used = pgd_attack(model, x_ss, y, nullptr, nullptr, mode.attack, rngs.attack).x_adv;
        break;
      }
    }
    model.set_training(true);

    Graph g;
    Tensor sup_loss_t, ss_loss_t;
    const Tensor* ss_ptr = nullptr;
    if (mode.tag == TrainMode::Tag::TRotOnly) {
      auto heads = model.predict_both(g, x_ss_used);
      sup_loss_t = g.cross_entropy_mean(heads.sup, y);
      ss_loss_t = g.cross_entropy_mean(heads.ss, ssb.labels);
      ss_ptr = &ss_loss_t;
    } else {
      sup_loss_t = g.cross_entropy_mean(model.predict_sup(g, x_used), y);
      if (use_ss) {
        model.set_stats_update(false);
        ss_loss_t = ss_loss(model, task, g, x_ss_used, ssb.labels);
        model.set_stats_update(true);
        ss_ptr = &ss_loss_t;
      }
    }
    Tensor total = compose_loss(g, mode.tag, mode.lambda1, sup_loss_t, ss_ptr);

    opt.zero_grad();
    g.backward(total);
    opt.step();

    sup_sum += static_cast<double>(sup_loss_t.item()) * b;
    if (ss_ptr != nullptr) ss_sum += static_cast<double>(ss_ptr->item()) * b;
    seen += b;
  }

  EpochStats stats;
  stats.sup_loss = static_cast<float>(sup_sum / static_cast<double>(seen));
  stats.has_ss = use_ss;
  stats.ss_loss = use_ss ? static_cast<float>(ss_sum / static_cast<double>(seen)) : 0.0f;
  return stats;
}

namespace {

constexpr const char* kHistoryHeader = "epoch,lr,sup_loss,ss_loss,val_TA,seconds";

std::string history_csv(const TrainHistory& h) {
  std::ostringstream out;
  out << kHistoryHeader << '\n';
  char buf[64];
  for (const auto& r : h.records) {
    out << r.epoch << ',' << fmt_g(r.lr) << ',' << fmt_g(r.sup_loss) << ',';
    if (r.has_ss) out << fmt_g(r.ss_loss);
    std::snprintf(buf, sizeof(buf), ",%.2f,%.3f\n", static_cast<double>(r.val_ta), r.seconds);
    out << buf;
  }
  return out.str();
}

TrainHistory parse_history_csv(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error("history is empty: " + origin);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kHistoryHeader)
    throw std::runtime_error("unexpected history header in " + origin + ": " + line);
  TrainHistory h;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream row(line);
    std::string cell;
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    if (line.back() == ',') cells.emplace_back();
    if (cells.size() != 6)
      throw std::runtime_error("bad history row in " + origin + ": " + line);
    EpochRecord r;
    r.epoch = std::stoi(cells[0]);
    r.lr = std::stof(cells[1]);
    r.sup_loss = std::stof(cells[2]);
    r.has_ss = !cells[3].empty();
    r.ss_loss = r.has_ss ? std::stof(cells[3]) : 0.0f;
    r.val_ta = std::stof(cells[4]);
    r.seconds = std::stod(cells[5]);
    h.records.push_back(r);
  }
  return h;
}

}  // namespace

void TrainHistory::save_csv(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write history: " + path);
  out << history_csv(*this);
  if (!out) throw std::runtime_error("write failed: " + path);
}

TrainHistory TrainHistory::load_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read history: " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return parse_history_csv(text.str(), path);
}

namespace {

constexpr const char* kStateFile = "train_state.bin";
constexpr const char* kHistoryFile = "history.csv";

void save_train_state(const std::string& dir, int next_epoch, int best_epoch, float best_val_ta,
                      const SgdMomentum& opt, const TrainHistory& history,
                      const RngBundle& rngs) {
  Container c;
  c.put_i32("epoch", {next_epoch});
  c.put_i32("best_epoch", {best_epoch});
  c.put_f32("best_val_ta", {1}, std::vector<float>{best_val_ta});
  const auto& params = opt.params();
  const auto& vel = opt.velocities();
  for (std::size_t i = 0; i < params.size(); ++i)
    c.put_f32("vel." + params[i].name, {static_cast<int>(vel[i].size())}, vel[i]);
  std::ostringstream rng_text;
  rng_text << rngs.shuffle << '\n' << rngs.augment << '\n' << rngs.ss << '\n' << rngs.attack;
  c.put_bytes("rng", rng_text.str());
  c.put_bytes("history", history_csv(history));
  c.save(dir + "/" + kStateFile);
}

void load_train_state(const std::string& dir, int& next_epoch, int& best_epoch,
                      float& best_val_ta, SgdMomentum& opt, TrainHistory& history,
                      RngBundle& rngs) {
  Container c = Container::load(dir + "/" + kStateFile);
  next_epoch = c.get_i32("epoch").at(0);
  best_epoch = c.get_i32("best_epoch").at(0);
  best_val_ta = c.get_f32("best_val_ta").at(0);
  std::vector<std::vector<float>> vel;
  vel.reserve(opt.params().size());
  for (const auto& p : opt.params()) vel.push_back(c.get_f32("vel." + p.name));
  opt.set_velocities(vel);
  std::istringstream rng_text(c.get_text("rng"));
  rng_text >> rngs.shuffle >> rngs.augment >> rngs.ss >> rngs.attack;
  if (!rng_text)
    throw std::runtime_error("corrupt rng state in " + dir + "/" + kStateFile);
  history = parse_history_csv(c.get_text("history"), dir + "/" + kStateFile);
}

std::string epoch_ckpt_name(int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "epoch-%03d.ckpt", epoch);
  return buf;
}

}  // namespace

TrainResult adv_train(const TrainConfig& cfg, const SSTask& task, const ImageDataset& train,
                      const ImageDataset& val, const std::string& out_dir, bool resume) {
  validate_mode(cfg.mode);
  if (cfg.epochs < 0) throw std::invalid_argument("adv_train: negative epoch count");
  train.validate();
  val.validate();
  if (resume && out_dir.empty())
    throw std::invalid_argument("adv_train: resume requires an output directory");

  const bool resuming =
      resume && std::filesystem::exists(out_dir + "/" + kStateFile) &&
      std::filesystem::exists(out_dir + "/last.ckpt");

  TwoHeadModel model =
      resuming ? load_checkpoint(out_dir + "/last.ckpt")
      : cfg.init_checkpoint.empty()
          ? build_model(cfg.arch, cfg.seed)
          : load_for_finetune(cfg.init_checkpoint, cfg.arch, cfg.seed);
  SgdMomentum opt(model.parameters(), cfg.lr, cfg.momentum, cfg.weight_decay);
  RngBundle rngs = RngBundle::make(cfg.seed);

  TrainResult result{model.clone(), {}, -1, 0.0f};
  int start_epoch = 0;
  float best_ta = -1.0f;
  if (resuming) {
    int best_epoch = -1;
    load_train_state(out_dir, start_epoch, best_epoch, best_ta, opt, result.history, rngs);
    result.best_epoch = best_epoch;
    result.best_val_ta = best_ta < 0.0f ? 0.0f : best_ta;
    if (best_epoch >= 0) result.model = load_checkpoint(out_dir + "/best.ckpt");
  }

  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
  const std::string prov = train_provenance(cfg);

  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    opt.set_lr(lr_at_epoch(cfg, epoch));
    const auto t0 = std::chrono::steady_clock::now();
    EpochStats stats = train_epoch(model, opt, train, cfg.mode, task, cfg.augment,
                                   cfg.batch_size, rngs);
    model.set_training(false);
    const float ta = eval_standard(model, val, cfg.batch_size);
    const auto t1 = std::chrono::steady_clock::now();

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = opt.lr();
    rec.sup_loss = stats.sup_loss;
    rec.has_ss = stats.has_ss;
    rec.ss_loss = stats.ss_loss;
    rec.val_ta = ta;
    rec.seconds = std::chrono::duration<double>(t1 - t0).count();
    result.history.records.push_back(rec);

    if (ta > best_ta) {
      best_ta = ta;
      result.best_epoch = epoch;
      result.best_val_ta = ta;
      result.model = model.clone();
      if (!out_dir.empty()) save_checkpoint(model, out_dir + "/best.ckpt", &task, prov);
    }
    if (!out_dir.empty()) {
      save_checkpoint(model, out_dir + "/last.ckpt", &task, prov);
      if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0)
        save_checkpoint(model, out_dir + "/" + epoch_ckpt_name(epoch), &task, prov);
      result.history.save_csv(out_dir + "/" + kHistoryFile);
      save_train_state(out_dir, epoch + 1, result.best_epoch, best_ta, opt, result.history,
                       rngs);
    }
  }

  if (result.best_epoch < 0) result.model = model;
  return result;
}

TrainResult ss_pretrain(const TrainConfig& cfg, const SSTask& task, const ImageDataset& train,
                        const ImageDataset& val, const std::string& out_dir) {
  cfg.mode.attack.validate();
  if (cfg.mode.attack.use_ss_loss)
    throw std::invalid_argument(
        "ss_pretrain: the attack already scores the SS head; use_ss_loss must be off");
  if (cfg.epochs < 0) throw std::invalid_argument("ss_pretrain: negative epoch count");
  if (task.class_count != cfg.arch.ss_classes)
    throw std::invalid_argument("ss_pretrain: task emits " + std::to_string(task.class_count) +
                                " classes but the SS head has " +
                                std::to_string(cfg.arch.ss_classes));
  train.validate();
  val.validate();

  TwoHeadModel model = build_model(cfg.arch, cfg.seed);
  SgdMomentum opt(model.parameters(), cfg.lr, cfg.momentum, cfg.weight_decay);
  RngBundle rngs = RngBundle::make(cfg.seed);
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
  const std::string prov = train_provenance(cfg);

  TrainResult result{model.clone(), {}, -1, 0.0f};
  float best_acc = -1.0f;
  const int n = train.size();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    opt.set_lr(lr_at_epoch(cfg, epoch));
    const auto t0 = std::chrono::steady_clock::now();

    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    for (int i = n - 1; i > 0; --i) {
      const int j =
          static_cast<int>(uniform_below(rngs.shuffle, static_cast<std::uint32_t>(i + 1)));
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }

    double loss_sum = 0.0;
    std::int64_t seen = 0;
    for (int start = 0; start < n; start += cfg.batch_size) {
      const int b = std::min(cfg.batch_size, n - start);
      std::vector<int> idx(order.begin() + start, order.begin() + start + b);
      std::vector<float> pixels = gather_images(train, idx);
      if (cfg.augment) augment_images(pixels, b, train.c, train.h, train.w, rngs.augment);
      SsBatch ssb = apply_ss(task, pixels, b, train.c, train.h, train.w, rngs.ss);
      Tensor x_ss = to_tensor(std::move(ssb.images), b, train.c, train.h, train.w);

      model.set_training(false);
      Tensor x_adv = pgd_attack(model, x_ss, ssb.labels, nullptr, nullptr, cfg.mode.attack,
                                rngs.attack, AttackHead::Ss)
                         .x_adv;
      model.set_training(true);

      Graph g;
      Tensor loss = ss_loss(model, task, g, x_adv, ssb.labels);
      opt.zero_grad();
      g.backward(loss);
      opt.step();
      loss_sum += static_cast<double>(loss.item()) * b;
      seen += b;
    }

    model.set_training(false);
    const float acc = eval_ss_accuracy(model, task, val, cfg.batch_size, cfg.seed);
    const auto t1 = std::chrono::steady_clock::now();

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = opt.lr();
    rec.sup_loss = 0.0f;
    rec.has_ss = true;
    rec.ss_loss = static_cast<float>(loss_sum / static_cast<double>(seen));
    rec.val_ta = acc;  // SS validation accuracy for pretraining runs
    rec.seconds = std::chrono::duration<double>(t1 - t0).count();
    result.history.records.push_back(rec);

    if (acc > best_acc) {
      best_acc = acc;
      result.best_epoch = epoch;
      result.best_val_ta = acc;
      result.model = model.clone();
      if (!out_dir.empty()) save_checkpoint(model, out_dir + "/best.ckpt", &task, prov);
    }
    if (!out_dir.empty()) {
      save_checkpoint(model, out_dir + "/last.ckpt", &task, prov);
      result.history.save_csv(out_dir + "/" + kHistoryFile);
    }
  }

  if (result.best_epoch < 0) result.model = model;
  return result;
}

}  // namespace advlab
