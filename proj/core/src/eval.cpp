#include "advlab/eval.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "advlab/rng.hpp"

namespace advlab {

namespace {

std::vector<std::vector<int>> batched_indices(int n, int batch_size) {
  if (batch_size < 1)
    throw std::invalid_argument("eval: batch size " + std::to_string(batch_size) + " < 1");
  std::vector<std::vector<int>> out;
  for (int start = 0; start < n; start += batch_size) {
    std::vector<int> idx;
    for (int i = start; i < std::min(n, start + batch_size); ++i) idx.push_back(i);
    out.push_back(std::move(idx));
  }
  return out;
}

int argmax_row(const float* row, int n) {
  int best = 0;
  for (int i = 1; i < n; ++i)
    if (row[i] > row[best]) best = i;
  return best;
}

int count_correct(const Tensor& logits, const std::vector<int>& labels) {
  const int b = logits.dim(0), c = logits.dim(1);
  int correct = 0;
  for (int i = 0; i < b; ++i)
    correct +=
        argmax_row(logits.data() + static_cast<std::size_t>(i) * c, c) == labels[static_cast<std::size_t>(i)];
  return correct;
}

void require_eval_mode(const TwoHeadModel& model) {
  if (model.training())
    throw std::logic_error("eval: model must be in eval mode");
}

}  // namespace

float eval_standard(TwoHeadModel& model, const ImageDataset& ds, int batch_size) {
  require_eval_mode(model);
  if (ds.size() == 0) throw std::invalid_argument("eval: empty dataset '" + ds.name + "'");
  int correct = 0;
  for (const auto& idx : batched_indices(ds.size(), batch_size)) {
    Graph g(Graph::Scope::All, /*grad_enabled=*/false);
    correct += count_correct(model.predict_sup(g, ds.batch(idx)), ds.batch_labels(idx));
  }
  return 100.0f * static_cast<float>(correct) / static_cast<float>(ds.size());
}

float eval_ss_accuracy(TwoHeadModel& model, const SSTask& task, const ImageDataset& ds,
                       int batch_size, std::uint64_t seed) {
  require_eval_mode(model);
  if (ds.size() == 0) throw std::invalid_argument("eval: empty dataset '" + ds.name + "'");
  auto rng = make_rng(seed, RngStream::SsTransform);
  int correct = 0;
  for (const auto& idx : batched_indices(ds.size(), batch_size)) {
    auto imgs = gather_images(ds, idx);
    auto ss = apply_ss(task, imgs, static_cast<int>(idx.size()), ds.c, ds.h, ds.w, rng);
    Tensor x(Shape{static_cast<int>(idx.size()), ds.c, ds.h, ds.w}, std::move(ss.images));
    Graph g(Graph::Scope::All, /*grad_enabled=*/false);
    correct += count_correct(model.predict_ss(g, x), ss.labels);
  }
  return 100.0f * static_cast<float>(correct) / static_cast<float>(ds.size());
}

std::vector<float> default_eps_grid(Norm norm) {
  if (norm == Norm::L2)
    return {0.0f, 0.01f, 0.03f, 0.05f, 0.07f, 0.1f, 0.25f, 0.5f, 0.75f, 1.0f, 2.0f, 3.0f};
  std::vector<float> grid;
  for (int i = 0; i <= 10; ++i) grid.push_back(static_cast<float>(i) / 255.0f);
  return grid;
}

std::vector<RobustPoint> eval_robust(TwoHeadModel& model, const ImageDataset& ds,
                                     const std::vector<float>& eps_list,
                                     const AttackConfig& base, int batch_size,
                                     std::uint64_t seed) {
  require_eval_mode(model);
  if (base.use_ss_loss)
    throw std::invalid_argument(
        "eval_robust: test-time attacks use the supervised loss only (use_ss_loss must be off)");
  for (float eps : eps_list)
    if (eps < 0.0f)
      throw std::invalid_argument("eval_robust: eps " + std::to_string(eps) + " < 0");

  std::vector<RobustPoint> out;
  auto rng = make_rng(seed, RngStream::Attack);
  for (float eps : eps_list) {
    RobustPoint pt;
    pt.eps_test = eps;
    if (eps == 0.0f) {
      pt.accuracy = eval_standard(model, ds, batch_size);
      out.push_back(pt);
      continue;
    }
    AttackConfig cfg = base;
    cfg.epsilon = eps;
    cfg.random_start = true;
    cfg.alpha = cfg.norm == Norm::L2 ? eps * 2.0f / static_cast<float>(cfg.steps)
                                     : 2.0f / 255.0f;
    int correct = 0;
    for (const auto& idx : batched_indices(ds.size(), batch_size)) {
      const auto y = ds.batch_labels(idx);
      AdvBatch adv = pgd_attack(model, ds.batch(idx), y, nullptr, nullptr, cfg, rng);
      Graph g(Graph::Scope::All, /*grad_enabled=*/false);
      correct += count_correct(model.predict_sup(g, adv.x_adv), y);
    }
    pt.accuracy = 100.0f * static_cast<float>(correct) / static_cast<float>(ds.size());
    out.push_back(pt);
  }
  return out;
}

CorruptionEval eval_corruptions(TwoHeadModel& model, const std::vector<CorruptionSet>& sets,
                                bool attacked, const AttackConfig& attack_cfg, int batch_size,
                                std::uint64_t seed) {
  require_eval_mode(model);
  CorruptionEval out;
  double sum = 0.0;
  for (const auto& set : sets) {
    CorruptionCell cell;
    cell.kind = set.kind;
    cell.severity = set.severity;
    cell.n_samples = set.data.size();
    if (attacked) {
      auto pts = eval_robust(model, set.data, {attack_cfg.epsilon}, attack_cfg, batch_size, seed);
      cell.accuracy = pts.front().accuracy;
    } else {
      cell.accuracy = eval_standard(model, set.data, batch_size);
    }
    sum += cell.accuracy;
    out.cells.push_back(std::move(cell));
  }
  out.mean_accuracy =
      out.cells.empty() ? 0.0f : static_cast<float>(sum / static_cast<double>(out.cells.size()));
  return out;
}

const char* kReportHeader =
    "model_id,norm,eps_train,mode,lambda1,lambda2,metric,eps_test,corruption,severity,accuracy,"
    "n_samples,seed";

namespace {

std::string fmt_float(float v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
  return buf;
}

std::string fmt_acc(float v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.2f", static_cast<double>(v));
  return buf;
}

std::string row_identity(const ReportRow& r) {
  std::ostringstream os;
  os << r.model_id << ',' << r.norm << ',' << fmt_float(r.eps_train) << ',' << r.mode << ','
     << fmt_float(r.lambda1) << ',' << fmt_float(r.lambda2) << ',' << r.metric << ','
     << fmt_float(r.eps_test) << ',' << r.corruption << ',' << r.severity << ',' << r.n_samples
     << ',' << r.seed;
  return os.str();
}

}  // namespace

std::string ReportRow::key() const { return row_identity(*this); }

std::string format_report_row(const ReportRow& r) {
  std::ostringstream os;
  os << r.model_id << ',' << r.norm << ',' << fmt_float(r.eps_train) << ',' << r.mode << ','
     << fmt_float(r.lambda1) << ',' << fmt_float(r.lambda2) << ',' << r.metric << ','
     << fmt_float(r.eps_test) << ',' << r.corruption << ',' << r.severity << ','
     << fmt_acc(r.accuracy) << ',' << r.n_samples << ',' << r.seed;
  return os.str();
}

void EvalReport::add(ReportRow row) {
  row.accuracy = std::round(row.accuracy * 100.0f) / 100.0f;
  rows.push_back(std::move(row));
}

void EvalReport::merge(const EvalReport& other) {
  for (const auto& r : other.rows) {
    bool dup = false;
    for (const auto& mine : rows)
      if (mine.key() == r.key()) {
        dup = true;
        break;
      }
    if (!dup) rows.push_back(r);
  }
}

void emit_report(const EvalReport& report, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("report: cannot open '" + path + "' for writing");
  os << kReportHeader << '\n';
  for (const auto& r : report.rows) os << format_report_row(r) << '\n';
  if (!os) throw std::runtime_error("report: write failed for '" + path + "'");
}

EvalReport parse_report(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("report: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(is, line) || line != kReportHeader)
    throw std::runtime_error("report: bad header in '" + path + "': " + line);
  EvalReport report;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::string tok;
    std::istringstream ls(line);
    while (std::getline(ls, tok, ',')) f.push_back(tok);
    if (line.back() == ',') f.push_back("");
    if (f.size() != 13)
      throw std::runtime_error("report: row with " + std::to_string(f.size()) +
                               " fields in '" + path + "': " + line);
    ReportRow r;
    r.model_id = f[0];
    r.norm = f[1];
    r.eps_train = std::stof(f[2]);
    r.mode = f[3];
    r.lambda1 = std::stof(f[4]);
    r.lambda2 = std::stof(f[5]);
    r.metric = f[6];
    r.eps_test = std::stof(f[7]);
    r.corruption = f[8];
    r.severity = std::stoi(f[9]);
    r.accuracy = std::stof(f[10]);
    r.n_samples = std::stoi(f[11]);
    r.seed = std::stoull(f[12]);
    report.rows.push_back(std::move(r));
  }
  return report;
}

}  // namespace advlab
