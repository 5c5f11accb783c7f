#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "advlab/attack.hpp"
#include "advlab/data.hpp"
#include "advlab/eval.hpp"
#include "advlab/model.hpp"
#include "advlab/ss_task.hpp"
#include "doctest.h"
#include "test_util.hpp"

using advlab::AttackConfig;
using advlab::EvalReport;
using advlab::ReportRow;

namespace {

/// Smallest index attaining the row maximum; stated as "first index whose
/// value is not exceeded by any other" to stay independent of scan order.
int argmax_lowest(const float* row, int n) {
  for (int i = 0; i < n; ++i) {
    bool beaten = false;
    for (int j = 0; j < n; ++j)
      if (row[j] > row[i]) beaten = true;
    if (!beaten) return i;
  }
  return -1;
}

float manual_accuracy(advlab::TwoHeadModel& model, const advlab::ImageDataset& ds) {
  int correct = 0;
  for (int i = 0; i < ds.size(); ++i) {
    advlab::Graph g(advlab::Graph::Scope::All, false);
    advlab::Tensor logits = model.predict_sup(g, ds.batch({i}));
    if (argmax_lowest(logits.data(), model.sup_classes()) == ds.labels[static_cast<std::size_t>(i)])
      ++correct;
  }
  return 100.0f * static_cast<float>(correct) / static_cast<float>(ds.size());
}

ReportRow sample_row() {
  ReportRow r;
  r.model_id = "m1";
  r.norm = "linf";
  r.eps_train = 0.25f;
  r.mode = "T3";
  r.lambda1 = 0.5f;
  r.lambda2 = 0.0f;
  r.metric = "RA";
  r.eps_test = 0.1f;
  r.corruption = "";
  r.severity = 0;
  r.accuracy = 51.5f;
  r.n_samples = 256;
  r.seed = 7;
  return r;
}

}  // namespace

TEST_CASE("eval_standard: manual oracle, batch invariance, guards") {
  advlab::TwoHeadModel model = testutil::small_model(60);
  model.set_training(false);
  advlab::ImageDataset ds = testutil::tiny_dataset(17, 4, 61);

  const float acc = advlab::eval_standard(model, ds, 5);
  CHECK(acc == manual_accuracy(model, ds));
  CHECK(advlab::eval_standard(model, ds, 17) == acc);
  CHECK(advlab::eval_standard(model, ds, 1) == acc);
  CHECK(advlab::eval_standard(model, ds, 1000) == acc);

  model.set_training(true);
  CHECK_THROWS_AS(advlab::eval_standard(model, ds, 5), std::logic_error);
  model.set_training(false);
  advlab::ImageDataset empty;
  CHECK_THROWS_AS(advlab::eval_standard(model, empty, 5), std::invalid_argument);
  CHECK_THROWS_AS(advlab::eval_standard(model, ds, 0), std::invalid_argument);
}

TEST_CASE("eval_standard: argmax ties resolve to the lowest class index") {
  advlab::TwoHeadModel model = testutil::small_model(62);
  model.set_training(false);
  for (auto& p : model.parameters())
    if (p.name == "sup.w" || p.name == "sup.b") {
      float* v = p.tensor.data();
      for (std::int64_t i = 0; i < p.tensor.numel(); ++i) v[i] = 0.0f;
    }
  // all logits identical -> every prediction is class 0
  advlab::ImageDataset ds = testutil::tiny_dataset(20, 4, 63);
  int zeros = 0;
  for (int y : ds.labels) zeros += y == 0;
  CHECK(advlab::eval_standard(model, ds, 7) ==
        100.0f * static_cast<float>(zeros) / static_cast<float>(ds.size()));
}

TEST_CASE("eval_ss_accuracy: deterministic transforms, batch invariance") {
  advlab::TwoHeadModel model = testutil::small_model(64);
  model.set_training(false);
  advlab::ImageDataset ds = testutil::tiny_dataset(13, 4, 65);
  advlab::SSTask task = advlab::make_rotation_task();

  const float acc = advlab::eval_ss_accuracy(model, task, ds, 4, 9);
  CHECK(acc == advlab::eval_ss_accuracy(model, task, ds, 4, 9));
  CHECK(acc == advlab::eval_ss_accuracy(model, task, ds, 13, 9));
  CHECK(acc == advlab::eval_ss_accuracy(model, task, ds, 1, 9));
  CHECK(acc >= 0.0f);
  CHECK(acc <= 100.0f);

  model.set_training(true);
  CHECK_THROWS_AS(advlab::eval_ss_accuracy(model, task, ds, 4, 9), std::logic_error);
}

TEST_CASE("default_eps_grid per norm") {
  CHECK(advlab::default_eps_grid(advlab::Norm::L2) ==
        std::vector<float>{0.0f, 0.01f, 0.03f, 0.05f, 0.07f, 0.1f, 0.25f, 0.5f, 0.75f, 1.0f,
                           2.0f, 3.0f});
  const auto linf = advlab::default_eps_grid(advlab::Norm::Linf);
  REQUIRE(linf.size() == 11);
  for (int i = 0; i <= 10; ++i)
    CHECK(linf[static_cast<std::size_t>(i)] == static_cast<float>(i) / 255.0f);
}

TEST_CASE("eval_robust") {
  advlab::TwoHeadModel model = testutil::small_model(66);
  model.set_training(false);
  advlab::ImageDataset ds = testutil::tiny_dataset(12, 4, 67);

  AttackConfig base;
  base.norm = advlab::Norm::Linf;
  base.epsilon = 8.0f / 255.0f;  // overridden per grid point
  base.alpha = 2.0f / 255.0f;
  base.steps = 3;

  SUBCASE("eps zero short-circuits to the standard accuracy") {
    auto pts = advlab::eval_robust(model, ds, {0.0f, 0.05f}, base, 6, 5);
    REQUIRE(pts.size() == 2);
    CHECK(pts[0].eps_test == 0.0f);
    CHECK(pts[0].accuracy == advlab::eval_standard(model, ds, 6));
    CHECK(pts[1].eps_test == 0.05f);
    CHECK(pts[1].accuracy >= 0.0f);
    CHECK(pts[1].accuracy <= 100.0f);
  }

  SUBCASE("deterministic and batch-size invariant") {
    auto a = advlab::eval_robust(model, ds, {0.05f}, base, 6, 5);
    auto b = advlab::eval_robust(model, ds, {0.05f}, base, 6, 5);
    CHECK(a[0].accuracy == b[0].accuracy);
    auto c = advlab::eval_robust(model, ds, {0.05f}, base, 12, 5);
    auto d = advlab::eval_robust(model, ds, {0.05f}, base, 1, 5);
    CHECK(a[0].accuracy == c[0].accuracy);
    CHECK(a[0].accuracy == d[0].accuracy);
  }

  SUBCASE("guards") {
    AttackConfig joint = base;
    joint.use_ss_loss = true;
    joint.lambda2 = 1.0f;
    CHECK_THROWS_AS(advlab::eval_robust(model, ds, {0.05f}, joint, 6, 5),
                    std::invalid_argument);
    CHECK_THROWS_AS(advlab::eval_robust(model, ds, {-0.01f}, base, 6, 5),
                    std::invalid_argument);
    model.set_training(true);
    CHECK_THROWS_AS(advlab::eval_robust(model, ds, {0.05f}, base, 6, 5), std::logic_error);
    model.set_training(false);
  }
}

TEST_CASE("eval_corruptions") {
  advlab::TwoHeadModel model = testutil::small_model(68);
  model.set_training(false);
  advlab::ImageDataset base = testutil::tiny_dataset(10, 4, 69);

  std::vector<advlab::CorruptionSet> sets;
  for (const auto& kind : {"brightness", "contrast"})
    for (int sev : {1, 3}) sets.push_back(advlab::generate_corruptions(base, kind, sev, 4));

  AttackConfig atk;
  atk.epsilon = 0.0f;
  atk.alpha = 0.0f;
  atk.steps = 0;

  advlab::CorruptionEval clean = advlab::eval_corruptions(model, sets, false, atk, 4, 3);
  REQUIRE(clean.cells.size() == 4);
  double sum = 0.0;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    CHECK(clean.cells[i].kind == sets[i].kind);
    CHECK(clean.cells[i].severity == sets[i].severity);
    CHECK(clean.cells[i].n_samples == 10);
    CHECK(clean.cells[i].accuracy == advlab::eval_standard(model, sets[i].data, 4));
    sum += clean.cells[i].accuracy;
  }
  CHECK(clean.mean_accuracy == doctest::Approx(sum / 4.0).epsilon(1e-6));

  // an attacked pass at eps=0 reproduces the clean numbers exactly
  advlab::CorruptionEval attacked = advlab::eval_corruptions(model, sets, true, atk, 4, 3);
  for (std::size_t i = 0; i < sets.size(); ++i)
    CHECK(attacked.cells[i].accuracy == clean.cells[i].accuracy);

  CHECK(advlab::eval_corruptions(model, {}, false, atk, 4, 3).mean_accuracy == 0.0f);
}

TEST_CASE("report rows: formatting, rounding, keys") {
  ReportRow r = sample_row();
  CHECK(advlab::format_report_row(r) == "m1,linf,0.25,T3,0.5,0,RA,0.100000001,,0,51.50,256,7");

  ReportRow c = sample_row();
  c.metric = "corruption";
  c.eps_test = 0.0f;
  c.corruption = "gaussian_noise";
  c.severity = 4;
  CHECK(advlab::format_report_row(c) ==
        "m1,linf,0.25,T3,0.5,0,corruption,0,gaussian_noise,4,51.50,256,7");

  // identity covers everything except accuracy
  ReportRow k = sample_row();
  k.accuracy = 12.34f;
  CHECK(k.key() == r.key());
  k.seed = 8;
  CHECK(k.key() != r.key());

  EvalReport rep;
  ReportRow raw = sample_row();
  raw.accuracy = 51.5649f;
  rep.add(raw);
  CHECK(rep.rows[0].accuracy == 51.56f);
  raw.accuracy = 51.566f;
  rep.add(raw);
  CHECK(rep.rows[1].accuracy == doctest::Approx(51.57f).epsilon(1e-6));
}

TEST_CASE("report emit/parse round trip and merge") {
  testutil::TempDir tmp;
  EvalReport rep;
  ReportRow a = sample_row();
  ReportRow b = sample_row();
  b.metric = "TA";
  b.eps_test = 0.0f;
  b.accuracy = 83.219f;
  ReportRow c = sample_row();
  c.corruption = "shot_noise";
  c.metric = "corruption_RA";
  c.severity = 2;
  rep.add(a);
  rep.add(b);
  rep.add(c);

  const std::string path = tmp.file("report.csv");
  advlab::emit_report(rep, path);

  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == advlab::kReportHeader);
  CHECK(std::string(advlab::kReportHeader) ==
        "model_id,norm,eps_train,mode,lambda1,lambda2,metric,eps_test,corruption,severity,"
        "accuracy,n_samples,seed");

  EvalReport back = advlab::parse_report(path);
  REQUIRE(back.rows.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back.rows[i].key() == rep.rows[i].key());
    CHECK(back.rows[i].accuracy == rep.rows[i].accuracy);
  }
  CHECK(back.rows[1].metric == "TA");
  CHECK(back.rows[2].corruption == "shot_noise");

  SUBCASE("merge keeps the first row per key") {
    EvalReport first;
    ReportRow r1 = sample_row();
    r1.accuracy = 10.0f;
    first.add(r1);

    EvalReport second;
    ReportRow r2 = sample_row();  // same identity, different measurement
    r2.accuracy = 99.0f;
    second.add(r2);
    ReportRow r3 = sample_row();
    r3.seed = 100;
    second.add(r3);

    EvalReport merged;
    merged.merge(first);
    merged.merge(second);
    REQUIRE(merged.rows.size() == 2);
    CHECK(merged.rows[0].accuracy == 10.0f);
    CHECK(merged.rows[1].seed == 100);
  }

  SUBCASE("parse errors") {
    const std::string bad = tmp.file("bad.csv");
    testutil::write_text(bad, "not,the,header\n");
    CHECK_THROWS_AS(advlab::parse_report(bad), std::runtime_error);

    const std::string shortrow = tmp.file("short.csv");
    testutil::write_text(shortrow, std::string(advlab::kReportHeader) + "\nm1,linf,0.25\n");
    CHECK_THROWS_AS(advlab::parse_report(shortrow), std::runtime_error);

    CHECK_THROWS_AS(advlab::parse_report(tmp.file("absent.csv")), std::runtime_error);
  }
}
