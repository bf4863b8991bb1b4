// Acceptance checks: one PASS/FAIL line per criterion. Pass criterion
// numbers as arguments to run a subset.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <functional>
#include <set>
#include <sstream>
#include <string>

#include "oracles.hpp"
#include "rpm/eval.hpp"
#include "rpm/io.hpp"
#include "rpm/model.hpp"
#include "rpm/numkit/gradcheck.hpp"
#include "rpm/taskgen.hpp"
#include "rpm/train.hpp"

using namespace rpm;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

std::string format(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::vector<RpmTask> tasks(BiasMode mode, std::uint64_t count, std::uint64_t seed) {
  GenConfig g;
  g.bias_mode = mode;
  g.count = count;
  g.base_seed = seed;
  return generate_tasks(g);
}

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

Outcome gradients() {
  const double start = cpu_seconds();
  const auto results = nk::run_gradcheck_suite(1, 10);
  const double cpu = cpu_seconds() - start;
  bool ok = cpu < 60.0;
  double worst = 0.0;
  std::string failed;
  for (const auto& r : results) {
    worst = std::max(worst, r.max_rel_error);
    if (!r.passed || r.points < 10 || !(r.max_rel_error < 1e-3)) {
      ok = false;
      failed += " " + r.op;
    }
  }
  return {ok, format("%zu ops x 10 points, max rel error %.2e, %.1fs CPU%s", results.size(), worst, cpu,
                     failed.empty() ? "" : (" failed:" + failed).c_str())};
}

Outcome round_trip() {
  Rng rng(2);
  int failures = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto p = oracle::random_vector(rng);
    failures += !(decode(encode(p)) == p);
  }
  return {failures == 0, format("10000 random vectors, %d failures", failures)};
}

Outcome relevance() {
  PropertyVector single;
  single.put(0, ObjectSpec{});
  PropertyVector nine;
  nine.arrangement = ArrangementKind::kDistributeNine;
  for (int s = 5; s < 14; ++s) nine.put(s, ObjectSpec{});
  const int a = relevant_count(single), b = relevant_count(nine);
  Rng rng(3);
  int mismatches = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto p = oracle::random_vector(rng);
    const auto m = resolve_relevance(p);
    const auto o = oracle::relevance(p);
    bool same = m.relevant_count() == o.count;
    for (int s = 0; s < kNumSlots; ++s) {
      same = same && m.present_relevant[s] == (o.v.count(s) == 1) && m.object_relevant[s] == (o.v_prime.count(s) == 1);
    }
    mismatches += !same;
  }
  return {a == 5 && b == 37 && mismatches == 0,
          format("center-single %d, distribute-nine %d, oracle mismatches %d/1000", a, b, mismatches)};
}

Outcome architecture() {
  const auto task = tasks(BiasMode::kUnbiased, 1, 4).front();
  const auto images = prepare_images(task.completed());
  bool ok = true;
  std::string detail;
  for (auto k : {TokenizerKind::kPanel, TokenizerKind::kTask, TokenizerKind::kRow}) {
    Model m(ModelConfig::desk(k));
    Model::Tape tape;
    const auto bound = m.bind(tape, false);
    auto x = m.tokenize(tape, bound, images, kQueryPosition);
    auto o = m.transform(tape, bound, x, {});
    auto y = m.predict_chunks(tape, bound, o);
    const int len = chunk_length(k);
    const int used = 9 * len;
    bool normalized = true;
    for (const auto& e : to_encoded(y.value())) normalized = normalized && is_normalized(e, 1e-6);
    const bool shape = x.dim(0) == token_count(k) && o.dim(0) == x.dim(0) && y.dim(0) == 9 && y.dim(1) == kEncodedDim;
    ok = ok && shape && normalized;
    if (!detail.empty()) detail += "; ";
    detail += format("%s %d tokens = 9x%d%s, out %dx%d%s", std::string(to_string(k)).c_str(), x.dim(0), len,
                     used < x.dim(0) ? format("+%d", x.dim(0) - used).c_str() : "", y.dim(0), y.dim(1),
                     normalized ? "" : " NOT normalized");
  }
  ok = ok && token_count(TokenizerKind::kPanel) == 81 && token_count(TokenizerKind::kTask) == 64 &&
       token_count(TokenizerKind::kRow) == 27 && chunk_length(TokenizerKind::kPanel) == 9 &&
       chunk_length(TokenizerKind::kTask) == 7 && chunk_length(TokenizerKind::kRow) == 3;
  return {ok, detail};
}

Outcome dcm_oracle() {
  const auto data = tasks(BiasMode::kUnbiased, 500, 5);
  OraclePredictor oracle;
  const auto r = choice_metrics(oracle, data, ClassificationSource::kGroundTruth);
  return {r.acc_prob == 100.0 && r.acc_top == 100.0 && r.acc_unique == 100.0,
          format("500 unbiased tasks: AccProb %.2f, AccTop %.2f, AccUnique %.2f", r.acc_prob, r.acc_top, r.acc_unique)};
}

Outcome bias() {
  const auto biased = audit(tasks(BiasMode::kBiased, 500, 6));
  const auto unbiased = audit(tasks(BiasMode::kUnbiased, 500, 7));
  return {biased.accuracy >= 95.0 && std::abs(unbiased.accuracy - 12.5) <= 3.5,
          format("context-blind accuracy: biased %.1f%% (>= 95), unbiased %.1f%% (12.5 +- 3.5)", biased.accuracy,
                 unbiased.accuracy)};
}

Outcome trainability() {
  // Full-batch memorization: 32 tasks, batch 32, so 200 epochs = 200 steps.
  const auto data = tasks(BiasMode::kUnbiased, 32, 8);
  auto mc = ModelConfig::desk(TokenizerKind::kRow);
  mc.seed = 8;
  Model model(mc);
  auto tc = TrainConfig::desk(MaskingPlan::kRandom);
  tc.batch_size = 32;
  tc.max_steps = 200;
  tc.log_train_metrics = false;
  tc.seed = 8;
  const double cpu0 = cpu_seconds();
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = run_training(model, data, data, tc);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const double cpu = cpu_seconds() - cpu0;
  const auto m = property_metrics(model, data, PanelScope::kPrediction);
  return {m.correct >= 90.0 && r.steps <= 200 && cpu < 600.0,
          format("training-subset Correct %.1f%% after %lld steps (selected epoch %d), %.0fs CPU, %.0fs wall",
                 m.correct, static_cast<long long>(r.steps), r.best_epoch, cpu, wall)};
}

Outcome masking_direction() {
  const auto all = tasks(BiasMode::kUnbiased, 2000, 11);
  const std::span<const RpmTask> span(all);
  const auto train = span.subspan(0, 1600), val = span.subspan(1600);
  auto run = [&](MaskingPlan plan) {
    auto mc = ModelConfig::desk(TokenizerKind::kRow);
    mc.seed = 11;
    Model model(mc);
    auto tc = TrainConfig::desk(plan);
    tc.max_steps = 2000;
    tc.log_train_metrics = false;
    tc.seed = 11;
    run_training(model, train, val, tc);
    return property_metrics(model, val, PanelScope::kPrediction);
  };
  const auto random = run(MaskingPlan::kRandom);
  const auto query = run(MaskingPlan::kQuery);
  return {random.correct > query.correct,
          format("validation Correct Random %.2f%% vs Query-only %.2f%% (PropRate %.1f vs %.1f), 2000 steps each",
                 random.correct, query.correct, random.prop_rate, query.prop_rate)};
}

Outcome metric_relations() {
  bool ok = true;
  double max_h = 0.0;
  int runs = 0;
  auto check = [&](const PanelPredictor& p, const std::vector<RpmTask>& data) {
    for (auto scope : {PanelScope::kPrediction, PanelScope::kClassification}) {
      const auto m = property_metrics(p, data, scope);
      ok = ok && m.avg_h >= 0.0 && m.avg_h <= 37.0;
      max_h = std::max(max_h, m.avg_h);
    }
    for (auto src : {ClassificationSource::kModel, ClassificationSource::kGroundTruth}) {
      const auto c = choice_metrics(p, data, src);
      ok = ok && c.acc_unique <= c.acc_top;
      for (const auto& r : c.records) ok = ok && (!r.unique_success() || r.top_success());
      ++runs;
    }
  };
  auto mc = ModelConfig::desk(TokenizerKind::kRow);
  mc.predictor_hidden = 64;
  Model model(mc);
  OraclePredictor oracle;
  RandomPredictor random(9);
  for (auto mode : {BiasMode::kBiased, BiasMode::kUnbiased}) {
    const auto data = tasks(mode, 60, 12);
    check(oracle, data);
    check(random, data);
    check(model, data);
  }
  // Per-panel bound on the extreme case.
  MetricAccumulator worst(PanelScope::kPrediction);
  PropertyVector single, nine;
  single.put(0, ObjectSpec{0, 0, 0});
  nine.arrangement = ArrangementKind::kDistributeNine;
  for (int s = 5; s < 14; ++s) nine.put(s, ObjectSpec{5, 5, 4});
  worst.add(single, nine);
  const double h37 = worst.report().avg_h;
  ok = ok && h37 == 37.0;

  // Tie fixture: the correct answer and one distractor at equal minimal
  // Hamming distance.
  DcmRecord tie;
  tie.correct_index = 2;
  PropertyVector pred;
  pred.put(0, ObjectSpec{4, 2, 1});
  tie.prediction = encode(pred);
  for (int i = 0; i < 8; ++i) {
    PropertyVector a;
    a.put(0, ObjectSpec{static_cast<std::uint8_t>(i), 4, 3});
    tie.classifications[i] = encode(a);
  }
  PropertyVector c2, c5;
  c2.put(0, ObjectSpec{5, 2, 1});
  c5.put(0, ObjectSpec{4, 3, 1});
  tie.classifications[2] = encode(c2);
  tie.classifications[5] = encode(c5);
  score_record(tie);
  const auto fixture = summarize_choices({tie});
  const bool tie_ok = tie.tie() && fixture.acc_unique == 0.0 && fixture.acc_top == 100.0;
  ok = ok && tie_ok;
  return {ok, format("%d choice runs with AccUnique <= AccTop, max AvgH %.2f, extreme H %.0f, tie fixture AccUnique "
                     "%.0f / AccTop %.0f",
                     runs, max_h, h37, fixture.acc_unique, fixture.acc_top)};
}

Outcome determinism() {
  const auto data = tasks(BiasMode::kUnbiased, 24, 13);
  const std::span<const RpmTask> span(data);
  auto train_bytes = [&] {
    auto mc = ModelConfig::desk(TokenizerKind::kRow);
    mc.seed = 13;
    Model model(mc);
    auto tc = TrainConfig::desk(MaskingPlan::kRandom);
    tc.max_steps = 10;
    tc.batch_size = 2;
    tc.seed = 13;
    tc.log_train_metrics = false;
    run_training(model, span.subspan(0, 20), span.subspan(20), tc);
    std::ostringstream out;
    write_checkpoint(out, model);
    return out.str();
  };
  const auto a = train_bytes();
  const auto b = train_bytes();
  std::istringstream in(a);
  const auto reloaded = read_checkpoint(in);
  std::ostringstream again;
  write_checkpoint(again, reloaded);
  std::istringstream in2(a);
  const auto original = read_checkpoint(in2);
  auto report = [&](const Model& m) {
    std::ostringstream out;
    write_metric_csv(out, property_metrics(m, span, PanelScope::kPrediction));
    write_choice_csv(out, choice_metrics(m, span, ClassificationSource::kModel));
    return out.str();
  };
  // The in-memory model: rebuild from the same seed and train again.
  auto mc = ModelConfig::desk(TokenizerKind::kRow);
  mc.seed = 13;
  Model live(mc);
  auto tc = TrainConfig::desk(MaskingPlan::kRandom);
  tc.max_steps = 10;
  tc.batch_size = 2;
  tc.seed = 13;
  tc.log_train_metrics = false;
  run_training(live, span.subspan(0, 20), span.subspan(20), tc);
  const bool same_ckpt = a == b;
  const bool round_trip = again.str() == a;
  const bool same_eval = report(live) == report(reloaded);
  return {same_ckpt && round_trip && same_eval,
          format("10-step checkpoints identical: %s, round trip bit-exact: %s, reloaded eval identical: %s (%zu bytes)",
                 same_ckpt ? "yes" : "no", round_trip ? "yes" : "no", same_eval ? "yes" : "no", a.size())};
}

Outcome cost_ordering() {
  const auto row = flops_estimate(ModelConfig::paper(TokenizerKind::kRow));
  const auto task = flops_estimate(ModelConfig::paper(TokenizerKind::kTask));
  const auto panel = flops_estimate(ModelConfig::paper(TokenizerKind::kPanel));
  auto pos = [](TokenizerKind k) { return Model(ModelConfig::paper(k)).param_breakdown().positional; };
  const auto dp = pos(TokenizerKind::kPanel) - pos(TokenizerKind::kTask);
  const auto dt = pos(TokenizerKind::kTask) - pos(TokenizerKind::kRow);
  return {row < task && task < panel && dp == 17u * 128u && dt == 37u * 128u,
          format("MACs Row %.2fM < Task %.2fM < Panel %.2fM; positional deltas %zu and %zu", row / 1e6, task / 1e6,
                 panel / 1e6, dp, dt)};
}

Outcome error_structure_harness() {
  const auto data = tasks(BiasMode::kUnbiased, 10000, 14);
  RandomPredictor random(15);
  const auto h = error_structure(random, data);
  double worst = 0.0;
  for (auto a : {ObjectAttribute::kColor, ObjectAttribute::kSize, ObjectAttribute::kType}) {
    const int n = attribute_domain(a);
    for (int d = 0; d < n; ++d) {
      const double expected = d == 0 ? 1.0 / n : 2.0 * (n - d) / (n * n);
      worst = std::max(worst, std::abs(double(h.bins(a)[d]) / h.total(a) - expected));
    }
  }
  OraclePredictor oracle;
  const auto o = error_structure(oracle, data);
  bool all_zero = true;
  for (auto a : {ObjectAttribute::kColor, ObjectAttribute::kSize, ObjectAttribute::kType}) {
    all_zero = all_zero && o.total(a) > 0 && o.bins(a)[0] == o.total(a);
  }
  return {worst <= 0.02 && all_zero,
          format("random decoder max bin deviation %.2fpp over 10000 tasks; oracle mass at 0: %s", 100 * worst,
                 all_zero ? "100%" : "below 100%")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"gradient correctness", gradients},
      {"codec round-trip", round_trip},
      {"relevance", relevance},
      {"architecture shape", architecture},
      {"DCM oracle sanity", dcm_oracle},
      {"bias reproduction", bias},
      {"trainability", trainability},
      {"masking-regime direction", masking_direction},
      {"metric bounds and relations", metric_relations},
      {"determinism and persistence", determinism},
      {"cost ordering", cost_ordering},
      {"error-structure harness", error_structure_harness},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %2d %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
