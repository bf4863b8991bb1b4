#include "rpm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "rpm/error.hpp"

namespace rpm {

namespace {

constexpr std::array<std::string_view, 2> kScopeNames = {"prediction", "classification"};

double percent(double num, double den) { return den == 0.0 ? 0.0 : 100.0 * num / den; }

int block_argmax(const EncodedPanel& e, int offset, int length) {
  int best = 0;
  for (int i = 1; i < length; ++i) {
    if (e.values[offset + i] > e.values[offset + best]) best = i;
  }
  return best;
}

}  // namespace

std::string_view to_string(PanelScope s) { return kScopeNames[static_cast<int>(s)]; }

std::optional<PanelScope> scope_from_name(std::string_view s) {
  for (int i = 0; i < 2; ++i) {
    if (kScopeNames[i] == s) return static_cast<PanelScope>(i);
  }
  return std::nullopt;
}

PanelComparison compare_panels(const PropertyVector& predicted, const PropertyVector& target) {
  PanelComparison c;
  auto count = [&](PropertyKind k, bool ok) {
    const int i = static_cast<int>(k);
    ++c.kind_relevant[i];
    ++c.relevant;
    if (ok) {
      ++c.kind_matched[i];
      ++c.matched;
    }
  };
  const auto rel = resolve_relevance(target);
  count(PropertyKind::kArrangement, predicted.arrangement == target.arrangement);
  for (int i = 0; i < kNumSlots; ++i) {
    if (rel.present_relevant[i]) count(PropertyKind::kPresence, predicted.present[i] == target.present[i]);
    if (!rel.object_relevant[i]) continue;
    const auto& t = *target.objects[i];
    const auto& p = predicted.objects[i];
    count(PropertyKind::kColor, p && p->color == t.color);
    count(PropertyKind::kSize, p && p->size == t.size);
    count(PropertyKind::kType, p && p->type == t.type);
  }
  return c;
}

void MetricAccumulator::add(const PropertyVector& predicted, const PropertyVector& target) {
  add(compare_panels(predicted, target));
}

void MetricAccumulator::add(const PanelComparison& c) {
  ++panels_;
  all_correct_ += c.all_correct();
  relevant_ += c.relevant;
  matched_ += c.matched;
  fraction_sum_ += static_cast<double>(c.matched) / c.relevant;
  hamming_sum_ += c.hamming();
  for (int k = 0; k < kPropertyKinds; ++k) {
    kind_relevant_[k] += c.kind_relevant[k];
    kind_matched_[k] += c.kind_matched[k];
  }
}

MetricReport MetricAccumulator::report() const {
  if (panels_ == 0) throw Error(ErrorCode::kEmptyDataset, "no panels to score");
  MetricReport r;
  r.scope = scope_;
  r.panels = panels_;
  const auto n = static_cast<double>(panels_);
  r.correct = percent(all_correct_, n);
  r.prop_rate = percent(matched_, relevant_);
  r.avg_prop = 100.0 * fraction_sum_ / n;
  r.avg_h = hamming_sum_ / n;
  // Kinds never relevant in the data (cannot happen for arrangement or
  // presence) are left out of the average.
  double acc = 0.0;
  int kinds = 0;
  for (int k = 0; k < kPropertyKinds; ++k) {
    if (kind_relevant_[k] == 0) continue;
    acc += percent(kind_matched_[k], kind_relevant_[k]);
    ++kinds;
  }
  r.prop_acc = acc / kinds;
  return r;
}

std::array<EncodedPanel, kGridPanels> query_pass(const PanelPredictor& model, const RpmTask& task) {
  return model.predict(task.completed(), kQueryPosition);
}

void accumulate_task(MetricAccumulator& acc, const std::array<EncodedPanel, kGridPanels>& outputs,
                     const RpmTask& task) {
  if (acc.scope() == PanelScope::kPrediction) {
    acc.add(decode(outputs[kQueryPosition]), task.query_truth);
    return;
  }
  for (int i = 0; i < kContextPanels; ++i) acc.add(decode(outputs[i]), task.context[i]);
}

MetricReport property_metrics(const PanelPredictor& model, std::span<const RpmTask> tasks, PanelScope scope) {
  if (tasks.empty()) throw Error(ErrorCode::kEmptyDataset, "property_metrics: empty dataset");
  MetricAccumulator acc(scope);
  for (const auto& t : tasks) accumulate_task(acc, query_pass(model, t), t);
  return acc.report();
}

bool DcmRecord::top_success() const {
  return std::find(hamming_best.begin(), hamming_best.end(), correct_index) != hamming_best.end();
}

void score_record(DcmRecord& r) {
  for (int i = 0; i < kAnswerPanels; ++i) {
    r.prob_distance[i] = dcm_distance(r.prediction, r.classifications[i], DistanceKind::kProb);
    r.hamming_distance[i] = dcm_distance(r.prediction, r.classifications[i], DistanceKind::kHamming);
  }
  r.chosen_prob = static_cast<int>(std::min_element(r.prob_distance.begin(), r.prob_distance.end()) - r.prob_distance.begin());
  const double best = *std::min_element(r.hamming_distance.begin(), r.hamming_distance.end());
  r.hamming_best.clear();
  for (int i = 0; i < kAnswerPanels; ++i) {
    if (r.hamming_distance[i] == best) r.hamming_best.push_back(i);
  }
  r.chosen_hamming = r.hamming_best.front();
}

DcmRecord dcm_solve(const PanelPredictor& model, const RpmTask& task, ClassificationSource source) {
  DcmRecord r;
  r.correct_index = task.correct_index;
  r.prediction = query_pass(model, task)[kQueryPosition];
  for (int i = 0; i < kAnswerPanels; ++i) {
    r.classifications[i] = source == ClassificationSource::kGroundTruth
                               ? encode(task.answers[i])
                               : model.predict(task.with_answer(i), std::nullopt)[kQueryPosition];
  }
  score_record(r);
  return r;
}

ChoiceReport summarize_choices(std::vector<DcmRecord> records) {
  if (records.empty()) throw Error(ErrorCode::kEmptyDataset, "choice_metrics: empty dataset");
  ChoiceReport rep;
  std::size_t prob = 0, top = 0, unique = 0;
  for (const auto& r : records) {
    prob += r.prob_success();
    top += r.top_success();
    unique += r.unique_success();
  }
  const auto n = static_cast<double>(records.size());
  rep.acc_prob = percent(prob, n);
  rep.acc_top = percent(top, n);
  rep.acc_unique = percent(unique, n);
  rep.records = std::move(records);
  return rep;
}

ChoiceReport choice_metrics(const PanelPredictor& model, std::span<const RpmTask> tasks, ClassificationSource source) {
  std::vector<DcmRecord> records;
  records.reserve(tasks.size());
  for (const auto& t : tasks) records.push_back(dcm_solve(model, t, source));
  return summarize_choices(std::move(records));
}

int context_blind_solve(const std::array<PropertyVector, kAnswerPanels>& answers) {
  // Dimension ids: 0 arrangement, 1 + slot presence, then per slot and
  // attribute. Values counted per dimension over the answers defining it.
  auto dim_of = [](int slot, ObjectAttribute a) { return 1 + kNumSlots + 3 * slot + static_cast<int>(a); };
  constexpr int kDims = 1 + kNumSlots + 3 * kNumSlots;
  std::array<std::map<int, int>, kDims> counts;
  for (const auto& p : answers) {
    ++counts[0][static_cast<int>(p.arrangement)];
    for (int i = 0; i < kNumSlots; ++i) {
      ++counts[1 + i][p.present[i]];
      if (!p.objects[i]) continue;
      for (auto a : {ObjectAttribute::kColor, ObjectAttribute::kSize, ObjectAttribute::kType}) {
        ++counts[dim_of(i, a)][get_attribute(*p.objects[i], a)];
      }
    }
  }
  auto modal = [&](int dim, int value) {
    int top = 0;
    for (const auto& [v, c] : counts[dim]) top = std::max(top, c);
    auto it = counts[dim].find(value);
    return it != counts[dim].end() && it->second == top;
  };
  int best = 0;
  double best_score = -1.0;
  for (int k = 0; k < kAnswerPanels; ++k) {
    const auto& p = answers[k];
    const auto rel = resolve_relevance(p);
    int hits = modal(0, static_cast<int>(p.arrangement));
    for (int i = 0; i < kNumSlots; ++i) {
      if (rel.present_relevant[i]) hits += modal(1 + i, p.present[i]);
      if (!rel.object_relevant[i]) continue;
      for (auto a : {ObjectAttribute::kColor, ObjectAttribute::kSize, ObjectAttribute::kType}) {
        hits += modal(dim_of(i, a), get_attribute(*p.objects[i], a));
      }
    }
    const double score = static_cast<double>(hits) / rel.relevant_count();
    if (score > best_score) {
      best_score = score;
      best = k;
    }
  }
  return best;
}

AuditReport audit(std::span<const RpmTask> tasks) {
  if (tasks.empty()) throw Error(ErrorCode::kEmptyDataset, "audit: empty dataset");
  AuditReport r;
  r.tasks = tasks.size();
  for (const auto& t : tasks) r.correct += context_blind_solve(t.answers) == t.correct_index;
  r.accuracy = percent(r.correct, r.tasks);
  return r;
}

void ErrorHistogram::add(const EncodedPanel& prediction, const PropertyVector& target) {
  const auto rel = resolve_relevance(target);
  for (int i = 0; i < kNumSlots; ++i) {
    if (!rel.object_relevant[i]) continue;
    for (auto a : {ObjectAttribute::kColor, ObjectAttribute::kSize, ObjectAttribute::kType}) {
      const int predicted = block_argmax(prediction, attribute_offset(i, a), attribute_domain(a));
      const int truth = get_attribute(*target.objects[i], a);
      ++counts[static_cast<int>(a)][std::abs(predicted - truth)];
    }
  }
}

std::uint64_t ErrorHistogram::total(ObjectAttribute a) const {
  std::uint64_t n = 0;
  for (auto c : counts[static_cast<int>(a)]) n += c;
  return n;
}

ErrorHistogram error_structure(const PanelPredictor& model, std::span<const RpmTask> tasks) {
  if (tasks.empty()) throw Error(ErrorCode::kEmptyDataset, "error_structure: empty dataset");
  ErrorHistogram h;
  for (const auto& t : tasks) h.add(query_pass(model, t)[kQueryPosition], t.query_truth);
  return h;
}

std::array<EncodedPanel, kGridPanels> OraclePredictor::predict(const std::array<PropertyVector, kGridPanels>& panels,
                                                               std::optional<int>) const {
  std::array<EncodedPanel, kGridPanels> out;
  for (int i = 0; i < kGridPanels; ++i) out[i] = encode(panels[i]);
  return out;
}

EncodedPanel RandomPredictor::sample() const {
  EncodedPanel e;
  for (const auto& seg : segments()) {
    if (seg.binary()) {
      e.values[seg.offset] = static_cast<float>(rng_.uniform());
      continue;
    }
    double total = 0.0;
    for (int j = 0; j < seg.length; ++j) {
      const double v = -std::log(1.0 - rng_.uniform());
      e.values[seg.offset + j] = static_cast<float>(v);
      total += v;
    }
    for (int j = 0; j < seg.length; ++j) e.values[seg.offset + j] = static_cast<float>(e.values[seg.offset + j] / total);
  }
  return e;
}

std::array<EncodedPanel, kGridPanels> RandomPredictor::predict(const std::array<PropertyVector, kGridPanels>&,
                                                               std::optional<int>) const {
  std::array<EncodedPanel, kGridPanels> out;
  for (auto& e : out) e = sample();
  return out;
}

}  // namespace rpm
