#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "rpm/codec.hpp"
#include "rpm/core.hpp"
#include "rpm/model.hpp"
#include "rpm/rng.hpp"

namespace rpm {

enum class PanelScope : std::uint8_t { kPrediction, kClassification };

std::string_view to_string(PanelScope s);
std::optional<PanelScope> scope_from_name(std::string_view s);

// Percentages except avg_h, which is in relevant-variable units [0, 37].
struct MetricReport {
  PanelScope scope = PanelScope::kPrediction;
  std::size_t panels = 0;
  double correct = 0.0;
  double prop_rate = 0.0;
  double avg_prop = 0.0;
  double avg_h = 0.0;
  double prop_acc = 0.0;
};

// Kinds averaged by PropAcc.
enum class PropertyKind : std::uint8_t { kArrangement = 0, kPresence, kType, kSize, kColor };
inline constexpr int kPropertyKinds = 5;

// Per-variable comparison of one decoded prediction against its target,
// with relevance taken from the target.
struct PanelComparison {
  int relevant = 0;
  int matched = 0;
  std::array<int, kPropertyKinds> kind_relevant{};
  std::array<int, kPropertyKinds> kind_matched{};

  int hamming() const { return relevant - matched; }
  bool all_correct() const { return matched == relevant; }
};

PanelComparison compare_panels(const PropertyVector& predicted, const PropertyVector& target);

class MetricAccumulator {
 public:
  explicit MetricAccumulator(PanelScope scope) : scope_(scope) {}
  void add(const PropertyVector& predicted, const PropertyVector& target);
  void add(const PanelComparison& c);
  PanelScope scope() const { return scope_; }
  std::size_t panels() const { return panels_; }
  // Throws kEmptyDataset when nothing was added.
  MetricReport report() const;

 private:
  PanelScope scope_;
  std::size_t panels_ = 0;
  std::size_t all_correct_ = 0;
  std::uint64_t relevant_ = 0;
  std::uint64_t matched_ = 0;
  double fraction_sum_ = 0.0;
  std::uint64_t hamming_sum_ = 0;
  std::array<std::uint64_t, kPropertyKinds> kind_relevant_{};
  std::array<std::uint64_t, kPropertyKinds> kind_matched_{};
};

// Model outputs with the query masked; the single pass shared by metrics,
// the solver's prediction step and the error-structure analysis.
std::array<EncodedPanel, kGridPanels> query_pass(const PanelPredictor& model, const RpmTask& task);

// Adds one task's panels for `scope` from a query_pass output: the query for
// prediction, the 8 visible context panels for classification.
void accumulate_task(MetricAccumulator& acc, const std::array<EncodedPanel, kGridPanels>& outputs,
                     const RpmTask& task);

MetricReport property_metrics(const PanelPredictor& model, std::span<const RpmTask> tasks, PanelScope scope);

enum class ClassificationSource : std::uint8_t { kModel, kGroundTruth };

struct DcmRecord {
  int correct_index = 0;
  EncodedPanel prediction;
  std::array<EncodedPanel, kAnswerPanels> classifications;
  std::array<double, kAnswerPanels> prob_distance{};
  std::array<double, kAnswerPanels> hamming_distance{};
  int chosen_prob = 0;
  // Lowest index among the minimal-Hamming answers.
  int chosen_hamming = 0;
  // Minimal-Hamming answers, ascending.
  std::vector<int> hamming_best;

  bool tie() const { return hamming_best.size() > 1; }
  bool top_success() const;
  bool unique_success() const { return !tie() && hamming_best.front() == correct_index; }
  bool prob_success() const { return chosen_prob == correct_index; }
};

// Fills distances and choices from prediction and classifications.
void score_record(DcmRecord& r);

DcmRecord dcm_solve(const PanelPredictor& model, const RpmTask& task, ClassificationSource source);

struct ChoiceReport {
  double acc_prob = 0.0;
  double acc_top = 0.0;
  double acc_unique = 0.0;
  std::vector<DcmRecord> records;
};

ChoiceReport summarize_choices(std::vector<DcmRecord> records);
ChoiceReport choice_metrics(const PanelPredictor& model, std::span<const RpmTask> tasks, ClassificationSource source);

// Picks the answer agreeing most with the per-dimension modal values of the
// answer set, normalized by each answer's relevant count. Reads no context.
int context_blind_solve(const std::array<PropertyVector, kAnswerPanels>& answers);

struct AuditReport {
  std::size_t tasks = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;  // percent
};

AuditReport audit(std::span<const RpmTask> tasks);

// |predicted index - true index| counts per object attribute, over slots
// present in the target. Predicted indices are raw per-block argmaxes.
struct ErrorHistogram {
  std::array<std::vector<std::uint64_t>, 3> counts = {std::vector<std::uint64_t>(kNumColors),
                                                      std::vector<std::uint64_t>(kNumSizes),
                                                      std::vector<std::uint64_t>(kNumTypes)};

  void add(const EncodedPanel& prediction, const PropertyVector& target);
  std::uint64_t total(ObjectAttribute a) const;
  std::span<const std::uint64_t> bins(ObjectAttribute a) const { return counts[static_cast<int>(a)]; }
};

ErrorHistogram error_structure(const PanelPredictor& model, std::span<const RpmTask> tasks);

// Emits encode() of the panels it is given, including the masked one.
class OraclePredictor : public PanelPredictor {
 public:
  std::array<EncodedPanel, kGridPanels> predict(const std::array<PropertyVector, kGridPanels>& panels,
                                                std::optional<int> masked) const override;
};

// Random normalized distributions; each call advances an internal stream.
class RandomPredictor : public PanelPredictor {
 public:
  explicit RandomPredictor(std::uint64_t seed) : rng_(seed) {}
  std::array<EncodedPanel, kGridPanels> predict(const std::array<PropertyVector, kGridPanels>& panels,
                                                std::optional<int> masked) const override;
  EncodedPanel sample() const;

 private:
  mutable Rng rng_;
};

}  // namespace rpm
