#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "rpm/core.hpp"
#include "rpm/rng.hpp"

namespace rpm {

// A group of slots governed by one set of rules. Singles always hold exactly
// one object; grids hold a variable subset of their slots.
struct Component {
  SlotRange slots;
  bool grid = false;
};

std::vector<Component> components(ArrangementKind kind);

struct GenConfig {
  std::array<double, kNumArrangements> arrangement_weights{1, 1, 1, 1, 1, 1, 1};
  BiasMode bias_mode = BiasMode::kUnbiased;
  std::uint64_t base_seed = 0;
  std::uint64_t count = 1;
  // Rule kinds the sampler may pick from. Restricting this can make the
  // grammar unsatisfiable, which surfaces as kGenerationRetryExhausted.
  std::vector<RuleKind> rule_kinds = {RuleKind::kConstant, RuleKind::kProgression,
                                      RuleKind::kArithmetic, RuleKind::kDistributeThree};
};

inline constexpr int kMaxGenerationAttempts = 100;

// Deterministic in (cfg.base_seed, index). Throws Error with
// kGenerationRetryExhausted for unsatisfiable configurations and
// kInvalidArgument for index >= cfg.count or bad weights.
RpmTask sample_task(const GenConfig& cfg, std::uint64_t index);

std::vector<RpmTask> generate_tasks(const GenConfig& cfg);

struct AnswerSet {
  std::array<PropertyVector, kAnswerPanels> answers;
  int correct_index = 0;
};

// Biased: every distractor changes exactly one attribute of one object, so
// the per-dimension modal value over the answers is the truth's value.
// Unbiased: three attribute dimensions are bisected; the eight answers are
// the eight on/off combinations, so every value appears in exactly half the
// answers. Throws kInsufficientAttributeSpace when fewer than three object
// attributes are available in unbiased mode.
AnswerSet generate_answers(const PropertyVector& truth, BiasMode mode, Rng& rng);

}  // namespace rpm
