#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "rpm/core.hpp"
#include "rpm/eval.hpp"
#include "rpm/model.hpp"
#include "rpm/numkit/adam.hpp"
#include "rpm/rng.hpp"

namespace rpm {

enum class Phase : std::uint8_t { kRandom, kQuery };
// Random-only, Query-only, or Random followed by Query fine-tuning.
enum class MaskingPlan : std::uint8_t { kRandom, kQuery, kCombined };

std::string_view to_string(Phase p);
std::string_view to_string(MaskingPlan p);
std::optional<MaskingPlan> masking_from_name(std::string_view s);

struct TrainConfig {
  MaskingPlan plan = MaskingPlan::kCombined;
  int random_epochs = 200;
  int query_epochs = 30;
  double masked_multiplier = 2.0;
  double query_multiplier = 0.01;
  int batch_size = 64;
  int patience = 20;
  // Total optimizer-step budget across phases; 0 means unlimited.
  std::int64_t max_steps = 0;
  // Score the training split every epoch (one extra inference pass).
  bool log_train_metrics = true;
  std::uint64_t seed = 0;
  nk::AdamConfig adam;

  // Query-only runs its single phase for random_epochs (200 by default).
  static TrainConfig paper(MaskingPlan plan);
  static TrainConfig desk(MaskingPlan plan);
};

struct Example {
  PanelImages images;
  int mask_slot = kQueryPosition;
  std::array<float, kGridPanels> weights{};
  std::array<PropertyVector, kGridPanels> targets;
};

// Mask slot and per-panel loss weights for one draw: Random masks a uniform
// slot with weight `masked_multiplier` (others 1); Query masks slot 8 with
// weight `query_multiplier` and zero elsewhere.
std::pair<int, std::array<float, kGridPanels>> draw_mask(Phase phase, Rng& rng, const TrainConfig& cfg = {});

Example make_example(const RpmTask& task, Phase phase, Rng& rng, const TrainConfig& cfg = {});

// Weighted loss of one example on `tape`; scalar node.
nk::Var<float> example_loss(const Model& model, nk::Tape<float>& tape, const std::vector<nk::Var<float>>& bound,
                            const Example& ex, const PassOptions& opts);

struct EpochLog {
  int epoch = 0;
  Phase phase = Phase::kRandom;
  MetricReport train;
  MetricReport validation;
  double train_loss = 0.0;
  double validation_loss = 0.0;
  double seconds = 0.0;
};

void write_epoch_csv(std::ostream& out, std::span<const EpochLog> logs);

struct TrainResult {
  std::vector<EpochLog> logs;
  // Epoch (within its phase) and validation loss of the returned parameters.
  Phase best_phase = Phase::kRandom;
  int best_epoch = 0;
  double best_validation_loss = 0.0;
  std::int64_t steps = 0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

// Trains in place and leaves the model holding the selected parameters.
// Throws kEmptyDataset, or kNonFiniteLoss naming the batch.
TrainResult run_training(Model& model, std::span<const RpmTask> train, std::span<const RpmTask> validation,
                         const TrainConfig& cfg, const EpochCallback& on_epoch = {});

}  // namespace rpm
