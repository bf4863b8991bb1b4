#include "rpm/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

#include "rpm/codec.hpp"
#include "rpm/error.hpp"
#include "rpm/numkit/ops.hpp"

namespace rpm {

namespace {

constexpr std::array<std::string_view, 2> kPhaseNames = {"random", "query"};
constexpr std::array<std::string_view, 3> kPlanNames = {"random", "query", "combined"};

// Stream tags for derive_seed so each use of the run seed is independent.
constexpr std::uint64_t kShuffleStream = 0x5eed0001;
constexpr std::uint64_t kValidationStream = 0x5eed0002;
constexpr std::uint64_t kDropoutStream = 0x5eed0003;

using Tape = nk::Tape<float>;
using Var = nk::Var<float>;

struct Targets {
  std::vector<float> target;
  std::vector<float> weight;
  std::vector<std::uint8_t> binary;
};

Targets build_targets(const std::array<PropertyVector, kGridPanels>& panels, const std::array<float, kGridPanels>& w) {
  Targets t;
  t.target.assign(std::size_t(kGridPanels) * kEncodedDim, 0.0f);
  t.weight.assign(t.target.size(), 0.0f);
  t.binary.assign(t.target.size(), 0);
  for (int k = 0; k < kGridPanels; ++k) {
    if (w[k] == 0.0f) continue;
    const auto terms = loss_terms(encode(panels[k]), resolve_relevance(panels[k]));
    const std::size_t base = std::size_t(k) * kEncodedDim;
    for (int j = 0; j < kEncodedDim; ++j) {
      t.target[base + j] = terms.target[j];
      t.weight[base + j] = w[k] * terms.weight[j];
      t.binary[base + j] = terms.binary[j];
    }
  }
  return t;
}

Var loss_on(const Model& model, Tape& tape, const std::vector<Var>& bound, const PanelImages& images, int mask_slot,
            const std::array<float, kGridPanels>& weights, const std::array<PropertyVector, kGridPanels>& targets,
            const PassOptions& opts) {
  const auto t = build_targets(targets, weights);
  Var out = model.forward(tape, bound, images, mask_slot, opts);
  return nk::weighted_log_loss<float>(out, t.target, t.weight, t.binary, static_cast<float>(kProbabilityClamp));
}

struct PhaseRun {
  Phase phase;
  int epochs;
};

std::vector<PhaseRun> phase_plan(const TrainConfig& cfg) {
  switch (cfg.plan) {
    case MaskingPlan::kRandom: return {{Phase::kRandom, cfg.random_epochs}};
    case MaskingPlan::kQuery: return {{Phase::kQuery, cfg.random_epochs}};
    case MaskingPlan::kCombined: return {{Phase::kRandom, cfg.random_epochs}, {Phase::kQuery, cfg.query_epochs}};
  }
  return {};
}

std::vector<std::vector<float>> snapshot(const Model& model) {
  std::vector<std::vector<float>> s;
  for (const auto& p : model.parameters()) s.push_back(p.data);
  return s;
}

void restore(Model& model, const std::vector<std::vector<float>>& s) {
  auto& params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) params[i].data = s[i];
}

class Trainer {
 public:
  Trainer(Model& model, std::span<const RpmTask> train, std::span<const RpmTask> validation, const TrainConfig& cfg)
      : model_(model), train_(train), validation_(validation), cfg_(cfg), shuffle_(derive_seed(cfg.seed, kShuffleStream)) {
    for (const auto& t : train) train_images_.push_back(prepare_images(t.completed()));
    for (const auto& t : validation) validation_images_.push_back(prepare_images(t.completed()));
  }

  TrainResult run(const EpochCallback& on_epoch) {
    TrainResult result;
    const auto plan = phase_plan(cfg_);
    for (std::size_t pi = 0; pi < plan.size() && !budget_spent(); ++pi) {
      const auto [phase, epochs] = plan[pi];
      auto params = model_.parameter_pointers();
      auto adam = nk::make_adam(params, cfg_.adam);
      auto best = snapshot(model_);
      double best_loss = INFINITY;
      int best_epoch = 0;
      int stale = 0;
      auto consider = [&](const EpochLog& log) {
        result.logs.push_back(log);
        if (on_epoch) on_epoch(log);
        if (log.validation_loss < best_loss) {
          best_loss = log.validation_loss;
          best_epoch = log.epoch;
          best = snapshot(model_);
          stale = 0;
        } else {
          ++stale;
        }
      };
      // Fine-tuning starts from the selected checkpoint, which stays a
      // candidate under the new phase's validation loss.
      if (pi > 0) consider(score_epoch(0, phase, NAN, 0.0));
      for (int epoch = 1; epoch <= epochs && !budget_spent() && stale < cfg_.patience; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        const double train_loss = train_epoch(phase, params, adam);
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        consider(score_epoch(epoch, phase, train_loss, seconds));
      }
      restore(model_, best);
      result.best_phase = phase;
      result.best_epoch = best_epoch;
      result.best_validation_loss = best_loss;
    }
    result.steps = steps_;
    return result;
  }

 private:
  bool budget_spent() const { return cfg_.max_steps > 0 && steps_ >= cfg_.max_steps; }

  double train_epoch(Phase phase, const std::vector<nk::Parameter*>& params, nk::AdamState& adam) {
    std::vector<std::size_t> order(train_.size());
    std::iota(order.begin(), order.end(), 0);
    shuffle_.shuffle(order.begin(), order.end());
    const std::size_t batch = std::max(1, cfg_.batch_size);
    double total = 0.0;
    std::size_t seen = 0;
    for (std::size_t b = 0; b < order.size() && !budget_spent(); b += batch) {
      const std::size_t end = std::min(order.size(), b + batch);
      for (auto* p : params) p->zero_grad();
      for (std::size_t k = b; k < end; ++k) {
        const auto& task = train_[order[k]];
        const auto [slot, weights] = draw_mask(phase, shuffle_, cfg_);
        Tape tape;
        auto bound = model_.bind(tape, true);
        PassOptions opts{true, derive_seed(derive_seed(cfg_.seed, kDropoutStream), examples_++)};
        Var loss = loss_on(model_, tape, bound, train_images_[order[k]], slot, weights, task.completed(), opts);
        const double value = loss.item();
        if (!std::isfinite(value)) {
          throw Error(ErrorCode::kNonFiniteLoss, "non-finite loss in batch " + std::to_string(steps_) +
                                                     " (task index " + std::to_string(task.index) + ")");
        }
        total += value;
        ++seen;
        tape.backward(loss);
        for (std::size_t i = 0; i < params.size(); ++i) {
          auto g = tape.grad_view(bound[i].id());
          if (g.empty()) continue;
          auto& dst = params[i]->grad;
          for (std::size_t j = 0; j < g.size(); ++j) dst[j] += g[j];
        }
      }
      const float inv = 1.0f / static_cast<float>(end - b);
      for (auto* p : params) {
        for (auto& g : p->grad) g *= inv;
      }
      nk::adam_step(adam, params);
      ++steps_;
    }
    return seen ? total / seen : NAN;
  }

  // Phase-consistent weighted loss and query-prediction metrics. The
  // validation mask stream restarts every epoch so losses are comparable.
  std::pair<double, MetricReport> score(std::span<const RpmTask> tasks, const std::vector<PanelImages>& images,
                                        Phase phase, bool with_loss) const {
    MetricAccumulator acc(PanelScope::kPrediction);
    double total = 0.0;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      const auto outputs = model_.predict_images(images[i], kQueryPosition);
      accumulate_task(acc, outputs, tasks[i]);
      if (!with_loss) continue;
      Rng rng(derive_seed(derive_seed(cfg_.seed, kValidationStream), i));
      const auto [slot, weights] = draw_mask(phase, rng, cfg_);
      Tape tape;
      auto bound = model_.bind(tape, false);
      total += loss_on(model_, tape, bound, images[i], slot, weights, tasks[i].completed(), {}).item();
    }
    return {with_loss ? total / tasks.size() : NAN, acc.report()};
  }

  EpochLog score_epoch(int epoch, Phase phase, double train_loss, double seconds) const {
    EpochLog log;
    log.epoch = epoch;
    log.phase = phase;
    log.train_loss = train_loss;
    log.seconds = seconds;
    auto [vloss, vreport] = score(validation_, validation_images_, phase, true);
    log.validation_loss = vloss;
    log.validation = vreport;
    if (cfg_.log_train_metrics) log.train = score(train_, train_images_, phase, false).second;
    if (!std::isfinite(vloss)) {
      throw Error(ErrorCode::kNonFiniteLoss, "non-finite validation loss after epoch " + std::to_string(epoch));
    }
    return log;
  }

  Model& model_;
  std::span<const RpmTask> train_;
  std::span<const RpmTask> validation_;
  const TrainConfig& cfg_;
  Rng shuffle_;
  std::vector<PanelImages> train_images_;
  std::vector<PanelImages> validation_images_;
  std::int64_t steps_ = 0;
  std::uint64_t examples_ = 0;
};

void write_row(std::ostream& out, const EpochLog& log, std::string_view split, const MetricReport& m, double loss) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d,%s,%s,%.4f,%.4f,%.4f,%.4f,%.4f,%.6f,%.3f\n", log.epoch,
                std::string(to_string(log.phase)).c_str(), std::string(split).c_str(), m.correct, m.prop_rate,
                m.avg_prop, m.avg_h, m.prop_acc, loss, log.seconds);
  out << buf;
}

}  // namespace

std::string_view to_string(Phase p) { return kPhaseNames[static_cast<int>(p)]; }
std::string_view to_string(MaskingPlan p) { return kPlanNames[static_cast<int>(p)]; }

std::optional<MaskingPlan> masking_from_name(std::string_view s) {
  for (int i = 0; i < 3; ++i) {
    if (kPlanNames[i] == s) return static_cast<MaskingPlan>(i);
  }
  return std::nullopt;
}

TrainConfig TrainConfig::paper(MaskingPlan plan) {
  TrainConfig c;
  c.plan = plan;
  return c;
}

TrainConfig TrainConfig::desk(MaskingPlan plan) {
  TrainConfig c;
  c.plan = plan;
  c.batch_size = 8;
  return c;
}

std::pair<int, std::array<float, kGridPanels>> draw_mask(Phase phase, Rng& rng, const TrainConfig& cfg) {
  std::array<float, kGridPanels> w{};
  if (phase == Phase::kQuery) {
    w[kQueryPosition] = static_cast<float>(cfg.query_multiplier);
    return {kQueryPosition, w};
  }
  const int slot = static_cast<int>(rng.index(kGridPanels));
  w.fill(1.0f);
  w[slot] = static_cast<float>(cfg.masked_multiplier);
  return {slot, w};
}

Example make_example(const RpmTask& task, Phase phase, Rng& rng, const TrainConfig& cfg) {
  Example ex;
  ex.targets = task.completed();
  ex.images = prepare_images(ex.targets);
  std::tie(ex.mask_slot, ex.weights) = draw_mask(phase, rng, cfg);
  return ex;
}

nk::Var<float> example_loss(const Model& model, nk::Tape<float>& tape, const std::vector<nk::Var<float>>& bound,
                            const Example& ex, const PassOptions& opts) {
  return loss_on(model, tape, bound, ex.images, ex.mask_slot, ex.weights, ex.targets, opts);
}

void write_epoch_csv(std::ostream& out, std::span<const EpochLog> logs) {
  out << "epoch,phase,split,correct,prop_rate,avg_prop,avg_h,prop_acc,loss,seconds\n";
  for (const auto& log : logs) {
    write_row(out, log, "train", log.train, log.train_loss);
    write_row(out, log, "validation", log.validation, log.validation_loss);
  }
}

TrainResult run_training(Model& model, std::span<const RpmTask> train, std::span<const RpmTask> validation,
                         const TrainConfig& cfg, const EpochCallback& on_epoch) {
  if (train.empty()) throw Error(ErrorCode::kEmptyDataset, "training set is empty");
  if (validation.empty()) throw Error(ErrorCode::kEmptyDataset, "validation set is empty");
  Trainer trainer(model, train, validation, cfg);
  return trainer.run(on_epoch);
}

}  // namespace rpm
