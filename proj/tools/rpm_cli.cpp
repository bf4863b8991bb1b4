// rpm: generate tasks, train and evaluate property predictors, audit answer sets.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "rpm/error.hpp"
#include "rpm/eval.hpp"
#include "rpm/io.hpp"
#include "rpm/model.hpp"
#include "rpm/numkit/gradcheck.hpp"
#include "rpm/render.hpp"
#include "rpm/taskgen.hpp"
#include "rpm/train.hpp"

namespace fs = std::filesystem;
using namespace rpm;

namespace {

int exit_code(ErrorCode c) {
  switch (c) {
    case ErrorCode::kMissingFile: return 2;
    case ErrorCode::kVersionMismatch: return 3;
    case ErrorCode::kMalformedRecord: return 4;
    default: return 1;
  }
}

// Writes to `path`, or stdout when empty.
template <typename F>
void emit(const std::string& path, F write) {
  if (path.empty()) {
    write(std::cout);
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kInvalidArgument, "cannot write " + path);
  write(out);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Raven matrix property-prediction workbench"};
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  app.add_option("--seed", seed, "Seed for every random choice (default 0)");

  // gen
  auto* gen = app.add_subcommand("gen", "Generate a task dataset");
  std::size_t count = 100;
  std::string bias = "unbiased";
  std::string gen_out;
  gen->add_option("--count", count, "Number of tasks")->required();
  gen->add_option("--bias", bias, "Answer-set construction")->check(CLI::IsMember({"biased", "unbiased"}));
  gen->add_option("--out", gen_out, "Dataset path (JSON lines)")->required();
  gen->add_option("--seed", seed, "Base seed");

  // train
  auto* train = app.add_subcommand("train", "Train a model");
  std::string tokenizer = "row", masking = "combined";
  std::string data_path, val_path, ckpt_path, log_path, preset = "desk";
  int epochs = 0, query_epochs = -1, batch = 0;
  std::int64_t max_steps = 0;
  train->add_option("--tokenizer", tokenizer)->check(CLI::IsMember({"panel", "task", "row"}));
  train->add_option("--masking", masking)->check(CLI::IsMember({"random", "query", "combined"}));
  train->add_option("--data", data_path, "Training dataset")->required();
  train->add_option("--val", val_path, "Validation dataset")->required();
  train->add_option("--preset", preset, "Model and batch sizes")->check(CLI::IsMember({"desk", "paper"}));
  train->add_option("--out", ckpt_path, "Checkpoint path")->required();
  train->add_option("--log", log_path, "Epoch log CSV (default: <out>.csv)");
  train->add_option("--epochs", epochs, "Epochs of the first phase (default 200)");
  train->add_option("--query-epochs", query_epochs, "Epochs of the Query fine-tuning phase (default 30)");
  train->add_option("--batch", batch, "Batch size override");
  train->add_option("--max-steps", max_steps, "Total optimizer-step budget (0 = none)");
  train->add_option("--seed", seed, "Initialization and training seed");

  // eval
  auto* eval = app.add_subcommand("eval", "Property metrics of a checkpoint");
  std::string scope = "prediction";
  std::string out_path, errors_path;
  eval->add_option("--ckpt", ckpt_path)->required();
  eval->add_option("--data", data_path)->required();
  eval->add_option("--scope", scope)->check(CLI::IsMember({"prediction", "classification"}));
  eval->add_option("--out", out_path, "Report CSV (default stdout)");
  eval->add_option("--errors", errors_path, "Also write the attribute error histogram CSV here");
  eval->add_option("--seed", seed);

  // solve
  auto* solve = app.add_subcommand("solve", "Choose answers with the direct choice maker");
  bool ground_truth = false;
  std::string records_path;
  solve->add_option("--ckpt", ckpt_path)->required();
  solve->add_option("--data", data_path)->required();
  solve->add_flag("--ground-truth-classification", ground_truth, "Classify answers from their true properties");
  solve->add_option("--out", out_path, "Report CSV (default stdout)");
  solve->add_option("--records", records_path, "Per-task diagnostics (JSON lines)");
  solve->add_option("--seed", seed);

  // audit
  auto* audit_cmd = app.add_subcommand("audit", "Context-blind modal-attribute accuracy");
  audit_cmd->add_option("--data", data_path)->required();
  audit_cmd->add_option("--out", out_path, "Report CSV (default stdout)");
  audit_cmd->add_option("--seed", seed);

  // render
  auto* render = app.add_subcommand("render", "Render a task, its prediction and classifications");
  std::size_t task_index = 0;
  std::string out_dir;
  render->add_option("--ckpt", ckpt_path)->required();
  render->add_option("--data", data_path)->required();
  render->add_option("--task-index", task_index)->required();
  render->add_option("--out", out_dir, "Output directory")->required();
  render->add_option("--seed", seed);

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every op");
  int points = 10;
  gradcheck->add_option("--points", points, "Random points per op");
  gradcheck->add_option("--seed", seed);

  // plot
  auto* plot = app.add_subcommand("plot", "Learning curves from an epoch log");
  plot->add_option("--log", log_path)->required();
  plot->add_option("--out", out_path, "SVG path")->required();
  plot->add_option("--seed", seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      GenConfig cfg;
      cfg.bias_mode = *bias_mode_from_name(bias);
      cfg.base_seed = seed;
      cfg.count = count;
      save_dataset(gen_out, generate_tasks(cfg));
      std::fprintf(stderr, "wrote %zu tasks to %s\n", count, gen_out.c_str());
    } else if (*train) {
      const auto tasks = load_dataset(data_path);
      const auto val = load_dataset(val_path);
      auto mcfg = preset == "paper" ? ModelConfig::paper(*tokenizer_from_name(tokenizer)) : ModelConfig::desk(*tokenizer_from_name(tokenizer));
      mcfg.seed = seed;
      auto tcfg = preset == "paper" ? TrainConfig::paper(*masking_from_name(masking)) : TrainConfig::desk(*masking_from_name(masking));
      tcfg.seed = seed;
      if (epochs > 0) tcfg.random_epochs = epochs;
      if (query_epochs >= 0) tcfg.query_epochs = query_epochs;
      if (batch > 0) tcfg.batch_size = batch;
      tcfg.max_steps = max_steps;
      Model model(mcfg);
      std::fprintf(stderr, "%zu parameters, %zu training / %zu validation tasks\n", model.param_count(), tasks.size(),
                   val.size());
      auto result = run_training(model, tasks, val, tcfg, [](const EpochLog& l) {
        std::fprintf(stderr, "%s epoch %d: train loss %.4f, validation loss %.4f, validation Correct %.2f (%.1fs)\n",
                     std::string(to_string(l.phase)).c_str(), l.epoch, l.train_loss, l.validation_loss,
                     l.validation.correct, l.seconds);
      });
      save_checkpoint(ckpt_path, model);
      if (log_path.empty()) log_path = ckpt_path + ".csv";
      emit(log_path, [&](std::ostream& o) { write_epoch_csv(o, result.logs); });
      std::fprintf(stderr, "selected %s epoch %d (validation loss %.4f) after %lld steps\n",
                   std::string(to_string(result.best_phase)).c_str(), result.best_epoch, result.best_validation_loss,
                   static_cast<long long>(result.steps));
    } else if (*eval) {
      const auto model = load_checkpoint(ckpt_path);
      const auto tasks = load_dataset(data_path);
      const auto report = property_metrics(model, tasks, *scope_from_name(scope));
      emit(out_path, [&](std::ostream& o) { write_metric_csv(o, report); });
      if (!errors_path.empty()) {
        const auto h = error_structure(model, tasks);
        emit(errors_path, [&](std::ostream& o) { write_error_csv(o, h); });
      }
    } else if (*solve) {
      const auto model = load_checkpoint(ckpt_path);
      const auto tasks = load_dataset(data_path);
      const auto report =
          choice_metrics(model, tasks, ground_truth ? ClassificationSource::kGroundTruth : ClassificationSource::kModel);
      emit(out_path, [&](std::ostream& o) { write_choice_csv(o, report); });
      if (!records_path.empty()) emit(records_path, [&](std::ostream& o) { write_dcm_records(o, report.records); });
    } else if (*audit_cmd) {
      const auto tasks = load_dataset(data_path);
      const auto report = audit(tasks);
      emit(out_path, [&](std::ostream& o) { write_audit_csv(o, report); });
    } else if (*render) {
      const auto model = load_checkpoint(ckpt_path);
      const auto tasks = load_dataset(data_path);
      if (task_index >= tasks.size()) {
        throw Error(ErrorCode::kInvalidArgument, "task index " + std::to_string(task_index) + " out of range");
      }
      const auto& task = tasks[task_index];
      fs::create_directories(out_dir);
      const auto rec = dcm_solve(model, task, ClassificationSource::kModel);
      const auto dir = fs::path(out_dir);
      write_pgm((dir / "task.pgm").string(), render_task(task, MaskedFill{}));
      write_pgm((dir / "prediction.pgm").string(), render_task(task, decode(rec.prediction)));
      for (int i = 0; i < kAnswerPanels; ++i) {
        write_pgm((dir / ("answer_" + std::to_string(i) + ".pgm")).string(), render_panel(task.answers[i]));
        write_pgm((dir / ("classification_" + std::to_string(i) + ".pgm")).string(),
                  render_panel(decode(rec.classifications[i])));
      }
      std::ofstream side(dir / "choice.txt");
      side << "correct_index " << task.correct_index << "\nchosen_prob " << rec.chosen_prob << "\nchosen_hamming "
           << rec.chosen_hamming << "\nhamming_tie " << (rec.tie() ? 1 : 0) << '\n';
    } else if (*gradcheck) {
      bool ok = true;
      for (const auto& r : nk::run_gradcheck_suite(seed, points)) {
        std::printf("%-22s points=%d max_rel_error=%.3e %s\n", r.op.c_str(), r.points, r.max_rel_error,
                    r.passed ? "ok" : "FAILED");
        ok = ok && r.passed;
      }
      return ok ? 0 : 1;
    } else if (*plot) {
      std::ifstream in(log_path);
      if (!in) throw Error(ErrorCode::kMissingFile, "cannot open " + log_path);
      const auto svg = learning_curve_svg(in);
      emit(out_path, [&](std::ostream& o) { o << svg; });
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
