#include <gtest/gtest.h>

#include <sys/wait.h>

#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace {

const fs::path& workdir() {
  static const fs::path d = [] {
    auto p = fs::temp_directory_path() / ("rpm_cli_test_" + std::to_string(::getpid()));
    fs::create_directories(p);
    return p;
  }();
  return d;
}

std::string at(const std::string& name) { return (workdir() / name).string(); }

// Exit status of `rpm <args>`, output discarded.
int rpm(const std::string& args) {
  const std::string cmd = std::string(RPM_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void spit(const std::string& path, const std::string& text) { std::ofstream(path, std::ios::binary) << text; }

}  // namespace

TEST(Cli, GenIsByteDeterministic) {
  ASSERT_EQ(rpm("gen --count 20 --bias biased --out " + at("a.jsonl")), 0);
  ASSERT_EQ(rpm("gen --count 20 --bias biased --seed 0 --out " + at("b.jsonl")), 0);
  ASSERT_EQ(rpm("gen --count 20 --bias biased --seed 1 --out " + at("c.jsonl")), 0);
  EXPECT_EQ(slurp(at("a.jsonl")), slurp(at("b.jsonl")));
  EXPECT_NE(slurp(at("a.jsonl")), slurp(at("c.jsonl")));
}

TEST(Cli, ExitCodes) {
  ASSERT_EQ(rpm("gen --count 3 --out " + at("ok.jsonl")), 0);
  EXPECT_EQ(rpm("audit --data " + at("missing.jsonl")), 2);
  auto text = slurp(at("ok.jsonl"));
  const auto version = text.find("\"renderer_version\":1");
  ASSERT_NE(version, std::string::npos);
  spit(at("old.jsonl"), std::string(text).replace(version, 20, "\"renderer_version\":7"));
  EXPECT_EQ(rpm("audit --data " + at("old.jsonl")), 3);
  spit(at("bad.jsonl"), text + "{\"renderer_version\":1}\n");
  EXPECT_EQ(rpm("audit --data " + at("bad.jsonl")), 4);
  EXPECT_EQ(rpm("eval --ckpt " + at("missing.ckpt") + " --data " + at("ok.jsonl")), 2);
  spit(at("v9.ckpt"), std::string("ACT1\x09\x00\x00\x00", 8));
  EXPECT_EQ(rpm("eval --ckpt " + at("v9.ckpt") + " --data " + at("ok.jsonl")), 3);
  spit(at("junk.ckpt"), "junk");
  EXPECT_EQ(rpm("eval --ckpt " + at("junk.ckpt") + " --data " + at("ok.jsonl")), 4);
  EXPECT_NE(rpm("gen --count 3 --bias sideways --out " + at("x.jsonl")), 0);
}

TEST(Cli, Pipeline) {
  ASSERT_EQ(rpm("gen --count 4 --seed 3 --out " + at("train.jsonl")), 0);
  ASSERT_EQ(rpm("gen --count 3 --seed 4 --out " + at("val.jsonl")), 0);
  const std::string train = "train --tokenizer row --masking combined --data " + at("train.jsonl") + " --val " +
                            at("val.jsonl") + " --epochs 1 --query-epochs 1 --batch 2 --seed 5 --out ";
  ASSERT_EQ(rpm(train + at("m.ckpt")), 0);
  ASSERT_EQ(rpm(train + at("m2.ckpt")), 0);
  EXPECT_EQ(slurp(at("m.ckpt")), slurp(at("m2.ckpt")));
  const auto log = slurp(at("m.ckpt") + ".csv");
  EXPECT_EQ(log.rfind("epoch,phase,split,correct,prop_rate,avg_prop,avg_h,prop_acc,loss,seconds\n", 0), 0u);
  EXPECT_NE(log.find(",query,validation,"), std::string::npos);

  ASSERT_EQ(rpm("eval --ckpt " + at("m.ckpt") + " --data " + at("val.jsonl") + " --scope classification --out " +
                at("eval.csv") + " --errors " + at("errors.csv")),
            0);
  EXPECT_EQ(slurp(at("eval.csv")).rfind("scope,panels,correct,prop_rate,avg_prop,avg_h,prop_acc\nclassification,24,", 0),
            0u);
  EXPECT_EQ(slurp(at("errors.csv")).rfind("attribute,difference,count,fraction\n", 0), 0u);

  ASSERT_EQ(rpm("solve --ckpt " + at("m.ckpt") + " --data " + at("val.jsonl") + " --out " + at("solve.csv") +
                " --records " + at("records.jsonl")),
            0);
  EXPECT_EQ(slurp(at("solve.csv")).rfind("tasks,acc_prob,acc_top,acc_unique,hamming_ties\n3,", 0), 0u);
  ASSERT_EQ(rpm("solve --ground-truth-classification --ckpt " + at("m.ckpt") + " --data " + at("val.jsonl") +
                " --out " + at("solve_gt.csv")),
            0);

  ASSERT_EQ(rpm("audit --data " + at("val.jsonl") + " --out " + at("audit.csv")), 0);
  EXPECT_EQ(slurp(at("audit.csv")).rfind("tasks,correct,accuracy\n3,", 0), 0u);

  ASSERT_EQ(rpm("render --ckpt " + at("m.ckpt") + " --data " + at("val.jsonl") + " --task-index 1 --out " +
                at("render")),
            0);
  EXPECT_EQ(slurp(at("render/task.pgm")).rfind("P5\n252 252\n255\n", 0), 0u);
  EXPECT_EQ(slurp(at("render/prediction.pgm")).size(), 15u + 252 * 252);
  for (int i = 0; i < 8; ++i) {
    EXPECT_EQ(slurp(at("render/answer_" + std::to_string(i) + ".pgm")).size(), 13u + 84 * 84);
    EXPECT_TRUE(fs::exists(at("render/classification_" + std::to_string(i) + ".pgm")));
  }
  EXPECT_NE(slurp(at("render/choice.txt")).find("chosen_hamming"), std::string::npos);
  EXPECT_NE(rpm("render --ckpt " + at("m.ckpt") + " --data " + at("val.jsonl") + " --task-index 9 --out " +
                at("render")),
            0);

  ASSERT_EQ(rpm("plot --log " + at("m.ckpt") + ".csv --out " + at("curve.svg")), 0);
  EXPECT_EQ(slurp(at("curve.svg")).rfind("<svg", 0), 0u);
}

TEST(Cli, Gradcheck) { EXPECT_EQ(rpm("gradcheck --points 2"), 0); }
