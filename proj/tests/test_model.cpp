#include <gtest/gtest.h>

#include <cmath>

#include "rpm/error.hpp"
#include "rpm/eval.hpp"
#include "rpm/model.hpp"
#include "rpm/numkit/ops.hpp"
#include "rpm/taskgen.hpp"

using namespace rpm;

namespace {

ModelConfig small(TokenizerKind k, std::uint64_t seed = 1) {
  auto c = ModelConfig::desk(k);
  c.predictor_hidden = 48;
  c.seed = seed;
  return c;
}

const RpmTask& sample() {
  static const RpmTask t = [] {
    GenConfig g;
    g.count = 1;
    g.base_seed = 3;
    return sample_task(g, 0);
  }();
  return t;
}

const PanelImages& images() {
  static const PanelImages im = prepare_images(sample().completed());
  return im;
}

std::vector<float> values(Model::Var v) { return {v.value().begin(), v.value().end()}; }

// Rows of `x` in the order given.
Model::Var gather_rows(Model::Var x, const std::vector<int>& order) {
  std::vector<Model::Var> rows;
  for (int r : order) rows.push_back(nk::slice(x, 0, r, r + 1));
  return nk::concat(rows, 0);
}

double max_abs_diff(std::span<const float> a, std::span<const float> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - b[i]));
  return m;
}

}  // namespace

TEST(Tokenizer, Counts) {
  EXPECT_EQ(token_count(TokenizerKind::kPanel), 81);
  EXPECT_EQ(token_count(TokenizerKind::kTask), 64);
  EXPECT_EQ(token_count(TokenizerKind::kRow), 27);
  EXPECT_EQ(chunk_length(TokenizerKind::kPanel), 9);
  EXPECT_EQ(chunk_length(TokenizerKind::kTask), 7);
  EXPECT_EQ(chunk_length(TokenizerKind::kRow), 3);
  for (auto k : {TokenizerKind::kPanel, TokenizerKind::kTask, TokenizerKind::kRow}) {
    EXPECT_EQ(tokenizer_from_name(to_string(k)), k);
    Model m(small(k));
    Model::Tape tape;
    const auto bound = m.bind(tape, false);
    auto x = m.tokenize(tape, bound, images(), kQueryPosition);
    EXPECT_EQ(x.shape(), (nk::Shape{token_count(k), 32}));
    auto o = m.transform(tape, bound, x, {});
    EXPECT_EQ(o.shape(), x.shape());
    EXPECT_EQ(m.predict_chunks(tape, bound, o).shape(), (nk::Shape{9, kEncodedDim}));
  }
}

TEST(Tokenizer, MaskReplacesPanel) {
  // The masked panel's pixels must not reach the output.
  for (auto k : {TokenizerKind::kPanel, TokenizerKind::kTask, TokenizerKind::kRow}) {
    Model m(small(k));
    auto other = images();
    for (auto& v : other[4]) v = 1.0f - v;
    EXPECT_EQ(m.predict_images(images(), 4), m.predict_images(other, 4));
    EXPECT_NE(m.predict_images(images(), std::nullopt), m.predict_images(other, std::nullopt));
  }
}

TEST(Forward, OutputsNormalized) {
  for (auto k : {TokenizerKind::kPanel, TokenizerKind::kTask, TokenizerKind::kRow}) {
    Model m(small(k, 5));
    for (const auto& e : m.predict(sample().completed(), kQueryPosition)) EXPECT_TRUE(is_normalized(e, 1e-5));
  }
}

TEST(Forward, Deterministic) {
  Model a(small(TokenizerKind::kRow, 9));
  Model b(small(TokenizerKind::kRow, 9));
  EXPECT_EQ(a.predict_images(images(), 8), b.predict_images(images(), 8));
  PassOptions train{true, 77};
  Model::Tape ta, tb;
  auto ya = a.forward(ta, a.bind(ta, false), images(), 8, train);
  auto yb = b.forward(tb, b.bind(tb, false), images(), 8, train);
  EXPECT_EQ(values(ya), values(yb));
  Model c(small(TokenizerKind::kRow, 10));
  EXPECT_NE(a.predict_images(images(), 8), c.predict_images(images(), 8));
}

TEST(Forward, PermutationSensitive) {
  Model m(small(TokenizerKind::kRow, 2));
  std::vector<int> order(27), inverse(27);
  for (int i = 0; i < 27; ++i) order[i] = (i * 10) % 27;
  for (int i = 0; i < 27; ++i) inverse[order[i]] = i;
  auto run = [&](Model& model) {
    Model::Tape tape;
    const auto bound = model.bind(tape, false);
    auto x = model.tokenize(tape, bound, images(), 8);
    auto plain = model.transform(tape, bound, x, {});
    auto permuted = gather_rows(model.transform(tape, bound, gather_rows(x, order), {}), inverse);
    return max_abs_diff(plain.value(), permuted.value());
  };
  EXPECT_GT(run(m), 1e-3);
  // Without the positional table the stack is permutation-equivariant.
  auto* pos = m.find("positional");
  ASSERT_NE(pos, nullptr);
  std::fill(pos->data.begin(), pos->data.end(), 0.0f);
  EXPECT_LT(run(m), 1e-4);
}

TEST(Forward, ChunkLocality) {
  for (auto k : {TokenizerKind::kPanel, TokenizerKind::kTask, TokenizerKind::kRow}) {
    Model m(small(k, 4));
    const int len = chunk_length(k);
    const int t = token_count(k);
    std::vector<float> seq(std::size_t(t) * 32);
    Rng rng(8);
    for (auto& v : seq) v = static_cast<float>(rng.normal());
    auto outputs = [&](const std::vector<float>& s) {
      Model::Tape tape;
      const auto bound = m.bind(tape, false);
      return values(m.predict_chunks(tape, bound, tape.constant({t, 32}, s)));
    };
    const auto base = outputs(seq);
    for (int chunk = 0; chunk < 9; ++chunk) {
      auto moved = seq;
      for (int tok = chunk * len; tok < (chunk + 1) * len; ++tok) {
        for (int d = 0; d < 32; ++d) moved[tok * 32 + d] += 1.0f;
      }
      const auto out = outputs(moved);
      for (int panel = 0; panel < 9; ++panel) {
        const auto a = std::span(base).subspan(panel * kEncodedDim, kEncodedDim);
        const auto b = std::span(out).subspan(panel * kEncodedDim, kEncodedDim);
        if (panel == chunk) {
          EXPECT_GT(max_abs_diff(a, b), 0.0);
        } else {
          EXPECT_EQ(max_abs_diff(a, b), 0.0) << to_string(k) << " chunk " << chunk << " panel " << panel;
        }
      }
    }
    if (k == TokenizerKind::kTask) {
      auto moved = seq;
      for (int d = 0; d < 32; ++d) moved[63 * 32 + d] += 5.0f;
      EXPECT_EQ(outputs(moved), base);
    }
  }
}

TEST(Forward, GradientReachesEveryParameter) {
  for (bool dense : {false, true}) {
    auto c = small(TokenizerKind::kRow, 6);
    c.denseformer = dense;
    c.dense_size = 90;
    c.dense_regularized = dense;
    Model m(c);
    Model::Tape tape;
    const auto bound = m.bind(tape, true);
    auto y = m.forward(tape, bound, images(), 8, {true, 3});
    std::vector<float> w(y.size());
    Rng rng(1);
    for (auto& v : w) v = static_cast<float>(rng.normal());
    tape.backward(nk::sum(nk::mul(y, tape.constant(y.shape(), w))));
    for (std::size_t i = 0; i < bound.size(); ++i) {
      const auto g = tape.grad_view(bound[i].id());
      double norm = 0.0;
      for (float v : g) norm += std::abs(v);
      EXPECT_GT(norm, 0.0) << m.parameters()[i].name;
    }
  }
}

TEST(Forward, ShapeErrors) {
  Model m(small(TokenizerKind::kPanel));
  auto bad = images();
  bad[2].resize(10);
  try {
    m.predict_images(bad, 8);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShapeMismatch);
  }
  Model::Tape tape;
  const auto bound = m.bind(tape, false);
  try {
    m.predict_chunks(tape, bound, tape.constant({27, 32}, std::vector<float>(27 * 32)));
    FAIL();
  } catch (const Error& e) {
    EXPECT_TRUE(e.code() == ErrorCode::kShapeMismatch || e.code() == ErrorCode::kLengthMismatch);
  }
}

TEST(Config, RejectsInconsistent) {
  auto c = ModelConfig::desk(TokenizerKind::kRow);
  c.heads = 3;
  EXPECT_THROW(Model{c}, Error);
  c = ModelConfig::desk(TokenizerKind::kRow);
  c.channels.back() = 16;
  EXPECT_THROW(Model{c}, Error);
}

TEST(Params, BreakdownMatchesTensors) {
  for (auto k : {TokenizerKind::kPanel, TokenizerKind::kTask, TokenizerKind::kRow}) {
    Model m(ModelConfig::desk(k));
    std::size_t total = 0;
    for (const auto& p : m.parameters()) total += p.data.size();
    EXPECT_EQ(m.param_count(), total);
    EXPECT_EQ(m.param_breakdown().mask, 84u * 84u);
  }
}

TEST(Params, ZeroBlocksIsAdditive) {
  auto c = ModelConfig::desk(TokenizerKind::kRow);
  c.blocks = 0;
  Model m(c);
  const auto b = m.param_breakdown();
  EXPECT_EQ(b.blocks, 0u);
  EXPECT_EQ(m.param_count(), b.backbone + b.mask + b.encoder + b.positional + b.predictor);
  const int d = c.token_dim;
  EXPECT_EQ(b.encoder, std::size_t(d) * d + d);
  EXPECT_EQ(b.positional, 27u * d);
  const std::size_t k = 3 * d, h = c.predictor_hidden;
  EXPECT_EQ(b.predictor, 2 * k + k * h + h + 2 * h + h * h + h + 2 * h + h * kEncodedDim + kEncodedDim);
}

TEST(Params, PositionalDeltas) {
  const auto count = [](TokenizerKind k) { return Model(ModelConfig::paper(k)).param_breakdown().positional; };
  EXPECT_EQ(count(TokenizerKind::kPanel) - count(TokenizerKind::kTask), (81u - 64u) * 128u);
  EXPECT_EQ(count(TokenizerKind::kTask) - count(TokenizerKind::kRow), (64u - 27u) * 128u);
}

TEST(Params, FlopsOrdering) {
  const auto row = flops_estimate(ModelConfig::paper(TokenizerKind::kRow));
  const auto task = flops_estimate(ModelConfig::paper(TokenizerKind::kTask));
  const auto panel = flops_estimate(ModelConfig::paper(TokenizerKind::kPanel));
  EXPECT_LT(row, task);
  EXPECT_LT(task, panel);
}

TEST(Denseformer, ShapeAndRegularizedCount) {
  auto c = small(TokenizerKind::kRow);
  c.denseformer = true;
  c.dense_size = 99;
  Model plain(c);
  c.dense_regularized = true;
  Model reg(c);
  const auto outputs = plain.predict(sample().completed(), 8);
  for (const auto& e : outputs) EXPECT_TRUE(is_normalized(e, 1e-5));
  const std::size_t width0 = 27 * 32;
  EXPECT_EQ(reg.param_count() - plain.param_count(), 2 * width0 + 4 * 2 * 99u);
  EXPECT_EQ(plain.param_breakdown().blocks, 0u);
  EXPECT_GT(plain.param_breakdown().dense, 0u);
}
