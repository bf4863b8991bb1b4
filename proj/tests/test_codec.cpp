#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "rpm/codec.hpp"
#include "rpm/eval.hpp"
#include "rpm/taskgen.hpp"

using namespace rpm;

namespace {

// One-hot encoding plus uniform noise in [0, 0.3], renormalized per
// categorical group; presence bits move toward 0.5 by the noise.
EncodedPanel noisy_encode(const PropertyVector& p, Rng& rng) {
  auto e = encode(p);
  for (const auto& seg : segments()) {
    if (seg.binary()) {
      auto& v = e.values[seg.offset];
      const auto u = static_cast<float>(0.3 * rng.uniform());
      v = v > 0.5f ? v - u : v + u;
      continue;
    }
    double total = 0.0;
    for (int j = 0; j < seg.length; ++j) {
      e.values[seg.offset + j] += static_cast<float>(0.3 * rng.uniform());
      total += e.values[seg.offset + j];
    }
    for (int j = 0; j < seg.length; ++j) e.values[seg.offset + j] = static_cast<float>(e.values[seg.offset + j] / total);
  }
  return e;
}

double floor_term() { return std::abs(std::log(1.0 - kProbabilityClamp)); }

// Sum of the relevant variables' weights, relevance from `p`.
double relevant_weight(const PropertyVector& p) {
  const auto rel = oracle::relevance(p);
  return LossWeights::kArrangement + rel.v.size() * LossWeights::kPresent +
         rel.v_prime.size() * (LossWeights::kColor + LossWeights::kSize + LossWeights::kType);
}

PropertyVector full_nine() {
  PropertyVector p;
  p.arrangement = ArrangementKind::kDistributeNine;
  for (int s = 5; s < 14; ++s) p.put(s, ObjectSpec{2, 3, 4});
  return p;
}

}  // namespace

TEST(Encode, Layout) {
  EXPECT_EQ(kEncodedDim, 557);
  PropertyVector p;
  p.put(0, ObjectSpec{4, 2, 3});
  const auto e = encode(p);
  EXPECT_EQ(e.values[0], 1.0f);
  for (int j = 1; j < 7; ++j) EXPECT_EQ(e.values[j], 0.0f);
  EXPECT_EQ(e.values[7], 1.0f);
  EXPECT_EQ(e.values[32 + 4], 1.0f);
  EXPECT_EQ(e.values[32 + 10 + 2], 1.0f);
  EXPECT_EQ(e.values[32 + 16 + 3], 1.0f);
  // Absent slots have zero presence and all-zero blocks.
  for (int j = 32 + 21; j < kEncodedDim; ++j) EXPECT_EQ(e.values[j], 0.0f);
}

TEST(Encode, SegmentsFormBijection) {
  const auto& segs = segments();
  ASSERT_EQ(static_cast<int>(segs.size()), kNumVariables);
  std::vector<int> owner(kEncodedDim, 0);
  for (const auto& s : segs) {
    for (int j = 0; j < s.length; ++j) ++owner[s.offset + j];
  }
  for (int c : owner) EXPECT_EQ(c, 1);
  EXPECT_EQ(segs.front().kind, VariableKind::kArrangement);
  EXPECT_EQ(segs.front().length, 7);
  for (const auto& s : segs) {
    if (s.kind == VariableKind::kPresent) EXPECT_EQ(s.offset, 7 + s.slot);
    if (s.kind == VariableKind::kColor) EXPECT_EQ(s.offset, 32 + 21 * s.slot);
    if (s.kind == VariableKind::kSize) EXPECT_EQ(s.offset, 42 + 21 * s.slot);
    if (s.kind == VariableKind::kType) EXPECT_EQ(s.offset, 48 + 21 * s.slot);
  }
}

TEST(Encode, RoundTrip) {
  Rng rng(1);
  for (int i = 0; i < 10000; ++i) {
    const auto p = oracle::random_vector(rng);
    ASSERT_EQ(decode(encode(p)), p);
  }
}

TEST(Decode, UniformArrangementPicksFirst) {
  EncodedPanel e;
  for (int j = 0; j < 7; ++j) e.values[j] = 1.0f / 7;
  e.values[7] = 0.9f;
  EXPECT_EQ(decode(e).arrangement, ArrangementKind::kCenterSingle);
}

TEST(Decode, ForcesHighestInRangeSlot) {
  EncodedPanel e;
  e.values[static_cast<int>(ArrangementKind::kDistributeFour)] = 1.0f;
  e.values[7 + 0] = 0.99f;  // out of range, ignored
  e.values[7 + 1] = 0.2f;
  e.values[7 + 3] = 0.4f;
  const auto p = decode(e);
  EXPECT_FALSE(p.present[0]);
  EXPECT_TRUE(p.present[3]);
  EXPECT_EQ(p.object_count(), 1);
  EXPECT_TRUE(is_valid(p));
}

TEST(Decode, NoisyMatchesBruteForce) {
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    const auto e = noisy_encode(oracle::random_vector(rng), rng);
    ASSERT_EQ(decode(e), oracle::brute_decode(e));
  }
  // Unstructured inputs too.
  RandomPredictor random(3);
  for (int i = 0; i < 1000; ++i) {
    const auto e = random.sample();
    ASSERT_EQ(decode(e), oracle::brute_decode(e));
  }
}

TEST(Relevance, Examples) {
  PropertyVector c;
  c.put(0, ObjectSpec{});
  const auto m = resolve_relevance(c);
  EXPECT_EQ(m.relevant_count(), 5);
  EXPECT_TRUE(m.present_relevant[0]);
  EXPECT_TRUE(m.object_relevant[0]);
  PropertyVector f;
  f.arrangement = ArrangementKind::kDistributeFour;
  f.put(1, ObjectSpec{});
  f.put(3, ObjectSpec{});
  const auto n = resolve_relevance(f);
  int v = 0, vp = 0;
  for (int s = 0; s < kNumSlots; ++s) {
    v += n.present_relevant[s];
    vp += n.object_relevant[s];
  }
  EXPECT_EQ(v, 4);
  EXPECT_EQ(vp, 2);
}

TEST(Relevance, MatchesCascadeOracle) {
  Rng rng(4);
  for (int i = 0; i < 1000; ++i) {
    const auto p = oracle::random_vector(rng);
    const auto m = resolve_relevance(p);
    const auto o = oracle::relevance(p);
    for (int s = 0; s < kNumSlots; ++s) {
      ASSERT_EQ(m.present_relevant[s], o.v.count(s) == 1);
      ASSERT_EQ(m.object_relevant[s], o.v_prime.count(s) == 1);
    }
    ASSERT_EQ(m.relevant_count(), o.count);
  }
}

TEST(Hamming, Examples) {
  const auto nine = full_nine();
  EXPECT_EQ(hamming(nine, nine, nine), 0);
  PropertyVector single;
  single.put(0, ObjectSpec{7, 0, 0});
  EXPECT_EQ(hamming(single, nine, nine), 37);
  EXPECT_EQ(hamming(nine, single, nine), 37);
}

TEST(Hamming, SymmetricAndBounded) {
  Rng rng(5);
  for (int i = 0; i < 1000; ++i) {
    const auto p = oracle::random_vector(rng);
    const auto q = oracle::random_vector(rng);
    const auto src = oracle::random_vector(rng);
    const int d = hamming(p, q, src);
    ASSERT_EQ(d, hamming(q, p, src));
    ASSERT_EQ(hamming(p, p, src), 0);
    ASSERT_GE(d, 0);
    ASSERT_LE(d, relevant_count(src));
  }
}

TEST(Loss, PerfectPredictionHitsClampFloor) {
  Rng rng(6);
  for (int i = 0; i < 200; ++i) {
    const auto p = oracle::random_vector(rng);
    const double loss = weighted_cross_entropy(encode(p), p, p);
    EXPECT_NEAR(loss, relevant_weight(p) * floor_term(), 1e-9);
  }
  PropertyVector c;
  c.put(0, ObjectSpec{});
  EXPECT_LE(weighted_cross_entropy(encode(c), c, c), 25 * floor_term());
}

TEST(Loss, UniformArrangementTerm) {
  PropertyVector c;
  c.put(0, ObjectSpec{1, 2, 3});
  auto pred = encode(c);
  for (int j = 0; j < 7; ++j) pred.values[j] = 1.0f / 7;
  const double perfect = weighted_cross_entropy(encode(c), c, c);
  const double loss = weighted_cross_entropy(pred, c, c);
  EXPECT_NEAR(loss - (perfect - floor_term()), std::log(7.0), 1e-6);
}

TEST(Loss, PositiveWhenArgmaxDiffers) {
  Rng rng(7);
  RandomPredictor random(8);
  for (int i = 0; i < 1000; ++i) {
    const auto target = oracle::random_vector(rng);
    const auto pred = random.sample();
    if (hamming(decode(pred), target, target) > 0) ASSERT_GT(weighted_cross_entropy(pred, target, target), 0.0);
  }
}

TEST(Loss, IrrelevantDimsIgnored) {
  Rng rng(9);
  RandomPredictor random(10);
  for (int i = 0; i < 300; ++i) {
    const auto target = oracle::random_vector(rng);
    const auto cls = encode(oracle::random_vector(rng));
    const auto pred = random.sample();
    const auto rel = resolve_relevance(target);
    const auto cls_rel = resolve_relevance(decode(cls));
    auto moved = pred;
    auto moved_cls = pred;
    for (const auto& seg : segments()) {
      if (seg.kind == VariableKind::kArrangement) continue;
      const bool relevant = seg.binary() ? rel.present_relevant[seg.slot] : rel.object_relevant[seg.slot];
      const bool cls_relevant = seg.binary() ? cls_rel.present_relevant[seg.slot] : cls_rel.object_relevant[seg.slot];
      for (int j = 0; j < seg.length; ++j) {
        const auto u = static_cast<float>(rng.uniform());
        if (!relevant) moved.values[seg.offset + j] = u;
        if (!cls_relevant) moved_cls.values[seg.offset + j] = u;
      }
    }
    ASSERT_EQ(weighted_cross_entropy(moved, target, target), weighted_cross_entropy(pred, target, target));
    ASSERT_EQ(dcm_distance(moved_cls, cls, DistanceKind::kProb), dcm_distance(pred, cls, DistanceKind::kProb));
    ASSERT_EQ(dcm_distance(moved_cls, cls, DistanceKind::kHamming), dcm_distance(pred, cls, DistanceKind::kHamming));
  }
}

TEST(DcmDistance, Identity) {
  const auto nine = encode(full_nine());
  EXPECT_NEAR(dcm_distance(nine, nine, DistanceKind::kProb), relevant_weight(full_nine()) * floor_term(), 1e-9);
  EXPECT_EQ(dcm_distance(nine, nine, DistanceKind::kHamming), 0.0);
}

TEST(DcmDistance, ProbMinimizedAtMatchingCandidate) {
  GenConfig cfg;
  cfg.count = 500;
  cfg.base_seed = 11;
  Rng rng(12);
  for (const auto& t : generate_tasks(cfg)) {
    const auto pred = noisy_encode(t.query_truth, rng);
    std::vector<double> d;
    for (const auto& a : t.answers) d.push_back(dcm_distance(pred, encode(a), DistanceKind::kProb));
    const auto best = std::min_element(d.begin(), d.end()) - d.begin();
    ASSERT_EQ(decode(pred), t.query_truth);
    ASSERT_EQ(best, t.correct_index);
  }
}

TEST(DcmDistance, TieFrequency) {
  RandomPredictor random(13);
  int prob_ties = 0, hamming_ties = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto pred = random.sample();
    const auto a = random.sample();
    const auto b = random.sample();
    prob_ties += dcm_distance(pred, a, DistanceKind::kProb) == dcm_distance(pred, b, DistanceKind::kProb);
    hamming_ties += dcm_distance(pred, a, DistanceKind::kHamming) == dcm_distance(pred, b, DistanceKind::kHamming);
  }
  EXPECT_EQ(prob_ties, 0);
  EXPECT_GT(hamming_ties, 0);
}

TEST(Normalization, Checks) {
  PropertyVector c;
  c.put(0, ObjectSpec{});
  EXPECT_FALSE(is_normalized(encode(c)));  // absent blocks are all zero
  RandomPredictor random(14);
  EXPECT_TRUE(is_normalized(random.sample()));
  auto e = random.sample();
  e.values[0] += 0.1f;
  EXPECT_FALSE(is_normalized(e));
}
