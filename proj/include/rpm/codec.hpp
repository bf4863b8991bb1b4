#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "rpm/core.hpp"

namespace rpm {

// Layout of the 557-dim encoding: 7 arrangement probabilities, 25 presence
// probabilities, then one 21-dim block per slot (color 10, size 6, type 5).
inline constexpr int kEncodedDim = kNumArrangements + kNumSlots + kNumSlots * (kNumColors + kNumSizes + kNumTypes);
inline constexpr int kArrangementOffset = 0;
inline constexpr int kPresenceOffset = kNumArrangements;
inline constexpr int kObjectOffset = kPresenceOffset + kNumSlots;
inline constexpr int kSlotBlock = kNumColors + kNumSizes + kNumTypes;

inline constexpr int attribute_offset(int slot, ObjectAttribute a) {
  const int base = kObjectOffset + kSlotBlock * slot;
  switch (a) {
    case ObjectAttribute::kColor: return base;
    case ObjectAttribute::kSize: return base + kNumColors;
    case ObjectAttribute::kType: return base + kNumColors + kNumSizes;
  }
  return base;
}

struct EncodedPanel {
  std::array<float, kEncodedDim> values{};
  bool operator==(const EncodedPanel&) const = default;
};

// Per-variable loss weights; presence and each appearance attribute are
// scaled so their average contributions balance.
struct LossWeights {
  static constexpr double kArrangement = 1.0;
  static constexpr double kPresent = 2.83426987;
  static constexpr double kColor = 0.85212836;
  static constexpr double kSize = 1.096005;
  static constexpr double kType = 1.21943385;
};

inline constexpr double kProbabilityClamp = 1e-7;

enum class VariableKind : std::uint8_t { kArrangement, kPresent, kColor, kSize, kType };

// One symbolic variable's span of encoded dims. Categorical variables use a
// softmax over `length` dims; presence bits are single sigmoid dims.
struct Segment {
  int offset;
  int length;
  VariableKind kind;
  int slot;  // -1 for the arrangement

  bool binary() const { return kind == VariableKind::kPresent; }
  double weight() const;
};

// The 101 segments, arrangement first, then presence bits, then the
// color/size/type of each slot.
const std::vector<Segment>& segments();

EncodedPanel encode(const PropertyVector& p);
PropertyVector decode(const EncodedPanel& e);

RelevanceMask resolve_relevance(const PropertyVector& source);

// Mismatches on the variables `source` deems relevant; in [0, 37].
int hamming(const PropertyVector& p, const PropertyVector& q, const PropertyVector& source);

// Per-dim targets/weights for the weighted log loss; shared by the
// evaluation path below and the differentiable training loss.
struct LossTerms {
  std::array<float, kEncodedDim> target{};
  std::array<float, kEncodedDim> weight{};
  std::array<std::uint8_t, kEncodedDim> binary{};
};

// `reference` supplies target distributions on the dims made relevant by
// `relevance`; weights are zero elsewhere.
LossTerms loss_terms(const EncodedPanel& reference, const RelevanceMask& relevance);

// -sum_j w_j [t_j log p_j + b_j (1 - t_j) log(1 - p_j)], p clamped.
double weighted_log_loss(const EncodedPanel& pred, const LossTerms& terms);

double weighted_cross_entropy(const EncodedPanel& pred, const PropertyVector& target,
                              const PropertyVector& source);

enum class DistanceKind { kProb, kHamming };

// Relevance always comes from decode(cls).
double dcm_distance(const EncodedPanel& pred, const EncodedPanel& cls, DistanceKind kind);

// Checks the normalization invariants (softmax groups sum to 1 within tol,
// all values in [0, 1]).
bool is_normalized(const EncodedPanel& e, double tolerance = 1e-6);

}  // namespace rpm
