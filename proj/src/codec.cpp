#include "rpm/codec.hpp"

#include <algorithm>
#include <cmath>

namespace rpm {

double Segment::weight() const {
  switch (kind) {
    case VariableKind::kArrangement: return LossWeights::kArrangement;
    case VariableKind::kPresent: return LossWeights::kPresent;
    case VariableKind::kColor: return LossWeights::kColor;
    case VariableKind::kSize: return LossWeights::kSize;
    case VariableKind::kType: return LossWeights::kType;
  }
  return 0.0;
}

const std::vector<Segment>& segments() {
  static const std::vector<Segment> table = [] {
    std::vector<Segment> s;
    s.push_back({kArrangementOffset, kNumArrangements, VariableKind::kArrangement, -1});
    for (int i = 0; i < kNumSlots; ++i) s.push_back({kPresenceOffset + i, 1, VariableKind::kPresent, i});
    for (int i = 0; i < kNumSlots; ++i) {
      s.push_back({attribute_offset(i, ObjectAttribute::kColor), kNumColors, VariableKind::kColor, i});
      s.push_back({attribute_offset(i, ObjectAttribute::kSize), kNumSizes, VariableKind::kSize, i});
      s.push_back({attribute_offset(i, ObjectAttribute::kType), kNumTypes, VariableKind::kType, i});
    }
    return s;
  }();
  return table;
}

EncodedPanel encode(const PropertyVector& p) {
  EncodedPanel e;
  e.values[kArrangementOffset + static_cast<int>(p.arrangement)] = 1.0f;
  for (int i = 0; i < kNumSlots; ++i) {
    if (!p.present[i]) continue;
    e.values[kPresenceOffset + i] = 1.0f;
    const auto& o = *p.objects[i];
    e.values[attribute_offset(i, ObjectAttribute::kColor) + o.color] = 1.0f;
    e.values[attribute_offset(i, ObjectAttribute::kSize) + o.size] = 1.0f;
    e.values[attribute_offset(i, ObjectAttribute::kType) + o.type] = 1.0f;
  }
  return e;
}

namespace {

// Lowest index wins ties.
int argmax(const EncodedPanel& e, int offset, int length) {
  int best = 0;
  for (int j = 1; j < length; ++j) {
    if (e.values[offset + j] > e.values[offset + best]) best = j;
  }
  return best;
}

}  // namespace

PropertyVector decode(const EncodedPanel& e) {
  PropertyVector p;
  p.arrangement = static_cast<ArrangementKind>(argmax(e, kArrangementOffset, kNumArrangements));
  const auto range = arrangement(p.arrangement).slots;
  bool any = false;
  for (int i = range.begin; i < range.end; ++i) {
    if (e.values[kPresenceOffset + i] > 0.5f) {
      p.present[i] = true;
      any = true;
    }
  }
  if (!any) {
    int best = range.begin;
    for (int i = range.begin + 1; i < range.end; ++i) {
      if (e.values[kPresenceOffset + i] > e.values[kPresenceOffset + best]) best = i;
    }
    p.present[best] = true;
  }
  for (int i = range.begin; i < range.end; ++i) {
    if (!p.present[i]) continue;
    ObjectSpec o;
    o.color = static_cast<std::uint8_t>(argmax(e, attribute_offset(i, ObjectAttribute::kColor), kNumColors));
    o.size = static_cast<std::uint8_t>(argmax(e, attribute_offset(i, ObjectAttribute::kSize), kNumSizes));
    o.type = static_cast<std::uint8_t>(argmax(e, attribute_offset(i, ObjectAttribute::kType), kNumTypes));
    p.objects[i] = o;
  }
  return p;
}

RelevanceMask resolve_relevance(const PropertyVector& source) {
  RelevanceMask m;
  const auto range = arrangement(source.arrangement).slots;
  for (int i = range.begin; i < range.end; ++i) {
    m.present_relevant[i] = true;
    m.object_relevant[i] = source.present[i];
  }
  return m;
}

int hamming(const PropertyVector& p, const PropertyVector& q, const PropertyVector& source) {
  const auto rel = resolve_relevance(source);
  int d = p.arrangement != q.arrangement;
  for (int i = 0; i < kNumSlots; ++i) {
    if (rel.present_relevant[i]) d += p.present[i] != q.present[i];
    if (!rel.object_relevant[i]) continue;
    // A slot one side leaves empty mismatches on all three attributes.
    if (!p.objects[i] || !q.objects[i]) {
      d += (p.objects[i].has_value() != q.objects[i].has_value()) ? 3 : 0;
      continue;
    }
    const auto& a = *p.objects[i];
    const auto& b = *q.objects[i];
    d += (a.color != b.color) + (a.size != b.size) + (a.type != b.type);
  }
  return d;
}

LossTerms loss_terms(const EncodedPanel& reference, const RelevanceMask& relevance) {
  LossTerms t;
  for (const auto& seg : segments()) {
    bool relevant = false;
    switch (seg.kind) {
      case VariableKind::kArrangement: relevant = true; break;
      case VariableKind::kPresent: relevant = relevance.present_relevant[seg.slot]; break;
      default: relevant = relevance.object_relevant[seg.slot]; break;
    }
    if (!relevant) continue;
    const auto w = static_cast<float>(seg.weight());
    for (int j = 0; j < seg.length; ++j) {
      t.target[seg.offset + j] = reference.values[seg.offset + j];
      t.weight[seg.offset + j] = w;
      t.binary[seg.offset + j] = seg.binary();
    }
  }
  return t;
}

double weighted_log_loss(const EncodedPanel& pred, const LossTerms& terms) {
  double loss = 0.0;
  for (int j = 0; j < kEncodedDim; ++j) {
    if (terms.weight[j] == 0.0f) continue;
    const double p = std::clamp(static_cast<double>(pred.values[j]), kProbabilityClamp, 1.0 - kProbabilityClamp);
    const double t = terms.target[j];
    double term = -t * std::log(p);
    if (terms.binary[j]) term -= (1.0 - t) * std::log(1.0 - p);
    loss += terms.weight[j] * term;
  }
  return loss;
}

double weighted_cross_entropy(const EncodedPanel& pred, const PropertyVector& target,
                              const PropertyVector& source) {
  return weighted_log_loss(pred, loss_terms(encode(target), resolve_relevance(source)));
}

double dcm_distance(const EncodedPanel& pred, const EncodedPanel& cls, DistanceKind kind) {
  const auto source = decode(cls);
  if (kind == DistanceKind::kHamming) return hamming(decode(pred), source, source);
  return weighted_log_loss(pred, loss_terms(cls, resolve_relevance(source)));
}

bool is_normalized(const EncodedPanel& e, double tolerance) {
  for (float v : e.values) {
    if (!(v >= 0.0f && v <= 1.0f)) return false;
  }
  for (const auto& seg : segments()) {
    if (seg.binary()) continue;
    double sum = 0.0;
    for (int j = 0; j < seg.length; ++j) sum += e.values[seg.offset + j];
    if (std::abs(sum - 1.0) > tolerance) return false;
  }
  return true;
}

}  // namespace rpm
