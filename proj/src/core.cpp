#include "rpm/core.hpp"

#include <algorithm>

namespace rpm {

const std::array<Arrangement, kNumArrangements>& arrangements() {
  static const std::array<Arrangement, kNumArrangements> table = {{
      {ArrangementKind::kCenterSingle, "center-single", {0, 1}, 1},
      {ArrangementKind::kDistributeFour, "distribute-four", {1, 5}, 4},
      {ArrangementKind::kDistributeNine, "distribute-nine", {5, 14}, 9},
      {ArrangementKind::kInCenterOutCenter, "in-center-single-out-center-single", {14, 16}, 2},
      {ArrangementKind::kInFourOutCenter, "in-distribute-four-out-center-single", {16, 21}, 5},
      {ArrangementKind::kLeftRight, "left-center-single-right-center-single", {21, 23}, 2},
      {ArrangementKind::kUpDown, "up-center-single-down-center-single", {23, 25}, 2},
  }};
  return table;
}

const Arrangement& arrangement(ArrangementKind kind) {
  return arrangements()[static_cast<int>(kind)];
}

std::optional<ArrangementKind> arrangement_from_name(std::string_view name) {
  for (const auto& a : arrangements()) {
    if (a.name == name) return a.kind;
  }
  return std::nullopt;
}

int PropertyVector::object_count() const {
  return static_cast<int>(std::count(present.begin(), present.end(), true));
}

void PropertyVector::put(int slot, ObjectSpec object) {
  present[slot] = true;
  objects[slot] = object;
}

void PropertyVector::clear(int slot) {
  present[slot] = false;
  objects[slot].reset();
}

int RelevanceMask::relevant_count() const {
  int v = 0;
  int v_prime = 0;
  for (int i = 0; i < kNumSlots; ++i) {
    v += present_relevant[i];
    v_prime += object_relevant[i];
  }
  return 1 + v + 3 * v_prime;
}

int relevant_count(const PropertyVector& p) {
  const auto range = arrangement(p.arrangement).slots;
  int objects = 0;
  for (int i = range.begin; i < range.end; ++i) objects += p.present[i];
  return 1 + range.size() + 3 * objects;
}

std::vector<Violation> validate(const PropertyVector& p) {
  std::vector<Violation> out;
  const int kind = static_cast<int>(p.arrangement);
  if (kind < 0 || kind >= kNumArrangements) {
    out.push_back({Violation::Kind::kPresentOutsideRange, -1, "unknown arrangement kind"});
    return out;
  }
  const auto range = arrangement(p.arrangement).slots;
  int count = 0;
  for (int i = 0; i < kNumSlots; ++i) {
    const std::string where = "slot " + std::to_string(i);
    if (p.present[i]) {
      if (!range.contains(i)) {
        out.push_back({Violation::Kind::kPresentOutsideRange, i,
                       where + " present outside the arrangement's slot range"});
      } else {
        ++count;
      }
      if (!p.objects[i]) {
        out.push_back({Violation::Kind::kMissingObject, i, where + " present without an object"});
      } else {
        const auto& o = *p.objects[i];
        if (o.color >= kNumColors || o.size >= kNumSizes || o.type >= kNumTypes) {
          out.push_back({Violation::Kind::kAttributeOutOfRange, i,
                         where + " attribute index out of range"});
        }
      }
    } else if (p.objects[i]) {
      out.push_back({Violation::Kind::kObjectOnAbsentSlot, i, where + " holds an object but is absent"});
    }
  }
  if (count == 0) {
    out.push_back({Violation::Kind::kNoObjects, -1, "no present object in the arrangement"});
  }
  return out;
}

namespace {

constexpr std::array<std::string_view, 5> kRuleAttributeNames = {
    "number", "position", "type", "size", "color"};
constexpr std::array<std::string_view, 4> kRuleKindNames = {
    "constant", "progression", "arithmetic", "distribute-three"};
constexpr std::array<std::string_view, 2> kBiasNames = {"biased", "unbiased"};

template <typename E, std::size_t N>
std::optional<E> lookup(const std::array<std::string_view, N>& names, std::string_view s) {
  for (std::size_t i = 0; i < N; ++i) {
    if (names[i] == s) return static_cast<E>(i);
  }
  return std::nullopt;
}

}  // namespace

std::string_view to_string(RuleAttribute a) { return kRuleAttributeNames[static_cast<int>(a)]; }
std::string_view to_string(RuleKind r) { return kRuleKindNames[static_cast<int>(r)]; }
std::string_view to_string(BiasMode b) { return kBiasNames[static_cast<int>(b)]; }

std::optional<RuleAttribute> rule_attribute_from_name(std::string_view s) {
  return lookup<RuleAttribute>(kRuleAttributeNames, s);
}
std::optional<RuleKind> rule_kind_from_name(std::string_view s) {
  return lookup<RuleKind>(kRuleKindNames, s);
}
std::optional<BiasMode> bias_mode_from_name(std::string_view s) {
  return lookup<BiasMode>(kBiasNames, s);
}

std::array<PropertyVector, kGridPanels> RpmTask::completed() const {
  return with_answer(correct_index);
}

std::array<PropertyVector, kGridPanels> RpmTask::with_answer(int i) const {
  std::array<PropertyVector, kGridPanels> grid;
  std::copy(context.begin(), context.end(), grid.begin());
  grid[kQueryPosition] = answers[i];
  return grid;
}

}  // namespace rpm
