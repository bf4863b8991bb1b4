#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace rpm {

inline constexpr int kNumArrangements = 7;
inline constexpr int kNumSlots = 25;
inline constexpr int kNumColors = 10;
inline constexpr int kNumSizes = 6;
inline constexpr int kNumTypes = 5;
inline constexpr int kNumVariables = 1 + kNumSlots + 3 * kNumSlots;  // 101
inline constexpr int kMinRelevant = 5;
inline constexpr int kMaxRelevant = 37;

enum class ArrangementKind : std::uint8_t {
  kCenterSingle = 0,
  kDistributeFour,
  kDistributeNine,
  kInCenterOutCenter,
  kInFourOutCenter,
  kLeftRight,
  kUpDown,
};

// Half-open interval of global slot indices.
struct SlotRange {
  int begin = 0;
  int end = 0;

  int size() const { return end - begin; }
  bool contains(int slot) const { return slot >= begin && slot < end; }
};

struct Arrangement {
  ArrangementKind kind;
  std::string_view name;
  SlotRange slots;
  int max_objects;
};

// The fixed table of the 7 arrangements, in canonical order. Slots inside
// composites: inner before outer, left before right, up before down, grids
// row-major.
const std::array<Arrangement, kNumArrangements>& arrangements();
const Arrangement& arrangement(ArrangementKind kind);
std::optional<ArrangementKind> arrangement_from_name(std::string_view name);

enum class ShapeType : std::uint8_t {
  kTriangle = 0,
  kSquare,
  kPentagon,
  kHexagon,
  kCircle,
};

inline constexpr std::array<int, kNumColors> kColorValues = {
    255, 224, 196, 168, 140, 112, 84, 56, 28, 0};
inline constexpr std::array<double, kNumSizes> kSizeValues = {
    0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
inline constexpr std::array<std::string_view, kNumTypes> kTypeNames = {
    "triangle", "square", "pentagon", "hexagon", "circle"};

// Appearance of one object, stored as indices into the value tables above.
struct ObjectSpec {
  std::uint8_t color = 0;
  std::uint8_t size = 0;
  std::uint8_t type = 0;

  bool operator==(const ObjectSpec&) const = default;
};

enum class ObjectAttribute : std::uint8_t { kColor = 0, kSize, kType };

inline constexpr int attribute_domain(ObjectAttribute a) {
  switch (a) {
    case ObjectAttribute::kColor: return kNumColors;
    case ObjectAttribute::kSize: return kNumSizes;
    case ObjectAttribute::kType: return kNumTypes;
  }
  return 0;
}

inline int get_attribute(const ObjectSpec& o, ObjectAttribute a) {
  switch (a) {
    case ObjectAttribute::kColor: return o.color;
    case ObjectAttribute::kSize: return o.size;
    case ObjectAttribute::kType: return o.type;
  }
  return 0;
}

inline void set_attribute(ObjectSpec& o, ObjectAttribute a, int value) {
  auto v = static_cast<std::uint8_t>(value);
  switch (a) {
    case ObjectAttribute::kColor: o.color = v; break;
    case ObjectAttribute::kSize: o.size = v; break;
    case ObjectAttribute::kType: o.type = v; break;
  }
}

// Symbolic description of one panel: 1 + 25 + 75 = 101 variables.
struct PropertyVector {
  ArrangementKind arrangement = ArrangementKind::kCenterSingle;
  std::array<bool, kNumSlots> present{};
  std::array<std::optional<ObjectSpec>, kNumSlots> objects{};

  bool operator==(const PropertyVector&) const = default;

  int object_count() const;
  // Places an object in `slot` and marks it present.
  void put(int slot, ObjectSpec object);
  void clear(int slot);
};

// Which presence bits (V) and object slots (V') count, given a source vector.
struct RelevanceMask {
  std::array<bool, kNumSlots> present_relevant{};
  std::array<bool, kNumSlots> object_relevant{};

  int relevant_count() const;
  bool operator==(const RelevanceMask&) const = default;
};

int relevant_count(const PropertyVector& p);

struct Violation {
  enum class Kind {
    kPresentOutsideRange,
    kNoObjects,
    kMissingObject,
    kAttributeOutOfRange,
    kObjectOnAbsentSlot,
  };
  Kind kind;
  int slot = -1;
  std::string message;
};

// Empty result means the vector is valid.
std::vector<Violation> validate(const PropertyVector& p);
inline bool is_valid(const PropertyVector& p) { return validate(p).empty(); }

// ---------------------------------------------------------------------------
// Task-level types.

enum class RuleAttribute : std::uint8_t { kNumber = 0, kPosition, kType, kSize, kColor };
enum class RuleKind : std::uint8_t { kConstant = 0, kProgression, kArithmetic, kDistributeThree };
enum class BiasMode : std::uint8_t { kBiased = 0, kUnbiased };

std::string_view to_string(RuleAttribute a);
std::string_view to_string(RuleKind r);
std::string_view to_string(BiasMode b);
std::optional<RuleAttribute> rule_attribute_from_name(std::string_view s);
std::optional<RuleKind> rule_kind_from_name(std::string_view s);
std::optional<BiasMode> bias_mode_from_name(std::string_view s);

// One row-wise rule acting on one attribute of one arrangement component.
// `param` is the progression step (-2, -1, 1, 2) or the arithmetic sign
// (+1, -1); unused otherwise.
struct RuleSpec {
  int component = 0;
  RuleAttribute attribute = RuleAttribute::kNumber;
  RuleKind rule = RuleKind::kConstant;
  int param = 0;

  bool operator==(const RuleSpec&) const = default;
};

inline constexpr int kContextPanels = 8;
inline constexpr int kAnswerPanels = 8;
inline constexpr int kGridPanels = 9;
inline constexpr int kQueryPosition = 8;

struct RpmTask {
  std::array<PropertyVector, kContextPanels> context{};
  PropertyVector query_truth{};
  std::array<PropertyVector, kAnswerPanels> answers{};
  int correct_index = 0;
  std::vector<RuleSpec> rule_meta;
  BiasMode bias_mode = BiasMode::kBiased;
  std::uint64_t seed = 0;
  std::uint64_t index = 0;

  bool operator==(const RpmTask&) const = default;

  // The 9 grid panels in row-major order with the query completed by the
  // correct answer.
  std::array<PropertyVector, kGridPanels> completed() const;
  // As completed(), but with the query position filled by answer `i`.
  std::array<PropertyVector, kGridPanels> with_answer(int i) const;
};

}  // namespace rpm
