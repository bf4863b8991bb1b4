#include "rpm/taskgen.hpp"

#include <algorithm>
#include <optional>
#include <utility>

#include "rpm/error.hpp"

namespace rpm {

std::vector<Component> components(ArrangementKind kind) {
  const auto r = arrangement(kind).slots;
  switch (kind) {
    case ArrangementKind::kCenterSingle:
      return {{r, false}};
    case ArrangementKind::kDistributeFour:
    case ArrangementKind::kDistributeNine:
      return {{r, true}};
    case ArrangementKind::kInFourOutCenter:
      return {{{r.begin, r.begin + 4}, true}, {{r.begin + 4, r.end}, false}};
    case ArrangementKind::kInCenterOutCenter:
    case ArrangementKind::kLeftRight:
    case ArrangementKind::kUpDown:
      return {{{r.begin, r.begin + 1}, false}, {{r.begin + 1, r.end}, false}};
  }
  return {};
}

namespace {

using Triple = std::array<int, 3>;
using Rows = std::array<Triple, 3>;

constexpr std::array<int, 4> kSteps = {-2, -1, 1, 2};

template <typename T>
std::optional<T> pick(const std::vector<T>& v, Rng& rng) {
  if (v.empty()) return std::nullopt;
  return v[rng.index(static_cast<int>(v.size()))];
}

// Chooses the rule parameter and fills three rows of values in [lo, hi].
std::optional<Rows> integer_rows(RuleKind rule, int param, int lo, int hi, Rng& rng) {
  Rows rows{};
  if (rule == RuleKind::kDistributeThree) {
    if (hi - lo + 1 < 3) return std::nullopt;
    std::vector<int> pool;
    for (int v = lo; v <= hi; ++v) pool.push_back(v);
    rng.shuffle(pool.begin(), pool.end());
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) rows[r][c] = pool[(r + c) % 3];
    }
    return rows;
  }
  for (int r = 0; r < 3; ++r) {
    switch (rule) {
      case RuleKind::kConstant: {
        const int a = rng.range(lo, hi);
        rows[r] = {a, a, a};
        break;
      }
      case RuleKind::kProgression: {
        std::vector<int> starts;
        for (int a = lo; a <= hi; ++a) {
          const int last = a + 2 * param;
          if (last >= lo && last <= hi) starts.push_back(a);
        }
        auto a = pick(starts, rng);
        if (!a) return std::nullopt;
        rows[r] = {*a, *a + param, *a + 2 * param};
        break;
      }
      case RuleKind::kArithmetic: {
        std::vector<std::pair<int, int>> pairs;
        for (int a = lo; a <= hi; ++a) {
          for (int b = std::max(lo, 1); b <= hi; ++b) {
            const int c = a + param * b;
            if (c >= lo && c <= hi) pairs.emplace_back(a, b);
          }
        }
        auto ab = pick(pairs, rng);
        if (!ab) return std::nullopt;
        rows[r] = {ab->first, ab->second, ab->first + param * ab->second};
        break;
      }
      case RuleKind::kDistributeThree:
        break;
    }
  }
  return rows;
}

int rotate_mask(int mask, int step, int k) {
  const int full = (1 << k) - 1;
  step = ((step % k) + k) % k;
  return ((mask << step) | (mask >> (k - step))) & full;
}

// Position rules act on bitmasks over the k slots of a grid component.
std::optional<Rows> position_rows(RuleKind rule, int param, int k, Rng& rng) {
  const int full = (1 << k) - 1;
  auto random_mask = [&] { return 1 + rng.index(full); };  // nonempty
  Rows rows{};
  if (rule == RuleKind::kDistributeThree) {
    std::array<int, 3> masks{};
    masks[0] = random_mask();
    do masks[1] = random_mask(); while (masks[1] == masks[0]);
    do masks[2] = random_mask(); while (masks[2] == masks[0] || masks[2] == masks[1]);
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) rows[r][c] = masks[(r + c) % 3];
    }
    return rows;
  }
  for (int r = 0; r < 3; ++r) {
    switch (rule) {
      case RuleKind::kConstant: {
        const int m = random_mask();
        rows[r] = {m, m, m};
        break;
      }
      case RuleKind::kProgression: {
        int m = random_mask();
        while (m == full) m = random_mask();
        rows[r] = {m, rotate_mask(m, param, k), rotate_mask(m, 2 * param, k)};
        break;
      }
      case RuleKind::kArithmetic: {
        // Union for +, difference for -; operands chosen so the result
        // differs from both.
        int a = 0;
        int b = 0;
        int c = 0;
        bool ok = false;
        for (int tries = 0; tries < 64 && !ok; ++tries) {
          a = random_mask();
          b = random_mask();
          if (param > 0) {
            c = a | b;
            ok = (b & ~a) != 0 && (a & ~b) != 0;
          } else {
            c = a & ~b;
            ok = (a & b) != 0 && c != 0;
          }
        }
        if (!ok) return std::nullopt;
        rows[r] = {a, b, c};
        break;
      }
      case RuleKind::kDistributeThree:
        break;
    }
  }
  return rows;
}

int rule_param(RuleKind rule, Rng& rng) {
  switch (rule) {
    case RuleKind::kProgression: return kSteps[rng.index(4)];
    case RuleKind::kArithmetic: return rng.bernoulli(0.5) ? 1 : -1;
    default: return 0;
  }
}

int number_to_mask(int n) { return (1 << n) - 1; }

std::optional<RuleKind> choose_rule(const GenConfig& cfg, bool arithmetic_allowed, Rng& rng) {
  std::vector<RuleKind> allowed;
  for (auto k : cfg.rule_kinds) {
    if (k == RuleKind::kArithmetic && !arithmetic_allowed) continue;
    allowed.push_back(k);
  }
  return pick(allowed, rng);
}

ArrangementKind choose_arrangement(const GenConfig& cfg, Rng& rng) {
  double total = 0.0;
  for (double w : cfg.arrangement_weights) total += w;
  const double u = rng.uniform() * total;
  double acc = 0.0;
  for (int i = 0; i < kNumArrangements; ++i) {
    acc += cfg.arrangement_weights[i];
    if (u < acc && cfg.arrangement_weights[i] > 0.0) return static_cast<ArrangementKind>(i);
  }
  for (int i = kNumArrangements - 1; i >= 0; --i) {
    if (cfg.arrangement_weights[i] > 0.0) return static_cast<ArrangementKind>(i);
  }
  return ArrangementKind::kCenterSingle;
}

std::optional<RpmTask> attempt(const GenConfig& cfg, Rng& rng) {
  const auto kind = choose_arrangement(cfg, rng);
  std::array<PropertyVector, kGridPanels> grid;
  for (auto& p : grid) p.arrangement = kind;
  std::vector<RuleSpec> meta;

  const auto comps = components(kind);
  for (int ci = 0; ci < static_cast<int>(comps.size()); ++ci) {
    const auto& comp = comps[ci];
    const int k = comp.slots.size();

    Rows masks{};
    if (comp.grid) {
      const auto layout = rng.bernoulli(0.5) ? RuleAttribute::kNumber : RuleAttribute::kPosition;
      auto rule = choose_rule(cfg, true, rng);
      if (!rule) return std::nullopt;
      const int param = rule_param(*rule, rng);
      std::optional<Rows> rows;
      if (layout == RuleAttribute::kNumber) {
        rows = integer_rows(*rule, param, 1, k, rng);
        if (rows) {
          for (auto& row : *rows) {
            for (auto& n : row) n = number_to_mask(n);
          }
        }
      } else {
        rows = position_rows(*rule, param, k, rng);
      }
      if (!rows) return std::nullopt;
      masks = *rows;
      meta.push_back({ci, layout, *rule, param});
    } else {
      for (auto& row : masks) row = {1, 1, 1};
    }

    std::array<Rows, 3> values{};
    constexpr std::array<std::pair<RuleAttribute, ObjectAttribute>, 3> kAttrs = {{
        {RuleAttribute::kType, ObjectAttribute::kType},
        {RuleAttribute::kSize, ObjectAttribute::kSize},
        {RuleAttribute::kColor, ObjectAttribute::kColor},
    }};
    for (int a = 0; a < 3; ++a) {
      const auto [rule_attr, obj_attr] = kAttrs[a];
      auto rule = choose_rule(cfg, rule_attr != RuleAttribute::kType, rng);
      if (!rule) return std::nullopt;
      const int param = rule_param(*rule, rng);
      auto rows = integer_rows(*rule, param, 0, attribute_domain(obj_attr) - 1, rng);
      if (!rows) return std::nullopt;
      values[a] = *rows;
      meta.push_back({ci, rule_attr, *rule, param});
    }

    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) {
        auto& panel = grid[3 * r + c];
        ObjectSpec obj;
        obj.type = static_cast<std::uint8_t>(values[0][r][c]);
        obj.size = static_cast<std::uint8_t>(values[1][r][c]);
        obj.color = static_cast<std::uint8_t>(values[2][r][c]);
        for (int s = 0; s < k; ++s) {
          if (masks[r][c] & (1 << s)) panel.put(comp.slots.begin + s, obj);
        }
      }
    }
  }

  for (const auto& p : grid) {
    if (!is_valid(p)) return std::nullopt;
  }

  RpmTask task;
  std::copy(grid.begin(), grid.begin() + kContextPanels, task.context.begin());
  task.query_truth = grid[kQueryPosition];
  task.rule_meta = std::move(meta);
  task.bias_mode = cfg.bias_mode;
  try {
    auto set = generate_answers(task.query_truth, cfg.bias_mode, rng);
    task.answers = set.answers;
    task.correct_index = set.correct_index;
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kInsufficientAttributeSpace) return std::nullopt;
    throw;
  }
  return task;
}

struct Dimension {
  int slot;
  ObjectAttribute attr;
};

std::vector<Dimension> object_dimensions(const PropertyVector& p) {
  std::vector<Dimension> dims;
  for (int s = 0; s < kNumSlots; ++s) {
    if (!p.present[s]) continue;
    for (auto a : {ObjectAttribute::kColor, ObjectAttribute::kSize, ObjectAttribute::kType}) {
      dims.push_back({s, a});
    }
  }
  return dims;
}

int current_value(const PropertyVector& p, const Dimension& d) {
  return get_attribute(*p.objects[d.slot], d.attr);
}

void assign(PropertyVector& p, const Dimension& d, int value) {
  set_attribute(*p.objects[d.slot], d.attr, value);
}

}  // namespace

AnswerSet generate_answers(const PropertyVector& truth, BiasMode mode, Rng& rng) {
  AnswerSet out;
  const auto dims = object_dimensions(truth);

  if (mode == BiasMode::kBiased) {
    // Each dimension may be perturbed at most 6 times and never twice to the
    // same value, so the truth's value stays strictly modal.
    std::vector<std::vector<int>> unused(dims.size());
    std::vector<int> uses(dims.size(), 0);
    for (std::size_t d = 0; d < dims.size(); ++d) {
      const int cur = current_value(truth, dims[d]);
      for (int v = 0; v < attribute_domain(dims[d].attr); ++v) {
        if (v != cur) unused[d].push_back(v);
      }
    }
    out.correct_index = rng.index(kAnswerPanels);
    for (int i = 0; i < kAnswerPanels; ++i) {
      out.answers[i] = truth;
      if (i == out.correct_index) continue;
      std::vector<int> open;
      for (std::size_t d = 0; d < dims.size(); ++d) {
        if (uses[d] < kAnswerPanels - 2 && !unused[d].empty()) open.push_back(static_cast<int>(d));
      }
      if (open.empty()) {
        throw Error(ErrorCode::kInsufficientAttributeSpace, "no attribute left to perturb");
      }
      const int d = open[rng.index(static_cast<int>(open.size()))];
      auto& pool = unused[d];
      const int at = rng.index(static_cast<int>(pool.size()));
      assign(out.answers[i], dims[d], pool[at]);
      pool.erase(pool.begin() + at);
      ++uses[d];
    }
    return out;
  }

  if (dims.size() < 3) {
    throw Error(ErrorCode::kInsufficientAttributeSpace,
                "unbiased answers need at least 3 object attributes");
  }
  std::vector<int> order(dims.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  rng.shuffle(order.begin(), order.end());
  std::array<Dimension, 3> chosen{dims[order[0]], dims[order[1]], dims[order[2]]};
  std::array<int, 3> alternative{};
  for (int j = 0; j < 3; ++j) {
    const int cur = current_value(truth, chosen[j]);
    int v = rng.index(attribute_domain(chosen[j].attr) - 1);
    if (v >= cur) ++v;
    alternative[j] = v;
  }
  std::array<int, kAnswerPanels> patterns{0, 1, 2, 3, 4, 5, 6, 7};
  rng.shuffle(patterns.begin(), patterns.end());
  for (int i = 0; i < kAnswerPanels; ++i) {
    out.answers[i] = truth;
    for (int j = 0; j < 3; ++j) {
      if (patterns[i] & (1 << j)) assign(out.answers[i], chosen[j], alternative[j]);
    }
    if (patterns[i] == 0) out.correct_index = i;
  }
  return out;
}

RpmTask sample_task(const GenConfig& cfg, std::uint64_t index) {
  if (index >= cfg.count) {
    throw Error(ErrorCode::kInvalidArgument, "task index " + std::to_string(index) +
                                                 " out of range for count " +
                                                 std::to_string(cfg.count));
  }
  bool any_positive = false;
  for (double w : cfg.arrangement_weights) {
    if (w < 0.0) throw Error(ErrorCode::kInvalidArgument, "negative arrangement weight");
    any_positive |= w > 0.0;
  }
  if (!any_positive) throw Error(ErrorCode::kInvalidArgument, "all arrangement weights are zero");

  Rng rng(derive_seed(cfg.base_seed, index));
  for (int i = 0; i < kMaxGenerationAttempts; ++i) {
    if (auto task = attempt(cfg, rng)) {
      task->seed = cfg.base_seed;
      task->index = index;
      return *std::move(task);
    }
  }
  throw Error(ErrorCode::kGenerationRetryExhausted,
              "rule constraints unsatisfiable after " + std::to_string(kMaxGenerationAttempts) +
                  " attempts (task " + std::to_string(index) + ")");
}

std::vector<RpmTask> generate_tasks(const GenConfig& cfg) {
  std::vector<RpmTask> out;
  out.reserve(cfg.count);
  for (std::uint64_t i = 0; i < cfg.count; ++i) out.push_back(sample_task(cfg, i));
  return out;
}

}  // namespace rpm
