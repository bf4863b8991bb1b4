#include "rpm/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"
#include "rpm/error.hpp"

namespace rpm {

using nlohmann::json;

namespace {

[[noreturn]] void malformed(const std::string& what) { throw Error(ErrorCode::kMalformedRecord, what); }

json pv_to_json(const PropertyVector& p) {
  json objects = json::array();
  for (int i = 0; i < kNumSlots; ++i) {
    if (!p.present[i] || !p.objects[i]) continue;
    const auto& o = *p.objects[i];
    objects.push_back({{"slot", i}, {"color", o.color}, {"size", o.size}, {"type", o.type}});
  }
  return {{"arrangement", arrangement(p.arrangement).name}, {"objects", objects}};
}

PropertyVector pv_from_json(const json& j) {
  PropertyVector p;
  const auto name = j.at("arrangement").get<std::string>();
  const auto kind = arrangement_from_name(name);
  if (!kind) malformed("unknown arrangement '" + name + "'");
  p.arrangement = *kind;
  for (const auto& o : j.at("objects")) {
    const int slot = o.at("slot").get<int>();
    if (slot < 0 || slot >= kNumSlots) malformed("slot " + std::to_string(slot) + " out of range");
    ObjectSpec spec;
    spec.color = o.at("color").get<std::uint8_t>();
    spec.size = o.at("size").get<std::uint8_t>();
    spec.type = o.at("type").get<std::uint8_t>();
    p.put(slot, spec);
  }
  const auto violations = validate(p);
  if (!violations.empty()) malformed("invalid panel: " + violations.front().message);
  return p;
}

template <typename T, typename F>
T enum_from(const json& j, F parse, const char* what) {
  const auto s = j.get<std::string>();
  const auto v = parse(s);
  if (!v) malformed(std::string("unknown ") + what + " '" + s + "'");
  return *v;
}

void put_u32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff), char((v >> 24) & 0xff)};
  out.write(b, 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) malformed("checkpoint truncated");
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
}

void put_string(std::ostream& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in, std::uint32_t limit) {
  const auto n = get_u32(in);
  if (n > limit) malformed("checkpoint string length " + std::to_string(n) + " exceeds limit");
  std::string s(n, '\0');
  if (!in.read(s.data(), n)) malformed("checkpoint truncated");
  return s;
}

std::ifstream open_in(const std::string& path, bool binary) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) throw Error(ErrorCode::kMissingFile, "cannot open " + path);
  return in;
}

std::ofstream open_out(const std::string& path, bool binary) {
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw Error(ErrorCode::kInvalidArgument, "cannot write " + path);
  return out;
}

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

std::string task_to_line(const RpmTask& t) {
  json j;
  j["renderer_version"] = kRendererVersion;
  j["seed"] = t.seed;
  j["index"] = t.index;
  j["bias_mode"] = to_string(t.bias_mode);
  j["correct_index"] = t.correct_index;
  j["context"] = json::array();
  for (const auto& p : t.context) j["context"].push_back(pv_to_json(p));
  j["query"] = pv_to_json(t.query_truth);
  j["answers"] = json::array();
  for (const auto& p : t.answers) j["answers"].push_back(pv_to_json(p));
  j["rules"] = json::array();
  for (const auto& r : t.rule_meta) {
    j["rules"].push_back({{"component", r.component},
                          {"attribute", to_string(r.attribute)},
                          {"rule", to_string(r.rule)},
                          {"param", r.param}});
  }
  return j.dump();
}

RpmTask task_from_line(std::string_view line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    malformed(std::string("not JSON: ") + e.what());
  }
  try {
    const int version = j.at("renderer_version").get<int>();
    if (version != kRendererVersion) {
      throw Error(ErrorCode::kVersionMismatch, "renderer version " + std::to_string(version) + ", expected " +
                                                   std::to_string(kRendererVersion));
    }
    RpmTask t;
    t.seed = j.at("seed").get<std::uint64_t>();
    t.index = j.at("index").get<std::uint64_t>();
    t.bias_mode = enum_from<BiasMode>(j.at("bias_mode"), bias_mode_from_name, "bias mode");
    t.correct_index = j.at("correct_index").get<int>();
    if (t.correct_index < 0 || t.correct_index >= kAnswerPanels) malformed("correct_index out of range");
    const auto& ctx = j.at("context");
    const auto& ans = j.at("answers");
    if (ctx.size() != kContextPanels) malformed("expected 8 context panels");
    if (ans.size() != kAnswerPanels) malformed("expected 8 answer panels");
    for (int i = 0; i < kContextPanels; ++i) t.context[i] = pv_from_json(ctx[i]);
    for (int i = 0; i < kAnswerPanels; ++i) t.answers[i] = pv_from_json(ans[i]);
    t.query_truth = pv_from_json(j.at("query"));
    if (!(t.answers[t.correct_index] == t.query_truth)) malformed("answer at correct_index differs from query");
    for (const auto& r : j.at("rules")) {
      RuleSpec s;
      s.component = r.at("component").get<int>();
      s.attribute = enum_from<RuleAttribute>(r.at("attribute"), rule_attribute_from_name, "rule attribute");
      s.rule = enum_from<RuleKind>(r.at("rule"), rule_kind_from_name, "rule");
      s.param = r.at("param").get<int>();
      t.rule_meta.push_back(s);
    }
    return t;
  } catch (const json::exception& e) {
    malformed(std::string("bad field: ") + e.what());
  }
}

void write_dataset(std::ostream& out, std::span<const RpmTask> tasks) {
  for (const auto& t : tasks) out << task_to_line(t) << '\n';
}

std::vector<RpmTask> read_dataset(std::istream& in) {
  std::vector<RpmTask> tasks;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    try {
      tasks.push_back(task_from_line(line));
    } catch (const Error& e) {
      throw Error(e.code(), "line " + std::to_string(number) + ": " + e.what());
    }
  }
  return tasks;
}

void save_dataset(const std::string& path, std::span<const RpmTask> tasks) {
  auto out = open_out(path, true);
  write_dataset(out, tasks);
}

std::vector<RpmTask> load_dataset(const std::string& path) {
  auto in = open_in(path, true);
  return read_dataset(in);
}

std::string config_to_json(const ModelConfig& c) {
  json j;
  j["tokenizer"] = to_string(c.tokenizer);
  j["token_dim"] = c.token_dim;
  j["blocks"] = c.blocks;
  j["heads"] = c.heads;
  j["inner"] = c.inner;
  j["dropout"] = c.dropout;
  j["channels"] = c.channels;
  j["predictor_hidden"] = c.predictor_hidden;
  j["seed"] = c.seed;
  j["denseformer"] = c.denseformer;
  j["dense_size"] = c.dense_size;
  j["dense_regularized"] = c.dense_regularized;
  return j.dump();
}

ModelConfig config_from_json(std::string_view text) {
  try {
    const auto j = json::parse(text);
    ModelConfig c;
    c.tokenizer = enum_from<TokenizerKind>(j.at("tokenizer"), tokenizer_from_name, "tokenizer");
    c.token_dim = j.at("token_dim").get<int>();
    c.blocks = j.at("blocks").get<int>();
    c.heads = j.at("heads").get<int>();
    c.inner = j.at("inner").get<int>();
    c.dropout = j.at("dropout").get<double>();
    c.channels = j.at("channels").get<std::vector<int>>();
    c.predictor_hidden = j.at("predictor_hidden").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.denseformer = j.at("denseformer").get<bool>();
    c.dense_size = j.at("dense_size").get<int>();
    c.dense_regularized = j.at("dense_regularized").get<bool>();
    return c;
  } catch (const json::exception& e) {
    malformed(std::string("bad model config: ") + e.what());
  }
}

void write_checkpoint(std::ostream& out, const Model& model) {
  out.write(kCheckpointMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_string(out, config_to_json(model.config()));
  const auto& params = model.parameters();
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    put_string(out, p.name);
    put_u32(out, static_cast<std::uint32_t>(p.shape.size()));
    for (int d : p.shape) put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : p.data) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
}

Model read_checkpoint(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) malformed("not a checkpoint (bad magic)");
  const auto version = get_u32(in);
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::kVersionMismatch, "checkpoint version " + std::to_string(version) + ", expected " +
                                                 std::to_string(kCheckpointVersion));
  }
  Model model(config_from_json(get_string(in, 1u << 20)));
  auto& params = model.parameters();
  const auto count = get_u32(in);
  if (count != params.size()) {
    malformed("checkpoint has " + std::to_string(count) + " tensors, config implies " + std::to_string(params.size()));
  }
  for (auto& p : params) {
    const auto name = get_string(in, 1024);
    if (name != p.name) malformed("tensor '" + name + "' where '" + p.name + "' was expected");
    const auto rank = get_u32(in);
    if (rank != p.shape.size()) malformed("tensor '" + name + "' has wrong rank");
    for (int d : p.shape) {
      if (get_u32(in) != static_cast<std::uint32_t>(d)) malformed("tensor '" + name + "' has wrong shape");
    }
    for (auto& v : p.data) v = std::bit_cast<float>(get_u32(in));
  }
  return model;
}

void save_checkpoint(const std::string& path, const Model& model) {
  auto out = open_out(path, true);
  write_checkpoint(out, model);
}

Model load_checkpoint(const std::string& path) {
  auto in = open_in(path, true);
  return read_checkpoint(in);
}

std::string pgm_bytes(const Raster& r) {
  std::string s = "P5\n" + std::to_string(r.width) + " " + std::to_string(r.height) + "\n255\n";
  s.append(reinterpret_cast<const char*>(r.pixels.data()), r.pixels.size());
  return s;
}

void write_pgm(const std::string& path, const Raster& r) {
  auto out = open_out(path, true);
  out << pgm_bytes(r);
}

Raster read_pgm(const std::string& path) {
  auto in = open_in(path, true);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P5" || w <= 0 || h <= 0 || maxval != 255) malformed(path + ": unsupported PGM header");
  in.get();
  Raster r(w, h, 0);
  if (!in.read(reinterpret_cast<char*>(r.pixels.data()), static_cast<std::streamsize>(r.pixels.size()))) {
    malformed(path + ": truncated PGM");
  }
  return r;
}

void write_metric_csv(std::ostream& out, const MetricReport& m) {
  out << "scope,panels,correct,prop_rate,avg_prop,avg_h,prop_acc\n"
      << to_string(m.scope) << ',' << m.panels << ',' << fmt(m.correct) << ',' << fmt(m.prop_rate) << ','
      << fmt(m.avg_prop) << ',' << fmt(m.avg_h) << ',' << fmt(m.prop_acc) << '\n';
}

void write_choice_csv(std::ostream& out, const ChoiceReport& c) {
  std::size_t ties = 0;
  for (const auto& r : c.records) ties += r.tie();
  out << "tasks,acc_prob,acc_top,acc_unique,hamming_ties\n"
      << c.records.size() << ',' << fmt(c.acc_prob) << ',' << fmt(c.acc_top) << ',' << fmt(c.acc_unique) << ','
      << ties << '\n';
}

void write_audit_csv(std::ostream& out, const AuditReport& a) {
  out << "tasks,correct,accuracy\n" << a.tasks << ',' << a.correct << ',' << fmt(a.accuracy) << '\n';
}

void write_error_csv(std::ostream& out, const ErrorHistogram& h) {
  out << "attribute,difference,count,fraction\n";
  constexpr std::array<const char*, 3> names = {"color", "size", "type"};
  for (int a = 0; a < 3; ++a) {
    const auto attr = static_cast<ObjectAttribute>(a);
    const auto total = h.total(attr);
    const auto bins = h.bins(attr);
    for (std::size_t d = 0; d < bins.size(); ++d) {
      out << names[a] << ',' << d << ',' << bins[d] << ',' << fmt(total ? double(bins[d]) / total : 0.0, 6) << '\n';
    }
  }
}

void write_dcm_records(std::ostream& out, std::span<const DcmRecord> records) {
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    json j;
    j["task"] = i;
    j["correct_index"] = r.correct_index;
    j["chosen_prob"] = r.chosen_prob;
    j["chosen_hamming"] = r.chosen_hamming;
    j["hamming_best"] = r.hamming_best;
    j["tie"] = r.tie();
    j["prob_distance"] = r.prob_distance;
    j["hamming_distance"] = r.hamming_distance;
    out << j.dump() << '\n';
  }
}

std::string learning_curve_svg(std::istream& csv) {
  static const std::string kHeader = "epoch,phase,split,correct,prop_rate,avg_prop,avg_h,prop_acc,loss,seconds";
  std::string line;
  if (!std::getline(csv, line) || line != kHeader) malformed("epoch log: unexpected header");
  // series[split][column] over the split's rows in file order.
  std::map<std::string, std::map<std::string, std::vector<double>>> series;
  const std::array<std::string, 5> columns = {"correct", "prop_rate", "avg_prop", "prop_acc", "loss"};
  const std::array<int, 5> column_index = {3, 4, 5, 7, 8};
  std::size_t number = 1;
  while (std::getline(csv, line)) {
    ++number;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 10) malformed("epoch log line " + std::to_string(number) + ": expected 10 fields");
    for (std::size_t c = 0; c < columns.size(); ++c) {
      double v = NAN;
      try {
        v = std::stod(cells[column_index[c]]);
      } catch (const std::exception&) {
        // "nan" is written for epochs without a training pass.
      }
      series[cells[2]][columns[c]].push_back(v);
    }
  }
  if (series.empty()) malformed("epoch log has no rows");

  constexpr double kW = 420, kH = 300, kPad = 40;
  std::size_t points = 1;
  double max_loss = 0.0;
  for (const auto& [split, cols] : series) {
    points = std::max(points, cols.at("loss").size());
    for (double v : cols.at("loss")) {
      if (std::isfinite(v)) max_loss = std::max(max_loss, v);
    }
  }
  if (max_loss <= 0.0) max_loss = 1.0;
  const std::map<std::string, std::string> colors = {
      {"correct", "#1f77b4"}, {"prop_rate", "#ff7f0e"}, {"avg_prop", "#2ca02c"}, {"prop_acc", "#9467bd"}, {"loss", "#d62728"}};

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << 2 * kW << "\" height=\"" << kH << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (int chart = 0; chart < 2; ++chart) {
    const double x0 = chart * kW + kPad, y0 = kPad / 2, w = kW - 1.5 * kPad, h = kH - 1.5 * kPad;
    const double top = chart == 0 ? 100.0 : max_loss;
    svg << "<rect x=\"" << fmt(x0, 1) << "\" y=\"" << fmt(y0, 1) << "\" width=\"" << fmt(w, 1) << "\" height=\""
        << fmt(h, 1) << "\" fill=\"none\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << fmt(x0, 1) << "\" y=\"" << fmt(y0 + h + 16, 1) << "\" font-size=\"11\">"
        << (chart == 0 ? "metrics (%) by epoch" : "weighted loss by epoch, max " + fmt(max_loss, 3)) << "</text>\n";
    for (const auto& [split, cols] : series) {
      for (const auto& [name, values] : cols) {
        if ((name == "loss") != (chart == 1)) continue;
        std::ostringstream pts;
        for (std::size_t i = 0; i < values.size(); ++i) {
          if (!std::isfinite(values[i])) continue;
          const double x = x0 + (points > 1 ? w * double(i) / double(points - 1) : 0.0);
          const double y = y0 + h - h * std::clamp(values[i] / top, 0.0, 1.0);
          pts << fmt(x, 1) << ',' << fmt(y, 1) << ' ';
        }
        svg << "<polyline fill=\"none\" stroke=\"" << colors.at(name) << "\""
            << (split == "validation" ? " stroke-dasharray=\"4 3\"" : "") << " points=\"" << pts.str() << "\">"
            << "<title>" << split << ' ' << name << "</title></polyline>\n";
      }
    }
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace rpm
