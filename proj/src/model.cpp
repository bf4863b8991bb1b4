#include "rpm/model.hpp"

#include <cmath>

#include "rpm/error.hpp"
#include "rpm/numkit/ops.hpp"
#include "rpm/rng.hpp"

namespace rpm {

namespace {

constexpr std::array<std::string_view, 3> kTokenizerNames = {"panel", "task", "row"};
constexpr int kKernel = 3;

int input_channels(TokenizerKind k) { return k == TokenizerKind::kRow ? 3 : 1; }
int input_size(TokenizerKind k) { return k == TokenizerKind::kTask ? kBoardSize : kPanelSize; }
int backbone_passes(TokenizerKind k) {
  switch (k) {
    case TokenizerKind::kPanel: return 9;
    case TokenizerKind::kTask: return 1;
    case TokenizerKind::kRow: return 3;
  }
  return 0;
}

int predictor_input(const ModelConfig& c) {
  if (c.denseformer) return c.dense_size / kGridPanels;
  return chunk_length(c.tokenizer) * c.token_dim;
}

const std::vector<nk::ActivationGroup>& output_groups() {
  static const std::vector<nk::ActivationGroup> groups = [] {
    std::vector<nk::ActivationGroup> g;
    for (const auto& s : segments()) g.push_back({s.offset, s.length, s.binary()});
    return g;
  }();
  return groups;
}

}  // namespace

std::string_view to_string(TokenizerKind k) { return kTokenizerNames[static_cast<int>(k)]; }

std::optional<TokenizerKind> tokenizer_from_name(std::string_view s) {
  for (int i = 0; i < 3; ++i) {
    if (kTokenizerNames[i] == s) return static_cast<TokenizerKind>(i);
  }
  return std::nullopt;
}

int token_count(TokenizerKind k) {
  switch (k) {
    case TokenizerKind::kPanel: return 81;
    case TokenizerKind::kTask: return 64;
    case TokenizerKind::kRow: return 27;
  }
  return 0;
}

int chunk_length(TokenizerKind k) { return token_count(k) / kGridPanels; }

ModelConfig ModelConfig::paper(TokenizerKind k) {
  ModelConfig c;
  c.tokenizer = k;
  return c;
}

ModelConfig ModelConfig::desk(TokenizerKind k) {
  ModelConfig c;
  c.tokenizer = k;
  c.token_dim = 32;
  c.blocks = 2;
  c.heads = 2;
  c.inner = 128;
  c.channels = {8, 16, 24, 32, 32};
  return c;
}

void ModelConfig::check() const {
  auto fail = [](const std::string& why) { throw Error(ErrorCode::kInvalidArgument, "model config: " + why); };
  if (token_dim <= 0 || heads <= 0 || token_dim % heads != 0) fail("token_dim must be divisible by heads");
  if (channels.size() != 5) fail("backbone needs 5 stride-2 layers");
  if (channels.back() != token_dim) fail("last backbone channel count must equal token_dim");
  if (blocks < 0 || inner <= 0 || predictor_hidden <= 0) fail("sizes must be positive");
  if (dropout < 0.0 || dropout >= 1.0) fail("dropout must be in [0, 1)");
  if (denseformer && dense_size < kGridPanels) fail("dense layer too narrow for 9 chunks");
}

PanelImage to_image(const Raster& r) {
  PanelImage img(r.pixels.size());
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = (255.0f - r.pixels[i]) / 255.0f;
  return img;
}

PanelImages prepare_images(const std::array<PropertyVector, kGridPanels>& panels) {
  PanelImages out;
  for (int i = 0; i < kGridPanels; ++i) out[i] = to_image(render_panel(panels[i]));
  return out;
}

Model::Model(ModelConfig config) : config_(std::move(config)) {
  config_.check();
  const auto& c = config_;
  const int d = c.token_dim;
  add_param("mask", {1, kPanelSize, kPanelSize});
  int in = input_channels(c.tokenizer);
  for (int i = 0; i < static_cast<int>(c.channels.size()); ++i) {
    add_param("backbone.conv" + std::to_string(i) + ".weight", {c.channels[i], in, kKernel, kKernel});
    add_param("backbone.conv" + std::to_string(i) + ".bias", {c.channels[i]});
    in = c.channels[i];
  }
  const int tokens = token_count(c.tokenizer);
  if (!c.denseformer) {
    add_param("encoder.weight", {d, d});
    add_param("encoder.bias", {d});
    add_param("positional", {tokens, d});
    for (int b = 0; b < c.blocks; ++b) {
      const std::string p = "block" + std::to_string(b) + ".";
      add_param(p + "norm1.gamma", {d});
      add_param(p + "norm1.beta", {d});
      for (const char* name : {"q", "k", "v", "o"}) {
        add_param(p + "attn." + name + ".weight", {d, d});
        add_param(p + "attn." + name + ".bias", {d});
      }
      add_param(p + "norm2.gamma", {d});
      add_param(p + "norm2.beta", {d});
      add_param(p + "ffn.in.weight", {d, c.inner});
      add_param(p + "ffn.in.bias", {c.inner});
      add_param(p + "ffn.out.weight", {c.inner, d});
      add_param(p + "ffn.out.bias", {d});
    }
  } else {
    int width = tokens * d;
    for (int i = 0; i < kDenseLayers; ++i) {
      const std::string p = "dense" + std::to_string(i) + ".";
      if (c.dense_regularized) {
        add_param(p + "norm.gamma", {width});
        add_param(p + "norm.beta", {width});
      }
      add_param(p + "weight", {width, c.dense_size});
      add_param(p + "bias", {c.dense_size});
      width = c.dense_size;
    }
  }
  const int k = predictor_input(c);
  const int h = c.predictor_hidden;
  add_param("predictor.norm0.gamma", {k});
  add_param("predictor.norm0.beta", {k});
  add_param("predictor.fc0.weight", {k, h});
  add_param("predictor.fc0.bias", {h});
  add_param("predictor.norm1.gamma", {h});
  add_param("predictor.norm1.beta", {h});
  add_param("predictor.fc1.weight", {h, h});
  add_param("predictor.fc1.bias", {h});
  add_param("predictor.norm2.gamma", {h});
  add_param("predictor.norm2.beta", {h});
  add_param("predictor.out.weight", {h, kEncodedDim});
  add_param("predictor.out.bias", {kEncodedDim});

  // Initialization: Glorot-uniform dense weights, He-normal convolutions,
  // unit layer-norm gains, small positional table, standard-normal mask.
  Rng rng(derive_seed(c.seed, 0x1d));
  for (auto& p : params_) {
    const auto& n = p.name;
    auto ends_with = [&](std::string_view suffix) {
      return n.size() >= suffix.size() && n.compare(n.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    if (n == "mask") {
      for (auto& v : p.data) v = static_cast<float>(rng.normal());
    } else if (n == "positional") {
      for (auto& v : p.data) v = static_cast<float>(0.02 * rng.normal());
    } else if (ends_with(".gamma")) {
      std::fill(p.data.begin(), p.data.end(), 1.0f);
    } else if (ends_with(".weight") && p.shape.size() == 4) {
      const double fan_in = p.shape[1] * p.shape[2] * p.shape[3];
      const double sd = std::sqrt(2.0 / fan_in);
      for (auto& v : p.data) v = static_cast<float>(sd * rng.normal());
    } else if (ends_with(".weight")) {
      const double limit = std::sqrt(6.0 / (p.shape[0] + p.shape[1]));
      for (auto& v : p.data) v = static_cast<float>(limit * (2.0 * rng.uniform() - 1.0));
    }
  }
}

int Model::add_param(const std::string& name, nk::Shape shape) {
  params_.emplace_back(name, std::move(shape));
  const int id = static_cast<int>(params_.size()) - 1;
  index_[name] = id;
  return id;
}

int Model::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error(ErrorCode::kInvalidArgument, "no parameter named " + name);
  return it->second;
}

nk::Parameter* Model::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

std::vector<nk::Parameter*> Model::parameter_pointers() {
  std::vector<nk::Parameter*> out;
  for (auto& p : params_) out.push_back(&p);
  return out;
}

std::vector<Model::Var> Model::bind(Tape& tape, bool needs_grad) const {
  std::vector<Var> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(tape.external(p.shape, p.data.data(), needs_grad));
  return out;
}

Model::Var Model::backbone(Tape& tape, const std::vector<Var>& bound, Var image) const {
  (void)tape;
  Var x = image;
  const int layers = static_cast<int>(config_.channels.size());
  for (int i = 0; i < layers; ++i) {
    const std::string p = "backbone.conv" + std::to_string(i);
    x = nk::conv2d(x, bound[index_of(p + ".weight")], bound[index_of(p + ".bias")], 2);
    if (i + 1 < layers) x = nk::gelu(x);
  }
  return nk::feature_map_to_tokens(x);
}

Model::Var Model::tokenize(Tape& tape, const std::vector<Var>& bound, const PanelImages& images,
                           std::optional<int> masked) const {
  constexpr std::size_t kPixels = std::size_t(kPanelSize) * kPanelSize;
  if (masked && (*masked < 0 || *masked >= kGridPanels)) {
    throw Error(ErrorCode::kInvalidArgument, "mask slot out of range");
  }
  std::array<Var, kGridPanels> panel;
  for (int i = 0; i < kGridPanels; ++i) {
    if (masked && *masked == i) {
      panel[i] = bound[index_of("mask")];
      continue;
    }
    if (images[i].size() != kPixels) {
      throw Error(ErrorCode::kShapeMismatch, "panel raster " + std::to_string(i) + " has " +
                                                 std::to_string(images[i].size()) + " pixels, expected 84x84");
    }
    panel[i] = tape.external({1, kPanelSize, kPanelSize}, images[i].data(), false);
  }
  std::vector<Var> pieces;
  switch (config_.tokenizer) {
    case TokenizerKind::kPanel:
      for (int i = 0; i < kGridPanels; ++i) pieces.push_back(backbone(tape, bound, panel[i]));
      break;
    case TokenizerKind::kTask: {
      std::vector<Var> rows;
      for (int r = 0; r < 3; ++r) rows.push_back(nk::concat<float>({panel[3 * r], panel[3 * r + 1], panel[3 * r + 2]}, 2));
      pieces.push_back(backbone(tape, bound, nk::concat(rows, 1)));
      break;
    }
    case TokenizerKind::kRow:
      // Left, center and right panels become channels 0, 1 and 2.
      for (int r = 0; r < 3; ++r) {
        pieces.push_back(backbone(tape, bound, nk::concat<float>({panel[3 * r], panel[3 * r + 1], panel[3 * r + 2]}, 0)));
      }
      break;
  }
  return pieces.size() == 1 ? pieces[0] : nk::concat(pieces, 0);
}

Model::Var Model::attention(Tape& tape, const std::vector<Var>& bound, int block, Var x) const {
  (void)tape;
  const std::string p = "block" + std::to_string(block) + ".attn.";
  auto proj = [&](const char* name, Var in) {
    return nk::linear(in, bound[index_of(p + name + ".weight")], bound[index_of(p + name + ".bias")]);
  };
  Var q = proj("q", x);
  Var k = proj("k", x);
  Var v = proj("v", x);
  const int dh = config_.token_dim / config_.heads;
  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
  std::vector<Var> heads;
  for (int h = 0; h < config_.heads; ++h) {
    Var qh = nk::slice(q, 1, h * dh, (h + 1) * dh);
    Var kh = nk::slice(k, 1, h * dh, (h + 1) * dh);
    Var vh = nk::slice(v, 1, h * dh, (h + 1) * dh);
    Var weights = nk::softmax(nk::scale(nk::matmul_nt(qh, kh), scale));
    heads.push_back(nk::matmul(weights, vh));
  }
  Var joined = heads.size() == 1 ? heads[0] : nk::concat(heads, 1);
  return proj("o", joined);
}

Model::Var Model::transform(Tape& tape, const std::vector<Var>& bound, Var tokens, const PassOptions& opts) const {
  const auto& c = config_;
  const int expected = token_count(c.tokenizer);
  if (tokens.rank() != 2 || tokens.dim(0) != expected) {
    throw Error(ErrorCode::kLengthMismatch, "transform: expected " + std::to_string(expected) + " tokens, got " +
                                                nk::to_string(tokens.shape()));
  }
  const auto rate = static_cast<float>(c.dropout);
  if (c.denseformer) {
    Var x = nk::reshape(tokens, {1, static_cast<int>(tokens.size())});
    for (int i = 0; i < kDenseLayers; ++i) {
      const std::string p = "dense" + std::to_string(i) + ".";
      if (c.dense_regularized) x = nk::layer_norm(x, bound[index_of(p + "norm.gamma")], bound[index_of(p + "norm.beta")], kLayerNormEps);
      x = nk::gelu(nk::linear(x, bound[index_of(p + "weight")], bound[index_of(p + "bias")]));
      if (c.dense_regularized) x = nk::dropout(x, rate, opts.training, derive_seed(opts.dropout_seed, 100 + i));
    }
    return x;
  }
  Var z = nk::linear(tokens, bound[index_of("encoder.weight")], bound[index_of("encoder.bias")]);
  z = nk::embedding_add(z, bound[index_of("positional")]);
  for (int b = 0; b < c.blocks; ++b) {
    const std::string p = "block" + std::to_string(b) + ".";
    Var a = attention(tape, bound, b, nk::layer_norm(z, bound[index_of(p + "norm1.gamma")], bound[index_of(p + "norm1.beta")], kLayerNormEps));
    a = nk::dropout(a, rate, opts.training, derive_seed(opts.dropout_seed, 2 * b));
    Var m = nk::add(a, z);
    Var f = nk::layer_norm(m, bound[index_of(p + "norm2.gamma")], bound[index_of(p + "norm2.beta")], kLayerNormEps);
    f = nk::gelu(nk::linear(f, bound[index_of(p + "ffn.in.weight")], bound[index_of(p + "ffn.in.bias")]));
    f = nk::linear(f, bound[index_of(p + "ffn.out.weight")], bound[index_of(p + "ffn.out.bias")]);
    f = nk::dropout(f, rate, opts.training, derive_seed(opts.dropout_seed, 2 * b + 1));
    z = nk::add(f, m);
  }
  return z;
}

Model::Var Model::predict_chunks(Tape& tape, const std::vector<Var>& bound, Var sequence) const {
  (void)tape;
  Var chunks;
  if (config_.denseformer) {
    // One vector; the remainder past 9 equal chunks is dropped.
    const int width = config_.dense_size / kGridPanels;
    chunks = nk::reshape(nk::slice(sequence, 1, 0, width * kGridPanels), {kGridPanels, width});
  } else {
    const int len = chunk_length(config_.tokenizer);
    const int d = sequence.dim(1);
    // Row-major [T, D] sliced to the first 9*len tokens is already laid out
    // as nine concatenated chunks.
    Var used = sequence.dim(0) == kGridPanels * len ? sequence : nk::slice(sequence, 0, 0, kGridPanels * len);
    chunks = nk::reshape(used, {kGridPanels, len * d});
  }
  auto norm = [&](Var x, const std::string& n) {
    return nk::layer_norm(x, bound[index_of("predictor." + n + ".gamma")], bound[index_of("predictor." + n + ".beta")], kLayerNormEps);
  };
  auto dense = [&](Var x, const std::string& n) {
    return nk::linear(x, bound[index_of("predictor." + n + ".weight")], bound[index_of("predictor." + n + ".bias")]);
  };
  Var h = nk::gelu(dense(norm(chunks, "norm0"), "fc0"));
  h = nk::gelu(dense(norm(h, "norm1"), "fc1"));
  Var logits = dense(norm(h, "norm2"), "out");
  const auto& groups = output_groups();
  return nk::grouped_activation(logits, std::span<const nk::ActivationGroup>(groups));
}

Model::Var Model::forward(Tape& tape, const std::vector<Var>& bound, const PanelImages& images,
                          std::optional<int> masked, const PassOptions& opts) const {
  Var x = tokenize(tape, bound, images, masked);
  Var o = transform(tape, bound, x, opts);
  return predict_chunks(tape, bound, o);
}

std::array<EncodedPanel, kGridPanels> to_encoded(std::span<const float> output) {
  if (output.size() != std::size_t(kGridPanels) * kEncodedDim) {
    throw Error(ErrorCode::kLengthMismatch, "model output has " + std::to_string(output.size()) + " values");
  }
  std::array<EncodedPanel, kGridPanels> out;
  for (int i = 0; i < kGridPanels; ++i) {
    std::copy_n(output.begin() + std::size_t(i) * kEncodedDim, kEncodedDim, out[i].values.begin());
  }
  return out;
}

std::array<EncodedPanel, kGridPanels> Model::predict_images(const PanelImages& images, std::optional<int> masked) const {
  Tape tape;
  auto bound = bind(tape, false);
  return to_encoded(forward(tape, bound, images, masked, {}).value());
}

std::array<EncodedPanel, kGridPanels> Model::predict(const std::array<PropertyVector, kGridPanels>& panels,
                                                     std::optional<int> masked) const {
  return predict_images(prepare_images(panels), masked);
}

ParamBreakdown Model::param_breakdown() const {
  ParamBreakdown b;
  for (const auto& p : params_) {
    const auto n = p.data.size();
    const auto& name = p.name;
    auto starts = [&](std::string_view s) { return name.rfind(s, 0) == 0; };
    if (name == "mask") b.mask += n;
    else if (starts("backbone.")) b.backbone += n;
    else if (starts("encoder.")) b.encoder += n;
    else if (name == "positional") b.positional += n;
    else if (starts("block")) b.blocks += n;
    else if (starts("dense")) b.dense += n;
    else b.predictor += n;
  }
  return b;
}

std::uint64_t flops_estimate(const ModelConfig& c) {
  using u64 = std::uint64_t;
  u64 macs = 0;
  int size = input_size(c.tokenizer);
  int in = input_channels(c.tokenizer);
  u64 backbone = 0;
  for (int ch : c.channels) {
    size = (size + 1) / 2;
    backbone += u64(size) * size * ch * in * kKernel * kKernel;
    in = ch;
  }
  macs += backbone * backbone_passes(c.tokenizer);
  const u64 t = token_count(c.tokenizer);
  const u64 d = c.token_dim;
  if (c.denseformer) {
    u64 width = t * d;
    for (int i = 0; i < kDenseLayers; ++i) {
      macs += width * c.dense_size;
      width = c.dense_size;
    }
  } else {
    macs += t * d * d;
    macs += u64(c.blocks) * (4 * t * d * d + 2 * t * t * d + 2 * t * d * c.inner);
  }
  const u64 k = predictor_input(c);
  const u64 h = c.predictor_hidden;
  macs += kGridPanels * (k * h + h * h + h * kEncodedDim);
  return macs;
}

}  // namespace rpm
