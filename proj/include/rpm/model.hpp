#pragma once

#include <array>
#include <map>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rpm/codec.hpp"
#include "rpm/core.hpp"
#include "rpm/numkit/adam.hpp"
#include "rpm/numkit/tensor.hpp"
#include "rpm/render.hpp"

namespace rpm {

enum class TokenizerKind : std::uint8_t { kPanel = 0, kTask, kRow };

std::string_view to_string(TokenizerKind k);
std::optional<TokenizerKind> tokenizer_from_name(std::string_view s);

// Sequence length each tokenizer produces: 81, 64, 27.
int token_count(TokenizerKind k);
// Tokens per predictor chunk: 9, 7 (last token dropped), 3.
int chunk_length(TokenizerKind k);

struct ModelConfig {
  TokenizerKind tokenizer = TokenizerKind::kRow;
  int token_dim = 128;
  int blocks = 4;
  int heads = 8;
  int inner = 512;
  double dropout = 0.1;
  std::vector<int> channels = {16, 32, 64, 96, 128};
  int predictor_hidden = 1000;
  std::uint64_t seed = 0;

  // Denseformer ablation: the transformer is replaced by five equal dense
  // layers over the concatenated tokens.
  bool denseformer = false;
  int dense_size = 512;
  bool dense_regularized = false;

  static ModelConfig paper(TokenizerKind k);
  static ModelConfig desk(TokenizerKind k);

  // Throws kInvalidArgument on inconsistent settings.
  void check() const;
  bool operator==(const ModelConfig&) const = default;
};

inline constexpr int kDenseLayers = 5;
inline constexpr float kLayerNormEps = 0.001f;

// Rasters scaled to [0, 1] with ink = 1, one per grid panel.
using PanelImage = std::vector<float>;
using PanelImages = std::array<PanelImage, kGridPanels>;

PanelImage to_image(const Raster& r);
PanelImages prepare_images(const std::array<PropertyVector, kGridPanels>& panels);

// Anything that maps a board (9 panels, optional masked position) to nine
// encoded panels. Implemented by the network and by test oracles.
class PanelPredictor {
 public:
  virtual ~PanelPredictor() = default;
  virtual std::array<EncodedPanel, kGridPanels> predict(const std::array<PropertyVector, kGridPanels>& panels,
                                                        std::optional<int> masked) const = 0;
};

struct PassOptions {
  bool training = false;
  std::uint64_t dropout_seed = 0;
};

struct ParamBreakdown {
  std::size_t backbone = 0;
  std::size_t mask = 0;
  std::size_t encoder = 0;
  std::size_t positional = 0;
  std::size_t blocks = 0;
  std::size_t dense = 0;
  std::size_t predictor = 0;

  std::size_t transformer() const { return encoder + positional + blocks; }
  std::size_t total() const { return backbone + mask + encoder + positional + blocks + dense + predictor; }
};

class Model : public PanelPredictor {
 public:
  using Var = nk::Var<float>;
  using Tape = nk::Tape<float>;

  explicit Model(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  std::vector<nk::Parameter>& parameters() { return params_; }
  const std::vector<nk::Parameter>& parameters() const { return params_; }
  std::vector<nk::Parameter*> parameter_pointers();
  nk::Parameter* find(const std::string& name);

  // Binds every parameter to the tape; index i matches parameters()[i].
  std::vector<Var> bind(Tape& tape, bool needs_grad) const;

  // [T, token_dim] tokens; the masked panel is replaced by the trainable
  // mask image. Throws kShapeMismatch on wrong raster sizes.
  Var tokenize(Tape& tape, const std::vector<Var>& bound, const PanelImages& images, std::optional<int> masked) const;
  // Encoder, positional embedding and transformer blocks (or the dense
  // stack for denseformers). Output has the same length as the input.
  Var transform(Tape& tape, const std::vector<Var>& bound, Var tokens, const PassOptions& opts) const;
  // Slices into 9 chunks and maps each through the predictor: [9, 557].
  Var predict_chunks(Tape& tape, const std::vector<Var>& bound, Var sequence) const;

  Var forward(Tape& tape, const std::vector<Var>& bound, const PanelImages& images, std::optional<int> masked,
              const PassOptions& opts) const;

  std::array<EncodedPanel, kGridPanels> predict_images(const PanelImages& images, std::optional<int> masked) const;
  std::array<EncodedPanel, kGridPanels> predict(const std::array<PropertyVector, kGridPanels>& panels,
                                                std::optional<int> masked) const override;

  ParamBreakdown param_breakdown() const;
  std::size_t param_count() const { return param_breakdown().total(); }

 private:
  int add_param(const std::string& name, nk::Shape shape);
  int index_of(const std::string& name) const;
  Var backbone(Tape& tape, const std::vector<Var>& bound, Var image) const;
  Var attention(Tape& tape, const std::vector<Var>& bound, int block, Var x) const;

  ModelConfig config_;
  std::vector<nk::Parameter> params_;
  std::map<std::string, int> index_;
};

std::array<EncodedPanel, kGridPanels> to_encoded(std::span<const float> output);

// Multiply-accumulate count for one query (one forward pass).
std::uint64_t flops_estimate(const ModelConfig& config);

}  // namespace rpm
