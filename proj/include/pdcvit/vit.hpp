#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pdcvit/ops.hpp"
#include "pdcvit/pdc.hpp"
#include "pdcvit/tensor.hpp"

namespace pdcvit {

struct VitConfig {
  std::size_t patch_size = 4;
  std::size_t dim = 64;
  std::size_t depth = 2;
  std::size_t heads = 4;
  std::size_t mlp_dim = 128;
  double dropout = 0.1;
  double emb_dropout = 0.1;
  std::size_t num_classes = 2;

  // patch 64, dim 1024, depth 6, heads 16, mlp 2048, dropouts 0.1
  static VitConfig full_scale(std::size_t num_classes);
  // patch 4, dim 64, depth 2, heads 4, mlp 128, dropouts 0.1
  static VitConfig desk(std::size_t num_classes);
  // "desk" or "full"
  static VitConfig preset(const std::string& name, std::size_t num_classes);

  void validate() const;
};

// Non-overlapping p x p patches of a C x H x W map in row-major patch order,
// each flattened channel-major then row-major. Result is N x (C * p * p).
Tensor patchify(const Tensor& features, std::size_t patch_size);

struct EmbedParams {
  Tensor weight;     // patch_dim x dim
  Tensor bias;       // dim
  Tensor cls_token;  // 1 x dim
  Tensor pos_emb;    // (N + 1) x dim
};

struct TokenSequence {
  Tensor tokens;   // (N + 1) x dim, class token in row 0
  Tensor pos_emb;  // (N + 1) x dim
};

TokenSequence embed(const Tensor& patches, const EmbedParams& params, double emb_dropout, bool training, Rng& rng);

struct AttentionParams {
  Tensor wq, bq, wk, bk, wv, bv;  // dim x dim, dim
  Tensor wo, bo;                  // dim x dim, dim
};

// Scaled dot-product attention per head over T x dim tokens. When
// `attention` is non-null the per-head T x T weight matrices (before dropout)
// are appended to it.
Tensor multi_head_attention(const Tensor& tokens, const AttentionParams& params, std::size_t heads, double dropout,
                            bool training, Rng& rng, std::vector<Tensor>* attention = nullptr);

struct MlpParams {
  Tensor w1, b1;  // dim x mlp_dim, mlp_dim
  Tensor w2, b2;  // mlp_dim x dim, dim
};

struct EncoderBlockParams {
  Tensor ln1_gain, ln1_bias;
  AttentionParams attn;
  Tensor ln2_gain, ln2_bias;
  MlpParams mlp;
};

// Pre-norm block: x + MHA(LN(x)), then + MLP(LN(.)).
Tensor encoder_block(const Tensor& tokens, const EncoderBlockParams& params, std::size_t heads, double dropout,
                     bool training, Rng& rng, std::vector<Tensor>* attention = nullptr);

struct ModelSpec {
  BackboneSpec backbone;
  VitConfig vit;
  std::size_t image_size = 32;

  std::size_t feature_size() const { return image_size / 4; }
  std::size_t num_patches() const;
  std::size_t patch_dim() const { return backbone.out_channels() * vit.patch_size * vit.patch_size; }
  void validate() const;
};

using NamedTensor = std::pair<std::string, Tensor>;

// PDC backbone feeding a ViT classifier.
class PdcVitModel {
 public:
  PdcVitModel(ModelSpec spec, std::uint64_t seed);

  const ModelSpec& spec() const { return spec_; }

  // Logits of length num_classes.
  Tensor forward(const Tensor& image, bool training, Rng& rng, std::vector<Tensor>* attention = nullptr) const;
  // Final class-token representation (after the last LayerNorm), length dim.
  Tensor features(const Tensor& image) const;

  // Every trainable tensor in a fixed order; handles alias model storage.
  const std::vector<NamedTensor>& parameters() const { return params_; }
  std::vector<Tensor> parameter_tensors() const;
  std::size_t parameter_count() const;

  // Copies values by name; throws ContractError on missing names or shapes.
  void load_parameters(const std::vector<NamedTensor>& values);

  const BackboneParams& backbone_params() const { return backbone_; }
  const EmbedParams& embed_params() const { return embed_; }
  const std::vector<EncoderBlockParams>& blocks() const { return blocks_; }

 private:
  Tensor encode(const Tensor& image, bool training, Rng& rng, std::vector<Tensor>* attention) const;
  void collect_parameters();

  ModelSpec spec_;
  BackboneParams backbone_;
  EmbedParams embed_;
  std::vector<EncoderBlockParams> blocks_;
  Tensor norm_gain_, norm_bias_;
  Tensor head_weight_, head_bias_;
  std::vector<NamedTensor> params_;
};

}  // namespace pdcvit
