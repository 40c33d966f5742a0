#include "pdcvit/vit.hpp"

#include <cmath>

#include "pdcvit/errors.hpp"

namespace pdcvit {

namespace {

constexpr double kInitStd = 0.02;

Tensor param(Shape shape) { return Tensor::zeros(std::move(shape), true); }

Tensor trunc_normal_param(Shape shape, Rng& rng) {
  Tensor t = param(std::move(shape));
  init_trunc_normal(t, kInitStd, rng);
  return t;
}

}  // namespace

VitConfig VitConfig::full_scale(std::size_t num_classes) {
  return VitConfig{64, 1024, 6, 16, 2048, 0.1, 0.1, num_classes};
}

VitConfig VitConfig::desk(std::size_t num_classes) { return VitConfig{4, 64, 2, 4, 128, 0.1, 0.1, num_classes}; }

VitConfig VitConfig::preset(const std::string& name, std::size_t num_classes) {
  if (name == "desk") return desk(num_classes);
  if (name == "full") return full_scale(num_classes);
  throw ParameterError("unknown preset '" + name + "' (expected desk or full)");
}

void VitConfig::validate() const {
  if (patch_size == 0 || dim == 0 || depth == 0 || heads == 0 || mlp_dim == 0) {
    throw ParameterError("ViT sizes must be positive");
  }
  if (dim % heads != 0) {
    throw ParameterError("dim " + std::to_string(dim) + " is not divisible by heads " + std::to_string(heads));
  }
  if (!(dropout >= 0.0 && dropout < 1.0) || !(emb_dropout >= 0.0 && emb_dropout < 1.0)) {
    throw ParameterError("dropout rates must lie in [0, 1)");
  }
  if (num_classes < 2) throw ParameterError("at least two classes are required");
}

Tensor patchify(const Tensor& features, std::size_t patch_size) {
  if (features.rank() != 3) throw DimensionError("patchify expects C x H x W, got " + shape_str(features.shape()));
  if (patch_size == 0) throw ParameterError("patch size must be positive");
  const std::size_t c = features.dim(0), h = features.dim(1), w = features.dim(2);
  if (h % patch_size != 0 || w % patch_size != 0) {
    throw DimensionError("feature map " + std::to_string(h) + "x" + std::to_string(w) +
                         " is not divisible by patch size " + std::to_string(patch_size));
  }
  const std::size_t ph = h / patch_size, pw = w / patch_size, p2 = patch_size * patch_size;
  const std::size_t len = c * p2;
  std::vector<std::size_t> index(ph * pw * len);
  for (std::size_t py = 0; py < ph; ++py) {
    for (std::size_t px = 0; px < pw; ++px) {
      const std::size_t n = py * pw + px;
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t i = 0; i < patch_size; ++i) {
          for (std::size_t j = 0; j < patch_size; ++j) {
            index[n * len + ch * p2 + i * patch_size + j] =
                (ch * h + py * patch_size + i) * w + px * patch_size + j;
          }
        }
      }
    }
  }
  return gather(features, {ph * pw, len}, std::move(index));
}

TokenSequence embed(const Tensor& patches, const EmbedParams& params, double emb_dropout, bool training, Rng& rng) {
  if (patches.rank() != 2 || params.weight.rank() != 2 || patches.dim(1) != params.weight.dim(0)) {
    throw DimensionError("embed: patches " + shape_str(patches.shape()) + " do not match weight " +
                         shape_str(params.weight.shape()));
  }
  const std::size_t n = patches.dim(0), dim = params.weight.dim(1);
  if (params.cls_token.shape() != Shape{1, dim}) throw DimensionError("embed: class token must be 1 x dim");
  if (params.pos_emb.shape() != Shape{n + 1, dim}) {
    throw DimensionError("embed: positional embedding " + shape_str(params.pos_emb.shape()) + " expected " +
                         shape_str({n + 1, dim}));
  }
  const Tensor projected = linear(patches, params.weight, params.bias);
  const Tensor parts[] = {params.cls_token, projected};
  Tensor tokens = add(concat0(parts), params.pos_emb);
  return TokenSequence{dropout(tokens, emb_dropout, training, rng), params.pos_emb};
}

Tensor multi_head_attention(const Tensor& tokens, const AttentionParams& params, std::size_t heads, double dropout_p,
                            bool training, Rng& rng, std::vector<Tensor>* attention) {
  if (tokens.rank() != 2) throw DimensionError("attention expects T x dim tokens");
  const std::size_t dim = tokens.dim(1);
  if (heads == 0 || dim % heads != 0) throw DimensionError("attention: dim not divisible by heads");
  const std::size_t dh = dim / heads;
  const Tensor q = linear(tokens, params.wq, params.bq);
  const Tensor k = linear(tokens, params.wk, params.bk);
  const Tensor v = linear(tokens, params.wv, params.bv);
  const double temperature = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> head_out;
  head_out.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
    const Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
    const Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
    const Tensor weights = softmax(scale(matmul(qh, transpose(kh)), temperature), 1);
    if (attention) attention->push_back(weights);
    head_out.push_back(matmul(dropout(weights, dropout_p, training, rng), vh));
  }
  const Tensor merged = concat_cols(head_out);
  return dropout(linear(merged, params.wo, params.bo), dropout_p, training, rng);
}

Tensor encoder_block(const Tensor& tokens, const EncoderBlockParams& params, std::size_t heads, double dropout_p,
                     bool training, Rng& rng, std::vector<Tensor>* attention) {
  const Tensor attn =
      multi_head_attention(layernorm(tokens, params.ln1_gain, params.ln1_bias), params.attn, heads, dropout_p,
                           training, rng, attention);
  const Tensor x = add(tokens, attn);
  Tensor hidden = gelu(linear(layernorm(x, params.ln2_gain, params.ln2_bias), params.mlp.w1, params.mlp.b1));
  hidden = dropout(hidden, dropout_p, training, rng);
  const Tensor mlp_out = dropout(linear(hidden, params.mlp.w2, params.mlp.b2), dropout_p, training, rng);
  return add(x, mlp_out);
}

std::size_t ModelSpec::num_patches() const {
  const std::size_t f = feature_size();
  return (f / vit.patch_size) * (f / vit.patch_size);
}

void ModelSpec::validate() const {
  vit.validate();
  if (image_size == 0 || image_size % 4 != 0) {
    throw DimensionError("image size " + std::to_string(image_size) + " must be a positive multiple of 4");
  }
  if (feature_size() % vit.patch_size != 0) {
    throw DimensionError("PDC feature map " + std::to_string(feature_size()) + "x" + std::to_string(feature_size()) +
                         " (image " + std::to_string(image_size) + ") is not divisible by patch size " +
                         std::to_string(vit.patch_size));
  }
}

PdcVitModel::PdcVitModel(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  spec_.validate();
  const VitConfig& cfg = spec_.vit;
  backbone_ = make_backbone_params(spec_.backbone, seed);

  Rng rng(seed + 303);
  const std::size_t n = spec_.num_patches();
  embed_.weight = trunc_normal_param({spec_.patch_dim(), cfg.dim}, rng);
  embed_.bias = param({cfg.dim});
  embed_.cls_token = trunc_normal_param({1, cfg.dim}, rng);
  embed_.pos_emb = trunc_normal_param({n + 1, cfg.dim}, rng);

  for (std::size_t b = 0; b < cfg.depth; ++b) {
    EncoderBlockParams blk;
    blk.ln1_gain = Tensor::full({cfg.dim}, 1.0, true);
    blk.ln1_bias = param({cfg.dim});
    blk.attn.wq = trunc_normal_param({cfg.dim, cfg.dim}, rng);
    blk.attn.bq = param({cfg.dim});
    blk.attn.wk = trunc_normal_param({cfg.dim, cfg.dim}, rng);
    blk.attn.bk = param({cfg.dim});
    blk.attn.wv = trunc_normal_param({cfg.dim, cfg.dim}, rng);
    blk.attn.bv = param({cfg.dim});
    blk.attn.wo = trunc_normal_param({cfg.dim, cfg.dim}, rng);
    blk.attn.bo = param({cfg.dim});
    blk.ln2_gain = Tensor::full({cfg.dim}, 1.0, true);
    blk.ln2_bias = param({cfg.dim});
    blk.mlp.w1 = trunc_normal_param({cfg.dim, cfg.mlp_dim}, rng);
    blk.mlp.b1 = param({cfg.mlp_dim});
    blk.mlp.w2 = trunc_normal_param({cfg.mlp_dim, cfg.dim}, rng);
    blk.mlp.b2 = param({cfg.dim});
    blocks_.push_back(std::move(blk));
  }
  norm_gain_ = Tensor::full({cfg.dim}, 1.0, true);
  norm_bias_ = param({cfg.dim});
  head_weight_ = param({cfg.dim, cfg.num_classes});
  head_bias_ = param({cfg.num_classes});
  collect_parameters();
}

void PdcVitModel::collect_parameters() {
  params_.clear();
  auto add_blocks = [this](const std::string& prefix, const std::vector<PdcBlockParams>& blocks) {
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const std::string p = prefix + "." + std::to_string(i) + ".";
      params_.emplace_back(p + "weight", blocks[i].kernel.weights);
      params_.emplace_back(p + "gain", blocks[i].gain);
      params_.emplace_back(p + "bias", blocks[i].bias);
    }
  };
  add_blocks("backbone.angular", backbone_.angular);
  add_blocks("backbone.radial", backbone_.radial);
  params_.emplace_back("embed.weight", embed_.weight);
  params_.emplace_back("embed.bias", embed_.bias);
  params_.emplace_back("embed.cls_token", embed_.cls_token);
  params_.emplace_back("embed.pos_emb", embed_.pos_emb);
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const EncoderBlockParams& blk = blocks_[b];
    const std::string p = "blocks." + std::to_string(b) + ".";
    params_.emplace_back(p + "ln1.gain", blk.ln1_gain);
    params_.emplace_back(p + "ln1.bias", blk.ln1_bias);
    params_.emplace_back(p + "attn.wq", blk.attn.wq);
    params_.emplace_back(p + "attn.bq", blk.attn.bq);
    params_.emplace_back(p + "attn.wk", blk.attn.wk);
    params_.emplace_back(p + "attn.bk", blk.attn.bk);
    params_.emplace_back(p + "attn.wv", blk.attn.wv);
    params_.emplace_back(p + "attn.bv", blk.attn.bv);
    params_.emplace_back(p + "attn.wo", blk.attn.wo);
    params_.emplace_back(p + "attn.bo", blk.attn.bo);
    params_.emplace_back(p + "ln2.gain", blk.ln2_gain);
    params_.emplace_back(p + "ln2.bias", blk.ln2_bias);
    params_.emplace_back(p + "mlp.w1", blk.mlp.w1);
    params_.emplace_back(p + "mlp.b1", blk.mlp.b1);
    params_.emplace_back(p + "mlp.w2", blk.mlp.w2);
    params_.emplace_back(p + "mlp.b2", blk.mlp.b2);
  }
  params_.emplace_back("norm.gain", norm_gain_);
  params_.emplace_back("norm.bias", norm_bias_);
  params_.emplace_back("head.weight", head_weight_);
  params_.emplace_back("head.bias", head_bias_);
}

std::vector<Tensor> PdcVitModel::parameter_tensors() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& [name, t] : params_) out.push_back(t);
  return out;
}

std::size_t PdcVitModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

void PdcVitModel::load_parameters(const std::vector<NamedTensor>& values) {
  for (auto& [name, dst] : params_) {
    const NamedTensor* src = nullptr;
    for (const NamedTensor& v : values) {
      if (v.first == name) src = &v;
    }
    if (!src) throw ContractError("missing parameter '" + name + "'");
    if (src->second.shape() != dst.shape()) {
      throw ContractError("parameter '" + name + "' has shape " + shape_str(src->second.shape()) + ", expected " +
                          shape_str(dst.shape()));
    }
    auto d = dst.mutable_data();
    const auto s = src->second.data();
    std::copy(s.begin(), s.end(), d.begin());
  }
}

Tensor PdcVitModel::encode(const Tensor& image, bool training, Rng& rng, std::vector<Tensor>* attention) const {
  const VitConfig& cfg = spec_.vit;
  if (image.rank() != 3 || image.dim(1) != spec_.image_size || image.dim(2) != spec_.image_size) {
    throw DimensionError("model expects " + std::to_string(spec_.backbone.in_channels) + "x" +
                         std::to_string(spec_.image_size) + "x" + std::to_string(spec_.image_size) + " images, got " +
                         shape_str(image.shape()));
  }
  const Tensor features = pdc_backbone(image, spec_.backbone, backbone_);
  const Tensor patches = patchify(features, cfg.patch_size);
  Tensor x = embed(patches, embed_, cfg.emb_dropout, training, rng).tokens;
  for (const EncoderBlockParams& blk : blocks_) {
    x = encoder_block(x, blk, cfg.heads, cfg.dropout, training, rng, attention);
  }
  return row(layernorm(x, norm_gain_, norm_bias_), 0);
}

Tensor PdcVitModel::forward(const Tensor& image, bool training, Rng& rng, std::vector<Tensor>* attention) const {
  const Tensor cls = encode(image, training, rng, attention);
  return reshape(linear(cls, head_weight_, head_bias_), {spec_.vit.num_classes});
}

Tensor PdcVitModel::features(const Tensor& image) const {
  Rng unused(0);
  return reshape(encode(image, false, unused, nullptr), {spec_.vit.dim});
}

}  // namespace pdcvit
