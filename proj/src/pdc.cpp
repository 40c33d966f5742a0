#include "pdcvit/pdc.hpp"

#include <array>
#include <cmath>

#include "pdcvit/errors.hpp"

namespace pdcvit {

namespace {

// Clockwise from the top-left corner.
constexpr std::array<Offset, 8> kRing{{{-1, -1}, {-1, 0}, {-1, 1}, {0, 1}, {1, 1}, {1, 0}, {1, -1}, {0, -1}}};

// N, NE, E, SE, S, SW, W, NW.
constexpr std::array<Offset, 8> kCompass{{{-1, 0}, {-1, 1}, {0, 1}, {1, 1}, {1, 0}, {1, -1}, {0, -1}, {-1, -1}}};

constexpr std::size_t kPairsPerKernel = 8;

}  // namespace

std::string to_string(PdcVariant v) { return v == PdcVariant::Angular ? "angular" : "radial"; }

PixelPairSet angular_pairs() {
  PixelPairSet set{PdcVariant::Angular, 3, {}};
  for (std::size_t j = 0; j < kRing.size(); ++j) set.pairs.push_back({kRing[j], kRing[(j + 1) % kRing.size()]});
  return set;
}

PixelPairSet radial_pairs() {
  PixelPairSet set{PdcVariant::Radial, 5, {}};
  for (const Offset& d : kCompass) set.pairs.push_back({{2 * d.dy, 2 * d.dx}, d});
  return set;
}

PixelPairSet pair_set(PdcVariant variant) {
  return variant == PdcVariant::Angular ? angular_pairs() : radial_pairs();
}

void validate(const PixelPairSet& set) {
  if (set.kernel_size <= 0 || set.kernel_size % 2 == 0) throw ContractError("pair set kernel size must be odd");
  const int r = set.radius();
  auto inside = [r](const Offset& o) { return std::abs(o.dy) <= r && std::abs(o.dx) <= r; };
  for (const PixelPair& p : set.pairs) {
    if (!inside(p.sampled) || !inside(p.subtracted)) throw ContractError("pair offset outside the kernel window");
    if (p.sampled == p.subtracted) throw ContractError("pair samples and subtracts the same pixel");
  }
  if (set.pairs.size() != kPairsPerKernel) throw ContractError("pair set must hold exactly 8 pairs");
  if (set.variant == PdcVariant::Angular) {
    if (set.kernel_size != 3) throw ContractError("angular pairs require a 3x3 window");
    // Closed cycle: each pair's subtracted pixel is the next pair's sampled one
    // and every ring pixel is visited once.
    std::array<int, 9> seen{};
    for (std::size_t j = 0; j < set.pairs.size(); ++j) {
      const PixelPair& p = set.pairs[j];
      if (p.sampled == Offset{0, 0} || p.subtracted == Offset{0, 0}) throw ContractError("angular pair uses center");
      if (!(p.subtracted == set.pairs[(j + 1) % set.pairs.size()].sampled)) {
        throw ContractError("angular pairs do not form a closed cycle");
      }
      ++seen[static_cast<std::size_t>((p.sampled.dy + 1) * 3 + p.sampled.dx + 1)];
    }
    for (std::size_t i = 0; i < seen.size(); ++i) {
      if (i != 4 && seen[i] != 1) throw ContractError("angular cycle does not visit each ring pixel once");
    }
  } else {
    if (set.kernel_size != 5) throw ContractError("radial pairs require a 5x5 window");
    for (const PixelPair& p : set.pairs) {
      const Offset& t = p.subtracted;
      if (std::max(std::abs(t.dy), std::abs(t.dx)) != 1 || !(p.sampled == Offset{2 * t.dy, 2 * t.dx})) {
        throw ContractError("radial pair is not (2d, d) for a compass direction d");
      }
    }
  }
}

PdcKernel PdcKernel::make(PdcVariant variant, Tensor weights) {
  if (weights.rank() != 3 || weights.dim(2) != kPairsPerKernel) {
    throw DimensionError("PDC weights must be C_out x C_in x 8, got " + shape_str(weights.shape()));
  }
  return PdcKernel{variant, std::move(weights), pair_set(variant)};
}

ConvertedKernel convert_weights(const PdcKernel& kernel) {
  const std::size_t cout = kernel.weights.dim(0), cin = kernel.weights.dim(1);
  const std::size_t npairs = kernel.pairs.pairs.size();
  if (kernel.weights.dim(2) != npairs) throw DimensionError("PDC weights do not match the pair count");
  const int k = kernel.pairs.kernel_size;
  const int r = kernel.pairs.radius();
  const auto kk = static_cast<std::size_t>(k * k);
  auto slot = [k, r](const Offset& o) { return static_cast<std::size_t>((o.dy + r) * k + (o.dx + r)); };

  const auto w = kernel.weights.data();
  std::vector<double> out(cout * cin * kk, 0.0);
  for (std::size_t oc = 0; oc < cout * cin; ++oc) {
    for (std::size_t p = 0; p < npairs; ++p) {
      const double v = w[oc * npairs + p];
      out[oc * kk + slot(kernel.pairs.pairs[p].sampled)] += v;
      out[oc * kk + slot(kernel.pairs.pairs[p].subtracted)] -= v;
    }
  }
  const auto ku = static_cast<std::size_t>(k);
  Tensor result = make_output({cout, cin, ku, ku}, std::move(out), {kernel.weights});
  if (should_record(result)) {
    active_tape()->record(result, [wt = kernel.weights, pairs = kernel.pairs, cout, cin, npairs, kk,
                                   slot](std::span<const double> g) {
      std::vector<double> gw(cout * cin * npairs);
      for (std::size_t oc = 0; oc < cout * cin; ++oc) {
        for (std::size_t p = 0; p < npairs; ++p) {
          gw[oc * npairs + p] = g[oc * kk + slot(pairs.pairs[p].sampled)] - g[oc * kk + slot(pairs.pairs[p].subtracted)];
        }
      }
      accumulate_grad(wt, gw);
    });
  }
  return ConvertedKernel{result};
}

Tensor pdc_forward_direct(const Tensor& input, const PdcKernel& kernel, std::size_t stride, std::size_t padding,
                          PadMode mode) {
  if (input.rank() != 3) throw DimensionError("PDC input must be C x H x W, got " + shape_str(input.shape()));
  const Tensor& weights = kernel.weights;
  if (weights.rank() != 3 || weights.dim(1) != input.dim(0) || weights.dim(2) != kernel.pairs.pairs.size()) {
    throw DimensionError("PDC weights " + shape_str(weights.shape()) + " incompatible with input " +
                         shape_str(input.shape()));
  }
  const std::size_t cin = input.dim(0), cout = weights.dim(0), npairs = weights.dim(2);
  const auto k = static_cast<std::size_t>(kernel.pairs.kernel_size);
  const std::size_t ho = conv_output_size(input.dim(1), k, stride, padding);
  const std::size_t wo = conv_output_size(input.dim(2), k, stride, padding);
  const Tensor padded = pad2d(input, padding, mode);
  const std::size_t hp = padded.dim(1), wp = padded.dim(2);
  const std::size_t sites = ho * wo;
  const int r = kernel.pairs.radius();

  // Flat offsets of each pair's two pixels relative to the window origin.
  std::vector<std::size_t> s_off(npairs), t_off(npairs);
  for (std::size_t p = 0; p < npairs; ++p) {
    const PixelPair& pp = kernel.pairs.pairs[p];
    s_off[p] = static_cast<std::size_t>(pp.sampled.dy + r) * wp + static_cast<std::size_t>(pp.sampled.dx + r);
    t_off[p] = static_cast<std::size_t>(pp.subtracted.dy + r) * wp + static_cast<std::size_t>(pp.subtracted.dx + r);
  }

  // diffs[c][p][site] = x[c, sampled] - x[c, subtracted]
  const auto x = padded.data();
  std::vector<double> diffs(cin * npairs * sites);
  for (std::size_t c = 0; c < cin; ++c) {
    for (std::size_t p = 0; p < npairs; ++p) {
      double* d = diffs.data() + (c * npairs + p) * sites;
      for (std::size_t y = 0; y < ho; ++y) {
        for (std::size_t xx = 0; xx < wo; ++xx) {
          const std::size_t origin = c * hp * wp + y * stride * wp + xx * stride;
          d[y * wo + xx] = x[origin + s_off[p]] - x[origin + t_off[p]];
        }
      }
    }
  }

  const auto w = weights.data();
  std::vector<double> out(cout * sites, 0.0);
  for (std::size_t o = 0; o < cout; ++o) {
    double* op = out.data() + o * sites;
    for (std::size_t cp = 0; cp < cin * npairs; ++cp) {
      const double wv = w[o * cin * npairs + cp];
      const double* d = diffs.data() + cp * sites;
      for (std::size_t s = 0; s < sites; ++s) op[s] += wv * d[s];
    }
  }

  Tensor result = make_output({cout, ho, wo}, std::move(out), {padded, weights});
  if (should_record(result)) {
    active_tape()->record(result, [padded, weights, diffs = std::move(diffs), s_off = std::move(s_off),
                                   t_off = std::move(t_off), cin, cout, npairs, ho, wo, hp, wp, sites,
                                   stride](std::span<const double> g) {
      const auto w = weights.data();
      if (weights.requires_grad()) {
        std::vector<double> gw(cout * cin * npairs, 0.0);
        for (std::size_t o = 0; o < cout; ++o) {
          const double* gp = g.data() + o * sites;
          for (std::size_t cp = 0; cp < cin * npairs; ++cp) {
            const double* d = diffs.data() + cp * sites;
            double s = 0.0;
            for (std::size_t i = 0; i < sites; ++i) s += gp[i] * d[i];
            gw[o * cin * npairs + cp] = s;
          }
        }
        accumulate_grad(weights, gw);
      }
      if (padded.requires_grad()) {
        std::vector<double> gd(sites);
        std::vector<double> gx(cin * hp * wp, 0.0);
        for (std::size_t c = 0; c < cin; ++c) {
          for (std::size_t p = 0; p < npairs; ++p) {
            std::fill(gd.begin(), gd.end(), 0.0);
            for (std::size_t o = 0; o < cout; ++o) {
              const double wv = w[(o * cin + c) * npairs + p];
              const double* gp = g.data() + o * sites;
              for (std::size_t i = 0; i < sites; ++i) gd[i] += wv * gp[i];
            }
            for (std::size_t y = 0; y < ho; ++y) {
              for (std::size_t xx = 0; xx < wo; ++xx) {
                const std::size_t origin = c * hp * wp + y * stride * wp + xx * stride;
                gx[origin + s_off[p]] += gd[y * wo + xx];
                gx[origin + t_off[p]] -= gd[y * wo + xx];
              }
            }
          }
        }
        accumulate_grad(padded, gx);
      }
    });
  }
  return result;
}

Tensor pdc_forward_converted(const Tensor& input, const PdcKernel& kernel, std::size_t stride, std::size_t padding,
                             PadMode mode) {
  if (input.rank() != 3 || kernel.weights.rank() != 3 || kernel.weights.dim(1) != input.dim(0)) {
    throw DimensionError("PDC weights " + shape_str(kernel.weights.shape()) + " incompatible with input " +
                         shape_str(input.shape()));
  }
  return conv2d(input, convert_weights(kernel).weights, stride, padding, mode);
}

std::size_t pdc_padding(PdcVariant variant) { return variant == PdcVariant::Angular ? 1 : 2; }

PdcBlockParams make_block_params(const PdcLayerSpec& spec, Rng& rng) {
  Tensor w = Tensor::zeros({spec.out_channels, spec.in_channels, kPairsPerKernel}, true);
  init_normal(w, std::sqrt(2.0 / static_cast<double>(spec.in_channels * kPairsPerKernel)), rng);
  return PdcBlockParams{PdcKernel::make(spec.variant, std::move(w)), Tensor::full({spec.out_channels}, 1.0, true),
                        Tensor::zeros({spec.out_channels}, true)};
}

Tensor pdc_block(const Tensor& input, const PdcLayerSpec& spec, const PdcBlockParams& params) {
  if (input.rank() != 3 || input.dim(0) != spec.in_channels) {
    throw DimensionError("PDC block expects " + std::to_string(spec.in_channels) + " input channels, got " +
                         shape_str(input.shape()));
  }
  const Tensor y = pdc_forward_converted(input, params.kernel, spec.stride, pdc_padding(spec.variant));
  return relu(channel_norm(y, params.gain, params.bias));
}

std::string to_string(BranchSelector b) {
  switch (b) {
    case BranchSelector::Angular:
      return "apdc";
    case BranchSelector::Radial:
      return "rpdc";
    case BranchSelector::Both:
      break;
  }
  return "pdc";
}

BranchSelector parse_branch_selector(const std::string& name) {
  if (name == "apdc") return BranchSelector::Angular;
  if (name == "rpdc") return BranchSelector::Radial;
  if (name == "pdc") return BranchSelector::Both;
  throw ParameterError("unknown variant '" + name + "' (expected pdc, apdc or rpdc)");
}

bool BackboneSpec::uses(PdcVariant v) const {
  if (branches == BranchSelector::Both) return true;
  return (branches == BranchSelector::Angular) == (v == PdcVariant::Angular);
}

std::vector<PdcLayerSpec> BackboneSpec::branch_layers(PdcVariant v) const {
  return {PdcLayerSpec{v, in_channels, channels_per_branch, 2},
          PdcLayerSpec{v, channels_per_branch, channels_per_branch, 2}};
}

BackboneParams make_backbone_params(const BackboneSpec& spec, std::uint64_t seed) {
  BackboneParams params;
  for (PdcVariant v : {PdcVariant::Angular, PdcVariant::Radial}) {
    if (!spec.uses(v)) continue;
    Rng rng(seed + (v == PdcVariant::Angular ? 101 : 202));
    auto& blocks = v == PdcVariant::Angular ? params.angular : params.radial;
    for (const PdcLayerSpec& layer : spec.branch_layers(v)) blocks.push_back(make_block_params(layer, rng));
  }
  return params;
}

Tensor pdc_backbone(const Tensor& image, const BackboneSpec& spec, const BackboneParams& params) {
  if (image.rank() != 3 || image.dim(0) != spec.in_channels) {
    throw DimensionError("backbone expects " + std::to_string(spec.in_channels) + " x H x W, got " +
                         shape_str(image.shape()));
  }
  if (image.dim(1) % 4 != 0 || image.dim(2) % 4 != 0) {
    throw DimensionError("backbone input height and width must be divisible by 4, got " + shape_str(image.shape()));
  }
  std::vector<Tensor> outputs;
  for (PdcVariant v : {PdcVariant::Angular, PdcVariant::Radial}) {
    if (!spec.uses(v)) continue;
    const auto& blocks = v == PdcVariant::Angular ? params.angular : params.radial;
    const auto layers = spec.branch_layers(v);
    if (blocks.size() != layers.size()) throw ContractError("backbone parameters missing for " + to_string(v));
    Tensor x = image;
    for (std::size_t i = 0; i < layers.size(); ++i) x = pdc_block(x, layers[i], blocks[i]);
    outputs.push_back(x);
  }
  return outputs.size() == 1 ? outputs.front() : concat0(outputs);
}

}  // namespace pdcvit
