#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "pdcvit/ops.hpp"
#include "pdcvit/tensor.hpp"

namespace pdcvit {

enum class PdcVariant { Angular, Radial };

std::string to_string(PdcVariant v);

// Offset from the window center, row then column.
struct Offset {
  int dy = 0;
  int dx = 0;
  friend bool operator==(const Offset&, const Offset&) = default;
};

// One difference term w * (x[sampled] - x[subtracted]).
struct PixelPair {
  Offset sampled;
  Offset subtracted;
  friend bool operator==(const PixelPair&, const PixelPair&) = default;
};

struct PixelPairSet {
  PdcVariant variant = PdcVariant::Angular;
  int kernel_size = 3;
  std::vector<PixelPair> pairs;

  int radius() const { return (kernel_size - 1) / 2; }
};

// 3x3 ring walked clockwise from the top-left corner; pair j is
// (ring[j], ring[j+1 mod 8]).
PixelPairSet angular_pairs();

// 5x5 window; for each compass direction d in N, NE, E, SE, S, SW, W, NW the
// pair (2d, d).
PixelPairSet radial_pairs();

PixelPairSet pair_set(PdcVariant variant);

// Throws ContractError when a pair set breaks the window/cycle rules.
void validate(const PixelPairSet& set);

struct PdcKernel {
  PdcVariant variant = PdcVariant::Angular;
  Tensor weights;  // C_out x C_in x num_pairs
  PixelPairSet pairs;

  static PdcKernel make(PdcVariant variant, Tensor weights);
  std::size_t out_channels() const { return weights.dim(0); }
  std::size_t in_channels() const { return weights.dim(1); }
};

struct ConvertedKernel {
  Tensor weights;  // C_out x C_in x k x k
};

// Scatters +w at each pair's sampled offset and -w at its subtracted offset.
// Differentiable in the pair weights.
ConvertedKernel convert_weights(const PdcKernel& kernel);

// Pair-by-pair evaluation of sum_p w_p (x[s_p] - x[t_p]).
Tensor pdc_forward_direct(const Tensor& input, const PdcKernel& kernel, std::size_t stride, std::size_t padding,
                          PadMode mode = PadMode::Replicate);

// Same result through conv2d with the converted kernel.
Tensor pdc_forward_converted(const Tensor& input, const PdcKernel& kernel, std::size_t stride, std::size_t padding,
                             PadMode mode = PadMode::Replicate);

// Padding that keeps out = ceil(in / stride) for this kernel size.
std::size_t pdc_padding(PdcVariant variant);

struct PdcLayerSpec {
  PdcVariant variant = PdcVariant::Angular;
  std::size_t in_channels = 3;
  std::size_t out_channels = 16;
  std::size_t stride = 2;
};

struct PdcBlockParams {
  PdcKernel kernel;
  Tensor gain;  // [C_out]
  Tensor bias;  // [C_out]
};

// Pair weights ~ N(0, 2 / (C_in * 8)); gain 1, bias 0.
PdcBlockParams make_block_params(const PdcLayerSpec& spec, Rng& rng);

// Converted PDC -> per-channel standardization -> ReLU.
Tensor pdc_block(const Tensor& input, const PdcLayerSpec& spec, const PdcBlockParams& params);

enum class BranchSelector { Angular, Radial, Both };

std::string to_string(BranchSelector b);
BranchSelector parse_branch_selector(const std::string& name);  // "apdc" | "rpdc" | "pdc"

struct BackboneSpec {
  std::size_t in_channels = 3;
  std::size_t channels_per_branch = 16;
  BranchSelector branches = BranchSelector::Both;

  std::size_t out_channels() const {
    return branches == BranchSelector::Both ? 2 * channels_per_branch : channels_per_branch;
  }
  bool uses(PdcVariant v) const;
  // Specs of the two stacked blocks of a branch.
  std::vector<PdcLayerSpec> branch_layers(PdcVariant v) const;
};

struct BackboneParams {
  std::vector<PdcBlockParams> angular;  // empty when the branch is unused
  std::vector<PdcBlockParams> radial;
};

// Each branch draws from its own generator derived from `seed`, so a branch
// initializes identically whether or not the other branch is present.
BackboneParams make_backbone_params(const BackboneSpec& spec, std::uint64_t seed);

// Runs the selected branches (two stride-2 blocks each) and concatenates
// their outputs along channels, angular first. Output is C' x H/4 x W/4.
Tensor pdc_backbone(const Tensor& image, const BackboneSpec& spec, const BackboneParams& params);

}  // namespace pdcvit
