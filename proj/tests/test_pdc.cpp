#include <algorithm>
#include <cmath>
#include <map>

#include "doctest.h"
#include "oracles.hpp"
#include "pdcvit/errors.hpp"
#include "pdcvit/pdc.hpp"
#include "pdcvit/verify.hpp"

using namespace pdcvit;

namespace {

double max_abs(std::span<const double> v) {
  double m = 0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  REQUIRE(a.size() == b.size());
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

// Converted kernel entry at offset (dy, dx) for a single-channel kernel.
double tap(const ConvertedKernel& k, int dy, int dx) {
  const int ks = static_cast<int>(k.weights.dim(3));
  const int r = (ks - 1) / 2;
  return k.weights[static_cast<std::size_t>((dy + r) * ks + (dx + r))];
}

void check_table(const PixelPairSet& set, const oracle::PairTable& table) {
  REQUIRE(set.pairs.size() == table.size());
  for (std::size_t i = 0; i < table.size(); ++i) {
    CHECK(set.pairs[i].sampled == Offset{table[i].first.first, table[i].first.second});
    CHECK(set.pairs[i].subtracted == Offset{table[i].second.first, table[i].second.second});
  }
}

}  // namespace

TEST_CASE("angular pair set") {
  const PixelPairSet set = angular_pairs();
  CHECK(set.pairs.size() == 8);
  CHECK(set.kernel_size == 3);
  CHECK(set.pairs.front().sampled == Offset{-1, -1});
  CHECK(set.pairs.front().subtracted == Offset{-1, 0});
  check_table(set, oracle::angular_table());

  std::map<std::pair<int, int>, int> balance;
  for (const PixelPair& p : set.pairs) {
    ++balance[{p.sampled.dy, p.sampled.dx}];
    --balance[{p.subtracted.dy, p.subtracted.dx}];
  }
  for (const auto& [offset, n] : balance) CHECK(n == 0);
  CHECK_NOTHROW(validate(set));
}

TEST_CASE("radial pair set") {
  const PixelPairSet set = radial_pairs();
  CHECK(set.pairs.size() == 8);
  CHECK(set.kernel_size == 5);
  check_table(set, oracle::radial_table());
  // direction E
  CHECK(set.pairs[2].sampled == Offset{0, 2});
  CHECK(set.pairs[2].subtracted == Offset{0, 1});
  for (const PixelPair& p : set.pairs) {
    for (const Offset& o : {p.sampled, p.subtracted}) {
      CHECK(std::abs(o.dy) <= 2);
      CHECK(std::abs(o.dx) <= 2);
    }
  }
  CHECK_NOTHROW(validate(set));
}

TEST_CASE("pair set validation rejects malformed sets") {
  PixelPairSet bad = angular_pairs();
  bad.pairs[0].sampled = Offset{-2, 0};
  CHECK_THROWS_AS(validate(bad), ContractError);
  PixelPairSet open_cycle = angular_pairs();
  open_cycle.pairs.pop_back();
  CHECK_THROWS_AS(validate(open_cycle), ContractError);
}

TEST_CASE("weight conversion") {
  SUBCASE("equal angular weights cancel") {
    const auto k = convert_weights(PdcKernel::make(PdcVariant::Angular, Tensor::full({1, 1, 8}, 0.37)));
    CHECK(max_abs(k.weights.data()) == 0.0);
  }
  SUBCASE("angular ramp") {
    const auto k = convert_weights(
        PdcKernel::make(PdcVariant::Angular, Tensor::from_data({1, 1, 8}, {1, 2, 3, 4, 5, 6, 7, 8})));
    const std::vector<std::pair<int, int>> ring{{-1, -1}, {-1, 0}, {-1, 1}, {0, 1}, {1, 1}, {1, 0}, {1, -1}, {0, -1}};
    const std::vector<double> expect{-7, 1, 1, 1, 1, 1, 1, 1};
    for (std::size_t j = 0; j < 8; ++j) CHECK(tap(k, ring[j].first, ring[j].second) == expect[j]);
    CHECK(tap(k, 0, 0) == 0.0);
  }
  SUBCASE("radial all ones") {
    const auto k = convert_weights(PdcKernel::make(PdcVariant::Radial, Tensor::full({1, 1, 8}, 1.0)));
    double total = 0;
    for (int dy = -2; dy <= 2; ++dy) {
      for (int dx = -2; dx <= 2; ++dx) {
        const double v = tap(k, dy, dx);
        total += v;
        const bool compass = (dy == 0 || dx == 0 || std::abs(dy) == std::abs(dx)) && !(dy == 0 && dx == 0);
        const int r = std::max(std::abs(dy), std::abs(dx));
        if (compass && r == 2) CHECK(v == 1.0);
        else if (compass && r == 1) CHECK(v == -1.0);
        else CHECK(v == 0.0);
      }
    }
    CHECK(total == 0.0);
  }
  SUBCASE("conversion is linear and differentiable") {
    Rng rng(11);
    const Tensor w = random_tensor({2, 3, 8}, rng, -1, 1, true);
    const Tensor probe = random_tensor({2, 3, 5, 5}, rng);
    const auto fn = [probe](const std::vector<Tensor>& in) {
      return sum(mul(convert_weights(PdcKernel::make(PdcVariant::Radial, in[0])).weights, probe));
    };
    CHECK(gradcheck(fn, {w}, rng).max_rel_error < 1e-8);
  }
}

TEST_CASE("direct evaluation matches the pair loop") {
  Rng rng(12);
  for (PdcVariant v : {PdcVariant::Angular, PdcVariant::Radial}) {
    const auto table = v == PdcVariant::Angular ? oracle::angular_table() : oracle::radial_table();
    const int radius = v == PdcVariant::Angular ? 1 : 2;
    for (std::size_t stride : {1u, 2u}) {
      const Tensor x = random_tensor({2, 6, 6}, rng);
      const Tensor w = random_tensor({3, 2, 8}, rng);
      const PdcKernel kernel = PdcKernel::make(v, w);
      const std::size_t pad = pdc_padding(v);
      std::size_t oh = 0, ow = 0;
      const auto expect = oracle::pdc_loop(values(x), 2, 6, 6, values(w), 3, table, radius, stride, pad, oh, ow);
      const Tensor direct = pdc_forward_direct(x, kernel, stride, pad);
      CHECK(direct.shape() == Shape{3, oh, ow});
      CHECK(max_abs_diff(direct.data(), expect) < 1e-12);
      const Tensor conv = pdc_forward_converted(x, kernel, stride, pad);
      CHECK(max_abs_diff(conv.data(), expect) < 1e-12);
    }
  }
}

TEST_CASE("direct and converted forms agree on random draws") {
  Rng rng(13);
  for (PdcVariant v : {PdcVariant::Angular, PdcVariant::Radial}) {
    const auto stats = pdc_equivalence(v, 200, rng);
    CHECK(stats.trials == 200);
    CHECK(stats.max_abs_diff < 1e-10);
  }
  const auto faulty = pdc_equivalence(PdcVariant::Angular, 20, rng, 1e-6);
  CHECK(faulty.max_abs_diff > 1e-10);
}

TEST_CASE("constants vanish and equal angular weights telescope") {
  Rng rng(14);
  for (PdcVariant v : {PdcVariant::Angular, PdcVariant::Radial}) {
    const PdcKernel kernel = PdcKernel::make(v, random_tensor({2, 3, 8}, rng, -2, 2));
    for (double c : {0.0, 1.0, -3.75, 123.5}) {
      const Tensor x = Tensor::full({3, 7, 9}, c);
      const Tensor d = pdc_forward_direct(x, kernel, 1, pdc_padding(v));
      const Tensor k = pdc_forward_converted(x, kernel, 2, pdc_padding(v));
      CHECK(max_abs(d.data()) <= 1e-14);
      CHECK(max_abs(k.data()) <= 1e-12);
    }
  }
  const PdcKernel equal = PdcKernel::make(PdcVariant::Angular, Tensor::full({1, 2, 8}, -1.3));
  const Tensor y = pdc_forward_direct(random_tensor({2, 8, 8}, rng, -5, 5), equal, 1, 1);
  CHECK(max_abs(y.data()) <= 1e-14);
}

TEST_CASE("pdc gradients") {
  Rng rng(15);
  for (PdcVariant v : {PdcVariant::Angular, PdcVariant::Radial}) {
    const Tensor x = random_tensor({2, 6, 6}, rng, -1, 1, true);
    const Tensor w = random_tensor({2, 2, 8}, rng, -1, 1, true);
    const Tensor probe = random_tensor({2, 3, 3}, rng);
    const std::size_t pad = pdc_padding(v);
    const auto direct = [v, probe, pad](const std::vector<Tensor>& in) {
      return sum(mul(pdc_forward_direct(in[0], PdcKernel::make(v, in[1]), 2, pad), probe));
    };
    const auto converted = [v, probe, pad](const std::vector<Tensor>& in) {
      return sum(mul(pdc_forward_converted(in[0], PdcKernel::make(v, in[1]), 2, pad), probe));
    };
    CHECK(gradcheck(direct, {x, w}, rng).max_rel_error < 1e-4);
    CHECK(gradcheck(converted, {x, w}, rng).max_rel_error < 1e-4);
  }
}

TEST_CASE("pdc block") {
  Rng rng(16);
  const PdcLayerSpec spec{PdcVariant::Radial, 3, 4, 2};
  const PdcBlockParams params = make_block_params(spec, rng);
  const Tensor y = pdc_block(random_tensor({3, 9, 11}, rng), spec, params);
  CHECK(y.shape() == Shape{4, conv_output_size(9, 5, 2, 2), conv_output_size(11, 5, 2, 2)});

  // Zero PDC response standardizes to zero, then bias and ReLU apply.
  PdcBlockParams biased = params;
  biased.bias = Tensor::from_data({4}, {0.5, -0.5, 0.0, 2.0});
  const Tensor flat = pdc_block(Tensor::full({3, 8, 8}, 0.3), spec, biased);
  for (std::size_t c = 0; c < 4; ++c) {
    for (std::size_t i = 0; i < 16; ++i) CHECK(flat[c * 16 + i] == std::max(0.0, biased.bias[c]));
  }

  // Gradient w.r.t. the pair weights, gain and bias. Inputs are kept away
  // from the ReLU kink by a positive bias.
  const Tensor x = random_tensor({3, 8, 8}, rng);
  const Tensor w = random_tensor({4, 3, 8}, rng, -1, 1, true);
  const Tensor g = random_tensor({4}, rng, 0.1, 0.3, true);
  const Tensor b = Tensor::full({4}, 1.0, true);
  const Tensor probe = random_tensor({4, 4, 4}, rng);
  const auto fn = [&](const std::vector<Tensor>& in) {
    const PdcBlockParams p{PdcKernel::make(spec.variant, in[0]), in[1], in[2]};
    return sum(mul(pdc_block(x, spec, p), probe));
  };
  CHECK(gradcheck(fn, {w, g, b}, rng).max_rel_error < 1e-4);
}

TEST_CASE("backbone") {
  Rng rng(17);
  const Tensor image = random_tensor({3, 32, 32}, rng, 0, 1);
  BackboneSpec both;
  BackboneSpec ang = both, rad = both;
  ang.branches = BranchSelector::Angular;
  rad.branches = BranchSelector::Radial;
  const Tensor yb = pdc_backbone(image, both, make_backbone_params(both, 5));
  const Tensor ya = pdc_backbone(image, ang, make_backbone_params(ang, 5));
  const Tensor yr = pdc_backbone(image, rad, make_backbone_params(rad, 5));
  CHECK(yb.shape() == Shape{32, 8, 8});
  CHECK(ya.shape() == Shape{16, 8, 8});
  CHECK(yr.shape() == Shape{16, 8, 8});
  for (std::size_t i = 0; i < ya.numel(); ++i) {
    CHECK(ya[i] == yb[i]);
    CHECK(yr[i] == yb[ya.numel() + i]);
  }

  const auto params = make_backbone_params(both, 9);
  const Tensor c1 = pdc_backbone(Tensor::full({3, 16, 16}, 0.2), both, params);
  const Tensor c2 = pdc_backbone(Tensor::full({3, 16, 16}, 0.9), both, params);
  CHECK(max_abs_diff(c1.data(), c2.data()) == 0.0);

  CHECK_THROWS_AS(pdc_backbone(Tensor::zeros({3, 30, 32}), both, params), DimensionError);
  CHECK(parse_branch_selector("apdc") == BranchSelector::Angular);
  CHECK(parse_branch_selector("rpdc") == BranchSelector::Radial);
  CHECK(parse_branch_selector("pdc") == BranchSelector::Both);
  CHECK_THROWS_AS(parse_branch_selector("xpdc"), ParameterError);
}
