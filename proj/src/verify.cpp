#include "pdcvit/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "pdcvit/errors.hpp"
#include "pdcvit/vit.hpp"

namespace pdcvit {

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

std::size_t uniform_size(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// sum(out * probe) with a fixed random probe, so every output entry matters.
Tensor probe_sum(const Tensor& out, const Tensor& probe) { return sum(mul(out, probe)); }

struct GradCase {
  std::string name;
  std::function<GradCheckResult(Rng&)> run;
};

std::vector<GradCase> grad_cases() {
  std::vector<GradCase> cases;
  auto with_probe = [](Shape out_shape, Rng& rng) { return random_tensor(std::move(out_shape), rng); };

  cases.push_back({"matmul", [=](Rng& rng) {
                     auto a = random_tensor({4, 5}, rng, -1, 1, true), b = random_tensor({5, 3}, rng, -1, 1, true);
                     auto p = with_probe({4, 3}, rng);
                     return gradcheck([p](const auto& in) { return probe_sum(matmul(in[0], in[1]), p); }, {a, b}, rng);
                   }});
  cases.push_back({"conv2d", [=](Rng& rng) {
                     auto x = random_tensor({2, 6, 6}, rng, -1, 1, true), k = random_tensor({3, 2, 3, 3}, rng, -1, 1, true);
                     auto p = with_probe({3, 3, 3}, rng);
                     return gradcheck([p](const auto& in) { return probe_sum(conv2d(in[0], in[1], 2, 1), p); }, {x, k},
                                      rng);
                   }});
  cases.push_back({"conv2d-replicate", [=](Rng& rng) {
                     auto x = random_tensor({2, 5, 5}, rng, -1, 1, true), k = random_tensor({2, 2, 3, 3}, rng, -1, 1, true);
                     auto p = with_probe({2, 5, 5}, rng);
                     return gradcheck(
                         [p](const auto& in) { return probe_sum(conv2d(in[0], in[1], 1, 1, PadMode::Replicate), p); },
                         {x, k}, rng);
                   }});
  cases.push_back({"softmax", [=](Rng& rng) {
                     auto x = random_tensor({3, 4, 2}, rng, -2, 2, true);
                     auto p = with_probe({3, 4, 2}, rng);
                     return gradcheck([p](const auto& in) { return probe_sum(softmax(in[0], 1), p); }, {x}, rng);
                   }});
  cases.push_back({"layernorm", [=](Rng& rng) {
                     auto x = random_tensor({3, 6}, rng, -2, 2, true), g = random_tensor({6}, rng, 0.5, 1.5, true),
                          b = random_tensor({6}, rng, -1, 1, true);
                     auto p = with_probe({3, 6}, rng);
                     return gradcheck([p](const auto& in) { return probe_sum(layernorm(in[0], in[1], in[2]), p); },
                                      {x, g, b}, rng);
                   }});
  cases.push_back({"gelu", [=](Rng& rng) {
                     auto x = random_tensor({10}, rng, -3, 3, true);
                     auto p = with_probe({10}, rng);
                     return gradcheck([p](const auto& in) { return probe_sum(gelu(in[0]), p); }, {x}, rng);
                   }});
  cases.push_back({"cross_entropy", [=](Rng& rng) {
                     auto z = random_tensor({4, 5}, rng, -2, 2, true);
                     std::vector<std::size_t> labels{0, 3, 4, 1};
                     return gradcheck([labels](const auto& in) { return cross_entropy(in[0], labels); }, {z}, rng);
                   }});
  cases.push_back({"channel_norm", [=](Rng& rng) {
                     auto x = random_tensor({2, 4, 4}, rng, -2, 2, true), g = random_tensor({2}, rng, 0.5, 1.5, true),
                          b = random_tensor({2}, rng, -1, 1, true);
                     auto p = with_probe({2, 4, 4}, rng);
                     return gradcheck([p](const auto& in) { return probe_sum(channel_norm(in[0], in[1], in[2]), p); },
                                      {x, g, b}, rng);
                   }});
  for (PdcVariant v : {PdcVariant::Angular, PdcVariant::Radial}) {
    cases.push_back({"pdc-direct-" + to_string(v), [=](Rng& rng) {
                       auto x = random_tensor({2, 7, 7}, rng, -1, 1, true), w = random_tensor({3, 2, 8}, rng, -1, 1, true);
                       auto p = with_probe({3, 4, 4}, rng);
                       return gradcheck(
                           [p, v](const auto& in) {
                             return probe_sum(pdc_forward_direct(in[0], PdcKernel::make(v, in[1]), 2, pdc_padding(v)), p);
                           },
                           {x, w}, rng);
                     }});
    cases.push_back({"pdc-converted-" + to_string(v), [=](Rng& rng) {
                       auto x = random_tensor({2, 7, 7}, rng, -1, 1, true), w = random_tensor({3, 2, 8}, rng, -1, 1, true);
                       auto p = with_probe({3, 4, 4}, rng);
                       return gradcheck(
                           [p, v](const auto& in) {
                             return probe_sum(pdc_forward_converted(in[0], PdcKernel::make(v, in[1]), 2, pdc_padding(v)),
                                              p);
                           },
                           {x, w}, rng);
                     }});
  }
  cases.push_back({"attention", [=](Rng& rng) {
                     const std::size_t d = 8;
                     std::vector<Tensor> in{random_tensor({5, d}, rng, -1, 1, true)};
                     for (int i = 0; i < 4; ++i) {
                       in.push_back(random_tensor({d, d}, rng, -0.5, 0.5, true));
                       in.push_back(random_tensor({d}, rng, -0.1, 0.1, true));
                     }
                     auto p = with_probe({5, d}, rng);
                     return gradcheck(
                         [p](const auto& t) {
                           Rng unused(0);
                           AttentionParams ap{t[1], t[2], t[3], t[4], t[5], t[6], t[7], t[8]};
                           return probe_sum(multi_head_attention(t[0], ap, 2, 0.0, false, unused), p);
                         },
                         in, rng);
                   }});
  return cases;
}

}  // namespace

namespace {
constexpr double kKinkTolerance = 1e-3;
}  // namespace

double relative_error(double analytic, double numeric, double scale_floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), scale_floor});
  return std::abs(analytic - numeric) / denom;
}

Tensor random_tensor(Shape shape, Rng& rng, double lo, double hi, bool requires_grad) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> data(shape_numel(shape));
  for (double& v : data) v = u(rng);
  return Tensor::from_data(std::move(shape), std::move(data), requires_grad);
}

GradCheckResult gradcheck(const ScalarFn& fn, const std::vector<Tensor>& inputs, Rng& rng, double h,
                          std::size_t coords_per_input) {
  std::vector<Tensor> args = inputs;
  for (Tensor& t : args) t.zero_grad();
  {
    GradTape tape;
    TapeScope scope(tape);
    const Tensor out = fn(args);
    tape.backward(out);
  }
  const double f0 = fn(args).item();
  GradCheckResult result;
  for (Tensor& t : args) {
    if (!t.requires_grad()) continue;
    const std::vector<double> analytic =
        t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end()) : std::vector<double>(t.numel(), 0.0);
    std::vector<std::size_t> coords(t.numel());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (coords_per_input && coords_per_input < coords.size()) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(coords_per_input);
    }
    for (std::size_t i : coords) {
      auto data = t.mutable_data();
      const double saved = data[i];
      data[i] = saved + h;
      const double fp = fn(args).item();
      data[i] = saved - h;
      const double fm = fn(args).item();
      data[i] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      double err = relative_error(analytic[i], numeric);
      // A ReLU switching inside [x - h, x + h] bends the function; the one
      // sided slopes then disagree and the analytic value must match one.
      const double right = (fp - f0) / h, left = (f0 - fm) / h;
      if (relative_error(right, left) > kKinkTolerance) {
        ++result.kinks;
        err = std::min({err, relative_error(analytic[i], right), relative_error(analytic[i], left)});
      }
      result.max_rel_error = std::max(result.max_rel_error, err);
      ++result.coordinates;
    }
  }
  for (Tensor& t : args) t.zero_grad();
  return result;
}

EquivalenceStats pdc_equivalence(PdcVariant variant, std::size_t trials, Rng& rng, double converted_fault) {
  EquivalenceStats stats;
  const auto k = static_cast<std::size_t>(pair_set(variant).kernel_size);
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t cin = uniform_size(rng, 1, 4), cout = uniform_size(rng, 1, 4);
    const std::size_t h = uniform_size(rng, k, 12), w = uniform_size(rng, k, 12);
    const std::size_t stride = uniform_size(rng, 1, 3), padding = uniform_size(rng, 0, k / 2);
    const PadMode mode = uniform_size(rng, 0, 1) ? PadMode::Replicate : PadMode::Zeros;
    const Tensor x = random_tensor({cin, h, w}, rng, -4.0, 4.0);
    const PdcKernel kernel = PdcKernel::make(variant, random_tensor({cout, cin, 8}, rng, -2.0, 2.0));

    const Tensor direct = pdc_forward_direct(x, kernel, stride, padding, mode);
    Tensor converted;
    if (converted_fault == 0.0) {
      converted = pdc_forward_converted(x, kernel, stride, padding, mode);
    } else {
      Tensor hat = convert_weights(kernel).weights.clone();
      for (double& v : hat.mutable_data()) v += converted_fault;
      converted = conv2d(x, hat, stride, padding, mode);
    }
    for (std::size_t i = 0; i < direct.numel(); ++i) {
      stats.max_abs_diff = std::max(stats.max_abs_diff, std::abs(direct[i] - converted[i]));
    }
    ++stats.trials;
  }
  return stats;
}

std::vector<SuiteResult> run_verify(const VerifyOptions& opts) {
  std::vector<SuiteResult> results;
  Rng rng(opts.seed);

  {
    SuiteResult r{"pdc-equivalence", true, ""};
    std::ostringstream os;
    for (PdcVariant v : {PdcVariant::Angular, PdcVariant::Radial}) {
      const auto stats = pdc_equivalence(v, opts.pdc_trials, rng, opts.converted_fault);
      r.passed = r.passed && stats.max_abs_diff < 1e-10;
      os << to_string(v) << ": " << stats.trials << " trials, max |direct-converted| = " << fmt("%.3e", stats.max_abs_diff)
         << "; ";
    }
    r.detail = os.str();
    results.push_back(r);
  }

  {
    SuiteResult r{"constant-annihilation", true, ""};
    double worst = 0.0;
    for (PdcVariant v : {PdcVariant::Angular, PdcVariant::Radial}) {
      for (int trial = 0; trial < 20; ++trial) {
        const double c = std::uniform_real_distribution<double>(-5, 5)(rng);
        const Tensor x = Tensor::full({2, 9, 9}, c);
        const PdcKernel kernel = PdcKernel::make(v, random_tensor({3, 2, 8}, rng, -2, 2));
        for (const Tensor& y : {pdc_forward_direct(x, kernel, 1, pdc_padding(v)),
                                pdc_forward_converted(x, kernel, 1, pdc_padding(v))}) {
          for (double e : y.data()) worst = std::max(worst, std::abs(e));
        }
      }
    }
    // Equal angular weights telescope to zero on any input.
    for (int trial = 0; trial < 20; ++trial) {
      const Tensor x = random_tensor({2, 8, 8}, rng, -3, 3);
      const PdcKernel kernel = PdcKernel::make(PdcVariant::Angular, Tensor::full({2, 2, 8}, 0.7));
      const Tensor y = pdc_forward_direct(x, kernel, 1, 0);
      for (double e : y.data()) worst = std::max(worst, std::abs(e));
    }
    r.passed = worst <= 1e-14;
    r.detail = "max |output| = " + fmt("%.3e", worst);
    results.push_back(r);
  }

  {
    SuiteResult r{"gradient-checks", true, ""};
    std::ostringstream os;
    double worst = 0.0;
    for (const GradCase& gc : grad_cases()) {
      double case_worst = 0.0;
      for (std::size_t d = 0; d < opts.grad_draws; ++d) case_worst = std::max(case_worst, gc.run(rng).max_rel_error);
      worst = std::max(worst, case_worst);
      if (case_worst >= 1e-4) {
        r.passed = false;
        os << gc.name << " rel err " << fmt("%.3e", case_worst) << "; ";
      }
    }
    os << "max relative error " << fmt("%.3e", worst);
    r.detail = os.str();
    results.push_back(r);
  }

  {
    SuiteResult r{"softmax-laws", true, ""};
    double sum_err = 0.0, shift_err = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
      const Tensor x = random_tensor({4, 7}, rng, -30, 30);
      const Tensor y = softmax(x, 1);
      Tensor shifted = x.clone();
      const double c = std::uniform_real_distribution<double>(-100, 100)(rng);
      for (double& v : shifted.mutable_data()) v += c;
      const Tensor ys = softmax(shifted, 1);
      for (std::size_t i = 0; i < 4; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < 7; ++j) {
          s += y[i * 7 + j];
          if (!(y[i * 7 + j] > 0.0)) r.passed = false;
          shift_err = std::max(shift_err, std::abs(y[i * 7 + j] - ys[i * 7 + j]));
        }
        sum_err = std::max(sum_err, std::abs(s - 1.0));
      }
    }
    r.passed = r.passed && sum_err <= 1e-12 && shift_err <= 1e-12;
    r.detail = "max |row sum - 1| = " + fmt("%.3e", sum_err) + ", max shift deviation = " + fmt("%.3e", shift_err);
    results.push_back(r);
  }

  {
    SuiteResult r{"layernorm-laws", true, ""};
    double err = 0.0;
    const std::size_t n = 9;
    const Tensor ones = Tensor::full({n}, 1.0), zeros = Tensor::zeros({n});
    for (int trial = 0; trial < 50; ++trial) {
      const Tensor x = random_tensor({3, n}, rng, -5, 5);
      const Tensor y = layernorm(x, ones, zeros);
      for (std::size_t i = 0; i < 3; ++i) {
        double mu = 0.0, var_in = 0.0, var_out = 0.0, mu_in = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          mu += y[i * n + j];
          mu_in += x[i * n + j];
        }
        mu /= n;
        mu_in /= n;
        for (std::size_t j = 0; j < n; ++j) {
          var_out += (y[i * n + j] - mu) * (y[i * n + j] - mu);
          var_in += (x[i * n + j] - mu_in) * (x[i * n + j] - mu_in);
        }
        var_out /= n;
        var_in /= n;
        err = std::max({err, std::abs(mu), std::abs(var_out - var_in / (var_in + 1e-5))});
      }
      const Tensor bias = random_tensor({n}, rng);
      const Tensor annihilated = layernorm(x, zeros, bias);
      for (std::size_t i = 0; i < 3 * n; ++i) err = std::max(err, std::abs(annihilated[i] - bias[i % n]));
    }
    const Tensor flat = layernorm(Tensor::full({2, n}, 3.25), ones, zeros);
    for (double v : flat.data()) err = std::max(err, std::abs(v));
    r.passed = err <= 1e-10;
    r.detail = "max deviation = " + fmt("%.3e", err);
    results.push_back(r);
  }
  return results;
}

std::vector<BenchCase> parse_bench_sizes(const std::string& text) {
  std::vector<BenchCase> out;
  std::istringstream is(text);
  std::string item;
  while (std::getline(is, item, ',')) {
    BenchCase c;
    char x1 = 0, x2 = 0;
    std::istringstream one(item);
    if (!(one >> c.channels >> x1 >> c.height >> x2 >> c.width) || x1 != 'x' || x2 != 'x' || c.channels == 0 ||
        c.height < 5 || c.width < 5) {
      throw ParameterError("bad benchmark size '" + item + "' (expected CxHxW with H, W >= 5)");
    }
    out.push_back(c);
  }
  if (out.empty()) throw ParameterError("no benchmark sizes given");
  return out;
}

std::vector<BenchRow> run_bench(const std::vector<BenchCase>& sizes, std::size_t trials, std::uint64_t seed) {
  if (trials == 0) throw ParameterError("bench needs at least one trial");
  Rng rng(seed);
  std::vector<BenchRow> rows;
  auto median_ms = [trials](auto&& fn) {
    std::vector<double> t(trials);
    for (double& v : t) {
      const auto start = std::chrono::steady_clock::now();
      fn();
      v = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    }
    std::sort(t.begin(), t.end());
    return trials % 2 ? t[trials / 2] : 0.5 * (t[trials / 2 - 1] + t[trials / 2]);
  };
  for (const BenchCase& c : sizes) {
    for (PdcVariant v : {PdcVariant::Angular, PdcVariant::Radial}) {
      const Tensor x = random_tensor({c.channels, c.height, c.width}, rng);
      const PdcKernel kernel = PdcKernel::make(v, random_tensor({c.channels, c.channels, 8}, rng));
      const std::size_t pad = pdc_padding(v);
      const Tensor a = pdc_forward_direct(x, kernel, 1, pad);
      const Tensor b = pdc_forward_converted(x, kernel, 1, pad);
      BenchRow row{v, c, 0.0, 0.0, 0.0};
      for (std::size_t i = 0; i < a.numel(); ++i) row.max_abs_diff = std::max(row.max_abs_diff, std::abs(a[i] - b[i]));
      if (!(row.max_abs_diff < 1e-10)) {
        throw NumericError("direct and converted PDC disagree by " + fmt("%.3e", row.max_abs_diff) + " on " +
                           std::to_string(c.channels) + "x" + std::to_string(c.height) + "x" + std::to_string(c.width));
      }
      row.direct_ms = median_ms([&] { (void)pdc_forward_direct(x, kernel, 1, pad); });
      row.converted_ms = median_ms([&] { (void)pdc_forward_converted(x, kernel, 1, pad); });
      rows.push_back(row);
    }
  }
  return rows;
}

std::string bench_table(const std::vector<BenchRow>& rows) {
  std::string s = "variant,channels,height,width,direct_ms,converted_ms,speedup,max_abs_diff\n";
  for (const BenchRow& r : rows) {
    s += to_string(r.variant) + "," + std::to_string(r.size.channels) + "," + std::to_string(r.size.height) + "," +
         std::to_string(r.size.width) + "," + fmt("%.4f", r.direct_ms) + "," + fmt("%.4f", r.converted_ms) + "," +
         fmt("%.3f", r.speedup()) + "," + fmt("%.3e", r.max_abs_diff) + "\n";
  }
  return s;
}

}  // namespace pdcvit
