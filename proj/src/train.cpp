#include "pdcvit/train.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "pdcvit/errors.hpp"

namespace fs = std::filesystem;

namespace pdcvit {

namespace {

constexpr char kMagic[8] = {'P', 'D', 'C', 'V', 'I', 'T', 'C', 'K'};

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

template <typename T>
void put(std::ostream& out, T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    out.write(bytes.data(), sizeof(T));
  } else {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
}

template <typename T>
T get(std::istream& in) {
  std::array<char, sizeof(T)> bytes{};
  in.read(bytes.data(), sizeof(T));
  if (!in) throw DataError("truncated checkpoint");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  return std::bit_cast<T>(bytes);
}

void put_record(std::ostream& out, const std::string& name, const Tensor& t) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
  for (double v : t.data()) put<double>(out, v);
}

std::map<std::string, std::string> parse_kv(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

const std::string& need(const std::map<std::string, std::string>& kv, const std::string& key) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw DataError("checkpoint metadata lacks '" + key + "'");
  return it->second;
}

std::string metadata_text(const Checkpoint& c) {
  std::ostringstream os;
  const TrainConfig& t = c.config;
  const VitConfig& v = c.spec.vit;
  os << "lr=" << fmt_double(t.lr) << '\n'
     << "batch_size=" << t.batch_size << '\n'
     << "epochs=" << t.epochs << '\n'
     << "seed=" << t.seed << '\n'
     << "variant=" << to_string(t.variant) << '\n'
     << "preset=" << t.preset << '\n'
     << "channels_per_branch=" << t.channels_per_branch << '\n'
     << "crop=" << t.crop << '\n'
     << "in_channels=" << c.spec.backbone.in_channels << '\n'
     << "image_size=" << c.spec.image_size << '\n'
     << "patch_size=" << v.patch_size << '\n'
     << "dim=" << v.dim << '\n'
     << "depth=" << v.depth << '\n'
     << "heads=" << v.heads << '\n'
     << "mlp_dim=" << v.mlp_dim << '\n'
     << "dropout=" << fmt_double(v.dropout) << '\n'
     << "emb_dropout=" << fmt_double(v.emb_dropout) << '\n'
     << "num_classes=" << v.num_classes << '\n'
     << "adam_step=" << c.optimizer.step << '\n'
     << "epoch=" << c.epoch << '\n'
     << "rng_state=" << c.rng_state << '\n'
     << "classes=";
  for (std::size_t i = 0; i < c.classes.size(); ++i) os << (i ? "\t" : "") << c.classes[i];
  os << '\n';
  return os.str();
}

void require_class_coverage(const std::vector<ImageSample>& samples, std::size_t num_classes) {
  std::vector<std::size_t> counts(num_classes, 0);
  for (const ImageSample& s : samples) {
    if (s.label >= num_classes) throw IndexError("sample label " + std::to_string(s.label) + " out of range");
    ++counts[s.label];
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (counts[c] == 0) throw ContractError("class " + std::to_string(c) + " has no training items");
  }
}

template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += threads) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::vector<Tensor> eval_logits(const PdcVitModel& model, const std::vector<ImageSample>& samples,
                                std::size_t threads) {
  std::vector<Tensor> logits(samples.size());
  parallel_for(samples.size(), threads, [&](std::size_t i) {
    Rng unused(0);
    logits[i] = model.forward(samples[i].pixels, false, unused);
  });
  return logits;
}

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ParameterError("learning rate must be finite and non-negative");
  if (batch_size == 0) throw ParameterError("batch size must be at least 1");
  if (channels_per_branch == 0) throw ParameterError("channels per branch must be positive");
  try {
    model_spec(2);
  } catch (const ParameterError&) {
    throw;
  } catch (const Error& e) {
    throw ParameterError(std::string("invalid model configuration: ") + e.what());
  }
}

ModelSpec TrainConfig::model_spec(std::size_t num_classes) const {
  ModelSpec spec;
  spec.backbone.in_channels = 3;
  spec.backbone.channels_per_branch = channels_per_branch;
  spec.backbone.branches = variant;
  spec.vit = VitConfig::preset(preset, num_classes);
  spec.image_size = crop;
  spec.validate();
  return spec;
}

Checkpoint make_checkpoint(const PdcVitModel& model, const TrainConfig& config, const std::vector<std::string>& classes,
                           const AdamState& optimizer, const Rng& rng, std::size_t epoch) {
  Checkpoint c;
  c.config = config;
  c.spec = model.spec();
  c.classes = classes;
  for (const auto& [name, t] : model.parameters()) c.params.emplace_back(name, t.detach());
  for (const Tensor& m : optimizer.m) c.optimizer.m.push_back(m.detach());
  for (const Tensor& v : optimizer.v) c.optimizer.v.push_back(v.detach());
  c.optimizer.step = optimizer.step;
  std::ostringstream os;
  os << rng;
  c.rng_state = os.str();
  c.epoch = epoch;
  return c;
}

PdcVitModel model_from_checkpoint(const Checkpoint& ckpt) {
  PdcVitModel model(ckpt.spec, 0);
  model.load_parameters(ckpt.params);
  return model;
}

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
  if (!ckpt.optimizer.m.empty() &&
      (ckpt.optimizer.m.size() != ckpt.params.size() || ckpt.optimizer.v.size() != ckpt.params.size())) {
    throw ContractError("optimizer state does not align with parameters");
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, Checkpoint::kVersion);
  const std::string meta = metadata_text(ckpt);
  put<std::uint64_t>(out, meta.size());
  out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  const std::size_t records = ckpt.params.size() * (ckpt.optimizer.m.empty() ? 1 : 3);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(records));
  for (const auto& [name, t] : ckpt.params) put_record(out, "param/" + name, t);
  if (!ckpt.optimizer.m.empty()) {
    for (std::size_t i = 0; i < ckpt.params.size(); ++i) put_record(out, "adam.m/" + ckpt.params[i].first, ckpt.optimizer.m[i]);
    for (std::size_t i = 0; i < ckpt.params.size(); ++i) put_record(out, "adam.v/" + ckpt.params[i].first, ckpt.optimizer.v[i]);
  }
  if (!out) throw DataError("cannot write checkpoint " + path.string());
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw DataError("not a pdcvit checkpoint: " + path.string());
  const auto version = get<std::uint32_t>(in);
  if (version != Checkpoint::kVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  const auto meta_len = get<std::uint64_t>(in);
  if (meta_len > (1u << 24)) throw DataError("corrupt checkpoint metadata length");
  std::string meta(meta_len, '\0');
  in.read(meta.data(), static_cast<std::streamsize>(meta_len));
  if (!in) throw DataError("truncated checkpoint");
  const auto kv = parse_kv(meta);

  Checkpoint c;
  try {
    TrainConfig& t = c.config;
    t.lr = std::stod(need(kv, "lr"));
    t.batch_size = std::stoul(need(kv, "batch_size"));
    t.epochs = std::stoul(need(kv, "epochs"));
    t.seed = std::stoull(need(kv, "seed"));
    t.variant = parse_branch_selector(need(kv, "variant"));
    t.preset = need(kv, "preset");
    t.channels_per_branch = std::stoul(need(kv, "channels_per_branch"));
    t.crop = std::stoul(need(kv, "crop"));
    c.spec.backbone.in_channels = std::stoul(need(kv, "in_channels"));
    c.spec.backbone.channels_per_branch = t.channels_per_branch;
    c.spec.backbone.branches = t.variant;
    c.spec.image_size = std::stoul(need(kv, "image_size"));
    VitConfig& v = c.spec.vit;
    v.patch_size = std::stoul(need(kv, "patch_size"));
    v.dim = std::stoul(need(kv, "dim"));
    v.depth = std::stoul(need(kv, "depth"));
    v.heads = std::stoul(need(kv, "heads"));
    v.mlp_dim = std::stoul(need(kv, "mlp_dim"));
    v.dropout = std::stod(need(kv, "dropout"));
    v.emb_dropout = std::stod(need(kv, "emb_dropout"));
    v.num_classes = std::stoul(need(kv, "num_classes"));
    c.optimizer.step = std::stoll(need(kv, "adam_step"));
    c.epoch = std::stoul(need(kv, "epoch"));
    c.rng_state = need(kv, "rng_state");
    std::istringstream cls(need(kv, "classes"));
    std::string name;
    while (std::getline(cls, name, '\t')) c.classes.push_back(name);
  } catch (const std::logic_error&) {
    throw DataError("malformed checkpoint metadata in " + path.string());
  }

  const auto records = get<std::uint32_t>(in);
  std::map<std::string, Tensor> by_name;
  std::vector<std::string> param_order;
  for (std::uint32_t r = 0; r < records; ++r) {
    const auto name_len = get<std::uint32_t>(in);
    if (name_len > 4096) throw DataError("corrupt checkpoint record name");
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const auto rank = get<std::uint32_t>(in);
    if (rank > 8) throw DataError("corrupt checkpoint record rank");
    Shape shape(rank);
    for (auto& d : shape) d = get<std::uint64_t>(in);
    const std::size_t n = shape_numel(shape);
    if (n > (std::size_t{1} << 32)) throw DataError("corrupt checkpoint record size");
    std::vector<double> data(n);
    for (double& x : data) x = get<double>(in);
    if (name.rfind("param/", 0) == 0) param_order.push_back(name.substr(6));
    by_name[name] = Tensor::from_data(std::move(shape), std::move(data));
  }
  for (const std::string& name : param_order) {
    c.params.emplace_back(name, by_name.at("param/" + name));
    const auto m = by_name.find("adam.m/" + name), v = by_name.find("adam.v/" + name);
    if (m != by_name.end() && v != by_name.end()) {
      c.optimizer.m.push_back(m->second);
      c.optimizer.v.push_back(v->second);
    }
  }
  if (!c.optimizer.m.empty() && c.optimizer.m.size() != c.params.size()) {
    throw DataError("checkpoint optimizer state is incomplete");
  }
  return c;
}

TrainResult train(const std::vector<ImageSample>& train_set, const std::vector<ImageSample>& test_set,
                  const std::vector<std::string>& classes, const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  const std::size_t num_classes = classes.size();
  require_class_coverage(train_set, num_classes);

  PdcVitModel model(config.model_spec(num_classes), config.seed);
  std::vector<Tensor> params = model.parameter_tensors();
  AdamState adam = AdamState::like(params);
  const AdamOptions opts{config.lr, 0.9, 0.999, 1e-8};
  Rng shuffle_rng(config.seed + 1);
  Rng dropout_rng(config.seed + 2);

  TrainResult result;
  double best_loss = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      GradTape tape;
      TapeScope scope(tape);
      for (Tensor& p : params) p.zero_grad();
      std::vector<Tensor> rows;
      std::vector<std::size_t> labels;
      Tensor loss;
      try {
        for (std::size_t i = begin; i < end; ++i) {
          const ImageSample& s = train_set[order[i]];
          rows.push_back(reshape(model.forward(s.pixels, true, dropout_rng), {1, num_classes}));
          labels.push_back(s.label);
        }
        loss = cross_entropy(concat0(rows), labels);
      } catch (const NumericError& e) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_index) + ": " + e.what());
      }
      if (!std::isfinite(loss.item())) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_index) + ": loss = " + fmt_double(loss.item()));
      }
      tape.backward(loss);
      adam_step(params, adam, opts);
      loss_sum += loss.item() * static_cast<double>(end - begin);
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = train_set.empty() ? 0.0 : loss_sum / static_cast<double>(train_set.size());
    if (!test_set.empty()) {
      std::tie(stats.test_loss, stats.test_accuracy) = loss_and_accuracy(model, test_set, config.threads);
    }
    result.history.push_back(stats);
    if (on_epoch) on_epoch(stats);

    const double selection_loss = test_set.empty() ? stats.train_loss : stats.test_loss;
    if (selection_loss < best_loss) {
      best_loss = selection_loss;
      result.best_checkpoint = make_checkpoint(model, config, classes, adam, dropout_rng, epoch);
      if (!config.checkpoint_path.empty()) save_checkpoint(result.best_checkpoint, config.checkpoint_path + ".best");
    }
  }
  result.final_checkpoint = make_checkpoint(model, config, classes, adam, dropout_rng, config.epochs);
  if (result.history.empty()) result.best_checkpoint = result.final_checkpoint;
  if (!config.checkpoint_path.empty()) save_checkpoint(result.final_checkpoint, config.checkpoint_path);
  return result;
}

TrainResult train(const DatasetManifest& manifest, const TrainConfig& config, const EpochCallback& on_epoch) {
  const auto train_set = load_split(manifest, Split::Train, config.crop, config.threads);
  const auto test_set = load_split(manifest, Split::Test, config.crop, config.threads);
  return train(train_set, test_set, manifest.classes, config, on_epoch);
}

std::pair<double, double> loss_and_accuracy(const PdcVitModel& model, const std::vector<ImageSample>& samples,
                                            std::size_t threads) {
  if (samples.empty()) return {0.0, 0.0};
  const auto logits = eval_logits(model, samples, threads);
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::size_t label[] = {samples[i].label};
    loss += cross_entropy(reshape(logits[i], {1, logits[i].numel()}), label).item();
    correct += argmax(logits[i].data()) == samples[i].label;
  }
  const double n = static_cast<double>(samples.size());
  return {loss / n, static_cast<double>(correct) / n};
}

EvalReport report_from_confusion(const std::vector<std::vector<std::size_t>>& confusion,
                                 std::vector<std::string> classes) {
  const std::size_t c = confusion.size();
  for (const auto& r : confusion) {
    if (r.size() != c) throw DimensionError("confusion matrix must be square");
  }
  if (!classes.empty() && classes.size() != c) throw DimensionError("class names do not match confusion size");
  EvalReport rep;
  rep.classes = std::move(classes);
  rep.confusion = confusion;
  std::size_t total = 0, trace = 0;
  std::vector<std::size_t> row_sum(c, 0), col_sum(c, 0);
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      total += confusion[i][j];
      row_sum[i] += confusion[i][j];
      col_sum[j] += confusion[i][j];
    }
    trace += confusion[i][i];
  }
  rep.accuracy = total ? static_cast<double>(trace) / static_cast<double>(total) : 0.0;
  rep.fnr.resize(c);
  rep.fpr.resize(c);
  for (std::size_t k = 0; k < c; ++k) {
    const std::size_t tp = confusion[k][k];
    const std::size_t fn = row_sum[k] - tp;
    const std::size_t fp = col_sum[k] - tp;
    const std::size_t tn = total - tp - fn - fp;
    rep.fnr[k] = tp + fn ? static_cast<double>(fn) / static_cast<double>(tp + fn) : 0.0;
    rep.fpr[k] = fp + tn ? static_cast<double>(fp) / static_cast<double>(fp + tn) : 0.0;
  }
  if (c) {
    rep.mean_fnr = std::accumulate(rep.fnr.begin(), rep.fnr.end(), 0.0) / static_cast<double>(c);
    rep.mean_fpr = std::accumulate(rep.fpr.begin(), rep.fpr.end(), 0.0) / static_cast<double>(c);
  }
  return rep;
}

std::vector<std::size_t> predict(const PdcVitModel& model, const std::vector<ImageSample>& samples,
                                 std::size_t threads) {
  const auto logits = eval_logits(model, samples, threads);
  std::vector<std::size_t> out(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) out[i] = argmax(logits[i].data());
  return out;
}

EvalReport evaluate(const PdcVitModel& model, const std::vector<ImageSample>& samples,
                    const std::vector<std::string>& classes, std::size_t threads) {
  const std::size_t c = model.spec().vit.num_classes;
  if (classes.size() != c) throw ContractError("model has " + std::to_string(c) + " classes, data has " +
                                               std::to_string(classes.size()));
  std::vector<std::vector<std::size_t>> confusion(c, std::vector<std::size_t>(c, 0));
  const auto pred = predict(model, samples, threads);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].label >= c) throw IndexError("sample label out of range");
    ++confusion[samples[i].label][pred[i]];
  }
  return report_from_confusion(confusion, classes);
}

EvalReport evaluate(const Checkpoint& ckpt, const DatasetManifest& manifest, std::size_t threads) {
  if (ckpt.classes != manifest.classes) throw ContractError("checkpoint classes do not match the dataset classes");
  const PdcVitModel model = model_from_checkpoint(ckpt);
  const auto test_set = load_split(manifest, Split::Test, ckpt.spec.image_size, threads);
  return evaluate(model, test_set, manifest.classes, threads);
}

void export_features(const Checkpoint& ckpt, const DatasetManifest& manifest, const fs::path& out, std::size_t threads) {
  const PdcVitModel model = model_from_checkpoint(ckpt);
  const auto test_set = load_split(manifest, Split::Test, ckpt.spec.image_size, threads);
  std::vector<Tensor> feats(test_set.size());
  parallel_for(test_set.size(), threads, [&](std::size_t i) { feats[i] = model.features(test_set[i].pixels); });
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  std::ofstream os(out);
  if (!os) throw DataError("cannot write features to " + out.string());
  os << "label";
  for (std::size_t j = 0; j < ckpt.spec.vit.dim; ++j) os << ",f" << j;
  os << '\n';
  for (std::size_t i = 0; i < test_set.size(); ++i) {
    os << test_set[i].label;
    for (double v : feats[i].data()) os << ',' << fmt_double(v);
    os << '\n';
  }
  if (!os) throw DataError("cannot write features to " + out.string());
}

std::string loss_history_csv(const std::vector<EpochStats>& history) {
  std::string s = "epoch,train_loss,test_loss,test_accuracy\n";
  for (const EpochStats& e : history) {
    s += std::to_string(e.epoch) + "," + fmt_double(e.train_loss) + "," + fmt_double(e.test_loss) + "," +
         fmt_double(e.test_accuracy) + "\n";
  }
  return s;
}

std::string EvalReport::to_text() const {
  std::ostringstream os;
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f", accuracy);
  std::size_t total = 0;
  for (const auto& r : confusion) total += std::accumulate(r.begin(), r.end(), std::size_t{0});
  os << "accuracy: " << buf << " (" << total << " items)\n";
  os << "confusion (rows = true, cols = predicted):\n";
  for (std::size_t i = 0; i < confusion.size(); ++i) {
    os << "  " << (i < classes.size() ? classes[i] : std::to_string(i)) << ":";
    for (std::size_t v : confusion[i]) os << ' ' << v;
    os << '\n';
  }
  os << "per-class FNR / FPR:\n";
  for (std::size_t i = 0; i < fnr.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.4f / %.4f", fnr[i], fpr[i]);
    os << "  " << (i < classes.size() ? classes[i] : std::to_string(i)) << ": " << buf << '\n';
  }
  std::snprintf(buf, sizeof(buf), "%.4f / %.4f", mean_fnr, mean_fpr);
  os << "mean FNR / FPR: " << buf << '\n';
  return os.str();
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["accuracy"] = accuracy;
  j["classes"] = classes;
  j["confusion"] = confusion;
  j["fnr"] = fnr;
  j["fpr"] = fpr;
  j["mean_fnr"] = mean_fnr;
  j["mean_fpr"] = mean_fpr;
  nlohmann::json hist = nlohmann::json::array();
  for (const EpochStats& e : history) {
    hist.push_back({{"epoch", e.epoch},
                    {"train_loss", e.train_loss},
                    {"test_loss", e.test_loss},
                    {"test_accuracy", e.test_accuracy}});
  }
  j["history"] = hist;
  return j.dump(2);
}

std::vector<AblationRow> ablation_run(const std::vector<ImageSample>& train_set,
                                      const std::vector<ImageSample>& test_set,
                                      const std::vector<std::string>& classes, const TrainConfig& base,
                                      const EpochCallback& on_epoch) {
  std::vector<AblationRow> rows;
  for (BranchSelector v : {BranchSelector::Radial, BranchSelector::Angular, BranchSelector::Both}) {
    TrainConfig cfg = base;
    cfg.variant = v;
    if (!base.checkpoint_path.empty()) cfg.checkpoint_path = base.checkpoint_path + "." + to_string(v);
    TrainResult tr = train(train_set, test_set, classes, cfg, on_epoch);
    const PdcVitModel model = model_from_checkpoint(tr.final_checkpoint);
    EvalReport rep = evaluate(model, test_set, classes, base.threads);
    rep.history = tr.history;
    rows.push_back({v, model.parameter_count(), std::move(rep)});
  }
  return rows;
}

std::vector<AblationRow> ablation_run(const DatasetManifest& manifest, const TrainConfig& base,
                                      const EpochCallback& on_epoch) {
  const auto train_set = load_split(manifest, Split::Train, base.crop, base.threads);
  const auto test_set = load_split(manifest, Split::Test, base.crop, base.threads);
  return ablation_run(train_set, test_set, manifest.classes, base, on_epoch);
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::string s = "variant,parameters,accuracy,mean_fnr,mean_fpr\n";
  for (const AblationRow& r : rows) {
    s += to_string(r.variant) + "," + std::to_string(r.parameter_count) + "," + fmt_double(r.report.accuracy) + "," +
         fmt_double(r.report.mean_fnr) + "," + fmt_double(r.report.mean_fpr) + "\n";
  }
  return s;
}

}  // namespace pdcvit
