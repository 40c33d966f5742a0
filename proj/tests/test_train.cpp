#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "pdcvit/errors.hpp"
#include "pdcvit/train.hpp"
#include "test_util.hpp"

using namespace pdcvit;
namespace fs = std::filesystem;

namespace {

// Two classes told apart by the sign of a fixed high-frequency pattern laid
// over random smooth brightness.
std::vector<ImageSample> toy_set(std::size_t per_class, std::size_t size, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> level(0.3, 0.7);
  std::vector<ImageSample> out;
  for (std::size_t i = 0; i < per_class; ++i) {
    for (std::size_t label = 0; label < 2; ++label) {
      const double base = level(rng);
      std::vector<double> px(3 * size * size);
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < size; ++y)
          for (std::size_t x = 0; x < size; ++x) {
            const double pattern = ((x + y + c) % 2 == 0 ? 1.0 : -1.0) * (label == 0 ? 1.0 : -1.0);
            px[(c * size + y) * size + x] = base + 0.1 * pattern;
          }
      out.push_back({Tensor::from_data({3, size, size}, std::move(px)), label});
    }
  }
  return out;
}

TrainConfig toy_config() {
  TrainConfig cfg;
  cfg.lr = 1e-3;
  cfg.batch_size = 4;
  cfg.epochs = 3;
  cfg.channels_per_branch = 4;
  cfg.crop = 16;
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("metrics from a hand confusion matrix") {
  const EvalReport r = report_from_confusion({{8, 2}, {3, 7}});
  CHECK(r.accuracy == 0.75);
  CHECK(r.fnr == std::vector<double>{0.2, 0.3});
  CHECK(r.fpr == std::vector<double>{0.3, 0.2});
  CHECK(r.mean_fnr == 0.25);
  CHECK(r.mean_fpr == 0.25);

  const auto j = nlohmann::json::parse(r.to_json());
  CHECK(j["accuracy"].get<double>() == 0.75);
  CHECK(j["confusion"][1][0].get<int>() == 3);
  CHECK(j["fnr"][1].get<double>() == 0.3);
  CHECK(r.to_text().find("0.7500") != std::string::npos);
}

TEST_CASE("degenerate predictors") {
  const EvalReport perfect = report_from_confusion({{10, 0, 0}, {0, 10, 0}, {0, 0, 10}});
  CHECK(perfect.accuracy == 1.0);
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(perfect.fnr[c] == 0.0);
    CHECK(perfect.fpr[c] == 0.0);
  }
  const EvalReport zero = report_from_confusion({{5, 0}, {5, 0}});
  CHECK(zero.accuracy == 0.5);
  CHECK(zero.fnr == std::vector<double>{0.0, 1.0});
  CHECK(zero.fpr == std::vector<double>{1.0, 0.0});
  // A class with no test items has an empty denominator.
  const EvalReport empty = report_from_confusion({{4, 0}, {0, 0}});
  CHECK(empty.fnr[1] == 0.0);
  CHECK_THROWS(report_from_confusion({{1, 2}}));
}

TEST_CASE("training determinism and null updates") {
  const auto train_set = toy_set(4, 16, 1), test_set = toy_set(2, 16, 2);
  const std::vector<std::string> classes{"a", "b"};
  const TrainConfig cfg = toy_config();
  const TrainResult a = train(train_set, test_set, classes, cfg);
  const TrainResult b = train(train_set, test_set, classes, cfg);
  CHECK(a.history == b.history);
  CHECK(loss_history_csv(a.history) == loss_history_csv(b.history));
  REQUIRE(a.final_checkpoint.params.size() == b.final_checkpoint.params.size());
  for (std::size_t i = 0; i < a.final_checkpoint.params.size(); ++i) {
    const auto& x = a.final_checkpoint.params[i].second;
    const auto& y = b.final_checkpoint.params[i].second;
    CHECK(std::equal(x.data().begin(), x.data().end(), y.data().begin()));
  }

  TrainConfig still = cfg;
  still.lr = 0.0;
  const TrainResult z = train(train_set, test_set, classes, still);
  const PdcVitModel init(cfg.model_spec(2), cfg.seed);
  for (std::size_t i = 0; i < init.parameters().size(); ++i) {
    const auto& x = init.parameters()[i].second;
    const auto& y = z.final_checkpoint.params[i].second;
    CHECK(std::equal(x.data().begin(), x.data().end(), y.data().begin()));
  }

  const std::string csv = loss_history_csv(a.history);
  CHECK(csv.rfind("epoch,train_loss,test_loss,test_accuracy\n", 0) == 0);
}

TEST_CASE("loss decreases on separable data") {
  const auto train_set = toy_set(8, 16, 3), test_set = toy_set(2, 16, 4);
  TrainConfig cfg = toy_config();
  cfg.epochs = 4;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    cfg.seed = seed;
    const TrainResult r = train(train_set, test_set, {"a", "b"}, cfg);
    for (std::size_t e = 1; e < r.history.size(); ++e) CHECK(r.history[e].train_loss < r.history[e - 1].train_loss);
  }
}

TEST_CASE("checkpoint round trip") {
  const test::TempDir dir;
  const SynthSpec spec = SynthSpec::from_seed(3, 10, 16, 0.05, 7);
  const DatasetManifest m = gen_synthetic(spec, dir.path / "data");
  TrainConfig cfg = toy_config();
  cfg.epochs = 2;
  cfg.checkpoint_path = (dir.path / "model.ckpt").string();
  const TrainResult r = train(m, cfg);
  CHECK(fs::exists(dir.path / "model.ckpt"));
  CHECK(fs::exists(dir.path / "model.ckpt.best"));

  const Checkpoint back = load_checkpoint(dir.path / "model.ckpt");
  CHECK(back.classes == m.classes);
  CHECK(back.epoch == r.final_checkpoint.epoch);
  CHECK(back.rng_state == r.final_checkpoint.rng_state);
  CHECK(back.config.lr == cfg.lr);
  CHECK(back.optimizer.step == r.final_checkpoint.optimizer.step);
  REQUIRE(back.params.size() == r.final_checkpoint.params.size());
  for (std::size_t i = 0; i < back.params.size(); ++i) {
    CHECK(back.params[i].first == r.final_checkpoint.params[i].first);
    const auto& x = back.params[i].second;
    const auto& y = r.final_checkpoint.params[i].second;
    CHECK(std::equal(x.data().begin(), x.data().end(), y.data().begin()));
    const auto& mx = back.optimizer.m[i];
    const auto& my = r.final_checkpoint.optimizer.m[i];
    CHECK(std::equal(mx.data().begin(), mx.data().end(), my.data().begin()));
  }

  const EvalReport e1 = evaluate(r.final_checkpoint, m);
  const EvalReport e2 = evaluate(back, m, 3);
  CHECK(e1.to_json() == e2.to_json());
  CHECK(e1.confusion == e2.confusion);

  // Save -> load -> save is byte stable.
  save_checkpoint(back, dir.path / "again.ckpt");
  CHECK(slurp(dir.path / "again.ckpt") == slurp(dir.path / "model.ckpt"));

  std::ofstream(dir.path / "bad.ckpt") << "PDCVITCK garbage";
  CHECK_THROWS_AS(load_checkpoint(dir.path / "bad.ckpt"), DataError);

  DatasetManifest other = m;
  other.classes[0] = "renamed";
  CHECK_THROWS_AS(evaluate(back, other), ContractError);
}

TEST_CASE("feature export") {
  const test::TempDir dir;
  const DatasetManifest m = gen_synthetic(SynthSpec::from_seed(2, 10, 16, 0.05, 3), dir.path / "data");
  TrainConfig cfg = toy_config();
  cfg.epochs = 1;
  const TrainResult r = train(m, cfg);
  export_features(r.final_checkpoint, m, dir.path / "f.csv");
  std::ifstream in(dir.path / "f.csv");
  std::string header, line;
  std::getline(in, header);
  std::string expect = "label";
  for (int i = 0; i < 64; ++i) expect += ",f" + std::to_string(i);
  CHECK(header == expect);
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    CHECK(std::count(line.begin(), line.end(), ',') == 64);
    ++rows;
  }
  CHECK(rows == m.indices(Split::Test).size());

  const PdcVitModel model = model_from_checkpoint(r.final_checkpoint);
  const auto samples = load_split(m, Split::Test, 16);
  const Tensor f1 = model.features(samples[0].pixels);
  const Tensor f2 = model.features(samples[0].pixels.clone());
  CHECK(std::equal(f1.data().begin(), f1.data().end(), f2.data().begin()));
}

TEST_CASE("ablation table") {
  const auto train_set = toy_set(2, 16, 5), test_set = toy_set(1, 16, 6);
  TrainConfig cfg = toy_config();
  cfg.epochs = 1;
  const auto rows = ablation_run(train_set, test_set, {"a", "b"}, cfg);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].variant == BranchSelector::Radial);
  CHECK(rows[1].variant == BranchSelector::Angular);
  CHECK(rows[2].variant == BranchSelector::Both);
  CHECK(rows[2].parameter_count > rows[0].parameter_count);
  CHECK(rows[2].parameter_count > rows[1].parameter_count);
  const std::string table = ablation_table(rows);
  CHECK(std::count(table.begin(), table.end(), '\n') == 4);
  CHECK(table.find("rpdc,") != std::string::npos);
  CHECK(table.find("apdc,") != std::string::npos);
  CHECK(table.find("\npdc,") != std::string::npos);
}

TEST_CASE("config validation") {
  TrainConfig cfg;
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ParameterError);
  cfg = TrainConfig{};
  cfg.lr = -1;
  CHECK_THROWS_AS(cfg.validate(), ParameterError);
  cfg = TrainConfig{};
  cfg.crop = 30;
  CHECK_THROWS_AS(cfg.validate(), ParameterError);
}
