#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "doctest.h"
#include "pdcvit/options.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = 0;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "pdcvit");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = pdcvit::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

std::size_t count_pngs(const fs::path& root) {
  std::size_t n = 0;
  for (const auto& e : fs::recursive_directory_iterator(root)) n += e.path().extension() == ".png";
  return n;
}

}  // namespace

TEST_CASE("config text parsing and layering") {
  using namespace pdcvit;
  const Options file = parse_config_text("# comment\nbatch_size = 8\n\nvariant = \"apdc\"  # trailing\n");
  CHECK(file.get_size("batch-size") == 8);
  CHECK(file.get_string("variant") == "apdc");
  CHECK_THROWS_AS(parse_config_text("no equals here\n"), UsageError);

  Options defaults, flags;
  defaults.set("a", "1");
  defaults.set("b", "1");
  defaults.set("c", "1");
  Options cfg;
  cfg.set("b", "2");
  cfg.set("c", "2");
  flags.set("c", "3");
  const Options merged = layer_options(defaults, cfg, flags);
  CHECK(merged.get_int("a") == 1);
  CHECK(merged.get_int("b") == 2);
  CHECK(merged.get_int("c") == 3);
  CHECK_THROWS_AS(merged.get_int("missing"), UsageError);
  Options bad;
  bad.set("n", "12x");
  CHECK_THROWS_AS(bad.get_int("n"), UsageError);
  CHECK_THROWS_AS(bad.get_double("n"), UsageError);
}

TEST_CASE("gen-synth delegation") {
  const test::TempDir dir;
  const Run r = run({"gen-synth", "--classes", "4", "--per-class", "50", "--size", "32", "--amp", "0.05", "--seed", "7",
                     "--out", dir.path.string()});
  CHECK(r.code == 0);
  CHECK(count_pngs(dir.path) == 200);
  CHECK(fs::exists(dir.path / "manifest.tsv"));
}

TEST_CASE("three-way override through the command line") {
  const test::TempDir dir;
  // defaults: 8 classes x 100; the file lowers both; the flag wins on per-class
  std::ofstream(dir.path / "cfg.txt") << "classes = 3\nper_class = 4\nsize = 16\n";
  const Run r = run({"gen-synth", "--config", (dir.path / "cfg.txt").string(), "--per-class", "5", "--out",
                     (dir.path / "d").string()});
  CHECK(r.code == 0);
  CHECK(count_pngs(dir.path / "d") == 15);

  const Run global = run({"--config", (dir.path / "cfg.txt").string(), "gen-synth", "--out", (dir.path / "e").string()});
  CHECK(global.code == 0);
  CHECK(count_pngs(dir.path / "e") == 12);
}

TEST_CASE("exit codes") {
  const test::TempDir dir;
  CHECK(run({}).code == 2);
  CHECK(run({"nonsense"}).code == 2);
  CHECK(run({"gen-synth", "--bogus"}).code == 2);
  CHECK(run({"gen-synth", "--classes", "two", "--out", dir.path.string()}).code == 2);
  CHECK(run({"gen-synth", "--amp", "0.5", "--out", dir.path.string()}).code == 2);
  CHECK(run({"train", "--variant", "xpdc", "--data", dir.path.string()}).code == 2);
  CHECK(run({"train"}).code == 2);
  CHECK(run({"eval", "--checkpoint", (dir.path / "none.ckpt").string(), "--data", (dir.path / "none").string()}).code == 1);
  CHECK(run({"gen-synth", "--config", (dir.path / "missing.cfg").string()}).code == 2);
  CHECK(run({"--help"}).code == 0);
}

TEST_CASE("verify and fault injection") {
  const Run ok = run({"verify", "--trials", "100", "--grad-draws", "1"});
  CHECK(ok.code == 0);
  CHECK(ok.out.find("max |direct-converted|") != std::string::npos);
  CHECK(ok.out.find("FAIL") == std::string::npos);

  const Run bad = run({"verify", "--trials", "20", "--grad-draws", "1", "--inject-fault"});
  CHECK(bad.code != 0);
  CHECK(bad.out.find("FAIL pdc-equivalence") != std::string::npos);
}

TEST_CASE("bench table") {
  const test::TempDir dir;
  const Run r = run({"bench", "--sizes", "2x12x12,3x10x14", "--trials", "2", "--out", dir.path.string()});
  CHECK(r.code == 0);
  const std::string csv = slurp(dir.path / "bench.csv");
  CHECK(count_lines(csv) == 1 + 2 * 2);
  CHECK(run({"bench", "--sizes", "3by4", "--out", dir.path.string()}).code == 2);
}

TEST_CASE("train, eval, export and ablate end to end") {
  const test::TempDir dir;
  const std::string data = (dir.path / "data").string();
  REQUIRE(run({"gen-synth", "--classes", "2", "--per-class", "6", "--size", "16", "--out", data}).code == 0);

  const std::vector<std::string> common{"--data", data, "--preset", "desk", "--variant", "pdc", "--seed", "7",
                                        "--epochs", "2", "--batch-size", "4", "--channels", "4", "--lr", "1e-3"};
  auto with = [&](std::vector<std::string> head, const std::string& out) {
    head.insert(head.end(), common.begin(), common.end());
    head.push_back("--out");
    head.push_back(out);
    return head;
  };
  const fs::path a = dir.path / "a", b = dir.path / "b";
  REQUIRE(run(with({"train"}, a.string())).code == 0);
  REQUIRE(run(with({"train"}, b.string())).code == 0);
  CHECK(slurp(a / "loss.csv") == slurp(b / "loss.csv"));
  CHECK(count_lines(slurp(a / "loss.csv")) == 3);
  for (const char* f : {"model.ckpt", "model.ckpt.best", "report.txt", "report.json"}) CHECK(fs::exists(a / f));

  const Run ev = run({"eval", "--checkpoint", (a / "model.ckpt").string(), "--data", data, "--out",
                      (dir.path / "ev").string()});
  CHECK(ev.code == 0);
  CHECK(slurp(dir.path / "ev" / "report.txt") == slurp(a / "report.txt"));

  const Run ex = run({"export-features", "--checkpoint", (a / "model.ckpt").string(), "--data", data, "--out",
                      (dir.path / "ex").string()});
  CHECK(ex.code == 0);
  // one test item per class at six images per class
  CHECK(count_lines(slurp(dir.path / "ex" / "features.csv")) == 1 + 2);

  const Run ab = run(with({"ablate"}, (dir.path / "ab").string()));
  CHECK(ab.code == 0);
  CHECK(count_lines(slurp(dir.path / "ab" / "ablation.csv")) == 4);
}
