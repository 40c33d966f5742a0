#include "cli.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "pdcvit/data.hpp"
#include "pdcvit/errors.hpp"
#include "pdcvit/options.hpp"
#include "pdcvit/train.hpp"
#include "pdcvit/verify.hpp"

namespace fs = std::filesystem;

namespace pdcvit::cli {

namespace {

struct Command {
  CLI::App* app = nullptr;
  Options defaults;
  std::map<std::string, std::string> raw;
  std::vector<std::pair<std::string, CLI::Option*>> flags;

  void option(const std::string& key, const std::string& help, const std::string& fallback = {}) {
    flags.emplace_back(key, app->add_option("--" + key, raw[key], help));
    if (!fallback.empty()) defaults.set(key, fallback);
  }

  // built-in < --config file < explicit flags
  Options resolve(const std::string& config_path) const {
    Options given;
    for (const auto& [key, opt] : flags) {
      if (opt->count() > 0) given.set(key, raw.at(key));
    }
    const Options file = config_path.empty() ? Options{} : load_config_file(config_path);
    return layer_options(defaults, file, given);
  }
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << text;
  if (!os) throw DataError("cannot write " + path.string());
}

// manifest.tsv when present, otherwise scan + split with the derived seed.
DatasetManifest open_dataset(const Options& o, std::ostream& err) {
  const fs::path root = o.get_string("data");
  if (fs::exists(root / "manifest.tsv")) return load_manifest(root / "manifest.tsv");
  auto result = split(scan_dataset(root), static_cast<std::uint64_t>(o.get_int("seed")) + 2000);
  for (const std::string& w : result.warnings) err << "warning: " << w << '\n';
  return result.manifest;
}

// "auto" picks the largest multiple of 4 * patch (one whole patch on the
// 4x downsampled map) that fits the first image, capped at 224 or one patch
// when a patch is larger than that.
std::size_t resolve_crop(const Options& o, const DatasetManifest& m) {
  const std::string crop = o.get_string("crop");
  if (crop != "auto") return o.get_size("crop");
  const std::size_t step = 4 * VitConfig::preset(o.get_string("preset"), 2).patch_size;
  const std::size_t cap = std::max<std::size_t>(224, step);
  if (m.items.empty()) return cap - cap % step;
  const Image8 first = read_image(m.resolve(m.items.front()));
  const std::size_t side = std::min({first.width, first.height, cap});
  if (side < step) {
    throw DataError("images of " + std::to_string(first.width) + "x" + std::to_string(first.height) +
                    " are smaller than one " + std::to_string(step) + "-pixel patch of preset " +
                    o.get_string("preset"));
  }
  return side - side % step;
}

// Flag-only settings, checked before any data is touched.
TrainConfig training_flags(const Options& o) {
  TrainConfig cfg;
  cfg.lr = o.get_double("lr");
  cfg.batch_size = o.get_size("batch-size");
  cfg.epochs = o.get_size("epochs");
  cfg.seed = static_cast<std::uint64_t>(o.get_int("seed"));
  cfg.variant = parse_branch_selector(o.get_string("variant"));
  cfg.preset = o.get_string("preset");
  cfg.channels_per_branch = o.get_size("channels");
  cfg.threads = std::max<std::size_t>(1, o.get_size("threads"));
  if (o.get_string("crop") != "auto") cfg.crop = o.get_size("crop");
  cfg.validate();
  return cfg;
}

TrainConfig train_config(const Options& o, const DatasetManifest& m) {
  TrainConfig cfg = training_flags(o);
  cfg.crop = resolve_crop(o, m);
  cfg.validate();
  return cfg;
}

EpochCallback progress(std::ostream& out, const std::string& tag = {}) {
  return [&out, tag](const EpochStats& e) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%sepoch %zu  train_loss %.5f  test_loss %.5f  test_acc %.4f\n", tag.c_str(),
                  e.epoch, e.train_loss, e.test_loss, e.test_accuracy);
    out << buf << std::flush;
  };
}

void add_training_flags(Command& c) {
  c.option("data", "dataset root (class subdirectories or manifest.tsv)");
  c.option("preset", "ViT preset: desk | full", "desk");
  c.option("variant", "backbone variant: pdc | apdc | rpdc", "pdc");
  c.option("lr", "Adam learning rate", "3e-05");
  c.option("batch-size", "minibatch size", "32");
  c.option("epochs", "training epochs", "20");
  c.option("crop", "center-crop size, or auto", "auto");
  c.option("channels", "PDC channels per branch", "16");
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"PDC-ViT: pixel difference convolution + vision transformer toolkit"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "flat key = value config file");

  const std::string hw = std::to_string(std::max(1u, std::thread::hardware_concurrency()));
  std::map<std::string, std::unique_ptr<Command>> commands;
  auto command = [&](const std::string& name, const std::string& help) -> Command& {
    auto c = std::make_unique<Command>();
    c->app = app.add_subcommand(name, help);
    c->app->add_option("--config", config_path, "flat key = value config file");
    c->option("seed", "master random seed", "7");
    c->option("out", "output directory", ".");
    c->option("threads", "worker threads for decoding and evaluation", hw);
    Command& ref = *c;
    commands[name] = std::move(c);
    return ref;
  };

  Command& gen = command("gen-synth", "generate the synthetic fingerprint dataset");
  gen.option("classes", "number of classes", "8");
  gen.option("per-class", "images per class", "100");
  gen.option("size", "image side length", "32");
  gen.option("amp", "fingerprint amplitude in [0, 0.1]", "0.05");

  Command& tr = command("train", "train a PDC-ViT model");
  add_training_flags(tr);

  Command& ev = command("eval", "evaluate a checkpoint on the test split");
  ev.option("checkpoint", "checkpoint file");
  ev.option("data", "dataset root");

  Command& ab = command("ablate", "train and compare apdc, rpdc and pdc");
  add_training_flags(ab);

  Command& ver = command("verify", "run the invariant suites");
  ver.option("trials", "random PDC equivalence trials per variant", "1000");
  ver.option("grad-draws", "random draws per gradient check", "3");
  bool inject_fault = false;
  ver.app->add_flag("--inject-fault", inject_fault)->group("");

  Command& be = command("bench", "time direct vs converted PDC");
  be.option("sizes", "comma-separated CxHxW list", "3x32x32,16x32x32,16x64x64");
  be.option("trials", "timed repetitions per case", "5");

  Command& ex = command("export-features", "write class-token features of the test split");
  ex.option("checkpoint", "checkpoint file");
  ex.option("data", "dataset root");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    for (const auto& [name, cmd] : commands) {
      if (!cmd->app->parsed()) continue;
      const Options o = cmd->resolve(config_path);
      const fs::path out_dir = o.get_string("out");
      const auto threads = std::max<std::size_t>(1, o.get_size("threads"));
      const auto seed = static_cast<std::uint64_t>(o.get_int("seed"));

      if (name == "gen-synth") {
        const auto spec = SynthSpec::from_seed(o.get_size("classes"), o.get_size("per-class"), o.get_size("size"),
                                               o.get_double("amp"), seed);
        const DatasetManifest m = gen_synthetic(spec, out_dir);
        out << "wrote " << m.items.size() << " images in " << m.num_classes() << " classes to " << out_dir.string()
            << " (manifest.tsv)\n";
      } else if (name == "train") {
        training_flags(o);
        const DatasetManifest m = open_dataset(o, err);
        TrainConfig cfg = train_config(o, m);
        cfg.checkpoint_path = (out_dir / "model.ckpt").string();
        const TrainResult r = train(m, cfg, progress(out));
        write_text(out_dir / "loss.csv", loss_history_csv(r.history));
        EvalReport rep = evaluate(r.final_checkpoint, m, threads);
        rep.history = r.history;
        write_text(out_dir / "report.txt", rep.to_text());
        write_text(out_dir / "report.json", rep.to_json());
        out << rep.to_text();
      } else if (name == "eval") {
        const DatasetManifest m = open_dataset(o, err);
        const Checkpoint ckpt = load_checkpoint(o.get_string("checkpoint"));
        const EvalReport rep = evaluate(ckpt, m, threads);
        write_text(out_dir / "report.txt", rep.to_text());
        write_text(out_dir / "report.json", rep.to_json());
        out << rep.to_text();
      } else if (name == "ablate") {
        training_flags(o);
        const DatasetManifest m = open_dataset(o, err);
        const TrainConfig cfg = train_config(o, m);
        const auto rows = ablation_run(m, cfg, progress(out));
        for (const AblationRow& row : rows) {
          write_text(out_dir / ("report_" + to_string(row.variant) + ".json"), row.report.to_json());
          write_text(out_dir / ("loss_" + to_string(row.variant) + ".csv"), loss_history_csv(row.report.history));
        }
        const std::string table = ablation_table(rows);
        write_text(out_dir / "ablation.csv", table);
        out << table;
      } else if (name == "verify") {
        VerifyOptions vo;
        vo.pdc_trials = o.get_size("trials");
        vo.grad_draws = o.get_size("grad-draws");
        vo.seed = seed;
        vo.converted_fault = inject_fault ? 1e-6 : 0.0;
        bool ok = true;
        for (const SuiteResult& s : run_verify(vo)) {
          out << (s.passed ? "PASS " : "FAIL ") << s.name << ": " << s.detail << '\n';
          ok = ok && s.passed;
        }
        if (!ok) {
          err << "verify: one or more suites failed\n";
          return 1;
        }
      } else if (name == "bench") {
        const auto rows = run_bench(parse_bench_sizes(o.get_string("sizes")), o.get_size("trials"), seed);
        const std::string table = bench_table(rows);
        write_text(out_dir / "bench.csv", table);
        out << table;
      } else if (name == "export-features") {
        const DatasetManifest m = open_dataset(o, err);
        const Checkpoint ckpt = load_checkpoint(o.get_string("checkpoint"));
        export_features(ckpt, m, out_dir / "features.csv", threads);
        out << "wrote " << (out_dir / "features.csv").string() << '\n';
      }
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const ParameterError& e) {
    err << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace pdcvit::cli
