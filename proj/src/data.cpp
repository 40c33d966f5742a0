#include "pdcvit/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include "pdcvit/errors.hpp"

namespace fs = std::filesystem;

namespace pdcvit {

namespace {

constexpr const char* kManifestMagic = "# pdcvit manifest v1";
constexpr double kTestFraction = 0.2;

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, '\t')) out.push_back(cur);
  return out;
}

// Bilinear upsampling of a (g+1) x (g+1) grid of random levels.
std::vector<double> smooth_field(std::size_t size, std::size_t grid, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> level(0.2, 0.8);
  std::vector<double> ctrl((grid + 1) * (grid + 1));
  for (double& v : ctrl) v = level(rng);
  std::vector<double> out(size * size);
  const double scale = static_cast<double>(grid) / static_cast<double>(size - 1 > 0 ? size - 1 : 1);
  for (std::size_t y = 0; y < size; ++y) {
    const double fy = static_cast<double>(y) * scale;
    const auto y0 = std::min(static_cast<std::size_t>(fy), grid - 1);
    const double ty = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < size; ++x) {
      const double fx = static_cast<double>(x) * scale;
      const auto x0 = std::min(static_cast<std::size_t>(fx), grid - 1);
      const double tx = fx - static_cast<double>(x0);
      const double a = ctrl[y0 * (grid + 1) + x0], b = ctrl[y0 * (grid + 1) + x0 + 1];
      const double c = ctrl[(y0 + 1) * (grid + 1) + x0], d = ctrl[(y0 + 1) * (grid + 1) + x0 + 1];
      out[y * size + x] = (1 - ty) * ((1 - tx) * a + tx * b) + ty * ((1 - tx) * c + tx * d);
    }
  }
  return out;
}

}  // namespace

std::string to_string(Split s) {
  switch (s) {
    case Split::Train:
      return "train";
    case Split::Validation:
      return "val";
    case Split::Test:
      return "test";
    case Split::Unassigned:
      break;
  }
  return "none";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Validation;
  if (s == "test") return Split::Test;
  if (s == "none") return Split::Unassigned;
  throw DataError("unknown split '" + s + "'");
}

std::vector<std::size_t> DatasetManifest::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].split == s) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> DatasetManifest::class_counts(Split s) const {
  std::vector<std::size_t> counts(classes.size(), 0);
  for (const ManifestItem& it : items) {
    if (it.split == s) ++counts.at(it.label);
  }
  return counts;
}

bool operator==(const DatasetManifest& a, const DatasetManifest& b) {
  return a.root == b.root && a.classes == b.classes && a.items == b.items && a.seed == b.seed;
}

DatasetManifest scan_dataset(const fs::path& root) {
  if (!fs::is_directory(root)) throw DataError("dataset root is not a directory: " + root.string());
  DatasetManifest m;
  m.root = root;
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw DataError("dataset root has no class directories: " + root.string());
  std::vector<std::string> empty;
  for (const fs::path& dir : dirs) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.is_regular_file() && is_supported_image(e.path())) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    const std::string name = dir.filename().string();
    if (files.empty()) {
      empty.push_back(name);
      continue;
    }
    const std::size_t label = m.classes.size();
    m.classes.push_back(name);
    for (const fs::path& f : files) {
      m.items.push_back({(fs::path(name) / f.filename()).generic_string(), label, Split::Unassigned});
    }
  }
  if (!empty.empty()) {
    std::string msg = "class directories without images:";
    for (const std::string& n : empty) msg += " " + n;
    throw DataError(msg);
  }
  return m;
}

SplitResult split(const DatasetManifest& manifest, std::uint64_t seed, double holdout_fraction) {
  if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) throw ParameterError("holdout fraction must be in [0, 1)");
  SplitResult result{manifest, {}};
  result.manifest.seed = seed;
  std::mt19937_64 rng(seed);
  for (std::size_t c = 0; c < manifest.num_classes(); ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < manifest.items.size(); ++i) {
      if (manifest.items[i].label == c) members.push_back(i);
    }
    if (members.size() < 5) {
      result.warnings.push_back("class '" + manifest.classes[c] + "' has only " + std::to_string(members.size()) +
                                " items");
    }
    std::shuffle(members.begin(), members.end(), rng);
    const auto n = members.size();
    const std::size_t n_test =
        std::min(n, std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(kTestFraction * static_cast<double>(n)))));
    const std::size_t n_val =
        static_cast<std::size_t>(std::lround(holdout_fraction * static_cast<double>(n - n_test)));
    for (std::size_t k = 0; k < n; ++k) {
      Split s = Split::Train;
      if (k < n_test) {
        s = Split::Test;
      } else if (k < n_test + n_val) {
        s = Split::Validation;
      }
      result.manifest.items[members[k]].split = s;
    }
  }
  return result;
}

void save_manifest(const DatasetManifest& manifest, const fs::path& file) {
  std::ofstream out(file);
  if (!out) throw DataError("cannot write manifest " + file.string());
  out << kManifestMagic << '\n' << "seed\t" << manifest.seed << '\n' << "classes";
  for (const std::string& c : manifest.classes) out << '\t' << c;
  out << '\n';
  for (const ManifestItem& it : manifest.items) out << it.path << '\t' << it.label << '\t' << to_string(it.split) << '\n';
  if (!out) throw DataError("cannot write manifest " + file.string());
}

DatasetManifest load_manifest(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw DataError("cannot open manifest " + file.string());
  std::string line;
  if (!std::getline(in, line) || line != kManifestMagic) throw DataError("not a pdcvit manifest: " + file.string());
  DatasetManifest m;
  m.root = file.parent_path();
  std::size_t lineno = 1;
  try {
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      const auto f = split_tabs(line);
      if (f[0] == "seed" && f.size() == 2) {
        m.seed = std::stoull(f[1]);
      } else if (f[0] == "classes") {
        m.classes.assign(f.begin() + 1, f.end());
      } else if (f.size() == 3) {
        const std::size_t label = std::stoul(f[1]);
        if (label >= m.classes.size()) throw DataError("class index out of range");
        m.items.push_back({f[0], label, parse_split(f[2])});
      } else {
        throw DataError("unexpected field count");
      }
    }
  } catch (const std::logic_error&) {
    throw DataError("malformed manifest " + file.string() + " at line " + std::to_string(lineno));
  } catch (const DataError& e) {
    throw DataError("malformed manifest " + file.string() + " at line " + std::to_string(lineno) + ": " + e.what());
  }
  return m;
}

Tensor crop_to_tensor(const Image8& image, std::size_t crop, const std::string& origin) {
  if (image.width < crop || image.height < crop) {
    throw DataError("image " + origin + " is " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                    ", smaller than crop " + std::to_string(crop));
  }
  if (image.channels != 1 && image.channels != 3) throw DataError("unsupported channel count in " + origin);
  const std::size_t top = (image.height - crop) / 2, left = (image.width - crop) / 2;
  std::vector<double> data(3 * crop * crop);
  for (std::size_t c = 0; c < 3; ++c) {
    const std::size_t src_c = image.channels == 1 ? 0 : c;
    for (std::size_t y = 0; y < crop; ++y) {
      for (std::size_t x = 0; x < crop; ++x) {
        const std::size_t src = ((top + y) * image.width + left + x) * image.channels + src_c;
        data[(c * crop + y) * crop + x] = image.pixels[src] / 255.0;
      }
    }
  }
  return Tensor::from_data({3, crop, crop}, std::move(data));
}

ImageSample load_and_crop(const fs::path& path, std::size_t crop, std::size_t label) {
  return ImageSample{crop_to_tensor(read_image(path), crop, path.string()), label};
}

std::vector<ImageSample> load_split(const DatasetManifest& manifest, Split s, std::size_t crop, std::size_t threads) {
  const auto idx = manifest.indices(s);
  std::vector<ImageSample> out(idx.size());
  threads = std::max<std::size_t>(1, std::min(threads, idx.size()));
  auto work = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t i = begin; i < idx.size(); i += stride) {
      const ManifestItem& it = manifest.items[idx[i]];
      out[i] = load_and_crop(manifest.resolve(it), crop, it.label);
    }
  };
  if (threads == 1) {
    work(0, 1);
    return out;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        work(t, threads);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

SynthSpec SynthSpec::from_seed(std::size_t classes, std::size_t per_class, std::size_t size, double amplitude,
                               std::uint64_t seed) {
  return SynthSpec{classes, per_class, size, amplitude, seed, seed + 1000, seed + 2000};
}

std::vector<double> class_fingerprint(const SynthSpec& spec, std::size_t class_index) {
  std::mt19937_64 rng(spec.fingerprint_seed + class_index);
  std::bernoulli_distribution coin(0.5);
  std::vector<double> f(3 * spec.image_size * spec.image_size);
  double mu = 0.0;
  for (double& v : f) {
    v = coin(rng) ? 1.0 : -1.0;
    mu += v;
  }
  mu /= static_cast<double>(f.size());
  for (double& v : f) v -= mu;
  return f;
}

DatasetManifest gen_synthetic(const SynthSpec& spec, const fs::path& out_dir) {
  if (spec.num_classes < 2 || spec.images_per_class == 0 || spec.image_size < 4) {
    throw ParameterError("synthetic spec needs >= 2 classes, >= 1 image per class and size >= 4");
  }
  if (!(spec.fingerprint_amplitude >= 0.0 && spec.fingerprint_amplitude <= 0.1)) {
    throw ParameterError("fingerprint amplitude must lie in [0, 0.1]");
  }
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw DataError("cannot create " + out_dir.string() + ": " + ec.message());

  const std::size_t n = spec.image_size;
  std::mt19937_64 content_rng(spec.content_seed);
  DatasetManifest m;
  m.root = out_dir;
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    char name[32];
    std::snprintf(name, sizeof(name), "class_%02zu", c);
    m.classes.emplace_back(name);
    fs::create_directories(out_dir / name, ec);
    if (ec) throw DataError("cannot create class directory: " + ec.message());
    const auto fp = class_fingerprint(spec, c);
    for (std::size_t i = 0; i < spec.images_per_class; ++i) {
      Image8 img{n, n, 3, std::vector<std::uint8_t>(3 * n * n)};
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const auto content = smooth_field(n, 4, content_rng);
        for (std::size_t p = 0; p < n * n; ++p) {
          const double v = std::clamp(content[p] + spec.fingerprint_amplitude * fp[ch * n * n + p], 0.0, 1.0);
          img.pixels[p * 3 + ch] = static_cast<std::uint8_t>(std::lround(v * 255.0));
        }
      }
      char file[32];
      std::snprintf(file, sizeof(file), "img_%04zu.png", i);
      write_png(out_dir / name / file, img);
      m.items.push_back({std::string(name) + "/" + file, c, Split::Unassigned});
    }
  }
  DatasetManifest out = split(m, spec.split_seed).manifest;
  save_manifest(out, out_dir / "manifest.tsv");
  return out;
}

}  // namespace pdcvit
