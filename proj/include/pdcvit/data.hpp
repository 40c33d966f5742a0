#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pdcvit/image_io.hpp"
#include "pdcvit/tensor.hpp"

namespace pdcvit {

enum class Split { Unassigned, Train, Validation, Test };

std::string to_string(Split s);
Split parse_split(const std::string& s);

struct ManifestItem {
  std::string path;  // relative to the manifest root
  std::size_t label = 0;
  Split split = Split::Unassigned;

  friend bool operator==(const ManifestItem&, const ManifestItem&) = default;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<std::string> classes;
  std::vector<ManifestItem> items;
  std::uint64_t seed = 0;

  std::size_t num_classes() const { return classes.size(); }
  std::vector<std::size_t> indices(Split s) const;
  std::filesystem::path resolve(const ManifestItem& item) const { return root / item.path; }
  // Item counts per class for one split.
  std::vector<std::size_t> class_counts(Split s) const;
};

bool operator==(const DatasetManifest& a, const DatasetManifest& b);

// root/<class>/<image>; classes and files in lexicographic order. Throws
// DataError naming any class directory without supported images.
DatasetManifest scan_dataset(const std::filesystem::path& root);

struct SplitResult {
  DatasetManifest manifest;
  std::vector<std::string> warnings;  // classes with fewer than 5 items
};

// Stratified seeded split: per class round(20%) items go to test (at least
// one), then `holdout_fraction` of the remainder to validation.
SplitResult split(const DatasetManifest& manifest, std::uint64_t seed, double holdout_fraction = 0.0);

// Text format: "# pdcvit manifest v1", "seed\t<n>", "classes\t<a>\t<b>...",
// then "path\tclass_index\tsplit" rows. The loaded root is the file's
// directory.
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& file);
DatasetManifest load_manifest(const std::filesystem::path& file);

struct ImageSample {
  Tensor pixels;  // 3 x crop x crop in [0, 1]
  std::size_t label = 0;
};

// Center crop with floor offsets; gray is replicated to three channels.
Tensor crop_to_tensor(const Image8& image, std::size_t crop, const std::string& origin = "<memory>");
ImageSample load_and_crop(const std::filesystem::path& path, std::size_t crop = 224, std::size_t label = 0);

std::vector<ImageSample> load_split(const DatasetManifest& manifest, Split s, std::size_t crop,
                                    std::size_t threads = 1);

struct SynthSpec {
  std::size_t num_classes = 8;
  std::size_t images_per_class = 100;
  std::size_t image_size = 32;
  double fingerprint_amplitude = 0.05;
  std::uint64_t content_seed = 7;
  std::uint64_t fingerprint_seed = 1007;
  std::uint64_t split_seed = 2007;

  // Builds the spec from one seed with fixed offsets per subsystem.
  static SynthSpec from_seed(std::size_t classes, std::size_t per_class, std::size_t size, double amplitude,
                             std::uint64_t seed);
};

// Zero-mean +-1 field, 3 x size x size, fixed per class.
std::vector<double> class_fingerprint(const SynthSpec& spec, std::size_t class_index);

// Writes out_dir/class_XX/img_XXXX.png and out_dir/manifest.tsv. Each image
// is clip(smooth random content + amplitude * fingerprint(class), 0, 1).
DatasetManifest gen_synthetic(const SynthSpec& spec, const std::filesystem::path& out_dir);

}  // namespace pdcvit
