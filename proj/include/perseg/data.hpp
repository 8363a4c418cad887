#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "perseg/image.hpp"

namespace perseg {

enum class DatasetRole { source, personal };

std::string to_string(DatasetRole role);
DatasetRole role_from_string(const std::string& s);

struct DatasetSpec {
  std::filesystem::path root;
  DatasetRole role = DatasetRole::source;
  int class_count = 0;
  std::string user;  // personal datasets only
};

struct LabeledSample {
  std::string id;
  Tensor<float> image;  // [3,H,W] in [0,1]
  Mask mask;
};

struct UnlabeledSample {
  std::string id;
  std::string user;
  Tensor<float> image;
};

struct Dataset {
  DatasetSpec spec;
  std::vector<LabeledSample> labeled;      // source role
  std::vector<UnlabeledSample> unlabeled;  // personal role
  std::vector<std::string> val_ids;        // held-out ids, personal role

  std::size_t size() const { return labeled.size() + unlabeled.size(); }
};

// Reads role/class_count/user from <root>/dataset.json.
DatasetSpec read_dataset_spec(const std::filesystem::path& root);

// Loads <root>/images/*.png sorted by id (file stem). Source datasets
// require a mask per image under <root>/masks/; personal datasets ignore
// label directories entirely. Violations are reported with the offending
// file's id.
Dataset load_dataset(const DatasetSpec& spec);

// Writes images/, masks/ (labeled samples only) and dataset.json.
void write_dataset(const Dataset& d, const std::filesystem::path& root);

// Pools personal datasets under user-prefixed ids ("<user>/<id>").
Dataset merge_datasets(const std::vector<Dataset>& parts);

// Uniform subsample without replacement of floor(fraction * n) items per
// sample list, deterministic in seed; ids stay sorted.
Dataset sample_dataset(const Dataset& d, double fraction, std::uint64_t seed);

struct SynthSpec {
  std::uint64_t seed = 0;
  int n_source = 600;
  int n_personal = 600;
  int image_size = 64;
  int n_groups = 4;
  int class_count = 4;
  int min_objects = 1;
  int max_objects = 2;
  double fg_jitter = 0.10;      // per-image foreground color jitter sd
  double light_jitter = 0.06;   // per-image brightness jitter sd
  double pixel_noise = 0.025;   // per-pixel noise sd, both domains
  double texture_amp = 0.03;    // background shading amplitude
  double brightness_shift = -0.08;  // personal domain offset
  double noise_shift = 0.03;        // extra personal per-pixel noise sd
  double val_fraction = 0.3;
  int ignore_border = 0;  // when > 0, that many boundary rows/cols get label 255
  std::string user = "u0";
};

struct SynthOutput {
  Dataset source;    // labeled
  Dataset personal;  // unlabeled; ground truth kept aside
  std::map<std::string, Mask> personal_gt;
  std::map<std::string, int> true_groups;
};

// Deterministic group-structured two-domain fixture. Within a true group,
// images share background family, object shape family and foreground class;
// the foreground class is carried by color. The personal domain adds a
// brightness offset and extra noise on top of the source distribution.
SynthOutput generate_synthetic(const SynthSpec& spec);

// Writes source/ and personal_<user>/ under root, the latter with hidden
// ground truth in masks_eval/ and true group labels in true_groups.json.
void write_synth_output(const SynthOutput& out, const std::filesystem::path& root);

// Reads the held-aside evaluation masks written by write_synth_output.
std::map<std::string, Mask> read_eval_masks(const std::filesystem::path& personal_root);

std::map<std::string, int> read_true_groups(const std::filesystem::path& personal_root);

}  // namespace perseg
