#include "perseg/data.hpp"

#include <algorithm>
#include <fstream>

#include <nlohmann/json.hpp>

#include "perseg/common.hpp"
#include "perseg/rng.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace perseg {

std::string to_string(DatasetRole role) {
  return role == DatasetRole::source ? "source" : "personal";
}

DatasetRole role_from_string(const std::string& s) {
  if (s == "source") return DatasetRole::source;
  if (s == "personal") return DatasetRole::personal;
  fail("unknown dataset role: " + s);
}

namespace {

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  check(in.good(), "cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail(path.string() + ": " + e.what());
  }
  return j;
}

void write_json_file(const fs::path& path, const json& j) {
  std::ofstream out(path);
  check(out.good(), "cannot write " + path.string());
  out << j.dump(2) << "\n";
}

std::vector<std::string> list_png_ids(const fs::path& dir) {
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    if (e.path().extension() != ".png") continue;
    ids.push_back(e.path().stem().string());
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

}  // namespace

DatasetSpec read_dataset_spec(const fs::path& root) {
  fs::path manifest = root / "dataset.json";
  check(fs::exists(manifest), "missing manifest " + manifest.string());
  json j = read_json_file(manifest);
  DatasetSpec spec;
  spec.root = root;
  spec.role = role_from_string(j.at("role").get<std::string>());
  spec.class_count = j.at("class_count").get<int>();
  spec.user = j.value("user", std::string());
  return spec;
}

Dataset load_dataset(const DatasetSpec& spec) {
  check(fs::exists(spec.root), "dataset root does not exist: " + spec.root.string());
  check(spec.class_count >= 2, "class_count must be at least 2");
  fs::path img_dir = spec.root / "images";
  check(fs::exists(img_dir), "missing image directory " + img_dir.string());

  fs::path manifest = spec.root / "dataset.json";
  if (fs::exists(manifest)) {
    json j = read_json_file(manifest);
    if (j.contains("role"))
      check(role_from_string(j.at("role").get<std::string>()) == spec.role,
            spec.root.string() + ": manifest role conflicts with requested role");
    if (j.contains("class_count"))
      check(j.at("class_count").get<int>() == spec.class_count,
            spec.root.string() + ": manifest class_count conflicts with requested value");
  }

  std::vector<std::string> ids = list_png_ids(img_dir);
  check(!ids.empty(), "no images found under " + img_dir.string());

  Dataset d;
  d.spec = spec;
  if (spec.role == DatasetRole::source) {
    d.labeled.resize(ids.size());
  } else {
    d.unlabeled.resize(ids.size());
  }

  parallel_for(static_cast<std::int64_t>(ids.size()), [&](std::int64_t i) {
    const std::string& id = ids[static_cast<std::size_t>(i)];
    ImageU8 img = read_png(img_dir / (id + ".png"));
    check(img.ch == 3, "image " + id + ": expected 3 channels, got " + std::to_string(img.ch));
    if (spec.role == DatasetRole::source) {
      fs::path mask_path = spec.root / "masks" / (id + ".png");
      check(fs::exists(mask_path), "image " + id + ": missing mask " + mask_path.string());
      Mask m = read_mask_png(mask_path);
      check(m.h == img.h && m.w == img.w,
            "image " + id + ": mask size " + std::to_string(m.w) + "x" + std::to_string(m.h) +
                " does not match image " + std::to_string(img.w) + "x" + std::to_string(img.h));
      for (std::uint8_t v : m.v)
        check(v == 255 || v < spec.class_count,
              "mask " + id + ": invalid label value " + std::to_string(v));
      LabeledSample& s = d.labeled[static_cast<std::size_t>(i)];
      s.id = id;
      s.image = image_to_tensor(img);
      s.mask = std::move(m);
    } else {
      UnlabeledSample& s = d.unlabeled[static_cast<std::size_t>(i)];
      s.id = id;
      s.user = spec.user;
      s.image = image_to_tensor(img);
    }
  });

  if (spec.role == DatasetRole::personal && fs::exists(manifest)) {
    json j = read_json_file(manifest);
    if (j.contains("val_ids")) {
      for (const auto& v : j.at("val_ids")) {
        std::string id = v.get<std::string>();
        check(std::binary_search(ids.begin(), ids.end(), id),
              "val id " + id + " not present in " + img_dir.string());
        d.val_ids.push_back(id);
      }
      std::sort(d.val_ids.begin(), d.val_ids.end());
    }
  }
  return d;
}

void write_dataset(const Dataset& d, const fs::path& root) {
  fs::create_directories(root / "images");
  if (!d.labeled.empty()) fs::create_directories(root / "masks");
  for (const auto& s : d.labeled) {
    write_png(root / "images" / (s.id + ".png"), tensor_to_image(s.image));
    write_mask_png(root / "masks" / (s.id + ".png"), s.mask);
  }
  for (const auto& s : d.unlabeled)
    write_png(root / "images" / (s.id + ".png"), tensor_to_image(s.image));

  json j;
  j["role"] = to_string(d.spec.role);
  j["class_count"] = d.spec.class_count;
  if (!d.spec.user.empty()) j["user"] = d.spec.user;
  j["val_ids"] = d.val_ids;
  write_json_file(root / "dataset.json", j);
}

Dataset merge_datasets(const std::vector<Dataset>& parts) {
  check(!parts.empty(), "merge_datasets: empty input list");
  Dataset out;
  out.spec.role = DatasetRole::personal;
  out.spec.class_count = parts[0].spec.class_count;
  out.spec.user = "merged";
  for (const Dataset& p : parts) {
    check(p.spec.role == DatasetRole::personal, "merge_datasets: all inputs must be personal");
    check(p.spec.class_count == out.spec.class_count,
          "merge_datasets: class_count mismatch between inputs");
    check(!p.spec.user.empty(), "merge_datasets: input dataset has no user tag");
    for (const auto& s : p.unlabeled) {
      UnlabeledSample ns = s;
      ns.id = p.spec.user + "/" + s.id;
      out.unlabeled.push_back(std::move(ns));
    }
    for (const auto& id : p.val_ids) out.val_ids.push_back(p.spec.user + "/" + id);
  }
  std::sort(out.unlabeled.begin(), out.unlabeled.end(),
            [](const auto& a, const auto& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < out.unlabeled.size(); ++i)
    check(out.unlabeled[i].id != out.unlabeled[i - 1].id,
          "merge_datasets: duplicate id " + out.unlabeled[i].id);
  std::sort(out.val_ids.begin(), out.val_ids.end());
  return out;
}

namespace {

std::vector<std::size_t> pick_subset(std::size_t n, double fraction, Rng& rng) {
  auto m = static_cast<std::size_t>(fraction * static_cast<double>(n));
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  shuffle_in_place(idx, rng);
  idx.resize(m);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

Dataset sample_dataset(const Dataset& d, double fraction, std::uint64_t seed) {
  check(fraction > 0.0 && fraction <= 1.0, "sample_dataset: fraction must be in (0, 1]");
  Dataset out;
  out.spec = d.spec;
  Rng rng(derive_seed(seed, "sample_dataset"));
  if (!d.unlabeled.empty()) {
    for (std::size_t i : pick_subset(d.unlabeled.size(), fraction, rng))
      out.unlabeled.push_back(d.unlabeled[i]);
  }
  if (!d.labeled.empty()) {
    for (std::size_t i : pick_subset(d.labeled.size(), fraction, rng))
      out.labeled.push_back(d.labeled[i]);
  }
  std::vector<std::string> kept;
  for (const auto& s : out.unlabeled) kept.push_back(s.id);
  for (const auto& id : d.val_ids)
    if (std::binary_search(kept.begin(), kept.end(), id)) out.val_ids.push_back(id);
  return out;
}

std::map<std::string, Mask> read_eval_masks(const fs::path& personal_root) {
  fs::path dir = personal_root / "masks_eval";
  check(fs::exists(dir), "missing evaluation mask directory " + dir.string());
  std::map<std::string, Mask> out;
  for (const std::string& id : list_png_ids(dir)) out[id] = read_mask_png(dir / (id + ".png"));
  return out;
}

std::map<std::string, int> read_true_groups(const fs::path& personal_root) {
  json j = read_json_file(personal_root / "true_groups.json");
  std::map<std::string, int> out;
  for (auto it = j.begin(); it != j.end(); ++it) out[it.key()] = it.value().get<int>();
  return out;
}

void write_synth_output(const SynthOutput& out, const fs::path& root) {
  write_dataset(out.source, root / "source");
  fs::path proot = root / ("personal_" + out.personal.spec.user);
  write_dataset(out.personal, proot);
  fs::create_directories(proot / "masks_eval");
  for (const auto& [id, mask] : out.personal_gt)
    write_mask_png(proot / "masks_eval" / (id + ".png"), mask);
  json j;
  for (const auto& [id, g] : out.true_groups) j[id] = g;
  write_json_file(proot / "true_groups.json", j);
}

}  // namespace perseg
