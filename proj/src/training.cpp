#include "perseg/training.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace perseg {

void validate(const TrainConfig& cfg) {
  check(cfg.backbone == "desk" || cfg.backbone == "resnet50_psp",
        "config: unknown backbone " + cfg.backbone);
  check(cfg.class_count >= 2, "config: class_count must be at least 2");
  check(cfg.source_context == "personal" || cfg.source_context == "batch" ||
            cfg.source_context == "none",
        "config: source_context must be personal, batch or none");
  check(cfg.batch_size >= 1, "config: batch_size must be positive");
  check(cfg.crop >= 0, "config: crop must be non-negative");
  check(cfg.steps >= 1, "config: steps must be positive");
  check(cfg.lr > 0.0, "config: lr must be positive");
  check(cfg.momentum >= 0.0 && cfg.momentum < 1.0, "config: momentum must be in [0,1)");
  check(cfg.weight_decay >= 0.0, "config: weight_decay must be non-negative");
  check(cfg.poly_power >= 0.0, "config: poly_power must be non-negative");
  check(cfg.disc_lr > 0.0, "config: disc_lr must be positive");
  check(cfg.lambda_adv >= 0.0, "config: lambda_adv must be non-negative");
  check(cfg.lambda_pse >= 0.0, "config: lambda_pse must be non-negative");
  check(cfg.aux_weight >= 0.0, "config: aux_weight must be non-negative");
  check(cfg.select_rate > 0.0 && cfg.select_rate <= 1.0, "config: select_rate must be in (0,1]");
  check(cfg.pixel_quantile >= 0.0 && cfg.pixel_quantile <= 1.0,
        "config: pixel_quantile must be in [0,1]");
  check(cfg.groups >= 1, "config: groups must be positive");
  check(cfg.val_every >= 0, "config: val_every must be non-negative");
}

void to_json(nlohmann::json& j, const TrainConfig& cfg) {
  j = nlohmann::json{{"backbone", cfg.backbone},
                     {"class_count", cfg.class_count},
                     {"variant", to_string(cfg.variant)},
                     {"region_norm", to_string(cfg.region_norm)},
                     {"bank_stop_grad", cfg.bank_stop_grad},
                     {"context_dim", cfg.context_dim},
                     {"attention_dim", cfg.attention_dim},
                     {"adv_signal", to_string(cfg.adv_signal)},
                     {"source_context", cfg.source_context},
                     {"batch_size", cfg.batch_size},
                     {"crop", cfg.crop},
                     {"steps", cfg.steps},
                     {"lr", cfg.lr},
                     {"momentum", cfg.momentum},
                     {"weight_decay", cfg.weight_decay},
                     {"poly_power", cfg.poly_power},
                     {"disc_lr", cfg.disc_lr},
                     {"lambda_adv", cfg.lambda_adv},
                     {"lambda_pse", cfg.lambda_pse},
                     {"aux_weight", cfg.aux_weight},
                     {"select_rate", cfg.select_rate},
                     {"pixel_quantile", cfg.pixel_quantile},
                     {"groups", cfg.groups},
                     {"val_every", cfg.val_every},
                     {"seed", cfg.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& cfg) {
  cfg.backbone = j.at("backbone").get<std::string>();
  cfg.class_count = j.at("class_count").get<int>();
  cfg.variant = variant_from_string(j.at("variant").get<std::string>());
  cfg.region_norm = region_norm_from_string(j.at("region_norm").get<std::string>());
  cfg.bank_stop_grad = j.at("bank_stop_grad").get<bool>();
  cfg.context_dim = j.at("context_dim").get<int>();
  cfg.attention_dim = j.at("attention_dim").get<int>();
  cfg.adv_signal = adv_signal_from_string(j.at("adv_signal").get<std::string>());
  cfg.source_context = j.at("source_context").get<std::string>();
  cfg.batch_size = j.at("batch_size").get<int>();
  cfg.crop = j.at("crop").get<int>();
  cfg.steps = j.at("steps").get<int>();
  cfg.lr = j.at("lr").get<double>();
  cfg.momentum = j.at("momentum").get<double>();
  cfg.weight_decay = j.at("weight_decay").get<double>();
  cfg.poly_power = j.at("poly_power").get<double>();
  cfg.disc_lr = j.at("disc_lr").get<double>();
  cfg.lambda_adv = j.at("lambda_adv").get<double>();
  cfg.lambda_pse = j.at("lambda_pse").get<double>();
  cfg.aux_weight = j.at("aux_weight").get<double>();
  cfg.select_rate = j.at("select_rate").get<double>();
  cfg.pixel_quantile = j.at("pixel_quantile").get<double>();
  cfg.groups = j.at("groups").get<int>();
  cfg.val_every = j.at("val_every").get<int>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
}

double poly_lr(double base, std::int64_t t, std::int64_t total, double power) {
  check(total >= 1, "poly_lr: total must be positive");
  if (t < 0) t = 0;
  if (t > total - 1) t = total - 1;
  double frac = 1.0 - static_cast<double>(t) / static_cast<double>(total);
  return base * std::pow(frac, power);
}

BatchStream::BatchStream(std::int64_t n, int batch, std::uint64_t seed)
    : n_(n), b_(batch), rng_(seed) {
  check(b_ >= 1, "batch stream: batch size must be positive");
  check(n_ >= b_, "batch stream: batch size exceeds dataset size");
}

std::vector<std::int64_t> BatchStream::next() {
  if (pos_ + static_cast<std::size_t>(b_) > order_.size()) {
    order_.resize(static_cast<std::size_t>(n_));
    for (std::int64_t i = 0; i < n_; ++i) order_[static_cast<std::size_t>(i)] = i;
    shuffle_in_place(order_, rng_);
    pos_ = 0;
  }
  std::vector<std::int64_t> out(order_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                order_.begin() + static_cast<std::ptrdiff_t>(pos_) + b_);
  pos_ += static_cast<std::size_t>(b_);
  return out;
}

GroupBatchStream::GroupBatchStream(GroupAssignment ga, int batch, std::uint64_t seed)
    : ga_(std::move(ga)), b_(batch), seed_(seed) {
  check(b_ >= 1, "group batch stream: batch size must be positive");
  bool any = false;
  for (const auto& members : ids_by_group(ga_))
    if (static_cast<int>(members.size()) >= b_) any = true;
  check(any, "group batch stream: every group is smaller than the batch size");
}

const std::vector<std::string>& GroupBatchStream::next() {
  if (pos_ >= batches_.size()) {
    batches_ = make_group_batches(ga_, b_, derive_seed(seed_, std::to_string(epoch_++)),
                                  /*drop_last=*/true);
    check(!batches_.empty(), "group batch stream: no full batches");
    pos_ = 0;
  }
  return batches_[pos_++];
}

GroupAssignment single_group_assignment(const std::vector<std::string>& ids) {
  check(!ids.empty(), "single_group_assignment: no ids");
  GroupAssignment ga;
  ga.k = 1;
  for (const auto& id : ids) ga.group_of[id] = 0;
  return ga;
}

GroupAssignment restrict_groups(const GroupAssignment& ga, const std::vector<std::string>& ids) {
  GroupAssignment out;
  out.k = ga.k;
  out.seed = ga.seed;
  out.centroids = ga.centroids;
  for (const auto& id : ids) {
    auto it = ga.group_of.find(id);
    check(it != ga.group_of.end(), "restrict_groups: id not in assignment: " + id);
    out.group_of[id] = it->second;
  }
  return out;
}

std::vector<std::string> rank_and_select(std::vector<std::pair<std::string, double>> entries,
                                         double rate) {
  check(rate > 0.0 && rate <= 1.0, "rank_and_select: rate must be in (0,1]");
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second < b.second;
    return a.first < b.first;
  });
  std::size_t keep = static_cast<std::size_t>(
      std::floor(rate * static_cast<double>(entries.size())));
  std::vector<std::string> out;
  out.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) out.push_back(std::move(entries[i].first));
  return out;
}

Mask mask_by_quantile(const Mask& argmax, const std::vector<float>& entropy, double q) {
  std::size_t n = static_cast<std::size_t>(argmax.h) * static_cast<std::size_t>(argmax.w);
  check(entropy.size() == n, "mask_by_quantile: entropy size mismatch");
  check(n > 0, "mask_by_quantile: empty mask");
  Mask out = argmax;
  if (q <= 0.0) {
    std::fill(out.v.begin(), out.v.end(), std::uint8_t(255));
    return out;
  }
  if (q >= 1.0) return out;
  std::vector<float> sorted(entropy);
  std::sort(sorted.begin(), sorted.end());
  std::size_t rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(n)));
  check(rank >= 1 && rank <= n, "mask_by_quantile: bad quantile rank");
  float thr = sorted[rank - 1];
  for (std::size_t i = 0; i < n; ++i)
    if (entropy[i] > thr) out.v[i] = 255;
  return out;
}

void save_pseudo_labels(const std::filesystem::path& dir, const PseudoLabelSet& set) {
  std::filesystem::create_directories(dir);
  for (const auto& [id, mask] : set.masks) {
    std::filesystem::path p = dir / (id + ".png");
    std::filesystem::create_directories(p.parent_path());
    write_mask_png(p, mask);
  }
}

PseudoLabelSet load_pseudo_labels(const std::filesystem::path& dir, int class_count) {
  check(std::filesystem::is_directory(dir), "pseudo labels: no such directory: " + dir.string());
  PseudoLabelSet set;
  std::set<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") files.insert(e.path());
  for (const auto& p : files) {
    std::string id = std::filesystem::relative(p, dir).generic_string();
    id = id.substr(0, id.size() - 4);
    Mask m = read_mask_png(p);
    for (std::uint8_t v : m.v)
      check(v < class_count || v == 255,
            "pseudo labels: value " + std::to_string(int(v)) + " out of range in " + p.string());
    set.masks[id] = std::move(m);
  }
  check(!set.masks.empty(), "pseudo labels: no masks found in " + dir.string());
  return set;
}

}  // namespace perseg
