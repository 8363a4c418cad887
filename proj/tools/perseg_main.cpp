#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "perseg/training.hpp"

namespace fs = std::filesystem;
using namespace perseg;

namespace {

// Everything a run needs to be reproduced, serialized into the run directory
// before any work happens.
struct RunConfig {
  std::string source_root;
  std::vector<std::string> personal_roots;
  std::string mix = "personal";  // personal | mixall | mixsample
  double mix_fraction = 0.0;     // 0 picks 1/n_roots for mixsample
  std::string descriptor = "pixel_stat";
  int step2_steps = 0;  // 0 reuses train.steps
  std::string fiou_mode = "binary_foreground";
  TrainConfig train;
};

void to_json(nlohmann::json& j, const RunConfig& rc) {
  j = nlohmann::json{{"source_root", rc.source_root},
                     {"personal_roots", rc.personal_roots},
                     {"mix", rc.mix},
                     {"mix_fraction", rc.mix_fraction},
                     {"descriptor", rc.descriptor},
                     {"step2_steps", rc.step2_steps},
                     {"fiou_mode", rc.fiou_mode},
                     {"train", rc.train}};
}

void from_json(const nlohmann::json& j, RunConfig& rc) {
  rc.source_root = j.at("source_root").get<std::string>();
  rc.personal_roots = j.at("personal_roots").get<std::vector<std::string>>();
  rc.mix = j.at("mix").get<std::string>();
  rc.mix_fraction = j.at("mix_fraction").get<double>();
  rc.descriptor = j.at("descriptor").get<std::string>();
  rc.step2_steps = j.at("step2_steps").get<int>();
  rc.fiou_mode = j.at("fiou_mode").get<std::string>();
  rc.train = j.at("train").get<TrainConfig>();
}

struct PersonalData {
  Dataset data;
  std::map<std::string, Mask> gt;  // empty when no masks_eval exists
};

Dataset load_source(const std::string& root) {
  check(!root.empty(), "no source dataset given (--source)");
  DatasetSpec spec = read_dataset_spec(root);
  check(spec.role == DatasetRole::source, root + " is not a source dataset");
  return load_dataset(spec);
}

PersonalData load_personal(const std::vector<std::string>& roots, const std::string& mix,
                           double fraction, std::uint64_t seed) {
  check(!roots.empty(), "no personal dataset given (--personal)");
  check(mix == "personal" || mix == "mixall" || mix == "mixsample",
        "mix must be personal, mixall or mixsample");
  std::vector<Dataset> parts;
  std::vector<std::map<std::string, Mask>> gts;
  for (const std::string& r : roots) {
    DatasetSpec spec = read_dataset_spec(r);
    check(spec.role == DatasetRole::personal, r + " is not a personal dataset");
    parts.push_back(load_dataset(spec));
    if (fs::exists(fs::path(r) / "masks_eval"))
      gts.push_back(read_eval_masks(r));
    else
      gts.push_back({});
  }
  PersonalData out;
  if (mix == "personal") {
    check(roots.size() == 1, "mix=personal takes exactly one personal dataset");
    out.data = std::move(parts[0]);
    out.gt = std::move(gts[0]);
    return out;
  }
  out.data = merge_datasets(parts);
  for (std::size_t i = 0; i < parts.size(); ++i)
    for (auto& [id, m] : gts[i]) out.gt[parts[i].spec.user + "/" + id] = std::move(m);
  if (mix == "mixsample") {
    double f = fraction > 0.0 ? fraction : 1.0 / static_cast<double>(roots.size());
    out.data = sample_dataset(out.data, f, derive_seed(seed, "mixsample"));
    std::map<std::string, Mask> kept;
    for (const auto& s : out.data.unlabeled) {
      auto it = out.gt.find(s.id);
      if (it != out.gt.end()) kept[s.id] = std::move(it->second);
    }
    out.gt = std::move(kept);
  }
  return out;
}

RunConfig read_run_config(const fs::path& run) {
  fs::path p = run / "config.json";
  check(fs::exists(p), "missing " + p.string() + "; run train-step1 first");
  std::ifstream in(p);
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  check(!j.is_discarded(), "unreadable config: " + p.string());
  return j.get<RunConfig>();
}

void write_run_config(const fs::path& run, const RunConfig& rc) {
  fs::create_directories(run);
  std::ofstream out(run / "config.json");
  out << nlohmann::json(rc).dump(2) << "\n";
  check(out.good(), "cannot write " + (run / "config.json").string());
}

// groups.json is required whenever the context variant consumes a bank;
// variant=none falls back to one group covering everything.
std::optional<GroupAssignment> load_run_groups(const fs::path& run, ContextVariant variant) {
  fs::path p = run / "groups.json";
  if (fs::exists(p)) return load_groups(p);
  check(variant == ContextVariant::none,
        "missing " + p.string() + "; run the cluster command first");
  return std::nullopt;
}

std::string checkpoint_name(int stage) {
  return stage == 1 ? "ckpt_step1.bin" : "ckpt_step2.bin";
}

// ---- commands ----

void do_synth(const fs::path& out, std::uint64_t seed, int users, int n_source, int n_personal,
              int size, int groups, int classes, double val_fraction, double brightness_shift,
              double noise_shift, double fg_jitter) {
  check(users >= 1, "--users must be positive");
  Dataset shared_source;
  for (int u = 0; u < users; ++u) {
    SynthSpec sp;
    sp.user = "u" + std::to_string(u);
    sp.seed = users == 1 ? seed : derive_seed(seed, sp.user);
    sp.n_source = n_source;
    sp.n_personal = n_personal;
    sp.image_size = size;
    sp.n_groups = groups;
    sp.class_count = classes;
    sp.val_fraction = val_fraction;
    sp.brightness_shift = brightness_shift;
    sp.noise_shift = noise_shift;
    if (fg_jitter >= 0.0) sp.fg_jitter = fg_jitter;
    SynthOutput sy = generate_synthetic(sp);
    if (u == 0)
      shared_source = sy.source;
    else
      sy.source = shared_source;  // one source domain shared by all users
    write_synth_output(sy, out);
    std::cout << "wrote " << (out / ("personal_" + sp.user)).string() << " ("
              << sy.personal.unlabeled.size() << " images)\n";
  }
  std::cout << "wrote " << (out / "source").string() << " (" << shared_source.labeled.size()
            << " images)\n";
}

void do_cluster(const fs::path& run, const std::vector<std::string>& roots,
                const std::string& mix, double fraction, int k, std::uint64_t seed,
                const std::string& descriptor, const std::string& ckpt) {
  PersonalData pd = load_personal(roots, mix, fraction, seed);
  check(!pd.data.unlabeled.empty(), "personal set is empty");
  DescriptorFn fn;
  if (descriptor == "pixel_stat") {
    fn = pixel_stat_descriptor();
  } else if (descriptor == "backbone") {
    SegModelConfig mc;
    std::shared_ptr<SegModel<real_t>> model;
    if (!ckpt.empty()) {
      nlohmann::json header = peek_checkpoint(ckpt);
      mc = header.at("model").get<SegModelConfig>();
      model = std::make_shared<SegModel<real_t>>(SegModel<real_t>::create(mc, 0));
      load_checkpoint(ckpt, *model, nullptr);
    } else {
      mc.class_count = pd.data.spec.class_count;
      model = std::make_shared<SegModel<real_t>>(
          SegModel<real_t>::create(mc, derive_seed(seed, "model")));
    }
    fn = backbone_descriptor(model);
  } else {
    fail("unknown descriptor: " + descriptor + " (pixel_stat or backbone)");
  }
  std::vector<Descriptor> desc = embed_images(pd.data.unlabeled, fn);
  GroupAssignment ga = kmeans_cluster(desc, k, derive_seed(seed, "kmeans"));
  fs::create_directories(run);
  save_groups(run / "groups.json", ga);
  std::vector<int> sizes(static_cast<std::size_t>(k), 0);
  for (const auto& [id, g] : ga.group_of) ++sizes[static_cast<std::size_t>(g)];
  std::cout << "wrote " << (run / "groups.json").string() << " (k=" << k << ", sizes";
  for (int s : sizes) std::cout << " " << s;
  std::cout << ")\n";
}

std::int64_t do_train(const fs::path& run, const RunConfig& rc, int stage) {
  Dataset source = load_source(rc.source_root);
  PersonalData pd = load_personal(rc.personal_roots, rc.mix, rc.mix_fraction, rc.train.seed);
  TrainConfig cfg = rc.train;
  cfg.class_count = source.spec.class_count;
  check(pd.data.spec.class_count == cfg.class_count,
        "source and personal class counts differ");
  if (stage == 2 && rc.step2_steps > 0) cfg.steps = rc.step2_steps;
  validate(cfg);

  write_run_config(run, rc);
  auto groups = load_run_groups(run, cfg.variant);

  auto model = SegModel<real_t>::create(cfg.model_config(), derive_seed(cfg.seed, "model"));
  std::unique_ptr<Discriminator<real_t>> disc;
  if (cfg.lambda_adv > 0.0)
    disc = std::make_unique<Discriminator<real_t>>(
        Discriminator<real_t>::create(cfg.disc_config(), derive_seed(cfg.seed, "disc")));

  std::int64_t start_step = 0;
  PseudoLabelSet pseudo;
  bool have_pseudo = false;
  if (stage == 2) {
    fs::path prev = run / checkpoint_name(1);
    check(fs::exists(prev), "missing " + prev.string() + "; run train-step1 first");
    nlohmann::json header = peek_checkpoint(prev.string());
    if (disc != nullptr && !header.contains("disc")) {
      start_step = load_checkpoint(prev.string(), model, nullptr);
    } else {
      start_step = load_checkpoint(prev.string(), model, disc.get());
    }
    fs::path pdir = run / "pseudo";
    check(fs::is_directory(pdir), "missing " + pdir.string() + "; run select-pseudo first");
    bool any = false;
    for (const auto& e : fs::recursive_directory_iterator(pdir))
      if (e.is_regular_file() && e.path().extension() == ".png") any = true;
    if (any) {
      pseudo = load_pseudo_labels(pdir, cfg.class_count);
      have_pseudo = true;
    } else {
      std::cerr << "warning: " << pdir.string()
                << " holds no masks; step 2 degenerates to step-1 training\n";
    }
  }

  std::ofstream metrics(run / "metrics.jsonl",
                        stage == 1 ? std::ios::trunc : std::ios::app);
  check(metrics.good(), "cannot write metrics log under " + run.string());

  const std::map<std::string, Mask>* val_gt = pd.gt.empty() ? nullptr : &pd.gt;
  std::int64_t end_step = 0;
  try {
    end_step = train_run(model, disc.get(), source, pd.data,
                         groups ? &*groups : nullptr, have_pseudo ? &pseudo : nullptr, cfg,
                         start_step, &metrics, val_gt);
  } catch (const Error& e) {
    save_checkpoint((run / "ckpt_abort.bin").string(), model, disc.get(), start_step);
    fail(std::string(e.what()) + "; wrote " + (run / "ckpt_abort.bin").string());
  }
  fs::path ck = run / checkpoint_name(stage);
  save_checkpoint(ck.string(), model, disc.get(), end_step);
  std::cout << "wrote " << ck.string() << " (step " << end_step << ")\n";
  return end_step;
}

void do_select(const fs::path& run, const std::vector<std::string>& personal_override,
               double rate_override, double quantile_override, const std::string& ckpt_name) {
  RunConfig rc = read_run_config(run);
  if (!personal_override.empty()) rc.personal_roots = personal_override;
  double rate = rate_override > 0.0 ? rate_override : rc.train.select_rate;
  double quantile = quantile_override >= 0.0 ? quantile_override : rc.train.pixel_quantile;

  PersonalData pd = load_personal(rc.personal_roots, rc.mix, rc.mix_fraction, rc.train.seed);
  TrainConfig cfg = rc.train;
  cfg.class_count = pd.data.spec.class_count;
  fs::path ck = run / ckpt_name;
  check(fs::exists(ck), "missing " + ck.string() + "; run train-step1 first");
  auto model = SegModel<real_t>::create(cfg.model_config(), 0);
  load_checkpoint(ck.string(), model, nullptr);
  auto groups = load_run_groups(run, cfg.variant);

  PseudoLabelSet set = select_pseudo_labels(model, pd.data, groups ? &*groups : nullptr, rate,
                                            quantile, cfg.batch_size);
  save_pseudo_labels(run / "pseudo", set);
  std::cout << "wrote " << set.masks.size() << " pseudo masks under "
            << (run / "pseudo").string() << "\n";
}

struct EvalOut {
  EvalReport report;
  std::string checkpoint;
  std::int64_t step = 0;
};

EvalOut do_eval(const fs::path& run, std::string ckpt_name,
                const std::vector<std::string>& personal_override, const std::string& split,
                const std::string& fiou_override) {
  RunConfig rc = read_run_config(run);
  if (!personal_override.empty()) rc.personal_roots = personal_override;
  FiouMode mode =
      fiou_mode_from_string(fiou_override.empty() ? rc.fiou_mode : fiou_override);

  if (ckpt_name.empty())
    ckpt_name = fs::exists(run / checkpoint_name(2)) ? checkpoint_name(2) : checkpoint_name(1);
  fs::path ck = run / ckpt_name;
  check(fs::exists(ck), "missing " + ck.string() + "; train first");

  PersonalData pd = load_personal(rc.personal_roots, rc.mix, rc.mix_fraction, rc.train.seed);
  check(!pd.gt.empty(), "no masks_eval ground truth under the personal dataset; cannot eval");
  TrainConfig cfg = rc.train;
  cfg.class_count = pd.data.spec.class_count;
  auto model = SegModel<real_t>::create(cfg.model_config(), 0);
  std::int64_t step = load_checkpoint(ck.string(), model, nullptr);
  auto groups = load_run_groups(run, cfg.variant);

  std::vector<std::string> ids;
  if (split == "val") {
    ids = pd.data.val_ids;
    check(!ids.empty(), "personal dataset has no validation split; use --split all");
  } else if (split == "all") {
    for (const auto& s : pd.data.unlabeled)
      if (pd.gt.count(s.id)) ids.push_back(s.id);
  } else {
    fail("unknown split: " + split + " (val or all)");
  }

  UserEval ue = evaluate_model(model, pd.data, ids, pd.gt, groups ? &*groups : nullptr,
                               cfg.batch_size, pd.data.spec.user, mode);
  EvalOut out;
  out.report = make_report({ue}, cfg.class_count);
  out.checkpoint = ckpt_name;
  out.step = step;

  nlohmann::json rj{{"checkpoint", out.checkpoint},
                    {"step", out.step},
                    {"split", split},
                    {"fiou_mode", to_string(mode)},
                    {"report", report_to_json(out.report)}};
  std::ofstream rf(run / "report.json");
  rf << rj.dump(2) << "\n";
  check(rf.good(), "cannot write " + (run / "report.json").string());
  return out;
}

struct AblationCell {
  std::string variant, mix;
  int k = 0;
  std::uint64_t seed = 0;
  double fiou_s1 = 0, miou_s1 = 0, fiou_s2 = 0, miou_s2 = 0;
};

void do_ablate(const fs::path& out, RunConfig base, const std::vector<std::string>& variants,
               const std::vector<int>& k_values, const std::vector<std::string>& mixes,
               const std::vector<std::uint64_t>& seeds, const std::string& split) {
  check(!variants.empty() && !k_values.empty() && !mixes.empty() && !seeds.empty(),
        "ablation matrix is empty");
  if (fs::exists(out))
    check(fs::is_directory(out) && fs::is_empty(out),
          "output directory not empty: " + out.string());
  fs::create_directories(out);

  std::vector<AblationCell> cells;
  for (const std::string& variant : variants)
    for (int k : k_values)
      for (const std::string& mix : mixes)
        for (std::uint64_t seed : seeds) {
          AblationCell cell;
          cell.variant = variant;
          cell.k = k;
          cell.mix = mix;
          cell.seed = seed;
          RunConfig rc = base;
          rc.train.variant = variant_from_string(variant);
          rc.train.groups = k;
          rc.train.seed = seed;
          rc.mix = mix;
          fs::path run = out / (variant + "_k" + std::to_string(k) + "_" + mix + "_s" +
                                std::to_string(seed));
          std::cout << "== " << run.filename().string() << "\n";
          do_cluster(run, rc.personal_roots, rc.mix, rc.mix_fraction, k, seed, rc.descriptor,
                     "");
          do_train(run, rc, 1);
          EvalOut e1 = do_eval(run, checkpoint_name(1), {}, split, "");
          do_select(run, {}, 0.0, -1.0, checkpoint_name(1));
          do_train(run, rc, 2);
          EvalOut e2 = do_eval(run, checkpoint_name(2), {}, split, "");
          cell.fiou_s1 = e1.report.mean_fiou.value_or(0.0);
          cell.miou_s1 = e1.report.mean_miou.value_or(0.0);
          cell.fiou_s2 = e2.report.mean_fiou.value_or(0.0);
          cell.miou_s2 = e2.report.mean_miou.value_or(0.0);
          cells.push_back(cell);
        }

  nlohmann::json rows = nlohmann::json::array();
  for (const auto& c : cells)
    rows.push_back({{"variant", c.variant},
                    {"k", c.k},
                    {"mix", c.mix},
                    {"seed", c.seed},
                    {"fiou_s1", c.fiou_s1},
                    {"miou_s1", c.miou_s1},
                    {"fiou_s2", c.fiou_s2},
                    {"miou_s2", c.miou_s2}});
  std::ofstream cf(out / "comparison.json");
  cf << rows.dump(2) << "\n";
  check(cf.good(), "cannot write " + (out / "comparison.json").string());

  std::ostringstream table;
  table << "variant    k    mix         seed   fiou_s1  miou_s1  fiou_s2  miou_s2\n";
  char line[160];
  for (const auto& c : cells) {
    std::snprintf(line, sizeof line, "%-10s %-4d %-11s %-6llu %8.4f %8.4f %8.4f %8.4f\n",
                  c.variant.c_str(), c.k, c.mix.c_str(),
                  static_cast<unsigned long long>(c.seed), c.fiou_s1, c.miou_s1, c.fiou_s2,
                  c.miou_s2);
    table << line;
  }
  table << "\nmeans over seeds\n";
  for (const std::string& variant : variants)
    for (int k : k_values)
      for (const std::string& mix : mixes) {
        double f1 = 0, m1 = 0, f2 = 0, m2 = 0;
        int n = 0;
        for (const auto& c : cells)
          if (c.variant == variant && c.k == k && c.mix == mix) {
            f1 += c.fiou_s1;
            m1 += c.miou_s1;
            f2 += c.fiou_s2;
            m2 += c.miou_s2;
            ++n;
          }
        std::snprintf(line, sizeof line, "%-10s %-4d %-11s %-6s %8.4f %8.4f %8.4f %8.4f\n",
                      variant.c_str(), k, mix.c_str(), "mean", f1 / n, m1 / n, f2 / n, m2 / n);
        table << line;
      }
  std::ofstream tf(out / "comparison.txt");
  tf << table.str();
  std::cout << table.str();
}

std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::istringstream in(s);
  std::string tok;
  while (std::getline(in, tok, ','))
    if (!tok.empty()) out.push_back(std::stoull(tok));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"personalized segmentation: adaptation, grouping and refinement pipeline"};
  app.require_subcommand(1);

  // synth-data
  auto* c_synth = app.add_subcommand("synth-data", "generate the two-domain fixture");
  std::string sy_out;
  std::uint64_t sy_seed = 0;
  int sy_users = 1, sy_source = 600, sy_personal = 600, sy_size = 64, sy_groups = 4,
      sy_classes = 4;
  double sy_val = 0.3, sy_bright = -0.08, sy_noise = 0.03, sy_fg_jitter = -1.0;
  c_synth->add_option("--out", sy_out, "output root")->required();
  c_synth->add_option("--seed", sy_seed, "generator seed");
  c_synth->add_option("--users", sy_users, "number of personal users");
  c_synth->add_option("--source-images", sy_source, "labeled source images");
  c_synth->add_option("--personal-images", sy_personal, "unlabeled personal images per user");
  c_synth->add_option("--size", sy_size, "square image size");
  c_synth->add_option("--groups", sy_groups, "true groups per user");
  c_synth->add_option("--classes", sy_classes, "class count incl. background");
  c_synth->add_option("--val-fraction", sy_val, "held-out label fraction");
  c_synth->add_option("--brightness-shift", sy_bright, "personal domain brightness offset");
  c_synth->add_option("--noise-shift", sy_noise, "personal domain extra noise sd");
  c_synth->add_option("--fg-jitter", sy_fg_jitter, "per-image foreground color jitter sd");

  // cluster
  auto* c_cluster = app.add_subcommand("cluster", "group the personal images");
  std::string cl_out, cl_mix = "personal", cl_descriptor = "pixel_stat", cl_ckpt;
  std::vector<std::string> cl_personal;
  std::uint64_t cl_seed = 1;
  int cl_k = 4;
  double cl_fraction = 0.0;
  c_cluster->add_option("--personal", cl_personal, "personal dataset root(s)")->required();
  c_cluster->add_option("--out", cl_out, "run directory")->required();
  c_cluster->add_option("--groups", cl_k, "number of groups");
  c_cluster->add_option("--seed", cl_seed, "clustering seed");
  c_cluster->add_option("--mix", cl_mix, "personal | mixall | mixsample");
  c_cluster->add_option("--mix-fraction", cl_fraction, "mixsample fraction (0 = 1/n)");
  c_cluster->add_option("--descriptor", cl_descriptor, "pixel_stat | backbone");
  c_cluster->add_option("--ckpt", cl_ckpt, "checkpoint for the backbone descriptor");

  // shared train flag block
  struct TrainFlags {
    std::string config, source, out, variant, backbone, adv_signal, source_context,
        region_norm, mix, fiou_mode;
    std::vector<std::string> personal;
    std::uint64_t seed = 0;
    int groups = 0, steps = 0, batch = 0, crop = 0, val_every = 0, step2_steps = 0;
    double lr = 0, disc_lr = 0, lambda_adv = 0, lambda_pse = 0, select_rate = 0,
           quantile = 0, mix_fraction = 0, aux_weight = 0;

    void add_to(CLI::App* c) {
      c->add_option("--config", config, "run config json to start from");
      c->add_option("--source", source, "labeled source dataset root");
      c->add_option("--personal", personal, "personal dataset root(s)");
      c->add_option("--out", out, "run directory")->required();
      c->add_option("--seed", seed, "training seed");
      c->add_option("--variant", variant, "none | global | group");
      c->add_option("--groups", groups, "number of groups");
      c->add_option("--steps", steps, "steps for this stage");
      c->add_option("--step2-steps", step2_steps, "step-2 budget (0 = same as --steps)");
      c->add_option("--batch", batch, "batch size");
      c->add_option("--crop", crop, "square crop (0 = full frames)");
      c->add_option("--lr", lr, "initial learning rate");
      c->add_option("--disc-lr", disc_lr, "discriminator learning rate");
      c->add_option("--lambda-adv", lambda_adv, "adversarial weight");
      c->add_option("--lambda-pse", lambda_pse, "pseudo label weight");
      c->add_option("--aux-weight", aux_weight, "auxiliary head weight");
      c->add_option("--select-rate", select_rate, "pseudo selection rate");
      c->add_option("--quantile", quantile, "pseudo pixel entropy quantile");
      c->add_option("--val-every", val_every, "validation cadence in steps");
      c->add_option("--backbone", backbone, "desk | resnet50_psp");
      c->add_option("--adv-signal", adv_signal, "entropy | self_information");
      c->add_option("--source-context", source_context, "personal | batch | none");
      c->add_option("--region-norm", region_norm, "softmax_spatial | softmax_only");
      c->add_option("--mix", mix, "personal | mixall | mixsample");
      c->add_option("--mix-fraction", mix_fraction, "mixsample fraction (0 = 1/n)");
      c->add_option("--fiou-mode", fiou_mode, "binary_foreground | present_class_mean");
    }

    RunConfig build(CLI::App* c, const RunConfig* from_run) const {
      RunConfig rc;
      if (c->count("--config")) {
        std::ifstream in(config);
        check(in.good(), "cannot open config: " + config);
        nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
        check(!j.is_discarded(), "unreadable config: " + config);
        rc = j.get<RunConfig>();
      } else if (from_run != nullptr) {
        rc = *from_run;
      }
      if (c->count("--source")) rc.source_root = source;
      if (c->count("--personal")) rc.personal_roots = personal;
      if (c->count("--seed")) rc.train.seed = seed;
      if (c->count("--variant")) rc.train.variant = variant_from_string(variant);
      if (c->count("--groups")) rc.train.groups = groups;
      if (c->count("--steps")) rc.train.steps = steps;
      if (c->count("--step2-steps")) rc.step2_steps = step2_steps;
      if (c->count("--batch")) rc.train.batch_size = batch;
      if (c->count("--crop")) rc.train.crop = crop;
      if (c->count("--lr")) rc.train.lr = lr;
      if (c->count("--disc-lr")) rc.train.disc_lr = disc_lr;
      if (c->count("--lambda-adv")) rc.train.lambda_adv = lambda_adv;
      if (c->count("--lambda-pse")) rc.train.lambda_pse = lambda_pse;
      if (c->count("--aux-weight")) rc.train.aux_weight = aux_weight;
      if (c->count("--select-rate")) rc.train.select_rate = select_rate;
      if (c->count("--quantile")) rc.train.pixel_quantile = quantile;
      if (c->count("--val-every")) rc.train.val_every = val_every;
      if (c->count("--backbone")) rc.train.backbone = backbone;
      if (c->count("--adv-signal")) rc.train.adv_signal = adv_signal_from_string(adv_signal);
      if (c->count("--source-context")) rc.train.source_context = source_context;
      if (c->count("--region-norm"))
        rc.train.region_norm = region_norm_from_string(region_norm);
      if (c->count("--mix")) rc.mix = mix;
      if (c->count("--mix-fraction")) rc.mix_fraction = mix_fraction;
      if (c->count("--fiou-mode")) rc.fiou_mode = fiou_mode;
      return rc;
    }
  };

  auto* c_s1 = app.add_subcommand("train-step1", "adversarial adaptation stage");
  TrainFlags f1;
  f1.add_to(c_s1);

  auto* c_s2 = app.add_subcommand("train-step2", "pseudo label refinement stage");
  TrainFlags f2;
  f2.add_to(c_s2);

  // select-pseudo
  auto* c_sel = app.add_subcommand("select-pseudo", "pick low-entropy pseudo labels");
  std::string sel_out, sel_ckpt = "ckpt_step1.bin";
  std::vector<std::string> sel_personal;
  double sel_rate = 0.0, sel_quantile = -1.0;
  c_sel->add_option("--out", sel_out, "run directory")->required();
  c_sel->add_option("--personal", sel_personal, "personal dataset root override");
  c_sel->add_option("--select-rate", sel_rate, "selection rate override");
  c_sel->add_option("--quantile", sel_quantile, "pixel entropy quantile override");
  c_sel->add_option("--ckpt", sel_ckpt, "checkpoint to select with");

  // eval
  auto* c_eval = app.add_subcommand("eval", "evaluate a checkpoint against hidden labels");
  std::string ev_out, ev_ckpt, ev_split = "val", ev_format = "text", ev_fiou;
  std::vector<std::string> ev_personal;
  c_eval->add_option("--out", ev_out, "run directory")->required();
  c_eval->add_option("--ckpt", ev_ckpt, "checkpoint name (default: step2 if present else step1)");
  c_eval->add_option("--personal", ev_personal, "personal dataset root override");
  c_eval->add_option("--split", ev_split, "val | all");
  c_eval->add_option("--format", ev_format, "text | json | csv");
  c_eval->add_option("--fiou-mode", ev_fiou, "binary_foreground | present_class_mean");

  // ablate
  auto* c_abl = app.add_subcommand("ablate", "cross-product comparison runs");
  TrainFlags fa;
  fa.add_to(c_abl);
  std::string ab_variants = "none,global,group", ab_ks, ab_mixes = "personal",
              ab_seeds = "1", ab_split = "val";
  c_abl->add_option("--variants", ab_variants, "comma list of context variants");
  c_abl->add_option("--k-values", ab_ks, "comma list of group counts");
  c_abl->add_option("--mixes", ab_mixes, "comma list of personal mixes");
  c_abl->add_option("--seeds", ab_seeds, "comma list of seeds");
  c_abl->add_option("--split", ab_split, "evaluation split: val | all");

  try {
    app.parse(argc, argv);

    if (app.got_subcommand(c_synth)) {
      do_synth(sy_out, sy_seed, sy_users, sy_source, sy_personal, sy_size, sy_groups,
               sy_classes, sy_val, sy_bright, sy_noise, sy_fg_jitter);
    } else if (app.got_subcommand(c_cluster)) {
      do_cluster(cl_out, cl_personal, cl_mix, cl_fraction, cl_k, cl_seed, cl_descriptor,
                 cl_ckpt);
    } else if (app.got_subcommand(c_s1)) {
      do_train(f1.out, f1.build(c_s1, nullptr), 1);
    } else if (app.got_subcommand(c_s2)) {
      RunConfig prev = read_run_config(f2.out);
      RunConfig rc = f2.build(c_s2, &prev);
      do_train(f2.out, rc, 2);
    } else if (app.got_subcommand(c_sel)) {
      do_select(sel_out, sel_personal, sel_rate, sel_quantile, sel_ckpt);
    } else if (app.got_subcommand(c_eval)) {
      EvalOut out = do_eval(ev_out, ev_ckpt, ev_personal, ev_split, ev_fiou);
      if (ev_format == "text") {
        std::cout << "checkpoint " << out.checkpoint << " (step " << out.step << ")\n"
                  << render_report(out.report);
      } else if (ev_format == "json") {
        std::cout << nlohmann::json{{"checkpoint", out.checkpoint},
                                    {"step", out.step},
                                    {"report", report_to_json(out.report)}}
                         .dump(2)
                  << "\n";
      } else if (ev_format == "csv") {
        std::cout << report_to_csv(out.report);
      } else {
        fail("unknown format: " + ev_format + " (text, json or csv)");
      }
    } else if (app.got_subcommand(c_abl)) {
      RunConfig base = fa.build(c_abl, nullptr);
      std::vector<std::string> variants, mixes;
      {
        std::istringstream in(ab_variants);
        std::string tok;
        while (std::getline(in, tok, ','))
          if (!tok.empty()) variants.push_back(tok);
      }
      {
        std::istringstream in(ab_mixes);
        std::string tok;
        while (std::getline(in, tok, ','))
          if (!tok.empty()) mixes.push_back(tok);
      }
      std::vector<int> ks;
      if (c_abl->count("--k-values")) {
        std::istringstream in(ab_ks);
        std::string tok;
        while (std::getline(in, tok, ','))
          if (!tok.empty()) ks.push_back(std::stoi(tok));
      } else {
        ks.push_back(base.train.groups);
      }
      do_ablate(fa.out, base, variants, ks, mixes, parse_seed_list(ab_seeds), ab_split);
    }
    return 0;
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
