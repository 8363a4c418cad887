// Acceptance gate: one line per criterion, [PASS] or [FAIL], nonzero exit on
// any failure. The heavy directional experiment runs last.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "perseg/gradcheck.hpp"
#include "perseg/training.hpp"

using namespace perseg;

namespace {

int g_failures = 0;

double now_s() {
  using clock = std::chrono::steady_clock;
  static const clock::time_point t0 = clock::now();
  return std::chrono::duration<double>(clock::now() - t0).count();
}

void report(const std::string& name, bool ok, const std::string& detail) {
  if (!ok) ++g_failures;
  std::cout << (ok ? "[PASS] " : "[FAIL] ") << name;
  if (!detail.empty()) std::cout << "  (" << detail << ")";
  std::cout << "\n" << std::flush;
}

template <class Fn>
void criterion(const std::string& name, Fn&& fn) {
  double t = now_s();
  try {
    std::string detail;
    bool ok = fn(detail);
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f s", now_s() - t);
    report(name, ok, detail.empty() ? std::string(buf) : detail + ", " + buf);
  } catch (const std::exception& e) {
    report(name, false, std::string("exception: ") + e.what());
  }
}

GroupContextParams<double> random_params(ParamStore<double>& store, int ch, int da,
                                         std::uint64_t seed) {
  Rng rng(seed);
  auto prm = GroupContextParams<double>::create(store, "ctx", ch, da, rng);
  for (auto& v : prm.fuse_w->value.v) v = rng.normal() * 0.3;
  for (auto& v : prm.fuse_b->value.v) v = rng.normal() * 0.1;
  return prm;
}

// ---- criterion 1: context math vs naive double loops ----

bool context_oracle(std::string& detail) {
  const std::int64_t n = 3, ch = 8, c = 5, hp = 4, wp = 4;
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(1000 + seed);
    Tensor<double> x4 = oracle::random_tensor({n, ch, hp, wp}, rng);
    Tensor<double> p4 = oracle::random_tensor({n, c, hp, wp}, rng, 1.5);
    ParamStore<double> store;
    auto prm = random_params(store, static_cast<int>(ch), 4, 2000 + seed);
    for (bool spatial : {true, false}) {
      RegionNorm norm = spatial ? RegionNorm::softmax_spatial : RegionNorm::softmax_only;
      Tape<double> tp;
      tp.grad_enabled = false;
      Value xv = tp.constant(x4), pv = tp.constant(p4);
      for (std::int64_t img = 0; img < n; ++img) {
        Tensor<double> xi({ch, hp, wp}), pi({c, hp, wp});
        std::copy_n(x4.v.begin() + img * ch * hp * wp, ch * hp * wp, xi.v.begin());
        std::copy_n(p4.v.begin() + img * c * hp * wp, c * hp * wp, pi.v.begin());
        Value f = extract_regions(tp, tp.constant(xi), tp.constant(pi), norm);
        worst = std::max(worst, max_abs_diff(tp.val(f), oracle::naive_regions(xi, pi, spatial)));
      }
      RegionBank<double> bank = build_region_bank(tp, xv, pv, norm);
      Tensor<double> nb = oracle::naive_bank(x4, p4, spatial);
      worst = std::max(worst, max_abs_diff(tp.val(bank.regions), nb));
      Value ctx = aggregate_group_context(tp, xv, bank, prm);
      worst = std::max(
          worst, max_abs_diff(tp.val(ctx),
                              oracle::naive_group_context(x4, nb, oracle::CtxWeights::from(prm))));
    }
  }
  char b[64];
  std::snprintf(b, sizeof b, "max abs diff %.2e", worst);
  detail = b;
  return worst < 1e-5;
}

// ---- criterion 2: analytic gradients vs central finite differences ----

bool gradient_suite(std::string& detail) {
  double worst = 0.0;
  int instances = 0;
  auto fold = [&](const GradCheckResult& r) {
    worst = std::max(worst, r.max_rel_err);
    ++instances;
  };

  // full context pipeline: regions -> bank -> attention -> fuse
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    Rng rng(300 + seed);
    std::int64_t n = rng.uniform_int(2, 3), ch = rng.uniform_int(3, 5);
    std::int64_t c = rng.uniform_int(2, 4), h = rng.uniform_int(3, 4), w = rng.uniform_int(3, 4);
    Tensor<double> x4 = oracle::random_tensor({n, ch, h, w}, rng);
    Tensor<double> p4 = oracle::random_tensor({n, c, h, w}, rng, 1.5);
    ParamStore<double> store;
    auto prm = random_params(store, static_cast<int>(ch), 2, 400 + seed);
    RegionNorm norm = seed % 2 ? RegionNorm::softmax_only : RegionNorm::softmax_spatial;
    bool global = seed >= 6;
    auto build = [&](Tape<double>& tp, Value xv, Value pv) {
      RegionBank<double> bank = build_region_bank(tp, xv, pv, norm);
      Value ctx = global ? global_group_context(tp, xv, bank, prm)
                         : aggregate_group_context(tp, xv, bank, prm);
      return ops::sum_all(tp, enhance_with_context(tp, xv, ctx, prm));
    };
    if (seed % 3 == 0) {
      fold(grad_check_params(store, [&](Tape<double>& tp) {
        return build(tp, tp.input(x4), tp.input(p4));
      }));
    } else {
      fold(grad_check_inputs({x4, p4}, [&](Tape<double>& tp, const std::vector<Value>& in) {
        return build(tp, in[0], in[1]);
      }));
    }
  }

  // pixel cross entropy on labeled masks
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    Rng rng(500 + seed);
    std::int64_t c = 4, h = 5, w = 5;
    Tensor<double> logits = oracle::random_tensor({2, c, h, w}, rng);
    std::vector<Mask> masks(2);
    for (auto& m : masks) {
      m.h = static_cast<int>(h);
      m.w = static_cast<int>(w);
      m.v.resize(static_cast<std::size_t>(h * w));
      for (auto& px : m.v) {
        std::int64_t r = rng.uniform_int(0, 5);
        px = static_cast<std::uint8_t>(r >= c ? 255 : r);
      }
    }
    masks[0].v[0] = 0;  // at least one counted pixel
    fold(grad_check_inputs({logits}, [&](Tape<double>& tp, const std::vector<Value>& in) {
      return segmentation_loss(tp, in[0], std::vector<const Mask*>{&masks[0], &masks[1]}).loss;
    }));
  }

  // adversarial generator loss through the map and a fixed discriminator
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    AdvSignal signal = seed % 2 ? AdvSignal::self_information : AdvSignal::entropy;
    DiscriminatorConfig dc;
    dc.in_ch = adv_signal_channels(signal, 3);
    auto disc = Discriminator<double>::create(dc, 600 + seed);
    Rng rng(700 + seed);
    Tensor<double> logits = oracle::random_tensor({1, 3, 8, 8}, rng);
    fold(grad_check_inputs({logits}, [&](Tape<double>& tp, const std::vector<Value>& in) {
      return generator_adversarial_loss(tp, disc, adversarial_map(tp, in[0], signal));
    }));
  }

  // pseudo label term: cross entropy against entropy-filtered argmax masks
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    Rng rng(800 + seed);
    std::int64_t c = 4, h = 4, w = 5;
    Tensor<double> logits = oracle::random_tensor({1, c, h, w}, rng);
    Mask argmax;
    argmax.h = static_cast<int>(h);
    argmax.w = static_cast<int>(w);
    argmax.v.resize(static_cast<std::size_t>(h * w));
    std::vector<float> entropy(static_cast<std::size_t>(h * w));
    for (std::int64_t i = 0; i < h * w; ++i) {
      argmax.v[static_cast<std::size_t>(i)] =
          static_cast<std::uint8_t>(rng.uniform_int(0, c - 1));
      entropy[static_cast<std::size_t>(i)] = static_cast<float>(rng.uniform());
    }
    Mask pseudo = mask_by_quantile(argmax, entropy, 0.6);
    pseudo.v[0] = 0;
    fold(grad_check_inputs({logits}, [&](Tape<double>& tp, const std::vector<Value>& in) {
      return segmentation_loss(tp, in[0], std::vector<const Mask*>{&pseudo}).loss;
    }));
  }

  char b[96];
  std::snprintf(b, sizeof b, "%d instances, max rel err %.2e", instances, worst);
  detail = b;
  return instances >= 20 && worst < 1e-3;
}

// ---- criterion 3: normalization invariants ----

bool normalization_invariants(std::string& detail) {
  // attention rows are a probability distribution over the bank
  Rng rng(31);
  Tensor<double> x4 = oracle::random_tensor({2, 6, 4, 4}, rng);
  Tensor<double> p4 = oracle::random_tensor({2, 3, 4, 4}, rng, 1.5);
  ParamStore<double> store;
  auto prm = random_params(store, 6, 3, 32);
  Tape<double> tp;
  tp.grad_enabled = false;
  RegionBank<double> bank =
      build_region_bank(tp, tp.constant(x4), tp.constant(p4), RegionNorm::softmax_spatial);
  Tensor<double> att;
  aggregate_group_context(tp, tp.constant(x4), bank, prm, &att);
  double row_err = 0.0;
  for (std::int64_t r = 0; r < att.dim(0); ++r) {
    double s = 0.0;
    for (std::int64_t j = 0; j < att.dim(1); ++j) s += att.at2(r, j);
    row_err = std::max(row_err, std::abs(s - 1.0));
  }

  // entropy maps: bounded, maximal at uniform, zero at one-hot
  const std::int64_t c = 5, hw = 16;
  Tensor<double> logits = oracle::random_tensor({1, c, 4, 4}, rng, 2.0);
  Value ent = adversarial_map(tp, tp.constant(logits), AdvSignal::entropy);
  double lo = 1e300, hi = -1e300;
  for (double v : tp.val(ent).v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  bool bounded = lo >= 0.0 && hi <= std::log(double(c)) + 1e-9;

  Value uent = adversarial_map(tp, tp.constant(Tensor<double>::full({1, c, 4, 4}, 0.7)),
                               AdvSignal::entropy);
  double uniform_err = 0.0;
  for (double v : tp.val(uent).v) uniform_err = std::max(uniform_err, std::abs(v - std::log(double(c))));

  Tensor<double> onehot = Tensor<double>::zeros({1, c, 4, 4});
  for (std::int64_t i = 0; i < hw; ++i) onehot.at((i % c) * hw + i) = 40.0;
  Value oent = adversarial_map(tp, tp.constant(onehot), AdvSignal::entropy);
  double onehot_err = 0.0;
  for (double v : tp.val(oent).v) onehot_err = std::max(onehot_err, std::abs(v));

  char b[128];
  std::snprintf(b, sizeof b, "row sum err %.1e, uniform err %.1e, one-hot %.1e", row_err,
                uniform_err, onehot_err);
  detail = b;
  return row_err < 1e-6 && bounded && uniform_err < 1e-6 && onehot_err < 1e-6;
}

// ---- criterion 4: identity-initialized fusion leaves logits unchanged ----

bool identity_equivalence(std::string& detail) {
  Rng rng(41);
  Tensor<real_t> imgs({3, 3, 16, 16});
  for (auto& v : imgs.v) v = static_cast<real_t>(rng.uniform());
  std::vector<Tensor<real_t>> outs;
  for (auto variant : {ContextVariant::none, ContextVariant::group, ContextVariant::global}) {
    SegModelConfig cfg;
    cfg.class_count = 5;
    cfg.variant = variant;
    auto m = SegModel<real_t>::create(cfg, 17);
    Tape<real_t> tp;
    tp.grad_enabled = false;
    auto f = m.forward(tp, tp.constant(imgs));
    outs.push_back(tp.val(f.logits));
  }
  double d_group = max_abs_diff(outs[0], outs[1]);
  double d_global = max_abs_diff(outs[0], outs[2]);
  char b[64];
  std::snprintf(b, sizeof b, "group diff %.1e, global diff %.1e", d_group, d_global);
  detail = b;
  return d_group <= 1e-6 && d_global <= 1e-6;
}

// ---- criterion 5: metric oracle ----

bool metric_oracle(std::string& detail) {
  const int classes = 4;
  Rng rng(51);
  std::vector<std::pair<const Mask*, const Mask*>> pairs;
  std::vector<Mask> preds(100), gts(100);
  for (int i = 0; i < 100; ++i) {
    preds[i].h = gts[i].h = 8;
    preds[i].w = gts[i].w = 8;
    preds[i].v.resize(64);
    gts[i].v.resize(64);
    for (int px = 0; px < 64; ++px) {
      preds[i].v[static_cast<std::size_t>(px)] =
          static_cast<std::uint8_t>(rng.uniform_int(0, classes - 1));
      std::int64_t g = rng.uniform_int(0, classes);  // classes means ignore
      gts[i].v[static_cast<std::size_t>(px)] =
          static_cast<std::uint8_t>(g == classes ? 255 : g);
    }
    pairs.push_back({&preds[i], &gts[i]});
  }

  // counting oracle over all pairs
  std::vector<long long> inter(classes, 0), uni(classes, 0);
  for (int i = 0; i < 100; ++i)
    for (int px = 0; px < 64; ++px) {
      int p = preds[i].v[static_cast<std::size_t>(px)];
      int g = gts[i].v[static_cast<std::size_t>(px)];
      if (g == 255) continue;
      if (p == g) ++inter[static_cast<std::size_t>(p)];
      if (p == g)
        ++uni[static_cast<std::size_t>(p)];
      else {
        ++uni[static_cast<std::size_t>(p)];
        ++uni[static_cast<std::size_t>(g)];
      }
    }

  Confusion conf(classes);
  for (auto& [p, g] : pairs) conf.add(*p, *g);
  double msum = 0.0;
  int mcount = 0;
  for (int cls = 0; cls < classes; ++cls) {
    auto iou = class_iou(conf, cls);
    if (uni[static_cast<std::size_t>(cls)] == 0) {
      if (iou.has_value()) {
        detail = "class " + std::to_string(cls) + " should be absent";
        return false;
      }
      continue;
    }
    double expect = double(inter[static_cast<std::size_t>(cls)]) /
                    double(uni[static_cast<std::size_t>(cls)]);
    if (!iou.has_value() || *iou != expect) {
      detail = "class iou mismatch at class " + std::to_string(cls);
      return false;
    }
    msum += expect;
    ++mcount;
  }
  auto miou = mean_iou(conf);
  if (!miou.has_value() || *miou != msum / mcount) {
    detail = "miou mismatch";
    return false;
  }

  // per-image foreground oracle
  double fsum = 0.0;
  int fcount = 0;
  for (int i = 0; i < 100; ++i) {
    long long fi = 0, fu = 0;
    for (int px = 0; px < 64; ++px) {
      bool p = preds[i].v[static_cast<std::size_t>(px)] > 0;
      int g = gts[i].v[static_cast<std::size_t>(px)];
      if (g == 255) continue;
      if (p && g > 0) ++fi;
      if (p || g > 0) ++fu;
    }
    auto got = foreground_iou(preds[i], gts[i]);
    if (fu == 0) {
      if (got.has_value()) {
        detail = "image " + std::to_string(i) + " should have null fiou";
        return false;
      }
      continue;
    }
    if (!got.has_value() || *got != double(fi) / double(fu)) {
      detail = "fiou mismatch at image " + std::to_string(i);
      return false;
    }
    fsum += *got;
    ++fcount;
  }
  UserEval ue = evaluate_user("u0", pairs, classes);
  if (!ue.fiou.has_value() || std::abs(*ue.fiou - fsum / fcount) > 1e-12) {
    detail = "user fiou aggregation mismatch";
    return false;
  }
  if (!ue.miou.has_value() || *ue.miou != *miou) {
    detail = "user miou aggregation mismatch";
    return false;
  }

  // report rendering in the three published shapes: per-user columns with
  // mean, per-class rows, csv and json forms
  UserEval other = evaluate_user("u1", pairs, classes);
  other.user = "u1";
  EvalReport rep = make_report({ue, other}, classes);
  std::string txt = render_report(rep);
  bool rendered = txt.find("miou") != std::string::npos &&
                  txt.find("fiou") != std::string::npos &&
                  txt.find("mean") != std::string::npos &&
                  txt.find("iou_0") != std::string::npos;
  std::string csv = report_to_csv(rep);
  rendered = rendered && csv.rfind("metric,", 0) == 0;
  EvalReport back = report_from_json(report_to_json(rep));
  rendered = rendered && back.users.size() == 2 &&
             back.mean_fiou.value_or(-1) == rep.mean_fiou.value_or(-2);
  if (!rendered) {
    detail = "report rendering incomplete";
    return false;
  }
  detail = "100 pairs exact, reports render";
  return true;
}

// ---- criterion 6: pseudo selection contract ----

bool pseudo_selection(std::string& detail) {
  std::vector<std::pair<std::string, double>> entries;
  for (int i = 0; i < 100; ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "img_%03d", i);
    entries.push_back({id, 0.01 * double(i / 2)});  // every value tied once
  }
  std::vector<std::string> a = rank_and_select(entries, 0.5);
  std::vector<std::string> b = rank_and_select(entries, 0.5);
  if (a.size() != 50) {
    detail = "selected " + std::to_string(a.size()) + " of 100 at r=0.5";
    return false;
  }
  if (a != b) {
    detail = "selection not deterministic";
    return false;
  }
  // ties resolved by id: the kept set is exactly the 50 lowest (entropy, id)
  std::vector<std::string> expect;
  for (int i = 0; i < 50; ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "img_%03d", i);
    expect.push_back(id);
  }
  std::vector<std::string> sorted_a = a;
  std::sort(sorted_a.begin(), sorted_a.end());
  if (sorted_a != expect) {
    detail = "tie-break did not keep lowest ids";
    return false;
  }

  Mask argmax;
  argmax.h = 2;
  argmax.w = 5;
  argmax.v.assign(10, 1);
  std::vector<float> ent(10);
  for (int i = 0; i < 10; ++i) ent[static_cast<std::size_t>(i)] = 0.1f * float(i);
  Mask all = mask_by_quantile(argmax, ent, 0.0);
  Mask none = mask_by_quantile(argmax, ent, 1.0);
  int masked_all = 0, masked_none = 0;
  for (int i = 0; i < 10; ++i) {
    masked_all += all.v[static_cast<std::size_t>(i)] == 255;
    masked_none += none.v[static_cast<std::size_t>(i)] == 255;
  }
  if (masked_all != 10 || masked_none != 0) {
    detail = "quantile endpoints masked " + std::to_string(masked_all) + "/" +
             std::to_string(masked_none);
    return false;
  }
  detail = "50 of 100, deterministic ties, endpoints ok";
  return true;
}

// ---- criterion 7: clustering and group-pure batching ----

bool kmeans_batching(std::string& detail) {
  for (std::uint64_t seed : {3u, 4u, 5u}) {
    Rng rng(900 + seed);
    std::vector<Descriptor> desc;
    for (int i = 0; i < 60; ++i) {
      char id[16];
      std::snprintf(id, sizeof id, "img_%03d", i);
      Descriptor d;
      d.id = id;
      d.vec.resize(5);
      for (auto& v : d.vec) v = static_cast<float>(rng.normal());
      desc.push_back(d);
    }
    GroupAssignment ga = kmeans_cluster(desc, 4, seed);
    for (std::size_t i = 1; i < ga.objective_log.size(); ++i)
      if (ga.objective_log[i] > ga.objective_log[i - 1] + 1e-9) {
        detail = "objective increased at iteration " + std::to_string(i);
        return false;
      }
    if (ga.group_of.size() != 60) {
      detail = "partition lost ids";
      return false;
    }
    for (const auto& d : desc) {
      auto it = ga.group_of.find(d.id);
      if (it == ga.group_of.end() || it->second < 0 || it->second >= 4) {
        detail = "bad assignment for " + d.id;
        return false;
      }
    }
    GroupAssignment ga2 = kmeans_cluster(desc, 4, seed);
    if (ga2.group_of != ga.group_of) {
      detail = "clustering not deterministic";
      return false;
    }
    auto batches = make_group_batches(ga, 8, derive_seed(seed, "batches"));
    auto batches2 = make_group_batches(ga, 8, derive_seed(seed, "batches"));
    if (batches != batches2) {
      detail = "batching not deterministic";
      return false;
    }
    std::set<std::string> seen;
    for (const auto& batch : batches) {
      int g = ga.group_of.at(batch.front());
      for (const auto& id : batch) {
        if (ga.group_of.at(id) != g) {
          detail = "mixed-group batch";
          return false;
        }
        seen.insert(id);
      }
    }
    if (seen.size() != 60) {
      detail = "batches dropped ids without drop_last";
      return false;
    }
  }
  detail = "3 seeds, objective monotone, batches pure";
  return true;
}

// ---- criteria 8 and 9: desk-scale directional experiment ----

struct SeedOutcome {
  double src_only = 0, adv = 0, adv_1k = 0, ours_s1 = 0, ours_s2 = 0;
};

TrainConfig desk_cfg(std::uint64_t seed) {
  TrainConfig cfg;
  cfg.class_count = 4;
  cfg.batch_size = 8;
  cfg.lr = 0.01;
  cfg.disc_lr = 0.004;
  cfg.pixel_quantile = 0.6;
  cfg.groups = 4;
  cfg.val_every = 0;
  cfg.source_context = "batch";
  cfg.seed = seed;
  return cfg;
}

double run_cell(const Dataset& source, const Dataset& personal,
                const std::map<std::string, Mask>& gt, const GroupAssignment& ga,
                TrainConfig cfg, ContextVariant variant, double lambda_adv, int steps,
                bool with_step2) {
  cfg.variant = variant;
  cfg.lambda_adv = lambda_adv;
  cfg.steps = steps;
  auto model = SegModel<real_t>::create(cfg.model_config(), derive_seed(cfg.seed, "model"));
  std::unique_ptr<Discriminator<real_t>> disc;
  if (lambda_adv > 0.0)
    disc = std::make_unique<Discriminator<real_t>>(
        Discriminator<real_t>::create(cfg.disc_config(), derive_seed(cfg.seed, "disc")));
  std::int64_t step =
      train_run(model, disc.get(), source, personal, &ga, nullptr, cfg, 0, nullptr);
  if (with_step2) {
    PseudoLabelSet pseudo = select_pseudo_labels(model, personal, &ga, cfg.select_rate,
                                                 cfg.pixel_quantile, cfg.batch_size);
    TrainConfig cfg2 = cfg;
    cfg2.steps = 800;
    train_run(model, disc.get(), source, personal, &ga, &pseudo, cfg2, step, nullptr);
  }
  UserEval ue = evaluate_model(model, personal, personal.val_ids, gt, &ga, cfg.batch_size,
                               personal.spec.user);
  return ue.fiou.value_or(0.0);
}

bool desk_experiment(std::vector<SeedOutcome>& out, std::string& detail) {
  SynthSpec sp;
  sp.seed = 42;
  sp.n_source = 600;
  sp.n_personal = 600;
  sp.image_size = 64;
  sp.n_groups = 4;
  sp.class_count = 4;
  sp.val_fraction = 0.2;
  sp.brightness_shift = -0.40;
  sp.noise_shift = 0.0;
  SynthOutput sy = generate_synthetic(sp);
  std::vector<Descriptor> desc = embed_images(sy.personal.unlabeled, pixel_stat_descriptor());

  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    GroupAssignment ga = kmeans_cluster(desc, 4, derive_seed(seed, "kmeans"));
    TrainConfig cfg = desk_cfg(seed);
    SeedOutcome o;
    o.src_only = run_cell(sy.source, sy.personal, sy.personal_gt, ga, cfg,
                          ContextVariant::none, 0.0, 1500, false);
    o.adv = run_cell(sy.source, sy.personal, sy.personal_gt, ga, cfg, ContextVariant::none,
                     1e-3, 1500, false);
    o.adv_1k = run_cell(sy.source, sy.personal, sy.personal_gt, ga, cfg, ContextVariant::none,
                        1e-3, 1000, false);
    // step-2 evaluates the same model object after the pseudo continuation,
    // so the step-1 score comes from a separate identical run
    o.ours_s1 = run_cell(sy.source, sy.personal, sy.personal_gt, ga, cfg,
                         ContextVariant::group, 1e-3, 1000, false);
    o.ours_s2 = run_cell(sy.source, sy.personal, sy.personal_gt, ga, cfg,
                         ContextVariant::group, 1e-3, 1000, true);
    out.push_back(o);
    std::printf(
        "  seed %llu: src-only %.4f | adv %.4f | none@1k %.4f | group@1k %.4f | +pseudo %.4f\n",
        static_cast<unsigned long long>(seed), o.src_only, o.adv, o.adv_1k, o.ours_s1,
        o.ours_s2);
    std::fflush(stdout);
  }
  detail = "5 seeds complete";
  return true;
}

// ---- criterion 10: run-to-run determinism of the metrics stream ----

bool determinism(std::string& detail) {
  SynthSpec sp;
  sp.seed = 5;
  sp.n_source = 24;
  sp.n_personal = 24;
  sp.image_size = 32;
  sp.n_groups = 2;
  sp.class_count = 4;
  sp.val_fraction = 0.25;
  SynthOutput sy = generate_synthetic(sp);
  GroupAssignment ga;
  ga.k = 2;
  ga.seed = 0;
  ga.group_of = sy.true_groups;

  TrainConfig cfg;
  cfg.class_count = 4;
  cfg.batch_size = 4;
  cfg.steps = 6;
  cfg.lambda_adv = 1e-3;
  cfg.groups = 2;
  cfg.val_every = 3;
  cfg.seed = 11;

  auto once = [&]() {
    auto model = SegModel<real_t>::create(cfg.model_config(), derive_seed(cfg.seed, "model"));
    auto disc = Discriminator<real_t>::create(cfg.disc_config(), derive_seed(cfg.seed, "disc"));
    std::ostringstream log;
    train_run(model, &disc, sy.source, sy.personal, &ga, nullptr, cfg, 0, &log,
              &sy.personal_gt);
    return log.str();
  };
  std::string first = once();
  std::string second = once();
  if (first != second) {
    detail = "metrics streams differ";
    return false;
  }
  char b[48];
  std::snprintf(b, sizeof b, "%zu identical bytes", first.size());
  detail = b;
  return true;
}

}  // namespace

int main() {
  std::cout << "acceptance gate\n";
  criterion("context math matches naive per-pixel oracles", context_oracle);
  criterion("analytic gradients match finite differences", gradient_suite);
  criterion("attention and entropy normalization invariants", normalization_invariants);
  criterion("identity-initialized context equals no-context", identity_equivalence);
  criterion("segmentation metrics match counting oracle", metric_oracle);
  criterion("pseudo-label selection contract", pseudo_selection);
  criterion("k-means objective, partition and batch purity", kmeans_batching);
  criterion("metrics stream is deterministic per seed", determinism);

  std::vector<SeedOutcome> seeds;
  double t_exp = now_s();
  std::string exp_detail;
  bool exp_ok = false;
  try {
    std::cout << "desk-scale directional experiment (5 seeds)\n" << std::flush;
    exp_ok = desk_experiment(seeds, exp_detail);
  } catch (const std::exception& e) {
    exp_detail = std::string("exception: ") + e.what();
  }
  double exp_minutes = (now_s() - t_exp) / 60.0;
  if (!exp_ok) {
    report("group context beats no-context on the fixture", false, exp_detail);
    report("adversarial adaptation beats source-only", false, exp_detail);
  } else {
    int ctx_wins = 0, s2_wins = 0, adv_wins = 0;
    for (const auto& o : seeds) {
      ctx_wins += o.ours_s1 > o.adv_1k;
      s2_wins += o.ours_s2 >= o.ours_s1;
      adv_wins += o.adv > o.src_only;
    }
    char b[128];
    std::snprintf(b, sizeof b, "context %d/5, step-2 %d/5, %.1f min", ctx_wins, s2_wins,
                  exp_minutes);
    report("group context beats no-context on the fixture", ctx_wins >= 4 && s2_wins >= 4,
           b);
    std::snprintf(b, sizeof b, "adaptation %d/5", adv_wins);
    report("adversarial adaptation beats source-only", adv_wins >= 4, b);
  }

  std::cout << (g_failures ? "ACCEPTANCE FAILED: " + std::to_string(g_failures) + " criteria\n"
                           : "ACCEPTANCE PASSED\n");
  return g_failures ? 1 : 0;
}
