#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <type_traits>
#include <utility>

#include "perseg/data.hpp"
#include "perseg/kmeans.hpp"
#include "perseg/losses.hpp"
#include "perseg/metrics.hpp"

namespace perseg {

// One config drives model construction, both training stages, selection and
// evaluation, so a run directory's config.json fully describes the run.
struct TrainConfig {
  std::string backbone = "desk";
  int class_count = 4;
  ContextVariant variant = ContextVariant::group;
  RegionNorm region_norm = RegionNorm::softmax_spatial;
  bool bank_stop_grad = true;
  int context_dim = 0;
  int attention_dim = 0;

  AdvSignal adv_signal = AdvSignal::entropy;
  // Bank used by the source forward: "personal" shares the personal batch's
  // bank, "batch" builds one from the source batch, "none" skips context on
  // the source pass.
  std::string source_context = "personal";

  int batch_size = 8;
  int crop = 0;  // 0 keeps full frames
  int steps = 2000;
  double lr = 2.5e-4;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double poly_power = 0.9;
  double disc_lr = 1e-4;
  double lambda_adv = 1e-3;
  double lambda_pse = 1.0;
  double aux_weight = 0.4;
  double select_rate = 0.5;
  double pixel_quantile = 0.8;
  int groups = 4;
  int val_every = 500;  // 0 disables in-training validation
  std::uint64_t seed = 1;

  SegModelConfig model_config() const {
    SegModelConfig m;
    m.backbone = backbone;
    m.class_count = class_count;
    m.variant = variant;
    m.region_norm = region_norm;
    m.bank_stop_grad = bank_stop_grad;
    m.context_dim = context_dim;
    m.attention_dim = attention_dim;
    return m;
  }

  DiscriminatorConfig disc_config() const {
    DiscriminatorConfig d;
    d.in_ch = adv_signal_channels(adv_signal, class_count);
    return d;
  }
};

void validate(const TrainConfig& cfg);
void to_json(nlohmann::json& j, const TrainConfig& cfg);
void from_json(const nlohmann::json& j, TrainConfig& cfg);

// lr * (1 - t/total)^power with t clamped to [0, total-1].
double poly_lr(double base, std::int64_t t, std::int64_t total, double power);

// Shuffled epochs over [0, n), fixed-size chunks, short tails dropped.
class BatchStream {
 public:
  BatchStream(std::int64_t n, int batch, std::uint64_t seed);
  std::vector<std::int64_t> next();

 private:
  std::int64_t n_;
  int b_;
  Rng rng_;
  std::vector<std::int64_t> order_;
  std::size_t pos_ = 0;
};

// Group-pure id batches, re-drawn each epoch with a per-epoch seed.
class GroupBatchStream {
 public:
  GroupBatchStream(GroupAssignment ga, int batch, std::uint64_t seed);
  const std::vector<std::string>& next();

 private:
  GroupAssignment ga_;
  int b_;
  std::uint64_t seed_;
  std::int64_t epoch_ = 0;
  std::vector<std::vector<std::string>> batches_;
  std::size_t pos_ = 0;
};

// All ids in one group; lets group-free configs reuse the group machinery.
GroupAssignment single_group_assignment(const std::vector<std::string>& ids);

GroupAssignment restrict_groups(const GroupAssignment& ga, const std::vector<std::string>& ids);

struct PseudoLabelSet {
  std::map<std::string, Mask> masks;  // values in {0..C-1, 255}
};

// Ascending mean entropy, ties by id; keeps floor(rate * n) entries and
// returns their ids in rank order.
std::vector<std::string> rank_and_select(std::vector<std::pair<std::string, double>> entries,
                                         double rate);

// Pixels whose entropy exceeds the image's nearest-rank q-quantile become
// 255. q <= 0 masks everything, q >= 1 nothing.
Mask mask_by_quantile(const Mask& argmax, const std::vector<float>& entropy, double q);

void save_pseudo_labels(const std::filesystem::path& dir, const PseudoLabelSet& set);
PseudoLabelSet load_pseudo_labels(const std::filesystem::path& dir, int class_count);

// ---- batch assembly ----

template <class T>
struct Batch {
  Tensor<T> images;         // [N,3,h,w]
  std::vector<Mask> masks;  // aligned with images when supervision exists
};

namespace traindetail {

// Copies one [3,H,W] image into row n of [N,3,c,c] out, cropped at (y0,x0).
template <class T>
void place_image(const Tensor<float>& img, Tensor<T>& out, std::int64_t n, int y0, int x0) {
  std::int64_t h = img.dim(1), w = img.dim(2);
  std::int64_t oh = out.dim(2), ow = out.dim(3);
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t y = 0; y < oh; ++y) {
      const float* src = img.v.data() + (c * h + y0 + y) * w + x0;
      T* dst = out.v.data() + ((n * 3 + c) * oh + y) * ow;
      for (std::int64_t x = 0; x < ow; ++x) dst[x] = static_cast<T>(src[x]);
    }
}

inline Mask crop_mask(const Mask& m, int y0, int x0, int size) {
  Mask out;
  out.h = out.w = size;
  out.v.resize(static_cast<std::size_t>(size) * size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) out.at(y, x) = m.at(y0 + y, x0 + x);
  return out;
}

inline std::pair<int, int> crop_offsets(std::int64_t h, std::int64_t w, int crop, Rng& rng) {
  check(crop <= h && crop <= w, "crop larger than image");
  int y0 = h > crop ? static_cast<int>(rng.uniform_int(0, h - crop)) : 0;
  int x0 = w > crop ? static_cast<int>(rng.uniform_int(0, w - crop)) : 0;
  return {y0, x0};
}

}  // namespace traindetail

template <class T>
Batch<T> assemble_source_batch(const Dataset& src, const std::vector<std::int64_t>& idx,
                               int crop, Rng& rng) {
  check(!idx.empty(), "assemble_source_batch: empty batch");
  const Tensor<float>& first = src.labeled[static_cast<std::size_t>(idx[0])].image;
  std::int64_t h = first.dim(1), w = first.dim(2);
  int ch = crop > 0 ? crop : static_cast<int>(h);
  int cw = crop > 0 ? crop : static_cast<int>(w);
  check(crop == 0 || (crop <= h && crop <= w), "crop larger than image");
  Batch<T> b;
  b.images = Tensor<T>({static_cast<std::int64_t>(idx.size()), 3, ch, cw});
  for (std::size_t n = 0; n < idx.size(); ++n) {
    const LabeledSample& s = src.labeled[static_cast<std::size_t>(idx[n])];
    check(s.image.dim(1) == h && s.image.dim(2) == w,
          "assemble_source_batch: image size mismatch at " + s.id);
    auto [y0, x0] = crop > 0 ? traindetail::crop_offsets(h, w, crop, rng)
                             : std::pair<int, int>{0, 0};
    traindetail::place_image(s.image, b.images, static_cast<std::int64_t>(n), y0, x0);
    b.masks.push_back(crop > 0 ? traindetail::crop_mask(s.mask, y0, x0, crop) : s.mask);
  }
  return b;
}

template <class T>
Batch<T> assemble_personal_batch(const Dataset& per, const std::vector<std::string>& ids,
                                 const std::map<std::string, std::size_t>& index_of, int crop,
                                 Rng& rng, const PseudoLabelSet* pseudo = nullptr) {
  check(!ids.empty(), "assemble_personal_batch: empty batch");
  auto it0 = index_of.find(ids[0]);
  check(it0 != index_of.end(), "assemble_personal_batch: unknown id " + ids[0]);
  const Tensor<float>& first = per.unlabeled[it0->second].image;
  std::int64_t h = first.dim(1), w = first.dim(2);
  int ch = crop > 0 ? crop : static_cast<int>(h);
  int cw = crop > 0 ? crop : static_cast<int>(w);
  check(crop == 0 || (crop <= h && crop <= w), "crop larger than image");
  Batch<T> b;
  b.images = Tensor<T>({static_cast<std::int64_t>(ids.size()), 3, ch, cw});
  for (std::size_t n = 0; n < ids.size(); ++n) {
    auto it = index_of.find(ids[n]);
    check(it != index_of.end(), "assemble_personal_batch: unknown id " + ids[n]);
    const UnlabeledSample& s = per.unlabeled[it->second];
    check(s.image.dim(1) == h && s.image.dim(2) == w,
          "assemble_personal_batch: image size mismatch at " + s.id);
    auto [y0, x0] = crop > 0 ? traindetail::crop_offsets(h, w, crop, rng)
                             : std::pair<int, int>{0, 0};
    traindetail::place_image(s.image, b.images, static_cast<std::int64_t>(n), y0, x0);
    if (pseudo != nullptr) {
      auto pit = pseudo->masks.find(s.id);
      check(pit != pseudo->masks.end(), "no pseudo label for " + s.id);
      b.masks.push_back(crop > 0 ? traindetail::crop_mask(pit->second, y0, x0, crop)
                                 : pit->second);
    }
  }
  return b;
}

// ---- optimizer ----

// Momentum SGD with decoupled-from-nothing classic weight decay folded into
// the gradient: v = m*v + g + wd*w; w -= lr*v. Parameters that received no
// gradient this step are left untouched.
template <class T>
void sgd_step(ParamStore<T>& ps, double lr, double momentum, double weight_decay) {
  for (std::size_t i = 0; i < ps.size(); ++i) {
    Param<T>& p = ps[i];
    if (p.grad.empty()) continue;
    if (p.momentum.empty()) p.momentum = Tensor<T>::zeros(p.value.shape);
    const T m = static_cast<T>(momentum), wd = static_cast<T>(weight_decay);
    const T step = static_cast<T>(lr);
    for (std::int64_t k = 0; k < p.value.numel(); ++k) {
      T v = m * p.momentum.at(k) + p.grad.at(k) + wd * p.value.at(k);
      p.momentum.at(k) = v;
      p.value.at(k) -= step * v;
    }
  }
}

// ---- prediction and selection ----

struct Prediction {
  Mask argmax;
  std::vector<float> entropy;  // per pixel at full resolution
  double mean_entropy = 0.0;
};

// Deterministic group-ordered batches (sorted ids chunked per group, short
// tails kept); each batch is forwarded with its own bank.
template <class T>
std::map<std::string, Prediction> predict_personal(SegModel<T>& model, const Dataset& personal,
                                                   const std::vector<std::string>& ids,
                                                   const GroupAssignment* groups,
                                                   int batch_size) {
  check(batch_size >= 1, "predict_personal: bad batch size");
  check(!ids.empty(), "predict_personal: no ids to predict");
  std::map<std::string, std::size_t> index_of;
  for (std::size_t i = 0; i < personal.unlabeled.size(); ++i)
    index_of[personal.unlabeled[i].id] = i;

  GroupAssignment ga =
      groups != nullptr ? restrict_groups(*groups, ids) : single_group_assignment(ids);
  std::map<std::string, Prediction> out;
  for (const auto& members : ids_by_group(ga)) {
    for (std::size_t beg = 0; beg < members.size(); beg += static_cast<std::size_t>(batch_size)) {
      std::size_t end = std::min(members.size(), beg + static_cast<std::size_t>(batch_size));
      std::vector<std::string> batch_ids(members.begin() + static_cast<std::ptrdiff_t>(beg),
                                         members.begin() + static_cast<std::ptrdiff_t>(end));
      Rng no_aug(0);
      Batch<T> b = assemble_personal_batch<T>(personal, batch_ids, index_of, 0, no_aug);
      Tape<T> tp;
      tp.grad_enabled = false;
      auto f = model.forward(tp, tp.constant(std::move(b.images)));
      Value probs = ops::softmax_channel(tp, f.logits);
      Value ent = ops::entropy_channel(tp, probs);
      const Tensor<T>& P = tp.val(probs);
      const Tensor<T>& E = tp.val(ent);
      std::int64_t c = P.dim(1), h = P.dim(2), w = P.dim(3), hw = h * w;
      for (std::size_t n = 0; n < batch_ids.size(); ++n) {
        Prediction pred;
        pred.argmax.h = static_cast<int>(h);
        pred.argmax.w = static_cast<int>(w);
        pred.argmax.v.resize(static_cast<std::size_t>(hw));
        const T* pp = P.v.data() + static_cast<std::int64_t>(n) * c * hw;
        for (std::int64_t i = 0; i < hw; ++i) {
          int best = 0;
          T bv = pp[i];
          for (std::int64_t k = 1; k < c; ++k)
            if (pp[k * hw + i] > bv) {
              bv = pp[k * hw + i];
              best = static_cast<int>(k);
            }
          pred.argmax.v[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(best);
        }
        const T* ep = E.v.data() + static_cast<std::int64_t>(n) * hw;
        pred.entropy.resize(static_cast<std::size_t>(hw));
        double sum = 0.0;
        for (std::int64_t i = 0; i < hw; ++i) {
          pred.entropy[static_cast<std::size_t>(i)] = static_cast<float>(ep[i]);
          sum += static_cast<double>(ep[i]);
        }
        pred.mean_entropy = sum / static_cast<double>(hw);
        out[batch_ids[n]] = std::move(pred);
      }
    }
  }
  return out;
}

// Images ranked ascending by mean prediction entropy; the easiest
// floor(rate*n) keep their argmax maps with high-entropy pixels masked out.
template <class T>
PseudoLabelSet select_pseudo_labels(SegModel<T>& model, const Dataset& personal,
                                    const GroupAssignment* groups, double rate, double quantile,
                                    int batch_size) {
  check(!personal.unlabeled.empty(), "select_pseudo_labels: empty personal set");
  std::vector<std::string> ids;
  for (const auto& s : personal.unlabeled) ids.push_back(s.id);
  auto preds = predict_personal(model, personal, ids, groups, batch_size);
  std::vector<std::pair<std::string, double>> entries;
  for (const auto& [id, p] : preds) entries.push_back({id, p.mean_entropy});
  PseudoLabelSet set;
  for (const std::string& id : rank_and_select(std::move(entries), rate)) {
    const Prediction& p = preds.at(id);
    set.masks[id] = mask_by_quantile(p.argmax, p.entropy, quantile);
  }
  return set;
}

template <class T>
UserEval evaluate_model(SegModel<T>& model, const Dataset& personal,
                        const std::vector<std::string>& ids,
                        const std::map<std::string, Mask>& gt, const GroupAssignment* groups,
                        int batch_size, const std::string& user,
                        FiouMode fiou_mode = FiouMode::binary_foreground) {
  auto preds = predict_personal(model, personal, ids, groups, batch_size);
  std::vector<std::pair<const Mask*, const Mask*>> pairs;
  for (const std::string& id : ids) {
    auto git = gt.find(id);
    check(git != gt.end(), "evaluate_model: no ground truth for " + id);
    pairs.push_back({&preds.at(id).argmax, &git->second});
  }
  return evaluate_user(user, pairs, model.cfg.class_count, fiou_mode);
}

// ---- training loop ----

namespace traindetail {

inline void emit(std::ostream* metrics, std::int64_t step, const std::string& name,
                 double value) {
  if (metrics == nullptr) return;
  nlohmann::json j{{"step", step}, {"name", name}, {"value", value}};
  *metrics << j.dump() << "\n";
}

template <class T>
std::vector<Tensor<T>> snapshot_values(const ParamStore<T>& ps) {
  std::vector<Tensor<T>> out;
  for (std::size_t i = 0; i < ps.size(); ++i) out.push_back(ps[i].value);
  return out;
}

template <class T>
void restore_values(ParamStore<T>& ps, const std::vector<Tensor<T>>& snap) {
  for (std::size_t i = 0; i < ps.size(); ++i) ps[i].value = snap[i];
}

}  // namespace traindetail

// Shared loop of both stages: stage 2 is stage 1 plus the pseudo-label term,
// enabled by passing a pseudo set. Personal data is used when the
// adversarial weight is positive or pseudo labels are given. Throws after
// restoring the last in-memory snapshot if any loss turns non-finite.
// Returns start_step + cfg.steps.
template <class T>
std::int64_t train_run(SegModel<T>& model, std::type_identity_t<Discriminator<T>>* disc,
                       const Dataset& source, const Dataset& personal,
                       const GroupAssignment* groups, const PseudoLabelSet* pseudo,
                       const TrainConfig& cfg, std::int64_t start_step, std::ostream* metrics,
                       const std::map<std::string, Mask>* val_gt = nullptr) {
  validate(cfg);
  check(!source.labeled.empty(), "train: source set has no labeled samples");
  check(model.cfg.class_count == cfg.class_count, "train: model class count differs from config");
  const bool use_adv = cfg.lambda_adv > 0.0;
  const bool stage2 = pseudo != nullptr;
  const bool use_pseudo = stage2 && cfg.lambda_pse > 0.0 && !pseudo->masks.empty();
  const bool use_personal = use_adv || use_pseudo;
  check(!use_adv || disc != nullptr, "train: adversarial weight set but no discriminator");
  if (use_personal) check(!personal.unlabeled.empty(), "train: personal set is empty");

  std::map<std::string, std::size_t> per_index;
  std::vector<std::string> per_ids;
  for (std::size_t i = 0; i < personal.unlabeled.size(); ++i) {
    per_index[personal.unlabeled[i].id] = i;
    per_ids.push_back(personal.unlabeled[i].id);
  }
  GroupAssignment ga;
  if (!per_ids.empty()) {
    ga = groups != nullptr ? *groups : single_group_assignment(per_ids);
    if (use_personal)
      for (const auto& id : per_ids)
        check(ga.group_of.count(id) == 1, "train: group assignment misses id " + id);
  }

  BatchStream src_stream(static_cast<std::int64_t>(source.labeled.size()), cfg.batch_size,
                         derive_seed(cfg.seed, "source"));
  std::unique_ptr<GroupBatchStream> per_stream;
  if (use_adv)
    per_stream = std::make_unique<GroupBatchStream>(ga, cfg.batch_size,
                                                    derive_seed(cfg.seed, "personal"));
  std::unique_ptr<GroupBatchStream> pse_stream;
  if (use_pseudo) {
    std::vector<std::string> sel;
    for (const auto& [id, m] : pseudo->masks) {
      (void)m;
      check(per_index.count(id) == 1, "train: pseudo label for unknown id " + id);
      sel.push_back(id);
    }
    pse_stream = std::make_unique<GroupBatchStream>(restrict_groups(ga, sel), cfg.batch_size,
                                                    derive_seed(cfg.seed, "pseudo"));
  }
  Rng aug_src(derive_seed(cfg.seed, "aug/source"));
  Rng aug_per(derive_seed(cfg.seed, "aug/personal"));
  Rng aug_pse(derive_seed(cfg.seed, "aug/pseudo"));

  auto model_snap = traindetail::snapshot_values(model.params);
  std::vector<Tensor<T>> disc_snap;
  if (disc != nullptr) disc_snap = traindetail::snapshot_values(disc->params);
  const std::int64_t snapshot_every = cfg.val_every > 0 ? cfg.val_every : 100;

  auto abort_non_finite = [&](std::int64_t step) {
    traindetail::restore_values(model.params, model_snap);
    if (disc != nullptr) traindetail::restore_values(disc->params, disc_snap);
    fail("non-finite loss at step " + std::to_string(step) +
         "; parameters restored to the last snapshot");
  };

  for (std::int64_t t = 0; t < cfg.steps; ++t) {
    const std::int64_t step = start_step + t;
    const double lr_t = poly_lr(cfg.lr, t, cfg.steps, cfg.poly_power);
    const double dlr_t = poly_lr(cfg.disc_lr, t, cfg.steps, cfg.poly_power);
    model.params.zero_grads();
    if (disc != nullptr) disc->params.zero_grads();

    Tape<T> tg;

    // Personal forward first: its bank may serve the source forward.
    typename SegModel<T>::Forward pf;
    Value per_map;
    bool have_per = false;
    if (use_adv) {
      Batch<T> pb = assemble_personal_batch<T>(personal, per_stream->next(), per_index,
                                               cfg.crop, aug_per);
      pf = model.forward(tg, tg.constant(std::move(pb.images)));
      per_map = adversarial_map(tg, pf.logits, cfg.adv_signal);
      have_per = true;
    }

    Batch<T> sb = assemble_source_batch<T>(source, src_stream.next(), cfg.crop, aug_src);
    Value src_imgs = tg.constant(std::move(sb.images));
    const Tensor<T>& si = tg.val(src_imgs);
    std::int64_t sh = si.dim(2), sw = si.dim(3);

    const RegionBank<T>* src_bank = nullptr;
    std::optional<ContextVariant> src_variant;
    if (cfg.source_context == "none") {
      src_variant = ContextVariant::none;
    } else if (cfg.source_context == "personal" && have_per &&
               model.cfg.variant != ContextVariant::none) {
      src_bank = &pf.bank;
    }  // "batch" and bank-less cases build a self bank inside forward
    auto sf = model.forward(tg, src_imgs, src_bank, nullptr, src_variant);

    std::vector<const Mask*> src_masks;
    for (const Mask& m : sb.masks) src_masks.push_back(&m);
    auto l_seg = segmentation_loss(tg, sf.logits, src_masks);
    auto l_aux =
        segmentation_loss(tg, ops::bilinear_resize(tg, sf.aux_logits, sh, sw), src_masks);
    Value total = ops::add(tg, l_seg.loss, ops::scale(tg, l_aux.loss, cfg.aux_weight));

    Value l_adv;
    if (use_adv) {
      l_adv = generator_adversarial_loss(tg, *disc, per_map);
      total = ops::add(tg, total, ops::scale(tg, l_adv, cfg.lambda_adv));
    }

    ops::SegCE<T> l_pse;
    bool have_pse = false;
    if (use_pseudo) {
      Batch<T> qb = assemble_personal_batch<T>(personal, pse_stream->next(), per_index,
                                               cfg.crop, aug_pse, pseudo);
      auto qf = model.forward(tg, tg.constant(std::move(qb.images)));
      std::vector<const Mask*> qmasks;
      for (const Mask& m : qb.masks) qmasks.push_back(&m);
      l_pse = segmentation_loss(tg, qf.logits, qmasks);
      total = ops::add(tg, total, ops::scale(tg, l_pse.loss, cfg.lambda_pse));
      have_pse = true;
    }

    if (!tg.val(total).all_finite()) abort_non_finite(step);
    tg.backward(total);
    sgd_step(model.params, lr_t, cfg.momentum, cfg.weight_decay);

    double l_disc_v = 0.0;
    bool have_disc = false;
    if (use_adv) {
      Value src_map = adversarial_map(tg, sf.logits, cfg.adv_signal);
      disc->params.zero_grads();  // drop the generator pass's contamination
      Tape<T> td;
      Value ld = discriminator_loss(td, *disc, td.constant(tg.val(src_map)),
                                    td.constant(tg.val(per_map)));
      if (!td.val(ld).all_finite()) abort_non_finite(step);
      l_disc_v = static_cast<double>(td.val(ld).at(0));
      td.backward(ld);
      sgd_step(disc->params, dlr_t, cfg.momentum, cfg.weight_decay);
      have_disc = true;
    }

    bool params_ok = true;
    for (std::size_t i = 0; i < model.params.size() && params_ok; ++i)
      params_ok = model.params[i].value.all_finite();
    if (!params_ok) abort_non_finite(step);

    traindetail::emit(metrics, step, "l_seg", static_cast<double>(tg.val(l_seg.loss).at(0)));
    traindetail::emit(metrics, step, "l_aux", static_cast<double>(tg.val(l_aux.loss).at(0)));
    if (use_adv) traindetail::emit(metrics, step, "l_adv", static_cast<double>(tg.val(l_adv).at(0)));
    if (have_pse)
      traindetail::emit(metrics, step, "l_pse", static_cast<double>(tg.val(l_pse.loss).at(0)));
    if (have_disc) traindetail::emit(metrics, step, "l_disc", l_disc_v);
    traindetail::emit(metrics, step, "lr", lr_t);

    if ((t + 1) % snapshot_every == 0 || t + 1 == cfg.steps) {
      model_snap = traindetail::snapshot_values(model.params);
      if (disc != nullptr) disc_snap = traindetail::snapshot_values(disc->params);
    }
    if (val_gt != nullptr && cfg.val_every > 0 && (t + 1) % cfg.val_every == 0 &&
        !personal.val_ids.empty()) {
      UserEval e = evaluate_model(model, personal, personal.val_ids, *val_gt, &ga,
                                  cfg.batch_size, personal.spec.user);
      if (e.miou) traindetail::emit(metrics, step, "val_miou", *e.miou);
      if (e.fiou) traindetail::emit(metrics, step, "val_fiou", *e.fiou);
    }
  }
  return start_step + cfg.steps;
}

}  // namespace perseg
