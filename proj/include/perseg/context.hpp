#pragma once

#include <string>

#include "perseg/ops.hpp"

namespace perseg {

// How per-class region weights are normalized: plain per-pixel softmax over
// classes, optionally followed by an L1 normalization over the spatial
// extent so each region is a convex combination of pixel features.
enum class RegionNorm { softmax_spatial, softmax_only };

enum class ContextVariant { none, global, group };

inline std::string to_string(ContextVariant v) {
  switch (v) {
    case ContextVariant::none:
      return "none";
    case ContextVariant::global:
      return "global";
    default:
      return "group";
  }
}

inline ContextVariant variant_from_string(const std::string& s) {
  if (s == "none") return ContextVariant::none;
  if (s == "global") return ContextVariant::global;
  if (s == "group") return ContextVariant::group;
  fail("unknown context variant: " + s);
}

inline std::string to_string(RegionNorm n) {
  return n == RegionNorm::softmax_spatial ? "softmax_spatial" : "softmax_only";
}

inline RegionNorm region_norm_from_string(const std::string& s) {
  if (s == "softmax_spatial") return RegionNorm::softmax_spatial;
  if (s == "softmax_only") return RegionNorm::softmax_only;
  fail("unknown region normalization: " + s);
}

// Projections of the context attention block. fuse starts as [I | 0] with
// zero bias, so enhancement is exactly the identity until training moves it.
template <class T>
struct GroupContextParams {
  int ch = 0, da = 0;
  Param<T>* query_w = nullptr;
  Param<T>* query_b = nullptr;
  Param<T>* key_w = nullptr;
  Param<T>* key_b = nullptr;
  Param<T>* value_w = nullptr;
  Param<T>* value_b = nullptr;
  Param<T>* out_w = nullptr;
  Param<T>* out_b = nullptr;
  Param<T>* fuse_w = nullptr;
  Param<T>* fuse_b = nullptr;

  static GroupContextParams create(ParamStore<T>& store, const std::string& prefix, int ch,
                                   int da, Rng& rng) {
    check(ch >= 1 && da >= 1, "context params: ch and da must be positive");
    GroupContextParams p;
    p.ch = ch;
    p.da = da;
    p.query_w = &store.create(prefix + ".query.w", he_init<T>({da, ch}, ch, rng));
    p.query_b = &store.create(prefix + ".query.b", Tensor<T>::zeros({da}));
    p.key_w = &store.create(prefix + ".key.w", he_init<T>({da, ch}, ch, rng));
    p.key_b = &store.create(prefix + ".key.b", Tensor<T>::zeros({da}));
    p.value_w = &store.create(prefix + ".value.w", he_init<T>({ch, ch}, ch, rng));
    p.value_b = &store.create(prefix + ".value.b", Tensor<T>::zeros({ch}));
    p.out_w = &store.create(prefix + ".out.w", he_init<T>({ch, ch}, ch, rng));
    p.out_b = &store.create(prefix + ".out.b", Tensor<T>::zeros({ch}));
    Tensor<T> fuse({ch, 2 * ch});
    for (int i = 0; i < ch; ++i) fuse.at2(i, i) = T(1);
    p.fuse_w = &store.create(prefix + ".fuse.w", std::move(fuse));
    p.fuse_b = &store.create(prefix + ".fuse.b", Tensor<T>::zeros({ch}));
    return p;
  }
};

namespace ctxdetail {

template <class T>
Value affine(Tape<T>& tp, Param<T>& w, Param<T>& b, Value x) {
  return ops::add_bias_row(tp, ops::matmul(tp, tp.param(w), x), tp.param(b));
}

}  // namespace ctxdetail

// Soft class regions of one image. x: [CH,H,W] features, p: [C,H,W] class
// logits at the same resolution. Returns [C, CH]: per class, the pixel
// features pooled by that class's per-pixel probability.
template <class T>
Value extract_regions(Tape<T>& tp, Value x, Value p, RegionNorm norm) {
  const Tensor<T>& X = tp.val(x);
  const Tensor<T>& P = tp.val(p);
  check(X.rank() == 3, "extract_regions: features must be [CH,H,W]");
  check(P.rank() == 3, "extract_regions: logits must be [C,H,W]");
  check(X.dim(1) == P.dim(1) && X.dim(2) == P.dim(2),
        "extract_regions: spatial mismatch, features " + X.shape_str() + " vs logits " +
            P.shape_str());
  std::int64_t ch = X.dim(0), hw = X.dim(1) * X.dim(2), c = P.dim(0);
  Value x2 = ops::reshape(tp, x, {ch, hw});
  Value p2 = ops::reshape(tp, p, {c, hw});
  Value r = ops::softmax2(tp, p2, 0);  // per-pixel over classes
  if (norm == RegionNorm::softmax_spatial) r = ops::row_l1_normalize(tp, r);
  return ops::matmul(tp, r, ops::transpose2(tp, x2));
}

// Pooled regions of a batch, image-major: [N*C, CH].
template <class T>
struct RegionBank {
  Value regions;
  int n_images = 0;
  int n_classes = 0;
};

template <class T>
RegionBank<T> build_region_bank(Tape<T>& tp, Value x4, Value p4, RegionNorm norm) {
  const Tensor<T>& X = tp.val(x4);
  const Tensor<T>& P = tp.val(p4);
  check(X.rank() == 4 && P.rank() == 4, "build_region_bank: expected [N,*,H,W] inputs");
  check(X.dim(0) == P.dim(0), "build_region_bank: batch size mismatch");
  std::int64_t n_images = X.dim(0), n_classes = P.dim(1);
  std::vector<Value> parts;
  for (std::int64_t n = 0; n < n_images; ++n)
    parts.push_back(
        extract_regions(tp, ops::slice_n(tp, x4, n), ops::slice_n(tp, p4, n), norm));
  RegionBank<T> bank;
  bank.regions = ops::concat0(tp, parts);
  bank.n_images = static_cast<int>(n_images);
  bank.n_classes = static_cast<int>(n_classes);
  return bank;
}

// Per-pixel attention over the bank: scores are dot products of projected
// pixel queries and projected region keys, softmax-normalized over the bank;
// the context is the output projection of the attention-weighted projected
// regions. attention_out, when given, receives the [N*H*W, M] weights.
template <class T>
Value aggregate_group_context(Tape<T>& tp, Value x4, const RegionBank<T>& bank,
                              GroupContextParams<T>& prm, Tensor<T>* attention_out = nullptr) {
  const Tensor<T>& X = tp.val(x4);
  const Tensor<T>& B = tp.val(bank.regions);
  check(X.rank() == 4, "aggregate_group_context: features must be [N,CH,H,W]");
  check(B.rank() == 2, "aggregate_group_context: bank must be [M,CH]");
  check(B.dim(0) >= 1, "aggregate_group_context: empty region bank");
  check(B.dim(1) == X.dim(1), "aggregate_group_context: channel mismatch, features " +
                                  X.shape_str() + " vs bank " + B.shape_str());
  std::int64_t n = X.dim(0), ch = X.dim(1), h = X.dim(2), w = X.dim(3);

  Value x2 = ops::to_channel_major(tp, x4);            // [CH, NHW]
  Value b2 = ops::transpose2(tp, bank.regions);        // [CH, M]
  Value q = ctxdetail::affine(tp, *prm.query_w, *prm.query_b, x2);  // [Da, NHW]
  Value k = ctxdetail::affine(tp, *prm.key_w, *prm.key_b, b2);      // [Da, M]
  Value s = ops::matmul(tp, ops::transpose2(tp, q), k);             // [NHW, M]
  Value att = ops::softmax2(tp, s, 1);
  if (attention_out != nullptr) *attention_out = tp.val(att);
  Value v = ctxdetail::affine(tp, *prm.value_w, *prm.value_b, b2);  // [CH, M]
  Value agg = ops::matmul(tp, v, ops::transpose2(tp, att));         // [CH, NHW]
  Value ctx2 = ctxdetail::affine(tp, *prm.out_w, *prm.out_b, agg);
  return ops::from_channel_major(tp, ctx2, n, ch, h, w);
}

// Ablation: one context vector for all pixels, the transformed mean of the
// bank. Shares the value/out projections with the attention path.
template <class T>
Value global_group_context(Tape<T>& tp, Value x4, const RegionBank<T>& bank,
                           GroupContextParams<T>& prm) {
  const Tensor<T>& X = tp.val(x4);
  const Tensor<T>& B = tp.val(bank.regions);
  check(X.rank() == 4, "global_group_context: features must be [N,CH,H,W]");
  check(B.dim(0) >= 1, "global_group_context: empty region bank");
  check(B.dim(1) == X.dim(1), "global_group_context: channel mismatch");
  std::int64_t n = X.dim(0), ch = X.dim(1), h = X.dim(2), w = X.dim(3);

  Value b2 = ops::transpose2(tp, bank.regions);      // [CH, M]
  Value g = ops::mean_cols(tp, b2);                  // [CH, 1]
  Value v = ctxdetail::affine(tp, *prm.value_w, *prm.value_b, g);
  Value o = ctxdetail::affine(tp, *prm.out_w, *prm.out_b, v);
  Value ctx2 = ops::broadcast_cols(tp, o, n * h * w);
  return ops::from_channel_major(tp, ctx2, n, ch, h, w);
}

// Fuses features with their context through the [CH, 2CH] projection.
template <class T>
Value enhance_with_context(Tape<T>& tp, Value x4, Value ctx4, GroupContextParams<T>& prm) {
  const Tensor<T>& X = tp.val(x4);
  const Tensor<T>& C = tp.val(ctx4);
  check(X.shape == C.shape, "enhance_with_context: shape mismatch, features " + X.shape_str() +
                                " vs context " + C.shape_str());
  check(X.rank() == 4, "enhance_with_context: inputs must be [N,CH,H,W]");
  std::int64_t n = X.dim(0), ch = X.dim(1), h = X.dim(2), w = X.dim(3);
  Value x2 = ops::to_channel_major(tp, x4);
  Value c2 = ops::to_channel_major(tp, ctx4);
  Value cat = ops::concat0(tp, {x2, c2});  // [2CH, NHW]
  Value y2 = ctxdetail::affine(tp, *prm.fuse_w, *prm.fuse_b, cat);
  return ops::from_channel_major(tp, y2, n, ch, h, w);
}

}  // namespace perseg
