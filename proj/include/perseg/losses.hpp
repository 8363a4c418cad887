#pragma once

#include "perseg/image.hpp"
#include "perseg/networks.hpp"

namespace perseg {

// What the domain classifier sees: the scalar entropy map of the softmax
// output, or the per-class weighted self-information map.
enum class AdvSignal { entropy, self_information };

inline std::string to_string(AdvSignal s) {
  return s == AdvSignal::entropy ? "entropy" : "self_information";
}

inline AdvSignal adv_signal_from_string(const std::string& s) {
  if (s == "entropy") return AdvSignal::entropy;
  if (s == "self_information") return AdvSignal::self_information;
  fail("unknown adversarial signal: " + s);
}

inline int adv_signal_channels(AdvSignal s, int class_count) {
  return s == AdvSignal::entropy ? 1 : class_count;
}

// Batch label masks flattened to the per-pixel target vector, row-major per
// image. Rejects size mismatches between the masks.
inline std::vector<std::int32_t> flatten_masks(const std::vector<const Mask*>& masks) {
  check(!masks.empty(), "flatten_masks: no masks");
  std::vector<std::int32_t> target;
  int h = masks[0]->h, w = masks[0]->w;
  target.reserve(masks.size() * static_cast<std::size_t>(h) * static_cast<std::size_t>(w));
  for (const Mask* m : masks) {
    check(m != nullptr, "flatten_masks: null mask");
    check(m->h == h && m->w == w, "flatten_masks: mask size mismatch");
    for (std::uint8_t v : m->v) target.push_back(static_cast<std::int32_t>(v));
  }
  return target;
}

// Pixel-mean cross entropy with ignore label; serves both ground-truth and
// pseudo-label supervision.
template <class T>
ops::SegCE<T> segmentation_loss(Tape<T>& tp, Value logits, const std::vector<std::int32_t>& target,
                           std::int32_t ignore_label = 255) {
  return ops::softmax_xent_ignore(tp, logits, target, ignore_label);
}

template <class T>
ops::SegCE<T> segmentation_loss(Tape<T>& tp, Value logits, const std::vector<const Mask*>& masks,
                           std::int32_t ignore_label = 255) {
  return ops::softmax_xent_ignore(tp, logits, flatten_masks(masks), ignore_label);
}

// Map fed to the domain classifier, built from raw logits.
template <class T>
Value adversarial_map(Tape<T>& tp, Value logits, AdvSignal signal) {
  Value p = ops::softmax_channel(tp, logits);
  return signal == AdvSignal::entropy ? ops::entropy_channel(tp, p)
                                      : ops::selfinfo_channel(tp, p);
}

// Non-saturating generator objective: personal maps should read as source.
// Gradients flow through the map into the segmentation network.
template <class T>
Value generator_adversarial_loss(Tape<T>& tp, Discriminator<T>& disc, Value personal_map) {
  return ops::bce_logits_const(tp, disc.forward(tp, personal_map), 1.0);
}

// Domain classifier objective, averaged over both domains. Inputs are
// detached here, so only discriminator parameters receive gradients.
template <class T>
Value discriminator_loss(Tape<T>& tp, Discriminator<T>& disc, Value source_map,
                         Value personal_map) {
  Value ls = ops::bce_logits_const(tp, disc.forward(tp, ops::detach(tp, source_map)), 1.0);
  Value lp = ops::bce_logits_const(tp, disc.forward(tp, ops::detach(tp, personal_map)), 0.0);
  return ops::scale(tp, ops::add(tp, ls, lp), 0.5);
}

}  // namespace perseg
