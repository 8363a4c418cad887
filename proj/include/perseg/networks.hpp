#pragma once

#include <cstring>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "perseg/context.hpp"
#include "perseg/descriptors.hpp"

namespace perseg {

struct SegModelConfig {
  std::string backbone = "desk";  // "desk" or "resnet50_psp"
  int class_count = 4;
  ContextVariant variant = ContextVariant::group;
  RegionNorm region_norm = RegionNorm::softmax_spatial;
  bool bank_stop_grad = true;
  int context_dim = 0;    // 0 picks the backbone default
  int attention_dim = 0;  // 0 picks context_dim / 2

  int resolved_context_dim() const {
    if (context_dim > 0) return context_dim;
    return backbone == "resnet50_psp" ? 512 : 24;
  }
  int resolved_attention_dim() const {
    if (attention_dim > 0) return attention_dim;
    return std::max(1, resolved_context_dim() / 2);
  }

  bool operator==(const SegModelConfig& o) const {
    return backbone == o.backbone && class_count == o.class_count && variant == o.variant &&
           region_norm == o.region_norm && bank_stop_grad == o.bank_stop_grad &&
           resolved_context_dim() == o.resolved_context_dim() &&
           resolved_attention_dim() == o.resolved_attention_dim();
  }
};

inline void to_json(nlohmann::json& j, const SegModelConfig& c) {
  j = nlohmann::json{{"backbone", c.backbone},
                     {"class_count", c.class_count},
                     {"variant", to_string(c.variant)},
                     {"region_norm", to_string(c.region_norm)},
                     {"bank_stop_grad", c.bank_stop_grad},
                     {"context_dim", c.context_dim},
                     {"attention_dim", c.attention_dim}};
}

inline void from_json(const nlohmann::json& j, SegModelConfig& c) {
  c.backbone = j.at("backbone").get<std::string>();
  c.class_count = j.at("class_count").get<int>();
  c.variant = variant_from_string(j.at("variant").get<std::string>());
  c.region_norm = region_norm_from_string(j.at("region_norm").get<std::string>());
  c.bank_stop_grad = j.at("bank_stop_grad").get<bool>();
  c.context_dim = j.value("context_dim", 0);
  c.attention_dim = j.value("attention_dim", 0);
}

template <class T>
struct Conv {
  Param<T>* w = nullptr;
  Param<T>* b = nullptr;
  std::int64_t stride = 1, pad = 0, dilation = 1;

  static Conv create(ParamStore<T>& ps, const std::string& name, int cin, int cout, int k,
                     std::int64_t stride, std::int64_t pad, std::int64_t dilation, Rng& rng) {
    Conv c;
    c.w = &ps.create(name + ".w",
                     he_init<T>({cout, cin, k, k}, static_cast<std::int64_t>(cin) * k * k, rng));
    c.b = &ps.create(name + ".b", Tensor<T>::zeros({cout}));
    c.stride = stride;
    c.pad = pad;
    c.dilation = dilation;
    return c;
  }

  Value operator()(Tape<T>& tp, Value x) const {
    return ops::conv2d(tp, x, tp.param(*w), tp.param(*b), stride, pad, dilation);
  }
};

template <class T>
struct ChannelAffine {
  Param<T>* g = nullptr;
  Param<T>* b = nullptr;

  static ChannelAffine create(ParamStore<T>& ps, const std::string& name, int c) {
    ChannelAffine a;
    a.g = &ps.create(name + ".g", Tensor<T>::full({c}, T(1)));
    a.b = &ps.create(name + ".b", Tensor<T>::zeros({c}));
    return a;
  }

  Value operator()(Tape<T>& tp, Value x) const {
    return ops::channel_affine(tp, x, tp.param(*g), tp.param(*b));
  }
};

// 1x1 reduce, 3x3 (carries stride and dilation), 1x1 expand, residual add.
// Normalization is a per-channel affine; there are no batch statistics.
template <class T>
struct Bottleneck {
  Conv<T> c1, c2, c3, proj;
  ChannelAffine<T> a1, a2, a3, aproj;
  bool has_proj = false;

  static Bottleneck create(ParamStore<T>& ps, const std::string& name, int cin, int cmid,
                           int cout, std::int64_t stride, std::int64_t dilation, Rng& rng) {
    Bottleneck b;
    b.c1 = Conv<T>::create(ps, name + ".c1", cin, cmid, 1, 1, 0, 1, rng);
    b.a1 = ChannelAffine<T>::create(ps, name + ".a1", cmid);
    b.c2 = Conv<T>::create(ps, name + ".c2", cmid, cmid, 3, stride, dilation, dilation, rng);
    b.a2 = ChannelAffine<T>::create(ps, name + ".a2", cmid);
    b.c3 = Conv<T>::create(ps, name + ".c3", cmid, cout, 1, 1, 0, 1, rng);
    b.a3 = ChannelAffine<T>::create(ps, name + ".a3", cout);
    b.has_proj = cin != cout || stride != 1;
    if (b.has_proj) {
      b.proj = Conv<T>::create(ps, name + ".proj", cin, cout, 1, stride, 0, 1, rng);
      b.aproj = ChannelAffine<T>::create(ps, name + ".aproj", cout);
    }
    return b;
  }

  Value operator()(Tape<T>& tp, Value x) const {
    Value y = ops::relu(tp, a1(tp, c1(tp, x)));
    y = ops::relu(tp, a2(tp, c2(tp, y)));
    y = a3(tp, c3(tp, y));
    Value sc = has_proj ? aproj(tp, proj(tp, x)) : x;
    return ops::relu(tp, ops::add(tp, y, sc));
  }
};

namespace netdetail {

// Channel-wise concat of [N,Ci,H,W] tensors sharing N,H,W.
template <class T>
Value concat_channels(Tape<T>& tp, const std::vector<Value>& parts, std::int64_t n,
                      std::int64_t h, std::int64_t w) {
  std::vector<Value> rows;
  std::int64_t ctot = 0;
  rows.reserve(parts.size());
  for (Value p : parts) {
    ctot += tp.val(p).dim(1);
    rows.push_back(ops::to_channel_major(tp, p));
  }
  return ops::from_channel_major(tp, ops::concat0(tp, rows), n, ctot, h, w);
}

}  // namespace netdetail

// Segmentation network: encoder to stride-4 (desk) or stride-8 (resnet50_psp)
// features, an auxiliary class head on those features that also supplies the
// soft region logits, an optional context block, and a light decoder that is
// bilinearly upsampled back to the input size.
template <class T>
struct SegModel {
  SegModelConfig cfg;
  ParamStore<T> params;
  GroupContextParams<T> ctx;

  struct Desk {
    Conv<T> c1, c2, c3, c4;
  } desk;

  struct Resnet {
    Conv<T> stem;
    ChannelAffine<T> stem_a;
    std::vector<Bottleneck<T>> l1, l2, l3, l4;
    std::vector<Conv<T>> psp;
    std::vector<ChannelAffine<T>> psp_a;
    Conv<T> fuse;
    ChannelAffine<T> fuse_a;
  } rn;

  Conv<T> aux_head, dec1, dec2;

  static const std::vector<int>& psp_pool_sizes() {
    static const std::vector<int> sizes{1, 2, 3, 6};
    return sizes;
  }

  static SegModel create(SegModelConfig cfg, std::uint64_t seed) {
    check(cfg.class_count >= 2, "model: class_count must be at least 2");
    SegModel m;
    m.cfg = cfg;
    Rng rng(derive_seed(seed, "model"));
    int ch = cfg.resolved_context_dim();
    int da = cfg.resolved_attention_dim();
    ParamStore<T>& ps = m.params;

    if (cfg.backbone == "desk") {
      m.desk.c1 = Conv<T>::create(ps, "enc.c1", 3, 16, 3, 2, 1, 1, rng);
      m.desk.c2 = Conv<T>::create(ps, "enc.c2", 16, 24, 3, 2, 1, 1, rng);
      m.desk.c3 = Conv<T>::create(ps, "enc.c3", 24, 24, 3, 1, 1, 1, rng);
      m.desk.c4 = Conv<T>::create(ps, "enc.c4", 24, ch, 3, 1, 1, 1, rng);
    } else if (cfg.backbone == "resnet50_psp") {
      m.rn.stem = Conv<T>::create(ps, "enc.stem", 3, 64, 7, 2, 3, 1, rng);
      m.rn.stem_a = ChannelAffine<T>::create(ps, "enc.stem_a", 64);
      auto make_layer = [&](std::vector<Bottleneck<T>>& dst, const std::string& name, int cin,
                            int cmid, int cout, int blocks, std::int64_t stride,
                            std::int64_t dilation) {
        for (int i = 0; i < blocks; ++i)
          dst.push_back(Bottleneck<T>::create(ps, name + "." + std::to_string(i),
                                              i == 0 ? cin : cout, cmid, cout,
                                              i == 0 ? stride : 1, dilation, rng));
      };
      make_layer(m.rn.l1, "enc.l1", 64, 64, 256, 3, 1, 1);
      make_layer(m.rn.l2, "enc.l2", 256, 128, 512, 4, 2, 1);
      make_layer(m.rn.l3, "enc.l3", 512, 256, 1024, 6, 1, 2);
      make_layer(m.rn.l4, "enc.l4", 1024, 512, 2048, 3, 1, 4);
      for (std::size_t i = 0; i < psp_pool_sizes().size(); ++i) {
        m.rn.psp.push_back(
            Conv<T>::create(ps, "enc.psp" + std::to_string(i), 2048, 512, 1, 1, 0, 1, rng));
        m.rn.psp_a.push_back(ChannelAffine<T>::create(ps, "enc.psp_a" + std::to_string(i), 512));
      }
      m.rn.fuse = Conv<T>::create(ps, "enc.fuse", 2048 + 4 * 512, ch, 3, 1, 1, 1, rng);
      m.rn.fuse_a = ChannelAffine<T>::create(ps, "enc.fuse_a", ch);
    } else {
      fail("unknown backbone: " + cfg.backbone);
    }

    m.ctx = GroupContextParams<T>::create(ps, "ctx", ch, da, rng);
    m.aux_head = Conv<T>::create(ps, "aux", ch, cfg.class_count, 1, 1, 0, 1, rng);
    m.dec1 = Conv<T>::create(ps, "dec.c1", ch, ch, 3, 1, 1, 1, rng);
    m.dec2 = Conv<T>::create(ps, "dec.c2", ch, cfg.class_count, 1, 1, 0, 1, rng);
    return m;
  }

  // Encoder features [N, CH, h', w'].
  Value encode(Tape<T>& tp, Value images) const {
    const Tensor<T>& X = tp.val(images);
    check(X.rank() == 4 && X.dim(1) == 3, "encode: input must be [N,3,H,W]");
    if (cfg.backbone == "desk") {
      Value y = ops::relu(tp, desk.c1(tp, images));
      y = ops::relu(tp, desk.c2(tp, y));
      y = ops::relu(tp, desk.c3(tp, y));
      return ops::relu(tp, desk.c4(tp, y));
    }
    Value y = ops::relu(tp, rn.stem_a(tp, rn.stem(tp, images)));
    y = ops::maxpool2d(tp, y, 3, 2, 1);
    for (const auto& b : rn.l1) y = b(tp, y);
    for (const auto& b : rn.l2) y = b(tp, y);
    for (const auto& b : rn.l3) y = b(tp, y);
    for (const auto& b : rn.l4) y = b(tp, y);
    const Tensor<T>& F = tp.val(y);
    std::int64_t n = F.dim(0), h = F.dim(2), w = F.dim(3);
    std::vector<Value> parts{y};
    for (std::size_t i = 0; i < rn.psp.size(); ++i) {
      int s = psp_pool_sizes()[i];
      Value p = ops::adaptive_avg_pool2d(tp, y, s, s);
      p = ops::relu(tp, rn.psp_a[i](tp, rn.psp[i](tp, p)));
      parts.push_back(ops::bilinear_resize(tp, p, h, w));
    }
    Value cat = netdetail::concat_channels(tp, parts, n, h, w);
    return ops::relu(tp, rn.fuse_a(tp, rn.fuse(tp, cat)));
  }

  struct Forward {
    Value logits;      // [N, C, H, W], input resolution
    Value aux_logits;  // [N, C, h', w'], feature resolution
    Value features;    // [N, CH, h', w'], before context
    Value enhanced;    // [N, CH, h', w'], after context fusion
    RegionBank<T> bank;  // bank this pass used; regions invalid for "none"
  };

  // bank, when given, must live on the same tape; nullptr builds a bank from
  // this batch's own features and aux logits (the group batch is the group).
  // variant_override swaps the context variant for this pass only.
  Forward forward(Tape<T>& tp, Value images, const RegionBank<T>* bank = nullptr,
                  Tensor<T>* attention_out = nullptr,
                  std::optional<ContextVariant> variant_override = std::nullopt) {
    const ContextVariant variant = variant_override.value_or(cfg.variant);
    const Tensor<T>& X = tp.val(images);
    std::int64_t h = X.dim(2), w = X.dim(3);
    Forward f;
    f.features = encode(tp, images);
    f.aux_logits = aux_head(tp, f.features);
    f.enhanced = f.features;
    if (variant != ContextVariant::none) {
      RegionBank<T> rb;
      if (bank != nullptr) {
        rb = *bank;
      } else {
        rb = build_region_bank(tp, f.features, f.aux_logits, cfg.region_norm);
      }
      if (cfg.bank_stop_grad) rb.regions = ops::detach(tp, rb.regions);
      Value c = variant == ContextVariant::group
                    ? aggregate_group_context(tp, f.enhanced, rb, ctx, attention_out)
                    : global_group_context(tp, f.enhanced, rb, ctx);
      f.enhanced = enhance_with_context(tp, f.features, c, ctx);
      f.bank = rb;
    }
    Value d = ops::relu(tp, dec1(tp, f.enhanced));
    Value low = dec2(tp, d);
    f.logits = ops::bilinear_resize(tp, low, h, w);
    return f;
  }
};

struct DiscriminatorConfig {
  int in_ch = 1;  // 1 for entropy maps, class_count for self-information maps
  std::vector<int> widths = {8, 16, 32};

  bool operator==(const DiscriminatorConfig& o) const {
    return in_ch == o.in_ch && widths == o.widths;
  }
};

inline void to_json(nlohmann::json& j, const DiscriminatorConfig& c) {
  j = nlohmann::json{{"in_ch", c.in_ch}, {"widths", c.widths}};
}

inline void from_json(const nlohmann::json& j, DiscriminatorConfig& c) {
  c.in_ch = j.at("in_ch").get<int>();
  c.widths = j.at("widths").get<std::vector<int>>();
}

// Fully convolutional domain classifier over weighted self-information maps:
// 4x4 stride-2 convolutions with leaky ReLU, a final one producing a logit
// map scored against the domain label.
template <class T>
struct Discriminator {
  DiscriminatorConfig cfg;
  ParamStore<T> params;
  std::vector<Conv<T>> convs;

  static Discriminator create(DiscriminatorConfig cfg, std::uint64_t seed) {
    check(cfg.in_ch >= 1, "discriminator: in_ch must be positive");
    check(!cfg.widths.empty(), "discriminator: needs at least one hidden layer");
    Discriminator d;
    d.cfg = cfg;
    Rng rng(derive_seed(seed, "disc"));
    int cin = cfg.in_ch;
    for (std::size_t i = 0; i < cfg.widths.size(); ++i) {
      d.convs.push_back(Conv<T>::create(d.params, "disc.c" + std::to_string(i), cin,
                                        cfg.widths[i], 4, 2, 1, 1, rng));
      cin = cfg.widths[i];
    }
    d.convs.push_back(
        Conv<T>::create(d.params, "disc.out", cin, 1, 4, 2, 1, 1, rng));
    return d;
  }

  Value forward(Tape<T>& tp, Value x) const {
    Value y = x;
    for (std::size_t i = 0; i + 1 < convs.size(); ++i)
      y = ops::leaky_relu(tp, convs[i](tp, y), 0.2);
    return convs.back()(tp, y);
  }
};

// Checkpoints: magic, little-endian u64 JSON header length, header, raw
// parameter data in the listed order. The header pins the configs so a
// mismatched load fails before any data is read.
namespace netdetail {

constexpr char kCkptMagic[] = "PSEGCKPT1\n";
constexpr std::size_t kCkptMagicLen = sizeof(kCkptMagic) - 1;

template <class T>
const char* scalar_name() {
  return sizeof(T) == 4 ? "f32" : "f64";
}

template <class T>
void write_store(std::ofstream& out, const ParamStore<T>& ps) {
  for (std::size_t i = 0; i < ps.size(); ++i)
    out.write(reinterpret_cast<const char*>(ps[i].value.v.data()),
              static_cast<std::streamsize>(ps[i].value.v.size() * sizeof(T)));
}

template <class T>
nlohmann::json store_manifest(const ParamStore<T>& ps) {
  nlohmann::json arr = nlohmann::json::array();
  for (std::size_t i = 0; i < ps.size(); ++i)
    arr.push_back({{"name", ps[i].name}, {"shape", ps[i].value.shape}});
  return arr;
}

template <class T>
void read_store(std::ifstream& in, const nlohmann::json& manifest, ParamStore<T>& ps,
                const std::string& path) {
  check(manifest.size() == ps.size(), "checkpoint " + path + ": parameter count mismatch");
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto& entry = manifest[i];
    check(entry.at("name").get<std::string>() == ps[i].name,
          "checkpoint " + path + ": parameter order mismatch at " + ps[i].name);
    auto shape = entry.at("shape").get<std::vector<std::int64_t>>();
    check(shape == ps[i].value.shape, "checkpoint " + path + ": shape mismatch for " + ps[i].name);
    in.read(reinterpret_cast<char*>(ps[i].value.v.data()),
            static_cast<std::streamsize>(ps[i].value.v.size() * sizeof(T)));
    check(in.good(), "checkpoint " + path + ": truncated data for " + ps[i].name);
  }
}

}  // namespace netdetail

template <class T>
void save_checkpoint(const std::string& path, const SegModel<T>& model,
                     const std::type_identity_t<Discriminator<T>>* disc, std::int64_t step) {
  nlohmann::json header{{"version", 1},
                        {"scalar", netdetail::scalar_name<T>()},
                        {"step", step},
                        {"model", model.cfg},
                        {"params", netdetail::store_manifest(model.params)}};
  if (disc != nullptr) {
    header["disc"] = disc->cfg;
    header["disc_params"] = netdetail::store_manifest(disc->params);
  }
  std::string hs = header.dump();
  std::ofstream out(path, std::ios::binary);
  check(out.good(), "cannot write checkpoint: " + path);
  out.write(netdetail::kCkptMagic, static_cast<std::streamsize>(netdetail::kCkptMagicLen));
  std::uint64_t len = hs.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  netdetail::write_store(out, model.params);
  if (disc != nullptr) netdetail::write_store(out, disc->params);
  check(out.good(), "failed while writing checkpoint: " + path);
}

inline nlohmann::json peek_checkpoint(const std::string& path, std::ifstream* keep = nullptr) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "cannot open checkpoint: " + path);
  char magic[netdetail::kCkptMagicLen];
  in.read(magic, static_cast<std::streamsize>(netdetail::kCkptMagicLen));
  check(in.good() && std::memcmp(magic, netdetail::kCkptMagic, netdetail::kCkptMagicLen) == 0,
        "not a checkpoint file: " + path);
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  check(in.good() && len < (1u << 28), "corrupt checkpoint header: " + path);
  std::string hs(static_cast<std::size_t>(len), '\0');
  in.read(hs.data(), static_cast<std::streamsize>(len));
  check(in.good(), "corrupt checkpoint header: " + path);
  nlohmann::json header = nlohmann::json::parse(hs, nullptr, false);
  check(!header.is_discarded(), "corrupt checkpoint header: " + path);
  if (keep != nullptr) *keep = std::move(in);
  return header;
}

// Returns the stored step. Model (and discriminator if given) must already
// be built with a matching config.
template <class T>
std::int64_t load_checkpoint(const std::string& path, SegModel<T>& model,
                             std::type_identity_t<Discriminator<T>>* disc) {
  std::ifstream in;
  nlohmann::json header = peek_checkpoint(path, &in);
  check(header.at("scalar").get<std::string>() == netdetail::scalar_name<T>(),
        "checkpoint " + path + ": scalar type mismatch");
  SegModelConfig stored = header.at("model").get<SegModelConfig>();
  check(stored == model.cfg, "checkpoint " + path + ": model config mismatch");
  netdetail::read_store(in, header.at("params"), model.params, path);
  if (disc != nullptr) {
    check(header.contains("disc"), "checkpoint " + path + ": no discriminator stored");
    DiscriminatorConfig dstored = header.at("disc").get<DiscriminatorConfig>();
    check(dstored == disc->cfg, "checkpoint " + path + ": discriminator config mismatch");
    netdetail::read_store(in, header.at("disc_params"), disc->params, path);
  }
  return header.at("step").get<std::int64_t>();
}

// Clustering descriptor from the encoder: global average pool of the
// features over all pixels. No gradients, one image per call.
template <class T>
DescriptorFn backbone_descriptor(std::shared_ptr<SegModel<T>> model) {
  check(model != nullptr, "backbone_descriptor: null model");
  return [model](const Tensor<float>& image) {
    check(image.rank() == 3 && image.dim(0) == 3, "backbone_descriptor: image must be [3,H,W]");
    Tensor<T> x({1, 3, image.dim(1), image.dim(2)});
    for (std::int64_t i = 0; i < image.numel(); ++i) x.at(i) = static_cast<T>(image.at(i));
    Tape<T> tp;
    tp.grad_enabled = false;
    Value feat = model->encode(tp, tp.constant(std::move(x)));
    const Tensor<T>& F = tp.val(feat);
    std::int64_t ch = F.dim(1), hw = F.dim(2) * F.dim(3);
    std::vector<double> out(static_cast<std::size_t>(ch), 0.0);
    for (std::int64_t c = 0; c < ch; ++c) {
      double s = 0.0;
      for (std::int64_t i = 0; i < hw; ++i) s += static_cast<double>(F.at(c * hw + i));
      out[static_cast<std::size_t>(c)] = s / static_cast<double>(hw);
    }
    return out;
  };
}

}  // namespace perseg
