#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <memory>

#include "oracles.hpp"
#include "perseg/networks.hpp"

using namespace perseg;

namespace {

Tensor<double> rand_images(std::int64_t n, std::int64_t h, std::int64_t w, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<double> t({n, 3, h, w});
  for (auto& v : t.v) v = rng.uniform();
  return t;
}

template <class T>
Tensor<T> cast_tensor(const Tensor<double>& a) {
  Tensor<T> t(a.shape);
  for (std::int64_t i = 0; i < a.numel(); ++i) t.at(i) = static_cast<T>(a.at(i));
  return t;
}

}  // namespace

TEST_CASE("desk model stays small and handles odd rectangular inputs") {
  SegModelConfig cfg;
  cfg.class_count = 4;
  auto m = SegModel<double>::create(cfg, 3);
  CHECK(m.params.total_values() < 200000);

  Tape<double> tp;
  Value x = tp.input(rand_images(2, 20, 28, 5));
  auto f = m.forward(tp, x);
  CHECK(tp.val(f.logits).shape == std::vector<std::int64_t>{2, 4, 20, 28});
  CHECK(tp.val(f.aux_logits).shape == std::vector<std::int64_t>{2, 4, 5, 7});
  CHECK(tp.val(f.features).shape == std::vector<std::int64_t>{2, 24, 5, 7});
  CHECK(tp.val(f.enhanced).shape == std::vector<std::int64_t>{2, 24, 5, 7});
  CHECK(tp.val(f.logits).all_finite());

  CHECK_THROWS_AS(SegModel<double>::create([] {
                    SegModelConfig c;
                    c.backbone = "vgg16";
                    return c;
                  }(),
                  3),
                  Error);
}

TEST_CASE("context variants agree at identity initialization") {
  Tensor<double> imgs = rand_images(3, 16, 16, 11);
  std::vector<Tensor<double>> outs;
  for (auto variant : {ContextVariant::none, ContextVariant::group, ContextVariant::global}) {
    SegModelConfig cfg;
    cfg.class_count = 5;
    cfg.variant = variant;
    auto m = SegModel<double>::create(cfg, 17);
    Tape<double> tp;
    tp.grad_enabled = false;
    auto f = m.forward(tp, tp.constant(imgs));
    outs.push_back(tp.val(f.logits));
  }
  CHECK(max_abs_diff(outs[0], outs[1]) == 0.0);
  CHECK(max_abs_diff(outs[0], outs[2]) == 0.0);
}

TEST_CASE("group forward uses the provided bank and reports attention") {
  SegModelConfig cfg;
  cfg.class_count = 3;
  auto m = SegModel<double>::create(cfg, 23);
  Rng fr(24);
  for (auto& v : m.ctx.fuse_w->value.v) v = fr.normal() * 0.2;

  Tape<double> tp;
  tp.grad_enabled = false;
  Value x = tp.input(rand_images(2, 16, 16, 29));
  Tensor<double> att;
  auto self_fwd = m.forward(tp, x, nullptr, &att);
  CHECK(att.shape == std::vector<std::int64_t>{2 * 4 * 4, 2 * 3});
  for (std::int64_t r = 0; r < att.dim(0); ++r) {
    double s = 0.0;
    for (std::int64_t j = 0; j < att.dim(1); ++j) s += att.at2(r, j);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
  }

  // An external bank with different content changes the prediction.
  Rng rng(31);
  RegionBank<double> bank{tp.input(oracle::random_tensor({5, 24}, rng)), 1, 5};
  auto ext_fwd = m.forward(tp, x, &bank);
  CHECK(max_abs_diff(tp.val(self_fwd.logits), tp.val(ext_fwd.logits)) > 1e-6);
}

TEST_CASE("gradients reach every parameter of the group model") {
  SegModelConfig cfg;
  cfg.class_count = 3;
  auto m = SegModel<double>::create(cfg, 37);
  Rng fr(38);
  for (auto& v : m.ctx.fuse_w->value.v) v = fr.normal() * 0.2;

  Tape<double> tp;
  auto f = m.forward(tp, tp.input(rand_images(2, 16, 16, 41)));
  Value loss = ops::add(tp, ops::mean_all(tp, f.logits), ops::mean_all(tp, f.aux_logits));
  tp.backward(loss);
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    INFO(m.params[i].name);
    CHECK(!m.params[i].grad.empty());
  }

  // The none variant leaves the context parameters out of the graph.
  SegModelConfig ncfg;
  ncfg.class_count = 3;
  ncfg.variant = ContextVariant::none;
  auto mn = SegModel<double>::create(ncfg, 37);
  Tape<double> tp2;
  auto f2 = mn.forward(tp2, tp2.input(rand_images(2, 16, 16, 41)));
  tp2.backward(ops::mean_all(tp2, f2.logits));
  CHECK(mn.ctx.query_w->grad.empty());
  CHECK(mn.ctx.fuse_w->grad.empty());
  CHECK(!mn.desk.c1.w->grad.empty());
}

TEST_CASE("large backbone builds and forwards") {
  SegModelConfig cfg;
  cfg.backbone = "resnet50_psp";
  cfg.class_count = 3;
  auto m = SegModel<float>::create(cfg, 43);
  CHECK(m.params.total_values() > 10'000'000);
  CHECK(cfg.resolved_context_dim() == 512);

  Tape<float> tp;
  tp.grad_enabled = false;
  auto f = m.forward(tp, tp.constant(cast_tensor<float>(rand_images(1, 32, 32, 47))));
  CHECK(tp.val(f.logits).shape == std::vector<std::int64_t>{1, 3, 32, 32});
  CHECK(tp.val(f.features).shape == std::vector<std::int64_t>{1, 512, 4, 4});
  CHECK(tp.val(f.logits).all_finite());
}

TEST_CASE("discriminator halves resolution per layer and trains") {
  Discriminator<double> d = Discriminator<double>::create({}, 53);
  Tape<double> tp;
  Rng rng(59);
  Value e = tp.input(oracle::random_tensor({2, 1, 64, 64}, rng, 0.3));
  Value out = d.forward(tp, e);
  CHECK(tp.val(out).shape == std::vector<std::int64_t>{2, 1, 4, 4});
  tp.backward(ops::mean_all(tp, out));
  for (std::size_t i = 0; i < d.params.size(); ++i) {
    INFO(d.params[i].name);
    CHECK(!d.params[i].grad.empty());
  }

  DiscriminatorConfig c5;
  c5.in_ch = 5;
  Discriminator<double> d5 = Discriminator<double>::create(c5, 53);
  Tape<double> tp2;
  Value si = tp2.input(oracle::random_tensor({1, 5, 32, 32}, rng, 0.3));
  CHECK(tp2.val(d5.forward(tp2, si)).shape == std::vector<std::int64_t>{1, 1, 2, 2});
}

TEST_CASE("checkpoints restore parameters bitwise") {
  const char* path = "ckpt_test.bin";
  SegModelConfig cfg;
  cfg.class_count = 4;
  auto m = SegModel<float>::create(cfg, 61);
  auto d = Discriminator<float>::create({}, 61);
  Rng rng(67);
  for (std::size_t i = 0; i < m.params.size(); ++i)
    for (auto& v : m.params[i].value.v) v += static_cast<float>(rng.normal() * 0.01);
  for (std::size_t i = 0; i < d.params.size(); ++i)
    for (auto& v : d.params[i].value.v) v += static_cast<float>(rng.normal() * 0.01);
  save_checkpoint(path, m, &d, 1234);

  auto m2 = SegModel<float>::create(cfg, 999);
  auto d2 = Discriminator<float>::create({}, 999);
  CHECK(load_checkpoint(path, m2, &d2) == 1234);
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    INFO(m.params[i].name);
    CHECK(m.params[i].value.v == m2.params[i].value.v);
  }
  for (std::size_t i = 0; i < d.params.size(); ++i)
    CHECK(d.params[i].value.v == d2.params[i].value.v);

  nlohmann::json header = peek_checkpoint(path);
  CHECK(header.at("step").get<std::int64_t>() == 1234);
  CHECK(header.at("model").get<SegModelConfig>() == cfg);

  SegModelConfig other = cfg;
  other.class_count = 7;
  auto m3 = SegModel<float>::create(other, 1);
  CHECK_THROWS_AS(load_checkpoint(path, m3, static_cast<Discriminator<float>*>(nullptr)), Error);

  save_checkpoint(path, m, static_cast<Discriminator<float>*>(nullptr), 5);
  CHECK_THROWS_AS(load_checkpoint(path, m2, &d2), Error);
  CHECK(load_checkpoint(path, m2, static_cast<Discriminator<float>*>(nullptr)) == 5);

  CHECK_THROWS_AS(peek_checkpoint("no_such_file.bin"), Error);
  std::remove(path);
}

TEST_CASE("model config survives the json round trip") {
  SegModelConfig cfg;
  cfg.backbone = "desk";
  cfg.class_count = 6;
  cfg.variant = ContextVariant::global;
  cfg.region_norm = RegionNorm::softmax_only;
  cfg.bank_stop_grad = false;
  cfg.context_dim = 32;
  nlohmann::json j = cfg;
  auto back = j.get<SegModelConfig>();
  CHECK(back == cfg);
  CHECK(back.region_norm == RegionNorm::softmax_only);
  CHECK_FALSE(back.bank_stop_grad);
}

TEST_CASE("backbone descriptor is the pooled encoder output") {
  SegModelConfig cfg;
  cfg.class_count = 4;
  auto m = std::make_shared<SegModel<float>>(SegModel<float>::create(cfg, 71));
  DescriptorFn fn = backbone_descriptor(m);

  Tensor<float> img = cast_tensor<float>(rand_images(1, 16, 16, 73));
  Tensor<float> img3({3, 16, 16});
  std::copy(img.v.begin(), img.v.end(), img3.v.begin());
  std::vector<double> desc = fn(img3);
  REQUIRE(desc.size() == 24);

  Tape<float> tp;
  tp.grad_enabled = false;
  Value feat = m->encode(tp, tp.constant(img));
  const Tensor<float>& F = tp.val(feat);
  std::int64_t hw = F.dim(2) * F.dim(3);
  for (std::int64_t c = 0; c < 24; ++c) {
    double mean = 0.0;
    for (std::int64_t i = 0; i < hw; ++i) mean += static_cast<double>(F.at(c * hw + i));
    mean /= static_cast<double>(hw);
    CHECK(desc[static_cast<std::size_t>(c)] == doctest::Approx(mean).epsilon(1e-6));
  }

  std::vector<double> again = fn(img3);
  CHECK(again == desc);
}
