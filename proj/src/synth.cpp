#include <array>
#include <cmath>

#include "perseg/common.hpp"
#include "perseg/data.hpp"
#include "perseg/rng.hpp"

namespace perseg {

namespace {

// Foreground class identity is carried by color; backgrounds are chosen so
// that each one sits near some foreground palette entry, which is what makes
// the per-group context informative.
constexpr std::array<std::array<double, 3>, 6> kFgPalette = {{
    {0.78, 0.38, 0.28},  // warm red
    {0.36, 0.66, 0.32},  // green
    {0.34, 0.42, 0.76},  // blue
    {0.76, 0.70, 0.32},  // yellow
    {0.64, 0.36, 0.70},  // purple
    {0.36, 0.66, 0.66},  // teal
}};

constexpr std::array<std::array<double, 3>, 4> kBgPalette = {{
    {0.58, 0.44, 0.36},  // warm brown, near red
    {0.40, 0.52, 0.36},  // olive, near green
    {0.38, 0.44, 0.60},  // slate, near blue
    {0.30, 0.32, 0.36},  // dark gray
}};

struct Shape {
  int kind;  // 0 circle, 1 square, 2 triangle, 3 diamond
  double cx, cy, r;

  bool contains(double x, double y) const {
    double dx = x - cx, dy = y - cy;
    switch (kind) {
      case 0:
        return dx * dx + dy * dy <= r * r;
      case 1:
        return std::max(std::abs(dx), std::abs(dy)) <= r * 0.9;
      case 2: {
        // upright triangle: apex (cx, cy - r), base at cy + 0.8 r
        if (dy < -r || dy > 0.8 * r) return false;
        return std::abs(dx) <= (dy + r) * 0.55;
      }
      default:
        return std::abs(dx) + std::abs(dy) <= r * 1.2;
    }
  }
};

struct Recipe {
  int bg_family, fg_class, shape_kind;
};

void render_sample(const SynthSpec& spec, Rng& rng, const Recipe& rec, bool personal,
                   Tensor<float>& image, Mask& mask) {
  const int s = spec.image_size;
  const auto& bg = kBgPalette[static_cast<std::size_t>(rec.bg_family)];
  const auto& fg_base = kFgPalette[static_cast<std::size_t>((rec.fg_class - 1) % 6)];

  double light = rng.normal() * spec.light_jitter;
  std::array<double, 3> cast{};
  for (auto& c : cast) c = rng.normal() * 0.02;
  std::array<double, 3> fg{};
  for (int c = 0; c < 3; ++c) fg[static_cast<std::size_t>(c)] =
      fg_base[static_cast<std::size_t>(c)] + rng.normal() * spec.fg_jitter;

  double fx = rng.uniform(1.0, 3.0) / s, fy = rng.uniform(1.0, 3.0) / s;
  double phase = rng.uniform(0.0, 6.283185307179586);

  int n_obj = static_cast<int>(rng.uniform_int(spec.min_objects, spec.max_objects));
  std::vector<Shape> objects;
  for (int o = 0; o < n_obj; ++o) {
    Shape sh;
    sh.kind = rec.shape_kind;
    sh.r = rng.uniform(0.12, 0.20) * s;
    sh.cx = rng.uniform(sh.r + 1.0, s - sh.r - 1.0);
    sh.cy = rng.uniform(sh.r + 1.0, s - sh.r - 1.0);
    objects.push_back(sh);
  }

  double noise_sd = spec.pixel_noise + (personal ? spec.noise_shift : 0.0);
  double bright = personal ? spec.brightness_shift : 0.0;

  image = Tensor<float>({3, s, s});
  mask.h = s;
  mask.w = s;
  mask.v.assign(static_cast<std::size_t>(s) * s, 0);
  const std::int64_t hw = static_cast<std::int64_t>(s) * s;
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x) {
      bool inside = false;
      for (const Shape& sh : objects)
        if (sh.contains(x + 0.5, y + 0.5)) {
          inside = true;
          break;
        }
      double tex = spec.texture_amp *
                   std::sin(6.283185307179586 * (fx * x + fy * y) + phase);
      if (inside) mask.at(y, x) = static_cast<std::uint8_t>(rec.fg_class);
      for (int c = 0; c < 3; ++c) {
        double base = inside ? fg[static_cast<std::size_t>(c)]
                             : bg[static_cast<std::size_t>(c)] + tex;
        double v = base + cast[static_cast<std::size_t>(c)] + light + bright +
                   rng.normal() * noise_sd;
        v = std::min(1.0, std::max(0.0, v));
        // quantize to the 8-bit grid so a PNG round trip is exact
        int q = static_cast<int>(std::lround(v * 255.0));
        image.at(c * hw + y * static_cast<std::int64_t>(s) + x) =
            static_cast<float>(q) / 255.0f;
      }
    }

  if (spec.ignore_border > 0) {
    int b = spec.ignore_border;
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x)
        if (y < b || x < b || y >= s - b || x >= s - b) mask.at(y, x) = 255;
  }
}

std::string make_id(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "img_%05d", i);
  return buf;
}

}  // namespace

SynthOutput generate_synthetic(const SynthSpec& spec) {
  check(spec.image_size >= 16, "generate_synthetic: image_size must be at least 16");
  check(spec.class_count >= 2, "generate_synthetic: class_count must be at least 2");
  check(spec.n_groups >= 1, "generate_synthetic: n_groups must be at least 1");
  check(spec.n_groups <= spec.n_personal,
        "generate_synthetic: more groups than personal images");
  check(spec.n_source >= 1 && spec.n_personal >= 1, "generate_synthetic: empty domain");
  check(spec.val_fraction >= 0.0 && spec.val_fraction < 1.0,
        "generate_synthetic: val_fraction must be in [0, 1)");
  check(spec.min_objects >= 1 && spec.max_objects >= spec.min_objects,
        "generate_synthetic: bad object count range");

  SynthOutput out;
  out.source.spec = {"", DatasetRole::source, spec.class_count, ""};
  out.personal.spec = {"", DatasetRole::personal, spec.class_count, spec.user};

  auto recipe_for_group = [&](int g) {
    Recipe r;
    r.bg_family = g % 4;
    r.fg_class = 1 + g % (spec.class_count - 1);
    r.shape_kind = g % 4;
    return r;
  };

  // Source draws the same background/class recipes as the groups so the two
  // domains differ only by the shift parameters; shape stays independent of
  // class on the labeled side so shape cannot stand in for color.
  Rng src_rng(derive_seed(spec.seed, "synth/source"));
  std::vector<int> src_plan(static_cast<std::size_t>(spec.n_source));
  for (int i = 0; i < spec.n_source; ++i)
    src_plan[static_cast<std::size_t>(i)] = i % spec.n_groups;
  shuffle_in_place(src_plan, src_rng);
  for (int i = 0; i < spec.n_source; ++i) {
    Recipe rec = recipe_for_group(src_plan[static_cast<std::size_t>(i)]);
    rec.shape_kind = static_cast<int>(src_rng.uniform_int(0, 3));
    LabeledSample s;
    s.id = make_id(i);
    render_sample(spec, src_rng, rec, false, s.image, s.mask);
    out.source.labeled.push_back(std::move(s));
  }

  Rng per_rng(derive_seed(spec.seed, "synth/personal"));
  std::vector<int> group_of(static_cast<std::size_t>(spec.n_personal));
  for (int i = 0; i < spec.n_personal; ++i)
    group_of[static_cast<std::size_t>(i)] = i % spec.n_groups;
  shuffle_in_place(group_of, per_rng);

  for (int i = 0; i < spec.n_personal; ++i) {
    int g = group_of[static_cast<std::size_t>(i)];
    UnlabeledSample s;
    s.id = make_id(i);
    s.user = spec.user;
    Mask gt;
    render_sample(spec, per_rng, recipe_for_group(g), true, s.image, gt);
    out.personal_gt[s.id] = std::move(gt);
    out.true_groups[s.id] = g;
    out.personal.unlabeled.push_back(std::move(s));
  }

  if (spec.val_fraction > 0.0) {
    Rng val_rng(derive_seed(spec.seed, "synth/val"));
    for (int g = 0; g < spec.n_groups; ++g) {
      std::vector<std::string> members;
      for (int i = 0; i < spec.n_personal; ++i)
        if (group_of[static_cast<std::size_t>(i)] == g) members.push_back(make_id(i));
      shuffle_in_place(members, val_rng);
      auto m = static_cast<std::size_t>(spec.val_fraction *
                                        static_cast<double>(members.size()));
      for (std::size_t k = 0; k < m; ++k) out.personal.val_ids.push_back(members[k]);
    }
    std::sort(out.personal.val_ids.begin(), out.personal.val_ids.end());
  }
  return out;
}

}  // namespace perseg
