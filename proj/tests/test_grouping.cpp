#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "perseg/data.hpp"
#include "perseg/kmeans.hpp"
#include "perseg/rng.hpp"

using namespace perseg;
namespace fs = std::filesystem;

namespace {

std::vector<Descriptor> blob_descriptors(int per_blob, const std::vector<double>& centers,
                                         double spread, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Descriptor> ds;
  int i = 0;
  for (double c : centers)
    for (int j = 0; j < per_blob; ++j) {
      Descriptor d;
      char buf[16];
      std::snprintf(buf, sizeof(buf), "d_%04d", i++);
      d.id = buf;
      d.vec = {c + rng.normal() * spread, c - rng.normal() * spread};
      ds.push_back(std::move(d));
    }
  return ds;
}

}  // namespace

TEST_CASE("pixel descriptor separates brightness-shifted images") {
  auto fn = pixel_stat_descriptor();
  Tensor<float> a = Tensor<float>::full({3, 24, 24}, 0.4f);
  Tensor<float> b = Tensor<float>::full({3, 24, 24}, 0.5f);
  auto va = fn(a), vb = fn(b);
  CHECK(va.size() == 216);
  CHECK(vb.size() == 216);
  double d2 = 0;
  for (std::size_t i = 0; i < va.size(); ++i) d2 += (va[i] - vb[i]) * (va[i] - vb[i]);
  CHECK(d2 > 0.0);
  // deterministic
  auto va2 = fn(a);
  CHECK(va == va2);
}

TEST_CASE("embedding preserves order and validates") {
  SynthSpec spec;
  spec.seed = 3;
  spec.n_source = 4;
  spec.n_personal = 8;
  spec.image_size = 32;
  SynthOutput out = generate_synthetic(spec);
  auto ds = embed_images(out.personal.unlabeled, pixel_stat_descriptor());
  REQUIRE(ds.size() == 8);
  for (std::size_t i = 0; i < ds.size(); ++i)
    CHECK(ds[i].id == out.personal.unlabeled[i].id);

  DescriptorFn poison = [](const Tensor<float>&) {
    return std::vector<double>{1.0, std::nan("")};
  };
  CHECK_THROWS_AS(embed_images(out.personal.unlabeled, poison), Error);
}

TEST_CASE("kmeans recovers separated blobs and keeps its invariants") {
  auto ds = blob_descriptors(20, {0.0, 10.0, 20.0}, 0.3, 11);
  GroupAssignment ga = kmeans_cluster(ds, 3, 5);

  // partition: every id assigned to exactly one in-range group
  CHECK(ga.group_of.size() == ds.size());
  std::set<int> seen;
  for (const auto& [id, g] : ga.group_of) {
    CHECK(g >= 0);
    CHECK(g < 3);
    seen.insert(g);
  }
  CHECK(seen.size() == 3);

  // blob purity: members of one blob share a label
  for (int blob = 0; blob < 3; ++blob) {
    int first = ga.group_of.at(ds[static_cast<std::size_t>(blob * 20)].id);
    for (int j = 1; j < 20; ++j)
      CHECK(ga.group_of.at(ds[static_cast<std::size_t>(blob * 20 + j)].id) == first);
  }

  // objective non-increasing across logged iterations
  REQUIRE(ga.objective_log.size() >= 2);
  for (std::size_t i = 1; i < ga.objective_log.size(); ++i)
    CHECK(ga.objective_log[i] <= ga.objective_log[i - 1] + 1e-9);

  // deterministic in seed
  GroupAssignment gb = kmeans_cluster(ds, 3, 5);
  CHECK(ga.group_of == gb.group_of);

  CHECK_THROWS_AS(kmeans_cluster(ds, 0, 1), Error);
  CHECK_THROWS_AS(kmeans_cluster(ds, static_cast<int>(ds.size()) + 1, 1), Error);

  GroupAssignment g1 = kmeans_cluster(ds, 1, 9);
  for (const auto& [id, g] : g1.group_of) CHECK(g == 0);
}

TEST_CASE("identical points: ties go to the lowest index, empty clusters get repaired") {
  std::vector<Descriptor> ds;
  for (int i = 0; i < 4; ++i) ds.push_back({"p" + std::to_string(i), {1.0, 1.0}});
  GroupAssignment ga = kmeans_cluster(ds, 2, 0);
  std::vector<int> counts(2, 0);
  for (const auto& [id, g] : ga.group_of) counts[static_cast<std::size_t>(g)]++;
  CHECK(counts[0] > 0);
  CHECK(counts[1] > 0);
  // equidistant points all land in group 0 except the single repaired one
  CHECK(counts[0] == 3);
  CHECK(counts[1] == 1);
}

TEST_CASE("group files round-trip") {
  auto ds = blob_descriptors(5, {0.0, 4.0}, 0.1, 2);
  GroupAssignment ga = kmeans_cluster(ds, 2, 7);
  fs::path p = fs::temp_directory_path() / "perseg_tests";
  fs::create_directories(p);
  save_groups(p / "groups.json", ga);
  GroupAssignment lb = load_groups(p / "groups.json");
  CHECK(lb.k == ga.k);
  CHECK(lb.seed == ga.seed);
  CHECK(lb.group_of == ga.group_of);
  CHECK(lb.objective_log == ga.objective_log);
  CHECK_THROWS_AS(load_groups(p / "missing_groups.json"), Error);
}

TEST_CASE("group batches stay within one group and cover the set") {
  auto ds = blob_descriptors(17, {0.0, 8.0, 16.0}, 0.2, 21);
  GroupAssignment ga = kmeans_cluster(ds, 3, 4);

  auto batches = make_group_batches(ga, 4, 99);
  std::set<std::string> covered;
  for (const auto& b : batches) {
    REQUIRE(!b.empty());
    CHECK(b.size() <= 4);
    int g = ga.group_of.at(b[0]);
    for (const auto& id : b) {
      CHECK(ga.group_of.at(id) == g);
      covered.insert(id);
    }
  }
  CHECK(covered.size() == ds.size());

  // deterministic per seed, different across seeds
  auto batches2 = make_group_batches(ga, 4, 99);
  CHECK(batches == batches2);
  auto batches3 = make_group_batches(ga, 4, 100);
  CHECK(batches != batches3);

  // drop_last keeps only full batches
  auto full = make_group_batches(ga, 4, 7, true);
  for (const auto& b : full) CHECK(b.size() == 4);
  // 17 members per group -> 4 full batches each
  CHECK(full.size() == 12);

  CHECK_THROWS_AS(make_group_batches(ga, 0, 1), Error);
}
