#include "perseg/kmeans.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

#include "perseg/common.hpp"
#include "perseg/rng.hpp"

using json = nlohmann::json;

namespace perseg {

namespace {

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace

GroupAssignment kmeans_cluster(const std::vector<Descriptor>& descriptors, int k,
                               std::uint64_t seed, int max_iters, double tol) {
  const std::size_t n = descriptors.size();
  check(k >= 1, "kmeans: k must be at least 1");
  check(n > 0, "kmeans: empty descriptor list");
  check(static_cast<std::size_t>(k) <= n,
        "kmeans: k=" + std::to_string(k) + " exceeds " + std::to_string(n) + " points");
  const std::size_t dim = descriptors[0].vec.size();
  for (const auto& d : descriptors)
    check(d.vec.size() == dim, "kmeans: inconsistent descriptor dimension at " + d.id);

  Rng rng(derive_seed(seed, "kmeans"));
  std::vector<std::vector<double>> centroids;
  centroids.reserve(static_cast<std::size_t>(k));

  // k-means++ seeding
  centroids.push_back(descriptors[static_cast<std::size_t>(rng.below(n))].vec);
  std::vector<double> best_d2(n);
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double d2 = std::numeric_limits<double>::max();
      for (const auto& ctr : centroids) d2 = std::min(d2, sq_dist(descriptors[i].vec, ctr));
      best_d2[i] = d2;
      total += d2;
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      double target = rng.uniform() * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        acc += best_d2[i];
        if (acc >= target) {
          pick = i;
          break;
        }
        pick = i;
      }
    } else {
      pick = static_cast<std::size_t>(rng.below(n));
    }
    centroids.push_back(descriptors[pick].vec);
  }

  std::vector<int> assign(n, 0);
  GroupAssignment ga;
  ga.k = k;
  ga.seed = seed;

  auto assign_all = [&]() {
    double obj = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::max();
      int arg = 0;
      for (int c = 0; c < k; ++c) {
        double d2 = sq_dist(descriptors[i].vec, centroids[static_cast<std::size_t>(c)]);
        if (d2 < best) {  // strict comparison keeps ties at the lowest index
          best = d2;
          arg = c;
        }
      }
      assign[i] = arg;
      obj += best;
    }
    return obj;
  };

  auto repair_empty = [&]() {
    std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < n; ++i) counts[static_cast<std::size_t>(assign[i])]++;
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) continue;
      // steal the point farthest from its centroid, from a donor with > 1 member
      double worst = -1.0;
      std::size_t worst_i = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (counts[static_cast<std::size_t>(assign[i])] <= 1) continue;
        double d2 = sq_dist(descriptors[i].vec, centroids[static_cast<std::size_t>(assign[i])]);
        if (d2 > worst) {
          worst = d2;
          worst_i = i;
        }
      }
      counts[static_cast<std::size_t>(assign[worst_i])]--;
      assign[worst_i] = c;
      counts[static_cast<std::size_t>(c)] = 1;
      centroids[static_cast<std::size_t>(c)] = descriptors[worst_i].vec;
    }
  };

  double prev_obj = std::numeric_limits<double>::max();
  for (int iter = 0; iter < max_iters; ++iter) {
    double obj = assign_all();
    repair_empty();
    // objective after repair, with centroids as they were used for assignment
    obj = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      obj += sq_dist(descriptors[i].vec, centroids[static_cast<std::size_t>(assign[i])]);
    ga.objective_log.push_back(obj);

    // centroid update
    std::vector<std::vector<double>> next(static_cast<std::size_t>(k),
                                          std::vector<double>(dim, 0.0));
    std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < n; ++i) {
      auto& ctr = next[static_cast<std::size_t>(assign[i])];
      for (std::size_t d = 0; d < dim; ++d) ctr[d] += descriptors[i].vec[d];
      counts[static_cast<std::size_t>(assign[i])]++;
    }
    double moved = 0.0;
    for (int c = 0; c < k; ++c) {
      auto& ctr = next[static_cast<std::size_t>(c)];
      for (std::size_t d = 0; d < dim; ++d) ctr[d] /= static_cast<double>(counts[static_cast<std::size_t>(c)]);
      moved = std::max(moved, sq_dist(ctr, centroids[static_cast<std::size_t>(c)]));
      centroids[static_cast<std::size_t>(c)] = std::move(ctr);
    }
    if (moved < tol * tol || std::abs(prev_obj - obj) < tol) break;
    prev_obj = obj;
  }
  // final assignment against the updated centroids
  assign_all();
  repair_empty();
  double obj = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    obj += sq_dist(descriptors[i].vec, centroids[static_cast<std::size_t>(assign[i])]);
  ga.objective_log.push_back(obj);

  ga.centroids = centroids;
  for (std::size_t i = 0; i < n; ++i) ga.group_of[descriptors[i].id] = assign[i];
  return ga;
}

void save_groups(const std::filesystem::path& path, const GroupAssignment& ga) {
  json j;
  j["k"] = ga.k;
  j["seed"] = ga.seed;
  j["groups"] = json::object();
  for (const auto& [id, g] : ga.group_of) j["groups"][id] = g;
  j["centroids"] = ga.centroids;
  j["objective_log"] = ga.objective_log;
  std::ofstream out(path);
  check(out.good(), "cannot write " + path.string());
  out << j.dump(2) << "\n";
}

GroupAssignment load_groups(const std::filesystem::path& path) {
  std::ifstream in(path);
  check(in.good(), "missing group assignment file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail(path.string() + ": " + e.what());
  }
  GroupAssignment ga;
  ga.k = j.at("k").get<int>();
  ga.seed = j.at("seed").get<std::uint64_t>();
  for (auto it = j.at("groups").begin(); it != j.at("groups").end(); ++it)
    ga.group_of[it.key()] = it.value().get<int>();
  if (j.contains("centroids")) ga.centroids = j.at("centroids").get<std::vector<std::vector<double>>>();
  if (j.contains("objective_log")) ga.objective_log = j.at("objective_log").get<std::vector<double>>();
  for (const auto& [id, g] : ga.group_of)
    check(g >= 0 && g < ga.k, path.string() + ": group index out of range for " + id);
  return ga;
}

std::vector<std::vector<std::string>> ids_by_group(const GroupAssignment& ga) {
  std::vector<std::vector<std::string>> out(static_cast<std::size_t>(ga.k));
  for (const auto& [id, g] : ga.group_of) out[static_cast<std::size_t>(g)].push_back(id);
  for (auto& v : out) std::sort(v.begin(), v.end());
  return out;
}

std::vector<std::vector<std::string>> make_group_batches(const GroupAssignment& ga,
                                                         int batch_size, std::uint64_t seed,
                                                         bool drop_last) {
  check(batch_size >= 1, "make_group_batches: batch_size must be at least 1");
  Rng rng(derive_seed(seed, "group_batches"));
  std::vector<std::vector<std::string>> batches;
  for (auto& members : ids_by_group(ga)) {
    shuffle_in_place(members, rng);
    for (std::size_t i = 0; i < members.size(); i += static_cast<std::size_t>(batch_size)) {
      std::size_t end = std::min(members.size(), i + static_cast<std::size_t>(batch_size));
      if (drop_last && end - i < static_cast<std::size_t>(batch_size)) break;
      batches.emplace_back(members.begin() + static_cast<std::ptrdiff_t>(i),
                           members.begin() + static_cast<std::ptrdiff_t>(end));
    }
  }
  shuffle_in_place(batches, rng);
  return batches;
}

}  // namespace perseg
