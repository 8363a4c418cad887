#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "perseg/descriptors.hpp"

namespace perseg {

struct GroupAssignment {
  int k = 0;
  std::uint64_t seed = 0;
  std::map<std::string, int> group_of;
  std::vector<std::vector<double>> centroids;
  std::vector<double> objective_log;  // within-cluster squared distance per iteration
};

// Lloyd iterations from a k-means++ seeding, Euclidean distance. Equidistant
// points go to the lowest group index; clusters emptied by an update are
// repaired by stealing the point farthest from its assigned centroid.
GroupAssignment kmeans_cluster(const std::vector<Descriptor>& descriptors, int k,
                               std::uint64_t seed, int max_iters = 100, double tol = 1e-6);

void save_groups(const std::filesystem::path& path, const GroupAssignment& ga);
GroupAssignment load_groups(const std::filesystem::path& path);

// Group index -> sorted member ids.
std::vector<std::vector<std::string>> ids_by_group(const GroupAssignment& ga);

// Batches drawn within a single group: members are shuffled per group,
// chunked, and the chunk order shuffled across groups. With drop_last, short
// trailing chunks are discarded.
std::vector<std::vector<std::string>> make_group_batches(const GroupAssignment& ga,
                                                         int batch_size, std::uint64_t seed,
                                                         bool drop_last = false);

}  // namespace perseg
