#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "perseg/image.hpp"

namespace perseg {

// Row = ground truth class, column = predicted class; ignore pixels are not
// counted. Predictions must be valid class ids.
struct Confusion {
  int class_count = 0;
  std::vector<std::int64_t> m;

  explicit Confusion(int classes);
  void add(const Mask& pred, const Mask& gt, std::int32_t ignore_label = 255);
  std::int64_t at(int gt, int pred) const {
    return m[static_cast<std::size_t>(gt) * class_count + pred];
  }
};

// Null when the class appears in neither prediction nor ground truth.
std::optional<double> class_iou(const Confusion& c, int cls);

// Mean over classes with a defined IoU; null when every class is absent.
std::optional<double> mean_iou(const Confusion& c);

// Binary IoU of the foreground (any class above 0) for one image; null when
// both prediction and ground truth are background everywhere.
std::optional<double> foreground_iou(const Mask& pred, const Mask& gt,
                                     std::int32_t ignore_label = 255);

// Per-image score behind the fiou column. binary_foreground merges every
// class above 0 into one region; present_class_mean averages per-class IoU
// over the classes this image's pair actually contains.
enum class FiouMode { binary_foreground, present_class_mean };

std::string to_string(FiouMode m);
FiouMode fiou_mode_from_string(const std::string& s);

std::optional<double> image_iou(const Mask& pred, const Mask& gt, int class_count, FiouMode mode,
                                std::int32_t ignore_label = 255);

struct UserEval {
  std::string user;
  int n_images = 0;
  std::vector<std::optional<double>> per_class;
  std::optional<double> miou;
  std::optional<double> fiou;  // mean of per-image foreground IoU
};

// Accumulates one confusion over all of a user's (prediction, ground truth)
// pairs; FIoU averages the defined per-image values.
UserEval evaluate_user(const std::string& user,
                       const std::vector<std::pair<const Mask*, const Mask*>>& pred_gt,
                       int class_count, FiouMode fiou_mode = FiouMode::binary_foreground);

// Per-user columns plus a mean column over users with defined values. Users
// without any evaluated image are dropped.
struct EvalReport {
  int class_count = 0;
  std::vector<UserEval> users;
  std::vector<std::optional<double>> mean_per_class;
  std::optional<double> mean_miou;
  std::optional<double> mean_fiou;
};

EvalReport make_report(std::vector<UserEval> users, int class_count);

// Fixed-width text table; undefined cells print "-".
std::string render_report(const EvalReport& r);

nlohmann::json report_to_json(const EvalReport& r);
EvalReport report_from_json(const nlohmann::json& j);

// Wide table: one row per metric, one column per user plus the mean.
std::string report_to_csv(const EvalReport& r);

}  // namespace perseg
