#include "perseg/metrics.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

#include "perseg/common.hpp"

namespace perseg {

Confusion::Confusion(int classes) : class_count(classes) {
  check(classes >= 2, "confusion: need at least two classes");
  m.assign(static_cast<std::size_t>(classes) * classes, 0);
}

void Confusion::add(const Mask& pred, const Mask& gt, std::int32_t ignore_label) {
  check(pred.h == gt.h && pred.w == gt.w, "confusion: prediction and ground truth size differ");
  for (std::size_t i = 0; i < gt.v.size(); ++i) {
    std::int32_t g = gt.v[i];
    if (g == ignore_label) continue;
    std::int32_t p = pred.v[i];
    check(g >= 0 && g < class_count, "confusion: ground truth value " + std::to_string(g) +
                                         " outside class range");
    check(p >= 0 && p < class_count,
          "confusion: predicted value " + std::to_string(p) + " outside class range");
    ++m[static_cast<std::size_t>(g) * class_count + p];
  }
}

std::optional<double> class_iou(const Confusion& c, int cls) {
  check(cls >= 0 && cls < c.class_count, "class_iou: class out of range");
  std::int64_t tp = c.at(cls, cls), fp = 0, fn = 0;
  for (int k = 0; k < c.class_count; ++k) {
    if (k == cls) continue;
    fp += c.at(k, cls);
    fn += c.at(cls, k);
  }
  if (tp + fp + fn == 0) return std::nullopt;
  return static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
}

std::optional<double> mean_iou(const Confusion& c) {
  double sum = 0.0;
  int n = 0;
  for (int cls = 0; cls < c.class_count; ++cls)
    if (auto iou = class_iou(c, cls)) {
      sum += *iou;
      ++n;
    }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

std::optional<double> foreground_iou(const Mask& pred, const Mask& gt,
                                     std::int32_t ignore_label) {
  check(pred.h == gt.h && pred.w == gt.w,
        "foreground_iou: prediction and ground truth size differ");
  std::int64_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < gt.v.size(); ++i) {
    if (gt.v[i] == ignore_label) continue;
    bool pf = pred.v[i] >= 1, gf = gt.v[i] >= 1;
    if (pf && gf) ++inter;
    if (pf || gf) ++uni;
  }
  if (uni == 0) return std::nullopt;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

std::string to_string(FiouMode m) {
  return m == FiouMode::binary_foreground ? "binary_foreground" : "present_class_mean";
}

FiouMode fiou_mode_from_string(const std::string& s) {
  if (s == "binary_foreground") return FiouMode::binary_foreground;
  if (s == "present_class_mean") return FiouMode::present_class_mean;
  fail("unknown fiou mode: " + s);
}

std::optional<double> image_iou(const Mask& pred, const Mask& gt, int class_count, FiouMode mode,
                                std::int32_t ignore_label) {
  if (mode == FiouMode::binary_foreground) return foreground_iou(pred, gt, ignore_label);
  Confusion c(class_count);
  c.add(pred, gt, ignore_label);
  return mean_iou(c);
}

UserEval evaluate_user(const std::string& user,
                       const std::vector<std::pair<const Mask*, const Mask*>>& pred_gt,
                       int class_count, FiouMode fiou_mode) {
  UserEval e;
  e.user = user;
  e.n_images = static_cast<int>(pred_gt.size());
  Confusion conf(class_count);
  double fsum = 0.0;
  int fcount = 0;
  for (const auto& [pred, gt] : pred_gt) {
    check(pred != nullptr && gt != nullptr, "evaluate_user: null mask");
    conf.add(*pred, *gt);
    if (auto f = image_iou(*pred, *gt, class_count, fiou_mode)) {
      fsum += *f;
      ++fcount;
    }
  }
  for (int cls = 0; cls < class_count; ++cls) e.per_class.push_back(class_iou(conf, cls));
  e.miou = mean_iou(conf);
  if (fcount > 0) e.fiou = fsum / static_cast<double>(fcount);
  return e;
}

namespace {

std::optional<double> mean_defined(const std::vector<std::optional<double>>& xs) {
  double sum = 0.0;
  int n = 0;
  for (const auto& x : xs)
    if (x) {
      sum += *x;
      ++n;
    }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

std::string cell(const std::optional<double>& v) {
  if (!v) return "-";
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << *v;
  return os.str();
}

}  // namespace

EvalReport make_report(std::vector<UserEval> users, int class_count) {
  check(class_count >= 2, "make_report: need at least two classes");
  EvalReport r;
  r.class_count = class_count;
  for (auto& u : users) {
    if (u.n_images == 0) continue;
    check(static_cast<int>(u.per_class.size()) == class_count,
          "make_report: class count mismatch for user " + u.user);
    r.users.push_back(std::move(u));
  }
  for (int cls = 0; cls < class_count; ++cls) {
    std::vector<std::optional<double>> col;
    for (const auto& u : r.users) col.push_back(u.per_class[static_cast<std::size_t>(cls)]);
    r.mean_per_class.push_back(mean_defined(col));
  }
  std::vector<std::optional<double>> mious, fious;
  for (const auto& u : r.users) {
    mious.push_back(u.miou);
    fious.push_back(u.fiou);
  }
  r.mean_miou = mean_defined(mious);
  r.mean_fiou = mean_defined(fious);
  return r;
}

std::string render_report(const EvalReport& r) {
  std::size_t w = 8;
  for (const auto& u : r.users) w = std::max(w, u.user.size() + 2);
  std::ostringstream os;
  auto put = [&](const std::string& s) { os << std::setw(static_cast<int>(w)) << s; };

  os << std::left << std::setw(10) << "metric" << std::right;
  for (const auto& u : r.users) put(u.user);
  put("mean");
  os << "\n";
  for (int cls = 0; cls < r.class_count; ++cls) {
    os << std::left << std::setw(10) << ("iou_" + std::to_string(cls)) << std::right;
    for (const auto& u : r.users) put(cell(u.per_class[static_cast<std::size_t>(cls)]));
    put(cell(r.mean_per_class[static_cast<std::size_t>(cls)]));
    os << "\n";
  }
  os << std::left << std::setw(10) << "miou" << std::right;
  for (const auto& u : r.users) put(cell(u.miou));
  put(cell(r.mean_miou));
  os << "\n" << std::left << std::setw(10) << "fiou" << std::right;
  for (const auto& u : r.users) put(cell(u.fiou));
  put(cell(r.mean_fiou));
  os << "\n" << std::left << std::setw(10) << "images" << std::right;
  std::int64_t total = 0;
  for (const auto& u : r.users) {
    put(std::to_string(u.n_images));
    total += u.n_images;
  }
  put(std::to_string(total));
  os << "\n";
  return os.str();
}

namespace {

nlohmann::json opt_json(const std::optional<double>& v) {
  if (!v) return nullptr;
  return *v;
}

std::optional<double> opt_from(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

}  // namespace

nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json users = nlohmann::json::array();
  for (const auto& u : r.users) {
    nlohmann::json pc = nlohmann::json::array();
    for (const auto& v : u.per_class) pc.push_back(opt_json(v));
    users.push_back({{"user", u.user},
                     {"n_images", u.n_images},
                     {"per_class", pc},
                     {"miou", opt_json(u.miou)},
                     {"fiou", opt_json(u.fiou)}});
  }
  nlohmann::json mpc = nlohmann::json::array();
  for (const auto& v : r.mean_per_class) mpc.push_back(opt_json(v));
  return {{"class_count", r.class_count},
          {"users", users},
          {"mean_per_class", mpc},
          {"mean_miou", opt_json(r.mean_miou)},
          {"mean_fiou", opt_json(r.mean_fiou)}};
}

EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.class_count = j.at("class_count").get<int>();
  for (const auto& ju : j.at("users")) {
    UserEval u;
    u.user = ju.at("user").get<std::string>();
    u.n_images = ju.at("n_images").get<int>();
    for (const auto& v : ju.at("per_class")) u.per_class.push_back(opt_from(v));
    u.miou = opt_from(ju.at("miou"));
    u.fiou = opt_from(ju.at("fiou"));
    r.users.push_back(std::move(u));
  }
  for (const auto& v : j.at("mean_per_class")) r.mean_per_class.push_back(opt_from(v));
  r.mean_miou = opt_from(j.at("mean_miou"));
  r.mean_fiou = opt_from(j.at("mean_fiou"));
  return r;
}

std::string report_to_csv(const EvalReport& r) {
  std::ostringstream os;
  os << "metric";
  for (const auto& u : r.users) os << "," << u.user;
  os << ",mean\n";
  auto row = [&](const std::string& name, auto get, const std::optional<double>& mean) {
    os << name;
    for (const auto& u : r.users) {
      os << ",";
      if (auto v = get(u)) os << *v;
    }
    os << ",";
    if (mean) os << *mean;
    os << "\n";
  };
  for (int cls = 0; cls < r.class_count; ++cls)
    row("iou_" + std::to_string(cls),
        [cls](const UserEval& u) { return u.per_class[static_cast<std::size_t>(cls)]; },
        r.mean_per_class[static_cast<std::size_t>(cls)]);
  row("miou", [](const UserEval& u) { return u.miou; }, r.mean_miou);
  row("fiou", [](const UserEval& u) { return u.fiou; }, r.mean_fiou);
  os << "images";
  std::int64_t total = 0;
  for (const auto& u : r.users) {
    os << "," << u.n_images;
    total += u.n_images;
  }
  os << "," << total << "\n";
  return os.str();
}

}  // namespace perseg
