#include <cstdio>

#include "retseg/metrics.hpp"

using nlohmann::json;

namespace retseg::metrics {

json to_json(const MetricsReport& r, const std::string& method) {
  return {{"method", method},
          {"se", r.se},
          {"sp", r.sp},
          {"acc", r.acc},
          {"auc", r.auc},
          {"f1", r.f1},
          {"precision", r.precision},
          {"counts", {{"tp", r.counts.tp}, {"fp", r.counts.fp}, {"fn", r.counts.fn}, {"tn", r.counts.tn}}},
          {"n_images", r.n_images},
          {"threshold", r.threshold},
          {"undefined", r.undefined}};
}

MetricsReport report_from_json(const json& j) {
  MetricsReport r;
  r.se = j.at("se").get<double>();
  r.sp = j.at("sp").get<double>();
  r.acc = j.at("acc").get<double>();
  r.auc = j.at("auc").get<double>();
  r.f1 = j.at("f1").get<double>();
  r.precision = j.at("precision").get<double>();
  const auto& c = j.at("counts");
  r.counts = {c.at("tp").get<std::uint64_t>(), c.at("fp").get<std::uint64_t>(), c.at("fn").get<std::uint64_t>(),
              c.at("tn").get<std::uint64_t>()};
  r.n_images = j.value("n_images", 0);
  r.threshold = j.value("threshold", 0.5);
  r.undefined = j.value("undefined", std::vector<std::string>{});
  return r;
}

std::string csv_header() { return "method,se,sp,acc,auc,f1,precision"; }

std::string csv_row(const MetricsReport& r, const std::string& method) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f", method.c_str(), r.se, r.sp, r.acc, r.auc, r.f1,
                r.precision);
  return buf;
}

}  // namespace retseg::metrics
