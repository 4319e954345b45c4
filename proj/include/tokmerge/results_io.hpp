#pragma once

// JSON / CSV serialization of optimization results. Every reader validates
// what it loads and throws ConfigError on malformed input.

#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tokmerge/mobo.hpp"
#include "tokmerge/pareto.hpp"

namespace tokmerge {

using Json = nlohmann::ordered_json;

inline Json schedule_to_json(const MergeSchedule& s) { return Json(s.proportions); }

inline MergeSchedule schedule_from_json(const Json& j) {
  if (!j.is_array()) throw ConfigError("schedule must be a JSON array");
  MergeSchedule s;
  for (const auto& v : j) {
    if (!v.is_number()) throw ConfigError("schedule entries must be numbers");
    s.proportions.push_back(v.get<double>());
  }
  return s;
}

/// Parses "0.1,0.2,0.3" or "[0.1, 0.2, 0.3]".
inline MergeSchedule parse_schedule(const std::string& text) {
  std::string t = text;
  if (!t.empty() && t.front() == '[') {
    try {
      return schedule_from_json(Json::parse(t));
    } catch (const Json::exception& e) {
      throw ConfigError(std::string("bad schedule: ") + e.what());
    }
  }
  MergeSchedule s;
  std::stringstream ss(t);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double p = 0.0;
    try {
      p = std::stod(item, &used);
    } catch (const std::exception&) {
      throw ConfigError("bad schedule entry '" + item + "'");
    }
    if (used != item.size()) throw ConfigError("bad schedule entry '" + item + "'");
    s.proportions.push_back(p);
  }
  if (s.proportions.empty()) throw ConfigError("empty schedule");
  return s;
}

inline Json hyper_to_json(const GPHyperparams& h) {
  Json j;
  j["signal_variance"] = h.signal_variance;
  j["lengthscales"] = h.lengthscales;
  j["noise_variance"] = h.noise_variance;
  j["constant_mean"] = h.constant_mean;
  return j;
}

inline GPHyperparams hyper_from_json(const Json& j) {
  GPHyperparams h;
  h.signal_variance = j.at("signal_variance").get<double>();
  h.lengthscales = j.at("lengthscales").get<std::vector<double>>();
  h.noise_variance = j.at("noise_variance").get<double>();
  h.constant_mean = j.at("constant_mean").get<double>();
  return h;
}

inline Json history_to_json(const HistoryRecord& r) {
  Json j;
  j["iteration"] = r.iteration;
  j["schedule"] = schedule_to_json(r.schedule);
  j["accuracy"] = r.accuracy;
  j["flops"] = r.flops;
  if (r.accuracy_hyper && r.flops_hyper) {
    j["gp_hyperparams"]["accuracy"] = hyper_to_json(*r.accuracy_hyper);
    j["gp_hyperparams"]["flops"] = hyper_to_json(*r.flops_hyper);
  }
  // -inf (no possible improvement) has no JSON spelling; it is written as null.
  if (r.acquisition) j["acquisition_value"] = std::isfinite(*r.acquisition) ? Json(*r.acquisition) : Json(nullptr);
  return j;
}

inline HistoryRecord history_from_json(const Json& j) {
  try {
    HistoryRecord r;
    r.iteration = j.at("iteration").get<std::size_t>();
    r.schedule = schedule_from_json(j.at("schedule"));
    r.accuracy = j.at("accuracy").get<double>();
    r.flops = j.at("flops").get<FlopCount>();
    if (j.contains("gp_hyperparams")) {
      r.accuracy_hyper = hyper_from_json(j["gp_hyperparams"].at("accuracy"));
      r.flops_hyper = hyper_from_json(j["gp_hyperparams"].at("flops"));
    }
    if (j.contains("acquisition_value"))
      r.acquisition = j["acquisition_value"].is_null() ? -std::numeric_limits<double>::infinity()
                                                       : j["acquisition_value"].get<double>();
    return r;
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("malformed history record: ") + e.what());
  }
}

inline std::string history_line(const HistoryRecord& r) { return history_to_json(r).dump() + "\n"; }

inline std::vector<HistoryRecord> read_history(const std::filesystem::path& file) {
  std::ifstream is(file);
  if (!is) throw ConfigError("history file not found: " + file.string());
  std::vector<HistoryRecord> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(history_from_json(Json::parse(line)));
    } catch (const Json::exception& e) {
      throw ConfigError(file.string() + ": " + e.what());
    }
  }
  return out;
}

inline Json point_to_json(const ParetoPoint& p) {
  Json j;
  j["schedule"] = schedule_to_json(p.schedule);
  j["accuracy"] = p.accuracy;
  j["flops"] = p.flops;
  return j;
}

inline ParetoPoint point_from_json(const Json& j) {
  return {schedule_from_json(j.at("schedule")), j.at("accuracy").get<double>(), j.at("flops").get<FlopCount>()};
}

inline Json front_to_json(const ParetoFront& f) {
  Json j;
  j["reference_point"] = {{"accuracy", f.reference.accuracy}, {"flops", f.reference.flops}};
  j["points"] = Json::array();
  for (const auto& p : f.points) j["points"].push_back(point_to_json(p));
  return j;
}

/// Loads a front and checks that its points are mutually non-dominated.
inline ParetoFront front_from_json(const Json& j) {
  ParetoFront f;
  try {
    f.reference.accuracy = j.at("reference_point").at("accuracy").get<double>();
    f.reference.flops = j.at("reference_point").at("flops").get<double>();
    for (const auto& p : j.at("points")) f.points.push_back(point_from_json(p));
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("malformed front: ") + e.what());
  }
  for (std::size_t a = 0; a < f.points.size(); ++a)
    for (std::size_t b = 0; b < f.points.size(); ++b)
      if (a != b && dominates(f.points[a].accuracy, static_cast<double>(f.points[a].flops), f.points[b].accuracy,
                              static_cast<double>(f.points[b].flops)))
        throw ConfigError("front point " + std::to_string(b) + " is dominated by point " + std::to_string(a));
  return f;
}

inline ParetoFront read_front(const std::filesystem::path& file) {
  std::ifstream is(file);
  if (!is) throw ConfigError("front file not found: " + file.string());
  try {
    return front_from_json(Json::parse(is));
  } catch (const Json::exception& e) {
    throw ConfigError(file.string() + ": " + e.what());
  }
}

inline Json policy_to_json(const std::vector<PolicyEntry>& policy, double accuracy_drop) {
  Json j;
  j["accuracy_drop"] = accuracy_drop;
  j["entries"] = Json::array();
  for (const auto& e : policy) {
    Json k;
    k["snr_db"] = e.snr_db;
    k["front_index"] = e.front_index;
    k["schedule"] = schedule_to_json(e.point.schedule);
    k["flops"] = e.point.flops;
    k["noiseless_accuracy"] = e.point.accuracy;
    k["accuracy"] = e.noisy_accuracy;
    k["best_accuracy"] = e.best_noisy_accuracy;
    j["entries"].push_back(k);
  }
  return j;
}

inline void write_text(const std::filesystem::path& file, const std::string& text) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream os(file, std::ios::binary);
  if (!os) throw ConfigError("cannot write " + file.string());
  os << text;
  if (!os) throw ConfigError("write failed: " + file.string());
}

}  // namespace tokmerge
