#pragma once

// JSON and CSV serialisation of checks, oracle reports and paths.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "spinecheck/bbm.hpp"
#include "spinecheck/oracle.hpp"
#include "spinecheck/stats.hpp"

namespace spinecheck {

using Json = nlohmann::ordered_json;

// Non-finite values become null.
inline Json number(double x) { return std::isfinite(x) ? Json(x) : Json(nullptr); }

struct Check {
  std::string name;
  std::string paper_ref;  // the identity being exercised, as a formula
  double value = 0.0;
  std::optional<double> expected;
  double tolerance = 0.0;
  bool pass = false;
  Json detail;  // optional extra fields
};

inline Json to_json(const Check& c) {
  Json j;
  j["name"] = c.name;
  j["paper_ref"] = c.paper_ref;
  j["value"] = number(c.value);
  j["expected"] = c.expected ? number(*c.expected) : Json(nullptr);
  j["tolerance"] = number(c.tolerance);
  j["pass"] = c.pass;
  if (!c.detail.is_null()) j["detail"] = c.detail;
  return j;
}

inline Json to_json(const MCEstimate& e) {
  return Json{{"mean", number(e.mean)},
              {"stderr", number(e.std_error)},
              {"n_samples", e.n_samples},
              {"ci95", Json::array({number(e.ci95.first), number(e.ci95.second)})}};
}

inline Json to_json(const Verdict& v) {
  return Json{{"pass", v.pass},
              {"z_score", number(v.z_score)},
              {"abs_diff", number(v.abs_diff)},
              {"combined_stderr", number(v.combined_stderr)}};
}

inline Json to_json(const OracleReport& r) {
  Json params = Json::object();
  for (const auto& [k, v] : r.parameters) params[k] = number(v);
  Json j{{"check", r.check},
         {"parameters", params},
         {"max_abs_deviation", number(r.max_abs_deviation)},
         {"tolerance", number(r.tolerance)},
         {"pass", r.pass}};
  if (r.check == "supermartingale_identity") j["tower_deviation"] = number(r.tower_deviation);
  return j;
}

inline Json to_json(const UITailProfile& p) {
  Json rows = Json::array();
  for (std::size_t i = 0; i < p.rows.size(); ++i) {
    Json row = Json::array();
    for (double v : p.rows[i]) row.push_back(number(v));
    rows.push_back(Json{{"family", i}, {"mean", to_json(p.family_means[i])}, {"tail", row}});
  }
  Json sup = Json::array();
  for (double v : p.sup_row) sup.push_back(number(v));
  Json thresholds = Json::array();
  for (double v : p.thresholds) thresholds.push_back(number(v));
  return Json{{"thresholds", thresholds},
              {"rows", rows},
              {"sup_row", sup},
              {"tolerance", number(p.tolerance)},
              {"verdict", p.ui_consistent ? "UI-consistent" : "UI-suspect"},
              {"note", "falsification diagnostic from finite samples; it cannot establish "
                       "uniform integrability"}};
}

// One row of the CSV table format.
struct TableRow {
  double n = 0.0;  // generation index or observation time
  std::string quantity;
  double estimate = 0.0;
  std::optional<double> std_error;
  std::optional<double> exact;
};

inline Json to_json(const TableRow& r) {
  return Json{{"n", number(r.n)},
              {"quantity", r.quantity},
              {"estimate", number(r.estimate)},
              {"stderr", r.std_error ? number(*r.std_error) : Json(nullptr)},
              {"exact", r.exact ? number(*r.exact) : Json(nullptr)}};
}

// %.17g round-trips doubles and is locale independent for "C".
inline std::string format_double(double x) {
  if (!std::isfinite(x)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline void write_table_csv(std::ostream& out, const std::vector<TableRow>& rows) {
  out << "n,quantity,estimate,stderr,exact_value\n";
  for (const TableRow& r : rows) {
    out << format_double(r.n) << ',' << r.quantity << ',' << format_double(r.estimate) << ','
        << (r.std_error ? format_double(*r.std_error) : "") << ','
        << (r.exact ? format_double(*r.exact) : "") << '\n';
  }
}

// time, particle_id, parent_id, position, is_spine
inline void write_path_csv(std::ostream& out, const BBMPath& path) {
  if (path.particles.size() != path.times.size()) {
    throw std::invalid_argument("path was simulated without particle records");
  }
  out << "time,particle_id,parent_id,position,is_spine\n";
  for (std::size_t i = 0; i < path.times.size(); ++i) {
    for (const ParticleRecord& p : path.particles[i]) {
      out << format_double(path.times[i]) << ',' << p.id << ',' << p.parent_id << ','
          << format_double(p.position) << ',' << (p.is_spine ? 1 : 0) << '\n';
    }
  }
}

// FNV-1a, 64 bit, as 16 hex digits.
inline std::string digest_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace spinecheck
