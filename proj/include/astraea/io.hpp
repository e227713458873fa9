#pragma once

#include <charconv>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <nlohmann/json.hpp>

#include "astraea/diffusion.hpp"
#include "astraea/flops.hpp"
#include "astraea/schedule.hpp"
#include "astraea/search.hpp"

namespace astraea {

/// Shortest decimal that round-trips; "inf", "-inf" and "nan" otherwise.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) return "nan";
  return std::string(buf, end);
}

// ---------------------------------------------------------------------------
// Schedule file
//
//   T=<int>
//   t=<index> theta=<tenths>/10      (T lines, index 0..T-1 in order)
//
// Blank lines and lines starting with '#' are ignored.
// ---------------------------------------------------------------------------

class ScheduleFormatError : public std::runtime_error {
 public:
  ScheduleFormatError(std::size_t line, const std::string& what)
      : std::runtime_error("schedule line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

inline std::string render_schedule(const Schedule& s) {
  std::string out = "T=" + std::to_string(s.size()) + "\n";
  for (std::size_t i = 0; i < s.size(); ++i) {
    out += "t=" + std::to_string(i) + " theta=" + std::to_string(s.tenths(i)) + "/10\n";
  }
  return out;
}

namespace detail {

inline bool parse_int(std::string_view s, long long& out) {
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size();
}

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

inline Schedule parse_schedule(std::string_view text) {
  std::vector<int> tenths;
  long long expected = -1;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string_view line = detail::trim(raw);
    if (line.empty() || line.front() == '#') continue;
    if (expected < 0) {
      long long t = 0;
      if (!line.starts_with("T=") || !detail::parse_int(line.substr(2), t) || t < 1) {
        throw ScheduleFormatError(line_no, "expected header 'T=<positive int>'");
      }
      expected = t;
      continue;
    }
    const auto space = line.find(' ');
    if (space == std::string_view::npos) throw ScheduleFormatError(line_no, "expected 't=<index> theta=<tenths>/10'");
    const std::string_view lhs = line.substr(0, space);
    const std::string_view rhs = detail::trim(line.substr(space + 1));
    long long idx = 0, value = 0;
    if (!lhs.starts_with("t=") || !detail::parse_int(lhs.substr(2), idx)) {
      throw ScheduleFormatError(line_no, "malformed step index");
    }
    if (idx != static_cast<long long>(tenths.size())) {
      throw ScheduleFormatError(line_no, "step index " + std::to_string(idx) + " out of order (expected " +
                                             std::to_string(tenths.size()) + ")");
    }
    if (!rhs.starts_with("theta=") || !rhs.ends_with("/10") ||
        !detail::parse_int(rhs.substr(6, rhs.size() - 9), value)) {
      throw ScheduleFormatError(line_no, "malformed theta (expected theta=<0..10>/10)");
    }
    if (value < 0 || value > Schedule::kGridSteps) {
      throw ScheduleFormatError(line_no, "theta " + std::to_string(value) + "/10 outside [0, 1]");
    }
    if (static_cast<long long>(tenths.size()) >= expected) throw ScheduleFormatError(line_no, "more entries than T");
    tenths.push_back(static_cast<int>(value));
  }
  if (expected < 0) throw ScheduleFormatError(line_no, "missing 'T=' header");
  if (static_cast<long long>(tenths.size()) != expected) {
    throw ScheduleFormatError(line_no, "expected " + std::to_string(expected) + " entries, found " +
                                           std::to_string(tenths.size()));
  }
  return Schedule(std::move(tenths));
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("", "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("out", "cannot write '" + path + "'");
  out << contents;
}

inline Schedule load_schedule(const std::string& path) { return parse_schedule(read_file(path)); }

// ---------------------------------------------------------------------------
// CSV (RFC 4180): CRLF record ends, header row always present, fields with
// separators or quotes are quoted.
// ---------------------------------------------------------------------------

inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::string csv_row(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out += ',';
    out += csv_field(fields[i]);
  }
  return out + "\r\n";
}

inline std::string grid_to_csv(const TokenGrid& g) {
  std::vector<std::string> header{"token"};
  for (std::size_t c = 0; c < g.cols(); ++c) header.push_back("c" + std::to_string(c));
  std::string out = csv_row(header);
  for (std::size_t r = 0; r < g.rows(); ++r) {
    std::vector<std::string> row{std::to_string(r)};
    for (double v : g.row(r)) row.push_back(format_double(v));
    out += csv_row(row);
  }
  return out;
}

inline std::string schedule_compact(const Schedule& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ' ';
    out += std::to_string(s.tenths(i));
  }
  return out;
}

inline std::string history_to_csv(const std::vector<GenerationRecord>& history) {
  std::string out = csv_row({"generation", "best_mse", "mean_mse", "evals", "best_schedule"});
  for (const auto& h : history) {
    out += csv_row({std::to_string(h.generation), format_double(h.best_mse), format_double(h.mean_mse),
                    std::to_string(h.evaluations), schedule_compact(h.best_schedule)});
  }
  return out;
}

/// One row per step, one column per prompt seed.
inline std::string sweep_to_csv(const std::vector<std::uint64_t>& prompts, const std::vector<std::vector<double>>& mse) {
  std::vector<std::string> header{"timestep"};
  for (auto p : prompts) header.push_back("prompt_" + std::to_string(p));
  std::string out = csv_row(header);
  const std::size_t steps = mse.empty() ? 0 : mse.front().size();
  for (std::size_t t = 0; t < steps; ++t) {
    std::vector<std::string> row{std::to_string(t)};
    for (const auto& col : mse) row.push_back(format_double(col.at(t)));
    out += csv_row(row);
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON records
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json to_json(const FlopsReport& r) {
  nlohmann::ordered_json j;
  j["qkv_proj"] = r.qkv_proj;
  j["attn_scores"] = r.attn_scores;
  j["softmax"] = r.softmax;
  j["attn_output"] = r.attn_output;
  j["out_proj"] = r.out_proj;
  j["self_attn"] = r.self_attn();
  j["cross_attn"] = r.cross_attn;
  j["mlp"] = r.mlp;
  j["total"] = r.total();
  return j;
}

inline FlopsReport flops_report_from_json(const nlohmann::json& j) {
  FlopsReport r;
  r.qkv_proj = j.at("qkv_proj").get<FlopCount>();
  r.attn_scores = j.at("attn_scores").get<FlopCount>();
  r.softmax = j.at("softmax").get<FlopCount>();
  r.attn_output = j.at("attn_output").get<FlopCount>();
  r.out_proj = j.at("out_proj").get<FlopCount>();
  r.cross_attn = j.at("cross_attn").get<FlopCount>();
  r.mlp = j.at("mlp").get<FlopCount>();
  if (j.contains("total") && j.at("total").get<FlopCount>() != r.total()) {
    throw DomainError("flops json: total does not equal the sum of its parts");
  }
  return r;
}

inline nlohmann::ordered_json to_json(const RunStats& s) {
  nlohmann::ordered_json j;
  j["mode"] = std::string(to_string(s.mode));
  j["selected_tokens"] = s.selected_tokens;
  j["mask_sizes"] = s.mask_sizes;
  j["max_staleness"] = s.max_staleness;
  j["flops"] = to_json(s.flops);
  nlohmann::ordered_json steps = nlohmann::ordered_json::array();
  for (const auto& f : s.step_flops) steps.push_back(f.total());
  j["step_flops_total"] = steps;
  return j;
}

/// Quality and cost of a run against its full-compute reference.
struct MetricsRecord {
  std::optional<double> mse;  // absent for a full-mode run
  std::optional<double> psnr;
  double psnr_peak = 0.0;
  FlopCount flops_total = 0;
  FlopCount reference_flops_total = 0;
  std::vector<std::size_t> selected_tokens;
  std::optional<double> wall_time_ms;
};

inline nlohmann::ordered_json to_json(const MetricsRecord& m) {
  nlohmann::ordered_json j;
  j["mse"] = m.mse ? nlohmann::ordered_json(*m.mse) : nlohmann::ordered_json("NA");
  if (!m.psnr) {
    j["psnr_db"] = "NA";
  } else if (std::isinf(*m.psnr)) {
    j["psnr_db"] = "inf";
  } else {
    j["psnr_db"] = *m.psnr;
  }
  j["psnr_peak"] = m.psnr_peak;
  j["psnr_peak_source"] = "max_abs_reference";
  j["flops_total"] = m.flops_total;
  j["reference_flops_total"] = m.reference_flops_total;
  j["selected_tokens"] = m.selected_tokens;
  if (m.wall_time_ms) j["wall_time_ms"] = *m.wall_time_ms;
  return j;
}

}  // namespace astraea
