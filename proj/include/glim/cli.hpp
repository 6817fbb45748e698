#pragma once

// Command-line front end: configuration parsing, channel -> selection ->
// sweep orchestration, and the ber.csv / selection.csv / manifest.json files.
//
// Exit status: 0 success, 2 configuration error, 3 runtime error.

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "glim/channel.hpp"
#include "glim/error.hpp"
#include "glim/select.hpp"
#include "glim/sim.hpp"

namespace glim::cli {

inline constexpr const char* kToolName = "glim_sim";
inline constexpr const char* kToolVersion = "0.1.0";

enum ExitCode : int { kOk = 0, kConfigError = 2, kRuntimeError = 3 };

/// "start:step:stop" (inclusive) or a single value.
inline std::vector<double> parse_snr_range(const std::string& text) {
  auto number = [&](const std::string& s) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (s.empty() || used != s.size() || !std::isfinite(v))
      throw ConfigError(fmt::format("--snr: '{}' is not a number in '{}'", s, text));
    return v;
  };
  std::vector<std::string> parts;
  std::stringstream ss(text);
  for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
  if (!text.empty() && text.back() == ':') parts.emplace_back();
  if (parts.size() == 1) return {number(parts[0])};
  if (parts.size() != 3) throw ConfigError(fmt::format("--snr expects start:step:stop, got '{}'", text));
  const double start = number(parts[0]), step = number(parts[1]), stop = number(parts[2]);
  if (!(step > 0.0)) throw ConfigError(fmt::format("--snr step must be positive, got '{}'", text));
  if (stop < start) throw ConfigError(fmt::format("--snr stop is below start in '{}'", text));
  std::vector<double> grid;
  for (std::size_t i = 0;; ++i) {
    const double v = start + static_cast<double>(i) * step;
    if (v > stop + 1e-9 * step) break;
    grid.push_back(v);
  }
  return grid;
}

/// 64-bit FNV-1a, used to pin the exact channel file a run consumed.
inline std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(fmt::format("--channel: cannot read channel file '{}'", path));
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::string format_ber_csv(std::vector<BerRecord> records) {
  std::stable_sort(records.begin(), records.end(), [](const BerRecord& a, const BerRecord& b) {
    if (to_string(a.detector) != to_string(b.detector)) return to_string(a.detector) < to_string(b.detector);
    return a.snr_db < b.snr_db;
  });
  std::string out = "snr_db,detector,qam,selection,bits,errors,ber,seed\n";
  for (const auto& r : records)
    out += fmt::format("{},{},{},{},{},{},{:.9e},{}\n", r.snr_db, to_string(r.detector), r.qam_order, r.selection,
                       r.bits_sent, r.bit_errors, r.ber, r.seed);
  return out;
}

inline std::string format_selection_csv(const SelectionReport& report) {
  std::string out = "rank,pairs,worst_condition,selected\n";
  for (std::size_t i = 0; i < report.ranked.size(); ++i)
    out += fmt::format("{},{},{:.17g},{}\n", i + 1, report.ranked[i].mapping.to_string(),
                       report.ranked[i].worst_condition, i == 0 ? 1 : 0);
  return out;
}

namespace detail {

inline nlohmann::json points_to_json(const std::vector<Eigen::Vector3d>& pts) {
  auto arr = nlohmann::json::array();
  for (const auto& p : pts) arr.push_back({p.x(), p.y(), p.z()});
  return arr;
}

inline std::vector<Eigen::Vector3d> points_from_json(const nlohmann::json& arr) {
  std::vector<Eigen::Vector3d> pts;
  for (const auto& p : arr) pts.emplace_back(p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>());
  return pts;
}

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(fmt::format("cannot write '{}'", path.string()));
  out << text;
  if (!out) throw Error(fmt::format("failed writing '{}'", path.string()));
}

}  // namespace detail

/// A fully resolved run: what to simulate plus how the channel was obtained.
struct RunPlan {
  SimConfig config;
  std::string select_spec;  // "off", "auto" or "pairs=..."
  std::optional<std::uint64_t> channel_hash;  // file channels only
  std::filesystem::path out_dir;
  bool quiet = false;
};

inline nlohmann::json manifest_json(const RunPlan& plan, const ChannelMatrix& h, const ResolvedMapping& mapping,
                                    const std::vector<std::string>& outputs) {
  const SimConfig& c = plan.config;
  nlohmann::json j;
  j["tool"] = kToolName;
  j["version"] = kToolVersion;
  j["timestamp"] = detail::utc_timestamp();

  auto detectors = nlohmann::json::array();
  for (auto d : c.detectors) detectors.push_back(std::string(to_string(d)));
  j["config"] = {{"n_tx", c.n_tx},
                 {"n_rx", c.n_rx},
                 {"qam", c.qam_order},
                 {"nfft", c.n_subcarriers},
                 {"snr_db", c.snr_grid_db},
                 {"min_bits", c.min_bits},
                 {"min_errors", c.min_errors},
                 {"max_bits", c.max_bits},
                 {"detectors", detectors},
                 {"select", plan.select_spec},
                 {"normalize", c.normalize},
                 {"map_metric", c.map_metric == MetricPoint::clipped ? "clipped" : "unclipped"},
                 {"seed", c.seed},
                 {"workers", c.workers}};

  if (const auto* g = std::get_if<GeometrySource>(&c.channel)) {
    j["channel"] = {{"source", "lambertian"},
                    {"lambertian_order", g->geometry.lambertian_order},
                    {"pd_area_m2", g->geometry.pd_area},
                    {"pd_fov_half_angle_rad", g->geometry.pd_fov_half_angle},
                    {"led_positions_m", detail::points_to_json(g->geometry.led_positions)},
                    {"pd_positions_m", detail::points_to_json(g->geometry.pd_positions)}};
  } else {
    const auto& f = std::get<FileSource>(c.channel);
    j["channel"] = {{"source", "file"}, {"path", f.path}, {"fnv1a64", fmt::format("{:016x}", *plan.channel_hash)}};
  }
  auto gains = nlohmann::json::array();
  for (int r = 0; r < h.n_rx(); ++r) {
    auto row = nlohmann::json::array();
    for (int l = 0; l < h.n_tx(); ++l) row.push_back(h(r, l));
    gains.push_back(row);
  }
  j["channel"]["gains_used"] = gains;

  j["selection"] = {{"mode", std::string(to_string(c.selection))}, {"mapping", mapping.mapping.to_string()}};
  if (mapping.report) {
    const auto& rep = *mapping.report;
    auto removed = nlohmann::json::array();
    for (const auto& [a, b] : rep.removed) removed.push_back(fmt::format("{}-{}", a + 1, b + 1));
    auto candidates = nlohmann::json::array();
    for (std::size_t i = 0; i < rep.ranked.size(); ++i) {
      const double wc = rep.ranked[i].worst_condition;
      candidates.push_back({{"rank", i + 1},
                            {"pairs", rep.ranked[i].mapping.to_string()},
                            {"worst_condition", std::isfinite(wc) ? nlohmann::json(wc) : nlohmann::json("inf")},
                            {"selected", i == 0}});
    }
    j["selection"]["max_cosine"] = rep.max_cosine;
    j["selection"]["removed_pairs"] = removed;
    j["selection"]["fallback"] = rep.fallback;
    j["selection"]["candidates"] = candidates;
  }
  j["outputs"] = outputs;
  return j;
}

inline void apply_select_spec(SimConfig& cfg, const std::string& spec) {
  if (spec == "off") {
    cfg.selection = SelectionMode::off;
  } else if (spec == "auto") {
    cfg.selection = SelectionMode::automatic;
  } else if (spec.rfind("pairs=", 0) == 0) {
    cfg.selection = SelectionMode::fixed;
    try {
      cfg.fixed_mapping = LedMapping::parse(spec.substr(6));
    } catch (const ConfigError& e) {
      throw ConfigError(fmt::format("--select: {}", e.what()));
    }
  } else {
    throw ConfigError(fmt::format("--select expects off, auto or pairs=..., got '{}'", spec));
  }
}

/// Rebuilds the plan recorded in a manifest. The channel file, if any, must
/// still hash to the recorded value.
inline RunPlan plan_from_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("--from-manifest: cannot read '{}'", path));
  nlohmann::json j;
  try {
    in >> j;
    RunPlan plan;
    SimConfig& c = plan.config;
    const auto& jc = j.at("config");
    c.n_tx = jc.at("n_tx").get<int>();
    c.n_rx = jc.at("n_rx").get<int>();
    c.qam_order = jc.at("qam").get<int>();
    c.n_subcarriers = jc.at("nfft").get<int>();
    c.snr_grid_db = jc.at("snr_db").get<std::vector<double>>();
    c.min_bits = jc.at("min_bits").get<std::uint64_t>();
    c.min_errors = jc.at("min_errors").get<std::uint64_t>();
    c.max_bits = jc.at("max_bits").get<std::uint64_t>();
    c.detectors.clear();
    for (const auto& d : jc.at("detectors")) c.detectors.push_back(parse_detector(d.get<std::string>()));
    plan.select_spec = jc.at("select").get<std::string>();
    apply_select_spec(c, plan.select_spec);
    c.normalize = jc.at("normalize").get<bool>();
    c.map_metric = jc.value("map_metric", "clipped") == "unclipped" ? MetricPoint::unclipped : MetricPoint::clipped;
    c.seed = jc.at("seed").get<std::uint64_t>();
    c.workers = jc.at("workers").get<int>();

    const auto& jch = j.at("channel");
    if (jch.at("source").get<std::string>() == "lambertian") {
      RoomGeometry g;
      g.lambertian_order = jch.at("lambertian_order").get<double>();
      g.pd_area = jch.at("pd_area_m2").get<double>();
      g.pd_fov_half_angle = jch.at("pd_fov_half_angle_rad").get<double>();
      g.led_positions = detail::points_from_json(jch.at("led_positions_m"));
      g.pd_positions = detail::points_from_json(jch.at("pd_positions_m"));
      c.channel = GeometrySource{std::move(g)};
    } else {
      const auto file = jch.at("path").get<std::string>();
      const auto recorded = jch.at("fnv1a64").get<std::string>();
      const auto actual = fnv1a64(read_file(file));
      if (fmt::format("{:016x}", actual) != recorded)
        throw ConfigError(fmt::format("--from-manifest: channel file '{}' changed since the recorded run", file));
      c.channel = FileSource{file};
      plan.channel_hash = actual;
    }
    return plan;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("--from-manifest: malformed manifest '{}': {}", path, e.what()));
  }
}

/// Executes a resolved plan and writes its output files.
inline void execute(const RunPlan& plan, std::ostream& err) {
  validate(plan.config);
  const ChannelMatrix h = resolve_channel(plan.config);
  const ResolvedMapping mapping = resolve_mapping(plan.config, h);

  ProgressFn progress;
  if (!plan.quiet)
    progress = [&err](const BerRecord& r) {
      err << fmt::format("[{}] snr={} dB bits={} errors={} ber={:.3e}\n", to_string(r.detector), r.snr_db,
                         r.bits_sent, r.bit_errors, r.ber);
    };
  const auto records = run_ber_sweep(plan.config, h, mapping.mapping, progress);

  std::filesystem::create_directories(plan.out_dir);
  std::vector<std::string> outputs{"ber.csv"};
  detail::write_text(plan.out_dir / "ber.csv", format_ber_csv(records));
  if (mapping.report) {
    detail::write_text(plan.out_dir / "selection.csv", format_selection_csv(*mapping.report));
    outputs.emplace_back("selection.csv");
  }
  outputs.emplace_back("manifest.json");
  detail::write_text(plan.out_dir / "manifest.json", manifest_json(plan, h, mapping, outputs).dump(2) + "\n");
}

/// Entry point shared by the executable and the tests. `args` excludes the
/// program name.
inline int run_cli(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"GLIM optical MIMO-OFDM link simulator", kToolName};
  app.set_version_flag("--version", kToolVersion);

  int n_tx = 8, n_rx = 8, qam = 4, nfft = 64, workers = 0;
  std::string snr = "0:5:40", detector = "map", select = "auto", channel = "lambertian", normalize = "on",
              map_metric = "clipped";
  std::uint64_t min_bits = 100'000, min_errors = 100, max_bits = 10'000'000, seed = 1;
  double separation = 2.15, lambertian_order = 1.0, pd_area = 1e-4, fov_deg = 85.0;
  std::string out_dir, from_manifest;
  bool quiet = false;

  app.add_option("--nt", n_tx, "number of LEDs (even)");
  app.add_option("--nr", n_rx, "number of photodetectors");
  app.add_option("--qam", qam, "constellation order: 4, 8 or 16");
  app.add_option("--nfft", nfft, "OFDM subcarriers (power of two)");
  app.add_option("--snr", snr, "SNR grid in dB, start:step:stop");
  app.add_option("--min-bits", min_bits, "minimum bits per SNR point");
  app.add_option("--min-errors", min_errors, "minimum bit errors per SNR point");
  app.add_option("--max-bits", max_bits, "hard cap on bits per SNR point");
  app.add_option("--detector", detector, "zf, mmse, map or all");
  app.add_option("--select", select, "off, auto or pairs=1-3,2-4,...");
  app.add_option("--channel", channel, "lambertian or file:PATH");
  app.add_option("--normalize", normalize, "scale H to unit mean column energy: on or off");
  app.add_option("--seed", seed, "64-bit RNG seed");
  app.add_option("--workers", workers, "worker threads (default: all cores)");
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--separation", separation, "LED-to-PD vertical distance in meters (lambertian)");
  app.add_option("--lambertian-order", lambertian_order, "LED Lambertian order m (lambertian)");
  app.add_option("--pd-area", pd_area, "photodetector area in m^2 (lambertian)");
  app.add_option("--fov-deg", fov_deg, "photodetector field-of-view half-angle in degrees (lambertian)");
  app.add_option("--from-manifest", from_manifest, "re-run the configuration recorded in a manifest.json");
  app.add_flag("--quiet", quiet, "no progress output on stderr");
  app.add_option("--map-metric", map_metric, "debug: score MAP hypotheses at the clipped or unclipped estimate")
      ->group("Debug");

  std::reverse(args.begin(), args.end());  // CLI11 consumes a reversed vector
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForVersion&) {
    out << kToolVersion << '\n';
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kConfigError;
  }

  try {
    RunPlan plan;
    if (!from_manifest.empty()) {
      plan = plan_from_manifest(from_manifest);
    } else {
      SimConfig& c = plan.config;
      c.n_tx = n_tx;
      c.n_rx = n_rx;
      if (qam != 4 && qam != 8 && qam != 16) throw ConfigError(fmt::format("--qam must be 4, 8 or 16, got {}", qam));
      c.qam_order = qam;
      c.n_subcarriers = nfft;
      c.snr_grid_db = parse_snr_range(snr);
      c.min_bits = min_bits;
      c.min_errors = min_errors;
      c.max_bits = max_bits;
      if (detector == "all") {
        c.detectors = {DetectorKind::zf, DetectorKind::mmse, DetectorKind::map};
      } else {
        try {
          c.detectors = {parse_detector(detector)};
        } catch (const ConfigError&) {
          throw ConfigError(fmt::format("--detector expects zf, mmse, map or all, got '{}'", detector));
        }
      }
      plan.select_spec = select;
      apply_select_spec(c, select);
      if (normalize != "on" && normalize != "off")
        throw ConfigError(fmt::format("--normalize expects on or off, got '{}'", normalize));
      c.normalize = normalize == "on";
      if (map_metric != "clipped" && map_metric != "unclipped")
        throw ConfigError(fmt::format("--map-metric expects clipped or unclipped, got '{}'", map_metric));
      c.map_metric = map_metric == "clipped" ? MetricPoint::clipped : MetricPoint::unclipped;
      c.seed = seed;

      if (channel == "lambertian") {
        if (n_tx < 2 || n_tx % 2 != 0) throw ConfigError(fmt::format("--nt must be even and >= 2, got {}", n_tx));
        if (n_rx < 1) throw ConfigError(fmt::format("--nr must be >= 1, got {}", n_rx));
        RoomGeometry g = default_geometry(n_tx, n_rx, separation);
        g.lambertian_order = lambertian_order;
        g.pd_area = pd_area;
        g.pd_fov_half_angle = fov_deg * std::numbers::pi / 180.0;
        try {
          validate(g);
        } catch (const Error& e) {
          throw ConfigError(fmt::format("--channel lambertian: {}", e.what()));
        }
        c.channel = GeometrySource{std::move(g)};
      } else if (channel.rfind("file:", 0) == 0) {
        const std::string path = channel.substr(5);
        const std::string text = read_file(path);
        plan.channel_hash = fnv1a64(text);
        try {
          const ChannelMatrix h = load_channel_csv(text);
          // Shape comes from the file unless the user pinned it explicitly.
          if (app.count("--nt") == 0) c.n_tx = h.n_tx();
          if (app.count("--nr") == 0) c.n_rx = h.n_rx();
          if (c.fixed_mapping && app.count("--nt") == 0 && c.fixed_mapping->n_tx() != c.n_tx)
            throw ConfigError(fmt::format("--select pairs cover {} LEDs but the channel file has {}",
                                          c.fixed_mapping->n_tx(), c.n_tx));
        } catch (const ConfigError&) {
          throw;
        } catch (const Error& e) {
          throw ConfigError(fmt::format("--channel: '{}': {}", path, e.what()));
        }
        c.channel = FileSource{path};
      } else {
        throw ConfigError(fmt::format("--channel expects lambertian or file:PATH, got '{}'", channel));
      }
    }
    if (app.count("--workers") || from_manifest.empty())
      plan.config.workers = workers > 0 ? workers : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    if (out_dir.empty()) throw ConfigError("--out is required");
    plan.out_dir = out_dir;
    plan.quiet = quiet;
    validate(plan.config);
    execute(plan, err);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    err << "runtime error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kOk;
}

}  // namespace glim::cli
