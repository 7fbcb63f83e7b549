// Copyright 2026 The ITIS Engine Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Operator entry points: simulate, report, serve, encode and loop.
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#ifndef ITIS_CLI_HPP
#define ITIS_CLI_HPP

#include <csignal>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <pthread.h>

#include "CLI11.hpp"
#include "json.hpp"

#include "itis/bridge.hpp"
#include "itis/evaluation.hpp"
#include "itis/guidance.hpp"
#include "itis/png_io.hpp"
#include "itis/predictor.hpp"
#include "itis/service.hpp"
#include "itis/simloop.hpp"

namespace itis {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

class UsageError : public Error {
 public:
  using Error::Error;
};

/// Parameters of one command invocation, embedded in every artifact it writes.
/// Scheduling settings such as the job count are deliberately absent: they
/// must not change any output.
struct RunSpec {
  std::string subcommand;
  std::string dataset;
  std::string layout = "folder-pairs";
  std::string predictor = "builtin";
  std::string sampler = "iterative-largest";
  std::vector<double> targets{0.85, 0.90};
  std::uint64_t seed = 0;
  std::string out = ".";
  std::string mode = "scratch";
  nlohmann::json settings = nlohmann::json::object();  // subcommand-specific

  void validate() const {
    for (double t : targets) {
      if (!(t > 0.0 && t <= 1.0)) throw UsageError("targets must be in (0, 1]");
    }
  }
};

inline nlohmann::json to_json(const RunSpec& s) {
  return {{"subcommand", s.subcommand}, {"dataset", s.dataset}, {"layout", s.layout},
          {"predictor", s.predictor},   {"sampler", s.sampler}, {"targets", s.targets},
          {"seed", s.seed},             {"out", s.out},         {"mode", s.mode},
          {"settings", s.settings}};
}

/// "builtin", or a bridge endpoint written "bridge:cmd:<shell>",
/// "bridge:tcp:<host>:<port>" or the bare "cmd:"/"tcp:" forms.
inline std::unique_ptr<Predictor> make_predictor(const std::string& spec,
                                                 std::chrono::milliseconds timeout) {
  if (spec == "builtin") return std::make_unique<NearestClickPredictor>();
  std::string endpoint = spec;
  if (endpoint.rfind("bridge:", 0) == 0) endpoint = endpoint.substr(7);
  if (endpoint.rfind("cmd:", 0) != 0 && endpoint.rfind("tcp:", 0) != 0) {
    throw UsageError("unknown predictor '" + spec + "' (use builtin, bridge:cmd:... or bridge:tcp:...)");
  }
  return std::make_unique<BridgePredictor>(endpoint, timeout);
}

namespace detail {

/// Fills options absent from the command line with values from a JSON
/// config object whose keys are the long flag names.
inline void apply_config(CLI::App& app, const std::string& path) {
  if (path.empty()) return;
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file " + path);
  nlohmann::json cfg;
  try {
    in >> cfg;
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("config file " + path + " is not valid JSON: " + e.what());
  }
  if (!cfg.is_object()) throw UsageError("config file must hold a JSON object");
  for (const auto& [key, value] : cfg.items()) {
    CLI::Option* opt = nullptr;
    for (CLI::Option* o : app.get_options()) {
      const auto& names = o->get_lnames();
      if (std::find(names.begin(), names.end(), key) != names.end()) opt = o;
    }
    if (opt == nullptr || key == "config") throw UsageError("unknown config key '" + key + "'");
    if (opt->count() > 0) continue;
    auto add = [&](const nlohmann::json& v) {
      opt->add_result(v.is_string() ? v.get<std::string>() : v.dump());
    };
    if (value.is_array()) {
      for (const auto& v : value) add(v);
    } else {
      add(value);
    }
    opt->run_callback();
  }
}

inline SimulationOptions simulation_options(const RunSpec& spec, int max_clicks, const std::string& encoding,
                                            bool record_masks) {
  SimulationOptions o;
  o.sampler = parse_sampler(spec.sampler);
  o.mode = parse_mode(spec.mode);
  o.max_clicks = max_clicks;
  o.guidance.encoding = parse_click_encoding(encoding);
  o.record_masks = record_masks;
  o.validate();
  return o;
}

inline Click parse_click_arg(const std::string& text, int round) {
  std::istringstream is(text);
  std::string xs, ys, ps;
  if (!std::getline(is, xs, ',') || !std::getline(is, ys, ',') || !std::getline(is, ps)) {
    throw UsageError("click must be written x,y,polarity ('" + text + "')");
  }
  try {
    return Click{std::stoi(xs), std::stoi(ys), parse_polarity(ps), round};
  } catch (const std::exception&) {
    throw UsageError("bad click '" + text + "'");
  }
}

inline Grid<std::uint16_t> quantize_channel(const Channel& c) {
  Grid<std::uint16_t> q(c.width(), c.height());
  for (std::size_t i = 0; i < c.size(); ++i) {
    q[i] = static_cast<std::uint16_t>(std::lround(std::clamp(c[i], 0.0f, 1.0f) * 65535.0f));
  }
  return q;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Error("cannot write " + path.string());
}

}  // namespace detail

/// Parses and runs one command line. Output goes to `out`, diagnostics to `err`.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  CLI::App app{"Interactive segmentation engine: simulation, evaluation and annotation service", "itis"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  const std::vector<std::string> samplers{"iterative-largest", "cluster", "random"};
  const std::vector<std::string> layouts{"folder-pairs", "pascal-instances"};
  const std::vector<std::string> modes{"scratch", "refine"};
  const std::vector<std::string> encodings{"gaussian", "distance"};
  const int default_jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));

  RunSpec spec;
  std::string config;
  int jobs = default_jobs;
  int max_clicks = kMaxClicks;
  std::string encoding = "gaussian";
  bool record_masks = false;
  int bridge_timeout_ms = 30000;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--seed", spec.seed, "Master random seed (recorded in every output)")
        ->capture_default_str();
    sub->add_option("--config", config, "JSON file of flag values; command-line flags take precedence");
  };
  auto predictor_flags = [&](CLI::App* sub) {
    sub->add_option("--predictor", spec.predictor,
                    "builtin, bridge:cmd:<shell command> or bridge:tcp:<host>:<port>")
        ->capture_default_str();
    sub->add_option("--bridge-timeout-ms", bridge_timeout_ms, "Deadline for each bridge exchange")
        ->capture_default_str();
    sub->add_option("--click-encoding", encoding, "Click channel encoding")
        ->check(CLI::IsMember(encodings))
        ->capture_default_str();
  };

  CLI::App* simulate = app.add_subcommand("simulate", "Simulate annotation of every dataset instance");
  simulate->add_option("--dataset", spec.dataset, "Dataset root directory (required)");
  simulate->add_option("--layout", spec.layout, "Dataset layout")->check(CLI::IsMember(layouts))->capture_default_str();
  simulate->add_option("--sampler", spec.sampler, "Correction click sampler")
      ->check(CLI::IsMember(samplers))
      ->capture_default_str();
  simulate->add_option("--mode", spec.mode, "Start from scratch or refine initial masks")
      ->check(CLI::IsMember(modes))
      ->capture_default_str();
  simulate->add_option("--max-clicks", max_clicks, "Clicks per instance, at most 20")->capture_default_str();
  simulate->add_option("--targets", spec.targets, "Target IoUs recorded for the report")->capture_default_str();
  simulate->add_flag("--record-masks", record_masks, "Embed every predicted mask as RLE");
  simulate->add_option("--out", spec.out, "Output directory for traces.jsonl")->capture_default_str();
  simulate->add_option("--jobs", jobs, "Worker threads (default: available parallelism)")->capture_default_str();
  predictor_flags(simulate);
  common(simulate);

  std::string traces_path;
  std::string report_out;
  CLI::App* report = app.add_subcommand("report", "Compute click metrics and the mIoU curve from traces");
  report->add_option("--traces", traces_path, "traces.jsonl written by simulate (required)");
  report->add_option("--targets", spec.targets, "Target IoUs")->capture_default_str();
  report->add_option("--out", report_out, "Output directory (default: next to the traces)");
  common(report);

  ServerOptions server;
  std::vector<std::string> bridges;
  std::string log_dir;
  std::string static_dir;
  CLI::App* serve = app.add_subcommand("serve", "Run the annotation HTTP service");
  serve->add_option("--host", server.host, "Bind address")->capture_default_str();
  serve->add_option("--port", server.port, "Port, 0 for any free port")->capture_default_str();
  serve->add_option("--static-dir", static_dir, "Directory served under the static mount");
  serve->add_option("--static-mount", server.static_mount, "URL prefix of the static mount")->capture_default_str();
  serve->add_option("--bridge", bridges, "Extra predictor NAME=ENDPOINT (repeatable)");
  serve->add_option("--log-dir", log_dir, "Write-ahead session log directory; replayed on start");
  serve->add_option("--bridge-timeout-ms", bridge_timeout_ms, "Deadline for each bridge exchange")
      ->capture_default_str();
  serve->add_option("--click-encoding", encoding, "Click channel encoding")
      ->check(CLI::IsMember(encodings))
      ->capture_default_str();
  common(serve);

  std::string image_path;
  std::string mask_path;
  std::vector<std::string> click_args;
  double sigma = GaussianParams{}.sigma;
  CLI::App* encode = app.add_subcommand("encode", "Write the guidance channels of one image as 16-bit PNGs");
  encode->add_option("--image", image_path, "RGB or gray PNG (required)");
  encode->add_option("--click", click_args, "Click x,y,positive|negative (repeatable)");
  encode->add_option("--mask", mask_path, "Previous mask for the mask channel");
  encode->add_option("--click-encoding", encoding, "Click channel encoding")
      ->check(CLI::IsMember(encodings))
      ->capture_default_str();
  encode->add_option("--sigma", sigma, "Gaussian click sigma in pixels")->capture_default_str();
  encode->add_option("--out", spec.out, "Output directory")->capture_default_str();
  common(encode);

  LoopConfig loop_config;
  CLI::App* loop = app.add_subcommand("loop", "Run the iterative training loop and log its epochs");
  loop->add_option("--dataset", spec.dataset, "Dataset root directory (required)");
  loop->add_option("--layout", spec.layout, "Dataset layout")->check(CLI::IsMember(layouts))->capture_default_str();
  loop->add_option("--epochs", loop_config.max_epochs, "Number of epochs")->capture_default_str();
  loop->add_option("--reset-probability", loop_config.reset_probability, "Per-epoch click reset chance")
      ->capture_default_str();
  loop->add_flag("--use-mask-channel", loop_config.use_mask_channel, "Feed the previous mask to the predictor");
  loop->add_option("--out", spec.out, "Output directory for loop.jsonl")->capture_default_str();
  loop->add_option("--jobs", jobs, "Worker threads (default: available parallelism)")->capture_default_str();
  predictor_flags(loop);
  common(loop);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  CLI::App* chosen = app.get_subcommands().front();
  spec.subcommand = chosen->get_name();
  const auto timeout = std::chrono::milliseconds(bridge_timeout_ms);

  try {
    detail::apply_config(*chosen, config);
    spec.validate();
    if (jobs < 1) throw UsageError("--jobs must be at least 1");
    err << "itis " << spec.subcommand << ": seed=" << spec.seed << '\n';

    if (chosen == simulate) {
      if (spec.dataset.empty()) throw UsageError("--dataset is required");
      SimulationOptions options;
      try {
        options = detail::simulation_options(spec, max_clicks, encoding, record_masks);
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
      spec.settings = {{"max_clicks", max_clicks}, {"click_encoding", encoding}, {"record_masks", record_masks}};
      const Dataset data = load_dataset(spec.dataset, parse_layout(spec.layout));
      for (const auto& w : data.warnings) err << "warning: " << w.file << ": " << w.message << '\n';
      for (const auto& e : data.errors) err << "error: " << e.file << ": " << e.message << '\n';
      if (data.instances.empty()) throw Error("dataset " + spec.dataset + " has no usable instances");
      auto predictor = make_predictor(spec.predictor, timeout);
      const SimulationRun run = run_simulation(data.instances, *predictor, options, spec.seed, jobs);
      for (const auto& w : run.warnings) err << "warning: " << w << '\n';

      std::ostringstream traces;
      write_traces(traces, to_json(spec), run.traces);
      const auto path = std::filesystem::path(spec.out) / "traces.jsonl";
      detail::write_text(path, traces.str());

      std::size_t aborted = 0;
      for (const auto& t : run.traces) {
        if (t.status == TraceStatus::aborted) {
          ++aborted;
          err << "aborted: " << t.instance_id << ": " << t.error << '\n';
        }
      }
      out << "wrote " << path.string() << " (" << run.traces.size() << " instances, " << aborted
          << " aborted, " << data.errors.size() << " file errors, " << data.skipped_empty
          << " empty skipped)\n";
      return aborted == 0 && data.errors.empty() ? kExitOk : kExitFailure;
    }

    if (chosen == report) {
      if (traces_path.empty()) throw UsageError("--traces is required");
      std::ifstream in(traces_path);
      if (!in) throw Error("cannot read traces file " + traces_path);
      const TraceFile file = read_traces(in);
      nlohmann::json source = file.header;
      spec.dataset = source.value("dataset", "");
      spec.layout = source.value("layout", spec.layout);
      spec.predictor = source.value("predictor", spec.predictor);
      spec.sampler = source.value("sampler", spec.sampler);
      spec.mode = source.value("mode", spec.mode);
      if (report->get_option("--seed")->count() == 0 && config.empty()) {
        spec.seed = source.value("seed", std::uint64_t{0});
      }
      const std::filesystem::path dir =
          report_out.empty() ? std::filesystem::path(traces_path).parent_path() : std::filesystem::path(report_out);
      spec.out = dir.string();
      spec.settings = {{"source_run_spec", source}};
      const EvaluationReport r = make_report(file.traces, spec.targets, {{"run_spec", to_json(spec)}});
      detail::write_text(dir / "report.json", to_json(r).dump(2) + "\n");
      detail::write_text(dir / "curve.csv", curve_csv(r));
      for (const auto& t : r.targets) {
        out << "@" << t.target << ": " << t.mean_clicks_per_object << " clicks per object, "
            << format_uniform_clicks(t.uniform_clicks) << " uniform clicks\n";
      }
      if (r.aborted > 0) err << "warning: " << r.aborted << " aborted traces excluded\n";
      return kExitOk;
    }

    if (chosen == serve) {
      AnnotationService::Options service_options;
      service_options.guidance.encoding = parse_click_encoding(encoding);
      if (!log_dir.empty()) service_options.log_dir = log_dir;
      if (!static_dir.empty()) server.static_dir = static_dir;
      AnnotationService service(service_options);
      service.register_predictor("builtin", std::make_shared<NearestClickPredictor>());
      for (const std::string& b : bridges) {
        const auto eq = b.find('=');
        if (eq == std::string::npos || eq == 0) throw UsageError("--bridge must be NAME=ENDPOINT");
        service.register_predictor(b.substr(0, eq), make_predictor(b.substr(eq + 1), timeout));
      }
      const std::size_t restored = service.restore();

      sigset_t signals;
      sigemptyset(&signals);
      sigaddset(&signals, SIGINT);
      sigaddset(&signals, SIGTERM);
      pthread_sigmask(SIG_BLOCK, &signals, nullptr);
      ServiceServer http(service, server);
      const int port = http.start();
      out << "listening on " << server.host << ":" << port << " (" << restored << " sessions restored)"
          << std::endl;
      int sig = 0;
      sigwait(&signals, &sig);
      http.stop();
      return kExitOk;
    }

    if (chosen == encode) {
      if (image_path.empty()) throw UsageError("--image is required");
      const RgbImage image = load_rgb_image(image_path);
      ClickSet clicks;
      for (const std::string& c : click_args) {
        const Click click = detail::parse_click_arg(c, clicks.next_round());
        if (!image.contains(click.x, click.y)) throw UsageError("click '" + c + "' is outside the image");
        clicks.push(click);
      }
      std::optional<Bitmask> mask;
      if (!mask_path.empty()) mask = load_mask(mask_path);
      GuidanceOptions g;
      g.encoding = parse_click_encoding(encoding);
      g.gaussian.sigma = sigma;
      const GuidanceStack stack = assemble_stack(image, clicks, mask, g);
      spec.settings = {{"image", image_path},   {"clicks", click_args}, {"mask", mask_path},
                       {"click_encoding", encoding}, {"sigma", sigma}};
      const std::filesystem::path dir(spec.out);
      std::filesystem::create_directories(dir);
      const char* names[] = {"red", "green", "blue", "pos", "neg", "mask"};
      nlohmann::json channels = nlohmann::json::object();
      for (int c = GuidanceStack::kPositive; c < stack.channels(); ++c) {
        const Channel plane = stack.channel(c);
        const std::string file = std::string("channel_") + names[c] + ".png";
        write_file_bytes(dir / file, encode_gray16_png(detail::quantize_channel(plane)));
        const auto it = std::max_element(plane.values().begin(), plane.values().end());
        const auto idx = static_cast<int>(it - plane.values().begin());
        channels[names[c]] = {{"file", file},
                              {"max", *it},
                              {"argmax", {idx % plane.width(), idx / plane.width()}}};
      }
      detail::write_text(dir / "encode.json",
                         nlohmann::json{{"run_spec", to_json(spec)}, {"channels", channels}}.dump(2) + "\n");
      out << "wrote " << (stack.channels() - GuidanceStack::kPositive) << " channels to " << dir.string() << '\n';
      return kExitOk;
    }

    if (chosen == loop) {
      if (spec.dataset.empty()) throw UsageError("--dataset is required");
      loop_config.guidance.encoding = parse_click_encoding(encoding);
      try {
        loop_config.validate();
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
      spec.settings = {{"epochs", loop_config.max_epochs},
                       {"reset_probability", loop_config.reset_probability},
                       {"use_mask_channel", loop_config.use_mask_channel},
                       {"click_encoding", encoding}};
      const Dataset data = load_dataset(spec.dataset, parse_layout(spec.layout));
      for (const auto& e : data.errors) err << "error: " << e.file << ": " << e.message << '\n';
      if (data.instances.empty()) throw Error("dataset " + spec.dataset + " has no usable instances");
      std::vector<TrainObject> objects;
      for (const auto& inst : data.instances) {
        objects.push_back({inst.instance_id, {inst.gt, inst.negative_objects}, load_rgb_image(inst.image_path)});
      }
      auto predictor = make_predictor(spec.predictor, timeout);
      std::ostringstream log;
      log << nlohmann::json{{"type", "header"}, {"format", "itis-loop/1"}, {"run_spec", to_json(spec)}}.dump()
          << '\n';
      const auto records = run_training_loop(objects, *predictor, loop_config, spec.seed, jobs, {}, &log);
      const auto path = std::filesystem::path(spec.out) / "loop.jsonl";
      detail::write_text(path, log.str());
      std::size_t resets = 0;
      for (const auto& r : records) resets += r.reset ? 1 : 0;
      out << "wrote " << path.string() << " (" << records.size() << " records, " << resets << " resets)\n";
      return data.errors.empty() ? kExitOk : kExitFailure;
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace itis

#endif  // ITIS_CLI_HPP
