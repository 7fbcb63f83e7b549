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

// Benchmark protocol: simulated annotation of every dataset instance with up
// to 20 correction clicks, and the clicks@IoU / mIoU-curve metrics computed
// from the resulting traces.

#ifndef ITIS_EVALUATION_HPP
#define ITIS_EVALUATION_HPP

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <mutex>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "itis/guidance.hpp"
#include "itis/png_io.hpp"
#include "itis/predictor.hpp"
#include "itis/raster.hpp"
#include "itis/rng.hpp"
#include "itis/sampling.hpp"

namespace itis {

inline constexpr int kMaxClicks = 20;

// ---------------------------------------------------------------------------
// Datasets

enum class DatasetLayout { folder_pairs, pascal_instances };

inline std::string_view to_string(DatasetLayout l) {
  return l == DatasetLayout::folder_pairs ? "folder-pairs" : "pascal-instances";
}

inline DatasetLayout parse_layout(std::string_view s) {
  if (s == "folder-pairs") return DatasetLayout::folder_pairs;
  if (s == "pascal-instances") return DatasetLayout::pascal_instances;
  throw std::invalid_argument("unknown dataset layout '" + std::string(s) + "'");
}

struct DatasetInstance {
  std::filesystem::path image_path;
  Bitmask gt;
  std::vector<Bitmask> negative_objects;
  std::string instance_id;
  std::optional<Bitmask> initial_mask;  // refinement mode
};

struct DatasetIssue {
  std::string file;
  std::string message;
};

struct Dataset {
  std::vector<DatasetInstance> instances;
  std::vector<DatasetIssue> errors;    // files that could not be used
  std::vector<DatasetIssue> warnings;  // e.g. empty masks
  std::size_t skipped_empty = 0;
};

/// PASCAL VOC marks object outlines with 255; never an instance.
inline constexpr int kPascalVoidLabel = 255;

/// Reads a dataset rooted at `root`:
///   folder-pairs      images/X.png with masks/X.png (nonzero = object)
///   pascal-instances  images/X.png with paletted masks/X.png; every label
///                     except 0 and 255 is one instance and the image's other
///                     labels become its negative objects
/// Optional initial masks for refinement: initial/X.png (folder-pairs) or
/// initial/X_<label>.png (pascal-instances). Per-file problems are collected
/// rather than thrown.
inline Dataset load_dataset(const std::filesystem::path& root, DatasetLayout layout) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw ImageIoError("dataset root " + root.string() + " is not a directory");
  const fs::path images = root / "images";
  const fs::path masks = root / "masks";
  if (!fs::is_directory(images)) throw ImageIoError("dataset has no images/ directory");

  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(images)) {
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());

  Dataset out;
  for (const fs::path& image : files) {
    const std::string stem = image.stem().string();
    const fs::path mask_path = masks / (stem + ".png");
    try {
      if (!fs::exists(mask_path)) {
        out.errors.push_back({mask_path.string(), "missing mask"});
        continue;
      }
      const auto [iw, ih] = png_dimensions(image);
      const Grid<std::uint8_t> labels = load_label_png(mask_path);
      if (labels.width() != iw || labels.height() != ih) {
        out.errors.push_back({mask_path.string(), "mask size does not match image"});
        continue;
      }
      auto initial_for = [&](const fs::path& p) -> std::optional<Bitmask> {
        if (!fs::exists(p)) return std::nullopt;
        Bitmask m = load_mask(p);
        require_same_shape(m, labels, "initial mask");
        return m;
      };

      if (layout == DatasetLayout::folder_pairs) {
        Bitmask gt = mask_from_labels(labels);
        if (gt.none()) {
          ++out.skipped_empty;
          out.warnings.push_back({mask_path.string(), "empty mask, instance skipped"});
          continue;
        }
        out.instances.push_back({image, std::move(gt), {}, stem, initial_for(root / "initial" / (stem + ".png"))});
        continue;
      }

      std::set<int> ids;
      for (std::uint8_t v : labels.values()) {
        if (v != 0 && v != kPascalVoidLabel) ids.insert(v);
      }
      if (ids.empty()) {
        ++out.skipped_empty;
        out.warnings.push_back({mask_path.string(), "no instances in mask, image skipped"});
        continue;
      }
      std::vector<std::pair<int, Bitmask>> objects;
      for (int id : ids) objects.emplace_back(id, mask_from_labels(labels, id));
      for (const auto& [id, gt] : objects) {
        DatasetInstance inst;
        inst.image_path = image;
        inst.gt = gt;
        inst.instance_id = stem + "#" + std::to_string(id);
        for (const auto& [other, m] : objects) {
          if (other != id) inst.negative_objects.push_back(m);
        }
        inst.initial_mask = initial_for(root / "initial" / (stem + "_" + std::to_string(id) + ".png"));
        out.instances.push_back(std::move(inst));
      }
    } catch (const std::exception& e) {
      out.errors.push_back({mask_path.string(), e.what()});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Simulation

enum class SimulationMode { scratch, refine };

inline std::string_view to_string(SimulationMode m) {
  return m == SimulationMode::scratch ? "scratch" : "refine";
}

inline SimulationMode parse_mode(std::string_view s) {
  if (s == "scratch") return SimulationMode::scratch;
  if (s == "refine") return SimulationMode::refine;
  throw std::invalid_argument("unknown mode '" + std::string(s) + "'");
}

struct SimulationOptions {
  SamplerKind sampler = SamplerKind::iterative_largest;
  int max_clicks = kMaxClicks;
  SimulationMode mode = SimulationMode::scratch;
  GuidanceOptions guidance{};
  Connectivity connectivity = Connectivity::four;
  bool record_masks = false;

  void validate() const {
    if (max_clicks < 1 || max_clicks > kMaxClicks) {
      throw std::invalid_argument("max clicks must be in [1, " + std::to_string(kMaxClicks) + "]");
    }
  }
};

struct RoundRecord {
  int round = 0;  // 1-based
  Click click;
  double iou = 0.0;
  std::optional<std::string> mask_rle;
};

enum class TraceStatus { complete, perfect, aborted };

inline std::string_view to_string(TraceStatus s) {
  switch (s) {
    case TraceStatus::complete: return "complete";
    case TraceStatus::perfect: return "perfect";
    case TraceStatus::aborted: return "aborted";
  }
  return "?";
}

inline TraceStatus parse_trace_status(std::string_view s) {
  if (s == "complete") return TraceStatus::complete;
  if (s == "perfect") return TraceStatus::perfect;
  if (s == "aborted") return TraceStatus::aborted;
  throw FormatError("unknown trace status '" + std::string(s) + "'");
}

struct SimulationTrace {
  std::string instance_id;
  std::string protocol = "scratch";
  std::string sampler = "iterative-largest";
  std::uint64_t seed = 0;
  double initial_iou = 0.0;  // round 0, before any click
  std::vector<RoundRecord> rounds;
  TraceStatus status = TraceStatus::complete;
  std::string error;  // set when aborted

  /// IoU after k clicks; traces that ended early carry their last IoU forward.
  double iou_at(int k) const {
    if (k <= 0) return initial_iou;
    if (static_cast<std::size_t>(k) <= rounds.size()) return rounds[k - 1].iou;
    return rounds.empty() ? initial_iou : rounds.back().iou;
  }

  friend bool operator==(const SimulationTrace& a, const SimulationTrace& b) {
    if (a.instance_id != b.instance_id || a.protocol != b.protocol || a.sampler != b.sampler ||
        a.seed != b.seed || a.initial_iou != b.initial_iou || a.status != b.status ||
        a.error != b.error || a.rounds.size() != b.rounds.size()) {
      return false;
    }
    for (std::size_t i = 0; i < a.rounds.size(); ++i) {
      const auto& x = a.rounds[i];
      const auto& y = b.rounds[i];
      if (x.round != y.round || !(x.click == y.click) || x.iou != y.iou || x.mask_rle != y.mask_rle) {
        return false;
      }
    }
    return true;
  }
};

/// Simulated annotation of one instance. Scratch mode starts from an empty
/// prediction; refine mode starts from the instance's initial mask. Predictors
/// that use the mask channel receive the current mask through it. Every round places one click
/// on the current error, re-encodes, predicts and thresholds. The trace stops
/// early only when the prediction matches the ground truth. Failures of the
/// predictor or sampler end the trace as `aborted` with the rounds so far.
inline SimulationTrace simulate_instance(Predictor& predictor, const DatasetInstance& instance,
                                         const RgbImage& image, const SimulationOptions& options,
                                         std::uint64_t seed) {
  options.validate();
  require_same_shape(image, instance.gt, "simulate_instance");
  SimulationTrace trace;
  trace.instance_id = instance.instance_id;
  trace.protocol = std::string(to_string(options.mode));
  trace.sampler = std::string(to_string(options.sampler));
  trace.seed = seed;

  Bitmask pred(instance.gt.width(), instance.gt.height());
  if (options.mode == SimulationMode::refine) {
    if (!instance.initial_mask) {
      throw std::invalid_argument("refine mode needs an initial mask for " + instance.instance_id);
    }
    require_same_shape(*instance.initial_mask, instance.gt, "initial mask");
    pred = *instance.initial_mask;
  }
  trace.initial_iou = iou(pred, instance.gt);

  Rng rng(seed);
  ClickSet clicks;
  const bool with_mask = predictor.descriptor().uses_mask_channel;
  try {
    for (int k = 1; k <= options.max_clicks; ++k) {
      const auto click = next_click(options.sampler, pred, instance.gt, clicks, rng, options.connectivity);
      if (!click) {
        trace.status = TraceStatus::perfect;
        break;
      }
      clicks.push(*click);
      const GuidanceStack stack = assemble_stack(image, clicks, with_mask ? &pred : nullptr, options.guidance);
      pred = threshold(predictor.predict(stack, clicks));
      RoundRecord r{k, *click, iou(pred, instance.gt), std::nullopt};
      if (options.record_masks) r.mask_rle = to_rle(pred);
      trace.rounds.push_back(std::move(r));
    }
  } catch (const std::exception& e) {
    trace.status = TraceStatus::aborted;
    trace.error = e.what();
  }
  return trace;
}

struct SimulationRun {
  std::vector<SimulationTrace> traces;  // dataset order
  std::vector<std::string> warnings;
};

/// Simulates every instance on `jobs` worker threads. Per-instance seeds are
/// derived from `master_seed` and the instance id, so output is independent
/// of scheduling. Predictors that are not concurrency-safe are serialised.
inline SimulationRun run_simulation(const std::vector<DatasetInstance>& instances, Predictor& predictor,
                                    const SimulationOptions& options, std::uint64_t master_seed,
                                    int jobs = 1) {
  options.validate();
  SimulationRun run;
  const auto desc = predictor.descriptor();
  if (options.mode == SimulationMode::refine && !desc.uses_mask_channel) {
    run.warnings.push_back("predictor '" + desc.name() +
                           "' ignores the mask channel; refine mode only seeds the first click");
  }
  std::optional<SerializedPredictor> serialized;
  Predictor* target = &predictor;
  if (!desc.concurrency_safe) {
    serialized.emplace(predictor);
    target = &*serialized;
  }

  const std::size_t n = instances.size();
  run.traces.resize(n);
  auto work = [&](std::size_t i) {
    const DatasetInstance& inst = instances[i];
    const std::uint64_t seed = derive_seed(master_seed, inst.instance_id);
    RgbImage image;
    try {
      image = load_rgb_image(inst.image_path);
    } catch (const std::exception& e) {
      SimulationTrace t;
      t.instance_id = inst.instance_id;
      t.protocol = std::string(to_string(options.mode));
      t.sampler = std::string(to_string(options.sampler));
      t.seed = seed;
      t.status = TraceStatus::aborted;
      t.error = e.what();
      run.traces[i] = std::move(t);
      return;
    }
    run.traces[i] = simulate_instance(*target, inst, image, options, seed);
  };

  jobs = std::max(1, std::min<int>(jobs, static_cast<int>(std::max<std::size_t>(n, 1))));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) work(i);
    return run;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (int t = 0; t < jobs; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) work(i);
    });
  }
  for (auto& t : pool) t.join();
  return run;
}

// ---------------------------------------------------------------------------
// Metrics. Aborted traces are excluded; callers report how many there were.

inline std::vector<const SimulationTrace*> usable_traces(const std::vector<SimulationTrace>& traces) {
  std::vector<const SimulationTrace*> out;
  for (const auto& t : traces) {
    if (t.status != TraceStatus::aborted) out.push_back(&t);
  }
  return out;
}

/// Smallest k in [1, 20] with IoU_k >= target, clipped to 20 when never reached.
inline int clicks_to_reach(const SimulationTrace& trace, double target) {
  for (int k = 1; k <= kMaxClicks; ++k) {
    if (trace.iou_at(k) >= target) return k;
  }
  return kMaxClicks;
}

/// Per-object methodology: mean of clicks_to_reach over instances.
inline double mean_clicks_per_object(const std::vector<SimulationTrace>& traces, double target) {
  const auto usable = usable_traces(traces);
  if (usable.empty()) throw std::invalid_argument("no usable traces");
  double sum = 0.0;
  for (const auto* t : usable) sum += clicks_to_reach(*t, target);
  return sum / static_cast<double>(usable.size());
}

/// mIoU after k clicks for k = 1..20.
inline std::vector<double> miou_curve(const std::vector<SimulationTrace>& traces) {
  const auto usable = usable_traces(traces);
  if (usable.empty()) throw std::invalid_argument("no usable traces");
  std::vector<double> curve(kMaxClicks, 0.0);
  for (int k = 1; k <= kMaxClicks; ++k) {
    double sum = 0.0;
    for (const auto* t : usable) sum += t->iou_at(k);
    curve[k - 1] = sum / static_cast<double>(usable.size());
  }
  return curve;
}

/// Dataset-level methodology: the same click count for every instance, the
/// smallest k whose mIoU reaches the target; nullopt renders as ">20".
inline std::optional<int> uniform_clicks_to_reach(const std::vector<SimulationTrace>& traces,
                                                  double target) {
  const auto curve = miou_curve(traces);
  for (int k = 1; k <= kMaxClicks; ++k) {
    if (curve[k - 1] >= target) return k;
  }
  return std::nullopt;
}

inline std::string format_uniform_clicks(const std::optional<int>& k) {
  return k ? std::to_string(*k) : ">" + std::to_string(kMaxClicks);
}

struct TargetResult {
  double target = 0.0;
  double mean_clicks_per_object = 0.0;
  std::optional<int> uniform_clicks;
};

struct EvaluationReport {
  std::vector<TargetResult> targets;
  std::vector<double> curve;  // 20 points
  std::size_t instances = 0;
  std::size_t aborted = 0;
  nlohmann::json metadata;
};

inline EvaluationReport make_report(const std::vector<SimulationTrace>& traces,
                                    const std::vector<double>& targets, nlohmann::json metadata = {}) {
  EvaluationReport r;
  r.instances = traces.size();
  r.aborted = traces.size() - usable_traces(traces).size();
  r.curve = miou_curve(traces);
  for (double t : targets) {
    if (!(t > 0.0 && t <= 1.0)) throw std::invalid_argument("targets must be in (0, 1]");
    r.targets.push_back({t, mean_clicks_per_object(traces, t), uniform_clicks_to_reach(traces, t)});
  }
  r.metadata = std::move(metadata);
  return r;
}

inline nlohmann::json to_json(const EvaluationReport& r) {
  nlohmann::json targets = nlohmann::json::array();
  for (const auto& t : r.targets) {
    nlohmann::json u = t.uniform_clicks ? nlohmann::json(*t.uniform_clicks)
                                        : nlohmann::json(format_uniform_clicks(std::nullopt));
    targets.push_back({{"target", t.target},
                       {"mean_clicks_per_object", t.mean_clicks_per_object},
                       {"uniform_clicks", u}});
  }
  return {{"format", "itis-report/1"},
          {"metadata", r.metadata},
          {"instances", r.instances},
          {"aborted", r.aborted},
          {"targets", targets},
          {"miou_curve", r.curve}};
}

/// "k,miou" rows after a comment line carrying the metadata.
inline std::string curve_csv(const EvaluationReport& r) {
  std::ostringstream os;
  os << "# " << r.metadata.dump() << '\n' << "k,miou\n";
  os.precision(17);
  for (std::size_t k = 0; k < r.curve.size(); ++k) os << (k + 1) << ',' << r.curve[k] << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Trace files: JSON lines. A header line with the run metadata, then per
// instance a start line (round 0), one line per round and an end line.

struct TraceFile {
  nlohmann::json header;
  std::vector<SimulationTrace> traces;
};

inline void write_traces(std::ostream& out, const nlohmann::json& run_spec,
                         const std::vector<SimulationTrace>& traces) {
  out << nlohmann::json{{"type", "header"}, {"format", "itis-traces/1"}, {"run_spec", run_spec}}.dump()
      << '\n';
  for (const auto& t : traces) {
    out << nlohmann::json{{"type", "instance"}, {"instance", t.instance_id}, {"protocol", t.protocol},
                          {"sampler", t.sampler}, {"seed", t.seed}, {"round", 0}, {"iou", t.initial_iou}}
               .dump()
        << '\n';
    for (const auto& r : t.rounds) {
      nlohmann::json j{{"type", "round"},
                       {"instance", t.instance_id},
                       {"round", r.round},
                       {"x", r.click.x},
                       {"y", r.click.y},
                       {"polarity", to_string(r.click.polarity)},
                       {"iou", r.iou}};
      if (r.mask_rle) j["mask"] = *r.mask_rle;
      out << j.dump() << '\n';
    }
    nlohmann::json end{{"type", "end"}, {"instance", t.instance_id}, {"status", to_string(t.status)},
                       {"rounds", t.rounds.size()}};
    if (t.status == TraceStatus::aborted) end["error"] = t.error;
    out << end.dump() << '\n';
  }
}

inline TraceFile read_traces(std::istream& in) {
  TraceFile file;
  std::string line;
  int line_no = 0;
  SimulationTrace* open = nullptr;
  auto fail = [&](const std::string& why) {
    throw FormatError("traces line " + std::to_string(line_no) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail(e.what());
    }
    const std::string type = j.value("type", "");
    try {
      if (line_no == 1) {
        if (type != "header") fail("first line must be the header");
        file.header = j.at("run_spec");
        continue;
      }
      if (type == "instance") {
        if (open != nullptr) fail("instance started before previous ended");
        SimulationTrace t;
        t.instance_id = j.at("instance").get<std::string>();
        t.protocol = j.at("protocol").get<std::string>();
        t.sampler = j.at("sampler").get<std::string>();
        t.seed = j.at("seed").get<std::uint64_t>();
        t.initial_iou = j.at("iou").get<double>();
        file.traces.push_back(std::move(t));
        open = &file.traces.back();
      } else if (type == "round") {
        if (open == nullptr || j.at("instance").get<std::string>() != open->instance_id) {
          fail("round outside its instance");
        }
        RoundRecord r;
        r.round = j.at("round").get<int>();
        if (r.round != static_cast<int>(open->rounds.size()) + 1 || r.round > kMaxClicks) {
          fail("rounds must be contiguous from 1 and at most 20");
        }
        r.click = Click{j.at("x").get<int>(), j.at("y").get<int>(),
                        parse_polarity(j.at("polarity").get<std::string>()), r.round - 1};
        r.iou = j.at("iou").get<double>();
        if (j.contains("mask")) r.mask_rle = j.at("mask").get<std::string>();
        open->rounds.push_back(std::move(r));
      } else if (type == "end") {
        if (open == nullptr) fail("end without instance");
        open->status = parse_trace_status(j.at("status").get<std::string>());
        if (j.contains("error")) open->error = j.at("error").get<std::string>();
        if (j.at("rounds").get<std::size_t>() != open->rounds.size()) fail("round count mismatch");
        open = nullptr;
      } else {
        fail("unknown record type '" + type + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      fail(e.what());
    }
  }
  if (line_no == 0) throw FormatError("traces file is empty");
  if (open != nullptr) throw FormatError("traces file ends inside an instance");
  return file;
}

}  // namespace itis

#endif  // ITIS_EVALUATION_HPP
