// detkit command-line front end.
//
// Exit codes: 0 ok, 1 internal or I/O error, 2 bad input, 3 defects found,
// 4 check failed.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "json.hpp"

#include "detkit/dataio.hpp"
#include "detkit/digest.hpp"
#include "detkit/eval.hpp"
#include "detkit/gradcheck.hpp"
#include "detkit/pyramid.hpp"
#include "detkit/schedule.hpp"

#ifndef DETKIT_VERSION
#define DETKIT_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

enum ExitCode { kOk = 0, kInternal = 1, kBadInput = 2, kDefects = 3, kCheckFailed = 4 };

class UsageError : public std::runtime_error {
 public:
  explicit UsageError(const std::string& what) : std::runtime_error(what) {}
};

// ---------------------------------------------------------------------------
// Configuration: defaults, then the --config file, then explicit flags.

void merge_config_file(ordered_json& resolved, const std::optional<std::string>& path) {
  if (!path) return;
  const json file = detkit::read_json_file(*path);
  if (!file.is_object()) throw UsageError(fmt::format("config '{}': top level must be an object", *path));
  for (const auto& [key, value] : file.items()) {
    if (!resolved.contains(key)) throw UsageError(fmt::format("config '{}': unknown key '{}'", *path, key));
    resolved[key] = value;
  }
}

template <typename T>
void override_with(ordered_json& resolved, const char* key, const std::optional<T>& flag) {
  if (flag) resolved[key] = *flag;
}

template <typename T>
T config_value(const ordered_json& resolved, const char* key) {
  try {
    return resolved.at(key).get<T>();
  } catch (const json::exception&) {
    throw UsageError(fmt::format("config key '{}' has the wrong type: {}", key, resolved.at(key).dump()));
  }
}

// ---------------------------------------------------------------------------
// Run manifest.

class Manifest {
 public:
  explicit Manifest(std::string command) : command_(std::move(command)), start_(std::chrono::steady_clock::now()) {}

  void set_config(const ordered_json& config) { config_ = config; }
  void add_input(const std::string& role, const fs::path& path) {
    std::ifstream probe(path);
    if (!probe) throw detkit::DataIoError(fmt::format("cannot open '{}' for reading", path.string()));
    inputs_.push_back({{"role", role}, {"path", path.string()}, {"sha256", detkit::sha256_file(path)}});
  }
  void add_output(const std::string& role, const fs::path& path) {
    outputs_.push_back({{"role", role}, {"path", path.string()}, {"sha256", detkit::sha256_file(path)}});
  }

  /// Written to `<anchor>.manifest.json` when an output file exists,
  /// otherwise to stderr.
  void emit(const std::optional<fs::path>& anchor) const {
    ordered_json m;
    m["command"] = command_;
    m["version"] = DETKIT_VERSION;
    m["config"] = config_;
    m["inputs"] = inputs_;
    m["outputs"] = outputs_;
    m["duration_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    if (anchor) {
      std::ofstream out(anchor->string() + ".manifest.json", std::ios::trunc);
      out << m.dump(2) << "\n";
      if (!out) throw detkit::DataIoError(fmt::format("cannot write manifest next to '{}'", anchor->string()));
    } else {
      std::cerr << m.dump(2) << "\n";
    }
  }

 private:
  std::string command_;
  std::chrono::steady_clock::time_point start_;
  ordered_json config_ = ordered_json::object();
  ordered_json inputs_ = ordered_json::array();
  ordered_json outputs_ = ordered_json::array();
};

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw detkit::DataIoError(fmt::format("cannot open '{}' for writing", path.string()));
  out << text;
  if (!out) throw detkit::DataIoError(fmt::format("write error on '{}'", path.string()));
}

const std::string& require(const std::optional<std::string>& value, const char* flag) {
  if (!value) throw UsageError(fmt::format("{} is required", flag));
  return *value;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::optional<std::string> gt, dets, config, out;
  std::optional<unsigned> threads;
  std::optional<std::size_t> max_dets;
  bool print_config = false;
};

ordered_json eval_defaults() {
  const detkit::EvalConfig c;
  ordered_json o;
  o["iou_thresholds"] = c.iou_thresholds;
  ordered_json ranges = ordered_json::array();
  for (const auto& r : c.area_ranges) {
    ranges.push_back({{"name", r.name}, {"lo", r.lo}, {"hi", std::isinf(r.hi) ? ordered_json() : ordered_json(r.hi)}});
  }
  o["area_ranges"] = ranges;
  o["max_detections"] = c.max_detections;
  o["recall_max_detections"] = c.recall_max_detections;
  o["threads"] = c.threads;
  return o;
}

detkit::EvalConfig eval_config_from(const ordered_json& resolved) {
  detkit::EvalConfig c;
  c.iou_thresholds = config_value<std::vector<double>>(resolved, "iou_thresholds");
  c.area_ranges.clear();
  try {
    for (const auto& r : resolved.at("area_ranges")) {
      detkit::AreaRange a;
      a.name = r.at("name").get<std::string>();
      a.lo = r.at("lo").get<double>();
      a.hi = r.at("hi").is_null() ? std::numeric_limits<double>::infinity() : r.at("hi").get<double>();
      c.area_ranges.push_back(a);
    }
  } catch (const json::exception&) {
    throw UsageError("config key 'area_ranges' must be a list of {name, lo, hi} objects");
  }
  c.max_detections = config_value<std::size_t>(resolved, "max_detections");
  c.recall_max_detections = config_value<std::size_t>(resolved, "recall_max_detections");
  c.threads = config_value<unsigned>(resolved, "threads");
  if (c.threads == 0) throw UsageError("threads must be at least 1");
  c.validate();
  return c;
}

int run_eval(const EvalArgs& a) {
  Manifest manifest("eval");
  ordered_json resolved = eval_defaults();
  merge_config_file(resolved, a.config);
  override_with(resolved, "threads", a.threads);
  override_with(resolved, "max_detections", a.max_dets);
  const detkit::EvalConfig cfg = eval_config_from(resolved);
  if (a.print_config) {
    std::cout << resolved.dump(2) << "\n";
    return kOk;
  }
  const fs::path gt_path = require(a.gt, "--gt");
  const fs::path dets_path = require(a.dets, "--dets");
  manifest.set_config(resolved);
  if (a.config) manifest.add_input("config", *a.config);
  manifest.add_input("gt", gt_path);
  manifest.add_input("dets", dets_path);

  const auto gt = detkit::to_ground_truth(detkit::load_annotations(gt_path));
  const auto dets = detkit::load_detections(dets_path);
  const auto report = detkit::evaluate(dets, gt, cfg);

  ordered_json metrics;
  for (const auto& [name, value] : report.metrics()) metrics[name] = value ? ordered_json(*value) : ordered_json();
  std::cout << detkit::format_report_table(report);
  if (a.out) {
    write_text_file(*a.out, metrics.dump(2) + "\n");
    manifest.add_output("metrics", *a.out);
    manifest.emit(fs::path(*a.out));
  } else {
    std::cout << "\n" << metrics.dump(2) << "\n";
    manifest.emit(std::nullopt);
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// validate

struct ValidateArgs {
  std::optional<std::string> ann, out, report, config, image_root;
  bool fix = false;
  bool print_config = false;
};

int run_validate(const ValidateArgs& a) {
  Manifest manifest("validate");
  ordered_json resolved;
  resolved["image_root"] = nullptr;
  merge_config_file(resolved, a.config);
  override_with(resolved, "image_root", a.image_root);
  if (!resolved["image_root"].is_null() && !resolved["image_root"].is_string()) {
    throw UsageError("config key 'image_root' must be a string or null");
  }
  if (a.print_config) {
    std::cout << resolved.dump(2) << "\n";
    return kOk;
  }
  const fs::path ann_path = require(a.ann, "--ann");
  if (a.fix && !a.out) throw UsageError("--fix needs --out for the cleaned annotation file");
  if (!a.fix && a.out) throw UsageError("--out is only written with --fix");
  if (a.out) {
    std::error_code ec;
    if (fs::equivalent(ann_path, *a.out, ec)) throw UsageError("--out must not overwrite the input annotation file");
  }
  manifest.set_config(resolved);
  if (a.config) manifest.add_input("config", *a.config);
  manifest.add_input("ann", ann_path);

  const auto set = detkit::load_annotations(ann_path);
  detkit::ImageCheck check;
  if (resolved["image_root"].is_string()) {
    const fs::path root = resolved["image_root"].get<std::string>();
    if (!fs::is_directory(root)) throw detkit::DataIoError(fmt::format("image root '{}' is not a directory", root.string()));
    check = detkit::image_exists_under(root);
  }
  const auto report = detkit::validate(set, check);
  const std::string report_text = detkit::to_json(report).dump(2) + "\n";
  std::cout << report_text;
  std::optional<fs::path> anchor;
  if (a.report) {
    write_text_file(*a.report, report_text);
    manifest.add_output("report", *a.report);
    anchor = *a.report;
  }
  std::cerr << fmt::format("{} defect(s) in {} image(s), {} annotation(s)\n", report.total(), set.images.size(),
                           set.annotations.size());

  int code = report.clean() ? kOk : kDefects;
  if (a.fix) {
    const auto cleaned = detkit::clean(set, report);
    if (!detkit::validate(cleaned, check).clean()) throw std::logic_error("cleaned annotations still have defects");
    detkit::save_annotations(cleaned, *a.out);
    manifest.add_output("cleaned", *a.out);
    anchor = fs::path(*a.out);
    std::cerr << fmt::format("wrote {} image(s), {} annotation(s) to {}\n", cleaned.images.size(),
                             cleaned.annotations.size(), *a.out);
    code = kOk;
  }
  manifest.emit(anchor);
  return code;
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradcheckArgs {
  std::optional<std::string> loss, config;
  std::optional<std::size_t> trials;
  std::optional<uint64_t> seed;
  std::optional<double> beta, tolerance;
  double perturb = 0.0;
  bool print_config = false;
};

int run_gradcheck(const GradcheckArgs& a) {
  Manifest manifest("gradcheck");
  ordered_json resolved;
  resolved["loss"] = "diou";
  resolved["trials"] = 1000;
  resolved["seed"] = 0;
  resolved["beta"] = nullptr;
  resolved["step"] = 1e-5;
  resolved["tolerance"] = nullptr;
  merge_config_file(resolved, a.config);
  override_with(resolved, "loss", a.loss);
  override_with(resolved, "trials", a.trials);
  override_with(resolved, "seed", a.seed);
  override_with(resolved, "beta", a.beta);
  override_with(resolved, "tolerance", a.tolerance);

  detkit::GradCheckOptions opts;
  try {
    opts.loss = detkit::parse_loss_kind(config_value<std::string>(resolved, "loss"));
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  opts.trials = config_value<std::size_t>(resolved, "trials");
  opts.seed = config_value<uint64_t>(resolved, "seed");
  if (!resolved["beta"].is_null()) opts.beta = config_value<double>(resolved, "beta");
  opts.step = config_value<double>(resolved, "step");
  if (!resolved["tolerance"].is_null()) opts.tolerance = config_value<double>(resolved, "tolerance");
  opts.perturb = a.perturb;
  if (opts.trials == 0) throw UsageError("trials must be at least 1");
  if (!(opts.step > 0.0)) throw UsageError("step must be positive");
  if (opts.beta && opts.loss != detkit::LossKind::kGfl) throw UsageError("--beta only applies to --loss gfl");
  if (opts.beta && !(*opts.beta >= 0.0)) throw UsageError("beta must be >= 0");
  if (a.print_config) {
    std::cout << resolved.dump(2) << "\n";
    return kOk;
  }
  manifest.set_config(resolved);
  if (a.config) manifest.add_input("config", *a.config);

  const auto r = detkit::run_gradcheck(opts);
  std::cout << fmt::format("loss={} trials={} checked={} skipped={} max_rel_error={:.3e} tolerance={:.1e} {}\n",
                           detkit::loss_kind_name(opts.loss), opts.trials, r.checked, r.skipped, r.max_rel_error,
                           r.tolerance, r.passed() ? "PASS" : "FAIL");
  manifest.emit(std::nullopt);
  return r.passed() ? kOk : kCheckFailed;
}

// ---------------------------------------------------------------------------
// pyramid

struct PyramidArgs {
  std::optional<std::string> mode, dump, config, activation;
  std::optional<uint64_t> seed;
  std::optional<int> size, width;
  std::optional<unsigned> threads;
  bool sever = false;
  bool print_config = false;
};

int run_pyramid(const PyramidArgs& a) {
  Manifest manifest("pyramid");
  ordered_json resolved;
  resolved["mode"] = "pafpn";
  resolved["seed"] = 0;
  resolved["size"] = 32;
  resolved["backbone_channels"] = {4, 4, 4, 4};
  resolved["width"] = 4;
  resolved["activation"] = "identity";
  resolved["sever"] = false;
  resolved["threads"] = 1;
  merge_config_file(resolved, a.config);
  override_with(resolved, "mode", a.mode);
  override_with(resolved, "seed", a.seed);
  override_with(resolved, "size", a.size);
  override_with(resolved, "width", a.width);
  override_with(resolved, "activation", a.activation);
  override_with(resolved, "threads", a.threads);
  if (a.sever) resolved["sever"] = true;

  const auto mode_name = config_value<std::string>(resolved, "mode");
  if (mode_name != "fpn" && mode_name != "pafpn") throw UsageError("mode must be 'fpn' or 'pafpn'");
  const auto activation = config_value<std::string>(resolved, "activation");
  if (activation != "identity" && activation != "relu") throw UsageError("activation must be 'identity' or 'relu'");
  const auto channels = config_value<std::array<int, detkit::kNumLevels>>(resolved, "backbone_channels");
  const auto seed = config_value<uint64_t>(resolved, "seed");
  const int size = config_value<int>(resolved, "size");
  const int width = config_value<int>(resolved, "width");
  detkit::PyramidOptions opts;
  opts.activation = activation == "relu" ? detkit::Activation::kRelu : detkit::Activation::kIdentity;
  opts.threads = config_value<unsigned>(resolved, "threads");
  if (opts.threads == 0) throw UsageError("threads must be at least 1");
  if (width <= 0) throw UsageError("width must be positive");
  for (int c : channels) {
    if (c <= 0) throw UsageError("backbone_channels must be positive");
  }
  if (a.print_config) {
    std::cout << resolved.dump(2) << "\n";
    return kOk;
  }
  manifest.set_config(resolved);
  if (a.config) manifest.add_input("config", *a.config);

  // Backbone and weights draw from separate streams of the one seed.
  const auto backbone = detkit::random_backbone(seed, size, channels);
  auto weights = detkit::PyramidWeights::generate(seed + 1, channels, width);
  if (config_value<bool>(resolved, "sever")) weights.sever_bottom_up();
  const auto mode = mode_name == "fpn" ? detkit::PyramidMode::kFpn : detkit::PyramidMode::kPaFpn;
  const auto levels = detkit::pyramid_pipeline(backbone, weights, mode, opts);

  std::cout << detkit::shape_summary(levels, "L");
  if (a.dump) {
    std::ostringstream bytes;
    detkit::write_tensor_dump(bytes, levels, "L");
    write_text_file(*a.dump, bytes.str());
    manifest.add_output("dump", *a.dump);
    manifest.emit(fs::path(*a.dump));
  } else {
    manifest.emit(std::nullopt);
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// schedule

struct ScheduleArgs {
  std::optional<std::string> config, out;
  std::optional<int64_t> stride, warmup_iters, total_iters, base_batch, batch;
  std::optional<double> base_lr, min_lr;
  bool print_config = false;
};

int run_schedule(const ScheduleArgs& a) {
  Manifest manifest("schedule");
  const detkit::ScheduleConfig d;
  ordered_json resolved;
  resolved["base_lr"] = d.base_lr;
  resolved["warmup_iters"] = d.warmup_iters;
  resolved["total_iters"] = d.total_iters;
  resolved["min_lr"] = d.min_lr;
  resolved["base_batch"] = d.base_batch;
  resolved["actual_batch"] = d.actual_batch;
  resolved["stride"] = 1000;
  merge_config_file(resolved, a.config);
  override_with(resolved, "base_lr", a.base_lr);
  override_with(resolved, "warmup_iters", a.warmup_iters);
  override_with(resolved, "total_iters", a.total_iters);
  override_with(resolved, "min_lr", a.min_lr);
  override_with(resolved, "base_batch", a.base_batch);
  override_with(resolved, "actual_batch", a.batch);
  override_with(resolved, "stride", a.stride);

  detkit::ScheduleConfig cfg;
  cfg.base_lr = config_value<double>(resolved, "base_lr");
  cfg.warmup_iters = config_value<int64_t>(resolved, "warmup_iters");
  cfg.total_iters = config_value<int64_t>(resolved, "total_iters");
  cfg.min_lr = config_value<double>(resolved, "min_lr");
  cfg.base_batch = config_value<int64_t>(resolved, "base_batch");
  cfg.actual_batch = config_value<int64_t>(resolved, "actual_batch");
  const auto stride = config_value<int64_t>(resolved, "stride");
  cfg.validate();
  if (stride <= 0) throw UsageError("stride must be positive");
  if (a.print_config) {
    std::cout << resolved.dump(2) << "\n";
    return kOk;
  }
  manifest.set_config(resolved);
  if (a.config) manifest.add_input("config", *a.config);

  std::ostringstream csv;
  detkit::write_schedule_csv(csv, detkit::schedule_dump(cfg, stride));
  if (a.out) {
    write_text_file(*a.out, csv.str());
    manifest.add_output("csv", *a.out);
    manifest.emit(fs::path(*a.out));
  } else {
    std::cout << csv.str();
    manifest.emit(std::nullopt);
  }
  return kOk;
}

// ---------------------------------------------------------------------------

template <typename Fn>
int guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kBadInput;
  } catch (const detkit::MalformedJsonError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kBadInput;
  } catch (const detkit::SchemaError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kBadInput;
  } catch (const detkit::DataIoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kInternal;
  } catch (const detkit::StaleReportError& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kInternal;
  } catch (const std::invalid_argument& e) {
    // Library precondition violations: bad configs, bad shapes, bad boxes.
    std::cerr << "error: " << e.what() << "\n";
    return kBadInput;
  } catch (const std::out_of_range& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kBadInput;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kInternal;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Detection math and evaluation toolkit"};
  app.set_version_flag("--version", DETKIT_VERSION);
  app.require_subcommand(1);

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "COCO-style AP/recall of a result file against annotations");
  eval->add_option("--gt", ev.gt, "Annotation JSON");
  eval->add_option("--dets", ev.dets, "Result JSON (array of detections)");
  eval->add_option("--config", ev.config, "JSON config; flags override it");
  eval->add_option("--out", ev.out, "Metrics JSON output");
  eval->add_option("--threads", ev.threads, "Worker threads");
  eval->add_option("--max-dets", ev.max_dets, "Detections kept per image and class");
  eval->add_flag("--print-config", ev.print_config, "Print the resolved config and exit");

  ValidateArgs va;
  auto* validate = app.add_subcommand("validate", "Check an annotation file; optionally write a cleaned copy");
  validate->add_option("--ann", va.ann, "Annotation JSON");
  validate->add_flag("--fix", va.fix, "Drop flagged records and write the result to --out");
  validate->add_option("--out", va.out, "Cleaned annotation JSON (with --fix)");
  validate->add_option("--report", va.report, "Also write the validation report here");
  validate->add_option("--image-root", va.image_root, "Flag images whose file is missing under this directory");
  validate->add_option("--config", va.config, "JSON config; flags override it");
  validate->add_flag("--print-config", va.print_config, "Print the resolved config and exit");

  GradcheckArgs ga;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of analytic loss gradients");
  gradcheck->add_option("--loss", ga.loss, "diou, giou, l1 or gfl");
  gradcheck->add_option("--trials", ga.trials, "Number of random samples");
  gradcheck->add_option("--seed", ga.seed, "RNG seed");
  gradcheck->add_option("--beta", ga.beta, "GFL focusing exponent (default cycles 0.5, 1, 2)");
  gradcheck->add_option("--tolerance", ga.tolerance, "Maximum relative error");
  gradcheck->add_option("--config", ga.config, "JSON config; flags override it");
  gradcheck->add_option("--perturb-gradient", ga.perturb)->group("");
  gradcheck->add_flag("--print-config", ga.print_config, "Print the resolved config and exit");

  PyramidArgs pa;
  auto* pyramid = app.add_subcommand("pyramid", "Run the toy FPN / PA-FPN pipeline on seeded input");
  pyramid->add_option("--mode", pa.mode, "fpn or pafpn");
  pyramid->add_option("--seed", pa.seed, "Seed for backbone features and weights");
  pyramid->add_option("--size", pa.size, "Input size (multiple of 32); level 2 is size/4");
  pyramid->add_option("--width", pa.width, "Pyramid channel width");
  pyramid->add_option("--activation", pa.activation, "identity or relu");
  pyramid->add_option("--threads", pa.threads, "Worker threads");
  pyramid->add_flag("--sever", pa.sever, "Cut the bottom-up path");
  pyramid->add_option("--dump", pa.dump, "Tensor dump output");
  pyramid->add_option("--config", pa.config, "JSON config; flags override it");
  pyramid->add_flag("--print-config", pa.print_config, "Print the resolved config and exit");

  ScheduleArgs sa;
  auto* schedule = app.add_subcommand("schedule", "Write the warmup + cosine learning-rate curve as CSV");
  schedule->add_option("--config", sa.config, "JSON config; flags override it");
  schedule->add_option("--stride", sa.stride, "Iterations between rows");
  schedule->add_option("--out", sa.out, "CSV output (default stdout)");
  schedule->add_option("--base-lr", sa.base_lr, "Learning rate at base batch size");
  schedule->add_option("--warmup-iters", sa.warmup_iters, "Linear warmup length");
  schedule->add_option("--total-iters", sa.total_iters, "Schedule length");
  schedule->add_option("--min-lr", sa.min_lr, "Floor of the cosine phase");
  schedule->add_option("--base-batch", sa.base_batch, "Batch size base_lr refers to");
  schedule->add_option("--batch", sa.batch, "Actual batch size");
  schedule->add_flag("--print-config", sa.print_config, "Print the resolved config and exit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kBadInput;
  }

  if (*eval) return guarded([&] { return run_eval(ev); });
  if (*validate) return guarded([&] { return run_validate(va); });
  if (*gradcheck) return guarded([&] { return run_gradcheck(ga); });
  if (*pyramid) return guarded([&] { return run_pyramid(pa); });
  if (*schedule) return guarded([&] { return run_schedule(sa); });
  return kInternal;
}
