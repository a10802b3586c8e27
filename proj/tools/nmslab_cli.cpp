// nmslab: synthetic detection data, GreedyNMS, Gnet rescoring, evaluation.
//
// Plain-file pipeline: JSONL datasets, JSON reports/configs, CSV tables.
// Every command writes a .manifest.json next to each output artifact and
// removes partial outputs on failure.

#include <chrono>
#include <cstdio>
#include <exception>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "nmslab/eval.hpp"
#include "nmslab/gnet.hpp"
#include "nmslab/io.hpp"
#include "nmslab/nms.hpp"
#include "nmslab/synthgen.hpp"
#include "nmslab/trainer.hpp"

namespace {

constexpr const char* kToolVersion = "nmslab 1.0.0";

// Exit codes: 0 success, 1 usage, 2 I/O, 3 parse/format, 4 model/data
// mismatch, 5 internal failure.
enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kIo = 2,
  kParse = 3,
  kMismatch = 4,
  kInternal = 5,
};

struct CommandError : std::runtime_error {
  CommandError(ExitCode code, const std::string& what) : std::runtime_error(what), code(code) {}
  ExitCode code;
};

// Collects artifact paths so a failed command leaves nothing behind.
class OutputSet {
 public:
  void track(const std::string& path) { paths_.push_back(path); }
  void discard_all() {
    for (const std::string& p : paths_) std::remove(p.c_str());
  }

 private:
  std::vector<std::string> paths_;
};

void atomic_write(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw CommandError(kIo, "cannot open for writing: " + path);
    out << content;
    if (!out) throw CommandError(kIo, "write failed: " + path);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    std::remove(tmp.c_str());
    throw CommandError(kIo, "cannot finalize: " + path);
  }
}

class ManifestWriter {
 public:
  ManifestWriter(std::string command, OutputSet& outputs)
      : command_(std::move(command)), outputs_(outputs), start_(std::chrono::steady_clock::now()) {}

  nlohmann::ordered_json& config() { return config_; }
  void add_input(const std::string& path) { inputs_.push_back(path); }
  void add_output(const std::string& path) { artifacts_.push_back(path); }

  // One manifest next to every output artifact.
  void write() const {
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    nlohmann::ordered_json j;
    j["command"] = command_;
    j["config"] = config_;
    j["inputs"] = inputs_;
    j["outputs"] = artifacts_;
    j["tool_version"] = kToolVersion;
    j["duration_seconds"] = seconds;
    for (const std::string& artifact : artifacts_) {
      const std::string path = artifact + ".manifest.json";
      outputs_.track(path);
      atomic_write(path, j.dump(2) + "\n");
    }
  }

 private:
  std::string command_;
  OutputSet& outputs_;
  nlohmann::ordered_json config_;
  std::vector<std::string> inputs_;
  std::vector<std::string> artifacts_;
  std::chrono::steady_clock::time_point start_;
};

nmslab::Dataset load_dataset(const std::string& path, int num_classes_hint = 0) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CommandError(kIo, "cannot open: " + path);
  try {
    return nmslab::read_dataset_jsonl(in, num_classes_hint);
  } catch (const std::exception& e) {
    throw CommandError(kParse, path + ": " + e.what());
  }
}

void store_dataset(const nmslab::Dataset& dataset, const std::string& path, OutputSet& outputs) {
  std::ostringstream buf;
  nmslab::write_dataset_jsonl(dataset, buf);
  outputs.track(path);
  atomic_write(path, buf.str());
}

// "a:step:b" inclusive range or a comma-separated list.
std::vector<double> parse_value_list(const std::string& text) {
  std::vector<double> values;
  try {
    if (text.find(':') != std::string::npos) {
      std::istringstream in(text);
      std::string part;
      double parts[3];
      int count = 0;
      while (std::getline(in, part, ':')) {
        if (count >= 3) throw std::invalid_argument("too many fields");
        parts[count++] = std::stod(part);
      }
      if (count != 3) throw std::invalid_argument("expected start:step:stop");
      const double start = parts[0], step = parts[1], stop = parts[2];
      if (step <= 0.0 || stop < start) throw std::invalid_argument("empty range");
      for (int i = 0;; ++i) {
        const double v = start + step * i;
        if (v > stop + 1e-9) break;
        values.push_back(v);
      }
    } else {
      std::istringstream in(text);
      std::string part;
      while (std::getline(in, part, ',')) values.push_back(std::stod(part));
    }
  } catch (const std::exception& e) {
    throw CommandError(kUsage, "bad value list '" + text + "': " + e.what());
  }
  if (values.empty()) throw CommandError(kUsage, "empty value list: " + text);
  return values;
}

// Boundaries "0,0.5,1" -> bins [0,0.5), [0.5,1].
std::vector<nmslab::OcclusionBin> parse_bins(const std::string& text) {
  const std::vector<double> edges = parse_value_list(text);
  if (edges.size() < 2) throw CommandError(kUsage, "need at least two bin boundaries");
  std::vector<nmslab::OcclusionBin> bins;
  for (std::size_t i = 0; i + 1 < edges.size(); ++i) bins.push_back({edges[i], edges[i + 1]});
  try {
    nmslab::validate_bins(bins);
  } catch (const std::exception& e) {
    throw CommandError(kUsage, std::string("bad occlusion bins: ") + e.what());
  }
  return bins;
}

nlohmann::ordered_json summary_to_json(const nmslab::ApSummary& s) {
  nlohmann::ordered_json j;
  nlohmann::ordered_json ap;
  for (const auto& [criterion, value] : s.ap_at) {
    char key[16];
    std::snprintf(key, sizeof(key), "%.2f", criterion);
    ap[key] = value;
  }
  j["ap"] = std::move(ap);
  j["ap_range"] = s.ap_range;
  return j;
}

nlohmann::ordered_json report_to_json(const nmslab::EvalReport& report) {
  nlohmann::ordered_json j;
  j["overall"] = summary_to_json(report.overall);
  nlohmann::ordered_json per_class;
  for (const auto& [cls, summary] : report.per_class) {
    per_class[std::to_string(cls)] = summary_to_json(summary);
  }
  j["per_class"] = std::move(per_class);
  nlohmann::ordered_json bins = nlohmann::ordered_json::array();
  for (const auto& [bin, summary] : report.per_occlusion_bin) {
    nlohmann::ordered_json b = summary_to_json(summary);
    b["lo"] = bin.lo;
    b["hi"] = bin.hi;
    bins.push_back(std::move(b));
  }
  j["per_occlusion_bin"] = std::move(bins);
  nlohmann::ordered_json curves;
  for (const auto& [criterion, by_class] : report.pr_curves) {
    char key[16];
    std::snprintf(key, sizeof(key), "%.2f", criterion);
    nlohmann::ordered_json per_cls;
    for (const auto& [cls, curve] : by_class) {
      nlohmann::ordered_json points = nlohmann::ordered_json::array();
      for (const nmslab::PrPoint& p : curve) {
        points.push_back(nlohmann::ordered_json::array({p.recall, p.precision}));
      }
      per_cls[std::to_string(cls)] = std::move(points);
    }
    curves[key] = std::move(per_cls);
  }
  j["pr_curves"] = std::move(curves);
  return j;
}

// --- synth -----------------------------------------------------------------

struct SynthArgs {
  std::string preset = "crowded";
  std::size_t images = 0;
  std::uint64_t seed = 1;
  std::string out;
};

void run_synth(const SynthArgs& args, OutputSet& outputs) {
  nmslab::SynthPreset preset;
  try {
    preset = nmslab::synth_preset(args.preset);
  } catch (const std::invalid_argument& e) {
    throw CommandError(kUsage, e.what());
  }
  ManifestWriter manifest("synth", outputs);
  manifest.config()["preset"] = args.preset;
  manifest.config()["images"] = args.images;
  manifest.config()["seed"] = args.seed;
  manifest.add_output(args.out);

  const nmslab::Dataset dataset = nmslab::generate_dataset(preset, args.images, args.seed);
  store_dataset(dataset, args.out, outputs);
  manifest.write();
}

// --- nms -------------------------------------------------------------------

struct NmsArgs {
  double theta = 0.5;
  bool class_aware = true;
  bool prefilter = false;
  bool mark_only = false;
  std::string in;
  std::string out;
};

void run_nms(const NmsArgs& args, OutputSet& outputs) {
  if (args.theta < 0.0 || args.theta >= 1.0) {
    throw CommandError(kUsage, "theta must be in [0,1)");
  }
  ManifestWriter manifest("nms", outputs);
  manifest.config()["theta"] = args.theta;
  manifest.config()["class_aware"] = args.class_aware;
  manifest.config()["prefilter"] = args.prefilter;
  manifest.config()["mark_only"] = args.mark_only;
  manifest.add_input(args.in);
  manifest.add_output(args.out);

  nmslab::Dataset dataset = load_dataset(args.in);
  if (args.prefilter) dataset = nmslab::prefilter(dataset, 0.8, args.class_aware);

  if (args.mark_only) {
    // keep every detection and flag the suppressed ones
    std::ostringstream buf;
    for (const nmslab::ImageRecord& r : dataset.images) {
      const nmslab::NmsResult res = nmslab::greedy_nms(r.detections, args.theta, args.class_aware);
      nlohmann::ordered_json j = nlohmann::ordered_json::parse(nmslab::record_to_jsonl(r));
      for (auto& dj : j["detections"]) {
        dj["suppressed"] = res.suppressed_by.count(dj["id"].get<int>()) > 0;
      }
      buf << j.dump() << '\n';
    }
    outputs.track(args.out);
    atomic_write(args.out, buf.str());
  } else {
    store_dataset(nmslab::apply_nms(dataset, args.theta, args.class_aware), args.out, outputs);
  }
  manifest.write();
}

// --- train -----------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string val;
  std::string config;
  std::string out;
};

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CommandError(kIo, "cannot open: " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const std::exception& e) {
    throw CommandError(kParse, path + ": " + e.what());
  }
}

// Config file: {"model": {...}, "train": {...}}; omitted keys take defaults.
template <typename T>
T merged_config(const nlohmann::json& file, const char* section, T defaults) {
  nlohmann::json base;
  nmslab::to_json(base, defaults);
  if (file.contains(section)) {
    if (!file.at(section).is_object()) {
      throw CommandError(kParse, std::string("config section '") + section + "' must be an object");
    }
    base.merge_patch(file.at(section));
  }
  T out;
  try {
    nmslab::from_json(base, out);
    out.validate();
  } catch (const std::exception& e) {
    throw CommandError(kParse, std::string("config section '") + section + "': " + e.what());
  }
  return out;
}

std::string checkpoint_prefix(const std::string& out) {
  const std::string suffix = ".ckpt";
  if (out.size() > suffix.size() && out.compare(out.size() - suffix.size(), suffix.size(), suffix) == 0) {
    return out.substr(0, out.size() - suffix.size());
  }
  return out;
}

void run_train(const TrainArgs& args, OutputSet& outputs) {
  const nlohmann::json file = args.config.empty() ? nlohmann::json::object() : read_json_file(args.config);

  const nmslab::Dataset data = load_dataset(args.data);
  std::optional<nmslab::Dataset> val;
  if (!args.val.empty()) val = load_dataset(args.val, data.num_classes);

  nmslab::GnetConfig defaults;
  defaults.num_classes = data.num_classes;
  const nmslab::GnetConfig model_cfg = merged_config(file, "model", defaults);
  const nmslab::TrainConfig train_cfg = merged_config(file, "train", nmslab::TrainConfig{});
  if (model_cfg.num_classes != data.num_classes) {
    throw CommandError(kMismatch, "model config expects " + std::to_string(model_cfg.num_classes) +
                                      " classes, data has " + std::to_string(data.num_classes));
  }

  ManifestWriter manifest("train", outputs);
  nlohmann::json mj, tj;
  nmslab::to_json(mj, model_cfg);
  nmslab::to_json(tj, train_cfg);
  manifest.config()["model"] = mj;
  manifest.config()["train"] = tj;
  manifest.config()["seed"] = train_cfg.seed;
  manifest.add_input(args.data);
  if (!args.val.empty()) manifest.add_input(args.val);

  const std::string prefix = checkpoint_prefix(args.out);
  manifest.add_output(prefix + ".ckpt");

  nmslab::Trainer trainer(nmslab::init_gnet(model_cfg, train_cfg.seed), data, train_cfg,
                          std::move(val));
  outputs.track(prefix + ".ckpt");
  outputs.track(prefix + ".opt");
  outputs.track(prefix + ".state.json");
  trainer.run(prefix);

  std::ostringstream history;
  nmslab::write_history_csv(trainer.history(), history);
  outputs.track(prefix + ".history.csv");
  atomic_write(prefix + ".history.csv", history.str());
  manifest.write();
}

// --- rescore ---------------------------------------------------------------

struct RescoreArgs {
  std::string model;
  std::string in;
  std::string out;
};

void run_rescore(const RescoreArgs& args, OutputSet& outputs) {
  nmslab::GnetModel model;
  try {
    model = nmslab::load_gnet(args.model);
  } catch (const std::exception& e) {
    std::ifstream probe(args.model, std::ios::binary);
    throw CommandError(probe ? kParse : kIo, args.model + ": " + e.what());
  }
  const nmslab::Dataset dataset = load_dataset(args.in, model.config.num_classes);
  if (dataset.num_classes != model.config.num_classes) {
    throw CommandError(kMismatch, "model expects " + std::to_string(model.config.num_classes) +
                                      " classes, data has " + std::to_string(dataset.num_classes));
  }

  ManifestWriter manifest("rescore", outputs);
  manifest.config()["model"] = args.model;
  manifest.add_input(args.model);
  manifest.add_input(args.in);
  manifest.add_output(args.out);
  store_dataset(nmslab::gnet_rescore(model, dataset), args.out, outputs);
  manifest.write();
}

// --- eval ------------------------------------------------------------------

struct EvalArgs {
  std::string in;
  std::string bins = "0,0.5,1";
  std::string criteria = "0.5:0.05:0.95";
  std::string report;
};

void run_eval(const EvalArgs& args, OutputSet& outputs) {
  const std::vector<nmslab::OcclusionBin> bins = parse_bins(args.bins);
  const std::vector<double> criteria = parse_value_list(args.criteria);
  const nmslab::Dataset dataset = load_dataset(args.in);

  ManifestWriter manifest("eval", outputs);
  manifest.config()["bins"] = args.bins;
  manifest.config()["criteria"] = args.criteria;
  manifest.add_input(args.in);
  manifest.add_output(args.report);

  nmslab::EvalReport report;
  try {
    report = nmslab::evaluate(dataset, criteria, bins);
  } catch (const std::invalid_argument& e) {
    throw CommandError(kUsage, e.what());
  }
  outputs.track(args.report);
  atomic_write(args.report, report_to_json(report).dump(2) + "\n");
  manifest.write();
}

// --- sweep -----------------------------------------------------------------

struct SweepArgs {
  std::string in;
  std::string thetas = "0:0.05:0.95";
  std::string metric = "ap_05";
  std::string bin;  // optional "lo:hi" occlusion bin the metric is taken on
  std::string out;
};

void run_sweep(const SweepArgs& args, OutputSet& outputs) {
  const std::vector<double> thetas = parse_value_list(args.thetas);
  for (double t : thetas) {
    if (t < 0.0 || t >= 1.0) throw CommandError(kUsage, "theta must be in [0,1)");
  }
  if (args.metric != "ap_05" && args.metric != "ap_range") {
    throw CommandError(kUsage, "unknown metric: " + args.metric + " (want ap_05 or ap_range)");
  }
  const std::vector<double> criteria =
      args.metric == "ap_05" ? std::vector<double>{0.5} : nmslab::default_criteria();

  // an occlusion-restricted metric still needs covering bins for evaluate()
  std::vector<nmslab::OcclusionBin> bins = nmslab::default_occlusion_bins();
  std::size_t target_bin = 0;
  bool use_bin = false;
  if (!args.bin.empty()) {
    std::vector<double> edges;
    std::istringstream in(args.bin);
    std::string part;
    try {
      while (std::getline(in, part, ':')) edges.push_back(std::stod(part));
    } catch (const std::exception&) {
      throw CommandError(kUsage, "bin must be lo:hi");
    }
    if (edges.size() != 2) throw CommandError(kUsage, "bin must be lo:hi");
    bins.clear();
    if (edges[0] > 0.0) bins.push_back({0.0, edges[0]});
    target_bin = bins.size();
    bins.push_back({edges[0], edges[1]});
    if (edges[1] < 1.0) bins.push_back({edges[1], 1.0});
    try {
      nmslab::validate_bins(bins);
    } catch (const std::exception& e) {
      throw CommandError(kUsage, std::string("bad bin: ") + e.what());
    }
    use_bin = true;
  }

  const nmslab::Dataset dataset = load_dataset(args.in);
  ManifestWriter manifest("sweep", outputs);
  manifest.config()["thetas"] = args.thetas;
  manifest.config()["metric"] = args.metric;
  if (use_bin) manifest.config()["bin"] = args.bin;
  manifest.add_input(args.in);
  manifest.add_output(args.out);

  const nmslab::SweepResult result = nmslab::threshold_sweep(
      dataset, thetas, [&](const nmslab::Dataset& suppressed) {
        const nmslab::EvalReport report = nmslab::evaluate(suppressed, criteria, bins);
        const nmslab::ApSummary& summary =
            use_bin ? report.per_occlusion_bin[target_bin].second : report.overall;
        return args.metric == "ap_05" ? summary.ap_at.at(0.5) : summary.ap_range;
      });

  std::ostringstream csv;
  csv << "theta,metric\n";
  for (const nmslab::SweepEntry& e : result.table) {
    csv << e.theta << ',' << e.metric << '\n';
  }
  outputs.track(args.out);
  atomic_write(args.out, csv.str());
  manifest.write();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"NMS laboratory: synthetic data, GreedyNMS, Gnet rescoring, evaluation"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  SynthArgs synth;
  CLI::App* synth_cmd = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth_cmd->add_option("--preset", synth.preset, "Scene preset: sparse, crowded, multiclass-8");
  synth_cmd->add_option("--images", synth.images, "Number of images")->required();
  synth_cmd->add_option("--seed", synth.seed, "Dataset seed");
  synth_cmd->add_option("--out", synth.out, "Output JSONL path")->required();

  NmsArgs nms;
  CLI::App* nms_cmd = app.add_subcommand("nms", "Apply GreedyNMS to a dataset");
  nms_cmd->add_option("--theta", nms.theta, "Suppression IoU threshold in [0,1)")->required();
  nms_cmd->add_flag("--class-aware,!--class-agnostic", nms.class_aware,
                    "Suppress only within the same class (default on)");
  nms_cmd->add_flag("--prefilter", nms.prefilter, "Apply the GreedyNMS-0.8 pre-filter first");
  nms_cmd->add_flag("--mark-only", nms.mark_only,
                    "Keep suppressed detections, flagged with \"suppressed\": true");
  nms_cmd->add_option("--in", nms.in, "Input JSONL path")->required();
  nms_cmd->add_option("--out", nms.out, "Output JSONL path")->required();

  TrainArgs train;
  CLI::App* train_cmd = app.add_subcommand("train", "Train a Gnet rescoring model");
  train_cmd->add_option("--data", train.data, "Training JSONL path")->required();
  train_cmd->add_option("--val", train.val, "Validation JSONL path");
  train_cmd->add_option("--config", train.config,
                        "JSON config file with \"model\" and \"train\" sections");
  train_cmd->add_option("--out", train.out, "Output checkpoint path (model.ckpt)")->required();

  RescoreArgs rescore;
  CLI::App* rescore_cmd = app.add_subcommand("rescore", "Rescore detections with a trained model");
  rescore_cmd->add_option("--model", rescore.model, "Model checkpoint path")->required();
  rescore_cmd->add_option("--in", rescore.in, "Input JSONL path")->required();
  rescore_cmd->add_option("--out", rescore.out, "Output JSONL path")->required();

  EvalArgs eval;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate detections against ground truth");
  eval_cmd->add_option("--in", eval.in, "Input JSONL path")->required();
  eval_cmd->add_option("--bins", eval.bins, "Occlusion bin boundaries, e.g. 0,0.5,1");
  eval_cmd->add_option("--criteria", eval.criteria, "IoU criteria, list or start:step:stop");
  eval_cmd->add_option("--report", eval.report, "Output JSON report path")->required();

  SweepArgs sweep;
  CLI::App* sweep_cmd = app.add_subcommand("sweep", "Sweep GreedyNMS thresholds");
  sweep_cmd->add_option("--in", sweep.in, "Input JSONL path")->required();
  sweep_cmd->add_option("--thetas", sweep.thetas, "Thresholds, list or start:step:stop");
  sweep_cmd->add_option("--metric", sweep.metric, "ap_05 or ap_range");
  sweep_cmd->add_option("--bin", sweep.bin, "Restrict the metric to an occlusion bin lo:hi");
  sweep_cmd->add_option("--out", sweep.out, "Output CSV path (theta,metric)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  OutputSet outputs;
  try {
    if (synth_cmd->parsed()) run_synth(synth, outputs);
    if (nms_cmd->parsed()) run_nms(nms, outputs);
    if (train_cmd->parsed()) run_train(train, outputs);
    if (rescore_cmd->parsed()) run_rescore(rescore, outputs);
    if (eval_cmd->parsed()) run_eval(eval, outputs);
    if (sweep_cmd->parsed()) run_sweep(sweep, outputs);
  } catch (const CommandError& e) {
    outputs.discard_all();
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.code;
  } catch (const std::invalid_argument& e) {
    outputs.discard_all();
    std::fprintf(stderr, "error: %s\n", e.what());
    return kMismatch;
  } catch (const std::exception& e) {
    outputs.discard_all();
    std::fprintf(stderr, "error: %s\n", e.what());
    return kInternal;
  }
  return kOk;
}
