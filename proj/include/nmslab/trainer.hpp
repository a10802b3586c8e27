#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "nmslab/adam.hpp"
#include "nmslab/eval.hpp"
#include "nmslab/gnet.hpp"
#include "nmslab/graph.hpp"
#include "nmslab/types.hpp"

namespace nmslab {

struct LrStep {
  std::int64_t iteration = 0;
  double multiplier = 1.0;
};

struct TrainConfig {
  std::int64_t iterations = 20000;
  double base_lr = 1e-4;
  std::vector<LrStep> lr_schedule;  // strictly increasing iterations, multipliers > 0
  std::uint64_t seed = 1;
  std::int64_t checkpoint_every = 0;  // 0 disables periodic checkpoints
  std::int64_t eval_every = 0;        // 0 disables periodic validation
  std::int64_t gradient_accumulation = 1;  // images per optimizer step

  void validate() const {
    if (iterations < 0) throw std::invalid_argument("train config: negative iterations");
    if (base_lr <= 0.0) throw std::invalid_argument("train config: base_lr must be positive");
    if (gradient_accumulation < 1) throw std::invalid_argument("train config: accumulation < 1");
    for (std::size_t i = 0; i < lr_schedule.size(); ++i) {
      if (lr_schedule[i].multiplier <= 0.0) {
        throw std::invalid_argument("train config: schedule multiplier must be positive");
      }
      if (i > 0 && lr_schedule[i].iteration <= lr_schedule[i - 1].iteration) {
        throw std::invalid_argument("train config: schedule iterations must increase");
      }
    }
  }

  double lr_at(std::int64_t iteration) const {
    double lr = base_lr;
    for (const LrStep& s : lr_schedule) {
      if (s.iteration <= iteration) lr *= s.multiplier;
    }
    return lr;
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  nlohmann::json schedule = nlohmann::json::array();
  for (const LrStep& s : c.lr_schedule) schedule.push_back({s.iteration, s.multiplier});
  j = nlohmann::json{{"iterations", c.iterations},
                     {"base_lr", c.base_lr},
                     {"lr_schedule", schedule},
                     {"seed", c.seed},
                     {"checkpoint_every", c.checkpoint_every},
                     {"eval_every", c.eval_every},
                     {"gradient_accumulation", c.gradient_accumulation}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  j.at("iterations").get_to(c.iterations);
  j.at("base_lr").get_to(c.base_lr);
  c.lr_schedule.clear();
  if (j.contains("lr_schedule")) {
    for (const auto& s : j.at("lr_schedule")) {
      c.lr_schedule.push_back({s.at(0).get<std::int64_t>(), s.at(1).get<double>()});
    }
  }
  j.at("seed").get_to(c.seed);
  if (j.contains("checkpoint_every")) j.at("checkpoint_every").get_to(c.checkpoint_every);
  if (j.contains("eval_every")) j.at("eval_every").get_to(c.eval_every);
  if (j.contains("gradient_accumulation")) {
    j.at("gradient_accumulation").get_to(c.gradient_accumulation);
  }
}

struct HistoryRow {
  std::int64_t iteration = 0;
  double loss = 0.0;  // exponential moving average, decay 0.99
  double raw_loss = 0.0;
  double lr = 0.0;
  double val_ap_05 = -1.0;     // -1 when no validation ran this iteration
  double val_ap_range = -1.0;
};

inline void write_history_csv(const std::vector<HistoryRow>& history, std::ostream& out) {
  out << "iteration,loss,lr,val_ap_05,val_ap_range\n";
  for (const HistoryRow& r : history) {
    out << r.iteration << ',' << r.raw_loss << ',' << r.lr << ',';
    if (r.val_ap_05 >= 0.0) out << r.val_ap_05;
    out << ',';
    if (r.val_ap_range >= 0.0) out << r.val_ap_range;
    out << '\n';
  }
}

class Trainer {
 public:
  Trainer(GnetModel model, Dataset dataset, TrainConfig config,
          std::optional<Dataset> val = std::nullopt)
      : model_(std::move(model)),
        dataset_(std::move(dataset)),
        config_(std::move(config)),
        val_(std::move(val)) {
    config_.validate();
    if (dataset_.images.empty()) throw std::invalid_argument("train: empty dataset");
    bool any_gt = false;
    for (const ImageRecord& r : dataset_.images) {
      if (!r.ground_truths.empty()) any_gt = true;
    }
    if (!any_gt) throw std::invalid_argument("train: dataset has no ground truths");
    rng_.seed(config_.seed);
    adam_.init(model_.param_tensors());
  }

  GnetModel& model() { return model_; }
  const GnetModel& model() const { return model_; }
  const std::vector<HistoryRow>& history() const { return history_; }
  std::int64_t iteration() const { return iteration_; }
  const TrainConfig& config() const { return config_; }

  // Runs up to config.iterations; re-entrant after resume.
  void run(const std::string& checkpoint_prefix = "") {
    while (iteration_ < config_.iterations) {
      step();
      if (!checkpoint_prefix.empty() && config_.checkpoint_every > 0 &&
          iteration_ % config_.checkpoint_every == 0) {
        save_checkpoint(checkpoint_prefix);
      }
    }
    if (!checkpoint_prefix.empty()) save_checkpoint(checkpoint_prefix);
  }

  void step() {
    const std::int64_t it = iteration_ + 1;
    const double lr = config_.lr_at(it);
    const std::vector<ad::TensorPtr> params = model_.param_tensors();
    for (const ad::TensorPtr& p : params) p->zero_grad();

    double loss_sum = 0.0;
    for (std::int64_t k = 0; k < config_.gradient_accumulation; ++k) {
      const ImageRecord& record = next_image();
      ad::Graph graph;
      const TrainingLossResult result = gnet_training_loss(model_, graph, record);
      const double loss = result.loss->values[0];
      if (!std::isfinite(loss)) {
        throw std::runtime_error("non-finite training loss on image " + record.image_id);
      }
      loss_sum += loss;
      graph.backward(result.loss);
    }
    const double loss = loss_sum / static_cast<double>(config_.gradient_accumulation);
    if (config_.gradient_accumulation > 1) {
      const double scale = 1.0 / static_cast<double>(config_.gradient_accumulation);
      for (const ad::TensorPtr& p : params) {
        for (double& g : p->grad) g *= scale;
      }
    }
    ad::adam_step(params, adam_, lr);
    iteration_ = it;

    if (ema_initialized_) {
      loss_ema_ = 0.99 * loss_ema_ + 0.01 * loss;
    } else {
      loss_ema_ = loss;
      ema_initialized_ = true;
    }

    HistoryRow row;
    row.iteration = it;
    row.loss = loss_ema_;
    row.raw_loss = loss;
    row.lr = lr;
    if (val_ && config_.eval_every > 0 && it % config_.eval_every == 0) {
      const Dataset rescored = gnet_rescore(model_, *val_);
      const EvalReport report = evaluate(rescored);
      row.val_ap_05 = report.overall.ap_at.at(0.5);
      row.val_ap_range = report.overall.ap_range;
    }
    history_.push_back(row);
  }

  void save_checkpoint(const std::string& prefix) const {
    save_gnet(model_, prefix + ".ckpt");
    save_optimizer(prefix + ".opt");
    save_sidecar(prefix + ".state.json");
  }

  static Trainer resume(const std::string& prefix, Dataset dataset,
                        std::optional<Dataset> val = std::nullopt) {
    GnetModel model = load_gnet(prefix + ".ckpt");
    std::ifstream side(prefix + ".state.json");
    if (!side) throw std::runtime_error("cannot open: " + prefix + ".state.json");
    const nlohmann::json j = nlohmann::json::parse(side);
    TrainConfig config = j.at("config").get<TrainConfig>();

    Trainer t(std::move(model), std::move(dataset), std::move(config), std::move(val));
    t.iteration_ = j.at("iteration").get<std::int64_t>();
    t.loss_ema_ = j.at("loss_ema").get<double>();
    t.ema_initialized_ = j.at("ema_initialized").get<bool>();
    std::istringstream rng_in(j.at("rng_state").get<std::string>());
    rng_in >> t.rng_;
    t.permutation_ = j.at("permutation").get<std::vector<std::size_t>>();
    t.perm_pos_ = j.at("perm_pos").get<std::size_t>();
    t.load_optimizer(prefix + ".opt");
    return t;
  }

 private:
  const ImageRecord& next_image() {
    if (perm_pos_ >= permutation_.size()) {
      permutation_.resize(dataset_.images.size());
      for (std::size_t i = 0; i < permutation_.size(); ++i) permutation_[i] = i;
      std::shuffle(permutation_.begin(), permutation_.end(), rng_);
      perm_pos_ = 0;
    }
    return dataset_.images[permutation_[perm_pos_++]];
  }

  void save_sidecar(const std::string& path) const {
    std::ostringstream rng_out;
    rng_out << rng_;
    nlohmann::json j{{"config", config_},
                     {"iteration", iteration_},
                     {"loss_ema", loss_ema_},
                     {"ema_initialized", ema_initialized_},
                     {"rng_state", rng_out.str()},
                     {"permutation", permutation_},
                     {"perm_pos", perm_pos_}};
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << j.dump(2) << '\n';
  }

  void save_optimizer(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    const char magic[8] = {'G', 'N', 'E', 'T', 'O', 'P', 'T', '1'};
    out.write(magic, sizeof(magic));
    detail::write_u64(out, static_cast<std::uint64_t>(adam_.step));
    detail::write_u64(out, adam_.m.size());
    for (std::size_t p = 0; p < adam_.m.size(); ++p) {
      detail::write_u64(out, adam_.m[p].size());
      out.write(reinterpret_cast<const char*>(adam_.m[p].data()),
                static_cast<std::streamsize>(adam_.m[p].size() * sizeof(double)));
      out.write(reinterpret_cast<const char*>(adam_.v[p].data()),
                static_cast<std::streamsize>(adam_.v[p].size() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("write failed: " + path);
  }

  void load_optimizer(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::string(magic, 8) != "GNETOPT1") {
      throw std::runtime_error("optimizer state: bad magic");
    }
    adam_.step = static_cast<std::int64_t>(detail::read_u64(in));
    const std::uint64_t count = detail::read_u64(in);
    if (count != adam_.m.size()) throw std::runtime_error("optimizer state: blob count mismatch");
    for (std::size_t p = 0; p < count; ++p) {
      const std::uint64_t n = detail::read_u64(in);
      if (n != adam_.m[p].size()) throw std::runtime_error("optimizer state: size mismatch");
      in.read(reinterpret_cast<char*>(adam_.m[p].data()),
              static_cast<std::streamsize>(n * sizeof(double)));
      in.read(reinterpret_cast<char*>(adam_.v[p].data()),
              static_cast<std::streamsize>(n * sizeof(double)));
    }
    if (!in) throw std::runtime_error("optimizer state: truncated");
  }

  GnetModel model_;
  Dataset dataset_;
  TrainConfig config_;
  std::optional<Dataset> val_;
  std::mt19937_64 rng_;
  ad::AdamState adam_;
  std::vector<HistoryRow> history_;
  std::vector<std::size_t> permutation_;
  std::size_t perm_pos_ = 0;
  std::int64_t iteration_ = 0;
  double loss_ema_ = 0.0;
  bool ema_initialized_ = false;
};

}  // namespace nmslab
