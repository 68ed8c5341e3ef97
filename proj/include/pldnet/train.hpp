#pragma once

#include <functional>
#include <map>
#include <vector>

#include "pldnet/pipeline.hpp"

namespace pldnet::train {

struct TrainExample {
  AudioBuffer mix;     // stereo, channel 0 = primary
  AudioBuffer target;  // mono clean reference, same length
};

struct TrainOptions {
  std::size_t steps = 500;
  std::uint64_t seed = 0;
  EnhanceMode mode = EnhanceMode::kFull;
  double alpha = 1.0;
  double bin_floor = model::kDefaultBinFloor;
  model::ModelConfig model;
  nn::OptimizerConfig optimizer;  // budget is overridden by `steps`
  PipelineConfig pipeline;
  std::function<void(std::size_t step, double loss)> on_step;
};

struct TrainResult {
  model::ModelWeights weights;
  std::vector<double> losses;  // loss before each update
  double initial_loss = 0.0;
  double final_loss = 0.0;     // after the last update
};

namespace detail {

struct Batch {
  PreparedInput input;
  nn::Tensor target;  // [B, N]
  double weight;      // share of the full dataset
};

inline std::vector<Batch> make_batches(const std::vector<TrainExample>& data, EnhanceMode mode,
                                       const PipelineConfig& cfg) {
  std::vector<PreparedInput> prepared;
  prepared.reserve(data.size());
  for (const auto& ex : data) {
    if (ex.target.channels() != 1 || ex.target.num_samples() != ex.mix.num_samples()) {
      throw InvalidInput("train: target must be mono and as long as its mixture");
    }
    prepared.push_back(prepare_input(ex.mix, mode, cfg));
  }
  std::map<std::size_t, std::vector<std::size_t>> by_len;
  for (std::size_t i = 0; i < data.size(); ++i) by_len[data[i].mix.num_samples()].push_back(i);
  std::vector<Batch> out;
  for (const auto& [len, idx] : by_len) {
    std::vector<const PreparedInput*> items;
    std::vector<double> tgt;
    for (auto i : idx) {
      items.push_back(&prepared[i]);
      const auto s = data[i].target.channel(0);
      tgt.insert(tgt.end(), s.begin(), s.end());
    }
    out.push_back({stack_inputs(items), nn::Tensor::from_data({idx.size(), len}, std::move(tgt)),
                   static_cast<double>(idx.size()) / static_cast<double>(data.size())});
  }
  return out;
}

}  // namespace detail

// Mean loss_total over the dataset; gradients accumulate into the weights when enabled.
inline double dataset_loss(const model::ModelConfig& mc, const model::ModelWeights& w,
                           const std::vector<detail::Batch>& batches, const StftConfig& stft_cfg, double alpha,
                           double bin_floor, bool with_grad) {
  double total = 0.0;
  for (const auto& b : batches) {
    const nn::Tensor est = network_waveform(mc, w, b.input, stft_cfg);
    const nn::Tensor loss = nn::scale(model::loss_total(est, b.target, alpha, bin_floor), b.weight);
    total += loss.item();
    if (with_grad) loss.backward();
  }
  return total;
}

// Full-batch optimisation of loss_total on a small dataset. The pre-filter
// runs once per clip; everything is deterministic given the seed.
inline TrainResult train_toy(const std::vector<TrainExample>& data, const TrainOptions& opt) {
  if (data.empty()) throw InvalidInput("train: empty dataset");
  const auto batches = detail::make_batches(data, opt.mode, opt.pipeline);
  TrainResult r{model::init_weights(opt.model, opt.seed), {}, 0.0, 0.0};
  nn::OptimizerConfig oc = opt.optimizer;
  oc.budget = opt.steps;
  nn::Optimizer optim(r.weights.params(), oc);
  for (std::size_t s = 0; s < opt.steps; ++s) {
    optim.zero_grad();
    const double loss = dataset_loss(opt.model, r.weights, batches, opt.pipeline.stft, opt.alpha, opt.bin_floor, true);
    r.losses.push_back(loss);
    if (opt.on_step) opt.on_step(s, loss);
    optim.step();
  }
  optim.zero_grad();
  {
    nn::NoGradGuard guard;
    r.final_loss = dataset_loss(opt.model, r.weights, batches, opt.pipeline.stft, opt.alpha, opt.bin_floor, false);
  }
  r.initial_loss = r.losses.empty() ? r.final_loss : r.losses.front();
  return r;
}

}  // namespace pldnet::train
