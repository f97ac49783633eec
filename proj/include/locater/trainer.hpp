#pragma once

#include <functional>
#include <string>
#include <vector>

#include "locater/corpus.hpp"
#include "locater/model.hpp"

namespace locater {

struct TrainConfig {
  // optimization
  double lr = 1e-3;
  int batch = 4;
  double weight_decay = 1e-4;
  int epochs = 30;
  double lambda = 0.4;  // deep-supervision weight
  uint64_t seed = 42;
  double poly_power = 0.9;  // lr * (1 - step/total)^poly_power
  double flip_prob = 0.5;
  int max_steps = 0;       // 0: epochs decide the step count
  int trunc_window = 4;    // frames of local-memory recurrence kept differentiable
  // model shape (toy defaults scaled from the full-size ratios)
  int d = 32;
  int k_modules = 3;
  int patch = 8;
  int n_w = 12;
  int heads = 4;
  double n_g_mult = 1.5;
  double n_l_mult = 2.0;
  int interval = 10;
  int frame_w = 64, frame_h = 64, channels = 3;
  double threshold = 0.5;  // inference binarization

  void validate() const;
};

ModelConfig model_config_from(const TrainConfig& cfg, int vocab_size);

struct Checkpoint {
  TrainConfig config;
  ParamTree params;
  int64_t step = 0;
  std::string rng_state;
  int vocab_size = 0;
};

using LogFn = std::function<void(int64_t step, double loss, double lr)>;

// Adam with decoupled weight decay and polynomial lr annealing. Deterministic
// under a fixed seed. Aborts with a NumericError naming the offending batch
// when the loss goes non-finite.
Checkpoint train(const TrainConfig& cfg, const std::vector<corpus::VideoSample>& corpus,
                 int vocab_size, LogFn log = {}, const Checkpoint* resume = nullptr);

// Single video loss on a fresh tape; backward-ready when the tape records
// gradients. Exposed for the gradient-check oracle.
double video_loss(Model& model, const corpus::VideoSample& video, const TrainConfig& cfg,
                  bool record_grads);

struct InferStats {
  long long peak_context_vectors = 0;
  std::vector<double> frame_ms;  // per-frame wall time, memory build excluded
};

// Builds the global memory once, then segments frames sequentially, feeding
// each frame's prediction into the local memory.
std::vector<SegmentationResult> infer(const corpus::VideoSample& video, Model& model,
                                      double threshold = 0.5, InferStats* stats = nullptr,
                                      int interval_override = 0);
std::vector<SegmentationResult> infer(const corpus::VideoSample& video, const Checkpoint& ckpt,
                                      double threshold = 0.5, InferStats* stats = nullptr);

// Deterministic mirror + left/right token swap (an involution). The trainer
// applies it with probability flip_prob.
corpus::VideoSample flip_augment(const corpus::VideoSample& sample);

// Checkpoint file: "LCTR1" magic, text manifest (key, shape, byte offset),
// raw little-endian float32 payload.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

Model model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace locater
