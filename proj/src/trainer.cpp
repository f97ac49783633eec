#include "locater/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace locater {

void TrainConfig::validate() const {
  if (lr <= 0) throw ConfigError("train: lr must be positive");
  if (batch < 1) throw ConfigError("train: batch must be >= 1");
  if (weight_decay < 0) throw ConfigError("train: negative weight decay");
  if (epochs < 1 && max_steps < 1) throw ConfigError("train: no steps to run");
  if (lambda < 0) throw ConfigError("train: negative lambda");
  if (poly_power < 0) throw ConfigError("train: negative poly power");
  if (flip_prob < 0 || flip_prob > 1) throw ConfigError("train: flip_prob outside [0,1]");
  if (trunc_window < 1) throw ConfigError("train: truncation window must be >= 1");
}

ModelConfig model_config_from(const TrainConfig& cfg, int vocab_size) {
  ModelConfig m;
  m.d = cfg.d;
  m.k_modules = cfg.k_modules;
  m.heads = cfg.heads;
  m.patch = cfg.patch;
  m.n_w = cfg.n_w;
  m.frame_w = cfg.frame_w;
  m.frame_h = cfg.frame_h;
  m.channels = cfg.channels;
  m.n_g_mult = cfg.n_g_mult;
  m.n_l_mult = cfg.n_l_mult;
  m.interval = cfg.interval;
  m.vocab_size = vocab_size;
  return m;
}

corpus::VideoSample flip_augment(const corpus::VideoSample& sample) {
  return corpus::flip_sample(sample);
}

double video_loss(Model& model, const corpus::VideoSample& video, const TrainConfig& cfg,
                  bool record_grads) {
  if (video.frames.empty()) throw InputError("video_loss: empty video");
  ad::Tape tape = model.make_tape(record_grads);
  TextEmbedding txt = model.text(tape, video.expression);

  ad::Var global_cells = nullptr;
  ad::Var local_cells = nullptr;
  const bool mem = model.config().use_memory();
  if (mem) {
    global_cells = model.build_global_cells(tape, video.frames, txt);
    local_cells = tape.param("mem.local.init");
  }

  std::vector<ad::Var> frame_losses;
  frame_losses.reserve(video.frames.size());
  const int n_t = static_cast<int>(video.frames.size());
  for (int t = 0; t < n_t; ++t) {
    const Tensor& frame = video.frames[static_cast<size_t>(t)];
    FrameOutput out = model.frame_step(tape, frame, txt, global_cells, local_cells);

    const Mask& gm = video.masks[static_cast<size_t>(t)];
    Tensor gt({gm.w, gm.h});
    for (size_t i = 0; i < gm.v.size(); ++i) gt.vec()[i] = gm.v[i] ? 1.0 : 0.0;
    frame_losses.push_back(frame_loss(tape, out.pixel_probs, out.aux_pixel, gt, cfg.lambda));

    if (mem && t + 1 < n_t) {
      local_cells = local_write_cells(tape, out.v, out.patch_probs, local_cells, out.grid_w,
                                      out.grid_h, model.memory_params());
      // truncated backprop through the recurrence
      if ((t + 1) % cfg.trunc_window == 0) local_cells = ad::detach(tape, local_cells);
    }
  }
  ad::Var loss = ad::sum_scalars(tape, frame_losses, /*mean=*/true);
  if (record_grads) tape.backward(loss);
  return loss->val.vec()[0];
}

namespace {

// Adam with decoupled weight decay: moments never see the decay term, and a
// zero-gradient step shrinks parameters by exactly lr * wd * p.
struct Adam {
  std::map<std::string, Tensor> m, v;
  int64_t t = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  void step(ParamTree& tree, double lr, double weight_decay) {
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (auto& [key, p] : tree.params()) {
      const Tensor& g = tree.grad(key);
      auto mit = m.find(key);
      if (mit == m.end()) {
        mit = m.emplace(key, Tensor(p.shape())).first;
        v.emplace(key, Tensor(p.shape()));
      }
      Tensor& mk = mit->second;
      Tensor& vk = v.at(key);
      auto& pv = p.vec();
      const auto& gv = g.vec();
      auto& mv = mk.vec();
      auto& vv = vk.vec();
      for (size_t i = 0; i < pv.size(); ++i) {
        mv[i] = beta1 * mv[i] + (1.0 - beta1) * gv[i];
        vv[i] = beta2 * vv[i] + (1.0 - beta2) * gv[i] * gv[i];
        const double mhat = mv[i] / bc1;
        const double vhat = vv[i] / bc2;
        pv[i] -= lr * weight_decay * pv[i];
        pv[i] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }
};

}  // namespace

Checkpoint train(const TrainConfig& cfg, const std::vector<corpus::VideoSample>& corpus,
                 int vocab_size, LogFn log, const Checkpoint* resume) {
  cfg.validate();
  if (corpus.empty()) throw InputError("train: empty corpus");

  Model model(model_config_from(cfg, vocab_size));
  Rng init_rng = Rng::fold(cfg.seed, 0);
  model.init(init_rng);
  Rng data_rng = Rng::fold(cfg.seed, 1);
  int64_t start_step = 0;
  if (resume) {
    model.load_params(resume->params);
    data_rng.deserialize(resume->rng_state);
    start_step = resume->step;
  }

  const int n = static_cast<int>(corpus.size());
  const int64_t steps_per_epoch = (n + cfg.batch - 1) / cfg.batch;
  const int64_t total =
      cfg.max_steps > 0 ? cfg.max_steps : steps_per_epoch * static_cast<int64_t>(cfg.epochs);
  if (total <= start_step) throw ConfigError("train: nothing to do, step budget exhausted");

  Adam adam;
  std::vector<int> order(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  size_t cursor = order.size();  // forces a shuffle on first use

  for (int64_t step = start_step; step < total; ++step) {
    model.params().zero_grads();
    double batch_loss = 0.0;
    std::vector<int> batch_ids;
    for (int b = 0; b < cfg.batch; ++b) {
      if (cursor >= order.size()) {
        data_rng.shuffle(order);
        cursor = 0;
      }
      const int idx = order[cursor++];
      batch_ids.push_back(idx);
      const bool flip = data_rng.uniform() < cfg.flip_prob;
      const corpus::VideoSample& raw = corpus[static_cast<size_t>(idx)];
      const corpus::VideoSample sample = flip ? flip_augment(raw) : raw;
      batch_loss += video_loss(model, sample, cfg, /*record_grads=*/true);
    }
    batch_loss /= cfg.batch;
    if (!std::isfinite(batch_loss)) {
      std::string ids;
      for (int id : batch_ids) ids += std::to_string(id) + " ";
      throw NumericError("train: non-finite loss at step " + std::to_string(step) +
                         ", batch samples [ " + ids + "]");
    }
    // average accumulated gradients over the batch
    for (auto& [key, p] : model.params().params()) {
      (void)p;
      for (auto& gv : model.params().grad(key).vec()) gv /= cfg.batch;
    }
    const double frac = static_cast<double>(step) / static_cast<double>(total);
    const double lr = cfg.lr * std::pow(1.0 - frac, cfg.poly_power);
    adam.step(model.params(), lr, cfg.weight_decay);
    if (log) log(step, batch_loss, lr);
  }

  Checkpoint ckpt;
  ckpt.config = cfg;
  ckpt.params = model.params();
  ckpt.step = total;
  ckpt.rng_state = data_rng.serialize();
  ckpt.vocab_size = vocab_size;
  return ckpt;
}

std::vector<SegmentationResult> infer(const corpus::VideoSample& video, Model& model,
                                      double threshold, InferStats* stats,
                                      int interval_override) {
  if (video.frames.empty()) throw InputError("infer: empty video");
  const ModelConfig& mc = model.config();
  const bool mem = mc.use_memory();
  const int interval = interval_override > 0 ? interval_override : mc.interval;

  // 1) build the global memory once; it stays frozen for the whole video
  Tensor global_cells;
  Tensor text_snapshot;  // reused across per-frame tapes via re-encoding
  if (mem) {
    ad::Tape tape = model.make_tape(false);
    TextEmbedding txt = model.text(tape, video.expression);
    auto feature_fn = [&](int idx) {
      return model.frame_features(tape, video.frames[static_cast<size_t>(idx)], txt).v;
    };
    global_cells = build_global_memory(tape, static_cast<int>(video.frames.size()), interval,
                                       feature_fn, model.memory_params())
                       .cells;
  }

  LocalMemory local;
  if (mem) {
    local.cells = model.params().at("mem.local.init");
    local.frame_index = 0;
  }
  if (stats) {
    stats->peak_context_vectors = 0;
    stats->frame_ms.clear();
  }

  std::vector<SegmentationResult> results;
  const int n_t = static_cast<int>(video.frames.size());
  results.reserve(static_cast<size_t>(n_t));
  for (int t = 0; t < n_t; ++t) {
    const auto t0 = std::chrono::steady_clock::now();
    ad::Tape tape = model.make_tape(false);
    TextEmbedding txt = model.text(tape, video.expression);
    ad::Var gcells = mem ? tape.leaf(global_cells) : nullptr;
    ad::Var lcells = mem ? tape.leaf(local.cells) : nullptr;
    const Tensor& frame = video.frames[static_cast<size_t>(t)];
    FrameOutput out = model.frame_step(tape, frame, txt, gcells, lcells);

    SegmentationResult res;
    res.patch_probs = out.patch_probs->val.reshaped({out.grid_w * out.grid_h});
    res.pixel_probs = out.pixel_probs->val;
    res.binary = Mask(frame.dim(0), frame.dim(1));
    for (size_t i = 0; i < res.binary.v.size(); ++i)
      res.binary.v[i] = res.pixel_probs.vec()[i] > threshold ? 1 : 0;  // strict >, ties background
    res.aux_probs.reserve(out.aux_pixel.size());
    for (ad::Var a : out.aux_pixel) res.aux_probs.push_back(a->val);
    results.push_back(std::move(res));

    if (mem && t + 1 < n_t)
      local = local_write(tape, out.v, out.patch_probs, local, t, out.grid_w, out.grid_h,
                          model.memory_params());

    if (stats) {
      const auto t1 = std::chrono::steady_clock::now();
      stats->frame_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
      const long long ctx = mem ? global_cells.rows() + local.cells.rows() : 0;
      if (ctx > stats->peak_context_vectors) stats->peak_context_vectors = ctx;
    }
  }
  return results;
}

std::vector<SegmentationResult> infer(const corpus::VideoSample& video, const Checkpoint& ckpt,
                                      double threshold, InferStats* stats) {
  Model model = model_from_checkpoint(ckpt);
  return infer(video, model, threshold, stats);
}

Model model_from_checkpoint(const Checkpoint& ckpt) {
  Model model(model_config_from(ckpt.config, ckpt.vocab_size));
  model.load_params(ckpt.params);
  return model;
}

// ---- checkpoint io ----------------------------------------------------------

namespace {

void write_config(std::ostream& f, const TrainConfig& c) {
  f << "config lr " << c.lr << "\n";
  f << "config batch " << c.batch << "\n";
  f << "config weight_decay " << c.weight_decay << "\n";
  f << "config epochs " << c.epochs << "\n";
  f << "config lambda " << c.lambda << "\n";
  f << "config seed " << c.seed << "\n";
  f << "config poly_power " << c.poly_power << "\n";
  f << "config flip_prob " << c.flip_prob << "\n";
  f << "config max_steps " << c.max_steps << "\n";
  f << "config trunc_window " << c.trunc_window << "\n";
  f << "config d " << c.d << "\n";
  f << "config k_modules " << c.k_modules << "\n";
  f << "config patch " << c.patch << "\n";
  f << "config n_w " << c.n_w << "\n";
  f << "config heads " << c.heads << "\n";
  f << "config n_g_mult " << c.n_g_mult << "\n";
  f << "config n_l_mult " << c.n_l_mult << "\n";
  f << "config interval " << c.interval << "\n";
  f << "config frame_w " << c.frame_w << "\n";
  f << "config frame_h " << c.frame_h << "\n";
  f << "config channels " << c.channels << "\n";
  f << "config threshold " << c.threshold << "\n";
}

void apply_config(TrainConfig& c, const std::string& key, const std::string& val) {
  std::istringstream is(val);
  bool known = true;
  if (key == "lr") is >> c.lr;
  else if (key == "batch") is >> c.batch;
  else if (key == "weight_decay") is >> c.weight_decay;
  else if (key == "epochs") is >> c.epochs;
  else if (key == "lambda") is >> c.lambda;
  else if (key == "seed") is >> c.seed;
  else if (key == "poly_power") is >> c.poly_power;
  else if (key == "flip_prob") is >> c.flip_prob;
  else if (key == "max_steps") is >> c.max_steps;
  else if (key == "trunc_window") is >> c.trunc_window;
  else if (key == "d") is >> c.d;
  else if (key == "k_modules") is >> c.k_modules;
  else if (key == "patch") is >> c.patch;
  else if (key == "n_w") is >> c.n_w;
  else if (key == "heads") is >> c.heads;
  else if (key == "n_g_mult") is >> c.n_g_mult;
  else if (key == "n_l_mult") is >> c.n_l_mult;
  else if (key == "interval") is >> c.interval;
  else if (key == "frame_w") is >> c.frame_w;
  else if (key == "frame_h") is >> c.frame_h;
  else if (key == "channels") is >> c.channels;
  else if (key == "threshold") is >> c.threshold;
  else known = false;
  if (!known || is.fail()) throw IoError("checkpoint: bad config entry '" + key + "'");
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write checkpoint " + path);
  f << "LCTR1\n";
  f << "step " << ckpt.step << "\n";
  f << "vocab " << ckpt.vocab_size << "\n";
  f << "rng " << ckpt.rng_state << "\n";
  write_config(f, ckpt.config);
  int64_t offset = 0;
  for (const auto& [key, tensor] : ckpt.params.params()) {
    f << "tensor " << key << " " << tensor.ndim();
    for (int i = 0; i < tensor.ndim(); ++i) f << " " << tensor.dim(i);
    f << " " << offset << "\n";
    offset += tensor.size() * 4;
  }
  f << "payload " << offset << "\n";
  std::vector<float> buf;
  for (const auto& [key, tensor] : ckpt.params.params()) {
    (void)key;
    buf.assign(tensor.vec().begin(), tensor.vec().end());
    f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
  }
  if (!f) throw IoError("short write to checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read checkpoint " + path);
  std::string line;
  if (!std::getline(f, line) || line != "LCTR1")
    throw IoError("checkpoint: bad magic in " + path);

  Checkpoint ckpt;
  struct Entry {
    std::string key;
    std::vector<int> shape;
    int64_t offset;
  };
  std::vector<Entry> entries;
  int64_t payload_bytes = -1;
  while (std::getline(f, line)) {
    std::istringstream is(line);
    std::string tag;
    is >> tag;
    if (tag == "step") is >> ckpt.step;
    else if (tag == "vocab") is >> ckpt.vocab_size;
    else if (tag == "rng") {
      std::string rest;
      std::getline(is, rest);
      if (!rest.empty() && rest[0] == ' ') rest.erase(0, 1);
      ckpt.rng_state = rest;
    } else if (tag == "config") {
      std::string key, val;
      is >> key;
      std::getline(is, val);
      if (!val.empty() && val[0] == ' ') val.erase(0, 1);
      apply_config(ckpt.config, key, val);
    } else if (tag == "tensor") {
      Entry e;
      int nd = 0;
      is >> e.key >> nd;
      e.shape.resize(static_cast<size_t>(nd));
      for (int i = 0; i < nd; ++i) is >> e.shape[static_cast<size_t>(i)];
      is >> e.offset;
      if (is.fail()) throw IoError("checkpoint: bad tensor line in " + path);
      entries.push_back(std::move(e));
    } else if (tag == "payload") {
      is >> payload_bytes;
      break;
    } else {
      throw IoError("checkpoint: unknown manifest tag '" + tag + "' in " + path);
    }
    if (is.fail()) throw IoError("checkpoint: bad manifest line in " + path);
  }
  if (payload_bytes < 0) throw IoError("checkpoint: missing payload in " + path);

  const std::streampos payload_start = f.tellg();
  for (const Entry& e : entries) {
    Tensor t(e.shape);
    std::vector<float> buf(static_cast<size_t>(t.size()));
    f.seekg(payload_start + static_cast<std::streamoff>(e.offset));
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
    if (!f) throw IoError("checkpoint: payload truncated in " + path);
    for (size_t i = 0; i < buf.size(); ++i) t.vec()[i] = static_cast<double>(buf[i]);
    ckpt.params.add(e.key, std::move(t));
  }
  return ckpt;
}

}  // namespace locater
