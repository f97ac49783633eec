#include "locater/model.hpp"

namespace locater {

void ModelConfig::validate() const {
  if (d < 2 || d % 2 != 0) throw ConfigError("model: width must be even and >= 2");
  if (heads < 1 || d % heads != 0) throw ConfigError("model: width not divisible by head count");
  if (patch < 1 || frame_w % patch != 0 || frame_h % patch != 0)
    throw ConfigError("model: frame size not divisible by patch size");
  if (n_w < 1) throw ConfigError("model: expression length must be positive");
  if (k_modules < 1) throw ConfigError("model: need at least one fusion module");
  if (vocab_size < 2) throw ConfigError("model: vocabulary too small");
  if (interval < 1) throw ConfigError("model: sampling interval must be >= 1");
  if (n_g_mult < 0 || n_l_mult < 0) throw ConfigError("model: negative memory capacity");
  if ((n_g() == 0) != (n_l() == 0))
    throw ConfigError("model: enable or disable both memories together");
}

Model::Model(ModelConfig cfg) : cfg_(cfg) { cfg_.validate(); }

void Model::init(Rng& rng) {
  init_patchify(tree_, "enc.patch", cfg_.patch, cfg_.channels, cfg_.base_grid_w(),
                cfg_.base_grid_h(), cfg_.d, rng);
  init_text_encoder(tree_, "enc.text", cfg_.vocab_size, cfg_.d, rng);
  init_fusion(tree_, "fuse", cfg_.k_modules, cfg_.d, rng);
  if (cfg_.use_memory()) init_memory(tree_, "mem", cfg_.d, cfg_.n_g(), cfg_.n_l(), rng);
  init_decoder(tree_, "dec", cfg_.d, rng);
}

void Model::load_params(const ParamTree& other) {
  if (tree_.params().empty()) {
    Rng rng(0);
    init(rng);
  }
  if (other.params().size() != tree_.params().size())
    throw IoError("checkpoint/config mismatch: parameter count differs");
  for (auto& [key, dst] : tree_.params()) {
    if (!other.has(key)) throw IoError("checkpoint/config mismatch: missing " + key);
    const Tensor& src = other.at(key);
    if (!src.same_shape(dst))
      throw IoError("checkpoint/config mismatch: shape of " + key + " is " + src.shape_str() +
                    ", expected " + dst.shape_str());
    dst = src;
  }
}

TextEmbedding Model::text(ad::Tape& t, const std::vector<int>& token_ids) const {
  return encode_text(t, token_ids, cfg_.n_w, cfg_.heads, "enc.text");
}

FusionOutput Model::frame_features(ad::Tape& t, const Tensor& frame,
                                   const TextEmbedding& txt) const {
  PatchEmbedding patches =
      patchify(t, frame, cfg_.patch, "enc.patch", cfg_.base_grid_w(), cfg_.base_grid_h());
  return cross_modal_fuse(t, patches, txt, cfg_.k_modules, cfg_.heads, "fuse");
}

ad::Var Model::build_global_cells(ad::Tape& t, const std::vector<Tensor>& frames,
                                  const TextEmbedding& txt) const {
  if (!cfg_.use_memory()) throw ConfigError("build_global_cells: memory disabled");
  auto feature_fn = [&, this](int idx) {
    return frame_features(t, frames[static_cast<size_t>(idx)], txt).v;
  };
  return locater::build_global_cells(t, static_cast<int>(frames.size()), cfg_.interval,
                                     feature_fn, memory_params());
}

FrameOutput Model::frame_step(ad::Tape& t, const Tensor& frame, const TextEmbedding& txt,
                              ad::Var global_cells, ad::Var local_cells) const {
  FusionOutput fused = frame_features(t, frame, txt);
  const int gw = frame.dim(0) / cfg_.patch, gh = frame.dim(1) / cfg_.patch;

  ad::Var g = fused.v;
  Summaries summaries;
  if (global_cells && local_cells) {
    g = memory_read(t, fused.v, global_cells, local_cells);
    summaries = summarize(t, fused.v, global_cells, local_cells);
  } else {
    // memory-disabled variant: read bypass and zero memory summaries
    summaries.v = ad::mean_rows(t, fused.v);
    summaries.mem_g = t.leaf(Tensor({1, cfg_.d}));
    summaries.mem_l = t.leaf(Tensor({1, cfg_.d}));
  }

  QueryVector q = query_embed(t, txt.tokens, txt.pad_mask, summaries, "dec");

  FrameOutput out;
  out.v = fused.v;
  out.grid_w = gw;
  out.grid_h = gh;
  out.word_attn = q.word_attn;
  out.patch_probs = decode_mask(t, g, q);
  out.pixel_probs = upsample(t, out.patch_probs, gw, gh, frame.dim(0), frame.dim(1));
  out.aux_pixel.reserve(fused.taps.size());
  for (ad::Var tap : fused.taps) {
    ad::Var aux = aux_readout(t, tap, "dec");
    out.aux_pixel.push_back(upsample(t, aux, gw, gh, frame.dim(0), frame.dim(1)));
  }
  return out;
}

}  // namespace locater
