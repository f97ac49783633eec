#include "locater/encoders.hpp"

#include <cmath>
#include <fstream>

namespace locater {

void Vocabulary::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("vocabulary: cannot write " + path);
  for (const auto& w : words_) f << w << "\n";
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("vocabulary: cannot read " + path);
  Vocabulary v;
  std::string line;
  int idx = 0;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (idx >= 2) v.add(line);  // line 0/1 are the reserved pad/unk slots
    ++idx;
  }
  if (idx < 2) throw IoError("vocabulary: file too short, reserved ids missing");
  return v;
}

namespace {

// Corner-aligned bilinear mixing matrix from a base grid onto a target grid,
// flattened with x-major token order (p = gx * gh + gy).
Tensor grid_resample_matrix(int bw, int bh, int tw, int th) {
  Tensor m({tw * th, bw * bh});
  const double sx = (tw > 1 && bw > 1) ? static_cast<double>(bw - 1) / (tw - 1) : 0.0;
  const double sy = (th > 1 && bh > 1) ? static_cast<double>(bh - 1) / (th - 1) : 0.0;
  for (int x = 0; x < tw; ++x) {
    const double fx = x * sx;
    int ix0 = static_cast<int>(fx);
    if (ix0 > bw - 2) ix0 = bw > 1 ? bw - 2 : 0;
    const int ix1 = bw > 1 ? ix0 + 1 : 0;
    const double ax = fx - ix0;
    for (int y = 0; y < th; ++y) {
      const double fy = y * sy;
      int iy0 = static_cast<int>(fy);
      if (iy0 > bh - 2) iy0 = bh > 1 ? bh - 2 : 0;
      const int iy1 = bh > 1 ? iy0 + 1 : 0;
      const double ay = fy - iy0;
      const int row = x * th + y;
      m(row, ix0 * bh + iy0) += (1 - ax) * (1 - ay);
      m(row, ix1 * bh + iy0) += ax * (1 - ay);
      m(row, ix0 * bh + iy1) += (1 - ax) * ay;
      m(row, ix1 * bh + iy1) += ax * ay;
    }
  }
  return m;
}

}  // namespace

void init_patchify(ParamTree& tree, const std::string& prefix, int patch, int channels,
                   int base_grid_w, int base_grid_h, int d, Rng& rng) {
  const int in_dim = patch * patch * channels;
  Tensor w({in_dim, d});
  const double s = 1.0 / std::sqrt(static_cast<double>(in_dim));
  for (auto& x : w.vec()) x = rng.normal(0.0, s);
  tree.add(prefix + ".proj.w", std::move(w));
  tree.add(prefix + ".proj.b", Tensor({1, d}));
  Tensor pos({base_grid_w * base_grid_h, d});
  for (auto& x : pos.vec()) x = rng.normal(0.0, 0.02);
  tree.add(prefix + ".pos", std::move(pos));
}

PatchEmbedding patchify(ad::Tape& t, const Tensor& frame, int patch, const std::string& prefix,
                        int base_grid_w, int base_grid_h) {
  if (frame.ndim() != 3) throw ShapeError("patchify: frame must be [W x H x C]");
  const int w = frame.dim(0), h = frame.dim(1), c = frame.dim(2);
  if (patch < 1 || w % patch != 0 || h % patch != 0)
    throw ConfigError("patchify: frame " + frame.shape_str() + " not divisible by patch " +
                      std::to_string(patch));
  const int gw = w / patch, gh = h / patch;
  const int n_v = gw * gh;
  const int in_dim = patch * patch * c;

  Tensor flat({n_v, in_dim});
  for (int gx = 0; gx < gw; ++gx)
    for (int gy = 0; gy < gh; ++gy) {
      double* row = flat.data() + static_cast<size_t>(gx * gh + gy) * in_dim;
      int k = 0;
      for (int px = 0; px < patch; ++px)
        for (int py = 0; py < patch; ++py)
          for (int cc = 0; cc < c; ++cc)
            row[k++] = frame.at3(gx * patch + px, gy * patch + py, cc);
    }

  ad::Var x = t.leaf(std::move(flat));
  ad::Var proj = ad::add_rowvec(t, ad::matmul(t, x, t.param(prefix + ".proj.w")),
                                t.param(prefix + ".proj.b"));
  ad::Var pos = t.param(prefix + ".pos");
  if (gw != base_grid_w || gh != base_grid_h) {
    ad::Var mix = t.leaf(grid_resample_matrix(base_grid_w, base_grid_h, gw, gh));
    pos = ad::matmul(t, mix, pos);
  }
  PatchEmbedding out;
  out.tokens = ad::add(t, proj, pos);
  out.grid_w = gw;
  out.grid_h = gh;
  out.patch = patch;
  return out;
}

void init_text_encoder(ParamTree& tree, const std::string& prefix, int vocab_size, int d, Rng& rng) {
  Tensor table({vocab_size, d});
  for (auto& x : table.vec()) x = rng.normal(0.0, 0.02);
  tree.add(prefix + ".table", std::move(table));
  init_encoder_block(tree, prefix + ".blk", d, rng);
}

TextEmbedding encode_text(ad::Tape& t, const std::vector<int>& token_ids, int n_w, int heads,
                          const std::string& prefix) {
  if (token_ids.empty()) throw InputError("encode_text: empty expression");
  ad::Var table = t.param(prefix + ".table");
  const int vocab = table->val.rows();
  std::vector<int> ids(static_cast<size_t>(n_w), Vocabulary::kPad);
  std::vector<uint8_t> mask(static_cast<size_t>(n_w), 0);
  for (int i = 0; i < n_w && i < static_cast<int>(token_ids.size()); ++i) {
    const int id = token_ids[static_cast<size_t>(i)];
    if (id < 0 || id >= vocab)
      throw VocabError("encode_text: token id " + std::to_string(id) + " outside vocabulary");
    ids[static_cast<size_t>(i)] = id;
    mask[static_cast<size_t>(i)] = 1;
  }
  ad::Var emb = ad::gather_rows(t, table, ids);
  TextEmbedding out;
  out.tokens = encoder_block(t, emb, prefix + ".blk", heads, mask);
  out.pad_mask = std::move(mask);
  return out;
}

void init_fusion(ParamTree& tree, const std::string& prefix, int k_modules, int d, Rng& rng) {
  if (k_modules < 1) throw ConfigError("fusion: need at least one module");
  Tensor ev({1, d}), ew({1, d});
  for (auto& x : ev.vec()) x = rng.normal(0.0, 0.02);
  for (auto& x : ew.vec()) x = rng.normal(0.0, 0.02);
  tree.add(prefix + ".eps_v", std::move(ev));
  tree.add(prefix + ".eps_w", std::move(ew));
  for (int k = 0; k < k_modules; ++k) {
    const std::string mk = prefix + ".k" + std::to_string(k);
    init_encoder_block(tree, mk + ".b1", d, rng);
    init_encoder_block(tree, mk + ".b2", d, rng);
  }
}

FusionOutput cross_modal_fuse(ad::Tape& t, const PatchEmbedding& patches,
                              const TextEmbedding& text, int k_modules, int heads,
                              const std::string& prefix) {
  if (k_modules < 1) throw ConfigError("fusion: need at least one module");
  const int n_v = patches.tokens->val.rows();
  const int n_w = text.tokens->val.rows();

  // visual rows always attendable, text rows per pad mask
  std::vector<uint8_t> joint_mask(static_cast<size_t>(n_v + n_w), 1);
  for (int i = 0; i < n_w; ++i) joint_mask[static_cast<size_t>(n_v + i)] = text.pad_mask[static_cast<size_t>(i)];

  ad::Var eps_v = t.param(prefix + ".eps_v");
  ad::Var eps_w = t.param(prefix + ".eps_w");

  FusionOutput out;
  ad::Var f = patches.tokens;  // F_2^0
  for (int k = 0; k < k_modules; ++k) {
    const std::string mk = prefix + ".k" + std::to_string(k);
    ad::Var vis = ad::add_rowvec(t, f, eps_v);
    ad::Var txt = ad::add_rowvec(t, text.tokens, eps_w);
    ad::Var joint = ad::concat_rows(t, {vis, txt});
    ad::Var f1 = encoder_block(t, joint, mk + ".b1", heads, joint_mask);
    f1 = ad::slice_rows(t, f1, 0, n_v);  // linguistic outputs are discarded
    f = encoder_block(t, f1, mk + ".b2", heads);
    out.taps.push_back(f);
  }
  out.v = f;
  return out;
}

}  // namespace locater
