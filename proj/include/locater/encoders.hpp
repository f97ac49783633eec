#pragma once

#include <map>
#include <string>
#include <vector>

#include "locater/autodiff.hpp"
#include "locater/numerics.hpp"
#include "locater/rng.hpp"

namespace locater {

// Token table backing the text encoder. File format: one token per line,
// line index = id; ids 0 and 1 are reserved for padding and unknowns.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;

  Vocabulary() {
    add("<pad>");
    add("<unk>");
  }

  int add(const std::string& word) {
    auto it = index_.find(word);
    if (it != index_.end()) return it->second;
    const int id = static_cast<int>(words_.size());
    words_.push_back(word);
    index_.emplace(word, id);
    return id;
  }

  int id(const std::string& word) const {
    auto it = index_.find(word);
    return it == index_.end() ? kUnk : it->second;
  }

  const std::string& word(int id) const {
    if (id < 0 || id >= static_cast<int>(words_.size()))
      throw VocabError("vocabulary: id out of range: " + std::to_string(id));
    return words_[static_cast<size_t>(id)];
  }

  int size() const { return static_cast<int>(words_.size()); }

  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

 private:
  std::vector<std::string> words_;
  std::map<std::string, int> index_;
};

struct PatchEmbedding {
  ad::Var tokens = nullptr;  // [N_v x D]
  int grid_w = 0, grid_h = 0;
  int patch = 0;
};

struct TextEmbedding {
  ad::Var tokens = nullptr;  // [N_w x D]
  std::vector<uint8_t> pad_mask;  // true = real word
};

struct FusionOutput {
  ad::Var v = nullptr;        // [N_v x D], language-enhanced visual feature
  std::vector<ad::Var> taps;  // K intermediate features, taps.back() == v
};

// Splits a [W x H x C] frame into O x O patches, projects each flattened
// patch and adds a learned positional embedding. When the frame's grid
// differs from the grid the positional table was built for, the table is
// bilinearly resampled (corner-aligned) so arbitrary widths still work.
PatchEmbedding patchify(ad::Tape& t, const Tensor& frame, int patch, const std::string& prefix,
                        int base_grid_w, int base_grid_h);

// Pads/truncates ids to n_w, embeds through the table and one encoder block
// over the real tokens.
TextEmbedding encode_text(ad::Tape& t, const std::vector<int>& token_ids, int n_w, int heads,
                          const std::string& prefix);

// K cross-modality modules; each fuses [visual + eps_v, text + eps_w],
// keeps the first N_v rows and refines them with a second block.
FusionOutput cross_modal_fuse(ad::Tape& t, const PatchEmbedding& patches,
                              const TextEmbedding& text, int k_modules, int heads,
                              const std::string& prefix);

void init_patchify(ParamTree& tree, const std::string& prefix, int patch, int channels,
                   int base_grid_w, int base_grid_h, int d, Rng& rng);
void init_text_encoder(ParamTree& tree, const std::string& prefix, int vocab_size, int d, Rng& rng);
void init_fusion(ParamTree& tree, const std::string& prefix, int k_modules, int d, Rng& rng);

}  // namespace locater
