#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "locater/encoders.hpp"
#include "locater/mask.hpp"
#include "locater/tensor.hpp"

namespace locater::corpus {

enum class Role { Arg0, Verb, Arg1, Loc, Tmp };

std::string role_name(Role r);
Role role_from_name(const std::string& s);

struct RolePair {
  std::string phrase;
  Role role;
  bool operator==(const RolePair& o) const { return phrase == o.phrase && role == o.role; }
};

// Ordered (phrase, role) decomposition of a description.
struct RoleStruct {
  std::vector<RolePair> pairs;
  void validate() const;  // exactly one ARG0, at least one Verb
};

enum class Provenance { Single, SpatialConcat, TemporalConcat };
std::string provenance_name(Provenance p);

enum class ShapeKind { Circle, Square, Triangle };

struct SceneObject {
  ShapeKind shape = ShapeKind::Circle;
  int color = 0;  // index into palette()
  double x0 = 0, y0 = 0;  // center at t = 0
  double vx = 0, vy = 0;  // per-frame velocity
  double size = 8;        // radius / half-side / circumradius
  bool falls = false;     // velocity flips downward at event_frame
  int event_frame = -1;
  double fall_vy = 0;
};

struct SceneScript {
  int w = 0, h = 0, n_t = 0;
  std::vector<SceneObject> objects;
  int referent = 0;
};

struct VideoSample {
  std::vector<Tensor> frames;  // each [W x H x C]
  std::vector<Mask> masks;     // referent ground truth per frame
  std::vector<int> expression;          // token ids into the corpus vocabulary
  std::vector<std::string> words;       // same tokens as text
  RoleStruct roles;
  int object_count = 0;
  int event_frame = -1;  // -1 when no temporal event
  Provenance provenance = Provenance::Single;
  SceneScript script;  // populated for generated singles; empty after load
};

struct SceneConfig {
  int w = 64, h = 64, channels = 3;
  int n_t = 16;
  int min_objects = 2, max_objects = 5;
  double min_size = 6.0, max_size = 11.0;
  // "mixed": motions and events sampled freely; "falls": every sample is a
  // temporal-event scene with an identical-appearance twin; "static": no
  // motion, appearance-only grounding.
  std::string scenario = "mixed";
};

// Shared token table for everything the generator can say.
const Vocabulary& builtin_vocab();
const std::vector<std::pair<std::string, std::array<double, 3>>>& palette();

// Deterministic rendering + expression synthesis. Each sample draws from its
// own RNG stream derived from (seed, index).
std::vector<VideoSample> generate(int count, const SceneConfig& config, uint64_t seed);

// Contrasting pairs: partner shares at least one (phrase, role) realization
// with the query but not all of them; pairs that would make the query
// expression ambiguous against the partner's scene are rejected. Returns
// index pairs (query, partner); queries without an eligible partner are
// skipped with a warning on stderr.
std::vector<std::pair<int, int>> contrast_sample(const std::vector<VideoSample>& samples,
                                                 bool warn = true);

VideoSample concat_spatial(const VideoSample& query, const VideoSample& partner);
VideoSample concat_temporal(const VideoSample& query, const VideoSample& partner);

// Mirror about the vertical axis; swaps "left"/"right" in the expression and
// in the role phrases. An involution.
VideoSample flip_sample(const VideoSample& s);

// True when the expression described by `roles` applies to object `obj`
// within `script` (used for the uniqueness audit and ambiguity checks).
bool roles_match_object(const RoleStruct& roles, const SceneScript& script, int obj);

// Dataset directory layout: vocab.txt at the root plus one subdirectory per
// sample holding frames.bin, masks.bin and meta.json.
void save_dataset(const std::string& dir, const std::vector<VideoSample>& samples);
std::vector<VideoSample> load_dataset(const std::string& dir);

Tensor resize_frame(const Tensor& frame, int new_w, int new_h);

}  // namespace locater::corpus
