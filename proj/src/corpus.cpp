#include "locater/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "locater/io.hpp"
#include "locater/rng.hpp"

namespace locater::corpus {

namespace fs = std::filesystem;
using nlohmann::json;

std::string role_name(Role r) {
  switch (r) {
    case Role::Arg0: return "ARG0";
    case Role::Verb: return "Verb";
    case Role::Arg1: return "ARG1";
    case Role::Loc: return "ARGM-LOC";
    case Role::Tmp: return "ARGM-TMP";
  }
  throw InputError("unknown role");
}

Role role_from_name(const std::string& s) {
  if (s == "ARG0") return Role::Arg0;
  if (s == "Verb") return Role::Verb;
  if (s == "ARG1") return Role::Arg1;
  if (s == "ARGM-LOC") return Role::Loc;
  if (s == "ARGM-TMP") return Role::Tmp;
  throw InputError("unknown role name: " + s);
}

void RoleStruct::validate() const {
  int arg0 = 0, verbs = 0;
  for (const auto& p : pairs) {
    if (p.role == Role::Arg0) ++arg0;
    if (p.role == Role::Verb) ++verbs;
  }
  if (arg0 != 1) throw InputError("role struct: need exactly one ARG0");
  if (verbs < 1) throw InputError("role struct: need at least one Verb");
}

std::string provenance_name(Provenance p) {
  switch (p) {
    case Provenance::Single: return "single";
    case Provenance::SpatialConcat: return "spatial-concat";
    case Provenance::TemporalConcat: return "temporal-concat";
  }
  throw InputError("unknown provenance");
}

static Provenance provenance_from_name(const std::string& s) {
  if (s == "single") return Provenance::Single;
  if (s == "spatial-concat") return Provenance::SpatialConcat;
  if (s == "temporal-concat") return Provenance::TemporalConcat;
  throw InputError("unknown provenance name: " + s);
}

const std::vector<std::pair<std::string, std::array<double, 3>>>& palette() {
  static const std::vector<std::pair<std::string, std::array<double, 3>>> p = {
      {"red", {0.90, 0.15, 0.15}},    {"green", {0.15, 0.80, 0.20}},
      {"blue", {0.20, 0.35, 0.95}},   {"yellow", {0.92, 0.88, 0.15}},
      {"magenta", {0.88, 0.20, 0.85}}, {"cyan", {0.15, 0.85, 0.88}},
  };
  return p;
}

static const std::vector<std::string>& shape_names() {
  static const std::vector<std::string> s = {"circle", "square", "triangle"};
  return s;
}

const Vocabulary& builtin_vocab() {
  static const Vocabulary v = [] {
    Vocabulary vv;
    for (const auto& [name, rgb] : palette()) {
      (void)rgb;
      vv.add(name);
    }
    for (const auto& s : shape_names()) vv.add(s);
    for (const char* w : {"sits", "moves", "falls", "left", "right", "up", "down", "on", "the",
                          "suddenly"})
      vv.add(w);
    return vv;
  }();
  return v;
}

// ---- rendering --------------------------------------------------------------

namespace {

constexpr double kBackground = 0.08;
constexpr int kSubsamples = 4;  // 4x4 coverage sampling per pixel

struct ObjectState {
  double cx, cy;
};

ObjectState object_at(const SceneObject& o, int t) {
  double cx = o.x0, cy = o.y0;
  if (o.falls && o.event_frame >= 0) {
    const int pre = std::min(t, o.event_frame);
    cx += o.vx * pre;
    cy += o.vy * pre;
    if (t > o.event_frame) cy += o.fall_vy * (t - o.event_frame);
  } else {
    cx += o.vx * t;
    cy += o.vy * t;
  }
  return {cx, cy};
}

bool point_in(const SceneObject& o, double cx, double cy, double px, double py) {
  const double dx = px - cx, dy = py - cy;
  switch (o.shape) {
    case ShapeKind::Circle:
      return dx * dx + dy * dy <= o.size * o.size;
    case ShapeKind::Square:
      return std::abs(dx) <= o.size && std::abs(dy) <= o.size;
    case ShapeKind::Triangle: {
      // upward triangle with circumradius size
      const double x0 = cx, y0 = cy - o.size;
      const double x1 = cx + 0.866 * o.size, y1 = cy + 0.5 * o.size;
      const double x2 = cx - 0.866 * o.size, y2 = cy + 0.5 * o.size;
      auto side = [&](double ax, double ay, double bx, double by) {
        return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
      };
      const double s0 = side(x0, y0, x1, y1);
      const double s1 = side(x1, y1, x2, y2);
      const double s2 = side(x2, y2, x0, y0);
      return (s0 >= 0 && s1 >= 0 && s2 >= 0) || (s0 <= 0 && s1 <= 0 && s2 <= 0);
    }
  }
  return false;
}

double coverage(const SceneObject& o, double cx, double cy, int px, int py) {
  int hit = 0;
  for (int sx = 0; sx < kSubsamples; ++sx)
    for (int sy = 0; sy < kSubsamples; ++sy) {
      const double x = px + (sx + 0.5) / kSubsamples;
      const double y = py + (sy + 0.5) / kSubsamples;
      if (point_in(o, cx, cy, x, y)) ++hit;
    }
  return static_cast<double>(hit) / (kSubsamples * kSubsamples);
}

// conservative bounding box so most pixels skip the coverage test
void bbox(const SceneObject& o, double cx, double cy, int w, int h, int& x0, int& x1, int& y0,
          int& y1) {
  const double r = o.size + 1.5;
  x0 = std::max(0, static_cast<int>(std::floor(cx - r)));
  x1 = std::min(w - 1, static_cast<int>(std::ceil(cx + r)));
  y0 = std::max(0, static_cast<int>(std::floor(cy - r)));
  y1 = std::min(h - 1, static_cast<int>(std::ceil(cy + r)));
}

void render_frame(const SceneScript& sc, int t, Tensor& frame, Mask& mask) {
  frame = Tensor::full({sc.w, sc.h, 3}, kBackground);
  mask = Mask(sc.w, sc.h);
  for (size_t oi = 0; oi < sc.objects.size(); ++oi) {
    const SceneObject& o = sc.objects[oi];
    const auto [cx, cy] = object_at(o, t);
    const auto& rgb = palette()[static_cast<size_t>(o.color)].second;
    int x0, x1, y0, y1;
    bbox(o, cx, cy, sc.w, sc.h, x0, x1, y0, y1);
    for (int x = x0; x <= x1; ++x)
      for (int y = y0; y <= y1; ++y) {
        const double a = coverage(o, cx, cy, x, y);
        if (a <= 0.0) continue;
        for (int c = 0; c < 3; ++c) {
          double& px = frame.at3(x, y, c);
          px = (1.0 - a) * px + a * rgb[static_cast<size_t>(c)];
        }
        if (static_cast<int>(oi) == sc.referent && a >= 0.5) mask.at(x, y) = 1;
      }
  }
}

// ---- expression synthesis ----------------------------------------------------

std::string arg0_phrase(const SceneObject& o) {
  return palette()[static_cast<size_t>(o.color)].first + " " +
         shape_names()[static_cast<size_t>(o.shape)];
}

std::string verb_phrase(const SceneObject& o) {
  if (o.falls) return "falls";
  if (o.vx == 0.0 && o.vy == 0.0) return "sits";
  if (std::abs(o.vx) >= std::abs(o.vy)) return o.vx > 0 ? "moves right" : "moves left";
  return o.vy > 0 ? "moves down" : "moves up";
}

std::string loc_phrase(const SceneObject& o, int canvas_w) {
  return o.x0 < canvas_w / 2.0 ? "on the left" : "on the right";
}

std::vector<std::string> split_words(const std::string& s) {
  std::istringstream is(s);
  std::vector<std::string> out;
  std::string w;
  while (is >> w) out.push_back(w);
  return out;
}

}  // namespace

bool roles_match_object(const RoleStruct& roles, const SceneScript& script, int obj) {
  const SceneObject& o = script.objects[static_cast<size_t>(obj)];
  for (const auto& p : roles.pairs) {
    switch (p.role) {
      case Role::Arg0:
        if (p.phrase != arg0_phrase(o)) return false;
        break;
      case Role::Verb:
        if (p.phrase != verb_phrase(o)) return false;
        break;
      case Role::Loc:
        if (p.phrase != loc_phrase(o, script.w)) return false;
        break;
      case Role::Tmp:
        if (p.phrase == "suddenly" && !o.falls) return false;
        break;
      case Role::Arg1:
        return false;  // generator never emits ARG1 phrases
    }
  }
  return true;
}

namespace {

int count_matches(const RoleStruct& roles, const SceneScript& sc) {
  int n = 0;
  for (size_t i = 0; i < sc.objects.size(); ++i)
    if (roles_match_object(roles, sc, static_cast<int>(i))) ++n;
  return n;
}

// trajectory bounds check with a safety margin
bool in_bounds(const SceneObject& o, int w, int h, int n_t) {
  const double m = o.size + 1.0;
  for (int t = 0; t < n_t; ++t) {
    const auto [cx, cy] = object_at(o, t);
    if (cx < m || cx > w - m || cy < m || cy > h - m) return false;
  }
  return true;
}

bool overlaps(const SceneObject& a, const SceneObject& b, int n_t) {
  for (int t = 0; t < n_t; ++t) {
    const auto [ax, ay] = object_at(a, t);
    const auto [bx, by] = object_at(b, t);
    const double dx = ax - bx, dy = ay - by;
    const double need = a.size + b.size + 2.0;
    if (dx * dx + dy * dy < need * need) return true;
  }
  return false;
}

struct ExprBuild {
  RoleStruct roles;
  std::vector<std::string> words;
};

ExprBuild build_expression(const SceneScript& sc, Rng& rng, bool want_tmp) {
  const SceneObject& ref = sc.objects[static_cast<size_t>(sc.referent)];
  // minimal distinguishing set: ARG0+Verb, then add LOC if still ambiguous
  RoleStruct roles;
  roles.pairs.push_back({arg0_phrase(ref), Role::Arg0});
  roles.pairs.push_back({verb_phrase(ref), Role::Verb});
  if (count_matches(roles, sc) != 1) {
    RoleStruct with_loc = roles;
    with_loc.pairs.push_back({loc_phrase(ref, sc.w), Role::Loc});
    if (count_matches(with_loc, sc) != 1) return {};  // caller retries the scene
    roles = with_loc;
  } else if (rng.uniform() < 0.3) {
    // optional redundant location qualifier; only keep it if it stays unique
    RoleStruct with_loc = roles;
    with_loc.pairs.push_back({loc_phrase(ref, sc.w), Role::Loc});
    if (count_matches(with_loc, sc) == 1) roles = with_loc;
  }
  if (want_tmp && ref.falls) roles.pairs.push_back({"suddenly", Role::Tmp});
  roles.validate();

  // word order: ARG0, LOC, TMP, Verb
  ExprBuild out;
  out.roles = roles;
  auto emit = [&](Role r) {
    for (const auto& p : roles.pairs)
      if (p.role == r)
        for (const auto& w : split_words(p.phrase)) out.words.push_back(w);
  };
  emit(Role::Arg0);
  emit(Role::Loc);
  emit(Role::Tmp);
  emit(Role::Verb);
  return out;
}

SceneObject sample_object(Rng& rng, const SceneConfig& cfg) {
  SceneObject o;
  o.shape = static_cast<ShapeKind>(rng.uniform_int(0, 2));
  o.color = rng.uniform_int(0, static_cast<int>(palette().size()) - 1);
  o.size = rng.uniform(cfg.min_size, cfg.max_size);
  return o;
}

bool place_object(SceneObject& o, Rng& rng, const SceneConfig& cfg,
                  const std::vector<SceneObject>& placed, int attempts = 40) {
  for (int a = 0; a < attempts; ++a) {
    o.x0 = rng.uniform(o.size + 2, cfg.w - o.size - 2);
    o.y0 = rng.uniform(o.size + 2, cfg.h - o.size - 2);
    if (!in_bounds(o, cfg.w, cfg.h, cfg.n_t)) continue;
    bool clear = true;
    for (const auto& other : placed)
      if (overlaps(o, other, cfg.n_t)) {
        clear = false;
        break;
      }
    if (clear) return true;
  }
  return false;
}

// A falls scene: referent twin pair with identical appearance at the same
// height, stationary before the event; only the referent drops afterwards.
bool build_falls_scene(SceneScript& sc, Rng& rng, const SceneConfig& cfg) {
  sc = SceneScript{};
  sc.w = cfg.w;
  sc.h = cfg.h;
  sc.n_t = cfg.n_t;
  const int event = cfg.n_t / 2;
  if (event <= 0 || event >= cfg.n_t - 1) throw GenerationError("falls scene needs n_t >= 4");

  SceneObject ref = sample_object(rng, cfg);
  ref.falls = true;
  ref.event_frame = event;
  // integer centers keep the twin's pre-event pixels an exact translate
  const double size = std::floor(ref.size);
  ref.size = size;
  const int margin = static_cast<int>(size) + 3;
  const int post = cfg.n_t - 1 - event;
  // drop distance that still keeps the referent inside the canvas
  const int y_room = cfg.h - 2 * margin;
  if (y_room < 8) return false;
  const int y0 = rng.uniform_int(margin, margin + std::max(1, y_room / 3));
  const double fall_total = std::min<double>(cfg.h - margin - y0, 2.5 * post);
  if (fall_total < 6.0) return false;
  ref.fall_vy = fall_total / post;
  ref.y0 = y0;

  SceneObject twin = ref;
  twin.falls = false;
  twin.event_frame = -1;
  twin.fall_vy = 0;

  // distinct columns, one on each side half
  const int half = cfg.w / 2;
  const bool ref_left = rng.uniform() < 0.5;
  const int lo_l = margin, hi_l = half - margin;
  const int lo_r = half + margin, hi_r = cfg.w - margin;
  if (hi_l <= lo_l || hi_r <= lo_r) return false;
  ref.x0 = ref_left ? rng.uniform_int(lo_l, hi_l) : rng.uniform_int(lo_r, hi_r);
  twin.x0 = ref_left ? rng.uniform_int(lo_r, hi_r) : rng.uniform_int(lo_l, hi_l);

  if (!in_bounds(ref, cfg.w, cfg.h, cfg.n_t) || !in_bounds(twin, cfg.w, cfg.h, cfg.n_t))
    return false;
  if (overlaps(ref, twin, cfg.n_t)) return false;
  sc.objects = {ref, twin};
  sc.referent = 0;

  // optional decoy with a different appearance
  if (cfg.max_objects > 2 && rng.uniform() < 0.5) {
    SceneObject decoy = sample_object(rng, cfg);
    for (int a = 0; a < 20 && decoy.color == ref.color && decoy.shape == ref.shape; ++a)
      decoy = sample_object(rng, cfg);
    if (!(decoy.color == ref.color && decoy.shape == ref.shape) &&
        place_object(decoy, rng, cfg, sc.objects))
      sc.objects.push_back(decoy);
  }
  return true;
}

bool build_free_scene(SceneScript& sc, Rng& rng, const SceneConfig& cfg, bool allow_motion) {
  sc = SceneScript{};
  sc.w = cfg.w;
  sc.h = cfg.h;
  sc.n_t = cfg.n_t;
  const int n_obj = rng.uniform_int(cfg.min_objects, cfg.max_objects);
  for (int i = 0; i < n_obj; ++i) {
    SceneObject o = sample_object(rng, cfg);
    // distinct appearance keeps ARG0 phrases unambiguous
    bool distinct = false;
    for (int a = 0; a < 30 && !distinct; ++a) {
      distinct = true;
      for (const auto& other : sc.objects)
        if (other.color == o.color && other.shape == o.shape) {
          distinct = false;
          o = sample_object(rng, cfg);
          break;
        }
    }
    if (!distinct) return false;
    if (allow_motion && rng.uniform() < 0.6) {
      const int axis = rng.uniform_int(0, 3);
      const double speed = rng.uniform(0.5, 1.4);
      if (axis == 0) o.vx = speed;
      else if (axis == 1) o.vx = -speed;
      else if (axis == 2) o.vy = speed;
      else o.vy = -speed;
    }
    if (!place_object(o, rng, cfg, sc.objects)) return false;
    sc.objects.push_back(o);
  }
  if (sc.objects.empty()) return false;
  sc.referent = rng.uniform_int(0, static_cast<int>(sc.objects.size()) - 1);
  return true;
}

}  // namespace

std::vector<VideoSample> generate(int count, const SceneConfig& cfg, uint64_t seed) {
  if (count < 1) throw PreconditionError("generate: count must be >= 1");
  if (cfg.scenario != "mixed" && cfg.scenario != "falls" && cfg.scenario != "static")
    throw ConfigError("generate: unknown scenario " + cfg.scenario);
  if (cfg.min_objects < 1 || cfg.max_objects < cfg.min_objects)
    throw ConfigError("generate: bad object count range");

  const Vocabulary& vocab = builtin_vocab();
  std::vector<VideoSample> out;
  out.reserve(static_cast<size_t>(count));
  for (int idx = 0; idx < count; ++idx) {
    Rng rng = Rng::fold(seed, static_cast<uint64_t>(idx));
    SceneScript sc;
    ExprBuild expr;
    bool ok = false;
    for (int attempt = 0; attempt < 60 && !ok; ++attempt) {
      bool built = false;
      if (cfg.scenario == "falls")
        built = build_falls_scene(sc, rng, cfg);
      else if (cfg.scenario == "static")
        built = build_free_scene(sc, rng, cfg, false);
      else if (rng.uniform() < 0.25 && cfg.n_t >= 6)
        built = build_falls_scene(sc, rng, cfg);
      else
        built = build_free_scene(sc, rng, cfg, true);
      if (!built) continue;
      expr = build_expression(sc, rng, rng.uniform() < 0.5);
      ok = !expr.words.empty();
    }
    if (!ok)
      throw GenerationError("generate: could not build a satisfiable scene for sample " +
                            std::to_string(idx) + " (canvas too crowded?)");

    VideoSample s;
    s.script = sc;
    s.roles = expr.roles;
    s.words = expr.words;
    for (const auto& w : s.words) s.expression.push_back(vocab.id(w));
    s.object_count = static_cast<int>(sc.objects.size());
    s.event_frame = sc.objects[static_cast<size_t>(sc.referent)].falls
                        ? sc.objects[static_cast<size_t>(sc.referent)].event_frame
                        : -1;
    s.provenance = Provenance::Single;
    s.frames.resize(static_cast<size_t>(sc.n_t));
    s.masks.resize(static_cast<size_t>(sc.n_t));
    for (int t = 0; t < sc.n_t; ++t) render_frame(sc, t, s.frames[static_cast<size_t>(t)], s.masks[static_cast<size_t>(t)]);
    for (const auto& m : s.masks)
      if (m.empty_mask()) throw GenerationError("generate: referent left no pixels in a frame");
    out.push_back(std::move(s));
  }
  return out;
}

// ---- contrasting sampling -----------------------------------------------------

namespace {

bool pair_eligible(const VideoSample& q, const VideoSample& p) {
  int shared = 0;
  for (const auto& qp : q.roles.pairs)
    for (const auto& pp : p.roles.pairs)
      if (qp == pp) {
        ++shared;
        break;
      }
  // at least one, but not all, of the query's realized roles
  return shared >= 1 && shared < static_cast<int>(q.roles.pairs.size());
}

bool query_ambiguous_in(const VideoSample& q, const VideoSample& p) {
  if (p.script.objects.empty()) return false;  // loaded samples carry no script
  for (size_t i = 0; i < p.script.objects.size(); ++i)
    if (roles_match_object(q.roles, p.script, static_cast<int>(i))) return true;
  return false;
}

}  // namespace

std::vector<std::pair<int, int>> contrast_sample(const std::vector<VideoSample>& samples,
                                                 bool warn) {
  if (samples.size() < 2) throw PreconditionError("contrast_sample: need at least two samples");
  std::vector<std::pair<int, int>> pairs;
  const int n = static_cast<int>(samples.size());
  for (int i = 0; i < n; ++i) {
    int partner = -1;
    for (int step = 1; step < n; ++step) {
      const int j = (i + step) % n;
      if (!pair_eligible(samples[static_cast<size_t>(i)], samples[static_cast<size_t>(j)])) continue;
      if (query_ambiguous_in(samples[static_cast<size_t>(i)], samples[static_cast<size_t>(j)])) continue;
      partner = j;
      break;
    }
    if (partner < 0) {
      if (warn)
        std::cerr << "contrast_sample: no eligible partner for sample " << i << ", skipped\n";
      continue;
    }
    pairs.emplace_back(i, partner);
  }
  return pairs;
}

Tensor resize_frame(const Tensor& frame, int new_w, int new_h) {
  if (frame.ndim() != 3) throw ShapeError("resize_frame: expected [W x H x C]");
  const int w = frame.dim(0), h = frame.dim(1), c = frame.dim(2);
  if (w == new_w && h == new_h) return frame;
  Tensor out({new_w, new_h, c});
  const double sx = (new_w > 1 && w > 1) ? static_cast<double>(w - 1) / (new_w - 1) : 0.0;
  const double sy = (new_h > 1 && h > 1) ? static_cast<double>(h - 1) / (new_h - 1) : 0.0;
  for (int x = 0; x < new_w; ++x) {
    const double fx = x * sx;
    int ix0 = static_cast<int>(fx);
    if (ix0 > w - 2) ix0 = w > 1 ? w - 2 : 0;
    const int ix1 = w > 1 ? ix0 + 1 : 0;
    const double ax = fx - ix0;
    for (int y = 0; y < new_h; ++y) {
      const double fy = y * sy;
      int iy0 = static_cast<int>(fy);
      if (iy0 > h - 2) iy0 = h > 1 ? h - 2 : 0;
      const int iy1 = h > 1 ? iy0 + 1 : 0;
      const double ay = fy - iy0;
      for (int cc = 0; cc < c; ++cc)
        out.at3(x, y, cc) = (1 - ax) * (1 - ay) * frame.at3(ix0, iy0, cc) +
                            ax * (1 - ay) * frame.at3(ix1, iy0, cc) +
                            (1 - ax) * ay * frame.at3(ix0, iy1, cc) +
                            ax * ay * frame.at3(ix1, iy1, cc);
    }
  }
  return out;
}

namespace {

// partner frames adjusted to the query's duration: truncate or pad by
// repeating the final frame
std::vector<Tensor> fit_duration(const std::vector<Tensor>& frames, int n_t) {
  std::vector<Tensor> out;
  out.reserve(static_cast<size_t>(n_t));
  for (int t = 0; t < n_t; ++t)
    out.push_back(frames[static_cast<size_t>(std::min<int>(t, static_cast<int>(frames.size()) - 1))]);
  return out;
}

}  // namespace

VideoSample concat_spatial(const VideoSample& query, const VideoSample& partner) {
  if (query.frames.empty() || partner.frames.empty())
    throw InputError("concat_spatial: empty sample");
  const int qw = query.frames[0].dim(0), qh = query.frames[0].dim(1), c = query.frames[0].dim(2);
  const int pw = partner.frames[0].dim(0), ph = partner.frames[0].dim(1);
  // partner resized to the query's height, aspect preserved
  const int pw2 = std::max(1, static_cast<int>(std::lround(static_cast<double>(pw) * qh / ph)));
  const int n_t = static_cast<int>(query.frames.size());

  std::vector<Tensor> partner_frames = fit_duration(partner.frames, n_t);
  VideoSample out;
  out.expression = query.expression;
  out.words = query.words;
  out.roles = query.roles;
  out.object_count = query.object_count + partner.object_count;
  out.event_frame = query.event_frame;
  out.provenance = Provenance::SpatialConcat;
  out.frames.reserve(static_cast<size_t>(n_t));
  out.masks.reserve(static_cast<size_t>(n_t));
  for (int t = 0; t < n_t; ++t) {
    const Tensor& qf = query.frames[static_cast<size_t>(t)];
    const Tensor pf = resize_frame(partner_frames[static_cast<size_t>(t)], pw2, qh);
    Tensor f({qw + pw2, qh, c});
    // x-major layout: the query block is contiguous, the partner block follows
    std::copy(qf.vec().begin(), qf.vec().end(), f.vec().begin());
    std::copy(pf.vec().begin(), pf.vec().end(), f.vec().begin() + qf.size());
    out.frames.push_back(std::move(f));
    Mask m(qw + pw2, qh);
    const Mask& qm = query.masks[static_cast<size_t>(t)];
    std::copy(qm.v.begin(), qm.v.end(), m.v.begin());  // partner half stays zero
    out.masks.push_back(std::move(m));
  }
  return out;
}

VideoSample concat_temporal(const VideoSample& query, const VideoSample& partner) {
  if (query.frames.empty() || partner.frames.empty())
    throw InputError("concat_temporal: empty sample");
  const int qw = query.frames[0].dim(0), qh = query.frames[0].dim(1);
  const int n_t = static_cast<int>(query.frames.size());

  VideoSample out;
  out.expression = query.expression;
  out.words = query.words;
  out.roles = query.roles;
  out.object_count = query.object_count + partner.object_count;
  out.event_frame = query.event_frame;
  out.provenance = Provenance::TemporalConcat;
  out.frames = query.frames;
  out.masks = query.masks;
  std::vector<Tensor> pf = fit_duration(partner.frames, n_t);
  for (int t = 0; t < n_t; ++t) {
    out.frames.push_back(resize_frame(pf[static_cast<size_t>(t)], qw, qh));
    out.masks.emplace_back(qw, qh);  // no referent in the partner half
  }
  return out;
}

VideoSample flip_sample(const VideoSample& s) {
  VideoSample out = s;
  const auto swap_word = [](std::string w) {
    if (w == "left") return std::string("right");
    if (w == "right") return std::string("left");
    return w;
  };
  for (auto& w : out.words) w = swap_word(w);
  const Vocabulary& vocab = builtin_vocab();
  const int left_id = vocab.id("left"), right_id = vocab.id("right");
  for (auto& id : out.expression) id = id == left_id ? right_id : (id == right_id ? left_id : id);
  for (auto& p : out.roles.pairs) {
    auto words = split_words(p.phrase);
    for (auto& w : words) w = swap_word(w);
    std::string joined;
    for (size_t i = 0; i < words.size(); ++i) {
      if (i) joined += " ";
      joined += words[i];
    }
    p.phrase = joined;
  }
  for (size_t t = 0; t < out.frames.size(); ++t) {
    const Tensor& src = s.frames[t];
    Tensor& dst = out.frames[t];
    const int w = src.dim(0), h = src.dim(1), c = src.dim(2);
    for (int x = 0; x < w; ++x)
      for (int y = 0; y < h; ++y)
        for (int cc = 0; cc < c; ++cc) dst.at3(x, y, cc) = src.at3(w - 1 - x, y, cc);
    const Mask& sm = s.masks[t];
    Mask& dm = out.masks[t];
    for (int x = 0; x < w; ++x)
      for (int y = 0; y < h; ++y) dm.at(x, y) = sm.at(w - 1 - x, y);
  }
  // the script (if any) no longer matches the mirrored pixels; drop it
  out.script = SceneScript{};
  return out;
}

// ---- dataset io ----------------------------------------------------------------

namespace {

std::string sample_dir_name(int idx) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "sample_%05d", idx);
  return buf;
}

json roles_to_json(const RoleStruct& roles) {
  json arr = json::array();
  for (const auto& p : roles.pairs) arr.push_back({{"phrase", p.phrase}, {"role", role_name(p.role)}});
  return arr;
}

RoleStruct roles_from_json(const json& arr) {
  RoleStruct out;
  for (const auto& e : arr)
    out.pairs.push_back({e.at("phrase").get<std::string>(), role_from_name(e.at("role").get<std::string>())});
  return out;
}

}  // namespace

void save_dataset(const std::string& dir, const std::vector<VideoSample>& samples) {
  if (samples.empty()) throw InputError("save_dataset: nothing to write");
  fs::create_directories(dir);
  builtin_vocab().save((fs::path(dir) / "vocab.txt").string());
  for (size_t i = 0; i < samples.size(); ++i) {
    const VideoSample& s = samples[i];
    const fs::path sd = fs::path(dir) / sample_dir_name(static_cast<int>(i));
    fs::create_directories(sd);
    io::write_frames_bin((sd / "frames.bin").string(), s.frames);
    io::write_masks_bin((sd / "masks.bin").string(), s.masks);
    json meta;
    meta["expression"] = s.words;
    meta["expression_ids"] = s.expression;
    meta["roles"] = roles_to_json(s.roles);
    meta["event_frame"] = s.event_frame;
    meta["object_count"] = s.object_count;
    meta["provenance"] = provenance_name(s.provenance);
    std::ofstream mf(sd / "meta.json", std::ios::binary);
    if (!mf) throw IoError("cannot write meta.json in " + sd.string());
    mf << meta.dump(2) << "\n";
  }
}

std::vector<VideoSample> load_dataset(const std::string& dir) {
  if (!fs::is_directory(dir)) throw IoError("dataset directory not found: " + dir);
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory() && e.path().filename().string().rfind("sample_", 0) == 0)
      names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  if (names.empty()) throw IoError("no sample_* directories in " + dir);

  std::vector<VideoSample> out;
  out.reserve(names.size());
  for (const auto& name : names) {
    const fs::path sd = fs::path(dir) / name;
    VideoSample s;
    s.frames = io::read_frames_bin((sd / "frames.bin").string());
    s.masks = io::read_masks_bin((sd / "masks.bin").string());
    if (s.frames.size() != s.masks.size())
      throw IoError("frame/mask count mismatch in " + sd.string());
    std::ifstream mf(sd / "meta.json", std::ios::binary);
    if (!mf) throw IoError("missing meta.json in " + sd.string());
    json meta = json::parse(mf);
    s.words = meta.at("expression").get<std::vector<std::string>>();
    s.expression = meta.at("expression_ids").get<std::vector<int>>();
    s.roles = roles_from_json(meta.at("roles"));
    s.event_frame = meta.at("event_frame").get<int>();
    s.object_count = meta.at("object_count").get<int>();
    s.provenance = provenance_from_name(meta.at("provenance").get<std::string>());
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace locater::corpus
