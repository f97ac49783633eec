#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "locater/corpus.hpp"

using namespace locater;
using namespace locater::corpus;

namespace {

SceneConfig small_cfg() {
  SceneConfig cfg;
  cfg.w = 48;
  cfg.h = 48;
  cfg.n_t = 8;
  cfg.min_objects = 2;
  cfg.max_objects = 3;
  cfg.min_size = 5;
  cfg.max_size = 8;
  return cfg;
}

bool frames_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && a.vec() == b.vec();
}

}  // namespace

TEST_CASE("generation is deterministic per seed") {
  const SceneConfig cfg = small_cfg();
  const auto a = generate(4, cfg, 99);
  const auto b = generate(4, cfg, 99);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].expression == b[i].expression);
    REQUIRE(a[i].frames.size() == b[i].frames.size());
    for (size_t t = 0; t < a[i].frames.size(); ++t) {
      CHECK(frames_equal(a[i].frames[t], b[i].frames[t]));
      CHECK(a[i].masks[t] == b[i].masks[t]);
    }
  }
  const auto c = generate(4, cfg, 100);
  bool any_diff = false;
  for (size_t t = 0; t < a[0].frames.size() && !any_diff; ++t)
    any_diff = !frames_equal(a[0].frames[t], c[0].frames[t]);
  CHECK(any_diff);
}

TEST_CASE("referent masks are non-empty in every frame of a single") {
  const auto samples = generate(6, small_cfg(), 11);
  for (const auto& s : samples) {
    CHECK(s.provenance == Provenance::Single);
    for (const auto& m : s.masks) CHECK(m.count() > 0);
  }
}

TEST_CASE("expressions identify exactly one object") {
  const auto samples = generate(10, small_cfg(), 21);
  for (const auto& s : samples) {
    int matches = 0;
    for (size_t i = 0; i < s.script.objects.size(); ++i)
      if (roles_match_object(s.roles, s.script, static_cast<int>(i))) ++matches;
    CHECK(matches == 1);
    CHECK(roles_match_object(s.roles, s.script, s.script.referent));
    s.roles.validate();
  }
}

TEST_CASE("falls twins are pixel-congruent before the event") {
  SceneConfig cfg = small_cfg();
  cfg.scenario = "falls";
  cfg.n_t = 10;
  const auto samples = generate(4, cfg, 31);
  for (const auto& s : samples) {
    REQUIRE(s.event_frame > 0);
    const auto& ref = s.script.objects[static_cast<size_t>(s.script.referent)];
    const auto& twin = s.script.objects[1];
    CHECK(ref.falls);
    CHECK_FALSE(twin.falls);
    CHECK(ref.color == twin.color);
    CHECK(ref.shape == twin.shape);
    // integer translation between the two objects
    const int dx = static_cast<int>(twin.x0 - ref.x0);
    CHECK(std::abs((twin.x0 - ref.x0) - dx) < 1e-9);
    const int r = static_cast<int>(ref.size) + 2;
    for (int t = 0; t < s.event_frame; ++t) {
      const Tensor& f = s.frames[static_cast<size_t>(t)];
      // pixel block around the referent equals the block around the twin
      for (int ox = -r; ox <= r; ++ox)
        for (int oy = -r; oy <= r; ++oy) {
          const int ax = static_cast<int>(ref.x0) + ox, ay = static_cast<int>(ref.y0) + oy;
          const int bx = ax + dx, by = ay;
          for (int c = 0; c < 3; ++c) CHECK(f.at3(ax, ay, c) == f.at3(bx, by, c));
        }
      // and after the event the referent has moved away
    }
    bool post_differs = false;
    const Tensor& last = s.frames.back();
    for (int ox = -r; ox <= r && !post_differs; ++ox)
      for (int oy = -r; oy <= r && !post_differs; ++oy) {
        const int ax = static_cast<int>(ref.x0) + ox, ay = static_cast<int>(ref.y0) + oy;
        post_differs = last.at3(ax, ay, 0) != last.at3(ax + dx, ay, 0);
      }
    CHECK(post_differs);
  }
}

TEST_CASE("contrast pairing follows the shared-but-not-identical rule") {
  auto mk = [](std::vector<RolePair> pairs) {
    VideoSample s;
    s.roles.pairs = std::move(pairs);
    return s;
  };
  SUBCASE("the paper's boy/run example is eligible") {
    std::vector<VideoSample> samples;
    samples.push_back(mk({{"boy", Role::Arg0}, {"run", Role::Verb}, {"on grass", Role::Loc}}));
    samples.push_back(mk({{"boy", Role::Arg0}, {"run", Role::Verb}, {"on snow", Role::Loc}}));
    const auto pairs = contrast_sample(samples, false);
    REQUIRE(pairs.size() == 2);
    CHECK(pairs[0] == std::pair<int, int>{0, 1});
  }
  SUBCASE("identical role structures are ineligible") {
    std::vector<VideoSample> samples;
    samples.push_back(mk({{"boy", Role::Arg0}, {"run", Role::Verb}}));
    samples.push_back(mk({{"boy", Role::Arg0}, {"run", Role::Verb}}));
    CHECK(contrast_sample(samples, false).empty());
  }
  SUBCASE("disjoint role structures are ineligible") {
    std::vector<VideoSample> samples;
    samples.push_back(mk({{"boy", Role::Arg0}, {"run", Role::Verb}}));
    samples.push_back(mk({{"girl", Role::Arg0}, {"jump", Role::Verb}}));
    CHECK(contrast_sample(samples, false).empty());
  }
}

TEST_CASE("spatial concatenation widens frames and keeps referent pixels left") {
  const auto samples = generate(12, small_cfg(), 41);
  const auto pairs = contrast_sample(samples, false);
  REQUIRE(!pairs.empty());
  const auto& [qi, pi] = pairs[0];
  const VideoSample& q = samples[static_cast<size_t>(qi)];
  const VideoSample& p = samples[static_cast<size_t>(pi)];
  const VideoSample joined = concat_spatial(q, p);
  CHECK(joined.provenance == Provenance::SpatialConcat);
  CHECK(joined.frames[0].dim(0) == q.frames[0].dim(0) + p.frames[0].dim(0));  // same canvas sizes
  CHECK(joined.frames.size() == q.frames.size());
  CHECK(joined.object_count == q.object_count + p.object_count);
  const int qw = q.frames[0].dim(0);
  for (const auto& m : joined.masks) {
    CHECK(m.count() > 0);
    for (int x = qw; x < m.w; ++x)
      for (int y = 0; y < m.h; ++y) CHECK(m.at(x, y) == 0);
  }
}

TEST_CASE("temporal concatenation doubles the length with empty partner masks") {
  const auto samples = generate(12, small_cfg(), 51);
  const auto pairs = contrast_sample(samples, false);
  REQUIRE(!pairs.empty());
  const auto& [qi, pi] = pairs[0];
  const VideoSample& q = samples[static_cast<size_t>(qi)];
  const VideoSample joined = concat_temporal(q, samples[static_cast<size_t>(pi)]);
  const size_t n_t = q.frames.size();
  CHECK(joined.frames.size() == 2 * n_t);
  for (size_t t = 0; t < n_t; ++t) {
    CHECK(frames_equal(joined.frames[t], q.frames[t]));
    CHECK(joined.masks[t] == q.masks[t]);
  }
  for (size_t t = n_t; t < 2 * n_t; ++t) CHECK(joined.masks[t].count() == 0);
}

TEST_CASE("dataset round-trips bit-exactly through disk") {
  namespace fs = std::filesystem;
  const std::string dir = "/tmp/locater_corpus_roundtrip";
  fs::remove_all(dir);
  const auto samples = generate(3, small_cfg(), 61);
  save_dataset(dir, samples);
  const auto loaded = load_dataset(dir);
  REQUIRE(loaded.size() == samples.size());
  for (size_t i = 0; i < samples.size(); ++i) {
    CHECK(loaded[i].expression == samples[i].expression);
    CHECK(loaded[i].words == samples[i].words);
    CHECK(loaded[i].event_frame == samples[i].event_frame);
    CHECK(loaded[i].object_count == samples[i].object_count);
    CHECK(loaded[i].provenance == samples[i].provenance);
    REQUIRE(loaded[i].roles.pairs.size() == samples[i].roles.pairs.size());
    for (size_t r = 0; r < samples[i].roles.pairs.size(); ++r)
      CHECK(loaded[i].roles.pairs[r] == samples[i].roles.pairs[r]);
    for (size_t t = 0; t < samples[i].frames.size(); ++t) {
      CHECK(frames_equal(loaded[i].frames[t], samples[i].frames[t]));
      CHECK(loaded[i].masks[t] == samples[i].masks[t]);
    }
  }
  fs::remove_all(dir);
}

TEST_CASE("generated pixel values survive float32 storage exactly") {
  const auto samples = generate(1, small_cfg(), 71);
  for (double v : samples[0].frames[0].vec())
    CHECK(static_cast<double>(static_cast<float>(v)) == v);
}

TEST_CASE("contrast pairs always add semantically similar objects") {
  const auto samples = generate(16, small_cfg(), 81);
  const auto pairs = contrast_sample(samples, false);
  REQUIRE(!pairs.empty());
  for (const auto& [qi, pi] : pairs) {
    const VideoSample joined = concat_spatial(samples[static_cast<size_t>(qi)], samples[static_cast<size_t>(pi)]);
    CHECK(joined.object_count > samples[static_cast<size_t>(qi)].object_count);
    CHECK(joined.object_count >= 2);
  }
}

TEST_CASE("unsatisfiable scenes raise a generation error") {
  SceneConfig cfg;
  cfg.w = 24;
  cfg.h = 24;
  cfg.n_t = 4;
  cfg.min_objects = 6;
  cfg.max_objects = 6;
  cfg.min_size = 8;
  cfg.max_size = 9;  // six large objects cannot fit a 24x24 canvas
  CHECK_THROWS_AS(generate(1, cfg, 5), GenerationError);
}
