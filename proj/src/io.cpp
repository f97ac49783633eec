#include "locater/io.hpp"

#include <cstring>
#include <fstream>

namespace locater::io {

namespace {

void put_u32(std::ostream& f, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& f) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  if (!f) throw IoError("binary file truncated");
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

void put_f32(std::ostream& f, const std::vector<float>& v) {
  f.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * 4));
}

void expect_magic(std::istream& f, const char* magic, const std::string& path) {
  char m[4];
  f.read(m, 4);
  if (!f || std::memcmp(m, magic, 4) != 0) throw IoError("bad magic in " + path);
}

}  // namespace

void write_frames_bin(const std::string& path, const std::vector<Tensor>& frames) {
  if (frames.empty()) throw InputError("write_frames_bin: no frames");
  const int w = frames[0].dim(0), h = frames[0].dim(1), c = frames[0].dim(2);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f.write("LCFR", 4);
  put_u32(f, 1);
  put_u32(f, static_cast<uint32_t>(frames.size()));
  put_u32(f, static_cast<uint32_t>(w));
  put_u32(f, static_cast<uint32_t>(h));
  put_u32(f, static_cast<uint32_t>(c));
  std::vector<float> buf;
  for (const Tensor& fr : frames) {
    if (fr.dim(0) != w || fr.dim(1) != h || fr.dim(2) != c)
      throw ShapeError("write_frames_bin: inconsistent frame shapes");
    buf.assign(fr.vec().begin(), fr.vec().end());
    put_f32(f, buf);
  }
  if (!f) throw IoError("short write to " + path);
}

std::vector<Tensor> read_frames_bin(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path);
  expect_magic(f, "LCFR", path);
  const uint32_t version = get_u32(f);
  if (version != 1) throw IoError("unsupported frames.bin version in " + path);
  const uint32_t n = get_u32(f), w = get_u32(f), h = get_u32(f), c = get_u32(f);
  std::vector<Tensor> frames;
  frames.reserve(n);
  const size_t count = static_cast<size_t>(w) * h * c;
  std::vector<float> buf(count);
  for (uint32_t i = 0; i < n; ++i) {
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(count * 4));
    if (!f) throw IoError("frames.bin truncated: " + path);
    Tensor t({static_cast<int>(w), static_cast<int>(h), static_cast<int>(c)});
    for (size_t j = 0; j < count; ++j) t.vec()[j] = static_cast<double>(buf[j]);
    frames.push_back(std::move(t));
  }
  return frames;
}

void write_masks_bin(const std::string& path, const std::vector<Mask>& masks) {
  if (masks.empty()) throw InputError("write_masks_bin: no masks");
  const int w = masks[0].w, h = masks[0].h;
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f.write("LCMK", 4);
  put_u32(f, 1);
  put_u32(f, static_cast<uint32_t>(masks.size()));
  put_u32(f, static_cast<uint32_t>(w));
  put_u32(f, static_cast<uint32_t>(h));
  const size_t nbytes = (static_cast<size_t>(w) * h + 7) / 8;
  std::vector<unsigned char> packed(nbytes);
  for (const Mask& m : masks) {
    if (m.w != w || m.h != h) throw ShapeError("write_masks_bin: inconsistent mask shapes");
    std::fill(packed.begin(), packed.end(), 0);
    for (size_t i = 0; i < m.v.size(); ++i)
      if (m.v[i]) packed[i >> 3] |= static_cast<unsigned char>(1u << (i & 7));
    f.write(reinterpret_cast<const char*>(packed.data()), static_cast<std::streamsize>(nbytes));
  }
  if (!f) throw IoError("short write to " + path);
}

std::vector<Mask> read_masks_bin(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path);
  expect_magic(f, "LCMK", path);
  const uint32_t version = get_u32(f);
  if (version != 1) throw IoError("unsupported masks.bin version in " + path);
  const uint32_t n = get_u32(f), w = get_u32(f), h = get_u32(f);
  const size_t nbytes = (static_cast<size_t>(w) * h + 7) / 8;
  std::vector<unsigned char> packed(nbytes);
  std::vector<Mask> masks;
  masks.reserve(n);
  for (uint32_t i = 0; i < n; ++i) {
    f.read(reinterpret_cast<char*>(packed.data()), static_cast<std::streamsize>(nbytes));
    if (!f) throw IoError("masks.bin truncated: " + path);
    Mask m(static_cast<int>(w), static_cast<int>(h));
    for (size_t j = 0; j < m.v.size(); ++j) m.v[j] = (packed[j >> 3] >> (j & 7)) & 1u;
    masks.push_back(std::move(m));
  }
  return masks;
}

void write_pgm(const std::string& path, const Tensor& probs) {
  if (probs.ndim() != 2) throw ShapeError("write_pgm: expected [W x H]");
  const int w = probs.dim(0), h = probs.dim(1);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f << "P5\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> row(static_cast<size_t>(w));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double v = probs(x, y);
      v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
      row[static_cast<size_t>(x)] = static_cast<unsigned char>(v * 255.0 + 0.5);
    }
    f.write(reinterpret_cast<const char*>(row.data()), w);
  }
  if (!f) throw IoError("short write to " + path);
}

void write_pbm(const std::string& path, const Mask& mask) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f << "P4\n" << mask.w << " " << mask.h << "\n";
  const int rowbytes = (mask.w + 7) / 8;
  std::vector<unsigned char> row(static_cast<size_t>(rowbytes));
  for (int y = 0; y < mask.h; ++y) {
    std::fill(row.begin(), row.end(), 0);
    for (int x = 0; x < mask.w; ++x)
      if (mask.at(x, y)) row[static_cast<size_t>(x >> 3)] |= static_cast<unsigned char>(0x80u >> (x & 7));
    f.write(reinterpret_cast<const char*>(row.data()), rowbytes);
  }
  if (!f) throw IoError("short write to " + path);
}

Mask read_pbm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path);
  std::string magic;
  f >> magic;
  if (magic != "P4") throw IoError("not a raw PBM: " + path);
  int w = 0, h = 0;
  // skip whitespace/comments between header fields
  auto next_int = [&]() {
    int c = f.get();
    while (c == ' ' || c == '\n' || c == '\r' || c == '\t' || c == '#') {
      if (c == '#')
        while (c != '\n' && c != EOF) c = f.get();
      c = f.get();
    }
    int val = 0;
    while (c >= '0' && c <= '9') {
      val = val * 10 + (c - '0');
      c = f.get();
    }
    return val;
  };
  w = next_int();
  h = next_int();
  if (w <= 0 || h <= 0) throw IoError("bad PBM dimensions: " + path);
  const int rowbytes = (w + 7) / 8;
  std::vector<unsigned char> row(static_cast<size_t>(rowbytes));
  Mask m(w, h);
  for (int y = 0; y < h; ++y) {
    f.read(reinterpret_cast<char*>(row.data()), rowbytes);
    if (!f) throw IoError("PBM truncated: " + path);
    for (int x = 0; x < w; ++x)
      m.at(x, y) = (row[static_cast<size_t>(x >> 3)] >> (7 - (x & 7))) & 1u;
  }
  return m;
}

std::map<std::string, std::string> parse_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read config " + path);
  std::map<std::string, std::string> out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto strip = [](std::string s) {
      const auto b = s.find_first_not_of(" \t");
      if (b == std::string::npos) return std::string();
      const auto e = s.find_last_not_of(" \t");
      return s.substr(b, e - b + 1);
    };
    line = strip(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw InputError(path + ":" + std::to_string(lineno) + ": expected key=value");
    const std::string key = strip(line.substr(0, eq));
    const std::string val = strip(line.substr(eq + 1));
    if (key.empty()) throw InputError(path + ":" + std::to_string(lineno) + ": empty key");
    out[key] = val;
  }
  return out;
}

}  // namespace locater::io
