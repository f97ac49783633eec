#pragma once

#include <map>
#include <string>
#include <vector>

#include "locater/mask.hpp"
#include "locater/tensor.hpp"

namespace locater::io {

// frames.bin: "LCFR", u32 version, u32 n/W/H/C, float32 LE payload in
// (x-major, then y, then channel) order — the Tensor layout verbatim.
void write_frames_bin(const std::string& path, const std::vector<Tensor>& frames);
std::vector<Tensor> read_frames_bin(const std::string& path);

// masks.bin: "LCMK", u32 version, u32 n/W/H, bit-packed payload per frame
// (pixel i = x*H + y stored at byte i/8, LSB first).
void write_masks_bin(const std::string& path, const std::vector<Mask>& masks);
std::vector<Mask> read_masks_bin(const std::string& path);

// 8-bit binary PGM probability map and 1-bit PBM binary mask. PGM/PBM raster
// order is row-major in y, so writers transpose from the (x, y) layout.
void write_pgm(const std::string& path, const Tensor& probs);
void write_pbm(const std::string& path, const Mask& mask);
Mask read_pbm(const std::string& path);

// key=value configuration file; '#' starts a comment, blank lines ignored.
std::map<std::string, std::string> parse_config_file(const std::string& path);

}  // namespace locater::io
