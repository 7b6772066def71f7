// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "motok/tensor.hpp"

namespace motok {

// Flat binary tensor container "TEN1":
//   bytes 0..3   ASCII magic "TEN1"
//   u32 LE       rank
//   rank x u64 LE dims
//   payload      row-major f64 LE
void write_ten1(const std::string& path, const Tensor& t);
Tensor read_ten1(const std::string& path, bool requires_grad = false);

// Binary PPM (P6) dump of one video frame. `frame` points at C*H*W doubles
// in [C,H,W] layout; values are shifted by `offset` then clamped to [0,1].
void write_ppm(const std::string& path, const double* frame, int64_t channels, int64_t height,
               int64_t width, double offset = 0.0);

// FNV-1a over a file's bytes; used for determinism checks.
uint64_t file_checksum(const std::string& path);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

// %.17g rendering, enough digits to round-trip any double exactly.
std::string format_double(double v);

}  // namespace motok
