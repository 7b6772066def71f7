// SPDX-License-Identifier: Apache-2.0
#include "motok/ten_io.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

static_assert(std::endian::native == std::endian::little,
              "TEN1 I/O assumes a little-endian host");

namespace motok {

void write_ten1(const std::string& path, const Tensor& t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot open for writing: " + path);
    }
    out.write("TEN1", 4);
    const uint32_t rank = static_cast<uint32_t>(t.rank());
    out.write(reinterpret_cast<const char*>(&rank), sizeof(rank));
    for (int64_t d : t.shape()) {
        const uint64_t dim = static_cast<uint64_t>(d);
        out.write(reinterpret_cast<const char*>(&dim), sizeof(dim));
    }
    const auto data = t.data();
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!out) {
        throw IoError("short write: " + path);
    }
}

Tensor read_ten1(const std::string& path, bool requires_grad) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open for reading: " + path);
    }
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "TEN1", 4) != 0) {
        throw IoError("bad TEN1 magic in " + path);
    }
    uint32_t rank = 0;
    in.read(reinterpret_cast<char*>(&rank), sizeof(rank));
    if (!in || rank == 0 || rank > 16) {
        throw IoError("bad TEN1 rank in " + path);
    }
    Shape shape(rank);
    for (auto& d : shape) {
        uint64_t dim = 0;
        in.read(reinterpret_cast<char*>(&dim), sizeof(dim));
        if (!in || dim == 0) {
            throw IoError("bad TEN1 dim in " + path);
        }
        d = static_cast<int64_t>(dim);
    }
    std::vector<double> data(static_cast<size_t>(shape_numel(shape)));
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!in) {
        throw IoError("truncated TEN1 payload in " + path);
    }
    return Tensor::from_data(std::move(shape), std::move(data), requires_grad);
}

void write_ppm(const std::string& path, const double* frame, int64_t channels, int64_t height,
               int64_t width, double offset) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot open for writing: " + path);
    }
    out << "P6\n" << width << " " << height << "\n255\n";
    std::vector<unsigned char> row(static_cast<size_t>(width) * 3);
    for (int64_t y = 0; y < height; ++y) {
        for (int64_t x = 0; x < width; ++x) {
            for (int64_t c = 0; c < 3; ++c) {
                // Replicate the last channel for single/dual-channel frames.
                const int64_t cc = std::min(c, channels - 1);
                double v = frame[(cc * height + y) * width + x] + offset;
                v = std::clamp(v, 0.0, 1.0);
                row[static_cast<size_t>(x) * 3 + static_cast<size_t>(c)] =
                    static_cast<unsigned char>(v * 255.0 + 0.5);
            }
        }
        out.write(reinterpret_cast<const char*>(row.data()),
                  static_cast<std::streamsize>(row.size()));
    }
    if (!out) {
        throw IoError("short write: " + path);
    }
}

uint64_t file_checksum(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open for reading: " + path);
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string bytes = ss.str();
    return fnv1a(bytes.data(), bytes.size());
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open for reading: " + path);
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot open for writing: " + path);
    }
    out << content;
    if (!out) {
        throw IoError("short write: " + path);
    }
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace motok
