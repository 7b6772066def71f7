// SPDX-License-Identifier: Apache-2.0
#include "motok/camera.hpp"

#include <cmath>
#include <cstdlib>
#include <sstream>

#include "motok/ten_io.hpp"

namespace motok {

Vec3 mat3_apply(const Mat3& m, const Vec3& v) {
    return {m[0] * v[0] + m[1] * v[1] + m[2] * v[2],
            m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
            m[6] * v[0] + m[7] * v[1] + m[8] * v[2]};
}

Mat3 mat3_mul(const Mat3& a, const Mat3& b) {
    Mat3 out{};
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            double acc = 0.0;
            for (int k = 0; k < 3; ++k) {
                acc += a[i * 3 + k] * b[k * 3 + j];
            }
            out[i * 3 + j] = acc;
        }
    }
    return out;
}

Mat3 mat3_transpose(const Mat3& m) {
    return {m[0], m[3], m[6], m[1], m[4], m[7], m[2], m[5], m[8]};
}

double mat3_det(const Mat3& m) {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
}

Mat3 mat3_identity() {
    return {1, 0, 0, 0, 1, 0, 0, 0, 1};
}

Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

double vec3_norm(const Vec3& v) {
    return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
}

double vec3_dot(const Vec3& a, const Vec3& b) {
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

Mat3 rot_axis_angle(const Vec3& axis, double radians) {
    const double n = vec3_norm(axis);
    if (n < 1e-15) {
        throw DomainError("rot_axis_angle: zero axis");
    }
    const double x = axis[0] / n, y = axis[1] / n, z = axis[2] / n;
    const double c = std::cos(radians), s = std::sin(radians), ic = 1.0 - c;
    return {c + x * x * ic,     x * y * ic - z * s, x * z * ic + y * s,
            y * x * ic + z * s, c + y * y * ic,     y * z * ic - x * s,
            z * x * ic - y * s, z * y * ic + x * s, c + z * z * ic};
}

Vec3 Intrinsics::unproject(double u, double v) const {
    return {(u - cx) / fx, (v - cy) / fy, 1.0};
}

void Intrinsics::validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) {
        throw ValidationError("intrinsics: focal lengths must be positive (fx=" +
                              format_double(fx) + ", fy=" + format_double(fy) + ")");
    }
}

double Extrinsics::orthonormality_error() const {
    const Mat3 rtr = mat3_mul(mat3_transpose(rotation), rotation);
    double err = 0.0;
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            const double target = i == j ? 1.0 : 0.0;
            err = std::max(err, std::fabs(rtr[i * 3 + j] - target));
        }
    }
    err = std::max(err, std::fabs(mat3_det(rotation) - 1.0));
    return err;
}

void Extrinsics::validate(double tol) const {
    const double err = orthonormality_error();
    if (err > tol) {
        throw ValidationError("extrinsics: rotation not orthonormal (error " +
                              format_double(err) + ")");
    }
}

Extrinsics Extrinsics::reorthonormalized() const {
    if (mat3_det(rotation) <= 0.0) {
        throw ValidationError("extrinsics: rotation has non-positive determinant");
    }
    // Gram-Schmidt on rows.
    Vec3 r0{rotation[0], rotation[1], rotation[2]};
    Vec3 r1{rotation[3], rotation[4], rotation[5]};
    const double n0 = vec3_norm(r0);
    for (auto& v : r0) {
        v /= n0;
    }
    const double d01 = vec3_dot(r0, r1);
    for (int i = 0; i < 3; ++i) {
        r1[i] -= d01 * r0[i];
    }
    const double n1 = vec3_norm(r1);
    for (auto& v : r1) {
        v /= n1;
    }
    const Vec3 r2 = cross(r0, r1);
    Extrinsics out;
    out.rotation = {r0[0], r0[1], r0[2], r1[0], r1[1], r1[2], r2[0], r2[1], r2[2]};
    out.translation = translation;
    return out;
}

Extrinsics relative_pose(const Extrinsics& a, const Extrinsics& b) {
    const Mat3 rel_r = mat3_mul(b.rotation, mat3_transpose(a.rotation));
    const Vec3 ra = mat3_apply(rel_r, a.translation);
    Extrinsics out;
    out.rotation = rel_r;
    out.translation = {b.translation[0] - ra[0], b.translation[1] - ra[1],
                       b.translation[2] - ra[2]};
    return out;
}

Extrinsics compose(const Extrinsics& first, const Extrinsics& second) {
    Extrinsics out;
    out.rotation = mat3_mul(second.rotation, first.rotation);
    const Vec3 st = mat3_apply(second.rotation, first.translation);
    out.translation = {st[0] + second.translation[0], st[1] + second.translation[1],
                       st[2] + second.translation[2]};
    return out;
}

CameraTrajectory CameraTrajectory::with_pixel_intrinsics(int64_t width, int64_t height) const {
    if (!normalized) {
        return *this;
    }
    CameraTrajectory out = *this;
    out.normalized = false;
    for (auto& f : out.frames) {
        f.intrinsics = f.intrinsics.scaled(static_cast<double>(width),
                                           static_cast<double>(height));
    }
    return out;
}

void CameraTrajectory::validate() const {
    if (frames.empty()) {
        throw ValidationError("trajectory: at least one frame required");
    }
    for (const auto& f : frames) {
        f.intrinsics.validate();
        f.extrinsics.validate();
    }
}

RayConvention ray_convention_from_string(const std::string& s) {
    if (s == "paper") {
        return RayConvention::paper;
    }
    if (s == "classic") {
        return RayConvention::classic;
    }
    throw ConfigError("unknown ray_convention '" + s + "' (expected paper|classic)");
}

std::array<double, 6> pixel_ray(double u, double v, const Intrinsics& intr,
                                const Extrinsics& extr, RayConvention conv) {
    Vec3 d = mat3_apply(extr.rotation, intr.unproject(u, v));
    if (conv == RayConvention::paper) {
        d[0] += extr.translation[0];
        d[1] += extr.translation[1];
        d[2] += extr.translation[2];
    }
    const double n = vec3_norm(d);
    if (n < 1e-12) {
        throw DomainError("pixel_ray: degenerate ray at (" + format_double(u) + ", " +
                          format_double(v) + ")");
    }
    const Vec3 m = cross(extr.translation, d);
    return {d[0] / n, d[1] / n, d[2] / n, m[0] / n, m[1] / n, m[2] / n};
}

Tensor plucker_map(const CameraTrajectory& traj, int64_t height, int64_t width,
                   RayConvention conv) {
    if (height < 1 || width < 1) {
        throw DimError("plucker_map: target size must be positive");
    }
    const int64_t t = traj.length();
    Tensor out = Tensor::zeros({6, t, height, width});
    auto data = out.mutable_data();
    const int64_t frame_px = height * width;
    for (int64_t f = 0; f < t; ++f) {
        const auto& fr = traj.frames[static_cast<size_t>(f)];
        const Intrinsics k = traj.normalized
                                 ? fr.intrinsics.scaled(static_cast<double>(width),
                                                        static_cast<double>(height))
                                 : fr.intrinsics;
        for (int64_t y = 0; y < height; ++y) {
            for (int64_t x = 0; x < width; ++x) {
                std::array<double, 6> ray;
                try {
                    ray = pixel_ray(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5,
                                    k, fr.extrinsics, conv);
                } catch (const DomainError&) {
                    throw DomainError("plucker_map: degenerate ray at frame " +
                                      std::to_string(f) + " pixel (" + std::to_string(x) + "," +
                                      std::to_string(y) + ")");
                }
                for (int64_t ch = 0; ch < 6; ++ch) {
                    data[((ch * t + f) * height + y) * width + x] = ray[static_cast<size_t>(ch)];
                }
            }
        }
    }
    return out;
}

namespace {

std::vector<std::string> split_ws(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream ss(line);
    std::string tok;
    while (ss >> tok) {
        out.push_back(tok);
    }
    return out;
}

double parse_num(const std::string& tok, int line_no) {
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0') {
        throw ParseError("trajectory line " + std::to_string(line_no) + ": bad number '" + tok +
                         "'");
    }
    return v;
}

}  // namespace

ParsedTrajectory parse_trajectory_file(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    ParsedTrajectory out;
    bool have_id = false;
    while (std::getline(in, line)) {
        ++line_no;
        const auto toks = split_ws(line);
        if (toks.empty()) {
            continue;
        }
        if (!have_id) {
            out.video_id = toks[0];
            have_id = true;
            continue;
        }
        if (toks.size() != 19) {
            throw ParseError("trajectory line " + std::to_string(line_no) + ": expected 19 " +
                             "fields, got " + std::to_string(toks.size()));
        }
        CameraFrame frame;
        frame.timestamp = parse_num(toks[0], line_no);
        frame.intrinsics.fx = parse_num(toks[1], line_no);
        frame.intrinsics.fy = parse_num(toks[2], line_no);
        frame.intrinsics.cx = parse_num(toks[3], line_no);
        frame.intrinsics.cy = parse_num(toks[4], line_no);
        // toks[5], toks[6] are reserved zeros in this layout; values ignored.
        double rt[12];
        for (int i = 0; i < 12; ++i) {
            rt[i] = parse_num(toks[static_cast<size_t>(7 + i)], line_no);
        }
        frame.extrinsics.rotation = {rt[0], rt[1], rt[2], rt[4], rt[5],
                                     rt[6], rt[8], rt[9], rt[10]};
        frame.extrinsics.translation = {rt[3], rt[7], rt[11]};
        frame.intrinsics.validate();
        const double err = frame.extrinsics.orthonormality_error();
        if (err > 1e-4) {
            throw ValidationError("trajectory line " + std::to_string(line_no) +
                                  ": rotation not orthonormal (error " + format_double(err) +
                                  ")");
        }
        if (err > 1e-12) {
            frame.extrinsics = frame.extrinsics.reorthonormalized();
        }
        out.trajectory.frames.push_back(frame);
    }
    if (!have_id) {
        throw ParseError("trajectory file: missing video id line");
    }
    if (out.trajectory.frames.empty()) {
        throw ParseError("trajectory file: no frames");
    }
    out.trajectory.normalized = true;
    return out;
}

std::string serialize_trajectory(const std::string& video_id, const CameraTrajectory& traj) {
    std::string out = video_id + "\n";
    for (const auto& f : traj.frames) {
        const Mat3& r = f.extrinsics.rotation;
        const Vec3& t = f.extrinsics.translation;
        out += format_double(f.timestamp);
        const double intr[4] = {f.intrinsics.fx, f.intrinsics.fy, f.intrinsics.cx,
                                f.intrinsics.cy};
        for (double v : intr) {
            out += " " + format_double(v);
        }
        out += " 0 0";
        for (int row = 0; row < 3; ++row) {
            for (int col = 0; col < 3; ++col) {
                out += " " + format_double(r[row * 3 + col]);
            }
            out += " " + format_double(t[static_cast<size_t>(row)]);
        }
        out += "\n";
    }
    return out;
}

}  // namespace motok
