// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <string>
#include <vector>

#include "motok/tensor.hpp"

namespace motok {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<double, 9>;  // row-major

Vec3 mat3_apply(const Mat3& m, const Vec3& v);
Mat3 mat3_mul(const Mat3& a, const Mat3& b);
Mat3 mat3_transpose(const Mat3& m);
double mat3_det(const Mat3& m);
Mat3 mat3_identity();
Vec3 cross(const Vec3& a, const Vec3& b);
double vec3_norm(const Vec3& v);
double vec3_dot(const Vec3& a, const Vec3& b);
Mat3 rot_axis_angle(const Vec3& axis, double radians);

// Pinhole intrinsics. Values are either pixels or fractions of the image
// size; CameraTrajectory::normalized says which.
struct Intrinsics {
    double fx = 1.0, fy = 1.0;
    double cx = 0.0, cy = 0.0;

    Intrinsics scaled(double w, double h) const {
        return {fx * w, fy * h, cx * w, cy * h};
    }
    // K^-1 [u, v, 1]^T
    Vec3 unproject(double u, double v) const;
    void validate() const;  // fx, fy > 0
};

// World-to-camera pose: x_cam = R x_world + t.
struct Extrinsics {
    Mat3 rotation = mat3_identity();
    Vec3 translation{0.0, 0.0, 0.0};

    // max |R^T R - I| over entries, plus |det - 1| folded in.
    double orthonormality_error() const;
    void validate(double tol = 1e-9) const;
    // Gram-Schmidt on rows; requires det > 0.
    Extrinsics reorthonormalized() const;
};

// relative_pose(a, b): pose of frame b expressed in frame a's coordinates.
Extrinsics relative_pose(const Extrinsics& a, const Extrinsics& b);
// compose(first, second): apply `first`, then `second`.
Extrinsics compose(const Extrinsics& first, const Extrinsics& second);

struct CameraFrame {
    double timestamp = 0.0;
    Intrinsics intrinsics;
    Extrinsics extrinsics;
};

struct CameraTrajectory {
    std::vector<CameraFrame> frames;
    bool normalized = true;  // intrinsics are fractions of W/H

    int64_t length() const { return static_cast<int64_t>(frames.size()); }
    CameraTrajectory with_pixel_intrinsics(int64_t width, int64_t height) const;
    void validate() const;
};

enum class RayConvention {
    paper,    // d = R K^-1 [u,v,1]^T + t
    classic,  // d = R K^-1 [u,v,1]^T
};

RayConvention ray_convention_from_string(const std::string& s);

// Ray through pixel (u, v): returns (d_hat, t x d / ||d||). No sub-pixel
// offset is applied here; callers sampling an image pass pixel centers.
std::array<double, 6> pixel_ray(double u, double v, const Intrinsics& intr,
                                const Extrinsics& extr,
                                RayConvention conv = RayConvention::paper);

// [6,T,H,W] ray-embedding raster sampled at pixel centers (u+0.5, v+0.5).
// Channels 0-2 hold the unit direction, channels 3-5 the moment.
Tensor plucker_map(const CameraTrajectory& traj, int64_t height, int64_t width,
                   RayConvention conv = RayConvention::paper);

struct ParsedTrajectory {
    std::string video_id;
    CameraTrajectory trajectory;  // normalized intrinsics
};

// Line 1: video id. Each further line: timestamp, fx fy cx cy (normalized),
// two zeros, then the 12 row-major entries of [R|t]. Rotations within 1e-4
// of orthonormal are re-orthonormalized; anything worse is rejected.
ParsedTrajectory parse_trajectory_file(const std::string& text);
std::string serialize_trajectory(const std::string& video_id, const CameraTrajectory& traj);

}  // namespace motok
