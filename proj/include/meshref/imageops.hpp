#pragma once

#include "meshref/core.hpp"

namespace meshref {

// Differentiable image-space primitives. Every forward operation has a
// matching adjoint that recomputes its internals from the forward inputs, so
// the pair can be chained without shared state.

// Sobel-magnitude edge image: E = clamp(1 - g/tau, -1, 1) with g the
// magnitude of the 3x3 horizontal/vertical responses, replicate padding.
// Pixels that are invalid or adjacent (8-neighborhood) to an invalid pixel
// are set to -1 and carry no gradient.
EdgeImage sobel_edge_image(const ScalarImage& img, const std::vector<uint8_t>& valid,
                           double tau);

// Adjoint of sobel_edge_image: cotangent on E -> cotangent on the input.
ScalarImage sobel_edge_backward(const ScalarImage& img, const std::vector<uint8_t>& valid,
                                double tau, const ScalarImage& cot_edge);

// 5x5 Gaussian blur (sigma = 1, kernel normalized to sum 1), replicate
// padding; invalid pixels are excluded with per-pixel weight renormalization.
// Output at invalid pixels is 0.
ScalarImage gaussian_blur5(const ScalarImage& img, const std::vector<uint8_t>& valid);

// Adjoint of gaussian_blur5.
ScalarImage gaussian_blur5_adjoint(const std::vector<uint8_t>& valid,
                                   const ScalarImage& cot_out);

// Forward differences; last column (resp. row) is 0.
void spatial_gradients(const ScalarImage& img, ScalarImage& grad_u, ScalarImage& grad_v);

// Adjoint of spatial_gradients.
ScalarImage spatial_gradients_adjoint(const ScalarImage& cot_u, const ScalarImage& cot_v);

// (D - min) / (max - min) over valid pixels; min/max are constants of the
// evaluation (no gradient through them). Constant input yields all-0.5 and
// sets `degenerate`.
struct Normalize01Result {
  ScalarImage image;   // zeros at invalid pixels
  double min = 0.0;
  double max = 0.0;
  bool degenerate = false;

  double scale() const { return degenerate ? 0.0 : 1.0 / (max - min); }
};
Normalize01Result normalize01(const ScalarImage& img, const std::vector<uint8_t>& valid);
Normalize01Result normalize01(const DepthMap& depth);

// Bilinear interpolation on the pixel-center grid: integer coordinates hit
// pixel values exactly; coordinates are clamped to [0, W-1] x [0, H-1].
struct BilinearTaps {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  double w00 = 0, w10 = 0, w01 = 0, w11 = 0;  // weights for (x0,y0),(x1,y0),(x0,y1),(x1,y1)
  double fx = 0, fy = 0;                      // in-cell fractions
  bool clamped_x = false, clamped_y = false;
};
BilinearTaps bilinear_taps(int width, int height, double x, double y);

double bilinear_sample(const ScalarImage& img, double x, double y);

// Value plus partials with respect to the sample coordinates. Clamped
// coordinates have zero coordinate gradient.
struct BilinearSample {
  double value = 0.0;
  double dx = 0.0;
  double dy = 0.0;
  BilinearTaps taps;
};
BilinearSample bilinear_sample_grad(const ScalarImage& img, double x, double y);

Eigen::Vector3d bilinear_sample_color(const ColorImage& img, double x, double y);

// Validity-renormalized bilinear sample; fails when all taps are invalid.
struct MaskedSample {
  double value = 0.0;
  bool ok = false;
  BilinearTaps taps;      // tap weights after renormalization
};
MaskedSample bilinear_sample_masked(const ScalarImage& img, const std::vector<uint8_t>& valid,
                                    double x, double y);

}  // namespace meshref
