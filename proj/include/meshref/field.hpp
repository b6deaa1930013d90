#pragma once

#include "meshref/core.hpp"

#include <span>

namespace meshref {

// Coarse depth remapping: a positional-encoded shallow MLP (or a global
// affine pair) producing a per-sample offset o and scale s so that
// z_out = z_in (1 + s) + o.

enum class FieldMode { none, global_affine, mlp };

struct FieldConfig {
  FieldMode mode = FieldMode::mlp;
  int hidden_layers = 2;
  int hidden_width = 16;
  int degree_uv = 3;   // positional encoding degree for u' and v'
  int degree_z = 5;    // positional encoding degree for normalized depth
  double init_sigma = 0.1;

  static FieldConfig none();
  static FieldConfig global_affine();
  static FieldConfig mlp_s();   // 2 x 16, m=3, k=5 (default)
  static FieldConfig mlp_m();   // 2 x 32, m=3, k=5
  static FieldConfig mlp_xl();  // 4 x 128, m=6, k=16

  int input_dim() const { return 2 * (2 * degree_uv + 1) + (2 * degree_z + 1); }
  void validate() const;
};

struct FieldParams {
  // mlp: weights[i] is (out x in); the last pair is the 2-wide linear head
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
  // global_affine
  double affine_offset = 0.0;
  double affine_scale = 0.0;

  size_t flat_size() const;
  void to_flat(std::vector<double>& out) const;
  void from_flat(std::span<const double> in);
};

// Seeded initialization: mlp weights and biases ~ Normal(0, sigma^2);
// global affine starts at (0, 0).
FieldParams field_init(const FieldConfig& config, uint64_t seed);

// (x, sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^{n-1} pi x), cos(2^{n-1} pi x));
// degree 0 yields (x) alone.
void positional_encode(double x, int degree, double* out);

// Batched evaluation with the saved forward tape.
struct FieldEval {
  Eigen::MatrixXd input;                     // in x N (encoded), mlp only
  std::vector<Eigen::MatrixXd> pre_act;      // hidden pre-activations, mlp only
  Eigen::VectorXd offset;                    // o per sample
  Eigen::VectorXd scale;                     // s per sample
  int count = 0;
};
FieldEval field_eval(const FieldParams& params, const FieldConfig& config,
                     std::span<const double> u_ndc, std::span<const double> v_ndc,
                     std::span<const double> z_norm);

// Parameter (and optionally input) gradients from per-sample cotangents.
struct FieldGrads {
  FieldParams params;  // same shapes as the forward params
  std::vector<double> d_u, d_v, d_z;
};
FieldGrads field_backward(const FieldParams& params, const FieldConfig& config,
                          const FieldEval& eval, std::span<const double> cot_offset,
                          std::span<const double> cot_scale,
                          std::span<const double> u_ndc, std::span<const double> v_ndc,
                          std::span<const double> z_norm, bool want_input_grads = false);

}  // namespace meshref
