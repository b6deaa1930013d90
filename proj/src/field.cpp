#include "meshref/field.hpp"

#include "meshref/rng.hpp"

namespace meshref {

FieldConfig FieldConfig::none() {
  FieldConfig c;
  c.mode = FieldMode::none;
  return c;
}
FieldConfig FieldConfig::global_affine() {
  FieldConfig c;
  c.mode = FieldMode::global_affine;
  return c;
}
FieldConfig FieldConfig::mlp_s() { return {}; }
FieldConfig FieldConfig::mlp_m() {
  FieldConfig c;
  c.hidden_width = 32;
  return c;
}
FieldConfig FieldConfig::mlp_xl() {
  FieldConfig c;
  c.hidden_layers = 4;
  c.hidden_width = 128;
  c.degree_uv = 6;
  c.degree_z = 16;
  return c;
}

void FieldConfig::validate() const {
  if (mode != FieldMode::mlp) return;
  if (hidden_layers < 1 || hidden_width < 1 || degree_uv < 0 || degree_z < 0 ||
      !(init_sigma > 0.0))
    throw ValidationError("field config: invalid mlp configuration");
}

size_t FieldParams::flat_size() const {
  if (weights.empty()) return 2;  // (o, s)
  size_t n = 0;
  for (size_t i = 0; i < weights.size(); ++i) n += weights[i].size() + biases[i].size();
  return n;
}

void FieldParams::to_flat(std::vector<double>& out) const {
  out.clear();
  out.reserve(flat_size());
  if (weights.empty()) {
    out.push_back(affine_offset);
    out.push_back(affine_scale);
    return;
  }
  for (size_t i = 0; i < weights.size(); ++i) {
    out.insert(out.end(), weights[i].data(), weights[i].data() + weights[i].size());
    out.insert(out.end(), biases[i].data(), biases[i].data() + biases[i].size());
  }
}

void FieldParams::from_flat(std::span<const double> in) {
  if (in.size() != flat_size()) throw ValidationError("field params: flat size mismatch");
  if (weights.empty()) {
    affine_offset = in[0];
    affine_scale = in[1];
    return;
  }
  size_t pos = 0;
  for (size_t i = 0; i < weights.size(); ++i) {
    std::copy(in.begin() + pos, in.begin() + pos + weights[i].size(), weights[i].data());
    pos += weights[i].size();
    std::copy(in.begin() + pos, in.begin() + pos + biases[i].size(), biases[i].data());
    pos += biases[i].size();
  }
}

FieldParams field_init(const FieldConfig& config, uint64_t seed) {
  config.validate();
  FieldParams p;
  if (config.mode != FieldMode::mlp) return p;  // affine starts at (0, 0); none is empty
  Rng rng(Rng::splitmix(seed ^ 0x6d6c7066ull));
  const auto layer = [&](int out_dim, int in_dim) {
    Eigen::MatrixXd w(out_dim, in_dim);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal(0.0, config.init_sigma);
    Eigen::VectorXd b(out_dim);
    for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = rng.normal(0.0, config.init_sigma);
    p.weights.push_back(std::move(w));
    p.biases.push_back(std::move(b));
  };
  layer(config.hidden_width, config.input_dim());
  for (int i = 1; i < config.hidden_layers; ++i) layer(config.hidden_width, config.hidden_width);
  layer(2, config.hidden_width);
  return p;
}

void positional_encode(double x, int degree, double* out) {
  out[0] = x;
  double freq = M_PI;
  for (int i = 0; i < degree; ++i) {
    out[1 + 2 * i] = std::sin(freq * x);
    out[2 + 2 * i] = std::cos(freq * x);
    freq *= 2.0;
  }
}

FieldEval field_eval(const FieldParams& params, const FieldConfig& config,
                     std::span<const double> u_ndc, std::span<const double> v_ndc,
                     std::span<const double> z_norm) {
  const int n = static_cast<int>(u_ndc.size());
  if (v_ndc.size() != u_ndc.size() || z_norm.size() != u_ndc.size())
    throw ValidationError("field_eval: input size mismatch");
  FieldEval ev;
  ev.count = n;
  ev.offset = Eigen::VectorXd::Zero(n);
  ev.scale = Eigen::VectorXd::Zero(n);
  if (config.mode == FieldMode::none) return ev;
  if (config.mode == FieldMode::global_affine) {
    ev.offset.setConstant(params.affine_offset);
    ev.scale.setConstant(params.affine_scale);
    return ev;
  }

  const int dim_uv = 2 * config.degree_uv + 1;
  const int dim_z = 2 * config.degree_z + 1;
  const int in_dim = config.input_dim();
  if (params.weights.empty() || params.weights.front().cols() != in_dim)
    throw ValidationError("field_eval: parameter shapes do not match configuration");

  ev.input.resize(in_dim, n);
  std::vector<double> buf(static_cast<size_t>(std::max(dim_uv, dim_z)));
  for (int i = 0; i < n; ++i) {
    positional_encode(u_ndc[i], config.degree_uv, buf.data());
    for (int k = 0; k < dim_uv; ++k) ev.input(k, i) = buf[k];
    positional_encode(v_ndc[i], config.degree_uv, buf.data());
    for (int k = 0; k < dim_uv; ++k) ev.input(dim_uv + k, i) = buf[k];
    positional_encode(z_norm[i], config.degree_z, buf.data());
    for (int k = 0; k < dim_z; ++k) ev.input(2 * dim_uv + k, i) = buf[k];
  }

  Eigen::MatrixXd act = ev.input;
  const size_t layers = params.weights.size();
  for (size_t l = 0; l + 1 < layers; ++l) {
    Eigen::MatrixXd z = (params.weights[l] * act).colwise() + params.biases[l];
    ev.pre_act.push_back(z);
    act = z.cwiseMax(0.0);
  }
  const Eigen::MatrixXd head = (params.weights.back() * act).colwise() + params.biases.back();
  ev.offset = head.row(0).transpose();
  ev.scale = head.row(1).transpose();
  return ev;
}

FieldGrads field_backward(const FieldParams& params, const FieldConfig& config,
                          const FieldEval& eval, std::span<const double> cot_offset,
                          std::span<const double> cot_scale,
                          std::span<const double> u_ndc, std::span<const double> v_ndc,
                          std::span<const double> z_norm, bool want_input_grads) {
  const int n = eval.count;
  if (static_cast<int>(cot_offset.size()) != n || static_cast<int>(cot_scale.size()) != n)
    throw ValidationError("field_backward: cotangent size mismatch");
  FieldGrads g;
  if (want_input_grads) {
    g.d_u.assign(n, 0.0);
    g.d_v.assign(n, 0.0);
    g.d_z.assign(n, 0.0);
  }
  if (config.mode == FieldMode::none) return g;
  if (config.mode == FieldMode::global_affine) {
    for (int i = 0; i < n; ++i) {
      g.params.affine_offset += cot_offset[i];
      g.params.affine_scale += cot_scale[i];
    }
    return g;
  }

  const size_t layers = params.weights.size();
  g.params.weights.resize(layers);
  g.params.biases.resize(layers);
  for (size_t l = 0; l < layers; ++l) {
    g.params.weights[l] = Eigen::MatrixXd::Zero(params.weights[l].rows(), params.weights[l].cols());
    g.params.biases[l] = Eigen::VectorXd::Zero(params.biases[l].size());
  }

  // recompute post-activations from the tape
  std::vector<Eigen::MatrixXd> acts;  // acts[0] = input, acts[l+1] = relu(pre_act[l])
  acts.push_back(eval.input);
  for (const auto& z : eval.pre_act) acts.push_back(z.cwiseMax(0.0));

  Eigen::MatrixXd grad_out(2, n);
  for (int i = 0; i < n; ++i) {
    grad_out(0, i) = cot_offset[i];
    grad_out(1, i) = cot_scale[i];
  }

  Eigen::MatrixXd delta = grad_out;
  for (size_t l = layers; l-- > 0;) {
    g.params.weights[l] += delta * acts[l].transpose();
    g.params.biases[l] += delta.rowwise().sum();
    if (l == 0) {
      delta = params.weights[0].transpose() * delta;
      break;
    }
    Eigen::MatrixXd back = params.weights[l].transpose() * delta;
    delta = back.cwiseProduct(
        (eval.pre_act[l - 1].array() > 0.0).cast<double>().matrix());
  }

  if (want_input_grads) {
    // delta is now in x N: chain through the positional encoding
    const int dim_uv = 2 * config.degree_uv + 1;
    const auto encode_grad = [&](double x, int degree, int base, int sample) {
      double acc = delta(base, sample);
      double freq = M_PI;
      for (int d = 0; d < degree; ++d) {
        acc += delta(base + 1 + 2 * d, sample) * freq * std::cos(freq * x);
        acc -= delta(base + 2 + 2 * d, sample) * freq * std::sin(freq * x);
        freq *= 2.0;
      }
      return acc;
    };
    for (int i = 0; i < n; ++i) {
      g.d_u[i] = encode_grad(u_ndc[i], config.degree_uv, 0, i);
      g.d_v[i] = encode_grad(v_ndc[i], config.degree_uv, dim_uv, i);
      g.d_z[i] = encode_grad(z_norm[i], config.degree_z, 2 * dim_uv, i);
    }
  }
  return g;
}

}  // namespace meshref
