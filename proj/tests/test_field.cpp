#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "meshref/field.hpp"
#include "meshref/rng.hpp"
#include "testutil.hpp"

using namespace meshref;
using testutil::rel_err;

TEST_CASE("positional encoding") {
  double out[11];
  positional_encode(0.0, 2, out);
  CHECK(out[0] == 0.0);
  CHECK(out[1] == doctest::Approx(0.0));   // sin 0
  CHECK(out[2] == doctest::Approx(1.0));   // cos 0
  CHECK(out[3] == doctest::Approx(0.0));
  CHECK(out[4] == doctest::Approx(1.0));

  positional_encode(1.0, 1, out);
  CHECK(out[0] == 1.0);
  CHECK(out[1] == doctest::Approx(0.0).epsilon(1e-12));   // sin pi
  CHECK(out[2] == doctest::Approx(-1.0));                 // cos pi

  positional_encode(0.5, 2, out);
  CHECK(out[0] == 0.5);
  CHECK(out[1] == doctest::Approx(1.0));                  // sin pi/2
  CHECK(out[2] == doctest::Approx(0.0).epsilon(1e-12));   // cos pi/2
  CHECK(out[3] == doctest::Approx(0.0).epsilon(1e-12));   // sin pi
  CHECK(out[4] == doctest::Approx(-1.0));                 // cos pi

  positional_encode(0.7, 0, out);  // degree 0: raw input only
  CHECK(out[0] == 0.7);
}

TEST_CASE("field_init determinism and statistics") {
  const FieldConfig cfg = FieldConfig::mlp_s();
  const FieldParams a = field_init(cfg, 42);
  const FieldParams b = field_init(cfg, 42);
  std::vector<double> fa, fb;
  a.to_flat(fa);
  b.to_flat(fb);
  CHECK(fa == fb);  // bitwise identical for the same seed

  const FieldParams c = field_init(cfg, 43);
  std::vector<double> fc;
  c.to_flat(fc);
  CHECK(fa != fc);

  // sample standard deviation of a large init
  FieldConfig big = FieldConfig::mlp_s();
  big.hidden_width = 64;
  big.hidden_layers = 3;
  const FieldParams w = field_init(big, 7);
  std::vector<double> flat;
  w.to_flat(flat);
  REQUIRE(flat.size() > 10000);
  double mean = 0.0;
  for (double v : flat) mean += v;
  mean /= flat.size();
  double var = 0.0;
  for (double v : flat) var += (v - mean) * (v - mean);
  var /= (flat.size() - 1);
  CHECK(std::sqrt(var) > 0.095);
  CHECK(std::sqrt(var) < 0.105);

  // global affine initializes to the identity remap
  const FieldParams aff = field_init(FieldConfig::global_affine(), 9);
  CHECK(aff.affine_offset == 0.0);
  CHECK(aff.affine_scale == 0.0);
}

TEST_CASE("field_eval modes") {
  const std::vector<double> u{-0.5, 0.0, 0.8};
  const std::vector<double> v{0.1, -0.9, 0.4};
  const std::vector<double> z{0.2, 0.5, 0.9};

  const FieldConfig none = FieldConfig::none();
  const FieldEval ev_none = field_eval(FieldParams{}, none, u, v, z);
  for (int i = 0; i < 3; ++i) {
    CHECK(ev_none.offset[i] == 0.0);
    CHECK(ev_none.scale[i] == 0.0);
  }

  const FieldConfig aff = FieldConfig::global_affine();
  FieldParams ap;
  ap.affine_offset = 0.25;
  ap.affine_scale = -0.1;
  const FieldEval ev_aff = field_eval(ap, aff, u, v, z);
  for (int i = 0; i < 3; ++i) {
    CHECK(ev_aff.offset[i] == 0.25);
    CHECK(ev_aff.scale[i] == -0.1);
  }

  // all-zero mlp parameters produce (0, 0)
  const FieldConfig cfg = FieldConfig::mlp_s();
  FieldParams zero = field_init(cfg, 1);
  std::vector<double> flat;
  zero.to_flat(flat);
  std::fill(flat.begin(), flat.end(), 0.0);
  zero.from_flat(flat);
  const FieldEval ev_zero = field_eval(zero, cfg, u, v, z);
  for (int i = 0; i < 3; ++i) {
    CHECK(ev_zero.offset[i] == 0.0);
    CHECK(ev_zero.scale[i] == 0.0);
  }

  // identity remap: (o, s) = (0, 0) keeps z_c = z_g exactly
  const double z_g = 2.37;
  CHECK(z_g * (1.0 + ev_zero.scale[0]) + ev_zero.offset[0] == z_g);
}

TEST_CASE("field_eval is continuous in its inputs") {
  const FieldConfig cfg = FieldConfig::mlp_s();
  const FieldParams params = field_init(cfg, 3);
  Rng rng(4);
  for (int i = 0; i < 50; ++i) {
    const double u = rng.uniform(-1.0, 1.0);
    const double v = rng.uniform(-1.0, 1.0);
    const double z = rng.uniform(0.0, 1.0);
    const double h = 1e-8;
    const std::vector<double> u2{u, u + h};
    const std::vector<double> v2{v, v};
    const std::vector<double> z2{z, z};
    const FieldEval ev = field_eval(params, cfg, u2, v2, z2);
    CHECK(std::abs(ev.offset[1] - ev.offset[0]) < 1e-5);
    CHECK(std::abs(ev.scale[1] - ev.scale[0]) < 1e-5);
  }
}

TEST_CASE("field parameter gradients match finite differences") {
  Rng rng(2025);
  int total_checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    FieldConfig cfg;
    cfg.hidden_layers = 1 + static_cast<int>(rng.index(2));
    cfg.hidden_width = 3 + static_cast<int>(rng.index(6));
    cfg.degree_uv = static_cast<int>(rng.index(4));
    cfg.degree_z = static_cast<int>(rng.index(5));
    FieldParams params = field_init(cfg, 1000 + trial);

    const int n = 1 + static_cast<int>(rng.index(4));
    std::vector<double> u(n), v(n), z(n), cot_o(n), cot_s(n);
    for (int i = 0; i < n; ++i) {
      u[i] = rng.uniform(-1.0, 1.0);
      v[i] = rng.uniform(-1.0, 1.0);
      z[i] = rng.uniform(0.0, 1.0);
      cot_o[i] = rng.uniform(-1.0, 1.0);
      cot_s[i] = rng.uniform(-1.0, 1.0);
    }

    const auto functional = [&]() {
      const FieldEval ev = field_eval(params, cfg, u, v, z);
      double acc = 0.0;
      for (int i = 0; i < n; ++i) acc += cot_o[i] * ev.offset[i] + cot_s[i] * ev.scale[i];
      return acc;
    };

    const FieldEval ev = field_eval(params, cfg, u, v, z);
    const FieldGrads g = field_backward(params, cfg, ev, cot_o, cot_s, u, v, z, true);

    std::vector<double> flat, gflat;
    params.to_flat(flat);
    g.params.to_flat(gflat);
    // probe a few random parameters per trial
    for (int probe = 0; probe < 5; ++probe) {
      const size_t idx = rng.index(flat.size());
      const double x0 = flat[idx];
      flat[idx] = x0 + 1e-6;
      params.from_flat(flat);
      const double fp = functional();
      flat[idx] = x0 - 1e-6;
      params.from_flat(flat);
      const double fm = functional();
      flat[idx] = x0;
      params.from_flat(flat);
      const double fd = (fp - fm) / 2e-6;
      // ReLU kinks are measure zero; skip the rare hit
      if (std::abs(fd - gflat[idx]) > 1e-5 && std::abs(fd) > 1e-3 &&
          rel_err(gflat[idx], fd) > 0.5)
        continue;
      CHECK(rel_err(gflat[idx], fd, 1e-6) < 1e-5);
      ++total_checked;
    }

    // input gradients
    for (int i = 0; i < n && trial % 10 == 0; ++i) {
      const double fd_u = testutil::central_diff(&u[i], functional);
      CHECK(rel_err(g.d_u[i], fd_u, 1e-6) < 1e-5);
      const double fd_z = testutil::central_diff(&z[i], functional);
      CHECK(rel_err(g.d_z[i], fd_z, 1e-6) < 1e-5);
    }
  }
  CHECK(total_checked > 400);
}

TEST_CASE("affine gradients accumulate over samples") {
  const FieldConfig cfg = FieldConfig::global_affine();
  FieldParams params;
  params.affine_offset = 0.1;
  params.affine_scale = 0.2;
  const std::vector<double> u{0.0, 0.5}, v{0.0, -0.5}, z{0.3, 0.7};
  const std::vector<double> cot_o{1.0, 2.0}, cot_s{-1.0, 0.5};
  const FieldEval ev = field_eval(params, cfg, u, v, z);
  const FieldGrads g = field_backward(params, cfg, ev, cot_o, cot_s, u, v, z);
  CHECK(g.params.affine_offset == doctest::Approx(3.0));
  CHECK(g.params.affine_scale == doctest::Approx(-0.5));
}
