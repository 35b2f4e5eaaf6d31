#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "iglab/kernels.hpp"
#include "iglab/rng.hpp"

using namespace iglab;
namespace kn = iglab::kernels;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

}  // namespace

TEST_CASE("scalar backend is always supported") {
  CHECK(kn::backend_supported(kn::Backend::scalar));
}

TEST_CASE("elementwise kernels agree bitwise across backends") {
  if (!kn::backend_supported(kn::Backend::avx2)) return;
  const auto& scalar = kn::table_for(kn::Backend::scalar);
  const auto& avx2 = kn::table_for(kn::Backend::avx2);

  Rng rng(7);
  for (const std::size_t n : {1u, 3u, 4u, 7u, 16u, 65u, 1000u}) {
    const std::vector<double> a = random_vec(rng, n);
    const std::vector<double> b = random_vec(rng, n);
    std::vector<double> out_s(n), out_v(n);

    scalar.add(out_s.data(), a.data(), b.data(), n);
    avx2.add(out_v.data(), a.data(), b.data(), n);
    CHECK(out_s == out_v);

    scalar.sub(out_s.data(), a.data(), b.data(), n);
    avx2.sub(out_v.data(), a.data(), b.data(), n);
    CHECK(out_s == out_v);

    scalar.mul(out_s.data(), a.data(), b.data(), n);
    avx2.mul(out_v.data(), a.data(), b.data(), n);
    CHECK(out_s == out_v);

    scalar.scale(out_s.data(), a.data(), 0.37, n);
    avx2.scale(out_v.data(), a.data(), 0.37, n);
    CHECK(out_s == out_v);

    out_s = b;
    out_v = b;
    scalar.axpy(out_s.data(), -1.25, a.data(), n);
    avx2.axpy(out_v.data(), -1.25, a.data(), n);
    CHECK(out_s == out_v);

    CHECK(scalar.max_value(a.data(), n) == avx2.max_value(a.data(), n));
  }
}

TEST_CASE("reduction kernels agree across backends to rounding") {
  if (!kn::backend_supported(kn::Backend::avx2)) return;
  const auto& scalar = kn::table_for(kn::Backend::scalar);
  const auto& avx2 = kn::table_for(kn::Backend::avx2);

  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.below(400);
    const std::vector<double> a = random_vec(rng, n);
    const std::vector<double> b = random_vec(rng, n);
    CHECK(rel_err(scalar.dot(a.data(), b.data(), n), avx2.dot(a.data(), b.data(), n)) < 1e-12);
    CHECK(rel_err(scalar.sum(a.data(), n), avx2.sum(a.data(), n)) < 1e-12);
  }
}

TEST_CASE("matmul kernels agree across backends to rounding") {
  if (!kn::backend_supported(kn::Backend::avx2)) return;
  const auto& scalar = kn::table_for(kn::Backend::scalar);
  const auto& avx2 = kn::table_for(kn::Backend::avx2);

  Rng rng(13);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t m = 1 + rng.below(17);
    const std::size_t k = 1 + rng.below(17);
    const std::size_t n = 1 + rng.below(17);
    const bool acc = trial % 2 == 0;

    const std::vector<double> seed_c = random_vec(rng, m * n);
    const std::vector<double> seed_ct = random_vec(rng, k * n);

    const std::vector<double> a_mk = random_vec(rng, m * k);
    const std::vector<double> b_kn = random_vec(rng, k * n);
    const std::vector<double> b_nk = random_vec(rng, n * k);
    const std::vector<double> b_mn = random_vec(rng, m * n);

    std::vector<double> c_s = seed_c, c_v = seed_c;
    scalar.matmul_nn(c_s.data(), a_mk.data(), b_kn.data(), m, k, n, acc);
    avx2.matmul_nn(c_v.data(), a_mk.data(), b_kn.data(), m, k, n, acc);
    for (std::size_t i = 0; i < c_s.size(); ++i) CHECK(rel_err(c_s[i], c_v[i]) < 1e-12);

    c_s = seed_c;
    c_v = seed_c;
    scalar.matmul_nt(c_s.data(), a_mk.data(), b_nk.data(), m, k, n, acc);
    avx2.matmul_nt(c_v.data(), a_mk.data(), b_nk.data(), m, k, n, acc);
    for (std::size_t i = 0; i < c_s.size(); ++i) CHECK(rel_err(c_s[i], c_v[i]) < 1e-12);

    c_s = seed_ct;
    c_v = seed_ct;
    scalar.matmul_tn(c_s.data(), a_mk.data(), b_mn.data(), m, k, n, acc);
    avx2.matmul_tn(c_v.data(), a_mk.data(), b_mn.data(), m, k, n, acc);
    for (std::size_t i = 0; i < c_s.size(); ++i) CHECK(rel_err(c_s[i], c_v[i]) < 1e-12);
  }
}

TEST_CASE("matmul matches a plain triple loop") {
  Rng rng(17);
  const std::size_t m = 5, k = 7, n = 3;
  const std::vector<double> a = random_vec(rng, m * k);
  const std::vector<double> b = random_vec(rng, k * n);
  std::vector<double> c(m * n);
  kn::matmul_nn(c.data(), a.data(), b.data(), m, k, n, false);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double want = 0.0;
      for (std::size_t kk = 0; kk < k; ++kk) want += a[i * k + kk] * b[kk * n + j];
      CHECK(rel_err(c[i * n + j], want) < 1e-12);
    }
}

TEST_CASE("force_backend switches dispatch and rejects the unsupported") {
  const kn::Backend before = kn::active_backend();
  kn::force_backend(kn::Backend::scalar);
  CHECK(kn::active_backend() == kn::Backend::scalar);
  kn::reset_backend();
  CHECK(kn::active_backend() == before);
  if (!kn::backend_supported(kn::Backend::avx2))
    CHECK_THROWS_AS(kn::force_backend(kn::Backend::avx2), std::invalid_argument);
}
