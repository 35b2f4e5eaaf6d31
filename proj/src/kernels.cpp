#include "iglab/kernels.hpp"

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <stdexcept>
#include <string>

namespace iglab::kernels {

namespace scalar_impl {

void add(double* dst, const double* a, const double* b, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dst[i] = a[i] + b[i];
}

void sub(double* dst, const double* a, const double* b, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dst[i] = a[i] - b[i];
}

void mul(double* dst, const double* a, const double* b, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dst[i] = a[i] * b[i];
}

void scale(double* dst, const double* a, double c, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dst[i] = a[i] * c;
}

void axpy(double* dst, double c, const double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dst[i] += c * x[i];
}

double dot(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

double sum(const double* a, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i];
  return acc;
}

double max_value(const double* a, std::size_t n) {
  double m = a[0];
  for (std::size_t i = 1; i < n; ++i) m = std::max(m, a[i]);
  return m;
}

void matmul_nn(double* c, const double* a, const double* b,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    if (!accumulate) std::fill(crow, crow + n, 0.0);
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = a[i * k + kk];
      const double* brow = b + kk * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void matmul_nt(double* c, const double* a, const double* b,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double v = dot(arow, b + j * k, k);
      if (accumulate) c[i * n + j] += v; else c[i * n + j] = v;
    }
  }
}

void matmul_tn(double* c, const double* a, const double* b,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(c, c + k * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double* brow = b + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = a[i * k + kk];
      double* crow = c + kk * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace scalar_impl

#if defined(IGLAB_HAVE_AVX2)
namespace avx2_impl {
// Defined in kernels_avx2.cpp (compiled with -mavx2 -mfma).
void add(double*, const double*, const double*, std::size_t);
void sub(double*, const double*, const double*, std::size_t);
void mul(double*, const double*, const double*, std::size_t);
void scale(double*, const double*, double, std::size_t);
void axpy(double*, double, const double*, std::size_t);
double dot(const double*, const double*, std::size_t);
double sum(const double*, std::size_t);
double max_value(const double*, std::size_t);
void matmul_nn(double*, const double*, const double*, std::size_t, std::size_t, std::size_t, bool);
void matmul_nt(double*, const double*, const double*, std::size_t, std::size_t, std::size_t, bool);
void matmul_tn(double*, const double*, const double*, std::size_t, std::size_t, std::size_t, bool);
bool cpu_has_avx2();
}  // namespace avx2_impl
#endif

namespace {

const KernelTable kScalarTable = {
    scalar_impl::add,       scalar_impl::sub,       scalar_impl::mul,
    scalar_impl::scale,     scalar_impl::axpy,      scalar_impl::dot,
    scalar_impl::sum,       scalar_impl::max_value, scalar_impl::matmul_nn,
    scalar_impl::matmul_nt, scalar_impl::matmul_tn,
};

#if defined(IGLAB_HAVE_AVX2)
const KernelTable kAvx2Table = {
    avx2_impl::add,       avx2_impl::sub,       avx2_impl::mul,
    avx2_impl::scale,     avx2_impl::axpy,      avx2_impl::dot,
    avx2_impl::sum,       avx2_impl::max_value, avx2_impl::matmul_nn,
    avx2_impl::matmul_nt, avx2_impl::matmul_tn,
};
#endif

Backend detect_backend() {
  if (const char* env = std::getenv("IGLAB_KERNELS")) {
    const std::string v(env);
    if (v == "scalar") return Backend::scalar;
    if (v == "avx2" && backend_supported(Backend::avx2)) return Backend::avx2;
    if (v != "auto" && v != "avx2")
      throw std::invalid_argument("IGLAB_KERNELS must be scalar, avx2 or auto, got: " + v);
  }
  return backend_supported(Backend::avx2) ? Backend::avx2 : Backend::scalar;
}

struct Dispatch {
  Backend backend;
  const KernelTable* table;
};

Dispatch& dispatch() {
  static Dispatch d = [] {
    const Backend b = detect_backend();
    return Dispatch{b, &table_for(b)};
  }();
  return d;
}

}  // namespace

const char* backend_name(Backend b) {
  return b == Backend::scalar ? "scalar" : "avx2";
}

bool backend_supported(Backend b) {
  if (b == Backend::scalar) return true;
#if defined(IGLAB_HAVE_AVX2)
  return avx2_impl::cpu_has_avx2();
#else
  return false;
#endif
}

const KernelTable& table_for(Backend b) {
  if (b == Backend::scalar) return kScalarTable;
#if defined(IGLAB_HAVE_AVX2)
  if (backend_supported(Backend::avx2)) return kAvx2Table;
#endif
  throw std::invalid_argument(std::string("kernel backend unsupported on this CPU: ") + backend_name(b));
}

Backend active_backend() { return dispatch().backend; }

void force_backend(Backend b) {
  dispatch() = Dispatch{b, &table_for(b)};
}

void reset_backend() {
  const Backend b = detect_backend();
  dispatch() = Dispatch{b, &table_for(b)};
}

void add(double* dst, const double* a, const double* b, std::size_t n) { dispatch().table->add(dst, a, b, n); }
void sub(double* dst, const double* a, const double* b, std::size_t n) { dispatch().table->sub(dst, a, b, n); }
void mul(double* dst, const double* a, const double* b, std::size_t n) { dispatch().table->mul(dst, a, b, n); }
void scale(double* dst, const double* a, double c, std::size_t n) { dispatch().table->scale(dst, a, c, n); }
void axpy(double* dst, double c, const double* x, std::size_t n) { dispatch().table->axpy(dst, c, x, n); }
double dot(const double* a, const double* b, std::size_t n) { return dispatch().table->dot(a, b, n); }
double sum(const double* a, std::size_t n) { return dispatch().table->sum(a, n); }
double max_value(const double* a, std::size_t n) { return dispatch().table->max_value(a, n); }

void matmul_nn(double* c, const double* a, const double* b,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  dispatch().table->matmul_nn(c, a, b, m, k, n, accumulate);
}
void matmul_nt(double* c, const double* a, const double* b,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  dispatch().table->matmul_nt(c, a, b, m, k, n, accumulate);
}
void matmul_tn(double* c, const double* a, const double* b,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  dispatch().table->matmul_tn(c, a, b, m, k, n, accumulate);
}

}  // namespace iglab::kernels
