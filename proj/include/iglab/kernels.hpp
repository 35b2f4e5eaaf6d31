#pragma once

#include <cstddef>

// Double-precision arithmetic kernels behind the tensor engine.
// Every kernel has a scalar reference implementation and, on x86-64,
// an AVX2/FMA variant. The backend is picked once at runtime (CPU
// detection, overridable via the IGLAB_KERNELS env var or
// force_backend()); scalar and SIMD variants are equivalence-tested
// against each other.
namespace iglab::kernels {

enum class Backend { scalar, avx2 };

const char* backend_name(Backend b);
bool backend_supported(Backend b);

// Currently active backend (auto-detected on first use).
Backend active_backend();

// Overrides the dispatch choice. Throws std::invalid_argument if the
// requested backend is unsupported on this CPU. Not thread-safe; call
// before any concurrent kernel use (tests only, in practice).
void force_backend(Backend b);

// Reverts to auto detection (honors IGLAB_KERNELS).
void reset_backend();

// Elementwise. dst may alias a.
void add(double* dst, const double* a, const double* b, std::size_t n);
void sub(double* dst, const double* a, const double* b, std::size_t n);
void mul(double* dst, const double* a, const double* b, std::size_t n);
void scale(double* dst, const double* a, double c, std::size_t n);

// dst[i] += c * x[i]
void axpy(double* dst, double c, const double* x, std::size_t n);

// Reductions.
double dot(const double* a, const double* b, std::size_t n);
double sum(const double* a, std::size_t n);
double max_value(const double* a, std::size_t n);  // n >= 1

// Row-major matrix products. accumulate=false overwrites c.
//   nn: c[m,n]  = a[m,k] * b[k,n]
//   nt: c[m,n]  = a[m,k] * b[n,k]^T
//   tn: c[k,n]  = a[m,k]^T * b[m,n]
void matmul_nn(double* c, const double* a, const double* b,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate);
void matmul_nt(double* c, const double* a, const double* b,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate);
void matmul_tn(double* c, const double* a, const double* b,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate);

// Direct access to a specific backend's kernel table (for equivalence tests).
struct KernelTable {
  void (*add)(double*, const double*, const double*, std::size_t);
  void (*sub)(double*, const double*, const double*, std::size_t);
  void (*mul)(double*, const double*, const double*, std::size_t);
  void (*scale)(double*, const double*, double, std::size_t);
  void (*axpy)(double*, double, const double*, std::size_t);
  double (*dot)(const double*, const double*, std::size_t);
  double (*sum)(const double*, std::size_t);
  double (*max_value)(const double*, std::size_t);
  void (*matmul_nn)(double*, const double*, const double*, std::size_t, std::size_t, std::size_t, bool);
  void (*matmul_nt)(double*, const double*, const double*, std::size_t, std::size_t, std::size_t, bool);
  void (*matmul_tn)(double*, const double*, const double*, std::size_t, std::size_t, std::size_t, bool);
};

const KernelTable& table_for(Backend b);  // throws if unsupported

}  // namespace iglab::kernels
