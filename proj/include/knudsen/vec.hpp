#pragma once

#include <array>
#include <cmath>
#include <cstddef>

namespace knudsen {

/// Fixed-dimension Euclidean vector. The dimension is a template parameter
/// throughout the library so that hot loops stay allocation free.
template <int N>
struct Vec {
  static_assert(N >= 2, "dimension must be at least 2");
  std::array<double, N> c{};

  constexpr double& operator[](std::size_t i) { return c[i]; }
  constexpr double operator[](std::size_t i) const { return c[i]; }

  static constexpr Vec zero() { return Vec{}; }
  static constexpr Vec unit(int k) {
    Vec e{};
    e.c[k] = 1.0;
    return e;
  }

  constexpr Vec& operator+=(const Vec& o) {
    for (int i = 0; i < N; ++i) c[i] += o.c[i];
    return *this;
  }
  constexpr Vec& operator-=(const Vec& o) {
    for (int i = 0; i < N; ++i) c[i] -= o.c[i];
    return *this;
  }
  constexpr Vec& operator*=(double s) {
    for (int i = 0; i < N; ++i) c[i] *= s;
    return *this;
  }
  constexpr Vec& operator/=(double s) {
    for (int i = 0; i < N; ++i) c[i] /= s;
    return *this;
  }

  friend constexpr bool operator==(const Vec&, const Vec&) = default;
};

template <int N>
constexpr Vec<N> operator+(Vec<N> a, const Vec<N>& b) {
  return a += b;
}
template <int N>
constexpr Vec<N> operator-(Vec<N> a, const Vec<N>& b) {
  return a -= b;
}
template <int N>
constexpr Vec<N> operator-(Vec<N> a) {
  return a *= -1.0;
}
template <int N>
constexpr Vec<N> operator*(double s, Vec<N> a) {
  return a *= s;
}
template <int N>
constexpr Vec<N> operator*(Vec<N> a, double s) {
  return a *= s;
}
template <int N>
constexpr Vec<N> operator/(Vec<N> a, double s) {
  return a /= s;
}

template <int N>
constexpr double dot(const Vec<N>& a, const Vec<N>& b) {
  double s = 0.0;
  for (int i = 0; i < N; ++i) s += a[i] * b[i];
  return s;
}

template <int N>
constexpr double norm2(const Vec<N>& a) {
  return dot(a, a);
}

template <int N>
inline double norm(const Vec<N>& a) {
  return std::sqrt(norm2(a));
}

template <int N>
inline Vec<N> normalized(const Vec<N>& a) {
  return a / norm(a);
}

/// Componentwise product, used by the ellipsoid maps.
template <int N>
constexpr Vec<N> hadamard(const Vec<N>& a, const Vec<N>& b) {
  Vec<N> r;
  for (int i = 0; i < N; ++i) r[i] = a[i] * b[i];
  return r;
}

template <int N>
constexpr Vec<N> hadamard_div(const Vec<N>& a, const Vec<N>& b) {
  Vec<N> r;
  for (int i = 0; i < N; ++i) r[i] = a[i] / b[i];
  return r;
}

}  // namespace knudsen
