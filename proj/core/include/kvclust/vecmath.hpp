#pragma once

// Fixed-dimension vector primitives shared by every module. Stored embeddings
// are float32; all accumulation runs in float64 so statistics do not drift.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <vector>

#include "kvclust/error.hpp"

namespace kvclust {

using Embedding = std::vector<float>;  // stored KV / visual states
using DVec = std::vector<double>;      // 64-bit statistics (representatives)

inline constexpr double kDegenerateNorm = 1e-12;

template <class V>
concept RealVec = requires(const V& v) {
  { v.size() } -> std::convertible_to<std::size_t>;
  { v[std::size_t{0}] } -> std::convertible_to<double>;
};

template <RealVec A, RealVec B>
double dot(const A& a, const B& b) {
  if (a.size() != b.size()) throw DimMismatch(a.size(), b.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

template <RealVec A>
double norm(const A& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(a[i]);
  return std::sqrt(s);
}

template <RealVec A, RealVec B>
double sq_dist(const A& a, const B& b) {
  if (a.size() != b.size()) throw DimMismatch(a.size(), b.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return s;
}

// Cosine similarity, clamped to [-1, 1] against rounding.
template <RealVec A, RealVec B>
double cosine_sim(const A& a, const B& b) {
  if (a.size() != b.size()) throw DimMismatch(a.size(), b.size());
  const double na = norm(a);
  const double nb = norm(b);
  if (na < kDegenerateNorm || nb < kDegenerateNorm) throw DegenerateVector("cosine of zero vector");
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

inline Embedding normalize(const Embedding& v) {
  const double n = norm(v);
  if (n < kDegenerateNorm) throw DegenerateVector("normalize of zero vector");
  Embedding out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(static_cast<double>(v[i]) / n);
  return out;
}

inline DVec dnormalize(const DVec& v) {
  const double n = norm(v);
  if (n < kDegenerateNorm) throw DegenerateVector("normalize of zero vector");
  DVec out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
  return out;
}

// Component-wise arithmetic mean in 64-bit, kept unnormalized.
template <RealVec V>
DVec dmean(const std::vector<V>& points) {
  if (points.empty()) throw EmptyCluster("mean of empty set");
  const std::size_t d = points.front().size();
  DVec acc(d, 0.0);
  for (const auto& p : points) {
    if (p.size() != d) throw DimMismatch(d, p.size());
    for (std::size_t i = 0; i < d; ++i) acc[i] += static_cast<double>(p[i]);
  }
  const double inv = 1.0 / static_cast<double>(points.size());
  for (auto& x : acc) x *= inv;
  return acc;
}

inline Embedding mean(const std::vector<Embedding>& points) {
  const DVec m = dmean(points);
  Embedding out(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = static_cast<float>(m[i]);
  return out;
}

}  // namespace kvclust
