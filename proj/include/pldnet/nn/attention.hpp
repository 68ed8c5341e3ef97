#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "pldnet/nn/conv.hpp"
#include "pldnet/nn/tensor.hpp"

namespace pldnet::nn {

// Single-head self-attention across the frequency axis, computed independently
// for every (batch, time) slice. q, k, v are [B, C', F, T]; for one slice with
// Q, K, V the C' x F matrices, A = softmax_rows(Q^T K / sqrt(C')) and the
// output is V A^T.
inline Tensor freq_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  if (q.ndim() != 4 || q.shape() != k.shape() || q.shape() != v.shape()) {
    throw ShapeError("freq_attention: q, k, v must share a [B,C,F,T] shape");
  }
  const std::size_t b = q.dim(0), c = q.dim(1), f = q.dim(2), t = q.dim(3);
  const double inv_sqrt_c = 1.0 / std::sqrt(static_cast<double>(c));
  auto attn = std::make_shared<std::vector<double>>(b * t * f * f);
  std::vector<double> y(q.numel(), 0.0);
  std::vector<double> qs(c * f), ks(c * f), vs(c * f);
  auto gather = [&](const double* src, std::vector<double>& dst, std::size_t n, std::size_t tt) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t ff = 0; ff < f; ++ff) dst[ch * f + ff] = src[((n * c + ch) * f + ff) * t + tt];
    }
  };
  for (std::size_t n = 0; n < b; ++n) {
    for (std::size_t tt = 0; tt < t; ++tt) {
      gather(q.data().data(), qs, n, tt);
      gather(k.data().data(), ks, n, tt);
      gather(v.data().data(), vs, n, tt);
      double* a = attn->data() + (n * t + tt) * f * f;
      for (std::size_t i = 0; i < f; ++i) {
        double* row = a + i * f;
        std::fill(row, row + f, 0.0);
        for (std::size_t ch = 0; ch < c; ++ch) {
          const double qv = qs[ch * f + i] * inv_sqrt_c;
          const double* kr = ks.data() + ch * f;
          for (std::size_t j = 0; j < f; ++j) row[j] += qv * kr[j];
        }
        const double mx = *std::max_element(row, row + f);
        double s = 0.0;
        for (std::size_t j = 0; j < f; ++j) s += (row[j] = std::exp(row[j] - mx));
        const double inv = 1.0 / s;
        for (std::size_t j = 0; j < f; ++j) row[j] *= inv;
        for (std::size_t ch = 0; ch < c; ++ch) {
          const double* vr = vs.data() + ch * f;
          double acc = 0.0;
          for (std::size_t j = 0; j < f; ++j) acc += row[j] * vr[j];
          y[((n * c + ch) * f + i) * t + tt] = acc;
        }
      }
    }
  }
  detail::mac_counter() += 2 * b * t * f * f * c;
  return make_result(q.shape(), std::move(y), {q, k, v}, [b, c, f, t, inv_sqrt_c, attn](Node& self) {
    Node& pq = *self.parents[0];
    Node& pk = *self.parents[1];
    Node& pv = *self.parents[2];
    std::vector<double> qs(c * f), ks(c * f), vs(c * f), dy(c * f);
    std::vector<double> dq(c * f), dk(c * f), dv(c * f), ds(f);
    auto gather = [&](const std::vector<double>& src, std::vector<double>& dst, std::size_t n, std::size_t tt) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t ff = 0; ff < f; ++ff) dst[ch * f + ff] = src[((n * c + ch) * f + ff) * t + tt];
      }
    };
    auto scatter = [&](const std::vector<double>& src, Node& dstn, std::size_t n, std::size_t tt) {
      if (!dstn.requires_grad) return;
      auto& dst = dstn.ensure_grad();
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t ff = 0; ff < f; ++ff) dst[((n * c + ch) * f + ff) * t + tt] += src[ch * f + ff];
      }
    };
    for (std::size_t n = 0; n < b; ++n) {
      for (std::size_t tt = 0; tt < t; ++tt) {
        gather(pq.data, qs, n, tt);
        gather(pk.data, ks, n, tt);
        gather(pv.data, vs, n, tt);
        gather(self.grad, dy, n, tt);
        std::fill(dq.begin(), dq.end(), 0.0);
        std::fill(dk.begin(), dk.end(), 0.0);
        std::fill(dv.begin(), dv.end(), 0.0);
        const double* a = attn->data() + (n * t + tt) * f * f;
        for (std::size_t i = 0; i < f; ++i) {
          const double* row = a + i * f;
          // dA[i, j] = sum_c dy[c, i] v[c, j]; dV[c, j] += dy[c, i] A[i, j]
          std::fill(ds.begin(), ds.end(), 0.0);
          for (std::size_t ch = 0; ch < c; ++ch) {
            const double g = dy[ch * f + i];
            const double* vr = vs.data() + ch * f;
            double* dvr = dv.data() + ch * f;
            for (std::size_t j = 0; j < f; ++j) {
              ds[j] += g * vr[j];
              dvr[j] += g * row[j];
            }
          }
          double dot = 0.0;
          for (std::size_t j = 0; j < f; ++j) dot += ds[j] * row[j];
          for (std::size_t j = 0; j < f; ++j) ds[j] = row[j] * (ds[j] - dot) * inv_sqrt_c;
          for (std::size_t ch = 0; ch < c; ++ch) {
            const double* kr = ks.data() + ch * f;
            double acc = 0.0;
            for (std::size_t j = 0; j < f; ++j) acc += ds[j] * kr[j];
            dq[ch * f + i] += acc;
            const double qv = qs[ch * f + i];
            double* dkr = dk.data() + ch * f;
            for (std::size_t j = 0; j < f; ++j) dkr[j] += ds[j] * qv;
          }
        }
        scatter(dq, pq, n, tt);
        scatter(dk, pk, n, tt);
        scatter(dv, pv, n, tt);
      }
    }
  });
}

}  // namespace pldnet::nn
