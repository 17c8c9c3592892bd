#include "blockdiff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "blockdiff/error.hpp"
#include "blockdiff/simd/kernels.hpp"

namespace blockdiff::ops {
namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " differ");
  }
}

// Accumulates `g` into t's gradient when t participates in differentiation.
void accumulate(const Tensor& t, std::span<const double> g) {
  if (t.requires_grad()) {
    simd::active().add(g.size(), g.data(), t.grad_buffer().data());
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0);
  const std::size_t k = a.dim(1);
  const std::size_t n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions disagree for " + shape_string(a.shape()) +
                         " x " + shape_string(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  simd::active().gemm_nn(m, k, n, a.values().data(), b.values().data(), out.data());
  return Tensor::make_result(
      {m, n}, std::move(out), {a, b}, [a, b, m, k, n](std::span<const double> g) mutable {
        const auto& kern = simd::active();
        if (a.requires_grad()) {
          // dA += G * B^T, folded over output columns in order.
          std::vector<double> bt(n * k);
          const auto bv = b.values();
          for (std::size_t p = 0; p < k; ++p) {
            for (std::size_t j = 0; j < n; ++j) {
              bt[j * k + p] = bv[p * n + j];
            }
          }
          kern.gemm_nn(m, n, k, g.data(), bt.data(), a.grad_buffer().data());
        }
        if (b.requires_grad()) {
          kern.gemm_tn(m, k, n, a.values().data(), g.data(), b.grad_buffer().data());
        }
      });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.values().begin(), a.values().end());
  simd::active().add(out.size(), b.values().data(), out.data());
  return Tensor::make_result(a.shape(), std::move(out), {a, b},
                             [a, b](std::span<const double> g) mutable {
                               accumulate(a, g);
                               accumulate(b, g);
                             });
}

Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
  require_rank(x, 2, "add_row_bias");
  require_rank(bias, 1, "add_row_bias");
  const std::size_t m = x.dim(0);
  const std::size_t n = x.dim(1);
  if (bias.dim(0) != n) {
    throw DimensionError("add_row_bias: bias " + shape_string(bias.shape()) +
                         " does not match columns of " + shape_string(x.shape()));
  }
  const auto& kern = simd::active();
  std::vector<double> out(x.values().begin(), x.values().end());
  for (std::size_t i = 0; i < m; ++i) {
    kern.add(n, bias.values().data(), out.data() + i * n);
  }
  return Tensor::make_result(x.shape(), std::move(out), {x, bias},
                             [x, bias, m, n](std::span<const double> g) mutable {
                               accumulate(x, g);
                               if (bias.requires_grad()) {
                                 double* db = bias.grad_buffer().data();
                                 for (std::size_t i = 0; i < m; ++i) {
                                   simd::active().add(n, g.data() + i * n, db);
                                 }
                               }
                             });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  simd::active().mul(out.size(), a.values().data(), b.values().data(), out.data());
  return Tensor::make_result(a.shape(), std::move(out), {a, b},
                             [a, b](std::span<const double> g) mutable {
                               const auto& kern = simd::active();
                               std::vector<double> tmp(g.size());
                               if (a.requires_grad()) {
                                 kern.mul(g.size(), g.data(), b.values().data(), tmp.data());
                                 kern.add(g.size(), tmp.data(), a.grad_buffer().data());
                               }
                               if (b.requires_grad()) {
                                 kern.mul(g.size(), g.data(), a.values().data(), tmp.data());
                                 kern.add(g.size(), tmp.data(), b.grad_buffer().data());
                               }
                             });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.numel());
  simd::active().scale(out.size(), factor, a.values().data(), out.data());
  return Tensor::make_result(a.shape(), std::move(out), {a},
                             [a, factor](std::span<const double> g) mutable {
                               if (a.requires_grad()) {
                                 simd::active().axpy(g.size(), factor, g.data(),
                                                     a.grad_buffer().data());
                               }
                             });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.values()) {
    total += v;
  }
  return Tensor::make_result({}, {total}, {a}, [a](std::span<const double> g) mutable {
    if (a.requires_grad()) {
      for (double& d : a.grad_buffer()) {
        d += g[0];
      }
    }
  });
}

Tensor gelu(const Tensor& x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  std::vector<double> th(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double u = xv[i];
    th[i] = std::tanh(kC * (u + kA * u * u * u));
    out[i] = 0.5 * u * (1.0 + th[i]);
  }
  return Tensor::make_result(x.shape(), std::move(out), {x},
                             [x, th = std::move(th)](std::span<const double> g) mutable {
                               if (!x.requires_grad()) {
                                 return;
                               }
                               const auto xv = x.values();
                               auto dx = x.grad_buffer();
                               for (std::size_t i = 0; i < xv.size(); ++i) {
                                 const double u = xv[i];
                                 const double d = 0.5 * (1.0 + th[i]) +
                                                  0.5 * u * (1.0 - th[i] * th[i]) * kC *
                                                      (1.0 + 3.0 * kA * u * u);
                                 dx[i] += g[i] * d;
                               }
                             });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_rank(x, 2, "layer_norm");
  const std::size_t m = x.dim(0);
  const std::size_t n = x.dim(1);
  if (gamma.shape() != Shape{n} || beta.shape() != Shape{n}) {
    throw DimensionError("layer_norm: gamma/beta must be [" + std::to_string(n) + "]");
  }
  const auto xv = x.values();
  const auto gv = gamma.values();
  const auto bv = beta.values();
  std::vector<double> xhat(m * n);
  std::vector<double> rstd(m);
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = xv.data() + i * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      mean += row[j];
    }
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = row[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    rstd[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (row[j] - mean) * rstd[i];
      xhat[i * n + j] = h;
      out[i * n + j] = h * gv[j] + bv[j];
    }
  }
  return Tensor::make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [x, gamma, beta, m, n, xhat = std::move(xhat),
       rstd = std::move(rstd)](std::span<const double> g) mutable {
        const auto gv = gamma.values();
        std::vector<double> dxhat(n);
        for (std::size_t i = 0; i < m; ++i) {
          const double* gi = g.data() + i * n;
          const double* hi = xhat.data() + i * n;
          if (gamma.requires_grad()) {
            double* dg = gamma.grad_buffer().data();
            for (std::size_t j = 0; j < n; ++j) {
              dg[j] += gi[j] * hi[j];
            }
          }
          if (beta.requires_grad()) {
            simd::active().add(n, gi, beta.grad_buffer().data());
          }
          if (x.requires_grad()) {
            double mean_d = 0.0;
            double mean_dh = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              dxhat[j] = gi[j] * gv[j];
              mean_d += dxhat[j];
              mean_dh += dxhat[j] * hi[j];
            }
            mean_d /= static_cast<double>(n);
            mean_dh /= static_cast<double>(n);
            double* dx = x.grad_buffer().data() + i * n;
            for (std::size_t j = 0; j < n; ++j) {
              dx[j] += rstd[i] * (dxhat[j] - mean_d - hi[j] * mean_dh);
            }
          }
        }
      });
}

Tensor embedding(const Tensor& table, std::span<const std::size_t> ids) {
  require_rank(table, 2, "embedding");
  const std::size_t vocab = table.dim(0);
  const std::size_t d = table.dim(1);
  std::vector<double> out(ids.size() * d);
  const auto tv = table.values();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= vocab) {
      throw IndexError("embedding: id " + std::to_string(ids[i]) + " at position " +
                       std::to_string(i) + " outside table of " + std::to_string(vocab) +
                       " rows");
    }
    std::copy_n(tv.data() + ids[i] * d, d, out.data() + i * d);
  }
  std::vector<std::size_t> id_copy(ids.begin(), ids.end());
  return Tensor::make_result({ids.size(), d}, std::move(out), {table},
                             [table, d, id_copy = std::move(id_copy)](
                                 std::span<const double> g) mutable {
                               if (!table.requires_grad()) {
                                 return;
                               }
                               double* dt = table.grad_buffer().data();
                               for (std::size_t i = 0; i < id_copy.size(); ++i) {
                                 simd::active().add(d, g.data() + i * d, dt + id_copy[i] * d);
                               }
                             });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  require_rank(x, 2, "slice_rows");
  if (begin > end || end > x.dim(0)) {
    throw IndexError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") outside " + shape_string(x.shape()));
  }
  const std::size_t n = x.dim(1);
  std::vector<double> out(x.values().begin() + static_cast<std::ptrdiff_t>(begin * n),
                          x.values().begin() + static_cast<std::ptrdiff_t>(end * n));
  return Tensor::make_result({end - begin, n}, std::move(out), {x},
                             [x, begin, n](std::span<const double> g) mutable {
                               if (x.requires_grad()) {
                                 simd::active().add(g.size(), g.data(),
                                                    x.grad_buffer().data() + begin * n);
                               }
                             });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) {
    throw ContractError("concat_rows: no inputs");
  }
  const std::size_t n = parts.front().dim(1);
  std::size_t rows = 0;
  std::vector<double> out;
  for (const Tensor& p : parts) {
    require_rank(p, 2, "concat_rows");
    if (p.dim(1) != n) {
      throw DimensionError("concat_rows: column mismatch " + shape_string(parts.front().shape()) +
                           " vs " + shape_string(p.shape()));
    }
    rows += p.dim(0);
    out.insert(out.end(), p.values().begin(), p.values().end());
  }
  return Tensor::make_result({rows, n}, std::move(out), parts,
                             [parts](std::span<const double> g) mutable {
                               std::size_t offset = 0;
                               for (const Tensor& p : parts) {
                                 accumulate(p, g.subspan(offset, p.numel()));
                                 offset += p.numel();
                               }
                             });
}

namespace {

struct RowSoftmax {
  std::vector<double> nll;
  std::vector<double> lse;
};

RowSoftmax row_nll(const Tensor& logits, std::span<const std::size_t> targets) {
  require_rank(logits, 2, "cross entropy");
  const std::size_t n = logits.dim(0);
  const std::size_t vocab = logits.dim(1);
  if (targets.size() != n) {
    throw DimensionError("cross entropy: " + std::to_string(targets.size()) +
                         " targets for logits " + shape_string(logits.shape()));
  }
  RowSoftmax out{std::vector<double>(n), std::vector<double>(n)};
  const auto lv = logits.values();
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] >= vocab) {
      throw IndexError("cross entropy: target " + std::to_string(targets[i]) + " at row " +
                       std::to_string(i) + " outside vocabulary of " + std::to_string(vocab));
    }
    const double* row = lv.data() + i * vocab;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < vocab; ++j) {
      mx = std::max(mx, row[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) {
      z += std::exp(row[j] - mx);
    }
    out.lse[i] = mx + std::log(z);
    out.nll[i] = out.lse[i] - row[targets[i]];
  }
  return out;
}

// dlogits[i] += coef * (softmax(logits[i]) - onehot(target[i]))
void nll_row_backward(const Tensor& logits, std::size_t i, std::size_t target, double lse,
                      double coef, double* dlogits) {
  const std::size_t vocab = logits.dim(1);
  const double* row = logits.values().data() + i * vocab;
  double* drow = dlogits + i * vocab;
  for (std::size_t j = 0; j < vocab; ++j) {
    drow[j] += coef * std::exp(row[j] - lse);
  }
  drow[target] -= coef;
}

}  // namespace

Tensor token_nll(const Tensor& logits, std::span<const std::size_t> targets) {
  RowSoftmax rs = row_nll(logits, targets);
  const std::size_t n = rs.nll.size();
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  return Tensor::make_result(
      {n}, std::move(rs.nll), {logits},
      [logits, tgt = std::move(tgt), lse = std::move(rs.lse)](std::span<const double> g) mutable {
        if (!logits.requires_grad()) {
          return;
        }
        double* dl = logits.grad_buffer().data();
        for (std::size_t i = 0; i < tgt.size(); ++i) {
          if (g[i] != 0.0) {
            nll_row_backward(logits, i, tgt[i], lse[i], g[i], dl);
          }
        }
      });
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> targets,
                             std::span<const double> weights) {
  if (weights.size() != targets.size()) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(weights.size()) +
                         " weights for " + std::to_string(targets.size()) + " targets");
  }
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (!(weights[i] >= 0.0)) {
      throw ContractError("softmax_cross_entropy: weight at row " + std::to_string(i) +
                          " is negative");
    }
  }
  RowSoftmax rs = row_nll(logits, targets);
  double total = 0.0;
  for (std::size_t i = 0; i < rs.nll.size(); ++i) {
    if (weights[i] != 0.0) {
      total += weights[i] * rs.nll[i];
    }
  }
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  std::vector<double> w(weights.begin(), weights.end());
  return Tensor::make_result(
      {}, {total}, {logits},
      [logits, tgt = std::move(tgt), w = std::move(w),
       lse = std::move(rs.lse)](std::span<const double> g) mutable {
        if (!logits.requires_grad()) {
          return;
        }
        double* dl = logits.grad_buffer().data();
        for (std::size_t i = 0; i < tgt.size(); ++i) {
          if (w[i] != 0.0) {
            nll_row_backward(logits, i, tgt[i], lse[i], g[0] * w[i], dl);
          }
        }
      });
}

Tensor masked_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        const AttentionMask& mask, std::size_t num_heads) {
  require_rank(q, 2, "masked_attention");
  require_same_shape(q, k, "masked_attention");
  require_same_shape(q, v, "masked_attention");
  const std::size_t len = q.dim(0);
  const std::size_t width = q.dim(1);
  if (mask.size() != len) {
    throw DimensionError("masked_attention: mask of size " + std::to_string(mask.size()) +
                         " for " + std::to_string(len) + " positions");
  }
  if (num_heads == 0 || width % num_heads != 0) {
    throw DimensionError("masked_attention: width " + std::to_string(width) +
                         " not divisible by " + std::to_string(num_heads) + " heads");
  }
  const std::size_t hd = width / num_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  const auto& kern = simd::active();

  // Allowed keys of each query, increasing.
  std::vector<std::vector<std::size_t>> keys(len);
  for (std::size_t i = 0; i < len; ++i) {
    const auto row = mask.row(i);
    for (std::size_t j = 0; j < len; ++j) {
      if (row[j] != 0) {
        keys[i].push_back(j);
      }
    }
  }

  const double* qv = q.values().data();
  const double* kv = k.values().data();
  const double* vv = v.values().data();
  std::vector<double> out(len * width, 0.0);
  // probs[h][i] holds the softmax over keys[i].
  std::vector<std::vector<double>> probs(num_heads * len);
  for (std::size_t h = 0; h < num_heads; ++h) {
    const std::size_t off = h * hd;
    for (std::size_t i = 0; i < len; ++i) {
      const auto& ks = keys[i];
      std::vector<double>& p = probs[h * len + i];
      p.resize(ks.size());
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t a = 0; a < ks.size(); ++a) {
        p[a] = kern.dot(hd, qv + i * width + off, kv + ks[a] * width + off) * inv_sqrt;
        mx = std::max(mx, p[a]);
      }
      double z = 0.0;
      for (double& s : p) {
        s = std::exp(s - mx);
        z += s;
      }
      double* orow = out.data() + i * width + off;
      for (std::size_t a = 0; a < ks.size(); ++a) {
        p[a] /= z;
        kern.axpy(hd, p[a], vv + ks[a] * width + off, orow);
      }
    }
  }

  return Tensor::make_result(
      q.shape(), std::move(out), {q, k, v},
      [q, k, v, len, width, hd, num_heads, inv_sqrt, keys = std::move(keys),
       probs = std::move(probs)](std::span<const double> g) mutable {
        const auto& kern = simd::active();
        const double* qv = q.values().data();
        const double* kv = k.values().data();
        const double* vv = v.values().data();
        double* dq = q.requires_grad() ? q.grad_buffer().data() : nullptr;
        double* dk = k.requires_grad() ? k.grad_buffer().data() : nullptr;
        double* dv = v.requires_grad() ? v.grad_buffer().data() : nullptr;
        std::vector<double> ds;
        for (std::size_t h = 0; h < num_heads; ++h) {
          const std::size_t off = h * hd;
          for (std::size_t i = 0; i < len; ++i) {
            const auto& ks = keys[i];
            const std::vector<double>& p = probs[h * len + i];
            const double* gi = g.data() + i * width + off;
            ds.assign(ks.size(), 0.0);
            double weighted = 0.0;
            for (std::size_t a = 0; a < ks.size(); ++a) {
              ds[a] = kern.dot(hd, gi, vv + ks[a] * width + off);
              weighted += p[a] * ds[a];
            }
            for (std::size_t a = 0; a < ks.size(); ++a) {
              const std::size_t j = ks[a];
              if (dv != nullptr) {
                kern.axpy(hd, p[a], gi, dv + j * width + off);
              }
              const double score_grad = p[a] * (ds[a] - weighted) * inv_sqrt;
              if (dq != nullptr) {
                kern.axpy(hd, score_grad, kv + j * width + off, dq + i * width + off);
              }
              if (dk != nullptr) {
                kern.axpy(hd, score_grad, qv + i * width + off, dk + j * width + off);
              }
            }
          }
        }
      });
}

std::vector<std::size_t> argmax_rows(const Tensor& x) {
  require_rank(x, 2, "argmax_rows");
  const std::size_t m = x.dim(0);
  const std::size_t n = x.dim(1);
  std::vector<std::size_t> out(m, 0);
  const auto xv = x.values();
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = xv.data() + i * n;
    for (std::size_t j = 1; j < n; ++j) {
      if (row[j] > row[out[i]]) {
        out[i] = j;
      }
    }
  }
  return out;
}

}  // namespace blockdiff::ops
