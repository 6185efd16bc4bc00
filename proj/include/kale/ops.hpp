#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "kale/tensor.hpp"

namespace kale {

// ---------------------------------------------------------------------------
// Shape helpers

namespace detail {

template <typename S>
MatMap<S> out_grad(TensorNode<S>& n, int r, int c) {
  return MatMap<S>(n.grad.data(), r, c);
}

template <typename S>
MatMap<S> grad_mat(TensorNode<S>& n, int r, int c) {
  return MatMap<S>(n.grad_buffer().data(), r, c);
}

template <typename S>
ConstMatMap<S> val_mat(const TensorNode<S>& n, int r, int c) {
  return ConstMatMap<S>(n.value.data(), r, c);
}

inline void require_same_shape(const std::vector<int>& a, const std::vector<int>& b,
                               const char* op) {
  if (a != b)
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) +
                         " vs " + shape_str(b));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw DimensionError("matmul: expected rank-2 operands, got " +
                         shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2)
    throw DimensionError("matmul: inner dimensions disagree, " +
                         shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<S> out(static_cast<std::size_t>(m) * n);
  MatMap<S>(out.data(), m, n).noalias() = a.mat() * b.mat();
  auto an = a.node(), bn = b.node();
  return detail::make_op<S>(
      std::move(out), {m, n}, {a, b}, [an, bn, m, k, n](TensorNode<S>& node) {
        auto g = detail::out_grad(node, m, n);
        if (an->requires_grad)
          detail::grad_mat(*an, m, k).noalias() +=
              g * detail::val_mat(*bn, k, n).transpose();
        if (bn->requires_grad)
          detail::grad_mat(*bn, k, n).noalias() +=
              detail::val_mat(*an, m, k).transpose() * g;
      });
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& a) {
  if (a.rank() != 2) throw DimensionError("transpose: expected rank-2 tensor");
  const int m = a.dim(0), n = a.dim(1);
  std::vector<S> out(a.value().size());
  MatMap<S>(out.data(), n, m) = a.mat().transpose();
  auto an = a.node();
  return detail::make_op<S>(
      std::move(out), {n, m}, {a}, [an, m, n](TensorNode<S>& node) {
        if (an->requires_grad)
          detail::grad_mat(*an, m, n) += detail::out_grad(node, n, m).transpose();
      });
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "add");
  std::vector<S> out(a.value().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  auto an = a.node(), bn = b.node();
  return detail::make_op<S>(std::move(out), a.shape(), {a, b},
                            [an, bn](TensorNode<S>& node) {
                              if (an->requires_grad) {
                                auto& g = an->grad_buffer();
                                for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i];
                              }
                              if (bn->requires_grad) {
                                auto& g = bn->grad_buffer();
                                for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i];
                              }
                            });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "sub");
  std::vector<S> out(a.value().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  auto an = a.node(), bn = b.node();
  return detail::make_op<S>(std::move(out), a.shape(), {a, b},
                            [an, bn](TensorNode<S>& node) {
                              if (an->requires_grad) {
                                auto& g = an->grad_buffer();
                                for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i];
                              }
                              if (bn->requires_grad) {
                                auto& g = bn->grad_buffer();
                                for (std::size_t i = 0; i < g.size(); ++i) g[i] -= node.grad[i];
                              }
                            });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "mul");
  std::vector<S> out(a.value().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  auto an = a.node(), bn = b.node();
  return detail::make_op<S>(std::move(out), a.shape(), {a, b},
                            [an, bn](TensorNode<S>& node) {
                              if (an->requires_grad) {
                                auto& g = an->grad_buffer();
                                for (std::size_t i = 0; i < g.size(); ++i)
                                  g[i] += node.grad[i] * bn->value[i];
                              }
                              if (bn->requires_grad) {
                                auto& g = bn->grad_buffer();
                                for (std::size_t i = 0; i < g.size(); ++i)
                                  g[i] += node.grad[i] * an->value[i];
                              }
                            });
}

template <typename S>
Tensor<S> div(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "div");
  std::vector<S> out(a.value().size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (b.value()[i] == S(0)) throw NumericError("div: zero denominator");
    out[i] = a.value()[i] / b.value()[i];
  }
  auto an = a.node(), bn = b.node();
  return detail::make_op<S>(
      std::move(out), a.shape(), {a, b}, [an, bn](TensorNode<S>& node) {
        if (an->requires_grad) {
          auto& g = an->grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i] / bn->value[i];
        }
        if (bn->requires_grad) {
          auto& g = bn->grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i)
            g[i] -= node.grad[i] * node.value[i] / bn->value[i];
        }
      });
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S c) {
  std::vector<S> out(a.value().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * c;
  auto an = a.node();
  return detail::make_op<S>(std::move(out), a.shape(), {a},
                            [an, c](TensorNode<S>& node) {
                              if (!an->requires_grad) return;
                              auto& g = an->grad_buffer();
                              for (std::size_t i = 0; i < g.size(); ++i)
                                g[i] += node.grad[i] * c;
                            });
}

template <typename S>
Tensor<S> sqrt(const Tensor<S>& a) {
  std::vector<S> out(a.value().size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (a.value()[i] < S(0)) throw NumericError("sqrt of negative value");
    out[i] = std::sqrt(a.value()[i]);
  }
  auto an = a.node();
  return detail::make_op<S>(std::move(out), a.shape(), {a},
                            [an](TensorNode<S>& node) {
                              if (!an->requires_grad) return;
                              auto& g = an->grad_buffer();
                              for (std::size_t i = 0; i < g.size(); ++i)
                                g[i] += node.grad[i] * S(0.5) / node.value[i];
                            });
}

template <typename S>
Tensor<S> gelu(const Tensor<S>& a) {
  const S inv_sqrt2 = S(1) / std::sqrt(S(2));
  const S inv_sqrt2pi = S(1) / std::sqrt(S(2) * S(M_PI));
  std::vector<S> out(a.value().size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const S x = a.value()[i];
    out[i] = S(0.5) * x * (S(1) + std::erf(x * inv_sqrt2));
  }
  auto an = a.node();
  return detail::make_op<S>(
      std::move(out), a.shape(), {a},
      [an, inv_sqrt2, inv_sqrt2pi](TensorNode<S>& node) {
        if (!an->requires_grad) return;
        auto& g = an->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
          const S x = an->value[i];
          const S cdf = S(0.5) * (S(1) + std::erf(x * inv_sqrt2));
          const S pdf = inv_sqrt2pi * std::exp(S(-0.5) * x * x);
          g[i] += node.grad[i] * (cdf + x * pdf);
        }
      });
}

// Inverted dropout: surviving activations are scaled by 1/(1-rate) so the
// expectation matches the identity. rate == 0 is the identity op.
template <typename S>
Tensor<S> dropout(const Tensor<S>& a, double rate, std::mt19937& rng) {
  if (rate < 0.0 || rate >= 1.0)
    throw ParameterError("dropout rate must be in [0,1), got " + std::to_string(rate));
  if (rate == 0.0) return a;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const S keep_scale = S(1.0 / (1.0 - rate));
  auto mask = std::make_shared<std::vector<S>>(a.value().size());
  std::vector<S> out(a.value().size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const S m = u(rng) < rate ? S(0) : keep_scale;
    (*mask)[i] = m;
    out[i] = a.value()[i] * m;
  }
  auto an = a.node();
  return detail::make_op<S>(std::move(out), a.shape(), {a},
                            [an, mask](TensorNode<S>& node) {
                              if (!an->requires_grad) return;
                              auto& g = an->grad_buffer();
                              for (std::size_t i = 0; i < g.size(); ++i)
                                g[i] += node.grad[i] * (*mask)[i];
                            });
}

// ---------------------------------------------------------------------------
// Row/column structure

template <typename S>
Tensor<S> add_rowwise(const Tensor<S>& a, const Tensor<S>& bias) {
  if (a.cols() != bias.numel())
    throw DimensionError("add_rowwise: bias length " + shape_str(bias.shape()) +
                         " does not match columns of " + shape_str(a.shape()));
  const int m = a.rows(), n = a.cols();
  std::vector<S> out(a.value().size());
  MatMap<S>(out.data(), m, n) = a.mat();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(i) * n + j] += bias.value()[j];
  auto an = a.node(), bn = bias.node();
  return detail::make_op<S>(
      std::move(out), a.shape(), {a, bias}, [an, bn, m, n](TensorNode<S>& node) {
        if (an->requires_grad) {
          auto& g = an->grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i];
        }
        if (bn->requires_grad) {
          auto& g = bn->grad_buffer();
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
              g[j] += node.grad[static_cast<std::size_t>(i) * n + j];
        }
      });
}

template <typename S>
Tensor<S> slice_cols(const Tensor<S>& a, int c0, int len) {
  if (a.rank() != 2) throw DimensionError("slice_cols: expected rank-2 tensor");
  const int m = a.dim(0), n = a.dim(1);
  if (c0 < 0 || len <= 0 || c0 + len > n)
    throw DimensionError("slice_cols: range [" + std::to_string(c0) + "," +
                         std::to_string(c0 + len) + ") out of " + shape_str(a.shape()));
  std::vector<S> out(static_cast<std::size_t>(m) * len);
  MatMap<S>(out.data(), m, len) = a.mat().block(0, c0, m, len);
  auto an = a.node();
  return detail::make_op<S>(
      std::move(out), {m, len}, {a}, [an, m, n, c0, len](TensorNode<S>& node) {
        if (!an->requires_grad) return;
        detail::grad_mat(*an, m, n).block(0, c0, m, len) +=
            detail::out_grad(node, m, len);
      });
}

template <typename S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw ParameterError("concat_cols: no parts");
  const int m = parts[0].rows();
  int total = 0;
  for (const auto& p : parts) {
    if (p.rows() != m) throw DimensionError("concat_cols: row count mismatch");
    total += p.cols();
  }
  std::vector<S> out(static_cast<std::size_t>(m) * total);
  MatMap<S> o(out.data(), m, total);
  int at = 0;
  for (const auto& p : parts) {
    o.block(0, at, m, p.cols()) = p.mat();
    at += p.cols();
  }
  std::vector<int> widths;
  for (const auto& p : parts) widths.push_back(p.cols());
  std::vector<std::shared_ptr<TensorNode<S>>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return detail::make_op<S>(
      std::move(out), {m, total}, parts, [nodes, widths, m, total](TensorNode<S>& node) {
        auto g = detail::out_grad(node, m, total);
        int at = 0;
        for (std::size_t k = 0; k < nodes.size(); ++k) {
          if (nodes[k]->requires_grad)
            detail::grad_mat(*nodes[k], m, widths[k]) += g.block(0, at, m, widths[k]);
          at += widths[k];
        }
      });
}

template <typename S>
Tensor<S> row(const Tensor<S>& a, int i) {
  if (a.rank() != 2) throw DimensionError("row: expected rank-2 tensor");
  const int m = a.dim(0), n = a.dim(1);
  if (i < 0 || i >= m) throw DimensionError("row: index out of range");
  std::vector<S> out(a.value().begin() + static_cast<std::size_t>(i) * n,
                     a.value().begin() + static_cast<std::size_t>(i + 1) * n);
  auto an = a.node();
  return detail::make_op<S>(std::move(out), {n}, {a},
                            [an, i, n](TensorNode<S>& node) {
                              if (!an->requires_grad) return;
                              auto& g = an->grad_buffer();
                              for (int j = 0; j < n; ++j)
                                g[static_cast<std::size_t>(i) * n + j] += node.grad[j];
                            });
}

template <typename S>
Tensor<S> stack_rows(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw ParameterError("stack_rows: no parts");
  const int n = parts[0].cols();
  for (const auto& p : parts) {
    if (p.rows() != 1 || p.cols() != n)
      throw DimensionError("stack_rows: every part must be a single row of equal width");
  }
  const int m = static_cast<int>(parts.size());
  std::vector<S> out;
  out.reserve(static_cast<std::size_t>(m) * n);
  for (const auto& p : parts) out.insert(out.end(), p.value().begin(), p.value().end());
  std::vector<std::shared_ptr<TensorNode<S>>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return detail::make_op<S>(
      std::move(out), {m, n}, parts, [nodes, n](TensorNode<S>& node) {
        for (std::size_t k = 0; k < nodes.size(); ++k) {
          if (!nodes[k]->requires_grad) continue;
          auto& g = nodes[k]->grad_buffer();
          for (int j = 0; j < n; ++j) g[j] += node.grad[k * n + j];
        }
      });
}

// Mask-weighted mean over rows; the mask is a plain weight vector, not a
// differentiable input.
template <typename S>
Tensor<S> masked_mean_rows(const Tensor<S>& a, const std::vector<S>& mask) {
  if (a.rank() != 2) throw DimensionError("masked_mean_rows: expected rank-2 tensor");
  const int m = a.dim(0), n = a.dim(1);
  if (static_cast<int>(mask.size()) != m)
    throw DimensionError("masked_mean_rows: mask length does not match row count");
  S wsum = S(0);
  for (S w : mask) wsum += w;
  if (wsum <= S(0)) throw ParameterError("masked_mean_rows: mask weights sum to zero");
  std::vector<S> out(static_cast<std::size_t>(n), S(0));
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out[j] += a.value()[static_cast<std::size_t>(i) * n + j] * mask[i] / wsum;
  auto an = a.node();
  return detail::make_op<S>(
      std::move(out), {n}, {a}, [an, mask, wsum, m, n](TensorNode<S>& node) {
        if (!an->requires_grad) return;
        auto& g = an->grad_buffer();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j)
            g[static_cast<std::size_t>(i) * n + j] += node.grad[j] * mask[i] / wsum;
      });
}

template <typename S>
Tensor<S> embedding_rows(const Tensor<S>& table, const std::vector<int>& ids) {
  if (table.rank() != 2) throw DimensionError("embedding_rows: table must be rank-2");
  const int v = table.dim(0), h = table.dim(1);
  for (int id : ids)
    if (id < 0 || id >= v)
      throw InputError("token id " + std::to_string(id) + " out of vocabulary (size " +
                       std::to_string(v) + ")");
  const int m = static_cast<int>(ids.size());
  std::vector<S> out(static_cast<std::size_t>(m) * h);
  for (int i = 0; i < m; ++i)
    std::copy_n(table.value().begin() + static_cast<std::size_t>(ids[i]) * h, h,
                out.begin() + static_cast<std::size_t>(i) * h);
  auto tn = table.node();
  return detail::make_op<S>(
      std::move(out), {m, h}, {table}, [tn, ids, h](TensorNode<S>& node) {
        if (!tn->requires_grad) return;
        auto& g = tn->grad_buffer();
        for (std::size_t i = 0; i < ids.size(); ++i)
          for (int j = 0; j < h; ++j)
            g[static_cast<std::size_t>(ids[i]) * h + j] += node.grad[i * h + j];
      });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename S>
Tensor<S> sum(const Tensor<S>& a) {
  S total = S(0);
  for (S v : a.value()) total += v;
  auto an = a.node();
  return detail::make_op<S>({total}, {1}, {a}, [an](TensorNode<S>& node) {
    if (!an->requires_grad) return;
    auto& g = an->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[0];
  });
}

template <typename S>
Tensor<S> dot(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 1 || b.rank() != 1 || a.numel() != b.numel())
    throw DimensionError("dot: expected equal-length vectors, got " +
                         shape_str(a.shape()) + " and " + shape_str(b.shape()));
  S total = S(0);
  for (std::size_t i = 0; i < a.value().size(); ++i) total += a.value()[i] * b.value()[i];
  auto an = a.node(), bn = b.node();
  return detail::make_op<S>({total}, {1}, {a, b}, [an, bn](TensorNode<S>& node) {
    const S g0 = node.grad[0];
    if (an->requires_grad) {
      auto& g = an->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += g0 * bn->value[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += g0 * an->value[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Normalization and probability

// Row-wise temperature softmax with max subtraction. A rank-1 input is one
// row.
template <typename S>
Tensor<S> softmax(const Tensor<S>& a, S temperature = S(1)) {
  if (temperature <= S(0))
    throw ParameterError("softmax: temperature must be positive");
  const int m = a.rows(), n = a.cols();
  if (n < 1) throw DimensionError("softmax: empty input");
  std::vector<S> out(a.value().size());
  for (int i = 0; i < m; ++i) {
    const S* x = a.value().data() + static_cast<std::size_t>(i) * n;
    S* p = out.data() + static_cast<std::size_t>(i) * n;
    S mx = x[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, x[j]);
    S z = S(0);
    for (int j = 0; j < n; ++j) {
      p[j] = std::exp((x[j] - mx) / temperature);
      z += p[j];
    }
    for (int j = 0; j < n; ++j) p[j] /= z;
  }
  auto an = a.node();
  return detail::make_op<S>(
      std::move(out), a.shape(), {a}, [an, m, n, temperature](TensorNode<S>& node) {
        if (!an->requires_grad) return;
        auto& g = an->grad_buffer();
        for (int i = 0; i < m; ++i) {
          const S* p = node.value.data() + static_cast<std::size_t>(i) * n;
          const S* gy = node.grad.data() + static_cast<std::size_t>(i) * n;
          S dotpg = S(0);
          for (int j = 0; j < n; ++j) dotpg += p[j] * gy[j];
          for (int j = 0; j < n; ++j)
            g[static_cast<std::size_t>(i) * n + j] += p[j] * (gy[j] - dotpg) / temperature;
        }
      });
}

template <typename S>
Tensor<S> log_softmax(const Tensor<S>& a, S temperature = S(1)) {
  if (temperature <= S(0))
    throw ParameterError("log_softmax: temperature must be positive");
  const int m = a.rows(), n = a.cols();
  std::vector<S> out(a.value().size());
  for (int i = 0; i < m; ++i) {
    const S* x = a.value().data() + static_cast<std::size_t>(i) * n;
    S* lp = out.data() + static_cast<std::size_t>(i) * n;
    S mx = x[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, x[j]);
    S z = S(0);
    for (int j = 0; j < n; ++j) z += std::exp((x[j] - mx) / temperature);
    const S logz = std::log(z);
    for (int j = 0; j < n; ++j) lp[j] = (x[j] - mx) / temperature - logz;
  }
  auto an = a.node();
  return detail::make_op<S>(
      std::move(out), a.shape(), {a}, [an, m, n, temperature](TensorNode<S>& node) {
        if (!an->requires_grad) return;
        auto& g = an->grad_buffer();
        for (int i = 0; i < m; ++i) {
          const S* lp = node.value.data() + static_cast<std::size_t>(i) * n;
          const S* gy = node.grad.data() + static_cast<std::size_t>(i) * n;
          S gsum = S(0);
          for (int j = 0; j < n; ++j) gsum += gy[j];
          for (int j = 0; j < n; ++j)
            g[static_cast<std::size_t>(i) * n + j] +=
                (gy[j] - std::exp(lp[j]) * gsum) / temperature;
        }
      });
}

// Row-wise layer normalization with affine parameters; the variance uses
// denominator n.
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma,
                     const Tensor<S>& beta, S epsilon) {
  if (epsilon <= S(0)) throw ParameterError("layer_norm: epsilon must be positive");
  const int m = x.rows(), n = x.cols();
  if (gamma.numel() != n || beta.numel() != n)
    throw DimensionError("layer_norm: gamma/beta length must match feature width " +
                         std::to_string(n));
  std::vector<S> out(x.value().size());
  auto xhat = std::make_shared<std::vector<S>>(x.value().size());
  auto inv_sigma = std::make_shared<std::vector<S>>(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    const S* xi = x.value().data() + static_cast<std::size_t>(i) * n;
    S mean = S(0);
    for (int j = 0; j < n; ++j) mean += xi[j];
    mean /= S(n);
    S var = S(0);
    for (int j = 0; j < n; ++j) var += (xi[j] - mean) * (xi[j] - mean);
    var /= S(n);
    const S is = S(1) / std::sqrt(var + epsilon);
    (*inv_sigma)[i] = is;
    for (int j = 0; j < n; ++j) {
      const S xh = (xi[j] - mean) * is;
      (*xhat)[static_cast<std::size_t>(i) * n + j] = xh;
      out[static_cast<std::size_t>(i) * n + j] = xh * gamma.value()[j] + beta.value()[j];
    }
  }
  auto xn = x.node(), gn = gamma.node(), bn = beta.node();
  return detail::make_op<S>(
      std::move(out), x.shape(), {x, gamma, beta},
      [xn, gn, bn, xhat, inv_sigma, m, n](TensorNode<S>& node) {
        for (int i = 0; i < m; ++i) {
          const S* gy = node.grad.data() + static_cast<std::size_t>(i) * n;
          const S* xh = xhat->data() + static_cast<std::size_t>(i) * n;
          if (gn->requires_grad) {
            auto& gg = gn->grad_buffer();
            for (int j = 0; j < n; ++j) gg[j] += gy[j] * xh[j];
          }
          if (bn->requires_grad) {
            auto& gb = bn->grad_buffer();
            for (int j = 0; j < n; ++j) gb[j] += gy[j];
          }
          if (xn->requires_grad) {
            auto& gx = xn->grad_buffer();
            S mean_gxh = S(0), mean_gxh_xh = S(0);
            for (int j = 0; j < n; ++j) {
              const S gxh = gy[j] * gn->value[j];
              mean_gxh += gxh;
              mean_gxh_xh += gxh * xh[j];
            }
            mean_gxh /= S(n);
            mean_gxh_xh /= S(n);
            for (int j = 0; j < n; ++j) {
              const S gxh = gy[j] * gn->value[j];
              gx[static_cast<std::size_t>(i) * n + j] +=
                  (gxh - mean_gxh - xh[j] * mean_gxh_xh) * (*inv_sigma)[i];
            }
          }
        }
      });
}

template <typename S>
Tensor<S> l2_normalize_rows(const Tensor<S>& a) {
  const int m = a.rows(), n = a.cols();
  std::vector<S> out(a.value().size());
  auto norms = std::make_shared<std::vector<S>>(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    const S* x = a.value().data() + static_cast<std::size_t>(i) * n;
    S sq = S(0);
    for (int j = 0; j < n; ++j) sq += x[j] * x[j];
    if (sq == S(0)) throw ParameterError("l2_normalize_rows: zero-norm row");
    const S nrm = std::sqrt(sq);
    (*norms)[i] = nrm;
    for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(i) * n + j] = x[j] / nrm;
  }
  auto an = a.node();
  return detail::make_op<S>(
      std::move(out), a.shape(), {a}, [an, norms, m, n](TensorNode<S>& node) {
        if (!an->requires_grad) return;
        auto& g = an->grad_buffer();
        for (int i = 0; i < m; ++i) {
          const S* y = node.value.data() + static_cast<std::size_t>(i) * n;
          const S* gy = node.grad.data() + static_cast<std::size_t>(i) * n;
          S gy_dot_y = S(0);
          for (int j = 0; j < n; ++j) gy_dot_y += gy[j] * y[j];
          for (int j = 0; j < n; ++j)
            g[static_cast<std::size_t>(i) * n + j] +=
                (gy[j] - y[j] * gy_dot_y) / (*norms)[i];
        }
      });
}

// Mean cross-entropy of row-wise temperature softmax against target columns.
template <typename S>
Tensor<S> softmax_cross_entropy(const Tensor<S>& logits,
                                const std::vector<int>& targets,
                                S temperature = S(1)) {
  if (temperature <= S(0))
    throw ParameterError("softmax_cross_entropy: temperature must be positive");
  if (logits.rank() != 2)
    throw DimensionError("softmax_cross_entropy: logits must be rank-2");
  const int m = logits.dim(0), n = logits.dim(1);
  if (static_cast<int>(targets.size()) != m)
    throw DimensionError("softmax_cross_entropy: one target per row required");
  for (int t : targets)
    if (t < 0 || t >= n) throw ParameterError("softmax_cross_entropy: target out of range");
  auto probs = std::make_shared<std::vector<S>>(logits.value().size());
  S loss = S(0);
  for (int i = 0; i < m; ++i) {
    const S* x = logits.value().data() + static_cast<std::size_t>(i) * n;
    S* p = probs->data() + static_cast<std::size_t>(i) * n;
    S mx = x[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, x[j]);
    S z = S(0);
    for (int j = 0; j < n; ++j) {
      p[j] = std::exp((x[j] - mx) / temperature);
      z += p[j];
    }
    for (int j = 0; j < n; ++j) p[j] /= z;
    loss -= (x[targets[i]] - mx) / temperature - std::log(z);
  }
  loss /= S(m);
  auto ln = logits.node();
  return detail::make_op<S>(
      {loss}, {1}, {logits}, [ln, probs, targets, m, n, temperature](TensorNode<S>& node) {
        if (!ln->requires_grad) return;
        const S g0 = node.grad[0] / (S(m) * temperature);
        auto& g = ln->grad_buffer();
        for (int i = 0; i < m; ++i) {
          const S* p = probs->data() + static_cast<std::size_t>(i) * n;
          for (int j = 0; j < n; ++j)
            g[static_cast<std::size_t>(i) * n + j] +=
                g0 * (p[j] - (j == targets[i] ? S(1) : S(0)));
        }
      });
}

// ---------------------------------------------------------------------------
// Plain (non-tape) numeric utilities

// KL divergence between two probability vectors, with the 0*ln(0) = 0
// convention. A zero in q against positive mass in p is a hard error: after
// a softmax that situation is unreachable, so it signals an upstream bug.
template <typename S>
S kl_divergence(const std::vector<S>& p, const std::vector<S>& q) {
  if (p.size() != q.size())
    throw DimensionError("kl_divergence: length mismatch " + std::to_string(p.size()) +
                         " vs " + std::to_string(q.size()));
  if (p.empty()) throw DimensionError("kl_divergence: empty input");
  S sp = S(0), sq = S(0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    sp += p[i];
    sq += q[i];
  }
  if (std::abs(sp - S(1)) > S(1e-6) || std::abs(sq - S(1)) > S(1e-6))
    throw ParameterError("kl_divergence: inputs must sum to 1 within 1e-6");
  S total = S(0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == S(0)) continue;
    if (q[i] == S(0))
      throw NumericError("kl_divergence undefined: q is zero where p has mass at index " +
                         std::to_string(i));
    total += p[i] * std::log(p[i] / q[i]);
  }
  return std::max(total, S(0));
}

template <typename S>
bool all_finite(const std::vector<S>& v) {
  for (S x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace kale
