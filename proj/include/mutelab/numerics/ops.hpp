#pragma once

// Differentiable ops over BasicTensor. Matrices are rank-2 row-major; "rows"
// ops act along the last axis of a rank-2 tensor. All reductions run in a fixed
// sequential order.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include "mutelab/numerics/blas.hpp"
#include "mutelab/numerics/tensor.hpp"

namespace mutelab {

namespace detail {

template <typename T>
void require_matrix(const BasicTensor<T>& t, const char* op) {
    expects(t.rank() == 2, std::string(op) + ": expected rank-2 tensor, got " + shape_str(t.shape()));
}

template <typename T>
void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op) {
    expects(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                        " vs " + shape_str(b.shape()));
}

}  // namespace detail

// ---- linear algebra -------------------------------------------------------

// [m,k] x [k,n] -> [m,n]
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    detail::require_matrix(a, "matmul");
    detail::require_matrix(b, "matmul");
    const int m = static_cast<int>(a.dim(0));
    const int k = static_cast<int>(a.dim(1));
    const int n = static_cast<int>(b.dim(1));
    expects(b.dim(0) == a.dim(1), "matmul: inner dimensions differ " + shape_str(a.shape()) + " x " +
                                      shape_str(b.shape()));
    std::vector<T> out(static_cast<std::size_t>(m) * n, T(0));
    if (m && n && k) {
        blas::gemm(false, false, m, n, k, T(1), a.data().data(), k, b.data().data(), n, T(0),
                   out.data(), n);
    }
    return detail::make_result<T>(
        {a.dim(0), b.dim(1)}, std::move(out), {a, b},
        [m, n, k](const Node<T>& self, std::span<const T> g, GradAccess<T>& grads) {
            const auto& av = self.parents[0]->value;
            const auto& bv = self.parents[1]->value;
            if (auto ga = grads[0]; !ga.empty() && m && k && n) {
                blas::gemm(false, true, m, k, n, T(1), g.data(), n, bv.data(), n, T(1), ga.data(), k);
            }
            if (auto gb = grads[1]; !gb.empty() && m && k && n) {
                blas::gemm(true, false, k, n, m, T(1), av.data(), k, g.data(), n, T(1), gb.data(), n);
            }
        });
}

// [m,k] x [n,k]^T -> [m,n]
template <typename T>
BasicTensor<T> matmul_nt(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    detail::require_matrix(a, "matmul_nt");
    detail::require_matrix(b, "matmul_nt");
    const int m = static_cast<int>(a.dim(0));
    const int k = static_cast<int>(a.dim(1));
    const int n = static_cast<int>(b.dim(0));
    expects(b.dim(1) == a.dim(1), "matmul_nt: inner dimensions differ " + shape_str(a.shape()) +
                                      " x " + shape_str(b.shape()) + "^T");
    std::vector<T> out(static_cast<std::size_t>(m) * n, T(0));
    if (m && n && k) {
        blas::gemm(false, true, m, n, k, T(1), a.data().data(), k, b.data().data(), k, T(0),
                   out.data(), n);
    }
    return detail::make_result<T>(
        {a.dim(0), b.dim(0)}, std::move(out), {a, b},
        [m, n, k](const Node<T>& self, std::span<const T> g, GradAccess<T>& grads) {
            const auto& av = self.parents[0]->value;
            const auto& bv = self.parents[1]->value;
            if (auto ga = grads[0]; !ga.empty() && m && k && n) {
                blas::gemm(false, false, m, k, n, T(1), g.data(), n, bv.data(), k, T(1), ga.data(), k);
            }
            if (auto gb = grads[1]; !gb.empty() && m && k && n) {
                blas::gemm(true, false, n, k, m, T(1), g.data(), n, av.data(), k, T(1), gb.data(), k);
            }
        });
}

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& a) {
    detail::require_matrix(a, "transpose");
    const std::size_t r = a.dim(0), c = a.dim(1);
    std::vector<T> out(r * c);
    const auto in = a.data();
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
            out[j * r + i] = in[i * c + j];
        }
    }
    return detail::make_result<T>({c, r}, std::move(out), {a},
                                  [r, c](const Node<T>&, std::span<const T> g, GradAccess<T>& grads) {
                                      auto ga = grads[0];
                                      for (std::size_t i = 0; i < r; ++i) {
                                          for (std::size_t j = 0; j < c; ++j) {
                                              ga[i * c + j] += g[j * r + i];
                                          }
                                      }
                                  });
}

// ---- elementwise ----------------------------------------------------------

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<T> out(a.numel());
    const auto x = a.data(), y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = x[i] + y[i];
    }
    return detail::make_result<T>(a.shape(), std::move(out), {a, b},
                                  [](const Node<T>&, std::span<const T> g, GradAccess<T>& grads) {
                                      for (std::size_t p = 0; p < 2; ++p) {
                                          if (auto gp = grads[p]; !gp.empty()) {
                                              for (std::size_t i = 0; i < g.size(); ++i) {
                                                  gp[i] += g[i];
                                              }
                                          }
                                      }
                                  });
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    detail::require_same_shape(a, b, "sub");
    std::vector<T> out(a.numel());
    const auto x = a.data(), y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = x[i] - y[i];
    }
    return detail::make_result<T>(a.shape(), std::move(out), {a, b},
                                  [](const Node<T>&, std::span<const T> g, GradAccess<T>& grads) {
                                      if (auto ga = grads[0]; !ga.empty()) {
                                          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                                      }
                                      if (auto gb = grads[1]; !gb.empty()) {
                                          for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                                      }
                                  });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    detail::require_same_shape(a, b, "mul");
    std::vector<T> out(a.numel());
    const auto x = a.data(), y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = x[i] * y[i];
    }
    return detail::make_result<T>(a.shape(), std::move(out), {a, b},
                                  [](const Node<T>& self, std::span<const T> g, GradAccess<T>& grads) {
                                      const auto& x = self.parents[0]->value;
                                      const auto& y = self.parents[1]->value;
                                      if (auto ga = grads[0]; !ga.empty()) {
                                          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
                                      }
                                      if (auto gb = grads[1]; !gb.empty()) {
                                          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
                                      }
                                  });
}

template <typename T>
BasicTensor<T> square(const BasicTensor<T>& a) {
    std::vector<T> out(a.numel());
    const auto x = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = x[i] * x[i];
    }
    return detail::make_result<T>(a.shape(), std::move(out), {a},
                                  [](const Node<T>& self, std::span<const T> g, GradAccess<T>& grads) {
                                      const auto& x = self.parents[0]->value;
                                      auto ga = grads[0];
                                      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += T(2) * x[i] * g[i];
                                  });
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor) {
    std::vector<T> out(a.numel());
    const auto x = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = x[i] * factor;
    }
    return detail::make_result<T>(a.shape(), std::move(out), {a},
                                  [factor](const Node<T>&, std::span<const T> g, GradAccess<T>& grads) {
                                      auto ga = grads[0];
                                      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
                                  });
}

template <typename T>
BasicTensor<T> add_scalar(const BasicTensor<T>& a, T offset) {
    std::vector<T> out(a.numel());
    const auto x = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = x[i] + offset;
    }
    return detail::make_result<T>(a.shape(), std::move(out), {a},
                                  [](const Node<T>&, std::span<const T> g, GradAccess<T>& grads) {
                                      auto ga = grads[0];
                                      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                                  });
}

// [m,n] + [n] broadcast over rows.
template <typename T>
BasicTensor<T> add_row(const BasicTensor<T>& a, const BasicTensor<T>& bias) {
    detail::require_matrix(a, "add_row");
    const std::size_t m = a.dim(0), n = a.dim(1);
    expects(bias.numel() == n, "add_row: bias length " + std::to_string(bias.numel()) +
                                   " does not match row width " + std::to_string(n));
    std::vector<T> out(m * n);
    const auto x = a.data(), b = bias.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out[i * n + j] = x[i * n + j] + b[j];
        }
    }
    return detail::make_result<T>(a.shape(), std::move(out), {a, bias},
                                  [m, n](const Node<T>&, std::span<const T> g, GradAccess<T>& grads) {
                                      if (auto ga = grads[0]; !ga.empty()) {
                                          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                                      }
                                      if (auto gb = grads[1]; !gb.empty()) {
                                          for (std::size_t i = 0; i < m; ++i) {
                                              for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
                                          }
                                      }
                                  });
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& a) {
    std::vector<T> out(a.numel());
    const auto x = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = x[i] > T(0) ? x[i] : T(0);
    }
    return detail::make_result<T>(a.shape(), std::move(out), {a},
                                  [](const Node<T>& self, std::span<const T> g, GradAccess<T>& grads) {
                                      const auto& x = self.parents[0]->value;
                                      auto ga = grads[0];
                                      for (std::size_t i = 0; i < g.size(); ++i) {
                                          if (x[i] > T(0)) ga[i] += g[i];
                                      }
                                  });
}

// Exact (erf) GELU.
template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& a) {
    std::vector<T> out(a.numel());
    const auto x = a.data();
    const T inv_sqrt2 = T(1) / std::sqrt(T(2));
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = T(0.5) * x[i] * (T(1) + std::erf(x[i] * inv_sqrt2));
    }
    return detail::make_result<T>(
        a.shape(), std::move(out), {a},
        [inv_sqrt2](const Node<T>& self, std::span<const T> g, GradAccess<T>& grads) {
            const auto& x = self.parents[0]->value;
            auto ga = grads[0];
            const T inv_sqrt_2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
            for (std::size_t i = 0; i < g.size(); ++i) {
                const T cdf = T(0.5) * (T(1) + std::erf(x[i] * inv_sqrt2));
                const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * x[i] * x[i]);
                ga[i] += g[i] * (cdf + x[i] * pdf);
            }
        });
}

// log10(max(a, floor)); the gradient is zero wherever the floor is active.
template <typename T>
BasicTensor<T> log10_floor(const BasicTensor<T>& a, T floor) {
    std::vector<T> out(a.numel());
    const auto x = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = std::log10(std::max(x[i], floor));
    }
    return detail::make_result<T>(
        a.shape(), std::move(out), {a},
        [floor](const Node<T>& self, std::span<const T> g, GradAccess<T>& grads) {
            const auto& x = self.parents[0]->value;
            auto ga = grads[0];
            const T inv_ln10 = T(1) / std::numbers::ln10_v<T>;
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (x[i] > floor) ga[i] += g[i] * inv_ln10 / x[i];
            }
        });
}

// Natural log; input must be positive.
template <typename T>
BasicTensor<T> log(const BasicTensor<T>& a) {
    std::vector<T> out(a.numel());
    const auto x = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = std::log(x[i]);
    }
    return detail::make_result<T>(a.shape(), std::move(out), {a},
                                  [](const Node<T>& self, std::span<const T> g, GradAccess<T>& grads) {
                                      const auto& x = self.parents[0]->value;
                                      auto ga = grads[0];
                                      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / x[i];
                                  });
}

// ---- reductions -----------------------------------------------------------

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& a) {
    T total = T(0);
    for (T v : a.data()) {
        total += v;
    }
    return detail::make_result<T>({}, {total}, {a},
                                  [](const Node<T>&, std::span<const T> g, GradAccess<T>& grads) {
                                      auto ga = grads[0];
                                      for (auto& v : ga) v += g[0];
                                  });
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& a) {
    expects(a.numel() > 0, "mean of empty tensor");
    return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

// Sum of a list of scalars in list order.
template <typename T>
BasicTensor<T> sum_scalars(const std::vector<BasicTensor<T>>& terms) {
    expects(!terms.empty(), "sum_scalars: empty list");
    BasicTensor<T> total = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) {
        total = add(total, terms[i]);
    }
    return total;
}

// ---- softmax family -------------------------------------------------------

template <typename T>
BasicTensor<T> softmax_rows(const BasicTensor<T>& a) {
    detail::require_matrix(a, "softmax_rows");
    const std::size_t m = a.dim(0), n = a.dim(1);
    std::vector<T> out(m * n);
    const auto x = a.data();
    for (std::size_t i = 0; i < m; ++i) {
        const T* row = x.data() + i * n;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const T e = std::exp(row[j] - mx);
            out[i * n + j] = e;
            z += static_cast<double>(e);
        }
        const T inv = static_cast<T>(1.0 / z);
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] *= inv;
    }
    return detail::make_result<T>(a.shape(), std::move(out), {a},
                                  [m, n](const Node<T>& self, std::span<const T> g, GradAccess<T>& grads) {
                                      const auto& y = self.value;
                                      auto ga = grads[0];
                                      for (std::size_t i = 0; i < m; ++i) {
                                          T dot = T(0);
                                          for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
                                          for (std::size_t j = 0; j < n; ++j) {
                                              ga[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
                                          }
                                      }
                                  });
}

template <typename T>
BasicTensor<T> log_softmax_rows(const BasicTensor<T>& a) {
    detail::require_matrix(a, "log_softmax_rows");
    const std::size_t m = a.dim(0), n = a.dim(1);
    std::vector<T> out(m * n);
    const auto x = a.data();
    for (std::size_t i = 0; i < m; ++i) {
        const T* row = x.data() + i * n;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) z += std::exp(static_cast<double>(row[j] - mx));
        const T lse = mx + static_cast<T>(std::log(z));
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = row[j] - lse;
    }
    return detail::make_result<T>(a.shape(), std::move(out), {a},
                                  [m, n](const Node<T>& self, std::span<const T> g, GradAccess<T>& grads) {
                                      const auto& y = self.value;
                                      auto ga = grads[0];
                                      for (std::size_t i = 0; i < m; ++i) {
                                          T gs = T(0);
                                          for (std::size_t j = 0; j < n; ++j) gs += g[i * n + j];
                                          for (std::size_t j = 0; j < n; ++j) {
                                              ga[i * n + j] += g[i * n + j] - std::exp(y[i * n + j]) * gs;
                                          }
                                      }
                                  });
}

// Mean negative log-likelihood of targets[i] under softmax(logits row i).
template <typename T>
BasicTensor<T> cross_entropy_rows(const BasicTensor<T>& logits, std::span<const int> targets) {
    detail::require_matrix(logits, "cross_entropy_rows");
    const std::size_t m = logits.dim(0), n = logits.dim(1);
    expects(targets.size() == m && m > 0, "cross_entropy_rows: need one target per row");
    const auto x = logits.data();
    std::vector<T> probs(m * n);
    double loss = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        expects(targets[i] >= 0 && static_cast<std::size_t>(targets[i]) < n,
                "cross_entropy_rows: target out of range");
        const T* row = x.data() + i * n;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) z += std::exp(static_cast<double>(row[j] - mx));
        for (std::size_t j = 0; j < n; ++j) {
            probs[i * n + j] = static_cast<T>(std::exp(static_cast<double>(row[j] - mx)) / z);
        }
        loss -= static_cast<double>(row[targets[i]] - mx) - std::log(z);
    }
    std::vector<int> tgt(targets.begin(), targets.end());
    return detail::make_result<T>(
        {}, {static_cast<T>(loss / static_cast<double>(m))}, {logits},
        [m, n, probs = std::move(probs), tgt = std::move(tgt)](const Node<T>&, std::span<const T> g,
                                                              GradAccess<T>& grads) {
            auto ga = grads[0];
            const T w = g[0] / static_cast<T>(m);
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += w * probs[i * n + j];
                ga[i * n + static_cast<std::size_t>(tgt[i])] -= w;
            }
        });
}

// Row-wise layer normalization with affine gain and bias.
template <typename T>
BasicTensor<T> layer_norm_rows(const BasicTensor<T>& a, const BasicTensor<T>& gain,
                               const BasicTensor<T>& bias, T eps = T(1e-5)) {
    detail::require_matrix(a, "layer_norm_rows");
    const std::size_t m = a.dim(0), n = a.dim(1);
    expects(gain.numel() == n && bias.numel() == n, "layer_norm_rows: affine size mismatch");
    std::vector<T> out(m * n), xhat(m * n), inv_std(m);
    const auto x = a.data(), gw = gain.data(), bw = bias.data();
    for (std::size_t i = 0; i < m; ++i) {
        const T* row = x.data() + i * n;
        T mu = T(0);
        for (std::size_t j = 0; j < n; ++j) mu += row[j];
        mu /= static_cast<T>(n);
        T var = T(0);
        for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<T>(n);
        inv_std[i] = T(1) / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) {
            xhat[i * n + j] = (row[j] - mu) * inv_std[i];
            out[i * n + j] = xhat[i * n + j] * gw[j] + bw[j];
        }
    }
    return detail::make_result<T>(
        a.shape(), std::move(out), {a, gain, bias},
        [m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](
            const Node<T>& self, std::span<const T> g, GradAccess<T>& grads) {
            const auto& gw = self.parents[1]->value;
            if (auto ga = grads[0]; !ga.empty()) {
                for (std::size_t i = 0; i < m; ++i) {
                    T s1 = T(0), s2 = T(0);
                    for (std::size_t j = 0; j < n; ++j) {
                        const T gx = g[i * n + j] * gw[j];
                        s1 += gx;
                        s2 += gx * xhat[i * n + j];
                    }
                    s1 /= static_cast<T>(n);
                    s2 /= static_cast<T>(n);
                    for (std::size_t j = 0; j < n; ++j) {
                        const T gx = g[i * n + j] * gw[j];
                        ga[i * n + j] += inv_std[i] * (gx - s1 - xhat[i * n + j] * s2);
                    }
                }
            }
            if (auto gg = grads[1]; !gg.empty()) {
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) gg[j] += g[i * n + j] * xhat[i * n + j];
            }
            if (auto gb = grads[2]; !gb.empty()) {
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
            }
        });
}

// ---- indexing and reshaping ----------------------------------------------

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape) {
    expects(shape_numel(shape) == a.numel(), "reshape: element count differs");
    std::vector<T> out(a.data().begin(), a.data().end());
    return detail::make_result<T>(std::move(shape), std::move(out), {a},
                                  [](const Node<T>&, std::span<const T> g, GradAccess<T>& grads) {
                                      auto ga = grads[0];
                                      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                                  });
}

// Single element as a scalar.
template <typename T>
BasicTensor<T> pick(const BasicTensor<T>& a, std::size_t flat_index) {
    expects(flat_index < a.numel(), "pick: index out of range");
    return detail::make_result<T>({}, {a.data()[flat_index]}, {a},
                                  [flat_index](const Node<T>&, std::span<const T> g, GradAccess<T>& grads) {
                                      grads[0][flat_index] += g[0];
                                  });
}

// Rows [begin, end) of a rank-2 tensor, or elements [begin, end) of a rank-1 tensor.
template <typename T>
BasicTensor<T> slice_rows(const BasicTensor<T>& a, std::size_t begin, std::size_t end) {
    expects(a.rank() == 1 || a.rank() == 2, "slice_rows: rank must be 1 or 2");
    expects(begin <= end && end <= a.dim(0), "slice_rows: range out of bounds");
    const std::size_t width = a.rank() == 2 ? a.dim(1) : 1;
    std::vector<T> out(a.data().begin() + static_cast<std::ptrdiff_t>(begin * width),
                       a.data().begin() + static_cast<std::ptrdiff_t>(end * width));
    Shape shape = a.shape();
    shape[0] = end - begin;
    return detail::make_result<T>(std::move(shape), std::move(out), {a},
                                  [offset = begin * width](const Node<T>&, std::span<const T> g,
                                                           GradAccess<T>& grads) {
                                      auto ga = grads[0];
                                      for (std::size_t i = 0; i < g.size(); ++i) ga[offset + i] += g[i];
                                  });
}

template <typename T>
BasicTensor<T> slice_cols(const BasicTensor<T>& a, std::size_t begin, std::size_t end) {
    detail::require_matrix(a, "slice_cols");
    const std::size_t m = a.dim(0), n = a.dim(1);
    expects(begin <= end && end <= n, "slice_cols: range out of bounds");
    const std::size_t w = end - begin;
    std::vector<T> out(m * w);
    const auto x = a.data();
    for (std::size_t i = 0; i < m; ++i) {
        std::copy_n(x.data() + i * n + begin, w, out.data() + i * w);
    }
    return detail::make_result<T>({m, w}, std::move(out), {a},
                                  [m, n, w, begin](const Node<T>&, std::span<const T> g, GradAccess<T>& grads) {
                                      auto ga = grads[0];
                                      for (std::size_t i = 0; i < m; ++i)
                                          for (std::size_t j = 0; j < w; ++j) ga[i * n + begin + j] += g[i * w + j];
                                  });
}

// Concatenation along axis 0; trailing dimensions must agree.
template <typename T>
BasicTensor<T> concat_rows(const std::vector<BasicTensor<T>>& parts) {
    expects(!parts.empty(), "concat_rows: no inputs");
    Shape shape = parts.front().shape();
    expects(!shape.empty(), "concat_rows: scalars cannot be concatenated");
    std::size_t rows = 0;
    std::vector<std::size_t> offsets;
    for (const auto& p : parts) {
        expects(p.rank() == shape.size() &&
                    std::equal(p.shape().begin() + 1, p.shape().end(), shape.begin() + 1),
                "concat_rows: trailing shape mismatch");
        offsets.push_back(0);
        rows += p.dim(0);
    }
    std::vector<T> out;
    out.reserve(shape_numel(shape) / std::max<std::size_t>(shape[0], 1) * rows);
    std::size_t pos = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        offsets[i] = pos;
        out.insert(out.end(), parts[i].data().begin(), parts[i].data().end());
        pos += parts[i].numel();
    }
    shape[0] = rows;
    return detail::make_result<T>(std::move(shape), std::move(out), parts,
                                  [offsets](const Node<T>& self, std::span<const T> g, GradAccess<T>& grads) {
                                      for (std::size_t p = 0; p < offsets.size(); ++p) {
                                          auto gp = grads[p];
                                          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offsets[p] + i];
                                      }
                                      (void)self;
                                  });
}

// Concatenation of rank-2 tensors along axis 1.
template <typename T>
BasicTensor<T> concat_cols(const std::vector<BasicTensor<T>>& parts) {
    expects(!parts.empty(), "concat_cols: no inputs");
    const std::size_t m = parts.front().dim(0);
    std::vector<std::size_t> widths, starts;
    std::size_t n = 0;
    for (const auto& p : parts) {
        detail::require_matrix(p, "concat_cols");
        expects(p.dim(0) == m, "concat_cols: row count mismatch");
        starts.push_back(n);
        widths.push_back(p.dim(1));
        n += p.dim(1);
    }
    std::vector<T> out(m * n);
    for (std::size_t p = 0; p < parts.size(); ++p) {
        const auto x = parts[p].data();
        for (std::size_t i = 0; i < m; ++i) {
            std::copy_n(x.data() + i * widths[p], widths[p], out.data() + i * n + starts[p]);
        }
    }
    return detail::make_result<T>(
        {m, n}, std::move(out), parts,
        [m, n, widths, starts](const Node<T>&, std::span<const T> g, GradAccess<T>& grads) {
            for (std::size_t p = 0; p < widths.size(); ++p) {
                auto gp = grads[p];
                if (gp.empty()) continue;
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < widths[p]; ++j) gp[i * widths[p] + j] += g[i * n + starts[p] + j];
            }
        });
}

// Rows of table selected by ids: [V,d] -> [ids.size(), d].
template <typename T>
BasicTensor<T> embedding(const BasicTensor<T>& table, std::span<const int> ids) {
    detail::require_matrix(table, "embedding");
    const std::size_t v = table.dim(0), d = table.dim(1);
    std::vector<T> out(ids.size() * d);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        expects(ids[i] >= 0 && static_cast<std::size_t>(ids[i]) < v,
                "embedding: token id " + std::to_string(ids[i]) + " out of range");
        std::copy_n(table.data().data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
    }
    std::vector<int> idx(ids.begin(), ids.end());
    return detail::make_result<T>({ids.size(), d}, std::move(out), {table},
                                  [d, idx = std::move(idx)](const Node<T>&, std::span<const T> g,
                                                            GradAccess<T>& grads) {
                                      auto ga = grads[0];
                                      for (std::size_t i = 0; i < idx.size(); ++i)
                                          for (std::size_t j = 0; j < d; ++j)
                                              ga[static_cast<std::size_t>(idx[i]) * d + j] += g[i * d + j];
                                  });
}

// Sliding windows over axis 0. A rank-1 input is treated as [N,1]. The input
// is zero-padded by `pad` rows on both ends; output row f holds input rows
// [f*stride - pad, f*stride - pad + width) flattened, so the result is
// [F, width*C] with F = (rows + 2*pad - width)/stride + 1.
template <typename T>
BasicTensor<T> frames(const BasicTensor<T>& a, std::size_t width, std::size_t stride, std::size_t pad = 0) {
    expects(a.rank() == 1 || a.rank() == 2, "frames: rank must be 1 or 2");
    expects(width > 0 && stride > 0, "frames: width and stride must be positive");
    const std::size_t rows = a.dim(0);
    const std::size_t c = a.rank() == 2 ? a.dim(1) : 1;
    expects(rows + 2 * pad >= width, "frames: input shorter than one window");
    const std::size_t count = (rows + 2 * pad - width) / stride + 1;
    std::vector<T> out(count * width * c, T(0));
    const auto x = a.data();
    for (std::size_t f = 0; f < count; ++f) {
        for (std::size_t w = 0; w < width; ++w) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(f * stride + w) - static_cast<std::ptrdiff_t>(pad);
            if (src < 0 || static_cast<std::size_t>(src) >= rows) continue;
            std::copy_n(x.data() + static_cast<std::size_t>(src) * c, c, out.data() + (f * width + w) * c);
        }
    }
    return detail::make_result<T>(
        {count, width * c}, std::move(out), {a},
        [count, width, stride, pad, rows, c](const Node<T>&, std::span<const T> g, GradAccess<T>& grads) {
            auto ga = grads[0];
            for (std::size_t f = 0; f < count; ++f) {
                for (std::size_t w = 0; w < width; ++w) {
                    const std::ptrdiff_t src =
                        static_cast<std::ptrdiff_t>(f * stride + w) - static_cast<std::ptrdiff_t>(pad);
                    if (src < 0 || static_cast<std::size_t>(src) >= rows) continue;
                    const T* gs = g.data() + (f * width + w) * c;
                    T* gd = ga.data() + static_cast<std::size_t>(src) * c;
                    for (std::size_t k = 0; k < c; ++k) gd[k] += gs[k];
                }
            }
        });
}

}  // namespace mutelab
