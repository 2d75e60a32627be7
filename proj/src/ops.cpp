#include "roads/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace roads::ops {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using CMatMap = Eigen::Map<const RowMat>;
using StridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using CStridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

void require(bool cond, const std::string& what) {
  if (!cond) throw std::invalid_argument(what);
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape()));
}

void require_rank(const Var& x, int rank, const char* op) {
  require(x.value().rank() == rank,
          std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(x.shape()));
}

Node& input(Node& self, std::size_t i) { return *self.inputs[i]; }

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  const double* pb = b.value().ptr();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += pb[i];
  return Var::from_op(std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      Node& in = input(self, k);
      if (!in.requires_grad) continue;
      Tensor& g = in.grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  const double* pb = b.value().ptr();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= pb[i];
  return Var::from_op(std::move(out), {a, b}, [](Node& self) {
    if (input(self, 0).requires_grad) {
      Tensor& g = input(self, 0).grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
    if (input(self, 1).requires_grad) {
      Tensor& g = input(self, 1).grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  const double* pb = b.value().ptr();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= pb[i];
  return Var::from_op(std::move(out), {a, b}, [](Node& self) {
    Node& na = input(self, 0);
    Node& nb = input(self, 1);
    if (na.requires_grad) {
      Tensor& g = na.grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * nb.value[i];
    }
    if (nb.requires_grad) {
      Tensor& g = nb.grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * na.value[i];
    }
  });
}

Var scale(const Var& a, double s) { return affine(a, s, 0.0); }

Var affine(const Var& x, double a, double b) {
  Tensor out = x.value();
  for (double& v : out.storage()) v = a * v + b;
  return Var::from_op(std::move(out), {x}, [a](Node& self) {
    Tensor& g = input(self, 0).grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += a * self.grad[i];
  });
}

Var relu(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.storage()) v = v > 0.0 ? v : 0.0;
  return Var::from_op(std::move(out), {x}, [](Node& self) {
    Node& in = input(self, 0);
    Tensor& g = in.grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) {
      if (in.value[i] > 0.0) g[i] += self.grad[i];
    }
  });
}

Var gelu(const Var& x) {
  Tensor out = x.value();
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  for (double& v : out.storage()) v = 0.5 * v * (1.0 + std::erf(v * inv_sqrt2));
  return Var::from_op(std::move(out), {x}, [](Node& self) {
    Node& in = input(self, 0);
    Tensor& g = in.grad_buffer();
    const double inv_sqrt2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    for (std::size_t i = 0; i < g.numel(); ++i) {
      const double v = in.value[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
      const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
      g[i] += self.grad[i] * (cdf + v * pdf);
    }
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return Var::from_op(std::move(out), {x}, [](Node& self) {
    Tensor& g = input(self, 0).grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
  });
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad) {
  require_rank(x, 4, "conv2d");
  require_rank(weight, 4, "conv2d weight");
  const int batch = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int cout = weight.dim(0), k = weight.dim(2);
  require(weight.dim(1) == cin && weight.dim(3) == k,
          "conv2d: weight " + shape_str(weight.shape()) + " incompatible with input " + shape_str(x.shape()));
  require(!bias.defined() || bias.shape() == Shape{cout}, "conv2d: bias shape mismatch");
  require(stride >= 1 && pad >= 0, "conv2d: bad stride/pad");
  const int ho = (h + 2 * pad - k) / stride + 1;
  const int wo = (w + 2 * pad - k) / stride + 1;
  require(ho >= 1 && wo >= 1, "conv2d: output would be empty for input " + shape_str(x.shape()));

  const int kk = cin * k * k;
  const int plane = ho * wo;
  const int cols_n = batch * plane;
  Tensor cols(Shape{kk, cols_n}, 0.0);
  const double* px = x.value().ptr();
  double* pc = cols.ptr();
  for (int c = 0; c < cin; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        double* row = pc + static_cast<std::size_t>((c * k + ki) * k + kj) * cols_n;
        for (int b = 0; b < batch; ++b) {
          const double* src = px + (static_cast<std::size_t>(b) * cin + c) * h * w;
          double* dst = row + static_cast<std::size_t>(b) * plane;
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * stride - pad + ki;
            if (iy < 0 || iy >= h) continue;
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * stride - pad + kj;
              if (ix >= 0 && ix < w) dst[oy * wo + ox] = src[iy * w + ix];
            }
          }
        }
      }
    }
  }

  RowMat out_mat = CMatMap(weight.value().ptr(), cout, kk) * CMatMap(cols.ptr(), kk, cols_n);
  if (bias.defined()) {
    for (int co = 0; co < cout; ++co) out_mat.row(co).array() += bias.value()[co];
  }
  Tensor out(Shape{batch, cout, ho, wo});
  for (int b = 0; b < batch; ++b) {
    for (int co = 0; co < cout; ++co) {
      std::copy_n(out_mat.data() + static_cast<std::size_t>(co) * cols_n + static_cast<std::size_t>(b) * plane,
                  plane, out.ptr() + (static_cast<std::size_t>(b) * cout + co) * plane);
    }
  }

  std::vector<Var> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return Var::from_op(
      std::move(out), std::move(inputs),
      [cols = std::move(cols), batch, cin, h, w, cout, k, ho, wo, stride, pad, kk, plane, cols_n](Node& self) {
        RowMat g(cout, cols_n);
        for (int b = 0; b < batch; ++b) {
          for (int co = 0; co < cout; ++co) {
            std::copy_n(self.grad.ptr() + (static_cast<std::size_t>(b) * cout + co) * plane, plane,
                        g.data() + static_cast<std::size_t>(co) * cols_n + static_cast<std::size_t>(b) * plane);
          }
        }
        Node& nw = input(self, 1);
        if (nw.requires_grad) {
          MatMap(nw.grad_buffer().ptr(), cout, kk).noalias() += g * CMatMap(cols.ptr(), kk, cols_n).transpose();
        }
        if (self.inputs.size() > 2 && input(self, 2).requires_grad) {
          Tensor& gb = input(self, 2).grad_buffer();
          for (int co = 0; co < cout; ++co) gb[co] += g.row(co).sum();
        }
        Node& nx = input(self, 0);
        if (!nx.requires_grad) return;
        RowMat dcols = CMatMap(nw.value.ptr(), cout, kk).transpose() * g;
        double* pgx = nx.grad_buffer().ptr();
        for (int c = 0; c < cin; ++c) {
          for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
              const double* row = dcols.data() + static_cast<std::size_t>((c * k + ki) * k + kj) * cols_n;
              for (int b = 0; b < batch; ++b) {
                double* dst = pgx + (static_cast<std::size_t>(b) * cin + c) * h * w;
                const double* src = row + static_cast<std::size_t>(b) * plane;
                for (int oy = 0; oy < ho; ++oy) {
                  const int iy = oy * stride - pad + ki;
                  if (iy < 0 || iy >= h) continue;
                  for (int ox = 0; ox < wo; ++ox) {
                    const int ix = ox * stride - pad + kj;
                    if (ix >= 0 && ix < w) dst[iy * w + ix] += src[oy * wo + ox];
                  }
                }
              }
            }
          }
        }
      });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  require_rank(weight, 2, "linear weight");
  const int in = weight.dim(1), out_dim = weight.dim(0);
  require(x.value().rank() >= 1 && x.dim(-1) == in,
          "linear: input " + shape_str(x.shape()) + " incompatible with weight " + shape_str(weight.shape()));
  require(!bias.defined() || bias.shape() == Shape{out_dim}, "linear: bias shape mismatch");
  const int rows = static_cast<int>(x.value().numel() / static_cast<std::size_t>(in));
  Shape out_shape = x.shape();
  out_shape.back() = out_dim;
  Tensor out(out_shape);
  MatMap om(out.ptr(), rows, out_dim);
  om.noalias() = CMatMap(x.value().ptr(), rows, in) * CMatMap(weight.value().ptr(), out_dim, in).transpose();
  if (bias.defined()) {
    om.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.value().ptr(), out_dim);
  }
  std::vector<Var> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return Var::from_op(std::move(out), std::move(inputs), [rows, in, out_dim](Node& self) {
    CMatMap g(self.grad.ptr(), rows, out_dim);
    Node& nx = input(self, 0);
    Node& nw = input(self, 1);
    if (nx.requires_grad) {
      MatMap(nx.grad_buffer().ptr(), rows, in).noalias() += g * CMatMap(nw.value.ptr(), out_dim, in);
    }
    if (nw.requires_grad) {
      MatMap(nw.grad_buffer().ptr(), out_dim, in).noalias() += g.transpose() * CMatMap(nx.value.ptr(), rows, in);
    }
    if (self.inputs.size() > 2 && input(self, 2).requires_grad) {
      Eigen::Map<Eigen::RowVectorXd>(input(self, 2).grad_buffer().ptr(), out_dim) += g.colwise().sum();
    }
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const int d = x.dim(-1);
  require(gamma.shape() == Shape{d} && beta.shape() == Shape{d}, "layer_norm: affine parameter shape mismatch");
  const std::size_t rows = x.value().numel() / static_cast<std::size_t>(d);
  Tensor out(x.shape());
  Tensor xhat(x.shape());
  std::vector<double> inv_std(rows);
  const double* px = x.value().ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = px + r * d;
    double mu = 0.0;
    for (int j = 0; j < d; ++j) mu += row[j];
    mu /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= d;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (int j = 0; j < d; ++j) {
      const double xh = (row[j] - mu) * is;
      xhat[r * d + j] = xh;
      out[r * d + j] = xh * gamma.value()[j] + beta.value()[j];
    }
  }
  return Var::from_op(std::move(out), {x, gamma, beta},
                      [xhat = std::move(xhat), inv_std = std::move(inv_std), rows, d](Node& self) {
                        Node& nx = input(self, 0);
                        Node& ng = input(self, 1);
                        Node& nb = input(self, 2);
                        const double* g = self.grad.ptr();
                        if (ng.requires_grad || nb.requires_grad) {
                          Tensor& gg = ng.grad_buffer();
                          Tensor& gb = nb.grad_buffer();
                          for (std::size_t r = 0; r < rows; ++r) {
                            for (int j = 0; j < d; ++j) {
                              gg[j] += g[r * d + j] * xhat[r * d + j];
                              gb[j] += g[r * d + j];
                            }
                          }
                        }
                        if (!nx.requires_grad) return;
                        Tensor& gx = nx.grad_buffer();
                        for (std::size_t r = 0; r < rows; ++r) {
                          double m1 = 0.0, m2 = 0.0;
                          for (int j = 0; j < d; ++j) {
                            const double dxh = g[r * d + j] * ng.value[j];
                            m1 += dxh;
                            m2 += dxh * xhat[r * d + j];
                          }
                          m1 /= d;
                          m2 /= d;
                          for (int j = 0; j < d; ++j) {
                            const double dxh = g[r * d + j] * ng.value[j];
                            gx[r * d + j] += inv_std[r] * (dxh - m1 - xhat[r * d + j] * m2);
                          }
                        }
                      });
}

Var upsample_nearest2x(const Var& x) {
  require_rank(x, 4, "upsample_nearest2x");
  const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor out(Shape{b, c, 2 * h, 2 * w});
  const double* px = x.value().ptr();
  for (int p = 0; p < b * c; ++p) {
    const double* src = px + static_cast<std::size_t>(p) * h * w;
    double* dst = out.ptr() + static_cast<std::size_t>(p) * 4 * h * w;
    for (int y = 0; y < 2 * h; ++y) {
      for (int xx = 0; xx < 2 * w; ++xx) dst[y * 2 * w + xx] = src[(y / 2) * w + xx / 2];
    }
  }
  return Var::from_op(std::move(out), {x}, [b, c, h, w](Node& self) {
    double* g = input(self, 0).grad_buffer().ptr();
    for (int p = 0; p < b * c; ++p) {
      const double* src = self.grad.ptr() + static_cast<std::size_t>(p) * 4 * h * w;
      double* dst = g + static_cast<std::size_t>(p) * h * w;
      for (int y = 0; y < 2 * h; ++y) {
        for (int xx = 0; xx < 2 * w; ++xx) dst[(y / 2) * w + xx / 2] += src[y * 2 * w + xx];
      }
    }
  });
}

Var avg_pool(const Var& x, int k) {
  require_rank(x, 4, "avg_pool");
  const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  require(k >= 1 && h % k == 0 && w % k == 0,
          "avg_pool: size " + shape_str(x.shape()) + " not divisible by " + std::to_string(k));
  if (k == 1) return x;
  const int ho = h / k, wo = w / k;
  const double inv = 1.0 / (k * k);
  Tensor out(Shape{b, c, ho, wo});
  const double* px = x.value().ptr();
  for (int p = 0; p < b * c; ++p) {
    const double* src = px + static_cast<std::size_t>(p) * h * w;
    double* dst = out.ptr() + static_cast<std::size_t>(p) * ho * wo;
    for (int y = 0; y < h; ++y) {
      for (int xx = 0; xx < w; ++xx) dst[(y / k) * wo + xx / k] += src[y * w + xx] * inv;
    }
  }
  return Var::from_op(std::move(out), {x}, [b, c, h, w, k, ho, wo, inv](Node& self) {
    double* g = input(self, 0).grad_buffer().ptr();
    for (int p = 0; p < b * c; ++p) {
      const double* src = self.grad.ptr() + static_cast<std::size_t>(p) * ho * wo;
      double* dst = g + static_cast<std::size_t>(p) * h * w;
      for (int y = 0; y < h; ++y) {
        for (int xx = 0; xx < w; ++xx) dst[y * w + xx] += src[(y / k) * wo + xx / k] * inv;
      }
    }
  });
}

Var global_avg_pool(const Var& x) {
  require_rank(x, 4, "global_avg_pool");
  const int b = x.dim(0), c = x.dim(1);
  const int n = x.dim(2) * x.dim(3);
  Tensor out(Shape{b, c});
  const double* px = x.value().ptr();
  for (int p = 0; p < b * c; ++p) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += px[static_cast<std::size_t>(p) * n + i];
    out[p] = s / n;
  }
  return Var::from_op(std::move(out), {x}, [b, c, n](Node& self) {
    double* g = input(self, 0).grad_buffer().ptr();
    for (int p = 0; p < b * c; ++p) {
      const double gp = self.grad[p] / n;
      for (int i = 0; i < n; ++i) g[static_cast<std::size_t>(p) * n + i] += gp;
    }
  });
}

Var channel_moments(const Var& x, double eps) {
  require_rank(x, 4, "channel_moments");
  const int b = x.dim(0), c = x.dim(1);
  const int n = x.dim(2) * x.dim(3);
  Tensor out(Shape{b, 2 * c});
  std::vector<double> mu(static_cast<std::size_t>(b) * c), sd(mu.size());
  const double* px = x.value().ptr();
  for (int bi = 0; bi < b; ++bi) {
    for (int ci = 0; ci < c; ++ci) {
      const double* src = px + (static_cast<std::size_t>(bi) * c + ci) * n;
      double m = 0.0;
      for (int i = 0; i < n; ++i) m += src[i];
      m /= n;
      double v = 0.0;
      for (int i = 0; i < n; ++i) v += (src[i] - m) * (src[i] - m);
      v /= n;
      const std::size_t p = static_cast<std::size_t>(bi) * c + ci;
      mu[p] = m;
      sd[p] = std::sqrt(v + eps);
      out[static_cast<std::size_t>(bi) * 2 * c + ci] = m;
      out[static_cast<std::size_t>(bi) * 2 * c + c + ci] = sd[p];
    }
  }
  return Var::from_op(std::move(out), {x}, [b, c, n, mu = std::move(mu), sd = std::move(sd)](Node& self) {
    Node& nx = input(self, 0);
    double* g = nx.grad_buffer().ptr();
    for (int bi = 0; bi < b; ++bi) {
      for (int ci = 0; ci < c; ++ci) {
        const std::size_t p = static_cast<std::size_t>(bi) * c + ci;
        const double gm = self.grad[static_cast<std::size_t>(bi) * 2 * c + ci] / n;
        const double gs = self.grad[static_cast<std::size_t>(bi) * 2 * c + c + ci] / (n * sd[p]);
        const double* src = nx.value.ptr() + p * n;
        double* dst = g + p * n;
        for (int i = 0; i < n; ++i) dst[i] += gm + gs * (src[i] - mu[p]);
      }
    }
  });
}

Var concat_channels(std::span<const Var> xs) {
  require(!xs.empty(), "concat_channels: no inputs");
  const int b = xs[0].dim(0), h = xs[0].dim(2), w = xs[0].dim(3);
  int total = 0;
  std::vector<int> chans;
  for (const Var& v : xs) {
    require_rank(v, 4, "concat_channels");
    require(v.dim(0) == b && v.dim(2) == h && v.dim(3) == w, "concat_channels: batch/spatial mismatch");
    chans.push_back(v.dim(1));
    total += v.dim(1);
  }
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  Tensor out(Shape{b, total, h, w});
  for (int bi = 0; bi < b; ++bi) {
    int off = 0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
      const double* src = xs[k].value().ptr() + static_cast<std::size_t>(bi) * chans[k] * plane;
      std::copy_n(src, chans[k] * plane, out.ptr() + (static_cast<std::size_t>(bi) * total + off) * plane);
      off += chans[k];
    }
  }
  return Var::from_op(std::move(out), std::vector<Var>(xs.begin(), xs.end()),
                      [b, total, plane, chans](Node& self) {
                        for (int bi = 0; bi < b; ++bi) {
                          int off = 0;
                          for (std::size_t k = 0; k < chans.size(); ++k) {
                            Node& in = input(self, k);
                            if (in.requires_grad) {
                              double* dst = in.grad_buffer().ptr() + static_cast<std::size_t>(bi) * chans[k] * plane;
                              const double* src =
                                  self.grad.ptr() + (static_cast<std::size_t>(bi) * total + off) * plane;
                              for (std::size_t i = 0; i < chans[k] * plane; ++i) dst[i] += src[i];
                            }
                            off += chans[k];
                          }
                        }
                      });
}

Var to_tokens(const Var& x) {
  require_rank(x, 4, "to_tokens");
  const int b = x.dim(0), c = x.dim(1), n = x.dim(2) * x.dim(3);
  Tensor out(Shape{b, n, c});
  for (int bi = 0; bi < b; ++bi) {
    MatMap(out.ptr() + static_cast<std::size_t>(bi) * n * c, n, c) =
        CMatMap(x.value().ptr() + static_cast<std::size_t>(bi) * n * c, c, n).transpose();
  }
  return Var::from_op(std::move(out), {x}, [b, c, n](Node& self) {
    double* g = input(self, 0).grad_buffer().ptr();
    for (int bi = 0; bi < b; ++bi) {
      MatMap(g + static_cast<std::size_t>(bi) * n * c, c, n) +=
          CMatMap(self.grad.ptr() + static_cast<std::size_t>(bi) * n * c, n, c).transpose();
    }
  });
}

Var from_tokens(const Var& tokens, int height, int width) {
  require_rank(tokens, 3, "from_tokens");
  const int b = tokens.dim(0), n = tokens.dim(1), c = tokens.dim(2);
  require(n == height * width, "from_tokens: token count does not match spatial size");
  Tensor out(Shape{b, c, height, width});
  for (int bi = 0; bi < b; ++bi) {
    MatMap(out.ptr() + static_cast<std::size_t>(bi) * n * c, c, n) =
        CMatMap(tokens.value().ptr() + static_cast<std::size_t>(bi) * n * c, n, c).transpose();
  }
  return Var::from_op(std::move(out), {tokens}, [b, c, n](Node& self) {
    double* g = input(self, 0).grad_buffer().ptr();
    for (int bi = 0; bi < b; ++bi) {
      MatMap(g + static_cast<std::size_t>(bi) * n * c, n, c) +=
          CMatMap(self.grad.ptr() + static_cast<std::size_t>(bi) * n * c, c, n).transpose();
    }
  });
}

Var concat_tokens(std::span<const Var> xs) {
  require(!xs.empty(), "concat_tokens: no inputs");
  const int b = xs[0].dim(0), d = xs[0].dim(2);
  int total = 0;
  std::vector<int> lens;
  for (const Var& v : xs) {
    require_rank(v, 3, "concat_tokens");
    require(v.dim(0) == b && v.dim(2) == d, "concat_tokens: batch/dim mismatch " + shape_str(v.shape()));
    lens.push_back(v.dim(1));
    total += v.dim(1);
  }
  Tensor out(Shape{b, total, d});
  for (int bi = 0; bi < b; ++bi) {
    int off = 0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
      std::copy_n(xs[k].value().ptr() + static_cast<std::size_t>(bi) * lens[k] * d,
                  static_cast<std::size_t>(lens[k]) * d,
                  out.ptr() + (static_cast<std::size_t>(bi) * total + off) * d);
      off += lens[k];
    }
  }
  return Var::from_op(std::move(out), std::vector<Var>(xs.begin(), xs.end()), [b, d, total, lens](Node& self) {
    for (int bi = 0; bi < b; ++bi) {
      int off = 0;
      for (std::size_t k = 0; k < lens.size(); ++k) {
        Node& in = input(self, k);
        if (in.requires_grad) {
          double* dst = in.grad_buffer().ptr() + static_cast<std::size_t>(bi) * lens[k] * d;
          const double* src = self.grad.ptr() + (static_cast<std::size_t>(bi) * total + off) * d;
          for (std::size_t i = 0; i < static_cast<std::size_t>(lens[k]) * d; ++i) dst[i] += src[i];
        }
        off += lens[k];
      }
    }
  });
}

Var mean_tokens(const Var& x) {
  require_rank(x, 3, "mean_tokens");
  const int b = x.dim(0), l = x.dim(1), d = x.dim(2);
  Tensor out(Shape{b, d});
  for (int bi = 0; bi < b; ++bi) {
    for (int t = 0; t < l; ++t) {
      const double* row = x.value().ptr() + (static_cast<std::size_t>(bi) * l + t) * d;
      for (int j = 0; j < d; ++j) out[static_cast<std::size_t>(bi) * d + j] += row[j] / l;
    }
  }
  return Var::from_op(std::move(out), {x}, [b, l, d](Node& self) {
    double* g = input(self, 0).grad_buffer().ptr();
    for (int bi = 0; bi < b; ++bi) {
      for (int t = 0; t < l; ++t) {
        double* row = g + (static_cast<std::size_t>(bi) * l + t) * d;
        for (int j = 0; j < d; ++j) row[j] += self.grad[static_cast<std::size_t>(bi) * d + j] / l;
      }
    }
  });
}

Var gather_rows(const Var& table, std::span<const int> index) {
  require(table.value().rank() >= 1, "gather_rows: scalar table");
  const int n = table.dim(0);
  const std::size_t row = table.value().numel() / static_cast<std::size_t>(n);
  Shape shape = table.shape();
  shape[0] = static_cast<int>(index.size());
  Tensor out(shape);
  std::vector<int> idx(index.begin(), index.end());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= n) {
      throw std::out_of_range("gather_rows: index " + std::to_string(idx[i]) + " out of range for " +
                              std::to_string(n) + " rows");
    }
    std::copy_n(table.value().ptr() + static_cast<std::size_t>(idx[i]) * row, row, out.ptr() + i * row);
  }
  return Var::from_op(std::move(out), {table}, [idx = std::move(idx), row](Node& self) {
    double* g = input(self, 0).grad_buffer().ptr();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      double* dst = g + static_cast<std::size_t>(idx[i]) * row;
      const double* src = self.grad.ptr() + i * row;
      for (std::size_t j = 0; j < row; ++j) dst[j] += src[j];
    }
  });
}

namespace {

// Row softmax of (Q_h K_h^T) * scale for one (batch, head).
RowMat attention_probs(const double* q, const double* k, int lq, int lk, int d, int dk, int head, double scale) {
  CStridedMap qh(q + head * dk, lq, dk, Eigen::OuterStride<>(d));
  CStridedMap kh(k + head * dk, lk, dk, Eigen::OuterStride<>(d));
  RowMat s = (qh * kh.transpose()) * scale;
  for (int i = 0; i < lq; ++i) {
    const double mx = s.row(i).maxCoeff();
    s.row(i) = (s.row(i).array() - mx).exp();
    s.row(i) /= s.row(i).sum();
  }
  return s;
}

}  // namespace

Tensor attention_weights(const Tensor& q, const Tensor& k, int heads, int batch, int head) {
  const int lq = q.dim(1), lk = k.dim(1), d = q.dim(2);
  require(d % heads == 0, "attention: dim not divisible by heads");
  const int dk = d / heads;
  RowMat p = attention_probs(q.ptr() + static_cast<std::size_t>(batch) * lq * d,
                             k.ptr() + static_cast<std::size_t>(batch) * lk * d, lq, lk, d, dk, head,
                             1.0 / std::sqrt(static_cast<double>(dk)));
  return Tensor(Shape{lq, lk}, std::vector<double>(p.data(), p.data() + p.size()));
}

Var attention(const Var& q, const Var& k, const Var& v, int heads) {
  require_rank(q, 3, "attention q");
  require_rank(k, 3, "attention k");
  require_same_shape(k, v, "attention k/v");
  const int b = q.dim(0), lq = q.dim(1), d = q.dim(2), lk = k.dim(1);
  require(k.dim(0) == b && k.dim(2) == d, "attention: q " + shape_str(q.shape()) + " vs k " + shape_str(k.shape()));
  require(heads >= 1 && d % heads == 0, "attention: dim " + std::to_string(d) + " not divisible by heads");
  const int dk = d / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dk));
  Tensor out(Shape{b, lq, d});
  std::vector<RowMat> probs;
  probs.reserve(static_cast<std::size_t>(b) * heads);
  for (int bi = 0; bi < b; ++bi) {
    const double* pq = q.value().ptr() + static_cast<std::size_t>(bi) * lq * d;
    const double* pk = k.value().ptr() + static_cast<std::size_t>(bi) * lk * d;
    const double* pv = v.value().ptr() + static_cast<std::size_t>(bi) * lk * d;
    double* po = out.ptr() + static_cast<std::size_t>(bi) * lq * d;
    for (int h = 0; h < heads; ++h) {
      RowMat p = attention_probs(pq, pk, lq, lk, d, dk, h, sc);
      StridedMap(po + h * dk, lq, dk, Eigen::OuterStride<>(d)).noalias() =
          p * CStridedMap(pv + h * dk, lk, dk, Eigen::OuterStride<>(d));
      probs.push_back(std::move(p));
    }
  }
  return Var::from_op(
      std::move(out), {q, k, v}, [probs = std::move(probs), b, lq, lk, d, dk, heads, sc](Node& self) {
        Node& nq = input(self, 0);
        Node& nk = input(self, 1);
        Node& nv = input(self, 2);
        double* gq = nq.requires_grad ? nq.grad_buffer().ptr() : nullptr;
        double* gk = nk.requires_grad ? nk.grad_buffer().ptr() : nullptr;
        double* gv = nv.requires_grad ? nv.grad_buffer().ptr() : nullptr;
        for (int bi = 0; bi < b; ++bi) {
          const std::size_t oq = static_cast<std::size_t>(bi) * lq * d;
          const std::size_t ok = static_cast<std::size_t>(bi) * lk * d;
          for (int h = 0; h < heads; ++h) {
            const RowMat& p = probs[static_cast<std::size_t>(bi) * heads + h];
            CStridedMap go(self.grad.ptr() + oq + h * dk, lq, dk, Eigen::OuterStride<>(d));
            CStridedMap qh(nq.value.ptr() + oq + h * dk, lq, dk, Eigen::OuterStride<>(d));
            CStridedMap kh(nk.value.ptr() + ok + h * dk, lk, dk, Eigen::OuterStride<>(d));
            CStridedMap vh(nv.value.ptr() + ok + h * dk, lk, dk, Eigen::OuterStride<>(d));
            if (gv) StridedMap(gv + ok + h * dk, lk, dk, Eigen::OuterStride<>(d)).noalias() += p.transpose() * go;
            if (!gq && !gk) continue;
            RowMat dp = go * vh.transpose();
            RowMat ds(lq, lk);
            for (int i = 0; i < lq; ++i) {
              const double dot = (dp.row(i).array() * p.row(i).array()).sum();
              ds.row(i) = p.row(i).array() * (dp.row(i).array() - dot);
            }
            ds *= sc;
            if (gq) StridedMap(gq + oq + h * dk, lq, dk, Eigen::OuterStride<>(d)).noalias() += ds * kh;
            if (gk) StridedMap(gk + ok + h * dk, lk, dk, Eigen::OuterStride<>(d)).noalias() += ds.transpose() * qh;
          }
        }
      });
}

Var adain(const Var& x, const Var& gamma, const Var& beta, double eps) {
  require_rank(x, 4, "adain");
  const int b = x.dim(0), c = x.dim(1);
  const int n = x.dim(2) * x.dim(3);
  require(n >= 2, "adain: spatial extent must have at least 2 positions, got " + shape_str(x.shape()));
  require(gamma.shape() == Shape{b, c} && beta.shape() == Shape{b, c},
          "adain: gamma/beta must be " + shape_str(Shape{b, c}) + ", got " + shape_str(gamma.shape()) + " / " +
              shape_str(beta.shape()));
  Tensor out(x.shape());
  Tensor xhat(x.shape());
  std::vector<double> sigma(static_cast<std::size_t>(b) * c);
  const double* px = x.value().ptr();
  for (std::size_t p = 0; p < sigma.size(); ++p) {
    const double* src = px + p * n;
    double m = 0.0;
    for (int i = 0; i < n; ++i) m += src[i];
    m /= n;
    double v = 0.0;
    for (int i = 0; i < n; ++i) v += (src[i] - m) * (src[i] - m);
    v /= n;
    const double s = std::sqrt(v);
    sigma[p] = s;
    const double inv = 1.0 / (s + eps);
    for (int i = 0; i < n; ++i) {
      const double xh = (src[i] - m) * inv;
      xhat[p * n + i] = xh;
      out[p * n + i] = gamma.value()[p] * xh + beta.value()[p];
    }
  }
  return Var::from_op(std::move(out), {x, gamma, beta},
                      [xhat = std::move(xhat), sigma = std::move(sigma), n, eps](Node& self) {
                        Node& nx = input(self, 0);
                        Node& ng = input(self, 1);
                        Node& nb = input(self, 2);
                        const double* g = self.grad.ptr();
                        for (std::size_t p = 0; p < sigma.size(); ++p) {
                          const double* gp = g + p * n;
                          const double* xh = xhat.ptr() + p * n;
                          if (ng.requires_grad) {
                            double s = 0.0;
                            for (int i = 0; i < n; ++i) s += gp[i] * xh[i];
                            ng.grad_buffer()[p] += s;
                          }
                          if (nb.requires_grad) {
                            double s = 0.0;
                            for (int i = 0; i < n; ++i) s += gp[i];
                            nb.grad_buffer()[p] += s;
                          }
                          if (!nx.requires_grad) continue;
                          // xhat = (x - m) / (sigma + eps); differentiate through m and sigma.
                          const double gam = ng.value[p];
                          const double d = sigma[p] + eps;
                          double mean_dxh = 0.0, dot = 0.0;
                          for (int i = 0; i < n; ++i) {
                            mean_dxh += gp[i] * gam;
                            dot += gp[i] * gam * xh[i];
                          }
                          mean_dxh /= n;
                          // sum_i dxh_i (x_i - m) = d * dot
                          const double coef = sigma[p] > 0.0 ? dot / (n * sigma[p]) : 0.0;
                          double* gx = nx.grad_buffer().ptr() + p * n;
                          for (int i = 0; i < n; ++i) {
                            gx[i] += (gp[i] * gam - mean_dxh) / d - coef * xh[i];
                          }
                        }
                      });
}

Var cosine_distance(const Var& a, const Var& b, double eps) {
  require_same_shape(a, b, "cosine_distance");
  require(a.value().rank() >= 2, "cosine_distance: need (B, C, ...) input");
  const int batch = a.dim(0), c = a.dim(1);
  const std::size_t rest = a.value().numel() / (static_cast<std::size_t>(batch) * c);
  Shape out_shape{batch};
  for (int i = 2; i < a.value().rank(); ++i) out_shape.push_back(a.dim(i));
  Tensor out(out_shape);
  std::vector<double> na(out.numel()), nb(out.numel()), cs(out.numel());
  const double* pa = a.value().ptr();
  const double* pb = b.value().ptr();
  for (int bi = 0; bi < batch; ++bi) {
    for (std::size_t r = 0; r < rest; ++r) {
      double dot = 0.0, aa = 0.0, bb = 0.0;
      for (int ch = 0; ch < c; ++ch) {
        const std::size_t i = (static_cast<std::size_t>(bi) * c + ch) * rest + r;
        dot += pa[i] * pb[i];
        aa += pa[i] * pa[i];
        bb += pb[i] * pb[i];
      }
      const std::size_t o = static_cast<std::size_t>(bi) * rest + r;
      na[o] = std::max(std::sqrt(aa), eps);
      nb[o] = std::max(std::sqrt(bb), eps);
      cs[o] = dot / (na[o] * nb[o]);
      out[o] = 1.0 - cs[o];
    }
  }
  return Var::from_op(std::move(out), {a, b},
                      [na = std::move(na), nb = std::move(nb), cs = std::move(cs), batch, c, rest, eps](Node& self) {
                        Node& xa = input(self, 0);
                        Node& xb = input(self, 1);
                        for (int k = 0; k < 2; ++k) {
                          Node& me = k == 0 ? xa : xb;
                          Node& other = k == 0 ? xb : xa;
                          const std::vector<double>& nme = k == 0 ? na : nb;
                          const std::vector<double>& noth = k == 0 ? nb : na;
                          if (!me.requires_grad) continue;
                          double* g = me.grad_buffer().ptr();
                          for (int bi = 0; bi < batch; ++bi) {
                            for (std::size_t r = 0; r < rest; ++r) {
                              const std::size_t o = static_cast<std::size_t>(bi) * rest + r;
                              const double go = -self.grad[o];
                              // Clamped norm is constant, so only the direct term remains.
                              const bool clamped = nme[o] <= eps;
                              for (int ch = 0; ch < c; ++ch) {
                                const std::size_t i = (static_cast<std::size_t>(bi) * c + ch) * rest + r;
                                double d = other.value[i] / (nme[o] * noth[o]);
                                if (!clamped) d -= cs[o] * me.value[i] / (nme[o] * nme[o]);
                                g[i] += go * d;
                              }
                            }
                          }
                        }
                      });
}

Var cross_entropy(const Var& logits, std::span<const int> labels) {
  require_rank(logits, 2, "cross_entropy");
  const int b = logits.dim(0), n = logits.dim(1);
  require(static_cast<int>(labels.size()) == b, "cross_entropy: label count mismatch");
  Tensor probs(logits.shape());
  double loss = 0.0;
  std::vector<int> y(labels.begin(), labels.end());
  for (int bi = 0; bi < b; ++bi) {
    if (y[bi] < 0 || y[bi] >= n) throw std::out_of_range("cross_entropy: label out of range");
    const double* row = logits.value().ptr() + static_cast<std::size_t>(bi) * n;
    const double mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (int j = 0; j < n; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    loss += lse - row[y[bi]];
    for (int j = 0; j < n; ++j) probs[static_cast<std::size_t>(bi) * n + j] = std::exp(row[j] - lse);
  }
  Tensor out(Shape{}, std::vector<double>{loss / b});
  return Var::from_op(std::move(out), {logits}, [probs = std::move(probs), y = std::move(y), b, n](Node& self) {
    double* g = input(self, 0).grad_buffer().ptr();
    const double s = self.grad[0] / b;
    for (int bi = 0; bi < b; ++bi) {
      for (int j = 0; j < n; ++j) {
        const std::size_t i = static_cast<std::size_t>(bi) * n + j;
        g[i] += s * (probs[i] - (j == y[bi] ? 1.0 : 0.0));
      }
    }
  });
}

Var mean(const Var& x) {
  const std::size_t n = x.value().numel();
  require(n > 0, "mean: empty tensor");
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return Var::from_op(Tensor(Shape{}, std::vector<double>{s / static_cast<double>(n)}), {x}, [n](Node& self) {
    Tensor& g = input(self, 0).grad_buffer();
    const double gv = self.grad[0] / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) g[i] += gv;
  });
}

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return Var::from_op(Tensor(Shape{}, std::vector<double>{s}), {x}, [](Node& self) {
    Tensor& g = input(self, 0).grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[0];
  });
}

}  // namespace roads::ops
