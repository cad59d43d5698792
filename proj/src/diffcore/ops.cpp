#include "tomotx/diffcore/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "tomotx/common/error.hpp"

namespace tomotx::diff {
namespace {

using MatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapF = Eigen::Map<MatF>;
using CMapF = Eigen::Map<const MatF>;

CMapF cmap(const std::vector<float>& v, int64_t offset, int64_t rows, int64_t cols) {
  return CMapF(v.data() + offset, rows, cols);
}
MapF map(std::vector<float>& v, int64_t offset, int64_t rows, int64_t cols) {
  return MapF(v.data() + offset, rows, cols);
}

void check_finite(const std::vector<float>& data, const char* op) {
  for (float v : data) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite value in output");
  }
}

// Wraps freshly computed output values; records history when any input is
// tracked.
Tensor record(Shape shape, std::vector<float> data, const char* op, std::initializer_list<const Tensor*> inputs,
              std::function<void(Node&)> backward) {
  check_finite(data, op);
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  bool tracked = false;
  for (const Tensor* t : inputs) tracked = tracked || (t->defined() && t->requires_grad());
  if (tracked) {
    node->requires_grad = true;
    for (const Tensor* t : inputs) {
      if (t->defined()) node->parents.push_back(t->node());
    }
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

bool tracked(const std::shared_ptr<Node>& n) { return n && n->requires_grad; }

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() < 2 || b.ndim() < 2) shape_mismatch("matmul", a.shape(), b.shape());
  const int64_t n = a.dim(-2), k = a.dim(-1);
  const int64_t k2 = b.dim(-2), m = b.dim(-1);
  if (k != k2) shape_mismatch("matmul", a.shape(), b.shape());
  const bool shared_rhs = b.ndim() == 2;
  if (!shared_rhs) {
    if (a.ndim() != b.ndim() || !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin())) {
      shape_mismatch("matmul", a.shape(), b.shape());
    }
  }
  const int64_t batch = a.numel() / (n * k);
  Shape out_shape = a.shape();
  out_shape.back() = m;
  std::vector<float> out(static_cast<size_t>(batch * n * m));

  const auto& ad = a.node()->data;
  const auto& bd = b.node()->data;
  if (shared_rhs) {
    const MatD bm = cmap(bd, 0, k, m).cast<double>();
    map(out, 0, batch * n, m) = (cmap(ad, 0, batch * n, k).cast<double>() * bm).cast<float>();
  } else {
    for (int64_t s = 0; s < batch; ++s) {
      map(out, s * n * m, n, m) =
          (cmap(ad, s * n * k, n, k).cast<double>() * cmap(bd, s * k * m, k, m).cast<double>()).cast<float>();
    }
  }

  auto an = a.node();
  auto bn = b.node();
  return record(std::move(out_shape), std::move(out), "matmul", {&a, &b},
                [an, bn, batch, n, k, m, shared_rhs](Node& self) {
                  const auto& g = self.grad;
                  if (tracked(an)) {
                    an->ensure_grad();
                    if (shared_rhs) {
                      const MatD bm = cmap(bn->data, 0, k, m).cast<double>();
                      map(an->grad, 0, batch * n, k) +=
                          (cmap(g, 0, batch * n, m).cast<double>() * bm.transpose()).cast<float>();
                    } else {
                      for (int64_t s = 0; s < batch; ++s) {
                        map(an->grad, s * n * k, n, k) += (cmap(g, s * n * m, n, m).cast<double>() *
                                                           cmap(bn->data, s * k * m, k, m).cast<double>().transpose())
                                                              .cast<float>();
                      }
                    }
                  }
                  if (tracked(bn)) {
                    bn->ensure_grad();
                    if (shared_rhs) {
                      map(bn->grad, 0, k, m) += (cmap(an->data, 0, batch * n, k).cast<double>().transpose() *
                                                 cmap(g, 0, batch * n, m).cast<double>())
                                                    .cast<float>();
                    } else {
                      for (int64_t s = 0; s < batch; ++s) {
                        map(bn->grad, s * k * m, k, m) +=
                            (cmap(an->data, s * n * k, n, k).cast<double>().transpose() *
                             cmap(g, s * n * m, n, m).cast<double>())
                                .cast<float>();
                      }
                    }
                  }
                });
}

Tensor add(const Tensor& a, const Tensor& b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (bs.size() > as.size() || !std::equal(bs.rbegin(), bs.rend(), as.rbegin())) {
    shape_mismatch("add", as, bs);
  }
  const auto na = a.node()->data.size();
  const auto nb = b.node()->data.size();
  std::vector<float> out(a.node()->data);
  const auto& bd = b.node()->data;
  for (size_t i = 0; i < na; i += nb) {
    for (size_t j = 0; j < nb; ++j) out[i + j] += bd[j];
  }
  auto an = a.node();
  auto bn = b.node();
  return record(as, std::move(out), "add", {&a, &b}, [an, bn, na, nb](Node& self) {
    if (tracked(an)) {
      an->ensure_grad();
      for (size_t i = 0; i < na; ++i) an->grad[i] += self.grad[i];
    }
    if (tracked(bn)) {
      bn->ensure_grad();
      if (na == nb) {
        for (size_t i = 0; i < nb; ++i) bn->grad[i] += self.grad[i];
      } else {
        std::vector<double> acc(nb, 0.0);
        for (size_t i = 0; i < na; i += nb) {
          for (size_t j = 0; j < nb; ++j) acc[j] += self.grad[i + j];
        }
        for (size_t j = 0; j < nb; ++j) bn->grad[j] += static_cast<float>(acc[j]);
      }
    }
  });
}

Tensor scale(const Tensor& a, float factor) {
  std::vector<float> out(a.node()->data);
  for (auto& v : out) v *= factor;
  auto an = a.node();
  return record(a.shape(), std::move(out), "scale", {&a}, [an, factor](Node& self) {
    an->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += factor * self.grad[i];
  });
}

Tensor permute(const Tensor& a, const std::vector<int>& perm) {
  const auto& in_shape = a.shape();
  const size_t rank = in_shape.size();
  if (perm.size() != rank) throw ShapeError("permute: permutation rank does not match " + shape_str(in_shape));
  std::vector<bool> used(rank, false);
  for (int p : perm) {
    if (p < 0 || static_cast<size_t>(p) >= rank || used[static_cast<size_t>(p)]) {
      throw ShapeError("permute: invalid permutation for " + shape_str(in_shape));
    }
    used[static_cast<size_t>(p)] = true;
  }
  std::vector<int64_t> in_strides(rank, 1);
  for (size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * in_shape[i];
  Shape out_shape(rank);
  std::vector<int64_t> step(rank);
  for (size_t i = 0; i < rank; ++i) {
    out_shape[i] = in_shape[static_cast<size_t>(perm[i])];
    step[i] = in_strides[static_cast<size_t>(perm[i])];
  }
  // Source offset of every destination element, walked in output order.
  const auto total = static_cast<size_t>(numel(out_shape));
  auto offsets = std::make_shared<std::vector<int64_t>>(total);
  std::vector<int64_t> counter(rank, 0);
  int64_t offset = 0;
  for (size_t i = 0; i < total; ++i) {
    (*offsets)[i] = offset;
    for (size_t d = rank; d-- > 0;) {
      offset += step[d];
      if (++counter[d] < out_shape[d]) break;
      offset -= step[d] * out_shape[d];
      counter[d] = 0;
    }
  }
  const auto& ad = a.node()->data;
  std::vector<float> out(total);
  for (size_t i = 0; i < total; ++i) out[i] = ad[static_cast<size_t>((*offsets)[i])];
  auto an = a.node();
  return record(std::move(out_shape), std::move(out), "permute", {&a}, [an, offsets](Node& self) {
    an->ensure_grad();
    for (size_t i = 0; i < offsets->size(); ++i) an->grad[static_cast<size_t>((*offsets)[i])] += self.grad[i];
  });
}

Tensor transpose(const Tensor& a) {
  if (a.ndim() < 2) throw ShapeError("transpose: need rank >= 2, got " + shape_str(a.shape()));
  std::vector<int> perm(static_cast<size_t>(a.ndim()));
  std::iota(perm.begin(), perm.end(), 0);
  std::swap(perm[perm.size() - 1], perm[perm.size() - 2]);
  return permute(a, perm);
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.numel()) shape_mismatch("reshape", a.shape(), shape);
  auto an = a.node();
  return record(std::move(shape), an->data, "reshape", {&a}, [an](Node& self) {
    an->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const int64_t cols = parts[0].ndim() == 2 ? parts[0].dim(1) : -1;
  int64_t rows = 0;
  for (const auto& p : parts) {
    if (p.ndim() != 2 || p.dim(1) != cols) shape_mismatch("concat_rows", parts[0].shape(), p.shape());
    rows += p.dim(0);
  }
  std::vector<float> out;
  out.reserve(static_cast<size_t>(rows * cols));
  std::vector<std::shared_ptr<Node>> nodes;
  bool any_tracked = false;
  for (const auto& p : parts) {
    out.insert(out.end(), p.node()->data.begin(), p.node()->data.end());
    nodes.push_back(p.node());
    any_tracked = any_tracked || p.requires_grad();
  }
  check_finite(out, "concat_rows");
  auto node = std::make_shared<Node>();
  node->shape = {rows, cols};
  node->data = std::move(out);
  node->op = "concat_rows";
  if (any_tracked) {
    node->requires_grad = true;
    node->parents = nodes;
    node->backward = [nodes](Node& self) {
      size_t offset = 0;
      for (const auto& n : nodes) {
        if (tracked(n)) {
          n->ensure_grad();
          for (size_t i = 0; i < n->data.size(); ++i) n->grad[i] += self.grad[offset + i];
        }
        offset += n->data.size();
      }
    };
  }
  return Tensor(std::move(node));
}

Tensor gather_rows(const Tensor& table, std::span<const int64_t> index) {
  if (table.ndim() != 2) throw ShapeError("gather_rows: table must be rank 2, got " + shape_str(table.shape()));
  const int64_t rows = table.dim(0), cols = table.dim(1);
  auto idx = std::make_shared<std::vector<int64_t>>(index.begin(), index.end());
  std::vector<float> out(idx->size() * static_cast<size_t>(cols));
  const auto& td = table.node()->data;
  for (size_t i = 0; i < idx->size(); ++i) {
    const int64_t r = (*idx)[i];
    if (r < 0 || r >= rows) {
      throw ShapeError("gather_rows: row " + std::to_string(r) + " outside table " + shape_str(table.shape()));
    }
    std::copy_n(td.begin() + r * cols, cols, out.begin() + static_cast<std::ptrdiff_t>(i) * cols);
  }
  auto tn = table.node();
  return record({static_cast<int64_t>(idx->size()), cols}, std::move(out), "gather_rows", {&table},
                [tn, idx, cols](Node& self) {
                  tn->ensure_grad();
                  for (size_t i = 0; i < idx->size(); ++i) {
                    float* dst = tn->grad.data() + (*idx)[i] * cols;
                    const float* src = self.grad.data() + static_cast<int64_t>(i) * cols;
                    for (int64_t c = 0; c < cols; ++c) dst[c] += src[c];
                  }
                });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps) {
  if (x.ndim() < 1) throw ShapeError("layer_norm: scalar input");
  const int64_t d = x.dim(-1);
  if (gain.numel() != d || bias.numel() != d) shape_mismatch("layer_norm", x.shape(), gain.shape());
  const int64_t rows = x.numel() / d;
  const auto& xd = x.node()->data;
  const auto& gd = gain.node()->data;
  const auto& bd = bias.node()->data;
  auto xhat = std::make_shared<std::vector<float>>(xd.size());
  auto rstd = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
  std::vector<float> out(xd.size());
  for (int64_t r = 0; r < rows; ++r) {
    const float* row = xd.data() + r * d;
    double mean = 0.0;
    for (int64_t i = 0; i < d; ++i) mean += row[i];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (int64_t i = 0; i < d; ++i) var += (row[i] - mean) * (row[i] - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*rstd)[static_cast<size_t>(r)] = inv;
    for (int64_t i = 0; i < d; ++i) {
      const auto k = static_cast<size_t>(r * d + i);
      const double h = (row[i] - mean) * inv;
      (*xhat)[k] = static_cast<float>(h);
      out[k] = static_cast<float>(h * gd[static_cast<size_t>(i)] + bd[static_cast<size_t>(i)]);
    }
  }
  auto xn = x.node();
  auto gn = gain.node();
  auto bn = bias.node();
  return record(x.shape(), std::move(out), "layer_norm", {&x, &gain, &bias},
                [xn, gn, bn, xhat, rstd, rows, d](Node& self) {
                  const auto& g = self.grad;
                  if (tracked(gn) || tracked(bn)) {
                    std::vector<double> dg(static_cast<size_t>(d), 0.0), db(static_cast<size_t>(d), 0.0);
                    for (int64_t r = 0; r < rows; ++r) {
                      for (int64_t i = 0; i < d; ++i) {
                        const auto k = static_cast<size_t>(r * d + i);
                        dg[static_cast<size_t>(i)] += static_cast<double>(g[k]) * (*xhat)[k];
                        db[static_cast<size_t>(i)] += g[k];
                      }
                    }
                    if (tracked(gn)) {
                      gn->ensure_grad();
                      for (int64_t i = 0; i < d; ++i) gn->grad[static_cast<size_t>(i)] += static_cast<float>(dg[static_cast<size_t>(i)]);
                    }
                    if (tracked(bn)) {
                      bn->ensure_grad();
                      for (int64_t i = 0; i < d; ++i) bn->grad[static_cast<size_t>(i)] += static_cast<float>(db[static_cast<size_t>(i)]);
                    }
                  }
                  if (tracked(xn)) {
                    xn->ensure_grad();
                    const auto& gamma = gn->data;
                    for (int64_t r = 0; r < rows; ++r) {
                      double mean_d = 0.0, mean_dx = 0.0;
                      for (int64_t i = 0; i < d; ++i) {
                        const auto k = static_cast<size_t>(r * d + i);
                        const double dh = static_cast<double>(g[k]) * gamma[static_cast<size_t>(i)];
                        mean_d += dh;
                        mean_dx += dh * (*xhat)[k];
                      }
                      mean_d /= static_cast<double>(d);
                      mean_dx /= static_cast<double>(d);
                      const double inv = (*rstd)[static_cast<size_t>(r)];
                      for (int64_t i = 0; i < d; ++i) {
                        const auto k = static_cast<size_t>(r * d + i);
                        const double dh = static_cast<double>(g[k]) * gamma[static_cast<size_t>(i)];
                        xn->grad[k] += static_cast<float>(inv * (dh - mean_d - (*xhat)[k] * mean_dx));
                      }
                    }
                  }
                });
}

Tensor softmax_lastdim(const Tensor& x) {
  if (x.ndim() < 1) throw ShapeError("softmax_lastdim: scalar input");
  const int64_t d = x.dim(-1);
  const int64_t rows = x.numel() / d;
  const auto& xd = x.node()->data;
  std::vector<float> out(xd.size());
  for (int64_t r = 0; r < rows; ++r) {
    const float* in = xd.data() + r * d;
    float* o = out.data() + r * d;
    const float mx = *std::max_element(in, in + d);
    double sum = 0.0;
    for (int64_t i = 0; i < d; ++i) {
      const double e = std::exp(static_cast<double>(in[i]) - mx);
      o[i] = static_cast<float>(e);
      sum += e;
    }
    const double inv = 1.0 / sum;
    for (int64_t i = 0; i < d; ++i) o[i] = static_cast<float>(o[i] * inv);
  }
  auto xn = x.node();
  // The saved output lives in the recorded node itself.
  return record(x.shape(), std::move(out), "softmax_lastdim", {&x}, [xn, rows, d](Node& self) {
    xn->ensure_grad();
    for (int64_t r = 0; r < rows; ++r) {
      const float* y = self.data.data() + r * d;
      const float* g = self.grad.data() + r * d;
      double dot = 0.0;
      for (int64_t i = 0; i < d; ++i) dot += static_cast<double>(g[i]) * y[i];
      float* dx = xn->grad.data() + r * d;
      for (int64_t i = 0; i < d; ++i) dx[i] += static_cast<float>(y[i] * (g[i] - dot));
    }
  });
}

Tensor gelu(const Tensor& x) {
  const auto& xd = x.node()->data;
  std::vector<float> out(xd.size());
  for (size_t i = 0; i < xd.size(); ++i) {
    const double v = xd[i];
    out[i] = static_cast<float>(0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0)));
  }
  auto xn = x.node();
  return record(x.shape(), std::move(out), "gelu", {&x}, [xn](Node& self) {
    xn->ensure_grad();
    const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    for (size_t i = 0; i < xn->data.size(); ++i) {
      const double v = xn->data[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      xn->grad[i] += static_cast<float>(self.grad[i] * (cdf + v * pdf));
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (weight.ndim() != 2 || x.ndim() < 1 || x.dim(-1) != weight.dim(0)) {
    shape_mismatch("linear", x.shape(), weight.shape());
  }
  const int64_t in = weight.dim(0), outd = weight.dim(1);
  if (bias.defined() && bias.numel() != outd) shape_mismatch("linear", weight.shape(), bias.shape());
  const int64_t rows = x.numel() / in;
  Shape out_shape = x.shape();
  out_shape.back() = outd;
  std::vector<float> out(static_cast<size_t>(rows * outd));
  {
    MatD y = cmap(x.node()->data, 0, rows, in).cast<double>() * cmap(weight.node()->data, 0, in, outd).cast<double>();
    if (bias.defined()) {
      const Eigen::RowVectorXd b = cmap(bias.node()->data, 0, 1, outd).cast<double>().row(0);
      y.rowwise() += b;
    }
    map(out, 0, rows, outd) = y.cast<float>();
  }
  auto xn = x.node();
  auto wn = weight.node();
  auto bn = bias.defined() ? bias.node() : nullptr;
  return record(std::move(out_shape), std::move(out), "linear", {&x, &weight, &bias},
                [xn, wn, bn, rows, in, outd](Node& self) {
                  const MatD g = cmap(self.grad, 0, rows, outd).cast<double>();
                  if (tracked(xn)) {
                    xn->ensure_grad();
                    map(xn->grad, 0, rows, in) +=
                        (g * cmap(wn->data, 0, in, outd).cast<double>().transpose()).cast<float>();
                  }
                  if (tracked(wn)) {
                    wn->ensure_grad();
                    map(wn->grad, 0, in, outd) +=
                        (cmap(xn->data, 0, rows, in).cast<double>().transpose() * g).cast<float>();
                  }
                  if (tracked(bn)) {
                    bn->ensure_grad();
                    map(bn->grad, 0, 1, outd) += g.colwise().sum().cast<float>();
                  }
                });
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) shape_mismatch("mse_loss", pred.shape(), target.shape());
  const auto& p = pred.node()->data;
  const auto& t = target.node()->data;
  double acc = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    const double e = static_cast<double>(p[i]) - t[i];
    acc += e * e;
  }
  const double n = static_cast<double>(p.size());
  auto pn = pred.node();
  auto tn = target.node();
  return record({}, {static_cast<float>(acc / n)}, "mse_loss", {&pred, &target}, [pn, tn, n](Node& self) {
    const double g = self.grad[0];
    const double c = 2.0 * g / n;
    if (tracked(pn)) {
      pn->ensure_grad();
      for (size_t i = 0; i < pn->data.size(); ++i) {
        pn->grad[i] += static_cast<float>(c * (static_cast<double>(pn->data[i]) - tn->data[i]));
      }
    }
    if (tracked(tn)) {
      tn->ensure_grad();
      for (size_t i = 0; i < tn->data.size(); ++i) {
        tn->grad[i] -= static_cast<float>(c * (static_cast<double>(pn->data[i]) - tn->data[i]));
      }
    }
  });
}

}  // namespace tomotx::diff
