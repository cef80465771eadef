#include "nar/autodiff.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace nar {

namespace {

double stable_softplus(double x) {
  // log(1 + e^x) without overflow on either tail
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void check_axis(int axis) {
  if (axis != 0 && axis != 1) throw std::invalid_argument("axis must be 0 or 1, got " + std::to_string(axis));
}

void check_rank2(const Tensor& t, const char* op) {
  if (t.shape.size() != 2) {
    throw std::invalid_argument(std::string(op) + " expects rank-2 tensors, got " + shape_str(t));
  }
}

}  // namespace

Tape::Node& Tape::node(Var v) {
  if (!v.valid() || v.id >= static_cast<int>(nodes_.size())) throw std::out_of_range("invalid tape handle");
  return nodes_[static_cast<std::size_t>(v.id)];
}

const Tape::Node& Tape::node(Var v) const {
  if (!v.valid() || v.id >= static_cast<int>(nodes_.size())) throw std::out_of_range("invalid tape handle");
  return nodes_[static_cast<std::size_t>(v.id)];
}

bool Tape::any_needs_grad(const std::vector<Var>& vs) const {
  for (Var v : vs)
    if (node(v).needs_grad) return true;
  return false;
}

Tensor& Tape::grad_buf(Var v) {
  Node& n = node(v);
  if (n.grad.data.empty()) n.grad = Tensor::zeros(n.value.shape);
  return n.grad;
}

void Tape::accumulate(Var v, const Tensor& g) {
  Tensor& buf = grad_buf(v);
  for (std::size_t i = 0; i < buf.data.size(); ++i) buf.data[i] += g.data[i];
}

Var Tape::emit(Tensor value, std::vector<Var> inputs, std::function<void(Tape&)> rule) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = any_needs_grad(inputs);
  if (n.needs_grad) n.backward = std::move(rule);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::input(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = false;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::param(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = true;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

const Tensor& Tape::grad(Var v) const {
  const Node& n = node(v);
  if (n.grad.data.empty()) n.grad = Tensor::zeros(n.value.shape);
  return n.grad;
}

Var Tape::matmul(Var a, Var b) {
  Tensor out = nar::matmul(value(a), value(b));  // shape checks live in the kernel
  return emit(std::move(out), {a, b}, [a, b, self = Var{static_cast<int>(nodes_.size())}](Tape& t) {
    const Tensor& g = t.node(self).grad;
    if (t.node(a).needs_grad) t.accumulate(a, nar::matmul(g, transposed(t.value(b))));
    if (t.node(b).needs_grad) t.accumulate(b, nar::matmul(transposed(t.value(a)), g));
  });
}

Var Tape::add(Var a, Var b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  if (!va.same_shape(vb)) throw std::invalid_argument("add shape mismatch: " + shape_str(va) + " vs " + shape_str(vb));
  Tensor out = va;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += vb.data[i];
  return emit(std::move(out), {a, b}, [a, b, self = Var{static_cast<int>(nodes_.size())}](Tape& t) {
    const Tensor& g = t.node(self).grad;
    if (t.node(a).needs_grad) t.accumulate(a, g);
    if (t.node(b).needs_grad) t.accumulate(b, g);
  });
}

Var Tape::sub(Var a, Var b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  if (!va.same_shape(vb)) throw std::invalid_argument("sub shape mismatch: " + shape_str(va) + " vs " + shape_str(vb));
  Tensor out = va;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= vb.data[i];
  return emit(std::move(out), {a, b}, [a, b, self = Var{static_cast<int>(nodes_.size())}](Tape& t) {
    const Tensor& g = t.node(self).grad;
    if (t.node(a).needs_grad) t.accumulate(a, g);
    if (t.node(b).needs_grad) {
      Tensor neg = g;
      for (double& v : neg.data) v = -v;
      t.accumulate(b, neg);
    }
  });
}

Var Tape::mul(Var a, Var b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  if (!va.same_shape(vb)) throw std::invalid_argument("mul shape mismatch: " + shape_str(va) + " vs " + shape_str(vb));
  Tensor out = va;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= vb.data[i];
  return emit(std::move(out), {a, b}, [a, b, self = Var{static_cast<int>(nodes_.size())}](Tape& t) {
    const Tensor& g = t.node(self).grad;
    if (t.node(a).needs_grad) {
      Tensor ga = g;
      const Tensor& vb2 = t.value(b);
      for (std::size_t i = 0; i < ga.data.size(); ++i) ga.data[i] *= vb2.data[i];
      t.accumulate(a, ga);
    }
    if (t.node(b).needs_grad) {
      Tensor gb = g;
      const Tensor& va2 = t.value(a);
      for (std::size_t i = 0; i < gb.data.size(); ++i) gb.data[i] *= va2.data[i];
      t.accumulate(b, gb);
    }
  });
}

Var Tape::scale(Var a, double c) {
  Tensor out = value(a);
  for (double& v : out.data) v *= c;
  return emit(std::move(out), {a}, [a, c, self = Var{static_cast<int>(nodes_.size())}](Tape& t) {
    const Tensor& g = t.node(self).grad;
    Tensor ga = g;
    for (double& v : ga.data) v *= c;
    t.accumulate(a, ga);
  });
}

Var Tape::relu(Var a) {
  Tensor out = value(a);
  for (double& v : out.data) v = v > 0.0 ? v : 0.0;
  return emit(std::move(out), {a}, [a, self = Var{static_cast<int>(nodes_.size())}](Tape& t) {
    const Tensor& g = t.node(self).grad;
    const Tensor& x = t.value(a);
    Tensor ga = g;
    for (std::size_t i = 0; i < ga.data.size(); ++i)
      if (x.data[i] <= 0.0) ga.data[i] = 0.0;
    t.accumulate(a, ga);
  });
}

Var Tape::softplus(Var a) {
  Tensor out = value(a);
  for (double& v : out.data) v = stable_softplus(v);
  return emit(std::move(out), {a}, [a, self = Var{static_cast<int>(nodes_.size())}](Tape& t) {
    const Tensor& g = t.node(self).grad;
    const Tensor& x = t.value(a);
    Tensor ga = g;
    for (std::size_t i = 0; i < ga.data.size(); ++i) ga.data[i] *= sigmoid(x.data[i]);
    t.accumulate(a, ga);
  });
}

Var Tape::softmax(Var a, int axis) {
  check_axis(axis);
  const Tensor& x = value(a);
  check_rank2(x, "softmax");
  Tensor out = x;
  const int R = x.rows(), C = x.cols();
  const int slices = axis == 1 ? R : C;
  const int len = axis == 1 ? C : R;
  auto idx = [&](int s, int i) { return axis == 1 ? s * C + i : i * C + s; };
  for (int s = 0; s < slices; ++s) {
    double m = -HUGE_VAL;
    for (int i = 0; i < len; ++i) m = std::max(m, x.data[idx(s, i)]);
    double z = 0.0;
    for (int i = 0; i < len; ++i) {
      double e = std::exp(x.data[idx(s, i)] - m);
      out.data[idx(s, i)] = e;
      z += e;
    }
    for (int i = 0; i < len; ++i) out.data[idx(s, i)] /= z;
  }
  return emit(std::move(out), {a}, [a, axis, self = Var{static_cast<int>(nodes_.size())}](Tape& t) {
    const Tensor& g = t.node(self).grad;
    const Tensor& y = t.value(self);
    Tensor ga = Tensor::zeros(y.shape);
    const int R = y.rows(), C = y.cols();
    const int slices = axis == 1 ? R : C;
    const int len = axis == 1 ? C : R;
    auto idx = [&](int s, int i) { return axis == 1 ? s * C + i : i * C + s; };
    for (int s = 0; s < slices; ++s) {
      double inner = 0.0;
      for (int i = 0; i < len; ++i) inner += g.data[idx(s, i)] * y.data[idx(s, i)];
      for (int i = 0; i < len; ++i) ga.data[idx(s, i)] = y.data[idx(s, i)] * (g.data[idx(s, i)] - inner);
    }
    t.accumulate(a, ga);
  });
}

Var Tape::log_softmax(Var a, int axis) {
  check_axis(axis);
  const Tensor& x = value(a);
  check_rank2(x, "log_softmax");
  Tensor out = x;
  const int R = x.rows(), C = x.cols();
  const int slices = axis == 1 ? R : C;
  const int len = axis == 1 ? C : R;
  auto idx = [&](int s, int i) { return axis == 1 ? s * C + i : i * C + s; };
  for (int s = 0; s < slices; ++s) {
    double m = -HUGE_VAL;
    for (int i = 0; i < len; ++i) m = std::max(m, x.data[idx(s, i)]);
    double z = 0.0;
    for (int i = 0; i < len; ++i) z += std::exp(x.data[idx(s, i)] - m);
    const double lse = m + std::log(z);
    for (int i = 0; i < len; ++i) out.data[idx(s, i)] = x.data[idx(s, i)] - lse;
  }
  return emit(std::move(out), {a}, [a, axis, self = Var{static_cast<int>(nodes_.size())}](Tape& t) {
    const Tensor& g = t.node(self).grad;
    const Tensor& y = t.value(self);
    Tensor ga = Tensor::zeros(y.shape);
    const int R = y.rows(), C = y.cols();
    const int slices = axis == 1 ? R : C;
    const int len = axis == 1 ? C : R;
    auto idx = [&](int s, int i) { return axis == 1 ? s * C + i : i * C + s; };
    for (int s = 0; s < slices; ++s) {
      double gsum = 0.0;
      for (int i = 0; i < len; ++i) gsum += g.data[idx(s, i)];
      for (int i = 0; i < len; ++i)
        ga.data[idx(s, i)] = g.data[idx(s, i)] - std::exp(y.data[idx(s, i)]) * gsum;
    }
    t.accumulate(a, ga);
  });
}

Var Tape::layer_norm(Var x, Var gain, Var bias, double eps) {
  const Tensor& vx = value(x);
  check_rank2(vx, "layer_norm");
  const int R = vx.rows(), C = vx.cols();
  const Tensor& vg = value(gain);
  const Tensor& vb = value(bias);
  if (vg.numel() != C || vb.numel() != C) {
    throw std::invalid_argument("layer_norm affine shape mismatch: gain " + shape_str(vg) + ", bias " +
                                shape_str(vb) + " for input " + shape_str(vx));
  }
  Tensor out = Tensor::zeros(vx.shape);
  Tensor xhat = Tensor::zeros(vx.shape);
  std::vector<double> inv_std(static_cast<std::size_t>(R));
  for (int r = 0; r < R; ++r) {
    double mean = 0.0;
    for (int c = 0; c < C; ++c) mean += vx.at(r, c);
    mean /= C;
    double var = 0.0;
    for (int c = 0; c < C; ++c) {
      const double d = vx.at(r, c) - mean;
      var += d * d;
    }
    var /= C;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(r)] = is;
    for (int c = 0; c < C; ++c) {
      const double h = (vx.at(r, c) - mean) * is;
      xhat.at(r, c) = h;
      out.at(r, c) = h * vg.data[static_cast<std::size_t>(c)] + vb.data[static_cast<std::size_t>(c)];
    }
  }
  return emit(std::move(out), {x, gain, bias},
              [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std),
               self = Var{static_cast<int>(nodes_.size())}](Tape& t) {
                const Tensor& g = t.node(self).grad;
                const Tensor& vg = t.value(gain);
                const int R = g.rows(), C = g.cols();
                if (t.node(gain).needs_grad) {
                  Tensor gg = Tensor::zeros(vg.shape);
                  for (int r = 0; r < R; ++r)
                    for (int c = 0; c < C; ++c) gg.data[static_cast<std::size_t>(c)] += g.at(r, c) * xhat.at(r, c);
                  t.accumulate(gain, gg);
                }
                if (t.node(bias).needs_grad) {
                  Tensor gb = Tensor::zeros(t.value(bias).shape);
                  for (int r = 0; r < R; ++r)
                    for (int c = 0; c < C; ++c) gb.data[static_cast<std::size_t>(c)] += g.at(r, c);
                  t.accumulate(bias, gb);
                }
                if (t.node(x).needs_grad) {
                  Tensor gx = Tensor::zeros(g.shape);
                  for (int r = 0; r < R; ++r) {
                    double mean_dh = 0.0, mean_dh_h = 0.0;
                    for (int c = 0; c < C; ++c) {
                      const double dh = g.at(r, c) * vg.data[static_cast<std::size_t>(c)];
                      mean_dh += dh;
                      mean_dh_h += dh * xhat.at(r, c);
                    }
                    mean_dh /= C;
                    mean_dh_h /= C;
                    const double is = inv_std[static_cast<std::size_t>(r)];
                    for (int c = 0; c < C; ++c) {
                      const double dh = g.at(r, c) * vg.data[static_cast<std::size_t>(c)];
                      gx.at(r, c) = is * (dh - mean_dh - xhat.at(r, c) * mean_dh_h);
                    }
                  }
                  t.accumulate(x, gx);
                }
              });
}

Var Tape::transpose(Var a) {
  Tensor out = transposed(value(a));
  return emit(std::move(out), {a}, [a, self = Var{static_cast<int>(nodes_.size())}](Tape& t) {
    t.accumulate(a, transposed(t.node(self).grad));
  });
}

Var Tape::slice_cols(Var a, int c0, int c1) {
  const Tensor& x = value(a);
  check_rank2(x, "slice_cols");
  if (c0 < 0 || c1 > x.cols() || c0 >= c1) {
    throw std::invalid_argument("slice_cols range [" + std::to_string(c0) + ", " + std::to_string(c1) +
                                ") invalid for " + shape_str(x));
  }
  const int R = x.rows(), W = c1 - c0;
  Tensor out = Tensor::zeros({R, W});
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < W; ++c) out.at(r, c) = x.at(r, c0 + c);
  return emit(std::move(out), {a}, [a, c0, W, self = Var{static_cast<int>(nodes_.size())}](Tape& t) {
    const Tensor& g = t.node(self).grad;
    Tensor& buf = t.grad_buf(a);
    for (int r = 0; r < g.rows(); ++r)
      for (int c = 0; c < W; ++c) buf.at(r, c0 + c) += g.at(r, c);
  });
}

Var Tape::concat(const std::vector<Var>& parts, int axis) {
  check_axis(axis);
  if (parts.empty()) throw std::invalid_argument("concat needs at least one part");
  const Tensor& first = value(parts[0]);
  check_rank2(first, "concat");
  int R = first.rows(), C = first.cols();
  int total = 0;
  for (Var p : parts) {
    const Tensor& v = value(p);
    check_rank2(v, "concat");
    if (axis == 1) {
      if (v.rows() != R)
        throw std::invalid_argument("concat row mismatch: " + shape_str(first) + " vs " + shape_str(v));
      total += v.cols();
    } else {
      if (v.cols() != C)
        throw std::invalid_argument("concat column mismatch: " + shape_str(first) + " vs " + shape_str(v));
      total += v.rows();
    }
  }
  Tensor out = axis == 1 ? Tensor::zeros({R, total}) : Tensor::zeros({total, C});
  int off = 0;
  for (Var p : parts) {
    const Tensor& v = value(p);
    if (axis == 1) {
      for (int r = 0; r < R; ++r)
        for (int c = 0; c < v.cols(); ++c) out.at(r, off + c) = v.at(r, c);
      off += v.cols();
    } else {
      for (int r = 0; r < v.rows(); ++r)
        for (int c = 0; c < C; ++c) out.at(off + r, c) = v.at(r, c);
      off += v.rows();
    }
  }
  return emit(std::move(out), parts, [parts, axis, self = Var{static_cast<int>(nodes_.size())}](Tape& t) {
    const Tensor& g = t.node(self).grad;
    int off = 0;
    for (Var p : parts) {
      const Tensor& v = t.value(p);
      if (t.node(p).needs_grad) {
        Tensor gp = Tensor::zeros(v.shape);
        if (axis == 1) {
          for (int r = 0; r < v.rows(); ++r)
            for (int c = 0; c < v.cols(); ++c) gp.at(r, c) = g.at(r, off + c);
        } else {
          for (int r = 0; r < v.rows(); ++r)
            for (int c = 0; c < v.cols(); ++c) gp.at(r, c) = g.at(off + r, c);
        }
        t.accumulate(p, gp);
      }
      off += axis == 1 ? v.cols() : v.rows();
    }
  });
}

Var Tape::mean(Var a, int axis) {
  check_axis(axis);
  const Tensor& x = value(a);
  check_rank2(x, "mean");
  const int R = x.rows(), C = x.cols();
  Tensor out = axis == 0 ? Tensor::zeros({1, C}) : Tensor::zeros({R, 1});
  if (axis == 0) {
    for (int r = 0; r < R; ++r)
      for (int c = 0; c < C; ++c) out.at(0, c) += x.at(r, c);
    for (int c = 0; c < C; ++c) out.at(0, c) /= R;
  } else {
    for (int r = 0; r < R; ++r) {
      for (int c = 0; c < C; ++c) out.at(r, 0) += x.at(r, c);
      out.at(r, 0) /= C;
    }
  }
  return emit(std::move(out), {a}, [a, axis, self = Var{static_cast<int>(nodes_.size())}](Tape& t) {
    const Tensor& g = t.node(self).grad;
    const Tensor& x = t.value(a);
    const int R = x.rows(), C = x.cols();
    Tensor ga = Tensor::zeros(x.shape);
    if (axis == 0) {
      for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c) ga.at(r, c) = g.at(0, c) / R;
    } else {
      for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c) ga.at(r, c) = g.at(r, 0) / C;
    }
    t.accumulate(a, ga);
  });
}

Var Tape::sum(Var a) {
  double s = 0.0;
  for (double v : value(a).data) s += v;
  return emit(Tensor::scalar(s), {a}, [a, self = Var{static_cast<int>(nodes_.size())}](Tape& t) {
    const double g = t.node(self).grad.data[0];
    Tensor ga = Tensor::full(t.value(a).shape, g);
    t.accumulate(a, ga);
  });
}

Var Tape::dropout(Var a, double rate, Rng& rng) {
  if (rate <= 0.0) return a;
  if (rate >= 1.0) throw std::invalid_argument("dropout rate must be < 1");
  const Tensor& x = value(a);
  const double keep = 1.0 - rate;
  Tensor mask = Tensor::zeros(x.shape);
  for (double& m : mask.data) m = rng.uniform() < rate ? 0.0 : 1.0 / keep;
  Tensor out = x;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= mask.data[i];
  return emit(std::move(out), {a},
              [a, mask = std::move(mask), self = Var{static_cast<int>(nodes_.size())}](Tape& t) {
                const Tensor& g = t.node(self).grad;
                Tensor ga = g;
                for (std::size_t i = 0; i < ga.data.size(); ++i) ga.data[i] *= mask.data[i];
                t.accumulate(a, ga);
              });
}

Var Tape::attention(Var q, Var k, Var v) {
  const int dk = value(k).cols();
  Var logits = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(dk)));
  Var weights = softmax(logits, 1);
  return matmul(weights, v);
}

void Tape::backward(Var loss) {
  if (!value(loss).is_scalar()) {
    throw std::invalid_argument("backward needs a scalar loss, got " + shape_str(value(loss)));
  }
  backward(std::vector<std::pair<Var, double>>{{loss, 1.0}});
}

void Tape::backward(const std::vector<std::pair<Var, double>>& seeds) {
  for (auto& n : nodes_) {
    if (!n.grad.data.empty()) std::fill(n.grad.data.begin(), n.grad.data.end(), 0.0);
  }
  int highest = -1;
  for (const auto& [v, s] : seeds) {
    if (!value(v).is_scalar())
      throw std::invalid_argument("backward seeds must target scalar nodes, got " + shape_str(value(v)));
    grad_buf(v).data[0] += s;
    highest = std::max(highest, v.id);
  }
  for (int i = highest; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.needs_grad || !n.backward || n.grad.data.empty()) continue;
    n.backward(*this);
  }
}

}  // namespace nar
