#include "kalm/tape.hpp"

#include <algorithm>
#include <cmath>

#include "kalm/kernels.hpp"

namespace kalm {

VarId Tape::push(Tensor value, std::function<void(Tape&)> back) {
  Node n;
  n.val = std::move(value);
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return static_cast<VarId>(nodes_.size() - 1);
}

VarId Tape::input(Tensor value) { return push(std::move(value)); }

VarId Tape::param(const Tensor* value, Tensor* grad_sink) {
  if (grad_sink && !grad_sink->same_shape(*value))
    throw std::logic_error("param: gradient sink shape mismatch");
  Node n;
  n.ref = value;
  n.sink = grad_sink;
  nodes_.push_back(std::move(n));
  return static_cast<VarId>(nodes_.size() - 1);
}

const Tensor& Tape::value(VarId id) const {
  const Node& n = nodes_[id];
  return n.ref ? *n.ref : n.val;
}

Tensor& Tape::grad_of(VarId id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = Tensor(value(id).shape(), 0.0);
  return n.grad;
}

VarId Tape::add(VarId a, VarId b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  if (!va.same_shape(vb)) throw std::logic_error("add: shape mismatch");
  Tensor out = va;
  for (size_t i = 0; i < out.size(); ++i) out[i] += vb[i];
  VarId id = push(std::move(out));
  nodes_[id].back = [id, a, b](Tape& t) {
    const Tensor& g = t.grad_ro(id);
    Tensor& ga = t.grad_of(a);
    Tensor& gb = t.grad_of(b);
    for (size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i];
      gb[i] += g[i];
    }
  };
  return id;
}

VarId Tape::sub(VarId a, VarId b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  if (!va.same_shape(vb)) throw std::logic_error("sub: shape mismatch");
  Tensor out = va;
  for (size_t i = 0; i < out.size(); ++i) out[i] -= vb[i];
  VarId id = push(std::move(out));
  nodes_[id].back = [id, a, b](Tape& t) {
    const Tensor& g = t.grad_ro(id);
    Tensor& ga = t.grad_of(a);
    Tensor& gb = t.grad_of(b);
    for (size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i];
      gb[i] -= g[i];
    }
  };
  return id;
}

VarId Tape::mul(VarId a, VarId b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  if (!va.same_shape(vb)) throw std::logic_error("mul: shape mismatch");
  Tensor out = va;
  for (size_t i = 0; i < out.size(); ++i) out[i] *= vb[i];
  VarId id = push(std::move(out));
  nodes_[id].back = [id, a, b](Tape& t) {
    const Tensor& g = t.grad_ro(id);
    const Tensor& va = t.value(a);
    const Tensor& vb = t.value(b);
    Tensor& ga = t.grad_of(a);
    Tensor& gb = t.grad_of(b);
    for (size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i] * vb[i];
      gb[i] += g[i] * va[i];
    }
  };
  return id;
}

VarId Tape::scale(VarId a, double c) {
  Tensor out = value(a);
  for (size_t i = 0; i < out.size(); ++i) out[i] *= c;
  VarId id = push(std::move(out));
  nodes_[id].back = [id, a, c](Tape& t) {
    const Tensor& g = t.grad_ro(id);
    Tensor& ga = t.grad_of(a);
    for (size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
  };
  return id;
}

VarId Tape::smul(VarId a, VarId s) {
  const Tensor& va = value(a);
  const Tensor& vs = value(s);
  if (vs.size() != 1) throw std::logic_error("smul: scalar expected");
  Tensor out = va;
  for (size_t i = 0; i < out.size(); ++i) out[i] *= vs[0];
  VarId id = push(std::move(out));
  nodes_[id].back = [id, a, s](Tape& t) {
    const Tensor& g = t.grad_ro(id);
    const Tensor& va = t.value(a);
    double sv = t.value(s)[0];
    Tensor& ga = t.grad_of(a);
    double acc = 0.0;
    for (size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i] * sv;
      acc += g[i] * va[i];
    }
    t.grad_of(s)[0] += acc;
  };
  return id;
}

VarId Tape::cmul(VarId a, const Tensor& mask) {
  const Tensor& va = value(a);
  if (!va.same_shape(mask)) throw std::logic_error("cmul: shape mismatch");
  Tensor out = va;
  for (size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  VarId id = push(std::move(out));
  nodes_[id].back = [id, a, mask](Tape& t) {
    const Tensor& g = t.grad_ro(id);
    Tensor& ga = t.grad_of(a);
    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * mask[i];
  };
  return id;
}

VarId Tape::concat(VarId a, VarId b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  Tensor out = Tensor::zeros(va.size() + vb.size());
  std::copy(va.data(), va.data() + va.size(), out.data());
  std::copy(vb.data(), vb.data() + vb.size(), out.data() + va.size());
  VarId id = push(std::move(out));
  size_t na = va.size();
  nodes_[id].back = [id, a, b, na](Tape& t) {
    const Tensor& g = t.grad_ro(id);
    Tensor& ga = t.grad_of(a);
    Tensor& gb = t.grad_of(b);
    for (size_t i = 0; i < na; ++i) ga[i] += g[i];
    for (size_t i = na; i < g.size(); ++i) gb[i - na] += g[i];
  };
  return id;
}

VarId Tape::slice(VarId x, size_t offset, size_t len) {
  const Tensor& vx = value(x);
  if (offset + len > vx.size()) throw std::logic_error("slice: out of range");
  Tensor out = Tensor::zeros(len);
  std::copy(vx.data() + offset, vx.data() + offset + len, out.data());
  VarId id = push(std::move(out));
  nodes_[id].back = [id, x, offset, len](Tape& t) {
    const Tensor& g = t.grad_ro(id);
    Tensor& gx = t.grad_of(x);
    for (size_t i = 0; i < len; ++i) gx[offset + i] += g[i];
  };
  return id;
}

VarId Tape::row(VarId matrix, size_t r) {
  const Tensor& m = value(matrix);
  size_t n = m.cols();
  Tensor out = Tensor::zeros(n);
  std::copy(m.data() + r * n, m.data() + (r + 1) * n, out.data());
  VarId id = push(std::move(out));
  nodes_[id].back = [id, matrix, r, n](Tape& t) {
    const Tensor& g = t.grad_ro(id);
    Tensor& gm = t.grad_of(matrix);
    for (size_t j = 0; j < n; ++j) gm[r * n + j] += g[j];
  };
  return id;
}

VarId Tape::matvec(VarId W, VarId x) {
  const Tensor& w = value(W);
  const Tensor& vx = value(x);
  if (w.rank() != 2 || w.cols() != vx.size()) throw std::logic_error("matvec: shape mismatch");
  Tensor out = Tensor::zeros(w.rows());
  kernels::matvec(w, vx.data(), out.data());
  VarId id = push(std::move(out));
  nodes_[id].back = [id, W, x](Tape& t) {
    const Tensor& g = t.grad_ro(id);
    const Tensor& w = t.value(W);
    const Tensor& vx = t.value(x);
    kernels::outer_accum(t.grad_of(W), g.data(), vx.data());
    kernels::matvec_transpose_accum(w, g.data(), t.grad_of(x).data());
  };
  return id;
}

VarId Tape::matvec_rows(VarId W, size_t rows, VarId x) {
  const Tensor& w = value(W);
  const Tensor& vx = value(x);
  if (w.rank() != 2 || w.cols() != vx.size() || rows > w.rows())
    throw std::logic_error("matvec_rows: shape mismatch");
  Tensor out = Tensor::zeros(rows);
  kernels::matvec_rows(w, rows, vx.data(), out.data());
  VarId id = push(std::move(out));
  nodes_[id].back = [id, W, rows, x](Tape& t) {
    const Tensor& g = t.grad_ro(id);
    const Tensor& w = t.value(W);
    const Tensor& vx = t.value(x);
    kernels::outer_rows_accum(t.grad_of(W), rows, g.data(), vx.data());
    kernels::matvec_rows_transpose_accum(w, rows, g.data(), t.grad_of(x).data());
  };
  return id;
}

VarId Tape::matvec_transpose(VarId W, VarId x) {
  const Tensor& w = value(W);
  const Tensor& vx = value(x);
  if (w.rank() != 2 || w.rows() != vx.size())
    throw std::logic_error("matvec_transpose: shape mismatch");
  Tensor out = Tensor::zeros(w.cols());
  kernels::matvec_transpose_accum(w, vx.data(), out.data());
  VarId id = push(std::move(out));
  nodes_[id].back = [id, W, x](Tape& t) {
    const Tensor& g = t.grad_ro(id);
    const Tensor& w = t.value(W);
    const Tensor& vx = t.value(x);
    // d/dW of W^T x is x (outer) g; d/dx is W g.
    kernels::outer_accum(t.grad_of(W), vx.data(), g.data());
    Tensor tmp = Tensor::zeros(w.rows());
    kernels::matvec(w, g.data(), tmp.data());
    Tensor& gx = t.grad_of(x);
    for (size_t i = 0; i < gx.size(); ++i) gx[i] += tmp[i];
  };
  return id;
}

VarId Tape::sigmoid(VarId x) {
  Tensor out = value(x);
  for (size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
  VarId id = push(std::move(out));
  nodes_[id].back = [id, x](Tape& t) {
    const Tensor& g = t.grad_ro(id);
    const Tensor& y = t.value(id);
    Tensor& gx = t.grad_of(x);
    for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
  };
  return id;
}

VarId Tape::tanh(VarId x) {
  Tensor out = value(x);
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
  VarId id = push(std::move(out));
  nodes_[id].back = [id, x](Tape& t) {
    const Tensor& g = t.grad_ro(id);
    const Tensor& y = t.value(id);
    Tensor& gx = t.grad_of(x);
    for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (1.0 - y[i] * y[i]);
  };
  return id;
}

VarId Tape::exp(VarId x) {
  Tensor out = value(x);
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::exp(out[i]);
  VarId id = push(std::move(out));
  nodes_[id].back = [id, x](Tape& t) {
    const Tensor& g = t.grad_ro(id);
    const Tensor& y = t.value(id);
    Tensor& gx = t.grad_of(x);
    for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i];
  };
  return id;
}

VarId Tape::square(VarId x) {
  Tensor out = value(x);
  for (size_t i = 0; i < out.size(); ++i) out[i] *= out[i];
  VarId id = push(std::move(out));
  nodes_[id].back = [id, x](Tape& t) {
    const Tensor& g = t.grad_ro(id);
    const Tensor& vx = t.value(x);
    Tensor& gx = t.grad_of(x);
    for (size_t i = 0; i < g.size(); ++i) gx[i] += 2.0 * g[i] * vx[i];
  };
  return id;
}

VarId Tape::log_softmax(VarId x) {
  const Tensor& vx = value(x);
  if (vx.size() == 0) throw std::logic_error("log_softmax: empty input");
  double m = vx[0];
  for (size_t i = 1; i < vx.size(); ++i) m = std::max(m, vx[i]);
  double s = 0.0;
  for (size_t i = 0; i < vx.size(); ++i) s += std::exp(vx[i] - m);
  double lse = m + std::log(s);
  Tensor out = vx;
  for (size_t i = 0; i < out.size(); ++i) out[i] -= lse;
  VarId id = push(std::move(out));
  nodes_[id].back = [id, x](Tape& t) {
    const Tensor& g = t.grad_ro(id);
    const Tensor& y = t.value(id);  // log-probabilities
    Tensor& gx = t.grad_of(x);
    double gsum = 0.0;
    for (size_t i = 0; i < g.size(); ++i) gsum += g[i];
    for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] - std::exp(y[i]) * gsum;
  };
  return id;
}

VarId Tape::logsumexp(VarId x) {
  const Tensor& vx = value(x);
  if (vx.size() == 0) throw std::logic_error("logsumexp: empty input");
  double m = vx[0];
  for (size_t i = 1; i < vx.size(); ++i) m = std::max(m, vx[i]);
  double s = 0.0;
  for (size_t i = 0; i < vx.size(); ++i) s += std::exp(vx[i] - m);
  double lse = m + std::log(s);
  VarId id = push(Tensor::scalar(lse));
  nodes_[id].back = [id, x, lse](Tape& t) {
    double g = t.grad_ro(id)[0];
    const Tensor& vx = t.value(x);
    Tensor& gx = t.grad_of(x);
    for (size_t i = 0; i < gx.size(); ++i) gx[i] += g * std::exp(vx[i] - lse);
  };
  return id;
}

VarId Tape::sum(VarId x) {
  const Tensor& vx = value(x);
  double s = 0.0;
  for (size_t i = 0; i < vx.size(); ++i) s += vx[i];
  VarId id = push(Tensor::scalar(s));
  nodes_[id].back = [id, x](Tape& t) {
    double g = t.grad_ro(id)[0];
    Tensor& gx = t.grad_of(x);
    for (size_t i = 0; i < gx.size(); ++i) gx[i] += g;
  };
  return id;
}

VarId Tape::mean(VarId x) { return scale(sum(x), 1.0 / static_cast<double>(value(x).size())); }

VarId Tape::pick(VarId x, size_t i) {
  const Tensor& vx = value(x);
  if (i >= vx.size()) throw std::logic_error("pick: out of range");
  VarId id = push(Tensor::scalar(vx[i]));
  nodes_[id].back = [id, x, i](Tape& t) { t.grad_of(x)[i] += t.grad_ro(id)[0]; };
  return id;
}

VarId Tape::stack(const std::vector<VarId>& scalars) {
  Tensor out = Tensor::zeros(scalars.size());
  for (size_t i = 0; i < scalars.size(); ++i) {
    const Tensor& v = value(scalars[i]);
    if (v.size() != 1) throw std::logic_error("stack: non-scalar element");
    out[i] = v[0];
  }
  VarId id = push(std::move(out));
  std::vector<VarId> parts = scalars;
  nodes_[id].back = [id, parts](Tape& t) {
    const Tensor& g = t.grad_ro(id);
    for (size_t i = 0; i < parts.size(); ++i) t.grad_of(parts[i])[0] += g[i];
  };
  return id;
}

void Tape::backward(VarId loss) {
  if (value(loss).size() != 1) throw std::logic_error("backward: loss is not a scalar");
  grad_of(loss)[0] = 1.0;
  for (size_t i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    if (n.back && n.grad.size() > 0) n.back(*this);
  }
  for (Node& n : nodes_) {
    if (n.sink && n.grad.size() > 0)
      for (size_t i = 0; i < n.grad.size(); ++i) (*n.sink)[i] += n.grad[i];
  }
}

LstmOut lstm_step(Tape& t, VarId Wx, VarId Wh, VarId b, VarId h_prev, VarId c_prev,
                  VarId x) {
  size_t h4 = t.value(b).size();
  size_t hdim = h4 / 4;
  if (t.value(h_prev).size() != hdim || t.value(c_prev).size() != hdim)
    throw std::logic_error("lstm_step: state width mismatch");
  if (t.value(Wx).cols() != t.value(x).size())
    throw std::logic_error("lstm_step: input width mismatch");
  VarId a = t.add(t.add(t.matvec(Wx, x), t.matvec(Wh, h_prev)), b);
  VarId ig = t.sigmoid(t.slice(a, 0, hdim));
  VarId fg = t.sigmoid(t.slice(a, hdim, hdim));
  VarId cand = t.tanh(t.slice(a, 2 * hdim, hdim));
  VarId og = t.sigmoid(t.slice(a, 3 * hdim, hdim));
  VarId cell = t.add(t.mul(fg, c_prev), t.mul(ig, cand));
  VarId hidden = t.mul(og, t.tanh(cell));
  return {hidden, cell};
}

}  // namespace kalm
