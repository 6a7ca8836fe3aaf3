// Copyright 2026 The copyflow Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "copyflow/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "copyflow/errors.hpp"

namespace copyflow {

std::vector<double> softmax(std::span<const double> scores) {
  if (scores.empty()) throw DomainError("softmax of an empty vector");
  const double m = *std::max_element(scores.begin(), scores.end());
  std::vector<double> out(scores.size());
  double z = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out[i] = std::exp(scores[i] - m);
    z += out[i];
  }
  for (double& v : out) v /= z;
  return out;
}

double kl_divergence(std::span<const double> q, std::span<const double> p, double floor) {
  if (q.size() != p.size()) throw DimensionError("kl_divergence: size mismatch");
  if (!(floor > 0.0)) throw DomainError("kl_divergence: floor must be positive");
  double kl = 0.0;
  for (std::size_t l = 0; l < q.size(); ++l) {
    if (q[l] < 0.0 || p[l] < 0.0) throw DomainError("kl_divergence: negative probability");
    if (q[l] == 0.0) continue;
    kl += q[l] * (std::log(q[l]) - std::log(std::max(p[l], floor)));
  }
  return kl;
}

namespace ops {
namespace {

Tape& tape_of(Var a) { return *a.tape; }

void require_same_size(const Tensor& a, const Tensor& b, const char* op) {
  if (a.size() != b.size()) {
    throw DimensionError(std::string(op) + ": size mismatch " + a.shape_string() + " vs " +
                         b.shape_string());
  }
}

template <typename F>
Var unary(Var a, F&& f, Tape::Backward backward) {
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  return t.push(std::move(out), t.needs_grad(a.id), std::move(backward));
}

}  // namespace

Var add(Var a, Var b) {
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same_size(av, bv, "add");
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  return t.push(std::move(out), t.needs_grad(a.id) || t.needs_grad(b.id),
                [a = a.id, b = b.id](Tape& t, std::uint32_t self) {
                  const Tensor& g = t.grad(self);
                  for (auto id : {a, b}) {
                    if (!t.needs_grad(id)) continue;
                    auto d = t.grad_buffer(id).data();
                    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
                  }
                });
}

Var sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

Var mul(Var a, Var b) {
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same_size(av, bv, "mul");
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  return t.push(std::move(out), t.needs_grad(a.id) || t.needs_grad(b.id),
                [a = a.id, b = b.id](Tape& t, std::uint32_t self) {
                  const Tensor& g = t.grad(self);
                  const Tensor& av = t.value(a);
                  const Tensor& bv = t.value(b);
                  if (t.needs_grad(a)) {
                    auto d = t.grad_buffer(a).data();
                    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * bv[i];
                  }
                  if (t.needs_grad(b)) {
                    auto d = t.grad_buffer(b).data();
                    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * av[i];
                  }
                });
}

Var scale(Var a, double factor) {
  return unary(a, [factor](double x) { return x * factor; },
               [a = a.id, factor](Tape& t, std::uint32_t self) {
                 const Tensor& g = t.grad(self);
                 auto d = t.grad_buffer(a).data();
                 for (std::size_t i = 0; i < d.size(); ++i) d[i] += factor * g[i];
               });
}

Var add_n(std::span<const Var> terms) {
  if (terms.empty()) throw ContractError("add_n of no terms");
  Tape& t = tape_of(terms[0]);
  Tensor out(terms[0].value().shape());
  bool needs = false;
  std::vector<std::uint32_t> ids;
  ids.reserve(terms.size());
  for (Var v : terms) {
    const Tensor& tv = v.value();
    require_same_size(out, tv, "add_n");
    for (std::size_t i = 0; i < tv.size(); ++i) out[i] += tv[i];
    needs = needs || t.needs_grad(v.id);
    ids.push_back(v.id);
  }
  return t.push(std::move(out), needs, [ids = std::move(ids)](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    for (auto id : ids) {
      if (!t.needs_grad(id)) continue;
      auto d = t.grad_buffer(id).data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
    }
  });
}

Var sigmoid(Var a) {
  return unary(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
               [a = a.id](Tape& t, std::uint32_t self) {
                 const Tensor& g = t.grad(self);
                 const Tensor& y = t.value(self);
                 auto d = t.grad_buffer(a).data();
                 for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * y[i] * (1.0 - y[i]);
               });
}

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); },
               [a = a.id](Tape& t, std::uint32_t self) {
                 const Tensor& g = t.grad(self);
                 const Tensor& y = t.value(self);
                 auto d = t.grad_buffer(a).data();
                 for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * (1.0 - y[i] * y[i]);
               });
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); },
               [a = a.id](Tape& t, std::uint32_t self) {
                 const Tensor& g = t.grad(self);
                 const Tensor& y = t.value(self);
                 auto d = t.grad_buffer(a).data();
                 for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * y[i];
               });
}

Var log(Var a) {
  return unary(a, [](double x) { return std::log(x); },
               [a = a.id](Tape& t, std::uint32_t self) {
                 const Tensor& g = t.grad(self);
                 const Tensor& x = t.value(a);
                 auto d = t.grad_buffer(a).data();
                 for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] / x[i];
               });
}

Var matvec(Var w, Var x) {
  Tape& t = tape_of(w);
  const Tensor& wv = w.value();
  const Tensor& xv = x.value();
  if (wv.rank() != 2 || wv.cols() != xv.size()) {
    throw DimensionError("matvec: " + wv.shape_string() + " times " + xv.shape_string());
  }
  const std::size_t m = wv.rows(), n = wv.cols();
  Tensor out({m});
  for (std::size_t i = 0; i < m; ++i) {
    const double* wr = wv.data().data() + i * n;
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += wr[j] * xv[j];
    out[i] = s;
  }
  return t.push(std::move(out), t.needs_grad(w.id) || t.needs_grad(x.id),
                [w = w.id, x = x.id, m, n](Tape& t, std::uint32_t self) {
                  const Tensor& g = t.grad(self);
                  const Tensor& wv = t.value(w);
                  const Tensor& xv = t.value(x);
                  if (t.needs_grad(w)) {
                    double* dw = t.grad_buffer(w).data().data();
                    for (std::size_t i = 0; i < m; ++i) {
                      const double gi = g[i];
                      if (gi == 0.0) continue;
                      double* row = dw + i * n;
                      for (std::size_t j = 0; j < n; ++j) row[j] += gi * xv[j];
                    }
                  }
                  if (t.needs_grad(x)) {
                    auto dx = t.grad_buffer(x).data();
                    const double* wp = wv.data().data();
                    for (std::size_t i = 0; i < m; ++i) {
                      const double gi = g[i];
                      if (gi == 0.0) continue;
                      const double* row = wp + i * n;
                      for (std::size_t j = 0; j < n; ++j) dx[j] += gi * row[j];
                    }
                  }
                });
}

Var matmul_nt(Var x, Var w) {
  Tape& t = tape_of(x);
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  if (wv.rank() != 2 || xv.cols() != wv.cols()) {
    throw DimensionError("matmul_nt: " + xv.shape_string() + " times " + wv.shape_string() + "^T");
  }
  const std::size_t rows = xv.rows(), n = xv.cols(), m = wv.rows();
  Tensor out({rows, m});
  for (std::size_t l = 0; l < rows; ++l) {
    const double* xr = xv.data().data() + l * n;
    for (std::size_t k = 0; k < m; ++k) {
      const double* wr = wv.data().data() + k * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += xr[j] * wr[j];
      out[l * m + k] = s;
    }
  }
  return t.push(std::move(out), t.needs_grad(x.id) || t.needs_grad(w.id),
                [x = x.id, w = w.id, rows, n, m](Tape& t, std::uint32_t self) {
                  const Tensor& g = t.grad(self);
                  const double* xp = t.value(x).data().data();
                  const double* wp = t.value(w).data().data();
                  if (t.needs_grad(x)) {
                    double* dx = t.grad_buffer(x).data().data();
                    for (std::size_t l = 0; l < rows; ++l)
                      for (std::size_t k = 0; k < m; ++k) {
                        const double gk = g[l * m + k];
                        for (std::size_t j = 0; j < n; ++j) dx[l * n + j] += gk * wp[k * n + j];
                      }
                  }
                  if (t.needs_grad(w)) {
                    double* dw = t.grad_buffer(w).data().data();
                    for (std::size_t l = 0; l < rows; ++l)
                      for (std::size_t k = 0; k < m; ++k) {
                        const double gk = g[l * m + k];
                        for (std::size_t j = 0; j < n; ++j) dw[k * n + j] += gk * xp[l * n + j];
                      }
                  }
                });
}

Var stack(std::span<const Var> rows) {
  if (rows.empty()) throw ContractError("stack of no rows");
  Tape& t = tape_of(rows[0]);
  const std::size_t n = rows[0].size();
  Tensor out({rows.size(), n});
  bool needs = false;
  std::vector<std::uint32_t> ids;
  ids.reserve(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const Tensor& v = rows[r].value();
    if (v.size() != n) throw DimensionError("stack: ragged rows");
    std::copy(v.data().begin(), v.data().end(), out.data().begin() + r * n);
    needs = needs || t.needs_grad(rows[r].id);
    ids.push_back(rows[r].id);
  }
  return t.push(std::move(out), needs, [ids = std::move(ids), n](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    for (std::size_t r = 0; r < ids.size(); ++r) {
      if (!t.needs_grad(ids[r])) continue;
      auto d = t.grad_buffer(ids[r]).data();
      for (std::size_t j = 0; j < n; ++j) d[j] += g[r * n + j];
    }
  });
}

Var row(Var m, std::size_t r) {
  Tape& t = tape_of(m);
  const Tensor& mv = m.value();
  if (r >= mv.rows()) {
    throw DimensionError("row " + std::to_string(r) + " out of range for " + mv.shape_string());
  }
  auto src = mv.row(r);
  Tensor out({src.size()}, std::vector<double>(src.begin(), src.end()));
  return t.push(std::move(out), t.needs_grad(m.id), [m = m.id, r](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    auto d = t.grad_buffer(m).row(r);
    for (std::size_t j = 0; j < d.size(); ++j) d[j] += g[j];
  });
}

Var concat(Var a, Var b) {
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  std::vector<double> v(av.data().begin(), av.data().end());
  v.insert(v.end(), bv.data().begin(), bv.data().end());
  const std::size_t na = av.size();
  return t.push(Tensor::vector(std::move(v)), t.needs_grad(a.id) || t.needs_grad(b.id),
                [a = a.id, b = b.id, na](Tape& t, std::uint32_t self) {
                  const Tensor& g = t.grad(self);
                  if (t.needs_grad(a)) {
                    auto d = t.grad_buffer(a).data();
                    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
                  }
                  if (t.needs_grad(b)) {
                    auto d = t.grad_buffer(b).data();
                    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[na + i];
                  }
                });
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return t.push(Tensor::scalar(s), t.needs_grad(a.id), [a = a.id](Tape& t, std::uint32_t self) {
    const double g = t.grad(self)[0];
    for (double& d : t.grad_buffer(a).data()) d += g;
  });
}

Var dot(Var a, Var b) {
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same_size(av, bv, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += av[i] * bv[i];
  return t.push(Tensor::scalar(s), t.needs_grad(a.id) || t.needs_grad(b.id),
                [a = a.id, b = b.id](Tape& t, std::uint32_t self) {
                  const double g = t.grad(self)[0];
                  const Tensor& av = t.value(a);
                  const Tensor& bv = t.value(b);
                  if (t.needs_grad(a)) {
                    auto d = t.grad_buffer(a).data();
                    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g * bv[i];
                  }
                  if (t.needs_grad(b)) {
                    auto d = t.grad_buffer(b).data();
                    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g * av[i];
                  }
                });
}

Var pick(Var a, std::size_t i) {
  Tape& t = tape_of(a);
  if (i >= a.size()) throw DimensionError("pick: index out of range");
  return t.push(Tensor::scalar(a.value()[i]), t.needs_grad(a.id),
                [a = a.id, i](Tape& t, std::uint32_t self) {
                  t.grad_buffer(a)[i] += t.grad(self)[0];
                });
}

Var neg_log(Var a, std::size_t i) {
  Tape& t = tape_of(a);
  if (i >= a.size()) throw DimensionError("neg_log: index out of range");
  return t.push(Tensor::scalar(-std::log(a.value()[i])), t.needs_grad(a.id),
                [a = a.id, i](Tape& t, std::uint32_t self) {
                  t.grad_buffer(a)[i] -= t.grad(self)[0] / t.value(a)[i];
                });
}

Var softmax(Var scores, const std::vector<bool>& mask) {
  Tape& t = tape_of(scores);
  const Tensor& s = scores.value();
  if (s.empty()) throw DomainError("softmax of an empty vector");
  if (!mask.empty() && mask.size() != s.size()) throw DimensionError("softmax: mask size");
  auto live = [&](std::size_t i) { return mask.empty() || mask[i]; };
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < s.size(); ++i)
    if (live(i)) m = std::max(m, s[i]);
  if (!std::isfinite(m)) throw DomainError("softmax: every position is masked");
  Tensor out(s.shape());
  double z = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!live(i)) continue;
    out[i] = std::exp(s[i] - m);
    z += out[i];
  }
  for (double& v : out.data()) v /= z;
  return t.push(std::move(out), t.needs_grad(scores.id), [a = scores.id](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    double inner = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) inner += y[i] * g[i];
    auto d = t.grad_buffer(a).data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += y[i] * (g[i] - inner);
  });
}

Var additive_scores(Var projected, Var query, Var v) {
  Tape& t = tape_of(projected);
  const Tensor& p = projected.value();
  const Tensor& q = query.value();
  const Tensor& vv = v.value();
  const std::size_t rows = p.rows(), a = p.cols();
  if (q.size() != a || vv.size() != a) throw DimensionError("additive_scores: width mismatch");
  Tensor act({rows, a});
  Tensor out({rows});
  for (std::size_t i = 0; i < rows; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < a; ++k) {
      const double th = std::tanh(p[i * a + k] + q[k]);
      act[i * a + k] = th;
      s += vv[k] * th;
    }
    out[i] = s;
  }
  const bool needs =
      t.needs_grad(projected.id) || t.needs_grad(query.id) || t.needs_grad(v.id);
  if (!t.recording() || !needs) return t.push(std::move(out), false, {});
  return t.push(std::move(out), true,
                [pid = projected.id, qid = query.id, vid = v.id, act = std::move(act), rows,
                 a](Tape& t, std::uint32_t self) {
                  const Tensor& g = t.grad(self);
                  const Tensor& vv = t.value(vid);
                  double* dp = t.needs_grad(pid) ? t.grad_buffer(pid).data().data() : nullptr;
                  double* dq = t.needs_grad(qid) ? t.grad_buffer(qid).data().data() : nullptr;
                  double* dv = t.needs_grad(vid) ? t.grad_buffer(vid).data().data() : nullptr;
                  for (std::size_t i = 0; i < rows; ++i) {
                    const double gi = g[i];
                    if (gi == 0.0) continue;
                    for (std::size_t k = 0; k < a; ++k) {
                      const double th = act[i * a + k];
                      if (dv) dv[k] += gi * th;
                      const double du = gi * vv[k] * (1.0 - th * th);
                      if (dp) dp[i * a + k] += du;
                      if (dq) dq[k] += du;
                    }
                  }
                });
}

Var weighted_rows(Var weights, Var x) {
  Tape& t = tape_of(weights);
  const Tensor& w = weights.value();
  const Tensor& xv = x.value();
  const std::size_t rows = xv.rows(), n = xv.cols();
  if (w.size() != rows) throw DimensionError("weighted_rows: weight count");
  Tensor out({n});
  for (std::size_t i = 0; i < rows; ++i) {
    if (w[i] == 0.0) continue;
    for (std::size_t j = 0; j < n; ++j) out[j] += w[i] * xv[i * n + j];
  }
  return t.push(std::move(out), t.needs_grad(weights.id) || t.needs_grad(x.id),
                [wid = weights.id, xid = x.id, rows, n](Tape& t, std::uint32_t self) {
                  const Tensor& g = t.grad(self);
                  const Tensor& w = t.value(wid);
                  const Tensor& xv = t.value(xid);
                  if (t.needs_grad(wid)) {
                    auto dw = t.grad_buffer(wid).data();
                    for (std::size_t i = 0; i < rows; ++i) {
                      double s = 0.0;
                      for (std::size_t j = 0; j < n; ++j) s += g[j] * xv[i * n + j];
                      dw[i] += s;
                    }
                  }
                  if (t.needs_grad(xid)) {
                    auto dx = t.grad_buffer(xid).data();
                    for (std::size_t i = 0; i < rows; ++i) {
                      if (w[i] == 0.0) continue;
                      for (std::size_t j = 0; j < n; ++j) dx[i * n + j] += w[i] * g[j];
                    }
                  }
                });
}

Var gru_cell(Var x, Var h, Var wx, Var wh, Var b) {
  Tape& t = tape_of(x);
  const Tensor& xv = x.value();
  const Tensor& hv = h.value();
  const Tensor& wxv = wx.value();
  const Tensor& whv = wh.value();
  const Tensor& bv = b.value();
  const std::size_t hs = hv.size(), d = xv.size();
  if (wxv.rank() != 2 || wxv.rows() != 3 * hs || wxv.cols() != d) {
    throw DimensionError("gru_cell: input weights " + wxv.shape_string() + " for input " +
                         xv.shape_string() + " and hidden " + hv.shape_string());
  }
  if (whv.rank() != 2 || whv.rows() != 3 * hs || whv.cols() != hs || bv.size() != 3 * hs) {
    throw DimensionError("gru_cell: hidden weights " + whv.shape_string() + " / bias " +
                         bv.shape_string() + " for hidden " + hv.shape_string());
  }
  const double* wxp = wxv.data().data();
  const double* whp = whv.data().data();
  // a = Wx x + b
  std::vector<double> a(3 * hs);
  for (std::size_t i = 0; i < 3 * hs; ++i) {
    double s = bv[i];
    const double* row = wxp + i * d;
    for (std::size_t j = 0; j < d; ++j) s += row[j] * xv[j];
    a[i] = s;
  }
  std::vector<double> r(hs), z(hs), n(hs), rh(hs);
  for (std::size_t i = 0; i < hs; ++i) {
    double sr = a[i], sz = a[hs + i];
    const double* rr = whp + i * hs;
    const double* rz = whp + (hs + i) * hs;
    for (std::size_t j = 0; j < hs; ++j) {
      sr += rr[j] * hv[j];
      sz += rz[j] * hv[j];
    }
    r[i] = 1.0 / (1.0 + std::exp(-sr));
    z[i] = 1.0 / (1.0 + std::exp(-sz));
    rh[i] = r[i] * hv[i];
  }
  Tensor out({hs});
  for (std::size_t i = 0; i < hs; ++i) {
    double sn = a[2 * hs + i];
    const double* rn = whp + (2 * hs + i) * hs;
    for (std::size_t j = 0; j < hs; ++j) sn += rn[j] * rh[j];
    n[i] = std::tanh(sn);
    out[i] = z[i] * hv[i] + (1.0 - z[i]) * n[i];
  }
  const bool needs = t.needs_grad(x.id) || t.needs_grad(h.id) || t.needs_grad(wx.id) ||
                     t.needs_grad(wh.id) || t.needs_grad(b.id);
  if (!t.recording() || !needs) return t.push(std::move(out), false, {});
  return t.push(
      std::move(out), true,
      [xid = x.id, hid = h.id, wxid = wx.id, whid = wh.id, bid = b.id, r = std::move(r),
       z = std::move(z), n = std::move(n), rh = std::move(rh), hs, d](Tape& t, std::uint32_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& xv = t.value(xid);
        const Tensor& hv = t.value(hid);
        const double* wxp = t.value(wxid).data().data();
        const double* whp = t.value(whid).data().data();
        std::vector<double> dpre(3 * hs);  // pre-activation grads, blocks r, z, n
        std::vector<double> dh(hs);
        for (std::size_t i = 0; i < hs; ++i) {
          const double dz = g[i] * (hv[i] - n[i]);
          const double dn = g[i] * (1.0 - z[i]);
          dh[i] = g[i] * z[i];
          dpre[hs + i] = dz * z[i] * (1.0 - z[i]);
          dpre[2 * hs + i] = dn * (1.0 - n[i] * n[i]);
        }
        // Through Wh_n (r * h).
        std::vector<double> drh(hs);
        for (std::size_t i = 0; i < hs; ++i) {
          const double gi = dpre[2 * hs + i];
          const double* rn = whp + (2 * hs + i) * hs;
          for (std::size_t j = 0; j < hs; ++j) drh[j] += gi * rn[j];
        }
        for (std::size_t j = 0; j < hs; ++j) {
          dpre[j] = drh[j] * hv[j] * r[j] * (1.0 - r[j]);
          dh[j] += drh[j] * r[j];
        }
        if (t.needs_grad(hid)) {
          for (std::size_t i = 0; i < hs; ++i) {
            const double gr = dpre[i], gz = dpre[hs + i];
            const double* rr = whp + i * hs;
            const double* rz = whp + (hs + i) * hs;
            for (std::size_t j = 0; j < hs; ++j) dh[j] += gr * rr[j] + gz * rz[j];
          }
          auto dhb = t.grad_buffer(hid).data();
          for (std::size_t j = 0; j < hs; ++j) dhb[j] += dh[j];
        }
        if (t.needs_grad(whid)) {
          double* dwh = t.grad_buffer(whid).data().data();
          for (std::size_t i = 0; i < hs; ++i) {
            double* rr = dwh + i * hs;
            double* rz = dwh + (hs + i) * hs;
            double* rn = dwh + (2 * hs + i) * hs;
            for (std::size_t j = 0; j < hs; ++j) {
              rr[j] += dpre[i] * hv[j];
              rz[j] += dpre[hs + i] * hv[j];
              rn[j] += dpre[2 * hs + i] * rh[j];
            }
          }
        }
        if (t.needs_grad(bid)) {
          auto db = t.grad_buffer(bid).data();
          for (std::size_t i = 0; i < 3 * hs; ++i) db[i] += dpre[i];
        }
        if (t.needs_grad(wxid)) {
          double* dwx = t.grad_buffer(wxid).data().data();
          for (std::size_t i = 0; i < 3 * hs; ++i) {
            const double gi = dpre[i];
            if (gi == 0.0) continue;
            double* row = dwx + i * d;
            for (std::size_t j = 0; j < d; ++j) row[j] += gi * xv[j];
          }
        }
        if (t.needs_grad(xid)) {
          auto dx = t.grad_buffer(xid).data();
          for (std::size_t i = 0; i < 3 * hs; ++i) {
            const double gi = dpre[i];
            if (gi == 0.0) continue;
            const double* row = wxp + i * d;
            for (std::size_t j = 0; j < d; ++j) dx[j] += gi * row[j];
          }
        }
      });
}

Var kl_divergence(Var q, Var p, double floor) {
  Tape& t = tape_of(q);
  const double value = copyflow::kl_divergence(q.value().data(), p.value().data(), floor);
  return t.push(Tensor::scalar(value), t.needs_grad(q.id) || t.needs_grad(p.id),
                [qid = q.id, pid = p.id, floor](Tape& t, std::uint32_t self) {
                  const double g = t.grad(self)[0];
                  const Tensor& qv = t.value(qid);
                  const Tensor& pv = t.value(pid);
                  if (t.needs_grad(qid)) {
                    auto d = t.grad_buffer(qid).data();
                    for (std::size_t l = 0; l < d.size(); ++l) {
                      if (qv[l] == 0.0) continue;
                      d[l] += g * (std::log(qv[l]) - std::log(std::max(pv[l], floor)) + 1.0);
                    }
                  }
                  if (t.needs_grad(pid)) {
                    auto d = t.grad_buffer(pid).data();
                    for (std::size_t l = 0; l < d.size(); ++l) {
                      if (pv[l] > floor) d[l] -= g * qv[l] / pv[l];
                    }
                  }
                });
}

}  // namespace ops
}  // namespace copyflow
