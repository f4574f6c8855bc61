#include "canvasmar/numerics/ops.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace canvasmar {
namespace {

template <typename Scalar>
void require_finite(const Matrix<Scalar>& value, const char* op) {
  if (!all_finite(value)) throw NumericError(std::string("non-finite value produced by '") + op + "'");
}

template <typename Scalar>
void require_same_shape(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                                std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()) + ")");
  }
}

// Builds the output node and, when a tape is recording and any input needs a
// gradient, attaches `grad_fn` and records the node.
template <typename Scalar, typename GradFn>
Tensor<Scalar> make_result(Matrix<Scalar> value, const char* op, std::initializer_list<const Tensor<Scalar>*> inputs,
                           GradFn&& grad_fn) {
  require_finite(value, op);
  auto node = std::make_shared<Node<Scalar>>();
  node->value = std::move(value);
  node->op = op;
  GradTape<Scalar>* tape = active_tape<Scalar>();
  bool needs = false;
  for (const auto* t : inputs) needs = needs || t->requires_grad();
  if (tape != nullptr && needs) {
    node->requires_grad = true;
    node->backward = std::forward<GradFn>(grad_fn);
    tape->record(node);
  }
  return Tensor<Scalar>(std::move(node));
}

template <typename Scalar>
using Array = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// tanh(sqrt(2/pi) (x + 0.044715 x^3)), shared by the GELU value and derivative.
template <typename Scalar>
Array<Scalar> gelu_tanh(const Matrix<Scalar>& x) {
  const Scalar c = std::sqrt(Scalar(2) / std::numbers::pi_v<Scalar>);
  const auto a = x.array();
  return (c * (a + Scalar(0.044715) * a.cube())).tanh();
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> detach(const Tensor<Scalar>& a) {
  return constant<Scalar>(a.value());
}

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimensions differ");
  Matrix<Scalar> out = a.value() * b.value();
  return make_result<Scalar>(std::move(out), "matmul", {&a, &b}, [a, b](const Matrix<Scalar>& g, GradTape<Scalar>& tape) {
    if (a.requires_grad()) tape.accumulate(a.id(), g * b.value().transpose());
    if (b.requires_grad()) tape.accumulate(b.id(), a.value().transpose() * g);
  });
}

template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& b) {
  if (x.cols() != w.rows()) throw std::invalid_argument("linear: input width does not match weight rows");
  if (b.rows() != 1 || b.cols() != w.cols()) throw std::invalid_argument("linear: bias must be 1 x out");
  Matrix<Scalar> out = x.value() * w.value();
  out.rowwise() += b.value().row(0);
  return make_result<Scalar>(std::move(out), "linear", {&x, &w, &b},
                             [x, w, b](const Matrix<Scalar>& g, GradTape<Scalar>& tape) {
                               if (x.requires_grad()) tape.accumulate(x.id(), g * w.value().transpose());
                               if (w.requires_grad()) tape.accumulate(w.id(), x.value().transpose() * g);
                               if (b.requires_grad()) tape.accumulate(b.id(), g.colwise().sum());
                             });
}

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape(a, b, "add");
  Matrix<Scalar> out = a.value() + b.value();
  return make_result<Scalar>(std::move(out), "add", {&a, &b}, [a, b](const Matrix<Scalar>& g, GradTape<Scalar>& tape) {
    tape.accumulate(a.id(), g);
    tape.accumulate(b.id(), g);
  });
}

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape(a, b, "sub");
  Matrix<Scalar> out = a.value() - b.value();
  return make_result<Scalar>(std::move(out), "sub", {&a, &b}, [a, b](const Matrix<Scalar>& g, GradTape<Scalar>& tape) {
    tape.accumulate(a.id(), g);
    tape.accumulate(b.id(), -g);
  });
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape(a, b, "mul");
  Matrix<Scalar> out = a.value().cwiseProduct(b.value());
  return make_result<Scalar>(std::move(out), "mul", {&a, &b}, [a, b](const Matrix<Scalar>& g, GradTape<Scalar>& tape) {
    if (a.requires_grad()) tape.accumulate(a.id(), g.cwiseProduct(b.value()));
    if (b.requires_grad()) tape.accumulate(b.id(), g.cwiseProduct(a.value()));
  });
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar s) {
  Matrix<Scalar> out = a.value() * s;
  return make_result<Scalar>(std::move(out), "scale", {&a}, [a, s](const Matrix<Scalar>& g, GradTape<Scalar>& tape) {
    tape.accumulate(a.id(), g * s);
  });
}

template <typename Scalar>
Tensor<Scalar> scale_rows(const Tensor<Scalar>& a, const std::vector<Scalar>& factors) {
  if (static_cast<Index>(factors.size()) != a.rows()) throw std::invalid_argument("scale_rows: one factor per row");
  Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> f(factors.data(), a.rows());
  Matrix<Scalar> out = f.asDiagonal() * a.value();
  Matrix<Scalar> fcopy = f;
  return make_result<Scalar>(std::move(out), "scale_rows", {&a},
                             [a, fcopy](const Matrix<Scalar>& g, GradTape<Scalar>& tape) {
                               tape.accumulate(a.id(), fcopy.col(0).asDiagonal() * g);
                             });
}

template <typename Scalar>
Tensor<Scalar> add_row(const Tensor<Scalar>& a, const Tensor<Scalar>& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("add_row: row must be 1 x cols");
  Matrix<Scalar> out = a.value();
  out.rowwise() += row.value().row(0);
  return make_result<Scalar>(std::move(out), "add_row", {&a, &row},
                             [a, row](const Matrix<Scalar>& g, GradTape<Scalar>& tape) {
                               tape.accumulate(a.id(), g);
                               if (row.requires_grad()) tape.accumulate(row.id(), g.colwise().sum());
                             });
}

template <typename Scalar>
Tensor<Scalar> repeat_rows(const Tensor<Scalar>& a, Index times) {
  if (times < 1) throw std::invalid_argument("repeat_rows: times must be >= 1");
  const Index r = a.rows();
  Matrix<Scalar> out(r * times, a.cols());
  for (Index t = 0; t < times; ++t) out.middleRows(t * r, r) = a.value();
  return make_result<Scalar>(std::move(out), "repeat_rows", {&a},
                             [a, r, times](const Matrix<Scalar>& g, GradTape<Scalar>& tape) {
                               Matrix<Scalar> acc = g.middleRows(0, r);
                               for (Index t = 1; t < times; ++t) acc += g.middleRows(t * r, r);
                               tape.accumulate(a.id(), acc);
                             });
}

template <typename Scalar>
Tensor<Scalar> gelu(const Tensor<Scalar>& a) {
  Array<Scalar> th = gelu_tanh(a.value());
  Matrix<Scalar> out = (Scalar(0.5) * a.value().array() * (Scalar(1) + th)).matrix();
  return make_result<Scalar>(std::move(out), "gelu", {&a},
                             [a, th = std::move(th)](const Matrix<Scalar>& g, GradTape<Scalar>& tape) {
    const Scalar c = std::sqrt(Scalar(2) / std::numbers::pi_v<Scalar>);
    const auto x = a.value().array();
    const auto dinner = c * (Scalar(1) + Scalar(3 * 0.044715) * x.square());
    const Array<Scalar> d = Scalar(0.5) * (Scalar(1) + th) + Scalar(0.5) * x * (Scalar(1) - th.square()) * dinner;
    tape.accumulate(a.id(), (g.array() * d).matrix());
  });
}

template <typename Scalar>
Tensor<Scalar> sin(const Tensor<Scalar>& a) {
  Matrix<Scalar> out = a.value().array().sin().matrix();
  return make_result<Scalar>(std::move(out), "sin", {&a}, [a](const Matrix<Scalar>& g, GradTape<Scalar>& tape) {
    tape.accumulate(a.id(), g.cwiseProduct(a.value().array().cos().matrix()));
  });
}

template <typename Scalar>
Tensor<Scalar> square(const Tensor<Scalar>& a) {
  Matrix<Scalar> out = a.value().cwiseAbs2();
  return make_result<Scalar>(std::move(out), "square", {&a}, [a](const Matrix<Scalar>& g, GradTape<Scalar>& tape) {
    tape.accumulate(a.id(), Scalar(2) * g.cwiseProduct(a.value()));
  });
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a) {
  Matrix<Scalar> out(1, 1);
  out(0, 0) = a.value().sum();
  return make_result<Scalar>(std::move(out), "sum", {&a}, [a](const Matrix<Scalar>& g, GradTape<Scalar>& tape) {
    tape.accumulate(a.id(), Matrix<Scalar>::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& a) {
  if (a.size() == 0) throw std::invalid_argument("mean of empty tensor");
  const Scalar inv = Scalar(1) / static_cast<Scalar>(a.size());
  Matrix<Scalar> out(1, 1);
  out(0, 0) = a.value().sum() * inv;
  return make_result<Scalar>(std::move(out), "mean", {&a}, [a, inv](const Matrix<Scalar>& g, GradTape<Scalar>& tape) {
    tape.accumulate(a.id(), Matrix<Scalar>::Constant(a.rows(), a.cols(), g(0, 0) * inv));
  });
}

template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gain, const Tensor<Scalar>& bias, Scalar eps) {
  const Index d = x.cols();
  if (gain.rows() != 1 || gain.cols() != d || bias.rows() != 1 || bias.cols() != d) {
    throw std::invalid_argument("layer_norm: gain/bias must be 1 x cols");
  }
  const Matrix<Scalar>& xv = x.value();
  Matrix<Scalar> xhat(xv.rows(), d);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_std(xv.rows());
  for (Index r = 0; r < xv.rows(); ++r) {
    const Scalar mu = xv.row(r).mean();
    const Scalar var = (xv.row(r).array() - mu).square().mean();
    inv_std(r) = Scalar(1) / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mu) * inv_std(r);
  }
  Matrix<Scalar> out = xhat * gain.value().row(0).asDiagonal();
  out.rowwise() += bias.value().row(0);
  return make_result<Scalar>(
      std::move(out), "layer_norm", {&x, &gain, &bias},
      [x, gain, bias, xhat, inv_std, d](const Matrix<Scalar>& g, GradTape<Scalar>& tape) {
        if (gain.requires_grad()) tape.accumulate(gain.id(), g.cwiseProduct(xhat).colwise().sum());
        if (bias.requires_grad()) tape.accumulate(bias.id(), g.colwise().sum());
        if (x.requires_grad()) {
          Matrix<Scalar> gx = g * gain.value().row(0).asDiagonal();
          Matrix<Scalar> dx(g.rows(), d);
          const Scalar inv_d = Scalar(1) / static_cast<Scalar>(d);
          for (Index r = 0; r < g.rows(); ++r) {
            const Scalar s1 = gx.row(r).sum();
            const Scalar s2 = gx.row(r).dot(xhat.row(r));
            dx.row(r) = inv_std(r) * (gx.row(r).array() - s1 * inv_d - xhat.row(r).array() * s2 * inv_d);
          }
          tape.accumulate(x.id(), dx);
        }
      });
}

template <typename Scalar>
Tensor<Scalar> concat_rows(std::span<const Tensor<Scalar>> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  Index rows = 0;
  const Index cols = parts.front().cols();
  for (const auto& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
    rows += p.rows();
  }
  Matrix<Scalar> out(rows, cols);
  Index at = 0;
  bool needs = false;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
    needs = needs || p.requires_grad();
  }
  std::vector<Tensor<Scalar>> saved(parts.begin(), parts.end());
  // make_result inspects an initializer_list; route the flag through a proxy.
  Tensor<Scalar> flag(Matrix<Scalar>(0, 0), needs);
  return make_result<Scalar>(std::move(out), "concat_rows", {&flag},
                             [saved](const Matrix<Scalar>& g, GradTape<Scalar>& tape) {
                               Index off = 0;
                               for (const auto& p : saved) {
                                 if (p.requires_grad()) tape.accumulate(p.id(), g.middleRows(off, p.rows()));
                                 off += p.rows();
                               }
                             });
}

template <typename Scalar>
Tensor<Scalar> slice_rows(const Tensor<Scalar>& a, Index begin, Index count) {
  if (begin < 0 || count < 0 || begin + count > a.rows()) throw std::invalid_argument("slice_rows: out of range");
  Matrix<Scalar> out = a.value().middleRows(begin, count);
  return make_result<Scalar>(std::move(out), "slice_rows", {&a},
                             [a, begin, count](const Matrix<Scalar>& g, GradTape<Scalar>& tape) {
                               Matrix<Scalar> full = Matrix<Scalar>::Zero(a.rows(), a.cols());
                               full.middleRows(begin, count) = g;
                               tape.accumulate(a.id(), full);
                             });
}

template <typename Scalar>
Tensor<Scalar> gather_rows(const Tensor<Scalar>& a, std::span<const Index> rows) {
  Matrix<Scalar> out(static_cast<Index>(rows.size()), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= a.rows()) throw std::invalid_argument("gather_rows: index out of range");
    out.row(static_cast<Index>(i)) = a.value().row(rows[i]);
  }
  std::vector<Index> idx(rows.begin(), rows.end());
  return make_result<Scalar>(std::move(out), "gather_rows", {&a}, [a, idx](const Matrix<Scalar>& g, GradTape<Scalar>& tape) {
    Matrix<Scalar> full = Matrix<Scalar>::Zero(a.rows(), a.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) full.row(idx[i]) += g.row(static_cast<Index>(i));
    tape.accumulate(a.id(), full);
  });
}

template <typename Scalar>
Tensor<Scalar> merge_rows(const Tensor<Scalar>& a, std::span<const Index> index_a, const Tensor<Scalar>& b,
                          std::span<const Index> index_b, Index total) {
  if (static_cast<Index>(index_a.size()) != a.rows() || static_cast<Index>(index_b.size()) != b.rows()) {
    throw std::invalid_argument("merge_rows: index count must match row count");
  }
  if (a.rows() + b.rows() != total) throw std::invalid_argument("merge_rows: indices must partition the output");
  const Index cols = a.rows() > 0 ? a.cols() : b.cols();
  if (a.rows() > 0 && b.rows() > 0 && a.cols() != b.cols()) throw std::invalid_argument("merge_rows: column mismatch");
  Matrix<Scalar> out(total, cols);
  std::vector<std::uint8_t> seen(static_cast<std::size_t>(total), 0);
  auto place = [&](const Matrix<Scalar>& src, std::span<const Index> idx) {
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] < 0 || idx[i] >= total || seen[static_cast<std::size_t>(idx[i])]) {
        throw std::invalid_argument("merge_rows: indices must partition the output");
      }
      seen[static_cast<std::size_t>(idx[i])] = 1;
      out.row(idx[i]) = src.row(static_cast<Index>(i));
    }
  };
  place(a.value(), index_a);
  place(b.value(), index_b);
  std::vector<Index> ia(index_a.begin(), index_a.end()), ib(index_b.begin(), index_b.end());
  return make_result<Scalar>(std::move(out), "merge_rows", {&a, &b},
                             [a, b, ia, ib](const Matrix<Scalar>& g, GradTape<Scalar>& tape) {
                               if (a.requires_grad()) {
                                 Matrix<Scalar> ga(a.rows(), a.cols());
                                 for (std::size_t i = 0; i < ia.size(); ++i) ga.row(static_cast<Index>(i)) = g.row(ia[i]);
                                 tape.accumulate(a.id(), ga);
                               }
                               if (b.requires_grad()) {
                                 Matrix<Scalar> gb(b.rows(), b.cols());
                                 for (std::size_t i = 0; i < ib.size(); ++i) gb.row(static_cast<Index>(i)) = g.row(ib[i]);
                                 tape.accumulate(b.id(), gb);
                               }
                             });
}

template <typename Scalar>
Matrix<Scalar> attention_values(const Matrix<Scalar>& q, const Matrix<Scalar>& k, const Matrix<Scalar>& v,
                                const AttentionMask& mask, int heads, std::vector<Matrix<Scalar>>* probs) {
  const Index lq = mask.queries();
  const Index lk = mask.keys();
  const Index d = q.cols();
  if (heads < 1 || d % heads != 0) throw std::invalid_argument("attention: width not divisible by heads");
  if (k.cols() != d || v.cols() != d) throw std::invalid_argument("attention: q/k/v width mismatch");
  if (lq == 0 || q.rows() % lq != 0) throw std::invalid_argument("attention: query rows do not match mask");
  const Index batch = q.rows() / lq;
  if (k.rows() != batch * lk || v.rows() != batch * lk) throw std::invalid_argument("attention: key rows do not match mask");
  if (mask.batch() != 1 && mask.batch() != batch) throw std::invalid_argument("attention: mask batch mismatch");
  const bool dense = mask.all_true();
  const Index dh = d / heads;
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));

  Matrix<Scalar> out(q.rows(), d);
  if (probs) probs->assign(static_cast<std::size_t>(batch * heads), Matrix<Scalar>());
  Matrix<Scalar> scores;
  for (Index b = 0; b < batch; ++b) {
    const Index mb = mask.batch() == 1 ? 0 : b;
    for (int h = 0; h < heads; ++h) {
      auto qh = q.block(b * lq, h * dh, lq, dh);
      auto kh = k.block(b * lk, h * dh, lk, dh);
      auto vh = v.block(b * lk, h * dh, lk, dh);
      scores.noalias() = qh * kh.transpose();
      scores *= scale;
      for (Index i = 0; i < lq; ++i) {
        Scalar mx = -std::numeric_limits<Scalar>::infinity();
        bool any = false;
        for (Index j = 0; j < lk; ++j) {
          if (dense || mask.at(mb, i, j)) {
            mx = std::max(mx, scores(i, j));
            any = true;
          }
        }
        if (!any) throw std::invalid_argument("attention: query row " + std::to_string(i) + " has no visible keys");
        Scalar total = 0;
        for (Index j = 0; j < lk; ++j) {
          if (dense || mask.at(mb, i, j)) {
            scores(i, j) = std::exp(scores(i, j) - mx);
            total += scores(i, j);
          } else {
            scores(i, j) = Scalar(0);
          }
        }
        scores.row(i) /= total;
      }
      out.block(b * lq, h * dh, lq, dh).noalias() = scores * vh;
      if (probs) (*probs)[static_cast<std::size_t>(b * heads + h)] = scores;
    }
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> attention(const Tensor<Scalar>& q, const Tensor<Scalar>& k, const Tensor<Scalar>& v,
                         const AttentionMask& mask, int heads) {
  const bool record = active_tape<Scalar>() != nullptr &&
                      (q.requires_grad() || k.requires_grad() || v.requires_grad());
  auto probs = std::make_shared<std::vector<Matrix<Scalar>>>();
  Matrix<Scalar> out = attention_values(q.value(), k.value(), v.value(), mask, heads, record ? probs.get() : nullptr);
  const Index lq = mask.queries();
  const Index lk = mask.keys();
  return make_result<Scalar>(
      std::move(out), "attention", {&q, &k, &v},
      [q, k, v, probs, lq, lk, heads](const Matrix<Scalar>& g, GradTape<Scalar>& tape) {
        const Index d = q.cols();
        const Index dh = d / heads;
        const Index batch = q.rows() / lq;
        const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
        Matrix<Scalar> gq = Matrix<Scalar>::Zero(q.rows(), d);
        Matrix<Scalar> gk = Matrix<Scalar>::Zero(k.rows(), d);
        Matrix<Scalar> gv = Matrix<Scalar>::Zero(v.rows(), d);
        Matrix<Scalar> dp, ds;
        for (Index b = 0; b < batch; ++b) {
          for (int h = 0; h < heads; ++h) {
            const Matrix<Scalar>& p = (*probs)[static_cast<std::size_t>(b * heads + h)];
            auto go = g.block(b * lq, h * dh, lq, dh);
            auto qh = q.value().block(b * lq, h * dh, lq, dh);
            auto kh = k.value().block(b * lk, h * dh, lk, dh);
            auto vh = v.value().block(b * lk, h * dh, lk, dh);
            gv.block(b * lk, h * dh, lk, dh).noalias() = p.transpose() * go;
            dp.noalias() = go * vh.transpose();
            ds = p.cwiseProduct(dp);
            Eigen::Matrix<Scalar, Eigen::Dynamic, 1> rowdot = ds.rowwise().sum();
            ds -= p.cwiseProduct(rowdot.replicate(1, lk));
            ds *= scale;
            gq.block(b * lq, h * dh, lq, dh).noalias() = ds * kh;
            gk.block(b * lk, h * dh, lk, dh).noalias() = ds.transpose() * qh;
          }
        }
        if (q.requires_grad()) tape.accumulate(q.id(), gq);
        if (k.requires_grad()) tape.accumulate(k.id(), gk);
        if (v.requires_grad()) tape.accumulate(v.id(), gv);
      });
}

#define CANVASMAR_INSTANTIATE_OPS(S)                                                                              \
  template Tensor<S> detach(const Tensor<S>&);                                                                    \
  template Tensor<S> matmul(const Tensor<S>&, const Tensor<S>&);                                                  \
  template Tensor<S> linear(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);                                \
  template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);                                                     \
  template Tensor<S> sub(const Tensor<S>&, const Tensor<S>&);                                                     \
  template Tensor<S> mul(const Tensor<S>&, const Tensor<S>&);                                                     \
  template Tensor<S> scale(const Tensor<S>&, S);                                                                  \
  template Tensor<S> scale_rows(const Tensor<S>&, const std::vector<S>&);                                         \
  template Tensor<S> add_row(const Tensor<S>&, const Tensor<S>&);                                                 \
  template Tensor<S> repeat_rows(const Tensor<S>&, Index);                                                        \
  template Tensor<S> gelu(const Tensor<S>&);                                                                      \
  template Tensor<S> sin(const Tensor<S>&);                                                                       \
  template Tensor<S> square(const Tensor<S>&);                                                                    \
  template Tensor<S> sum(const Tensor<S>&);                                                                       \
  template Tensor<S> mean(const Tensor<S>&);                                                                      \
  template Tensor<S> layer_norm(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, S);                         \
  template Tensor<S> concat_rows(std::span<const Tensor<S>>);                                                     \
  template Tensor<S> slice_rows(const Tensor<S>&, Index, Index);                                                  \
  template Tensor<S> gather_rows(const Tensor<S>&, std::span<const Index>);                                       \
  template Tensor<S> merge_rows(const Tensor<S>&, std::span<const Index>, const Tensor<S>&, std::span<const Index>, \
                                Index);                                                                           \
  template Matrix<S> attention_values(const Matrix<S>&, const Matrix<S>&, const Matrix<S>&, const AttentionMask&,  \
                                      int, std::vector<Matrix<S>>*);                                              \
  template Tensor<S> attention(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, const AttentionMask&, int);

CANVASMAR_INSTANTIATE_OPS(float)
CANVASMAR_INSTANTIATE_OPS(double)

}  // namespace canvasmar
