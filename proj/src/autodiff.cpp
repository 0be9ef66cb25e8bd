#include "rxlora/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include <Eigen/Core>

#include "rxlora/error.hpp"

namespace rxlora::ad {
namespace {

using RowMajor = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMajor>;
using ConstMatMap = Eigen::Map<const RowMajor>;

ConstMatMap as_matrix(const Tensor& t) {
  return ConstMatMap(t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
MatMap as_matrix(std::span<float> buf, std::size_t rows, std::size_t cols) {
  return MatMap(buf.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw Error(ErrorKind::kShapeMismatch, std::string(op) + ": " + shape_str(a) + " vs " + shape_str(b));
}

void require_matrix(const char* op, const Tensor& t) {
  if (t.rank() != 2) throw Error(ErrorKind::kShapeMismatch, std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
}

void accumulate(std::span<float> dst, std::span<const float> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

// ---- Tensor ---------------------------------------------------------------

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<float> values)
    : shape_(std::move(shape)), data_(values.begin(), values.end()) {
  if (data_.size() != shape_size(shape_)) {
    throw Error(ErrorKind::kShapeMismatch, "tensor data length " + std::to_string(data_.size()) +
                                               " does not match shape " + shape_str(shape_));
  }
}

Tensor Tensor::randn(Shape shape, float stddev, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<float> dist(0.0f, stddev);
  for (auto& x : t.data_) x = dist(rng);
  return t;
}

std::size_t Tensor::rows() const noexcept {
  if (shape_.size() == 2) return shape_[0];
  if (shape_.size() <= 1) return 1;
  return size() / shape_.back();
}

std::size_t Tensor::cols() const noexcept {
  if (shape_.empty()) return 1;
  return shape_.back();
}

float Tensor::item() const {
  if (size() != 1) throw Error(ErrorKind::kNotScalar, "item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

std::span<float> Tensor::mutable_grad() {
  if (grad_.size() != data_.size()) grad_.assign(data_.size(), 0.0f);
  return grad_;
}

void Tensor::zero_grad() {
  if (!grad_.empty()) std::fill(grad_.begin(), grad_.end(), 0.0f);
}

// ---- Tape -----------------------------------------------------------------

const Tensor& Var::value() const { return tape_->value(*this); }
bool Var::tracked() const { return tape_->tracked(*this); }

const Tensor& Tape::value(Var v) const {
  const Node& n = nodes_[v.id()];
  return n.ref ? *n.ref : n.owned;
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

void Tape::check_leaf(const Tensor& t) const {
  if (!check_finite_) return;
  for (float x : t.data()) {
    if (!std::isfinite(x)) throw Error(ErrorKind::kNonFiniteInput, "non-finite value entering the tape");
  }
}

Var Tape::constant(Tensor value) {
  check_leaf(value);
  Node n;
  n.owned = std::move(value);
  return push(std::move(n));
}

Var Tape::parameter(Tensor& t) {
  check_leaf(t);
  Node n;
  n.ref = &t;
  if (t.requires_grad()) {
    n.param = &t;
    n.tracked = true;
  }
  return push(std::move(n));
}

Var Tape::parameter(const Tensor& t) {
  check_leaf(t);
  Node n;
  n.ref = &t;
  return push(std::move(n));
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn fn) {
  Node n;
  n.owned = std::move(value);
  for (const Var& in : inputs) {
    if (in.tape_ != this) throw Error(ErrorKind::kShapeMismatch, "operands recorded on different tapes");
    n.tracked = n.tracked || nodes_[in.id()].tracked;
  }
  if (n.tracked) n.backward = std::move(fn);
  return push(std::move(n));
}

std::span<float> Tape::grad(Var v) {
  Node& n = nodes_[v.id()];
  if (n.param) return n.param->mutable_grad();
  const std::size_t size = (n.ref ? *n.ref : n.owned).size();
  if (n.grad.size() != size) n.grad.assign(size, 0.0f);
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape_ != this) throw Error(ErrorKind::kDisconnectedGraph, "loss belongs to another tape");
  if (value(loss).size() != 1) {
    throw Error(ErrorKind::kNotScalar, "backward needs a scalar loss, got " + shape_str(value(loss).shape()));
  }
  if (!nodes_[loss.id()].tracked) {
    throw Error(ErrorKind::kDisconnectedGraph, "loss does not depend on any tracked tensor");
  }
  for (auto& n : nodes_) {
    n.grad.clear();
  }
  grad(loss)[0] += 1.0f;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.tracked || !n.backward || n.grad.empty()) continue;
    n.backward(*this, Var(this, static_cast<std::uint32_t>(i)));
  }
  for (auto& n : nodes_) {
    n.grad.clear();
    n.grad.shrink_to_fit();
  }
}

// ---- operations -------------------------------------------------------------

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() > 2 || bv.rank() > 2 || av.cols() != bv.rows()) shape_error("matmul", av.shape(), bv.shape());
  const std::size_t n = av.rows();
  const std::size_t m = bv.cols();
  Tensor out({n, m});
  as_matrix(out.data(), n, m).noalias() = as_matrix(av) * as_matrix(bv);
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& tape, Var self) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const auto g = as_matrix(tape.grad(self), av.rows(), bv.cols());
    if (a.tracked()) as_matrix(tape.grad(a), av.rows(), av.cols()).noalias() += g * as_matrix(bv).transpose();
    if (b.tracked()) as_matrix(tape.grad(b), bv.rows(), bv.cols()).noalias() += as_matrix(av).transpose() * g;
  });
}

Var add(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const bool same = av.shape() == bv.shape();
  const bool broadcast = !same && bv.rows() == 1 && bv.cols() == av.cols() && av.rank() >= 1;
  if (!same && !broadcast) shape_error("add", av.shape(), bv.shape());
  Tensor out = av;
  out.set_requires_grad(false);
  out.clear_grad();
  const std::size_t cols = av.cols();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[same ? i : i % cols];
  return a.tape().record(std::move(out), {a, b}, [a, b, same, cols](Tape& tape, Var self) {
    const auto g = tape.grad(self);
    if (a.tracked()) accumulate(tape.grad(a), g);
    if (b.tracked()) {
      auto gb = tape.grad(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[same ? i : i % cols] += g[i];
    }
  });
}

Var scale(Var a, float factor) {
  Tensor out(a.shape());
  const auto& av = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
  return a.tape().record(std::move(out), {a}, [a, factor](Tape& tape, Var self) {
    const auto g = tape.grad(self);
    auto ga = tape.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  });
}

Var row_lookup(Var table, std::span<const std::int32_t> ids) {
  const Tensor& tv = table.value();
  require_matrix("row_lookup", tv);
  const std::size_t d = tv.cols();
  Tensor out({ids.size(), d});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= tv.rows()) {
      throw Error(ErrorKind::kShapeMismatch, "row_lookup: id " + std::to_string(ids[r]) + " outside table of " +
                                                 std::to_string(tv.rows()) + " rows");
    }
    std::copy_n(tv.data().begin() + static_cast<std::ptrdiff_t>(ids[r] * d), d,
                out.data().begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  std::vector<std::int32_t> saved(ids.begin(), ids.end());
  return table.tape().record(std::move(out), {table}, [table, saved = std::move(saved), d](Tape& tape, Var self) {
    const auto g = tape.grad(self);
    auto gt = tape.grad(table);
    for (std::size_t r = 0; r < saved.size(); ++r) {
      const std::size_t base = static_cast<std::size_t>(saved[r]) * d;
      for (std::size_t c = 0; c < d; ++c) gt[base + c] += g[r * d + c];
    }
  });
}

Var softmax(Var a) {
  const Tensor& av = a.value();
  const std::size_t rows = av.rows();
  const std::size_t cols = av.cols();
  Tensor out(av.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const float* x = av.data().data() + r * cols;
    float* y = out.data().data() + r * cols;
    const float mx = *std::max_element(x, x + cols);
    const auto c = static_cast<Eigen::Index>(cols);
    Eigen::Map<Eigen::ArrayXf> ya(y, c);
    ya = (Eigen::Map<const Eigen::ArrayXf>(x, c) - mx).exp();
    ya *= 1.0f / ya.sum();
  }
  return a.tape().record(std::move(out), {a}, [a, rows, cols](Tape& tape, Var self) {
    const auto& y = tape.value(self);
    const auto g = tape.grad(self);
    auto ga = tape.grad(a);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += static_cast<double>(g[r * cols + c]) * y[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c) {
        const std::size_t i = r * cols + c;
        ga[i] += y[i] * (g[i] - static_cast<float>(dot));
      }
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, float eps) {
  const Tensor& xv = x.value();
  const std::size_t rows = xv.rows();
  const std::size_t cols = xv.cols();
  if (gain.value().size() != cols || bias.value().size() != cols) {
    shape_error("layer_norm", xv.shape(), gain.value().shape());
  }
  const auto& gv = gain.value();
  const auto& bv = bias.value();
  Tensor out(xv.shape());
  FloatBuffer normed(xv.size());
  FloatBuffer inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const float* in = xv.data().data() + r * cols;
    double mean = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mean += in[c];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (in[c] - mean) * (in[c] - mean);
    var /= static_cast<double>(cols);
    const auto istd = static_cast<float>(1.0 / std::sqrt(var + eps));
    inv_std[r] = istd;
    for (std::size_t c = 0; c < cols; ++c) {
      const float nh = static_cast<float>(in[c] - mean) * istd;
      normed[r * cols + c] = nh;
      out[r * cols + c] = nh * gv[c] + bv[c];
    }
  }
  return x.tape().record(
      std::move(out), {x, gain, bias},
      [x, gain, bias, rows, cols, normed = std::move(normed), inv_std = std::move(inv_std)](Tape& tape, Var self) {
        const auto g = tape.grad(self);
        const auto& gv = gain.value();
        if (gain.tracked()) {
          auto gg = tape.grad(gain);
          for (std::size_t i = 0; i < g.size(); ++i) gg[i % cols] += g[i] * normed[i];
        }
        if (bias.tracked()) {
          auto gb = tape.grad(bias);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i % cols] += g[i];
        }
        if (!x.tracked()) return;
        auto gx = tape.grad(x);
        FloatBuffer dn(cols);
        for (std::size_t r = 0; r < rows; ++r) {
          double mean_dn = 0.0;
          double mean_dn_n = 0.0;
          for (std::size_t c = 0; c < cols; ++c) {
            dn[c] = g[r * cols + c] * gv[c];
            mean_dn += dn[c];
            mean_dn_n += static_cast<double>(dn[c]) * normed[r * cols + c];
          }
          mean_dn /= static_cast<double>(cols);
          mean_dn_n /= static_cast<double>(cols);
          for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t i = r * cols + c;
            gx[i] += inv_std[r] * static_cast<float>(dn[c] - mean_dn - normed[i] * mean_dn_n);
          }
        }
      });
}

namespace {
constexpr float kGeluAlpha = 0.7978845608028654f;  // sqrt(2 / pi)
constexpr float kGeluBeta = 0.044715f;
}  // namespace

Var gelu(Var x) {
  const float kAlpha = kGeluAlpha;
  const float kBeta = kGeluBeta;
  const auto& xv = x.value();
  const auto n = static_cast<Eigen::Index>(xv.size());
  Tensor out(xv.shape());
  FloatBuffer tanh_inner(xv.size());
  const Eigen::Map<const Eigen::ArrayXf> in(xv.data().data(), n);
  Eigen::Map<Eigen::ArrayXf> t(tanh_inner.data(), n);
  t = (kAlpha * (in + kBeta * in.cube())).tanh();
  Eigen::Map<Eigen::ArrayXf>(out.data().data(), n) = 0.5f * in * (1.0f + t);
  return x.tape().record(std::move(out), {x}, [x, tanh_inner = std::move(tanh_inner)](Tape& tape, Var self) {
    const float kAlpha = kGeluAlpha;
    const float kBeta = kGeluBeta;
    const auto& xv = x.value();
    const auto n = static_cast<Eigen::Index>(xv.size());
    const Eigen::Map<const Eigen::ArrayXf> in(xv.data().data(), n);
    const Eigen::Map<const Eigen::ArrayXf> t(tanh_inner.data(), n);
    const Eigen::Map<const Eigen::ArrayXf> g(tape.grad(self).data(), n);
    Eigen::Map<Eigen::ArrayXf> gx(tape.grad(x).data(), n);
    gx += g * (0.5f * (1.0f + t) + 0.5f * in * (1.0f - t.square()) * kAlpha * (1.0f + 3.0f * kBeta * in.square()));
  });
}

Var cross_entropy_from_logits(Var logits, std::span<const std::int32_t> targets, std::span<const float> weights) {
  const Tensor& lv = logits.value();
  const std::size_t rows = lv.rows();
  const std::size_t cols = lv.cols();
  if (targets.size() != rows || weights.size() != rows) {
    throw Error(ErrorKind::kShapeMismatch, "cross_entropy: " + std::to_string(rows) + " rows but " +
                                               std::to_string(targets.size()) + " targets and " +
                                               std::to_string(weights.size()) + " weights");
  }
  FloatBuffer probs(lv.size());
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= cols) {
      throw Error(ErrorKind::kShapeMismatch, "cross_entropy: target " + std::to_string(targets[r]) + " out of range");
    }
    const float* x = lv.data().data() + r * cols;
    const float mx = *std::max_element(x, x + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += std::exp(static_cast<double>(x[c]) - mx);
    const double log_total = std::log(total) + mx;
    for (std::size_t c = 0; c < cols; ++c) probs[r * cols + c] = static_cast<float>(std::exp(x[c] - log_total));
    if (weights[r] != 0.0f) loss += static_cast<double>(weights[r]) * (log_total - x[targets[r]]);
  }
  std::vector<std::int32_t> saved_targets(targets.begin(), targets.end());
  std::vector<float> saved_weights(weights.begin(), weights.end());
  return logits.tape().record(
      Tensor::scalar(static_cast<float>(loss)), {logits},
      [logits, rows, cols, probs = std::move(probs), t = std::move(saved_targets),
       w = std::move(saved_weights)](Tape& tape, Var self) {
        const float g = tape.grad(self)[0];
        auto gl = tape.grad(logits);
        for (std::size_t r = 0; r < rows; ++r) {
          if (w[r] == 0.0f) continue;
          const float coef = g * w[r];
          for (std::size_t c = 0; c < cols; ++c) gl[r * cols + c] += coef * probs[r * cols + c];
          gl[r * cols + static_cast<std::size_t>(t[r])] -= coef;
        }
      });
}

Var cross_entropy_from_logits(Var logits, std::span<const std::int32_t> targets) {
  const std::size_t rows = logits.value().rows();
  std::vector<float> w(rows, rows ? 1.0f / static_cast<float>(rows) : 0.0f);
  return cross_entropy_from_logits(logits, targets, w);
}

Var causal_mask_fill(Var scores, std::size_t offset, float fill) {
  const Tensor& sv = scores.value();
  require_matrix("causal_mask_fill", sv);
  const std::size_t rows = sv.rows();
  const std::size_t cols = sv.cols();
  Tensor out = sv;
  out.set_requires_grad(false);
  out.clear_grad();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = r + offset + 1; c < cols; ++c) out.at(r, c) = fill;
  }
  return scores.tape().record(std::move(out), {scores}, [scores, rows, cols, offset](Tape& tape, Var self) {
    const auto g = tape.grad(self);
    auto gs = tape.grad(scores);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t limit = std::min(cols, r + offset + 1);
      for (std::size_t c = 0; c < limit; ++c) gs[r * cols + c] += g[r * cols + c];
    }
  });
}

Var transpose(Var a) {
  const Tensor& av = a.value();
  if (av.rank() > 2) shape_error("transpose", av.shape(), av.shape());
  const std::size_t rows = av.rows();
  const std::size_t cols = av.cols();
  Tensor out({cols, rows});
  as_matrix(out.data(), cols, rows) = as_matrix(av).transpose();
  return a.tape().record(std::move(out), {a}, [a, rows, cols](Tape& tape, Var self) {
    as_matrix(tape.grad(a), rows, cols) += as_matrix(tape.grad(self), cols, rows).transpose();
  });
}

Var reshape(Var a, Shape shape) {
  if (shape_size(shape) != a.value().size()) shape_error("reshape", a.shape(), shape);
  Tensor out(std::move(shape), std::vector<float>(a.value().data().begin(), a.value().data().end()));
  return a.tape().record(std::move(out), {a}, [a](Tape& tape, Var self) {
    accumulate(tape.grad(a), tape.grad(self));
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw Error(ErrorKind::kShapeMismatch, "concat_rows of nothing");
  const std::size_t cols = parts.front().value().cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    if (p.value().cols() != cols || p.value().rank() > 2) shape_error("concat_rows", parts.front().shape(), p.shape());
    rows += p.value().rows();
  }
  Tensor out({rows, cols});
  std::size_t offset = 0;
  for (const Var& p : parts) {
    std::copy(p.value().data().begin(), p.value().data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(offset));
    offset += p.value().size();
  }
  std::vector<Var> saved(parts.begin(), parts.end());
  return parts.front().tape().record(std::move(out), parts, [saved](Tape& tape, Var self) {
    const auto g = tape.grad(self);
    std::size_t offset = 0;
    for (const Var& p : saved) {
      const std::size_t n = p.value().size();
      if (p.tracked()) accumulate(tape.grad(p), g.subspan(offset, n));
      offset += n;
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw Error(ErrorKind::kShapeMismatch, "concat_cols of nothing");
  const std::size_t rows = parts.front().value().rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    if (p.value().rows() != rows || p.value().rank() > 2) shape_error("concat_cols", parts.front().shape(), p.shape());
    cols += p.value().cols();
  }
  Tensor out({rows, cols});
  std::size_t c0 = 0;
  for (const Var& p : parts) {
    const std::size_t pc = p.value().cols();
    as_matrix(out.data(), rows, cols).middleCols(static_cast<Eigen::Index>(c0), static_cast<Eigen::Index>(pc)) =
        as_matrix(p.value());
    c0 += pc;
  }
  std::vector<Var> saved(parts.begin(), parts.end());
  return parts.front().tape().record(std::move(out), parts, [saved, rows, cols](Tape& tape, Var self) {
    const auto g = as_matrix(tape.grad(self), rows, cols);
    std::size_t c0 = 0;
    for (const Var& p : saved) {
      const std::size_t pc = p.value().cols();
      if (p.tracked()) {
        as_matrix(tape.grad(p), rows, pc) +=
            g.middleCols(static_cast<Eigen::Index>(c0), static_cast<Eigen::Index>(pc));
      }
      c0 += pc;
    }
  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
  const Tensor& av = a.value();
  require_matrix("slice_rows", av);
  if (begin > end || end > av.rows()) shape_error("slice_rows", av.shape(), {begin, end});
  const std::size_t cols = av.cols();
  Tensor out({end - begin, cols},
             std::vector<float>(av.data().begin() + static_cast<std::ptrdiff_t>(begin * cols),
                                av.data().begin() + static_cast<std::ptrdiff_t>(end * cols)));
  return a.tape().record(std::move(out), {a}, [a, begin, cols](Tape& tape, Var self) {
    const auto g = tape.grad(self);
    accumulate(tape.grad(a).subspan(begin * cols, g.size()), g);
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  const Tensor& av = a.value();
  require_matrix("slice_cols", av);
  if (begin > end || end > av.cols()) shape_error("slice_cols", av.shape(), {begin, end});
  const std::size_t rows = av.rows();
  const std::size_t cols = av.cols();
  const std::size_t width = end - begin;
  Tensor out({rows, width});
  as_matrix(out.data(), rows, width) =
      as_matrix(av).middleCols(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(width));
  return a.tape().record(std::move(out), {a}, [a, begin, rows, cols, width](Tape& tape, Var self) {
    as_matrix(tape.grad(a), rows, cols).middleCols(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(width)) +=
        as_matrix(tape.grad(self), rows, width);
  });
}

Var sum(Var a) {
  double total = 0.0;
  for (float x : a.value().data()) total += x;
  return a.tape().record(Tensor::scalar(static_cast<float>(total)), {a}, [a](Tape& tape, Var self) {
    const float g = tape.grad(self)[0];
    for (auto& x : tape.grad(a)) x += g;
  });
}

}  // namespace rxlora::ad
