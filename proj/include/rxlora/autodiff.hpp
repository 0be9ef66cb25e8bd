#pragma once

// Dense float32 tensors with a dynamic reverse-mode tape.
//
// A Tape is rebuilt for every forward pass. Leaves enter it either as owned
// constants or as references to long-lived parameter tensors; gradients of
// tracked parameters accumulate into Tensor::grad across backward calls.

#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <new>
#include <random>
#include <span>
#include <vector>

namespace rxlora::ad {

using Shape = std::vector<std::size_t>;

// 64-byte aligned storage, so vectorised kernels take the same path (and
// round the same way) no matter where the heap places a buffer.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlignment); }

  friend bool operator==(const AlignedAllocator&, const AlignedAllocator&) { return true; }
};

using FloatBuffer = std::vector<float, AlignedAllocator<float>>;

std::size_t shape_size(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> values);

  static Tensor scalar(float value) { return Tensor({1}, {value}); }
  static Tensor randn(Shape shape, float stddev, std::mt19937_64& rng);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  // Matrix view: a rank-1 tensor of length n is a 1 x n row.
  std::size_t rows() const noexcept;
  std::size_t cols() const noexcept;

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }
  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }
  float& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  float at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  float item() const;

  bool requires_grad() const noexcept { return requires_grad_; }
  void set_requires_grad(bool on) { requires_grad_ = on; }

  bool has_grad() const noexcept { return !grad_.empty(); }
  // Allocates a zero buffer on first use.
  std::span<float> mutable_grad();
  std::span<const float> grad() const noexcept { return grad_; }
  void zero_grad();
  void clear_grad() { grad_.clear(); grad_.shrink_to_fit(); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  FloatBuffer data_;
  FloatBuffer grad_;
  bool requires_grad_ = false;
};

class Tape;

// Handle to a value recorded on a tape.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool tracked() const;
  Tape& tape() const { return *tape_; }
  std::uint32_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, Var)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // References t without copying; tracked iff t.requires_grad().
  Var parameter(Tensor& t);
  Var parameter(const Tensor& t);

  // Seeds d(loss)/d(loss) = 1 and propagates to every tracked leaf.
  // Throws NotScalar or DisconnectedGraph (before touching any buffer).
  void backward(Var loss);

  std::size_t size() const noexcept { return nodes_.size(); }
  void set_check_finite(bool on) { check_finite_ = on; }

  // Op plumbing.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn fn);
  std::span<float> grad(Var v);
  const Tensor& value(Var v) const;
  bool tracked(Var v) const { return nodes_[v.id()].tracked; }

 private:
  struct Node {
    Tensor owned;
    const Tensor* ref = nullptr;
    Tensor* param = nullptr;  // tracked parameter leaf
    FloatBuffer grad;
    bool tracked = false;
    BackwardFn backward;
  };
  Var push(Node node);
  void check_leaf(const Tensor& t) const;

  std::deque<Node> nodes_;
  bool check_finite_ = false;
};

// ---- operations ---------------------------------------------------------
// All operands of one call must live on the same tape. Matrices are 2-D and
// row-major; rank-1 operands are treated as a single row.

Var matmul(Var a, Var b);
// Same shape, or b a single row broadcast over the rows of a.
Var add(Var a, Var b);
Var scale(Var a, float factor);
Var row_lookup(Var table, std::span<const std::int32_t> ids);
// Row-wise softmax.
Var softmax(Var a);
Var layer_norm(Var x, Var gain, Var bias, float eps = 1e-5f);
// tanh approximation.
Var gelu(Var x);
// Scalar sum_i weights[i] * (-log softmax(logits_i)[targets[i]]).
Var cross_entropy_from_logits(Var logits, std::span<const std::int32_t> targets,
                              std::span<const float> weights);
// Mean over rows.
Var cross_entropy_from_logits(Var logits, std::span<const std::int32_t> targets);
// Sets entry (i, j) to fill when j > i + offset.
Var causal_mask_fill(Var scores, std::size_t offset = 0,
                     float fill = -std::numeric_limits<float>::infinity());
Var transpose(Var a);
Var reshape(Var a, Shape shape);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice_rows(Var a, std::size_t begin, std::size_t end);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var sum(Var a);

}  // namespace rxlora::ad
