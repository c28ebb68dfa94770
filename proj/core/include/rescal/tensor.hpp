#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace rescal {

using Shape = std::vector<std::size_t>;

std::size_t shape_product(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major double tensor. Copies share storage; use clone() for a deep
// copy. Gradient storage is allocated lazily on first accumulation.
class Tensor {
 public:
  Tensor();

  // Throws SizeError when product(shape) != values.size().
  static Tensor create(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;

  std::span<const double> data() const;
  // Parameter updates and test fixtures only; forward outputs are treated as
  // immutable once produced.
  std::span<double> mutable_data();
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);

  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> grad_mut() const;
  void zero_grad() const;

  Tensor clone() const;
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl;
  explicit Tensor(std::shared_ptr<Impl> impl);
  std::shared_ptr<Impl> impl_;
};

// Records executed primitives in execution order, which is already a
// topological order of the computation graph.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  struct Entry {
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::vector<Tensor> inputs, Tensor output, BackwardFn backward);

  // Seeds d(loss)/d(loss) = 1 and runs every recorded rule once in reverse.
  // Returns how many rules ran. Throws ContractError for a non-scalar loss or
  // one that was not produced through this tape.
  std::size_t backward(const Tensor& loss);

  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }
  void clear() { entries_.clear(); }

  static Tape* active();

  // Makes a tape the recording target for the current thread.
  class Scope {
   public:
    explicit Scope(Tape& tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

 private:
  std::vector<Entry> entries_;
};

// Disables recording for the current thread while alive.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

// True when an op consuming `inputs` must be recorded.
bool needs_grad(std::initializer_list<const Tensor*> inputs);

// Allocates an output tensor whose requires_grad flag follows `tracked`.
Tensor make_output(Shape shape, bool tracked);

// Records `fn` on the active tape when `tracked` is set.
void record_op(bool tracked, std::vector<Tensor> inputs, const Tensor& output, Tape::BackwardFn fn);

}  // namespace rescal
