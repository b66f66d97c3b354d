#pragma once

// Dense float32 tensor with row-major layout. Feature maps use NHWC order.

#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <memory>
#include <mutex>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace adagan {

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct CapacityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<int64_t>;

inline int64_t shape_size(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

namespace detail {

// Recycles large allocations. Training loops allocate a few identical
// multi-MB buffers every iteration; hitting mmap each time dominates the
// step time, so blocks above the threshold are kept on a free list.
class BufferPool {
 public:
  static constexpr int64_t kPoolThreshold = 1 << 20;  // floats

  static BufferPool& instance() {
    static BufferPool pool;
    return pool;
  }

  float* acquire(int64_t n) {
    if (n >= kPoolThreshold) {
      std::lock_guard<std::mutex> lock(mu_);
      auto it = free_.find(n);
      if (it != free_.end() && !it->second.empty()) {
        float* p = it->second.back();
        it->second.pop_back();
        return p;
      }
    }
    return static_cast<float*>(::operator new[](sizeof(float) * static_cast<size_t>(n)));
  }

  void release(float* p, int64_t n) {
    if (p == nullptr) return;
    if (n >= kPoolThreshold) {
      std::lock_guard<std::mutex> lock(mu_);
      free_[n].push_back(p);
      return;
    }
    ::operator delete[](p);
  }

 private:
  BufferPool() = default;
  std::mutex mu_;
  std::unordered_map<int64_t, std::vector<float*>> free_;
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape) : Tensor(std::move(shape), Fill::kZero) {}

  Tensor(Shape shape, std::vector<float> values) : Tensor(std::move(shape), Fill::kNone) {
    if (static_cast<int64_t>(values.size()) != size_) {
      throw ShapeError("tensor data length " + std::to_string(values.size()) +
                       " does not match shape " + shape_str(shape_));
    }
    std::memcpy(data_.get(), values.data(), sizeof(float) * static_cast<size_t>(size_));
  }

  static Tensor uninit(Shape shape) { return Tensor(std::move(shape), Fill::kNone); }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, float v) {
    Tensor t(std::move(shape), Fill::kNone);
    for (int64_t i = 0; i < t.size_; ++i) t.data_[i] = v;
    return t;
  }

  static Tensor ones(Shape shape) { return full(std::move(shape), 1.0f); }

  static Tensor scalar(float v) { return Tensor({1}, {v}); }

  Tensor(const Tensor& other) : Tensor(other.shape_, Fill::kNone) {
    if (size_ > 0)
      std::memcpy(data_.get(), other.data_.get(), sizeof(float) * static_cast<size_t>(size_));
  }

  Tensor& operator=(const Tensor& other) {
    if (this != &other) *this = Tensor(other);
    return *this;
  }

  Tensor(Tensor&&) noexcept = default;
  Tensor& operator=(Tensor&&) noexcept = default;

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t extent(int axis) const { return shape_[static_cast<size_t>(axis)]; }
  int64_t size() const { return size_; }
  bool empty() const { return data_ == nullptr; }

  float* data() { return data_.get(); }
  const float* data() const { return data_.get(); }

  float& operator[](int64_t i) { return data_[i]; }
  float operator[](int64_t i) const { return data_[i]; }

  // Row-major offset of a multi-index.
  int64_t offset(std::initializer_list<int64_t> idx) const {
    int64_t off = 0;
    size_t a = 0;
    for (int64_t i : idx) {
      off = off * shape_[a] + i;
      ++a;
    }
    return off;
  }

  float at(std::initializer_list<int64_t> idx) const { return data_[offset(idx)]; }
  float& at(std::initializer_list<int64_t> idx) { return data_[offset(idx)]; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  void fill(float v) {
    for (int64_t i = 0; i < size_; ++i) data_[i] = v;
  }

  Tensor reshaped(Shape new_shape) const {
    if (shape_size(new_shape) != size_) {
      throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(new_shape));
    }
    Tensor t(*this);
    t.shape_ = std::move(new_shape);
    return t;
  }

 private:
  struct PoolDeleter {
    PoolDeleter() : n(0) {}
    explicit PoolDeleter(int64_t size) : n(size) {}
    int64_t n;
    void operator()(float* p) const { detail::BufferPool::instance().release(p, n); }
  };

  enum class Fill { kZero, kNone };

  Tensor(Shape shape, Fill fill) : shape_(std::move(shape)) {
    for (int64_t d : shape_) {
      if (d < 1) throw ShapeError("shape extents must be >= 1, got " + shape_str(shape_));
    }
    size_ = shape_size(shape_);
    data_ = std::unique_ptr<float[], PoolDeleter>(detail::BufferPool::instance().acquire(size_),
                                                  PoolDeleter{size_});
    if (fill == Fill::kZero) {
      std::memset(data_.get(), 0, sizeof(float) * static_cast<size_t>(size_));
    }
  }

  Shape shape_;
  int64_t size_ = 0;
  std::unique_ptr<float[], PoolDeleter> data_;
};

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

}  // namespace adagan
