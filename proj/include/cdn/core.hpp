// SPDX-License-Identifier: Apache-2.0
#ifndef CDN_CORE_HPP
#define CDN_CORE_HPP

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <memory>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace cdn {

// ---------------------------------------------------------------------------
// Errors. The CLI maps these onto exit codes (usage=1, data=2, numeric=3).
// ---------------------------------------------------------------------------

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};
struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// ---------------------------------------------------------------------------
// Deterministic seeding. All randomness in the library flows from explicit
// 64-bit seeds through these helpers, so every run is replayable.
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base) { return splitmix64(base); }

template <class... Rest>
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t next, Rest... rest) {
  return derive_seed(splitmix64(base ^ (next + 0x9e3779b97f4a7c15ULL)), rest...);
}

// Gaussian sampler: mt19937_64 + Box-Muller. mt19937_64 has a pinned sequence
// in the standard, and Box-Muller is implemented here rather than through
// std::normal_distribution (whose output is implementation-defined).
class GaussianSampler {
 public:
  explicit GaussianSampler(std::uint64_t seed) : rng_(seed) {}

  double uniform() {  // in [0, 1)
    return static_cast<double>(rng_() >> 11) * 0x1.0p-53;
  }

  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  std::uint64_t next_u64() { return rng_(); }
  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// ---------------------------------------------------------------------------
// Thread pool. Work is split into fixed contiguous chunks so results do not
// depend on scheduling; each chunk writes a disjoint region in serial order,
// which keeps outputs bit-identical for any thread count.
// ---------------------------------------------------------------------------

namespace detail {

inline int env_thread_count() {
  if (const char* s = std::getenv("CDN_THREADS")) {
    const int v = std::atoi(s);
    if (v >= 1) return v;
  }
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

class ThreadPool {
 public:
  static ThreadPool& instance() {
    static ThreadPool pool(env_thread_count());
    return pool;
  }

  int size() const { return static_cast<int>(workers_.size()) + 1; }

  // Runs fn(chunk_begin, chunk_end) over [0, total) split into size() chunks.
  void run_chunks(std::int64_t total, const std::function<void(std::int64_t, std::int64_t)>& fn) {
    const int nthreads = size();
    if (total <= 0) return;
    if (nthreads == 1 || total == 1) {
      fn(0, total);
      return;
    }
    std::unique_lock<std::mutex> call_lock(call_mutex_);
    const std::int64_t chunk = (total + nthreads - 1) / nthreads;
    task_ = &fn;
    chunk_size_ = chunk;
    total_ = total;
    pending_ = 0;
    for (std::size_t i = 0; i < workers_.size(); ++i) {
      const std::int64_t begin = static_cast<std::int64_t>(i + 1) * chunk;
      if (begin < total) ++pending_;
    }
    {
      std::lock_guard<std::mutex> lk(mutex_);
      ++generation_;
    }
    cv_.notify_all();
    fn(0, std::min<std::int64_t>(chunk, total));
    std::unique_lock<std::mutex> lk(mutex_);
    done_cv_.wait(lk, [this] { return pending_ == 0; });
    task_ = nullptr;
  }

 private:
  explicit ThreadPool(int nthreads) {
    for (int i = 1; i < nthreads; ++i) {
      workers_.emplace_back([this, i] { worker_loop(i); });
    }
  }

  ~ThreadPool() {
    {
      std::lock_guard<std::mutex> lk(mutex_);
      stop_ = true;
      ++generation_;
    }
    cv_.notify_all();
    for (auto& t : workers_) t.join();
  }

  void worker_loop(int index) {
    std::uint64_t seen = 0;
    for (;;) {
      std::unique_lock<std::mutex> lk(mutex_);
      cv_.wait(lk, [this, &seen] { return stop_ || generation_ != seen; });
      if (stop_) return;
      seen = generation_;
      const auto* task = task_;
      const std::int64_t begin = static_cast<std::int64_t>(index) * chunk_size_;
      const std::int64_t end = std::min<std::int64_t>(begin + chunk_size_, total_);
      lk.unlock();
      if (task != nullptr && begin < end) {
        (*task)(begin, end);
        std::lock_guard<std::mutex> g(mutex_);
        if (--pending_ == 0) done_cv_.notify_all();
      }
    }
  }

  std::vector<std::thread> workers_;
  std::mutex call_mutex_;  // serializes run_chunks callers
  std::mutex mutex_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  const std::function<void(std::int64_t, std::int64_t)>* task_ = nullptr;
  std::int64_t chunk_size_ = 0;
  std::int64_t total_ = 0;
  int pending_ = 0;
  std::uint64_t generation_ = 0;
  bool stop_ = false;
};

}  // namespace detail

template <class Fn>
void parallel_for(std::int64_t total, Fn&& fn) {
  const std::function<void(std::int64_t, std::int64_t)> task = std::forward<Fn>(fn);
  detail::ThreadPool::instance().run_chunks(total, task);
}

inline int thread_count() { return detail::ThreadPool::instance().size(); }

// ---------------------------------------------------------------------------
// Shape: dense NCHW with w fastest.
// ---------------------------------------------------------------------------

struct Shape {
  std::int64_t n = 0, c = 0, h = 0, w = 0;

  Shape() = default;
  Shape(std::int64_t n_, std::int64_t c_, std::int64_t h_, std::int64_t w_)
      : n(n_), c(c_), h(h_), w(w_) {
    if (n < 0 || c < 0 || h < 0 || w < 0) throw ShapeError("negative dimension");
  }

  std::int64_t numel() const { return n * c * h * w; }
  bool operator==(const Shape& o) const = default;

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
  }
};

// ---------------------------------------------------------------------------
// Tensor: 4-D array of T with optional gradient buffer. The payload is shared
// so tensors are cheap value handles; data written by an op is treated as
// immutable afterwards. grad exists iff requires_grad.
// ---------------------------------------------------------------------------

template <class T>
class TensorT {
 public:
  using Scalar = T;

  TensorT() = default;

  explicit TensorT(const Shape& s, T fill = T(0))
      : shape_(s), data_(std::make_shared<std::vector<T>>(s.numel(), fill)) {}

  static TensorT from_data(const Shape& s, std::vector<T> values) {
    if (static_cast<std::int64_t>(values.size()) != s.numel())
      throw ShapeError("data length " + std::to_string(values.size()) + " does not match shape " +
                       s.str());
    TensorT t;
    t.shape_ = s;
    t.data_ = std::make_shared<std::vector<T>>(std::move(values));
    return t;
  }

  static TensorT scalar(T value) { return from_data(Shape(1, 1, 1, 1), {value}); }

  const Shape& shape() const { return shape_; }
  std::int64_t numel() const { return shape_.numel(); }
  bool defined() const { return data_ != nullptr; }

  T* data() { return data_->data(); }
  const T* data() const { return data_->data(); }

  bool requires_grad() const { return grad_ != nullptr; }

  // Allocates a zeroed gradient buffer (idempotent).
  void set_requires_grad() {
    if (!grad_) grad_ = std::make_shared<std::vector<T>>(shape_.numel(), T(0));
  }

  T* grad() { return grad_ ? grad_->data() : nullptr; }
  const T* grad() const { return grad_ ? grad_->data() : nullptr; }

  void zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), T(0));
  }

  T item() const {
    if (numel() != 1) throw ShapeError("item() requires a 1-element tensor, got " + shape_.str());
    return (*data_)[0];
  }

  // Deep copy of values; no grad, no tape linkage.
  TensorT detach_copy() const {
    TensorT t;
    t.shape_ = shape_;
    t.data_ = std::make_shared<std::vector<T>>(*data_);
    return t;
  }

  T& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    return (*data_)[((n * shape_.c + c) * shape_.h + h) * shape_.w + w];
  }
  T at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    return (*data_)[((n * shape_.c + c) * shape_.h + h) * shape_.w + w];
  }

  bool all_finite() const {
    for (const T v : *data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

 private:
  Shape shape_;
  std::shared_ptr<std::vector<T>> data_;
  std::shared_ptr<std::vector<T>> grad_;
};

using Tensor = TensorT<float>;

template <class To, class From>
TensorT<To> cast_tensor(const TensorT<From>& x) {
  std::vector<To> v(static_cast<std::size_t>(x.numel()));
  const From* p = x.data();
  for (std::int64_t i = 0; i < x.numel(); ++i) v[i] = static_cast<To>(p[i]);
  return TensorT<To>::from_data(x.shape(), std::move(v));
}

// ---------------------------------------------------------------------------
// Tape: ordered record of differentiable operations. Ops push their backward
// rule while a tape is active; backward() replays them in reverse, summing
// gradients into shared buffers. One tape is single-writer by contract.
// ---------------------------------------------------------------------------

template <class T>
class TapeT {
 public:
  static TapeT*& active() {
    thread_local TapeT* current = nullptr;
    return current;
  }

  // RAII activation. Nesting restores the previous tape on destruction.
  class Scope {
   public:
    explicit Scope(TapeT& tape) : previous_(active()) { active() = &tape; }
    ~Scope() { active() = previous_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    TapeT* previous_;
  };

  void record(std::function<void()> backward_rule) {
    nodes_.push_back(std::move(backward_rule));
  }

  std::size_t size() const { return nodes_.size(); }
  bool backward_done() const { return backward_done_; }

  // Seeds d(loss)/d(loss)=1 and accumulates gradients into every recorded
  // input. Reachable parameters end with d(loss)/d(param); untouched ones
  // keep whatever zero_grad left (zeros).
  void backward(TensorT<T>& loss) {
    if (backward_done_)
      throw NumericalError("backward() called twice on the same tape without reset()");
    if (loss.numel() != 1) throw ShapeError("backward() requires a scalar loss");
    if (!loss.requires_grad())
      throw NumericalError("backward() on a tensor that was not recorded on this tape");
    loss.grad()[0] = T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    backward_done_ = true;
  }

  void reset() {
    nodes_.clear();
    backward_done_ = false;
  }

 private:
  std::vector<std::function<void()>> nodes_;
  bool backward_done_ = false;
};

using Tape = TapeT<float>;

template <class T>
bool grad_recording() {
  return TapeT<T>::active() != nullptr;
}

}  // namespace cdn

#endif  // CDN_CORE_HPP
