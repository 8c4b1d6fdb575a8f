#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "knudsen/errors.hpp"

namespace knudsen {

/// Failure of one work item, tagged with its index.
class ItemError : public Error {
 public:
  ItemError(std::size_t index, const std::string& what)
      : Error("item " + std::to_string(index) + ": " + what), index_(index) {}
  std::size_t index() const { return index_; }

 private:
  std::size_t index_;
};

/// Evaluates fn(i) for i in [0, count) on `threads` workers that pull chunks
/// from a shared counter. Results land at their own index, so the output does
/// not depend on scheduling. The error of the lowest failing index is rethrown.
template <class R, class F>
std::vector<R> parallel_map(std::size_t count, unsigned threads, F&& fn) {
  std::vector<R> out(count);
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(count, 1))));
  constexpr std::size_t kChunk = 64;
  std::atomic<std::size_t> next{0};
  std::mutex err_mutex;
  std::size_t err_index = count;
  std::string err_what;

  auto worker = [&] {
    for (;;) {
      const std::size_t begin = next.fetch_add(kChunk);
      if (begin >= count) return;
      const std::size_t end = std::min(count, begin + kChunk);
      for (std::size_t i = begin; i < end; ++i) {
        try {
          out[i] = fn(i);
        } catch (const std::exception& e) {
          std::lock_guard<std::mutex> lock(err_mutex);
          if (i < err_index) {
            err_index = i;
            err_what = e.what();
          }
        }
      }
    }
  };
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (err_index < count) throw ItemError(err_index, err_what);
  return out;
}

}  // namespace knudsen
