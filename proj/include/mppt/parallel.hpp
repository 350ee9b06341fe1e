#pragma once

#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace mppt {

// Runs fn(worker, item) with item i pinned to worker i % workers, so any
// per-worker accumulation is independent of scheduling. Rethrows the first
// exception in worker order.
template <typename F>
void for_each_pinned(std::size_t workers, std::size_t items, F&& fn) {
  if (workers <= 1 || items <= 1) {
    for (std::size_t i = 0; i < items; ++i) fn(std::size_t{0}, i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> threads;
  threads.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < items; i += workers) fn(w, i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace mppt
