#pragma once

#include <algorithm>
#include <exception>
#include <thread>
#include <vector>

namespace dcmrta {

/// Runs fn(worker, index) for index in [0, count); worker w takes w, w + workers, ...
/// The first exception raised by any worker is rethrown after all have joined.
template <typename Fn>
void parallel_for(int workers, int count, Fn&& fn) {
  workers = std::max(1, std::min(workers, count));
  if (workers == 1) {
    for (int i = 0; i < count; ++i) fn(0, i);
    return;
  }
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  {
    std::vector<std::jthread> threads;
    for (int w = 0; w < workers; ++w)
      threads.emplace_back([&, w] {
        try {
          for (int i = w; i < count; i += workers) fn(w, i);
        } catch (...) {
          errors[static_cast<std::size_t>(w)] = std::current_exception();
        }
      });
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace dcmrta
