#include "modclass/nn/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <thread>
#include <vector>

namespace modclass::nn {

namespace {
std::atomic<std::size_t> g_workers{1};
}

void set_worker_count(std::size_t workers) { g_workers.store(std::max<std::size_t>(workers, 1)); }

std::size_t worker_count() { return g_workers.load(); }

std::size_t chunk_count(std::size_t n) { return std::max<std::size_t>(1, std::min(n, worker_count())); }

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t, std::size_t)>& body) {
  const std::size_t chunks = chunk_count(n);
  if (chunks <= 1) {
    body(0, n, 0);
    return;
  }
  std::vector<std::exception_ptr> errors(chunks);
  {
    std::vector<std::jthread> threads;
    threads.reserve(chunks - 1);
    auto run = [&](std::size_t w) {
      const std::size_t begin = n * w / chunks;
      const std::size_t end = n * (w + 1) / chunks;
      try {
        body(begin, end, w);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    };
    for (std::size_t w = 1; w < chunks; ++w) threads.emplace_back(run, w);
    run(0);
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace modclass::nn
