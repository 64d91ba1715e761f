#pragma once

#include <cstddef>
#include <functional>

namespace modclass::nn {

// Process-wide worker count used by the batch-parallel kernels. The default
// of 1 runs everything on the calling thread and is bit-reproducible.
void set_worker_count(std::size_t workers);
std::size_t worker_count();

// Splits [0, n) into at most worker_count() contiguous chunks and calls
// body(begin, end, worker_index) once per chunk. Chunk boundaries depend only
// on n and the worker count, so per-worker partial results can be reduced in
// worker order deterministically.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t, std::size_t)>& body);

// Number of chunks parallel_for(n, ...) will use.
std::size_t chunk_count(std::size_t n);

}  // namespace modclass::nn
