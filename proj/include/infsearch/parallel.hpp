// Minimal data-parallel helper. Thread count comes from the INFSEARCH_THREADS
// environment variable (unset or 0 = hardware concurrency, 1 = fully serial);
// work is split into fixed contiguous chunks so results never depend on the
// schedule as long as iterations write disjoint state.
#pragma once

#include <cstddef>
#include <functional>

namespace infsearch {

std::size_t thread_count() noexcept;

// Runs fn(i) for i in [0, n). fn must not throw across threads; exceptions are
// rethrown on the caller after all workers join.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace infsearch
