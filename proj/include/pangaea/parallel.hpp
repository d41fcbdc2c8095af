#pragma once

#include <cstddef>
#include <functional>

namespace pangaea {

// Worker cap from PANGAEA_THREADS (unset or invalid means 1).
std::size_t worker_count();

// Runs fn(0..n-1) on at most `workers` threads. Exceptions from any task are
// rethrown on the caller after all tasks finish (the lowest index wins).
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

}  // namespace pangaea
