#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace iiv {

/// Runs body(begin, end) over contiguous blocks of [0, count) on up to
/// `threads` workers. Block boundaries depend only on count and the worker
/// count, and callers write results by index, so any reduction done
/// afterwards in index order is independent of scheduling.
template <typename Body>
void parallel_blocks(std::size_t count, unsigned threads, Body&& body) {
    if (count == 0) return;
    const std::size_t workers = std::clamp<std::size_t>(threads, 1, count);
    if (workers == 1) {
        body(std::size_t{0}, count);
        return;
    }
    const std::size_t block = (count + workers - 1) / workers;
    std::exception_ptr failure;
    std::mutex failure_mutex;
    {
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) {
            const std::size_t begin = w * block;
            const std::size_t end = std::min(count, begin + block);
            if (begin >= end) break;
            pool.emplace_back([&, begin, end] {
                try {
                    body(begin, end);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                }
            });
        }
    }
    if (failure) std::rethrow_exception(failure);
}

template <typename Body>
void parallel_for(std::size_t count, unsigned threads, Body&& body) {
    parallel_blocks(count, threads, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) body(i);
    });
}

}  // namespace iiv
