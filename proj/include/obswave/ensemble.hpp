#pragma once

// Index-ordered parallel loops. Results are written per index and reduced in
// index order, so output does not depend on the number of threads.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace obswave {

/// Worker count: OBSWAVE_THREADS if set and positive, else hardware concurrency.
inline unsigned thread_count() {
    if (const char* env = std::getenv("OBSWAVE_THREADS")) {
        const long n = std::strtol(env, nullptr, 10);
        if (n > 0) return static_cast<unsigned>(n);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

template <class F>
void parallel_for(std::size_t n, F&& body) {
    const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(thread_count(), n));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::size_t failed_at = n;
    std::mutex m;
    auto run = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                body(i);
            } catch (...) {
                std::lock_guard lock(m);
                // keep the lowest-index failure so the error is deterministic
                if (i < failed_at) {
                    failed_at = i;
                    failure = std::current_exception();
                }
            }
        }
    };
    std::vector<std::thread> pool;
    for (unsigned w = 1; w < workers; ++w) pool.emplace_back(run);
    run();
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

template <class T, class F>
std::vector<T> parallel_map(std::size_t n, F&& body) {
    std::vector<T> out(n);
    parallel_for(n, [&](std::size_t i) { out[i] = body(i); });
    return out;
}

/// Neumaier compensated sum.
class CompensatedSum {
public:
    void add(double x) {
        const double t = sum_ + x;
        if (std::fabs(sum_) >= std::fabs(x)) comp_ += (sum_ - t) + x;
        else comp_ += (x - t) + sum_;
        sum_ = t;
    }
    double value() const { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

inline double compensated_sum(const std::vector<double>& xs) {
    CompensatedSum s;
    for (double x : xs) s.add(x);
    return s.value();
}

struct SampleStats {
    double mean = 0.0;
    double variance = 0.0;  // unbiased
    double standard_error = 0.0;
    std::size_t n = 0;
};

inline SampleStats sample_stats(const std::vector<double>& xs) {
    SampleStats s;
    s.n = xs.size();
    if (s.n == 0) return s;
    s.mean = compensated_sum(xs) / static_cast<double>(s.n);
    if (s.n > 1) {
        CompensatedSum sq;
        for (double x : xs) sq.add((x - s.mean) * (x - s.mean));
        s.variance = sq.value() / static_cast<double>(s.n - 1);
        s.standard_error = std::sqrt(s.variance / static_cast<double>(s.n));
    }
    return s;
}

} // namespace obswave
