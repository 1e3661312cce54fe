#include "flow4dsr/threading.hpp"
#include "flow4dsr/log.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace flow4dsr {

namespace log {

namespace {
std::mutex handler_mutex;
Handler warn_handler; // empty = default stderr sink
} // namespace

Handler set_warn_handler(Handler h) {
    std::lock_guard<std::mutex> lock(handler_mutex);
    Handler prev = warn_handler;
    warn_handler = std::move(h);
    return prev;
}

void warn(const std::string& msg) {
    Handler h;
    {
        std::lock_guard<std::mutex> lock(handler_mutex);
        h = warn_handler;
    }
    if (h)
        h(msg);
    else
        std::fprintf(stderr, "[flow4dsr] warning: %s\n", msg.c_str());
}

void info(const std::string& msg) {
    std::fprintf(stderr, "[flow4dsr] %s\n", msg.c_str());
}

} // namespace log

int max_threads() {
    static int cached = [] {
        int n = int(std::thread::hardware_concurrency());
        if (n < 1) n = 1;
        if (const char* env = std::getenv("FLOW4DSR_THREADS")) {
            int cap = std::atoi(env);
            if (cap >= 1) n = std::min(n, cap);
        }
        return n;
    }();
    return cached;
}

void parallel_for(int n, const std::function<void(int)>& fn) {
    if (n <= 0) return;
    int workers = std::min(max_threads(), n);
    if (workers == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(std::size_t(workers));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                int i = next.fetch_add(1);
                if (i >= n || failed.load()) break;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                    failed.store(true);
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

} // namespace flow4dsr
