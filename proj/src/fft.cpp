#include "starlink/fft.hpp"

#include <fftw3.h>

#include <map>
#include <mutex>
#include <stdexcept>
#include <tuple>

namespace starlink {

namespace {

std::mutex planner_mutex;

std::shared_ptr<void> cached_plan(std::size_t n, FftDirection dir, bool in_place) {
    static std::map<std::tuple<std::size_t, int, bool>, std::shared_ptr<void>> cache;
    std::lock_guard lock(planner_mutex);
    const auto key = std::make_tuple(n, static_cast<int>(dir), in_place);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
    auto* a = fftw_alloc_complex(n);
    auto* b = in_place ? a : fftw_alloc_complex(n);
    fftw_plan p = fftw_plan_dft_1d(static_cast<int>(n), a, b,
                                   dir == FftDirection::Forward ? FFTW_FORWARD : FFTW_BACKWARD,
                                   FFTW_ESTIMATE | FFTW_UNALIGNED);
    if (!in_place) fftw_free(b);
    fftw_free(a);
    if (!p) throw std::runtime_error("FFTW planning failed");
    std::shared_ptr<void> plan(static_cast<void*>(p), [](void* q) { fftw_destroy_plan(static_cast<fftw_plan>(q)); });
    cache.emplace(key, plan);
    return plan;
}

}  // namespace

Fft::Fft(std::size_t n, FftDirection dir) : n_(n) {
    if (n == 0) throw std::domain_error("FFT length must be positive");
    in_place_ = cached_plan(n, dir, true);
    out_of_place_ = cached_plan(n, dir, false);
}

void Fft::execute(std::span<const std::complex<double>> in, std::span<std::complex<double>> out) const {
    if (in.size() != n_ || out.size() != n_) throw std::domain_error("FFT buffer length mismatch");
    auto* src = reinterpret_cast<fftw_complex*>(const_cast<std::complex<double>*>(in.data()));
    auto* dst = reinterpret_cast<fftw_complex*>(out.data());
    const auto& plan = in.data() == out.data() ? in_place_ : out_of_place_;
    fftw_execute_dft(static_cast<fftw_plan>(plan.get()), src, dst);
}

std::vector<std::complex<double>> fft(std::span<const std::complex<double>> x) {
    std::vector<std::complex<double>> out(x.size());
    Fft(x.size(), FftDirection::Forward).execute(x, out);
    return out;
}

std::vector<std::complex<double>> ifft(std::span<const std::complex<double>> x) {
    std::vector<std::complex<double>> out(x.size());
    Fft(x.size(), FftDirection::Inverse).execute(x, out);
    return out;
}

std::size_t next_pow2(std::size_t n) {
    std::size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

}  // namespace starlink
