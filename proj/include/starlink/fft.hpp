#pragma once

#include <complex>
#include <memory>
#include <span>
#include <vector>

namespace starlink {

enum class FftDirection { Forward, Inverse };

// Unnormalized DFT of fixed length; plans are cached and shared.
class Fft {
public:
    Fft(std::size_t n, FftDirection dir);
    std::size_t size() const { return n_; }
    void execute(std::span<const std::complex<double>> in, std::span<std::complex<double>> out) const;
    void execute(std::span<std::complex<double>> inout) const { execute(inout, inout); }

private:
    std::size_t n_;
    std::shared_ptr<void> in_place_;
    std::shared_ptr<void> out_of_place_;
};

std::vector<std::complex<double>> fft(std::span<const std::complex<double>> x);
std::vector<std::complex<double>> ifft(std::span<const std::complex<double>> x);  // unnormalized

std::size_t next_pow2(std::size_t n);

}  // namespace starlink
