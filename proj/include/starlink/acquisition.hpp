#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "starlink/frame_model.hpp"

namespace starlink {

inline constexpr double kMaxAcquisitionBeta = 25e-6;

struct DopplerGrid {
    double min = -kMaxAcquisitionBeta;
    double max = kMaxAcquisitionBeta;
    double step = 2e3 / 11.325e9;  // 2 kHz at the default center

    std::vector<double> values() const;  // symmetric about zero when min = -max
};

struct AcquisitionConfig {
    DopplerGrid grid;
    double pfa = 1e-6;  // per-cell false-alarm probability
    double center_hz = 11.325e9;
    int fft_size = 8192;
};

struct AcquisitionResult {
    long long n_hat = 0;
    double beta_hat = 0;
    double peak = 0;         // |R| at the peak
    double threshold = 0;    // on |R|
    double noise_floor = 0;  // median |R|^2 over the grid
    bool accepted = false;
    double snr_pre_est = -std::numeric_limits<double>::infinity();  // dB
};

// ceil(2·Tsym / ((1 - beta)·Ts))
std::size_t replica_length(double beta);

// pss and sss are time-domain slots of 1056 samples (before the support taper).
std::vector<cplx> build_replica(std::span<const cplx> pss, std::span<const cplx> sss, double beta,
                                double center_hz = 11.325e9);

struct AmbiguitySurface {
    long long lag_begin = 0;
    std::vector<double> betas;
    std::vector<std::vector<cplx>> R;  // [beta][lag - lag_begin]
};

AmbiguitySurface ambiguity_surface(std::span<const cplx> stream, long long lag_begin, std::size_t lag_count,
                                   std::span<const double> betas, std::span<const cplx> pss,
                                   std::span<const cplx> sss, const AcquisitionConfig& cfg = {});

// Every accepted peak, at least one frame period apart, in stream order.
std::vector<AcquisitionResult> acquire_all(std::span<const cplx> stream, std::span<const cplx> pss,
                                           std::span<const cplx> sss, const AcquisitionConfig& cfg = {});
// Strongest peak; accepted is false when nothing crosses the threshold.
AcquisitionResult acquire(std::span<const cplx> stream, std::span<const cplx> pss, std::span<const cplx> sss,
                          const AcquisitionConfig& cfg = {});

// Extracts Nsf slots starting at n_hat, undoing the time scaling and carrier offset of beta_hat.
std::vector<cplx> coarse_compensate(std::span<const cplx> stream, long long n_hat, double beta_hat,
                                    double center_hz = 11.325e9);

std::string format_detections(std::span<const AcquisitionResult> results);
std::vector<AcquisitionResult> parse_detections(std::string_view text);

}  // namespace starlink
