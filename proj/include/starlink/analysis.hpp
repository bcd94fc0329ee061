#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "starlink/frame_model.hpp"

namespace starlink {

struct Gain {
    double linear = 0;
    double db = 0;
};

// 1 + (N - 1)|mu|^2
Gain processing_gain(double N, double mu);

enum class ReplicaPolicy { Known, Independent, SignFlip };

struct EmpiricalGainConfig {
    int N = 1000;
    Modulation constellation = Modulation::QPSK;
    ReplicaPolicy policy = ReplicaPolicy::Known;
    double flip_probability = 0;  // SignFlip only
    double snr_db = 0;
    int trials = 10000;
    std::uint64_t seed = 1;
};

// SNR_post / SNR_pre from simulated S_x and S_n.
Gain empirical_gain(const EmpiricalGainConfig& cfg);

struct TcodeErrorRate {
    double p_e = 0;
    double mu = 0;
};

TcodeErrorRate tcode_error_rate(double M_bar, double snr_pre);  // snr_pre linear

struct FrameStats {
    int pss_sss_samples = 2 * kSymLen;
    int pilot_symbols = 16 * 300;
    int tcode_columns = 0;  // |I_Tm|
};

struct FrameGainEstimate {
    double N_bar = 0;
    double M_bar = 0;
    double mu_bar = 0;
    Gain L_bar;
    double known_symbols = 0;  // per-frame averages of the two classes in N_bar
    double tcode_symbols = 0;
};

FrameGainEstimate frame_gain_estimate(std::span<const FrameStats> frames, double snr_pre_db);

enum class ReplicaKind { PssSss, PssSssEp, Lee, Full };
std::string to_string(ReplicaKind k);
ReplicaKind parse_replica_kind(std::string_view s);

struct ReplicaOptions {
    ReplicaKind kind = ReplicaKind::PssSss;
    double bandwidth_hz = kFs;
    std::optional<double> band_center_hz;  // default: centered, or edge-pilot aligned for EP/LEE below Fs
    int tcode_first = 10;                  // LEE T-code columns
    int tcode_last = 71;
    std::uint64_t seed = 0x1ee;            // data cells of LEE/full replicas
};

// Capture band whose upper edge coincides with the outer edge of the upper pilot group.
double edge_pilot_band_center(double bandwidth_hz);

struct ReplicaSpectrum {
    std::string label;
    double energy = 0;        // in-band replica energy; SNR_post = energy * SNR_pre
    double centroid_hz = 0;
    double ms_bandwidth = 0;  // Hz^2, about the centroid
    double span_s = 0;
    // 1 - |rho(h)| on an ascending lag grid (seconds)
    std::vector<double> lag;
    std::vector<double> decorrelation;
};

// Known-symbol replica; pss and sss default to the built-in test sequences.
ReplicaSpectrum build_replica_spectrum(const ReplicaOptions& opt);
ReplicaSpectrum replica_spectrum(std::span<const cplx> replica, double band_lo_hz, double band_hi_hz,
                                 std::string label);

double crb_toa(const ReplicaSpectrum& r, double snr_pre_db);  // RMSE, s
double zzb_toa(const ReplicaSpectrum& r, double snr_pre_db, double prior_window_s = kTsym);

struct BoundPoint {
    double snr_db = 0;
    double crb = 0;
    double zzb = 0;
};

std::vector<BoundPoint> toa_bounds(const ReplicaSpectrum& r, std::span<const double> snr_db,
                                   double prior_window_s = kTsym);
// Highest SNR where ZZB/CRB exceeds ratio, interpolated between grid points.
std::optional<double> bound_knee(std::span<const BoundPoint> pts, double ratio = 1.1);
std::string format_bounds_csv(std::span<const BoundPoint> pts, const std::string& label);
std::vector<BoundPoint> parse_bounds_csv(std::string_view text);

struct InvariantAverage {
    SymbolMatrix average;  // rows I2, columns Kl
    double noise_sigma = 0;
    double threshold = 0;
    std::vector<std::pair<int, int>> flagged;  // (i, k)
    bool low_confidence = false;
    int frames = 0;
};

// Running sum of Y-stage matrices (equalized, phase aligned).
class InvariantAverager {
public:
    InvariantAverager() : sum_(kNsf) {}
    void add(const SymbolMatrix& Y);
    int frames() const { return frames_; }
    InvariantAverage finish(double sigmas = 6) const;

private:
    SymbolMatrix sum_;
    int frames_ = 0;
};

InvariantAverage invariant_symbol_average(std::span<const SymbolMatrix> frames, double sigmas = 6);

struct PilotSubcarrier {
    int k = 0;
    int d = 0;
    int cells = 0;  // flagged cells on this subcarrier
};

struct PilotReport {
    int frames = 0;
    double noise_sigma = 0;
    double threshold = 0;
    bool low_confidence = false;
    int flagged_cells = 0;
    std::vector<PilotSubcarrier> subcarriers;  // ascending k
};

PilotReport pilot_report(const InvariantAverage& avg);
std::string format_pilot_report(const PilotReport& r);
PilotReport parse_pilot_report(std::string_view text);

}  // namespace starlink
