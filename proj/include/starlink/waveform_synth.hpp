#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "starlink/frame_model.hpp"

namespace starlink {

using Rng = std::mt19937_64;

struct ClockModel {
    double dtc0 = 0;     // carrier clock offset at t0 (s)
    double dtc_dot = 0;  // carrier clock drift
    double dts0 = 0;     // sample clock offset at t0 (s)
    double dts_dot = 0;  // sample clock drift
    double t0 = 0;

    void validate() const;
};

enum class ClockKind { Carrier, Sample };

double clock_time(double t, const ClockModel& clock, ClockKind which);

struct ChannelParams {
    double beta = 0;               // line-of-sight range rate over c
    double tau_los = 0;            // propagation delay (s)
    std::vector<cplx> H;           // over K, empty means flat; H[0] must be 1
    double gain = 1;               // power gain g
    double theta = 0;              // per-frame initial phase
    std::optional<double> snr_db;  // pre-correlation SNR; none means noiseless
    double center_hz = 11.325e9;
    std::uint64_t noise_seed = 1;

    void validate() const;
};

// Aggregate quantities of the discrete-time model.
struct ImpairmentSummary {
    double beta_s = 0;
    double beta_c = 0;
    double delay_samples = 0;  // n_m
    double phase = 0;          // phi_m + theta
};

ImpairmentSummary summarize(const ClockModel& clock, const ChannelParams& channel);

struct CaptureStream {
    std::vector<cplx> samples;
    double sample_rate = kFs;
    double center_hz = 11.325e9;
    double epoch = 0;
};

// Linear tilt of the given total span in dB across the band, unity at d = 0.
std::vector<cplx> tilted_transfer(double span_db);

double support_function(double v);  // g_s, v in samples from slot start

std::vector<cplx> ofdm_symbol_time(std::span<const cplx> X);

// Cyclic constant-amplitude chirp; body of Ns samples with its CP.
std::vector<cplx> default_pss();
// Seeded QPSK over Kl, zero on the gutter.
std::vector<cplx> default_sss();

// Row 1 takes sss, rows 2..301 random points of the listed constellations over Klnp
// with the edge pilots on Kp. labels has one entry per i in I2.
SymbolMatrix random_frame_symbols(std::span<const Modulation> labels, std::span<const cplx> sss, Rng& rng);

std::vector<cplx> synth_frame(const SymbolMatrix& symbols, std::span<const cplx> pss);

// Slot spectra, as consumed by the channel renderer: A(s,k) such that the slot
// body is (1/sqrt(Ns)) sum_k A e^{j2 pi d(v-Ng)/Ns}.
SymbolMatrix slot_spectra(std::span<const cplx> frame);

std::vector<cplx> apply_channel(std::span<const cplx> frame, const ClockModel& clock, const ChannelParams& channel);

// Mean power of a frame of unit-power symbols after the support function.
double nominal_frame_power();

void add_awgn(std::span<cplx> samples, double noise_power, Rng& rng);

struct FrameEmission {
    std::vector<cplx> samples;  // output of synth_frame
    double start_s = 0;
    ClockModel clock;
    ChannelParams channel;  // snr_db ignored here
};

CaptureStream synth_capture(std::span<const FrameEmission> frames, double duration_s, std::optional<double> snr_db,
                            double center_hz, std::uint64_t seed);

void write_iq(const std::string& path, std::span<const cplx> samples);
std::vector<cplx> read_iq(const std::string& path);
void write_meta(const std::string& path, const CaptureStream& stream);
CaptureStream read_meta(const std::string& path);

}  // namespace starlink

namespace starlink {

// Exact renderer of windowed OFDM slots at warped sample instants:
// y[n] = Z e^{j(-2 pi beta_c Fc n Ts + phase)} sum_s g_s(v) x_s(v), v = (1-beta_s)(n-delay) - s(Ns+Ng).
struct WarpParams {
    double beta_s = 0;
    double beta_c = 0;
    double delay = 0;  // samples
    double phase = 0;
    double center_hz = 11.325e9;
    cplx scale = 1;
    std::span<const cplx> H;  // over K, empty means flat
};

std::vector<cplx> render_warped(const SymbolMatrix& spectra, std::size_t out_len, const WarpParams& p);

}  // namespace starlink
