#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "starlink/frame_model.hpp"

namespace starlink {

struct DemodConfig {
    double h_floor = 0.05;
    int smoother_window = 41;
    int smoother_order = 3;
    int center_window = 121;  // fit span for the band-center value used in normalization
    double kmeans_threshold = 0.15;
    int kmeans_restarts = 20;
    int gap_split = 20;
    double noise_floor = 1e-4;  // lower bound on equalized noise variance
    int newton_iterations = 50;
    double outlier_delay = 0.25 * kTs;  // per-symbol residual that triggers a restart
    double outlier_phase = 0.3;
    double center_hz = 11.325e9;
};

struct EqualizerState {
    std::vector<cplx> H_hat;    // over K, zero on the gutter
    std::vector<cplx> H_tilde;  // smoothed, before normalization
    cplx Z_hat = 1;
    double g_hat = 1;
    double theta_hat = 0;
    double tau_m1 = 0;  // seconds
    std::vector<bool> masked;
    int masked_count = 0;
};

enum class ColumnClass { Card4, QAM16, QAM32, Composite };
std::string to_string(ColumnClass c);

struct PerSymbolEstimate {
    int i = 0;
    double tau = 0;  // seconds
    double phi = 0;
    double log_likelihood = 0;
    Modulation label = Modulation::QPSK;
    bool converged = false;
};

struct SyncEstimate {
    double phi_m0 = 0;
    double dbeta_c = 0;
    double tau_m0 = 0;
    double dbeta_s = 0;
    double center_hz = 11.325e9;
    std::vector<PerSymbolEstimate> per_symbol;
    std::vector<int> retained;

    double tau_at(int i) const;
    double phi_at(int i) const;
};

struct DecodedFrame {
    int m = 0;
    double snr_pre_est = 0;  // dB
    SyncEstimate sync;
    std::vector<int> symbols;                // retained i, ascending, includes 1 (SSS)
    std::vector<Modulation> labels;          // one per retained symbol
    SymbolMatrix X_hat;                      // 302 rows, zero outside retained rows
    std::vector<std::vector<int>> point_index;  // per retained symbol, over Kl, -1 if masked

    int row_of(int i) const;  // index into symbols/labels, or -1
};

// Y-bar rows 1..301; row 0 left zero.
SymbolMatrix ofdm_demod(std::span<const cplx> frame);

double estimate_delay(std::span<const cplx> z);  // phase-ramp ML over Kl entries, seconds

EqualizerState estimate_channel(std::span<const cplx> Ybar_sss, std::span<const cplx> X_sss,
                                const DemodConfig& cfg = {});
// Averages normalized transfer estimates across frames, then re-derives Z for the given SSS row.
EqualizerState refine_channel(std::span<const EqualizerState> frames, std::span<const cplx> Ybar_sss,
                              std::span<const cplx> X_sss, const DemodConfig& cfg = {});
std::vector<cplx> smooth_transfer(std::span<const cplx> H_raw, int window, int order);  // over Kl, by d

SymbolMatrix equalize(const SymbolMatrix& Ybar, const EqualizerState& eq);

double gutter_noise_variance(const SymbolMatrix& Ybar);
std::vector<double> equalized_noise_variance(double gutter_var, const EqualizerState& eq, const DemodConfig& cfg = {});

// column: values over Klnp (any order), phase ramp already removed. noise_var: equalized noise variance.
ColumnClass identify_constellation(std::span<const cplx> column, double noise_var, const DemodConfig& cfg = {});

struct SymbolHypothesis {
    std::vector<Modulation> candidates;  // empty when every used subcarrier is known
    std::vector<std::optional<cplx>> known;  // over K
    std::optional<double> tau_start;  // extra Newton start, s
    double phi_start = 0;
};

// Coarse delay (seconds) of one column from its fourth-power periodogram; k_of gives each entry's subcarrier.
double coarse_column_delay(std::span<const cplx> column, std::span<const int> k_of);

PerSymbolEstimate per_symbol_ml(std::span<const cplx> Ytilde_row, const SymbolHypothesis& hyp,
                                std::span<const double> noise_var, const DemodConfig& cfg = {});

SyncEstimate joint_fit(std::span<const PerSymbolEstimate> estimates, const DemodConfig& cfg = {});

SymbolMatrix compensate(const SymbolMatrix& Ytilde, const SyncEstimate& sync, std::span<const int> rows);

// columns: retained symbols with their identified class; SSS (i = 1) must be first.
DecodedFrame disambiguate_and_decode(const SymbolMatrix& Y, std::span<const int> symbols,
                                     std::span<const ColumnClass> classes, const std::vector<bool>& masked);

struct AltSyncConfig {
    double scan_half_range = 2e-7;
    double scan_step = 4e-9;
    int scan_symbols = 32;
    int scan_subcarriers = 128;
    double penalty_beta = 1.0 / (1e-7 * 1e-7);  // weight on dbeta_c^2
    double penalty_phi = 1.0;                   // weight on (phi_m0 - phi_prior)^2
    double beta_hat = 0;
    double center_hz = 11.325e9;
};

struct AltSyncResult {
    double dbeta_c = 0;
    double phi_m0 = 0;
    double cost = 0;
};

// Ytilde rows 2..301 with the common delay already removed.
AltSyncResult alt_residual_sync(const SymbolMatrix& Ytilde, std::span<const double> noise_var, double phi_prior,
                                const AltSyncConfig& cfg = {});
SymbolMatrix apply_alt_sync(const SymbolMatrix& Ytilde, const AltSyncResult& r, const AltSyncConfig& cfg = {});

struct DemodResult {
    DecodedFrame decoded;
    EqualizerState equalizer;
    SymbolMatrix Y;  // phase-aligned symbols for retained rows
    std::vector<ColumnClass> classes;  // per i in I1
};

DemodResult demodulate_frame(std::span<const cplx> frame, std::span<const cplx> sss, const DemodConfig& cfg = {},
                             const EqualizerState* channel_prior = nullptr);

std::string format_decoded_frames(std::span<const DecodedFrame> frames);
std::vector<DecodedFrame> parse_decoded_frames(std::string_view text);

}  // namespace starlink
