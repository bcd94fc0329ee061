#include "starlink/waveform_synth.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "starlink/fft.hpp"
#include "starlink/pilot_codes.hpp"
#include "starlink/text_io.hpp"

namespace starlink {

namespace {

constexpr double kTwoPi = 2 * std::numbers::pi;
constexpr double kMaxDrift = 1e-4;
constexpr double kMaxBeta = 25e-6;

double wrap_cycles(double cycles) { return cycles - std::floor(cycles); }

}  // namespace

void ClockModel::validate() const {
    if (!(std::abs(dtc_dot) < kMaxDrift) || !(std::abs(dts_dot) < kMaxDrift))
        throw std::domain_error("clock drift exceeds sanity bound 1e-4");
    if (!std::isfinite(dtc0) || !std::isfinite(dts0) || !std::isfinite(t0))
        throw std::domain_error("clock offsets must be finite");
}

double clock_time(double t, const ClockModel& clock, ClockKind which) {
    const double drift = which == ClockKind::Carrier ? clock.dtc_dot : clock.dts_dot;
    const double offset = which == ClockKind::Carrier ? clock.dtc0 : clock.dts0;
    return (1 + drift) * t + (offset - drift * clock.t0);
}

void ChannelParams::validate() const {
    if (!(std::abs(beta) <= kMaxBeta)) throw std::domain_error("|beta| exceeds 25e-6");
    if (!(gain > 0) || !std::isfinite(gain)) throw std::domain_error("channel gain must be positive");
    if (!H.empty()) {
        if (H.size() != static_cast<std::size_t>(kNs)) throw std::domain_error("H must cover all 1024 subcarriers");
        if (std::abs(H[0] - cplx(1)) > 1e-12) throw std::domain_error("H must be normalized so that H_0 = 1");
    }
    if (!(center_hz >= kFcMin && center_hz <= kFcMax)) throw std::domain_error("center frequency out of band");
}

ImpairmentSummary summarize(const ClockModel& clock, const ChannelParams& channel) {
    ImpairmentSummary s;
    s.beta_s = -clock.dts_dot + channel.beta;
    s.beta_c = -clock.dtc_dot + channel.beta;
    const double tau_m = channel.tau_los - clock.dts0 / (1 + clock.dts_dot - channel.beta);
    s.delay_samples = tau_m * kFs;
    const double fc = channel.center_hz;
    const double cycles = wrap_cycles(fc * clock.dtc0) - wrap_cycles((1 + clock.dtc_dot - channel.beta) * fc * channel.tau_los);
    s.phase = kTwoPi * wrap_cycles(cycles) + channel.theta;
    return s;
}

std::vector<cplx> tilted_transfer(double span_db) {
    std::vector<cplx> H(kNs);
    for (int k = 0; k < kNs; ++k) H[k] = std::pow(10.0, span_db / 2 * subcarrier_offset(k) / 512.0 / 20.0);
    return H;
}

double support_function(double v) {
    constexpr double half = kNg / 2.0;
    if (v < 0 || v >= kSymLen) return 0;
    if (v < half) return v / half;
    if (v < kSymLen - half) return 1;
    return 1 - (v - (kSymLen - half)) / half;
}

std::vector<cplx> ofdm_symbol_time(std::span<const cplx> X) {
    if (X.size() != static_cast<std::size_t>(kNs)) throw std::domain_error("symbol vector must have 1024 entries");
    for (int k : default_grid().Kg)
        if (X[k] != cplx(0)) throw std::domain_error("nonzero gutter subcarrier " + std::to_string(k));
    auto body = ifft(X);
    const double s = 1 / std::sqrt(static_cast<double>(kNs));
    std::vector<cplx> out(kSymLen);
    for (int v = 0; v < kSymLen; ++v) out[v] = body[(v - kNg + kNs) % kNs] * s;
    return out;
}

std::vector<cplx> default_pss() {
    std::vector<cplx> body(kNs);
    for (int v = 0; v < kNs; ++v) {
        const double cycles = 7.0 * v * v / (2.0 * kNs);
        body[v] = std::polar(1.0, -kTwoPi * wrap_cycles(cycles));
    }
    std::vector<cplx> out(kSymLen);
    for (int v = 0; v < kSymLen; ++v) out[v] = body[(v - kNg + kNs) % kNs];
    return out;
}

std::vector<cplx> default_sss() {
    Rng rng(0x5551);
    std::uniform_int_distribution<int> pick(0, 3);
    const auto& qpsk = constellation(Modulation::QPSK).points;
    std::vector<cplx> X(kNs);
    for (int k : default_grid().Kl) X[k] = qpsk[pick(rng)];
    return X;
}

SymbolMatrix random_frame_symbols(std::span<const Modulation> labels, std::span<const cplx> sss, Rng& rng) {
    if (labels.size() != default_grid().I2.size()) throw std::domain_error("need one label per symbol in I2");
    if (sss.size() != static_cast<std::size_t>(kNs)) throw std::domain_error("SSS must cover 1024 subcarriers");
    const auto& pilots = PilotCodebook::builtin();
    SymbolMatrix X(kNsf);
    for (int k : default_grid().Kl) X(1, k) = sss[k];
    for (int i = 2; i < kNsf; ++i) {
        const auto& pts = constellation(labels[i - 2]).points;
        std::uniform_int_distribution<int> pick(0, static_cast<int>(pts.size()) - 1);
        for (int k : default_grid().Klnp) X(i, k) = pts[pick(rng)];
        for (int k : default_grid().Kp) X(i, k) = pilots.pilot_symbol(i, k);
    }
    return X;
}

std::vector<cplx> synth_frame(const SymbolMatrix& symbols, std::span<const cplx> pss) {
    if (symbols.rows() != kNsf) throw std::domain_error("frame needs 302 symbol slots");
    if (pss.size() != static_cast<std::size_t>(kSymLen)) throw std::domain_error("PSS must be 1056 samples");
    std::vector<cplx> out(kFrameLen);
    for (int v = 0; v < kSymLen; ++v) out[v] = pss[v] * support_function(v);
    for (int i = 1; i < kNsf; ++i) {
        auto sym = ofdm_symbol_time(symbols.row(i));
        for (int v = 0; v < kSymLen; ++v) out[i * kSymLen + v] = sym[v] * support_function(v);
    }
    return out;
}

SymbolMatrix slot_spectra(std::span<const cplx> frame) {
    if (frame.empty() || frame.size() % kSymLen != 0) throw std::domain_error("frame length must be a multiple of 1056");
    const int slots = static_cast<int>(frame.size() / kSymLen);
    SymbolMatrix A(slots);
    Fft fwd(kNs, FftDirection::Forward);
    constexpr int start = kNg / 2;
    const double s = 1 / std::sqrt(static_cast<double>(kNs));
    for (int i = 0; i < slots; ++i) {
        auto row = A.row(i);
        fwd.execute(frame.subspan(static_cast<std::size_t>(i) * kSymLen + start, kNs), row);
        for (int k = 0; k < kNs; ++k)
            row[k] *= s * std::polar(1.0, kTwoPi * subcarrier_offset(k) * start / kNs);
    }
    return A;
}

std::vector<cplx> render_warped(const SymbolMatrix& spectra, std::size_t out_len, const WarpParams& p) {
    if (!(std::abs(p.beta_s) < kMaxDrift + kMaxBeta) || !(std::abs(p.beta_c) < kMaxDrift + kMaxBeta))
        throw std::domain_error("time-scaling factor outside renderer support");
    if (!p.H.empty() && p.H.size() != static_cast<std::size_t>(kNs)) throw std::domain_error("H must have 1024 entries");
    std::vector<cplx> out(out_len);
    const double stretch = 1 / (1 - p.beta_s);
    Fft inv(kNs, FftDirection::Inverse);
    std::vector<cplx> B(kNs), C(kNs), T(kNs);
    std::vector<cplx> acc, weight;
    const double norm = 1 / std::sqrt(static_cast<double>(kNs));

    for (int s = 0; s < spectra.rows(); ++s) {
        const double n_begin = p.delay + s * kSymLen * stretch;
        const double n_end = p.delay + (s + 1) * kSymLen * stretch;
        long long lo = static_cast<long long>(std::ceil(n_begin));
        long long hi = static_cast<long long>(std::ceil(n_end));
        // guard against the ceiling landing one sample outside the slot
        while ((1 - p.beta_s) * (lo - p.delay) - s * kSymLen < 0) ++lo;
        while (hi > lo && (1 - p.beta_s) * (hi - 1 - p.delay) - s * kSymLen >= kSymLen) --hi;
        const long long first = std::max<long long>(lo, 0);
        const long long last = std::min<long long>(hi, static_cast<long long>(out_len));
        if (first >= last) continue;
        const int count = static_cast<int>(hi - lo);
        const double v0 = (1 - p.beta_s) * (lo - p.delay) - s * kSymLen;

        for (int k = 0; k < kNs; ++k) {
            const int d = subcarrier_offset(k);
            cplx a = spectra(s, k);
            if (!p.H.empty()) a *= p.H[k];
            B[k] = a * std::polar(1.0, kTwoPi * wrap_cycles(d * (v0 - kNg) / kNs));
        }
        acc.assign(count, 0);
        weight.assign(count, 1);
        std::copy(B.begin(), B.end(), C.begin());
        const double x = std::numbers::pi * std::abs(p.beta_s) * count;
        double coeff_bound = 1;
        for (int order = 0; order < 40; ++order) {
            if (order > 0) {
                coeff_bound *= x / order;
                if (coeff_bound < 1e-17) break;
                for (int k = 0; k < kNs; ++k) C[k] *= static_cast<double>(subcarrier_offset(k));
                for (int j = 0; j < count; ++j) weight[j] *= cplx(0, -kTwoPi * p.beta_s * j / kNs) / double(order);
            }
            inv.execute(C, T);
            for (int j = 0; j < count; ++j) acc[j] += weight[j] * T[j % kNs];
            if (p.beta_s == 0) break;
        }
        for (long long n = first; n < last; ++n) {
            const int j = static_cast<int>(n - lo);
            const double v = v0 + (1 - p.beta_s) * j;
            out[n] = acc[j] * (norm * support_function(v));
        }
    }
    const double rate = p.beta_c * p.center_hz * kTs;
    for (std::size_t n = 0; n < out_len; ++n) {
        if (out[n] == cplx(0)) continue;
        const double cycles = wrap_cycles(-rate * static_cast<double>(n));
        out[n] *= p.scale * std::polar(1.0, kTwoPi * cycles + p.phase);
    }
    return out;
}

std::vector<cplx> apply_channel(std::span<const cplx> frame, const ClockModel& clock, const ChannelParams& channel) {
    clock.validate();
    channel.validate();
    const auto imp = summarize(clock, channel);
    const auto spectra = slot_spectra(frame);
    const double len = static_cast<double>(frame.size());
    const auto out_len = frame.size() +
                         static_cast<std::size_t>(std::ceil(std::max(imp.delay_samples, 0.0) + std::abs(imp.beta_s) * len - 1e-9));
    WarpParams wp;
    wp.beta_s = imp.beta_s;
    wp.beta_c = imp.beta_c;
    wp.delay = imp.delay_samples;
    wp.phase = imp.phase;
    wp.center_hz = channel.center_hz;
    wp.scale = std::sqrt(channel.gain);
    wp.H = channel.H;
    auto out = render_warped(spectra, out_len, wp);
    if (channel.snr_db) {
        double power = 0;
        for (auto v : out) power += std::norm(v);
        power /= len;
        Rng rng(channel.noise_seed);
        add_awgn(out, power / std::pow(10.0, *channel.snr_db / 10), rng);
    }
    return out;
}

double nominal_frame_power() {
    double w = 0;
    for (int v = 0; v < kSymLen; ++v) w += support_function(v) * support_function(v);
    return w / kSymLen * static_cast<double>(default_grid().Kl.size()) / kNs;
}

void add_awgn(std::span<cplx> samples, double noise_power, Rng& rng) {
    if (!(noise_power >= 0)) throw std::domain_error("noise power must be nonnegative");
    std::normal_distribution<double> n(0, std::sqrt(noise_power / 2));
    for (auto& s : samples) s += cplx(n(rng), n(rng));
}

CaptureStream synth_capture(std::span<const FrameEmission> frames, double duration_s, std::optional<double> snr_db,
                            double center_hz, std::uint64_t seed) {
    if (!(duration_s > 0)) throw std::domain_error("capture duration must be positive");
    CaptureStream cs;
    cs.center_hz = center_hz;
    cs.samples.assign(static_cast<std::size_t>(std::llround(duration_s * kFs)), 0);
    double energy = 0;
    std::size_t occupied = 0;
    std::vector<std::pair<long long, long long>> spans;
    for (const auto& f : frames) {
        const long long start = std::llround(f.start_s * kFs);
        if (start < 0 || start >= static_cast<long long>(cs.samples.size()))
            throw std::domain_error("frame start outside capture");
        auto ch = f.channel;
        ch.snr_db.reset();
        ch.center_hz = center_hz;
        const auto y = apply_channel(f.samples, f.clock, ch);
        const long long end = start + static_cast<long long>(y.size());
        for (auto [a, b] : spans)
            if (start < b && a < end) throw std::domain_error("overlapping frames in capture");
        spans.emplace_back(start, end);
        for (std::size_t n = 0; n < y.size() && start + static_cast<long long>(n) < static_cast<long long>(cs.samples.size()); ++n)
            cs.samples[start + n] += y[n];
        for (auto v : y) energy += std::norm(v);
        occupied += f.samples.size();
    }
    if (snr_db) {
        const double ref = occupied ? energy / static_cast<double>(occupied) : nominal_frame_power();
        Rng rng(seed);
        add_awgn(cs.samples, ref / std::pow(10.0, *snr_db / 10), rng);
    }
    return cs;
}

void write_iq(const std::string& path, std::span<const cplx> samples) {
    static_assert(std::endian::native == std::endian::little, "IQ writer assumes a little-endian host");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    std::vector<float> buf;
    constexpr std::size_t chunk = 1 << 16;
    for (std::size_t a = 0; a < samples.size(); a += chunk) {
        const std::size_t b = std::min(samples.size(), a + chunk);
        buf.resize(2 * (b - a));
        for (std::size_t n = a; n < b; ++n) {
            buf[2 * (n - a)] = static_cast<float>(samples[n].real());
            buf[2 * (n - a) + 1] = static_cast<float>(samples[n].imag());
        }
        out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
    if (!out) throw IoError("write failed: " + path);
}

std::vector<cplx> read_iq(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw IoError("cannot open " + path);
    const auto bytes = static_cast<std::size_t>(in.tellg());
    if (bytes % 8 != 0)
        throw ParseError(path + ": truncated sample at byte offset " + std::to_string(bytes - bytes % 8));
    in.seekg(0);
    std::vector<float> buf(bytes / 4);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes));
    if (!in) throw IoError(path + ": read failed");
    std::vector<cplx> out(bytes / 8);
    for (std::size_t n = 0; n < out.size(); ++n) {
        out[n] = {buf[2 * n], buf[2 * n + 1]};
        if (!std::isfinite(out[n].real()) || !std::isfinite(out[n].imag()))
            throw ParseError(path + ": non-finite sample at byte offset " + std::to_string(8 * n));
    }
    if (out.empty()) throw ParseError(path + ": empty capture");
    return out;
}

void write_meta(const std::string& path, const CaptureStream& stream) {
    std::ostringstream ss;
    ss.precision(17);
    ss << "sample_rate_hz=" << stream.sample_rate << "\n"
       << "center_freq_hz=" << stream.center_hz << "\n"
       << "epoch=" << stream.epoch << "\n";
    write_text_file(path, ss.str());
}

CaptureStream read_meta(const std::string& path) {
    CaptureStream cs;
    bool have_rate = false, have_fc = false;
    for (const auto& kv : parse_key_values(read_text_file(path))) {
        const std::string where = path + " line " + std::to_string(kv.line);
        if (kv.key == "sample_rate_hz") {
            cs.sample_rate = parse_double(kv.value, where);
            have_rate = true;
        } else if (kv.key == "center_freq_hz") {
            cs.center_hz = parse_double(kv.value, where);
            have_fc = true;
        } else if (kv.key == "epoch") {
            cs.epoch = parse_double(kv.value, where);
        } else {
            throw ParseError(where + ": unknown key '" + kv.key + "'");
        }
    }
    if (!have_rate || !have_fc) throw ParseError(path + ": sample_rate_hz and center_freq_hz are required");
    if (cs.sample_rate != kFs) throw ParseError(path + ": sample rate must be 240e6");
    return cs;
}

}  // namespace starlink
