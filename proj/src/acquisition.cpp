#include "starlink/acquisition.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "starlink/fft.hpp"
#include "starlink/text_io.hpp"
#include "starlink/waveform_synth.hpp"

namespace starlink {

namespace {

constexpr double kTwoPi = 2 * std::numbers::pi;

void check_beta(double beta) {
    if (!(std::abs(beta) <= kMaxAcquisitionBeta)) throw std::domain_error("Doppler hypothesis outside +/-25e-6");
}

// Overlap-save correlation against replicas of bounded length; stream block spectra are shared.
class Correlator {
public:
    Correlator(std::span<const cplx> stream, long long lag_begin, std::size_t lag_count, std::size_t max_replica,
               int fft_size)
        : n_(static_cast<std::size_t>(fft_size)), lag_begin_(lag_begin), lag_count_(lag_count), fwd_(n_, FftDirection::Forward),
          inv_(n_, FftDirection::Inverse) {
        if (max_replica >= n_) throw std::domain_error("FFT size must exceed the replica length");
        step_ = n_ - max_replica + 1;
        for (std::size_t start = 0; start < lag_count; start += step_) {
            std::vector<cplx> block(n_);
            for (std::size_t j = 0; j < n_; ++j) {
                const long long idx = lag_begin + static_cast<long long>(start + j);
                if (idx < static_cast<long long>(stream.size())) block[j] = stream[static_cast<std::size_t>(idx)];
            }
            fwd_.execute(block);
            blocks_.push_back(std::move(block));
        }
    }

    template <class F>
    void run(std::span<const cplx> replica, F&& on_lag) {
        std::vector<cplx> rf(n_);
        std::copy(replica.begin(), replica.end(), rf.begin());
        fwd_.execute(rf);
        for (auto& v : rf) v = std::conj(v) / static_cast<double>(n_);
        std::vector<cplx> work(n_);
        for (std::size_t b = 0; b < blocks_.size(); ++b) {
            for (std::size_t j = 0; j < n_; ++j) work[j] = blocks_[b][j] * rf[j];
            inv_.execute(work);
            const std::size_t start = b * step_;
            const std::size_t count = std::min(step_, lag_count_ - start);
            for (std::size_t j = 0; j < count; ++j) on_lag(start + j, work[j]);
        }
    }

private:
    std::size_t n_;
    long long lag_begin_;
    std::size_t lag_count_;
    std::size_t step_ = 0;
    Fft fwd_, inv_;
    std::vector<std::vector<cplx>> blocks_;
};

struct Scan {
    std::vector<AcquisitionResult> detections;
    AcquisitionResult strongest;
};

double replica_energy(std::span<const cplx> r) {
    double e = 0;
    for (auto v : r) e += std::norm(v);
    return e;
}

Scan scan(std::span<const cplx> stream, std::span<const cplx> pss, std::span<const cplx> sss,
          const AcquisitionConfig& cfg) {
    if (!(cfg.pfa > 0 && cfg.pfa < 1)) throw std::domain_error("false-alarm probability must be in (0, 1)");
    const auto betas = cfg.grid.values();
    std::size_t max_len = 0;
    for (double b : betas) max_len = std::max(max_len, replica_length(b));
    if (stream.size() < max_len) throw std::domain_error("stream shorter than the replica");
    const std::size_t lags = stream.size() - max_len + 1;
    if (betas.size() > 65535) throw std::domain_error("Doppler grid too large");

    Correlator corr(stream, 0, lags, max_len, cfg.fft_size);
    std::vector<float> best(lags, -1.0f);
    std::vector<std::uint16_t> which(lags, 0);
    std::vector<float> pool;
    constexpr std::size_t kPoolStride = 61;
    std::vector<double> energies;
    for (std::size_t bi = 0; bi < betas.size(); ++bi) {
        const auto rep = build_replica(pss, sss, betas[bi], cfg.center_hz);
        energies.push_back(replica_energy(rep));
        corr.run(rep, [&](std::size_t lag, cplx r) {
            const float p = static_cast<float>(std::norm(r));
            if (p > best[lag]) {
                best[lag] = p;
                which[lag] = static_cast<std::uint16_t>(bi);
            }
            if ((lag + bi) % kPoolStride == 0) pool.push_back(p);
        });
    }
    auto mid = pool.begin() + static_cast<std::ptrdiff_t>(pool.size() / 2);
    std::nth_element(pool.begin(), mid, pool.end());
    const double median = pool.empty() ? 0.0 : *mid;
    const double t2 = median * std::log(1 / cfg.pfa) / std::numbers::ln2;

    auto make = [&](std::size_t lag) {
        AcquisitionResult r;
        r.n_hat = static_cast<long long>(lag);
        r.beta_hat = betas[which[lag]];
        r.peak = std::sqrt(static_cast<double>(best[lag]));
        r.threshold = std::sqrt(t2);
        r.noise_floor = median;
        r.accepted = best[lag] >= t2 && t2 > 0;
        // signal share of the received power over the replica span, from the matched-filter amplitude
        const std::size_t m = replica_length(r.beta_hat);
        double rx = 0;
        for (std::size_t n = 0; n < m; ++n) rx += std::norm(stream[lag + n]);
        // sinc model of the peak between integer lags: neighbour ratio r gives the offset r / (1 + r)
        double nb = 0;
        if (lag > 0) nb = std::max(nb, static_cast<double>(best[lag - 1]));
        if (lag + 1 < best.size()) nb = std::max(nb, static_cast<double>(best[lag + 1]));
        const double ratio = std::sqrt(std::min(nb / best[lag], 1.0));
        const double off = ratio / (1 + ratio);
        const double sinc = off > 0 ? std::sin(std::numbers::pi * off) / (std::numbers::pi * off) : 1.0;
        const double sig = best[lag] / (sinc * sinc) / energies[which[lag]];
        if (rx > sig) r.snr_pre_est = 10 * std::log10(sig / (rx - sig));
        else r.snr_pre_est = std::numeric_limits<double>::infinity();
        return r;
    };

    Scan out;
    const auto top = static_cast<std::size_t>(std::max_element(best.begin(), best.end()) - best.begin());
    out.strongest = make(top);
    std::vector<std::size_t> cand;
    for (std::size_t l = 0; l < lags; ++l)
        if (best[l] >= t2 && t2 > 0) cand.push_back(l);
    std::sort(cand.begin(), cand.end(), [&](std::size_t a, std::size_t b) {
        return best[a] != best[b] ? best[a] > best[b] : a < b;
    });
    // frames never overlap; allow for the largest Doppler compression
    const auto guard = static_cast<long long>(std::floor(kFrameLen * (1 - kMaxAcquisitionBeta)));
    std::vector<long long> taken;
    for (auto l : cand) {
        const long long ll = static_cast<long long>(l);
        bool near = false;
        for (auto t : taken)
            if (std::llabs(t - ll) < guard) {
                near = true;
                break;
            }
        if (near) continue;
        taken.push_back(ll);
        out.detections.push_back(make(l));
    }
    std::sort(out.detections.begin(), out.detections.end(),
              [](const AcquisitionResult& a, const AcquisitionResult& b) { return a.n_hat < b.n_hat; });
    return out;
}

}  // namespace

std::vector<double> DopplerGrid::values() const {
    if (!(step > 0) || !(min <= max)) throw std::domain_error("invalid Doppler grid");
    check_beta(min);
    check_beta(max);
    std::vector<double> out;
    const auto lo = static_cast<long long>(std::ceil(min / step - 1e-9));
    const auto hi = static_cast<long long>(std::floor(max / step + 1e-9));
    for (long long n = lo; n <= hi; ++n) out.push_back(static_cast<double>(n) * step);
    if (out.empty()) throw std::domain_error("Doppler grid has no points");
    return out;
}

std::size_t replica_length(double beta) {
    check_beta(beta);
    return static_cast<std::size_t>(std::ceil(2.0 * kSymLen / (1 - beta) - 1e-9));
}

std::vector<cplx> build_replica(std::span<const cplx> pss, std::span<const cplx> sss, double beta, double center_hz) {
    if (pss.size() != static_cast<std::size_t>(kSymLen) || sss.size() != static_cast<std::size_t>(kSymLen))
        throw std::domain_error("PSS and SSS must each be one 1056-sample slot");
    const auto len = replica_length(beta);
    std::vector<cplx> both(pss.begin(), pss.end());
    both.insert(both.end(), sss.begin(), sss.end());
    WarpParams p;
    p.beta_s = beta;
    p.beta_c = beta;
    p.center_hz = center_hz;
    return render_warped(slot_spectra(both), len, p);
}

AmbiguitySurface ambiguity_surface(std::span<const cplx> stream, long long lag_begin, std::size_t lag_count,
                                   std::span<const double> betas, std::span<const cplx> pss,
                                   std::span<const cplx> sss, const AcquisitionConfig& cfg) {
    if (lag_begin < 0) throw std::domain_error("negative lag");
    std::size_t max_len = 0;
    for (double b : betas) max_len = std::max(max_len, replica_length(b));
    if (static_cast<std::size_t>(lag_begin) + lag_count + max_len - 1 > stream.size())
        throw std::domain_error("stream too short for the requested lags");
    AmbiguitySurface s;
    s.lag_begin = lag_begin;
    s.betas.assign(betas.begin(), betas.end());
    Correlator corr(stream, lag_begin, lag_count, max_len, cfg.fft_size);
    for (double b : betas) {
        std::vector<cplx> row(lag_count);
        corr.run(build_replica(pss, sss, b, cfg.center_hz), [&](std::size_t lag, cplx r) { row[lag] = r; });
        s.R.push_back(std::move(row));
    }
    return s;
}

std::vector<AcquisitionResult> acquire_all(std::span<const cplx> stream, std::span<const cplx> pss,
                                           std::span<const cplx> sss, const AcquisitionConfig& cfg) {
    return scan(stream, pss, sss, cfg).detections;
}

AcquisitionResult acquire(std::span<const cplx> stream, std::span<const cplx> pss, std::span<const cplx> sss,
                          const AcquisitionConfig& cfg) {
    return scan(stream, pss, sss, cfg).strongest;
}

std::vector<cplx> coarse_compensate(std::span<const cplx> stream, long long n_hat, double beta_hat, double center_hz) {
    check_beta(beta_hat);
    if (n_hat < 0) throw std::domain_error("negative frame lag");
    const double stretch = 1 / (1 - beta_hat);
    const double rate = beta_hat * center_hz * kTs;
    auto derotated = [&](long long m) {
        const double cycles = rate * static_cast<double>(m - n_hat);
        return stream[static_cast<std::size_t>(m)] * std::polar(1.0, kTwoPi * (cycles - std::round(cycles)));
    };
    std::vector<cplx> out(kFrameLen);
    Fft fwd(kNs, FftDirection::Forward), inv(kNs, FftDirection::Inverse);
    std::vector<cplx> w(kNs);
    constexpr int start = kNg / 2;
    for (int s = 0; s < kNsf; ++s) {
        const double src = static_cast<double>(n_hat) + s * kSymLen * stretch;
        const auto base = static_cast<long long>(std::floor(src));
        const double frac = src - static_cast<double>(base);
        if (base + kSymLen >= static_cast<long long>(stream.size()))
            throw std::runtime_error("frame extends past the end of the stream");
        const std::size_t o = static_cast<std::size_t>(s) * kSymLen;
        for (int v = 0; v < kSymLen; ++v) out[o + v] = derotated(base + v);
        if (frac == 0) continue;
        for (int j = 0; j < kNs; ++j) w[j] = out[o + start + j];
        fwd.execute(w);
        for (int k = 0; k < kNs; ++k) w[k] *= std::polar(1.0 / kNs, kTwoPi * subcarrier_offset(k) * frac / kNs);
        inv.execute(w);
        for (int j = 0; j < kNs; ++j) out[o + start + j] = w[j];
    }
    return out;
}

namespace {
constexpr std::string_view kDetectMagic = "STARLINK-ACQ";
constexpr int kDetectVersion = 1;
}  // namespace

std::string format_detections(std::span<const AcquisitionResult> results) {
    std::ostringstream out;
    out << kDetectMagic << " " << kDetectVersion << "\n";
    for (const auto& r : results)
        out << "detection n_hat=" << r.n_hat << " beta_hat=" << format_double(r.beta_hat)
            << " peak=" << format_double(r.peak) << " threshold=" << format_double(r.threshold)
            << " noise_floor=" << format_double(r.noise_floor) << " accepted=" << (r.accepted ? 1 : 0)
            << " snr_db=" << format_double(r.snr_pre_est) << "\n";
    return out.str();
}

std::vector<AcquisitionResult> parse_detections(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string line;
    int line_no = 0;
    const auto fail = [&](const std::string& msg) { throw ParseError("line " + std::to_string(line_no) + ": " + msg); };
    if (!std::getline(in, line)) throw ParseError("empty detection file");
    ++line_no;
    {
        std::istringstream h(line);
        std::string magic;
        int version = 0;
        h >> magic >> version;
        if (magic != kDetectMagic) fail("missing detection header");
        if (version != kDetectVersion) fail("unsupported detection version " + std::to_string(version));
    }
    std::vector<AcquisitionResult> out;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        std::istringstream h(line);
        std::string word;
        h >> word;
        if (word != "detection") fail("expected 'detection'");
        AcquisitionResult r;
        while (h >> word) {
            const auto eq = word.find('=');
            if (eq == std::string::npos) fail("expected key=value");
            const auto key = word.substr(0, eq), val = word.substr(eq + 1);
            const std::string what = "line " + std::to_string(line_no) + " " + key;
            if (key == "n_hat") r.n_hat = parse_int(val, what);
            else if (key == "beta_hat") r.beta_hat = parse_double(val, what);
            else if (key == "peak") r.peak = parse_double(val, what);
            else if (key == "threshold") r.threshold = parse_double(val, what);
            else if (key == "noise_floor") r.noise_floor = parse_double(val, what);
            else if (key == "accepted") r.accepted = parse_int(val, what) != 0;
            else if (key == "snr_db") r.snr_pre_est = parse_double(val, what);
            else fail("unknown detection field '" + key + "'");
        }
        out.push_back(r);
    }
    return out;
}

}  // namespace starlink
