#include "starlink/frame_model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "starlink/text_io.hpp"

namespace starlink {

int subcarrier_offset(int k) {
    if (k < 0 || k >= kNs) throw std::domain_error("subcarrier index out of range: " + std::to_string(k));
    return k <= kNs / 2 - 1 ? k : k - kNs;
}

bool FrameGrid::is_gutter(int k) const { return k == 0 || k == 1 || k == kNs - 2 || k == kNs - 1; }
bool FrameGrid::is_pilot(int k) const { return k >= 0 && k < kNs && kp_index_[k] >= 0; }
int FrameGrid::klnp_rank(int k) const { return (k >= 0 && k < kNs) ? klnp_rank_[k] : -1; }
int FrameGrid::kp_index(int k) const { return (k >= 0 && k < kNs) ? kp_index_[k] : -1; }

FrameGrid build_frame_grid(double channel_center_hz) {
    if (!(channel_center_hz >= kFcMin && channel_center_hz <= kFcMax))
        throw std::domain_error("channel center frequency outside 10.7-12.7 GHz");
    FrameGrid g;
    g.center_hz = channel_center_hz;
    g.kp_index_.assign(kNs, -1);
    g.klnp_rank_.assign(kNs, -1);
    for (int k = 488; k <= 495; ++k) g.Kp.push_back(k);
    for (int k = 528; k <= 535; ++k) g.Kp.push_back(k);
    for (std::size_t n = 0; n < g.Kp.size(); ++n) g.kp_index_[g.Kp[n]] = static_cast<int>(n);
    for (int k = 0; k < kNs; ++k) {
        g.K.push_back(k);
        if (g.is_gutter(k)) {
            g.Kg.push_back(k);
            continue;
        }
        g.Kl.push_back(k);
        if (g.kp_index_[k] < 0) {
            g.klnp_rank_[k] = static_cast<int>(g.Klnp.size());
            g.Klnp.push_back(k);
        }
    }
    for (int i = 0; i < kNsf; ++i) {
        g.I.push_back(i);
        if (i >= 1) g.I1.push_back(i);
        if (i >= 2) g.I2.push_back(i);
    }
    return g;
}

const FrameGrid& default_grid() {
    static const FrameGrid grid = build_frame_grid(11.325e9);
    return grid;
}

namespace {

Constellation normalized(Modulation label, std::vector<cplx> pts) {
    cplx mean = 0;
    for (auto p : pts) mean += p;
    mean /= static_cast<double>(pts.size());
    double power = 0;
    for (auto& p : pts) {
        p -= mean;
        power += std::norm(p);
    }
    const double s = 1.0 / std::sqrt(power / static_cast<double>(pts.size()));
    for (auto& p : pts) p *= s;
    return {label, std::move(pts)};
}

Constellation make(Modulation label) {
    using namespace std::complex_literals;
    switch (label) {
        case Modulation::QPSK:
            return {label, {1.0, 1i, -1.0, -1i}};
        case Modulation::QAM4: {
            const cplx r = std::polar(1.0, std::numbers::pi / 4);
            return {label, {r, r * 1i, -r, -r * 1i}};
        }
        case Modulation::QAM16: {
            std::vector<cplx> pts;
            for (int q = -3; q <= 3; q += 2)
                for (int p = -3; p <= 3; p += 2) pts.emplace_back(p, q);
            return normalized(label, pts);
        }
        case Modulation::QAM32: {
            std::vector<cplx> pts;
            for (int q = -5; q <= 5; q += 2)
                for (int p = -5; p <= 5; p += 2)
                    if (std::abs(p) + std::abs(q) < 10) pts.emplace_back(p, q);
            return normalized(label, pts);
        }
    }
    throw std::domain_error("unknown modulation");
}

}  // namespace

int Constellation::nearest(cplx y) const {
    int best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t n = 0; n < points.size(); ++n) {
        const double d = std::norm(y - points[n]);
        if (d < bd) {
            bd = d;
            best = static_cast<int>(n);
        }
    }
    return best;
}

double Constellation::min_distance() const {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < points.size(); ++a)
        for (std::size_t b = a + 1; b < points.size(); ++b) best = std::min(best, std::abs(points[a] - points[b]));
    return best;
}

const Constellation& constellation(Modulation label) {
    static const Constellation table[] = {make(Modulation::QPSK), make(Modulation::QAM4),
                                          make(Modulation::QAM16), make(Modulation::QAM32)};
    return table[static_cast<int>(label)];
}

std::string to_string(Modulation label) {
    switch (label) {
        case Modulation::QPSK: return "QPSK";
        case Modulation::QAM4: return "4QAM";
        case Modulation::QAM16: return "16QAM";
        case Modulation::QAM32: return "32QAM";
    }
    return "?";
}

Modulation parse_modulation(std::string_view text) {
    std::string t(text);
    std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::toupper(c); });
    if (t == "QPSK") return Modulation::QPSK;
    if (t == "4QAM") return Modulation::QAM4;
    if (t == "16QAM") return Modulation::QAM16;
    if (t == "32QAM") return Modulation::QAM32;
    throw std::domain_error("unknown constellation label: " + std::string(text));
}

ChannelTable ChannelTable::load(const std::string& path) {
    return parse(read_text_file(path));
}

ChannelTable ChannelTable::parse(std::string_view text) {
    ChannelTable table;
    for (const auto& kv : parse_key_values(text)) {
        int ch = 0;
        double hz = 0;
        try {
            ch = std::stoi(kv.key);
            hz = std::stod(kv.value);
        } catch (const std::exception&) {
            throw ParseError("channel table line " + std::to_string(kv.line) + ": expected <index>=<hz>");
        }
        if (!(hz >= kFcMin && hz <= kFcMax))
            throw ParseError("channel table line " + std::to_string(kv.line) + ": frequency out of band");
        table.entries_[ch] = hz;
    }
    return table;
}

double ChannelTable::center_hz(int channel) const {
    auto it = entries_.find(channel);
    if (it == entries_.end()) throw std::out_of_range("unknown channel " + std::to_string(channel));
    return it->second;
}

}  // namespace starlink
