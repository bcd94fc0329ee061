#pragma once

#include <complex>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace starlink {

using cplx = std::complex<double>;

inline constexpr int kNs = 1024;
inline constexpr int kNg = 32;
inline constexpr int kNsf = 302;
inline constexpr int kSymLen = kNs + kNg;
inline constexpr int kFrameLen = kNsf * kSymLen;
inline constexpr double kFs = 240e6;
inline constexpr double kTs = 1.0 / kFs;
inline constexpr double kF = kFs / kNs;
inline constexpr double kT = kNs / kFs;
inline constexpr double kTg = kNg / kFs;
inline constexpr double kTsym = kT + kTg;
inline constexpr double kTf = 1.0 / 750.0;
inline constexpr double kFcMin = 10.7e9;
inline constexpr double kFcMax = 12.7e9;
inline constexpr int kPilotFirstSymbol = 2;

// Signed frequency offset (in subcarrier spacings) of subcarrier k.
int subcarrier_offset(int k);

struct FrameGrid {
    double center_hz = 11.325e9;
    std::vector<int> K, Kg, Kl, Kp, Klnp;
    std::vector<int> I, I1, I2;

    bool is_gutter(int k) const;
    bool is_pilot(int k) const;
    // Position of k inside Klnp (ascending k), or -1.
    int klnp_rank(int k) const;
    int kp_index(int k) const;

private:
    friend FrameGrid build_frame_grid(double);
    std::vector<int> klnp_rank_;
    std::vector<int> kp_index_;
};

FrameGrid build_frame_grid(double channel_center_hz);

// Shared grid at the default center frequency; index sets do not depend on Fc.
const FrameGrid& default_grid();

enum class Modulation { QPSK, QAM4, QAM16, QAM32 };

struct Constellation {
    Modulation label;
    std::vector<cplx> points;

    std::size_t size() const { return points.size(); }
    int nearest(cplx y) const;
    double min_distance() const;
};

const Constellation& constellation(Modulation label);
std::string to_string(Modulation label);
Modulation parse_modulation(std::string_view text);

// Rows are OFDM symbol slots i = 0..nrows-1, columns are subcarriers k = 0..1023.
class SymbolMatrix {
public:
    SymbolMatrix() = default;
    explicit SymbolMatrix(int rows) : rows_(rows), data_(static_cast<std::size_t>(rows) * kNs) {}

    int rows() const { return rows_; }
    cplx& operator()(int i, int k) { return data_[static_cast<std::size_t>(i) * kNs + k]; }
    cplx operator()(int i, int k) const { return data_[static_cast<std::size_t>(i) * kNs + k]; }
    std::span<cplx> row(int i) { return {data_.data() + static_cast<std::size_t>(i) * kNs, kNs}; }
    std::span<const cplx> row(int i) const {
        return {data_.data() + static_cast<std::size_t>(i) * kNs, kNs};
    }

private:
    int rows_ = 0;
    std::vector<cplx> data_;
};

// Channel index -> center frequency, from "index=frequency_hz" lines.
class ChannelTable {
public:
    static ChannelTable load(const std::string& path);
    static ChannelTable parse(std::string_view text);
    double center_hz(int channel) const;
    const std::map<int, double>& entries() const { return entries_; }

private:
    std::map<int, double> entries_;
};

}  // namespace starlink
