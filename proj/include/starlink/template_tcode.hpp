#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "starlink/demod.hpp"

namespace starlink {

inline constexpr int kTcodeLength = 60;
inline constexpr int kTcodeShift = 16;
inline constexpr int kTcodeRefSymbol = 2;  // symbol at which the tiling phase is zero
inline constexpr int kTemplateColumns = kNsf - 2;
inline constexpr int kTemplateRanks = 1004;

// |I_Qm| / |I2|
double qpsk_ratio(const DecodedFrame& frame);

struct PairCorrelation {
    cplx R;
    double rho = 0;  // |I_Qmn| / |I2|
};
PairCorrelation pairwise_correlation(const DecodedFrame& m, const DecodedFrame& n);

// Element-wise mode over pure-QPSK frames; entries are QPSK point indices (1, j, -1, -j).
class ReferenceTemplate {
public:
    ReferenceTemplate();

    int point(int i, int rank) const { return point_[cell(i, rank)]; }
    cplx value(int i, int rank) const;
    const std::array<int, 4>& tally(int i, int rank) const { return tally_[cell(i, rank)]; }
    bool tied(int i, int rank) const { return tie_[cell(i, rank)] != 0; }
    int tie_count() const;
    int frame_count() const { return frames_; }

    void set(int i, int rank, int point_index);

private:
    friend ReferenceTemplate build_reference_template(std::span<const DecodedFrame> frames);
    friend ReferenceTemplate parse_template(std::string_view text);
    static std::size_t cell(int i, int rank);

    std::vector<std::uint8_t> point_;
    std::vector<std::array<int, 4>> tally_;
    std::vector<std::uint8_t> tie_;
    int frames_ = 0;
};

ReferenceTemplate build_reference_template(std::span<const DecodedFrame> frames);

class DeviationMatrix {
public:
    static constexpr std::int8_t kMasked = 0;
    static constexpr std::int8_t kNonBpsk = 2;

    int m = 0;

    DeviationMatrix();

    std::int8_t at(int i, int rank) const { return cells_[cell(i, rank)]; }
    void set(int i, int rank, std::int8_t v);
    // Marks column i as QPSK; its cells start at +1.
    void add_column(int i);
    const std::vector<int>& columns() const { return columns_; }  // I_Qm, ascending
    int flagged() const;

private:
    static std::size_t cell(int i, int rank);
    std::vector<std::int8_t> cells_;
    std::vector<int> columns_;
};

DeviationMatrix deviation(const DecodedFrame& frame, const ReferenceTemplate& tmpl);

struct TCode {
    std::array<std::int8_t, kTcodeLength> code{};
    int phase = 0;  // code offset at the first T-code column
    double agreement = 0;
};

// Position of rank r of symbol i in the code.
int tcode_position(int i, int rank);

// Raises std::domain_error when the columns after i_hm cover fewer than 60 code positions.
TCode extract_tcode(const DeviationMatrix& D, int i_hm);

// Tiles code onto the given columns of a fresh matrix.
DeviationMatrix synthesize_tcode_region(const TCode& code, std::span<const int> columns);

struct HeaderConfig {
    double threshold = 0.95;
    int min_columns = 1;
};

struct HeaderBoundary {
    std::optional<int> i_hm;  // empty: no T-code region
    double agreement = 0;
    int tcode_columns = 0;
};

HeaderBoundary detect_header_boundary(const DeviationMatrix& D, const HeaderConfig& cfg = {});

std::string format_template(const ReferenceTemplate& t);
ReferenceTemplate parse_template(std::string_view text);
struct TCodeRecord {
    int m = 0;
    HeaderBoundary boundary;
    std::optional<TCode> code;  // absent when no T-code region was found
};

std::string format_tcodes(std::span<const TCodeRecord> records);
std::vector<TCodeRecord> parse_tcodes(std::string_view text);

}  // namespace starlink
