#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "starlink/demod.hpp"
#include "starlink/template_tcode.hpp"
#include "starlink/waveform_synth.hpp"

namespace starlink {

enum class FrameContent { Random, Tcode };

struct ScenarioConfig {
    std::uint64_t seed = 1;
    int slots = 1;                        // frame slots spaced by Tf
    double occupancy = 1;                 // per-slot probability, ignored when a pattern is given
    std::vector<bool> occupancy_pattern;  // one flag per slot
    double lead_s = 1e-5;                 // capture time before slot 0
    double center_hz = 11.325e9;

    ClockModel clock;
    double beta = 0;
    double tau_los = 0;
    double gain = 1;
    double tilt_db = 0;
    std::optional<double> theta;  // none: uniform per frame
    std::optional<double> snr_db;

    FrameContent content = FrameContent::Random;
    std::vector<Modulation> modulation_plan;  // cycled over I2; empty: random label per symbol
    double tcode_fraction = 0.3;              // Tcode content: share of frames carrying a code
    int header_min = 2;                       // header columns 2..i_hm, i_hm drawn uniformly
    int header_max = 12;
    int tcode_pool = 8;
    double gap_fraction = 0.1;  // post-header columns replaced by 16QAM data

    void validate() const;
};

// Lines of key=value; unknown keys and bad values raise ParseError naming the line.
ScenarioConfig parse_scenario(std::string_view text, std::string_view source = "config");

struct FrameTruth {
    int m = 0;  // ordinal among occupied slots
    int slot = 0;
    double start_s = 0;
    ImpairmentSummary impairment;
    double theta = 0;
    FrameContent content = FrameContent::Random;
    std::optional<int> i_hm;
    std::optional<int> code_id;
    std::optional<TCode> code;
};

struct Scenario {
    double duration_s = 0;
    std::uint64_t noise_seed = 0;
    std::vector<FrameTruth> truth;
    std::vector<DecodedFrame> symbols;  // transmitted symbols, point-index form
    std::vector<FrameEmission> emissions;
};

// Template over I2 x Klnp shared by every Tcode-content frame of a seed.
ReferenceTemplate scenario_template(std::uint64_t seed);

Scenario build_scenario(const ScenarioConfig& cfg);
CaptureStream render_scenario(const ScenarioConfig& cfg, const Scenario& s);

// Converts a transmitted symbol matrix to decoded form with the given labels (one per i in I2).
DecodedFrame symbols_as_decoded(const SymbolMatrix& X, std::span<const Modulation> labels, int m);

std::string format_truth(const ScenarioConfig& cfg, const Scenario& s);
std::vector<FrameTruth> parse_truth(std::string_view text);

}  // namespace starlink
