#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "starlink/frame_model.hpp"

namespace starlink {

inline constexpr int kPilotHexDigits = 150;

// Unsigned integer of arbitrary width, enough for 600-bit pilot constants.
class BigUint {
public:
    BigUint() = default;
    static BigUint from_hex(std::string_view hex);
    BigUint shifted_right(unsigned bits) const;
    std::uint32_t low_bits(unsigned count) const;
    bool is_zero() const;
    std::size_t bit_width() const;

private:
    std::vector<std::uint32_t> limbs_;  // little-endian
};

int pilot_digit(const BigUint& q, int i);
cplx pilot_value(int digit);

struct PilotMatrix {
    // rows follow Kp order, columns follow I2 order
    std::array<std::array<cplx, 300>, 16> values;
    cplx at(int i, int k) const;
};

class PilotCodebook {
public:
    static PilotCodebook load(const std::string& path);
    static PilotCodebook parse(std::string_view text);
    static const PilotCodebook& builtin();

    const BigUint& q(int k) const;
    const std::string& hex(int k) const;
    cplx pilot_symbol(int i, int k) const;
    PilotMatrix pilot_matrix() const;

private:
    std::map<int, std::string> hex_;
    std::map<int, BigUint> q_;
};

std::string default_pilot_file();

}  // namespace starlink
