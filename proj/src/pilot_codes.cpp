#include "starlink/pilot_codes.hpp"

#include <cctype>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "starlink/text_io.hpp"

#ifndef STARLINK_DATA_DIR
#define STARLINK_DATA_DIR "data"
#endif

namespace starlink {

BigUint BigUint::from_hex(std::string_view hex) {
    BigUint out;
    if (hex.empty()) throw ParseError("empty hex constant");
    const std::size_t n = hex.size();
    out.limbs_.assign((n + 7) / 8, 0);
    for (std::size_t pos = 0; pos < n; ++pos) {
        const char c = hex[n - 1 - pos];
        int v;
        if (c >= '0' && c <= '9') v = c - '0';
        else if (c >= 'A' && c <= 'F') v = c - 'A' + 10;
        else if (c >= 'a' && c <= 'f') v = c - 'a' + 10;
        else throw ParseError(std::string("invalid hex character '") + c + "'");
        out.limbs_[pos / 8] |= static_cast<std::uint32_t>(v) << (4 * (pos % 8));
    }
    while (!out.limbs_.empty() && out.limbs_.back() == 0) out.limbs_.pop_back();
    return out;
}

BigUint BigUint::shifted_right(unsigned bits) const {
    BigUint out;
    const std::size_t limb_shift = bits / 32;
    const unsigned bit_shift = bits % 32;
    if (limb_shift >= limbs_.size()) return out;
    out.limbs_.resize(limbs_.size() - limb_shift);
    for (std::size_t n = 0; n < out.limbs_.size(); ++n) {
        std::uint64_t lo = limbs_[n + limb_shift];
        std::uint64_t hi = n + limb_shift + 1 < limbs_.size() ? limbs_[n + limb_shift + 1] : 0;
        out.limbs_[n] = static_cast<std::uint32_t>(((hi << 32) | lo) >> bit_shift);
    }
    while (!out.limbs_.empty() && out.limbs_.back() == 0) out.limbs_.pop_back();
    return out;
}

std::uint32_t BigUint::low_bits(unsigned count) const {
    if (count > 32) throw std::domain_error("low_bits count > 32");
    if (limbs_.empty()) return 0;
    return count == 32 ? limbs_[0] : limbs_[0] & ((1u << count) - 1u);
}

bool BigUint::is_zero() const { return limbs_.empty(); }

std::size_t BigUint::bit_width() const {
    if (limbs_.empty()) return 0;
    std::size_t w = 32 * (limbs_.size() - 1);
    for (std::uint32_t top = limbs_.back(); top; top >>= 1) ++w;
    return w;
}

int pilot_digit(const BigUint& q, int i) {
    if (i < 2 || i > kNsf - 1) throw std::domain_error("pilot symbol index outside I2: " + std::to_string(i));
    return static_cast<int>(q.shifted_right(2u * static_cast<unsigned>(301 - i)).low_bits(2));
}

cplx pilot_value(int digit) {
    return std::polar(1.0, std::numbers::pi / 2 * (digit + 0.5));
}

cplx PilotMatrix::at(int i, int k) const {
    const int row = default_grid().kp_index(k);
    if (row < 0) throw std::domain_error("subcarrier not a pilot: " + std::to_string(k));
    if (i < 2 || i > kNsf - 1) throw std::domain_error("pilot symbol index outside I2");
    return values[row][i - 2];
}

PilotCodebook PilotCodebook::load(const std::string& path) {
    try {
        return parse(read_text_file(path));
    } catch (const ParseError& e) {
        throw ParseError(path + ": " + e.what());
    }
}

PilotCodebook PilotCodebook::parse(std::string_view text) {
    PilotCodebook book;
    std::istringstream in{std::string(text)};
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto body = trim(line);
        if (body.empty() || body.front() == '#') continue;
        std::istringstream fields{std::string(body)};
        std::string kstr, hex, extra;
        fields >> kstr >> hex;
        if (hex.empty() || (fields >> extra))
            throw ParseError("line " + std::to_string(line_no) + ": expected '<k> <hex>'");
        const int k = static_cast<int>(parse_int(kstr, "pilot subcarrier"));
        const std::string where = "pilot constant for k=" + std::to_string(k);
        if (!default_grid().is_pilot(k)) throw ParseError(where + ": k is not a pilot subcarrier");
        if (book.hex_.count(k)) throw ParseError(where + ": duplicate entry");
        if (hex.size() != kPilotHexDigits)
            throw ParseError(where + ": expected 150 hex digits, got " + std::to_string(hex.size()));
        for (char c : hex)
            if (!std::isxdigit(static_cast<unsigned char>(c)) || std::islower(static_cast<unsigned char>(c)))
                throw ParseError(where + ": invalid hex character '" + std::string(1, c) + "'");
        book.q_[k] = BigUint::from_hex(hex);
        book.hex_[k] = hex;
    }
    for (int k : default_grid().Kp)
        if (!book.hex_.count(k)) throw ParseError("pilot constant for k=" + std::to_string(k) + ": missing");
    return book;
}

std::string default_pilot_file() { return std::string(STARLINK_DATA_DIR) + "/edge_pilots.txt"; }

const PilotCodebook& PilotCodebook::builtin() {
    static const PilotCodebook book = load(default_pilot_file());
    return book;
}

const BigUint& PilotCodebook::q(int k) const {
    auto it = q_.find(k);
    if (it == q_.end()) throw std::domain_error("subcarrier not a pilot: " + std::to_string(k));
    return it->second;
}

const std::string& PilotCodebook::hex(int k) const {
    auto it = hex_.find(k);
    if (it == hex_.end()) throw std::domain_error("subcarrier not a pilot: " + std::to_string(k));
    return it->second;
}

cplx PilotCodebook::pilot_symbol(int i, int k) const { return pilot_value(pilot_digit(q(k), i)); }

PilotMatrix PilotCodebook::pilot_matrix() const {
    PilotMatrix pm;
    const auto& kp = default_grid().Kp;
    for (std::size_t r = 0; r < kp.size(); ++r)
        for (int i = 2; i < kNsf; ++i) pm.values[r][i - 2] = pilot_symbol(i, kp[r]);
    return pm;
}

}  // namespace starlink
