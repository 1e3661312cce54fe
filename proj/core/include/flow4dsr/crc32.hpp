#pragma once

#include <cstddef>
#include <cstdint>

namespace flow4dsr {

/// Incremental CRC-32 (IEEE 802.3, reflected, init/xorout 0xFFFFFFFF).
class Crc32 {
public:
    void update(const void* data, std::size_t len) {
        const auto* p = static_cast<const unsigned char*>(data);
        std::uint32_t c = state_;
        for (std::size_t i = 0; i < len; ++i)
            c = table()[(c ^ p[i]) & 0xFF] ^ (c >> 8);
        state_ = c;
    }

    std::uint32_t value() const { return state_ ^ 0xFFFFFFFFu; }
    void reset() { state_ = 0xFFFFFFFFu; }

    static std::uint32_t of(const void* data, std::size_t len) {
        Crc32 c;
        c.update(data, len);
        return c.value();
    }

private:
    static const std::uint32_t* table() {
        static const auto t = [] {
            static std::uint32_t tab[256];
            for (std::uint32_t i = 0; i < 256; ++i) {
                std::uint32_t c = i;
                for (int k = 0; k < 8; ++k)
                    c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
                tab[i] = c;
            }
            return tab;
        }();
        return t;
    }

    std::uint32_t state_ = 0xFFFFFFFFu;
};

} // namespace flow4dsr
