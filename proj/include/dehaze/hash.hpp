#pragma once

#include <cstdint>
#include <span>
#include <string_view>

namespace dehaze {

/// 64-bit FNV-1a. Stable across platforms, so it is safe for seeds and
/// content fingerprints that end up on disk.
class Fnv1a {
public:
    Fnv1a& bytes(const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            state_ ^= p[i];
            state_ *= 0x100000001b3ULL;
        }
        return *this;
    }
    Fnv1a& text(std::string_view s) { return bytes(s.data(), s.size()); }
    template <typename T>
    Fnv1a& values(std::span<const T> v) { return bytes(v.data(), v.size_bytes()); }
    std::uint64_t digest() const { return state_; }

private:
    std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::uint64_t fnv1a(std::string_view s) { return Fnv1a().text(s).digest(); }

} // namespace dehaze
