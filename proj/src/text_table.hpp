#pragma once
// Internal helpers for aligned plain-text report tables.

#include <algorithm>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

namespace darb::detail {

inline std::string fixed(double v, int digits = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

inline std::string percent(double v) { return fixed(v, 2) + "%"; }

// Display width in code points (UTF-8 continuation bytes not counted).
inline std::size_t display_width(const std::string& s) {
    return static_cast<std::size_t>(
        std::count_if(s.begin(), s.end(), [](char c) { return (static_cast<unsigned char>(c) & 0xC0) != 0x80; }));
}

// Left-aligned columns separated by two spaces; first row is the header.
inline std::string format_table(const std::vector<std::vector<std::string>>& cells) {
    std::vector<std::size_t> width;
    for (const auto& line : cells) {
        if (width.size() < line.size()) width.resize(line.size(), 0);
        for (std::size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], display_width(line[i]));
    }
    std::ostringstream os;
    for (const auto& line : cells) {
        std::string text;
        for (std::size_t i = 0; i < line.size(); ++i) {
            text += line[i];
            if (i + 1 < line.size()) text += std::string(width[i] - display_width(line[i]) + 2, ' ');
        }
        os << text << '\n';
    }
    return os.str();
}

}  // namespace darb::detail
