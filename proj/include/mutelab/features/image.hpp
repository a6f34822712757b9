#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mutelab/features/mel.hpp"

namespace mutelab {

// Min-max normalized 8-bit pixels, width = frames (time left to right),
// height = mel bins (lowest band on the bottom row). A constant spectrogram has
// no range to normalize; it renders as uniform mid-gray (128).
inline std::vector<std::uint8_t> spectrogram_pixels(const MelSpectrogram& spec) {
    expects(spec.frames > 0 && spec.bins > 0 && spec.values.size() == spec.frames * spec.bins,
            "spectrogram image: invalid spectrogram");
    const auto [lo_it, hi_it] = std::minmax_element(spec.values.begin(), spec.values.end());
    const double lo = *lo_it, hi = *hi_it;
    std::vector<std::uint8_t> pixels(spec.frames * spec.bins, 128);
    if (hi > lo) {
        for (std::size_t row = 0; row < spec.bins; ++row) {
            const std::size_t bin = spec.bins - 1 - row;
            for (std::size_t t = 0; t < spec.frames; ++t) {
                const double v = (spec.at(t, bin) - lo) / (hi - lo);
                pixels[row * spec.frames + t] = static_cast<std::uint8_t>(std::lround(v * 255.0));
            }
        }
    }
    return pixels;
}

inline void write_pgm(const std::filesystem::path& path, const MelSpectrogram& spec) {
    const auto pixels = spectrogram_pixels(spec);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
    out << "P5\n" << spec.frames << ' ' << spec.bins << "\n255\n";
    out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
    if (!out) throw std::runtime_error(path.string() + ": write failed");
}

inline void write_spectrogram_csv(const std::filesystem::path& path, const MelSpectrogram& spec) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
    char buf[32];
    for (std::size_t t = 0; t < spec.frames; ++t) {
        for (std::size_t b = 0; b < spec.bins; ++b) {
            std::snprintf(buf, sizeof(buf), "%.6g", static_cast<double>(spec.at(t, b)));
            out << (b ? "," : "") << buf;
        }
        out << '\n';
    }
}

// Writes <stem>.pgm and <stem>.csv.
inline void emit_spectrogram_image(const MelSpectrogram& spec, const std::filesystem::path& stem) {
    auto pgm = stem;
    pgm += ".pgm";
    auto csv = stem;
    csv += ".csv";
    write_pgm(pgm, spec);
    write_spectrogram_csv(csv, spec);
}

}  // namespace mutelab
