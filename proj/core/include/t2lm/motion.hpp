#pragma once

#include <string>
#include <vector>

namespace t2lm {

// A pose sequence: T frames of d stacked 3-d joint positions, row-major.
struct Motion {
    int frames = 0;   // T
    int dim = 0;      // d = 3 * joints
    int fps = 20;
    std::vector<float> values;  // frames * dim

    float& at(int t, int c) { return values[static_cast<std::size_t>(t) * dim + c]; }
    const float& at(int t, int c) const {
        return values[static_cast<std::size_t>(t) * dim + c];
    }
    const float* row(int t) const { return &values[static_cast<std::size_t>(t) * dim]; }

    static Motion empty(int frames, int dim, int fps = 20);
};

// Checks finiteness and shape consistency; throws ValueError on violation.
void validate(const Motion& m);

// Binary container: magic "MOT1", u32 T, u32 d, then T*d little-endian f32.
void write_mot(const std::string& path, const Motion& m);
Motion read_mot(const std::string& path, int fps = 20);

}  // namespace t2lm
