#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vbstream/matrix.hpp"

namespace vbs::io {

struct Dataset {
    Matrix x;
    std::vector<int> labels; // empty unless has_labels
    bool has_labels = false;
};

// Comma-separated decimal reals, one sample per line; when has_labels, the
// final column is a non-negative integer label. Rejects ragged rows with the
// offending line number.
Dataset load_dataset(const std::string& path, bool has_labels);

void save_dataset(const std::string& path, const Matrix& x,
                  const std::vector<int>* labels = nullptr);

std::vector<int> load_labels(const std::string& path);
void save_labels(const std::string& path, const std::vector<int>& labels);

struct GmmSample {
    Matrix x;
    std::vector<int> labels;
    Matrix centers; // k x d
};

// n points from k unit-variance Gaussians with centers at mutual distance
// >= separation (scaled simplex when k <= d, otherwise a grid), balanced
// interleaved labels, fully seeded.
GmmSample make_gmm(std::uint64_t seed, std::size_t k, std::size_t d, std::size_t n,
                   double separation);

} // namespace vbs::io
