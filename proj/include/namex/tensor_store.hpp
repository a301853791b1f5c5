// Checkpoint container: manifest.json + weights.bin. The manifest carries
// names, shapes, dtype and byte offsets; the blob is tightly packed row-major
// f32 little-endian in manifest order, so identical stacks serialize to
// identical bytes.
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "namex/dense.hpp"

namespace namex {

struct Tensor {
    std::string name;
    std::vector<int64_t> shape;
    std::vector<float> data;

    int64_t numel() const {
        int64_t n = 1;
        for (int64_t s : shape) n *= s;
        return n;
    }
};

struct Expert {
    std::string name;
    std::vector<Tensor> tensors;
};

// Diagonal curvature per expert and tensor; entries are nonnegative and match
// the tensor's element count.
using CurvatureMap = std::map<std::string, std::map<std::string, std::vector<float>>>;

struct Layer {
    int index = 0;
    std::vector<Tensor> base;
    std::vector<Expert> experts;
    std::vector<double> routing;  // empty means absent (uniform at merge time)
    CurvatureMap curvature;

    int64_t numel() const {
        int64_t n = 0;
        for (const auto& t : base) n += t.numel();
        return n;
    }
    int64_t num_experts() const { return int64_t(experts.size()); }
};

struct ExpertStack {
    std::vector<Layer> layers;

    // Throws std::runtime_error on any structural invariant violation.
    void validate() const;
};

ExpertStack read_checkpoint(const std::filesystem::path& dir);
void write_checkpoint(const ExpertStack& stack, const std::filesystem::path& dir);

// CSV of d rows x N columns; column i becomes domain vector i.
DomainMatrix read_problem_csv(const std::filesystem::path& file);

}  // namespace namex
