#include "namex/synthetic.hpp"

#include <stdexcept>
#include <string>

#include "namex/prng.hpp"

namespace namex {

namespace {

Tensor random_tensor(const std::string& name, const std::vector<int64_t>& shape, double scale,
                     Xoshiro256pp& rng) {
    Tensor t;
    t.name = name;
    t.shape = shape;
    int64_t n = 1;
    for (int64_t s : shape) n *= s;
    t.data.reserve(size_t(n));
    for (int64_t i = 0; i < n; ++i) t.data.push_back(float(scale * rng.normal()));
    return t;
}

}  // namespace

ExpertStack make_synthetic_stack(const SyntheticSpec& spec) {
    if (spec.layers < 0 || spec.experts < 1 || spec.dim < 1)
        throw std::invalid_argument("make_synthetic_stack: invalid sizes");
    Xoshiro256pp rng(spec.seed);
    const std::vector<int64_t> shape{spec.dim};

    ExpertStack stack;
    std::vector<Expert> frozen_experts;
    for (int l = 0; l < spec.layers; ++l) {
        Layer layer;
        layer.index = l;
        layer.base.push_back(l == 0 || !spec.frozen
                                 ? random_tensor("w", shape, spec.scale, rng)
                                 : stack.layers.front().base.front());
        if (spec.frozen && l > 0) {
            layer.experts = frozen_experts;
        } else {
            for (int e = 0; e < spec.experts; ++e) {
                Expert ex;
                ex.name = "expert_" + std::to_string(e);
                ex.tensors.push_back(random_tensor("w", shape, spec.scale, rng));
                layer.experts.push_back(std::move(ex));
            }
            if (spec.frozen) frozen_experts = layer.experts;
        }
        stack.layers.push_back(std::move(layer));
    }
    return stack;
}

ExpertStack make_synthetic_mlp_stack(int layers, int experts, int64_t in_dim, int64_t hidden_dim,
                                     int64_t out_dim, double scale, uint64_t seed) {
    if (layers < 0 || experts < 1 || in_dim < 1 || hidden_dim < 1 || out_dim < 1)
        throw std::invalid_argument("make_synthetic_mlp_stack: invalid sizes");
    Xoshiro256pp rng(seed);
    ExpertStack stack;
    for (int l = 0; l < layers; ++l) {
        Layer layer;
        layer.index = l;
        layer.base.push_back(random_tensor("w1", {in_dim, hidden_dim}, scale, rng));
        layer.base.push_back(random_tensor("w2", {hidden_dim, out_dim}, scale, rng));
        for (int e = 0; e < experts; ++e) {
            Expert ex;
            ex.name = "expert_" + std::to_string(e);
            ex.tensors.push_back(random_tensor("w1", {in_dim, hidden_dim}, scale, rng));
            ex.tensors.push_back(random_tensor("w2", {hidden_dim, out_dim}, scale, rng));
            layer.experts.push_back(std::move(ex));
        }
        stack.layers.push_back(std::move(layer));
    }
    return stack;
}

}  // namespace namex
