#pragma once

#include "handsplat/types.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace handsplat {

template <typename T>
struct MlpGrads;

// Recorded primal values of one batched forward pass.
template <typename T>
struct MlpTape {
    std::vector<MatX<T>> activations;  // input, then each hidden post-ReLU
    MatX<T> head;                      // raw linear head before the gate
    bool recorded = false;
};

// Fully connected network with ReLU hidden layers, a linear head and a
// learnable scalar output gate: output = gate * head(input).
template <typename T>
class Mlp {
public:
    Mlp() = default;
    // widths = {input, hidden..., output}.
    Mlp(std::vector<int> widths, std::uint64_t seed, T gate_init = T(0));

    int input_width() const { return widths_.front(); }
    int output_width() const { return widths_.back(); }
    const std::vector<int>& widths() const { return widths_; }
    std::size_t layer_count() const { return weights_.size(); }
    std::size_t parameter_count() const;
    static std::size_t parameter_count(const std::vector<int>& widths);

    // Batched forward, one sample per row.
    MatX<T> forward(const MatX<T>& input, MlpTape<T>* tape = nullptr) const;
    VecX<T> forward(const VecX<T>& input) const;

    // Accumulates parameter gradients into `grads` and returns the input
    // cotangent. The tape must come from forward() on this network.
    MatX<T> backward(const MlpTape<T>& tape, const MatX<T>& output_cotangent, MlpGrads<T>& grads) const;

    MatX<T>& weight(std::size_t layer) { return weights_[layer]; }  // in x out
    const MatX<T>& weight(std::size_t layer) const { return weights_[layer]; }
    RowVecX<T>& bias(std::size_t layer) { return biases_[layer]; }
    const RowVecX<T>& bias(std::size_t layer) const { return biases_[layer]; }
    T& gate() { return gate_; }
    T gate() const { return gate_; }

    // Named views over every parameter, stable order: w0, b0, w1, b1, ..., gate.
    std::vector<std::pair<std::string, std::span<T>>> parameters();
    std::vector<std::pair<std::string, std::span<const T>>> parameters() const;

    template <typename U>
    Mlp<U> cast() const;

private:
    template <typename U>
    friend class Mlp;

    std::vector<int> widths_;
    std::vector<MatX<T>> weights_;
    std::vector<RowVecX<T>> biases_;
    T gate_ = T(0);
};

template <typename T>
struct MlpGrads {
    std::vector<MatX<T>> weights;
    std::vector<RowVecX<T>> biases;
    T gate = T(0);

    explicit MlpGrads(const Mlp<T>& net);
    MlpGrads() = default;
    void zero();
    std::vector<std::span<T>> spans();
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-15;
};

template <typename T>
struct AdamState {
    std::vector<T> m;
    std::vector<T> v;
    std::int64_t step = 0;
    std::int64_t skipped = 0;

    void resize(std::size_t n);
    // Keeps moments of rows listed in `source` (row width `width`); rows with
    // source -1 start from zero.
    void remap_rows(const std::vector<std::int64_t>& source, std::size_t width);
};

// One bias-corrected Adam update. A non-finite gradient skips the update
// entirely and increments state.skipped; returns whether params changed.
template <typename T>
bool adam_step(std::span<T> params, std::span<const T> grads, AdamState<T>& state, const AdamConfig& config);

template <typename T>
template <typename U>
Mlp<U> Mlp<T>::cast() const {
    Mlp<U> out;
    out.widths_ = widths_;
    for (const auto& w : weights_) out.weights_.push_back(w.template cast<U>());
    for (const auto& b : biases_) out.biases_.push_back(b.template cast<U>());
    out.gate_ = static_cast<U>(gate_);
    return out;
}

}  // namespace handsplat
