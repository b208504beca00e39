#pragma once

#include <functional>
#include <vector>

#include "autodiff/tensor.hpp"

namespace morphsdf::ad {

class Tape;

// Gradient accumulation view handed to backward closures. grad(i) returns the
// buffer of the i-th parent, or an empty span when the parent is a constant
// (gradient discarded).
class BackCtx {
  public:
    std::span<const float> upstream() const { return up_; }
    std::span<float> grad(int parent) const;

  private:
    friend class Tape;
    std::span<const float> up_;
    Tape* tape_ = nullptr;
    const std::vector<int>* parents_ = nullptr;
};

using BackwardFn = std::function<void(const BackCtx&)>;

// Gradients of one backward pass, keyed by tape node. Leaves that the loss
// never touched report zeros.
class Gradients {
  public:
    Tensor at(const Tensor& t) const;
    bool nonzero(const Tensor& t) const;

  private:
    friend class Tape;
    std::vector<std::vector<float>> buffers_;
    std::vector<std::vector<int>> shapes_;
};

// Reverse-mode tape. Nodes are appended in topological order (parents first).
// One tape per worker; reset between steps. backward() may be called once per
// recording.
class Tape {
  public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Registers value as a differentiable leaf. Shares storage.
    Tensor leaf(const Tensor& value);

    // Records an op. Called by the op library; parents must be constants or
    // tensors on this tape.
    Tensor record(std::vector<int> out_shape, std::vector<float> out_data,
                  std::initializer_list<const Tensor*> parents, BackwardFn backward);

    Gradients backward(const Tensor& loss);
    void reset();

    size_t num_nodes() const { return nodes_.size(); }

  private:
    friend class BackCtx;
    struct Node {
        std::vector<int> parents;  // node ids; -1 for constant inputs
        std::vector<int> shape;
        BackwardFn backward;       // null for leaves
    };
    std::vector<Node> nodes_;
    std::vector<std::vector<float>> grads_;
    std::vector<Storage> values_;  // keeps node outputs alive for the closures
    bool consumed_ = false;
};

// While any guard is alive on this thread, ops ignore tape bindings and
// produce constants. Used for inference-only evaluation of bound models
// (ray marching, detached surface normals) where recording would be wrong
// or wasteful. Nests.
class PauseRecording {
  public:
    PauseRecording();
    ~PauseRecording();
    PauseRecording(const PauseRecording&) = delete;
    PauseRecording& operator=(const PauseRecording&) = delete;
};

bool recording_paused();

}  // namespace morphsdf::ad
