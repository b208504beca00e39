#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace morphsdf::ad {

class Tape;

using Storage = std::shared_ptr<std::vector<float>>;

// Dense row-major float32 tensor. A Tensor either lives on a Tape (node >= 0)
// or is a constant/parameter snapshot. Storage is shared, so copies are cheap
// and registering a parameter as a tape leaf does not copy its data.
class Tensor {
  public:
    Tensor() = default;
    Tensor(std::vector<int> shape, std::vector<float> data);

    static Tensor zeros(std::vector<int> shape);
    static Tensor full(std::vector<int> shape, float value);
    static Tensor scalar(float value) { return Tensor({1}, {value}); }

    const std::vector<int>& shape() const { return shape_; }
    int dim(int i) const { return shape_[size_t(i)]; }
    int ndim() const { return int(shape_.size()); }
    int64_t size() const;
    bool defined() const { return data_ != nullptr; }

    // Spans do not keep the shared storage alive, so taking one from a
    // temporary is a dangling read; bind the Tensor to a name first.
    std::span<const float> data() const& { return {data_->data(), data_->size()}; }
    std::span<const float> data() const&& = delete;
    // In-place mutation is for parameters and buffers only; never mutate a
    // tensor that a live tape node references.
    std::span<float> mutable_data() & { return {data_->data(), data_->size()}; }
    std::span<float> mutable_data() && = delete;
    const Storage& storage() const { return data_; }

    float value() const;  // single-element tensors
    float at(int64_t i) const { return (*data_)[size_t(i)]; }

    bool on_tape() const { return tape_ != nullptr; }
    Tape* tape() const { return tape_; }
    int node() const { return node_; }

    // Same storage, no tape node. Constant from the tape's point of view.
    Tensor detached() const;

    std::string shape_str() const;

  private:
    friend class Tape;
    std::vector<int> shape_;
    Storage data_;
    Tape* tape_ = nullptr;
    int node_ = -1;
};

bool same_shape(const Tensor& a, const Tensor& b);
int64_t shape_numel(const std::vector<int>& shape);

}  // namespace morphsdf::ad
