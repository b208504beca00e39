#include "autodiff/tape.hpp"

#include <stdexcept>

namespace morphsdf::ad {

std::span<float> BackCtx::grad(int parent) const {
    int id = (*parents_)[size_t(parent)];
    if (id < 0) return {};
    auto& buf = tape_->grads_[size_t(id)];
    if (buf.empty()) buf.assign(size_t(shape_numel(tape_->nodes_[size_t(id)].shape)), 0.f);
    return {buf.data(), buf.size()};
}

Tensor Gradients::at(const Tensor& t) const {
    if (!t.on_tape()) throw std::invalid_argument("Gradients::at: tensor is not on a tape");
    size_t id = size_t(t.node());
    if (id >= buffers_.size()) throw std::invalid_argument("Gradients::at: unknown node");
    if (buffers_[id].empty()) return Tensor::zeros(shapes_[id]);
    return Tensor(shapes_[id], buffers_[id]);
}

bool Gradients::nonzero(const Tensor& t) const {
    if (!t.on_tape()) return false;
    size_t id = size_t(t.node());
    return id < buffers_.size() && !buffers_[id].empty();
}

Tensor Tape::leaf(const Tensor& value) {
    if (!value.defined()) throw std::invalid_argument("Tape::leaf: undefined tensor");
    if (value.on_tape()) throw std::invalid_argument("Tape::leaf: tensor already belongs to a tape");
    Tensor t = value.detached();
    t.tape_ = this;
    t.node_ = int(nodes_.size());
    nodes_.push_back(Node{{}, value.shape(), nullptr});
    values_.push_back(t.storage());
    return t;
}

Tensor Tape::record(std::vector<int> out_shape, std::vector<float> out_data,
                    std::initializer_list<const Tensor*> parents, BackwardFn backward) {
    Node node;
    node.shape = out_shape;
    for (const Tensor* p : parents) {
        if (p->on_tape() && p->tape() != this)
            throw std::invalid_argument("Tape::record: input lives on a different tape");
        node.parents.push_back(p->on_tape() ? p->node() : -1);
    }
    node.backward = std::move(backward);

    Tensor out(std::move(out_shape), std::move(out_data));
    out.tape_ = this;
    out.node_ = int(nodes_.size());
    nodes_.push_back(std::move(node));
    values_.push_back(out.storage());
    return out;
}

Gradients Tape::backward(const Tensor& loss) {
    if (consumed_)
        throw std::logic_error("Tape::backward: called twice without reset");
    if (!loss.on_tape() || loss.tape() != this)
        throw std::invalid_argument("Tape::backward: loss is not on this tape");
    if (loss.size() != 1)
        throw std::invalid_argument("Tape::backward: loss must be scalar, got shape " +
                                    loss.shape_str());
    consumed_ = true;

    grads_.assign(nodes_.size(), {});
    grads_[size_t(loss.node())] = {1.f};

    for (int i = loss.node(); i >= 0; --i) {
        auto& g = grads_[size_t(i)];
        if (g.empty() || !nodes_[size_t(i)].backward) continue;
        BackCtx ctx;
        ctx.up_ = {g.data(), g.size()};
        ctx.tape_ = this;
        ctx.parents_ = &nodes_[size_t(i)].parents;
        nodes_[size_t(i)].backward(ctx);
    }

    Gradients out;
    out.buffers_.resize(nodes_.size());
    out.shapes_.resize(nodes_.size());
    for (size_t i = 0; i < nodes_.size(); ++i) {
        out.shapes_[i] = nodes_[i].shape;
        out.buffers_[i] = std::move(grads_[i]);
    }
    grads_.clear();
    return out;
}

void Tape::reset() {
    nodes_.clear();
    grads_.clear();
    values_.clear();
    consumed_ = false;
}

namespace {
thread_local int g_pause_depth = 0;
}

PauseRecording::PauseRecording() { ++g_pause_depth; }
PauseRecording::~PauseRecording() { --g_pause_depth; }
bool recording_paused() { return g_pause_depth > 0; }

}  // namespace morphsdf::ad
