#pragma once

#include "synpair/nn/layers.hpp"

#include <memory>
#include <vector>

namespace synpair::nn {

template <typename Scalar>
using Trace = std::vector<Saved<Scalar>>;

/// An ordered chain of layers sharing one ParamSet layout.
template <typename Scalar>
class Sequential {
 public:
  Sequential() = default;

  template <typename L, typename... Args>
  L& emplace(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  int size() const { return static_cast<int>(layers_.size()); }
  const Layer<Scalar>& layer(int i) const { return *layers_[i]; }

  Shape output_shape(Shape in) const {
    for (const auto& l : layers_) in = l->output_shape(in);
    return in;
  }

  /// Runs the chain. When `trace` is non-null it receives one entry per layer
  /// for a later backward().
  Batch<Scalar> forward(const ParamSet<Scalar>& params, Batch<Scalar> x, Mode mode, Trace<Scalar>* trace) const {
    if (trace) trace->assign(layers_.size(), Saved<Scalar>{});
    for (std::size_t i = 0; i < layers_.size(); ++i)
      x = layers_[i]->forward(params, x, mode, trace ? &(*trace)[i] : nullptr);
    return x;
  }

  /// Back-propagates `dy`. Parameter gradients go to `grads` when non-null.
  Batch<Scalar> backward(const ParamSet<Scalar>& params, const Trace<Scalar>& trace, Batch<Scalar> dy,
                         GradSet<Scalar>* grads, bool need_dx) const {
    for (int i = size() - 1; i >= 0; --i) dy = layers_[i]->backward(params, trace[i], dy, grads, need_dx || i > 0);
    return dy;
  }

  /// Folds running statistics from a train-mode trace into the buffers.
  void commit(ParamSet<Scalar>& params, const Trace<Scalar>& trace) const {
    for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i]->commit(params, trace[i]);
  }

 private:
  std::vector<std::unique_ptr<Layer<Scalar>>> layers_;
};

}  // namespace synpair::nn
