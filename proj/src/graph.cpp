#include "w2st/graph.hpp"

#include <stdexcept>

namespace w2st {

namespace {
thread_local Graph* current = nullptr;
}

Graph* active_graph() { return current; }

GraphScope::GraphScope(Graph& graph) : previous_(current) { current = &graph; }
GraphScope::~GraphScope() { current = previous_; }

NoGradScope::NoGradScope() : previous_(current) { current = nullptr; }
NoGradScope::~NoGradScope() { current = previous_; }

void Graph::record(Tensor output, std::function<void()> backward) {
  if (consumed_) throw std::logic_error("recording into a consumed graph");
  nodes_.push_back({std::move(output), std::move(backward)});
}

void Graph::backward(Tensor& loss) {
  if (consumed_) throw std::logic_error("backward on a consumed graph");
  if (loss.numel() != 1) {
    throw ShapeError("backward needs a scalar loss, got " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw std::logic_error("loss does not depend on any tracked tensor");
  }
  consumed_ = true;
  loss.mutable_grad()[0] += 1.0f;
  visited_ = 0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->output.has_grad()) {
      it->backward();
      ++visited_;
    }
  }
  // Drop closures so saved activations are released.
  nodes_.clear();
  nodes_.shrink_to_fit();
}

}  // namespace w2st
