#pragma once

#include <functional>
#include <vector>

#include "w2st/tensor.hpp"

namespace w2st {

/// Tape of executed operations, replayed in reverse by backward().
///
/// Ops record into the graph installed by the innermost live GraphScope on
/// the calling thread, and only when at least one input requires a gradient.
/// A graph can be differentiated once; afterwards it is consumed.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Appends an op. Called by the op implementations, not by users.
  void record(Tensor output, std::function<void()> backward);

  /// Populates .grad on every tracked tensor reachable from `loss`.
  void backward(Tensor& loss);

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }
  /// Number of op backward functions run by the last backward() call.
  std::size_t visited() const { return visited_; }

 private:
  struct Node {
    Tensor output;
    std::function<void()> backward;
  };
  std::vector<Node> nodes_;
  bool consumed_ = false;
  std::size_t visited_ = 0;
};

/// Installs a graph as the recording target for the current thread.
class GraphScope {
 public:
  explicit GraphScope(Graph& graph);
  ~GraphScope();
  GraphScope(const GraphScope&) = delete;
  GraphScope& operator=(const GraphScope&) = delete;

 private:
  Graph* previous_;
};

/// Suspends recording for the current thread (inference, finite differences).
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Graph* previous_;
};

Graph* active_graph();

}  // namespace w2st
