#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dcpg/autodiff/tensor.hpp"

namespace dcpg {

class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct Node {
  Tensor value;
  std::optional<Tensor> grad;
  bool requires_grad = false;
  bool leaf = true;
  std::string op;
  std::uint64_t tape_id = 0;
  std::size_t index = 0;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  Tensor& grad_buffer() {
    if (!grad) grad.emplace(value.shape(), 0.0);
    return *grad;
  }
};

// Handle to a node of the computation graph. Leaf vars are either constants
// (no gradient) or parameters (gradient accumulated across backward passes).
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Var constant(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->op = "constant";
    return Var(std::move(n));
  }

  static Var parameter(Tensor value, std::string name = "param") {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = true;
    n->op = std::move(name);
    return Var(std::move(n));
  }

  bool valid() const { return static_cast<bool>(node_); }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  double item() const { return node_->value.item(); }
  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->leaf; }
  bool has_grad() const { return node_->grad.has_value(); }
  const Tensor& grad() const {
    if (!node_->grad) throw TapeError("Var::grad: no gradient populated for '" + node_->op + "'");
    return *node_->grad;
  }
  void clear_grad() { node_->grad.reset(); }
  const std::string& name() const { return node_->op; }
  std::optional<std::size_t> node_id() const {
    if (node_->leaf) return std::nullopt;
    return node_->index;
  }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Define-by-run record of one forward pass. Operations record onto the tape
// made current by Tape::Scope; backward may run once per recording.
class Tape {
 public:
  Tape() : id_(next_id()) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  ~Tape() {
    if (current_ == this) current_ = nullptr;
    release();
  }

  class Scope {
   public:
    explicit Scope(Tape& tape) : previous_(current_) { current_ = &tape; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;
    ~Scope() { current_ = previous_; }

   private:
    Tape* previous_;
  };

  static Tape* current() { return current_; }

  std::uint64_t id() const { return id_; }
  std::size_t size() const { return records_.size(); }
  bool consumed() const { return consumed_; }

  void record(const std::shared_ptr<Node>& node) {
    if (consumed_) throw TapeError("Tape::record: tape already replayed; clear() before recording again");
    node->tape_id = id_;
    node->index = records_.size();
    node->leaf = false;
    records_.push_back(node);
  }

  // Seeds d(loss)/d(loss) = 1 and propagates in reverse recording order.
  // Parameter gradients accumulate; intermediate gradients are rebuilt.
  void backward(const Var& loss) {
    if (consumed_) throw TapeError("Tape::backward: stale tape, backward already ran for this recording");
    if (!loss.valid() || !loss.value().is_scalar()) {
      throw TapeError("Tape::backward: loss must be a scalar, got shape " +
                      (loss.valid() ? to_string(loss.shape()) : std::string("<null>")));
    }
    const auto& root = loss.node();
    if (root->leaf || root->tape_id != id_) {
      throw TapeError("Tape::backward: loss is not recorded on this tape");
    }
    for (const auto& rec : records_) rec->grad.reset();
    root->grad_buffer().fill(1.0);
    for (std::size_t i = root->index + 1; i-- > 0;) {
      Node& rec = *records_[i];
      if (!rec.grad || !rec.backward) continue;
      for (const auto& in : rec.inputs) {
        if (in->requires_grad) in->grad_buffer();
      }
      rec.backward(rec);
    }
    consumed_ = true;
  }

  void clear() {
    release();
    records_.clear();
    consumed_ = false;
    id_ = next_id();
  }

 private:
  static std::uint64_t next_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter++;
  }

  void release() {
    for (auto& rec : records_) {
      rec->backward = nullptr;
      rec->inputs.clear();
    }
  }

  std::uint64_t id_;
  bool consumed_ = false;
  std::vector<std::shared_ptr<Node>> records_;
  static inline thread_local Tape* current_ = nullptr;
};

namespace detail {

// Creates the output node for an op over `inputs`. The node is recorded when
// a tape is current and any input requires a gradient.
inline Var make_result(std::string op, Tensor value, std::vector<Var> inputs,
                       std::function<void(Node&)> backward) {
  auto out = std::make_shared<Node>();
  out->value = std::move(value);
  out->op = std::move(op);
  bool tracked = false;
  for (const auto& in : inputs) tracked = tracked || in.requires_grad();
  Tape* tape = Tape::current();
  if (!tracked || tape == nullptr) return Var(std::move(out));
  for (const auto& in : inputs) {
    const auto& n = in.node();
    if (n->requires_grad && !n->leaf && n->tape_id != tape->id()) {
      throw TapeError(out->op + ": input '" + n->op + "' belongs to a different or cleared tape");
    }
  }
  out->requires_grad = true;
  out->inputs.reserve(inputs.size());
  for (auto& in : inputs) out->inputs.push_back(in.node());
  out->backward = std::move(backward);
  tape->record(out);
  return Var(std::move(out));
}

}  // namespace detail

}  // namespace dcpg
