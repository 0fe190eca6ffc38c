#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "jamba/errors.hpp"

namespace jamba {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Deterministic RNG. Raw mt19937_64 output is fully specified by the standard;
// uniform/gauss are built by hand so results do not depend on libstdc++
// distribution internals.
class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    // [0, 1) with 53 random bits
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double gauss(); // standard normal, Box-Muller with cached spare

    // uniform integer in [0, n)
    int64_t uniform_int(int64_t n);

private:
    std::mt19937_64 eng_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

namespace detail {

struct Node {
    Shape shape;
    std::vector<float> data;
    bool requires_grad = false;
    std::vector<float> grad;  // empty until first accumulation
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;  // reads this->grad, accumulates into parents

    std::span<float> grad_buffer();                 // zero-initialized on first use
    void accumulate(std::span<const float> g);
};

} // namespace detail

// Dense fp32 tensor, row-major. A Tensor is a shared handle to an immutable
// value node; ops never mutate their inputs. raw_data() exists for parameter
// initialization and optimizer updates between passes.
class Tensor {
public:
    using BackwardFn = std::function<void(detail::Node&)>;

    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, float value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<float> data, bool requires_grad = false);
    static Tensor scalar(float value, bool requires_grad = false);
    static Tensor randn(Shape shape, Rng& rng, float stdev, bool requires_grad = false);

    bool defined() const { return n_ != nullptr; }
    const Shape& shape() const { return n_->shape; }
    size_t rank() const { return n_->shape.size(); }
    int64_t dim(size_t i) const { return n_->shape.at(i); }
    int64_t numel() const { return static_cast<int64_t>(n_->data.size()); }

    std::span<const float> data() const { return n_->data; }
    std::span<float> raw_data() { return n_->data; }
    float item() const;  // scalar tensors only
    float at(std::initializer_list<int64_t> idx) const;

    bool requires_grad() const { return n_ && n_->requires_grad; }
    void set_requires_grad(bool rg);
    std::span<const float> grad() const;  // empty until backward has run
    void zero_grad();

    // Records a new op node. Parents/backward are dropped when no parent is
    // tracked, so inference passes build no graph.
    static Tensor make_op(const char* op, Shape shape, std::vector<float> data,
                          std::vector<Tensor> parents, BackwardFn backward);

    detail::Node* node() const { return n_.get(); }
    std::shared_ptr<detail::Node> node_ptr() const { return n_; }

private:
    std::shared_ptr<detail::Node> n_;
};

struct GraphEntry {
    const char* op;
    std::vector<size_t> inputs;  // ids of parent nodes
    size_t output;               // id of this node
};

// Reverse-mode tape: the nodes reachable from a root, in topological order
// (every node's inputs precede it). Ids are positions in that order.
class Graph {
public:
    static Graph trace(const Tensor& root);

    size_t size() const { return order_.size(); }
    std::vector<GraphEntry> entries() const;
    bool consumed() const { return consumed_; }

private:
    std::vector<std::shared_ptr<detail::Node>> order_;
    detail::Node* root_ = nullptr;
    bool consumed_ = false;

    friend void backward(Graph&, const Tensor&);
};

// Seeds d(loss)/d(loss) = 1 and propagates grads to every tracked tensor in
// the graph. The graph is consumed: closures are released, a second call is
// a contract error.
void backward(Graph& graph, const Tensor& loss);

// Convenience: trace + backward in one call.
void backward(const Tensor& loss);

} // namespace jamba
