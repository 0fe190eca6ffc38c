#include "jamba/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace jamba {

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) {
        if (d < 0) throw dim_error("negative dimension in shape " + shape_str(s));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ",";
        os << s[i];
    }
    os << "]";
    return os.str();
}

double Rng::gauss() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    // Box-Muller; 1-u avoids log(0)
    constexpr double two_pi = 6.283185307179586476925286766559;
    double u1 = 1.0 - uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(two_pi * u2);
    has_spare_ = true;
    return r * std::cos(two_pi * u2);
}

int64_t Rng::uniform_int(int64_t n) {
    if (n <= 0) throw contract_error("uniform_int needs n > 0");
    return static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n));
}

namespace detail {

std::span<float> Node::grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0f);
    return grad;
}

void Node::accumulate(std::span<const float> g) {
    auto buf = grad_buffer();
    for (size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

} // namespace detail

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    int64_t n = shape_numel(shape);
    return from_data(std::move(shape), std::vector<float>(static_cast<size_t>(n), 0.0f), requires_grad);
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
    int64_t n = shape_numel(shape);
    return from_data(std::move(shape), std::vector<float>(static_cast<size_t>(n), value), requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<float> data, bool requires_grad) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
        throw dim_error("data length " + std::to_string(data.size()) + " does not match shape " + shape_str(shape));
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->requires_grad = requires_grad;
    Tensor t;
    t.n_ = std::move(n);
    return t;
}

Tensor Tensor::scalar(float value, bool requires_grad) {
    return from_data({}, {value}, requires_grad);
}

Tensor Tensor::randn(Shape shape, Rng& rng, float stdev, bool requires_grad) {
    int64_t n = shape_numel(shape);
    std::vector<float> data(static_cast<size_t>(n));
    for (auto& v : data) v = static_cast<float>(rng.gauss() * stdev);
    return from_data(std::move(shape), std::move(data), requires_grad);
}

float Tensor::item() const {
    if (!n_ || n_->data.size() != 1)
        throw contract_error("item() requires a scalar tensor");
    return n_->data[0];
}

float Tensor::at(std::initializer_list<int64_t> idx) const {
    if (idx.size() != n_->shape.size())
        throw dim_error("index rank mismatch for shape " + shape_str(n_->shape));
    int64_t flat = 0;
    size_t k = 0;
    for (int64_t i : idx) {
        flat = flat * n_->shape[k] + i;
        ++k;
    }
    return n_->data[static_cast<size_t>(flat)];
}

void Tensor::set_requires_grad(bool rg) {
    n_->requires_grad = rg;
    if (!rg) n_->grad.clear();
}

std::span<const float> Tensor::grad() const {
    if (!n_) return {};
    return n_->grad;
}

void Tensor::zero_grad() {
    if (n_) std::fill(n_->grad.begin(), n_->grad.end(), 0.0f);
}

Tensor Tensor::make_op(const char* op, Shape shape, std::vector<float> data,
                       std::vector<Tensor> parents, BackwardFn backward) {
    Tensor out = from_data(std::move(shape), std::move(data), false);
    bool tracked = false;
    for (const auto& p : parents)
        if (p.defined() && p.requires_grad()) { tracked = true; break; }
    if (tracked) {
        out.n_->requires_grad = true;
        out.n_->op = op;
        out.n_->backward_fn = std::move(backward);
        for (auto& p : parents) out.n_->parents.push_back(p.node_ptr());
    }
    return out;
}

Graph Graph::trace(const Tensor& root) {
    Graph g;
    if (!root.defined()) throw contract_error("trace on undefined tensor");
    g.root_ = root.node();

    // iterative DFS, parents first
    std::unordered_set<detail::Node*> visited;
    std::vector<std::pair<std::shared_ptr<detail::Node>, size_t>> stack;
    stack.emplace_back(root.node_ptr(), 0);
    visited.insert(root.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            auto child = node->parents[next++];
            if (visited.insert(child.get()).second)
                stack.emplace_back(std::move(child), 0);
        } else {
            g.order_.push_back(node);
            stack.pop_back();
        }
    }
    return g;
}

std::vector<GraphEntry> Graph::entries() const {
    std::unordered_map<detail::Node*, size_t> id;
    for (size_t i = 0; i < order_.size(); ++i) id[order_[i].get()] = i;
    std::vector<GraphEntry> out;
    out.reserve(order_.size());
    for (size_t i = 0; i < order_.size(); ++i) {
        GraphEntry e;
        e.op = order_[i]->op;
        e.output = i;
        for (const auto& p : order_[i]->parents) e.inputs.push_back(id.at(p.get()));
        out.push_back(std::move(e));
    }
    return out;
}

void backward(Graph& graph, const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw contract_error("backward requires a scalar loss");
    if (graph.consumed_)
        throw contract_error("graph already consumed by backward");
    if (graph.root_ != loss.node())
        throw contract_error("graph was not traced from this loss");
    if (!loss.requires_grad())
        throw contract_error("loss is not reachable from any tracked tensor");

    loss.node()->grad_buffer()[0] = 1.0f;
    for (auto it = graph.order_.rbegin(); it != graph.order_.rend(); ++it) {
        detail::Node& n = **it;
        if (n.backward_fn && !n.grad.empty()) n.backward_fn(n);
    }
    // release closures and intermediate buffers; the tape is single-use
    for (auto& n : graph.order_) {
        n->backward_fn = nullptr;
        n->parents.clear();
    }
    graph.order_.clear();
    graph.consumed_ = true;
}

void backward(const Tensor& loss) {
    Graph g = Graph::trace(loss);
    backward(g, loss);
}

} // namespace jamba
