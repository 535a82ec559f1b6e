#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace fgs {

// Error hierarchy shared across the library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DimensionError : Error {
    using Error::Error;
};
struct ContractError : Error {
    using Error::Error;
};

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) n *= static_cast<std::size_t>(d);
    return n;
}

std::string shape_str(const Shape& s);

// One node of the differentiation graph. Nodes are created in topological
// order by the forward ops; `backward_fn` reads this node's grad and
// accumulates into the parents' grads.
struct TensorNode {
    Shape shape;
    std::vector<float> value;
    std::vector<float> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void()> backward_fn;

    std::size_t numel() const { return value.size(); }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0f);
    }
};

// Value-semantics handle into the graph. Copies are cheap and alias the
// same node; node values are immutable once created.
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<float> data, bool requires_grad = false);

    static Tensor zeros(const Shape& shape, bool requires_grad = false);
    static Tensor full(const Shape& shape, float v, bool requires_grad = false);
    static Tensor scalar(float v, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t numel() const { return node_->numel(); }
    int dim(int i) const { return node_->shape.at(static_cast<std::size_t>(i)); }
    int ndim() const { return static_cast<int>(node_->shape.size()); }

    const std::vector<float>& data() const { return node_->value; }
    std::vector<float>& mutable_data() { return node_->value; }
    const std::vector<float>& grad() const { return node_->grad; }
    bool requires_grad() const { return node_->requires_grad; }
    void zero_grad() { node_->grad.assign(node_->value.size(), 0.0f); }

    float item() const;

    std::shared_ptr<TensorNode> node() const { return node_; }
    explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}

private:
    std::shared_ptr<TensorNode> node_;
};

enum class Padding { Valid, Same };
enum class Mode { Train, Infer };

// Forward ops. Each builds graph edges when any input requires a gradient.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride, Padding padding);
Tensor maxpool2d(const Tensor& input);
Tensor upsample2d(const Tensor& input);
Tensor dense(const Tensor& input, const Tensor& weights, const Tensor& bias);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softmax(const Tensor& x);
Tensor batchnorm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                   Mode mode, float eps, float momentum,
                   std::vector<float>& running_mean, std::vector<float>& running_var);
Tensor dropout(const Tensor& input, float rate, Mode mode, std::uint64_t seed);
Tensor flatten(const Tensor& input);
Tensor reshape(const Tensor& input, const Shape& shape);
Tensor scale(const Tensor& input, float factor);

// Loss-style reductions (scalar outputs).
Tensor mse_loss(const Tensor& pred, const Tensor& target);
Tensor cross_entropy_from_logits(const Tensor& logits, const std::vector<int>& labels);
Tensor nll_from_probs(const Tensor& probs, const std::vector<int>& labels);
Tensor bce_loss(const Tensor& pred, const std::vector<float>& target);
Tensor sum(const Tensor& x);
Tensor weighted_sum(const Tensor& x, const std::vector<float>& weights);
Tensor add(const Tensor& a, const Tensor& b);

// Reverse pass: seeds d(loss)/d(loss)=1 and walks the graph in reverse
// topological order, filling `grad` on every reachable node.
void backward(const Tensor& loss);

void assert_finite(const Tensor& t, const char* what);

}  // namespace fgs
