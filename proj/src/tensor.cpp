#include "mecam/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mecam/error.hpp"

namespace mecam {

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

namespace {

void validate_shape(const Shape& shape) {
    if (shape.empty() || shape.size() > 4) {
        throw ShapeError("tensor rank must be 1-4, got shape " + shape_str(shape));
    }
}

}  // namespace

Tensor::Tensor(Shape shape, float fill, bool requires_grad) {
    validate_shape(shape);
    impl_ = std::make_shared<Impl>();
    impl_->values.assign(shape_numel(shape), fill);
    impl_->shape = std::move(shape);
    impl_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<float> values, bool requires_grad) {
    validate_shape(shape);
    if (shape_numel(shape) != values.size()) {
        throw ShapeError("shape " + shape_str(shape) + " needs " + std::to_string(shape_numel(shape)) +
                         " values, got " + std::to_string(values.size()));
    }
    impl_ = std::make_shared<Impl>();
    impl_->shape = std::move(shape);
    impl_->values = std::move(values);
    impl_->requires_grad = requires_grad;
}

const Shape& Tensor::shape() const {
    if (!impl_) throw ShapeError("use of undefined tensor");
    return impl_->shape;
}

std::size_t Tensor::numel() const { return defined() ? impl_->values.size() : 0; }

std::span<float> Tensor::data() {
    if (!impl_) throw ShapeError("use of undefined tensor");
    return impl_->values;
}

std::span<const float> Tensor::data() const {
    if (!impl_) throw ShapeError("use of undefined tensor");
    return impl_->values;
}

float Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() on non-scalar tensor of shape " + shape_str(shape()));
    return impl_->values[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
    if (!impl_) throw ShapeError("use of undefined tensor");
    impl_->requires_grad = flag;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<float> Tensor::grad() const {
    if (!impl_) throw ShapeError("use of undefined tensor");
    if (impl_->grad.size() != impl_->values.size()) impl_->grad.assign(impl_->values.size(), 0.0f);
    return impl_->grad;
}

void Tensor::zero_grad() {
    if (impl_) impl_->grad.assign(impl_->values.size(), 0.0f);
}

void Tensor::drop_grad() {
    if (impl_) {
        impl_->grad.clear();
        impl_->grad.shrink_to_fit();
    }
}

Tensor Tensor::clone() const {
    if (!impl_) return {};
    return Tensor(impl_->shape, impl_->values, false);
}

void Tensor::check_finite(std::string_view where) const {
    if (!impl_) return;
    for (float v : impl_->values) {
        if (!std::isfinite(v)) {
            throw NumericError("non-finite value produced by " + std::string(where));
        }
    }
}

// ---------------------------------------------------------------------------

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape::Scope::Scope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }

Tape::Scope::~Scope() { g_active_tape = previous_; }

Tape* Tape::active() noexcept { return g_active_tape; }

bool Tape::wants(std::initializer_list<const Tensor*> inputs) {
    if (!g_active_tape) return false;
    return std::any_of(inputs.begin(), inputs.end(),
                       [](const Tensor* t) { return t && t->requires_grad(); });
}

void Tape::record(std::string name, std::vector<Tensor> inputs, Tensor output, BackwardFn backward) {
    output.set_requires_grad(true);
    entries_.push_back(Entry{std::move(name), std::move(inputs), std::move(output), std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw ShapeError("backward() needs a scalar loss, got shape " +
                         (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    }
    const bool produced_here = std::any_of(entries_.begin(), entries_.end(),
                                           [&](const Entry& e) { return e.output.same_storage(loss); });
    if (!produced_here) throw ShapeError("backward(): loss was not recorded on this tape");

    // Every tensor that takes part gets a zeroed buffer, so leaves the loss
    // does not reach still end up with a (zero) gradient.
    for (auto& e : entries_) {
        for (auto& in : e.inputs) {
            if (in.requires_grad()) (void)in.grad();
        }
        (void)e.output.grad();
    }
    Tensor seed = loss;
    seed.grad()[0] = 1.0f;

    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
        it->backward();
    }
}

void backward(const Tensor& loss) {
    Tape* tape = Tape::active();
    if (!tape) throw ShapeError("backward() called with no active tape");
    tape->backward(loss);
}

}  // namespace mecam
