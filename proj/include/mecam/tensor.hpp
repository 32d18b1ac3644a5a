#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mecam {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major float tensor of rank 1-4.
///
/// Tensor is a handle: copies share storage, which is what lets the tape and
/// parameter lists refer to the same buffers. Values are treated as immutable
/// once an op has produced them; only optimizer steps write in place.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, float fill = 0.0f, bool requires_grad = false);
    Tensor(Shape shape, std::vector<float> values, bool requires_grad = false);

    static Tensor scalar(float value, bool requires_grad = false) {
        return Tensor(Shape{1}, std::vector<float>{value}, requires_grad);
    }

    bool defined() const noexcept { return impl_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const { return shape().at(axis); }
    std::size_t numel() const;

    std::span<float> data();
    std::span<const float> data() const;
    float item() const;
    float at(std::size_t i) const { return data()[i]; }

    bool requires_grad() const;
    void set_requires_grad(bool flag);

    bool has_grad() const;
    /// Gradient buffer, allocated as zeros on first access. Writable through
    /// const handles because the storage is shared.
    std::span<float> grad() const;
    void zero_grad();
    void drop_grad();

    /// Deep copy of the values, detached from any tape.
    Tensor clone() const;

    bool same_storage(const Tensor& other) const noexcept { return impl_ == other.impl_; }

    /// Throws NumericError naming `where` if any value is NaN or Inf.
    void check_finite(std::string_view where) const;

private:
    struct Impl {
        Shape shape;
        std::vector<float> values;
        std::vector<float> grad;
        bool requires_grad = false;
    };
    std::shared_ptr<Impl> impl_;
};

/// Ordered record of differentiable operations.
///
/// Ops consult the thread-local active tape; when none is active (inference,
/// parallel scoring workers) nothing is recorded.
class Tape {
public:
    using BackwardFn = std::function<void()>;

    struct Entry {
        std::string name;
        std::vector<Tensor> inputs;
        Tensor output;
        BackwardFn backward;
    };

    /// RAII activation of a tape on the current thread.
    class Scope {
    public:
        explicit Scope(Tape& tape);
        ~Scope();
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

    private:
        Tape* previous_;
    };

    static Tape* active() noexcept;

    /// True when `output` should be recorded: a tape is active and some input requires grad.
    static bool wants(std::initializer_list<const Tensor*> inputs);

    void record(std::string name, std::vector<Tensor> inputs, Tensor output, BackwardFn backward);

    /// Seeds d(loss)/d(loss) = 1 and replays every entry in reverse order.
    void backward(const Tensor& loss);

    std::size_t size() const noexcept { return entries_.size(); }
    const std::vector<Entry>& entries() const noexcept { return entries_; }
    void clear() { entries_.clear(); }

private:
    std::vector<Entry> entries_;
};

/// Convenience: backward through the currently active tape.
void backward(const Tensor& loss);

}  // namespace mecam
