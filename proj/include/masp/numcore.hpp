#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace masp {

class Rng;

using Vector = std::vector<double>;

// Dense row-major matrix of doubles.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    static Matrix identity(std::size_t n);

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
    Matrix transposed() const;

    bool operator==(const Matrix&) const = default;
};

Vector matvec(const Matrix& m, std::span<const double> x);
Vector matvec_transposed(const Matrix& m, std::span<const double> x);
double dot(std::span<const double> a, std::span<const double> b);
bool all_finite(std::span<const double> v);

enum class Activation { relu, tanh, identity };

Activation parse_activation(const std::string& name);
std::string to_string(Activation a);

struct DenseLayer {
    Matrix weight;  // out x in
    Vector bias;    // out

    bool operator==(const DenseLayer&) const = default;
};

// Parameters of a multilayer perceptron. The output layer is always linear;
// every other layer applies `hidden_activation`.
struct MlpParams {
    std::vector<DenseLayer> layers;
    Activation hidden_activation = Activation::relu;

    std::size_t input_dim() const;
    std::size_t output_dim() const;
    std::size_t parameter_count() const;
    Activation activation_of(std::size_t layer) const {
        return layer + 1 == layers.size() ? Activation::identity : hidden_activation;
    }

    bool operator==(const MlpParams&) const = default;
};

// Gradients (or directions) with the same layout as an MlpParams.
struct GradientBundle {
    std::vector<DenseLayer> layers;

    static GradientBundle zeros_like(const MlpParams& params);

    bool matches(const MlpParams& params) const;
    void scale(double s);
    void add_scaled(const GradientBundle& other, double s);
    double dot(const GradientBundle& other) const;
    bool is_zero() const;

    bool operator==(const GradientBundle&) const = default;
};

// Layer sizes (input, hidden..., output). Weights uniform in
// [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero.
MlpParams init_mlp(std::span<const std::size_t> sizes, Activation hidden, Rng& rng);
MlpParams zero_mlp(std::span<const std::size_t> sizes, Activation hidden);

// Pre- and post-activation values of every layer for one input.
struct ForwardTrace {
    Vector input;
    std::vector<Vector> pre;
    std::vector<Vector> post;

    const Vector& output() const { return post.back(); }
};

Vector mlp_forward(const MlpParams& params, std::span<const double> input);
ForwardTrace mlp_forward_trace(const MlpParams& params, std::span<const double> input);

struct BackwardResult {
    GradientBundle grads;
    Vector input_grad;
};

// Exact gradients of dot(output, output_grad) w.r.t. parameters and input.
BackwardResult mlp_backward(const MlpParams& params, std::span<const double> input,
                            std::span<const double> output_grad);

// Accumulating form used by batched losses: adds the parameter gradient into
// `acc` and, when `input_grad` is non-null, writes the input gradient there.
void mlp_backward_accumulate(const MlpParams& params, const ForwardTrace& trace,
                             std::span<const double> output_grad, GradientBundle& acc,
                             Vector* input_grad = nullptr);

enum class JvpMode { finite_difference, forward };

inline constexpr double kJvpStep = 1e-6;

// Directional derivative of the network output along a parameter direction.
Vector mlp_jvp(const MlpParams& params, std::span<const double> input,
               const GradientBundle& direction, JvpMode mode = JvpMode::finite_difference);

// Batched JVP; the finite-difference mode builds the perturbed parameter sets once.
std::vector<Vector> mlp_jvp_batch(const MlpParams& params, std::span<const Vector> inputs,
                                  const GradientBundle& direction,
                                  JvpMode mode = JvpMode::finite_difference);

MlpParams sgd_update(const MlpParams& params, const GradientBundle& grads, double lr);
void sgd_step(MlpParams& params, const GradientBundle& grads, double lr);

// params + s * direction, shape-checked.
MlpParams perturbed(const MlpParams& params, const GradientBundle& direction, double s);

}  // namespace masp
