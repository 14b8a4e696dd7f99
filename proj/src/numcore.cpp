#include "masp/numcore.hpp"

#include <cmath>

#include "masp/errors.hpp"
#include "masp/rng.hpp"

namespace masp {

namespace {

double activate(Activation a, double z) {
    switch (a) {
        case Activation::relu: return z > 0.0 ? z : 0.0;
        case Activation::tanh: return std::tanh(z);
        case Activation::identity: return z;
    }
    return z;
}

// Derivative expressed through the pre-activation z and post-activation y.
double activate_derivative(Activation a, double z, double y) {
    switch (a) {
        case Activation::relu: return z > 0.0 ? 1.0 : 0.0;
        case Activation::tanh: return 1.0 - y * y;
        case Activation::identity: return 1.0;
    }
    return 1.0;
}

void check_layer_shapes(const std::vector<DenseLayer>& a, const std::vector<DenseLayer>& b,
                        const char* what) {
    if (a.size() != b.size()) throw ShapeError(std::string(what) + ": layer count mismatch");
    for (std::size_t l = 0; l < a.size(); ++l) {
        if (!a[l].weight.same_shape(b[l].weight) || a[l].bias.size() != b[l].bias.size())
            throw ShapeError(std::string(what) + ": layer " + std::to_string(l) + " shape mismatch");
    }
}

void check_input(const MlpParams& params, std::size_t n) {
    if (params.layers.empty()) throw ShapeError("network has no layers");
    if (n != params.input_dim())
        throw ShapeError("input length " + std::to_string(n) + " does not match network input " +
                         std::to_string(params.input_dim()));
}

}  // namespace

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::transposed() const {
    Matrix t(cols, rows);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) t(c, r) = (*this)(r, c);
    return t;
}

Vector matvec(const Matrix& m, std::span<const double> x) {
    if (x.size() != m.cols) throw ShapeError("matvec: vector length does not match columns");
    Vector y(m.rows, 0.0);
    const std::size_t n = m.cols;
    const std::size_t n4 = n - n % 4;
    for (std::size_t r = 0; r < m.rows; ++r) {
        const double* w = m.data.data() + r * n;
        // Four independent partial sums let the compiler vectorize without
        // reassociating a single accumulator.
        double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
        for (std::size_t c = 0; c < n4; c += 4) {
            a0 += w[c] * x[c];
            a1 += w[c + 1] * x[c + 1];
            a2 += w[c + 2] * x[c + 2];
            a3 += w[c + 3] * x[c + 3];
        }
        for (std::size_t c = n4; c < n; ++c) a0 += w[c] * x[c];
        y[r] = (a0 + a1) + (a2 + a3);
    }
    return y;
}

Vector matvec_transposed(const Matrix& m, std::span<const double> x) {
    if (x.size() != m.rows) throw ShapeError("matvec_transposed: vector length does not match rows");
    Vector y(m.cols, 0.0);
    for (std::size_t r = 0; r < m.rows; ++r) {
        const double* w = m.data.data() + r * m.cols;
        const double xr = x[r];
        for (std::size_t c = 0; c < m.cols; ++c) y[c] += w[c] * xr;
    }
    return y;
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

bool all_finite(std::span<const double> v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

Activation parse_activation(const std::string& name) {
    if (name == "relu") return Activation::relu;
    if (name == "tanh") return Activation::tanh;
    if (name == "identity") return Activation::identity;
    throw ValidationError("unknown activation '" + name + "'");
}

std::string to_string(Activation a) {
    switch (a) {
        case Activation::relu: return "relu";
        case Activation::tanh: return "tanh";
        case Activation::identity: return "identity";
    }
    return "identity";
}

std::size_t MlpParams::input_dim() const { return layers.empty() ? 0 : layers.front().weight.cols; }
std::size_t MlpParams::output_dim() const { return layers.empty() ? 0 : layers.back().weight.rows; }

std::size_t MlpParams::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.data.size() + l.bias.size();
    return n;
}

GradientBundle GradientBundle::zeros_like(const MlpParams& params) {
    GradientBundle g;
    g.layers.reserve(params.layers.size());
    for (const auto& l : params.layers)
        g.layers.push_back({Matrix(l.weight.rows, l.weight.cols), Vector(l.bias.size(), 0.0)});
    return g;
}

bool GradientBundle::matches(const MlpParams& params) const {
    if (layers.size() != params.layers.size()) return false;
    for (std::size_t l = 0; l < layers.size(); ++l)
        if (!layers[l].weight.same_shape(params.layers[l].weight) ||
            layers[l].bias.size() != params.layers[l].bias.size())
            return false;
    return true;
}

void GradientBundle::scale(double s) {
    for (auto& l : layers) {
        for (double& w : l.weight.data) w *= s;
        for (double& b : l.bias) b *= s;
    }
}

void GradientBundle::add_scaled(const GradientBundle& other, double s) {
    check_layer_shapes(layers, other.layers, "add_scaled");
    for (std::size_t l = 0; l < layers.size(); ++l) {
        auto& w = layers[l].weight.data;
        const auto& ow = other.layers[l].weight.data;
        for (std::size_t i = 0; i < w.size(); ++i) w[i] += s * ow[i];
        auto& b = layers[l].bias;
        const auto& ob = other.layers[l].bias;
        for (std::size_t i = 0; i < b.size(); ++i) b[i] += s * ob[i];
    }
}

double GradientBundle::dot(const GradientBundle& other) const {
    check_layer_shapes(layers, other.layers, "dot");
    double acc = 0.0;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        acc += masp::dot(layers[l].weight.data, other.layers[l].weight.data);
        acc += masp::dot(layers[l].bias, other.layers[l].bias);
    }
    return acc;
}

bool GradientBundle::is_zero() const {
    for (const auto& l : layers) {
        for (double w : l.weight.data)
            if (w != 0.0) return false;
        for (double b : l.bias)
            if (b != 0.0) return false;
    }
    return true;
}

MlpParams init_mlp(std::span<const std::size_t> sizes, Activation hidden, Rng& rng) {
    MlpParams p = zero_mlp(sizes, hidden);
    for (auto& l : p.layers) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(l.weight.cols));
        for (double& w : l.weight.data) w = rng.uniform(-bound, bound);
    }
    return p;
}

MlpParams zero_mlp(std::span<const std::size_t> sizes, Activation hidden) {
    if (sizes.size() < 2) throw ShapeError("an MLP needs at least input and output sizes");
    MlpParams p;
    p.hidden_activation = hidden;
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
        if (sizes[i] == 0 || sizes[i + 1] == 0) throw ShapeError("zero-width layer");
        p.layers.push_back({Matrix(sizes[i + 1], sizes[i]), Vector(sizes[i + 1], 0.0)});
    }
    return p;
}

ForwardTrace mlp_forward_trace(const MlpParams& params, std::span<const double> input) {
    check_input(params, input.size());
    ForwardTrace t;
    t.input.assign(input.begin(), input.end());
    t.pre.reserve(params.layers.size());
    t.post.reserve(params.layers.size());
    const Vector* a = &t.input;
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        const auto& layer = params.layers[l];
        Vector z = matvec(layer.weight, *a);
        for (std::size_t i = 0; i < z.size(); ++i) z[i] += layer.bias[i];
        Vector y(z.size());
        const Activation act = params.activation_of(l);
        for (std::size_t i = 0; i < z.size(); ++i) y[i] = activate(act, z[i]);
        t.pre.push_back(std::move(z));
        t.post.push_back(std::move(y));
        a = &t.post.back();
    }
    return t;
}

Vector mlp_forward(const MlpParams& params, std::span<const double> input) {
    check_input(params, input.size());
    Vector a(input.begin(), input.end());
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        const auto& layer = params.layers[l];
        Vector z = matvec(layer.weight, a);
        const Activation act = params.activation_of(l);
        for (std::size_t i = 0; i < z.size(); ++i) z[i] = activate(act, z[i] + layer.bias[i]);
        a = std::move(z);
    }
    return a;
}

void mlp_backward_accumulate(const MlpParams& params, const ForwardTrace& trace,
                             std::span<const double> output_grad, GradientBundle& acc,
                             Vector* input_grad) {
    if (!acc.matches(params)) throw ShapeError("gradient accumulator does not match parameters");
    if (trace.post.size() != params.layers.size())
        throw ShapeError("forward trace does not match parameters");
    if (output_grad.size() != params.output_dim())
        throw ShapeError("output gradient length does not match network output");

    Vector delta(output_grad.begin(), output_grad.end());
    for (std::size_t l = params.layers.size(); l-- > 0;) {
        const auto& layer = params.layers[l];
        const Activation act = params.activation_of(l);
        const Vector& z = trace.pre[l];
        const Vector& y = trace.post[l];
        if (act != Activation::identity)
            for (std::size_t i = 0; i < delta.size(); ++i) delta[i] *= activate_derivative(act, z[i], y[i]);

        const Vector& a_in = l == 0 ? trace.input : trace.post[l - 1];
        auto& gw = acc.layers[l].weight;
        auto& gb = acc.layers[l].bias;
        for (std::size_t r = 0; r < gw.rows; ++r) {
            const double d = delta[r];
            gb[r] += d;
            if (d == 0.0) continue;
            double* row = gw.data.data() + r * gw.cols;
            for (std::size_t c = 0; c < gw.cols; ++c) row[c] += d * a_in[c];
        }
        if (l > 0 || input_grad != nullptr) {
            Vector next = matvec_transposed(layer.weight, delta);
            if (l == 0) {
                *input_grad = std::move(next);
            } else {
                delta = std::move(next);
            }
        }
    }
}

BackwardResult mlp_backward(const MlpParams& params, std::span<const double> input,
                            std::span<const double> output_grad) {
    ForwardTrace trace = mlp_forward_trace(params, input);
    BackwardResult out{GradientBundle::zeros_like(params), {}};
    mlp_backward_accumulate(params, trace, output_grad, out.grads, &out.input_grad);
    return out;
}

namespace {

Vector jvp_forward_mode(const MlpParams& params, std::span<const double> input,
                        const GradientBundle& d) {
    Vector a(input.begin(), input.end());
    Vector da(input.size(), 0.0);
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        const auto& layer = params.layers[l];
        Vector z = matvec(layer.weight, a);
        Vector dz = matvec(layer.weight, da);
        Vector dwa = matvec(d.layers[l].weight, a);
        for (std::size_t i = 0; i < z.size(); ++i) {
            z[i] += layer.bias[i];
            dz[i] += dwa[i] + d.layers[l].bias[i];
        }
        const Activation act = params.activation_of(l);
        for (std::size_t i = 0; i < z.size(); ++i) {
            const double y = activate(act, z[i]);
            dz[i] *= activate_derivative(act, z[i], y);
            z[i] = y;
        }
        a = std::move(z);
        da = std::move(dz);
    }
    return da;
}

}  // namespace

std::vector<Vector> mlp_jvp_batch(const MlpParams& params, std::span<const Vector> inputs,
                                  const GradientBundle& direction, JvpMode mode) {
    check_layer_shapes(params.layers, direction.layers, "mlp_jvp");
    std::vector<Vector> out;
    out.reserve(inputs.size());
    if (mode == JvpMode::forward) {
        for (const auto& x : inputs) {
            check_input(params, x.size());
            out.push_back(jvp_forward_mode(params, x, direction));
        }
        return out;
    }
    const MlpParams plus = perturbed(params, direction, kJvpStep);
    const MlpParams minus = perturbed(params, direction, -kJvpStep);
    for (const auto& x : inputs) {
        Vector fp = mlp_forward(plus, x);
        const Vector fm = mlp_forward(minus, x);
        for (std::size_t i = 0; i < fp.size(); ++i) fp[i] = (fp[i] - fm[i]) / (2.0 * kJvpStep);
        out.push_back(std::move(fp));
    }
    return out;
}

Vector mlp_jvp(const MlpParams& params, std::span<const double> input, const GradientBundle& direction,
               JvpMode mode) {
    std::vector<Vector> in{Vector(input.begin(), input.end())};
    return std::move(mlp_jvp_batch(params, in, direction, mode).front());
}

MlpParams perturbed(const MlpParams& params, const GradientBundle& direction, double s) {
    check_layer_shapes(params.layers, direction.layers, "perturb");
    MlpParams out = params;
    for (std::size_t l = 0; l < out.layers.size(); ++l) {
        auto& w = out.layers[l].weight.data;
        const auto& dw = direction.layers[l].weight.data;
        for (std::size_t i = 0; i < w.size(); ++i) w[i] += s * dw[i];
        auto& b = out.layers[l].bias;
        const auto& db = direction.layers[l].bias;
        for (std::size_t i = 0; i < b.size(); ++i) b[i] += s * db[i];
    }
    return out;
}

void sgd_step(MlpParams& params, const GradientBundle& grads, double lr) {
    if (!(lr >= 0.0)) throw ContractViolation("learning rate must be non-negative");
    check_layer_shapes(params.layers, grads.layers, "sgd_update");
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        auto& w = params.layers[l].weight.data;
        const auto& gw = grads.layers[l].weight.data;
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * gw[i];
        auto& b = params.layers[l].bias;
        const auto& gb = grads.layers[l].bias;
        for (std::size_t i = 0; i < b.size(); ++i) b[i] -= lr * gb[i];
    }
}

MlpParams sgd_update(const MlpParams& params, const GradientBundle& grads, double lr) {
    MlpParams out = params;
    sgd_step(out, grads, lr);
    return out;
}

}  // namespace masp
