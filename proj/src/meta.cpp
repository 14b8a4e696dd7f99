#include "masp/meta.hpp"

#include <algorithm>
#include <cmath>

#include "masp/errors.hpp"
#include "masp/rng.hpp"

namespace masp {

namespace {

void require_square(const Matrix& m, const char* what) {
    if (m.rows != m.cols) throw ShapeError(std::string(what) + ": matrix must be square");
}

// (I - sigma) x
Vector residual(const Matrix& sigma, std::span<const double> x) {
    Vector r = matvec(sigma, x);
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = x[i] - r[i];
    return r;
}

}  // namespace

SimilarityMatrix SimilarityMatrix::identity(std::size_t n) { return SimilarityMatrix(Matrix::identity(n)); }

SimilarityMatrix SimilarityMatrix::project(const Matrix& m) {
    require_square(m, "project_sigma");
    Matrix out(m.rows, m.cols);
    for (std::size_t r = 0; r < m.rows; ++r) {
        for (std::size_t c = r; c < m.cols; ++c) {
            const double avg = std::clamp((m(r, c) + m(c, r)) / 2.0, 0.0, 1.0);
            out(r, c) = avg;
            out(c, r) = avg;
        }
    }
    return SimilarityMatrix(std::move(out));
}

SimilarityMatrix project_sigma(const Matrix& m) { return SimilarityMatrix::project(m); }

SigmaInit parse_sigma_init(const std::string& name) {
    if (name == "identity") return SigmaInit::identity;
    if (name == "identity_noise") return SigmaInit::identity_noise;
    throw ValidationError("unknown sigma init '" + name + "'");
}

std::string to_string(SigmaInit s) { return s == SigmaInit::identity ? "identity" : "identity_noise"; }

SimilarityMatrix init_sigma(std::size_t n, SigmaInit scheme, Rng& rng) {
    Matrix m = Matrix::identity(n);
    if (scheme == SigmaInit::identity_noise) {
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < n; ++c)
                if (r != c) m(r, c) = rng.uniform(0.0, 0.05);
    }
    return project_sigma(m);
}

Vector embed_sigma(const Matrix& w_emb, const Matrix& sigma) {
    if (w_emb.cols != sigma.data.size())
        throw ShapeError("embedding width " + std::to_string(w_emb.cols) + " does not match vec(sigma) length " +
                         std::to_string(sigma.data.size()));
    return matvec(w_emb, sigma.data);
}

Matrix embedding_weight_grad(std::span<const double> e_grad, const Matrix& sigma) {
    Matrix g(e_grad.size(), sigma.data.size());
    for (std::size_t r = 0; r < e_grad.size(); ++r)
        for (std::size_t c = 0; c < sigma.data.size(); ++c) g(r, c) = e_grad[r] * sigma.data[c];
    return g;
}

Matrix init_embedding(std::size_t embedding_dim, std::size_t num_actions, Rng& rng) {
    const std::size_t width = num_actions * num_actions;
    Matrix w(embedding_dim, width);
    const double bound = 1.0 / std::sqrt(static_cast<double>(width));
    for (double& x : w.data) x = rng.uniform(-bound, bound);
    return w;
}

MaspLoss masp_loss(std::span<const Vector> q_batch, const Matrix& sigma, double eta) {
    require_square(sigma, "masp_loss");
    MaspLoss out;
    out.grads.reserve(q_batch.size());
    if (q_batch.empty()) return out;
    const double n = static_cast<double>(q_batch.size());
    for (const auto& q : q_batch) {
        if (q.size() != sigma.rows)
            throw ShapeError("Q vector length " + std::to_string(q.size()) + " does not match sigma size " +
                             std::to_string(sigma.rows));
        const Vector r = residual(sigma, q);
        out.loss += dot(r, r);
        // (I - sigma)^T r
        Vector g = matvec_transposed(sigma, r);
        const double scale = 2.0 * eta / n;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = scale * (r[i] - g[i]);
        out.grads.push_back(std::move(g));
    }
    out.loss *= eta / n;
    return out;
}

EntropyReg entropy_reg(const Matrix& sigma, double coef, double norm_offset) {
    require_square(sigma, "entropy_reg");
    for (double x : sigma.data)
        if (x < 0.0) throw ContractViolation("entropy_reg: sigma entries must be non-negative");
    EntropyReg out{0.0, Matrix(sigma.rows, sigma.cols)};
    if (coef == 0.0) return out;
    const std::size_t n = sigma.rows;
    Vector p(n), logp(n);
    for (std::size_t r = 0; r < n; ++r) {
        double z = 0.0;
        for (std::size_t c = 0; c < n; ++c) z += sigma(r, c) + norm_offset;
        double plogp = 0.0;
        for (std::size_t c = 0; c < n; ++c) {
            p[c] = (sigma(r, c) + norm_offset) / z;
            logp[c] = std::log(p[c]);
            plogp += p[c] * logp[c];
        }
        out.penalty += coef * plogp;
        // d/dS_rc of sum_k P_rk log P_rk = (log P_rc - sum_k P_rk log P_rk) / Z_r
        for (std::size_t c = 0; c < n; ++c) out.grad(r, c) = coef * (logp[c] - plogp) / z;
    }
    return out;
}

double mean_row_entropy(const Matrix& sigma, double norm_offset) {
    if (sigma.rows == 0) return 0.0;
    const EntropyReg e = entropy_reg(sigma, 1.0, norm_offset);
    return -e.penalty / static_cast<double>(sigma.rows);
}

SigmaStats sigma_stats(const Matrix& sigma, double norm_offset) {
    SigmaStats s;
    const std::size_t n = sigma.rows;
    if (n == 0) return s;
    s.max = *std::max_element(sigma.data.begin(), sigma.data.end());
    if (n > 1) {
        double off = 0.0;
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < n; ++c)
                if (r != c) off += sigma(r, c);
        s.mean_offdiag = off / static_cast<double>(n * (n - 1));
    }
    s.row_entropy = mean_row_entropy(sigma, norm_offset);
    return s;
}

Matrix meta_gradient_raw(const MetaGradientInputs& in) {
    if (!in.before || !in.after || !in.target || !in.sigma)
        throw ContractViolation("meta_gradient: missing inputs");
    if (!(in.lr > 0.0)) throw ConfigError("agent.lr", "inner learning rate must be positive for the meta-gradient");
    if (!(in.eta >= 0.0)) throw ConfigError("masp.eta", "penalty weight must be non-negative");
    const Matrix& sigma = *in.sigma;
    require_square(sigma, "meta_gradient");
    const std::size_t n_actions = sigma.rows;
    Matrix grad(n_actions, n_actions);
    if (in.eta == 0.0 || in.inner.empty()) return grad;

    const GradientBundle g = td_loss(*in.after, *in.target, in.outer, in.e_sigma, in.gamma).grads;
    if (g.is_zero()) return grad;

    std::vector<Vector> inputs;
    inputs.reserve(in.inner.size());
    for (const auto& t : in.inner) inputs.push_back(network_input(t.state, in.e_sigma));
    const std::vector<Vector> v = mlp_jvp_batch(*in.before, inputs, g, in.jvp);

    const double scale = 2.0 * in.lr * in.eta / static_cast<double>(in.inner.size());
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const Vector q = mlp_forward(*in.before, inputs[i]);
        if (q.size() != n_actions) throw ShapeError("network output does not match sigma size");
        const Vector aq = residual(sigma, q);
        const Vector av = residual(sigma, v[i]);
        for (std::size_t r = 0; r < n_actions; ++r)
            for (std::size_t c = 0; c < n_actions; ++c)
                grad(r, c) += scale * (aq[r] * v[i][c] + av[r] * q[c]);
    }
    return grad;
}

Matrix meta_gradient(const MetaGradientInputs& in) {
    const Matrix raw = meta_gradient_raw(in);
    Matrix sym(raw.rows, raw.cols);
    for (std::size_t r = 0; r < raw.rows; ++r)
        for (std::size_t c = 0; c < raw.cols; ++c) sym(r, c) = (raw(r, c) + raw(c, r)) / 2.0;
    return sym;
}

SimilarityMatrix meta_update(const SimilarityMatrix& sigma, const Matrix& meta_grad, const Matrix& entropy_grad,
                             double beta) {
    const Matrix& s = sigma.matrix();
    if (!s.same_shape(meta_grad) || !s.same_shape(entropy_grad))
        throw ShapeError("meta_update: gradient shapes do not match sigma");
    Matrix next = s;
    for (std::size_t i = 0; i < next.data.size(); ++i)
        next.data[i] -= beta * (meta_grad.data[i] + entropy_grad.data[i]);
    return project_sigma(next);
}

}  // namespace masp
