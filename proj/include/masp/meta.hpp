#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "masp/agent.hpp"
#include "masp/numcore.hpp"

namespace masp {

class Rng;

// Square, symmetric similarity matrix over the augmented action space with
// every entry in [0, 1]. Only constructible through projection.
class SimilarityMatrix {
public:
    SimilarityMatrix() = default;

    static SimilarityMatrix identity(std::size_t n);
    // Symmetrize by averaging with the transpose, then clip to [0, 1].
    static SimilarityMatrix project(const Matrix& m);

    const Matrix& matrix() const { return m_; }
    std::size_t size() const { return m_.rows; }
    double operator()(std::size_t r, std::size_t c) const { return m_(r, c); }

    bool operator==(const SimilarityMatrix&) const = default;

private:
    explicit SimilarityMatrix(Matrix m) : m_(std::move(m)) {}
    Matrix m_;
};

SimilarityMatrix project_sigma(const Matrix& m);

enum class SigmaInit { identity, identity_noise };

SigmaInit parse_sigma_init(const std::string& name);
std::string to_string(SigmaInit s);

// Identity, optionally with uniform [0, 0.05] off-diagonal noise, projected.
SimilarityMatrix init_sigma(std::size_t n, SigmaInit scheme, Rng& rng);

struct MaspConfig {
    double eta = 0.1;
    double beta = 0.001;
    double entropy_coef = 1e-3;
    double norm_offset = 1e-6;
    SigmaInit sigma_init = SigmaInit::identity_noise;
    std::size_t embedding_dim = 8;
    JvpMode jvp = JvpMode::finite_difference;
};

// e = W_emb * vec(sigma), vec in row-major order.
Vector embed_sigma(const Matrix& w_emb, const Matrix& sigma);
// Gradient of a loss w.r.t. W_emb given its gradient w.r.t. e.
Matrix embedding_weight_grad(std::span<const double> e_grad, const Matrix& sigma);
Matrix init_embedding(std::size_t embedding_dim, std::size_t num_actions, Rng& rng);

struct MaspLoss {
    double loss = 0.0;
    std::vector<Vector> grads;  // d loss / d q_i
};

// eta * (1/n) * sum_i |q_i - sigma q_i|^2.
MaspLoss masp_loss(std::span<const Vector> q_batch, const Matrix& sigma, double eta);

struct EntropyReg {
    double penalty = 0.0;
    Matrix grad;
};

// lambda * sum_ij P_ij log P_ij over the row-normalized (sigma + offset).
// Minimizing it drives rows toward uniform.
EntropyReg entropy_reg(const Matrix& sigma, double coef, double norm_offset);

// Mean entropy of the rows of the row-normalized matrix.
double mean_row_entropy(const Matrix& sigma, double norm_offset);

struct SigmaStats {
    double mean_offdiag = 0.0;
    double max = 0.0;
    double row_entropy = 0.0;
};

SigmaStats sigma_stats(const Matrix& sigma, double norm_offset = 1e-6);

// Everything the one-step meta-gradient needs. `before` is the online
// network that took the inner step on `inner` to produce `after`.
struct MetaGradientInputs {
    const MlpParams* before = nullptr;
    const MlpParams* after = nullptr;
    const MlpParams* target = nullptr;
    std::span<const Transition> inner;
    std::span<const Transition> outer;
    const Matrix* sigma = nullptr;
    std::span<const double> e_sigma;
    double eta = 0.0;
    double lr = 0.0;
    double gamma = 0.99;
    JvpMode jvp = JvpMode::finite_difference;
};

// Raw gradient of L_TD(outer; after) w.r.t. sigma through the inner SGD step,
// treating e_sigma as a constant input. Not symmetrized.
Matrix meta_gradient_raw(const MetaGradientInputs& in);

// meta_gradient_raw followed by (G + G^T) / 2.
Matrix meta_gradient(const MetaGradientInputs& in);

// project(sigma - beta * (meta_grad + entropy_grad)).
SimilarityMatrix meta_update(const SimilarityMatrix& sigma, const Matrix& meta_grad, const Matrix& entropy_grad,
                             double beta);

}  // namespace masp
