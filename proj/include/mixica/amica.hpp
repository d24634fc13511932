#pragma once

#include "mixica/recording.hpp"
#include "mixica/types.hpp"

#include <vector>

namespace mixica {

/// Settings for a single-model adaptive mixture decomposition.
struct AmicaConfig {
    int num_mix_comp = 3;
    long max_iter = 2000;
    long checkpoint_interval = 10;
    SeedPair seed_pair{};
    double rho_init = 1.5;
    double rho_min = 1.0;
    double rho_max = 2.0;
    long newton_start_iter = 50;
    double base_step = 0.5;    ///< natural-gradient step before Newton start
    double newton_step = 1.0;  ///< step once Newton updates are enabled
    double ll_tolerance = 0.0; ///< stop when 10-iteration gain drops below this; 0 runs to max_iter

    void validate() const;
};

/// Generalized Gaussian mixture density for one source:
///   q(s) = sum_j alpha_j * beta_j rho_j / (2 Gamma(1/rho_j)) * exp(-|beta_j (s - mu_j)|^rho_j)
struct SourceDensity {
    Vector alpha;
    Vector mu;
    Vector beta;
    Vector rho;

    Index size() const { return alpha.size(); }
    double log_pdf(double s) const;
    double pdf(double s) const;
};

/// Unmixing matrix (acting on sphered data) plus per-source densities.
struct ModelState {
    Matrix W;
    std::vector<SourceDensity> densities;
    long iter = 0;
    double ll = 0.0; ///< mean log-likelihood per sample, nats

    Index n_sources() const { return W.rows(); }
};

struct DecompositionResult {
    ModelState initial;
    ModelState final_state;
    SpheringTransform sphering;
    double initial_ll = 0.0;
    std::vector<double> ll_trace;       ///< one entry per executed iteration
    std::vector<ModelState> checkpoints; ///< every checkpoint_interval, plus the last iteration
    std::vector<double> step_times;     ///< seconds per iteration

    /// Composite transform W * S from centered sensor space to sources.
    Matrix unmixing() const { return final_state.W * sphering.matrix; }
};

/// Seeded starting point. Same (config, n_channels) gives an identical state.
ModelState initialize(const AmicaConfig& config, Index n_channels);

/// Mean log-likelihood per sample (nats): log|det W| + sum_i log q_i(y_i).
double log_likelihood(const ModelState& state, const Eigen::Ref<const Matrix>& sphered);

/// Relative-gradient update direction D (the step is W += step * D * W).
/// Natural gradient before newton_start_iter, Newton-preconditioned after.
Matrix update_direction(const ModelState& state, const Eigen::Ref<const Matrix>& sphered,
                        const AmicaConfig& config);

/// One EM + Newton iteration with step halving; never lowers the likelihood.
ModelState em_newton_step(const ModelState& state, const Eigen::Ref<const Matrix>& sphered,
                          const AmicaConfig& config);

/// Full pipeline: epoch means -> sphering -> initialize -> iterate.
DecompositionResult run(const Recording& rec, const AmicaConfig& config);

/// y = W * S * (x - means).
Matrix unmix(const DecompositionResult& result, const Recording& rec);

} // namespace mixica
