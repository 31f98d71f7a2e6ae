//! Clustering factor analysis: every variable loads on exactly one latent
//! factor, so the loading matrix has one nonzero per row and all conjugate
//! updates reduce to scalar Gaussians or inverse gammas.
//!
//! Scale identifiability comes from the unit-variance latent prior; sign
//! identifiability from a per-cluster convention on the loading sums, applied
//! jointly with the effects so the model density is exactly unchanged.

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::effects::EffectDecomposition;
use crate::matching::MatchingState;
use crate::stats;

/// Vague prior standard deviation for the per-variable grand mean.
pub const GRAND_MEAN_PRIOR_SD: f64 = 10.0;

/// Per-dataset factor analysis parameters.
///
/// `loading[i]` is the single nonzero entry of row `i` of the projection
/// matrix, located at column `assignment[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorParams {
    pub grand_mean: Vec<f64>,
    pub assignment: Vec<usize>,
    pub loading: Vec<f64>,
    pub residual_var: Vec<f64>,
    pub n_clusters: usize,
}

impl FactorParams {
    /// Fresh parameters: unit loadings, unit residual variances, zero means.
    pub fn initial(assignment: Vec<usize>, n_clusters: usize) -> Self {
        let p = assignment.len();
        debug_assert!(assignment.iter().all(|&k| k < n_clusters));
        Self {
            grand_mean: vec![0.0; p],
            assignment,
            loading: vec![1.0; p],
            residual_var: vec![1.0; p],
            n_clusters,
        }
    }

    pub fn n_variables(&self) -> usize {
        self.assignment.len()
    }

    /// Sum of loadings per cluster; the sign convention requires these to be
    /// nonnegative for identifiable (unmatched) clusters.
    pub fn loading_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.n_clusters];
        for i in 0..self.n_variables() {
            sums[self.assignment[i]] += self.loading[i];
        }
        sums
    }
}

/// Latent factor values, one row per sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentState {
    pub factors: Array2<f64>,
}

impl LatentState {
    pub fn zeros(n: usize, k: usize) -> Self {
        Self { factors: Array2::zeros((n, k)) }
    }
}

/// Conditional moments of every latent factor given data and effect means.
///
/// Because each variable loads on one factor, the conditional is diagonal
/// across factors: per sample and cluster, a scalar Gaussian combining the
/// unit-variance prior around the effect mean with the loadings-weighted
/// likelihood. Returns the n x K mean matrix and the per-cluster variance
/// (shared by all samples).
pub fn latent_conditional_moments(
    values: &Array2<f64>,
    params: &FactorParams,
    latent_mean: &Array2<f64>,
) -> (Array2<f64>, Vec<f64>) {
    let (n, p) = values.dim();
    let k_count = params.n_clusters;
    let mut precision = vec![1.0; k_count];
    for i in 0..p {
        precision[params.assignment[i]] +=
            params.loading[i] * params.loading[i] / params.residual_var[i];
    }
    let mut mean = Array2::zeros((n, k_count));
    for j in 0..n {
        let mut weighted = vec![0.0; k_count];
        for i in 0..p {
            weighted[params.assignment[i]] += params.loading[i]
                * (values[[j, i]] - params.grand_mean[i])
                / params.residual_var[i];
        }
        for k in 0..k_count {
            mean[[j, k]] = (latent_mean[[j, k]] + weighted[k]) / precision[k];
        }
    }
    (mean, precision.iter().map(|&pr| 1.0 / pr).collect())
}

/// Draws every latent factor from its exact Gaussian full conditional.
pub fn sample_latent_factors<R: Rng + ?Sized>(
    values: &Array2<f64>,
    params: &FactorParams,
    latent_mean: &Array2<f64>,
    rng: &mut R,
) -> LatentState {
    let (mean, var) = latent_conditional_moments(values, params, latent_mean);
    let sd: Vec<f64> = var.iter().map(|v| v.sqrt()).collect();
    let mut factors = mean;
    for j in 0..factors.nrows() {
        for k in 0..factors.ncols() {
            factors[[j, k]] = stats::draw_normal(rng, factors[[j, k]], sd[k]);
        }
    }
    LatentState { factors }
}

/// Log marginal likelihood of variable `i`'s column under each cluster, with
/// the loading integrated out under its N(0, tau_v^2) prior.
pub fn assignment_log_marginals(
    column: ArrayView1<f64>,
    grand_mean: f64,
    residual_var: f64,
    latent: &LatentState,
    tau_v: f64,
) -> Vec<f64> {
    let n = column.len() as f64;
    let tau_sq = tau_v * tau_v;
    let r: f64 = column.iter().map(|&x| (x - grand_mean) * (x - grand_mean)).sum();
    let k_count = latent.factors.ncols();
    let mut out = Vec::with_capacity(k_count);
    for k in 0..k_count {
        let f = latent.factors.column(k);
        let ff: f64 = f.iter().map(|&v| v * v).sum();
        let fz: f64 = f.iter().zip(column.iter()).map(|(&v, &x)| v * (x - grand_mean)).sum();
        let log_ml = -0.5 * n * (stats::LN_2PI + residual_var.ln())
            - 0.5 * (1.0 + tau_sq * ff / residual_var).ln()
            - 0.5 * r / residual_var
            + 0.5 * tau_sq * fz * fz / (residual_var * (residual_var + tau_sq * ff));
        out.push(log_ml);
    }
    out
}

/// Collapsed assignment draw: categorical over clusters with the loading
/// marginalized out; the prior over clusters is uniform.
pub fn sample_assignment<R: Rng + ?Sized>(
    variable: usize,
    values: &Array2<f64>,
    params: &FactorParams,
    latent: &LatentState,
    tau_v: f64,
    rng: &mut R,
) -> usize {
    let log_ml = assignment_log_marginals(
        values.column(variable),
        params.grand_mean[variable],
        params.residual_var[variable],
        latent,
        tau_v,
    );
    stats::sample_from_log_weights(rng, &log_ml)
}

/// Conditional moments of a loading given its cluster's factor values.
pub fn loading_conditional(
    column: ArrayView1<f64>,
    grand_mean: f64,
    residual_var: f64,
    factor: ArrayView1<f64>,
    tau_v: f64,
) -> (f64, f64) {
    let ff: f64 = factor.iter().map(|&v| v * v).sum();
    let fz: f64 = factor.iter().zip(column.iter()).map(|(&v, &x)| v * (x - grand_mean)).sum();
    let precision = 1.0 / (tau_v * tau_v) + ff / residual_var;
    (fz / residual_var / precision, 1.0 / precision)
}

pub fn sample_loading<R: Rng + ?Sized>(
    variable: usize,
    values: &Array2<f64>,
    params: &FactorParams,
    latent: &LatentState,
    tau_v: f64,
    rng: &mut R,
) -> f64 {
    let (mean, var) = loading_conditional(
        values.column(variable),
        params.grand_mean[variable],
        params.residual_var[variable],
        latent.factors.column(params.assignment[variable]),
        tau_v,
    );
    stats::draw_normal(rng, mean, var.sqrt())
}

/// Per-variable inverse-gamma draw for the residual variances.
pub fn sample_residual_variances<R: Rng + ?Sized>(
    values: &Array2<f64>,
    params: &FactorParams,
    latent: &LatentState,
    a0: f64,
    b0: f64,
    rng: &mut R,
) -> Vec<f64> {
    sample_residual_variances_impl(values, params, latent, a0, b0, false, rng)
}

/// Same update with the conditional shape doubled; used only by the
/// joint-distribution diagnostic to confirm it detects a broken update.
pub(crate) fn sample_residual_variances_broken<R: Rng + ?Sized>(
    values: &Array2<f64>,
    params: &FactorParams,
    latent: &LatentState,
    a0: f64,
    b0: f64,
    rng: &mut R,
) -> Vec<f64> {
    sample_residual_variances_impl(values, params, latent, a0, b0, true, rng)
}

fn sample_residual_variances_impl<R: Rng + ?Sized>(
    values: &Array2<f64>,
    params: &FactorParams,
    latent: &LatentState,
    a0: f64,
    b0: f64,
    broken_shape: bool,
    rng: &mut R,
) -> Vec<f64> {
    let (n, p) = values.dim();
    let mut out = Vec::with_capacity(p);
    for i in 0..p {
        let k = params.assignment[i];
        let mut rss = 0.0;
        for j in 0..n {
            let r = values[[j, i]] - params.grand_mean[i] - params.loading[i] * latent.factors[[j, k]];
            rss += r * r;
        }
        let shape = if broken_shape { a0 + n as f64 } else { a0 + n as f64 / 2.0 };
        out.push(stats::draw_inv_gamma(rng, shape, b0 + rss / 2.0));
    }
    out
}

/// Conditional moments of one grand-mean entry.
pub fn grand_mean_conditional(residual_sum: f64, n: usize, residual_var: f64) -> (f64, f64) {
    let prior_var = GRAND_MEAN_PRIOR_SD * GRAND_MEAN_PRIOR_SD;
    let precision = 1.0 / prior_var + n as f64 / residual_var;
    (residual_sum / residual_var / precision, 1.0 / precision)
}

pub fn sample_grand_mean<R: Rng + ?Sized>(
    values: &Array2<f64>,
    params: &FactorParams,
    latent: &LatentState,
    rng: &mut R,
) -> Vec<f64> {
    let (n, p) = values.dim();
    let mut out = Vec::with_capacity(p);
    for i in 0..p {
        let k = params.assignment[i];
        let mut sum = 0.0;
        for j in 0..n {
            sum += values[[j, i]] - params.loading[i] * latent.factors[[j, k]];
        }
        let (mean, var) = grand_mean_conditional(sum, n, params.residual_var[i]);
        out.push(stats::draw_normal(rng, mean, var.sqrt()));
    }
    out
}

fn flip_cluster(params: &mut FactorParams, latent: &mut LatentState, k: usize) {
    for i in 0..params.n_variables() {
        if params.assignment[i] == k {
            params.loading[i] = -params.loading[i];
        }
    }
    for j in 0..latent.factors.nrows() {
        latent.factors[[j, k]] = -latent.factors[[j, k]];
    }
}

/// Enforces the per-cluster sign convention (loading sums nonnegative) by
/// sign flips that leave the joint model density exactly unchanged.
///
/// Unmatched clusters flip alone: loadings, latent column, and specific
/// effects are negated together. A matched pair must flip as a unit (both
/// sides plus the shared effects) because the shared effects tie the two
/// latent signs together; the flip is keyed on the X side, so a matched Y
/// cluster's loading sum is not individually constrained.
pub fn enforce_sign_convention(
    x_params: &mut FactorParams,
    x_latent: &mut LatentState,
    y_params: &mut FactorParams,
    y_latent: &mut LatentState,
    effects: &mut EffectDecomposition,
    matching: &MatchingState,
) -> usize {
    let mut flips = 0;
    let x_sums = x_params.loading_sums();
    for kx in 0..x_params.n_clusters {
        if x_sums[kx] >= 0.0 {
            continue;
        }
        flips += 1;
        flip_cluster(x_params, x_latent, kx);
        effects.specific_x.negate_cluster(kx);
        if let Some(ky) = matching.x_partner(kx) {
            effects.shared.negate_cluster(kx);
            flip_cluster(y_params, y_latent, ky);
            effects.specific_y.negate_cluster(ky);
        }
    }
    let y_sums = y_params.loading_sums();
    for ky in 0..y_params.n_clusters {
        if y_sums[ky] >= 0.0 || matching.y_partner(ky).is_some() {
            continue;
        }
        flips += 1;
        flip_cluster(y_params, y_latent, ky);
        effects.specific_y.negate_cluster(ky);
    }
    flips
}
