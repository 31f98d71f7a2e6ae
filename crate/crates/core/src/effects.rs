//! Covariate effects acting on the latent factors.
//!
//! Effects follow a two-way layout per cluster: a per-state time effect, a
//! disease main effect, and a state-by-disease interaction, each with
//! reference-level (corner) constraints: state 0 carries no time or
//! interaction effect and the healthy level carries no disease terms. Matched
//! cluster pairs share one set of effects across both datasets; every cluster
//! additionally has dataset-specific effects.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Design;
use crate::error::{Error, Result};
use crate::matching::MatchingState;
use crate::stats;

/// One two-way effect table over `K` clusters and `S` states.
///
/// `time[[0, k]]` and `interaction[[0, k]]` are pinned to zero (reference
/// state); `disease[k]` is the effect at the diseased level, the healthy
/// level being the reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectSet {
    pub time: Array2<f64>,
    pub disease: Vec<f64>,
    pub interaction: Array2<f64>,
}

impl EffectSet {
    pub fn zeros(n_states: usize, n_clusters: usize) -> Self {
        Self {
            time: Array2::zeros((n_states, n_clusters)),
            disease: vec![0.0; n_clusters],
            interaction: Array2::zeros((n_states, n_clusters)),
        }
    }

    pub fn n_states(&self) -> usize {
        self.time.nrows()
    }

    pub fn n_clusters(&self) -> usize {
        self.time.ncols()
    }

    /// Contribution of cluster `k` at a given cell.
    pub fn cell_value(&self, k: usize, state: usize, diseased: bool) -> f64 {
        let mut v = self.time[[state, k]];
        if diseased {
            v += self.disease[k] + self.interaction[[state, k]];
        }
        v
    }

    pub fn negate_cluster(&mut self, k: usize) {
        for s in 0..self.n_states() {
            self.time[[s, k]] = -self.time[[s, k]];
            self.interaction[[s, k]] = -self.interaction[[s, k]];
        }
        self.disease[k] = -self.disease[k];
    }

    pub fn zero_cluster(&mut self, k: usize) {
        for s in 0..self.n_states() {
            self.time[[s, k]] = 0.0;
            self.interaction[[s, k]] = 0.0;
        }
        self.disease[k] = 0.0;
    }
}

/// Shared and dataset-specific effect tables.
///
/// Shared effects are stored in per-X-cluster slots: the slot of an X cluster
/// holds the shared effects of the pair it belongs to and is zeroed while the
/// cluster is unmatched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectDecomposition {
    pub shared: EffectSet,
    pub specific_x: EffectSet,
    pub specific_y: EffectSet,
}

impl EffectDecomposition {
    pub fn zeros(n_states: usize, k_x: usize, k_y: usize) -> Self {
        Self {
            shared: EffectSet::zeros(n_states, k_x),
            specific_x: EffectSet::zeros(n_states, k_x),
            specific_y: EffectSet::zeros(n_states, k_y),
        }
    }

    pub fn n_states(&self) -> usize {
        self.shared.n_states()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DatasetTag {
    X,
    Y,
}

/// Effect prior configuration. Specific effects get a tighter prior than
/// shared ones, biasing explanation toward shared terms when both fit.
#[derive(Debug, Clone, Copy)]
pub struct EffectConfig {
    pub tau_e_sq: f64,
    pub tau_spec_sq: f64,
    pub include_disease: bool,
}

/// Latent values of one dataset together with the cell labels of each row.
#[derive(Clone, Copy)]
pub struct DatasetLatent<'a> {
    pub latent: &'a Array2<f64>,
    pub states: &'a [usize],
    pub diseased: &'a [bool],
}

/// Mean of the latent factor of cluster `k` at cell `(state, diseased)`.
///
/// Matched clusters receive the shared effects of their pair plus their own
/// specific effects; unmatched clusters receive specific effects only.
pub fn latent_mean(
    decomp: &EffectDecomposition,
    matching: &MatchingState,
    tag: DatasetTag,
    k: usize,
    state: usize,
    diseased: bool,
) -> f64 {
    match tag {
        DatasetTag::X => {
            let mut v = decomp.specific_x.cell_value(k, state, diseased);
            if matching.x_partner(k).is_some() {
                v += decomp.shared.cell_value(k, state, diseased);
            }
            v
        }
        DatasetTag::Y => {
            let mut v = decomp.specific_y.cell_value(k, state, diseased);
            if let Some(kx) = matching.y_partner(k) {
                v += decomp.shared.cell_value(kx, state, diseased);
            }
            v
        }
    }
}

/// Per-sample latent means (n x K) given the current states.
pub fn latent_mean_matrix(
    decomp: &EffectDecomposition,
    matching: &MatchingState,
    tag: DatasetTag,
    states_by_row: &[usize],
    design: &Design,
    n_clusters: usize,
) -> Array2<f64> {
    let n = states_by_row.len();
    let mut out = Array2::zeros((n, n_clusters));
    for j in 0..n {
        for k in 0..n_clusters {
            out[[j, k]] =
                latent_mean(decomp, matching, tag, k, states_by_row[j], design.diseased_by_row[j]);
        }
    }
    out
}

/// Per-state latent means (S x K) at a fixed disease level, used as the
/// emission table when sampling state paths.
pub fn state_mean_table(
    decomp: &EffectDecomposition,
    matching: &MatchingState,
    tag: DatasetTag,
    diseased: bool,
    n_clusters: usize,
    n_states: usize,
) -> Array2<f64> {
    let mut out = Array2::zeros((n_states, n_clusters));
    for s in 0..n_states {
        for k in 0..n_clusters {
            out[[s, k]] = latent_mean(decomp, matching, tag, k, s, diseased);
        }
    }
    out
}

/// Which cells an effect entry acts on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum EntryKind {
    Time(usize),
    Interaction(usize),
    Disease,
}

impl EntryKind {
    pub(crate) fn active(self, state: usize, diseased: bool) -> bool {
        match self {
            EntryKind::Time(s) => state == s,
            EntryKind::Interaction(s) => state == s && diseased,
            EntryKind::Disease => diseased,
        }
    }
}

fn entry_kinds(n_states: usize, include_disease: bool) -> Vec<EntryKind> {
    let mut kinds = Vec::with_capacity(2 * n_states - 1);
    for s in 1..n_states {
        kinds.push(EntryKind::Time(s));
    }
    for s in 1..n_states {
        kinds.push(EntryKind::Interaction(s));
    }
    if include_disease {
        kinds.push(EntryKind::Disease);
    }
    kinds
}

fn entry_value(set: &EffectSet, k: usize, kind: EntryKind) -> f64 {
    match kind {
        EntryKind::Time(s) => set.time[[s, k]],
        EntryKind::Interaction(s) => set.interaction[[s, k]],
        EntryKind::Disease => set.disease[k],
    }
}

fn set_entry_value(set: &mut EffectSet, k: usize, kind: EntryKind, v: f64) {
    match kind {
        EntryKind::Time(s) => set.time[[s, k]] = v,
        EntryKind::Interaction(s) => set.interaction[[s, k]] = v,
        EntryKind::Disease => set.disease[k] = v,
    }
}

/// Residual count and sum for one entry over one dataset's rows, with the
/// entry's own contribution removed.
fn residual_stats(
    data: &DatasetLatent<'_>,
    decomp: &EffectDecomposition,
    matching: &MatchingState,
    tag: DatasetTag,
    k: usize,
    kind: EntryKind,
    current: f64,
) -> (f64, f64) {
    let mut count = 0.0;
    let mut sum = 0.0;
    for j in 0..data.states.len() {
        if kind.active(data.states[j], data.diseased[j]) {
            let full = latent_mean(decomp, matching, tag, k, data.states[j], data.diseased[j]);
            sum += data.latent[[j, k]] - (full - current);
            count += 1.0;
        }
    }
    (count, sum)
}

fn draw_entry<R: Rng + ?Sized>(count: f64, sum: f64, prior_var: f64, rng: &mut R) -> f64 {
    let precision = count + 1.0 / prior_var;
    stats::draw_normal(rng, sum / precision, (1.0 / precision).sqrt())
}

/// Scalar Gaussian full-conditional moments for an effect entry: residual
/// sums pooled over the relevant cells against a zero-mean prior.
pub fn entry_conditional(count: f64, residual_sum: f64, prior_var: f64) -> (f64, f64) {
    let precision = count + 1.0 / prior_var;
    (residual_sum / precision, 1.0 / precision)
}

/// Resample the shared entries of a matched pair from their full conditionals.
pub(crate) fn resample_shared_slot<R: Rng + ?Sized>(
    x: &DatasetLatent<'_>,
    y: &DatasetLatent<'_>,
    matching: &MatchingState,
    cfg: &EffectConfig,
    decomp: &mut EffectDecomposition,
    kx: usize,
    rng: &mut R,
) {
    let ky = matching.x_partner(kx).expect("shared slot resample requires a link");
    for kind in entry_kinds(decomp.n_states(), cfg.include_disease) {
        let current = entry_value(&decomp.shared, kx, kind);
        let (nx, sx) = residual_stats(x, decomp, matching, DatasetTag::X, kx, kind, current);
        let (ny, sy) = residual_stats(y, decomp, matching, DatasetTag::Y, ky, kind, current);
        let v = draw_entry(nx + ny, sx + sy, cfg.tau_e_sq, rng);
        set_entry_value(&mut decomp.shared, kx, kind, v);
    }
}

/// Resample the specific entries of one cluster from their full conditionals.
pub(crate) fn resample_specific<R: Rng + ?Sized>(
    data: &DatasetLatent<'_>,
    matching: &MatchingState,
    cfg: &EffectConfig,
    decomp: &mut EffectDecomposition,
    tag: DatasetTag,
    k: usize,
    rng: &mut R,
) {
    for kind in entry_kinds(decomp.n_states(), cfg.include_disease) {
        let set = match tag {
            DatasetTag::X => &decomp.specific_x,
            DatasetTag::Y => &decomp.specific_y,
        };
        let current = entry_value(set, k, kind);
        let (n, s) = residual_stats(data, decomp, matching, tag, k, kind, current);
        let v = draw_entry(n, s, cfg.tau_spec_sq, rng);
        let set = match tag {
            DatasetTag::X => &mut decomp.specific_x,
            DatasetTag::Y => &mut decomp.specific_y,
        };
        set_entry_value(set, k, kind, v);
    }
}

/// One Gibbs pass over every effect entry: shared slots first, then the
/// specific entries of both datasets. Reference-level entries are never
/// touched and stay zero.
pub fn sample_effects<R: Rng + ?Sized>(
    x: &DatasetLatent<'_>,
    y: &DatasetLatent<'_>,
    matching: &MatchingState,
    cfg: &EffectConfig,
    decomp: &mut EffectDecomposition,
    rng: &mut R,
) {
    for kx in 0..decomp.shared.n_clusters() {
        if matching.x_partner(kx).is_some() {
            resample_shared_slot(x, y, matching, cfg, decomp, kx, rng);
        }
    }
    for k in 0..decomp.specific_x.n_clusters() {
        resample_specific(x, matching, cfg, decomp, DatasetTag::X, k, rng);
    }
    for k in 0..decomp.specific_y.n_clusters() {
        resample_specific(y, matching, cfg, decomp, DatasetTag::Y, k, rng);
    }
}

/// Log-prior of the shared entries of matched slots; zero when nothing is
/// matched (unmatched slots are parked at zero and carry no prior term).
pub fn shared_log_prior(
    decomp: &EffectDecomposition,
    matching: &MatchingState,
    cfg: &EffectConfig,
) -> f64 {
    let mut acc = 0.0;
    for kx in 0..decomp.shared.n_clusters() {
        if matching.x_partner(kx).is_some() {
            for kind in entry_kinds(decomp.n_states(), cfg.include_disease) {
                acc += stats::ln_normal_pdf(
                    entry_value(&decomp.shared, kx, kind),
                    0.0,
                    cfg.tau_e_sq,
                );
            }
        }
    }
    acc
}

/// Log-prior of one dataset's specific effect entries.
pub fn specific_log_prior(set: &EffectSet, tau_spec_sq: f64, include_disease: bool) -> f64 {
    let mut acc = 0.0;
    for k in 0..set.n_clusters() {
        for kind in entry_kinds(set.n_states(), include_disease) {
            acc += stats::ln_normal_pdf(entry_value(set, k, kind), 0.0, tau_spec_sq);
        }
    }
    acc
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Significance {
    SignificantPos,
    SignificantNeg,
    Null,
}

/// Classifies a posterior trace of one effect entry and reports the fraction
/// of samples whose magnitude exceeds `epsilon`.
pub fn effect_significance(
    values: &[f64],
    level: f64,
    epsilon: f64,
) -> Result<(Significance, f64)> {
    if values.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite trace values"));
    let tail = (1.0 - level) / 2.0;
    let lower = stats::quantile(&sorted, tail);
    let upper = stats::quantile(&sorted, 1.0 - tail);
    let verdict = if lower > 0.0 {
        Significance::SignificantPos
    } else if upper < 0.0 {
        Significance::SignificantNeg
    } else {
        Significance::Null
    };
    let found = values.iter().filter(|v| v.abs() > epsilon).count() as f64 / values.len() as f64;
    Ok((verdict, found))
}
