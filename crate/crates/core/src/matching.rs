//! Posterior sampling over partial injective matchings between X clusters and
//! Y clusters.
//!
//! A link asserts that two clusters share one set of covariate effects. Link
//! and break moves are evaluated on the collapsed model: all effect entries
//! are integrated out analytically under their Gaussian priors, which reduces
//! the marginal likelihood of a cluster (or a linked pair) to a closed-form
//! Gaussian integral over per-(state, disease) cell statistics. The move pair
//! is a reversible Metropolis-Hastings kernel with a uniform-partner proposal.

use nalgebra::{Cholesky, DMatrix, DVector};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::effects::{DatasetLatent, EffectConfig};
use crate::error::{Error, Result};
use crate::stats::LN_2PI;

/// A partial injective map between X clusters and Y clusters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchingState {
    x_to_y: Vec<Option<usize>>,
    y_to_x: Vec<Option<usize>>,
}

impl MatchingState {
    pub fn empty(k_x: usize, k_y: usize) -> Self {
        Self { x_to_y: vec![None; k_x], y_to_x: vec![None; k_y] }
    }

    pub fn from_links(k_x: usize, k_y: usize, links: &[(usize, usize)]) -> Result<Self> {
        let mut m = Self::empty(k_x, k_y);
        for &(kx, ky) in links {
            m.link(kx, ky)?;
        }
        Ok(m)
    }

    pub fn k_x(&self) -> usize {
        self.x_to_y.len()
    }

    pub fn k_y(&self) -> usize {
        self.y_to_x.len()
    }

    pub fn x_partner(&self, kx: usize) -> Option<usize> {
        self.x_to_y[kx]
    }

    pub fn y_partner(&self, ky: usize) -> Option<usize> {
        self.y_to_x[ky]
    }

    pub fn n_links(&self) -> usize {
        self.x_to_y.iter().flatten().count()
    }

    pub fn links(&self) -> Vec<(usize, usize)> {
        self.x_to_y
            .iter()
            .enumerate()
            .filter_map(|(kx, ky)| ky.map(|ky| (kx, ky)))
            .collect()
    }

    pub fn unmatched_y(&self) -> Vec<usize> {
        (0..self.k_y()).filter(|&ky| self.y_to_x[ky].is_none()).collect()
    }

    pub fn link(&mut self, kx: usize, ky: usize) -> Result<()> {
        if kx >= self.k_x() {
            return Err(Error::ClusterOutOfRange { index: kx, k: self.k_x() });
        }
        if ky >= self.k_y() {
            return Err(Error::ClusterOutOfRange { index: ky, k: self.k_y() });
        }
        if self.x_to_y[kx].is_some() || self.y_to_x[ky].is_some() {
            return Err(Error::AlreadyMatched(kx));
        }
        self.x_to_y[kx] = Some(ky);
        self.y_to_x[ky] = Some(kx);
        Ok(())
    }

    /// Removes the link of `kx`, returning its former partner.
    pub fn unlink(&mut self, kx: usize) -> Result<usize> {
        let ky = self.x_to_y[kx].ok_or(Error::LinkAbsent(kx))?;
        self.x_to_y[kx] = None;
        self.y_to_x[ky] = None;
        Ok(ky)
    }
}

/// Number of partial injective matchings between `k_x` and `k_y` clusters.
pub fn count_matchings(k_x: usize, k_y: usize) -> f64 {
    let mut total = 0.0;
    let cap = k_x.min(k_y);
    for m in 0..=cap {
        // C(k_x, m) * C(k_y, m) * m!
        let mut term = 1.0f64;
        for i in 0..m {
            term *= (k_x - i) as f64 * (k_y - i) as f64 / (i + 1) as f64;
        }
        total += term;
    }
    total
}

/// Every partial injective matching; only sensible for small cluster counts.
pub fn all_matchings(k_x: usize, k_y: usize) -> Vec<MatchingState> {
    let mut out = Vec::new();
    let mut current = MatchingState::empty(k_x, k_y);
    fn recurse(kx: usize, current: &mut MatchingState, out: &mut Vec<MatchingState>) {
        if kx == current.k_x() {
            out.push(current.clone());
            return;
        }
        recurse(kx + 1, current, out);
        for ky in current.unmatched_y() {
            current.link(kx, ky).expect("candidate is unmatched");
            recurse(kx + 1, current, out);
            current.unlink(kx).expect("just linked");
        }
    }
    recurse(0, &mut current, &mut out);
    out
}

/// Sufficient statistics of one latent column grouped by (state, disease)
/// cell: per-cell counts and sums plus the total sum of squares.
#[derive(Debug, Clone, PartialEq)]
pub struct CellStats {
    n_states: usize,
    count: Vec<f64>,
    sum: Vec<f64>,
    total_n: f64,
    total_sumsq: f64,
}

impl CellStats {
    pub fn empty(n_states: usize) -> Self {
        Self {
            n_states,
            count: vec![0.0; 2 * n_states],
            sum: vec![0.0; 2 * n_states],
            total_n: 0.0,
            total_sumsq: 0.0,
        }
    }

    pub fn from_latent(data: &DatasetLatent<'_>, k: usize, n_states: usize) -> Self {
        let mut stats = Self::empty(n_states);
        for j in 0..data.states.len() {
            stats.push(data.states[j], data.diseased[j], data.latent[[j, k]]);
        }
        stats
    }

    pub fn push(&mut self, state: usize, diseased: bool, value: f64) {
        let idx = 2 * state + usize::from(diseased);
        self.count[idx] += 1.0;
        self.sum[idx] += value;
        self.total_n += 1.0;
        self.total_sumsq += value * value;
    }

    fn cells(&self) -> impl Iterator<Item = (usize, bool, f64, f64)> + '_ {
        (0..self.count.len()).filter(|&i| self.count[i] > 0.0).map(move |i| {
            (i / 2, i % 2 == 1, self.count[i], self.sum[i])
        })
    }
}

#[derive(Clone, Copy)]
enum Side {
    Both,
    XOnly,
    YOnly,
}

#[derive(Clone, Copy)]
struct EntryDesc {
    kind: crate::effects::EntryKind,
    side: Side,
    prior_var: f64,
}

fn specific_entries(cfg: &EffectConfig, n_states: usize, side: Side) -> Vec<EntryDesc> {
    let mut out = Vec::new();
    for s in 1..n_states {
        out.push(EntryDesc { kind: crate::effects::EntryKind::Time(s), side, prior_var: cfg.tau_spec_sq });
    }
    for s in 1..n_states {
        out.push(EntryDesc {
            kind: crate::effects::EntryKind::Interaction(s),
            side,
            prior_var: cfg.tau_spec_sq,
        });
    }
    if cfg.include_disease {
        out.push(EntryDesc { kind: crate::effects::EntryKind::Disease, side, prior_var: cfg.tau_spec_sq });
    }
    out
}

fn shared_entries(cfg: &EffectConfig, n_states: usize) -> Vec<EntryDesc> {
    let mut out = Vec::new();
    for s in 1..n_states {
        out.push(EntryDesc { kind: crate::effects::EntryKind::Time(s), side: Side::Both, prior_var: cfg.tau_e_sq });
    }
    for s in 1..n_states {
        out.push(EntryDesc {
            kind: crate::effects::EntryKind::Interaction(s),
            side: Side::Both,
            prior_var: cfg.tau_e_sq,
        });
    }
    if cfg.include_disease {
        out.push(EntryDesc { kind: crate::effects::EntryKind::Disease, side: Side::Both, prior_var: cfg.tau_e_sq });
    }
    out
}

fn side_covers(side: Side, is_x: bool) -> bool {
    match side {
        Side::Both => true,
        Side::XOnly => is_x,
        Side::YOnly => !is_x,
    }
}

/// Log marginal likelihood of latent cell statistics under a Gaussian linear
/// model with the listed effect entries integrated out.
///
/// With unit latent variance the marginal is N(0, I + A D A'); the Woodbury
/// identity reduces it to an m x m solve over the entry block, with per-cell
/// counts and sums as sufficient statistics.
fn gaussian_marginal(groups: &[(bool, &CellStats)], entries: &[EntryDesc]) -> f64 {
    let m = entries.len();
    let mut total_n = 0.0;
    let mut total_ss = 0.0;
    for (_, stats) in groups {
        total_n += stats.total_n;
        total_ss += stats.total_sumsq;
    }
    if total_n == 0.0 {
        return 0.0;
    }
    if m == 0 {
        return -0.5 * (total_n * LN_2PI + total_ss);
    }

    // G = A'A and h = A'z accumulated from per-cell statistics.
    let mut g = DMatrix::<f64>::zeros(m, m);
    let mut h = DVector::<f64>::zeros(m);
    let mut coeff = vec![0usize; m];
    for &(is_x, stats) in groups {
        for (state, diseased, count, sum) in stats.cells() {
            let mut active = 0;
            for (e, entry) in entries.iter().enumerate() {
                if side_covers(entry.side, is_x) && entry.kind.active(state, diseased) {
                    coeff[active] = e;
                    active += 1;
                }
            }
            for a in 0..active {
                h[coeff[a]] += sum;
                for b in 0..active {
                    g[(coeff[a], coeff[b])] += count;
                }
            }
        }
    }

    // W = I + D^{1/2} G D^{1/2}; log|Sigma| = log|W|,
    // z'Sigma^{-1}z = z'z - (D^{1/2}h)' W^{-1} (D^{1/2}h).
    let sqrt_d: Vec<f64> = entries.iter().map(|e| e.prior_var.sqrt()).collect();
    let mut w = DMatrix::<f64>::identity(m, m);
    for a in 0..m {
        for b in 0..m {
            w[(a, b)] += sqrt_d[a] * g[(a, b)] * sqrt_d[b];
        }
    }
    let v = DVector::from_iterator(m, (0..m).map(|a| sqrt_d[a] * h[a]));
    let chol = Cholesky::new(w).expect("I + PSD matrix is positive definite");
    let log_det: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    let solved = chol.solve(&v);
    let quad = total_ss - v.dot(&solved);
    -0.5 * (total_n * LN_2PI + log_det + quad)
}

/// Log marginal likelihood of one cluster modeled by specific effects alone.
pub fn specific_marginal_loglik(cells: &CellStats, is_x: bool, cfg: &EffectConfig) -> f64 {
    let side = if is_x { Side::XOnly } else { Side::YOnly };
    gaussian_marginal(&[(is_x, cells)], &specific_entries(cfg, cells.n_states, side))
}

/// Log marginal likelihood of a linked pair: shared effects act on both
/// clusters, specific effects on their own dataset, all integrated out.
pub fn linked_marginal_loglik(
    x_cells: &CellStats,
    y_cells: &CellStats,
    cfg: &EffectConfig,
) -> f64 {
    let n_states = x_cells.n_states;
    let mut entries = shared_entries(cfg, n_states);
    entries.extend(specific_entries(cfg, n_states, Side::XOnly));
    entries.extend(specific_entries(cfg, n_states, Side::YOnly));
    gaussian_marginal(&[(true, x_cells), (false, y_cells)], &entries)
}

/// Collapsed log-likelihood difference of linking a pair versus leaving both
/// clusters specific.
pub fn link_delta(x_cells: &CellStats, y_cells: &CellStats, cfg: &EffectConfig) -> f64 {
    linked_marginal_loglik(x_cells, y_cells, cfg)
        - specific_marginal_loglik(x_cells, true, cfg)
        - specific_marginal_loglik(y_cells, false, cfg)
}

/// Latent state the matching moves condition on.
#[derive(Clone, Copy)]
pub struct MoveContext<'a> {
    pub x: DatasetLatent<'a>,
    pub y: DatasetLatent<'a>,
    pub cfg: &'a EffectConfig,
    pub n_states: usize,
}

impl MoveContext<'_> {
    pub fn x_cells(&self, kx: usize) -> CellStats {
        CellStats::from_latent(&self.x, kx, self.n_states)
    }

    pub fn y_cells(&self, ky: usize) -> CellStats {
        CellStats::from_latent(&self.y, ky, self.n_states)
    }

    pub fn link_delta(&self, kx: usize, ky: usize) -> f64 {
        link_delta(&self.x_cells(kx), &self.y_cells(ky), self.cfg)
    }
}

/// Metropolis-Hastings link proposal between two unmatched clusters.
///
/// The acceptance ratio is exp(delta) times the proposal correction `u`, the
/// number of unmatched Y clusters the partner was drawn from; the reverse
/// break move proposes deterministically, making the pair reversible.
pub fn propose_link<R: Rng + ?Sized>(
    matching: &mut MatchingState,
    kx: usize,
    ky: usize,
    ctx: &MoveContext<'_>,
    rng: &mut R,
) -> Result<bool> {
    if matching.x_partner(kx).is_some() || matching.y_partner(ky).is_some() {
        return Err(Error::AlreadyMatched(kx));
    }
    let u = matching.unmatched_y().len() as f64;
    let ln_accept = ctx.link_delta(kx, ky) + u.ln();
    let accept = ln_accept >= 0.0 || rng.random::<f64>().ln() < ln_accept;
    if accept {
        matching.link(kx, ky)?;
    }
    Ok(accept)
}

/// Metropolis-Hastings break proposal for an existing link; reciprocal ratio
/// of [`propose_link`].
pub fn propose_break<R: Rng + ?Sized>(
    matching: &mut MatchingState,
    kx: usize,
    ctx: &MoveContext<'_>,
    rng: &mut R,
) -> Result<bool> {
    let ky = matching.x_partner(kx).ok_or(Error::LinkAbsent(kx))?;
    // Unmatched-Y count in the proposed (broken) state.
    let u = (matching.unmatched_y().len() + 1) as f64;
    let ln_accept = -ctx.link_delta(kx, ky) - u.ln();
    let accept = ln_accept >= 0.0 || rng.random::<f64>().ln() < ln_accept;
    if accept {
        matching.unlink(kx)?;
    }
    Ok(accept)
}

/// One matching sweep: every X cluster, in random order, attempts one move.
/// Returns the accepted moves as (x cluster, linked partner or None).
pub fn matching_sweep<R: Rng + ?Sized>(
    matching: &mut MatchingState,
    ctx: &MoveContext<'_>,
    rng: &mut R,
) -> Result<Vec<(usize, Option<usize>)>> {
    let mut order: Vec<usize> = (0..matching.k_x()).collect();
    order.shuffle(rng);
    let mut accepted = Vec::new();
    for kx in order {
        if matching.x_partner(kx).is_some() {
            if propose_break(matching, kx, ctx, rng)? {
                accepted.push((kx, None));
            }
        } else {
            let free = matching.unmatched_y();
            if free.is_empty() {
                continue;
            }
            let ky = free[rng.random_range(0..free.len())];
            if propose_link(matching, kx, ky, ctx, rng)? {
                accepted.push((kx, Some(ky)));
            }
        }
    }
    Ok(accepted)
}

/// Link and unmatched frequencies over a trace of matchings. Each row's link
/// frequencies plus its unmatched frequency sum to one, and symmetrically for
/// columns.
pub fn pairing_posterior(
    trace: &[MatchingState],
) -> Result<(Array2<f64>, Vec<f64>, Vec<f64>)> {
    let first = trace.first().ok_or(Error::EmptyTrace)?;
    let (k_x, k_y) = (first.k_x(), first.k_y());
    let mut freq = Array2::zeros((k_x, k_y));
    let mut unmatched_x = vec![0.0; k_x];
    let mut unmatched_y = vec![0.0; k_y];
    for m in trace {
        for kx in 0..k_x {
            match m.x_partner(kx) {
                Some(ky) => freq[[kx, ky]] += 1.0,
                None => unmatched_x[kx] += 1.0,
            }
        }
        for ky in 0..k_y {
            if m.y_partner(ky).is_none() {
                unmatched_y[ky] += 1.0;
            }
        }
    }
    let n = trace.len() as f64;
    freq.mapv_inplace(|v| v / n);
    unmatched_x.iter_mut().for_each(|v| *v /= n);
    unmatched_y.iter_mut().for_each(|v| *v /= n);
    Ok((freq, unmatched_x, unmatched_y))
}
