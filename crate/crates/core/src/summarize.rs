//! Posterior summaries of a trace: pairing-probability tables, effect
//! summaries with significance verdicts and found-fractions, and
//! state-occupancy-by-time tables.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::effects::{effect_significance, Significance};
use crate::error::{Error, Result};
use crate::matching;
use crate::sampler::Trace;
use crate::stats;

/// Link frequencies plus per-cluster unmatched frequencies. Every row's link
/// frequencies and its unmatched frequency sum to one, and symmetrically for
/// columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairingTable {
    pub link_freq: Array2<f64>,
    pub unmatched_x: Vec<f64>,
    pub unmatched_y: Vec<f64>,
}

impl PairingTable {
    pub fn validate(&self) -> Result<()> {
        let (k_x, k_y) = self.link_freq.dim();
        for kx in 0..k_x {
            let row: f64 =
                (0..k_y).map(|ky| self.link_freq[[kx, ky]]).sum::<f64>() + self.unmatched_x[kx];
            if (row - 1.0).abs() > 1e-12 {
                return Err(Error::DimensionMismatch(format!(
                    "pairing row {kx} sums to {row}"
                )));
            }
        }
        for ky in 0..k_y {
            let col: f64 =
                (0..k_x).map(|kx| self.link_freq[[kx, ky]]).sum::<f64>() + self.unmatched_y[ky];
            if (col - 1.0).abs() > 1e-12 {
                return Err(Error::DimensionMismatch(format!(
                    "pairing column {ky} sums to {col}"
                )));
            }
        }
        Ok(())
    }

    /// Rank of each link frequency within its row, 1 = largest.
    pub fn row_rank(&self, kx: usize, ky: usize) -> usize {
        let v = self.link_freq[[kx, ky]];
        1 + (0..self.link_freq.ncols())
            .filter(|&other| self.link_freq[[kx, other]] > v)
            .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EffectScope {
    Shared { x_cluster: usize, y_cluster: usize },
    SpecificX { cluster: usize },
    SpecificY { cluster: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EffectKind {
    Time,
    Disease,
    Interaction,
}

/// Posterior summary of one effect entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectSummary {
    pub scope: EffectScope,
    pub kind: EffectKind,
    /// 0-based state for time and interaction entries, `None` for disease.
    pub state: Option<usize>,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub verdict: Significance,
    /// Fraction of all snapshots in which the effect is present and its
    /// magnitude exceeds the threshold.
    pub found_fraction: f64,
    /// Snapshots contributing values (equals the trace length for specific
    /// entries; the link occupancy count for shared entries).
    pub support: usize,
}

/// Per-ordinal-time distribution over states, aggregated across individuals
/// and snapshots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateOccupancy {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub pairing: PairingTable,
    pub effects: Vec<EffectSummary>,
    pub states: StateOccupancy,
    pub n_snapshots: usize,
    pub level: f64,
    pub epsilon: f64,
}

fn summarize_series(
    scope: EffectScope,
    kind: EffectKind,
    state: Option<usize>,
    series: &[f64],
    n_total: usize,
    found_count: usize,
    level: f64,
    epsilon: f64,
) -> EffectSummary {
    let support = series.len();
    let (mut verdict, _) = if support > 0 {
        effect_significance(series, level, epsilon).expect("nonempty series")
    } else {
        (Significance::Null, 0.0)
    };
    // A shared entry observed in only a sliver of the trace has no stable
    // interval; treat it as null rather than extrapolate.
    let min_support = 10.max(n_total / 20);
    if support < n_total && support < min_support {
        verdict = Significance::Null;
    }
    let (mean, lower, upper) = if support > 0 {
        let mut sorted = series.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite effects"));
        let tail = (1.0 - level) / 2.0;
        (
            stats::mean(series),
            stats::quantile(&sorted, tail),
            stats::quantile(&sorted, 1.0 - tail),
        )
    } else {
        (0.0, 0.0, 0.0)
    };
    EffectSummary {
        scope,
        kind,
        state,
        mean,
        lower,
        upper,
        verdict,
        found_fraction: found_count as f64 / n_total as f64,
        support,
    }
}

/// Computes all summaries from the snapshots of a trace; deterministic given
/// the trace.
pub fn summarize_trace(trace: &Trace, level: f64, epsilon: f64) -> Result<TraceSummary> {
    if trace.snapshots.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let n = trace.snapshots.len();
    let config = &trace.config;
    let s_count = config.n_states;

    let matchings: Vec<matching::MatchingState> =
        trace.snapshots.iter().map(|s| s.matching.clone()).collect();
    let (link_freq, unmatched_x, unmatched_y) = matching::pairing_posterior(&matchings)?;
    let pairing = PairingTable { link_freq, unmatched_x, unmatched_y };
    pairing.validate()?;

    let mut effects = Vec::new();

    // Shared entries, one summary per pair that ever occurs.
    for kx in 0..config.k_x {
        for ky in 0..config.k_y {
            if pairing.link_freq[[kx, ky]] == 0.0 {
                continue;
            }
            let linked: Vec<&crate::sampler::Snapshot> = trace
                .snapshots
                .iter()
                .filter(|s| s.matching.x_partner(kx) == Some(ky))
                .collect();
            let scope = EffectScope::Shared { x_cluster: kx, y_cluster: ky };
            for s in 1..s_count {
                for (kind, grab) in [
                    (EffectKind::Time, true),
                    (EffectKind::Interaction, false),
                ] {
                    let series: Vec<f64> = linked
                        .iter()
                        .map(|snap| {
                            if grab {
                                snap.effects.shared.time[[s, kx]]
                            } else {
                                snap.effects.shared.interaction[[s, kx]]
                            }
                        })
                        .collect();
                    let found = series.iter().filter(|v| v.abs() > epsilon).count();
                    effects.push(summarize_series(
                        scope,
                        kind,
                        Some(s),
                        &series,
                        n,
                        found,
                        level,
                        epsilon,
                    ));
                }
            }
            if config.include_beta_b {
                let series: Vec<f64> =
                    linked.iter().map(|snap| snap.effects.shared.disease[kx]).collect();
                let found = series.iter().filter(|v| v.abs() > epsilon).count();
                effects.push(summarize_series(
                    scope,
                    EffectKind::Disease,
                    None,
                    &series,
                    n,
                    found,
                    level,
                    epsilon,
                ));
            }
        }
    }

    // Specific entries: present in every snapshot.
    for (is_x, k_count) in [(true, config.k_x), (false, config.k_y)] {
        for k in 0..k_count {
            let scope = if is_x {
                EffectScope::SpecificX { cluster: k }
            } else {
                EffectScope::SpecificY { cluster: k }
            };
            for s in 1..s_count {
                for kind in [EffectKind::Time, EffectKind::Interaction] {
                    let series: Vec<f64> = trace
                        .snapshots
                        .iter()
                        .map(|snap| {
                            let set = if is_x {
                                &snap.effects.specific_x
                            } else {
                                &snap.effects.specific_y
                            };
                            match kind {
                                EffectKind::Time => set.time[[s, k]],
                                _ => set.interaction[[s, k]],
                            }
                        })
                        .collect();
                    let found = series.iter().filter(|v| v.abs() > epsilon).count();
                    effects.push(summarize_series(
                        scope,
                        kind,
                        Some(s),
                        &series,
                        n,
                        found,
                        level,
                        epsilon,
                    ));
                }
            }
            if config.include_beta_b {
                let series: Vec<f64> = trace
                    .snapshots
                    .iter()
                    .map(|snap| {
                        if is_x {
                            snap.effects.specific_x.disease[k]
                        } else {
                            snap.effects.specific_y.disease[k]
                        }
                    })
                    .collect();
                let found = series.iter().filter(|v| v.abs() > epsilon).count();
                effects.push(summarize_series(
                    scope,
                    EffectKind::Disease,
                    None,
                    &series,
                    n,
                    found,
                    level,
                    epsilon,
                ));
            }
        }
    }

    let states = StateOccupancy {
        x: occupancy(trace, true, s_count),
        y: occupancy(trace, false, s_count),
    };

    Ok(TraceSummary { pairing, effects, states, n_snapshots: n, level, epsilon })
}

fn occupancy(trace: &Trace, is_x: bool, s_count: usize) -> Array2<f64> {
    fn paths_of(snap: &crate::sampler::Snapshot, is_x: bool) -> &[Vec<usize>] {
        if is_x {
            &snap.paths_x
        } else {
            &snap.paths_y
        }
    }
    let t_max = trace
        .snapshots
        .iter()
        .flat_map(|s| paths_of(s, is_x).iter().map(Vec::len))
        .max()
        .unwrap_or(0);
    let mut counts = Array2::<f64>::zeros((t_max, s_count));
    let mut totals = vec![0.0; t_max];
    for snap in &trace.snapshots {
        for path in paths_of(snap, is_x) {
            for (t, &s) in path.iter().enumerate() {
                counts[[t, s]] += 1.0;
                totals[t] += 1.0;
            }
        }
    }
    for t in 0..t_max {
        if totals[t] > 0.0 {
            for s in 0..s_count {
                counts[[t, s]] /= totals[t];
            }
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::effects::EffectDecomposition;
    use crate::hmm::ChainParams;
    use crate::matching::MatchingState;
    use crate::sampler::{GibbsConfig, Snapshot, SweepScalars};
    use approx::assert_relative_eq;

    fn snapshot(matching: MatchingState, shared_t1_slot0: f64, spec_x_t1_c0: f64) -> Snapshot {
        let mut effects = EffectDecomposition::zeros(3, 2, 2);
        effects.shared.time[[1, 0]] = shared_t1_slot0;
        effects.specific_x.time[[1, 0]] = spec_x_t1_c0;
        Snapshot {
            effects,
            matching,
            chain_x: ChainParams::uniform(3, 0.5).unwrap(),
            chain_y: ChainParams::uniform(3, 0.5).unwrap(),
            assignment_x: vec![0, 1],
            assignment_y: vec![0, 1],
            paths_x: vec![vec![0, 1, 2]],
            paths_y: vec![vec![0, 0]],
            log_joint: -1.0,
        }
    }

    fn trace_of(snapshots: Vec<Snapshot>) -> Trace {
        let scalars = (0..snapshots.len())
            .map(|i| SweepScalars {
                sweep: i,
                burn_in: false,
                log_joint: -1.0,
                n_links: snapshots[i].matching.n_links(),
            })
            .collect();
        Trace {
            config: GibbsConfig { n_states: 3, k_x: 2, k_y: 2, ..GibbsConfig::default() },
            snapshots,
            scalars,
        }
    }

    #[test]
    fn constant_matching_gives_unit_frequency() {
        let m = MatchingState::from_links(2, 2, &[(0, 1)]).unwrap();
        let trace = trace_of(vec![snapshot(m, 1.4, 0.0); 20]);
        let summary = summarize_trace(&trace, 0.9, 0.1).unwrap();
        assert_relative_eq!(summary.pairing.link_freq[[0, 1]], 1.0);
        assert_relative_eq!(summary.pairing.unmatched_x[1], 1.0);
        summary.pairing.validate().unwrap();
        // The shared entry is present in every snapshot with value 1.4.
        let shared = summary
            .effects
            .iter()
            .find(|e| {
                e.scope == EffectScope::Shared { x_cluster: 0, y_cluster: 1 }
                    && e.kind == EffectKind::Time
                    && e.state == Some(1)
            })
            .unwrap();
        assert_eq!(shared.verdict, Significance::SignificantPos);
        assert_relative_eq!(shared.found_fraction, 1.0);
        assert_eq!(shared.support, 20);
    }

    #[test]
    fn single_snapshot_intervals_degenerate() {
        let m = MatchingState::empty(2, 2);
        let trace = trace_of(vec![snapshot(m, 0.0, 0.7)]);
        let summary = summarize_trace(&trace, 0.9, 0.1).unwrap();
        let spec = summary
            .effects
            .iter()
            .find(|e| {
                e.scope == EffectScope::SpecificX { cluster: 0 }
                    && e.kind == EffectKind::Time
                    && e.state == Some(1)
            })
            .unwrap();
        assert_relative_eq!(spec.lower, 0.7);
        assert_relative_eq!(spec.upper, 0.7);
        assert_relative_eq!(spec.mean, 0.7);
    }

    #[test]
    fn rare_shared_support_is_null() {
        // One linked snapshot among forty: even with a large value the shared
        // entry verdict stays null and the found fraction is tiny.
        let linked = snapshot(MatchingState::from_links(2, 2, &[(0, 0)]).unwrap(), 3.0, 0.0);
        let mut snaps = vec![snapshot(MatchingState::empty(2, 2), 0.0, 0.0); 39];
        snaps.push(linked);
        let trace = trace_of(snaps);
        let summary = summarize_trace(&trace, 0.9, 0.1).unwrap();
        let shared = summary
            .effects
            .iter()
            .find(|e| {
                e.scope == EffectScope::Shared { x_cluster: 0, y_cluster: 0 }
                    && e.kind == EffectKind::Time
                    && e.state == Some(1)
            })
            .unwrap();
        assert_eq!(shared.verdict, Significance::Null);
        assert_relative_eq!(shared.found_fraction, 1.0 / 40.0);
        assert_eq!(shared.support, 1);
    }

    #[test]
    fn empty_trace_is_an_error() {
        let trace = trace_of(vec![]);
        assert!(matches!(summarize_trace(&trace, 0.9, 0.1), Err(Error::EmptyTrace)));
    }

    #[test]
    fn occupancy_rows_are_distributions() {
        let m = MatchingState::empty(2, 2);
        let trace = trace_of(vec![snapshot(m, 0.0, 0.0); 5]);
        let summary = summarize_trace(&trace, 0.9, 0.1).unwrap();
        assert_eq!(summary.states.x.nrows(), 3);
        for t in 0..3 {
            let row: f64 = (0..3).map(|s| summary.states.x[[t, s]]).sum();
            assert_relative_eq!(row, 1.0, epsilon = 1e-12);
        }
        assert_relative_eq!(summary.states.x[[0, 0]], 1.0);
        assert_relative_eq!(summary.states.x[[2, 2]], 1.0);
    }
}
