//! Left-to-right hidden Markov chain over latent development states.
//!
//! Individuals traverse the states at their own pace; only self-transitions
//! and advance-by-one transitions are allowed, the last state is absorbing,
//! and every series starts in the first state. State paths are updated by
//! single-site Gibbs sampling; an exhaustive path enumerator serves as the
//! correctness oracle for small instances.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{self, LN_2PI};

/// Transition parameters of the left-to-right chain.
///
/// `advance[s]` is the probability of moving from state `s` to `s + 1`
/// (0-based); the complement is the self-transition probability. The final
/// state is absorbing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainParams {
    advance: Vec<f64>,
}

impl ChainParams {
    pub fn new(advance: Vec<f64>) -> Result<Self> {
        if advance.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
            return Err(Error::InvalidConfig(
                "advance probabilities must lie strictly in (0, 1)".into(),
            ));
        }
        Ok(Self { advance })
    }

    /// A chain with `n_states` states and a common advance probability.
    pub fn uniform(n_states: usize, advance: f64) -> Result<Self> {
        if n_states == 0 {
            return Err(Error::InvalidConfig("need at least one state".into()));
        }
        Self::new(vec![advance; n_states - 1])
    }

    pub fn n_states(&self) -> usize {
        self.advance.len() + 1
    }

    pub fn advance(&self) -> &[f64] {
        &self.advance
    }

    pub fn ln_transition(&self, from: usize, to: usize) -> f64 {
        let last = self.advance.len();
        if from == last {
            // Absorbing state.
            return if to == from { 0.0 } else { f64::NEG_INFINITY };
        }
        if to == from + 1 {
            self.advance[from].ln()
        } else if to == from {
            (1.0 - self.advance[from]).ln()
        } else {
            f64::NEG_INFINITY
        }
    }
}

/// A monotone state path: starts in state 0, unit steps only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatePath {
    states: Vec<usize>,
}

impl StatePath {
    pub fn new(states: Vec<usize>, n_states: usize) -> Result<Self> {
        validate_states(&states, n_states)?;
        Ok(Self { states })
    }

    pub fn states(&self) -> &[usize] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

fn validate_states(states: &[usize], n_states: usize) -> Result<()> {
    if states.is_empty() || states[0] != 0 {
        return Err(Error::InvalidStatePath);
    }
    for w in states.windows(2) {
        if !(w[1] == w[0] || w[1] == w[0] + 1) {
            return Err(Error::InvalidStatePath);
        }
    }
    if states.iter().any(|&s| s >= n_states) {
        return Err(Error::InvalidStatePath);
    }
    Ok(())
}

/// Log-density of one latent row under the unit-variance emission of state `s`.
fn ln_emission(latent: &ArrayView2<f64>, t: usize, means: &Array2<f64>, s: usize) -> f64 {
    let k = latent.ncols();
    let mut acc = -0.5 * LN_2PI * k as f64;
    for j in 0..k {
        let d = latent[[t, j]] - means[[s, j]];
        acc -= 0.5 * d * d;
    }
    acc
}

/// Draws the state of one time point from its full conditional: the product
/// of transition-in, emission, and transition-out factors, restricted to the
/// window consistent with both neighbors.
///
/// `latent` holds the individual's latent rows (T x K), `means` the per-state
/// emission means (S x K) for this individual's disease level. Time point 0
/// is pinned to state 0 and is returned as such.
pub fn sample_state_single_site<R: Rng + ?Sized>(
    path: &StatePath,
    t: usize,
    chain: &ChainParams,
    latent: &ArrayView2<f64>,
    means: &Array2<f64>,
    rng: &mut R,
) -> Result<usize> {
    if t == 0 {
        return Ok(0);
    }
    let states = &path.states;
    let t_len = states.len();
    let prev = states[t - 1];
    let mut lo = prev;
    let mut hi = (prev + 1).min(chain.n_states() - 1);
    if t + 1 < t_len {
        let next = states[t + 1];
        lo = lo.max(next.saturating_sub(1));
        hi = hi.min(next);
    }
    if lo > hi {
        return Err(Error::CorruptNeighborStates { t });
    }
    if lo == hi {
        return Ok(lo);
    }
    let mut log_w = Vec::with_capacity(hi - lo + 1);
    for s in lo..=hi {
        let mut w = chain.ln_transition(prev, s) + ln_emission(latent, t, means, s);
        if t + 1 < t_len {
            w += chain.ln_transition(s, states[t + 1]);
        }
        log_w.push(w);
    }
    Ok(lo + stats::sample_from_log_weights(rng, &log_w))
}

/// One systematic single-site sweep over an individual's path (t = 1..T-1).
pub fn sweep_path<R: Rng + ?Sized>(
    path: &mut StatePath,
    chain: &ChainParams,
    latent: &ArrayView2<f64>,
    means: &Array2<f64>,
    rng: &mut R,
) -> Result<()> {
    for t in 1..path.states.len() {
        let s = sample_state_single_site(path, t, chain, latent, means, rng)?;
        path.states[t] = s;
    }
    Ok(())
}

/// Draws a whole path from its exact full conditional by forward filtering
/// and backward sampling over the monotone chain.
///
/// Mixes much faster than the single-site kernel; both leave the same path
/// posterior invariant and both are held to the brute-force enumeration
/// oracle.
pub fn sample_path_exact<R: Rng + ?Sized>(
    t_len: usize,
    chain: &ChainParams,
    latent: &ArrayView2<f64>,
    means: &Array2<f64>,
    rng: &mut R,
) -> Result<StatePath> {
    if t_len == 0 || latent.nrows() != t_len {
        return Err(Error::DimensionMismatch(format!(
            "path length {t_len} vs {} latent rows",
            latent.nrows()
        )));
    }
    let s_count = chain.n_states();
    // Forward pass: alpha[t][s] = log p(latent rows 0..=t, state(t) = s).
    let mut alpha = Array2::from_elem((t_len, s_count), f64::NEG_INFINITY);
    alpha[[0, 0]] = ln_emission(latent, 0, means, 0);
    for t in 1..t_len {
        // Monotone chain: state s is reachable from s and s - 1 only.
        for s in 0..s_count.min(t + 1) {
            let stay = alpha[[t - 1, s]] + chain.ln_transition(s, s);
            let from_below = if s > 0 {
                alpha[[t - 1, s - 1]] + chain.ln_transition(s - 1, s)
            } else {
                f64::NEG_INFINITY
            };
            let incoming = log_add(stay, from_below);
            if incoming > f64::NEG_INFINITY {
                alpha[[t, s]] = incoming + ln_emission(latent, t, means, s);
            }
        }
    }
    // Backward sampling.
    let mut states = vec![0usize; t_len];
    let last: Vec<f64> = (0..s_count).map(|s| alpha[[t_len - 1, s]]).collect();
    states[t_len - 1] = stats::sample_from_log_weights(rng, &last);
    for t in (0..t_len - 1).rev() {
        let next = states[t + 1];
        let stay = alpha[[t, next]] + chain.ln_transition(next, next);
        if next == 0 {
            states[t] = 0;
            continue;
        }
        let from_below = alpha[[t, next - 1]] + chain.ln_transition(next - 1, next);
        let pick = stats::sample_from_log_weights(rng, &[from_below, stay]);
        states[t] = next - 1 + pick;
    }
    StatePath::new(states, s_count)
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Conjugate Beta update of the advance probabilities from transition counts.
pub fn sample_transition_params<R: Rng + ?Sized>(
    paths: &[&StatePath],
    n_states: usize,
    prior: (f64, f64),
    rng: &mut R,
) -> Result<ChainParams> {
    if n_states == 0 {
        return Err(Error::InvalidConfig("need at least one state".into()));
    }
    let (c1, c2) = prior;
    let mut advances = vec![0.0f64; n_states.saturating_sub(1)];
    let mut selfs = vec![0.0f64; n_states.saturating_sub(1)];
    for path in paths {
        for w in path.states.windows(2) {
            if w[0] + 1 < n_states {
                if w[1] == w[0] + 1 {
                    advances[w[0]] += 1.0;
                } else {
                    selfs[w[0]] += 1.0;
                }
            }
        }
    }
    let advance = (0..n_states - 1)
        .map(|s| stats::draw_beta(rng, c1 + advances[s], c2 + selfs[s]))
        .collect();
    ChainParams::new(advance)
}

/// Posterior Beta parameters of each advance probability given the paths.
pub fn transition_posterior(
    paths: &[&StatePath],
    n_states: usize,
    prior: (f64, f64),
) -> Vec<(f64, f64)> {
    let (c1, c2) = prior;
    let mut post = vec![(c1, c2); n_states.saturating_sub(1)];
    for path in paths {
        for w in path.states.windows(2) {
            if w[0] + 1 < n_states {
                if w[1] == w[0] + 1 {
                    post[w[0]].0 += 1.0;
                } else {
                    post[w[0]].1 += 1.0;
                }
            }
        }
    }
    post
}

/// Exact log-density of a path: transition product times emission product.
///
/// Time point 0 carries no transition factor (the initial state is pinned).
pub fn path_log_density(
    states: &[usize],
    chain: &ChainParams,
    latent: &ArrayView2<f64>,
    means: &Array2<f64>,
) -> Result<f64> {
    validate_states(states, chain.n_states())?;
    if states.len() != latent.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "path has {} time points but latent has {} rows",
            states.len(),
            latent.nrows()
        )));
    }
    let mut acc = ln_emission(latent, 0, means, states[0]);
    for t in 1..states.len() {
        acc += chain.ln_transition(states[t - 1], states[t]);
        acc += ln_emission(latent, t, means, states[t]);
    }
    Ok(acc)
}

/// Exact per-site state marginals by enumerating every monotone path.
///
/// Only feasible for small instances; this is the test oracle for the
/// single-site sampler.
pub fn brute_force_path_posterior(
    t_len: usize,
    chain: &ChainParams,
    latent: &ArrayView2<f64>,
    means: &Array2<f64>,
) -> Result<Array2<f64>> {
    let s_count = chain.n_states();
    if t_len == 0 {
        return Err(Error::InvalidConfig("empty path".into()));
    }
    if t_len > 12 || s_count > 6 {
        return Err(Error::EnumerationTooLarge);
    }
    let mut paths: Vec<(Vec<usize>, f64)> = Vec::new();
    let mut current = vec![0usize; t_len];
    enumerate(&mut paths, &mut current, 1, chain, latent, means);
    let max = paths.iter().map(|&(_, w)| w).fold(f64::NEG_INFINITY, f64::max);
    let mut marginals = Array2::zeros((t_len, s_count));
    let mut total = 0.0;
    for (states, log_w) in &paths {
        let w = (log_w - max).exp();
        total += w;
        for (t, &s) in states.iter().enumerate() {
            marginals[[t, s]] += w;
        }
    }
    marginals.mapv_inplace(|v| v / total);
    Ok(marginals)
}

fn enumerate(
    out: &mut Vec<(Vec<usize>, f64)>,
    current: &mut Vec<usize>,
    t: usize,
    chain: &ChainParams,
    latent: &ArrayView2<f64>,
    means: &Array2<f64>,
) {
    if t == current.len() {
        let w = path_log_density(current, chain, latent, means).expect("enumerated path valid");
        out.push((current.clone(), w));
        return;
    }
    let prev = current[t - 1];
    for s in prev..=(prev + 1).min(chain.n_states() - 1) {
        current[t] = s;
        enumerate(out, current, t + 1, chain, latent, means);
    }
    current[t] = prev;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedSplitter;
    use approx::assert_relative_eq;
    use ndarray::array;
    use proptest::prelude::*;

    fn toy_chain() -> ChainParams {
        ChainParams::new(vec![0.4, 0.6]).unwrap()
    }

    #[test]
    fn window_forced_by_neighbors() {
        let chain = toy_chain();
        let latent = Array2::zeros((4, 1));
        let means = Array2::zeros((3, 1));
        let mut rng = SeedSplitter::new(0).stream("test/window");
        // Neighbors at (1, 2): support is {1, 2}.
        let path = StatePath::new(vec![0, 1, 1, 2], 3).unwrap();
        let mut seen = [false; 3];
        for _ in 0..200 {
            let s = sample_state_single_site(&path, 2, &chain, &latent.view(), &means, &mut rng)
                .unwrap();
            seen[s] = true;
        }
        assert!(!seen[0] && seen[1] && seen[2]);
        // Neighbors at (1, 1): support is {1} only, returned deterministically.
        let flat = StatePath::new(vec![0, 1, 1, 1], 3).unwrap();
        let s = sample_state_single_site(&flat, 2, &chain, &latent.view(), &means, &mut rng)
            .unwrap();
        assert_eq!(s, 1);
    }

    #[test]
    fn corrupt_neighbors_detected() {
        // Neighbors three states apart leave no value for the middle site.
        let chain = ChainParams::new(vec![0.4, 0.5, 0.6]).unwrap();
        let latent = Array2::zeros((3, 1));
        let means = Array2::zeros((4, 1));
        let mut rng = SeedSplitter::new(0).stream("test/corrupt");
        let path = StatePath { states: vec![0, 0, 3] };
        let err = sample_state_single_site(&path, 1, &chain, &latent.view(), &means, &mut rng);
        assert!(matches!(err, Err(Error::CorruptNeighborStates { t: 1 })));
    }

    #[test]
    fn first_time_point_stays_pinned() {
        let chain = toy_chain();
        let latent = Array2::zeros((2, 1));
        let means = Array2::zeros((3, 1));
        let mut rng = SeedSplitter::new(0).stream("test/pin");
        let path = StatePath::new(vec![0, 1], 3).unwrap();
        let s = sample_state_single_site(&path, 0, &chain, &latent.view(), &means, &mut rng)
            .unwrap();
        assert_eq!(s, 0);
    }

    #[test]
    fn single_point_log_density() {
        let chain = ChainParams::uniform(1, 0.5).unwrap();
        let latent = array![[0.0]];
        let means = Array2::zeros((1, 1));
        let ld = path_log_density(&[0], &chain, &latent.view(), &means).unwrap();
        assert_relative_eq!(ld, -0.5 * LN_2PI, epsilon = 1e-12);
    }

    #[test]
    fn invalid_path_is_an_error() {
        let chain = toy_chain();
        let latent = Array2::zeros((3, 1));
        let means = Array2::zeros((3, 1));
        assert!(matches!(
            path_log_density(&[0, 2, 2], &chain, &latent.view(), &means),
            Err(Error::InvalidStatePath)
        ));
        assert!(matches!(
            path_log_density(&[1, 1, 2], &chain, &latent.view(), &means),
            Err(Error::InvalidStatePath)
        ));
    }

    #[test]
    fn path_log_density_matches_direct_sum() {
        // Independent re-derivation: scalar normal log-pdfs plus log transitions.
        let chain = ChainParams::new(vec![0.3, 0.7]).unwrap();
        let latent = array![[0.2, -0.1], [1.0, 0.4], [0.9, 1.6], [2.0, 2.2]];
        let means = array![[0.0, 0.0], [0.5, 0.6], [1.5, 1.8]];
        let states = [0usize, 1, 1, 2];
        let got = path_log_density(&states, &chain, &latent.view(), &means).unwrap();
        let mut want = 0.0;
        for (t, &s) in states.iter().enumerate() {
            for k in 0..2 {
                want += stats::ln_normal_pdf(latent[[t, k]], means[[s, k]], 1.0);
            }
        }
        // 0 -> 1 advances at 0.3; 1 -> 1 self-transition at 1 - 0.7; 1 -> 2
        // advances at 0.7.
        want += 0.3f64.ln() + (1.0 - 0.7f64).ln() + 0.7f64.ln();
        assert_relative_eq!(got, want, epsilon = 1e-10);
    }

    #[test]
    fn brute_force_degenerate_cases() {
        let chain = toy_chain();
        let latent = array![[0.0]];
        let means = Array2::zeros((3, 1));
        let m = brute_force_path_posterior(1, &chain, &latent.view(), &means).unwrap();
        assert_relative_eq!(m[[0, 0]], 1.0);

        // S = 1: every site is a point mass.
        let chain1 = ChainParams { advance: vec![] };
        let latent = Array2::zeros((3, 1));
        let means1 = Array2::zeros((1, 1));
        let m = brute_force_path_posterior(3, &chain1, &latent.view(), &means1).unwrap();
        for t in 0..3 {
            assert_relative_eq!(m[[t, 0]], 1.0);
        }
    }

    #[test]
    fn brute_force_rejects_large_instances() {
        let chain = toy_chain();
        let latent = Array2::zeros((13, 1));
        let means = Array2::zeros((3, 1));
        assert!(matches!(
            brute_force_path_posterior(13, &chain, &latent.view(), &means),
            Err(Error::EnumerationTooLarge)
        ));
    }

    #[test]
    fn transition_update_counts_correctly() {
        // 10 advances and no self-loops out of state 0 -> Beta(11, 1).
        let path = StatePath::new(vec![0, 1], 2).unwrap();
        let paths: Vec<&StatePath> = std::iter::repeat(&path).take(10).collect();
        let post = transition_posterior(&paths, 2, (1.0, 1.0));
        assert_eq!(post, vec![(11.0, 1.0)]);

        // No visits -> prior.
        let post = transition_posterior(&[], 3, (1.0, 1.0));
        assert_eq!(post, vec![(1.0, 1.0), (1.0, 1.0)]);
    }

    #[test]
    fn transition_sampler_matches_beta_mean() {
        let path = StatePath::new(vec![0, 0, 1, 1, 1], 2).unwrap();
        let paths: Vec<&StatePath> = vec![&path];
        let mut rng = SeedSplitter::new(11).stream("test/beta");
        let draws: Vec<f64> = (0..50_000)
            .map(|_| {
                sample_transition_params(&paths, 2, (1.0, 1.0), &mut rng)
                    .unwrap()
                    .advance()[0]
            })
            .collect();
        // Counts out of state 0: 1 advance, 1 self -> Beta(2, 2), mean 0.5.
        assert_relative_eq!(stats::mean(&draws), 0.5, max_relative = 0.01);
    }

    #[test]
    fn single_site_sweeps_match_brute_force() {
        // T = 4, S = 3, K = 1, fixed chain and effects; compare empirical
        // per-site marginals against exhaustive enumeration.
        let chain = ChainParams::new(vec![0.45, 0.55]).unwrap();
        let latent = array![[0.1], [0.8], [1.3], [1.9]];
        let means = array![[0.0], [1.0], [2.0]];
        let exact = brute_force_path_posterior(4, &chain, &latent.view(), &means).unwrap();

        let mut rng = SeedSplitter::new(5).stream("test/oracle");
        let mut path = StatePath::new(vec![0, 0, 0, 0], 3).unwrap();
        let sweeps = 100_000;
        let mut counts = Array2::<f64>::zeros((4, 3));
        for _ in 0..sweeps {
            sweep_path(&mut path, &chain, &latent.view(), &means, &mut rng).unwrap();
            for (t, &s) in path.states().iter().enumerate() {
                counts[[t, s]] += 1.0;
            }
        }
        counts.mapv_inplace(|c| c / sweeps as f64);
        for t in 0..4 {
            let tv: f64 = (0..3).map(|s| (counts[[t, s]] - exact[[t, s]]).abs()).sum::<f64>() / 2.0;
            assert!(tv <= 0.02, "site {t}: tv = {tv}");
        }
    }

    #[test]
    fn exact_path_sampler_matches_brute_force() {
        // Same instance as the single-site oracle check; the exact sampler
        // must hit the same marginals.
        let chain = ChainParams::new(vec![0.45, 0.55]).unwrap();
        let latent = array![[0.1], [0.8], [1.3], [1.9]];
        let means = array![[0.0], [1.0], [2.0]];
        let exact = brute_force_path_posterior(4, &chain, &latent.view(), &means).unwrap();

        let mut rng = SeedSplitter::new(6).stream("test/ffbs");
        let draws = 100_000;
        let mut counts = Array2::<f64>::zeros((4, 3));
        for _ in 0..draws {
            let path = sample_path_exact(4, &chain, &latent.view(), &means, &mut rng).unwrap();
            for (t, &s) in path.states().iter().enumerate() {
                counts[[t, s]] += 1.0;
            }
        }
        counts.mapv_inplace(|c| c / draws as f64);
        for t in 0..4 {
            let tv: f64 = (0..3).map(|s| (counts[[t, s]] - exact[[t, s]]).abs()).sum::<f64>() / 2.0;
            assert!(tv <= 0.02, "site {t}: tv = {tv}");
        }
    }

    proptest! {
        #[test]
        fn sampled_paths_stay_monotone(seed in 0u64..500, t_len in 1usize..9) {
            let chain = ChainParams::new(vec![0.5, 0.5, 0.5]).unwrap();
            let latent = Array2::zeros((t_len, 2));
            let means = Array2::zeros((4, 2));
            let mut rng = SeedSplitter::new(seed).stream("prop/mono");
            let mut path = StatePath::new(vec![0; t_len], 4).unwrap();
            for _ in 0..20 {
                sweep_path(&mut path, &chain, &latent.view(), &means, &mut rng).unwrap();
                prop_assert!(validate_states(path.states(), 4).is_ok());
                path = sample_path_exact(t_len, &chain, &latent.view(), &means, &mut rng).unwrap();
                prop_assert!(validate_states(path.states(), 4).is_ok());
            }
        }
    }
}
