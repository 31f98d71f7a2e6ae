//! Joint-distribution test of sampler correctness.
//!
//! Two simulators target the same joint over (parameters, data): the forward
//! simulator draws parameters from their priors and data from the likelihood;
//! the successive-conditional simulator alternates one Gibbs sweep with a
//! fresh data draw from the likelihood. If every conditional in the sweep is
//! correct, the two produce the same marginals; z-scores compare them
//! statistic by statistic. Both sides are recorded after sign
//! canonicalization, so they sample the same folded distribution.

use ndarray::Array2;
use rand::Rng;
use serde::Serialize;

use crate::data::{Design, SampleMeta};
use crate::effects::EffectDecomposition;
use crate::error::{Error, Result};
use crate::factor::{self, FactorParams, LatentState, GRAND_MEAN_PRIOR_SD};
use crate::hmm::{ChainParams, StatePath};
use crate::matching;
use crate::rng::SeedSplitter;
use crate::sampler::{self, FaultInjection, GibbsConfig, ModelInput, ModelState};
use crate::stats;

/// Configuration of the joint-distribution test. The instance must stay
/// small: the test needs tens of thousands of rounds.
#[derive(Debug, Clone)]
pub struct GewekeConfig {
    /// Individuals per dataset (at most 4).
    pub n_individuals: usize,
    /// Fixed series length (at most 4).
    pub series_len: usize,
    /// Variables per dataset (at most 10 each).
    pub p_x: usize,
    pub p_y: usize,
    pub gibbs: GibbsConfig,
    pub n_rounds: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GewekeStat {
    pub name: String,
    pub z: f64,
    pub forward_mean: f64,
    pub successive_mean: f64,
}

fn build_design(prefix: &str, n_individuals: usize, series_len: usize) -> Design {
    let mut meta = Vec::new();
    let n_healthy = n_individuals - n_individuals / 2;
    for ind in 0..n_individuals {
        for t in 0..series_len {
            meta.push(SampleMeta {
                sample_id: format!("{prefix}{ind}_{t}"),
                individual_id: format!("{prefix}{ind}"),
                time_index: t + 1,
                disease: u8::from(ind >= n_healthy),
            });
        }
    }
    Design::from_meta(&meta).expect("constructed metadata is valid")
}

fn draw_chain<R: Rng + ?Sized>(config: &GibbsConfig, rng: &mut R) -> ChainParams {
    if !config.sample_transitions {
        return ChainParams::uniform(config.n_states, 0.5).expect("n_states >= 2");
    }
    let advance: Vec<f64> = (0..config.n_states - 1)
        .map(|_| stats::draw_beta(rng, config.c1, config.c2))
        .collect();
    ChainParams::new(advance).expect("beta draws lie in (0, 1)")
}

fn draw_path<R: Rng + ?Sized>(chain: &ChainParams, t_len: usize, rng: &mut R) -> StatePath {
    let mut states = Vec::with_capacity(t_len);
    let mut s = 0usize;
    for t in 0..t_len {
        if t > 0 && s + 1 < chain.n_states() && rng.random::<f64>() < chain.advance()[s] {
            s += 1;
        }
        states.push(s);
    }
    StatePath::new(states, chain.n_states()).expect("simulated path is valid")
}

fn draw_effects<R: Rng + ?Sized>(
    config: &GibbsConfig,
    matching: &matching::MatchingState,
    rng: &mut R,
) -> EffectDecomposition {
    let mut decomp = EffectDecomposition::zeros(config.n_states, config.k_x, config.k_y);
    let tau_e = config.tau_e;
    let tau_spec = config.tau_spec_sq().sqrt();
    for kx in 0..config.k_x {
        if matching.x_partner(kx).is_none() {
            continue;
        }
        for s in 1..config.n_states {
            decomp.shared.time[[s, kx]] = stats::draw_normal(rng, 0.0, tau_e);
            decomp.shared.interaction[[s, kx]] = stats::draw_normal(rng, 0.0, tau_e);
        }
        if config.include_beta_b {
            decomp.shared.disease[kx] = stats::draw_normal(rng, 0.0, tau_e);
        }
    }
    for (set, k_count) in
        [(&mut decomp.specific_x, config.k_x), (&mut decomp.specific_y, config.k_y)]
    {
        for k in 0..k_count {
            for s in 1..config.n_states {
                set.time[[s, k]] = stats::draw_normal(rng, 0.0, tau_spec);
                set.interaction[[s, k]] = stats::draw_normal(rng, 0.0, tau_spec);
            }
            if config.include_beta_b {
                set.disease[k] = stats::draw_normal(rng, 0.0, tau_spec);
            }
        }
    }
    decomp
}

fn draw_factor_params<R: Rng + ?Sized>(
    p: usize,
    k: usize,
    config: &GibbsConfig,
    rng: &mut R,
) -> FactorParams {
    FactorParams {
        grand_mean: (0..p).map(|_| stats::draw_normal(rng, 0.0, GRAND_MEAN_PRIOR_SD)).collect(),
        assignment: (0..p).map(|_| rng.random_range(0..k)).collect(),
        loading: (0..p).map(|_| stats::draw_normal(rng, 0.0, config.tau_v)).collect(),
        residual_var: (0..p).map(|_| stats::draw_inv_gamma(rng, config.a0, config.b0)).collect(),
        n_clusters: k,
    }
}

fn emit_observations<R: Rng + ?Sized>(
    params: &FactorParams,
    latent: &LatentState,
    rng: &mut R,
) -> Array2<f64> {
    let n = latent.factors.nrows();
    let p = params.n_variables();
    let mut values = Array2::zeros((n, p));
    for i in 0..p {
        let k = params.assignment[i];
        let sd = params.residual_var[i].sqrt();
        for j in 0..n {
            let mean = params.grand_mean[i] + params.loading[i] * latent.factors[[j, k]];
            values[[j, i]] = stats::draw_normal(rng, mean, sd);
        }
    }
    values
}

fn forward_draw<R: Rng + ?Sized>(
    dx: &Design,
    dy: &Design,
    p_x: usize,
    p_y: usize,
    config: &GibbsConfig,
    rng: &mut R,
) -> (ModelState, Array2<f64>, Array2<f64>) {
    let chain_x = draw_chain(config, rng);
    let chain_y = if config.shared_transitions { chain_x.clone() } else { draw_chain(config, rng) };
    let paths_x: Vec<StatePath> =
        dx.individuals.iter().map(|ind| draw_path(&chain_x, ind.rows.len(), rng)).collect();
    let paths_y: Vec<StatePath> =
        dy.individuals.iter().map(|ind| draw_path(&chain_y, ind.rows.len(), rng)).collect();

    let all = matching::all_matchings(config.k_x, config.k_y);
    let matching = all[rng.random_range(0..all.len())].clone();
    let effects = draw_effects(config, &matching, rng);

    let mut state = ModelState {
        params_x: draw_factor_params(p_x, config.k_x, config, rng),
        params_y: draw_factor_params(p_y, config.k_y, config, rng),
        latent_x: LatentState::zeros(dx.n_rows(), config.k_x),
        latent_y: LatentState::zeros(dy.n_rows(), config.k_y),
        paths_x,
        paths_y,
        chain_x,
        chain_y,
        effects,
        matching,
        states_x: vec![0; dx.n_rows()],
        states_y: vec![0; dy.n_rows()],
    };
    state.refresh_state_cache(dx, dy);

    let mean_x = crate::effects::latent_mean_matrix(
        &state.effects,
        &state.matching,
        crate::effects::DatasetTag::X,
        &state.states_x,
        dx,
        config.k_x,
    );
    let mean_y = crate::effects::latent_mean_matrix(
        &state.effects,
        &state.matching,
        crate::effects::DatasetTag::Y,
        &state.states_y,
        dy,
        config.k_y,
    );
    for j in 0..dx.n_rows() {
        for k in 0..config.k_x {
            state.latent_x.factors[[j, k]] = stats::draw_normal(rng, mean_x[[j, k]], 1.0);
        }
    }
    for j in 0..dy.n_rows() {
        for k in 0..config.k_y {
            state.latent_y.factors[[j, k]] = stats::draw_normal(rng, mean_y[[j, k]], 1.0);
        }
    }
    let values_x = emit_observations(&state.params_x, &state.latent_x, rng);
    let values_y = emit_observations(&state.params_y, &state.latent_y, rng);
    (state, values_x, values_y)
}

fn canonicalize(state: &mut ModelState) {
    factor::enforce_sign_convention(
        &mut state.params_x,
        &mut state.latent_x,
        &mut state.params_y,
        &mut state.latent_y,
        &mut state.effects,
        &state.matching,
    );
}

fn stat_names(config: &GibbsConfig) -> Vec<String> {
    let mut names = vec![
        "shared_time[1,0]".into(),
        "shared_interaction[1,0]".into(),
        "specific_x_time[1,0]".into(),
        "specific_y_time[1,0]".into(),
        "specific_x_time[1,0]^2".into(),
        "mean_ln_residual_var_x".into(),
        "mean_ln_residual_var_y".into(),
    ];
    if config.sample_transitions {
        names.push("advance_x[0]".into());
        if !config.shared_transitions {
            names.push("advance_y[0]".into());
        }
    }
    names.extend([
        "n_links".into(),
        "mean_loading_x".into(),
        "grand_mean_x[0]".into(),
        "latent_x[0,0]".into(),
        "mean_final_state_x".into(),
    ]);
    if config.include_beta_b {
        names.push("shared_disease[0]".into());
        names.push("specific_x_disease[0]".into());
    }
    names
}

fn collect_stats(state: &ModelState, config: &GibbsConfig, out: &mut Vec<f64>) {
    let mean_ln = |vs: &[f64]| vs.iter().map(|&v| v.ln()).sum::<f64>() / vs.len() as f64;
    out.push(state.effects.shared.time[[1, 0]]);
    out.push(state.effects.shared.interaction[[1, 0]]);
    out.push(state.effects.specific_x.time[[1, 0]]);
    out.push(state.effects.specific_y.time[[1, 0]]);
    out.push(state.effects.specific_x.time[[1, 0]].powi(2));
    out.push(mean_ln(&state.params_x.residual_var));
    out.push(mean_ln(&state.params_y.residual_var));
    if config.sample_transitions {
        out.push(state.chain_x.advance()[0]);
        if !config.shared_transitions {
            out.push(state.chain_y.advance()[0]);
        }
    }
    out.push(state.matching.n_links() as f64);
    out.push(stats::mean(&state.params_x.loading));
    out.push(state.params_x.grand_mean[0]);
    out.push(state.latent_x.factors[[0, 0]]);
    let final_states: Vec<f64> =
        state.paths_x.iter().map(|p| *p.states().last().unwrap() as f64).collect();
    out.push(stats::mean(&final_states));
    if config.include_beta_b {
        out.push(state.effects.shared.disease[0]);
        out.push(state.effects.specific_x.disease[0]);
    }
}

/// Runs the joint-distribution test and returns one z-score per monitored
/// statistic. `fault` injects a known-broken update so the test's own
/// sensitivity can be verified.
pub fn geweke_check(config: &GewekeConfig, fault: FaultInjection) -> Result<Vec<GewekeStat>> {
    if config.n_rounds < 10 {
        return Err(Error::InsufficientRounds(config.n_rounds));
    }
    if config.p_x > 10 || config.p_y > 10 || config.n_individuals > 4 || config.series_len > 4 {
        return Err(Error::InvalidConfig(
            "joint-distribution test requires p <= 10, individuals <= 4, T <= 4".into(),
        ));
    }
    if config.gibbs.n_states < 2 {
        return Err(Error::InvalidConfig(
            "joint-distribution test requires at least two states".into(),
        ));
    }
    config.gibbs.validate()?;
    if config.gibbs.k_x > config.p_x || config.gibbs.k_y > config.p_y {
        return Err(Error::InvalidConfig("cluster count exceeds variable count".into()));
    }

    let dx = build_design("gx", config.n_individuals, config.series_len);
    let dy = build_design("gy", config.n_individuals, config.series_len);
    let gibbs = &config.gibbs;
    let splitter = SeedSplitter::new(config.seed);
    let names = stat_names(gibbs);
    let n_stats = names.len();

    let mut forward = vec![Vec::with_capacity(config.n_rounds); n_stats];
    {
        let mut rng = splitter.stream("geweke/forward");
        let mut buf = Vec::with_capacity(n_stats);
        for _ in 0..config.n_rounds {
            let (mut state, _, _) =
                forward_draw(&dx, &dy, config.p_x, config.p_y, gibbs, &mut rng);
            canonicalize(&mut state);
            buf.clear();
            collect_stats(&state, gibbs, &mut buf);
            for (series, &v) in forward.iter_mut().zip(buf.iter()) {
                series.push(v);
            }
        }
    }

    let mut successive = vec![Vec::with_capacity(config.n_rounds); n_stats];
    {
        let mut rng = splitter.stream("geweke/successive");
        let (mut state, mut values_x, mut values_y) =
            forward_draw(&dx, &dy, config.p_x, config.p_y, gibbs, &mut rng);
        canonicalize(&mut state);
        let mut buf = Vec::with_capacity(n_stats);
        for _ in 0..config.n_rounds {
            sampler::sweep_with_fault(
                &mut state,
                ModelInput::new(&values_x, &dx),
                ModelInput::new(&values_y, &dy),
                gibbs,
                fault,
                &mut rng,
            )?;
            values_x = emit_observations(&state.params_x, &state.latent_x, &mut rng);
            values_y = emit_observations(&state.params_y, &state.latent_y, &mut rng);
            buf.clear();
            collect_stats(&state, gibbs, &mut buf);
            for (series, &v) in successive.iter_mut().zip(buf.iter()) {
                series.push(v);
            }
        }
    }

    Ok(names
        .into_iter()
        .enumerate()
        .map(|(i, name)| {
            let fm = stats::mean(&forward[i]);
            let sm = stats::mean(&successive[i]);
            let se_f = stats::iid_se(&forward[i]);
            let se_s = stats::batch_means_se(&successive[i]);
            let denom = (se_f * se_f + se_s * se_s).sqrt().max(1e-12);
            GewekeStat { name, z: (fm - sm) / denom, forward_mean: fm, successive_mean: sm }
        })
        .collect())
}
