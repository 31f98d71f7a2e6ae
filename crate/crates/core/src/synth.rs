//! Synthetic two-dataset generator following the full generative model:
//! monotone state paths over a left-to-right chain, planted covariate effects
//! in latent space, cluster-structured loadings, Gaussian residuals.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SampleMeta, StudyPair};
use crate::error::{Error, Result};
use crate::rng::SeedSplitter;
use crate::stats;

/// The covariate responses that can be planted into generated data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantedEffectKind {
    SharedTime,
    SharedInteraction,
    SharedDisease,
    SpecificTimeX,
    SpecificTimeY,
    SpecificDiseaseX,
    SpecificDiseaseY,
}

impl PlantedEffectKind {
    fn involves_x(self) -> bool {
        !matches!(self, Self::SpecificTimeY | Self::SpecificDiseaseY)
    }

    fn involves_y(self) -> bool {
        !matches!(self, Self::SpecificTimeX | Self::SpecificDiseaseX)
    }

    fn is_shared(self) -> bool {
        matches!(self, Self::SharedTime | Self::SharedInteraction | Self::SharedDisease)
    }

    fn is_disease_scalar(self) -> bool {
        matches!(self, Self::SharedDisease | Self::SpecificDiseaseX | Self::SpecificDiseaseY)
    }
}

/// One planted effect: its kind, the target cluster on each involved side,
/// and per-state values (time and interaction kinds) or a single value
/// (disease kinds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedEffect {
    pub kind: PlantedEffectKind,
    pub cluster_x: Option<usize>,
    pub cluster_y: Option<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_individuals_x: usize,
    pub n_individuals_y: usize,
    /// Inclusive bounds on the per-individual series length.
    pub series_length_range: (usize, usize),
    pub p_x: usize,
    pub p_y: usize,
    pub k_x: usize,
    pub k_y: usize,
    pub n_states: usize,
    pub planted_effects: Vec<PlantedEffect>,
    pub residual_sd: f64,
    /// Generator chain advance probability (the last state is absorbing).
    pub advance_prob: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_individuals_x == 0 || self.n_individuals_y == 0 {
            return err("need at least one individual per dataset".into());
        }
        let (lo, hi) = self.series_length_range;
        if lo == 0 || lo > hi {
            return err(format!("invalid series length range ({lo}, {hi})"));
        }
        if self.k_x == 0 || self.k_x > self.p_x || self.k_y == 0 || self.k_y > self.p_y {
            return err("cluster counts must satisfy 1 <= K <= p".into());
        }
        if self.n_states == 0 {
            return err("need at least one state".into());
        }
        if !(self.residual_sd >= 0.0) || !(self.advance_prob > 0.0 && self.advance_prob < 1.0) {
            return err("residual_sd must be nonnegative and advance_prob in (0, 1)".into());
        }
        for effect in &self.planted_effects {
            self.validate_effect(effect)?;
        }
        Ok(())
    }

    fn validate_effect(&self, effect: &PlantedEffect) -> Result<()> {
        if effect.kind.involves_x() {
            let kx = effect.cluster_x.ok_or_else(|| {
                Error::InvalidConfig(format!("{:?} requires cluster_x", effect.kind))
            })?;
            if kx >= self.k_x {
                return Err(Error::ClusterOutOfRange { index: kx, k: self.k_x });
            }
        }
        if effect.kind.involves_y() {
            let ky = effect.cluster_y.ok_or_else(|| {
                Error::InvalidConfig(format!("{:?} requires cluster_y", effect.kind))
            })?;
            if ky >= self.k_y {
                return Err(Error::ClusterOutOfRange { index: ky, k: self.k_y });
            }
        }
        let want_len = if effect.kind.is_disease_scalar() { 1 } else { self.n_states };
        if effect.values.len() != want_len {
            return Err(Error::InvalidConfig(format!(
                "{:?} expects {want_len} value(s), got {}",
                effect.kind,
                effect.values.len()
            )));
        }
        if !effect.kind.is_disease_scalar() && effect.values[0] != 0.0 {
            return Err(Error::InvalidConfig(format!(
                "{:?} must start at 0 (reference state)",
                effect.kind
            )));
        }
        Ok(())
    }
}

/// Raw generated values for one dataset, before standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedDataset {
    pub values: Array2<f64>,
    pub meta: Vec<SampleMeta>,
    pub variable_names: Vec<String>,
}

/// Everything the generator planted, for acceptance checks and reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub assignment_x: Vec<usize>,
    pub assignment_y: Vec<usize>,
    pub loading_x: Vec<f64>,
    pub loading_y: Vec<f64>,
    pub paths_x: Vec<Vec<usize>>,
    pub paths_y: Vec<Vec<usize>>,
    pub diseased_x: Vec<bool>,
    pub diseased_y: Vec<bool>,
    pub planted_effects: Vec<PlantedEffect>,
    /// Cluster pairs carrying the same shared planted effect.
    pub true_pairing: Vec<(usize, usize)>,
    pub residual_sd: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthOutput {
    pub x: GeneratedDataset,
    pub y: GeneratedDataset,
    pub ground_truth: GroundTruth,
}

impl SynthOutput {
    /// Builds the validated, standardized pair through the normal loading
    /// path.
    pub fn study_pair(&self, log1p: bool) -> Result<StudyPair> {
        Ok(StudyPair {
            x: Dataset::from_raw(
                self.x.values.clone(),
                self.x.meta.clone(),
                self.x.variable_names.clone(),
                log1p,
            )?,
            y: Dataset::from_raw(
                self.y.values.clone(),
                self.y.meta.clone(),
                self.y.variable_names.clone(),
                log1p,
            )?,
        })
    }
}

struct SideSpec<'a> {
    prefix: &'a str,
    n_individuals: usize,
    p: usize,
    k: usize,
    /// (cluster, per-state values) time-like responses; interaction entries
    /// apply at the diseased level only.
    time: Vec<(usize, Vec<f64>)>,
    interaction: Vec<(usize, Vec<f64>)>,
    disease: Vec<(usize, f64)>,
}

struct SideOutput {
    data: GeneratedDataset,
    assignment: Vec<usize>,
    loading: Vec<f64>,
    paths: Vec<Vec<usize>>,
    diseased: Vec<bool>,
}

fn side_spec<'a>(
    config: &SynthConfig,
    prefix: &'a str,
    n_individuals: usize,
    p: usize,
    k: usize,
    is_x: bool,
) -> SideSpec<'a> {
    let mut spec = SideSpec {
        prefix,
        n_individuals,
        p,
        k,
        time: Vec::new(),
        interaction: Vec::new(),
        disease: Vec::new(),
    };
    for effect in &config.planted_effects {
        let involved = if is_x { effect.kind.involves_x() } else { effect.kind.involves_y() };
        if !involved {
            continue;
        }
        let cluster = if is_x { effect.cluster_x.unwrap() } else { effect.cluster_y.unwrap() };
        match effect.kind {
            PlantedEffectKind::SharedTime
            | PlantedEffectKind::SpecificTimeX
            | PlantedEffectKind::SpecificTimeY => {
                spec.time.push((cluster, effect.values.clone()));
            }
            PlantedEffectKind::SharedInteraction => {
                spec.interaction.push((cluster, effect.values.clone()));
            }
            PlantedEffectKind::SharedDisease
            | PlantedEffectKind::SpecificDiseaseX
            | PlantedEffectKind::SpecificDiseaseY => {
                spec.disease.push((cluster, effect.values[0]));
            }
        }
    }
    spec
}

/// Generates two unpaired datasets from the full model.
pub fn generate(config: &SynthConfig) -> Result<SynthOutput> {
    config.validate()?;
    let splitter = SeedSplitter::new(config.seed);

    let x_spec = side_spec(config, "x", config.n_individuals_x, config.p_x, config.k_x, true);
    let y_spec = side_spec(config, "y", config.n_individuals_y, config.p_y, config.k_y, false);
    let x_out = generate_side(&x_spec, config, &mut splitter.stream("synth/x"));
    let y_out = generate_side(&y_spec, config, &mut splitter.stream("synth/y"));

    let mut true_pairing: Vec<(usize, usize)> = config
        .planted_effects
        .iter()
        .filter(|e| e.kind.is_shared())
        .map(|e| (e.cluster_x.unwrap(), e.cluster_y.unwrap()))
        .collect();
    true_pairing.sort_unstable();
    true_pairing.dedup();

    Ok(SynthOutput {
        ground_truth: GroundTruth {
            assignment_x: x_out.assignment.clone(),
            assignment_y: y_out.assignment.clone(),
            loading_x: x_out.loading.clone(),
            loading_y: y_out.loading.clone(),
            paths_x: x_out.paths.clone(),
            paths_y: y_out.paths.clone(),
            diseased_x: x_out.diseased.clone(),
            diseased_y: y_out.diseased.clone(),
            planted_effects: config.planted_effects.clone(),
            true_pairing,
            residual_sd: config.residual_sd,
            seed: config.seed,
        },
        x: x_out.data,
        y: y_out.data,
    })
}

fn generate_side<R: Rng + ?Sized>(
    spec: &SideSpec<'_>,
    config: &SynthConfig,
    rng: &mut R,
) -> SideOutput {
    let s_count = config.n_states;
    let (len_lo, len_hi) = config.series_length_range;

    // Half healthy, half diseased, remainder healthy.
    let n_diseased = spec.n_individuals / 2;
    let n_healthy = spec.n_individuals - n_diseased;

    let mut meta = Vec::new();
    let mut paths = Vec::with_capacity(spec.n_individuals);
    let mut diseased_flags = Vec::with_capacity(spec.n_individuals);
    let mut latent_rows: Vec<Vec<f64>> = Vec::new();
    for ind in 0..spec.n_individuals {
        let diseased = ind >= n_healthy;
        diseased_flags.push(diseased);
        let t_len = rng.random_range(len_lo..=len_hi);
        let mut path = Vec::with_capacity(t_len);
        let mut state = 0usize;
        for t in 0..t_len {
            if t > 0 && state + 1 < s_count && rng.random::<f64>() < config.advance_prob {
                state += 1;
            }
            path.push(state);
            let mut row = Vec::with_capacity(spec.k);
            for k in 0..spec.k {
                let mut mean = 0.0;
                for (cluster, values) in &spec.time {
                    if *cluster == k {
                        mean += values[state];
                    }
                }
                if diseased {
                    for (cluster, values) in &spec.interaction {
                        if *cluster == k {
                            mean += values[state];
                        }
                    }
                    for (cluster, value) in &spec.disease {
                        if *cluster == k {
                            mean += value;
                        }
                    }
                }
                row.push(stats::draw_normal(rng, mean, 1.0));
            }
            latent_rows.push(row);
            meta.push(SampleMeta {
                sample_id: format!("{}_{}_{}", spec.prefix, ind + 1, t + 1),
                individual_id: format!("{}_ind_{}", spec.prefix, ind + 1),
                time_index: t + 1,
                disease: u8::from(diseased),
            });
        }
        paths.push(path);
    }
    let n = latent_rows.len();

    // Uniform cluster assignment, redrawn until every cluster is nonempty.
    let assignment = loop {
        let candidate: Vec<usize> = (0..spec.p).map(|_| rng.random_range(0..spec.k)).collect();
        let mut seen = vec![false; spec.k];
        for &g in &candidate {
            seen[g] = true;
        }
        if seen.iter().all(|&s| s) {
            break candidate;
        }
    };

    // Rademacher loadings, then flip whole clusters so every loading sum is
    // nonnegative; this keeps the generator aligned with the model's sign
    // convention, so planted effect directions are recoverable as planted.
    let mut loading: Vec<f64> =
        (0..spec.p).map(|_| if rng.random::<f64>() < 0.5 { 1.0 } else { -1.0 }).collect();
    let mut sums = vec![0.0; spec.k];
    for i in 0..spec.p {
        sums[assignment[i]] += loading[i];
    }
    for i in 0..spec.p {
        if sums[assignment[i]] < 0.0 {
            loading[i] = -loading[i];
        }
    }

    let mut values = Array2::zeros((n, spec.p));
    for j in 0..n {
        for i in 0..spec.p {
            let noise = if config.residual_sd > 0.0 {
                stats::draw_normal(rng, 0.0, config.residual_sd)
            } else {
                0.0
            };
            values[[j, i]] = loading[i] * latent_rows[j][assignment[i]] + noise;
        }
    }

    let variable_names =
        (0..spec.p).map(|i| format!("{}var{}", spec.prefix, i + 1)).collect();
    SideOutput {
        data: GeneratedDataset { values, meta, variable_names },
        assignment,
        loading,
        paths,
        diseased: diseased_flags,
    }
}

/// Randomly divides a generated dataset's individuals into two non-overlapping
/// datasets over the same variables (the split-and-self-match protocol).
pub fn split_individuals(
    data: &GeneratedDataset,
    seed: u64,
) -> Result<(GeneratedDataset, GeneratedDataset)> {
    let design = crate::data::Design::from_meta(&data.meta)?;
    let n_ind = design.individuals.len();
    if n_ind < 2 {
        return Err(Error::InvalidConfig("need at least two individuals to split".into()));
    }
    let mut order: Vec<usize> = (0..n_ind).collect();
    let mut rng = SeedSplitter::new(seed).stream("synth/split");
    order.shuffle(&mut rng);
    let first: Vec<usize> = order[..n_ind.div_ceil(2)].to_vec();

    let take = |individuals: &[usize]| -> GeneratedDataset {
        let mut rows = Vec::new();
        for &ind in individuals {
            rows.extend(design.individuals[ind].rows.iter().copied());
        }
        let mut values = Array2::zeros((rows.len(), data.values.ncols()));
        let mut meta = Vec::with_capacity(rows.len());
        for (out_r, &r) in rows.iter().enumerate() {
            for c in 0..data.values.ncols() {
                values[[out_r, c]] = data.values[[r, c]];
            }
            meta.push(data.meta[r].clone());
        }
        GeneratedDataset { values, meta, variable_names: data.variable_names.clone() }
    };

    let rest: Vec<usize> = order[n_ind.div_ceil(2)..].to_vec();
    Ok((take(&first), take(&rest)))
}

/// The generated-data experiment configuration: 11 individuals per dataset
/// with series of 5 to 15 points, 200/210 variables in 3/4 clusters over a
/// 5-state chain, and three planted effects (a shared temporal effect, a
/// shared interaction effect, and a Y-specific temporal effect).
pub fn generated_experiment_config(seed: u64) -> SynthConfig {
    SynthConfig {
        n_individuals_x: 11,
        n_individuals_y: 11,
        series_length_range: (5, 15),
        p_x: 200,
        p_y: 210,
        k_x: 3,
        k_y: 4,
        n_states: 5,
        planted_effects: vec![
            PlantedEffect {
                kind: PlantedEffectKind::SharedTime,
                cluster_x: Some(0),
                cluster_y: Some(2),
                values: vec![0.0, 0.5, 1.0, 1.5, 2.0],
            },
            PlantedEffect {
                kind: PlantedEffectKind::SharedInteraction,
                cluster_x: Some(2),
                cluster_y: Some(1),
                values: vec![0.0, -0.5, -1.0, -1.5, -2.0],
            },
            PlantedEffect {
                kind: PlantedEffectKind::SpecificTimeY,
                cluster_x: None,
                cluster_y: Some(3),
                values: vec![0.0, -0.5, -1.0, -1.5, -2.0],
            },
        ],
        residual_sd: 1.0,
        advance_prob: 0.5,
        seed,
    }
}
