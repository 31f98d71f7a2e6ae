//! Scratch diagnostics: is the linked mode self-sustaining, and is the
//! collapsed delta positive under the true alignment? (temporary)

use xlate_core::effects::DatasetLatent;
use xlate_core::hmm::StatePath;
use xlate_core::matching::{link_delta, CellStats};
use xlate_core::rng::SeedSplitter;
use xlate_core::sampler::{init_state, sweep, GibbsConfig, ModelInput};
use xlate_core::synth::{self, PlantedEffect, PlantedEffectKind, SynthConfig};

fn reduced_config(seed: u64) -> SynthConfig {
    SynthConfig {
        n_individuals_x: 11,
        n_individuals_y: 11,
        series_length_range: (5, 15),
        p_x: 40,
        p_y: 44,
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

#[test]
fn true_alignment_and_seeded_links() {
    let out = synth::generate(&reduced_config(2024)).unwrap();
    let pair = out.study_pair(false).unwrap();
    let config = GibbsConfig {
        n_burn_in: 0,
        n_samples: 0,
        thinning: 1,
        seed: 11,
        n_states: 5,
        k_x: 3,
        k_y: 4,
        ..GibbsConfig::default()
    };
    let x = ModelInput::new(pair.x.values(), pair.x.design());
    let y = ModelInput::new(pair.y.values(), pair.y.design());
    let mut rng = SeedSplitter::new(11).stream("chain");
    let mut state = init_state(x, y, &config, &mut rng).unwrap();
    let gt = &out.ground_truth;

    // Force the ground-truth assignments, loadings, and paths, then let a few
    // sweeps of latent/effect updates settle around them with paths frozen by
    // re-forcing after each sweep.
    for i in 0..40 {
        sweep(&mut state, x, y, &config, &mut rng).unwrap();
        state.params_x.assignment = gt.assignment_x.clone();
        state.params_y.assignment = gt.assignment_y.clone();
        state.paths_x = gt
            .paths_x
            .iter()
            .map(|p| StatePath::new(p.clone(), 5).unwrap())
            .collect();
        state.paths_y = gt
            .paths_y
            .iter()
            .map(|p| StatePath::new(p.clone(), 5).unwrap())
            .collect();
        state.refresh_state_cache(pair.x.design(), pair.y.design());
        let _ = i;
    }

    let effect_cfg = config.effect_config();
    let xl = DatasetLatent {
        latent: &state.latent_x.factors,
        states: &state.states_x,
        diseased: &pair.x.design().diseased_by_row,
    };
    let yl = DatasetLatent {
        latent: &state.latent_y.factors,
        states: &state.states_y,
        diseased: &pair.y.design().diseased_by_row,
    };
    println!("deltas under TRUE alignment and clustering:");
    for kx in 0..3 {
        for ky in 0..4 {
            let d = link_delta(
                &CellStats::from_latent(&xl, kx, 5),
                &CellStats::from_latent(&yl, ky, 5),
                &effect_cfg,
            );
            print!("delta[{kx}][{ky}] = {d:8.2}  ");
        }
        println!();
    }
    println!("(true pairs: (0,2) and (2,1) in TRUE cluster indices)");

    // Now release everything but seed the true links and see if they persist
    // over free sweeps.
    state.matching = xlate_core::matching::MatchingState::from_links(3, 4, &[(0, 2), (2, 1)])
        .unwrap();
    let mut linked_sweeps = 0usize;
    let total = 600usize;
    for i in 0..total {
        sweep(&mut state, x, y, &config, &mut rng).unwrap();
        if i % 100 == 0 {
            println!("free sweep {i}: links {:?}", state.matching.links());
        }
        linked_sweeps += usize::from(state.matching.n_links() == 2);
    }
    println!("fraction of sweeps with both links: {:.2}", linked_sweeps as f64 / total as f64);
}
