//! End-to-end pipeline checks on a reduced instance: cluster recovery,
//! pairing recovery, and effect detection.

use xlate_core::sampler::{run_chain, GibbsConfig};
use xlate_core::summarize::{summarize_trace, EffectKind, EffectScope};
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

/// Maps each true cluster to the fitted cluster holding the plurality of its
/// variables, using per-variable posterior-mode assignments.
fn cluster_map(true_assign: &[usize], k_true: usize, snapshots: &[Vec<usize>], k_fit: usize) -> Vec<usize> {
    let p = true_assign.len();
    let mut mode = vec![0usize; p];
    for i in 0..p {
        let mut counts = vec![0usize; k_fit];
        for snap in snapshots {
            counts[snap[i]] += 1;
        }
        mode[i] = (0..k_fit).max_by_key(|&k| counts[k]).unwrap();
    }
    (0..k_true)
        .map(|c| {
            let mut counts = vec![0usize; k_fit];
            for i in 0..p {
                if true_assign[i] == c {
                    counts[mode[i]] += 1;
                }
            }
            (0..k_fit).max_by_key(|&k| counts[k]).unwrap()
        })
        .collect()
}

#[test]
fn reduced_generated_experiment_recovers_structure() {
    let out = synth::generate(&reduced_config(2024)).unwrap();
    let pair = out.study_pair(false).unwrap();
    let config = GibbsConfig {
        n_burn_in: 600,
        n_samples: 600,
        thinning: 3,
        seed: 11,
        n_states: 5,
        k_x: 3,
        k_y: 4,
        ..GibbsConfig::default()
    };
    let trace = run_chain(&pair, &config).unwrap();
    assert_eq!(trace.snapshots.len(), 200);
    let summary = summarize_trace(&trace, 0.9, 0.1).unwrap();

    let gt = &out.ground_truth;
    let assign_x: Vec<Vec<usize>> =
        trace.snapshots.iter().map(|s| s.assignment_x.clone()).collect();
    let assign_y: Vec<Vec<usize>> =
        trace.snapshots.iter().map(|s| s.assignment_y.clone()).collect();
    let map_x = cluster_map(&gt.assignment_x, 3, &assign_x, 3);
    let map_y = cluster_map(&gt.assignment_y, 4, &assign_y, 4);
    println!("map_x = {map_x:?}, map_y = {map_y:?}");
    println!("pairing:\n{:?}", summary.pairing.link_freq);
    println!("unmatched_x: {:?}", summary.pairing.unmatched_x);

    // The planted pairs carry the two highest link frequencies.
    let planted: Vec<(usize, usize)> =
        gt.true_pairing.iter().map(|&(cx, cy)| (map_x[cx], map_y[cy])).collect();
    for &(fx, fy) in &planted {
        let freq = summary.pairing.link_freq[[fx, fy]];
        println!("planted pair ({fx}, {fy}): {freq:.3}");
        assert!(freq >= 0.30, "planted pair frequency {freq}");
    }

    // The Y-specific temporal effect is detected at late states.
    let spec_cluster = map_y[3];
    for s in 2..5 {
        let entry = summary
            .effects
            .iter()
            .find(|e| {
                e.scope == EffectScope::SpecificY { cluster: spec_cluster }
                    && e.kind == EffectKind::Time
                    && e.state == Some(s)
            })
            .unwrap();
        println!(
            "spec_y time s={s}: mean {:.3} [{:.3}, {:.3}] verdict {:?}",
            entry.mean, entry.lower, entry.upper, entry.verdict
        );
        assert!(entry.upper < 0.0, "state {s} interval should exclude zero");
    }
}
