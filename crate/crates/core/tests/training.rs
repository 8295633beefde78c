use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stif::net::{AssocNet, NetConfig};
use stif::sim::{generate, generate_set, ScenarioConfig};
use stif::train::{sample_pairs, train_step, AdamState, PairSample, TrainConfig};

const OVERFIT_STEPS: usize = 500;
const OVERFIT_TARGET: f64 = 0.05;

#[test]
fn overfits_one_noiseless_pair_and_moves_every_tensor() {
    let scene = generate(
        &ScenarioConfig {
            n_objects: 4,
            n_frames: 8,
            seed: 3,
            ..Default::default()
        }
        .noiseless(),
    )
    .unwrap();
    let scenes = vec![scene];
    let mut net = AssocNet::new(NetConfig::default()).unwrap();
    let init = net.params().clone();
    let mut adam = AdamState::new(net.params());
    let cfg = TrainConfig::default();
    let batch = vec![PairSample { scene: 0, t: 6, zeta: 1 }];
    let mut reached = None;
    for step in 1..=OVERFIT_STEPS {
        let (loss, _) = train_step(&mut net, &mut adam, &scenes, &batch, &cfg, 1e-3).unwrap();
        assert!(loss.total.is_finite());
        if loss.tracking < OVERFIT_TARGET {
            reached = Some(step);
            break;
        }
    }
    assert!(reached.is_some(), "tracking loss stayed above {OVERFIT_TARGET} for {OVERFIT_STEPS} steps");

    // Adam leaves a tensor untouched only if all its gradients were zero.
    let dead: Vec<&str> = init
        .iter()
        .zip(net.params().iter())
        .filter(|((_, a), (_, b))| a.max_abs_diff(b) == 0.0)
        .map(|((name, _), _)| name)
        .collect();
    assert!(dead.is_empty(), "never updated: {dead:?}");
}

#[test]
fn frame_gaps_are_uniform() {
    let scenes = generate_set(
        &ScenarioConfig {
            n_frames: 20,
            ..Default::default()
        },
        2,
        [3, 4],
        1,
    )
    .unwrap();
    let cfg = TrainConfig {
        batch_pairs: 1000,
        dt_range: [1, 5],
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut counts = [0usize; 5];
    for _ in 0..10 {
        for p in sample_pairs(&scenes, &cfg, 5, &mut rng).unwrap() {
            assert!(p.zeta >= 1 && p.zeta <= 5 && p.t >= 5 && p.t < 20);
            counts[p.zeta - 1] += 1;
        }
    }
    let expected = 10_000.0 / 5.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 99.9th percentile of chi-square with 4 degrees of freedom.
    assert!(chi2 < 18.47, "chi2 {chi2}, counts {counts:?}");
}
