use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mood_core::algos::losses::{ensemble_aggregate, expectile_loss, wis_weights};
use mood_core::algos::{evaluation_sampling_action, AlgoConfig, Algorithm, TrainState};
use mood_core::analysis::{estimator_bias_variance, Estimator, Fixture};
use mood_core::datasets::{
    generate_dataset, merge, relabel, Controller, Dataset, EnvId, Task, ToyEnv,
};
use mood_core::logtree::{log_sum_exp, LogSumExpTree};
use mood_core::nets::{Arch, CriticEnsemble, GaussianPolicy, Preset};
use mood_core::stats::{chi_square_gof, ks_two_sample};

fn small_dataset(controller: Controller, task: Task, seed: u64) -> Dataset {
    let env = ToyEnv::new(EnvId::Pointmass2d, task).unwrap();
    generate_dataset(&env, controller, 3, 0.2, seed).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tree_root_tracks_brute_force(
        cap in 1usize..100,
        updates in prop::collection::vec((0usize..100, -50.0f64..50.0), 1..300),
    ) {
        let mut tree = LogSumExpTree::new(cap).unwrap();
        let mut leaves = vec![f64::NEG_INFINITY; cap];
        for (i, v) in updates {
            let i = i % cap;
            tree.set_logit(i, v).unwrap();
            leaves[i] = v;
        }
        prop_assert!(rel(tree.log_norm(), log_sum_exp(&leaves)) <= 1e-12);
    }

    #[test]
    fn bulk_build_matches_sequential(logits in prop::collection::vec(-50.0f64..50.0, 1..80)) {
        let bulk = LogSumExpTree::from_logits(&logits).unwrap();
        let mut seq = LogSumExpTree::new(logits.len()).unwrap();
        for (i, &v) in logits.iter().enumerate() {
            seq.set_logit(i, v).unwrap();
        }
        for (a, b) in bulk.nodes().iter().zip(seq.nodes()) {
            prop_assert!(a == b || rel(*a, *b) <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn tree_nodes_stay_finite_at_extreme_offsets(
        logits in prop::collection::vec(-50.0f64..50.0, 1..64),
        sign in prop::bool::ANY,
    ) {
        let c = if sign { 1e8 } else { -1e8 };
        let shifted: Vec<f64> = logits.iter().map(|v| v + c).collect();
        let tree = LogSumExpTree::from_logits(&shifted).unwrap();
        let cap = tree.nodes().len().div_ceil(2);
        // an internal node must be finite whenever its leftmost leaf is live
        for j in 0..cap - 1 {
            let mut leaf = j;
            while leaf < cap - 1 {
                leaf = 2 * leaf + 1;
            }
            if leaf + 1 - cap < logits.len() {
                prop_assert!(tree.nodes()[j].is_finite(), "node {j}");
            }
        }
        let base = LogSumExpTree::from_logits(&logits).unwrap();
        for i in 0..logits.len() {
            let (a, b) = (tree.log_prob(i).unwrap(), base.log_prob(i).unwrap());
            prop_assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn writes_per_update_are_logarithmic(cap in 1usize..300, i in 0usize..300, v in -50.0f64..50.0) {
        let mut tree = LogSumExpTree::new(cap).unwrap();
        let before = tree.node_writes();
        tree.set_logit(i % cap, v).unwrap();
        let bound = (cap as f64).log2().ceil() as u64 + 1;
        prop_assert!(tree.node_writes() - before <= bound);
    }

    #[test]
    fn wis_weights_normalized_and_shift_invariant(
        adv in prop::collection::vec(-20.0f64..20.0, 1..64),
        beta in 0.05f64..10.0,
        c in -1e3f64..1e3,
    ) {
        let a = Array1::from(adv);
        let w = wis_weights(a.view(), beta);
        prop_assert!(w.iter().all(|&x| x >= 0.0));
        prop_assert!((w.sum() - 1.0).abs() <= 1e-12);
        let shifted = wis_weights((&a + c).view(), beta);
        for (x, y) in w.iter().zip(shifted.iter()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn aggregate_nonincreasing_in_lambda(
        q in prop::collection::vec(-100.0f64..100.0, 2..8),
        l1 in 0.0f64..3.0,
        dl in 0.0f64..3.0,
    ) {
        let lo = ensemble_aggregate(&q, l1).unwrap();
        let hi = ensemble_aggregate(&q, l1 + dl).unwrap();
        prop_assert!(hi <= lo + 1e-12 * lo.abs().max(1.0));
    }

    #[test]
    fn aggregate_identities(a in -100.0f64..100.0, b in -100.0f64..100.0) {
        prop_assert_eq!(ensemble_aggregate(&[a, b], 0.5).unwrap(), a.min(b));
        prop_assert_eq!(ensemble_aggregate(&[a, b], 0.0).unwrap(), (a + b) / 2.0);
    }

    #[test]
    fn expectile_identities(u in -1e3f64..1e3, tau in 0.001f64..0.999) {
        prop_assert_eq!(expectile_loss(u, 0.5), 0.5 * u * u);
        let sum = expectile_loss(u, tau) + expectile_loss(-u, tau);
        prop_assert!((sum - u * u).abs() <= 1e-12 * (u * u).max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn relabel_commutes_with_merge(s1 in 0u64..1000, s2 in 0u64..1000, t in 0usize..4) {
        let target = [Task::ReachEast, Task::ReachWest, Task::Stand, Task::Spin][t];
        let d1 = small_dataset(Controller::Scripted(Task::ReachNorth), Task::ReachNorth, s1);
        let d2 = small_dataset(Controller::Random, Task::ReachNorth, s2);
        let merged_then = relabel(&merge(&[d1.clone(), d2.clone()]).unwrap(), target).unwrap();
        let then_merged = merge(&[relabel(&d1, target).unwrap(), relabel(&d2, target).unwrap()]).unwrap();
        prop_assert_eq!(merged_then.columns(), then_merged.columns());
        prop_assert_eq!(merged_then.max_return().to_bits(), then_merged.max_return().to_bits());
    }

    #[test]
    fn stored_max_return_matches_recomputation(seed in 0u64..1000, noise in 0.0f64..0.5) {
        let env = ToyEnv::new(EnvId::Line1d, Task::Stand).unwrap();
        let ds = generate_dataset(&env, Controller::Scripted(Task::ReachEast), 4, noise, seed).unwrap();
        let by_episode = ds.episode_returns().into_iter().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!((ds.max_return() - by_episode).abs() <= 1e-9);
        prop_assert!((ds.max_return() - ds.recompute_max_return()).abs() <= 1e-9);
        let mut covered = 0;
        for r in ds.episodes() {
            prop_assert!(ds.episode_starts()[r.start]);
            prop_assert!(ds.episode_starts()[r.start + 1..r.end].iter().all(|s| !s));
            covered += r.len();
        }
        prop_assert_eq!(covered, ds.len());
    }

    #[test]
    fn mixed_contains_same_objective_rows(seed in 0u64..1000) {
        let target = Task::ReachEast;
        let same = small_dataset(Controller::Scripted(target), target, seed);
        let others: Vec<Dataset> = [Controller::Scripted(Task::ReachWest), Controller::Random]
            .into_iter()
            .enumerate()
            .map(|(k, c)| relabel(&small_dataset(c, Task::ReachWest, seed + 1 + k as u64), target).unwrap())
            .collect();
        let mut parts = vec![same.clone()];
        parts.extend(others);
        let mixed = merge(&parts).unwrap();
        let key = |d: &Dataset, i: usize| -> Vec<u64> {
            d.states().row(i).iter()
                .chain(d.actions().row(i).iter())
                .chain(d.next_states().row(i).iter())
                .chain(std::iter::once(&d.rewards()[i]))
                .map(|v| v.to_bits())
                .collect()
        };
        let rows: std::collections::HashSet<Vec<u64>> = (0..mixed.len()).map(|i| key(&mixed, i)).collect();
        for i in 0..same.len() {
            prop_assert!(rows.contains(&key(&same, i)));
        }
    }
}

#[test]
fn tree_softmax_survives_large_constant_shifts() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let logits: Vec<f64> = (0..24).map(|_| rng.random_range(-5.0..5.0)).collect();
    let z = log_sum_exp(&logits);
    let probs: Vec<f64> = logits.iter().map(|v| (v - z).exp()).collect();
    for c in [-1e6, 1e6] {
        let shifted: Vec<f64> = logits.iter().map(|v| v + c).collect();
        let tree = LogSumExpTree::from_logits(&shifted).unwrap();
        let mut counts = vec![0u64; logits.len()];
        for i in tree.sample_batch(&mut rng, 200_000).unwrap() {
            counts[i] += 1;
        }
        let r = chi_square_gof(&counts, &probs);
        assert!(r.p_value > 0.001, "shift {c}: p = {}", r.p_value);
    }
}

#[test]
fn iql_queries_critics_only_at_dataset_actions() {
    let ds = small_dataset(Controller::Scripted(Task::ReachEast), Task::ReachEast, 5);
    let cfg = AlgoConfig {
        algorithm: Algorithm::Iql,
        batch_size: 32,
        policy_delay: 1,
        ..AlgoConfig::default()
    };
    let mut state = TrainState::for_dataset(cfg, &ds, 9).unwrap();
    let probe = state.critics.attach_probe();
    for _ in 0..20 {
        state.train_step(&ds).unwrap();
    }
    let allowed: std::collections::HashSet<Vec<u64>> = ds
        .actions()
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v.to_bits()).collect())
        .collect();
    let log = probe.lock().unwrap();
    assert!(!log.is_empty());
    for a in log.iter() {
        let bits: Vec<u64> = a.iter().map(|v| v.to_bits()).collect();
        assert!(
            allowed.contains(&bits),
            "critic evaluated at non-dataset action {a:?}"
        );
    }
}

#[test]
fn awac_probe_does_see_policy_actions() {
    // sanity check that the probe can detect off-dataset queries at all
    let ds = small_dataset(Controller::Scripted(Task::ReachEast), Task::ReachEast, 5);
    let cfg = AlgoConfig {
        algorithm: Algorithm::Awac,
        batch_size: 32,
        policy_delay: 1,
        ..AlgoConfig::default()
    };
    let mut state = TrainState::for_dataset(cfg, &ds, 9).unwrap();
    let probe = state.critics.attach_probe();
    state.train_step(&ds).unwrap();
    let allowed: std::collections::HashSet<Vec<u64>> = ds
        .actions()
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v.to_bits()).collect())
        .collect();
    let log = probe.lock().unwrap();
    assert!(log
        .iter()
        .any(|a| !allowed.contains(&a.iter().map(|v| v.to_bits()).collect::<Vec<_>>())));
}

#[test]
fn wis_variance_nonincreasing_in_batch_size() {
    let f = Fixture::gaussian(2000, 4).unwrap();
    let rows: Vec<_> = [16, 64, 256, 1024]
        .into_iter()
        .map(|n| estimator_bias_variance(&f, Estimator::AwacWis, 1.0, n, 2000, 17).unwrap())
        .collect();
    for w in rows.windows(2) {
        // standard error of a sample variance under approximate normality
        let se = |r: &mood_core::analysis::EstimatorRow| {
            r.variance * (2.0 / (r.trials as f64 - 1.0)).sqrt()
        };
        let slack = 3.0 * (se(&w[0]).powi(2) + se(&w[1]).powi(2)).sqrt();
        assert!(
            w[1].variance <= w[0].variance + slack,
            "n={} var {} > n={} var {}",
            w[1].batch_size,
            w[1].variance,
            w[0].batch_size,
            w[0].variance
        );
    }
}

#[test]
fn asac_fresh_unbiased_on_small_gaussian_fixture() {
    let f = Fixture::gaussian(1000, 8).unwrap();
    for beta in [0.1, 1.0, 10.0] {
        let row = estimator_bias_variance(&f, Estimator::AsacFresh, beta, 64, 4000, 3).unwrap();
        assert!(
            row.within(3.0),
            "beta {beta}: bias {} se {}",
            row.bias,
            row.bias_se()
        );
    }
}

fn action_mse(state: &TrainState, ds: &Dataset) -> f64 {
    let mu = state.policy.act_mean(ds.states().view()).unwrap();
    (&mu - ds.actions()).mapv(|d| d * d).mean().unwrap()
}

#[test]
fn strong_behavior_cloning_pulls_policy_toward_data() {
    let env = ToyEnv::new(EnvId::Pointmass2d, Task::ReachEast).unwrap();
    let ds = generate_dataset(&env, Controller::Scripted(Task::ReachEast), 10, 0.1, 2).unwrap();
    let run = |alpha: f64| {
        let cfg = AlgoConfig {
            algorithm: Algorithm::Td3bc,
            alpha,
            batch_size: 64,
            policy_delay: 1,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            ..AlgoConfig::default()
        };
        let mut st = TrainState::for_dataset(cfg, &ds, 4).unwrap();
        for _ in 0..300 {
            st.train_step(&ds).unwrap();
        }
        action_mse(&st, &ds)
    };
    let (td3, bc) = (run(0.0), run(10.0));
    assert!(bc < td3, "alpha 10 mse {bc} not below alpha 0 mse {td3}");
}

fn rollout_returns(
    policy: &GaussianPolicy,
    critics: &CriticEnsemble,
    env: &ToyEnv,
    episodes: usize,
    seed: u64,
    use_es: bool,
) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..episodes)
        .map(|_| {
            let mut s = env.reset(&mut rng);
            let mut total = 0.0;
            for _ in 0..env.horizon {
                let sv = Array1::from(s.clone());
                let a = if use_es {
                    evaluation_sampling_action(policy, critics, sv.view(), 1, 0.0, &mut rng)
                        .unwrap()
                } else {
                    let states = Array2::from_shape_vec((1, s.len()), s.clone()).unwrap();
                    policy
                        .sample(states.view(), &mut rng)
                        .unwrap()
                        .row(0)
                        .to_owned()
                };
                let (next, r, _) = env.step(&s, a.as_slice().unwrap()).unwrap();
                total += r;
                s = next;
            }
            total
        })
        .collect()
}

#[test]
fn single_candidate_es_matches_stochastic_policy_in_distribution() {
    let env = ToyEnv::new(EnvId::Pointmass2d, Task::ReachEast).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let policy = GaussianPolicy::new(&Preset::SimpleSmall.actor(4, 2), 0.0, &mut rng);
    let critics = CriticEnsemble::new(
        &Arch::Simple {
            dims: vec![6, 32, 1],
        },
        4,
        2,
        &mut rng,
    )
    .unwrap();
    let es = rollout_returns(&policy, &critics, &env, 200, 100, true);
    let stochastic = rollout_returns(&policy, &critics, &env, 200, 200, false);
    let (_, p) = ks_two_sample(&es, &stochastic);
    assert!(p > 0.001, "KS p = {p}");
}
