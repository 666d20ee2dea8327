use mocoda_core::data::{Dataset, Provenance, SaSample, Transition};
use mocoda_core::dynamics::{Architecture, BaseModel, DynamicsConfig, DynamicsEnsemble, ENSEMBLE_SIZE};
use mocoda_core::env::{AdjacencyMask, ConstantMask, MaskFn, NavEnv, NavState, ParentSetSpec, Simulator};
use mocoda_core::nets::FeedForwardNet;
use mocoda_core::seeds;
use rand::Rng;

fn small_config(seed: u64) -> DynamicsConfig {
    DynamicsConfig {
        hidden: vec![16, 16],
        batch_size: 64,
        lr: 3e-3,
        max_epochs: 8,
        early_stop_window: 3,
        seed,
    }
}

fn nav_sets() -> Vec<ParentSetSpec> {
    NavEnv::base_parent_sets()
}

fn nav_data(n: usize, seed: u64) -> Dataset {
    NavEnv::default().collect_empirical(n / 2, &mut seeds::rng(seed))
}

/// `s' = s + 0.05 a` with a fixed log-std, exact away from walls and the
/// coupled quadrant.
fn linear_nav_member() -> BaseModel<f64> {
    let mut net = FeedForwardNet::<f64>::zeros(&[4, 4]).unwrap();
    {
        let mut w = net.weight_mut(0);
        w[[0, 0]] = 1.0;
        w[[1, 1]] = 1.0;
        w[[2, 0]] = 0.05;
        w[[3, 1]] = 0.05;
    }
    net.bias_mut(0)[2] = -3.0;
    net.bias_mut(0)[3] = -3.0;
    BaseModel::Unfactored(net)
}

fn linear_ensemble() -> DynamicsEnsemble<f64> {
    DynamicsEnsemble::from_members(
        Architecture::Unfactored,
        2,
        2,
        vec![],
        small_config(0),
        vec![linear_nav_member(); ENSEMBLE_SIZE],
    )
    .unwrap()
}

fn interior_samples(n: usize, seed: u64) -> Vec<SaSample> {
    let mut rng = seeds::rng(seed);
    (0..n)
        .map(|_| SaSample {
            s: vec![rng.random_range(0.1..0.45), rng.random_range(0.1..0.9)],
            a: vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
            provenance: Provenance::Rand,
        })
        .collect()
}

#[test]
fn global_factored_nav_has_one_network_per_mechanism() {
    let ens = DynamicsEnsemble::<f64>::build(Architecture::GlobalFactored, 2, 2, &nav_sets(), small_config(0)).unwrap();
    for m in ens.members() {
        match m {
            BaseModel::GlobalFactored { parent_sets, nets } => {
                assert_eq!(nets.len(), 2);
                assert_eq!(parent_sets[0].parent_indices, vec![0, 2]);
                assert_eq!(parent_sets[1].parent_indices, vec![1, 3]);
                assert!(nets.iter().all(|n| n.input_dim() == 2 && n.output_dim() == 2));
            }
            _ => panic!("wrong architecture"),
        }
    }
}

#[test]
fn factored_architectures_require_parent_sets() {
    for arch in [Architecture::GlobalFactored, Architecture::LocalFactored] {
        assert!(DynamicsEnsemble::<f64>::build(arch, 2, 2, &[], small_config(0)).is_err());
    }
    assert!(DynamicsEnsemble::<f64>::build(Architecture::Unfactored, 2, 2, &[], small_config(0)).is_ok());
}

#[test]
fn local_model_ignores_masked_inputs_at_base_mask() {
    let env = NavEnv::default();
    let ens = DynamicsEnsemble::<f64>::build(Architecture::LocalFactored, 2, 2, &nav_sets(), small_config(1)).unwrap();
    let mask = env.mask_at(NavState::new(0.2, 0.2));
    let jac = ens.input_jacobian(&[0.2, 0.2, 0.3, -0.4], &mask).unwrap();
    for j in jac {
        // x' mean (col 0) and logstd (col 2) see neither y nor dy
        for col in [0, 2] {
            assert_eq!(j[[1, col]], 0.0);
            assert_eq!(j[[3, col]], 0.0);
        }
        for col in [1, 3] {
            assert_eq!(j[[0, col]], 0.0);
            assert_eq!(j[[2, col]], 0.0);
        }
    }
    let base = ens.predict(&[0.2, 0.2], &[0.3, -1.0], &mask).unwrap();
    for k in 0..=20 {
        let dy = -1.0 + 0.1 * k as f64;
        let p = ens.predict(&[0.2, 0.2], &[0.3, dy], &mask).unwrap();
        assert_eq!(p.mean[0], base.mean[0]);
        assert_eq!(p.std[0], base.std[0]);
    }
}

#[test]
fn local_model_with_full_mask_reaches_every_input() {
    let ens = DynamicsEnsemble::<f64>::build(Architecture::LocalFactored, 2, 2, &nav_sets(), small_config(2)).unwrap();
    let mask = AdjacencyMask::ones(4, 2);
    let mut rng = seeds::rng(3);
    let mut reached = [[false; 2]; 4];
    for _ in 0..50 {
        let sa: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        for j in ens.input_jacobian(&sa, &mask).unwrap() {
            for (i, row) in reached.iter_mut().enumerate() {
                for (c, r) in row.iter_mut().enumerate() {
                    *r |= j[[i, c]] != 0.0;
                }
            }
        }
    }
    assert!(reached.iter().flatten().all(|&r| r));
}

#[test]
fn local_and_global_share_dependency_pattern_under_base_mask() {
    let global = DynamicsEnsemble::<f64>::build(Architecture::GlobalFactored, 2, 2, &nav_sets(), small_config(4)).unwrap();
    let local = DynamicsEnsemble::<f64>::build(Architecture::LocalFactored, 2, 2, &nav_sets(), small_config(4)).unwrap();
    let mask = NavEnv::base_mask();
    let mut rng = seeds::rng(5);
    for _ in 0..20 {
        let sa: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = global.input_jacobian(&sa, &mask).unwrap();
        let l = local.input_jacobian(&sa, &mask).unwrap();
        for (gj, lj) in g.iter().zip(&l) {
            for i in 0..4 {
                for c in 0..4 {
                    if !mask.get(i, c % 2) {
                        assert_eq!(gj[[i, c]], 0.0);
                        assert_eq!(lj[[i, c]], 0.0);
                    }
                }
            }
        }
    }
}

#[test]
fn identical_members_aggregate_to_one_member() {
    let ens = DynamicsEnsemble::<f64>::build(Architecture::Unfactored, 2, 2, &[], small_config(6)).unwrap();
    let one = ens.members()[0].clone();
    let same = DynamicsEnsemble::from_members(
        Architecture::Unfactored,
        2,
        2,
        vec![],
        small_config(6),
        vec![one.clone(); ENSEMBLE_SIZE],
    )
    .unwrap();
    let single = DynamicsEnsemble::from_members(
        Architecture::Unfactored,
        2,
        2,
        vec![],
        small_config(6),
        vec![one; ENSEMBLE_SIZE],
    )
    .unwrap();
    let mask = NavEnv::base_mask();
    let a = same.predict(&[0.3, 0.4], &[0.5, -0.5], &mask).unwrap();
    let b = single.predict(&[0.3, 0.4], &[0.5, -0.5], &mask).unwrap();
    assert_eq!(a, b);
    // and equal to the member's own output
    let out = same.members()[0]
        .forward(
            ndarray::array![[0.3, 0.4, 0.5, -0.5]].view(),
            mocoda_core::dynamics::mask_matrix::<f64>(&[mask]).view(),
            2,
        )
        .unwrap();
    for j in 0..2 {
        assert!((a.mean[j] - out[[0, j]]).abs() < 1e-15);
        assert!((a.std[j] - out[[0, 2 + j]].clamp(-7.0, 2.0).exp()).abs() < 1e-15);
    }
}

#[test]
fn permuting_members_leaves_prediction_unchanged() {
    let ens = DynamicsEnsemble::<f64>::build(Architecture::LocalFactored, 2, 2, &nav_sets(), small_config(7)).unwrap();
    let mut members = ens.members().to_vec();
    members.reverse();
    let perm = DynamicsEnsemble::from_members(Architecture::LocalFactored, 2, 2, nav_sets(), small_config(7), members).unwrap();
    let mask = NavEnv::base_mask();
    let a = ens.predict(&[0.1, 0.7], &[0.2, 0.9], &mask).unwrap();
    let b = perm.predict(&[0.1, 0.7], &[0.2, 0.9], &mask).unwrap();
    for j in 0..2 {
        assert!((a.mean[j] - b.mean[j]).abs() < 1e-14);
        assert!((a.std[j] - b.std[j]).abs() < 1e-14);
    }
}

#[test]
fn sample_next_respects_std_scale() {
    let ens = linear_ensemble();
    let mask = NavEnv::base_mask();
    let (s, a) = ([0.3, 0.3], [0.5, -0.5]);
    let pred = ens.predict(&s, &a, &mask).unwrap();
    let det = ens.sample_next(&s, &a, &mask, 0.0, &mut seeds::rng(1)).unwrap();
    assert_eq!(det, pred.mean);

    let scale = 1.0 / 3.0;
    let sa = vec![vec![0.3, 0.3, 0.5, -0.5]; 10_000];
    let masks = vec![mask.clone(); 10_000];
    let draws = ens.sample_next_batch(&sa, &masks, scale, &mut seeds::rng(2)).unwrap();
    for j in 0..2 {
        let col = draws.column(j);
        let mean = col.mean().unwrap();
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (col.len() - 1) as f64).sqrt();
        let want = scale * pred.std[j];
        assert!((sd - want).abs() < 0.1 * want, "dim {j}: {sd} vs {want}");
    }
    let again = ens.sample_next_batch(&sa[..10], &masks[..10], scale, &mut seeds::rng(2)).unwrap();
    assert_eq!(again, draws.slice(ndarray::s![..10, ..]));
}

#[test]
fn eval_mse_is_zero_for_exact_predictor() {
    let env = NavEnv::default();
    let r = linear_ensemble().eval_mse(&interior_samples(500, 8), &env).unwrap();
    assert!(r.mse < 1e-25, "{}", r.mse);
    assert_eq!(r.mse_e2, r.mse * 1e2);
}

#[test]
fn eval_mse_of_zero_predictor_is_mean_square_target() {
    let env = NavEnv::default();
    let zero = BaseModel::Unfactored(FeedForwardNet::<f64>::zeros(&[4, 4]).unwrap());
    let ens = DynamicsEnsemble::from_members(Architecture::Unfactored, 2, 2, vec![], small_config(0), vec![zero; ENSEMBLE_SIZE]).unwrap();
    let samples = interior_samples(300, 9);
    let oracle: f64 = samples
        .iter()
        .map(|s| env.next_state(&s.s, &s.a).iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        / (2 * samples.len()) as f64;
    let r = ens.eval_mse(&samples, &env).unwrap();
    assert!((r.mse - oracle).abs() < 1e-12);
}

struct LinearSim;

impl MaskFn for LinearSim {
    fn mask(&self, _sa: &[f64]) -> AdjacencyMask {
        AdjacencyMask::ones(3, 2)
    }
}

impl Simulator for LinearSim {
    fn next_state(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        vec![0.8 * s[0] - 0.3 * s[1] + 0.5 * a[0], 0.2 * s[0] + 0.9 * s[1] - 0.4 * a[0]]
    }
}

#[test]
fn unfactored_model_fits_noiseless_linear_system() {
    let mut rng = seeds::rng(10);
    let mut ds = Dataset::new(2, 1);
    for _ in 0..4000 {
        let s = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let a = vec![rng.random_range(-1.0..1.0)];
        let s2 = LinearSim.next_state(&s, &a);
        ds.push(Transition::new(s, a, s2, 0.0, false)).unwrap();
    }
    let cfg = DynamicsConfig {
        hidden: vec![32, 32],
        batch_size: 128,
        lr: 3e-3,
        max_epochs: 60,
        early_stop_window: 10,
        seed: 11,
    };
    let mut ens = DynamicsEnsemble::<f64>::build(Architecture::Unfactored, 2, 1, &[], cfg).unwrap();
    ens.fit(&ds, 500, &LinearSim).unwrap();
    let val: Vec<SaSample> = ds.transitions[..500]
        .iter()
        .map(|t| SaSample { s: t.s.clone(), a: t.a.clone(), provenance: Provenance::Emp })
        .collect();
    let r = ens.eval_mse(&val, &LinearSim).unwrap();
    assert!(r.mse < 1e-4, "{}", r.mse);
}

#[test]
fn training_is_deterministic_and_reduces_nll() {
    let data = nav_data(2000, 12);
    let env = NavEnv::default();
    let run = || {
        let mut ens = DynamicsEnsemble::<f64>::build(Architecture::LocalFactored, 2, 2, &nav_sets(), small_config(13)).unwrap();
        let h = ens.fit(&data, 300, &env).unwrap();
        (ens, h)
    };
    let (a, ha) = run();
    let (b, _) = run();
    for (ma, mb) in a.members().iter().zip(b.members()) {
        assert_eq!(ma.blocks(), mb.blocks());
    }
    for m in 0..ENSEMBLE_SIZE {
        let recs: Vec<_> = ha.member(m).collect();
        assert_eq!(recs.len(), 8);
        assert!(recs.last().unwrap().train_nll < recs[0].train_nll);
        assert!(ha.best_epochs[m] >= 5);
    }
    assert!(a.diagnostics().iter().all(|d| d.is_none()));
}

#[test]
fn diverging_members_are_rolled_back_and_flagged() {
    let data = nav_data(400, 14);
    let mut cfg = small_config(15);
    cfg.lr = 1e12;
    cfg.max_epochs = 5;
    let mut ens = DynamicsEnsemble::<f64>::build(Architecture::Unfactored, 2, 2, &[], cfg).unwrap();
    ens.fit(&data, 50, &ConstantMask(AdjacencyMask::ones(4, 2))).unwrap();
    for (m, d) in ens.members().iter().zip(ens.diagnostics()) {
        assert!(m.is_finite());
        if d.is_some() {
            assert!(d.as_ref().unwrap().contains("rolled back"));
        }
    }
}

#[test]
fn ensemble_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for arch in Architecture::ALL {
        let ens = DynamicsEnsemble::<f64>::build(arch, 2, 2, &nav_sets(), small_config(16)).unwrap();
        let sub = dir.path().join(arch.as_str());
        ens.save(&sub, None).unwrap();
        let back = DynamicsEnsemble::<f64>::load(&sub).unwrap();
        assert_eq!(back.architecture(), arch);
        assert_eq!(back.content_hash().unwrap(), ens.content_hash().unwrap());
        let mask = NavEnv::base_mask();
        assert_eq!(
            back.predict(&[0.1, 0.2], &[0.3, 0.4], &mask).unwrap(),
            ens.predict(&[0.1, 0.2], &[0.3, 0.4], &mask).unwrap()
        );
    }
    assert!(DynamicsEnsemble::<f64>::load(&dir.path().join("missing")).is_err());
}
