use std::collections::HashMap;

use mocoda_core::data::{Dataset, Provenance, SaSample, Transition};
use mocoda_core::env::{MaskFn, NavEnv, NavState, Simulator};
use mocoda_core::gmm::EmConfig;
use mocoda_core::kde::Kde;
use mocoda_core::parent_sampler::{
    baseline_samples, coda_swap, fit_parent_gmms, reweight_priority, reweight_uniform, sample_mocoda,
    state_features, BaselineKind, DynaSource, ParentModel,
};
use mocoda_core::seeds;
use rand::Rng;
use std::sync::OnceLock;

fn nav_data() -> &'static Dataset {
    static DATA: OnceLock<Dataset> = OnceLock::new();
    DATA.get_or_init(|| NavEnv::default().collect_empirical(20_000, &mut seeds::rng(100)))
}

fn nav_parents() -> &'static ParentModel {
    static MODEL: OnceLock<ParentModel> = OnceLock::new();
    MODEL.get_or_init(|| {
        let em = EmConfig {
            seed: 7,
            ..EmConfig::default()
        };
        fit_parent_gmms(nav_data(), &NavEnv::base_parent_sets(), 32, &em).unwrap()
    })
}

fn in_open_square(s: &SaSample) -> bool {
    s.s.iter().all(|v| *v > 0.3 && *v < 0.9)
}

fn frac(samples: &[SaSample], f: impl Fn(&SaSample) -> bool) -> f64 {
    samples.iter().filter(|s| f(s)).count() as f64 / samples.len() as f64
}

fn mean_cov(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let d = rows[0].len();
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let cov = (0..d)
        .map(|a| {
            (0..d)
                .map(|b| rows.iter().map(|r| (r[a] - mean[a]) * (r[b] - mean[b])).sum::<f64>() / n)
                .collect()
        })
        .collect();
    (mean, cov)
}

#[test]
fn nav_parent_model_has_two_planar_mixtures() {
    let m = nav_parents();
    assert_eq!(m.sets.len(), 2);
    for (p, g) in &m.sets {
        assert_eq!(g.dim(), 2);
        assert_eq!(g.n_components(), 32);
        assert_eq!(p.parent_indices.len(), 2);
    }
}

#[test]
fn parent_mixtures_beat_unit_gaussian_on_held_out_data() {
    let held = NavEnv::default().collect_empirical(1000, &mut seeds::rng(101));
    let unit = |x: &[f64]| -> f64 {
        x.iter().map(|v| -0.5 * v * v - 0.5 * (2.0 * std::f64::consts::PI).ln()).sum()
    };
    for (p, g) in &nav_parents().sets {
        let (mut ll, mut base) = (0.0, 0.0);
        for t in &held.transitions {
            let sa = t.state_action();
            let x: Vec<f64> = p.parent_indices.iter().map(|&i| sa[i]).collect();
            let l = g.log_density(&x).unwrap();
            assert!(l.is_finite());
            ll += l;
            base += unit(&x);
        }
        assert!(ll > base, "{ll} <= {base}");
    }
}

#[test]
fn mocoda_samples_match_marginals_and_decorrelate_sets() {
    let samples = sample_mocoda(nav_parents(), 50_000, &mut seeds::rng(1), false, None).unwrap();
    let emp: Vec<Vec<f64>> = nav_data().transitions.iter().map(|t| t.state_action()).collect();
    let gen: Vec<Vec<f64>> = samples.iter().map(|s| s.state_action()).collect();
    for (p, _) in &nav_parents().sets {
        let pick = |rows: &[Vec<f64>]| -> Vec<Vec<f64>> {
            rows.iter().map(|r| p.parent_indices.iter().map(|&i| r[i]).collect()).collect()
        };
        let (me, ce) = mean_cov(&pick(&emp));
        let (mg, cg) = mean_cov(&pick(&gen));
        for j in 0..2 {
            // second moments compared as E[x^2], which is scale-free for these ranges
            let e2 = ce[j][j] + me[j] * me[j];
            let g2 = cg[j][j] + mg[j] * mg[j];
            assert!((mg[j] - me[j]).abs() <= 0.05 * me[j].abs().max(0.05), "mean {j}: {} vs {}", mg[j], me[j]);
            assert!((g2 - e2).abs() <= 0.05 * e2, "second moment {j}: {g2} vs {e2}");
        }
    }
    let (_, c) = mean_cov(&gen);
    for a in [0, 2] {
        for b in [1, 3] {
            let rho = c[a][b] / (c[a][a] * c[b][b]).sqrt();
            assert!(rho.abs() < 0.05, "corr({a},{b}) = {rho}");
        }
    }
}

#[test]
fn mocoda_fills_the_interior() {
    let samples = sample_mocoda(nav_parents(), 20_000, &mut seeds::rng(2), false, Some(&NavEnv::sa_box())).unwrap();
    let emp = nav_data().sa_samples(Provenance::Emp);
    let (fm, fe) = (frac(&samples, in_open_square), frac(&emp, in_open_square));
    assert!(fe < 0.05, "empirical interior mass {fe}");
    assert!(fm > 5.0 * fe && fm > 0.1, "mocoda {fm} vs emp {fe}");
}

fn uniform_square(n: usize, seed: u64) -> Vec<SaSample> {
    let mut rng = seeds::rng(seed);
    (0..n)
        .map(|_| SaSample {
            s: vec![rng.random::<f64>(), rng.random::<f64>()],
            a: vec![0.0, 0.0],
            provenance: Provenance::Mocoda,
        })
        .collect()
}

fn histogram_tv(a: &[SaSample], b: &[SaSample], bins: usize) -> f64 {
    let hist = |v: &[SaSample]| {
        let mut h = vec![0.0; bins * bins];
        for s in v {
            let i = ((s.s[0] * bins as f64) as usize).min(bins - 1);
            let j = ((s.s[1] * bins as f64) as usize).min(bins - 1);
            h[i * bins + j] += 1.0 / v.len() as f64;
        }
        h
    };
    let (ha, hb) = (hist(a), hist(b));
    0.5 * ha.iter().zip(&hb).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

fn is_subset(sub: &[SaSample], sup: &[SaSample]) -> bool {
    let key = |s: &SaSample| s.state_action().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let mut counts: HashMap<Vec<u64>, i64> = HashMap::new();
    for s in sup {
        *counts.entry(key(s)).or_default() += 1;
    }
    sub.iter().all(|s| {
        let c = counts.entry(key(s)).or_default();
        *c -= 1;
        *c >= 0
    })
}

#[test]
fn uniform_reweighting_of_uniform_input_is_flat() {
    let input = uniform_square(60_000, 3);
    let out = reweight_uniform(&input, &state_features, 0.05, 20_000, &mut seeds::rng(4)).unwrap();
    assert!((out.len() as f64 - 20_000.0).abs() < 1_500.0, "{}", out.len());
    assert!(histogram_tv(&out, &input, 5) < 0.05);
    assert!(is_subset(&out, &input));
    assert!(out.iter().all(|s| s.provenance == Provenance::MocodaU));
}

#[test]
fn uniform_reweighting_balances_clusters() {
    let mut rng = seeds::rng(5);
    let mut input = Vec::new();
    for (cx, count) in [(0.25, 20_000), (0.75, 10_000)] {
        for _ in 0..count {
            input.push(SaSample {
                s: vec![cx + rng.random_range(-0.1..0.1), 0.5 + rng.random_range(-0.1..0.1)],
                a: vec![0.0, 0.0],
                provenance: Provenance::Mocoda,
            });
        }
    }
    // keep the reference window unbiased
    use rand::seq::SliceRandom;
    input.shuffle(&mut rng);
    let out = reweight_uniform(&input, &state_features, 0.05, 5_000, &mut rng).unwrap();
    let left = out.iter().filter(|s| s.s[0] < 0.5).count() as f64;
    let ratio = left / (out.len() as f64 - left);
    assert!((0.8..=1.25).contains(&ratio), "cluster ratio {ratio}");
    assert!(is_subset(&out, &input));
}

#[test]
fn priority_reweighting_rules() {
    let input = uniform_square(40_000, 6);
    // target equal to the sample density: uniform thinning
    let kde = Kde::fit(input.iter().map(state_features).collect::<Vec<_>>()[30_000..].to_vec(), 0.05).unwrap();
    let selfish = reweight_priority(&input, &state_features, &|f| kde.density(f), 0.05, 10_000, &mut seeds::rng(7)).unwrap();
    assert!(histogram_tv(&selfish, &input, 5) < 0.05);
    assert!(is_subset(&selfish, &input));

    let band = |f: &[f64]| if (f[0] - f[1]).abs() < 0.1 { 1.0 } else { 0.0 };
    let diag = reweight_priority(&input, &state_features, &band, 0.05, 5_000, &mut seeds::rng(8)).unwrap();
    assert!(!diag.is_empty());
    assert!(frac(&diag, |s| (s.s[0] - s.s[1]).abs() < 0.1) >= 0.7);
    assert!(diag.iter().all(|s| s.provenance == Provenance::MocodaP));

    let outside = |f: &[f64]| if f[0] > 1.5 { 1.0 } else { 0.0 };
    assert!(reweight_priority(&input, &state_features, &outside, 0.05, 5_000, &mut seeds::rng(9)).unwrap().is_empty());
}

#[test]
fn empirical_baseline_reproduces_dataset() {
    let data = nav_data();
    let out = baseline_samples(BaselineKind::Emp, data, None, &NavEnv::sa_box(), data.len(), &mut seeds::rng(10)).unwrap();
    let emp = data.sa_samples(Provenance::Emp);
    assert_eq!(out.len(), emp.len());
    assert!(is_subset(&out, &emp) && is_subset(&emp, &out));
    let tiled = baseline_samples(BaselineKind::Emp, data, None, &NavEnv::sa_box(), 2 * data.len() + 7, &mut seeds::rng(11)).unwrap();
    assert_eq!(tiled.len(), 2 * data.len() + 7);
}

#[test]
fn uniform_baseline_covers_quadrants() {
    let out = baseline_samples(BaselineKind::Rand, nav_data(), None, &NavEnv::sa_box(), 100_000, &mut seeds::rng(12)).unwrap();
    for (qx, qy) in [(false, false), (false, true), (true, false), (true, true)] {
        let f = frac(&out, |s| (s.s[0] > 0.5) == qx && (s.s[1] > 0.5) == qy);
        assert!((f - 0.25).abs() < 0.05 * 0.25, "quadrant share {f}");
    }
    assert!(out.iter().all(|s| NavEnv::sa_box().contains(&s.state_action())));
}

#[test]
fn rollout_baseline_spreads_beyond_empirical_support() {
    let env = NavEnv::default();
    assert!(baseline_samples(BaselineKind::Dyna, nav_data(), None, &NavEnv::sa_box(), 10, &mut seeds::rng(0)).is_err());
    let out = baseline_samples(
        BaselineKind::Dyna,
        nav_data(),
        Some(DynaSource::GroundTruth(&env)),
        &NavEnv::sa_box(),
        50_000,
        &mut seeds::rng(13),
    )
    .unwrap();
    assert_eq!(out.len(), 50_000);
    let emp = nav_data().sa_samples(Provenance::Emp);
    let band = |s: &SaSample| s.s[0] > 0.3 && s.s[0] < 0.9 && s.s[1] > 0.25 && s.s[1] < 0.9;
    assert!(frac(&out, band) > frac(&emp, band));
}

#[test]
fn swapped_transitions_follow_true_dynamics() {
    let env = NavEnv::default();
    let out = coda_swap(nav_data(), &env, &NavEnv::base_mask(), 10_000, &mut seeds::rng(14)).unwrap();
    assert_eq!(out.len(), 10_000);
    for t in &out {
        assert!(!env.in_coupled_region(t.s[0], t.s[1]));
        assert_eq!(env.next_state(&t.s, &t.a), t.s_next);
    }
}

#[test]
fn swap_never_uses_coupled_sources() {
    let env = NavEnv::default();
    let mut ds = Dataset::new(2, 2);
    let s = NavState::new(0.7, 0.7);
    let a = vec![0.5, 0.5];
    let s2 = env.next_state(&s.to_vec(), &a);
    ds.push(Transition::new(s.to_vec(), a, s2, -1.0, false)).unwrap();
    ds.push(Transition::new(vec![0.1, 0.1], vec![0.1, 0.2], env.next_state(&[0.1, 0.1], &[0.1, 0.2]), -1.0, false))
        .unwrap();
    // one eligible source only: no pairs, nothing produced
    assert!(coda_swap(&ds, &env, &NavEnv::base_mask(), 10, &mut seeds::rng(15)).unwrap().is_empty());
}

#[test]
fn swap_rejects_stitches_landing_in_coupled_quadrant() {
    let env = NavEnv::default();
    let mut ds = Dataset::new(2, 2);
    // (0.8, 0.2) and (0.2, 0.8) are both decoupled; swapping can give (0.8, 0.8)
    for s in [[0.8, 0.2], [0.2, 0.8]] {
        let a = [0.1, 0.1];
        ds.push(Transition::new(s.to_vec(), a.to_vec(), env.next_state(&s, &a), -1.0, false)).unwrap();
    }
    let out = coda_swap(&ds, &env, &NavEnv::base_mask(), 200, &mut seeds::rng(16)).unwrap();
    assert!(!out.is_empty());
    for t in &out {
        assert_eq!(env.mask(&t.state_action()), NavEnv::base_mask());
        assert!(!(t.s[0] > 0.5 && t.s[1] > 0.5));
    }
}

#[test]
fn samplers_are_deterministic() {
    let a = sample_mocoda(nav_parents(), 100, &mut seeds::rng(17), true, None).unwrap();
    let b = sample_mocoda(nav_parents(), 100, &mut seeds::rng(17), true, None).unwrap();
    assert_eq!(a, b);
    let env = NavEnv::default();
    let c1 = coda_swap(nav_data(), &env, &NavEnv::base_mask(), 100, &mut seeds::rng(18)).unwrap();
    let c2 = coda_swap(nav_data(), &env, &NavEnv::base_mask(), 100, &mut seeds::rng(18)).unwrap();
    assert_eq!(c1, c2);
}
