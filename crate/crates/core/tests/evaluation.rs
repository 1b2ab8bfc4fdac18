//! Wasserstein-1 against a brute-force assignment oracle, metric
//! properties, channel conservation, histograms, and reports.

use proptest::prelude::*;
use zdcgan_core::data::{synth_dataset, Response, SynthProfile, PIXELS};
use zdcgan_core::evaluation::{
    channel_histograms, compare, evaluate_model, extract_channels, read_report, write_report, ws1,
    EvalSettings,
};
use zdcgan_core::nets::{init_params, ArchitectureConfig};
use zdcgan_core::training::initial_params;

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

/// Minimal mean transport cost over every one-to-one matching.
fn brute_force_ws(a: &[f64], b: &[f64]) -> f64 {
    permutations(a.len())
        .iter()
        .map(|p| p.iter().enumerate().map(|(i, &j)| (a[i] - b[j]).abs()).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
        / a.len() as f64
}

#[test]
fn oracle_agrees_on_the_worked_example() {
    let (a, b) = ([0.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 4.0]);
    assert_eq!(brute_force_ws(&a, &b), 1.0);
    assert_eq!(ws1(&a, &b).unwrap(), 1.0);
}

fn equal_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..=6).prop_flat_map(|n| {
        (
            prop::collection::vec(-100.0f64..100.0, n),
            prop::collection::vec(-100.0f64..100.0, n),
        )
    })
}

fn sample() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0f64..50.0, 1..12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn sorted_statistics_match_brute_force((a, b) in equal_pair()) {
        let fast = ws1(&a, &b).unwrap();
        let slow = brute_force_ws(&a, &b);
        prop_assert!((fast - slow).abs() <= 1e-9, "{fast} vs {slow}");
    }

    #[test]
    fn metric_axioms(a in sample(), b in sample(), c in sample()) {
        prop_assert_eq!(ws1(&a, &a).unwrap(), 0.0);
        let ab = ws1(&a, &b).unwrap();
        prop_assert!((ab - ws1(&b, &a).unwrap()).abs() <= 1e-9);
        prop_assert!(ab >= 0.0);
        let ac = ws1(&a, &c).unwrap();
        let bc = ws1(&b, &c).unwrap();
        prop_assert!(ac <= ab + bc + 1e-9);
    }

    #[test]
    fn shift_identity(a in sample(), c in -20.0f64..20.0) {
        let shifted: Vec<f64> = a.iter().map(|v| v + c).collect();
        prop_assert!((ws1(&a, &shifted).unwrap() - c.abs()).abs() <= 1e-9);
    }

    #[test]
    fn translation_equivariance(a in sample(), b in sample(), c in -20.0f64..20.0) {
        let sa: Vec<f64> = a.iter().map(|v| v + c).collect();
        let sb: Vec<f64> = b.iter().map(|v| v + c).collect();
        prop_assert!((ws1(&sa, &sb).unwrap() - ws1(&a, &b).unwrap()).abs() <= 1e-9);
    }

    #[test]
    fn histogram_counts_are_conserved(a in sample(), b in sample(), bins in 2usize..50) {
        let h = channel_histograms(&a, &b, 3, bins).unwrap();
        prop_assert_eq!(h.count_true.iter().sum::<u64>(), a.len() as u64);
        prop_assert_eq!(h.count_gen.iter().sum::<u64>(), b.len() as u64);
        prop_assert!(h.edges.windows(2).all(|w| w[0] <= w[1]));
        let same = channel_histograms(&a, &a, 3, bins).unwrap();
        prop_assert_eq!(same.count_true, same.count_gen);
    }
}

#[test]
fn disjoint_supports_never_share_a_bin() {
    let a: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
    let b: Vec<f64> = (0..20).map(|i| 10.0 + i as f64 * 0.1).collect();
    let h = channel_histograms(&a, &b, 5, 40).unwrap();
    assert!(h.count_true.iter().zip(&h.count_gen).all(|(t, g)| *t == 0 || *g == 0));
}

#[test]
fn channels_are_conserved_on_random_responses() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
    for _ in 0..1000 {
        let scale: f32 = rng.random_range(0.01..100.0);
        let x = Response::new((0..PIXELS).map(|_| rng.random::<f32>() * scale).collect()).unwrap();
        let c = extract_channels(&x).0;
        let quad = c[0] + c[1] + c[2] + c[3];
        assert!((quad - c[4]).abs() <= 1e-6 * c[4].abs().max(1.0), "{quad} vs {}", c[4]);
    }
}

#[test]
fn real_responses_as_generated_give_zero_distance() {
    let ds = synth_dataset(5, 6, 4, &SynthProfile::default()).unwrap();
    let generated: Vec<_> = ds.samples().iter().map(|s| (s.group_id, s.response.clone())).collect();
    let r = compare(&ds, &generated, &EvalSettings::default()).unwrap();
    assert_eq!(r.per_channel_ws, [0.0; 5]);
    assert_eq!(r.mean_ws, 0.0);
    assert_eq!(r.intensity_gap, 0.0);
    for h in &r.histograms {
        assert_eq!(h.count_true, h.count_gen);
    }
}

#[test]
fn evaluate_model_is_deterministic_and_reports_round_trip() {
    let ds = synth_dataset(6, 4, 3, &SynthProfile::default()).unwrap();
    let cfg = ArchitectureConfig {
        base_channels: 2,
        ..ArchitectureConfig::default()
    };
    let mut params = init_params(&cfg, 1).unwrap();
    params.fit_conditioning(&ds);
    let a = evaluate_model(&params, &ds, 3, 9).unwrap();
    let b = evaluate_model(&params, &ds, 3, 9).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.n_samples, 12);
    assert_eq!(a.n_true, 12);
    let c = evaluate_model(&params, &ds, 1, 9).unwrap();
    assert_eq!(c.n_samples, 4);

    let dir = tempfile::tempdir().unwrap();
    write_report(&a, dir.path()).unwrap();
    let back = read_report(dir.path()).unwrap();
    assert_eq!(back, a);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    let per: Vec<f64> = json["per_channel_ws"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    let mean = json["mean_ws"].as_f64().unwrap();
    assert!((mean - per.iter().sum::<f64>() / 5.0).abs() <= 1e-12);
    for c in 1..=5 {
        let csv = std::fs::read_to_string(dir.path().join(format!("hist_ch{c}.csv"))).unwrap();
        assert_eq!(csv.lines().count(), 1 + a.histograms[c - 1].n_bins());
    }
    assert_eq!(a.histograms[4].n_bins(), 40);
}

#[test]
fn errors_on_empty_inputs() {
    assert!(ws1(&[], &[]).is_err());
    let ds = synth_dataset(6, 2, 2, &SynthProfile::default()).unwrap();
    let params = initial_params(&ds, &Default::default()).unwrap();
    assert!(evaluate_model(&params, &ds, 0, 0).is_err());
    let empty = ds.subset_groups(&[]);
    assert!(evaluate_model(&params, &empty, 1, 0).is_err());
}
