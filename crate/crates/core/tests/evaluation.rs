mod common;

use common::*;
use dbp_autodiff::Tensor;
use dbp_core::encoder::{EncoderConfig, EncoderParams};
use dbp_core::evaluation::{
    bin_index, discretize_activations, estimate_epoch_mi, information_plane, mutual_information_discrete, roc_auc,
    JointCounts,
};
use dbp_core::params::{flatten, unflatten};
use dbp_core::pretrain::Prepared;
use proptest::prelude::*;
use rand::Rng;

fn entropy_bits(counts: impl Iterator<Item = u64> + Clone) -> f64 {
    let n: u64 = counts.clone().sum();
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n as f64;
            -p * p.log2()
        })
        .sum()
}

fn mi(c: &[Vec<u64>]) -> f64 {
    mutual_information_discrete(&JointCounts::new(c.to_vec()).unwrap()).unwrap()
}

#[test]
fn mi_matches_direct_summation() {
    let mut r = rng(0);
    for _ in 0..100 {
        let (a, b) = (r.gen_range(1..7), r.gen_range(1..7));
        let mut c: Vec<Vec<u64>> = (0..a).map(|_| (0..b).map(|_| r.gen_range(0..20)).collect()).collect();
        c[0][0] += 1;
        assert!((mi(&c) - mi_oracle(&c)).abs() < 1e-12);
    }
    let c = vec![vec![40, 10], vec![10, 40]];
    assert!((mi(&c) - mi_oracle(&c)).abs() < 1e-12);
    assert!((mi(&c) - 0.2781).abs() < 5e-5);
}

fn arb_joint() -> impl Strategy<Value = Vec<Vec<u64>>> {
    (1usize..6, 1usize..6).prop_flat_map(|(a, b)| {
        prop::collection::vec(prop::collection::vec(0u64..30, b), a).prop_map(|mut c| {
            c[0][0] += 1;
            c
        })
    })
}

proptest! {
    #[test]
    fn mi_bounds_and_symmetry(c in arb_joint()) {
        let j = JointCounts::new(c.clone()).unwrap();
        let i = mutual_information_discrete(&j).unwrap();
        prop_assert!(i >= 0.0);
        let hx = entropy_bits(c.iter().map(|r| r.iter().sum::<u64>()));
        let hy = entropy_bits((0..c[0].len()).map(|k| c.iter().map(|r| r[k]).sum::<u64>()));
        prop_assert!(i <= hx.min(hy) + 1e-12);
        let t = mutual_information_discrete(&j.transposed()).unwrap();
        prop_assert!((i - t).abs() < 1e-12);
    }

    #[test]
    fn product_form_joint_has_zero_mi(
        xs in prop::collection::vec(1u64..10, 1..6),
        ys in prop::collection::vec(1u64..10, 1..6),
    ) {
        let c: Vec<Vec<u64>> = xs.iter().map(|&x| ys.iter().map(|&y| x * y).collect()).collect();
        prop_assert!(mi(&c).abs() < 1e-12);
    }
}

#[test]
fn auc_matches_pairwise_oracle_exactly() {
    let mut r = rng(3);
    for _ in 0..100 {
        let n = r.gen_range(2..=50);
        let mut labels: Vec<u8> = (0..n).map(|_| r.gen_range(0..2)).collect();
        labels[0] = 1;
        labels[1] = 0;
        let scores: Vec<f64> = (0..n).map(|_| f64::from(r.gen_range(0..8)) * 0.25).collect();
        assert_eq!(roc_auc(&scores, &labels).unwrap(), auc_oracle(&scores, &labels));
    }
    assert_eq!(roc_auc(&[0.9, 0.8, 0.3, 0.2], &[1, 0, 1, 0]).unwrap(), 0.75);
}

fn arb_scored() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    prop::collection::vec((-20i32..20, 0u8..2), 2..40).prop_map(|v| {
        let scores: Vec<f64> = v.iter().map(|p| f64::from(p.0) * 0.5).collect();
        let mut labels: Vec<u8> = v.iter().map(|p| p.1).collect();
        labels[0] = 1;
        labels[1] = 0;
        (scores, labels)
    })
}

proptest! {
    #[test]
    fn auc_is_a_rank_statistic((scores, labels) in arb_scored(), a in 0.1f64..3.0, b in -5.0f64..5.0) {
        let base = roc_auc(&scores, &labels).unwrap();
        let mapped: Vec<f64> = scores.iter().map(|&s| (a * s + b).exp()).collect();
        prop_assert_eq!(roc_auc(&mapped, &labels).unwrap(), base);
        let cubic: Vec<f64> = scores.iter().map(|&s| s * s * s + s).collect();
        prop_assert_eq!(roc_auc(&cubic, &labels).unwrap(), base);
        let neg: Vec<f64> = scores.iter().map(|&s| -s).collect();
        let flipped: Vec<u8> = labels.iter().map(|&l| 1 - l).collect();
        prop_assert_eq!(roc_auc(&neg, &flipped).unwrap(), base);
        prop_assert!((0.0..=1.0).contains(&base));
    }
}

/// Scalar reference: bins `[lo + k w, lo + (k + 1) w)`, the last closed.
fn reference_bin(v: f64, lo: f64, hi: f64, n: usize) -> usize {
    if hi == lo {
        return 0;
    }
    let w = (hi - lo) / n as f64;
    for k in 0..n {
        let top = if k + 1 == n { hi } else { lo + (k + 1) as f64 * w };
        if v < top || (k + 1 == n && v <= hi) {
            return k;
        }
    }
    n - 1
}

#[test]
fn binning_matches_scalar_reference() {
    let mut r = rng(8);
    // integer grids keep every edge exactly representable
    for n in 2..40 {
        for k in 0..=n {
            let (lo, hi, v) = (-3.0, n as f64 - 3.0, k as f64 - 3.0);
            assert_eq!(bin_index(v, lo, hi, n), reference_bin(v, lo, hi, n), "n={n} k={k}");
        }
    }
    for _ in 0..2000 {
        let lo = r.gen_range(-5.0..5.0);
        let hi = lo + r.gen_range(0.1..10.0);
        let n = r.gen_range(2..40);
        let v: f64 = r.gen_range(lo..hi);
        let pos = (v - lo) / (hi - lo) * n as f64;
        if (pos - pos.round()).abs() < 1e-6 {
            continue;
        }
        assert_eq!(bin_index(v, lo, hi, n), reference_bin(v, lo, hi, n));
    }
    assert_eq!(bin_index(7.5, -2.5, 7.5, 30), 29);
    let rows = vec![vec![0.0], vec![1.0], vec![0.5]];
    let codes = discretize_activations(&rows, 2).unwrap();
    assert_eq!(codes[1], codes[2]);
    assert_ne!(codes[0], codes[1]);
}

#[test]
fn information_plane_examples() {
    let n = 12;
    let distinct: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64]).collect();
    let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    let (ixz, iyz) = information_plane(&distinct, &labels, 30).unwrap();
    assert!((ixz - (n as f64).log2()).abs() < 1e-12);
    assert!((iyz - 1.0).abs() < 1e-12);
    let same = vec![vec![0.3, 0.1]; n];
    assert_eq!(information_plane(&same, &labels, 30).unwrap(), (0.0, 0.0));
    let clusters: Vec<Vec<f64>> = (0..n).map(|i| vec![if i < 6 { 0.0 } else { 10.0 } + 0.01 * i as f64]).collect();
    assert_eq!(discretize_activations(&clusters, 2).unwrap().iter().collect::<std::collections::HashSet<_>>().len(), 2);
}

#[test]
fn epoch_mi_is_deterministic_and_bounded() {
    let cfg = EncoderConfig {
        hidden_dim: 6,
        ..EncoderConfig::default()
    };
    let enc = EncoderParams::init(&mut rng(0), &cfg, &TINY);
    let mut r = rng(1);
    let graphs: Vec<Prepared> = (0..30).map(|_| Prepared::new(random_graph(&mut r, 6, 0.4, &TINY))).collect();
    let a = estimate_epoch_mi(&graphs, &enc, &cfg, 30).unwrap();
    assert_eq!(a, estimate_epoch_mi(&graphs, &enc, &cfg, 30).unwrap());
    assert!(a.1 <= 1.0 + 1e-12 && a.0 <= (30f64).log2() + 1e-12);

    let zero: EncoderParams = unflatten(&enc, flatten(&enc).iter().map(Tensor::zeros_like).collect());
    assert_eq!(estimate_epoch_mi(&graphs, &zero, &cfg, 30).unwrap(), (0.0, 0.0));
}
