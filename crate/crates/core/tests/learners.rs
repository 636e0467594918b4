// SPDX-License-Identifier: Apache-2.0

mod common;

use gs_bias::global::{self, GlobalConfig};
use gs_bias::numerics::Matrix;
use gs_bias::spatial::{self, GridShape, SpatialConfig, SpatialMap};
use gs_bias::BiasVector;
use proptest::prelude::*;

use common::Gen;

fn global_fixture() -> Vec<Vec<f64>> {
    vec![vec![0.0, 1.0]; 8]
}

fn spatial_fixture() -> Vec<Vec<f64>> {
    vec![vec![0.0, 0.0, 1.0]; 16]
}

#[test]
fn global_fixture_descends_every_step() {
    let rows = global_fixture();
    let cfg = GlobalConfig { alpha: 1.0, rho: 0.5, steps: 5 };
    let (bias, trace) = global::learn_global_bias(&Matrix::from_rows(&rows).unwrap(), &cfg).unwrap();
    assert_eq!(trace.kept, vec![0, 1, 2, 3]);

    // replay the updates with the oracle entropy
    let kept: Vec<Vec<f64>> = trace.kept.iter().map(|&i| rows[i].clone()).collect();
    let mut b = vec![0.0; 2];
    let mut last = common::mean_entropy(&kept, &b);
    assert!((trace.initial_entropy - last).abs() < 1e-12);
    for (step, &h) in trace.entropies.iter().enumerate() {
        let g = common::fd_gradient(&kept, &b, 1e-5);
        b.iter_mut().zip(&g).for_each(|(bi, gi)| *bi -= gi);
        let oracle = common::mean_entropy(&kept, &b);
        assert!((h - oracle).abs() < 1e-8, "step {step}: {h} vs {oracle}");
        assert!(h < last, "step {step} did not decrease entropy");
        last = h;
    }
    assert!(bias.as_slice()[1] > bias.as_slice()[0]);
    assert!(trace.initial_entropy - last >= 1e-3);
}

#[test]
fn spatial_fixture_descends_every_step() {
    let rows = spatial_fixture();
    let selected: Vec<usize> = (0..16).collect();
    let cfg = SpatialConfig { beta: 1.0, topk: 16, steps: 5, map_temperature: 1.0 };
    let (bias, trace) =
        spatial::learn_spatial_bias(&Matrix::from_rows(&rows).unwrap(), &selected, &cfg).unwrap();
    let mut last = common::mean_entropy(&rows, &[0.0; 3]);
    assert!((trace.initial_entropy - last).abs() < 1e-12);
    for &h in &trace.entropies {
        assert!(h < last);
        last = h;
    }
    let b = bias.as_slice();
    assert!(b[2] > b[0] && b[2] > b[1]);
    assert_eq!(trace.bias_norms.len(), 5);
}

#[test]
fn global_learner_is_deterministic() {
    let mut gen = Gen::new(3);
    let z = Matrix::from_rows(&gen.rows(12, 7, -3.0, 3.0)).unwrap();
    let cfg = GlobalConfig { alpha: 10.0, rho: 0.3, steps: 5 };
    let a = global::learn_global_bias(&z, &cfg).unwrap();
    let b = global::learn_global_bias(&z, &cfg).unwrap();
    assert_eq!(a, b);
    let bits: Vec<u64> = a.0.as_slice().iter().map(|v| v.to_bits()).collect();
    let bits2: Vec<u64> = b.0.as_slice().iter().map(|v| v.to_bits()).collect();
    assert_eq!(bits, bits2);
}

#[test]
fn zero_rate_leaves_bias_at_zero() {
    let mut gen = Gen::new(4);
    let z = Matrix::from_rows(&gen.rows(8, 5, -3.0, 3.0)).unwrap();
    let cfg = GlobalConfig { alpha: 0.0, rho: 0.5, steps: 5 };
    assert_eq!(global::learn_global_bias(&z, &cfg).unwrap().0, BiasVector::zeros(5));
    let cfg = SpatialConfig { beta: 0.0, ..Default::default() };
    assert_eq!(
        spatial::learn_spatial_bias(&z, &[0, 1, 2], &cfg).unwrap().0,
        BiasVector::zeros(5)
    );
}

#[test]
fn entropy_trace_monotone_for_margin_family() {
    for margin in [0.25, 0.5, 1.0, 2.0, 4.0] {
        for alpha in [0.1, 0.5, 1.0] {
            let rows = vec![vec![0.0, margin]; 8];
            let cfg = GlobalConfig { alpha, rho: 0.5, steps: 5 };
            let (_, t) = global::learn_global_bias(&Matrix::from_rows(&rows).unwrap(), &cfg).unwrap();
            let mut prev = t.initial_entropy;
            for &h in &t.entropies {
                assert!(h <= prev, "margin {margin} alpha {alpha}");
                prev = h;
            }
        }
    }
}

#[test]
fn region_logits_match_per_region_oracle() {
    let mut gen = Gen::new(11);
    let regions = gen.rows(4, 6, -1.0, 1.0);
    let classes = gen.rows(3, 6, -1.0, 1.0);
    let z = spatial::spatial_logits(
        &Matrix::from_rows(&regions).unwrap(),
        &Matrix::from_rows(&classes).unwrap(),
        0.01,
    )
    .unwrap();
    for (i, r) in regions.iter().enumerate() {
        let want: Vec<f64> = classes.iter().map(|t| common::cosine(r, t) / 0.01).collect();
        let got = gs_bias::numerics::softmax(z.row(i));
        for (a, b) in got.iter().zip(common::softmax(&want)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn map_matches_brute_force_on_two_by_two() {
    let mut gen = Gen::new(12);
    let regions = gen.rows(4, 5, -1.0, 1.0);
    let classes = gen.rows(2, 5, -1.0, 1.0);
    let m = spatial::category_aware_map(
        &Matrix::from_rows(&regions).unwrap(),
        GridShape::new(2, 2),
        &Matrix::from_rows(&classes).unwrap(),
        1.0,
    )
    .unwrap();
    let want = common::relevance_map(&regions, &classes, 1.0);
    for (a, b) in m.values.iter().zip(&want) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!((m.values.iter().sum::<f64>() - 1.0).abs() < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn view_selection_equals_sort_oracle(
        seed in any::<u64>(),
        n in 1usize..=64,
        c in 2usize..=10,
        rho in 0.01f64..=1.0,
    ) {
        let mut gen = Gen::new(seed);
        let rows = gen.rows(n, c, -4.0, 4.0);
        let got = global::select_confident_views(&Matrix::from_rows(&rows).unwrap(), rho).unwrap();
        prop_assert_eq!(got, common::select_by_sort(&rows, rho));
    }

    #[test]
    fn topk_equals_extraction_oracle(
        values in prop::collection::vec(prop::sample::select(vec![0.0, 0.1, 0.25, 0.5, 0.75, 1.0]), 1..=256),
        k in 1usize..300,
    ) {
        let map = SpatialMap { shape: GridShape::new(values.len(), 1), values: values.clone() };
        prop_assert_eq!(spatial::topk_regions(&map, k), common::topk_by_extraction(&values, k));
    }

    #[test]
    fn map_is_normalized_and_permutation_equivariant(
        seed in any::<u64>(),
        w in 1usize..=6,
        h in 1usize..=6,
        c in 1usize..=5,
    ) {
        let mut gen = Gen::new(seed);
        let regions = gen.rows(w * h, 4, -1.0, 1.0);
        let classes = gen.rows(c, 4, -1.0, 1.0);
        let t = Matrix::from_rows(&classes).unwrap();
        let shape = GridShape::new(w, h);
        let m = spatial::category_aware_map(&Matrix::from_rows(&regions).unwrap(), shape, &t, 1.0).unwrap();
        prop_assert!((m.values.iter().sum::<f64>() - 1.0).abs() < 1e-9);

        let mut perm: Vec<usize> = (0..w * h).collect();
        gen.shuffle(&mut perm);
        let permuted: Vec<Vec<f64>> = perm.iter().map(|&i| regions[i].clone()).collect();
        let pm = spatial::category_aware_map(&Matrix::from_rows(&permuted).unwrap(), shape, &t, 1.0).unwrap();
        for (j, &i) in perm.iter().enumerate() {
            prop_assert!((pm.values[j] - m.values[i]).abs() < 1e-12);
        }

        // continuous random features: no ties, so selected sets map exactly
        let k = (w * h / 2).max(1);
        let sel: Vec<usize> = spatial::topk_regions(&m, k);
        let mut mapped: Vec<usize> = spatial::topk_regions(&pm, k).iter().map(|&j| perm[j]).collect();
        mapped.sort();
        prop_assert_eq!(sel, mapped);
    }
}

#[test]
fn significant_region_worked_example() {
    assert_eq!(spatial::significant_region_count(&[0.5, 0.3, 0.2], 0.1), 2);
    assert_eq!(spatial::significant_region_count(&[1.0 / 9.0; 9], 0.1), 0);
    // exactly at the threshold is not counted
    assert_eq!(spatial::significant_region_count(&[0.0, 0.1, 1.0], 0.1), 1);
}
