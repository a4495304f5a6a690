mod common;

use proptest::prelude::*;

use common::naive_density;
use se3_scale::fbc::{fbc_scores, fiber_density, filter_tractogram, synthetic_bundle, FilterMode, Tractogram, Window};
use se3_scale::{DiffusionParams, Rotation, Vec3};

fn params() -> DiffusionParams {
    DiffusionParams::new(1.0, 0.02, 2.0).unwrap()
}

fn point() -> impl Strategy<Value = Vec3> {
    (-2.0..2.0, -2.0..2.0, -2.0..2.0f64).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn point_lists() -> impl Strategy<Value = Vec<Vec<Vec3>>> {
    prop::collection::vec(prop::collection::vec(point(), 2..7), 1..6)
}

fn build(lists: &[Vec<Vec3>]) -> Tractogram {
    Tractogram::from_point_lists(lists.to_vec()).unwrap()
}

/// Densities grouped per fiber.
fn per_fiber(tr: &Tractogram, values: &[f64]) -> Vec<Vec<f64>> {
    tr.fibers()
        .iter()
        .zip(tr.offsets())
        .map(|(f, start)| values[start..start + f.len()].to_vec())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn matches_naive_double_loop(lists in point_lists()) {
        let tr = build(&lists);
        let n = tr.n_total() as u64;
        let d = fiber_density(&tr, &params()).unwrap();
        prop_assert_eq!(d.pair_evaluations, n * (n + 1) / 2);
        for (a, b) in d.values.iter().zip(naive_density(&tr, &params())) {
            prop_assert!((a - b).abs() <= 1e-15 + 1e-14 * b);
        }
    }

    #[test]
    fn fiber_order_permutes_scores_bitwise(lists in point_lists(), shift in 0usize..6) {
        let tr = build(&lists);
        let mut rotated = lists.clone();
        let k = shift % lists.len();
        rotated.rotate_left(k);
        let tr2 = build(&rotated);
        let a = fiber_density(&tr, &params()).unwrap();
        let b = fiber_density(&tr2, &params()).unwrap();
        let mut expect = per_fiber(&tr, &a.values);
        expect.rotate_left(k);
        prop_assert_eq!(per_fiber(&tr2, &b.values), expect);
        let sa = fbc_scores(&tr, &a.values, Window::HalfWidth(2)).unwrap();
        let sb = fbc_scores(&tr2, &b.values, Window::HalfWidth(2)).unwrap();
        let mut fa = sa.normalized_fbc.clone();
        fa.rotate_left(k);
        prop_assert_eq!(sb.normalized_fbc, fa);
    }

    #[test]
    fn reversing_a_fiber_keeps_other_densities(lists in point_lists()) {
        // Reversal flips every tangent of the first fiber; tangents of the
        // remaining fibers are untouched, so their densities are bitwise equal
        // only if the tangent sign is irrelevant.
        prop_assume!(lists[0].len() == 2);
        let tr = build(&lists);
        let mut flipped = lists.clone();
        flipped[0].reverse();
        let tr2 = build(&flipped);
        let a = fiber_density(&tr, &params()).unwrap();
        let b = fiber_density(&tr2, &params()).unwrap();
        let (pa, mut pb) = (per_fiber(&tr, &a.values), per_fiber(&tr2, &b.values));
        pb[0].reverse();
        prop_assert_eq!(pa, pb);
    }

    #[test]
    fn duplicating_the_tractogram_keeps_densities(lists in point_lists()) {
        let tr = build(&lists);
        let doubled = build(&[lists.clone(), lists.clone()].concat());
        let a = fiber_density(&tr, &params()).unwrap();
        let b = fiber_density(&doubled, &params()).unwrap();
        let n = a.values.len();
        for (x, y) in a.values.iter().zip(&b.values[..n]) {
            prop_assert!((x - y).abs() <= 1e-12 * x);
        }
        prop_assert_eq!(&b.values[..n], &b.values[n..]);
    }

    #[test]
    fn rigid_motions_leave_densities_invariant(lists in point_lists(), axis in point(), angle in 0.0..3.0f64, shift in point()) {
        prop_assume!(axis.norm() > 1e-2);
        let tr = build(&lists);
        for r in [Rotation::about_z(angle), Rotation::exp(&(axis / axis.norm() * angle))] {
            let moved: Vec<Vec<Vec3>> = lists
                .iter()
                .map(|f| f.iter().map(|p| r.apply(p) + shift).collect())
                .collect();
            let a = fiber_density(&tr, &params()).unwrap();
            let b = fiber_density(&build(&moved), &params()).unwrap();
            for (x, y) in a.values.iter().zip(&b.values) {
                prop_assert!((x - y).abs() <= 1e-9 * x.max(1e-12));
            }
        }
    }
}

#[test]
fn tangent_sign_is_irrelevant_bitwise() {
    // Straight and unevenly sampled: reversal only flips the tangent signs.
    let forward: Vec<Vec3> = [0.0, 0.4, 1.5, 2.0, 3.1, 4.0]
        .iter()
        .map(|s| Vec3::new(0.25, 0.5, 1.0) * *s)
        .collect();
    let mut backward = forward.clone();
    backward.reverse();
    let other: Vec<Vec3> = (0..5).map(|k| Vec3::new(0.5, -0.2, 0.7 * k as f64)).collect();
    let a = fiber_density(&build(&[forward, other.clone()]), &params()).unwrap();
    let b = fiber_density(&build(&[backward, other]), &params()).unwrap();
    assert_eq!(a.values[6..], b.values[6..]);
}

#[test]
fn thread_count_does_not_change_bits() {
    let (tr, _) = synthetic_bundle(8, 30, 0.5);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| fiber_density(&tr, &params()).unwrap())
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn synthetic_outlier_is_filtered_first() {
    let (tr, outlier) = synthetic_bundle(20, 20, 0.5);
    let d = fiber_density(&tr, &params()).unwrap();
    let scores = fbc_scores(&tr, &d.values, Window::HalfWidth(5)).unwrap();
    let lowest = scores
        .normalized_fbc
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .unwrap()
        .0;
    assert_eq!(lowest, outlier);
    let second = scores
        .normalized_fbc
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != outlier)
        .map(|(_, v)| *v)
        .fold(f64::INFINITY, f64::min);
    let threshold = 0.5 * (scores.normalized_fbc[outlier] + second);
    let kept = filter_tractogram(&tr, &scores, threshold, FilterMode::PerFiber);
    assert_eq!(kept.len(), tr.len() - 1);
    assert_eq!(kept.fibers(), &tr.fibers()[..outlier]);
    let kept = filter_tractogram(&tr, &scores, threshold, FilterMode::PerPointMin);
    assert_eq!(kept.len(), tr.len() - 1);
}
