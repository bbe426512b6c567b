use proptest::prelude::*;
use sketchlidar::{evaluate, PixelEstimate, PointCloudEstimate, Surface};

const T: u32 = 1000;

fn pixel() -> impl Strategy<Value = Vec<Surface>> {
    prop::collection::vec((0.0..T as f64, 0.01..0.3f64), 0..4)
        .prop_map(|v| v.into_iter().map(|(d, a)| Surface::new(d, a)).collect())
}

/// Estimate and truth on the same `rows × cols` grid, with estimates placed
/// near the truth often enough to produce matches.
fn case() -> impl Strategy<Value = (usize, usize, Vec<Vec<Surface>>, Vec<Vec<Surface>>)> {
    (1usize..6, 1usize..6).prop_flat_map(|(r, c)| {
        let n = r * c;
        (
            Just(r),
            Just(c),
            prop::collection::vec(pixel(), n),
            prop::collection::vec(prop::collection::vec((-8.0..8.0f64, 0.01..0.3f64, any::<bool>()), 0..4), n),
        )
            .prop_map(|(r, c, gt, jitter)| {
                let est = gt
                    .iter()
                    .zip(jitter)
                    .map(|(g, j)| {
                        let mut out: Vec<Surface> = g
                            .iter()
                            .zip(&j)
                            .filter(|(_, (_, _, keep))| *keep)
                            .map(|(s, (dd, a, _))| Surface::new((s.depth + dd).clamp(0.0, T as f64 - 1.0), *a))
                            .collect();
                        // plus spurious surfaces from the unused jitter
                        out.extend(j.iter().skip(g.len()).map(|(dd, a, _)| Surface::new(500.0 + 40.0 * dd, *a)));
                        out
                    })
                    .collect();
                (r, c, est, gt)
            })
    })
    .prop_filter("needs ground truth", |(_, _, _, gt)| gt.iter().any(|g| !g.is_empty()))
}

fn cloud(r: usize, c: usize, px: &[Vec<Surface>]) -> PointCloudEstimate {
    PointCloudEstimate::new(r, c, T, px.iter().map(|s| PixelEstimate::new(s.clone(), 10)).collect()).unwrap()
}

fn nan_eq(a: f64, b: f64) -> bool {
    (a.is_nan() && b.is_nan()) || (a - b).abs() <= 1e-12 * a.abs().max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn counts_are_consistent((r, c, est, gt) in case(), tau in 0.1..20.0f64) {
        let rep = evaluate(&cloud(r, c, &est), &gt, tau).unwrap();
        prop_assert_eq!(rep.true_detections + rep.false_detections, rep.est_surfaces);
        prop_assert_eq!(rep.true_detections + rep.misses, rep.gt_surfaces);
        prop_assert!((0.0..=1.0).contains(&rep.true_rate));
        prop_assert!((0.0..=1.0).contains(&rep.false_rate));
        if rep.true_detections > 0 {
            prop_assert!(rep.dae <= tau + 1e-12);
            for m in &rep.matches {
                prop_assert!((m.est.depth - m.gt.depth).abs() <= tau);
            }
        } else {
            prop_assert!(rep.dae.is_nan() && rep.iae.is_nan());
        }
    }

    #[test]
    fn pixel_permutation_symmetry((r, c, est, gt) in case(), seed in any::<u64>(), tau in 0.1..20.0f64) {
        let n = r * c;
        let mut perm: Vec<usize> = (0..n).collect();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let est_p: Vec<_> = perm.iter().map(|&i| est[i].clone()).collect();
        let gt_p: Vec<_> = perm.iter().map(|&i| gt[i].clone()).collect();
        let a = evaluate(&cloud(r, c, &est), &gt, tau).unwrap();
        let b = evaluate(&cloud(r, c, &est_p), &gt_p, tau).unwrap();
        prop_assert_eq!(a.true_detections, b.true_detections);
        prop_assert_eq!(a.false_detections, b.false_detections);
        prop_assert!(nan_eq(a.dae, b.dae) && nan_eq(a.iae, b.iae));
    }

    #[test]
    fn truth_surface_order_is_irrelevant((r, c, est, gt) in case(), tau in 0.1..20.0f64) {
        let reversed: Vec<Vec<Surface>> = gt.iter().map(|g| g.iter().rev().copied().collect()).collect();
        let a = evaluate(&cloud(r, c, &est), &gt, tau).unwrap();
        let b = evaluate(&cloud(r, c, &est), &reversed, tau).unwrap();
        prop_assert_eq!(a.true_detections, b.true_detections);
        prop_assert!(nan_eq(a.dae, b.dae) && nan_eq(a.iae, b.iae));
    }

    #[test]
    fn detections_grow_with_tolerance((r, c, est, gt) in case(), t1 in 0.1..20.0f64, t2 in 0.1..20.0f64) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let a = evaluate(&cloud(r, c, &est), &gt, lo).unwrap();
        let b = evaluate(&cloud(r, c, &est), &gt, hi).unwrap();
        prop_assert!(a.true_detections <= b.true_detections);
        prop_assert!(a.true_rate <= b.true_rate);
    }
}
