use mspe::eval::{const_fractional_shift, mean_quadrant_mass, patch_similarity, quadrant_mass, to_grayscale};
use mspe::tensor::{SeededRng, Tensor};
use proptest::prelude::*;

/// Plain nested loops over the clamped values.
fn brute_force(a: &Tensor, b: &Tensor) -> f64 {
    let (mut num, mut den) = (0f64, 0f64);
    let [n, c, h, w] = a.shape();
    for bi in 0..n {
        for ci in 0..c {
            for i in 0..h {
                for j in 0..w {
                    let x = a.at(bi, ci, i, j).clamp(0.0, 1.0) as f64;
                    let y = b.at(bi, ci, i, j).clamp(0.0, 1.0) as f64;
                    num += x.min(y);
                    den += x.max(y);
                }
            }
        }
    }
    if den == 0.0 {
        1.0
    } else {
        num / den
    }
}

#[test]
fn thousand_random_pairs_match_brute_force() {
    let mut rng = SeededRng::new(42);
    for _ in 0..1000 {
        let h = 5 + rng.below(28);
        let w = 5 + rng.below(28);
        // Values spill outside [0, 1] on purpose to exercise the clamp.
        let a = rng.gaussian_tensor([1, 1, h, w]).map(|v| 0.5 + 0.6 * v);
        let b = rng.gaussian_tensor([1, 1, h, w]).map(|v| 0.5 + 0.6 * v);
        let got = patch_similarity(&a, &b).unwrap();
        let want = brute_force(&a, &b);
        assert!((got - want).abs() <= 1e-7, "{h}x{w}: {got} vs {want}");
        assert!((0.0..=1.0).contains(&got));
    }
}

proptest! {
    #[test]
    fn half_scaled_copy_scores_one_half(h in 1usize..20, w in 1usize..20, seed in 0u64..10_000) {
        let a = SeededRng::new(seed).gaussian_tensor([1, 1, h, w]).map(|v| (v.abs() + 1e-3).min(1.0));
        let s = patch_similarity(&a, &a.map(|v| 0.5 * v)).unwrap();
        prop_assert!((s - 0.5).abs() < 1e-7);
    }

    #[test]
    fn symmetric_and_self_similar(h in 1usize..12, w in 1usize..12, seed in 0u64..10_000) {
        let mut r = SeededRng::new(seed);
        let a = r.gaussian_tensor([1, 1, h, w]);
        let b = r.gaussian_tensor([1, 1, h, w]);
        prop_assert_eq!(patch_similarity(&a, &b).unwrap(), patch_similarity(&b, &a).unwrap());
        prop_assert_eq!(patch_similarity(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn integer_shifts_compose_with_fractional_ones(a in -3.0f64..3.0, b in -3.0f64..3.0, k in -5i32..5, m in -5i32..5, seed in 0u64..1000) {
        // Bilinear shifts do not form a group (two quarter shifts blur more
        // than one half shift), but adding a whole-cell shift is a roll.
        let c = SeededRng::new(seed).gaussian_tensor([1, 3, 4, 4]);
        let lhs = const_fractional_shift(&const_fractional_shift(&c, a, b).unwrap(), k as f64, m as f64).unwrap();
        let rhs = const_fractional_shift(&c, a + k as f64, b + m as f64).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-5);
    }
}

#[test]
fn fractional_shift_interpolates_neighbours() {
    let c = Tensor::new([1, 1, 1, 4], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
    let s = const_fractional_shift(&c, 0.0, 0.5).unwrap();
    assert_eq!(s.data(), &[1.5, 0.5, 1.5, 2.5]);
    let two_quarters = const_fractional_shift(&const_fractional_shift(&c, 0.0, 0.25).unwrap(), 0.0, 0.25).unwrap();
    assert!(two_quarters.max_abs_diff(&s) > 1e-3);
}

#[test]
fn quadrant_mass_of_single_pixels() {
    for (i, j, q) in [(0, 0, 0), (0, 7, 1), (7, 0, 2), (7, 7, 3)] {
        let mut t = Tensor::zeros([1, 1, 8, 8]);
        t.set(0, 0, i, j, 1.0);
        let m = quadrant_mass(&t).unwrap();
        assert_eq!(m[q], 1.0);
        assert_eq!(m.iter().sum::<f64>(), 1.0);
    }
    let blank = Tensor::full([2, 3, 8, 8], -1.0);
    let m = mean_quadrant_mass(&blank).unwrap();
    assert!(m.iter().all(|v| v.is_finite()));
    let g = to_grayscale(&Tensor::full([1, 3, 2, 2], 1.0));
    assert_eq!(g.data(), &[1.0; 4]);
}
