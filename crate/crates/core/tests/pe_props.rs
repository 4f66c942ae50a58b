use mspe::pe::{encode_position, scale_shift_amount, Axis, PeGrid, PePyramid, ShiftMode};
use proptest::prelude::*;

/// Direct evaluation of the closed form at one grid cell.
fn oracle(c: usize, channels: usize, row: f64, col: f64) -> f64 {
    let d = channels / 4;
    let (x, k) = if c < 2 * d { (row, c) } else { (col, c - 2 * d) };
    let arg = x / 10000f64.powf((k / 2) as f64 / (2 * d) as f64);
    if k % 2 == 0 {
        arg.sin()
    } else {
        arg.cos()
    }
}

fn max_oracle_err(g: &PeGrid) -> f64 {
    let mut worst = 0f64;
    for c in 0..g.channels() {
        for i in 0..g.height() {
            for j in 0..g.width() {
                let e = oracle(c, g.channels(), g.rows().coords[i], g.cols().coords[j]);
                worst = worst.max((e - g.at(c, i, j) as f64).abs());
            }
        }
    }
    worst
}

fn max_diff(a: &PeGrid, b: &PeGrid) -> f32 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

#[test]
fn grid_matches_closed_form_for_listed_sizes() {
    for hw in [4, 8, 64] {
        for c in [4, 64] {
            let g = PeGrid::build(hw, hw, c).unwrap();
            assert!(max_oracle_err(&g) <= 1e-6, "{hw}x{hw}x{c}");
        }
    }
}

#[test]
fn origin_code_and_channel_errors() {
    let v = encode_position(0.0, 0.0, 8).unwrap();
    assert_eq!(v, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    for bad in [0, 2, 6, 10] {
        let e = PeGrid::build(4, 4, bad).unwrap_err().to_string();
        assert!(e.contains("multiple of 4"), "{e}");
    }
    assert!(PeGrid::build(0, 4, 4).is_err());
}

#[test]
fn rectangular_grid_uses_its_own_axes() {
    let g = PeGrid::build(3, 7, 12).unwrap();
    assert!(max_oracle_err(&g) <= 1e-6);
    let v = g.vector_at(2, 5);
    let direct = encode_position(2.0, 5.0, 12).unwrap();
    for (a, b) in v.iter().zip(&direct) {
        assert!((*a as f64 - b).abs() < 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn values_are_bounded(h in 1usize..12, w in 1usize..12, q in 1usize..9) {
        let g = PeGrid::build(h, w, 4 * q).unwrap();
        prop_assert!(g.data().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn sin_cos_pairs_have_unit_norm(i in -50.0f64..50.0, j in -50.0f64..50.0, q in 1usize..9) {
        let v = encode_position(i, j, 4 * q).unwrap();
        for pair in v.chunks(2) {
            prop_assert!((pair[0] * pair[0] + pair[1] * pair[1] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn shift_composition_law(h in 2usize..10, w in 2usize..10, a in -30.0f64..30.0, b in -30.0f64..30.0,
                             c in -30.0f64..30.0, d in -30.0f64..30.0) {
        let g = PeGrid::build(h, w, 8).unwrap();
        let two = g.shift(a, c, ShiftMode::Circular).unwrap().shift(b, d, ShiftMode::Circular).unwrap();
        let one = g.shift(a + b, c + d, ShiftMode::Circular).unwrap();
        prop_assert!(max_diff(&two, &one) <= 1e-6);
    }

    #[test]
    fn open_shift_is_additive_and_matches_closed_form(a in -20.0f64..20.0, b in -20.0f64..20.0) {
        let g = PeGrid::build(5, 6, 16).unwrap();
        let two = g.shift(a, b, ShiftMode::Open).unwrap().shift(b, a, ShiftMode::Open).unwrap();
        let one = g.shift(a + b, a + b, ShiftMode::Open).unwrap();
        prop_assert!(max_diff(&two, &one) <= 1e-5);
        prop_assert!(max_oracle_err(&one) <= 1e-6);
    }

    #[test]
    fn identity_and_full_period_wrap_are_exact(h in 1usize..10, w in 1usize..10, m in -3i32..4, n in -3i32..4) {
        let g = PeGrid::build(h, w, 8).unwrap();
        prop_assert_eq!(&g.shift(0.0, 0.0, ShiftMode::Circular).unwrap(), &g);
        let wrapped = g.shift(m as f64 * h as f64, n as f64 * w as f64, ShiftMode::Circular).unwrap();
        prop_assert_eq!(&wrapped, &g);
    }

    #[test]
    fn integer_circular_shift_is_a_roll(h in 2usize..9, w in 2usize..9, dh in -8i32..9, dw in -8i32..9) {
        let g = PeGrid::build(h, w, 8).unwrap();
        let s = g.shift(dh as f64, dw as f64, ShiftMode::Circular).unwrap();
        for c in 0..8 {
            for i in 0..h {
                for j in 0..w {
                    let si = (i as i32 - dh).rem_euclid(h as i32) as usize;
                    let sj = (j as i32 - dw).rem_euclid(w as i32) as usize;
                    prop_assert!((s.at(c, i, j) - g.at(c, si, sj)).abs() <= 1e-6);
                }
            }
        }
    }

    #[test]
    fn resize_round_trip_and_identity(h in 1usize..9, w in 1usize..9, f in 1usize..4) {
        let g = PeGrid::build(h, w, 8).unwrap();
        prop_assert_eq!(&g.resize(h, w).unwrap(), &g);
        let up = g.resize(h * f, w * f).unwrap();
        prop_assert!(max_oracle_err(&up) <= 1e-6);
        let back = up.resize(h, w).unwrap();
        prop_assert!(max_diff(&back, &g) <= 1e-6);
    }

    #[test]
    fn codes_are_injective_within_a_grid(h in 2usize..12, w in 2usize..12) {
        let g = PeGrid::build(h, w, 16).unwrap();
        let vs: Vec<Vec<f32>> = (0..h).flat_map(|i| (0..w).map(move |j| (i, j))).map(|(i, j)| g.vector_at(i, j)).collect();
        for a in 0..vs.len() {
            for b in a + 1..vs.len() {
                let d: f32 = vs[a].iter().zip(&vs[b]).map(|(x, y)| (x - y).abs()).sum();
                prop_assert!(d > 1e-4, "cells {} and {} collide", a, b);
            }
        }
    }

    #[test]
    fn pyramid_offsets_follow_dyadic_rule(levels in 1usize..8, k in -200i32..200, j in -200i32..200) {
        let p = PePyramid::build(2, 2, &vec![4; levels]).unwrap();
        let s = p.shift(k as f64, j as f64, ShiftMode::Circular).unwrap();
        for (l, &(oh, ow)) in s.offsets().iter().enumerate() {
            let f = 2f64.powi(l as i32 + 1 - levels as i32);
            prop_assert_eq!(oh, k as f64 * f);
            prop_assert_eq!(ow, j as f64 * f);
            prop_assert_eq!(oh, scale_shift_amount(k as f64, l + 1, levels).unwrap());
        }
    }

    #[test]
    fn pyramid_shift_composes(levels in 1usize..5, a in -40.0f64..40.0, b in -40.0f64..40.0) {
        let p = PePyramid::build(2, 3, &vec![8; levels]).unwrap();
        let two = p.shift(a, b, ShiftMode::Circular).unwrap().shift(b, a, ShiftMode::Circular).unwrap();
        let one = p.shift(a + b, a + b, ShiftMode::Circular).unwrap();
        for (x, y) in two.levels().iter().zip(one.levels()) {
            prop_assert!(max_diff(x, y) <= 1e-6);
        }
    }
}

#[test]
fn pyramid_shapes_and_level_shifts() {
    let p = PePyramid::build(4, 4, &[8, 8, 4]).unwrap();
    let dims: Vec<_> = p.levels().iter().map(|g| (g.height(), g.width(), g.channels())).collect();
    assert_eq!(dims, vec![(4, 4, 8), (8, 8, 8), (16, 16, 4)]);
    let s = p.shift(16.0, 0.0, ShiftMode::Circular).unwrap();
    assert_eq!(s.offsets(), &[(4.0, 0.0), (8.0, 0.0), (16.0, 0.0)]);
    // Every level wraps by exactly its own height: the pyramid is unchanged.
    assert_eq!(s.levels()[2], p.levels()[2]);
    let half = p.shift(2.0, 0.0, ShiftMode::Circular).unwrap();
    assert_eq!(half.offsets()[0], (0.5, 0.0));
    assert!(max_oracle_err(half.level(0)) <= 1e-6);
}

#[test]
fn tile_and_extend_coordinates() {
    let g = PeGrid::build(4, 4, 8).unwrap();
    let t = g.tile(&[], &[(0.0, 4.0), (0.0, 4.0)]).unwrap();
    assert_eq!((t.height(), t.width()), (4, 8));
    for c in 0..8 {
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(t.at(c, i, j), t.at(c, i, j + 4));
            }
        }
    }
    assert!(g.tile(&[], &[]).is_err());

    let e = g.extend(2.0, 1.0).unwrap();
    assert_eq!((e.height(), e.width()), (8, 6));
    assert_eq!(e.rows().coords, vec![-2.0, -1.0, 0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
    assert_eq!(e.rows().period, None);
    assert!(max_oracle_err(&e) <= 1e-6);
    assert!(e.shift(1.0, 0.0, ShiftMode::Circular).is_err());
    assert!(e.shift(1.0, 0.0, ShiftMode::Open).is_ok());

    let custom = PeGrid::from_axes(
        4,
        Axis { coords: vec![0.5, 1.5], period: None },
        Axis { coords: vec![-1.0], period: Some(3.0) },
    )
    .unwrap();
    assert!(max_oracle_err(&custom) <= 1e-6);
}
