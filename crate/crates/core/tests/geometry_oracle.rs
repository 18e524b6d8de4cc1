use oscflat::flavor::{Ham2, ReductionRow};
use oscflat::geometry::{assemble_hvv, partial_hvv, AngleGrid, ExactSum, Model, PartialSums};
use proptest::prelude::*;
use std::f64::consts::PI;

/// Direction of trajectory `(j, k)` at radius `r`, computed from the
/// emission geometry: `sin(theta') = (R / r) sin(theta0)`.
fn direction(r: f64, rnu: f64, abins: usize, pbins: usize, j: usize, k: usize) -> [f64; 3] {
    let c2 = (j as f64 + 0.5) / abins as f64;
    let s0 = (1.0 - c2).sqrt();
    let s = rnu / r * s0;
    let c = (1.0 - s * s).sqrt();
    let phi = (k as f64 + 0.5) * 2.0 * PI / pbins as f64;
    [c, s * phi.cos(), s * phi.sin()]
}

/// `sum_t' R(t') w(t') (1 - cos gamma) / 2` with the measure
/// `(R/r)^2 / 2 dcos^2(theta0) dphi / 2pi` divided by `cos(theta')`.
fn brute_force(
    model: Model,
    abins: usize,
    pbins: usize,
    r: f64,
    rnu: f64,
    integrand: &[ReductionRow],
    j: usize,
    k: usize,
) -> Ham2 {
    let me = direction(r, rnu, abins, pbins, j, k);
    let mut acc = ReductionRow::ZERO;
    for jp in 0..abins {
        for kp in 0..pbins {
            let other = direction(r, rnu, abins, pbins, jp, kp);
            let cos_gamma = match model {
                // the azimuth average of the bulb model leaves cos * cos'
                Model::Bulb => me[0] * other[0],
                _ => me[0] * other[0] + me[1] * other[1] + me[2] * other[2],
            };
            let w = 0.5 * (rnu / r).powi(2) / (abins * pbins) as f64 / other[0];
            acc += integrand[jp * pbins + kp] * (w * (1.0 - cos_gamma));
        }
    }
    Ham2::new(0.5 * acc.d, 0.5 * acc.o_re, 0.5 * acc.o_im)
}

fn rel_close(a: Ham2, b: Ham2, scale: f64) -> bool {
    let d = (a.h11 - b.h11)
        .abs()
        .max((a.h12_re - b.h12_re).abs())
        .max((a.h12_im - b.h12_im).abs());
    d <= 1e-12 * scale
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn factorized_sums_equal_pairwise_sums(
        extended in any::<bool>(),
        abins in 1usize..=8,
        pbins in 1usize..=4,
        r in 10.5..400.0f64,
        vals in prop::collection::vec(-1e3..1e3f64, 96),
    ) {
        let (model, pbins) = if extended { (Model::ExtendedBulb, pbins) } else { (Model::Bulb, 1) };
        let rnu = 10.0;
        let grid = AngleGrid::new(model, abins, pbins, rnu).unwrap();
        let cache = grid.cache(r).unwrap();
        let n = abins * pbins;
        let integrand: Vec<ReductionRow> =
            (0..n).map(|t| ReductionRow::new(vals[3 * t], vals[3 * t + 1], vals[3 * t + 2])).collect();
        let sums = partial_hvv(&grid, &cache, 0, n, |t| integrand[t]);
        let totals = sums.totals();
        let scale: f64 = integrand
            .iter()
            .map(|x| x.d.abs() + x.o_re.abs() + x.o_im.abs())
            .sum::<f64>()
            * 0.5 * (rnu / r).powi(2) / n as f64 / cache.cos.iter().cloned().fold(1.0, f64::min);
        for j in 0..abins {
            for k in 0..pbins {
                let got = assemble_hvv(&grid, &totals, &cache, j, k);
                let want = brute_force(model, abins, pbins, r, rnu, &integrand, j, k);
                prop_assert!(rel_close(got, want, scale), "{:?} vs {:?}", got, want);
            }
        }
    }

    #[test]
    fn extended_grid_reduces_to_bulb_for_symmetric_states(
        abins in 1usize..=8,
        pbins in 2usize..=8,
        r in 10.5..400.0f64,
        vals in prop::collection::vec(-1.0..1.0f64, 24),
    ) {
        let rnu = 10.0;
        let bulb = AngleGrid::new(Model::Bulb, abins, 1, rnu).unwrap();
        let ext = AngleGrid::new(Model::ExtendedBulb, abins, pbins, rnu).unwrap();
        let cb = bulb.cache(r).unwrap();
        let ce = ext.cache(r).unwrap();
        let row = |j: usize| ReductionRow::new(vals[3 * j], vals[3 * j + 1], vals[3 * j + 2]);
        let tb = partial_hvv(&bulb, &cb, 0, abins, row).totals();
        let te = partial_hvv(&ext, &ce, 0, abins * pbins, |t| row(t / pbins)).totals();
        for j in 0..abins {
            let hb = assemble_hvv(&bulb, &tb, &cb, j, 0);
            for k in 0..pbins {
                let he = assemble_hvv(&ext, &te, &ce, j, k);
                prop_assert!(rel_close(hb, he, 10.0), "{:?} vs {:?}", hb, he);
            }
        }
    }

    #[test]
    fn exact_sums_ignore_order_and_grouping(
        mut xs in prop::collection::vec(prop_oneof![-1e20..1e20f64, -1.0..1.0f64, -1e-20..1e-20f64], 1..200),
        cut in 0usize..200,
    ) {
        let mut all = ExactSum::default();
        for &x in &xs {
            all.add(x);
        }
        let cut = cut.min(xs.len());
        let (mut left, mut right) = (ExactSum::default(), ExactSum::default());
        for &x in &xs[..cut] {
            left.add(x);
        }
        for &x in &xs[cut..] {
            right.add(x);
        }
        right.merge(&left);
        xs.reverse();
        let mut rev = ExactSum::default();
        for &x in &xs {
            rev.add(x);
        }
        prop_assert_eq!(all.value(), right.value());
        prop_assert_eq!(all.value(), rev.value());
        prop_assert_eq!(ExactSum::from_partials(all.partials()).value(), all.value());
    }

    #[test]
    fn payload_round_trip(slots in 1usize..5, vals in prop::collection::vec(-1e10..1e10f64, 0..60)) {
        let mut p = PartialSums::new(slots);
        for (i, v) in vals.chunks(3).enumerate() {
            if v.len() == 3 {
                p.add(i % slots, ReductionRow::new(v[0], v[1], v[2]));
            }
        }
        let back = PartialSums::from_payload(&p.to_payload(), slots).unwrap();
        prop_assert_eq!(back.totals(), p.totals());
    }
}

#[test]
fn exact_sum_beats_naive_cancellation() {
    let mut s = ExactSum::default();
    for x in [1e100, 1.0, -1e100, 1e-30] {
        s.add(x);
    }
    assert_eq!(s.value(), 1.0 + 1e-30);
}

#[test]
fn single_angle_uses_geometric_factor() {
    let grid = AngleGrid::new(Model::SingleAngle, 1, 1, 10.0).unwrap();
    let c = grid.cache(100.0).unwrap();
    // D(x) = (1 - sqrt(1 - x^2))^2 / 2 with x = R/r
    let x: f64 = 0.1;
    let d = 0.5 * (1.0 - (1.0 - x * x).sqrt()).powi(2);
    assert!((c.w[0] - d).abs() < 1e-16);
    let a = grid.cache(100.0).unwrap();
    let b = grid.cache(101.5).unwrap();
    assert_eq!(grid.path_length(&a, &b, 0), 1.5);
}

#[test]
fn chord_length_matches_straight_line() {
    let grid = AngleGrid::new(Model::Bulb, 5, 1, 10.0).unwrap();
    let (r0, r1) = (12.0, 13.0);
    let (a, b) = (grid.cache(r0).unwrap(), grid.cache(r1).unwrap());
    for j in 0..5 {
        // impact parameter p = r sin(theta'), chord = sqrt(r1^2 - p^2) - sqrt(r0^2 - p^2)
        let p = r0 * (1.0 - a.cos[j] * a.cos[j]).sqrt();
        let want = (r1 * r1 - p * p).sqrt() - (r0 * r0 - p * p).sqrt();
        assert!((grid.path_length(&a, &b, j) - want).abs() < 1e-12);
    }
}
