use mrc_denoise::adapt::{denoise_local, AdaptConfig, LocalSolver, NoiseSpec};
use mrc_denoise::calibrate::{Calibration, FamilySpec};
use mrc_denoise::grid::RowPrefix;
use mrc_denoise::io::{decode_csv, decode_pgm, encode_csv, encode_pgm, PgmMapping};
use mrc_denoise::mrc::{estimate_sigma, in_confidence_region, statistic_mn, ResidualSums};
use mrc_denoise::partition::{enumerate_wedges, wedge_sum, PartitionFamily, WedgeDictionary};
use mrc_denoise::solvers::{solve_inhomogeneous_diffusion, solve_tv_traced, DiffusivityField, SolverConfig};
use mrc_denoise::{Grid, Rect, SummedAreaTable};
use proptest::prelude::*;

fn grid_strategy(max_side: usize) -> impl Strategy<Value = Grid> {
    (1..=max_side, 1..=max_side).prop_flat_map(|(r, c)| {
        prop::collection::vec(-100.0..100.0f64, r * c).prop_map(move |v| Grid::from_vec(r, c, v).unwrap())
    })
}

fn square_strategy(side: usize, lo: f64, hi: f64) -> impl Strategy<Value = Grid> {
    prop::collection::vec(lo..hi, side * side).prop_map(move |v| Grid::from_vec(side, side, v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rect_sum_is_pixel_sum(g in grid_strategy(12), picks in prop::array::uniform4(0usize..1000)) {
        let (r, c) = g.shape();
        let (t, b) = (picks[0] % r, picks[1] % r);
        let (l, rt) = (picks[2] % c, picks[3] % c);
        let rect = Rect::new(t.min(b), t.max(b), l.min(rt), l.max(rt));
        let mut brute = 0.0;
        for i in rect.top..=rect.bottom {
            for j in rect.left..=rect.right {
                brute += g[(i, j)];
            }
        }
        let got = SummedAreaTable::new(&g).rect_sum(rect).unwrap();
        prop_assert!((got - brute).abs() <= 1e-9 * brute.abs().max(1.0));
    }

    #[test]
    fn complementary_wedges_add_up(g in square_strategy(16, -10.0, 10.0), level in 1u32..=4, pick in 0usize..64) {
        let family = PartitionFamily::dyadic(16, 1).unwrap();
        let squares = family.level(level);
        let sq = &squares[pick % squares.len()];
        let prefix = RowPrefix::new(&g);
        let whole = SummedAreaTable::new(&g).rect_sum(sq.rect()).unwrap();
        let wedges = enumerate_wedges(sq, &WedgeDictionary::default());
        for pair in wedges.chunks(2) {
            prop_assert_eq!(pair[0].pixel_count + pair[1].pixel_count, sq.pixel_count());
            let total = wedge_sum(&prefix, &pair[0]) + wedge_sum(&prefix, &pair[1]);
            prop_assert!((total - whole).abs() <= 1e-9 * whole.abs().max(1.0));
        }
    }

    #[test]
    fn scan_statistic_is_homogeneous(g in square_strategy(8, -3.0, 3.0), c in 0.01..100.0f64) {
        let family = PartitionFamily::dyadic(8, 1).unwrap();
        let scaled = g.map(|v| c * v).unwrap();
        let base = statistic_mn(&g, &family).unwrap();
        let got = statistic_mn(&scaled, &family).unwrap();
        prop_assert!((got - c * base).abs() <= 1e-9 * (c * base).max(1e-12));
    }

    #[test]
    fn children_sum_to_parent(g in square_strategy(8, -3.0, 3.0)) {
        let family = PartitionFamily::dyadic(8, 1).unwrap();
        let sums = ResidualSums::new(&g);
        for sq in family.squares() {
            if let Some(children) = family.children(sq.id) {
                let parent = sums.square_coefficient(sq) * (sq.pixel_count() as f64).sqrt();
                let kids: f64 = children
                    .iter()
                    .map(|&k| {
                        let s = family.square(k);
                        sums.square_coefficient(s) * (s.pixel_count() as f64).sqrt()
                    })
                    .sum();
                prop_assert!((parent - kids).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn confidence_region_grows_with_tau(g in square_strategy(8, 0.0, 1.0), y in square_strategy(8, 0.0, 1.0), t in 0.1..5.0f64) {
        let family = PartitionFamily::dyadic(8, 1).unwrap();
        if in_confidence_region(&g, &y, 0.3, t, &family).unwrap() {
            prop_assert!(in_confidence_region(&g, &y, 0.3, t * 1.5, &family).unwrap());
        }
    }

    #[test]
    fn sigma_vanishes_on_affine_images(n in 3usize..20, a in -5.0..5.0f64, b in -2.0..2.0f64, c in -2.0..2.0f64) {
        let y = Grid::from_fn(n, n, |i, j| a + b * i as f64 + c * j as f64).unwrap();
        prop_assert!(estimate_sigma(&y).unwrap() < 1e-9);
    }

    #[test]
    fn homogeneous_diffusion_preserves_mass(y in square_strategy(8, -5.0, 5.0), a in 0.0..20.0f64) {
        let cfg = SolverConfig { tol: 1e-12, ..SolverConfig::default() };
        let f = solve_inhomogeneous_diffusion(&y, &DiffusivityField::constant(8, 8, a).unwrap(), &cfg).unwrap();
        prop_assert!((f.sum() - y.sum()).abs() <= 1e-8 * y.l2_norm().max(1.0));
    }

    #[test]
    fn constants_are_fixed_points(a in square_strategy(8, 0.0, 4.0), c in -3.0..3.0f64) {
        let cfg = SolverConfig { tol: 1e-12, ..SolverConfig::default() };
        let field = DiffusivityField::new(a).unwrap();
        let flat = Grid::filled(8, 8, c).unwrap();
        let g = solve_inhomogeneous_diffusion(&flat, &field, &cfg).unwrap();
        prop_assert!(g.max_abs_diff(&flat).unwrap() < 1e-9);
    }

    #[test]
    fn zero_diffusivity_is_identity(y in square_strategy(6, -5.0, 5.0)) {
        let f = solve_inhomogeneous_diffusion(&y, &DiffusivityField::constant(6, 6, 0.0).unwrap(), &SolverConfig::default()).unwrap();
        prop_assert_eq!(f, y);
    }

    #[test]
    fn tv_objective_never_increases(y in square_strategy(8, 0.0, 5.0), a in 0.1..10.0f64) {
        let field = DiffusivityField::constant(8, 8, a).unwrap();
        let (_, trace) = solve_tv_traced(&y, &field, &SolverConfig::default(), None).unwrap();
        for w in trace.objective.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12), "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn csv_round_trips_bit_for_bit(g in grid_strategy(6)) {
        let back = decode_csv(&encode_csv(&g)).unwrap();
        prop_assert_eq!(back, g);
    }

    #[test]
    fn pgm_round_trips_integer_grids(samples in prop::collection::vec(0u16..=65535, 12), wide in any::<bool>()) {
        let maxval = if wide { 65535 } else { 255 };
        let g = Grid::from_vec(3, 4, samples.iter().map(|&s| (s as u32 % (maxval as u32 + 1)) as f64).collect()).unwrap();
        let (back, m) = decode_pgm(&encode_pgm(&g, &PgmMapping::identity(maxval))).unwrap();
        prop_assert_eq!(m, maxval);
        prop_assert_eq!(back, g);
    }

    #[test]
    fn calibration_text_round_trips(alpha in 0.001..0.5f64, delta in 0.1..5.0f64, n in 2usize..1024, min_side in 1usize..8, sims in 100usize..10000, seed in any::<u64>()) {
        let cal = Calibration { alpha, n, family: FamilySpec::dyadic(min_side), delta, sims, seed };
        let back: Calibration = cal.to_string().parse().unwrap();
        prop_assert_eq!(back, cal);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn local_diffusivity_stays_in_range_and_decreases(y in square_strategy(8, 0.0, 5.0), sigma in 0.05..1.0f64) {
        let cfg = AdaptConfig {
            noise: NoiseSpec::Gaussian { sigma: Some(sigma) },
            ..AdaptConfig::with_delta(1.5)
        };
        let r = denoise_local(&y, LocalSolver::InhomogeneousDiffusion, &cfg).unwrap();
        prop_assert!(r.is_clean());
        let a = r.a.grid();
        prop_assert!(a.min() >= 0.0 && a.max() <= 8.0);
        for w in r.trace.windows(2) {
            prop_assert!(w[1].a_max <= w[0].a_max && w[1].a_min <= w[0].a_min);
        }
        prop_assert_eq!(r.trace.last().unwrap().violations, 0);
        prop_assert!(r.trace[..r.trace.len() - 1].iter().all(|t| t.violations > 0));
        let again = denoise_local(&y, LocalSolver::InhomogeneousDiffusion, &cfg).unwrap();
        prop_assert_eq!(again.fhat, r.fhat);
        prop_assert_eq!(again.a, r.a);
    }
}
