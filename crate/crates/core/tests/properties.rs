//! Property checks: the closed-form worst case solves its quadratic program,
//! and case files survive a write/parse round trip.

use proptest::prelude::*;
use rmss_core::grid::{parse_matpower, write_matpower};
use rmss_core::linalg::{dot, DenseMatrix, LuFactor};
use rmss_core::worstcase::corner_deviation;

/// `Σ = AAᵀ + εI` from the entries of `A`.
fn covariance(d: usize, a: &[f64], eps: f64) -> DenseMatrix {
    let rows: Vec<Vec<f64>> = (0..d)
        .map(|i| {
            (0..d)
                .map(|j| {
                    let s: f64 = (0..d).map(|k| a[i * d + k] * a[j * d + k]).sum();
                    s + if i == j { eps } else { 0.0 }
                })
                .collect()
        })
        .collect();
    DenseMatrix::from_rows(&rows)
}

fn mahalanobis(lu: &LuFactor, dev: &[f64]) -> f64 {
    dot(dev, &lu.solve(dev))
}

fn instance() -> impl Strategy<Value = (usize, Vec<f64>, f64, Vec<f64>, f64)> {
    (1usize..=4).prop_flat_map(|d| {
        (
            Just(d),
            prop::collection::vec(-1.0..1.0f64, d * d),
            1e-3..0.5f64,
            prop::collection::vec(-2.0..2.0f64, d),
            -3.0..3.0f64,
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn corner_lies_on_the_hyperplane((d, a, eps, lambda, delta) in instance()) {
        prop_assume!(lambda.iter().any(|l| l.abs() > 1e-3));
        let cov = covariance(d, &a, eps);
        let dev = corner_deviation(&cov, &lambda, delta).unwrap();
        prop_assert!((dot(&lambda, &dev) - delta).abs() <= 1e-10 * delta.abs().max(1.0));
    }

    #[test]
    fn corner_minimizes_mahalanobis_distance(
        (d, a, eps, lambda, delta) in instance(),
        offsets in prop::collection::vec(prop::collection::vec(-3.0..3.0f64, 4), 64),
    ) {
        prop_assume!(lambda.iter().any(|l| l.abs() > 1e-3));
        let cov = covariance(d, &a, eps);
        let lu = LuFactor::new(&cov).unwrap();
        let dev = corner_deviation(&cov, &lambda, delta).unwrap();
        let best = mahalanobis(&lu, &dev);
        let ll = dot(&lambda, &lambda);
        for o in &offsets {
            // project the offset onto the hyperplane λᵀx = δ
            let o = &o[..d];
            let t = (delta - dot(&lambda, o)) / ll;
            let p: Vec<f64> = o.iter().zip(&lambda).map(|(x, l)| x + t * l).collect();
            prop_assert!(mahalanobis(&lu, &p) >= best * (1.0 - 1e-12) - 1e-12);
        }
    }

    #[test]
    fn lower_corner_mirrors_upper((d, a, eps, lambda, delta) in instance()) {
        prop_assume!(lambda.iter().any(|l| l.abs() > 1e-3));
        let cov = covariance(d, &a, eps);
        let up = corner_deviation(&cov, &lambda, delta).unwrap();
        let down = corner_deviation(&cov, &lambda, -delta).unwrap();
        for (u, l) in up.iter().zip(&down) {
            prop_assert_eq!(*u, -*l);
        }
    }

    #[test]
    fn corner_ignores_covariance_scale(
        (d, a, eps, lambda, delta) in instance(),
        k in 0.01..100.0f64,
    ) {
        prop_assume!(lambda.iter().any(|l| l.abs() > 1e-3));
        let cov = covariance(d, &a, eps);
        let base = corner_deviation(&cov, &lambda, delta).unwrap();
        let scaled = corner_deviation(&cov.scaled(k), &lambda, delta).unwrap();
        for (x, y) in base.iter().zip(&scaled) {
            prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1e-6));
        }
    }

    #[test]
    fn written_cases_parse_back_identically(text in case_text()) {
        let case = parse_matpower(&text, "prop").unwrap();
        prop_assert_eq!(&case, &parse_matpower(&text, "prop").unwrap());
        let again = parse_matpower(&write_matpower(&case), "prop").unwrap();
        prop_assert_eq!(case, again);
    }
}

/// A radial case of 2–8 buses with decimal data as a file would hold it.
fn case_text() -> impl Strategy<Value = String> {
    (2usize..=8)
        .prop_flat_map(|n| {
            let bus = (
                0u8..2,
                0u32..20_000,
                0u32..5_000,
                -30_000i32..30_000,
                94u32..=106,
            );
            let line = (0u32..200, 1u32..3_000, 0u32..500);
            (
                prop::collection::vec(bus, n - 1),
                prop::collection::vec(line, n - 1),
                prop::collection::vec(0u32..10_000, n - 1),
            )
        })
        .prop_map(|(buses, lines, pg)| {
            let mut bus = String::from("\t1\t3\t0\t0\t0\t0\t1\t1\t0\t230\t1\t1.1\t0.9;\n");
            let mut gen = String::from("\t1\t0\t0\t999\t-999\t1\t100\t1\t999\t0;\n");
            let mut branch = String::new();
            for (k, ((kind, pd, qd, va, vm), (r, x, b))) in buses.iter().zip(&lines).enumerate() {
                let id = k + 2;
                let kind = if *kind == 1 { 2 } else { 1 };
                bus.push_str(&format!(
                    "\t{id}\t{kind}\t{}\t{}\t0\t0\t1\t{}\t{}\t230\t1\t1.1\t0.9;\n",
                    *pd as f64 / 100.0,
                    *qd as f64 / 100.0,
                    *vm as f64 / 100.0,
                    *va as f64 / 1000.0
                ));
                if kind == 2 {
                    gen.push_str(&format!(
                        "\t{id}\t{}\t0\t999\t-999\t{}\t100\t1\t999\t0;\n",
                        pg[k] as f64 / 100.0,
                        *vm as f64 / 100.0
                    ));
                }
                branch.push_str(&format!(
                    "\t{}\t{id}\t{}\t{}\t{}\t0\t0\t0\t0\t0\t1\t-360\t360;\n",
                    id - 1,
                    *r as f64 / 10_000.0,
                    *x as f64 / 10_000.0,
                    *b as f64 / 10_000.0
                ));
            }
            format!(
                "function mpc = prop\nmpc.version = '2';\nmpc.baseMVA = 100;\n\
             mpc.bus = [\n{bus}];\nmpc.gen = [\n{gen}];\nmpc.branch = [\n{branch}];\n"
            )
        })
}
