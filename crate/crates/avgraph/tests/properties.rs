//! Structural invariants checked over randomized inputs: generator algebra,
//! rate regularity, drift-scaling invariance of the branching ratio, seeded
//! reproducibility and the report formatting contract.

use avgraph::config::model_from_str;
use avgraph::fixtures;
use avgraph::model::{ChainFamily, GraphPoint};
use avgraph::report::format_float;
use avgraph::sim::{self, FastSlowState, SimConfig};
use avgraph::verify::{law_distance, EmpiricalLaw};
use proptest::prelude::*;

fn fixture_pair() -> Vec<ChainFamily> {
    vec![fixtures::m2(), fixtures::m3()]
}

proptest! {
    /// Rows of the generator sum to zero, off-diagonal rates are nonnegative,
    /// and above the bifurcation the two classes are fully decoupled.
    #[test]
    fn generator_rows_balance(z in -3.0f64..3.0) {
        for model in fixture_pair() {
            let q = model.generator_matrix(z);
            let n = model.n();
            let m = model.m();
            for i in 0..n {
                let mut row = 0.0;
                for j in 0..n {
                    row += q[(i, j)];
                    if i != j {
                        prop_assert!(q[(i, j)] >= 0.0);
                    }
                    let crosses = (i < m) != (j < m);
                    if z >= 0.0 && crosses {
                        prop_assert_eq!(q[(i, j)], 0.0);
                    }
                }
                prop_assert!(row.abs() < 1e-12, "row {} sums to {}", i, row);
            }
        }
    }

    /// Switching rates are continuous in the slow coordinate: nearby levels
    /// give nearby rates, across patch boundaries as well.
    #[test]
    fn rates_are_continuous(z in -2.5f64..0.5, h in 1e-9f64..1e-6) {
        for model in fixture_pair() {
            let n = model.n();
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let gap = (model.rate(i, j, z + h) - model.rate(i, j, z)).abs();
                    prop_assert!(
                        gap <= 50.0 * h + 1e-12,
                        "rate {}->{} jumps by {} over {} at z = {}",
                        i, j, gap, h, z
                    );
                }
            }
        }
    }

    /// Scaling every drift by one positive constant leaves the branching
    /// ratio alone: only drift proportions at the boundary enter.
    #[test]
    fn branching_ratio_ignores_drift_scale(c in 0.05f64..20.0) {
        let text = fixtures::M2_TOML
            .replace("[[0.0, 1.0]]", &format!("[[0.0, {c:.17}]]"))
            .replace("[[0.0, 2.0]]", &format!("[[0.0, {:.17}]]", 2.0 * c));
        let scaled = model_from_str(&text).unwrap();
        prop_assert!(
            (scaled.classes().branching[0] - 1.0 / 3.0).abs() < 1e-9,
            "p1 moved to {} under drift scale {}",
            scaled.classes().branching[0],
            c
        );
    }

    /// The same seed and stream reproduce a path sample for sample; a
    /// different stream gives a different trajectory.
    #[test]
    fn paths_reproduce_by_seed(seed in any::<u64>()) {
        let model = fixtures::m2();
        let mut cfg = SimConfig::new(1e-2, 1, 0.05, seed);
        cfg.grid_points = 9;
        let x0 = FastSlowState { state: 0, z: -0.2 };
        let a = sim::simulate_path(&model, x0, &cfg, &mut sim::path_rng(seed, 0)).unwrap();
        let b = sim::simulate_path(&model, x0, &cfg, &mut sim::path_rng(seed, 0)).unwrap();
        prop_assert_eq!(a.samples.len(), b.samples.len());
        for (s, t) in a.samples.iter().zip(&b.samples) {
            prop_assert_eq!(s.t, t.t);
            prop_assert_eq!(s.state, t.state);
            prop_assert_eq!(s.z, t.z);
        }
        let c = sim::simulate_path(&model, x0, &cfg, &mut sim::path_rng(seed, 1)).unwrap();
        prop_assert_ne!(a.terminal.z, c.terminal.z);
    }

    /// The law distance is a pseudometric bounded by one on terminal laws.
    #[test]
    fn law_distance_is_pseudometric(
        pa in prop::collection::vec((0u8..3, 0.0f64..2.0), 1..120),
        pb in prop::collection::vec((0u8..3, 0.0f64..2.0), 1..120),
    ) {
        let build = |pts: &[(u8, f64)]| EmpiricalLaw {
            time: 1.0,
            points: pts
                .iter()
                .map(|&(e, mag)| {
                    let coord = if e == 0 { -mag } else { mag };
                    GraphPoint::new(e, coord).unwrap()
                })
                .collect(),
        };
        let a = build(&pa);
        let b = build(&pb);
        let dab = law_distance(&a, &b).unwrap();
        let dba = law_distance(&b, &a).unwrap();
        let daa = law_distance(&a, &a).unwrap();
        prop_assert_eq!(daa, 0.0);
        prop_assert_eq!(dab, dba);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&dab));
    }

    /// Printed floats parse back to the identical value.
    #[test]
    fn formatted_floats_round_trip(x in any::<f64>()) {
        prop_assume!(x.is_finite());
        let text = format_float(x);
        let back: f64 = text.parse().unwrap();
        prop_assert_eq!(back, x, "{} -> {}", x, text);
    }

    /// The slow-coordinate projection: left of the bifurcation every state
    /// maps to the common edge, right of it to the edge of its class, and the
    /// signed coordinate is preserved.
    #[test]
    fn projection_respects_classes(state in 0usize..3, z in -2.0f64..2.0) {
        let model = fixtures::m3();
        let p = model.project_h(state, z);
        if z == 0.0 {
            // The vertex has one canonical representation on edge zero.
            prop_assert!(p.is_vertex());
            prop_assert_eq!(p.edge(), 0);
        } else if z < 0.0 {
            prop_assert_eq!(p.edge(), 0);
        } else {
            // Class labels are one-based and double as edge numbers.
            prop_assert_eq!(p.edge(), model.class_of(state));
        }
        prop_assert_eq!(p.coord(), z);
    }
}
