//! Simulation and verification laboratory for fast-slow systems whose fast
//! component is a Markov chain with a bifurcating invariant structure.
//!
//! The system couples a continuous-time chain on `n` states, running at speed
//! `1/epsilon`, to a slow coordinate `z` moved by state-dependent drifts and
//! optional unit noise. The switching rates between two state classes vanish
//! as `z` crosses zero from below, so the averaged slow motion lives on a
//! graph with three edges glued at one vertex. The crate provides:
//!
//! * the model layer: validated rate families, invariant distributions, the
//!   boundary distribution and its class masses ([`model`], [`config`]);
//! * spectral diagnostics of the transition-count matrix near the bifurcation,
//!   including the eigenvalue route to the branching ratio ([`spectral`]);
//! * path simulation of the full fast-slow system and of the limit motions on
//!   the graph ([`sim`], [`graph`]);
//! * verification drivers that compare the two by empirical laws, martingale
//!   defects, exit statistics and cycle counts ([`verify`]);
//! * deterministic CSV/JSON reporting ([`report`]) and a command-line
//!   interface ([`cli`]).

// Validation guards are written `!(x > 0.0)` so that NaN fails them; the
// un-negated form would accept it.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod graph;
pub mod linalg;
pub mod model;
pub mod report;
pub mod sim;
pub mod spectral;
pub mod stats;
pub mod verify;

/// Built-in example models used by the test-suite and available to callers.
pub mod fixtures {
    use crate::config::model_from_str;
    use crate::model::ChainFamily;

    /// Two-state model: one state per class, symmetric linear switching,
    /// drifts (1, 2).
    pub const M2_TOML: &str = include_str!("../fixtures/m2.cfg");

    /// Three-state model: class one is {1, 2} with constant internal rates,
    /// class two the singleton {3}; all cross rates vanish linearly.
    pub const M3_TOML: &str = include_str!("../fixtures/m3.cfg");

    pub fn m2() -> ChainFamily {
        model_from_str(M2_TOML).expect("built-in two-state fixture is valid")
    }

    pub fn m3() -> ChainFamily {
        model_from_str(M3_TOML).expect("built-in three-state fixture is valid")
    }

    /// Two-state variant with both drifts zero and diffusive noise; the slow
    /// motion at the vertex is then driven by the noise alone.
    pub fn m2_zero_drift() -> ChainFamily {
        let text = M2_TOML
            .replace("kappa = 0", "kappa = 1")
            .replace("[[0.0, 1.0]]", "[[0.0, 0.0]]")
            .replace("[[0.0, 2.0]]", "[[0.0, 0.0]]");
        model_from_str(&text).expect("zero-drift variant is valid")
    }

    /// Two-state variant with one shared constant drift and diffusive noise.
    pub fn m2_equal_drift() -> ChainFamily {
        let text = M2_TOML
            .replace("kappa = 0", "kappa = 1")
            .replace("[[0.0, 2.0]]", "[[0.0, 1.0]]");
        model_from_str(&text).expect("equal-drift variant is valid")
    }

    #[cfg(test)]
    mod tests {
        use super::*;

        #[test]
        fn fixtures_validate() {
            assert_eq!(m2().n(), 2);
            assert_eq!(m3().n(), 3);
            assert_eq!(m2_zero_drift().kappa(), 1);
            assert_eq!(m2_equal_drift().shared_far_drift(), Some(1.0));
        }

        #[test]
        fn three_state_boundary_distribution_matches_hand_values() {
            let model = m3();
            let cd = model.classes();
            assert!((cd.pi[0] - 2.0 / 9.0).abs() < 1e-8);
            assert!((cd.pi[1] - 4.0 / 9.0).abs() < 1e-8);
            assert!((cd.pi[2] - 1.0 / 3.0).abs() < 1e-8);
            assert!((cd.branching[0] - 10.0 / 19.0).abs() < 1e-8);
            assert!((cd.vbar0[0] - 19.0 / 9.0).abs() < 1e-8);
            assert!((cd.vbar0[1] - 5.0 / 3.0).abs() < 1e-8);
            assert!((cd.vbar0[2] - 3.0).abs() < 1e-12);
        }
    }
}
