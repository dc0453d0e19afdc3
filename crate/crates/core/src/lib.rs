//! Cooperative-game attribution for multi-component workflows.
//!
//! Per-coalition task outcomes are aggregated into a characteristic function
//! ([`game::GameTable`]), which [`attribution`] turns into exact or sampled
//! Shapley values, pairwise synergy and axiom checks. [`evaluation`] drives an
//! external evaluator over coalitions with caching, [`simulator`] produces games
//! with closed-form answers, and [`analysis`] compares attributions across
//! candidate implementations.

pub mod analysis;
pub mod attribution;
pub mod evaluation;
pub mod game;
pub mod report;
pub mod simulator;

pub use attribution::{
    check_axioms, marginal_contribution, shapley_exact, shapley_permutation,
    shapley_permutation_with, synergy_matrix, synergy_pair, AttributionError, AttributionResult,
    AxiomReport, EstimatorConfig, Method, SynergyMatrix,
};
pub use game::{
    enumerate_coalitions, make_coalition, validate_game, Coalition, ComponentId, ComponentSet,
    GameError, GameTable, Severity, ValidationReport,
};
