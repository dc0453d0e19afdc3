//! Exit-code classification: 1 for environment/transport trouble, 2 for bad input.

use std::fmt;

use wfshap_core::analysis::AnalysisError;
use wfshap_core::evaluation::EvalError;
use wfshap_core::report::ReportError;
use wfshap_core::simulator::SimError;
use wfshap_core::{AttributionError, GameError};

pub const EXIT_ENVIRONMENT: u8 = 1;
pub const EXIT_VALIDATION: u8 = 2;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn validation(error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: EXIT_VALIDATION,
            error: error.into(),
        }
    }

    pub fn environment(error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: EXIT_ENVIRONMENT,
            error: error.into(),
        }
    }

    pub fn context(self, msg: impl fmt::Display + Send + Sync + 'static) -> Self {
        Failure {
            code: self.code,
            error: self.error.context(msg),
        }
    }
}

fn game_code(e: &GameError) -> u8 {
    match e {
        GameError::Io { .. } => EXIT_ENVIRONMENT,
        _ => EXIT_VALIDATION,
    }
}

fn attribution_code(e: &AttributionError) -> u8 {
    match e {
        AttributionError::Game(g) => game_code(g),
        AttributionError::Oracle { .. } => EXIT_ENVIRONMENT,
        _ => EXIT_VALIDATION,
    }
}

fn sim_code(e: &SimError) -> u8 {
    match e {
        SimError::Io { .. } => EXIT_ENVIRONMENT,
        SimError::Game(g) => game_code(g),
        _ => EXIT_VALIDATION,
    }
}

fn eval_code(e: &EvalError) -> u8 {
    match e {
        EvalError::Io { .. }
        | EvalError::Transport { .. }
        | EvalError::Protocol { .. }
        | EvalError::Cache(_) => EXIT_ENVIRONMENT,
        EvalError::Game(g) => game_code(g),
        EvalError::Attribution(a) => attribution_code(a),
        EvalError::Sim(s) => sim_code(s),
        _ => EXIT_VALIDATION,
    }
}

macro_rules! classified {
    ($ty:ty, $f:expr) => {
        impl From<$ty> for Failure {
            fn from(e: $ty) -> Self {
                Failure {
                    code: $f(&e),
                    error: e.into(),
                }
            }
        }
    };
}

classified!(GameError, game_code);
classified!(AttributionError, attribution_code);
classified!(SimError, sim_code);
classified!(EvalError, eval_code);
classified!(AnalysisError, |e: &AnalysisError| match e {
    AnalysisError::Io { .. } => EXIT_ENVIRONMENT,
    AnalysisError::Game(g) => game_code(g),
    _ => EXIT_VALIDATION,
});
classified!(ReportError, |_: &ReportError| EXIT_VALIDATION);
