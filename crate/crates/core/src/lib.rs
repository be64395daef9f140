pub mod bayesopt;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod evaluation;
pub mod integrate;
pub mod persistence;
pub mod pipeline;
pub mod seeding;
pub mod topology;
pub mod training;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/systems.md")]
    mod systems {}
    #[doc = include_str!("../../../book/src/reservoirs.md")]
    mod reservoirs {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/metric.md")]
    mod metric {}
    #[doc = include_str!("../../../book/src/optimization.md")]
    mod optimization {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
