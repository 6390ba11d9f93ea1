//! Taint-guided utility learning, fault localization and constant-mutation
//! repair for MiniBot robot controllers.

pub mod lang;
pub mod taintflow;
pub mod world;
pub mod executor;
pub mod sarsa;
pub mod faultloc;
pub mod mend;
pub mod config;
