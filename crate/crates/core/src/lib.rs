//! Analysis and design of delay-robust leader-follower synchronization for
//! identical linear agents on directed graphs.
//!
//! The pipeline decouples the networked error dynamics along the spectrum of
//! the pinned Laplacian, certifies each decoupled delayed system with a
//! Lyapunov-Krasovskii LMI, and synthesizes distributed state-feedback gains.
//! A method-of-steps simulator and a pseudospectral characteristic-root
//! oracle provide independent checks.

pub mod analysis;
pub mod error;
pub mod geometry;
pub mod graph;
pub mod lmi;
pub mod oracle;
pub mod sdp;
pub mod simulate;
pub mod synthesis;

pub use error::{Error, Result};
