//! Weight modules over unrolled quantum sl(2) at a root of unity, their
//! ribbon and Hermitian structure, modified traces, renormalized link
//! invariants and the surgery invariant of closed 3-manifolds.

pub mod context;
pub mod error;
pub mod hermitian;
pub mod invariants;
pub mod linalg;
pub mod mtrace;
pub mod repcore;
pub mod ribbon;
pub mod scalars;
pub mod verify;

pub use context::Ctx;
pub use error::{Error, Result};
pub use hermitian::HermitianForm;
pub use linalg::{Mat, C64};
pub use repcore::{Descriptor, Morphism, SummandWitness, WeightModule};
pub use scalars::Params;
