//! Constrained-subspace quantum walks with phase steering, and the tooling
//! to compile them to Rydberg pulse programs and analyse measured shots.

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod analysis;
pub mod ctqw;
pub mod error;
pub mod mitigation;
pub mod optim;
pub mod prep_bracelet;
pub mod prep_product;
pub mod rydberg;
pub mod sparse;
pub mod subspace;

pub use ctqw::{
    apply_phasor, overlap_probability, run_ansatz, success_probability, AnsatzSchedule, Layer,
    PhasorDiagonal, PhasorKind, Propagator, StateVector, WalkGenerator,
};
pub use analysis::{amplification, fit_power_law, grover_reference, quench, AmplificationPoint, PowerLawFit, QuenchMode,
    QuenchTrace};
pub use error::{Error, Result};
pub use mitigation::{em_reconstruct, EmModel, EmOptions, ReadoutChannel, ShotSet};
pub use rydberg::{compile_program, emulate, sample_shots, AtomLayout, PhysicalConstants, RydbergProgram};
pub use subspace::{ConstraintGraph, DihedralOrbit, SubspaceBasis};
