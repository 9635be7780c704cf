//! Simulation and analysis toolkit for metastability in the two- and
//! three-dimensional dilute Ising model at low temperature.
//!
//! The crate provides:
//! - lattice regions, quenched Bernoulli dilution environments and catalyst
//!   carving ([`lattice`]),
//! - anisotropic surface tension, Wulff shapes constrained to cones and
//!   critical droplet functionals ([`wulff`]),
//! - exact finite-volume Gibbs measures and spectral gaps for oracle-sized
//!   systems ([`gibbs`]),
//! - the random-cluster representation with ghost field, Swendsen-Wang
//!   dynamics and surface tension estimators ([`fk`]),
//! - single-site heat-bath dynamics via the graphical construction, monotone
//!   grand coupling, coupling-from-the-past and block dynamics ([`glauber`]),
//! - mesoscopic coarse graining with good/bad box classification, phase
//!   labels and interface flow ([`coarse`]),
//! - experiment drivers for nucleation scans, catalyst A/B comparisons and
//!   planted droplet growth ([`harness`]).

pub mod coarse;
pub mod error;
pub mod fk;
pub mod geom;
pub mod gibbs;
pub mod glauber;
pub mod harness;
pub mod lattice;
pub mod rng;
pub mod stats;
pub mod wulff;

pub use error::{Error, Result};
pub use geom::{ContinuousShape, Fv, Pt};
pub use lattice::{
    box_decomposition, carve_catalyst, discretize, gen_environment, read_snapshot,
    write_snapshot, Bc, BoxDecomposition, Edge, Environment, LatticeRegion, PartRule, Scales,
    Sign,
};
