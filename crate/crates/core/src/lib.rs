//! Simulation and analysis of a pulsed, nondegenerate, collinear type-I SPDC
//! source of polarization Bell states.
//!
//! Two crystals emit the amplitudes `|V V>` and `|H H>`. The crate builds both
//! joint spectral amplitudes on a common frequency grid, propagates them
//! through the birefringent elements of the setup, evaluates coincidence
//! fringes against pump, signal and idler phase knobs and analyzer angles, and
//! fits visibility, period and phase from fringe data.
//!
//! Units throughout: wavelengths in nm, crystal/plate lengths in mm, times in
//! fs, angular frequencies in rad/fs, angles in degrees at API boundaries.

pub mod biphoton;
pub mod config;
pub mod dispersion;
pub mod error;
pub mod fitting;
pub mod polarization;
pub mod scenario;
pub mod spectral;
pub mod units;

pub use error::{Error, Result};
