//! Scalar-wave toolkit for near-field focusing through stacks of programmable
//! transmissive phase layers.
//!
//! The crate models a feed illuminating a cascade of phase layers on a common
//! aperture lattice, propagates fields with the free-space Green's kernel
//! e^{-jk0 R}/(4 pi R), designs per-layer phase profiles that focus at an
//! on-axis point, measures focal quality (coherence, gain loss, PSF widths),
//! and sweeps distance to locate the usable near-field boundary per layer
//! count under hardware imperfections.
//!
//! Modules map onto the pipeline:
//! - [`config`] / [`aperture`]: scenario description, aperture lattice, feed.
//! - [`propagation`]: Green/Fresnel operators, cascades, observation cuts.
//! - [`wavefront`]: target profiles, phase fits, curvature diagnostics.
//! - [`optimizer`]: per-layer phase design, quantization, imperfections.
//! - [`metrics`]: coherence, PSF cuts, FWHM, resolution models.
//! - [`unfd`]: distance sweeps and usable-boundary extraction.
//! - [`calibration`]: fitting the semi-empirical correction coefficients.
//!
//! Evaluating one operating point end to end:
//!
//! ```
//! use nearfield_core::{aperture::build_aperture, config::SystemConfig, unfd};
//!
//! // 5 cm aperture, half-wave pitch, two layers, default thresholds.
//! let config = SystemConfig::new(0.010714, 0.05, 2);
//! let grid = build_aperture(&config).unwrap();
//! let report = unfd::evaluate_at_on_grid(&config, &grid, 0.05).unwrap();
//! assert!(report.coherence > 0.9);
//! assert!(report.gain_loss_db < 3.0);
//! ```

pub mod aperture;
pub mod calibration;
pub mod config;
pub mod metrics;
pub mod optimizer;
pub mod propagation;
pub mod selfcheck;
pub mod unfd;
pub mod wavefront;

mod error;

pub use error::{Error, Result};
