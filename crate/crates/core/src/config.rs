//! Scenario configuration: the single source of truth for a simulation run.
//!
//! A scenario is one JSON document with the top-level keys
//! `physics`, `layers`, `feed`, `thresholds`, `imperfections`, `calibration`
//! and `sweep`. All lengths are meters, angles radians, frequency Hz.
//! Unknown keys anywhere are a hard error, so typos cannot silently fall
//! back to defaults.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::unfd::{SweepPlan, SweepSpacing};
use crate::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Feed illumination model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedKind {
    /// Spherical wave from a point on the boresight behind the first layer.
    PointSource,
    /// Unit-amplitude, zero-phase plane illumination.
    UniformPlane,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeedModel {
    pub kind: FeedKind,
    /// Distance of the point source behind the first layer (m).
    pub feed_distance: f64,
    /// Total input power the aperture field is normalized to.
    pub power: f64,
}

/// Engineering thresholds that define the usable near-field boundary.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Thresholds {
    /// Maximum allowable focusing gain loss (dB).
    pub gain_loss_db: f64,
    /// Minimum lateral resolution retention.
    pub lateral_retention: f64,
    /// Minimum axial resolution retention.
    pub axial_retention: f64,
    /// Maximum residual phase at the aperture edge (rad).
    pub residual_phase: f64,
    /// Quadratic-model truncation tolerance (rad).
    pub trunc_phase: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            gain_loss_db: 3.0,
            lateral_retention: 0.958,
            axial_retention: 0.8,
            residual_phase: PI / 8.0,
            trunc_phase: PI / 8.0,
        }
    }
}

/// Hardware imperfection parameters injected into a designed stack.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImperfectionParams {
    /// Lateral misalignment magnitude per adjacent layer pair (m).
    pub misalignment: f64,
    /// Per-layer power transmission efficiency, in (0, 1].
    pub transmission_efficiency: f64,
    /// Phase control resolution in bits; `None` means unquantized.
    pub phase_bits: Option<u32>,
    /// Deviation added to every nominal layer spacing (m).
    pub spacing_deviation: f64,
    /// Seed for the stochastic parts (misalignment directions).
    pub rng_seed: u64,
}

impl Default for ImperfectionParams {
    fn default() -> Self {
        ImperfectionParams {
            misalignment: 0.0,
            transmission_efficiency: 1.0,
            phase_bits: None,
            spacing_deviation: 0.0,
            rng_seed: 0,
        }
    }
}

/// Semi-empirical coefficients of the corrected resolution models.
///
/// Defaults are zeros (models reduce to the diffraction-limited forms)
/// except the two scaling constants `c_lat` and `c_ax`. Nonzero values come
/// from the calibration module.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationCoefficients {
    /// Lateral WRMS inflation coefficient.
    pub xi_lat: f64,
    /// Axial WRMS-squared inflation coefficient.
    pub xi_ax: f64,
    /// Axial misalignment correction coefficient (distinct from `xi_ax`).
    pub xi_ax_mis: f64,
    /// Lateral aperture-utilization misalignment coefficient.
    pub chi_lat: f64,
    /// Misalignment exponent for the lateral channel.
    pub mu: f64,
    /// Misalignment exponent for the axial channel.
    pub nu: f64,
    pub gamma_loss: f64,
    pub gamma_quant: f64,
    pub gamma_gap: f64,
    /// Lateral diffraction constant; 0.886 for uniform illumination.
    pub c_lat: f64,
    /// Axial diffraction constant.
    pub c_ax: f64,
    /// Curvature-mismatch axial inflation coefficient.
    pub beta: f64,
    /// Second-order term coefficient of the high-order axial model.
    pub xi_ax2: f64,
    /// Quartic term coefficient of the high-order axial model.
    pub xi_ax4: f64,
    /// Zero-misalignment coherent aperture utilization per layer count.
    pub eta_aper0: BTreeMap<u32, f64>,
}

impl Default for CalibrationCoefficients {
    fn default() -> Self {
        CalibrationCoefficients {
            xi_lat: 0.0,
            xi_ax: 0.0,
            xi_ax_mis: 0.0,
            chi_lat: 0.0,
            mu: 1.0,
            nu: 1.0,
            gamma_loss: 0.0,
            gamma_quant: 0.0,
            gamma_gap: 0.0,
            c_lat: 0.886,
            c_ax: 2.0,
            beta: 0.0,
            xi_ax2: 0.0,
            xi_ax4: 0.0,
            eta_aper0: BTreeMap::new(),
        }
    }
}

impl CalibrationCoefficients {
    /// Zero-misalignment aperture utilization for a given layer count.
    pub fn eta_aper0_for(&self, layer_count: usize) -> f64 {
        self.eta_aper0
            .get(&(layer_count as u32))
            .copied()
            .unwrap_or(1.0)
    }
}

/// Full scenario description shared by every module.
#[derive(Clone, Debug)]
pub struct SystemConfig {
    /// Operating wavelength (m).
    pub wavelength: f64,
    /// Diameter of the equivalent circular aperture (m).
    pub aperture_diameter: f64,
    /// Element pitch of the square lattice (m).
    pub element_pitch: f64,
    /// Number of stacked layers L.
    pub layer_count: usize,
    /// Inter-layer gaps, length L-1, each positive (m).
    pub layer_spacings: Vec<f64>,
    pub feed: FeedModel,
    pub thresholds: Thresholds,
    pub imperfections: ImperfectionParams,
    pub calibration: CalibrationCoefficients,
    pub sweep: SweepPlan,
}

impl SystemConfig {
    /// Minimal valid configuration: uniform spacing 5 lambda, point feed at
    /// 0.2 D, default thresholds, no imperfections.
    pub fn new(wavelength: f64, aperture_diameter: f64, layer_count: usize) -> Self {
        let cfg = SystemConfig {
            wavelength,
            aperture_diameter,
            element_pitch: wavelength / 2.0,
            layer_count,
            layer_spacings: vec![5.0 * wavelength; layer_count.saturating_sub(1)],
            feed: FeedModel {
                kind: FeedKind::PointSource,
                feed_distance: 0.2 * aperture_diameter,
                power: 1.0,
            },
            thresholds: Thresholds::default(),
            imperfections: ImperfectionParams::default(),
            calibration: CalibrationCoefficients::default(),
            sweep: SweepPlan::default(),
        };
        debug_assert!(cfg.validate().is_ok());
        cfg
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.wavelength
    }

    /// Classical Rayleigh distance 2 D^2 / lambda.
    pub fn rayleigh_distance(&self) -> f64 {
        2.0 * self.aperture_diameter * self.aperture_diameter / self.wavelength
    }

    /// Nominal uniform spacing; mean of the configured gaps, or 5 lambda for
    /// a single layer.
    pub fn nominal_spacing(&self) -> f64 {
        if self.layer_spacings.is_empty() {
            5.0 * self.wavelength
        } else {
            self.layer_spacings.iter().sum::<f64>() / self.layer_spacings.len() as f64
        }
    }

    /// Gap list for an arbitrary layer count: the configured list when its
    /// length matches, otherwise the nominal spacing replicated.
    pub fn spacings_for(&self, layer_count: usize) -> Vec<f64> {
        if layer_count == self.layer_count {
            self.layer_spacings.clone()
        } else {
            vec![self.nominal_spacing(); layer_count.saturating_sub(1)]
        }
    }

    /// Copy of the configuration with a different layer count (used by
    /// layer-count sweeps; spacings follow [`Self::spacings_for`]).
    pub fn with_layer_count(&self, layer_count: usize) -> SystemConfig {
        let mut cfg = self.clone();
        cfg.layer_spacings = self.spacings_for(layer_count);
        cfg.layer_count = layer_count;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.wavelength > 0.0) {
            return fail(format!("wavelength must be positive, got {}", self.wavelength));
        }
        if !(self.aperture_diameter > 0.0) {
            return fail(format!(
                "aperture_diameter must be positive, got {}",
                self.aperture_diameter
            ));
        }
        if !(self.element_pitch > 0.0) {
            return fail(format!(
                "element_pitch must be positive, got {}",
                self.element_pitch
            ));
        }
        if self.element_pitch > self.wavelength {
            return fail(format!(
                "element_pitch {} exceeds the wavelength {}; elements must be subwavelength",
                self.element_pitch, self.wavelength
            ));
        }
        if self.layer_count < 1 {
            return fail("layer_count must be at least 1".into());
        }
        if self.layer_spacings.len() != self.layer_count - 1 {
            return fail(format!(
                "expected {} layer spacings for {} layers, got {}",
                self.layer_count - 1,
                self.layer_count,
                self.layer_spacings.len()
            ));
        }
        if let Some(d) = self.layer_spacings.iter().find(|d| !(**d > 0.0)) {
            return fail(format!("layer spacings must be positive, got {d}"));
        }
        if self.feed.kind == FeedKind::PointSource && !(self.feed.feed_distance > 0.0) {
            return fail(format!(
                "point-source feed distance must be positive, got {}",
                self.feed.feed_distance
            ));
        }
        if !(self.feed.power > 0.0) {
            return fail(format!("feed power must be positive, got {}", self.feed.power));
        }
        let th = &self.thresholds;
        for (name, v) in [
            ("gain_loss_db", th.gain_loss_db),
            ("lateral_retention", th.lateral_retention),
            ("axial_retention", th.axial_retention),
            ("residual_phase", th.residual_phase),
            ("trunc_phase", th.trunc_phase),
        ] {
            if !(v > 0.0) {
                return fail(format!("threshold {name} must be positive, got {v}"));
            }
        }
        if th.lateral_retention > 1.0 || th.axial_retention > 1.0 {
            return fail("retention thresholds must lie in (0, 1]".into());
        }
        let imp = &self.imperfections;
        if !(imp.transmission_efficiency > 0.0 && imp.transmission_efficiency <= 1.0) {
            return fail(format!(
                "transmission_efficiency must lie in (0, 1], got {}",
                imp.transmission_efficiency
            ));
        }
        if imp.misalignment < 0.0 {
            return fail(format!("misalignment must be nonnegative, got {}", imp.misalignment));
        }
        if let Some(bits) = imp.phase_bits {
            if bits < 1 {
                return fail("phase_bits must be at least 1".into());
            }
        }
        if self.layer_count > 1 {
            let min_gap = self.layer_spacings.iter().cloned().fold(f64::INFINITY, f64::min);
            if imp.spacing_deviation.abs() >= min_gap {
                return fail(format!(
                    "|spacing_deviation| = {} must be below the smallest layer spacing {}",
                    imp.spacing_deviation.abs(),
                    min_gap
                ));
            }
        }
        let cal = &self.calibration;
        for (name, v) in [
            ("xi_lat", cal.xi_lat),
            ("xi_ax", cal.xi_ax),
            ("xi_ax_mis", cal.xi_ax_mis),
            ("chi_lat", cal.chi_lat),
            ("mu", cal.mu),
            ("nu", cal.nu),
            ("gamma_loss", cal.gamma_loss),
            ("gamma_quant", cal.gamma_quant),
            ("gamma_gap", cal.gamma_gap),
            ("c_lat", cal.c_lat),
            ("c_ax", cal.c_ax),
            ("beta", cal.beta),
            ("xi_ax2", cal.xi_ax2),
            ("xi_ax4", cal.xi_ax4),
        ] {
            if v < 0.0 {
                return fail(format!("calibration coefficient {name} must be nonnegative, got {v}"));
            }
        }
        for (l, v) in &cal.eta_aper0 {
            if !(*v > 0.0 && *v <= 1.0) {
                return fail(format!("eta_aper0[{l}] must lie in (0, 1], got {v}"));
            }
        }
        let sw = &self.sweep;
        if !(sw.r_min_frac > 0.0 && sw.r_min_frac < sw.r_max_frac && sw.r_max_frac <= 1.0) {
            return fail(format!(
                "sweep fractions must satisfy 0 < r_min_frac < r_max_frac <= 1, got [{}, {}]",
                sw.r_min_frac, sw.r_max_frac
            ));
        }
        if sw.num_points < 8 {
            return fail(format!("sweep num_points must be at least 8, got {}", sw.num_points));
        }
        Ok(())
    }

    /// Parse and validate a scenario file.
    pub fn from_file(path: &Path) -> Result<SystemConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Scenario(format!("{}: {e}", path.display())))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::Scenario(format!("{}: {e}", path.display())))?;
        SystemConfig::from_json_value(value)
    }

    /// Build a configuration from an already-parsed scenario document.
    pub fn from_json_value(value: serde_json::Value) -> Result<SystemConfig> {
        let file: ScenarioFile =
            serde_json::from_value(value).map_err(|e| Error::Scenario(e.to_string()))?;
        file.into_config()
    }
}

// Strict serde mirror of the scenario document. Structural defaults live
// here; physical validation happens once in `SystemConfig::validate`.

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    physics: PhysicsBlock,
    layers: LayersBlock,
    feed: FeedBlock,
    thresholds: ThresholdsBlock,
    imperfections: ImperfectionsBlock,
    calibration: CalibrationCoefficients,
    sweep: SweepBlock,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PhysicsBlock {
    #[serde(default)]
    wavelength: Option<f64>,
    #[serde(default)]
    frequency_hz: Option<f64>,
    aperture_diameter: f64,
    #[serde(default)]
    element_pitch: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LayersBlock {
    count: usize,
    #[serde(default)]
    spacing: Option<f64>,
    #[serde(default)]
    spacings: Option<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FeedBlock {
    kind: FeedKind,
    #[serde(default)]
    distance: Option<f64>,
    #[serde(default)]
    power: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ThresholdsBlock {
    #[serde(default)]
    gain_loss_db: Option<f64>,
    #[serde(default)]
    lateral_retention: Option<f64>,
    #[serde(default)]
    axial_retention: Option<f64>,
    #[serde(default)]
    residual_phase: Option<f64>,
    #[serde(default)]
    trunc_phase: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ImperfectionsBlock {
    #[serde(default)]
    misalignment: Option<f64>,
    #[serde(default)]
    transmission_efficiency: Option<f64>,
    #[serde(default)]
    phase_bits: Option<u32>,
    #[serde(default)]
    spacing_deviation: Option<f64>,
    #[serde(default)]
    rng_seed: Option<u64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepBlock {
    #[serde(default)]
    r_min_frac: Option<f64>,
    #[serde(default)]
    r_max_frac: Option<f64>,
    #[serde(default)]
    num_points: Option<usize>,
    #[serde(default)]
    spacing: Option<SweepSpacing>,
}

impl ScenarioFile {
    fn into_config(self) -> Result<SystemConfig> {
        let wavelength = match (self.physics.wavelength, self.physics.frequency_hz) {
            (Some(w), None) => w,
            (None, Some(f)) => {
                if !(f > 0.0) {
                    return Err(Error::Scenario(format!(
                        "physics.frequency_hz must be positive, got {f}"
                    )));
                }
                SPEED_OF_LIGHT / f
            }
            (Some(_), Some(_)) => {
                return Err(Error::Scenario(
                    "physics: give either wavelength or frequency_hz, not both".into(),
                ))
            }
            (None, None) => {
                return Err(Error::Scenario(
                    "physics: one of wavelength or frequency_hz is required".into(),
                ))
            }
        };
        let aperture_diameter = self.physics.aperture_diameter;
        let element_pitch = self.physics.element_pitch.unwrap_or(wavelength / 2.0);

        let layer_count = self.layers.count;
        let layer_spacings = match (self.layers.spacing, self.layers.spacings) {
            (Some(_), Some(_)) => {
                return Err(Error::Scenario(
                    "layers: give either spacing or spacings, not both".into(),
                ))
            }
            (Some(d), None) => vec![d; layer_count.saturating_sub(1)],
            (None, Some(list)) => list,
            (None, None) => vec![5.0 * wavelength; layer_count.saturating_sub(1)],
        };

        let defaults = Thresholds::default();
        let th = self.thresholds;
        let config = SystemConfig {
            wavelength,
            aperture_diameter,
            element_pitch,
            layer_count,
            layer_spacings,
            feed: FeedModel {
                kind: self.feed.kind,
                feed_distance: self.feed.distance.unwrap_or(0.2 * aperture_diameter),
                power: self.feed.power.unwrap_or(1.0),
            },
            thresholds: Thresholds {
                gain_loss_db: th.gain_loss_db.unwrap_or(defaults.gain_loss_db),
                lateral_retention: th.lateral_retention.unwrap_or(defaults.lateral_retention),
                axial_retention: th.axial_retention.unwrap_or(defaults.axial_retention),
                residual_phase: th.residual_phase.unwrap_or(defaults.residual_phase),
                trunc_phase: th.trunc_phase.unwrap_or(defaults.trunc_phase),
            },
            imperfections: ImperfectionParams {
                misalignment: self.imperfections.misalignment.unwrap_or(0.0),
                transmission_efficiency: self
                    .imperfections
                    .transmission_efficiency
                    .unwrap_or(1.0),
                phase_bits: self.imperfections.phase_bits,
                spacing_deviation: self.imperfections.spacing_deviation.unwrap_or(0.0),
                rng_seed: self.imperfections.rng_seed.unwrap_or(0),
            },
            calibration: self.calibration,
            sweep: SweepPlan {
                r_min_frac: self.sweep.r_min_frac.unwrap_or(0.05),
                r_max_frac: self.sweep.r_max_frac.unwrap_or(1.0),
                num_points: self.sweep.num_points.unwrap_or(64),
                spacing: self.sweep.spacing.unwrap_or(SweepSpacing::Geometric),
            },
        };
        config.validate()?;
        Ok(config)
    }
}
