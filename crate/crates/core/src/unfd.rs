//! Distance sweeps, per-criterion usable boundaries, and the combined
//! usable near-field distance per layer count.
//!
//! Boundary semantics follow a prefix rule: the usable range ends at the
//! first swept distance where a criterion fails, with the crossing located
//! by linear interpolation on the monitored quantity. Non-measurable
//! samples (no PSF half-max crossing) count as violations of the
//! corresponding retention criterion.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aperture::{build_aperture, equivalent_diameter, feed_field, ApertureGrid};
use crate::config::{SystemConfig, Thresholds};
use crate::metrics::{
    coherence, correction_factors, diffraction_limits, fwhm, gain_loss_db,
    model_resolutions, retention, FocusReport,
};
use crate::optimizer::{
    inject_imperfections, optimize_on_grid, LayerStack, OptimizerSettings,
};
use crate::propagation::{stack_cascade, ComplexField};
use crate::wavefront::{
    curvature_diagnostics, fit_phase_polynomial, focusing_profile, max_residual_phase,
    residual_phase, wrms,
};
use crate::{Error, Result};

/// Distance sweep specification, in fractions of the Rayleigh distance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepPlan {
    pub r_min_frac: f64,
    pub r_max_frac: f64,
    pub num_points: usize,
    pub spacing: SweepSpacing,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepSpacing {
    Linear,
    Geometric,
}

impl Default for SweepPlan {
    fn default() -> Self {
        SweepPlan {
            r_min_frac: 0.05,
            r_max_frac: 1.0,
            num_points: 64,
            spacing: SweepSpacing::Geometric,
        }
    }
}

impl SweepPlan {
    /// Swept distances for a given Rayleigh distance, strictly increasing
    /// with exact endpoints.
    pub fn distances(&self, r_ray: f64) -> Vec<f64> {
        let lo = self.r_min_frac * r_ray;
        let hi = self.r_max_frac * r_ray;
        let n = self.num_points;
        (0..n)
            .map(|i| {
                if i == 0 {
                    return lo;
                }
                if i == n - 1 {
                    return hi;
                }
                let t = i as f64 / (n - 1) as f64;
                match self.spacing {
                    SweepSpacing::Linear => lo + t * (hi - lo),
                    SweepSpacing::Geometric => lo * (hi / lo).powf(t),
                }
            })
            .collect()
    }
}

/// The four boundary criteria plus the no-violation outcome.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BindingCriterion {
    Gain,
    Lateral,
    Axial,
    Phase,
    NoneViolated,
}

/// A single monitored criterion.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Criterion {
    Gain,
    Lateral,
    Axial,
    Phase,
}

impl Criterion {
    pub const ALL: [Criterion; 4] = [
        Criterion::Gain,
        Criterion::Lateral,
        Criterion::Axial,
        Criterion::Phase,
    ];

    fn binding(self) -> BindingCriterion {
        match self {
            Criterion::Gain => BindingCriterion::Gain,
            Criterion::Lateral => BindingCriterion::Lateral,
            Criterion::Axial => BindingCriterion::Axial,
            Criterion::Phase => BindingCriterion::Phase,
        }
    }

    /// Monitored quantity; NaN marks a non-measurable sample.
    fn monitored(self, report: &FocusReport) -> f64 {
        match self {
            Criterion::Gain => report.gain_loss_db,
            Criterion::Lateral => report.retention_lat.unwrap_or(f64::NAN),
            Criterion::Axial => report.retention_ax.unwrap_or(f64::NAN),
            Criterion::Phase => report.max_residual_phase,
        }
    }

    fn threshold(self, th: &Thresholds) -> f64 {
        match self {
            Criterion::Gain => th.gain_loss_db,
            Criterion::Lateral => th.lateral_retention,
            Criterion::Axial => th.axial_retention,
            Criterion::Phase => th.residual_phase,
        }
    }

    /// True when the criterion holds at this sample.
    pub fn satisfied(self, report: &FocusReport, th: &Thresholds) -> bool {
        let v = self.monitored(report);
        match self {
            Criterion::Gain | Criterion::Phase => v <= self.threshold(th),
            Criterion::Lateral | Criterion::Axial => v >= self.threshold(th),
        }
    }
}

/// Criteria violated at a single swept distance.
pub fn violated_criteria(report: &FocusReport, th: &Thresholds) -> Vec<Criterion> {
    Criterion::ALL
        .into_iter()
        .filter(|c| !c.satisfied(report, th))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryStatus {
    /// The criterion crosses its threshold inside the sweep.
    Crossed,
    /// Satisfied at every swept point; the boundary is the sweep end.
    NeverViolated,
    /// Violated already at the first swept point.
    BelowRange,
}

#[derive(Clone, Copy, Debug)]
pub struct BoundaryResult {
    pub r: f64,
    pub status: BoundaryStatus,
}

/// Largest prefix distance over which a criterion holds, with the crossing
/// interpolated on the monitored quantity between the last satisfying and
/// first violating sample. A non-finite monitored value at the violation
/// falls back to the last satisfying distance.
pub fn criterion_boundary(
    reports: &[FocusReport],
    criterion: Criterion,
    thresholds: &Thresholds,
) -> Result<BoundaryResult> {
    if reports.is_empty() {
        return Err(Error::Empty("focus reports"));
    }
    let first_violation = reports
        .iter()
        .position(|rep| !criterion.satisfied(rep, thresholds));
    match first_violation {
        None => Ok(BoundaryResult {
            r: reports.last().unwrap().r,
            status: BoundaryStatus::NeverViolated,
        }),
        Some(0) => Ok(BoundaryResult {
            r: reports[0].r,
            status: BoundaryStatus::BelowRange,
        }),
        Some(i) => {
            let prev = &reports[i - 1];
            let cur = &reports[i];
            let threshold = criterion.threshold(thresholds);
            let v_prev = criterion.monitored(prev);
            let v_cur = criterion.monitored(cur);
            let r = if v_cur.is_finite() && v_prev.is_finite() && v_cur != v_prev {
                let frac = ((threshold - v_prev) / (v_cur - v_prev)).clamp(0.0, 1.0);
                prev.r + frac * (cur.r - prev.r)
            } else {
                prev.r
            };
            Ok(BoundaryResult {
                r,
                status: BoundaryStatus::Crossed,
            })
        }
    }
}

/// Per-layer-count sweep outcome.
#[derive(Clone, Debug)]
pub struct UnfdReport {
    pub layer_count: usize,
    pub reports: Vec<FocusReport>,
    pub r_gain: BoundaryResult,
    pub r_lat: BoundaryResult,
    pub r_ax: BoundaryResult,
    pub r_phi: BoundaryResult,
    /// Resolution boundary: min of the lateral and axial boundaries.
    pub r_res: f64,
    pub r_unfd: f64,
    pub binding: BindingCriterion,
    pub r_ray: f64,
}

impl UnfdReport {
    pub fn from_reports(
        layer_count: usize,
        reports: Vec<FocusReport>,
        thresholds: &Thresholds,
        r_ray: f64,
    ) -> Result<UnfdReport> {
        let r_gain = criterion_boundary(&reports, Criterion::Gain, thresholds)?;
        let r_lat = criterion_boundary(&reports, Criterion::Lateral, thresholds)?;
        let r_ax = criterion_boundary(&reports, Criterion::Axial, thresholds)?;
        let r_phi = criterion_boundary(&reports, Criterion::Phase, thresholds)?;

        let bounds = [
            (Criterion::Gain, r_gain),
            (Criterion::Lateral, r_lat),
            (Criterion::Axial, r_ax),
            (Criterion::Phase, r_phi),
        ];
        let r_unfd = bounds.iter().map(|(_, b)| b.r).fold(f64::INFINITY, f64::min);
        let binding = if bounds
            .iter()
            .all(|(_, b)| b.status == BoundaryStatus::NeverViolated)
        {
            BindingCriterion::NoneViolated
        } else {
            bounds
                .iter()
                .find(|(_, b)| b.r == r_unfd)
                .map(|(c, _)| c.binding())
                .unwrap()
        };
        Ok(UnfdReport {
            layer_count,
            reports,
            r_gain,
            r_lat,
            r_ax,
            r_phi,
            r_res: r_lat.r.min(r_ax.r),
            r_unfd,
            binding,
            r_ray,
        })
    }

    /// Summary object with the fixed key set used by the sweep output.
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "L": self.layer_count,
            "R_gain": self.r_gain.r,
            "R_res": self.r_res,
            "R_phi": self.r_phi.r,
            "R_unfd": self.r_unfd,
            "binding_criterion": self.binding,
            "R_ray": self.r_ray,
        })
    }
}

/// Evaluate one (layer count, distance) operating point end to end:
/// design the stack, inject imperfections, and measure the report.
pub fn evaluate_at(config: &SystemConfig, layer_count: usize, r: f64) -> Result<FocusReport> {
    let cfg = config.with_layer_count(layer_count);
    let grid = build_aperture(&cfg)?;
    evaluate_at_on_grid(&cfg, &grid, r)
}

/// [`evaluate_at`] with a prebuilt aperture; `config.layer_count` is the
/// evaluated layer count.
pub fn evaluate_at_on_grid(
    config: &SystemConfig,
    grid: &ApertureGrid,
    r: f64,
) -> Result<FocusReport> {
    let r_ray = config.rayleigh_distance();
    if !(r > 0.0 && r <= r_ray) {
        return Err(Error::Config(format!(
            "focal distance {r} outside (0, {r_ray}]"
        )));
    }
    let (stack, _) = optimize_on_grid(config, grid, r, &OptimizerSettings::default())?;
    let stack = inject_imperfections(&stack, &config.imperfections, grid)?;
    evaluate_stack_on_grid(config, grid, &stack, r)
}

/// Measure a given stack (already perturbed, if desired) at distance `r`.
pub fn evaluate_stack_on_grid(
    config: &SystemConfig,
    grid: &ApertureGrid,
    stack: &LayerStack,
    r: f64,
) -> Result<FocusReport> {
    let wavelength = config.wavelength;
    let feed = feed_field(&config.feed, grid, wavelength);
    let cascade = stack_cascade(stack, grid, wavelength)?;
    let out = cascade.apply(&feed)?;

    let reference = focusing_profile(grid, r, wavelength)?;
    let coh = coherence(&out, &reference)?;
    let gain = gain_loss_db(coh);

    let residual = residual_phase(&out, &reference)?;
    let amps = out.amplitudes();
    let wrms_v = wrms(&residual, &amps)?;

    // The wavefront record convention puts the converging sign on the
    // conjugated output.
    let fit = fit_phase_polynomial(&out.conjugated(), grid, 4)?;
    let curvature = curvature_diagnostics(&fit, r, wavelength);
    let (delta_c, delta_a4, phi_max) = match &curvature {
        Ok(diag) => (
            diag.delta_c,
            diag.delta_a4,
            max_residual_phase(diag.delta_c, config.aperture_diameter, wavelength),
        ),
        // A non-converging fitted wavefront has no finite curvature radius;
        // the phase criterion is unconditionally violated there.
        Err(_) => (f64::NAN, f64::NAN, f64::INFINITY),
    };

    let d_ap = equivalent_diameter(grid);
    let dl = diffraction_limits(d_ap, wavelength, r);

    // Diffraction-limited benchmark: same illumination amplitudes, exact
    // focusing phase, same windows and extraction.
    let bench_values: Vec<Complex64> = feed
        .values()
        .iter()
        .zip(reference.values())
        .map(|(f, t)| Complex64::from_polar(f.norm(), t.arg()))
        .collect();
    let bench = ComplexField::new(grid.id(), bench_values);

    let mut cut_pairs =
        crate::metrics::fields_psf_cuts(&[&out, &bench], grid, r, wavelength)?;
    let (lat_ref, ax_ref) = cut_pairs.remove(1);
    let (lat_cut, ax_cut) = cut_pairs.remove(0);
    let fwhm_lat = fwhm(&lat_cut).ok();
    let fwhm_ax = fwhm(&ax_cut).ok();
    let ideal_lat = fwhm(&lat_ref).ok();
    let ideal_ax = fwhm(&ax_ref).ok();
    let retention_lat = match (fwhm_lat, ideal_lat) {
        (Some(m), Some(i)) => Some(retention(m, i)),
        _ => None,
    };
    let retention_ax = match (fwhm_ax, ideal_ax) {
        (Some(m), Some(i)) => Some(retention(m, i)),
        _ => None,
    };

    let factors = correction_factors(
        &config.imperfections,
        &config.calibration,
        config.layer_count,
        config.nominal_spacing(),
        config.element_pitch,
    )?;
    let (model_lat_corr, model_ax_corr) = match curvature {
        Ok(_) => {
            let m = model_resolutions(
                r,
                &fit,
                wrms_v,
                &config.calibration,
                &factors,
                config.aperture_diameter,
                wavelength,
                config.layer_count,
            )?;
            (m.model_lat_corr, m.model_ax_corr)
        }
        Err(_) => (f64::NAN, f64::NAN),
    };

    Ok(FocusReport {
        r,
        coherence: coh,
        gain_loss_db: gain,
        fwhm_lat,
        fwhm_ax,
        dl_lat: dl.dl_lat,
        dl_ax: dl.dl_ax,
        retention_lat,
        retention_ax,
        wrms: wrms_v,
        delta_c,
        delta_a4,
        max_residual_phase: phi_max,
        mode_density: dl.mode_density,
        model_lat_corr,
        model_ax_corr,
    })
}

/// Sweep one layer count over the configured distance range.
pub fn sweep_layer_count(config: &SystemConfig, layer_count: usize) -> Result<UnfdReport> {
    let cfg = config.with_layer_count(layer_count);
    let grid = build_aperture(&cfg)?;
    let r_ray = cfg.rayleigh_distance();
    let distances = cfg.sweep.distances(r_ray);
    let reports: Vec<FocusReport> = distances
        .par_iter()
        .map(|&r| evaluate_at_on_grid(&cfg, &grid, r))
        .collect::<Result<_>>()?;
    UnfdReport::from_reports(layer_count, reports, &cfg.thresholds, r_ray)
}

/// Full sweep for each requested layer count.
pub fn unfd_for_layers(config: &SystemConfig, layer_counts: &[usize]) -> Result<Vec<UnfdReport>> {
    if layer_counts.is_empty() {
        return Err(Error::Empty("layer counts"));
    }
    if let Some(&bad) = layer_counts.iter().find(|&&l| l < 1) {
        return Err(Error::Config(format!("layer count must be >= 1, got {bad}")));
    }
    layer_counts
        .iter()
        .map(|&l| sweep_layer_count(config, l))
        .collect()
}
