//! Focal-quality measurement: field coherence, gain loss, PSF cuts with
//! FWHM extraction, diffraction baselines, retention factors, and the
//! analytic resolution models with engineering correction factors.

use crate::aperture::{equivalent_diameter, feed_field, ApertureGrid};
use crate::config::{CalibrationCoefficients, ImperfectionParams, SystemConfig};
use crate::optimizer::LayerStack;
use crate::propagation::{
    green_to_observation, stack_cascade, ComplexField, CutAxis, ObservationGrid,
};
use crate::wavefront::{curvature_diagnostics, PhasePolynomial};
use crate::{Error, Result};

/// Normalized field coherence |<a, b>| / (|a| |b|), in [0, 1].
pub fn coherence(g_sim: &ComplexField, g_target: &ComplexField) -> Result<f64> {
    if g_sim.grid() != g_target.grid() || g_sim.len() != g_target.len() {
        return Err(Error::GridMismatch {
            field: g_sim.grid().0,
            expected: g_target.grid().0,
        });
    }
    let na = g_sim.norm();
    let nb = g_target.norm();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm("coherence"));
    }
    Ok((g_sim.inner(g_target).norm() / (na * nb)).min(1.0))
}

/// Focusing gain loss -20 log10(coherence) in dB; infinite for zero
/// coherence so it exceeds any threshold.
pub fn gain_loss_db(coh: f64) -> f64 {
    if coh <= 0.0 {
        f64::INFINITY
    } else {
        (-20.0 * coh.min(1.0).log10()).max(0.0)
    }
}

/// One principal cut of the focal intensity distribution, peak-normalized.
#[derive(Clone, Debug)]
pub struct PsfCut {
    pub axis: CutAxis,
    /// Sample coordinates (m): lateral offset x, or axial coordinate z
    /// measured from the last layer.
    pub coordinates: Vec<f64>,
    /// |field|^2 normalized to a unit peak.
    pub intensity: Vec<f64>,
}

impl PsfCut {
    fn from_field(axis: CutAxis, coordinates: Vec<f64>, field: &ComplexField) -> PsfCut {
        let mut intensity: Vec<f64> = field.values().iter().map(|v| v.norm_sqr()).collect();
        let peak = intensity.iter().cloned().fold(0.0f64, f64::max);
        if peak > 0.0 {
            for v in &mut intensity {
                *v /= peak;
            }
        }
        PsfCut {
            axis,
            coordinates,
            intensity,
        }
    }

    fn axis_name(&self) -> &'static str {
        match self.axis {
            CutAxis::Lateral => "lateral",
            CutAxis::Axial => "axial",
        }
    }
}

/// Full width at half maximum of a peak-normalized cut, with the two
/// crossings nearest the peak located by linear interpolation.
pub fn fwhm(cut: &PsfCut) -> Result<f64> {
    let n = cut.intensity.len();
    if n < 3 {
        return Err(Error::Empty("psf cut"));
    }
    let peak_idx = cut
        .intensity
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    if peak_idx == 0 || peak_idx == n - 1 {
        return Err(Error::PeakNotInterior {
            axis: cut.axis_name(),
        });
    }
    let half = 0.5 * cut.intensity[peak_idx];

    let crossing = |from: usize, step: isize, side: &'static str| -> Result<f64> {
        let mut i = from as isize;
        loop {
            let next = i + step;
            if next < 0 || next as usize >= n {
                return Err(Error::NoHalfMaxCrossing {
                    axis: cut.axis_name(),
                    side,
                });
            }
            let a = cut.intensity[i as usize];
            let b = cut.intensity[next as usize];
            if b <= half {
                let xa = cut.coordinates[i as usize];
                let xb = cut.coordinates[next as usize];
                let frac = if a == b { 0.0 } else { (a - half) / (a - b) };
                return Ok(xa + frac * (xb - xa));
            }
            i = next;
        }
    };

    let left = crossing(peak_idx, -1, "lower")?;
    let right = crossing(peak_idx, 1, "upper")?;
    Ok((right - left).abs())
}

/// Diffraction-limited reference widths for an aperture of effective
/// diameter `d_ap` focused at distance `r`.
#[derive(Clone, Copy, Debug)]
pub struct DiffractionLimits {
    /// 0.886 lambda r / D.
    pub dl_lat: f64,
    /// 2 lambda r^2 / D^2.
    pub dl_ax: f64,
    /// Distance-domain modal density, fixed to 1 / dl_ax (the scaling law
    /// is a proportionality; the constant here is 1).
    pub mode_density: f64,
}

pub fn diffraction_limits(d_ap: f64, wavelength: f64, r: f64) -> DiffractionLimits {
    let dl_lat = 0.886 * wavelength * r / d_ap;
    let dl_ax = 2.0 * wavelength * r * r / (d_ap * d_ap);
    DiffractionLimits {
        dl_lat,
        dl_ax,
        mode_density: 1.0 / dl_ax,
    }
}

/// Resolution retention: ideal width over measured width.
pub fn retention(measured: f64, ideal: f64) -> f64 {
    ideal / measured
}

/// Multiplicative imperfection corrections for the resolution models.
#[derive(Clone, Copy, Debug)]
pub struct CorrectionFactors {
    pub f_ali_lat: f64,
    pub f_ali_ax: f64,
    pub f_loss: f64,
    pub f_quant: f64,
    pub f_gap: f64,
    /// Product for the lateral channel.
    pub f_lat: f64,
    /// Product for the axial channel.
    pub f_ax: f64,
    /// Misalignment-degraded coherent aperture utilization.
    pub eta_aper: f64,
}

pub fn correction_factors(
    params: &ImperfectionParams,
    coeffs: &CalibrationCoefficients,
    layer_count: usize,
    nominal_spacing: f64,
    pitch: f64,
) -> Result<CorrectionFactors> {
    let lm1 = (layer_count - 1) as f64;
    let s = params.misalignment / pitch;

    let mis_term = coeffs.chi_lat * lm1 * s.powf(coeffs.mu);
    if mis_term >= 1.0 {
        return Err(Error::ApertureCollapse { term: mis_term });
    }
    let eta_aper = coeffs.eta_aper0_for(layer_count) * (1.0 - mis_term);
    let f_ali_lat = 1.0 / (1.0 - mis_term);
    let f_ali_ax = 1.0 + coeffs.xi_ax_mis * lm1 * s.powf(coeffs.nu);

    let f_loss = params.transmission_efficiency.powf(-lm1 / 2.0)
        * (1.0 + coeffs.gamma_loss * lm1);

    let dphi_q = params
        .phase_bits
        .map(|b| 2.0 * std::f64::consts::PI / 2f64.powi(b as i32))
        .unwrap_or(0.0);
    let f_quant = 1.0 + coeffs.gamma_quant * layer_count as f64 * dphi_q * dphi_q;

    let f_gap = if layer_count > 1 && nominal_spacing > 0.0 {
        1.0 + coeffs.gamma_gap
            * layer_count as f64
            * (params.spacing_deviation / nominal_spacing).abs()
    } else {
        1.0
    };

    let f_lat = f_ali_lat * f_loss * f_quant * f_gap;
    let f_ax = f_ali_ax * f_loss * f_quant * f_gap;
    Ok(CorrectionFactors {
        f_ali_lat,
        f_ali_ax,
        f_loss,
        f_quant,
        f_gap,
        f_lat,
        f_ax,
        eta_aper,
    })
}

/// Analytic resolution models evaluated from a fitted wavefront.
///
/// The primary axial model follows the curvature-matching form; the
/// WRMS-squared variant is carried as a cross-check.
#[derive(Clone, Copy, Debug)]
pub struct ModelResolutions {
    pub model_lat: f64,
    pub model_ax: f64,
    /// Cross-check axial model: diffraction width inflated by the squared
    /// weighted RMS phase error.
    pub model_ax_wrms: f64,
    pub model_lat_corr: f64,
    pub model_ax_corr: f64,
    /// Axial model with the quartic-mismatch term for the extreme near
    /// field.
    pub model_ax_high: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn model_resolutions(
    r: f64,
    fit: &PhasePolynomial,
    wrms: f64,
    coeffs: &CalibrationCoefficients,
    factors: &CorrectionFactors,
    aperture_diameter: f64,
    wavelength: f64,
    layer_count: usize,
) -> Result<ModelResolutions> {
    let diag = curvature_diagnostics(fit, r, wavelength)?;
    // Misalignment shrinkage enters through f_ali_lat, so the base model
    // uses the zero-misalignment utilization.
    let d_eff = aperture_diameter * coeffs.eta_aper0_for(layer_count);
    let k0 = 2.0 * std::f64::consts::PI / wavelength;

    let model_lat = coeffs.c_lat * wavelength * r / d_eff * (1.0 + coeffs.xi_lat * wrms);
    let model_ax = coeffs.c_ax * wavelength * diag.r_eq * diag.r_eq / (d_eff * d_eff)
        * (1.0 + coeffs.beta * (diag.delta_c * r).powi(2));
    let model_ax_wrms =
        coeffs.c_ax * wavelength * r * r / (d_eff * d_eff) * (1.0 + coeffs.xi_ax * wrms * wrms);
    let model_ax_high = coeffs.c_ax * wavelength * r * r / (d_eff * d_eff)
        * (1.0
            + coeffs.xi_ax2 * (diag.delta_c * r).powi(2)
            + coeffs.xi_ax4 * (diag.delta_a4 * r.powi(4) / k0).powi(2));
    Ok(ModelResolutions {
        model_lat,
        model_ax,
        model_ax_wrms,
        model_lat_corr: model_lat * factors.f_lat,
        model_ax_corr: model_ax * factors.f_ax,
        model_ax_high,
    })
}

/// Sampling windows for the two principal cuts at focal distance `r`:
/// half-width 4x the diffraction width at a step of 1/16th of it, the
/// axial window clipped below at 0.55 r.
pub fn observation_cuts(
    d_ap: f64,
    wavelength: f64,
    r: f64,
) -> (ObservationGrid, ObservationGrid) {
    let dl = diffraction_limits(d_ap, wavelength, r);
    let lateral = ObservationGrid::lateral_cut(r, 4.0 * dl.dl_lat, dl.dl_lat / 16.0);
    let axial = ObservationGrid::axial_cut(r, 4.0 * dl.dl_ax, dl.dl_ax / 16.0, 0.55 * r);
    (lateral, axial)
}

/// Principal intensity cuts of the field radiated by an aperture field.
///
/// The axial cut reports the defocus response in the plane-to-plane
/// transfer sense: the raw on-axis intensity is compensated by (z/r)^2 so
/// the geometric spherical spreading does not ride on top of the focusing
/// selectivity. Without the compensation the axial width is dominated by
/// the 1/z^2 envelope well before the Rayleigh region ends and the
/// quadratic distance law never shows.
pub fn field_psf_cuts(
    aperture_field: &ComplexField,
    grid: &ApertureGrid,
    r: f64,
    wavelength: f64,
) -> Result<(PsfCut, PsfCut)> {
    Ok(fields_psf_cuts(&[aperture_field], grid, r, wavelength)?.remove(0))
}

/// [`field_psf_cuts`] for several aperture fields sharing one set of
/// observation operators (the benchmark comparison path).
pub fn fields_psf_cuts(
    aperture_fields: &[&ComplexField],
    grid: &ApertureGrid,
    r: f64,
    wavelength: f64,
) -> Result<Vec<(PsfCut, PsfCut)>> {
    let d_ap = equivalent_diameter(grid);
    let (lat_grid, ax_grid) = observation_cuts(d_ap, wavelength, r);
    let h_lat = green_to_observation(grid, &lat_grid, wavelength)?;
    let h_ax = green_to_observation(grid, &ax_grid, wavelength)?;
    aperture_fields
        .iter()
        .map(|field| {
            let lat_field = h_lat.apply(field)?;
            let mut ax_field = h_ax.apply(field)?;
            for (v, &z) in ax_field.values_mut().iter_mut().zip(ax_grid.coords()) {
                *v *= z / r;
            }
            Ok((
                PsfCut::from_field(CutAxis::Lateral, lat_grid.coords().to_vec(), &lat_field),
                PsfCut::from_field(CutAxis::Axial, ax_grid.coords().to_vec(), &ax_field),
            ))
        })
        .collect()
}

/// Principal intensity cuts of a full stack under the configured feed.
pub fn psf_cuts(
    stack: &LayerStack,
    config: &SystemConfig,
    grid: &ApertureGrid,
    r: f64,
) -> Result<(PsfCut, PsfCut)> {
    let feed = feed_field(&config.feed, grid, config.wavelength);
    let cascade = stack_cascade(stack, grid, config.wavelength)?;
    let out = cascade.apply(&feed)?;
    field_psf_cuts(&out, grid, r, config.wavelength)
}

/// Per-distance focal quality record; the CSV row format of the sweep
/// outputs.
#[derive(Clone, Debug)]
pub struct FocusReport {
    pub r: f64,
    pub coherence: f64,
    pub gain_loss_db: f64,
    pub fwhm_lat: Option<f64>,
    pub fwhm_ax: Option<f64>,
    pub dl_lat: f64,
    pub dl_ax: f64,
    pub retention_lat: Option<f64>,
    pub retention_ax: Option<f64>,
    pub wrms: f64,
    pub delta_c: f64,
    pub delta_a4: f64,
    pub max_residual_phase: f64,
    pub mode_density: f64,
    pub model_lat_corr: f64,
    pub model_ax_corr: f64,
}

impl FocusReport {
    pub const CSV_HEADER: &'static str = "r,coherence,gain_loss_db,fwhm_lat,fwhm_ax,dl_lat,dl_ax,retention_lat,retention_ax,wrms,delta_C,delta_a4,max_residual_phase,mode_density,model_lat_corr,model_ax_corr";

    pub fn csv_row(&self) -> String {
        fn num(v: f64) -> String {
            if v.is_nan() {
                "nan".into()
            } else if v.is_infinite() {
                if v > 0.0 { "inf".into() } else { "-inf".into() }
            } else {
                format!("{v}")
            }
        }
        fn opt(v: Option<f64>) -> String {
            v.map(num).unwrap_or_else(|| "nan".into())
        }
        [
            num(self.r),
            num(self.coherence),
            num(self.gain_loss_db),
            opt(self.fwhm_lat),
            opt(self.fwhm_ax),
            num(self.dl_lat),
            num(self.dl_ax),
            opt(self.retention_lat),
            opt(self.retention_ax),
            num(self.wrms),
            num(self.delta_c),
            num(self.delta_a4),
            num(self.max_residual_phase),
            num(self.mode_density),
            num(self.model_lat_corr),
            num(self.model_ax_corr),
        ]
        .join(",")
    }
}
