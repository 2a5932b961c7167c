//! Target wavefronts, radial phase polynomials, residual-phase diagnostics
//! and the classical distance formulas.
//!
//! Phase polynomials follow the incoming-wave record convention: the
//! quadratic coefficient of a converging profile is negative (a2 = -k0/2r
//! for an ideal focus). Output aperture fields, which carry the conjugate
//! sign under the e^{-jk0 R} kernel, are conjugated before fitting.

use num_complex::Complex64;

use crate::aperture::ApertureGrid;
use crate::propagation::ComplexField;
use crate::{Error, Result};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Wrap an angle to the principal interval (-pi, pi].
pub fn wrap_phase(phi: f64) -> f64 {
    let mut w = phi.rem_euclid(TWO_PI);
    if w > std::f64::consts::PI {
        w -= TWO_PI;
    }
    w
}

/// Even-order radial phase expansion: phi(rho) ~ sum_m a_{2m} rho^{2m}.
#[derive(Clone, Debug)]
pub struct PhasePolynomial {
    /// Coefficient for rho^{2(m+1)}, m = 0.. (rad / m^{2(m+1)}).
    coeffs: Vec<f64>,
    pub fit_residual_rms: f64,
    pub valid_radius: f64,
}

impl PhasePolynomial {
    pub fn from_coefficients(coeffs: Vec<f64>, valid_radius: f64) -> Self {
        PhasePolynomial {
            coeffs,
            fit_residual_rms: 0.0,
            valid_radius,
        }
    }

    /// Coefficient of rho^order for an even order (2, 4, 6, ...); zero when
    /// the order is not part of the fit.
    pub fn coefficient(&self, order: u32) -> f64 {
        debug_assert!(order >= 2 && order % 2 == 0);
        let m = (order / 2 - 1) as usize;
        self.coeffs.get(m).copied().unwrap_or(0.0)
    }

    pub fn max_order(&self) -> u32 {
        2 * self.coeffs.len() as u32
    }

    /// Evaluate the polynomial (no piston term) at radius rho.
    pub fn evaluate(&self, rho: f64) -> f64 {
        let r2 = rho * rho;
        let mut acc = 0.0;
        let mut pow = r2;
        for c in &self.coeffs {
            acc += c * pow;
            pow *= r2;
        }
        acc
    }
}

/// Ideal unit-power target field with the incoming spherical record phase
/// -k0 (sqrt(rho^2 + r^2) - r) on each element.
pub fn target_field(grid: &ApertureGrid, r: f64, wavelength: f64) -> Result<ComplexField> {
    if !(r > 0.0) {
        return Err(Error::Config(format!("focal distance must be positive, got {r}")));
    }
    let k0 = TWO_PI / wavelength;
    let amp = 1.0 / (grid.len() as f64).sqrt();
    let values = grid
        .positions()
        .iter()
        .map(|&[x, y]| {
            let rho2 = x * x + y * y;
            Complex64::from_polar(amp, -k0 * ((rho2 + r * r).sqrt() - r))
        })
        .collect();
    Ok(ComplexField::new(grid.id(), values))
}

/// Unit-power aperture profile that focuses at (0, 0, r) under the
/// e^{-jk0 R} kernel: the conjugate of [`target_field`].
pub fn focusing_profile(grid: &ApertureGrid, r: f64, wavelength: f64) -> Result<ComplexField> {
    Ok(target_field(grid, r, wavelength)?.conjugated())
}

/// Ideal expansion coefficients of the spherical record phase:
/// a2 = -k0/2r, a4 = +k0/8r^3, a6 = -k0/16r^5.
pub fn ideal_phase_coefficients(r: f64, wavelength: f64, max_order: u32) -> PhasePolynomial {
    assert!(matches!(max_order, 2 | 4 | 6), "max_order must be 2, 4 or 6");
    let k0 = TWO_PI / wavelength;
    let mut coeffs = vec![-k0 / (2.0 * r)];
    if max_order >= 4 {
        coeffs.push(k0 / (8.0 * r.powi(3)));
    }
    if max_order >= 6 {
        coeffs.push(-k0 / (16.0 * r.powi(5)));
    }
    PhasePolynomial::from_coefficients(coeffs, f64::INFINITY)
}

/// Per-element wrapped phase error between two fields on the same grid,
/// with the amplitude-weighted global piston removed before wrapping.
/// Elements with zero amplitude in either field are excluded.
#[derive(Clone, Debug)]
pub struct ResidualPhase {
    pub values: Vec<f64>,
    pub included: Vec<bool>,
}

pub fn residual_phase(actual: &ComplexField, ideal: &ComplexField) -> Result<ResidualPhase> {
    if actual.grid() != ideal.grid() || actual.len() != ideal.len() {
        return Err(Error::GridMismatch {
            field: actual.grid().0,
            expected: ideal.grid().0,
        });
    }
    // The amplitude-weighted mean phase difference is the argument of the
    // inner product; removing it aligns the fields globally.
    let piston = actual.inner(ideal);
    let piston_arg = if piston.norm_sqr() > 0.0 { piston.arg() } else { 0.0 };
    let mut values = Vec::with_capacity(actual.len());
    let mut included = Vec::with_capacity(actual.len());
    for (a, i) in actual.values().iter().zip(ideal.values()) {
        if a.norm_sqr() == 0.0 || i.norm_sqr() == 0.0 {
            values.push(0.0);
            included.push(false);
        } else {
            values.push(wrap_phase((a * i.conj()).arg() - piston_arg));
            included.push(true);
        }
    }
    Ok(ResidualPhase { values, included })
}

/// Amplitude^2-weighted RMS of the residual phase over included elements.
pub fn wrms(residual: &ResidualPhase, amplitude: &[f64]) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for ((v, inc), a) in residual
        .values
        .iter()
        .zip(&residual.included)
        .zip(amplitude)
    {
        if *inc && *a > 0.0 {
            let w = a * a;
            num += w * v * v;
            den += w;
        }
    }
    if den == 0.0 {
        return Err(Error::Empty("residual phase (all elements excluded)"));
    }
    Ok((num / den).sqrt())
}

/// Least-squares fit of the unwrapped aperture phase against even radial
/// powers, amplitude^2-weighted.
///
/// Unwrapping runs radially: elements are grouped into radial shells, each
/// shell gets a circular-mean phase, the shell sequence is unwrapped
/// outward from the center, and every element is re-anchored to its shell
/// within half a turn.
pub fn fit_phase_polynomial(
    field: &ComplexField,
    grid: &ApertureGrid,
    max_order: u32,
) -> Result<PhasePolynomial> {
    assert!(max_order >= 2 && max_order % 2 == 0, "max_order must be even");
    let terms = (max_order / 2) as usize;

    // Radial shells at half-pitch granularity group the lattice radii.
    let shell_width = grid.pitch() / 2.0;
    let mut shells: std::collections::BTreeMap<i64, Vec<usize>> = Default::default();
    let mut radii_set: std::collections::BTreeSet<i64> = Default::default();
    for n in 0..grid.len() {
        if field.values()[n].norm_sqr() == 0.0 {
            continue;
        }
        let key = (grid.radius(n) / shell_width).round() as i64;
        shells.entry(key).or_default().push(n);
        radii_set.insert(key);
    }
    if radii_set.len() < terms + 1 {
        return Err(Error::RankDeficientFit {
            radii: radii_set.len(),
            order: max_order as usize,
        });
    }

    // Circular-mean phase per shell, then 1-D unwrap outward.
    let mut shell_phase: Vec<(i64, f64)> = shells
        .iter()
        .map(|(&key, members)| {
            let mean: Complex64 = members
                .iter()
                .map(|&n| {
                    let v = field.values()[n];
                    let w = v.norm_sqr();
                    Complex64::from_polar(w, v.arg())
                })
                .sum();
            (key, mean.arg())
        })
        .collect();
    for i in 1..shell_phase.len() {
        let prev = shell_phase[i - 1].1;
        let raw = shell_phase[i].1;
        shell_phase[i].1 = prev + wrap_phase(raw - prev);
    }
    let shell_unwrapped: std::collections::BTreeMap<i64, f64> =
        shell_phase.into_iter().collect();

    // Element-level unwrapped phase: shell mean plus the wrapped in-shell
    // deviation.
    let mut rows: Vec<(f64, f64, f64)> = Vec::new(); // (rho, phase, weight)
    for (&key, members) in &shells {
        let base = shell_unwrapped[&key];
        for &n in members {
            let v = field.values()[n];
            let phase = base + wrap_phase(v.arg() - base);
            rows.push((grid.radius(n), phase, v.norm_sqr()));
        }
    }

    // Weighted LSQ on {1, rho^2, ..., rho^{2M}}; the constant term absorbs
    // the piston and is discarded. Radii are scaled to the unit disk for
    // conditioning.
    let rho_max = rows.iter().map(|r| r.0).fold(0.0f64, f64::max);
    let cols = terms + 1;
    let mut ata = nalgebra::DMatrix::<f64>::zeros(cols, cols);
    let mut atb = nalgebra::DVector::<f64>::zeros(cols);
    for &(rho, phase, w) in &rows {
        let s = (rho / rho_max).powi(2);
        let mut basis = Vec::with_capacity(cols);
        let mut pow = 1.0;
        for _ in 0..cols {
            basis.push(pow);
            pow *= s;
        }
        for i in 0..cols {
            for j in 0..cols {
                ata[(i, j)] += w * basis[i] * basis[j];
            }
            atb[i] += w * basis[i] * phase;
        }
    }
    let solution = ata
        .clone()
        .lu()
        .solve(&atb)
        .ok_or(Error::RankDeficientFit {
            radii: radii_set.len(),
            order: max_order as usize,
        })?;

    let coeffs: Vec<f64> = (1..cols)
        .map(|m| solution[m] / rho_max.powi(2 * m as i32))
        .collect();
    let poly = PhasePolynomial::from_coefficients(coeffs, rho_max);

    let mut num = 0.0;
    let mut den = 0.0;
    for &(rho, phase, w) in &rows {
        let fitted = solution[0] + poly.evaluate(rho);
        num += w * (phase - fitted).powi(2);
        den += w;
    }
    Ok(PhasePolynomial {
        fit_residual_rms: (num / den).sqrt(),
        ..poly
    })
}

/// Curvature and quartic mismatch of a fitted profile against the ideal
/// focus at distance r.
#[derive(Clone, Copy, Debug)]
pub struct CurvatureDiagnostics {
    /// Equivalent curvature radius implied by the quadratic coefficient (m).
    pub r_eq: f64,
    /// Curvature mismatch 1/R_eq - 1/r (1/m).
    pub delta_c: f64,
    /// Quartic coefficient mismatch |a4 - k0/8r^3| (rad/m^4).
    pub delta_a4: f64,
}

pub fn curvature_diagnostics(
    fit: &PhasePolynomial,
    r: f64,
    wavelength: f64,
) -> Result<CurvatureDiagnostics> {
    let a2 = fit.coefficient(2);
    if a2 >= 0.0 {
        return Err(Error::DivergingWavefront { a2 });
    }
    let k0 = TWO_PI / wavelength;
    let r_eq = -k0 / (2.0 * a2);
    let delta_c = 1.0 / r_eq - 1.0 / r;
    let delta_a4 = (fit.coefficient(4) - k0 / (8.0 * r.powi(3))).abs();
    Ok(CurvatureDiagnostics {
        r_eq,
        delta_c,
        delta_a4,
    })
}

/// Residual phase at the aperture edge implied by a curvature mismatch:
/// (pi D^2 / 4 lambda) |dC|.
pub fn max_residual_phase(delta_c: f64, aperture_diameter: f64, wavelength: f64) -> f64 {
    std::f64::consts::PI * aperture_diameter * aperture_diameter * delta_c.abs()
        / (4.0 * wavelength)
}

/// Classical aperture-distance relations.
#[derive(Clone, Copy, Debug)]
pub struct ClassicalDistances {
    pub aperture_diameter: f64,
    pub wavelength: f64,
    /// Rayleigh distance 2 D^2 / lambda.
    pub r_ray: f64,
    /// Lower validity boundary of the quadratic phase model for the given
    /// truncation tolerance.
    pub r_low: f64,
}

pub fn classical_distances(
    aperture_diameter: f64,
    wavelength: f64,
    trunc_phase: f64,
) -> ClassicalDistances {
    let d = aperture_diameter;
    let r_ray = 2.0 * d * d / wavelength;
    let r_low = (std::f64::consts::PI * d.powi(4) / (64.0 * wavelength * trunc_phase)).cbrt();
    ClassicalDistances {
        aperture_diameter: d,
        wavelength,
        r_ray,
        r_low,
    }
}

impl ClassicalDistances {
    /// Maximum geometric path difference D^2 / 8r.
    pub fn delta_l_max(&self, r: f64) -> f64 {
        self.aperture_diameter * self.aperture_diameter / (8.0 * r)
    }

    /// Maximum edge phase difference pi D^2 / 4 lambda r.
    pub fn delta_phi_max(&self, r: f64) -> f64 {
        std::f64::consts::PI * self.aperture_diameter * self.aperture_diameter
            / (4.0 * self.wavelength * r)
    }

    /// Quartic truncation error pi D^4 / 64 lambda r^3 of the quadratic
    /// phase model.
    pub fn delta_phi_trunc(&self, r: f64) -> f64 {
        std::f64::consts::PI * self.aperture_diameter.powi(4)
            / (64.0 * self.wavelength * r.powi(3))
    }
}

/// Effective propagation distance: geometric path plus the compensation
/// phases converted to length.
pub fn effective_distance(
    path_length: f64,
    layer_phases: &[f64],
    rx_phase: f64,
    wavelength: f64,
) -> f64 {
    let k0 = TWO_PI / wavelength;
    path_length + (layer_phases.iter().sum::<f64>() + rx_phase) / k0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aperture::build_aperture_masked;
    use approx::assert_relative_eq;

    const LAMBDA: f64 = 0.010714;

    fn k0() -> f64 {
        TWO_PI / LAMBDA
    }

    #[test]
    fn target_phase_on_axis_and_at_r() {
        // The phase function itself: zero on axis, -k0 r (sqrt(2) - 1) at
        // rho = r.
        let r = 0.7;
        let phase = |rho: f64| -k0() * ((rho * rho + r * r).sqrt() - r);
        assert_eq!(phase(0.0), 0.0);
        assert_relative_eq!(
            phase(r),
            -k0() * r * (2.0f64.sqrt() - 1.0),
            max_relative = 1e-12
        );
    }

    #[test]
    fn target_paraxial_agreement() {
        // Exact vs quadratic phase at rho = 0.05, r = 1.
        let exact = -k0() * ((1.0f64 + 0.05 * 0.05).sqrt() - 1.0);
        let quad = -k0() * 0.05 * 0.05 / 2.0;
        assert_relative_eq!(exact, -0.7326, max_relative = 1e-3);
        assert!((exact - quad).abs() < 1e-3, "difference {}", exact - quad);
    }

    #[test]
    fn target_field_unit_power() {
        let grid = build_aperture_masked(0.12, LAMBDA / 2.0).unwrap();
        let t = target_field(&grid, 0.5, LAMBDA).unwrap();
        let power: f64 = t.values().iter().map(|v| v.norm_sqr()).sum();
        assert_relative_eq!(power, 1.0, max_relative = 1e-12);
        assert!(target_field(&grid, 0.0, LAMBDA).is_err());
    }

    #[test]
    fn ideal_coefficients_match_formulas() {
        let r = 1.0;
        let poly = ideal_phase_coefficients(r, LAMBDA, 6);
        assert_relative_eq!(poly.coefficient(2), -k0() / 2.0, max_relative = 1e-12);
        assert_relative_eq!(poly.coefficient(2), -293.22, max_relative = 1e-3);
        assert_relative_eq!(poly.coefficient(4), k0() / 8.0, max_relative = 1e-12);
        assert_relative_eq!(poly.coefficient(6), -k0() / 16.0, max_relative = 1e-12);
        // Ratio identity a4/a2 = -1/(4 r^2) for any r.
        for r in [0.3, 1.7, 12.0] {
            let p = ideal_phase_coefficients(r, LAMBDA, 4);
            assert_relative_eq!(
                p.coefficient(4) / p.coefficient(2),
                -1.0 / (4.0 * r * r),
                max_relative = 1e-12
            );
        }
        // Plane-wave limit.
        let far = ideal_phase_coefficients(1.0e12, LAMBDA, 6);
        assert!(far.coefficient(2).abs() < 1e-9);
        assert!(far.coefficient(4).abs() < 1e-9);
    }

    #[test]
    fn truncation_bound_holds_on_radius_sweep() {
        // |exact - 3-term expansion| <= k0 rho^8 / r^7 for rho/r <= 0.3,
        // up to f64 rounding of the exact spherical expression (~k0 r eps).
        let r = 1.0;
        let rounding = 16.0 * f64::EPSILON * k0() * r;
        for i in 1..=30 {
            let rho = 0.01 * i as f64 * r;
            let exact = -k0() * ((rho * rho + r * r).sqrt() - r);
            let poly = ideal_phase_coefficients(r, LAMBDA, 6);
            let approx3 = poly.evaluate(rho);
            let bound = k0() * rho.powi(8) / r.powi(7);
            assert!(
                (exact - approx3).abs() <= bound + rounding,
                "rho/r = {}, err = {}, bound = {}",
                rho / r,
                (exact - approx3).abs(),
                bound
            );
        }
    }

    #[test]
    fn residual_phase_identity_and_piston() {
        let grid = build_aperture_masked(0.06, LAMBDA / 2.0).unwrap();
        let t = target_field(&grid, 0.5, LAMBDA).unwrap();
        let res = residual_phase(&t, &t).unwrap();
        assert!(res.values.iter().all(|v| v.abs() < 1e-12));

        // Constant rotation is removed as piston.
        let rotated = ComplexField::new(
            grid.id(),
            t.values()
                .iter()
                .map(|v| v * Complex64::from_polar(1.0, 1.234))
                .collect(),
        );
        let res = residual_phase(&rotated, &t).unwrap();
        assert!(res.values.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn residual_phase_single_rotated_element() {
        let grid = build_aperture_masked(0.12, LAMBDA / 2.0).unwrap();
        let t = target_field(&grid, 0.5, LAMBDA).unwrap();
        let mut values = t.values().to_vec();
        values[3] *= Complex64::from_polar(1.0, std::f64::consts::FRAC_PI_4);
        let rotated = ComplexField::new(grid.id(), values);
        let res = residual_phase(&rotated, &t).unwrap();
        // Piston absorbs a 1/N share of the rotation; everything else stays
        // near zero.
        let n = grid.len() as f64;
        assert_relative_eq!(
            res.values[3],
            std::f64::consts::FRAC_PI_4 * (1.0 - 1.0 / n),
            max_relative = 1e-2
        );
        for (i, v) in res.values.iter().enumerate() {
            if i != 3 {
                assert!(v.abs() < 0.01, "element {i}: {v}");
            }
        }
    }

    #[test]
    fn residual_phase_excludes_dead_elements() {
        let grid = build_aperture_masked(0.03, LAMBDA / 2.0).unwrap();
        let t = target_field(&grid, 0.5, LAMBDA).unwrap();
        let mut values = t.values().to_vec();
        values[0] = Complex64::new(0.0, 0.0);
        let broken = ComplexField::new(grid.id(), values);
        let res = residual_phase(&broken, &t).unwrap();
        assert!(!res.included[0]);
        assert!(res.included[1]);
    }

    #[test]
    fn wrms_examples() {
        let res = ResidualPhase {
            values: vec![0.3, 0.1],
            included: vec![true, true],
        };
        let got = wrms(&res, &[1.0, 2.0]).unwrap();
        assert_relative_eq!(got, ((0.09 + 4.0 * 0.01) / 5.0f64).sqrt(), max_relative = 1e-12);
        assert_relative_eq!(got, 0.1612, max_relative = 1e-3);

        let sym = ResidualPhase {
            values: vec![0.2, -0.2],
            included: vec![true, true],
        };
        assert_relative_eq!(wrms(&sym, &[1.0, 1.0]).unwrap(), 0.2, max_relative = 1e-12);

        let zeroed = ResidualPhase {
            values: vec![0.0, 0.0],
            included: vec![true, true],
        };
        assert_eq!(wrms(&zeroed, &[1.0, 1.0]).unwrap(), 0.0);

        // Amplitude rescaling leaves the value unchanged.
        assert_relative_eq!(
            wrms(&res, &[3.0, 6.0]).unwrap(),
            wrms(&res, &[1.0, 2.0]).unwrap(),
            max_relative = 1e-12
        );

        let excluded = ResidualPhase {
            values: vec![0.1],
            included: vec![false],
        };
        assert!(wrms(&excluded, &[1.0]).is_err());
    }

    #[test]
    fn fit_recovers_exact_quadratic() {
        let grid = build_aperture_masked(0.12, LAMBDA / 2.0).unwrap();
        let a = -150.0;
        let values: Vec<Complex64> = grid
            .positions()
            .iter()
            .map(|&[x, y]| Complex64::from_polar(1.0, a * (x * x + y * y)))
            .collect();
        let field = ComplexField::new(grid.id(), values);
        let fit = fit_phase_polynomial(&field, &grid, 4).unwrap();
        assert_relative_eq!(fit.coefficient(2), a, max_relative = 1e-10);
        assert!(fit.coefficient(4).abs() < 1e-4 * a.abs());
        assert!(fit.fit_residual_rms < 1e-9);
    }

    #[test]
    fn fit_constant_phase_gives_zero_coefficients() {
        let grid = build_aperture_masked(0.12, LAMBDA / 2.0).unwrap();
        let values = vec![Complex64::from_polar(1.0, 0.77); grid.len()];
        let field = ComplexField::new(grid.id(), values);
        let fit = fit_phase_polynomial(&field, &grid, 4).unwrap();
        assert!(fit.coefficient(2).abs() < 1e-9);
        assert!(fit.coefficient(4).abs() < 1e-6);
    }

    #[test]
    fn fit_recovers_spherical_record_coefficients() {
        // Fit the exact spherical record for D/r = 0.3 and compare against
        // the ideal expansion (order 6 keeps the a4 estimate unbiased by
        // the truncated a6 term).
        let d = 0.12;
        let grid = build_aperture_masked(d, LAMBDA / 2.0).unwrap();
        let r = d / 0.3;
        let t = target_field(&grid, r, LAMBDA).unwrap();
        let fit = fit_phase_polynomial(&t, &grid, 6).unwrap();
        let ideal = ideal_phase_coefficients(r, LAMBDA, 6);
        assert_relative_eq!(fit.coefficient(2), ideal.coefficient(2), max_relative = 0.01);
        assert_relative_eq!(fit.coefficient(4), ideal.coefficient(4), max_relative = 0.01);
    }

    #[test]
    fn fit_unwraps_multiturn_profiles() {
        // Deep-focus profile whose edge phase exceeds two full turns; the
        // oracle runs the same weighted LSQ on the analytically unwrapped
        // phase, so any unwrap slip shows as a coefficient mismatch.
        let d = 0.12;
        let grid = build_aperture_masked(d, LAMBDA / 2.0).unwrap();
        let r = 0.04;
        let t = target_field(&grid, r, LAMBDA).unwrap();
        let edge = k0() * (((d / 2.0) * (d / 2.0) + r * r).sqrt() - r);
        assert!(edge > 2.0 * TWO_PI, "edge phase only {edge}");
        let fit = fit_phase_polynomial(&t, &grid, 6).unwrap();

        // Independent LSQ on the continuous (never wrapped) phase.
        let rho_max = (0..grid.len()).map(|n| grid.radius(n)).fold(0.0, f64::max);
        let cols = 4;
        let mut ata = nalgebra::DMatrix::<f64>::zeros(cols, cols);
        let mut atb = nalgebra::DVector::<f64>::zeros(cols);
        for n in 0..grid.len() {
            let rho = grid.radius(n);
            let phase = -k0() * ((rho * rho + r * r).sqrt() - r);
            let w = t.values()[n].norm_sqr();
            let s = (rho / rho_max).powi(2);
            let basis = [1.0, s, s * s, s * s * s];
            for i in 0..cols {
                for j in 0..cols {
                    ata[(i, j)] += w * basis[i] * basis[j];
                }
                atb[i] += w * basis[i] * phase;
            }
        }
        let sol = ata.lu().solve(&atb).unwrap();
        let a2_oracle = sol[1] / rho_max.powi(2);
        let a4_oracle = sol[2] / rho_max.powi(4);
        assert_relative_eq!(fit.coefficient(2), a2_oracle, max_relative = 1e-9);
        assert_relative_eq!(fit.coefficient(4), a4_oracle, max_relative = 1e-9);
    }

    #[test]
    fn fit_rank_deficiency_is_reported() {
        let p = 1.0e-3;
        let grid = build_aperture_masked(1.5 * p, p).unwrap(); // one shell of 4
        let field = ComplexField::new(
            grid.id(),
            vec![Complex64::new(1.0, 0.0); grid.len()],
        );
        assert!(matches!(
            fit_phase_polynomial(&field, &grid, 4),
            Err(Error::RankDeficientFit { .. })
        ));
    }

    #[test]
    fn curvature_diagnostics_examples() {
        let r = 1.3;
        let ideal = ideal_phase_coefficients(r, LAMBDA, 4);
        let diag = curvature_diagnostics(&ideal, r, LAMBDA).unwrap();
        assert_relative_eq!(diag.r_eq, r, max_relative = 1e-12);
        assert!(diag.delta_c.abs() < 1e-12);
        assert!(diag.delta_a4.abs() < 1e-12);

        // Curvature for a focus 10% long.
        let off = PhasePolynomial::from_coefficients(vec![-k0() / (2.0 * 1.1 * r)], 1.0);
        let diag = curvature_diagnostics(&off, r, LAMBDA).unwrap();
        assert_relative_eq!(diag.delta_c, (1.0 / 1.1 - 1.0) / r, max_relative = 1e-12);

        let diverging = PhasePolynomial::from_coefficients(vec![10.0], 1.0);
        assert!(matches!(
            curvature_diagnostics(&diverging, r, LAMBDA),
            Err(Error::DivergingWavefront { .. })
        ));
    }

    #[test]
    fn max_residual_phase_examples() {
        assert_eq!(max_residual_phase(0.0, 0.3, LAMBDA), 0.0);
        let v = max_residual_phase(0.1, 0.3, LAMBDA);
        assert_relative_eq!(
            v,
            std::f64::consts::PI * 0.09 * 0.1 / (4.0 * LAMBDA),
            max_relative = 1e-12
        );
        assert_relative_eq!(v, 0.6597, max_relative = 1e-3);
        // D^2 scaling.
        assert_relative_eq!(
            max_residual_phase(0.1, 0.6, LAMBDA),
            4.0 * v,
            max_relative = 1e-12
        );
    }

    #[test]
    fn classical_distances_identities() {
        let d = 0.3;
        let phi = std::f64::consts::PI / 8.0;
        let cd = classical_distances(d, LAMBDA, phi);
        assert_relative_eq!(cd.r_ray, 16.80, max_relative = 1e-3);
        assert_relative_eq!(cd.delta_phi_max(cd.r_ray), phi, max_relative = 1e-14);
        assert_relative_eq!(cd.delta_phi_trunc(cd.r_low), phi, max_relative = 1e-14);
        assert_relative_eq!(cd.r_low, 0.4556, max_relative = 3e-4);
        assert_relative_eq!(cd.delta_l_max(1.0), d * d / 8.0, max_relative = 1e-14);
    }

    #[test]
    fn effective_distance_examples() {
        assert_eq!(effective_distance(1.0, &[], 0.0, LAMBDA), 1.0);
        assert_relative_eq!(
            effective_distance(1.0, &[TWO_PI], 0.0, LAMBDA),
            1.0 + LAMBDA,
            max_relative = 1e-12
        );
        let v = effective_distance(
            1.0,
            &[std::f64::consts::PI, std::f64::consts::FRAC_PI_2],
            0.0,
            LAMBDA,
        );
        assert_relative_eq!(v, 1.0 + 0.75 * LAMBDA, max_relative = 1e-12);
        assert_relative_eq!(v, 1.008036, max_relative = 1e-5);
    }
}
