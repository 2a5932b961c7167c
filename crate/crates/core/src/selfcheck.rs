//! Built-in property suite behind the `validate` CLI subcommand.
//!
//! Each check pins one structural identity of the numerical core: the
//! impulse response of the discrete Fresnel step, its frequency-domain
//! counterpart, operator cascades against dense products, kernel
//! reciprocity, quantization statistics, the binary operator dump, and the
//! classical distance identities. Tolerances scale with `tolerance_scale`
//! so a tightened run can be forced to fail as a negative control.

use std::path::Path;

use num_complex::Complex64;
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rustfft::FftPlanner;

use crate::aperture::{build_aperture_masked, GridId};
use crate::optimizer::{quantize_phases, LayerStack};
use crate::propagation::{
    fresnel_impulse_response, fresnel_propagate, fresnel_transfer, green_operator, stack_cascade,
    ComplexField, Propagator,
};
use crate::wavefront::{classical_distances, wrap_phase};
use crate::Result;

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn result(name: &'static str, err: f64, tol: f64) -> CheckResult {
    CheckResult {
        name,
        passed: err <= tol,
        detail: format!("max error {err:.3e}, tolerance {tol:.3e}"),
    }
}

/// Discrete impulse propagation against the closed-form paraxial response.
fn check_impulse_response(wavelength: f64, scale: f64) -> CheckResult {
    let p = 2.0e-3;
    let grid = build_aperture_masked(40.0 * p, p).unwrap();
    let n0 = (0..grid.len())
        .min_by(|&a, &b| grid.radius(a).total_cmp(&grid.radius(b)))
        .unwrap();
    let [x0, y0] = grid.positions()[n0];
    let mut max_err = 0.0f64;
    for d in [0.25, 0.5, 1.0] {
        let mut values = vec![Complex64::new(0.0, 0.0); grid.len()];
        values[n0] = Complex64::new(1.0, 0.0);
        let field = ComplexField::new(grid.id(), values);
        let out = fresnel_propagate(&field, &grid, d, wavelength).unwrap();
        for (q, &[x, y]) in grid.positions().iter().enumerate() {
            let rho = ((x - x0).powi(2) + (y - y0).powi(2)).sqrt();
            if rho > 0.2 * d {
                continue;
            }
            let expect = fresnel_impulse_response(x - x0, y - y0, d, wavelength) * p * p;
            let err = (out.values()[q] - expect).norm() / expect.norm();
            max_err = max_err.max(err);
        }
    }
    result("fresnel impulse response", max_err, 1e-9 * scale)
}

/// DFT of the sampled propagation kernel against the closed transfer
/// function on a 128x128 grid under the exact self-Fourier condition
/// lambda d = N p^2 (the sampled chirp is then alias-free and periodic,
/// which is what makes a 1e-6 comparison meaningful at all).
fn check_transfer_dft(wavelength: f64, scale: f64) -> CheckResult {
    let n = 128usize;
    let p = 2.0e-3;
    let d = n as f64 * p * p / wavelength;
    let pref = fresnel_impulse_response(0.0, 0.0, d, wavelength);
    let chirp = std::f64::consts::PI / (wavelength * d);

    let mut data: Vec<Complex64> = Vec::with_capacity(n * n);
    for j in 0..n {
        let y = j as f64 * p;
        for i in 0..n {
            let x = i as f64 * p;
            // kernel(x, y) * p^2, with kernel = pref * e^{-j chirp rho^2}.
            data.push(
                pref * Complex64::from_polar(1.0, -chirp * (x * x + y * y) + chirp * 0.0)
                    * p
                    * p,
            );
        }
    }

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n);
    // Rows.
    for row in data.chunks_exact_mut(n) {
        fft.process(row);
    }
    // Columns.
    let mut col = vec![Complex64::new(0.0, 0.0); n];
    for c in 0..n {
        for r in 0..n {
            col[r] = data[r * n + c];
        }
        fft.process(&mut col);
        for r in 0..n {
            data[r * n + c] = col[r];
        }
    }

    let mut max_err = 0.0f64;
    for k in 0..n {
        for l in 0..n {
            let h = fresnel_transfer(
                k as f64 / (n as f64 * p),
                l as f64 / (n as f64 * p),
                d,
                wavelength,
            );
            let err = (data[l * n + k] - h).norm() / h.norm();
            max_err = max_err.max(err);
        }
    }
    result("fresnel transfer dft", max_err, 1e-6 * scale)
}

/// Stack cascade against an explicit dense matrix product.
fn check_cascade_oracle(wavelength: f64, scale: f64) -> CheckResult {
    let p = wavelength / 2.0;
    let grid = build_aperture_masked(4.2 * p, p).unwrap();
    let n = grid.len();
    let mut rng = ChaCha12Rng::seed_from_u64(42);
    let layer_count = 3;
    let spacings = vec![5.0 * wavelength; layer_count - 1];
    let phases: Vec<Vec<f64>> = (0..layer_count)
        .map(|_| {
            (0..n)
                .map(|_| (rng.random::<f64>() - 0.5) * std::f64::consts::TAU)
                .collect()
        })
        .collect();
    let stack = LayerStack::from_phases(grid.id(), &phases, spacings.clone()).unwrap();
    let cascade = stack_cascade(&stack, &grid, wavelength).unwrap();

    // Dense oracle assembled independently with nalgebra products.
    let mut oracle = nalgebra::DMatrix::<Complex64>::identity(n, n);
    for (l, layer) in phases.iter().enumerate() {
        let diag = nalgebra::DMatrix::<Complex64>::from_fn(n, n, |r, c| {
            if r == c {
                Complex64::from_polar(1.0, layer[r])
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        oracle = diag * oracle;
        if l + 1 < layer_count {
            let gap =
                crate::propagation::green_between_layers(&grid, spacings[l], wavelength).unwrap();
            let (rows, cols, e) = gap.to_dense().unwrap();
            let g = nalgebra::DMatrix::<Complex64>::from_fn(rows, cols, |r, c| e[r * cols + c]);
            oracle = g * oracle;
        }
    }

    let x: Vec<Complex64> = (0..n)
        .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
        .collect();
    let out = cascade
        .apply(&ComplexField::new(grid.id(), x.clone()))
        .unwrap();
    let xv = nalgebra::DVector::from_vec(x);
    let expect = &oracle * xv;
    let mut max_err = 0.0f64;
    for (a, b) in out.values().iter().zip(expect.iter()) {
        max_err = max_err.max((a - b).norm() / b.norm().max(1e-30));
    }
    result("cascade dense oracle", max_err, 1e-12 * scale)
}

/// Kernel reciprocity: swapping source and destination transposes the
/// matrix bit-exactly.
fn check_reciprocity(wavelength: f64, _scale: f64) -> CheckResult {
    let mut rng = ChaCha12Rng::seed_from_u64(7);
    let a_pts: Vec<[f64; 3]> = (0..10)
        .map(|_| [rng.random::<f64>() * 0.1, rng.random::<f64>() * 0.1, 0.0])
        .collect();
    let b_pts: Vec<[f64; 3]> = (0..8)
        .map(|_| [rng.random::<f64>() * 0.1, rng.random::<f64>() * 0.1, 0.3])
        .collect();
    let fwd = green_operator(GridId::fresh(), a_pts.clone(), GridId::fresh(), b_pts.clone(), wavelength).unwrap();
    let rev = green_operator(GridId::fresh(), b_pts, GridId::fresh(), a_pts, wavelength).unwrap();
    let (rows, cols, f) = fwd.to_dense().unwrap();
    let (_, _, r) = rev.to_dense().unwrap();
    let exact = (0..rows).all(|q| (0..cols).all(|n| f[q * cols + n] == r[n * rows + q]));
    CheckResult {
        name: "green reciprocity",
        passed: exact,
        detail: if exact {
            "transpose matches bit-exactly".into()
        } else {
            "transpose mismatch".into()
        },
    }
}

/// |H| = 1 for the frequency response (pure phase up to rounding).
fn check_transfer_unimodular(wavelength: f64, scale: f64) -> CheckResult {
    let mut max_err = 0.0f64;
    for i in 0..200 {
        let f = -400.0 + 4.0 * i as f64;
        let h = fresnel_transfer(f, 0.37 * f, 0.8, wavelength);
        max_err = max_err.max((h.norm() - 1.0).abs());
    }
    result("transfer unimodularity", max_err, 4.0 * f64::EPSILON * scale)
}

/// Quantization residual statistics over uniform phases.
fn check_quantization_stats(_wavelength: f64, scale: f64) -> CheckResult {
    let p = 1.0e-3;
    let grid = build_aperture_masked(80.0 * p, p).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(1234);
    let phases: Vec<f64> = (0..grid.len())
        .map(|_| (rng.random::<f64>() - 0.5) * 2.0 * std::f64::consts::PI)
        .collect();
    let stack = LayerStack::from_phases(grid.id(), &[phases.clone()], vec![]).unwrap();
    let bits = 3u32;
    let q = quantize_phases(&stack, bits).unwrap();
    let step = 2.0 * std::f64::consts::PI / 2f64.powi(bits as i32);
    let rms = (q.phases(0)
        .iter()
        .zip(&phases)
        .map(|(&qp, &p0)| wrap_phase(qp - p0).powi(2))
        .sum::<f64>()
        / grid.len() as f64)
        .sqrt();
    let expect = step / 12f64.sqrt();
    result(
        "quantization wrms",
        (rms - expect).abs() / expect,
        0.15 * scale,
    )
}

/// Binary dump write/read round trip; `corrupt` flips a payload byte to
/// exercise the failure path.
fn check_dump_round_trip(wavelength: f64, dir: &Path, corrupt: bool) -> Result<CheckResult> {
    let mut rng = ChaCha12Rng::seed_from_u64(3);
    let src = GridId::fresh();
    let dst = GridId::fresh();
    let pts_a: Vec<[f64; 3]> = (0..5)
        .map(|_| [rng.random::<f64>() * 0.1, rng.random::<f64>() * 0.1, 0.0])
        .collect();
    let pts_b: Vec<[f64; 3]> = (0..5)
        .map(|_| [rng.random::<f64>() * 0.1, rng.random::<f64>() * 0.1, 0.2])
        .collect();
    let op = green_operator(src, pts_a, dst, pts_b, wavelength).unwrap();
    std::fs::create_dir_all(dir)?;
    let path = dir.join("selfcheck-operator.bin");
    op.write_dump(&path)?;
    if corrupt {
        let mut bytes = std::fs::read(&path)?;
        let last = bytes.len() - 1;
        bytes[last] ^= 0x01;
        std::fs::write(&path, &bytes)?;
    }
    let passed = match Propagator::read_dump(&path, src, dst) {
        Ok(back) => {
            let (_, _, a) = op.to_dense().unwrap();
            let (_, _, b) = back.to_dense().unwrap();
            a == b
        }
        Err(_) => false,
    };
    std::fs::remove_file(&path).ok();
    Ok(CheckResult {
        name: "operator dump round trip",
        passed,
        detail: if corrupt {
            "corruption injected".into()
        } else if passed {
            "bit-exact".into()
        } else {
            "mismatch after read".into()
        },
    })
}

/// Algebraic inverses of the classical distance formulas.
fn check_classical_identities(wavelength: f64, scale: f64) -> CheckResult {
    let phi = std::f64::consts::PI / 8.0;
    let cd = classical_distances(0.3, wavelength, phi);
    let e1 = (cd.delta_phi_max(cd.r_ray) - phi).abs() / phi;
    let e2 = (cd.delta_phi_trunc(cd.r_low) - phi).abs() / phi;
    result("classical distance identities", e1.max(e2), 1e-12 * scale)
}

/// Run the full suite. `tolerance_scale` multiplies every tolerance;
/// `corrupt_dump` deliberately corrupts the dump check.
pub fn run_all(
    wavelength: f64,
    tolerance_scale: f64,
    corrupt_dump: bool,
    workdir: &Path,
) -> Result<Vec<CheckResult>> {
    Ok(vec![
        check_impulse_response(wavelength, tolerance_scale),
        check_transfer_dft(wavelength, tolerance_scale),
        check_cascade_oracle(wavelength, tolerance_scale),
        check_reciprocity(wavelength, tolerance_scale),
        check_transfer_unimodular(wavelength, tolerance_scale),
        check_quantization_stats(wavelength, tolerance_scale),
        check_dump_round_trip(wavelength, workdir, corrupt_dump)?,
        check_classical_identities(wavelength, tolerance_scale),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_at_default_tolerances() {
        let dir = std::env::temp_dir().join("nearfield-selfcheck-test");
        let results = run_all(0.010714, 1.0, false, &dir).unwrap();
        for check in &results {
            assert!(check.passed, "{}: {}", check.name, check.detail);
        }
    }

    #[test]
    fn corrupted_dump_fails() {
        let dir = std::env::temp_dir().join("nearfield-selfcheck-test");
        let results = run_all(0.010714, 1.0, true, &dir).unwrap();
        let dump = results
            .iter()
            .find(|c| c.name == "operator dump round trip")
            .unwrap();
        assert!(!dump.passed);
    }

    #[test]
    fn zero_tolerance_fails() {
        let dir = std::env::temp_dir().join("nearfield-selfcheck-test");
        let results = run_all(0.010714, 0.0, false, &dir).unwrap();
        assert!(results.iter().any(|c| !c.passed));
    }
}
