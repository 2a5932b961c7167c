//! Discrete free-space propagation operators and their cascades.
//!
//! The radiative scalar kernel G(r, r') = e^{-jk0 |r-r'|} / (4 pi |r-r'|)
//! maps source samples to observation points. Layer-to-layer steps use the
//! same kernel across the inter-layer gap; a paraxial Fresnel engine with a
//! p^2 quadrature weight is available as an alternative and for the
//! frequency-domain property checks. Operators are immutable after
//! construction and `apply` is pure, with a fixed per-row summation order so
//! results are bit-reproducible across thread counts.

use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::aperture::{ApertureGrid, GridId};
use crate::optimizer::LayerStack;
use crate::{Error, Result};

/// Largest entry count stored as an explicit matrix (about 67 MB of
/// complex doubles); larger operators fall back to kernel evaluation.
pub const EXPLICIT_ENTRY_LIMIT: usize = 1 << 22;

/// Rows below this count are applied serially; above it, rows fan out to
/// the rayon pool (each row is still summed in index order).
const PARALLEL_ROW_THRESHOLD: usize = 64;

/// Complex amplitudes sampled on a named grid.
#[derive(Clone, Debug)]
pub struct ComplexField {
    grid: GridId,
    values: Vec<Complex64>,
}

impl ComplexField {
    pub fn new(grid: GridId, values: Vec<Complex64>) -> Self {
        ComplexField { grid, values }
    }

    pub fn grid(&self) -> GridId {
        self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn amplitudes(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    /// Inner product <self, other> = sum self_n * conj(other_n).
    pub fn inner(&self, other: &ComplexField) -> Complex64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b.conj())
            .sum()
    }

    pub fn conjugated(&self) -> ComplexField {
        ComplexField {
            grid: self.grid,
            values: self.values.iter().map(|v| v.conj()).collect(),
        }
    }
}

/// Which principal cut an observation grid samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CutAxis {
    Lateral,
    Axial,
}

/// Observation samples along one principal cut through the focal point.
///
/// Coordinates are meters: lateral offset x for the lateral cut, axial
/// coordinate z (distance from the last layer plane) for the axial cut.
/// The focal point (0, 0, r) is always a sample.
#[derive(Clone, Debug)]
pub struct ObservationGrid {
    id: GridId,
    axis: CutAxis,
    coords: Vec<f64>,
    points: Vec<[f64; 3]>,
}

impl ObservationGrid {
    pub fn id(&self) -> GridId {
        self.id
    }

    pub fn axis(&self) -> CutAxis {
        self.axis
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Transverse cut {(x, 0, r)} with x = i*step for |i*step| <= half_width.
    pub fn lateral_cut(r: f64, half_width: f64, step: f64) -> ObservationGrid {
        let n = (half_width / step + 1e-9).floor() as i64;
        let coords: Vec<f64> = (-n..=n).map(|i| i as f64 * step).collect();
        let points = coords.iter().map(|&x| [x, 0.0, r]).collect();
        ObservationGrid {
            id: GridId::fresh(),
            axis: CutAxis::Lateral,
            coords,
            points,
        }
    }

    /// Boresight cut {(0, 0, z)} with z = r + j*step, clipped below at z_min.
    pub fn axial_cut(r: f64, half_width: f64, step: f64, z_min: f64) -> ObservationGrid {
        let n = (half_width / step + 1e-9).floor() as i64;
        let coords: Vec<f64> = (-n..=n)
            .map(|j| r + j as f64 * step)
            .filter(|&z| z >= z_min && z > 0.0)
            .collect();
        let points = coords.iter().map(|&z| [0.0, 0.0, z]).collect();
        ObservationGrid {
            id: GridId::fresh(),
            axis: CutAxis::Axial,
            coords,
            points,
        }
    }
}

fn green_entry(dst: [f64; 3], src: [f64; 3], k0: f64) -> Complex64 {
    let dx = dst[0] - src[0];
    let dy = dst[1] - src[1];
    let dz = dst[2] - src[2];
    let range = (dx * dx + dy * dy + dz * dz).sqrt();
    Complex64::from_polar(1.0 / (4.0 * std::f64::consts::PI * range), -k0 * range)
}

/// A linear map between two grids: explicit matrix, kernel-evaluated Green
/// map, discretized Fresnel step, per-element layer modulation, a chain of
/// those, or a cheaply clonable shared handle (stacks with uniform gaps
/// reuse one inter-layer matrix).
#[derive(Clone, Debug)]
pub enum Propagator {
    Explicit {
        src: GridId,
        dst: GridId,
        rows: usize,
        cols: usize,
        entries: Vec<Complex64>,
    },
    MatrixFreeGreen {
        src: GridId,
        dst: GridId,
        src_points: Vec<[f64; 3]>,
        dst_points: Vec<[f64; 3]>,
        wavelength: f64,
    },
    Fresnel {
        src: GridId,
        dst: GridId,
        src_positions: Vec<[f64; 2]>,
        dst_positions: Vec<[f64; 2]>,
        distance: f64,
        wavelength: f64,
        quad_weight: f64,
    },
    Diagonal {
        grid: GridId,
        coeffs: Vec<Complex64>,
    },
    Chain {
        src: GridId,
        dst: GridId,
        stages: Vec<Propagator>,
    },
    Shared(std::sync::Arc<Propagator>),
}

impl Propagator {
    pub fn src_grid(&self) -> GridId {
        match self {
            Propagator::Explicit { src, .. }
            | Propagator::MatrixFreeGreen { src, .. }
            | Propagator::Fresnel { src, .. }
            | Propagator::Chain { src, .. } => *src,
            Propagator::Diagonal { grid, .. } => *grid,
            Propagator::Shared(inner) => inner.src_grid(),
        }
    }

    pub fn dst_grid(&self) -> GridId {
        match self {
            Propagator::Explicit { dst, .. }
            | Propagator::MatrixFreeGreen { dst, .. }
            | Propagator::Fresnel { dst, .. }
            | Propagator::Chain { dst, .. } => *dst,
            Propagator::Diagonal { grid, .. } => *grid,
            Propagator::Shared(inner) => inner.dst_grid(),
        }
    }

    pub fn src_len(&self) -> usize {
        match self {
            Propagator::Explicit { cols, .. } => *cols,
            Propagator::MatrixFreeGreen { src_points, .. } => src_points.len(),
            Propagator::Fresnel { src_positions, .. } => src_positions.len(),
            Propagator::Diagonal { coeffs, .. } => coeffs.len(),
            Propagator::Chain { stages, .. } => stages[0].src_len(),
            Propagator::Shared(inner) => inner.src_len(),
        }
    }

    pub fn dst_len(&self) -> usize {
        match self {
            Propagator::Explicit { rows, .. } => *rows,
            Propagator::MatrixFreeGreen { dst_points, .. } => dst_points.len(),
            Propagator::Fresnel { dst_positions, .. } => dst_positions.len(),
            Propagator::Diagonal { coeffs, .. } => coeffs.len(),
            Propagator::Chain { stages, .. } => stages.last().unwrap().dst_len(),
            Propagator::Shared(inner) => inner.dst_len(),
        }
    }

    /// Apply the operator to a field on its source grid.
    pub fn apply(&self, field: &ComplexField) -> Result<ComplexField> {
        if field.grid() != self.src_grid() {
            return Err(Error::GridMismatch {
                field: field.grid().0,
                expected: self.src_grid().0,
            });
        }
        if field.len() != self.src_len() {
            return Err(Error::ShapeMismatch(format!(
                "field has {} samples, operator expects {}",
                field.len(),
                self.src_len()
            )));
        }
        let values = self.apply_values(field.values());
        Ok(ComplexField::new(self.dst_grid(), values))
    }

    fn apply_values(&self, x: &[Complex64]) -> Vec<Complex64> {
        match self {
            Propagator::Explicit { rows, cols, entries, .. } => {
                map_rows(*rows, |q| {
                    let row = &entries[q * cols..(q + 1) * cols];
                    row.iter().zip(x).map(|(a, b)| a * b).sum()
                })
            }
            Propagator::MatrixFreeGreen {
                src_points,
                dst_points,
                wavelength,
                ..
            } => {
                let k0 = 2.0 * std::f64::consts::PI / wavelength;
                map_rows(dst_points.len(), |q| {
                    src_points
                        .iter()
                        .zip(x)
                        .map(|(&s, v)| green_entry(dst_points[q], s, k0) * v)
                        .sum()
                })
            }
            Propagator::Fresnel {
                src_positions,
                dst_positions,
                distance,
                wavelength,
                quad_weight,
                ..
            } => {
                let k0 = 2.0 * std::f64::consts::PI / wavelength;
                let pref = fresnel_prefactor(*distance, *wavelength) * *quad_weight;
                let chirp = k0 / (2.0 * distance);
                map_rows(dst_positions.len(), |q| {
                    let [xq, yq] = dst_positions[q];
                    let sum: Complex64 = src_positions
                        .iter()
                        .zip(x)
                        .map(|(&[xs, ys], v)| {
                            let d2 = (xq - xs).powi(2) + (yq - ys).powi(2);
                            Complex64::from_polar(1.0, -chirp * d2) * v
                        })
                        .sum();
                    pref * sum
                })
            }
            Propagator::Diagonal { coeffs, .. } => {
                coeffs.iter().zip(x).map(|(c, v)| c * v).collect()
            }
            Propagator::Chain { stages, .. } => {
                let mut cur = x.to_vec();
                for stage in stages {
                    cur = stage.apply_values(&cur);
                }
                cur
            }
            Propagator::Shared(inner) => inner.apply_values(x),
        }
    }

    /// Apply the transpose (not conjugated) of the operator.
    pub fn apply_transpose_values(&self, x: &[Complex64]) -> Vec<Complex64> {
        match self {
            Propagator::Explicit { rows, cols, entries, .. } => {
                map_rows(*cols, |n| {
                    (0..*rows).map(|q| entries[q * cols + n] * x[q]).sum()
                })
            }
            Propagator::MatrixFreeGreen {
                src_points,
                dst_points,
                wavelength,
                ..
            } => {
                // The kernel is symmetric under swapping source and
                // destination, so the transpose is the reversed geometry.
                let k0 = 2.0 * std::f64::consts::PI / wavelength;
                map_rows(src_points.len(), |n| {
                    dst_points
                        .iter()
                        .zip(x)
                        .map(|(&d, v)| green_entry(src_points[n], d, k0) * v)
                        .sum()
                })
            }
            Propagator::Fresnel {
                src_positions,
                dst_positions,
                distance,
                wavelength,
                quad_weight,
                ..
            } => {
                let k0 = 2.0 * std::f64::consts::PI / wavelength;
                let pref = fresnel_prefactor(*distance, *wavelength) * *quad_weight;
                let chirp = k0 / (2.0 * distance);
                map_rows(src_positions.len(), |n| {
                    let [xn, yn] = src_positions[n];
                    let sum: Complex64 = dst_positions
                        .iter()
                        .zip(x)
                        .map(|(&[xd, yd], v)| {
                            let d2 = (xd - xn).powi(2) + (yd - yn).powi(2);
                            Complex64::from_polar(1.0, -chirp * d2) * v
                        })
                        .sum();
                    pref * sum
                })
            }
            Propagator::Diagonal { coeffs, .. } => {
                coeffs.iter().zip(x).map(|(c, v)| c * v).collect()
            }
            Propagator::Chain { stages, .. } => {
                let mut cur = x.to_vec();
                for stage in stages.iter().rev() {
                    cur = stage.apply_transpose_values(&cur);
                }
                cur
            }
            Propagator::Shared(inner) => inner.apply_transpose_values(x),
        }
    }

    /// Apply the adjoint (conjugate transpose).
    pub fn apply_adjoint_values(&self, x: &[Complex64]) -> Vec<Complex64> {
        let conj_in: Vec<Complex64> = x.iter().map(|v| v.conj()).collect();
        self.apply_transpose_values(&conj_in)
            .into_iter()
            .map(|v| v.conj())
            .collect()
    }

    /// Materialize the operator as a dense row-major matrix.
    pub fn to_dense(&self) -> Result<(usize, usize, Vec<Complex64>)> {
        let rows = self.dst_len();
        let cols = self.src_len();
        if rows * cols > EXPLICIT_ENTRY_LIMIT {
            return Err(Error::ShapeMismatch(format!(
                "dense form of a {rows}x{cols} operator exceeds the entry limit"
            )));
        }
        if let Propagator::Explicit { entries, .. } = self {
            return Ok((rows, cols, entries.clone()));
        }
        if let Propagator::Shared(inner) = self {
            return inner.to_dense();
        }
        let mut dense = vec![Complex64::new(0.0, 0.0); rows * cols];
        let mut basis = vec![Complex64::new(0.0, 0.0); cols];
        for n in 0..cols {
            basis[n] = Complex64::new(1.0, 0.0);
            let col = self.apply_values(&basis);
            for q in 0..rows {
                dense[q * cols + n] = col[q];
            }
            basis[n] = Complex64::new(0.0, 0.0);
        }
        Ok((rows, cols, dense))
    }

    /// Frobenius norm of the dense form.
    pub fn frobenius_norm(&self) -> Result<f64> {
        let (_, _, dense) = self.to_dense()?;
        Ok(dense.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt())
    }

    /// Write an explicit matrix as a binary dump: 16-byte header
    /// {u32 rows, u32 cols, u64 magic}, then row-major interleaved
    /// re/im little-endian doubles.
    pub fn write_dump(&self, path: &Path) -> Result<()> {
        let (rows, cols, entries) = self.to_dense()?;
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        file.write_all(&(rows as u32).to_le_bytes())?;
        file.write_all(&(cols as u32).to_le_bytes())?;
        file.write_all(&OPERATOR_DUMP_MAGIC.to_le_bytes())?;
        for v in &entries {
            file.write_all(&v.re.to_le_bytes())?;
            file.write_all(&v.im.to_le_bytes())?;
        }
        file.flush()?;
        Ok(())
    }

    /// Read a binary dump written by [`Propagator::write_dump`].
    pub fn read_dump(path: &Path, src: GridId, dst: GridId) -> Result<Propagator> {
        let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut header = [0u8; 16];
        file.read_exact(&mut header)
            .map_err(|_| Error::DumpCorrupt("truncated header".into()))?;
        let rows = u32::from_le_bytes(header[0..4].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
        let magic = u64::from_le_bytes(header[8..16].try_into().unwrap());
        if magic != OPERATOR_DUMP_MAGIC {
            return Err(Error::DumpCorrupt(format!("bad magic {magic:#018x}")));
        }
        let mut payload = Vec::new();
        file.read_to_end(&mut payload)?;
        if payload.len() != rows * cols * 16 {
            return Err(Error::DumpCorrupt(format!(
                "payload holds {} bytes, header implies {}",
                payload.len(),
                rows * cols * 16
            )));
        }
        let entries = payload
            .chunks_exact(16)
            .map(|c| {
                Complex64::new(
                    f64::from_le_bytes(c[0..8].try_into().unwrap()),
                    f64::from_le_bytes(c[8..16].try_into().unwrap()),
                )
            })
            .collect();
        Ok(Propagator::Explicit {
            src,
            dst,
            rows,
            cols,
            entries,
        })
    }
}

pub const OPERATOR_DUMP_MAGIC: u64 = 0x5349_4D4F_5045_5231;

fn map_rows(rows: usize, f: impl Fn(usize) -> Complex64 + Sync + Send) -> Vec<Complex64> {
    if rows >= PARALLEL_ROW_THRESHOLD {
        (0..rows).into_par_iter().map(f).collect()
    } else {
        (0..rows).map(f).collect()
    }
}

/// Green's-function operator between arbitrary 3-D sample sets.
///
/// Stores the explicit matrix when it fits under [`EXPLICIT_ENTRY_LIMIT`],
/// otherwise evaluates the kernel on the fly. Fails on coincident pairs.
pub fn green_operator(
    src: GridId,
    src_points: Vec<[f64; 3]>,
    dst: GridId,
    dst_points: Vec<[f64; 3]>,
    wavelength: f64,
) -> Result<Propagator> {
    for (q, d) in dst_points.iter().enumerate() {
        for (n, s) in src_points.iter().enumerate() {
            if d == s {
                return Err(Error::CoincidentPoints { src: n, dst: q });
            }
        }
    }
    let k0 = 2.0 * std::f64::consts::PI / wavelength;
    if src_points.len() * dst_points.len() <= EXPLICIT_ENTRY_LIMIT {
        let cols = src_points.len();
        let rows = dst_points.len();
        let entries = if rows >= PARALLEL_ROW_THRESHOLD {
            (0..rows)
                .into_par_iter()
                .flat_map_iter(|q| {
                    let dp = dst_points[q];
                    src_points
                        .iter()
                        .map(move |&s| green_entry(dp, s, k0))
                        .collect::<Vec<_>>()
                })
                .collect()
        } else {
            let mut e = Vec::with_capacity(rows * cols);
            for &d in &dst_points {
                for &s in &src_points {
                    e.push(green_entry(d, s, k0));
                }
            }
            e
        };
        Ok(Propagator::Explicit {
            src,
            dst,
            rows,
            cols,
            entries,
        })
    } else {
        Ok(Propagator::MatrixFreeGreen {
            src,
            dst,
            src_points,
            dst_points,
            wavelength,
        })
    }
}

/// Layer-to-layer Green's operator across an axial gap on a shared lattice.
pub fn green_between_layers(
    grid: &ApertureGrid,
    gap: f64,
    wavelength: f64,
) -> Result<Propagator> {
    if !(gap > 0.0) {
        return Err(Error::Config(format!("layer gap must be positive, got {gap}")));
    }
    green_operator(
        grid.id(),
        grid.points_at(0.0),
        GridId::fresh(),
        grid.points_at(gap),
        wavelength,
    )
    .map(|p| match p {
        // Keep the destination on the same lattice identity: the layers
        // share one transverse grid.
        Propagator::Explicit { src, rows, cols, entries, .. } => Propagator::Explicit {
            src,
            dst: grid.id(),
            rows,
            cols,
            entries,
        },
        Propagator::MatrixFreeGreen { src, src_points, dst_points, wavelength, .. } => {
            Propagator::MatrixFreeGreen {
                src,
                dst: grid.id(),
                src_points,
                dst_points,
                wavelength,
            }
        }
        other => other,
    })
}

/// Green's operator from the last layer plane (z = 0) to observation samples.
pub fn green_to_observation(
    grid: &ApertureGrid,
    obs: &ObservationGrid,
    wavelength: f64,
) -> Result<Propagator> {
    green_operator(
        grid.id(),
        grid.points_at(0.0),
        obs.id(),
        obs.points().to_vec(),
        wavelength,
    )
}

fn fresnel_prefactor(distance: f64, wavelength: f64) -> Complex64 {
    // e^{-jk0 d} / (-j lambda d): the exact Fourier partner of the
    // e^{+j pi lambda d f^2} transfer chirp under the e^{-jk0 R} convention.
    Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * distance / wavelength)
        / Complex64::new(0.0, -wavelength * distance)
}

/// Closed-form paraxial impulse response over a gap `d`:
/// (e^{-jk0 d} / (-j lambda d)) e^{-j (k0/2d) rho^2}.
pub fn fresnel_impulse_response(x: f64, y: f64, distance: f64, wavelength: f64) -> Complex64 {
    let k0 = 2.0 * std::f64::consts::PI / wavelength;
    fresnel_prefactor(distance, wavelength)
        * Complex64::from_polar(1.0, -k0 / (2.0 * distance) * (x * x + y * y))
}

/// Paraxial frequency response of a gap `d`:
/// e^{-jk0 d} e^{+j pi lambda d (fx^2 + fy^2)}; unity at d = 0 and pure
/// phase everywhere.
pub fn fresnel_transfer(fx: f64, fy: f64, distance: f64, wavelength: f64) -> Complex64 {
    let k0 = 2.0 * std::f64::consts::PI / wavelength;
    Complex64::from_polar(
        1.0,
        -k0 * distance + std::f64::consts::PI * wavelength * distance * (fx * fx + fy * fy),
    )
}

/// Discretized Fresnel step between parallel planes sharing the lattice.
pub fn fresnel_propagate(
    field: &ComplexField,
    grid: &ApertureGrid,
    distance: f64,
    wavelength: f64,
) -> Result<ComplexField> {
    if !(distance > 0.0) {
        return Err(Error::Config(format!(
            "propagation distance must be positive, got {distance}"
        )));
    }
    let op = Propagator::Fresnel {
        src: grid.id(),
        dst: grid.id(),
        src_positions: grid.positions().to_vec(),
        dst_positions: grid.positions().to_vec(),
        distance,
        wavelength,
        quad_weight: grid.pitch() * grid.pitch(),
    };
    op.apply(field)
}

/// Per-element modulation of one layer as a diagonal operator.
pub fn layer_modulation(grid: GridId, coeffs: Vec<Complex64>) -> Propagator {
    Propagator::Diagonal { grid, coeffs }
}

/// Compose a layer stack with its inter-layer propagators:
/// Gamma_L G_{L-1} ... G_1 Gamma_1 applied left-to-right from the feed side.
pub fn cascade(stack: &LayerStack, interlayer: Vec<Propagator>) -> Result<Propagator> {
    if stack.layer_count() != interlayer.len() + 1 {
        return Err(Error::ShapeMismatch(format!(
            "{} layers need {} inter-layer propagators, got {}",
            stack.layer_count(),
            stack.layer_count() - 1,
            interlayer.len()
        )));
    }
    let grid = stack.grid();
    let mut stages = Vec::with_capacity(2 * stack.layer_count() - 1);
    let mut gaps = interlayer.into_iter();
    for l in 0..stack.layer_count() {
        stages.push(layer_modulation(grid, stack.coefficients(l)));
        if l + 1 < stack.layer_count() {
            let gap = gaps.next().unwrap();
            if gap.src_grid() != grid || gap.dst_grid() != grid {
                return Err(Error::GridMismatch {
                    field: gap.src_grid().0,
                    expected: grid.0,
                });
            }
            stages.push(gap);
        }
    }
    Ok(Propagator::Chain {
        src: grid,
        dst: grid,
        stages,
    })
}

/// Inter-layer propagation engine. The exact kernel is the default;
/// the paraxial step exists as an alternative for large grids and for
/// frequency-domain analysis, and is only faithful when the gap is large
/// against the aperture.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PropagationEngine {
    #[default]
    Green,
    Fresnel,
}

/// Full cascade for a stack on a given aperture using Green inter-layer
/// steps built from the stack's spacings.
pub fn stack_cascade(
    stack: &LayerStack,
    grid: &ApertureGrid,
    wavelength: f64,
) -> Result<Propagator> {
    stack_cascade_with(stack, grid, wavelength, PropagationEngine::Green)
}

/// [`stack_cascade`] with an explicit inter-layer engine. Gaps of equal
/// spacing share a single operator.
pub fn stack_cascade_with(
    stack: &LayerStack,
    grid: &ApertureGrid,
    wavelength: f64,
    engine: PropagationEngine,
) -> Result<Propagator> {
    let shared = shared_gap_operators(stack.spacings(), grid, wavelength, engine)?;
    cascade(stack, shared)
}

/// One propagator per gap, deduplicated by spacing and wrapped in shared
/// handles so uniform stacks hold a single inter-layer matrix.
pub fn shared_gap_operators(
    spacings: &[f64],
    grid: &ApertureGrid,
    wavelength: f64,
    engine: PropagationEngine,
) -> Result<Vec<Propagator>> {
    let mut cache: std::collections::BTreeMap<u64, std::sync::Arc<Propagator>> =
        Default::default();
    let mut gaps = Vec::with_capacity(spacings.len());
    for &d in spacings {
        let key = d.to_bits();
        let op = match cache.get(&key) {
            Some(op) => op.clone(),
            None => {
                let built = match engine {
                    PropagationEngine::Green => green_between_layers(grid, d, wavelength)?,
                    PropagationEngine::Fresnel => {
                        if !(d > 0.0) {
                            return Err(Error::Config(format!(
                                "layer gap must be positive, got {d}"
                            )));
                        }
                        Propagator::Fresnel {
                            src: grid.id(),
                            dst: grid.id(),
                            src_positions: grid.positions().to_vec(),
                            dst_positions: grid.positions().to_vec(),
                            distance: d,
                            wavelength,
                            quad_weight: grid.pitch() * grid.pitch(),
                        }
                    }
                };
                let arc = std::sync::Arc::new(built);
                cache.insert(key, arc.clone());
                arc
            }
        };
        gaps.push(Propagator::Shared(op));
    }
    Ok(gaps)
}

/// End-to-end focusing operator: observation propagation after the stack
/// transformation.
pub fn focusing_operator(
    t_sim: Propagator,
    grid: &ApertureGrid,
    obs: &ObservationGrid,
    wavelength: f64,
) -> Result<Propagator> {
    if t_sim.dst_grid() != grid.id() {
        return Err(Error::GridMismatch {
            field: t_sim.dst_grid().0,
            expected: grid.id().0,
        });
    }
    let h = green_to_observation(grid, obs, wavelength)?;
    Ok(Propagator::Chain {
        src: t_sim.src_grid(),
        dst: obs.id(),
        stages: vec![t_sim, h],
    })
}
