//! Aperture lattice enumeration and feed illumination.
//!
//! Elements sit on a square lattice of the configured pitch, centered on the
//! boresight with nodes at half-integer multiples of the pitch, masked to the
//! circular aperture. Ordering is row-major (by y, then x) and fixed, so
//! operators and seeded perturbations reproduce bit-identically.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use num_complex::Complex64;

use crate::config::{FeedKind, FeedModel, SystemConfig};
use crate::propagation::ComplexField;
use crate::{Error, Result};

/// Opaque identity of a sample grid; fields and operators must agree on it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GridId(pub u64);

static NEXT_GRID_ID: AtomicU64 = AtomicU64::new(1);

impl GridId {
    pub fn fresh() -> GridId {
        GridId(NEXT_GRID_ID.fetch_add(1, Ordering::Relaxed))
    }
}

/// Active element positions of one transverse layer plane.
#[derive(Clone, Debug)]
pub struct ApertureGrid {
    id: GridId,
    pitch: f64,
    diameter: f64,
    positions: Vec<[f64; 2]>,
    lattice: Vec<(i32, i32)>,
    lookup: HashMap<(i32, i32), usize>,
}

impl ApertureGrid {
    pub fn id(&self) -> GridId {
        self.id
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn pitch(&self) -> f64 {
        self.pitch
    }

    /// Mask diameter the lattice was enumerated against.
    pub fn mask_diameter(&self) -> f64 {
        self.diameter
    }

    pub fn positions(&self) -> &[[f64; 2]] {
        &self.positions
    }

    /// Radial coordinate of element `n`.
    pub fn radius(&self, n: usize) -> f64 {
        let [x, y] = self.positions[n];
        x.hypot(y)
    }

    /// Lattice indices (i, j) of element `n`; its center is at
    /// ((i + 1/2) p, (j + 1/2) p).
    pub fn lattice_index(&self, n: usize) -> (i32, i32) {
        self.lattice[n]
    }

    /// Element whose center is nearest to a transverse point, provided the
    /// nearest lattice site or one of its neighbors is active.
    pub fn nearest_element(&self, point: [f64; 2]) -> Option<usize> {
        let i0 = (point[0] / self.pitch - 0.5).round() as i32;
        let j0 = (point[1] / self.pitch - 0.5).round() as i32;
        let mut best: Option<(f64, usize)> = None;
        for dj in -1..=1 {
            for di in -1..=1 {
                if let Some(&n) = self.lookup.get(&(i0 + di, j0 + dj)) {
                    let [x, y] = self.positions[n];
                    let d2 = (x - point[0]).powi(2) + (y - point[1]).powi(2);
                    if best.map_or(true, |(b, _)| d2 < b) {
                        best = Some((d2, n));
                    }
                }
            }
        }
        best.map(|(_, n)| n)
    }

    /// The four lattice cell corners around a transverse point with their
    /// bilinear weights; inactive corners are omitted.
    pub fn cell_corners(&self, point: [f64; 2]) -> Vec<(usize, f64)> {
        let u = point[0] / self.pitch - 0.5;
        let v = point[1] / self.pitch - 0.5;
        let i0 = u.floor() as i32;
        let j0 = v.floor() as i32;
        let fx = u - i0 as f64;
        let fy = v - j0 as f64;
        let mut corners = Vec::with_capacity(4);
        for (di, dj, w) in [
            (0, 0, (1.0 - fx) * (1.0 - fy)),
            (1, 0, fx * (1.0 - fy)),
            (0, 1, (1.0 - fx) * fy),
            (1, 1, fx * fy),
        ] {
            if let Some(&n) = self.lookup.get(&(i0 + di, j0 + dj)) {
                corners.push((n, w));
            }
        }
        corners
    }

    /// 3-D positions of the elements on a plane at axial coordinate `z`.
    pub fn points_at(&self, z: f64) -> Vec<[f64; 3]> {
        self.positions.iter().map(|&[x, y]| [x, y, z]).collect()
    }
}

/// Enumerate the active lattice for a configuration.
///
/// Fails when the circular mask holds no lattice node (pitch too coarse for
/// the aperture).
pub fn build_aperture(config: &SystemConfig) -> Result<ApertureGrid> {
    config.validate()?;
    build_aperture_masked(config.aperture_diameter, config.element_pitch)
}

/// Enumerate a lattice for an explicit mask diameter and pitch (no full
/// scenario required).
pub fn build_aperture_masked(diameter: f64, pitch: f64) -> Result<ApertureGrid> {
    let radius = diameter / 2.0;
    let span = (radius / pitch - 0.5).floor() as i32;
    let mut positions = Vec::new();
    let mut lattice = Vec::new();
    for j in -(span + 1)..=span {
        let y = (j as f64 + 0.5) * pitch;
        for i in -(span + 1)..=span {
            let x = (i as f64 + 0.5) * pitch;
            if x.hypot(y) <= radius {
                positions.push([x, y]);
                lattice.push((i, j));
            }
        }
    }
    if positions.is_empty() {
        return Err(Error::Config(format!(
            "aperture of diameter {diameter} m holds no elements at pitch {pitch} m"
        )));
    }
    let lookup = lattice
        .iter()
        .enumerate()
        .map(|(n, &ij)| (ij, n))
        .collect();
    Ok(ApertureGrid {
        id: GridId::fresh(),
        pitch,
        diameter,
        positions,
        lattice,
        lookup,
    })
}

/// Diameter of the circle with the same active area as the lattice,
/// 2 sqrt(N p^2 / pi).
pub fn equivalent_diameter(grid: &ApertureGrid) -> f64 {
    2.0 * (grid.len() as f64 * grid.pitch * grid.pitch / std::f64::consts::PI).sqrt()
}

/// Illumination incident on the first layer, normalized so the total power
/// equals the configured feed power.
pub fn feed_field(feed: &FeedModel, grid: &ApertureGrid, wavelength: f64) -> ComplexField {
    let k0 = 2.0 * std::f64::consts::PI / wavelength;
    let mut values: Vec<Complex64> = match feed.kind {
        FeedKind::UniformPlane => vec![Complex64::new(1.0, 0.0); grid.len()],
        FeedKind::PointSource => grid
            .positions()
            .iter()
            .map(|&[x, y]| {
                let range = (x * x + y * y + feed.feed_distance * feed.feed_distance).sqrt();
                Complex64::from_polar(1.0 / range, -k0 * range)
            })
            .collect(),
    };
    let total: f64 = values.iter().map(|v| v.norm_sqr()).sum();
    let scale = (feed.power / total).sqrt();
    for v in &mut values {
        *v *= scale;
    }
    ComplexField::new(grid.id(), values)
}
