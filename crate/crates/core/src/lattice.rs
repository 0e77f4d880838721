//! The 3D computational grid and its spectral transforms.
//!
//! The box is periodic with lengths `L_i`, `n_i` points per axis, position
//! spacing `dx_i = L_i / n_i` and momentum spacing `dk_i = 2 pi / L_i`.
//! Momentum amplitudes are normalized so that the mode occupation
//! `n(k) = <psitilde(k) psi(k)>` sums to the total atom number over all bins:
//!
//! ```text
//! a(k)  = sqrt(dV / n_tot) * sum_x psi(x) exp(-i k x)
//! ```
//!
//! which gives the Parseval identity `sum_x |psi(x)|^2 dV = sum_k |a(k)|^2`.
//!
//! FFT ordering follows the usual convention: bin `j` on an axis of `n`
//! points carries the signed integer frequency `j` for `j < n/2` and `j - n`
//! otherwise, so the Nyquist bin is assigned to the negative frequency
//! `-n/2`. This makes the `-k` partner of every bin unambiguous, which the
//! back-to-back pair analysis relies on.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

use crate::error::{Error, Result};

/// Which basis a [`ComplexField`]'s values are stored in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SpaceTag {
    Position,
    Momentum,
}

/// Periodic 3D computational lattice.
///
/// Immutable after construction; shareable across threads.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Lattice3D {
    points: [usize; 3],
    lengths: [f64; 3],
    dx: [f64; 3],
    dk: [f64; 3],
    k_max: [f64; 3],
}

impl Lattice3D {
    /// Build a lattice from points per axis and box lengths in meters.
    ///
    /// Axis sizes must be 1 (degenerate axis, used by few-mode validation
    /// grids) or even; zero and odd sizes > 1 are rejected, as are
    /// non-positive lengths.
    pub fn new(points: [usize; 3], lengths: [f64; 3]) -> Result<Self> {
        for (axis, &n) in points.iter().enumerate() {
            if n == 0 || (n > 1 && n % 2 != 0) {
                return Err(Error::InvalidLattice(format!(
                    "axis {axis} has {n} points; sizes must be 1 or even"
                )));
            }
        }
        for (axis, &l) in lengths.iter().enumerate() {
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::InvalidLattice(format!(
                    "axis {axis} has non-positive length {l}"
                )));
            }
        }
        let mut dx = [0.0; 3];
        let mut dk = [0.0; 3];
        let mut k_max = [0.0; 3];
        for i in 0..3 {
            dx[i] = lengths[i] / points[i] as f64;
            dk[i] = 2.0 * std::f64::consts::PI / lengths[i];
            k_max[i] = points[i] as f64 * dk[i] / 2.0;
        }
        Ok(Self { points, lengths, dx, dk, k_max })
    }

    pub fn points(&self) -> [usize; 3] {
        self.points
    }

    pub fn lengths(&self) -> [f64; 3] {
        self.lengths
    }

    /// Position spacings `dx_i = L_i / n_i`.
    pub fn spacing(&self) -> [f64; 3] {
        self.dx
    }

    /// Momentum spacings `dk_i = 2 pi / L_i`.
    pub fn momentum_spacing(&self) -> [f64; 3] {
        self.dk
    }

    /// Momentum cutoffs `k_i^max = pi / dx_i = n_i dk_i / 2`.
    pub fn momentum_cutoff(&self) -> [f64; 3] {
        self.k_max
    }

    /// Elementary cell volume `dV = dx dy dz`.
    pub fn cell_volume(&self) -> f64 {
        self.dx[0] * self.dx[1] * self.dx[2]
    }

    /// Quantization volume `V = Lx Ly Lz`.
    pub fn box_volume(&self) -> f64 {
        self.lengths[0] * self.lengths[1] * self.lengths[2]
    }

    pub fn num_points(&self) -> usize {
        self.points[0] * self.points[1] * self.points[2]
    }

    #[inline]
    pub fn flat_index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (ix * self.points[1] + iy) * self.points[2] + iz
    }

    #[inline]
    pub fn grid_coords(&self, flat: usize) -> [usize; 3] {
        let nz = self.points[2];
        let ny = self.points[1];
        let iz = flat % nz;
        let iy = (flat / nz) % ny;
        let ix = flat / (nz * ny);
        [ix, iy, iz]
    }

    /// Position of grid point `j` on `axis`, box centered at the origin.
    #[inline]
    pub fn position(&self, axis: usize, j: usize) -> f64 {
        -0.5 * self.lengths[axis] + j as f64 * self.dx[axis]
    }

    /// Signed integer frequency of bin `j` (FFT order, Nyquist negative).
    #[inline]
    pub fn signed_index(&self, axis: usize, j: usize) -> i64 {
        let n = self.points[axis];
        if j < n.div_ceil(2) {
            j as i64
        } else {
            j as i64 - n as i64
        }
    }

    /// Bin index for a signed integer frequency, if representable.
    #[inline]
    pub fn bin_of_signed(&self, axis: usize, s: i64) -> Option<usize> {
        let n = self.points[axis] as i64;
        let lo = -n / 2;
        let hi = (n - 1) / 2;
        if s < lo || s > hi {
            None
        } else if s >= 0 {
            Some(s as usize)
        } else {
            Some((s + n) as usize)
        }
    }

    /// Wavevector component of bin `j` on `axis`.
    #[inline]
    pub fn wavevector_component(&self, axis: usize, j: usize) -> f64 {
        self.signed_index(axis, j) as f64 * self.dk[axis]
    }

    /// Bin holding the physical `-k` partner, or `None` for the Nyquist bin
    /// (whose positive partner is not representable).
    #[inline]
    pub fn negated_bin(&self, axis: usize, j: usize) -> Option<usize> {
        self.bin_of_signed(axis, -self.signed_index(axis, j))
    }

    /// Per-axis table of wavevector components in FFT order.
    pub fn wavevector_table(&self, axis: usize) -> Vec<f64> {
        (0..self.points[axis])
            .map(|j| self.wavevector_component(axis, j))
            .collect()
    }

    /// All wavevectors in FFT (transform) order, one per bin.
    pub fn momentum_grid(&self) -> Vec<[f64; 3]> {
        let [nx, ny, nz] = self.points;
        let mut out = Vec::with_capacity(self.num_points());
        for ix in 0..nx {
            let kx = self.wavevector_component(0, ix);
            for iy in 0..ny {
                let ky = self.wavevector_component(1, iy);
                for iz in 0..nz {
                    out.push([kx, ky, self.wavevector_component(2, iz)]);
                }
            }
        }
        out
    }

    /// Nearest representable bin to wavenumber `k` on `axis`; returns the
    /// signed integer frequency and the on-grid wavenumber.
    pub fn nearest_bin(&self, axis: usize, k: f64) -> (i64, f64) {
        let n = self.points[axis] as i64;
        let mut s = (k / self.dk[axis]).round() as i64;
        s = s.clamp(-n / 2, (n - 1) / 2);
        (s, s as f64 * self.dk[axis])
    }
}

/// A complex scalar field sampled on a [`Lattice3D`], in either basis.
#[derive(Debug, Clone)]
pub struct ComplexField {
    values: Vec<Complex64>,
    shape: [usize; 3],
    space: SpaceTag,
}

impl ComplexField {
    pub fn new(values: Vec<Complex64>, lattice: &Lattice3D, space: SpaceTag) -> Result<Self> {
        if values.len() != lattice.num_points() {
            return Err(Error::ShapeMismatch {
                expected: lattice.points(),
                found: values.len(),
            });
        }
        Ok(Self { values, shape: lattice.points(), space })
    }

    pub fn zeros(lattice: &Lattice3D, space: SpaceTag) -> Self {
        Self {
            values: vec![Complex64::new(0.0, 0.0); lattice.num_points()],
            shape: lattice.points(),
            space,
        }
    }

    pub fn space(&self) -> SpaceTag {
        self.space
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    fn check_lattice(&self, lattice: &Lattice3D) -> Result<()> {
        if self.shape != lattice.points() {
            return Err(Error::ShapeMismatch {
                expected: lattice.points(),
                found: self.values.len(),
            });
        }
        Ok(())
    }
}

/// Planned FFTs plus scratch space for one lattice.
///
/// Transforms are pure functions of the field values; a context holds only
/// plans and per-call scratch, so independent trajectory workers each own one
/// and run concurrently.
pub struct FftContext {
    points: [usize; 3],
    cell_volume: f64,
    forward: [Arc<dyn Fft<f64>>; 3],
    inverse: [Arc<dyn Fft<f64>>; 3],
    line: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl FftContext {
    pub fn new(lattice: &Lattice3D) -> Self {
        let mut planner = FftPlanner::new();
        let [nx, ny, nz] = lattice.points();
        let forward = [
            planner.plan_fft_forward(nx),
            planner.plan_fft_forward(ny),
            planner.plan_fft_forward(nz),
        ];
        let inverse = [
            planner.plan_fft_inverse(nx),
            planner.plan_fft_inverse(ny),
            planner.plan_fft_inverse(nz),
        ];
        let line_len = nx.max(ny).max(nz);
        let scratch_len = forward
            .iter()
            .chain(inverse.iter())
            .map(|f| f.get_inplace_scratch_len())
            .max()
            .unwrap_or(0);
        Self {
            points: lattice.points(),
            cell_volume: lattice.cell_volume(),
            forward,
            inverse,
            line: vec![Complex64::new(0.0, 0.0); line_len],
            scratch: vec![Complex64::new(0.0, 0.0); scratch_len],
        }
    }

    fn transform_axis(&mut self, values: &mut [Complex64], axis: usize, fwd: bool) {
        let [nx, ny, nz] = self.points;
        let n = self.points[axis];
        if n == 1 {
            return;
        }
        let plan = if fwd { &self.forward[axis] } else { &self.inverse[axis] };
        match axis {
            // z lines are contiguous
            2 => {
                for chunk in values.chunks_exact_mut(nz) {
                    plan.process_with_scratch(chunk, &mut self.scratch);
                }
            }
            // y lines have stride nz within each x-slab
            1 => {
                for ix in 0..nx {
                    let slab = &mut values[ix * ny * nz..(ix + 1) * ny * nz];
                    for iz in 0..nz {
                        for iy in 0..ny {
                            self.line[iy] = slab[iy * nz + iz];
                        }
                        plan.process_with_scratch(&mut self.line[..ny], &mut self.scratch);
                        for iy in 0..ny {
                            slab[iy * nz + iz] = self.line[iy];
                        }
                    }
                }
            }
            // x lines have stride ny*nz
            0 => {
                let stride = ny * nz;
                for rem in 0..stride {
                    for ix in 0..nx {
                        self.line[ix] = values[ix * stride + rem];
                    }
                    plan.process_with_scratch(&mut self.line[..nx], &mut self.scratch);
                    for ix in 0..nx {
                        values[ix * stride + rem] = self.line[ix];
                    }
                }
            }
            _ => unreachable!(),
        }
    }

    /// Unnormalized 3D FFT with kernel `exp(-i k x)`.
    pub fn forward_raw(&mut self, values: &mut [Complex64]) {
        for axis in 0..3 {
            self.transform_axis(values, axis, true);
        }
    }

    /// Unnormalized 3D FFT with kernel `exp(+i k x)`.
    pub fn inverse_raw(&mut self, values: &mut [Complex64]) {
        for axis in 0..3 {
            self.transform_axis(values, axis, false);
        }
    }

    fn scale(values: &mut [Complex64], s: f64) {
        for v in values {
            *v *= s;
        }
    }

    fn num_points(&self) -> usize {
        self.points[0] * self.points[1] * self.points[2]
    }

    /// Position -> momentum for an annihilation-type field (kernel
    /// `exp(-i k x)`), normalized so occupations sum to the atom number.
    pub fn to_momentum(&mut self, field: &ComplexField, lattice: &Lattice3D) -> Result<ComplexField> {
        field.check_lattice(lattice)?;
        if field.space() != SpaceTag::Position {
            return Err(Error::WrongSpace { expected: SpaceTag::Position });
        }
        let mut values = field.values().to_vec();
        self.forward_raw(&mut values);
        let s = (self.cell_volume / self.num_points() as f64).sqrt();
        Self::scale(&mut values, s);
        let out = ComplexField { values, shape: field.shape, space: SpaceTag::Momentum };
        if !out.is_finite() {
            return Err(Error::NonFinite { op: "to_momentum" });
        }
        Ok(out)
    }

    /// Momentum -> position, inverse of [`FftContext::to_momentum`].
    pub fn to_position(&mut self, field: &ComplexField, lattice: &Lattice3D) -> Result<ComplexField> {
        field.check_lattice(lattice)?;
        if field.space() != SpaceTag::Momentum {
            return Err(Error::WrongSpace { expected: SpaceTag::Momentum });
        }
        let mut values = field.values().to_vec();
        self.inverse_raw(&mut values);
        let n = self.num_points() as f64;
        Self::scale(&mut values, 1.0 / (n * self.cell_volume).sqrt());
        let out = ComplexField { values, shape: field.shape, space: SpaceTag::Position };
        if !out.is_finite() {
            return Err(Error::NonFinite { op: "to_position" });
        }
        Ok(out)
    }

    /// Position -> momentum for a creation-type field (kernel `exp(+i k x)`,
    /// the conjugate of [`FftContext::to_momentum`]). Bin `k` of the result
    /// pairs with bin `k` of the annihilation-type transform, so
    /// `psitilde(k) psi(k)` is the occupation of mode `k`.
    pub fn to_momentum_adjoint(
        &mut self,
        field: &ComplexField,
        lattice: &Lattice3D,
    ) -> Result<ComplexField> {
        field.check_lattice(lattice)?;
        if field.space() != SpaceTag::Position {
            return Err(Error::WrongSpace { expected: SpaceTag::Position });
        }
        let mut values = field.values().to_vec();
        self.inverse_raw(&mut values);
        let s = (self.cell_volume / self.num_points() as f64).sqrt();
        Self::scale(&mut values, s);
        let out = ComplexField { values, shape: field.shape, space: SpaceTag::Momentum };
        if !out.is_finite() {
            return Err(Error::NonFinite { op: "to_momentum_adjoint" });
        }
        Ok(out)
    }

    /// Momentum -> position, inverse of [`FftContext::to_momentum_adjoint`].
    pub fn to_position_adjoint(
        &mut self,
        field: &ComplexField,
        lattice: &Lattice3D,
    ) -> Result<ComplexField> {
        field.check_lattice(lattice)?;
        if field.space() != SpaceTag::Momentum {
            return Err(Error::WrongSpace { expected: SpaceTag::Momentum });
        }
        let mut values = field.values().to_vec();
        self.forward_raw(&mut values);
        let n = self.num_points() as f64;
        Self::scale(&mut values, 1.0 / (n * self.cell_volume).sqrt());
        let out = ComplexField { values, shape: field.shape, space: SpaceTag::Position };
        if !out.is_finite() {
            return Err(Error::NonFinite { op: "to_position_adjoint" });
        }
        Ok(out)
    }
}
