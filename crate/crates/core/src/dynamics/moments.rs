//! Moment accumulation over trajectory ensembles.
//!
//! Per-bin quantities (momentum density, field means) are reduced on the fly
//! with Welford accumulators; scalar quantities (atom counts, quadrant sums,
//! pair-correlation sums) are kept as raw per-trajectory rows so that honest
//! standard errors and jackknife estimates remain available offline.
//! Trajectories must be merged in trajectory-id order; the reduction is then
//! bit-exact regardless of worker count.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::Lattice3D;

/// Correlation pairing kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairKind {
    /// Collinear: `(k, k + lag e_axis)`.
    Collinear,
    /// Back-to-back: `(k, -k + lag e_axis)`.
    BackToBack,
}

/// Halo quadrants in the `(kx, ky)` plane, delimited by the diagonals
/// `ky = +-kx` with half-open boundaries. A is centered on `+kx`, C on
/// `-kx`, B on `+ky`, D on `-ky`, so (A, C) and (B, D) are diametrically
/// opposite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QuadrantLabel {
    A,
    B,
    C,
    D,
}

impl QuadrantLabel {
    pub const ALL: [QuadrantLabel; 4] = [Self::A, Self::B, Self::C, Self::D];

    pub fn index(self) -> usize {
        match self {
            Self::A => 0,
            Self::B => 1,
            Self::C => 2,
            Self::D => 3,
        }
    }
}

/// What to accumulate during a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentPlan {
    /// Take a sample every this many steps (must divide the step count).
    pub sample_stride: usize,
    /// Shell half-width: bins with `|1 - k^2/kr^2| < shell_tolerance` belong
    /// to the correlation/quadrant domain.
    pub shell_tolerance: f64,
    /// Condensate exclusion for correlations/quadrants/halo: keep
    /// `|kx| <= condensate_mask * kr`.
    pub condensate_mask: f64,
    /// Exclusion for the scattered-atom count: keep
    /// `|kx| <= count_exclusion * kr`.
    pub count_exclusion: f64,
    /// Correlation lag counts per axis (lags run `-L..=L` in whole bins).
    pub lag_counts: [usize; 3],
    /// Reference (collision) wavevector, 1/m; `<= 0` disables all masks
    /// (every bin is in the domain), which few-mode validation grids use.
    pub reference_wavevector: f64,
    /// Accumulate per-bin means of the two momentum-space fields (used by
    /// the mean-field consistency check; costs two field-sized buffers).
    pub accumulate_fields: bool,
    /// Keep raw per-sample mode amplitudes when the lattice has at most this
    /// many bins (few-mode validation).
    pub mode_row_threshold: usize,
}

impl Default for MomentPlan {
    fn default() -> Self {
        Self {
            sample_stride: 8,
            shell_tolerance: 0.28,
            condensate_mask: 0.8,
            count_exclusion: 0.99,
            lag_counts: [12, 6, 6],
            reference_wavevector: 0.0,
            accumulate_fields: true,
            mode_row_threshold: 64,
        }
    }
}

/// Storage layout of the pair-correlation sums: back-to-back then collinear,
/// each axis in turn, lags `-L..=L` per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairLayout {
    pub lag_counts: [usize; 3],
}

impl PairLayout {
    pub fn lags_on_axis(&self, axis: usize) -> usize {
        2 * self.lag_counts[axis] + 1
    }

    fn axis_offset(&self, axis: usize) -> usize {
        (0..axis).map(|a| self.lags_on_axis(a)).sum()
    }

    fn kind_len(&self) -> usize {
        (0..3).map(|a| self.lags_on_axis(a)).sum()
    }

    pub fn total_len(&self) -> usize {
        2 * self.kind_len()
    }

    /// Flat offset for `(kind, axis, lag_index)` where `lag_index` runs
    /// `0..2L+1` and maps to the lag `lag_index - L`.
    pub fn offset(&self, kind: PairKind, axis: usize, lag_index: usize) -> usize {
        let base = match kind {
            PairKind::BackToBack => 0,
            PairKind::Collinear => self.kind_len(),
        };
        base + self.axis_offset(axis) + lag_index
    }

    pub fn lag_value(&self, axis: usize, lag_index: usize) -> i64 {
        lag_index as i64 - self.lag_counts[axis] as i64
    }
}

/// Precomputed analysis geometry shared by all trajectory workers.
#[derive(Debug)]
pub struct DomainSpec {
    pub lattice: Lattice3D,
    pub plan: MomentPlan,
    pub layout: PairLayout,
    /// Flat indices of bins in the correlation/quadrant domain.
    pub shell_bins: Vec<u32>,
    /// Grid coordinates of each shell bin.
    pub shell_coords: Vec<[u32; 3]>,
    /// Flat index of the `-k` partner of each shell bin, or `u32::MAX` when
    /// a Nyquist component blocks negation.
    pub shell_negated: Vec<u32>,
    /// Quadrant of each shell bin.
    pub shell_quadrant: Vec<u8>,
    /// Per-x-plane flag: does `|kx| <= count_exclusion * kr` hold.
    pub count_plane: Vec<bool>,
}

impl DomainSpec {
    pub fn new(lattice: &Lattice3D, plan: &MomentPlan) -> Result<Self> {
        let kr = plan.reference_wavevector;
        let [nx, ny, nz] = lattice.points();
        let masked = kr > 0.0;

        let kx_table = lattice.wavevector_table(0);
        let ky_table = lattice.wavevector_table(1);
        let kz_table = lattice.wavevector_table(2);

        let count_plane: Vec<bool> = kx_table
            .iter()
            .map(|&kx| !masked || kx.abs() <= plan.count_exclusion * kr)
            .collect();

        let mut shell_bins = Vec::new();
        let mut shell_coords = Vec::new();
        let mut shell_negated = Vec::new();
        let mut shell_quadrant = Vec::new();
        for ix in 0..nx {
            let kx = kx_table[ix];
            if masked && kx.abs() > plan.condensate_mask * kr {
                continue;
            }
            for iy in 0..ny {
                let ky = ky_table[iy];
                for iz in 0..nz {
                    let kz = kz_table[iz];
                    if masked {
                        let k2 = kx * kx + ky * ky + kz * kz;
                        if (1.0 - k2 / (kr * kr)).abs() >= plan.shell_tolerance {
                            continue;
                        }
                    }
                    let flat = lattice.flat_index(ix, iy, iz);
                    shell_bins.push(flat as u32);
                    shell_coords.push([ix as u32, iy as u32, iz as u32]);
                    let neg = lattice
                        .negated_bin(0, ix)
                        .zip(lattice.negated_bin(1, iy))
                        .zip(lattice.negated_bin(2, iz))
                        .map(|((jx, jy), jz)| lattice.flat_index(jx, jy, jz) as u32)
                        .unwrap_or(u32::MAX);
                    shell_negated.push(neg);
                    shell_quadrant.push(quadrant_of(kx, ky).index() as u8);
                }
            }
        }
        if shell_bins.is_empty() {
            return Err(Error::EmptyDomain(
                "no momentum bins fall inside the analysis shell".into(),
            ));
        }
        Ok(Self {
            lattice: lattice.clone(),
            plan: plan.clone(),
            layout: PairLayout { lag_counts: plan.lag_counts },
            shell_bins,
            shell_coords,
            shell_negated,
            shell_quadrant,
            count_plane,
        })
    }
}

/// Half-open quadrant assignment: the diagonal cells `|kx| = |ky|` belong to
/// the x-centered quadrants, and the degenerate axis `kx = ky = 0` to A.
fn quadrant_of(kx: f64, ky: f64) -> QuadrantLabel {
    if kx.abs() >= ky.abs() {
        if kx >= 0.0 {
            QuadrantLabel::A
        } else {
            QuadrantLabel::C
        }
    } else if ky > 0.0 {
        QuadrantLabel::B
    } else {
        QuadrantLabel::D
    }
}

/// Index pairs `(i, j)` with `i <= j` in the order the quadrant product rows
/// are stored.
pub const QUADRANT_PAIRS: [(usize, usize); 10] = [
    (0, 0),
    (0, 1),
    (0, 2),
    (0, 3),
    (1, 1),
    (1, 2),
    (1, 3),
    (2, 2),
    (2, 3),
    (3, 3),
];

/// Everything one trajectory contributes at one sample time.
#[derive(Debug, Clone)]
pub struct TrajectorySample {
    pub step: usize,
    pub time: f64,
    pub total_number: Complex64,
    pub scattered_number: Complex64,
    pub quadrant_sums: [Complex64; 4],
    pub quadrant_products: [Complex64; 10],
    /// Pair-correlation sums in [`PairLayout`] order (final sample only).
    pub pair_sums: Option<Vec<Complex64>>,
    /// Per-bin `psitilde(k) psi(k)` (final sample only).
    pub density: Option<Vec<Complex64>>,
    /// Momentum-space fields (final sample, when requested by the plan).
    pub fields: Option<(Vec<Complex64>, Vec<Complex64>)>,
    /// Raw mode amplitudes for few-mode grids (every sample).
    pub mode_fields: Option<(Vec<Complex64>, Vec<Complex64>)>,
}

impl TrajectorySample {
    /// Reduce one momentum-space field pair to its sample contributions.
    /// `a` is the annihilation-type transform of `psi`, `at` the
    /// creation-type transform of `psitilde`.
    pub fn compute(
        a: &[Complex64],
        at: &[Complex64],
        domain: &DomainSpec,
        step: usize,
        time: f64,
        is_final: bool,
    ) -> Self {
        let lattice = &domain.lattice;
        let [_, ny, nz] = lattice.points();
        let plane = ny * nz;

        let mut total = Complex64::new(0.0, 0.0);
        let mut scattered = Complex64::new(0.0, 0.0);
        for (ix, &in_count) in domain.count_plane.iter().enumerate() {
            let mut plane_sum = Complex64::new(0.0, 0.0);
            let base = ix * plane;
            for off in 0..plane {
                plane_sum += at[base + off] * a[base + off];
            }
            total += plane_sum;
            if in_count {
                scattered += plane_sum;
            }
        }

        let mut quadrant_sums = [Complex64::new(0.0, 0.0); 4];
        for (idx, &flat) in domain.shell_bins.iter().enumerate() {
            let d = at[flat as usize] * a[flat as usize];
            quadrant_sums[domain.shell_quadrant[idx] as usize] += d;
        }
        let mut quadrant_products = [Complex64::new(0.0, 0.0); 10];
        for (slot, (i, j)) in QUADRANT_PAIRS.iter().enumerate() {
            quadrant_products[slot] = quadrant_sums[*i] * quadrant_sums[*j];
        }

        let pair_sums = if is_final { Some(pair_sums(a, at, domain)) } else { None };
        let density = if is_final {
            Some(
                at.iter()
                    .zip(a)
                    .map(|(t, v)| t * v)
                    .collect::<Vec<Complex64>>(),
            )
        } else {
            None
        };
        let fields = if is_final && domain.plan.accumulate_fields {
            Some((a.to_vec(), at.to_vec()))
        } else {
            None
        };
        let mode_fields = if lattice.num_points() <= domain.plan.mode_row_threshold {
            Some((a.to_vec(), at.to_vec()))
        } else {
            None
        };

        Self {
            step,
            time,
            total_number: total,
            scattered_number: scattered,
            quadrant_sums,
            quadrant_products,
            pair_sums,
            density,
            fields,
            mode_fields,
        }
    }
}

/// Fourth-order pair sums `sum_k psitilde(k) psitilde(k') psi(k') psi(k)`
/// over the shell, for every configured axis and lag (collinear and
/// back-to-back). Pairs whose partner leaves the grid (or whose negation is
/// Nyquist-blocked) are dropped.
fn pair_sums(a: &[Complex64], at: &[Complex64], domain: &DomainSpec) -> Vec<Complex64> {
    let layout = &domain.layout;
    let lattice = &domain.lattice;
    let mut out = vec![Complex64::new(0.0, 0.0); layout.total_len()];
    for axis in 0..3 {
        for lag_index in 0..layout.lags_on_axis(axis) {
            let lag = layout.lag_value(axis, lag_index);
            let mut cl = Complex64::new(0.0, 0.0);
            let mut bb = Complex64::new(0.0, 0.0);
            for (idx, &flat) in domain.shell_bins.iter().enumerate() {
                let coords = domain.shell_coords[idx];
                let base_term = at[flat as usize] * a[flat as usize];
                // collinear partner k + lag
                if let Some(p) = shifted_flat(lattice, coords, axis, lag) {
                    cl += base_term * (at[p] * a[p]);
                }
                // back-to-back partner -k + lag
                let neg = domain.shell_negated[idx];
                if neg != u32::MAX {
                    let ncoords = lattice.grid_coords(neg as usize);
                    let ncoords = [ncoords[0] as u32, ncoords[1] as u32, ncoords[2] as u32];
                    if let Some(p) = shifted_flat(lattice, ncoords, axis, lag) {
                        bb += base_term * (at[p] * a[p]);
                    }
                }
            }
            out[layout.offset(PairKind::Collinear, axis, lag_index)] = cl;
            out[layout.offset(PairKind::BackToBack, axis, lag_index)] = bb;
        }
    }
    out
}

fn shifted_flat(lattice: &Lattice3D, coords: [u32; 3], axis: usize, lag: i64) -> Option<usize> {
    let j = coords[axis] as usize;
    let s = lattice.signed_index(axis, j) + lag;
    let shifted = lattice.bin_of_signed(axis, s)?;
    let mut idx = [coords[0] as usize, coords[1] as usize, coords[2] as usize];
    idx[axis] = shifted;
    Some(lattice.flat_index(idx[0], idx[1], idx[2]))
}

/// Welford accumulator over complex arrays (componentwise mean plus separate
/// second moments of the real and imaginary parts).
#[derive(Debug, Clone, PartialEq)]
pub struct FieldAccumulator {
    pub count: usize,
    pub mean: Vec<Complex64>,
    pub m2_re: Vec<f64>,
    pub m2_im: Vec<f64>,
}

impl FieldAccumulator {
    pub fn new(len: usize) -> Self {
        Self {
            count: 0,
            mean: vec![Complex64::new(0.0, 0.0); len],
            m2_re: vec![0.0; len],
            m2_im: vec![0.0; len],
        }
    }

    pub fn push(&mut self, values: &[Complex64]) {
        assert_eq!(values.len(), self.mean.len());
        self.count += 1;
        let inv = 1.0 / self.count as f64;
        for i in 0..values.len() {
            let d = values[i] - self.mean[i];
            self.mean[i] += d * inv;
            let d2 = values[i] - self.mean[i];
            self.m2_re[i] += d.re * d2.re;
            self.m2_im[i] += d.im * d2.im;
        }
    }

    /// Standard error of the mean, per component.
    pub fn std_err(&self, i: usize) -> (f64, f64) {
        if self.count < 2 {
            return (f64::INFINITY, f64::INFINITY);
        }
        let denom = (self.count * (self.count - 1)) as f64;
        ((self.m2_re[i] / denom).sqrt(), (self.m2_im[i] / denom).sqrt())
    }
}

/// Accumulated ensemble moments.
///
/// Raw rows are stored per valid trajectory in merge order (which callers
/// keep equal to trajectory-id order).
#[derive(Debug, Clone)]
pub struct EnsembleMoments {
    pub lattice: Lattice3D,
    pub plan: MomentPlan,
    pub layout: PairLayout,
    pub sample_steps: Vec<usize>,
    pub sample_times: Vec<f64>,
    pub n_valid: usize,
    pub discarded: Vec<u64>,
    pub config_hash: String,
    /// `(total_number, scattered_number)` per trajectory and sample.
    pub scalar_rows: Vec<Complex64>,
    /// 4 sums + 10 products per trajectory and sample.
    pub quadrant_rows: Vec<Complex64>,
    /// Pair sums per trajectory (final sample), [`PairLayout`] order.
    pub pair_rows: Vec<Complex64>,
    /// Final-sample momentum density.
    pub density: FieldAccumulator,
    /// Final-sample momentum-space field means (when accumulated).
    pub field_psi: Option<FieldAccumulator>,
    pub field_psi_tilde: Option<FieldAccumulator>,
    /// Raw mode amplitudes per trajectory, sample and bin (few-mode grids):
    /// layout `[traj][sample][a then at][bin]`.
    pub mode_rows: Option<Vec<Complex64>>,
}

impl EnsembleMoments {
    pub fn new(domain: &DomainSpec, sample_steps: Vec<usize>, dt: f64, config_hash: String) -> Self {
        let n_bins = domain.lattice.num_points();
        let sample_times = sample_steps.iter().map(|&s| s as f64 * dt).collect();
        let keep_modes = n_bins <= domain.plan.mode_row_threshold;
        Self {
            lattice: domain.lattice.clone(),
            plan: domain.plan.clone(),
            layout: domain.layout.clone(),
            sample_steps,
            sample_times,
            n_valid: 0,
            discarded: Vec::new(),
            config_hash,
            scalar_rows: Vec::new(),
            quadrant_rows: Vec::new(),
            pair_rows: Vec::new(),
            density: FieldAccumulator::new(n_bins),
            field_psi: domain.plan.accumulate_fields.then(|| FieldAccumulator::new(n_bins)),
            field_psi_tilde: domain.plan.accumulate_fields.then(|| FieldAccumulator::new(n_bins)),
            mode_rows: keep_modes.then(Vec::new),
        }
    }

    pub fn n_samples(&self) -> usize {
        self.sample_steps.len()
    }

    /// Merge one trajectory's samples. Call in trajectory-id order.
    pub fn merge_valid(&mut self, samples: &[TrajectorySample]) {
        assert_eq!(samples.len(), self.n_samples());
        self.n_valid += 1;
        for s in samples {
            self.scalar_rows.push(s.total_number);
            self.scalar_rows.push(s.scattered_number);
            self.quadrant_rows.extend_from_slice(&s.quadrant_sums);
            self.quadrant_rows.extend_from_slice(&s.quadrant_products);
            if let Some(rows) = self.mode_rows.as_mut() {
                let (a, at) = s.mode_fields.as_ref().expect("mode fields requested");
                rows.extend_from_slice(a);
                rows.extend_from_slice(at);
            }
        }
        let last = samples.last().expect("at least one sample");
        self.pair_rows
            .extend_from_slice(last.pair_sums.as_ref().expect("final sample has pair sums"));
        self.density.push(last.density.as_ref().expect("final sample has density"));
        if let (Some(acc_a), Some(acc_t)) = (self.field_psi.as_mut(), self.field_psi_tilde.as_mut())
        {
            let (a, at) = last.fields.as_ref().expect("final sample has fields");
            acc_a.push(a);
            acc_t.push(at);
        }
    }

    pub fn record_discarded(&mut self, id: u64) {
        self.discarded.push(id);
    }

    /// `(total_number, scattered_number)` of one trajectory at one sample.
    pub fn scalar(&self, traj: usize, sample: usize) -> (Complex64, Complex64) {
        let base = (traj * self.n_samples() + sample) * 2;
        (self.scalar_rows[base], self.scalar_rows[base + 1])
    }

    /// Quadrant sums and products of one trajectory at one sample.
    pub fn quadrants(&self, traj: usize, sample: usize) -> (&[Complex64], &[Complex64]) {
        let base = (traj * self.n_samples() + sample) * 14;
        (&self.quadrant_rows[base..base + 4], &self.quadrant_rows[base + 4..base + 14])
    }

    /// Pair sums of one trajectory (final sample).
    pub fn pairs(&self, traj: usize) -> &[Complex64] {
        let len = self.layout.total_len();
        &self.pair_rows[traj * len..(traj + 1) * len]
    }

    /// Raw mode amplitudes `(a, at)` of one trajectory at one sample
    /// (few-mode grids only).
    pub fn mode_fields(&self, traj: usize, sample: usize) -> Option<(&[Complex64], &[Complex64])> {
        let rows = self.mode_rows.as_ref()?;
        let n_bins = self.lattice.num_points();
        let stride = 2 * n_bins;
        let base = (traj * self.n_samples() + sample) * stride;
        Some((&rows[base..base + n_bins], &rows[base + n_bins..base + stride]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_layout_offsets_are_dense_and_unique() {
        let layout = PairLayout { lag_counts: [3, 2, 1] };
        let mut seen = vec![false; layout.total_len()];
        for kind in [PairKind::BackToBack, PairKind::Collinear] {
            for axis in 0..3 {
                for lag in 0..layout.lags_on_axis(axis) {
                    let off = layout.offset(kind, axis, lag);
                    assert!(!seen[off]);
                    seen[off] = true;
                }
            }
        }
        assert!(seen.iter().all(|&s| s));
        assert_eq!(layout.lag_value(0, 0), -3);
        assert_eq!(layout.lag_value(0, 6), 3);
    }

    #[test]
    fn quadrants_cover_the_plane() {
        assert_eq!(quadrant_of(1.0, 0.5), QuadrantLabel::A);
        assert_eq!(quadrant_of(-1.0, 0.5), QuadrantLabel::C);
        assert_eq!(quadrant_of(0.3, 0.9), QuadrantLabel::B);
        assert_eq!(quadrant_of(0.3, -0.9), QuadrantLabel::D);
        // diagonals fall in the x-centered quadrants
        assert_eq!(quadrant_of(0.7, 0.7), QuadrantLabel::A);
        assert_eq!(quadrant_of(-0.7, 0.7), QuadrantLabel::C);
        assert_eq!(quadrant_of(0.0, 0.0), QuadrantLabel::A);
    }

    #[test]
    fn welford_matches_direct_variance() {
        let mut acc = FieldAccumulator::new(1);
        let xs = [1.0, 2.0, 4.0, 8.0, 16.0];
        for &x in &xs {
            acc.push(&[Complex64::new(x, -x)]);
        }
        let mean: f64 = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!((acc.mean[0].re - mean).abs() < 1e-12);
        let var: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>()
            / (xs.len() - 1) as f64;
        let se = (var / xs.len() as f64).sqrt();
        assert!((acc.std_err(0).0 - se).abs() < 1e-12);
        assert!((acc.std_err(0).1 - se).abs() < 1e-12);
    }

    #[test]
    fn shell_domain_symmetric_under_negation() {
        let lattice = Lattice3D::new([32, 16, 16], [16e-6, 8e-6, 8e-6]).unwrap();
        let plan = MomentPlan {
            reference_wavevector: 6.0 * lattice.momentum_spacing()[0],
            ..MomentPlan::default()
        };
        let domain = DomainSpec::new(&lattice, &plan).unwrap();
        assert!(!domain.shell_bins.is_empty());
        // every non-blocked negation partner is itself in the shell
        let in_shell: std::collections::HashSet<u32> =
            domain.shell_bins.iter().copied().collect();
        for (idx, &neg) in domain.shell_negated.iter().enumerate() {
            if neg != u32::MAX {
                assert!(
                    in_shell.contains(&neg),
                    "negation of shell bin {idx} left the shell"
                );
            }
        }
    }

    #[test]
    fn degenerate_reference_takes_all_bins() {
        let lattice = Lattice3D::new([4, 1, 1], [2e-6, 1e-6, 1e-6]).unwrap();
        let plan = MomentPlan { reference_wavevector: 0.0, ..MomentPlan::default() };
        let domain = DomainSpec::new(&lattice, &plan).unwrap();
        assert_eq!(domain.shell_bins.len(), 4);
    }
}
