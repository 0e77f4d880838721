//! From accumulated moments to measured quantities: momentum density,
//! scattered-atom counts, halo radial profile, averaged pair correlations,
//! quadrant number variances and Cauchy-Schwarz tests.
//!
//! Scalar estimators carry jackknife standard errors computed from the raw
//! per-trajectory rows; per-bin quantities use the Welford accumulators.

use serde::Serialize;

use crate::dynamics::{EnsembleMoments, PairKind, QuadrantLabel, QUADRANT_PAIRS};
use crate::error::{Error, Result};
use crate::fit::{fit_gaussian, GaussianFit, GaussianModel};
use crate::lattice::Lattice3D;

/// A value with its standard error.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Measured {
    pub value: f64,
    pub std_err: f64,
}

impl Measured {
    pub fn z_score(&self, reference: f64) -> f64 {
        (self.value - reference) / self.std_err
    }
}

fn mean_and_se(values: &[f64]) -> Measured {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return Measured { value: mean, std_err: f64::INFINITY };
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Measured { value: mean, std_err: (var / n).sqrt() }
}

/// Leave-one-out jackknife for a statistic of per-trajectory rows.
///
/// `stat` maps the index set of retained trajectories to the estimator.
pub fn jackknife<F: Fn(&dyn Fn(usize) -> bool) -> f64>(n: usize, stat: F) -> Measured {
    let full = stat(&|_| true);
    if n < 2 {
        return Measured { value: full, std_err: f64::INFINITY };
    }
    let mut deleted = Vec::with_capacity(n);
    for skip in 0..n {
        deleted.push(stat(&|i| i != skip));
    }
    let mean_del = deleted.iter().sum::<f64>() / n as f64;
    let var = deleted.iter().map(|d| (d - mean_del) * (d - mean_del)).sum::<f64>()
        * (n as f64 - 1.0)
        / n as f64;
    Measured { value: full, std_err: var.sqrt() }
}

/// Momentum density `n(k) = Re <psitilde(k) psi(k)>` with the largest
/// imaginary residue (in units of its standard error) as a diagnostic.
pub struct MomentumDensity {
    pub values: Vec<f64>,
    pub std_err: Vec<f64>,
    /// max over bins of `|Im n(k)| / se(Im n(k))`.
    pub max_imag_z: f64,
}

pub fn momentum_density(moments: &EnsembleMoments) -> MomentumDensity {
    let acc = &moments.density;
    let mut values = Vec::with_capacity(acc.mean.len());
    let mut std_err = Vec::with_capacity(acc.mean.len());
    let mut max_imag_z: f64 = 0.0;
    for i in 0..acc.mean.len() {
        let (se_re, se_im) = acc.std_err(i);
        values.push(acc.mean[i].re);
        std_err.push(se_re);
        if se_im > 0.0 && se_im.is_finite() {
            max_imag_z = max_imag_z.max(acc.mean[i].im.abs() / se_im);
        }
    }
    MomentumDensity { values, std_err, max_imag_z }
}

/// Scattered-atom count: the density summed over `|kx| <= exclusion kr`,
/// and the scattered fraction. Works on any real density field.
pub fn count_scattered(
    density: &[f64],
    lattice: &Lattice3D,
    kr: f64,
    exclusion: f64,
) -> (f64, f64) {
    let [nx, ny, nz] = lattice.points();
    let plane = ny * nz;
    let mut total = 0.0;
    let mut scattered = 0.0;
    for ix in 0..nx {
        let keep = lattice.wavevector_component(0, ix).abs() <= exclusion * kr;
        let s: f64 = density[ix * plane..(ix + 1) * plane].iter().sum();
        total += s;
        if keep {
            scattered += s;
        }
    }
    (scattered, scattered / total)
}

/// Per-sample ensemble series of the scattered count and the total atom
/// number, with standard errors from the per-trajectory rows.
pub struct NumberSeries {
    pub times: Vec<f64>,
    pub total: Vec<Measured>,
    pub total_imag: Vec<Measured>,
    pub scattered: Vec<Measured>,
}

pub fn number_series(moments: &EnsembleMoments) -> NumberSeries {
    let n_t = moments.n_valid;
    let n_s = moments.n_samples();
    let mut total = Vec::with_capacity(n_s);
    let mut total_imag = Vec::with_capacity(n_s);
    let mut scattered = Vec::with_capacity(n_s);
    for s in 0..n_s {
        let tot: Vec<f64> = (0..n_t).map(|t| moments.scalar(t, s).0.re).collect();
        let tot_im: Vec<f64> = (0..n_t).map(|t| moments.scalar(t, s).0.im).collect();
        let sc: Vec<f64> = (0..n_t).map(|t| moments.scalar(t, s).1.re).collect();
        total.push(mean_and_se(&tot));
        total_imag.push(mean_and_se(&tot_im));
        scattered.push(mean_and_se(&sc));
    }
    NumberSeries { times: moments.sample_times.clone(), total, total_imag, scattered }
}

/// Radial halo profile with its Gaussian fit.
#[derive(Debug, Clone, Serialize)]
pub struct HaloProfile {
    /// Bin centers, 1/m.
    pub k: Vec<f64>,
    /// Mean density per momentum bin at radius `k` (occupation per mode).
    pub density: Vec<f64>,
    pub std_err: Vec<f64>,
    pub fit: GaussianFit,
}

/// Options for [`radial_profile`].
#[derive(Debug, Clone)]
pub struct RadialOptions {
    /// Keep `|kx| <= axial_mask * kr`.
    pub axial_mask: f64,
    /// Radial bin width, 1/m; defaults to twice the finest momentum spacing.
    pub bin_width: Option<f64>,
    /// Fit window in units of `kr`.
    pub fit_window: (f64, f64),
    /// Fit a straight-line background under the Gaussian.
    pub sloped_background: bool,
}

impl Default for RadialOptions {
    fn default() -> Self {
        Self {
            axial_mask: 0.8,
            bin_width: None,
            fit_window: (0.4, 1.6),
            sloped_background: false,
        }
    }
}

/// Angle-averaged radial momentum distribution of the scattered atoms, with
/// a Gaussian fit `A exp(-(k - k0)^2 / (2 dk^2))` over the halo region.
pub fn radial_profile(
    density: &[f64],
    std_err: Option<&[f64]>,
    lattice: &Lattice3D,
    kr: f64,
    opts: &RadialOptions,
) -> Result<HaloProfile> {
    let [nx, ny, nz] = lattice.points();
    let width = opts.bin_width.unwrap_or_else(|| {
        let dk = lattice.momentum_spacing();
        2.0 * dk[0].min(dk[1]).min(dk[2])
    });
    let k_hi = opts.fit_window.1 * kr * 1.25;
    let n_bins = (k_hi / width).ceil() as usize;
    let mut sums = vec![0.0; n_bins];
    let mut sq_sums = vec![0.0; n_bins];
    let mut counts = vec![0usize; n_bins];
    for ix in 0..nx {
        let kx = lattice.wavevector_component(0, ix);
        if kx.abs() > opts.axial_mask * kr {
            continue;
        }
        for iy in 0..ny {
            let ky = lattice.wavevector_component(1, iy);
            for iz in 0..nz {
                let kz = lattice.wavevector_component(2, iz);
                let k = (kx * kx + ky * ky + kz * kz).sqrt();
                let bin = (k / width) as usize;
                if bin < n_bins {
                    let flat = lattice.flat_index(ix, iy, iz);
                    sums[bin] += density[flat];
                    if let Some(se) = std_err {
                        sq_sums[bin] += se[flat] * se[flat];
                    }
                    counts[bin] += 1;
                }
            }
        }
    }
    let mut k = Vec::new();
    let mut mean = Vec::new();
    let mut se = Vec::new();
    for bin in 0..n_bins {
        if counts[bin] == 0 {
            continue;
        }
        k.push((bin as f64 + 0.5) * width);
        mean.push(sums[bin] / counts[bin] as f64);
        se.push(sq_sums[bin].sqrt() / counts[bin] as f64);
    }
    if k.len() < 5 {
        return Err(Error::EmptyDomain("too few radial bins for a profile".into()));
    }
    let lo = opts.fit_window.0 * kr;
    let hi = opts.fit_window.1 * kr;
    let in_window: Vec<usize> =
        (0..k.len()).filter(|&i| k[i] >= lo && k[i] <= hi).collect();
    if in_window.len() < 5 {
        return Err(Error::EmptyDomain("fit window contains too few bins".into()));
    }
    let xs: Vec<f64> = in_window.iter().map(|&i| k[i]).collect();
    let ys: Vec<f64> = in_window.iter().map(|&i| mean[i]).collect();
    let model = if opts.sloped_background {
        GaussianModel::AmpCenterWidthSlopedBackground
    } else {
        GaussianModel::AmpCenterWidth
    };
    let fit = fit_gaussian(&xs, &ys, None, model)?;
    if fit.amplitude <= 0.0 {
        return Err(Error::FitFailure("halo population below the noise floor".into()));
    }
    Ok(HaloProfile { k, density: mean, std_err: se, fit })
}

/// Averaged second-order correlation curve along one axis.
#[derive(Debug, Clone, Serialize)]
pub struct CorrelationCurve {
    pub kind: PairKind,
    pub axis: usize,
    /// Lags, 1/m.
    pub dk: Vec<f64>,
    pub g2: Vec<f64>,
    pub std_err: Vec<f64>,
    /// Gaussian fit of `g2 - 1` (amplitude, center 0, width in 1/m).
    pub fit: GaussianFit,
}

impl CorrelationCurve {
    /// The zero-lag value.
    pub fn peak(&self) -> Measured {
        let i = self
            .dk
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(i, _)| i)
            .expect("non-empty curve");
        Measured { value: self.g2[i], std_err: self.std_err[i] }
    }
}

/// Build the averaged correlation curve for `kind` along `axis`.
///
/// The numerator is the ensemble mean of the per-trajectory fourth-order
/// pair sums; the denominator is the matching sum of products of the mean
/// densities. Lags whose denominator falls below `1e-10` of the maximum are
/// dropped.
pub fn g2_average(
    moments: &EnsembleMoments,
    kind: PairKind,
    axis: usize,
) -> Result<CorrelationCurve> {
    let lattice = &moments.lattice;
    let layout = &moments.layout;
    let plan = &moments.plan;
    let n_t = moments.n_valid;
    if n_t < 2 {
        return Err(Error::EmptyDomain("need at least two valid trajectories".into()));
    }

    // rebuild the pair geometry to evaluate the denominators
    let domain = crate::dynamics::DomainSpec::new(lattice, plan)?;
    let density = &moments.density.mean;

    let n_lags = layout.lags_on_axis(axis);
    let dk_axis = lattice.momentum_spacing()[axis];
    let mut dk = Vec::with_capacity(n_lags);
    let mut g2 = Vec::with_capacity(n_lags);
    let mut se = Vec::with_capacity(n_lags);
    let mut fit_x = Vec::new();
    let mut fit_y = Vec::new();

    // first pass: denominators
    let mut denominators = vec![0.0; n_lags];
    for lag_index in 0..n_lags {
        let lag = layout.lag_value(axis, lag_index);
        let mut den = 0.0;
        for (idx, &flat) in domain.shell_bins.iter().enumerate() {
            let base = match kind {
                PairKind::Collinear => Some(flat as usize),
                PairKind::BackToBack => {
                    let neg = domain.shell_negated[idx];
                    (neg != u32::MAX).then_some(neg as usize)
                }
            };
            let Some(base) = base else { continue };
            let coords = lattice.grid_coords(base);
            let coords = [coords[0] as u32, coords[1] as u32, coords[2] as u32];
            if let Some(p) = shifted_flat(lattice, coords, axis, lag) {
                den += density[flat as usize].re * density[p].re;
            }
        }
        denominators[lag_index] = den;
    }
    let den_max = denominators.iter().cloned().fold(0.0f64, f64::max);
    if den_max <= 0.0 {
        return Err(Error::EmptyDomain("correlation denominator vanished".into()));
    }

    for lag_index in 0..n_lags {
        let den = denominators[lag_index];
        if den < 1e-10 * den_max {
            continue;
        }
        let offset = layout.offset(kind, axis, lag_index);
        let rows: Vec<f64> = (0..n_t).map(|t| moments.pairs(t)[offset].re).collect();
        let num = mean_and_se(&rows);
        let lag_k = layout.lag_value(axis, lag_index) as f64 * dk_axis;
        dk.push(lag_k);
        g2.push(num.value / den);
        se.push(num.std_err / den);
        fit_x.push(lag_k);
        fit_y.push(num.value / den - 1.0);
    }
    if dk.len() < 3 {
        return Err(Error::EmptyDomain("too few usable lags".into()));
    }
    let fit = fit_gaussian(&fit_x, &fit_y, None, GaussianModel::CenteredAmpWidth)?;
    Ok(CorrelationCurve { kind, axis, dk, g2, std_err: se, fit })
}

fn shifted_flat(lattice: &Lattice3D, coords: [u32; 3], axis: usize, lag: i64) -> Option<usize> {
    let j = coords[axis] as usize;
    let s = lattice.signed_index(axis, j) + lag;
    let shifted = lattice.bin_of_signed(axis, s)?;
    let mut idx = [coords[0] as usize, coords[1] as usize, coords[2] as usize];
    idx[axis] = shifted;
    Some(lattice.flat_index(idx[0], idx[1], idx[2]))
}

/// Quadrant populations, relative-number variances, pair correlations and
/// the Cauchy-Schwarz comparison at one sample time.
#[derive(Debug, Clone, Serialize)]
pub struct QuadrantStats {
    pub time: f64,
    pub detection_efficiency: f64,
    pub mean_numbers: [Measured; 4],
    /// `V[i][j]` for the 6 unordered pairs, keyed by [`QUADRANT_PAIRS`]
    /// minus the diagonal.
    pub variances: Vec<(QuadrantLabel, QuadrantLabel, Measured)>,
    /// Full `g2[i][j]` matrix (normally ordered).
    pub g2: [[f64; 4]; 4],
    /// `V-alt` consistency: for each opposite pair, the symmetrized variance
    /// computed from raw moments and from `1 + n (g_ii - g_ij)`.
    pub v_alt_check: Vec<(QuadrantLabel, QuadrantLabel, f64, f64)>,
    /// Cauchy-Schwarz: `(pair, g_cross, g_auto_mean, violated)`.
    pub cauchy_schwarz: Vec<(QuadrantLabel, QuadrantLabel, f64, f64, bool)>,
}

fn pair_slot(i: usize, j: usize) -> usize {
    QUADRANT_PAIRS
        .iter()
        .position(|&(a, b)| (a, b) == (i.min(j), i.max(j)))
        .expect("valid pair")
}

/// Compute quadrant statistics at sample index `sample`.
///
/// `eta` is the uniform detection efficiency: the normally-ordered part of
/// every variance is scaled by `eta` (`V = 1 + eta <:dX^2:>/<N_i + N_j>`).
pub fn quadrant_stats(
    moments: &EnsembleMoments,
    sample: usize,
    eta: f64,
) -> Result<QuadrantStats> {
    let n_t = moments.n_valid;
    if n_t < 2 {
        return Err(Error::EmptyDomain("need at least two valid trajectories".into()));
    }
    // raw rows: sums[t][q], prods[t][slot]
    let sums = |t: usize, q: usize| moments.quadrants(t, sample).0[q].re;
    let prods = |t: usize, slot: usize| moments.quadrants(t, sample).1[slot].re;

    let mean_numbers: [Measured; 4] = std::array::from_fn(|q| {
        let rows: Vec<f64> = (0..n_t).map(|t| sums(t, q)).collect();
        mean_and_se(&rows)
    });
    for m in &mean_numbers {
        if m.value <= 0.0 {
            return Err(Error::EmptyDomain("empty quadrant".into()));
        }
    }

    // estimator of V_{i-j} over a retained subset of trajectories
    let v_est = |i: usize, j: usize, keep: &dyn Fn(usize) -> bool| -> f64 {
        let mut n = 0.0;
        let (mut si, mut sj, mut qii, mut qjj, mut qij) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for t in 0..n_t {
            if !keep(t) {
                continue;
            }
            n += 1.0;
            si += sums(t, i);
            sj += sums(t, j);
            qii += prods(t, pair_slot(i, i));
            qjj += prods(t, pair_slot(j, j));
            qij += prods(t, pair_slot(i, j));
        }
        let (si, sj, qii, qjj, qij) = (si / n, sj / n, qii / n, qjj / n, qij / n);
        // <:[d(Ni - Nj)]^2:> = <:Ni^2:> + <:Nj^2:> - 2<Ni Nj> - (<Ni> - <Nj>)^2
        let ordered = qii + qjj - 2.0 * qij - (si - sj) * (si - sj);
        1.0 + eta * ordered / (si + sj)
    };

    let mut variances = Vec::new();
    for &(i, j) in QUADRANT_PAIRS.iter().filter(|(a, b)| a != b) {
        let m = jackknife(n_t, |keep| v_est(i, j, keep));
        variances.push((QuadrantLabel::ALL[i], QuadrantLabel::ALL[j], m));
    }

    let mut g2 = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            let q: f64 = (0..n_t).map(|t| prods(t, pair_slot(i, j))).sum::<f64>() / n_t as f64;
            g2[i][j] = q / (mean_numbers[i].value * mean_numbers[j].value);
        }
    }

    // V-alt on symmetrized estimators for the diametrically opposite pairs:
    // route 1 evaluates the variance formula on pseudo-moments with both
    // quadrants replaced by their average, route 2 evaluates
    // 1 + n (g_ii - g_ij) from the same symmetrized inputs.
    let mut v_alt_check = Vec::new();
    let mut cauchy_schwarz = Vec::new();
    for (i, j) in [(0usize, 2usize), (1, 3)] {
        let nbar = 0.5
            * ((0..n_t).map(|t| sums(t, i) + sums(t, j)).sum::<f64>() / n_t as f64);
        let qbar = 0.5
            * ((0..n_t)
                .map(|t| prods(t, pair_slot(i, i)) + prods(t, pair_slot(j, j)))
                .sum::<f64>()
                / n_t as f64);
        let cross: f64 =
            (0..n_t).map(|t| prods(t, pair_slot(i, j))).sum::<f64>() / n_t as f64;
        // route 1: the full variance formula with symmetric inputs
        let ordered = qbar + qbar - 2.0 * cross;
        let v_raw = 1.0 + eta * ordered / (2.0 * nbar);
        // route 2: via the normalized correlations
        let g_auto = qbar / (nbar * nbar);
        let g_cross = cross / (nbar * nbar);
        let v_g = 1.0 + eta * nbar * (g_auto - g_cross);
        v_alt_check.push((QuadrantLabel::ALL[i], QuadrantLabel::ALL[j], v_raw, v_g));
        cauchy_schwarz.push((
            QuadrantLabel::ALL[i],
            QuadrantLabel::ALL[j],
            g_cross,
            g_auto,
            g_cross > g_auto,
        ));
    }

    Ok(QuadrantStats {
        time: moments.sample_times[sample],
        detection_efficiency: eta,
        mean_numbers,
        variances,
        g2,
        v_alt_check,
        cauchy_schwarz,
    })
}

impl QuadrantStats {
    pub fn variance(&self, a: QuadrantLabel, b: QuadrantLabel) -> Measured {
        self.variances
            .iter()
            .find(|(i, j, _)| (*i == a && *j == b) || (*i == b && *j == a))
            .map(|(_, _, m)| *m)
            .expect("pair present")
    }
}

/// Relative number variance from physical count samples (shot-noise
/// normalized): `Var(Ni - Nj) / (<Ni> + <Nj>)`. Used to validate the
/// normalization on synthetic counting data.
pub fn relative_number_variance_from_counts(ni: &[f64], nj: &[f64]) -> Measured {
    assert_eq!(ni.len(), nj.len());
    let n = ni.len();
    let est = |keep: &dyn Fn(usize) -> bool| -> f64 {
        let (mut count, mut s_i, mut s_j, mut s_d2) = (0.0, 0.0, 0.0, 0.0);
        for t in 0..n {
            if keep(t) {
                count += 1.0;
                s_i += ni[t];
                s_j += nj[t];
            }
        }
        let mean_d = (s_i - s_j) / count;
        for t in 0..n {
            if keep(t) {
                let d = ni[t] - nj[t] - mean_d;
                s_d2 += d * d;
            }
        }
        (s_d2 / (count - 1.0)) / ((s_i + s_j) / count)
    };
    jackknife(n, est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{DomainSpec, MomentPlan, TrajectorySample};
    use num_complex::Complex64;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Poisson};

    #[test]
    fn poisson_counts_give_unit_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let lambda = 40.0;
        let poisson = Poisson::new(lambda).unwrap();
        let n = 4000;
        let ni: Vec<f64> = (0..n).map(|_| poisson.sample(&mut rng)).collect();
        let nj: Vec<f64> = (0..n).map(|_| poisson.sample(&mut rng)).collect();
        let v = relative_number_variance_from_counts(&ni, &nj);
        assert!(
            (v.value - 1.0).abs() < 3.0 * v.std_err,
            "V = {} +- {}",
            v.value,
            v.std_err
        );
        assert!(v.std_err < 0.1);
    }

    /// Synthetic moments with a known halo: a Gaussian shell density plus
    /// uncorrelated fields.
    fn synthetic_moments(kr: f64) -> EnsembleMoments {
        let lattice = Lattice3D::new([24, 16, 16], [12e-6, 8e-6, 8e-6]).unwrap();
        let plan = MomentPlan {
            sample_stride: 1,
            reference_wavevector: kr,
            lag_counts: [2, 2, 2],
            accumulate_fields: false,
            ..MomentPlan::default()
        };
        let domain = DomainSpec::new(&lattice, &plan).unwrap();
        let mut m = EnsembleMoments::new(&domain, vec![0], 1e-6, "test".into());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dk0 = 0.1 * kr;
        for _ in 0..64 {
            let mut a = Vec::with_capacity(lattice.num_points());
            for flat in 0..lattice.num_points() {
                let [ix, iy, iz] = lattice.grid_coords(flat);
                let kx = lattice.wavevector_component(0, ix);
                let ky = lattice.wavevector_component(1, iy);
                let kz = lattice.wavevector_component(2, iz);
                let k = (kx * kx + ky * ky + kz * kz).sqrt();
                let mean_n = 0.5 * (-(k - kr) * (k - kr) / (2.0 * dk0 * dk0)).exp();
                // thermal complex Gaussian amplitude with <|a|^2> = mean_n
                let scale = (mean_n / 2.0).sqrt();
                let g1: f64 = rand_distr::StandardNormal.sample(&mut rng);
                let g2v: f64 = rand_distr::StandardNormal.sample(&mut rng);
                a.push(Complex64::new(scale * g1, scale * g2v));
            }
            let at: Vec<Complex64> = a.iter().map(|c| c.conj()).collect();
            let sample = TrajectorySample::compute(&a, &at, &domain, 0, 0.0, true);
            m.merge_valid(&[sample]);
        }
        m
    }

    #[test]
    fn radial_profile_recovers_shell() {
        let lattice = Lattice3D::new([24, 16, 16], [12e-6, 8e-6, 8e-6]).unwrap();
        let kr = 5.0 * lattice.momentum_spacing()[0] * 2.0;
        // deterministic density: exact Gaussian shell, kept wider than the
        // radial bins so quantization does not inflate the fitted width
        let dk0 = 0.2 * kr;
        let mut density = vec![0.0; lattice.num_points()];
        for flat in 0..lattice.num_points() {
            let [ix, iy, iz] = lattice.grid_coords(flat);
            let kx = lattice.wavevector_component(0, ix);
            let ky = lattice.wavevector_component(1, iy);
            let kz = lattice.wavevector_component(2, iz);
            let k = (kx * kx + ky * ky + kz * kz).sqrt();
            density[flat] = 2.0 * (-(k - kr) * (k - kr) / (2.0 * dk0 * dk0)).exp();
        }
        let opts = RadialOptions {
            bin_width: Some(lattice.momentum_spacing()[0]),
            ..RadialOptions::default()
        };
        let profile = radial_profile(&density, None, &lattice, kr, &opts).unwrap();
        assert!((profile.fit.center - kr).abs() / kr < 0.05);
        assert!((profile.fit.width - dk0).abs() / dk0 < 0.10);
    }

    #[test]
    fn g2_curves_on_uncorrelated_fields_are_flat() {
        // conj-paired complex Gaussian fields: <at at a a> over independent
        // bins behaves thermally, g2_CL(0) -> 2 and g2(large lag) -> 1
        let lattice = Lattice3D::new([24, 16, 16], [12e-6, 8e-6, 8e-6]).unwrap();
        let kr = 6.0 * lattice.momentum_spacing()[0];
        let m = synthetic_moments(kr);
        let curve = g2_average(&m, PairKind::Collinear, 0).unwrap();
        let peak = curve.peak();
        assert!(
            (peak.value - 2.0).abs() < 4.0 * peak.std_err.max(0.05),
            "CL peak {} +- {}",
            peak.value,
            peak.std_err
        );
        // symmetric in the lag within errors
        for (i, &dk) in curve.dk.iter().enumerate() {
            if dk > 0.0 {
                let j = curve.dk.iter().position(|&d| (d + dk).abs() < 1e-9).unwrap();
                let diff = (curve.g2[i] - curve.g2[j]).abs();
                let tol = 4.0 * (curve.std_err[i] + curve.std_err[j]).max(0.05);
                assert!(diff < tol, "asymmetry {diff} at lag {dk}");
            }
        }
    }

    #[test]
    fn quadrant_valt_identity_and_cauchy_schwarz() {
        let lattice = Lattice3D::new([24, 16, 16], [12e-6, 8e-6, 8e-6]).unwrap();
        let kr = 6.0 * lattice.momentum_spacing()[0];
        let m = synthetic_moments(kr);
        let stats = quadrant_stats(&m, 0, 1.0).unwrap();
        for (_, _, v_raw, v_g) in &stats.v_alt_check {
            assert!(
                (v_raw - v_g).abs() < 1e-10 * v_raw.abs().max(1.0),
                "V-alt identity broken: {v_raw} vs {v_g}"
            );
        }
        // squeezing <-> Cauchy-Schwarz implication on the same sample
        for ((i, j, _, g_auto, violated), (vi, vj, v_raw, _)) in
            stats.cauchy_schwarz.iter().zip(&stats.v_alt_check)
        {
            assert_eq!((i, j), (vi, vj));
            assert_eq!(*violated, *v_raw < 1.0, "g_auto {g_auto}");
        }
    }

    #[test]
    fn detection_efficiency_scales_ordered_part() {
        let lattice = Lattice3D::new([24, 16, 16], [12e-6, 8e-6, 8e-6]).unwrap();
        let kr = 6.0 * lattice.momentum_spacing()[0];
        let m = synthetic_moments(kr);
        let full = quadrant_stats(&m, 0, 1.0).unwrap();
        let degraded = quadrant_stats(&m, 0, 0.1).unwrap();
        let v1 = full.variance(QuadrantLabel::A, QuadrantLabel::C).value;
        let v01 = degraded.variance(QuadrantLabel::A, QuadrantLabel::C).value;
        assert!((v01 - (1.0 + 0.1 * (v1 - 1.0))).abs() < 1e-12);
        // the quoted example: V = 0.2 at unit efficiency becomes 0.92 at 10%
        assert!((1.0f64 + 0.1 * (0.2 - 1.0) - 0.92).abs() < 1e-12);
    }

    #[test]
    fn count_scattered_masks_condensates() {
        let lattice = Lattice3D::new([16, 4, 4], [8e-6, 2e-6, 2e-6]).unwrap();
        let kr = 6.0 * lattice.momentum_spacing()[0];
        let mut density = vec![0.0; lattice.num_points()];
        // condensates at +-kr (bins 6 and 10), halo at kx = 0
        let b_plus = lattice.bin_of_signed(0, 6).unwrap();
        let b_minus = lattice.bin_of_signed(0, -6).unwrap();
        density[lattice.flat_index(b_plus, 0, 0)] = 500.0;
        density[lattice.flat_index(b_minus, 0, 0)] = 500.0;
        density[lattice.flat_index(0, 1, 1)] = 25.0;
        let (n_sc, fraction) = count_scattered(&density, &lattice, kr, 0.99);
        assert!((n_sc - 25.0).abs() < 1e-12);
        assert!((fraction - 25.0 / 1025.0).abs() < 1e-12);
        // a looser exclusion catches everything
        let (n_all, _) = count_scattered(&density, &lattice, kr, 2.0);
        assert!((n_all - 1025.0).abs() < 1e-12);
    }
}
