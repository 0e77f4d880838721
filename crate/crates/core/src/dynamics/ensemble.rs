//! Trajectory ensembles: deterministic seeding, parallel execution, ordered
//! reduction.
//!
//! Every trajectory derives its own ChaCha stream from `(base_seed,
//! trajectory_id)`, so results are independent of scheduling. Workers run
//! chunks of trajectories in parallel; finished records are merged strictly
//! in trajectory-id order, which makes the accumulated moments bit-identical
//! across worker counts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::groundstate::PhysicalParams;
use crate::lattice::Lattice3D;

use super::moments::{DomainSpec, EnsembleMoments, MomentPlan, TrajectorySample};
use super::stepper::{FieldPair, Stepper, StepperTables};

/// Full stochastic-run configuration.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SimConfig {
    pub params: PhysicalParams,
    pub lattice: Lattice3D,
    /// Total simulated time, s.
    pub t_final: f64,
    pub n_steps: usize,
    pub n_trajectories: usize,
    pub base_seed: u64,
    /// Divergence guard: a trajectory is discarded when `|psi|^2` exceeds
    /// `divergence_factor * reference_density` at any site.
    pub divergence_factor: f64,
    /// Density scale for the guard (the trapped peak density).
    pub reference_density: f64,
    /// Disable the stochastic terms (deterministic mean-field evolution).
    pub noise_enabled: bool,
    /// Draw noise in half-step pairs so a run at `dt` shares its Brownian
    /// path with a run at `dt/2` (step-halving convergence checks).
    pub noise_pairing: bool,
    /// Scattering length driving the simulated dynamics; defaults to `a00`.
    pub interaction_length: Option<f64>,
    pub plan: MomentPlan,
}

impl SimConfig {
    pub fn dt(&self) -> f64 {
        self.t_final / self.n_steps as f64
    }

    pub fn interaction_length(&self) -> f64 {
        self.interaction_length.unwrap_or(self.params.a00)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !(self.t_final > 0.0) || self.n_steps == 0 {
            return Err(Error::InvalidParameter(
                "t_final and n_steps must give a positive time step".into(),
            ));
        }
        if self.n_trajectories < 2 {
            return Err(Error::InvalidParameter("need at least 2 trajectories".into()));
        }
        if self.plan.sample_stride == 0 || self.n_steps % self.plan.sample_stride != 0 {
            return Err(Error::InvalidParameter(format!(
                "sample stride {} must divide the step count {}",
                self.plan.sample_stride, self.n_steps
            )));
        }
        if !(self.divergence_factor > 0.0 && self.reference_density > 0.0) {
            return Err(Error::InvalidParameter("divergence guard must be positive".into()));
        }
        Ok(())
    }

    fn sample_steps(&self) -> Vec<usize> {
        (0..=self.n_steps / self.plan.sample_stride)
            .map(|i| i * self.plan.sample_stride)
            .collect()
    }

    fn guard_threshold(&self) -> f64 {
        self.divergence_factor * self.reference_density
    }
}

/// Outcome of one trajectory.
#[derive(Debug)]
pub struct TrajectoryRecord {
    pub trajectory_id: u64,
    pub diverged_at: Option<usize>,
    pub samples: Vec<TrajectorySample>,
}

impl TrajectoryRecord {
    pub fn is_valid(&self) -> bool {
        self.diverged_at.is_none()
    }
}

/// Integrate one trajectory and reduce it to its moment contributions.
///
/// Deterministic in `(config.base_seed, trajectory_id)`: the noise stream is
/// `ChaCha8(seed = base_seed, stream = trajectory_id)` regardless of thread
/// assignment.
pub fn run_trajectory(
    initial: &FieldPair,
    config: &SimConfig,
    domain: &DomainSpec,
    tables: &Arc<StepperTables>,
    trajectory_id: u64,
) -> TrajectoryRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(config.base_seed);
    rng.set_stream(trajectory_id);

    let u0 = config.params.positive_p_coupling(config.interaction_length());
    let granularity = if config.noise_pairing {
        super::stepper::NoiseGranularity::PairedHalves
    } else {
        super::stepper::NoiseGranularity::Single
    };
    let mut stepper = Stepper::with_granularity(
        tables.clone(),
        u0,
        config.guard_threshold(),
        config.noise_enabled,
        granularity,
    );
    let mut pair = initial.clone();
    pair.trajectory_id = trajectory_id;

    let sample_steps = config.sample_steps();
    let last_step = *sample_steps.last().expect("at least one sample");
    let mut samples = Vec::with_capacity(sample_steps.len());
    for &target in &sample_steps {
        debug_assert!(target >= pair.step);
        let remaining = target - pair.step;
        if let Err(Error::Divergence { step, .. }) =
            stepper.advance(&mut pair, remaining, &mut rng)
        {
            return TrajectoryRecord { trajectory_id, diverged_at: Some(step), samples: Vec::new() };
        }
        let (a, at) = stepper.momentum_views(&pair);
        if a.iter().chain(at.iter()).any(|c| !(c.re.is_finite() && c.im.is_finite())) {
            return TrajectoryRecord {
                trajectory_id,
                diverged_at: Some(pair.step),
                samples: Vec::new(),
            };
        }
        samples.push(TrajectorySample::compute(
            &a,
            &at,
            domain,
            pair.step,
            pair.time,
            pair.step == last_step,
        ));
    }
    TrajectoryRecord { trajectory_id, diverged_at: None, samples }
}

/// Ensemble summary.
#[derive(Debug, Clone, serde::Serialize)]
pub struct RunStats {
    pub requested: usize,
    pub valid: usize,
    pub discarded: usize,
    pub discarded_ids: Vec<u64>,
    pub wall_seconds: f64,
}

/// Run the configured ensemble from `initial` and accumulate moments.
///
/// Trajectories execute in parallel on the current rayon pool in chunks;
/// each chunk's records merge in id order. Aborts when more than half of the
/// trajectories trip the divergence guard. A nonzero discard count is
/// reported in the stats (and should be treated as a bias warning).
pub fn simulate_ensemble(
    config: &SimConfig,
    initial: &FieldPair,
    config_hash: &str,
) -> Result<(EnsembleMoments, RunStats)> {
    config.validate()?;
    if initial.psi.shape() != config.lattice.points() {
        return Err(Error::ShapeMismatch {
            expected: config.lattice.points(),
            found: initial.psi.values().len(),
        });
    }
    let start = std::time::Instant::now();
    let domain = Arc::new(DomainSpec::new(&config.lattice, &config.plan)?);
    let tables = Arc::new(StepperTables::new(
        &config.lattice,
        config.params.mass,
        config.dt(),
    ));
    let mut moments =
        EnsembleMoments::new(&domain, config.sample_steps(), config.dt(), config_hash.to_string());

    let chunk = rayon::current_num_threads().max(1);
    let ids: Vec<u64> = (0..config.n_trajectories as u64).collect();
    for block in ids.chunks(chunk) {
        let records: Vec<TrajectoryRecord> = block
            .par_iter()
            .map(|&id| run_trajectory(initial, config, &domain, &tables, id))
            .collect();
        for record in records {
            if record.is_valid() {
                moments.merge_valid(&record.samples);
            } else {
                moments.record_discarded(record.trajectory_id);
            }
        }
    }

    let discarded = moments.discarded.len();
    if discarded * 2 > config.n_trajectories || moments.n_valid < 2 {
        return Err(Error::TooManyDivergent { discarded, total: config.n_trajectories });
    }
    let stats = RunStats {
        requested: config.n_trajectories,
        valid: moments.n_valid,
        discarded,
        discarded_ids: moments.discarded.clone(),
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((moments, stats))
}
