//! Monte-Carlo engine for the repeated (RR) and adaptive (AR) readout
//! protocols with an imperfect-ancilla model.
//!
//! Trials are independent; each derives its own counter-based RNG stream
//! from (seed, trial index), so results are bit-identical regardless of
//! execution order or the number of worker threads.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{QndError, Result};
use crate::transitions::{TransitionMatrix, DEFAULT_KAPPA};

/// Detector model for the ancilla electron readout.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AncillaModel {
    /// Probability of a blip when the probed state matches the nucleus.
    pub p_tp: f64,
    /// Dark-count probability per readout window.
    pub p_fp: f64,
    /// Probability that a dark count reflects a real tunneling event and
    /// therefore perturbs the nuclear state.
    pub fp_tunnel_prob: f64,
}

impl AncillaModel {
    pub fn new(p_tp: f64, p_fp: f64, fp_tunnel_prob: f64) -> Result<Self> {
        for (name, v) in [
            ("p_tp", p_tp),
            ("p_fp", p_fp),
            ("fp_tunnel_prob", fp_tunnel_prob),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(QndError::InvalidConfig(format!(
                    "{name} must lie in [0, 1], got {v}"
                )));
            }
        }
        Ok(Self {
            p_tp,
            p_fp,
            fp_tunnel_prob,
        })
    }

    /// Measured Sb-123 device values.
    pub fn sb123() -> Self {
        Self {
            p_tp: 0.968,
            p_fp: 0.019,
            fp_tunnel_prob: 0.0,
        }
    }

    /// Sweep parametrization anchored to the measured pair:
    /// p_tp = F, p_fp = 0.594 (1 - F).
    pub fn from_fidelity(f: f64) -> Result<Self> {
        Self::new(f, 0.594 * (1.0 - f), 0.0)
    }

    /// A detector that blips more on mismatches than matches.
    pub fn is_inverted(&self) -> bool {
        self.p_tp < self.p_fp
    }
}

impl Default for AncillaModel {
    fn default() -> Self {
        Self::sb123()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolKind {
    Rr,
    Ar,
}

impl std::fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ProtocolKind::Rr => write!(f, "rr"),
            ProtocolKind::Ar => write!(f, "ar"),
        }
    }
}

/// When the hidden state is perturbed by an electron reload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitPolicy {
    /// One reload per readout window (demon re-initialization every cycle).
    PerCycle,
    /// Reload only at the first electron load and after each
    /// true-positive blip.
    OnDemand,
}

/// Where the AR state scan resumes after a rejected guess.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeOrder {
    /// One cyclic scan pointer per trial; restarts continue the scan.
    ContinueAcrossRestarts,
    /// Every attempt rescans from state index 0.
    ResetEachAttempt,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub kind: ProtocolKind,
    /// RR: sweeps over all D frequencies; AR: dark-subspace shots.
    pub n_shots: usize,
    /// AR rejection threshold; defaults to ceil(n_shots / 2).
    pub threshold: Option<usize>,
    /// Defaults to PerCycle for RR and OnDemand for AR.
    pub init_policy: Option<InitPolicy>,
    /// Tunnel events folded into each reload of the cycle matrix.
    pub kappa: f64,
    /// AR: restarts allowed before the guess is assigned anyway.
    pub max_restarts: usize,
    pub probe_order: ProbeOrder,
}

impl ProtocolConfig {
    pub fn rr(n_shots: usize) -> Self {
        Self {
            kind: ProtocolKind::Rr,
            n_shots,
            threshold: None,
            init_policy: None,
            kappa: DEFAULT_KAPPA,
            max_restarts: 10,
            probe_order: ProbeOrder::ContinueAcrossRestarts,
        }
    }

    pub fn ar(n_shots: usize) -> Self {
        Self {
            kind: ProtocolKind::Ar,
            ..Self::rr(n_shots)
        }
    }

    pub fn effective_threshold(&self) -> usize {
        self.threshold.unwrap_or(self.n_shots.div_ceil(2))
    }

    pub fn effective_init_policy(&self) -> InitPolicy {
        self.init_policy.unwrap_or(match self.kind {
            ProtocolKind::Rr => InitPolicy::PerCycle,
            ProtocolKind::Ar => InitPolicy::OnDemand,
        })
    }

    fn validate(&self) -> Result<()> {
        if self.n_shots == 0 {
            return Err(QndError::InvalidConfig("n_shots must be at least 1".into()));
        }
        let th = self.effective_threshold();
        if th == 0 || th > self.n_shots {
            return Err(QndError::InvalidConfig(format!(
                "threshold {th} outside [1, {}]",
                self.n_shots
            )));
        }
        if !self.kappa.is_finite() || self.kappa < 0.0 {
            return Err(QndError::InvalidConfig(format!(
                "kappa must be non-negative, got {}",
                self.kappa
            )));
        }
        Ok(())
    }
}

/// Aggregate outcome of a batch of simulated readouts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimResult {
    pub fidelity_per_state: Vec<f64>,
    pub trials_per_state: Vec<u64>,
    pub fidelity_avg: f64,
    /// sqrt(F (1 - F) / n_trials)
    pub fidelity_stderr: f64,
    pub mean_qnd_cycles: f64,
    /// AR: rejected attempts / total attempts.
    pub rejection_rate: Option<f64>,
    /// AR: mean state-scan length per attempt.
    pub mean_sub1_cycles: Option<f64>,
    /// AR trials that exhausted max_restarts and kept the last guess.
    pub forced_assignments: u64,
    pub n_trials: u64,
    pub seed: u64,
}

/// Per-column sampling tables for a transition matrix.
struct ColumnSampler {
    dimension: usize,
    cdf: Vec<f64>, // column-major, cdf[col * d + row]
}

impl ColumnSampler {
    fn new(t: &TransitionMatrix) -> Self {
        let d = t.dimension();
        let mut cdf = vec![0.0; d * d];
        for col in 0..d {
            let mut acc = 0.0;
            for row in 0..d {
                acc += t.prob(row, col);
                cdf[col * d + row] = acc;
            }
            cdf[col * d + d - 1] = 1.0; // guard against round-off at the top
        }
        Self { dimension: d, cdf }
    }

    #[inline]
    fn draw(&self, state: usize, rng: &mut ChaCha8Rng) -> usize {
        let u: f64 = rng.random();
        let base = state * self.dimension;
        for row in 0..self.dimension {
            if u <= self.cdf[base + row] {
                return row;
            }
        }
        self.dimension - 1
    }
}

fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

#[derive(Clone)]
struct Tally {
    correct_per_state: Vec<u64>,
    trials_per_state: Vec<u64>,
    cycles: u64,
    sub1_cycles: u64,
    attempts: u64,
    rejections: u64,
    forced: u64,
}

impl Tally {
    fn new(d: usize) -> Self {
        Self {
            correct_per_state: vec![0; d],
            trials_per_state: vec![0; d],
            cycles: 0,
            sub1_cycles: 0,
            attempts: 0,
            rejections: 0,
            forced: 0,
        }
    }

    fn merge(mut self, other: Self) -> Self {
        for (a, b) in self
            .correct_per_state
            .iter_mut()
            .zip(&other.correct_per_state)
        {
            *a += b;
        }
        for (a, b) in self
            .trials_per_state
            .iter_mut()
            .zip(&other.trials_per_state)
        {
            *a += b;
        }
        self.cycles += other.cycles;
        self.sub1_cycles += other.sub1_cycles;
        self.attempts += other.attempts;
        self.rejections += other.rejections;
        self.forced += other.forced;
        self
    }
}

struct TrialOutcome {
    initial: usize,
    assigned: usize,
    cycles: u64,
    sub1_cycles: u64,
    attempts: u64,
    rejections: u64,
    forced: bool,
}

/// A real tunnel event always reloads the electron; a dark count does so
/// only with the configured probability.
#[inline]
fn blip_reloads(real_event: bool, anc: &AncillaModel, rng: &mut ChaCha8Rng) -> bool {
    real_event || (anc.fp_tunnel_prob > 0.0 && rng.random_bool(anc.fp_tunnel_prob))
}

fn rr_trial(
    sampler: &ColumnSampler,
    labels: &[f64],
    anc: &AncillaModel,
    cfg: &ProtocolConfig,
    rng: &mut ChaCha8Rng,
) -> TrialOutcome {
    let d = sampler.dimension;
    let initial = rng.random_range(0..d);
    let mut state = initial;
    let per_cycle = cfg.effective_init_policy() == InitPolicy::PerCycle;
    let mut loaded = false;
    let mut blips = vec![0u32; d];
    let mut cycles = 0u64;

    for _ in 0..cfg.n_shots {
        for (freq, blip_count) in blips.iter_mut().enumerate() {
            cycles += 1;
            if per_cycle || !loaded {
                state = sampler.draw(state, rng);
                loaded = true;
            }
            let hit = freq == state;
            let blip = rng.random_bool(if hit { anc.p_tp } else { anc.p_fp });
            if blip {
                *blip_count += 1;
                if !per_cycle && blip_reloads(hit, anc, rng) {
                    state = sampler.draw(state, rng);
                }
            }
        }
    }

    TrialOutcome {
        initial,
        assigned: assign_by_blips(&blips, labels),
        cycles,
        sub1_cycles: 0,
        attempts: 0,
        rejections: 0,
        forced: false,
    }
}

/// Highest blip count wins; ties go to the larger |m| and then to the
/// positive m.
pub(crate) fn assign_by_blips(blips: &[u32], labels: &[f64]) -> usize {
    let max = *blips.iter().max().expect("non-empty blip record");
    let mut best: Option<usize> = None;
    for (idx, &count) in blips.iter().enumerate() {
        if count != max {
            continue;
        }
        match best {
            None => best = Some(idx),
            Some(cur) => {
                let (ca, cm) = (labels[cur].abs(), labels[cur]);
                let (na, nm) = (labels[idx].abs(), labels[idx]);
                if na > ca || (na == ca && nm > cm) {
                    best = Some(idx);
                }
            }
        }
    }
    best.expect("at least one state")
}

fn ar_trial(
    sampler: &ColumnSampler,
    anc: &AncillaModel,
    cfg: &ProtocolConfig,
    rng: &mut ChaCha8Rng,
) -> TrialOutcome {
    let d = sampler.dimension;
    let initial = rng.random_range(0..d);
    let mut state = initial;
    let on_demand = cfg.effective_init_policy() == InitPolicy::OnDemand;
    let threshold = cfg.effective_threshold() as u32;

    let mut probe = 0usize;
    let mut first_load_done = false;
    let mut cycles = 0u64;
    let mut sub1_cycles = 0u64;
    let mut attempts = 0u64;
    let mut rejections = 0u64;

    loop {
        attempts += 1;
        if cfg.probe_order == ProbeOrder::ResetEachAttempt {
            probe = 0;
        }

        // subroutine 1: scan states until one blip
        if on_demand && !first_load_done {
            state = sampler.draw(state, rng);
            first_load_done = true;
        }
        let guess = loop {
            cycles += 1;
            sub1_cycles += 1;
            if !on_demand {
                state = sampler.draw(state, rng);
            }
            let hit = probe == state;
            let blip = rng.random_bool(if hit { anc.p_tp } else { anc.p_fp });
            let probed = probe;
            probe = (probe + 1) % d;
            if blip {
                if on_demand && blip_reloads(hit, anc, rng) {
                    state = sampler.draw(state, rng);
                }
                break probed;
            }
        };

        // subroutine 2: collective dark-subspace shots
        let mut blips = 0u32;
        for _ in 0..cfg.n_shots {
            cycles += 1;
            if !on_demand {
                state = sampler.draw(state, rng);
            }
            let in_dark = state != guess;
            let blip = rng.random_bool(if in_dark { anc.p_tp } else { anc.p_fp });
            if blip {
                blips += 1;
                if on_demand && blip_reloads(in_dark, anc, rng) {
                    state = sampler.draw(state, rng);
                }
            }
        }

        if blips >= threshold {
            rejections += 1;
            if attempts > cfg.max_restarts as u64 {
                return TrialOutcome {
                    initial,
                    assigned: guess,
                    cycles,
                    sub1_cycles,
                    attempts,
                    rejections,
                    forced: true,
                };
            }
            continue;
        }

        return TrialOutcome {
            initial,
            assigned: guess,
            cycles,
            sub1_cycles,
            attempts,
            rejections,
            forced: false,
        };
    }
}

fn run_batch<F>(
    t_cycle: &TransitionMatrix,
    cfg: &ProtocolConfig,
    n_trials: u64,
    seed: u64,
    trial_fn: F,
) -> SimResult
where
    F: Fn(&ColumnSampler, &mut ChaCha8Rng) -> TrialOutcome + Sync,
{
    let d = t_cycle.dimension();
    let sampler = ColumnSampler::new(t_cycle);

    let tally = (0..n_trials)
        .into_par_iter()
        .fold(
            || Tally::new(d),
            |mut tally, trial| {
                let mut rng = trial_rng(seed, trial);
                let out = trial_fn(&sampler, &mut rng);
                tally.trials_per_state[out.initial] += 1;
                if out.assigned == out.initial {
                    tally.correct_per_state[out.initial] += 1;
                }
                tally.cycles += out.cycles;
                tally.sub1_cycles += out.sub1_cycles;
                tally.attempts += out.attempts;
                tally.rejections += out.rejections;
                tally.forced += out.forced as u64;
                tally
            },
        )
        .reduce(|| Tally::new(d), Tally::merge);

    let total_correct: u64 = tally.correct_per_state.iter().sum();
    let fidelity_avg = total_correct as f64 / n_trials as f64;
    let is_ar = cfg.kind == ProtocolKind::Ar;

    SimResult {
        fidelity_per_state: tally
            .correct_per_state
            .iter()
            .zip(&tally.trials_per_state)
            .map(|(&c, &n)| if n == 0 { 0.0 } else { c as f64 / n as f64 })
            .collect(),
        trials_per_state: tally.trials_per_state,
        fidelity_avg,
        fidelity_stderr: (fidelity_avg * (1.0 - fidelity_avg) / n_trials as f64).sqrt(),
        mean_qnd_cycles: tally.cycles as f64 / n_trials as f64,
        rejection_rate: is_ar.then(|| tally.rejections as f64 / tally.attempts as f64),
        mean_sub1_cycles: is_ar.then(|| tally.sub1_cycles as f64 / tally.attempts as f64),
        forced_assignments: tally.forced,
        n_trials,
        seed,
    }
}

/// Repeated readout: n_shots sweeps over all D conditional frequencies.
pub fn simulate_rr(
    t_cycle: &TransitionMatrix,
    anc: &AncillaModel,
    cfg: &ProtocolConfig,
    n_trials: u64,
    seed: u64,
) -> Result<SimResult> {
    if cfg.kind != ProtocolKind::Rr {
        return Err(QndError::InvalidConfig(
            "simulate_rr needs kind = rr".into(),
        ));
    }
    cfg.validate()?;
    if n_trials == 0 {
        return Err(QndError::InvalidConfig(
            "n_trials must be at least 1".into(),
        ));
    }
    let labels = t_cycle.labels().to_vec();
    Ok(run_batch(t_cycle, cfg, n_trials, seed, |sampler, rng| {
        rr_trial(sampler, &labels, anc, cfg, rng)
    }))
}

/// Adaptive readout: scan until one blip, then probe the complementary
/// dark subspace n_shots times and accept below threshold.
pub fn simulate_ar(
    t_cycle: &TransitionMatrix,
    anc: &AncillaModel,
    cfg: &ProtocolConfig,
    n_trials: u64,
    seed: u64,
) -> Result<SimResult> {
    if cfg.kind != ProtocolKind::Ar {
        return Err(QndError::InvalidConfig(
            "simulate_ar needs kind = ar".into(),
        ));
    }
    cfg.validate()?;
    if n_trials == 0 {
        return Err(QndError::InvalidConfig(
            "n_trials must be at least 1".into(),
        ));
    }
    Ok(run_batch(t_cycle, cfg, n_trials, seed, |sampler, rng| {
        ar_trial(sampler, anc, cfg, rng)
    }))
}

/// One row of an ancilla-fidelity sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub protocol: ProtocolKind,
    pub ancilla_fidelity: f64,
    pub n_shots: usize,
    pub fidelity: f64,
    pub fidelity_stderr: f64,
    pub mean_qnd_cycles: f64,
    pub rejection_rate: Option<f64>,
    /// Marks the best n_shots for this (protocol, fidelity) row; ties go
    /// to the smaller n_shots.
    pub optimal: bool,
}

/// Full factorial sweep over protocols, ancilla fidelities and shot
/// counts, using p_tp = F and p_fp = 0.594 (1 - F).
pub fn ancilla_sweep(
    t_cycle: &TransitionMatrix,
    kinds: &[ProtocolKind],
    shots_grid: &[usize],
    fidelity_grid: &[f64],
    n_trials: u64,
    seed: u64,
) -> Result<Vec<SweepPoint>> {
    if kinds.is_empty() {
        return Err(QndError::EmptyGrid("protocols"));
    }
    if shots_grid.is_empty() {
        return Err(QndError::EmptyGrid("n_shots"));
    }
    if fidelity_grid.is_empty() {
        return Err(QndError::EmptyGrid("ancilla fidelities"));
    }
    for &f in fidelity_grid {
        if !(f > 0.5 && f <= 1.0) {
            return Err(QndError::InvalidConfig(format!(
                "ancilla fidelity {f} outside (0.5, 1]"
            )));
        }
    }

    let mut points = Vec::new();
    let mut point_index = 0u64;
    for &kind in kinds {
        for &fid in fidelity_grid {
            let anc = AncillaModel::from_fidelity(fid)?;
            let row_start = points.len();
            for &shots in shots_grid {
                let point_seed = splitmix64(seed ^ splitmix64(point_index));
                point_index += 1;
                let result = match kind {
                    ProtocolKind::Rr => simulate_rr(
                        t_cycle,
                        &anc,
                        &ProtocolConfig::rr(shots),
                        n_trials,
                        point_seed,
                    )?,
                    ProtocolKind::Ar => simulate_ar(
                        t_cycle,
                        &anc,
                        &ProtocolConfig::ar(shots),
                        n_trials,
                        point_seed,
                    )?,
                };
                points.push(SweepPoint {
                    protocol: kind,
                    ancilla_fidelity: fid,
                    n_shots: shots,
                    fidelity: result.fidelity_avg,
                    fidelity_stderr: result.fidelity_stderr,
                    mean_qnd_cycles: result.mean_qnd_cycles,
                    rejection_rate: result.rejection_rate,
                    optimal: false,
                });
            }
            let mut best = row_start;
            for idx in row_start + 1..points.len() {
                if points[idx].fidelity > points[best].fidelity {
                    best = idx;
                }
            }
            points[best].optimal = true;
        }
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin::SpinQuantum;

    fn ideal() -> (TransitionMatrix, AncillaModel) {
        (
            TransitionMatrix::identity(SpinQuantum::spin_7_2()),
            AncillaModel::new(1.0, 0.0, 0.0).unwrap(),
        )
    }

    #[test]
    fn rr_is_perfect_in_the_ideal_limit() {
        let (t, anc) = ideal();
        let r = simulate_rr(&t, &anc, &ProtocolConfig::rr(3), 2000, 7).unwrap();
        assert_eq!(r.fidelity_avg, 1.0);
        assert_eq!(r.mean_qnd_cycles, 24.0);
        for f in &r.fidelity_per_state {
            assert_eq!(*f, 1.0);
        }
    }

    #[test]
    fn rr_counts_exactly_d_times_n_shots_cycles() {
        let t = TransitionMatrix::identity(SpinQuantum::spin_7_2());
        let anc = AncillaModel::sb123();
        let r = simulate_rr(&t, &anc, &ProtocolConfig::rr(5), 500, 7).unwrap();
        assert_eq!(r.mean_qnd_cycles, 40.0);
    }

    #[test]
    fn ar_is_perfect_in_the_ideal_limit() {
        let (t, anc) = ideal();
        let r = simulate_ar(&t, &anc, &ProtocolConfig::ar(2), 2000, 8).unwrap();
        assert_eq!(r.fidelity_avg, 1.0);
        assert_eq!(r.rejection_rate, Some(0.0));
        assert_eq!(r.forced_assignments, 0);
        // scan length per attempt is guess index + 1; uniform states over
        // D = 8 average to 4.5
        let sub1 = r.mean_sub1_cycles.unwrap();
        assert!((sub1 - 4.5).abs() < 0.15, "sub1 = {sub1}");
        assert!((r.mean_qnd_cycles - (sub1 + 2.0)).abs() < 1e-9);
    }

    #[test]
    fn ar_cost_identity_holds() {
        let t = crate::transitions::t_qnd(
            &crate::params::PhysicalParams::sb123(),
            &crate::params::QuadrupoleTensor::sb123(),
            SpinQuantum::spin_7_2(),
            DEFAULT_KAPPA,
        )
        .unwrap();
        let anc = AncillaModel::sb123();
        let r = simulate_ar(&t, &anc, &ProtocolConfig::ar(2), 20_000, 9).unwrap();
        assert_eq!(r.forced_assignments, 0);
        let lhs = r.mean_qnd_cycles * (1.0 - r.rejection_rate.unwrap());
        let rhs = r.mean_sub1_cycles.unwrap() + 2.0;
        assert!((lhs - rhs).abs() < 1e-9, "lhs {lhs} rhs {rhs}");
    }

    #[test]
    fn results_are_deterministic_and_thread_invariant() {
        let t = crate::transitions::t_qnd(
            &crate::params::PhysicalParams::sb123(),
            &crate::params::QuadrupoleTensor::sb123(),
            SpinQuantum::spin_7_2(),
            DEFAULT_KAPPA,
        )
        .unwrap();
        let anc = AncillaModel::sb123();
        let cfg = ProtocolConfig::ar(2);

        let base = simulate_ar(&t, &anc, &cfg, 5000, 42).unwrap();
        let again = simulate_ar(&t, &anc, &cfg, 5000, 42).unwrap();
        assert_eq!(base.fidelity_avg, again.fidelity_avg);
        assert_eq!(base.mean_qnd_cycles, again.mean_qnd_cycles);
        assert_eq!(base.rejection_rate, again.rejection_rate);

        for threads in [1usize, 3] {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            let r = pool.install(|| simulate_ar(&t, &anc, &cfg, 5000, 42).unwrap());
            assert_eq!(r.fidelity_avg, base.fidelity_avg);
            assert_eq!(r.mean_qnd_cycles, base.mean_qnd_cycles);
        }

        let other_seed = simulate_ar(&t, &anc, &cfg, 5000, 43).unwrap();
        assert_ne!(base.fidelity_avg, other_seed.fidelity_avg);
    }

    #[test]
    fn fidelity_is_monotone_in_true_positive_rate() {
        let t = crate::transitions::t_qnd(
            &crate::params::PhysicalParams::sb123(),
            &crate::params::QuadrupoleTensor::sb123(),
            SpinQuantum::spin_7_2(),
            DEFAULT_KAPPA,
        )
        .unwrap();
        for kind in [ProtocolKind::Rr, ProtocolKind::Ar] {
            let mut last: Option<(f64, f64)> = None;
            for p_tp in [0.85, 0.93, 0.99] {
                let anc = AncillaModel::new(p_tp, 0.019, 0.0).unwrap();
                let r = match kind {
                    ProtocolKind::Rr => {
                        simulate_rr(&t, &anc, &ProtocolConfig::rr(3), 20_000, 11).unwrap()
                    }
                    ProtocolKind::Ar => {
                        simulate_ar(&t, &anc, &ProtocolConfig::ar(2), 20_000, 11).unwrap()
                    }
                };
                if let Some((prev, prev_se)) = last {
                    assert!(
                        r.fidelity_avg >= prev - 2.0 * (prev_se + r.fidelity_stderr),
                        "{kind}: {} then {}",
                        prev,
                        r.fidelity_avg
                    );
                }
                last = Some((r.fidelity_avg, r.fidelity_stderr));
            }
        }
    }

    #[test]
    fn sweep_marks_one_optimum_per_row_and_validates_grids() {
        let t = TransitionMatrix::identity(SpinQuantum::spin_7_2());
        let pts = ancilla_sweep(
            &t,
            &[ProtocolKind::Rr, ProtocolKind::Ar],
            &[1, 2, 3],
            &[0.9, 0.99],
            200,
            5,
        )
        .unwrap();
        assert_eq!(pts.len(), 12);
        for kind in [ProtocolKind::Rr, ProtocolKind::Ar] {
            for fid in [0.9, 0.99] {
                let marked = pts
                    .iter()
                    .filter(|p| p.protocol == kind && p.ancilla_fidelity == fid && p.optimal)
                    .count();
                assert_eq!(marked, 1);
            }
        }
        assert!(ancilla_sweep(&t, &[], &[1], &[0.9], 10, 5).is_err());
        assert!(ancilla_sweep(&t, &[ProtocolKind::Rr], &[], &[0.9], 10, 5).is_err());
        assert!(ancilla_sweep(&t, &[ProtocolKind::Rr], &[1], &[], 10, 5).is_err());
        assert!(ancilla_sweep(&t, &[ProtocolKind::Rr], &[1], &[0.4], 10, 5).is_err());
    }

    #[test]
    fn perfect_ancilla_makes_ar_insensitive_to_shot_count() {
        let t = crate::transitions::t_qnd(
            &crate::params::PhysicalParams::sb123(),
            &crate::params::QuadrupoleTensor::sb123(),
            SpinQuantum::spin_7_2(),
            DEFAULT_KAPPA,
        )
        .unwrap();
        let pts = ancilla_sweep(&t, &[ProtocolKind::Ar], &[1, 3, 6], &[1.0], 20_000, 15).unwrap();
        let max = pts.iter().map(|p| p.fidelity).fold(f64::MIN, f64::max);
        let min = pts.iter().map(|p| p.fidelity).fold(f64::MAX, f64::min);
        let stderr = pts.iter().map(|p| p.fidelity_stderr).fold(0.0, f64::max);
        assert!(
            max - min <= 4.0 * stderr.max(1e-4),
            "spread {} vs stderr {}",
            max - min,
            stderr
        );
    }

    #[test]
    fn config_validation_rejects_bad_thresholds() {
        let t = TransitionMatrix::identity(SpinQuantum::spin_7_2());
        let anc = AncillaModel::sb123();
        let mut cfg = ProtocolConfig::ar(2);
        cfg.threshold = Some(3);
        assert!(simulate_ar(&t, &anc, &cfg, 10, 1).is_err());
        let mut cfg = ProtocolConfig::ar(0);
        cfg.threshold = None;
        assert!(simulate_ar(&t, &anc, &cfg, 10, 1).is_err());
        assert!(simulate_rr(&t, &anc, &ProtocolConfig::ar(2), 10, 1).is_err());
    }

    #[test]
    fn tie_break_prefers_larger_m_then_positive() {
        let labels: Vec<f64> = vec![3.5, 2.5, 1.5, 0.5, -0.5, -1.5, -2.5, -3.5];
        // all-zero blips: every state ties; +7/2 wins
        assert_eq!(assign_by_blips(&[0; 8], &labels), 0);
        // tie between -7/2 and +5/2: |m| favors -7/2
        let mut blips = [0u32; 8];
        blips[7] = 2;
        blips[1] = 2;
        assert_eq!(assign_by_blips(&blips, &labels), 7);
        // tie between m = +3/2 and m = -3/2: positive wins
        let mut blips = [0u32; 8];
        blips[2] = 3;
        blips[5] = 3;
        assert_eq!(assign_by_blips(&blips, &labels), 2);
    }
}
