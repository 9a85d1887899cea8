//! Jump-trace generation, majority-vote filtering and empirical
//! transition-matrix extraction.
//!
//! A jump trace records repeated readout blocks; each block probes every
//! state frequency once and assigns the state with the most blips. The
//! hidden nuclear state evolves by one draw from the cycle matrix per
//! block (the single readout event of the block carries the reload), so
//! consecutive block assignments sample the cycle matrix directly.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{QndError, Result};
use crate::linalg::RMat;
use crate::protocol::{assign_by_blips, AncillaModel};
use crate::transitions::TransitionMatrix;

/// Sequence of per-block readout outcomes.
#[derive(Debug, Clone)]
pub struct JumpTrace {
    /// State index assigned by each readout block.
    pub assigned: Vec<usize>,
    /// Ground-truth hidden state during each block (simulation only).
    pub true_states: Vec<usize>,
    /// Per-block, per-frequency blip record.
    pub blips: Vec<Vec<bool>>,
    /// m value of each state index.
    pub labels: Vec<f64>,
}

impl JumpTrace {
    pub fn dimension(&self) -> usize {
        self.labels.len()
    }

    pub fn len(&self) -> usize {
        self.assigned.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assigned.is_empty()
    }

    /// Fraction of blocks whose assignment matches the hidden state.
    pub fn assignment_accuracy(&self) -> f64 {
        if self.assigned.is_empty() {
            return 0.0;
        }
        let hits = self
            .assigned
            .iter()
            .zip(&self.true_states)
            .filter(|(a, t)| a == t)
            .count();
        hits as f64 / self.assigned.len() as f64
    }
}

/// Simulate a sequential readout experiment of `n_blocks` blocks.
pub fn generate_jump_trace(
    t_cycle: &TransitionMatrix,
    anc: &AncillaModel,
    n_blocks: usize,
    seed: u64,
) -> Result<JumpTrace> {
    if n_blocks == 0 {
        return Err(QndError::InvalidConfig(
            "n_blocks must be at least 1".into(),
        ));
    }
    let d = t_cycle.dimension();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = rng.random_range(0..d);

    let mut assigned = Vec::with_capacity(n_blocks);
    let mut true_states = Vec::with_capacity(n_blocks);
    let mut blip_record = Vec::with_capacity(n_blocks);
    let mut blips = vec![0u32; d];

    for _ in 0..n_blocks {
        // electron load for this block's readout event
        state = draw_column(t_cycle, state, &mut rng);
        true_states.push(state);

        blips.fill(0);
        let mut row = vec![false; d];
        for (freq, slot) in row.iter_mut().enumerate() {
            let p = if freq == state { anc.p_tp } else { anc.p_fp };
            if rng.random_bool(p) {
                blips[freq] = 1;
                *slot = true;
            }
        }
        assigned.push(assign_by_blips(&blips, t_cycle.labels()));
        blip_record.push(row);
    }

    Ok(JumpTrace {
        assigned,
        true_states,
        blips: blip_record,
        labels: t_cycle.labels().to_vec(),
    })
}

fn draw_column(t: &TransitionMatrix, state: usize, rng: &mut ChaCha8Rng) -> usize {
    let d = t.dimension();
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for row in 0..d {
        acc += t.prob(row, state);
        if u <= acc {
            return row;
        }
    }
    d - 1
}

/// Sliding-window mode filter over the assigned states. The window is
/// truncated symmetrically at the boundaries; ties keep the center
/// element. True states and blips pass through unchanged.
pub fn majority_filter(trace: &JumpTrace, kernel: usize) -> Result<JumpTrace> {
    if kernel.is_multiple_of(2) || kernel == 0 {
        return Err(QndError::InvalidConfig(format!(
            "majority filter kernel must be odd, got {kernel}"
        )));
    }
    let n = trace.assigned.len();
    let d = trace.dimension();
    let mut filtered = Vec::with_capacity(n);
    let mut counts = vec![0u32; d];

    for i in 0..n {
        let half = (kernel / 2).min(i).min(n - 1 - i);
        counts.fill(0);
        for &s in &trace.assigned[i - half..=i + half] {
            counts[s] += 1;
        }
        let max = *counts.iter().max().expect("non-empty window");
        let winners = counts.iter().filter(|&&c| c == max).count();
        if winners == 1 {
            let state = counts.iter().position(|&c| c == max).expect("winner");
            filtered.push(state);
        } else {
            filtered.push(trace.assigned[i]);
        }
    }

    Ok(JumpTrace {
        assigned: filtered,
        true_states: trace.true_states.clone(),
        blips: trace.blips.clone(),
        labels: trace.labels.clone(),
    })
}

/// Empirical column-stochastic matrix with multinomial uncertainties.
#[derive(Debug, Clone)]
pub struct EmpiricalTransition {
    pub matrix: TransitionMatrix,
    /// Per-entry standard error sqrt(p (1 - p) / N_col).
    pub stderr: RMat,
    /// Transition pairs observed out of each initial state.
    pub column_counts: Vec<u64>,
    /// Columns with no observations, filled with an identity column.
    pub flagged_columns: Vec<usize>,
}

/// Count consecutive-block (from, to) pairs and normalize each column.
pub fn extract_transition_matrix(trace: &JumpTrace) -> Result<EmpiricalTransition> {
    let n = trace.assigned.len();
    if n < 2 {
        return Err(QndError::InvalidConfig(
            "trace must contain at least 2 blocks".into(),
        ));
    }
    let d = trace.dimension();
    let mut counts = vec![0u64; d * d]; // counts[to + d * from]
    for w in trace.assigned.windows(2) {
        let (from, to) = (w[0], w[1]);
        counts[to + d * from] += 1;
    }

    let column_counts: Vec<u64> = (0..d)
        .map(|from| (0..d).map(|to| counts[to + d * from]).sum())
        .collect();

    let mut matrix = RMat::zeros(d, d);
    let mut stderr = RMat::zeros(d, d);
    let mut flagged = Vec::new();
    for from in 0..d {
        let total = column_counts[from];
        if total == 0 {
            matrix[(from, from)] = 1.0;
            flagged.push(from);
            continue;
        }
        for to in 0..d {
            let p = counts[to + d * from] as f64 / total as f64;
            matrix[(to, from)] = p;
            stderr[(to, from)] = (p * (1.0 - p) / total as f64).sqrt();
        }
    }

    Ok(EmpiricalTransition {
        matrix: TransitionMatrix::new(matrix, trace.labels.clone())?,
        stderr,
        column_counts,
        flagged_columns: flagged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::expm;
    use crate::spin::SpinQuantum;

    fn trace_of(assigned: Vec<usize>, d: usize) -> JumpTrace {
        let labels = SpinQuantum::new(d).unwrap().m_values();
        JumpTrace {
            true_states: assigned.clone(),
            blips: vec![vec![false; d]; assigned.len()],
            assigned,
            labels,
        }
    }

    #[test]
    fn ideal_trace_is_constant() {
        let t = TransitionMatrix::identity(SpinQuantum::spin_7_2());
        let anc = AncillaModel::new(1.0, 0.0, 0.0).unwrap();
        let trace = generate_jump_trace(&t, &anc, 500, 3).unwrap();
        let first = trace.assigned[0];
        assert!(trace.assigned.iter().all(|&s| s == first));
        assert_eq!(trace.assignment_accuracy(), 1.0);
    }

    #[test]
    fn filter_removes_single_outlier() {
        let trace = trace_of(vec![0, 0, 1, 0, 0], 4);
        let filtered = majority_filter(&trace, 5).unwrap();
        assert_eq!(filtered.assigned, vec![0, 0, 0, 0, 0]);
    }

    #[test]
    fn filter_keeps_plateaus_of_three() {
        let trace = trace_of(vec![0, 0, 1, 1, 1, 0, 0], 4);
        let filtered = majority_filter(&trace, 5).unwrap();
        assert_eq!(filtered.assigned, vec![0, 0, 1, 1, 1, 0, 0]);
    }

    #[test]
    fn filter_leaves_constant_sequence_unchanged() {
        let trace = trace_of(vec![2; 40], 4);
        let filtered = majority_filter(&trace, 5).unwrap();
        assert_eq!(filtered.assigned, trace.assigned);
    }

    #[test]
    fn filter_rejects_even_kernel() {
        let trace = trace_of(vec![0, 1], 2);
        assert!(majority_filter(&trace, 4).is_err());
        assert!(majority_filter(&trace, 0).is_err());
    }

    #[test]
    fn filter_matches_brute_force_window_mode() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let d = 5;
        let assigned: Vec<usize> = (0..300).map(|_| rng.random_range(0..d)).collect();
        let trace = trace_of(assigned.clone(), d);
        for kernel in [1usize, 3, 5, 7] {
            let filtered = majority_filter(&trace, kernel).unwrap();
            for i in 0..assigned.len() {
                let half = (kernel / 2).min(i).min(assigned.len() - 1 - i);
                let window = &assigned[i - half..=i + half];
                let mut counts = vec![0usize; d];
                for &s in window {
                    counts[s] += 1;
                }
                let max = *counts.iter().max().unwrap();
                let expect = if counts.iter().filter(|&&c| c == max).count() == 1 {
                    counts.iter().position(|&c| c == max).unwrap()
                } else {
                    assigned[i]
                };
                assert_eq!(filtered.assigned[i], expect, "kernel {kernel} pos {i}");
            }
        }
    }

    #[test]
    fn filter_is_idempotent_on_isolated_outliers() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        // long plateaus with isolated single-block outliers
        let mut assigned = Vec::new();
        for _ in 0..30 {
            let base = rng.random_range(0..4usize);
            for _ in 0..rng.random_range(8..15) {
                assigned.push(base);
            }
            assigned.push((base + 1) % 4);
            for _ in 0..rng.random_range(8..15) {
                assigned.push(base);
            }
        }
        let trace = trace_of(assigned, 4);
        let once = majority_filter(&trace, 5).unwrap();
        let twice = majority_filter(&once, 5).unwrap();
        assert_eq!(once.assigned, twice.assigned);
    }

    #[test]
    fn dark_counts_cause_isolated_misassignments_that_filtering_removes() {
        let t = TransitionMatrix::identity(SpinQuantum::spin_7_2());
        let anc = AncillaModel::new(1.0, 0.02, 0.0).unwrap();
        let trace = generate_jump_trace(&t, &anc, 4000, 9).unwrap();
        let raw_accuracy = trace.assignment_accuracy();
        let filtered = majority_filter(&trace, 5).unwrap();
        let filtered_accuracy = filtered.assignment_accuracy();
        // dark counts steal ties toward high-|m| states, so the raw trace
        // carries a solid misassignment rate that filtering mostly removes
        assert!(raw_accuracy < 0.96, "raw accuracy {raw_accuracy}");
        assert!(
            filtered_accuracy > raw_accuracy + 0.03,
            "{filtered_accuracy} vs {raw_accuracy}"
        );
        assert!(filtered_accuracy > 0.99, "filtered {filtered_accuracy}");
    }

    #[test]
    fn constant_trace_extracts_identity_column_with_flags() {
        let trace = trace_of(vec![2; 100], 4);
        let emp = extract_transition_matrix(&trace).unwrap();
        assert_eq!(emp.matrix.prob(2, 2), 1.0);
        assert_eq!(emp.flagged_columns, vec![0, 1, 3]);
        assert_eq!(emp.column_counts[2], 99);
        for col in [0usize, 1, 3] {
            assert_eq!(emp.matrix.prob(col, col), 1.0);
        }
    }

    #[test]
    fn extraction_rejects_short_traces() {
        let trace = trace_of(vec![0], 2);
        assert!(extract_transition_matrix(&trace).is_err());
    }

    #[test]
    fn extraction_recovers_generating_matrix_within_three_sigma() {
        // small chain with a known generator as the oracle
        let d = 4;
        let sq = SpinQuantum::new(d).unwrap();
        let mut g = RMat::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    g[(i, j)] = 0.01 / (1.0 + i.abs_diff(j) as f64);
                }
            }
        }
        for j in 0..d {
            let s: f64 = g.column(j).sum();
            g[(j, j)] -= s;
        }
        let t = TransitionMatrix::new(expm(&g), sq.m_values()).unwrap();
        let anc = AncillaModel::new(1.0, 0.0, 0.0).unwrap();
        let trace = generate_jump_trace(&t, &anc, 60_000, 17).unwrap();
        let emp = extract_transition_matrix(&trace).unwrap();
        assert!(emp.flagged_columns.is_empty());
        for from in 0..d {
            let n_col = emp.column_counts[from] as f64;
            for to in 0..d {
                let p = t.prob(to, from);
                let sigma = (p * (1.0 - p) / n_col).sqrt().max(emp.stderr[(to, from)]);
                let diff = (emp.matrix.prob(to, from) - p).abs();
                assert!(
                    diff <= 3.0 * sigma,
                    "entry ({to},{from}): diff {diff:.2e} > 3 sigma {:.2e}",
                    3.0 * sigma
                );
            }
        }
    }
}
