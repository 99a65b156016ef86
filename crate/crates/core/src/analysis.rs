//! Detection-probability theory, Monte Carlo validation, and round-log
//! post-processing.
//!
//! A server that omits a fraction `rho` of clients in an attacked round is
//! caught there iff the (uniformly scheduled, anonymous) verifier falls into
//! the omitted set. Over `k` attacked rounds the trials are independent, so
//!
//! ```text
//! P_detect = 1 - (1 - rho)^k
//! ```
//!
//! [`monte_carlo_detection`] re-derives this by simulating the schedule and
//! victim draws directly. When `rho * n` is not an integer the simulation
//! omits `ceil(rho * n)` clients, so the report's analytic column uses the
//! effective per-round probability `ceil(rho * n) / n`.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::protocol::{ProtocolConfig, RoundRecord, Verdict};
use crate::seeds;

/// Rounds excluded from acceptance metrics while the model first fits the
/// main task and proof signals stabilise.
pub const WARMUP_ROUNDS: usize = 5;

/// Analytic vs simulated detection probability for one `(rho, k)` point.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionReport {
    pub rho: f64,
    pub k: u32,
    pub analytic_prob: f64,
    pub monte_carlo_prob: Option<f64>,
    pub trials: Option<u64>,
    pub std_error: Option<f64>,
}

/// `1 - (1 - rho)^k`, the probability that omitting a `rho` fraction of
/// clients is detected within `k` attacked rounds. Nondecreasing in both
/// arguments.
pub fn analytic_detection_prob(rho: f64, k: u32) -> Result<f64> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::OutOfRange("rho"));
    }
    Ok(1.0 - libm::pow(1.0 - rho, k as f64))
}

/// Simulates the schedule/victim process directly: each round draws a
/// uniform verifier and `ceil(rho * n)` distinct victims; a trial detects if
/// the verifier is ever a victim. Reports the empirical frequency with its
/// binomial standard error alongside the matching analytic value.
pub fn monte_carlo_detection(
    rho: f64,
    k: u32,
    n_clients: usize,
    trials: u64,
    seed: u64,
) -> Result<DetectionReport> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::OutOfRange("rho"));
    }
    if n_clients == 0 {
        return Err(Error::InvalidConfig("n_clients must be > 0".into()));
    }
    if trials == 0 {
        return Err(Error::InvalidConfig("trials must be > 0".into()));
    }
    let victims_per_round = (libm::ceil(rho * n_clients as f64) as usize).min(n_clients);
    let effective_rho = victims_per_round as f64 / n_clients as f64;

    let mut rng = seeds::rng(seed);
    let mut detected = 0u64;
    for _ in 0..trials {
        for _ in 0..k {
            let verifier = rng.gen_range(0..n_clients);
            let victims = rand::seq::index::sample(&mut rng, n_clients, victims_per_round);
            if victims.iter().any(|v| v == verifier) {
                detected += 1;
                break;
            }
        }
    }
    let p_hat = detected as f64 / trials as f64;
    let std_error = libm::sqrt(p_hat * (1.0 - p_hat) / trials as f64);
    Ok(DetectionReport {
        rho,
        k,
        analytic_prob: analytic_detection_prob(effective_rho, k)?,
        monte_carlo_prob: Some(p_hat),
        trials: Some(trials),
        std_error: Some(std_error),
    })
}

/// A finished run's round log.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricLog {
    pub records: Vec<RoundRecord>,
}

/// Client-by-round ASR matrix with companion masks: which cells belong to
/// that round's verifier, and which rounds saw omissions or tampering.
#[derive(Debug, Clone, PartialEq)]
pub struct AsrMatrix {
    pub n_clients: usize,
    pub rounds: usize,
    /// Row-major `n_clients x rounds`.
    values: Vec<f64>,
    /// Row-major `n_clients x rounds`; true on the verifier's cell.
    verifier_cells: Vec<bool>,
    /// Per round: true if the server attacked it.
    attacked_rounds: Vec<bool>,
}

impl AsrMatrix {
    pub fn value(&self, client: usize, round: usize) -> f64 {
        self.values[client * self.rounds + round]
    }

    pub fn is_verifier_cell(&self, client: usize, round: usize) -> bool {
        self.verifier_cells[client * self.rounds + round]
    }

    pub fn round_attacked(&self, round: usize) -> bool {
        self.attacked_rounds[round]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Reshapes per-round `per_client_asr` rows into the client-by-round matrix.
/// Errors if any record lacks the per-client row or the rows are ragged.
pub fn asr_matrix(log: &MetricLog) -> Result<AsrMatrix> {
    if log.records.is_empty() {
        return Err(Error::Empty("metric log"));
    }
    let rounds = log.records.len();
    let n_clients = log.records[0]
        .per_client_asr
        .as_ref()
        .ok_or(Error::RaggedLog)?
        .len();
    let mut values = vec![0.0; n_clients * rounds];
    let mut verifier_cells = vec![false; n_clients * rounds];
    let mut attacked_rounds = vec![false; rounds];
    for (t, record) in log.records.iter().enumerate() {
        let row = record.per_client_asr.as_ref().ok_or(Error::RaggedLog)?;
        if row.len() != n_clients || record.verifier_id >= n_clients {
            return Err(Error::RaggedLog);
        }
        for (i, &asr) in row.iter().enumerate() {
            values[i * rounds + t] = asr;
        }
        verifier_cells[record.verifier_id * rounds + t] = true;
        attacked_rounds[t] = !record.omitted_ids.is_empty();
    }
    Ok(AsrMatrix {
        n_clients,
        rounds,
        values,
        verifier_cells,
        attacked_rounds,
    })
}

/// Post-warmup tallies of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub total_rounds: usize,
    /// Rounds the server attacked (omitted or tampered someone).
    pub attacked_rounds: usize,
    /// Attacked rounds the verifier rejected.
    pub detected_rounds: usize,
    /// Attacked rounds that slipped through with an accept.
    pub missed_rounds: usize,
    /// Post-warmup rounds where the verifier's update was included.
    pub honest_inclusion_rounds: usize,
    /// ...of which the verifier accepted (completeness).
    pub honest_accepts: usize,
    pub honest_accept_rate: f64,
    /// Any-round reject count (drives the CLI detection exit code).
    pub rejected_rounds: usize,
    /// Clean accuracy of the last round's global model.
    pub final_clean_accuracy: f64,
    /// Injections with a full observation window until the owner's next
    /// verifier turn.
    pub injections_tracked: usize,
    /// ...whose trigger ASR had decayed below gamma by then.
    pub injections_forgotten: usize,
    /// Median rounds until the injected trigger first dropped below gamma.
    pub median_rounds_to_forget: Option<f64>,
}

/// Aggregates a run's records into acceptance-facing statistics. Rounds
/// before [`WARMUP_ROUNDS`] are excluded from the completeness rate, matching
/// the instability of early training; attack tallies cover all rounds.
pub fn summarize(log: &MetricLog, cfg: &ProtocolConfig) -> Result<RunSummary> {
    if log.records.is_empty() {
        return Err(Error::Empty("metric log"));
    }
    let mut attacked = 0;
    let mut detected = 0;
    let mut missed = 0;
    let mut honest_inclusion = 0;
    let mut honest_accepts = 0;
    let mut rejected = 0;
    for record in &log.records {
        let is_attacked = !record.omitted_ids.is_empty();
        let verifier_hit = record.omitted_ids.contains(&record.verifier_id);
        if record.verdict == Verdict::Reject {
            rejected += 1;
        }
        if is_attacked {
            attacked += 1;
            match record.verdict {
                Verdict::Reject => detected += 1,
                Verdict::Accept => missed += 1,
            }
        }
        if record.round >= WARMUP_ROUNDS && !verifier_hit {
            honest_inclusion += 1;
            if record.verdict == Verdict::Accept {
                honest_accepts += 1;
            }
        }
    }

    let (tracked, forgotten, median) = ephemerality(log, cfg);

    Ok(RunSummary {
        total_rounds: log.records.len(),
        attacked_rounds: attacked,
        detected_rounds: detected,
        missed_rounds: missed,
        honest_inclusion_rounds: honest_inclusion,
        honest_accepts,
        honest_accept_rate: if honest_inclusion > 0 {
            honest_accepts as f64 / honest_inclusion as f64
        } else {
            0.0
        },
        rejected_rounds: rejected,
        final_clean_accuracy: log.records.last().expect("nonempty").clean_accuracy,
        injections_tracked: tracked,
        injections_forgotten: forgotten,
        median_rounds_to_forget: median,
    })
}

/// Per-injection forgetting statistics.
///
/// An injection at round `t` by client `v` (verifier, not omitted) is
/// tracked when the log still covers round `t + n - 1` — the last global
/// model before `v` injects again. It counts as forgotten if the trigger's
/// ASR is below gamma there, i.e. the proof has decayed by round `t + n`
/// without re-injection.
fn ephemerality(log: &MetricLog, cfg: &ProtocolConfig) -> (usize, usize, Option<f64>) {
    let n = cfg.n_clients;
    let gamma = cfg.threshold;
    let matrix = match asr_matrix(log) {
        Ok(m) => m,
        Err(_) => return (0, 0, None),
    };
    if !cfg.verification {
        return (0, 0, None);
    }
    let mut tracked = 0;
    let mut forgotten = 0;
    let mut first_drop: Vec<f64> = Vec::new();
    for record in &log.records {
        let t = record.round;
        let v = record.verifier_id;
        if record.omitted_ids.contains(&v) {
            continue; // the proof never reached the global model
        }
        if t + n - 1 >= matrix.rounds {
            continue; // window extends past the log
        }
        tracked += 1;
        if matrix.value(v, t + n - 1) < gamma {
            forgotten += 1;
        }
        if let Some(j) = (1..n).find(|&j| matrix.value(v, t + j) < gamma) {
            first_drop.push(j as f64);
        }
    }
    let median = if first_drop.is_empty() {
        None
    } else {
        first_drop.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        let mid = first_drop.len() / 2;
        Some(if first_drop.len() % 2 == 1 {
            first_drop[mid]
        } else {
            0.5 * (first_drop[mid - 1] + first_drop[mid])
        })
    };
    (tracked, forgotten, median)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::BTreeSet;
    use proptest::prelude::*;

    #[test]
    fn analytic_boundary_cases() {
        assert_eq!(analytic_detection_prob(0.3, 0).unwrap(), 0.0);
        assert_eq!(analytic_detection_prob(1.0, 1).unwrap(), 1.0);
        assert_eq!(analytic_detection_prob(0.0, 50).unwrap(), 0.0);
        assert!(analytic_detection_prob(-0.1, 1).is_err());
        assert!(analytic_detection_prob(1.1, 1).is_err());
    }

    #[test]
    fn analytic_two_round_half_matches_enumeration() {
        // Enumerate the four equally weighted two-trial outcomes with
        // per-trial detection probability 1/2: detection in 3 of 4.
        let mut detected = 0;
        for first in [false, true] {
            for second in [false, true] {
                if first || second {
                    detected += 1;
                }
            }
        }
        let enumerated = detected as f64 / 4.0;
        assert_eq!(analytic_detection_prob(0.5, 2).unwrap(), enumerated);
    }

    #[test]
    fn analytic_hits_paper_scale_at_hundred_rounds() {
        let p = analytic_detection_prob(0.1, 100).unwrap();
        assert!(p >= 0.9999, "{p}");
    }

    #[test]
    fn monte_carlo_degenerate_rates() {
        let zero = monte_carlo_detection(0.0, 10, 10, 1000, 1).unwrap();
        assert_eq!(zero.monte_carlo_prob, Some(0.0));
        let one = monte_carlo_detection(1.0, 1, 10, 1000, 1).unwrap();
        assert_eq!(one.monte_carlo_prob, Some(1.0));
    }

    #[test]
    fn monte_carlo_brackets_the_analytic_value() {
        let report = monte_carlo_detection(0.1, 10, 10, 100_000, 42).unwrap();
        let analytic = report.analytic_prob;
        assert!((analytic - (1.0 - 0.9f64.powi(10))).abs() < 1e-12);
        let diff = (report.monte_carlo_prob.unwrap() - analytic).abs();
        assert!(diff <= 3.0 * report.std_error.unwrap(), "diff {diff}");
    }

    #[test]
    fn monte_carlo_uses_effective_rho_for_fractional_victims() {
        // rho = 0.15 with n = 10 omits ceil(1.5) = 2 victims; the analytic
        // column must use 0.2.
        let report = monte_carlo_detection(0.15, 3, 10, 10_000, 7).unwrap();
        assert!((report.analytic_prob - analytic_detection_prob(0.2, 3).unwrap()).abs() < 1e-15);
        let diff = (report.monte_carlo_prob.unwrap() - report.analytic_prob).abs();
        assert!(diff <= 4.0 * report.std_error.unwrap());
    }

    fn record(
        round: usize,
        verifier_id: usize,
        asr: f64,
        verdict: Verdict,
        omitted: &[usize],
        per_client: Option<Vec<f64>>,
    ) -> RoundRecord {
        RoundRecord {
            round,
            verifier_id,
            omitted_ids: omitted.iter().copied().collect::<BTreeSet<_>>(),
            asr,
            verdict,
            clean_accuracy: 0.9,
            per_client_asr: per_client,
        }
    }

    #[test]
    fn matrix_single_cell() {
        let log = MetricLog {
            records: vec![record(0, 0, 0.8, Verdict::Accept, &[], Some(vec![0.8]))],
        };
        let m = asr_matrix(&log).unwrap();
        assert_eq!((m.n_clients, m.rounds), (1, 1));
        assert_eq!(m.value(0, 0), 0.8);
        assert!(m.is_verifier_cell(0, 0));
        assert!(!m.round_attacked(0));
    }

    #[test]
    fn matrix_dimensions_and_masks() {
        let log = MetricLog {
            records: vec![
                record(0, 1, 0.9, Verdict::Accept, &[], Some(vec![0.1, 0.9, 0.2])),
                record(1, 2, 0.2, Verdict::Reject, &[2], Some(vec![0.0, 0.3, 0.2])),
            ],
        };
        let m = asr_matrix(&log).unwrap();
        assert_eq!((m.n_clients, m.rounds), (3, 2));
        assert!(m.is_verifier_cell(1, 0) && m.is_verifier_cell(2, 1));
        assert!(!m.is_verifier_cell(0, 0));
        assert!(!m.round_attacked(0) && m.round_attacked(1));
        assert_eq!(m.value(2, 1), 0.2);
    }

    #[test]
    fn matrix_verifier_cells_reproduce_logged_asr() {
        // Pure reshaping: the sum over verifier cells equals the sum of the
        // logged verifier ASRs.
        let log = MetricLog {
            records: vec![
                record(0, 0, 0.7, Verdict::Accept, &[], Some(vec![0.7, 0.1])),
                record(1, 1, 0.95, Verdict::Accept, &[], Some(vec![0.05, 0.95])),
                record(2, 0, 0.85, Verdict::Accept, &[], Some(vec![0.85, 0.3])),
            ],
        };
        let m = asr_matrix(&log).unwrap();
        let mut cell_sum = 0.0;
        for i in 0..m.n_clients {
            for t in 0..m.rounds {
                if m.is_verifier_cell(i, t) {
                    cell_sum += m.value(i, t);
                }
            }
        }
        let logged: f64 = log.records.iter().map(|r| r.asr).sum();
        assert!((cell_sum - logged).abs() < 1e-15);
    }

    #[test]
    fn matrix_rejects_ragged_logs() {
        let log = MetricLog {
            records: vec![
                record(0, 0, 0.8, Verdict::Accept, &[], Some(vec![0.8, 0.1])),
                record(1, 1, 0.8, Verdict::Accept, &[], Some(vec![0.8])),
            ],
        };
        assert!(matches!(asr_matrix(&log), Err(Error::RaggedLog)));
        let log = MetricLog {
            records: vec![record(0, 0, 0.8, Verdict::Accept, &[], None)],
        };
        assert!(matches!(asr_matrix(&log), Err(Error::RaggedLog)));
    }

    proptest! {
        #[test]
        fn detection_prob_monotone_in_rho_and_k(
            rho_a in 0.0f64..1.0,
            rho_b in 0.0f64..1.0,
            k_a in 0u32..200,
            k_b in 0u32..200,
        ) {
            let (lo_rho, hi_rho) = if rho_a <= rho_b { (rho_a, rho_b) } else { (rho_b, rho_a) };
            let (lo_k, hi_k) = if k_a <= k_b { (k_a, k_b) } else { (k_b, k_a) };
            let base = analytic_detection_prob(lo_rho, lo_k).unwrap();
            prop_assert!(analytic_detection_prob(hi_rho, lo_k).unwrap() >= base);
            prop_assert!(analytic_detection_prob(lo_rho, hi_k).unwrap() >= base);
            prop_assert!((0.0..=1.0).contains(&base));
        }
    }
}
