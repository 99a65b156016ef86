//! The federated protocol: token scheduling, local training, proof injection
//! and verification, server aggregation under adversarial policies, final
//! fine-tuning, and the full round loop.
//!
//! # Round structure
//!
//! In round `t` every client trains locally on the current global model and
//! produces an effective gradient. The one client whose secret scheduling
//! token satisfies `token == t mod n` is this round's verifier: it
//! additionally trains a proxy model on its private trigger set and uploads
//! the boosted superposition
//!
//! ```text
//! g_hat = g_clean + boost * g_trigger
//! ```
//!
//! The server sees only `client id -> update vector` — no tokens, credentials,
//! or trigger sets cross the [`aggregate`] boundary — so an omission attack
//! cannot aim at the verifier except by luck. After the global update the
//! verifier measures the attack success rate (ASR) of its trigger set on the
//! new model and accepts the round iff `ASR >= threshold`.
//!
//! # Effective gradients
//!
//! Multi-epoch local training is expressed as an effective gradient `g` with
//! `global - lr * g` equal (up to float rounding) to the locally trained
//! model, so the server-side rule stays a plain `theta - lr * Agg(...)`.
//! Internally `g` is the momentum-step sum scaled by `step_lr / lr`, which
//! avoids the cancellation of reconstructing it from parameter differences;
//! with one epoch, one batch, and zero velocity it reduces exactly to the
//! batch gradient.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{DataConfig, Dataset, TriggerCredential, TriggerSet};
use crate::error::{Error, Result};
use crate::nn::{self, GradVector, ModelSpec, MomentumState, ParamVector};
use crate::seeds;

/// Seed-derivation domains; every random decision gets its own stream.
mod domain {
    pub const INIT: u64 = 1;
    pub const TRAIN_DATA: u64 = 2;
    pub const PARTITION: u64 = 4;
    pub const TOKENS: u64 = 5;
    pub const CREDENTIAL: u64 = 6;
    pub const TRIGGER_SET: u64 = 7;
    pub const LOCAL: u64 = 8;
    pub const INJECT: u64 = 9;
    pub const AGGREGATE: u64 = 10;
    pub const FINETUNE: u64 = 11;
}

/// Secret per-client scheduling token in `{0, ..., n-1}`; the holder
/// self-elects as verifier in round `t` iff `value == t mod n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SchedulingToken(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    Reject,
}

/// How a tampering server rewrites its victims' updates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TamperMode {
    /// Replace the update with zeros.
    Zero,
    /// Replace the update with Gaussian noise of the given magnitude.
    Noise { sigma: f64 },
    /// Multiply the update by the given factor.
    Scale { factor: f64 },
}

/// Server behaviour during aggregation.
///
/// `rho` is the fraction of clients targeted per attacked round (the victim
/// count is `ceil(rho * n)`); `epsilon` is the per-round attack probability,
/// unless an explicit `attack_rounds` set is given. `forced_victims` is a
/// white-box test hook that pins the victim set of specific rounds,
/// bypassing the random draw.
#[derive(Debug, Clone, PartialEq)]
pub enum AdversaryPolicy {
    Honest,
    Omit {
        rho: f64,
        epsilon: f64,
        attack_rounds: Option<BTreeSet<usize>>,
        forced_victims: Option<BTreeMap<usize, BTreeSet<usize>>>,
    },
    Tamper {
        rho: f64,
        epsilon: f64,
        attack_rounds: Option<BTreeSet<usize>>,
        mode: TamperMode,
    },
}

impl AdversaryPolicy {
    pub fn validate(&self) -> Result<()> {
        let check = |rho: f64, epsilon: f64| {
            if !(0.0..=1.0).contains(&rho) {
                return Err(Error::OutOfRange("rho"));
            }
            if !(0.0..=1.0).contains(&epsilon) {
                return Err(Error::OutOfRange("epsilon"));
            }
            Ok(())
        };
        match self {
            AdversaryPolicy::Honest => Ok(()),
            AdversaryPolicy::Omit { rho, epsilon, .. } => check(*rho, *epsilon),
            AdversaryPolicy::Tamper { rho, epsilon, .. } => check(*rho, *epsilon),
        }
    }
}

/// One client's private state.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    pub token: SchedulingToken,
    pub local_data: Dataset,
    pub credential: TriggerCredential,
    pub trigger_set: TriggerSet,
    pub momentum: MomentumState,
}

/// Per-round log entry.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub verifier_id: usize,
    pub omitted_ids: BTreeSet<usize>,
    pub asr: f64,
    pub verdict: Verdict,
    pub clean_accuracy: f64,
    /// ASR of every client's trigger set on this round's new global model.
    pub per_client_asr: Option<Vec<f64>>,
}

/// Full experiment configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolConfig {
    pub n_clients: usize,
    /// Total federated rounds T.
    pub total_rounds: usize,
    /// Global/local learning rate eta.
    pub lr: f64,
    /// Amplified learning rate for trigger training.
    pub trigger_lr: f64,
    /// Boost factor alpha on the trigger gradient.
    pub boost: f64,
    /// Acceptance threshold gamma on the ASR.
    pub threshold: f64,
    pub batch_size: usize,
    /// Momentum coefficient mu for local SGD.
    pub momentum: f64,
    pub local_epochs: usize,
    /// Passes over the trigger set during proof injection.
    pub trigger_epochs: usize,
    /// Clean local epochs after the final round; never uploaded.
    pub finetune_epochs: usize,
    /// Master seed; all randomness derives from it.
    pub seed: u64,
    pub policy: AdversaryPolicy,
    pub model: ModelSpec,
    pub data: DataConfig,
    /// When false, no proofs are injected or checked (plain FedAvg baseline
    /// with identical seeds); verdicts are recorded as Accept.
    pub verification: bool,
    /// Record every client's trigger ASR each round (needed for heatmaps).
    pub log_per_client_asr: bool,
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_clients == 0 {
            return Err(Error::InvalidConfig("n_clients must be > 0".into()));
        }
        if self.total_rounds < self.n_clients {
            return Err(Error::InvalidConfig(String::from(
                "total_rounds must be >= n_clients for full audit coverage",
            )));
        }
        if !(self.lr > 0.0) {
            return Err(Error::OutOfRange("lr"));
        }
        if !(self.trigger_lr > 0.0) {
            return Err(Error::OutOfRange("trigger_lr"));
        }
        if !(self.boost >= 1.0) {
            return Err(Error::OutOfRange("boost"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::OutOfRange("threshold"));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::OutOfRange("momentum"));
        }
        if self.local_epochs == 0 {
            return Err(Error::InvalidConfig("local_epochs must be > 0".into()));
        }
        if self.model.input_dim() != self.data.shape.len() {
            return Err(Error::InvalidConfig(String::from(
                "model input dim must match image shape",
            )));
        }
        if self.model.num_classes() != self.data.num_classes {
            return Err(Error::InvalidConfig(String::from(
                "model output dim must match num_classes",
            )));
        }
        self.policy.validate()?;
        self.data.validate()
    }
}

/// Everything a finished run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<RoundRecord>,
    /// Global model after the last round.
    pub global: ParamVector,
    /// Per-client locally fine-tuned models (never aggregated).
    pub finetuned: Vec<ParamVector>,
    /// Final client states (data, credentials, trigger sets).
    pub clients: Vec<ClientState>,
    /// Held-out evaluation set used for the clean-accuracy column.
    pub eval_set: Dataset,
}

/// Assigns scheduling tokens as a uniform random permutation of
/// `{0, ..., n-1}` (seeded Fisher-Yates by a trusted dealer).
pub fn assign_tokens(n: usize, seed: u64) -> Vec<SchedulingToken> {
    let mut values: Vec<usize> = (0..n).collect();
    values.shuffle(&mut seeds::rng(seed));
    values.into_iter().map(SchedulingToken).collect()
}

/// True iff this token self-elects as verifier for `round`.
pub fn is_verifier(token: SchedulingToken, round: usize, n: usize) -> bool {
    n != 0 && token.0 == round % n
}

/// Runs mini-batch SGD epochs over `data` starting from `start`, mutating
/// `velocity` in place. Returns the trained parameter values together with
/// the sum of momentum steps taken (the applied displacement divided by
/// `step_lr`).
fn sgd_epochs(
    start: &ParamVector,
    data: &Dataset,
    epochs: usize,
    batch_size: usize,
    step_lr: f64,
    momentum_coeff: f64,
    velocity: &mut [f64],
    rng: &mut ChaCha12Rng,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if data.is_empty() {
        return Err(Error::Empty("training data"));
    }
    let mut values = start.values().to_vec();
    let mut step_sum = vec![0.0; values.len()];
    let mut indices: Vec<usize> = (0..data.len()).collect();
    for _ in 0..epochs {
        indices.shuffle(rng);
        for chunk in indices.chunks(batch_size) {
            // The shuffle decides batch membership only; summation order
            // inside a batch is canonical, so a single full batch reduces
            // bit-exactly to the dataset's batch gradient.
            let mut chunk = chunk.to_vec();
            chunk.sort_unstable();
            let batch = data.batch_of(&chunk);
            let snapshot = ParamVector::new(values.clone(), start.spec().clone())?;
            let (_, grad) = nn::loss_and_grad(&snapshot, &batch)?;
            for (((v, &g), p), s) in velocity
                .iter_mut()
                .zip(grad.values())
                .zip(values.iter_mut())
                .zip(step_sum.iter_mut())
            {
                *v = momentum_coeff * *v + g;
                *p -= step_lr * *v;
                *s += *v;
            }
        }
    }
    Ok((values, step_sum))
}

/// White-box variant of [`local_update`] with an explicit inner step size;
/// the effective gradient is rescaled by `step_lr / cfg.lr`.
pub(crate) fn local_update_with_step_lr(
    client: &mut ClientState,
    global: &ParamVector,
    cfg: &ProtocolConfig,
    round: usize,
    step_lr: f64,
) -> Result<GradVector> {
    if client.local_data.is_empty() {
        return Err(Error::Empty("local dataset"));
    }
    let mut rng = seeds::rng(seeds::derive(
        cfg.seed,
        &[domain::LOCAL, client.id as u64, round as u64],
    ));
    let (_, step_sum) = sgd_epochs(
        global,
        &client.local_data,
        cfg.local_epochs,
        cfg.batch_size,
        step_lr,
        client.momentum.coefficient(),
        client.momentum.velocity_mut(),
        &mut rng,
    )?;
    let ratio = step_lr / cfg.lr;
    let mut grad = GradVector::zeros(step_sum.len());
    grad.scaled_add(ratio, &GradVector::new(step_sum)?)?;
    Ok(grad)
}

/// The client's effective local gradient for this round: `local_epochs`
/// passes of mini-batch SGD over its data, expressed so that
/// `global - lr * g` is the post-training local model. With one epoch and a
/// single full batch this is exactly the batch gradient.
pub fn local_update(
    client: &mut ClientState,
    global: &ParamVector,
    cfg: &ProtocolConfig,
    round: usize,
) -> Result<GradVector> {
    local_update_with_step_lr(client, global, cfg, round, cfg.lr)
}

/// Superimposes the boosted trigger gradient onto the clean update.
///
/// Steps: build the proxy `theta' = global - lr * g_clean`; train
/// `trigger_epochs` passes over the trigger set at `trigger_lr` (plain SGD,
/// no momentum) starting from the proxy; rescale the displacement into
/// gradient units, `g_bd = (theta' - theta_bd) / lr`; return
/// `g_clean + boost * g_bd`.
pub fn inject_proof(
    client: &ClientState,
    global: &ParamVector,
    clean_grad: &GradVector,
    cfg: &ProtocolConfig,
    round: usize,
) -> Result<GradVector> {
    if client.trigger_set.is_empty() {
        return Err(Error::Empty("trigger set"));
    }
    if clean_grad.len() != global.len() {
        return Err(Error::DimensionMismatch {
            expected: global.len(),
            got: clean_grad.len(),
        });
    }

    // Proxy for the next-round aggregated model.
    let mut proxy_values = global.values().to_vec();
    for (p, &g) in proxy_values.iter_mut().zip(clean_grad.values()) {
        *p -= cfg.lr * g;
    }
    let proxy = ParamVector::new(proxy_values, global.spec().clone())?;

    let trigger_data = Dataset::new(
        client.trigger_set.examples().to_vec(),
        client.local_data.num_classes(),
        client.local_data.shape(),
    )?;
    let mut rng = seeds::rng(seeds::derive(
        cfg.seed,
        &[domain::INJECT, client.id as u64, round as u64],
    ));
    let mut velocity = vec![0.0; global.len()];
    let (_, step_sum) = sgd_epochs(
        &proxy,
        &trigger_data,
        cfg.trigger_epochs,
        cfg.batch_size,
        cfg.trigger_lr,
        0.0,
        &mut velocity,
        &mut rng,
    )?;

    // g_bd in units of the global learning rate.
    let ratio = cfg.trigger_lr / cfg.lr;
    let mut boosted = clean_grad.clone();
    boosted.scaled_add(cfg.boost * ratio, &GradVector::new(step_sum)?)?;
    Ok(boosted)
}

fn round_attacked(
    epsilon: f64,
    attack_rounds: &Option<BTreeSet<usize>>,
    round: usize,
    rng: &mut ChaCha12Rng,
) -> bool {
    match attack_rounds {
        Some(set) => set.contains(&round),
        None => {
            if epsilon >= 1.0 {
                true
            } else if epsilon <= 0.0 {
                false
            } else {
                rng.gen::<f64>() < epsilon
            }
        }
    }
}

/// Draws `ceil(rho * n)` victim ids uniformly without replacement.
fn draw_victims(ids: &[usize], rho: f64, rng: &mut ChaCha12Rng) -> BTreeSet<usize> {
    let n = ids.len();
    let count = (libm::ceil(rho * n as f64) as usize).min(n);
    if count == 0 {
        return BTreeSet::new();
    }
    rand::seq::index::sample(rng, n, count)
        .into_iter()
        .map(|i| ids[i])
        .collect()
}

fn mean_of<'a>(vectors: impl Iterator<Item = &'a [f64]>, len: usize) -> Vec<f64> {
    let mut sum = vec![0.0; len];
    let mut count = 0usize;
    for v in vectors {
        for (s, &x) in sum.iter_mut().zip(v) {
            *s += x;
        }
        count += 1;
    }
    if count > 0 {
        let scale = 1.0 / count as f64;
        for s in &mut sum {
            *s *= scale;
        }
    }
    sum
}

/// Server-side aggregation under the configured policy.
///
/// This function is the information-flow boundary: it receives only the
/// `client id -> update` map, so victim selection cannot depend on tokens,
/// credentials, or trigger sets. Honest aggregation is the arithmetic mean
/// of all received updates. An omission attack averages the survivors; a
/// tampering attack rewrites the victims' updates first. If every client is
/// omitted the round yields a zero update with all ids reported omitted.
pub fn aggregate(
    updates: &BTreeMap<usize, GradVector>,
    policy: &AdversaryPolicy,
    round: usize,
    rng_seed: u64,
) -> Result<(GradVector, BTreeSet<usize>)> {
    if updates.is_empty() {
        return Err(Error::Empty("update set"));
    }
    let len = updates.values().next().expect("nonempty").len();
    for update in updates.values() {
        if update.len() != len {
            return Err(Error::DimensionMismatch {
                expected: len,
                got: update.len(),
            });
        }
    }
    let ids: Vec<usize> = updates.keys().copied().collect();
    let mut rng = seeds::rng(rng_seed);

    match policy {
        AdversaryPolicy::Honest => {
            let mean = mean_of(updates.values().map(|g| g.values()), len);
            Ok((GradVector::new(mean)?, BTreeSet::new()))
        }
        AdversaryPolicy::Omit {
            rho,
            epsilon,
            attack_rounds,
            forced_victims,
        } => {
            if !round_attacked(*epsilon, attack_rounds, round, &mut rng) {
                let mean = mean_of(updates.values().map(|g| g.values()), len);
                return Ok((GradVector::new(mean)?, BTreeSet::new()));
            }
            let victims = match forced_victims.as_ref().and_then(|m| m.get(&round)) {
                Some(fixed) => fixed.clone(),
                None => draw_victims(&ids, *rho, &mut rng),
            };
            let survivors: Vec<&GradVector> = updates
                .iter()
                .filter(|(id, _)| !victims.contains(id))
                .map(|(_, g)| g)
                .collect();
            if survivors.is_empty() {
                // Nothing received: the round applies a zero update.
                return Ok((GradVector::zeros(len), ids.into_iter().collect()));
            }
            let mean = mean_of(survivors.into_iter().map(|g| g.values()), len);
            Ok((GradVector::new(mean)?, victims))
        }
        AdversaryPolicy::Tamper {
            rho,
            epsilon,
            attack_rounds,
            mode,
        } => {
            if !round_attacked(*epsilon, attack_rounds, round, &mut rng) {
                let mean = mean_of(updates.values().map(|g| g.values()), len);
                return Ok((GradVector::new(mean)?, BTreeSet::new()));
            }
            let victims = draw_victims(&ids, *rho, &mut rng);
            let mut sum = vec![0.0; len];
            for (id, update) in updates {
                if victims.contains(id) {
                    match mode {
                        TamperMode::Zero => {}
                        TamperMode::Noise { sigma } => {
                            for s in sum.iter_mut() {
                                let z: f64 = StandardNormal.sample(&mut rng);
                                *s += sigma * z;
                            }
                        }
                        TamperMode::Scale { factor } => {
                            for (s, &x) in sum.iter_mut().zip(update.values()) {
                                *s += factor * x;
                            }
                        }
                    }
                } else {
                    for (s, &x) in sum.iter_mut().zip(update.values()) {
                        *s += x;
                    }
                }
            }
            let scale = 1.0 / updates.len() as f64;
            for s in &mut sum {
                *s *= scale;
            }
            Ok((GradVector::new(sum)?, victims))
        }
    }
}

/// The global update rule `theta <- theta - lr * agg`.
pub fn apply_global_update(params: &ParamVector, agg: &GradVector, lr: f64) -> Result<ParamVector> {
    if agg.len() != params.len() {
        return Err(Error::DimensionMismatch {
            expected: params.len(),
            got: agg.len(),
        });
    }
    let values = params
        .values()
        .iter()
        .zip(agg.values())
        .map(|(&p, &g)| p - lr * g)
        .collect();
    ParamVector::new(values, params.spec().clone())
}

/// Measures the attack success rate of the client's trigger set on a model:
/// the fraction of trigger examples predicted as the target label. The
/// verdict is Accept iff `asr >= gamma`.
pub fn verify_proof(
    client: &ClientState,
    global_params: &ParamVector,
    gamma: f64,
) -> Result<(f64, Verdict)> {
    let asr = trigger_asr(&client.trigger_set, global_params)?;
    let verdict = if asr >= gamma {
        Verdict::Accept
    } else {
        Verdict::Reject
    };
    Ok((asr, verdict))
}

/// ASR of an arbitrary trigger set on a model.
pub fn trigger_asr(trigger_set: &TriggerSet, params: &ParamVector) -> Result<f64> {
    if trigger_set.is_empty() {
        return Err(Error::Empty("trigger set"));
    }
    let target = trigger_set.credential().target_label();
    let mut hits = 0usize;
    for example in trigger_set.examples() {
        if nn::predict(params, &example.pixels)? == target {
            hits += 1;
        }
    }
    Ok(hits as f64 / trigger_set.len() as f64)
}

/// Local-only fine-tuning on clean data after the final round. The result is
/// deployed by the client and never fed back into aggregation.
pub fn final_finetune(
    client: &ClientState,
    global_params: &ParamVector,
    cfg: &ProtocolConfig,
) -> Result<ParamVector> {
    if cfg.finetune_epochs == 0 {
        return Ok(global_params.clone());
    }
    let mut rng = seeds::rng(seeds::derive(
        cfg.seed,
        &[domain::FINETUNE, client.id as u64],
    ));
    // Fresh momentum buffer: fine-tuning is a new training phase.
    let mut velocity = vec![0.0; global_params.len()];
    let (values, _) = sgd_epochs(
        global_params,
        &client.local_data,
        cfg.finetune_epochs,
        cfg.batch_size,
        cfg.lr,
        cfg.momentum,
        &mut velocity,
        &mut rng,
    )?;
    ParamVector::new(values, global_params.spec().clone())
}

/// Builds the initial client states from the configuration seeds.
fn setup_clients(cfg: &ProtocolConfig, train: &Dataset) -> Result<Vec<ClientState>> {
    let parts = crate::data::dirichlet_partition(
        train,
        cfg.n_clients,
        cfg.data.beta,
        seeds::derive(cfg.seed, &[domain::PARTITION]),
    )?;
    let tokens = assign_tokens(cfg.n_clients, seeds::derive(cfg.seed, &[domain::TOKENS]));
    let param_len = cfg.model.param_count();
    parts
        .into_iter()
        .enumerate()
        .map(|(id, local_data)| {
            let credential = crate::data::sample_trigger_credential(
                cfg.data.shape,
                cfg.data.num_classes,
                seeds::derive(cfg.seed, &[domain::CREDENTIAL, id as u64]),
            )?;
            let trigger_set = crate::data::build_trigger_set(
                &local_data,
                &credential,
                cfg.data.trigger_fraction,
                seeds::derive(cfg.seed, &[domain::TRIGGER_SET, id as u64]),
            )?;
            Ok(ClientState {
                id,
                token: tokens[id],
                local_data,
                credential,
                trigger_set,
                momentum: MomentumState::new(param_len, cfg.momentum)?,
            })
        })
        .collect()
}

/// Runs the full protocol: T rounds of local training, proof injection by
/// the scheduled verifier, aggregation under the configured policy, and
/// verification; then per-client final fine-tuning. Fully deterministic
/// given the configuration.
pub fn run_training(cfg: &ProtocolConfig) -> Result<RunOutput> {
    cfg.validate()?;

    // Train and eval must share class prototypes, so draw one pool and split
    // it; the generator already shuffles example order.
    let pool = crate::data::gen_synthetic(
        cfg.data.num_classes,
        cfg.data.shape,
        cfg.data.train_count + cfg.data.eval_count,
        seeds::derive(cfg.seed, &[domain::TRAIN_DATA]),
    )?;
    let train = Dataset::new(
        pool.images()[..cfg.data.train_count].to_vec(),
        cfg.data.num_classes,
        cfg.data.shape,
    )?;
    let eval_set = Dataset::new(
        pool.images()[cfg.data.train_count..].to_vec(),
        cfg.data.num_classes,
        cfg.data.shape,
    )?;
    let eval_batch = eval_set.to_batch();
    let mut clients = setup_clients(cfg, &train)?;

    let mut global = nn::init_params(&cfg.model, seeds::derive(cfg.seed, &[domain::INIT]));
    let mut records = Vec::with_capacity(cfg.total_rounds);

    for round in 0..cfg.total_rounds {
        let verifier_id = clients
            .iter()
            .position(|c| is_verifier(c.token, round, cfg.n_clients))
            .expect("tokens form a permutation, so exactly one verifier exists");

        let mut updates: BTreeMap<usize, GradVector> = BTreeMap::new();
        for client in clients.iter_mut() {
            let clean = local_update(client, &global, cfg, round)?;
            let upload = if cfg.verification && client.id == verifier_id {
                inject_proof(client, &global, &clean, cfg, round)?
            } else {
                clean
            };
            updates.insert(client.id, upload);
        }

        let (agg, omitted_ids) = aggregate(
            &updates,
            &cfg.policy,
            round,
            seeds::derive(cfg.seed, &[domain::AGGREGATE, round as u64]),
        )?;
        global = apply_global_update(&global, &agg, cfg.lr)?;

        let (asr, verdict) = if cfg.verification {
            verify_proof(&clients[verifier_id], &global, cfg.threshold)?
        } else {
            (
                trigger_asr(&clients[verifier_id].trigger_set, &global)?,
                Verdict::Accept,
            )
        };
        let (clean_accuracy, _) = nn::evaluate(&global, &eval_batch)?;
        let per_client_asr = if cfg.log_per_client_asr {
            Some(
                clients
                    .iter()
                    .map(|c| trigger_asr(&c.trigger_set, &global))
                    .collect::<Result<Vec<f64>>>()?,
            )
        } else {
            None
        };

        records.push(RoundRecord {
            round,
            verifier_id,
            omitted_ids,
            asr,
            verdict,
            clean_accuracy,
            per_client_asr,
        });
    }

    let finetuned = clients
        .iter()
        .map(|c| final_finetune(c, &global, cfg))
        .collect::<Result<Vec<_>>>()?;

    Ok(RunOutput {
        records,
        global,
        finetuned,
        clients,
        eval_set,
    })
}
