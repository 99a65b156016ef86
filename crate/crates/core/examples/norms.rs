// Scratch: per-round norm diagnostics for the injection/clean balance.

use fedaudit_core::data::{
    build_trigger_set, dirichlet_partition, gen_synthetic, sample_trigger_credential, DataConfig,
    Dataset, ImageShape,
};
use fedaudit_core::nn::{self, Activation, ModelSpec, MomentumState};
use fedaudit_core::protocol::*;
use std::collections::BTreeMap;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let get = |name: &str, default: f64| -> f64 {
        args.iter()
            .find_map(|a| a.strip_prefix(&format!("{name}=")).map(|v| v.parse().unwrap()))
            .unwrap_or(default)
    };
    let shape = ImageShape::new(3, 8, 8);
    let cfg = ProtocolConfig {
        n_clients: 10,
        total_rounds: 50,
        lr: 0.01,
        trigger_lr: get("trigger_lr", 0.02),
        boost: 10.0,
        threshold: 0.7,
        batch_size: 32,
        momentum: 0.9,
        local_epochs: 1,
        trigger_epochs: get("trigger_epochs", 10.0) as usize,
        finetune_epochs: 5,
        seed: 1,
        policy: AdversaryPolicy::Honest,
        model: ModelSpec::new(vec![192, 64, 10], Activation::Relu).unwrap(),
        data: DataConfig {
            num_classes: 10,
            shape,
            train_count: 2000,
            eval_count: 500,
            beta: 0.5,
            trigger_fraction: 0.1,
        },
        verification: true,
        log_per_client_asr: false,
    };

    let pool = gen_synthetic(10, shape, 2500, 11).unwrap();
    let train = Dataset::new(pool.images()[..2000].to_vec(), 10, shape).unwrap();
    let eval = Dataset::new(pool.images()[2000..].to_vec(), 10, shape).unwrap();
    let eval_batch = eval.to_batch();
    let parts = dirichlet_partition(&train, 10, 0.5, 12).unwrap();
    let tokens = assign_tokens(10, 13);
    let mut clients: Vec<ClientState> = parts
        .into_iter()
        .enumerate()
        .map(|(id, local_data)| {
            let credential = sample_trigger_credential(shape, 10, 100 + id as u64).unwrap();
            let trigger_set =
                build_trigger_set(&local_data, &credential, 0.1, 200 + id as u64).unwrap();
            ClientState {
                id,
                token: tokens[id],
                local_data,
                credential,
                trigger_set,
                momentum: MomentumState::new(cfg.model.param_count(), 0.9).unwrap(),
            }
        })
        .collect();

    let mut global = nn::init_params(&cfg.model, 14);
    for round in 0..cfg.total_rounds {
        let verifier_id = clients
            .iter()
            .position(|c| is_verifier(c.token, round, 10))
            .unwrap();
        let mut updates = BTreeMap::new();
        let mut clean_disp_mean = 0.0;
        let mut signal_norm = 0.0;
        for i in 0..clients.len() {
            let clean = local_update(&mut clients[i], &global, &cfg, round).unwrap();
            clean_disp_mean += cfg.lr * norm(clean.values());
            let upload = if clients[i].id == verifier_id {
                let injected = inject_proof(&clients[i], &global, &clean, &cfg, round).unwrap();
                let diff: Vec<f64> = injected
                    .values()
                    .iter()
                    .zip(clean.values())
                    .map(|(a, b)| a - b)
                    .collect();
                // displacement landed on the global model: (lr/n) * diff
                signal_norm = cfg.lr / 10.0 * norm(&diff);
                injected
            } else {
                clean
            };
            updates.insert(i, upload);
        }
        clean_disp_mean /= 10.0;
        let (agg, _) = aggregate(&updates, &cfg.policy, round, 1000 + round as u64).unwrap();
        global = apply_global_update(&global, &agg, cfg.lr).unwrap();
        let (asr, _) = verify_proof(&clients[verifier_id], &global, 0.7).unwrap();
        let (acc, loss) = nn::evaluate(&global, &eval_batch).unwrap();
        println!(
            "t={round:2} v={verifier_id} asr={asr:.2} acc={acc:.3} loss={loss:.3} |w|={:.2} clean_step={clean_disp_mean:.3} signal={signal_norm:.3}",
            norm(global.values()),
        );
    }
}
