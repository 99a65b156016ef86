// Scratch harness for desk-scale tuning runs. Not part of the deliverable.

use fedaudit_core::analysis::{asr_matrix, summarize, MetricLog, WARMUP_ROUNDS};
use fedaudit_core::data::{DataConfig, ImageShape};
use fedaudit_core::nn::{self, Activation, ModelSpec};
use fedaudit_core::protocol::{
    run_training, trigger_asr, AdversaryPolicy, ProtocolConfig, Verdict,
};
use std::collections::{BTreeMap, BTreeSet};

fn desk_config(seed: u64) -> ProtocolConfig {
    let args: Vec<String> = std::env::args().collect();
    let get = |name: &str, default: f64| -> f64 {
        args.iter()
            .find_map(|a| a.strip_prefix(&format!("{name}=")).map(|v| v.parse().unwrap()))
            .unwrap_or(default)
    };
    let act = if args.iter().any(|a| a == "tanh") {
        Activation::Tanh
    } else {
        Activation::Relu
    };
    ProtocolConfig {
        n_clients: 10,
        total_rounds: get("rounds", 50.0) as usize,
        lr: 0.01,
        trigger_lr: get("trigger_lr", 0.5),
        boost: 10.0,
        threshold: 0.7,
        batch_size: 32,
        momentum: 0.9,
        local_epochs: get("local_epochs", 1.0) as usize,
        trigger_epochs: get("trigger_epochs", 2.0) as usize,
        finetune_epochs: get("finetune_epochs", 5.0) as usize,
        seed,
        policy: AdversaryPolicy::Honest,
        model: ModelSpec::new(vec![192, 64, 10], act).unwrap(),
        data: DataConfig {
            num_classes: 10,
            shape: ImageShape::new(3, 8, 8),
            train_count: get("train_count", 2000.0) as usize,
            eval_count: 500,
            beta: 0.5,
            trigger_fraction: 0.1,
        },
        verification: true,
        log_per_client_asr: true,
    }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let quick = args.iter().any(|a| a == "quick");
    let seeds = [1u64, 2, 3, 4, 5];
    let mut completeness = Vec::new();
    let mut noninterference = Vec::new();
    let mut forgotten_fracs = Vec::new();
    let mut final_accs = Vec::new();
    let mut baseline_accs = Vec::new();
    let mut round_accs = Vec::new();

    for &seed in &seeds {
        let t0 = std::time::Instant::now();
        let cfg = desk_config(seed);
        let out = run_training(&cfg).unwrap();
        let log = MetricLog {
            records: out.records.clone(),
        };
        let summary = summarize(&log, &cfg).unwrap();
        let matrix = asr_matrix(&log).unwrap();

        // completeness
        completeness.push(summary.honest_accept_rate);
        if quick {
            for r in &out.records {
                if r.round >= WARMUP_ROUNDS && r.verdict == Verdict::Reject {
                    println!(
                        "  FAIL seed={seed} t={} v={} |T|={} asr={:.2}",
                        r.round,
                        r.verifier_id,
                        out.clients[r.verifier_id].trigger_set.len(),
                        r.asr
                    );
                }
            }
        }

        // non-interference: post-warmup non-verifier cells < gamma
        let mut cells = 0usize;
        let mut ok = 0usize;
        for i in 0..matrix.n_clients {
            for t in WARMUP_ROUNDS..matrix.rounds {
                if !matrix.is_verifier_cell(i, t) {
                    cells += 1;
                    if matrix.value(i, t) < cfg.threshold {
                        ok += 1;
                    }
                }
            }
        }
        noninterference.push(ok as f64 / cells as f64);

        forgotten_fracs.push(if summary.injections_tracked > 0 {
            summary.injections_forgotten as f64 / summary.injections_tracked as f64
        } else {
            f64::NAN
        });

        // finetuned accuracy on eval set (mean over clients)
        let eval_batch = out.eval_set.to_batch();
        let mut acc_sum = 0.0;
        for p in &out.finetuned {
            acc_sum += nn::evaluate(p, &eval_batch).unwrap().0;
        }
        final_accs.push(acc_sum / out.finetuned.len() as f64);
        round_accs.push(out.records.last().unwrap().clean_accuracy);

        // baseline (verification off)
        if !quick {
            let mut base_cfg = cfg.clone();
            base_cfg.verification = false;
            let base = run_training(&base_cfg).unwrap();
            let mut bacc = 0.0;
            for p in &base.finetuned {
                bacc += nn::evaluate(p, &eval_batch).unwrap().0;
            }
            baseline_accs.push(bacc / base.finetuned.len() as f64);
        } else {
            baseline_accs.push(f64::NAN);
        }

        // per-round detail for seed 1
        if seed == 1 && !quick {
            println!("seed 1 per-round: (round, verifier, asr, clean_acc)");
            for r in &out.records {
                println!(
                    "  t={:2} v={} asr={:.2} acc={:.3} {}",
                    r.round,
                    r.verifier_id,
                    r.asr,
                    r.clean_accuracy,
                    if r.verdict == Verdict::Reject { "REJECT" } else { "" }
                );
            }
            // ASR after finetune on own triggers
            let post: Vec<f64> = out
                .clients
                .iter()
                .zip(&out.finetuned)
                .map(|(c, p)| trigger_asr(&c.trigger_set, p).unwrap())
                .collect();
            println!("  post-finetune own-trigger ASR: {post:?}");
            println!(
                "  median rounds to forget: {:?}, tracked {}, forgotten {}",
                summary.median_rounds_to_forget,
                summary.injections_tracked,
                summary.injections_forgotten
            );
            // client sizes & trigger sizes
            let sizes: Vec<(usize, usize)> = out
                .clients
                .iter()
                .map(|c| (c.local_data.len(), c.trigger_set.len()))
                .collect();
            println!("  client (data, trigger) sizes: {sizes:?}");
        }
        println!(
            "seed {seed}: completeness={:.3} noninterf={:.3} forgotten={:.2} acc={:.3} base={:.3} ({:.1}s)",
            completeness.last().unwrap(),
            noninterference.last().unwrap(),
            forgotten_fracs.last().unwrap(),
            final_accs.last().unwrap(),
            baseline_accs.last().unwrap(),
            t0.elapsed().as_secs_f64(),
        );
    }

    // forced omission check (criterion 6 shape): omit the verifier at rounds 10,20,30,40
    println!("\nforced-omission probe:");
    for &seed in &seeds {
        if quick {
            break;
        }
        let mut cfg = desk_config(seed);
        let honest = run_training(&cfg).unwrap();
        let mut forced = BTreeMap::new();
        for &t in &[10usize, 20, 30, 40] {
            let v = honest.records[t].verifier_id;
            forced.insert(t, BTreeSet::from([v]));
        }
        cfg.policy = AdversaryPolicy::Omit {
            rho: 0.1,
            epsilon: 1.0,
            attack_rounds: Some([10usize, 20, 30, 40].into_iter().collect()),
            forced_victims: Some(forced),
        };
        let out = run_training(&cfg).unwrap();
        let asrs: Vec<f64> = [10usize, 20, 30, 40]
            .iter()
            .map(|&t| out.records[t].asr)
            .collect();
        let verdicts: Vec<bool> = [10usize, 20, 30, 40]
            .iter()
            .map(|&t| out.records[t].verdict == Verdict::Reject)
            .collect();
        println!("  seed {seed}: omitted-round ASR {asrs:?} rejects {verdicts:?}");
    }

    let med = |mut v: Vec<f64>| -> f64 {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v[v.len() / 2]
    };
    println!("\nmedians: completeness={:.3} noninterf={:.3} forgotten={:.3}",
        med(completeness.clone()), med(noninterference.clone()), med(forgotten_fracs.clone()));
    println!(
        "acc medians: global={:.3} audited-finetuned={:.3} baseline={:.3}",
        med(round_accs),
        med(final_accs.clone()),
        med(baseline_accs.clone()),
    );
}
