//! Runs the six-method comparison on a synthetic world and prints the
//! minimum normalized t-DCF before and after training.
//!
//! Usage: `cargo run --release --example benchmark [config.toml]`

use tandem_core::config::Config;
use tandem_core::harness::{run_method, RunSettings, Splits};
use tandem_core::synth::generate_world;
use tandem_core::train::{Method, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = match std::env::args().nth(1) {
        Some(p) => Config::load(p.as_ref())?,
        None => Config::default(),
    };
    let world = generate_world(&cfg.world)?;
    let splits = Splits {
        train: world.train.trials,
        dev: world.dev.trials,
        eval: world.eval.trials,
    };
    let t0 = std::time::Instant::now();
    let pre = tandem_core::pretrain_pair(&splits.train, &cfg.pretrain)?;
    println!("pretrain: asv {:?} cm {:?} ({:.1?})", pre.asv, pre.cm, t0.elapsed());
    let settings = RunSettings {
        costs: cfg.costs,
        normalization: cfg.experiment.normalization,
        exclude_attacks: cfg.experiment.excluded(),
    };
    let mut all: std::collections::BTreeMap<Method, std::collections::BTreeMap<String, Vec<f64>>> = Default::default();
    for method in Method::ALL {
        let mut rel: std::collections::BTreeMap<String, Vec<f64>> = Default::default();
        let mut asv = Vec::new();
        for k in 0..cfg.experiment.seeds as u64 {
            let train = TrainConfig {
                seed: cfg.train.seed + k,
                ..cfg.train.clone()
            };
            let out = run_method(method, &pre.pair, &splits, &train, &settings)?;
            let r = &out.record;
            for (s, i) in &r.initial {
                let f = &r.final_reports[s];
                rel.entry(s.clone())
                    .or_default()
                    .push((i.min_norm_tdcf - f.min_norm_tdcf) / i.min_norm_tdcf);
            }
            asv.push(r.final_reports["dev"].asv_eer);
        }
        let cols: Vec<String> = rel
            .iter()
            .map(|(s, v)| {
                format!(
                    "{s} {}",
                    v.iter().map(|x| format!("{:+.3}", x)).collect::<Vec<_>>().join(" ")
                )
            })
            .collect();
        println!("{method:<22} | {} | dev asv eer {:.3?}", cols.join(" | "), asv);
        all.insert(method, rel);
    }
    for (s, r) in tandem_core::harness::run_method(
        Method::Finetune,
        &pre.pair,
        &splits,
        &TrainConfig {
            epochs: 0,
            ..cfg.train.clone()
        },
        &settings,
    )?
    .record
    .initial
    {
        println!(
            "initial {s}: tdcf {:.4} asv {:.3} cm {:.3}",
            r.min_norm_tdcf, r.asv_eer, r.cm_eer
        );
    }
    let gap = |m: Method| -> Vec<f64> {
        all[&m]["dev"]
            .iter()
            .zip(&all[&m]["eval"])
            .map(|(d, e)| d - e)
            .collect()
    };
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let a = all[&Method::ReinforceCalibTdcf]["eval_filtered"]
        .iter()
        .filter(|&&x| x >= 0.10)
        .count();
    let b = Method::ALL.iter().all(|m| mean(&all[m]["dev"]) > 0.0);
    let b_strict = Method::ALL.iter().all(|m| all[m]["dev"].iter().all(|&x| x > 0.0));
    let (gf, gr) = (gap(Method::Finetune), gap(Method::Reinforce));
    println!(
        "criteria: a {a}/3 | b mean {b} per-seed {b_strict} | c gaps finetune {:.3?} reinforce {:.3?} mean {} per-seed {}",
        gf,
        gr,
        mean(&gf) > mean(&gr),
        gf.iter().zip(&gr).all(|(f, r)| f > r)
    );
    println!("total {:.1?}", t0.elapsed());
    Ok(())
}
