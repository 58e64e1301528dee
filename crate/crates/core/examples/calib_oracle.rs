// Calibration scratch: measures attainable zero-shot accuracy on the default
// synthetic oracle across training seeds. Not part of the shipped crate.
use std::time::Instant;

use nice_core::analysis::{EvalOptions, Evaluator};
use nice_core::contrastive::{train, TrainConfig};
use nice_core::data_io::{pair_by_stimulus, synth_generate, SynthSpec};
use nice_core::encoders::HyperParams;
use nice_core::zeroshot::build_templates;

fn main() {
    let spec = SynthSpec::default();
    let t0 = Instant::now();
    let data = synth_generate(&spec).unwrap();
    eprintln!("generated {} train / {} test trials in {:.1?}",
        data.train.n_trials(), data.test.n_trials(), t0.elapsed());

    let mut concepts: Vec<String> = Vec::new();
    for c in &data.template_bank.concept_ids {
        if !concepts.contains(c) {
            concepts.push(c.clone());
        }
    }
    let tb = build_templates(&data.template_bank, &concepts, None).unwrap();
    let hyper = HyperParams::new(spec.c, spec.t, spec.d);
    let mut results = Vec::new();
    for seed in 0..5u64 {
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 200,
            seed,
            ..TrainConfig::default()
        };
        let paired = pair_by_stimulus(data.train.clone(), data.train_bank.clone()).unwrap();
        let t1 = Instant::now();
        let out = train(&paired, None, hyper, &cfg, |s| {
            if s.epoch % 5 == 0 || s.epoch == 49 {
                eprintln!("  seed {seed} epoch {:3} loss {:.4} exp_t {:.2} ({:.2}s)",
                    s.epoch, s.train_loss, s.exp_t, s.seconds);
            }
        })
        .unwrap();
        assert!(out.aborted.is_none(), "seed {seed} aborted: {:?}", out.aborted);
        let secs = t1.elapsed().as_secs_f64();
        let ev = Evaluator { params: &out.params, templates: &tb, opts: EvalOptions::default() };
        let (top1, top5) = ev.accuracy(&data.test).unwrap();
        eprintln!("seed {seed}: top1 {top1:.4} top5 {top5:.4} train {secs:.1}s");
        results.push((seed, top1, top5, secs));
    }
    println!("seed,top1,top5,train_seconds");
    for (s, t1v, t5, secs) in &results {
        println!("{s},{t1v:.4},{t5:.4},{secs:.1}");
    }
}
