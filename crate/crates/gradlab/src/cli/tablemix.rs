//! `gradlab filter`, `gradlab mix`, and `gradlab lr-schedule`.

use std::path::Path;

use serde::Serialize;

use crate::batching::SentencePair;
use crate::config::RunConfig;
use crate::corpus::{read_corpus, write_corpus, Vocab};
use crate::datafilter::{basic_filter, FilterConfig, MixRatio, MixSampler};
use crate::error::{Error, Result};
use crate::model::lr_at;

pub fn cmd_filter(cfg: RunConfig) -> Result<()> {
    let dir = super::out_dir(&cfg)?;
    let (corpus, vocab) = super::load_corpus(&cfg)?;
    let (kept, stats) = basic_filter(&corpus, &FilterConfig::default());
    write_corpus(&dir.join("kept.tsv"), &kept, &vocab)?;
    let body = serde_json::to_string(&stats)?;
    std::fs::write(dir.join("filter_stats.json"), &body)?;
    println!("{body}");
    cfg.echo_to(&dir)?;
    Ok(())
}

#[derive(Serialize)]
struct MixStats {
    samples: usize,
    clean_drawn: usize,
    noisy_drawn: usize,
    clean_fraction: f64,
}

pub fn cmd_mix(cfg: RunConfig) -> Result<()> {
    let dir = super::out_dir(&cfg)?;
    super::require(&cfg.clean_corpus, "a clean corpus (--clean or clean_corpus=)")?;
    super::require(&cfg.noisy_corpus, "a noisy corpus (--noisy or noisy_corpus=)")?;
    super::require(&cfg.vocab, "a vocabulary file (--vocab or vocab=)")?;
    let vocab = Vocab::read(Path::new(&cfg.vocab))?;
    let clean = read_corpus(Path::new(&cfg.clean_corpus), &vocab)?;
    let noisy = read_corpus(Path::new(&cfg.noisy_corpus), &vocab)?;
    let ratio = MixRatio::parse(&cfg.mix_ratio)?;

    let sampler = MixSampler::new(&clean, &noisy, ratio, cfg.seed, cfg.mix_samples)?;
    let mut drawn: Vec<SentencePair> = Vec::with_capacity(cfg.mix_samples);
    let mut clean_drawn = 0usize;
    for d in sampler {
        if d.from_clean {
            clean_drawn += 1;
        }
        drawn.push(d.pair.clone());
    }
    write_corpus(&dir.join("mixed.tsv"), &drawn, &vocab)?;
    let stats = MixStats {
        samples: cfg.mix_samples,
        clean_drawn,
        noisy_drawn: cfg.mix_samples - clean_drawn,
        clean_fraction: clean_drawn as f64 / cfg.mix_samples.max(1) as f64,
    };
    let body = serde_json::to_string(&stats)?;
    std::fs::write(dir.join("mix_stats.json"), &body)?;
    println!("{body}");
    cfg.echo_to(&dir)?;
    Ok(())
}

pub fn cmd_lr_schedule(cfg: RunConfig) -> Result<()> {
    if cfg.steps == 0 {
        return Err(Error::Config("steps must be at least 1".into()));
    }
    let tcfg = cfg.train_config(2);
    let mut out = String::from("step,lr\n");
    for step in 1..=cfg.steps as u64 {
        out.push_str(&format!("{},{}\n", step, lr_at(step, &tcfg)));
    }
    print!("{out}");
    if !cfg.out.is_empty() {
        let dir = super::out_dir(&cfg)?;
        std::fs::write(dir.join("lr_schedule.csv"), &out)?;
        cfg.echo_to(&dir)?;
    }
    Ok(())
}
