//! Noisy-corpus filtering and bilingual corpus mixing.
//!
//! The basic filter drops pairs with an extreme length ratio, an over-long
//! side, or identical source and target; a trained model then scores the
//! survivors by average token log-likelihood so only the best-scoring pairs
//! are kept. The mixer samples from a clean and a noisy corpus at a
//! configured ratio.

use serde::{Deserialize, Serialize};

use crate::batching::SentencePair;
use crate::error::{Error, Result};
use crate::exec;
use crate::model::{forward, ModelParams, SubBatchTensors};
use crate::rng::substream;
use rand::Rng;

/// Rule thresholds for [`basic_filter`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Symmetric length-ratio cap: drop when max(len)/min(len) exceeds it.
    pub max_length_ratio: f64,
    /// Drop when either side has more words than this.
    pub max_len_words: usize,
    /// Drop exact source/target copies.
    pub drop_copies: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            max_length_ratio: 1.5,
            max_len_words: 250,
            drop_copies: true,
        }
    }
}

/// Per-rule drop counts; rules attribute in the order ratio, length, copy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterStats {
    pub input: usize,
    pub kept: usize,
    pub dropped_ratio: usize,
    pub dropped_length: usize,
    pub dropped_copy: usize,
}

/// Apply the ratio, length, and copy rules; the first matching rule gets the
/// attribution. The kept set is independent of rule order.
pub fn basic_filter(
    corpus: &[SentencePair],
    cfg: &FilterConfig,
) -> (Vec<SentencePair>, FilterStats) {
    // 0 = keep, otherwise the 1-based index of the first matching rule.
    let verdicts = exec::map_slice(corpus, |p| {
        let (a, b) = (p.src.len(), p.tgt.len());
        let ratio = a.max(b) as f64 / a.min(b) as f64;
        if ratio > cfg.max_length_ratio {
            1u8
        } else if a > cfg.max_len_words || b > cfg.max_len_words {
            2
        } else if cfg.drop_copies && p.src == p.tgt {
            3
        } else {
            0
        }
    });
    let mut stats = FilterStats {
        input: corpus.len(),
        kept: 0,
        dropped_ratio: 0,
        dropped_length: 0,
        dropped_copy: 0,
    };
    let mut kept = Vec::new();
    for (p, v) in corpus.iter().zip(verdicts) {
        match v {
            0 => {
                kept.push(p.clone());
                stats.kept += 1;
            }
            1 => stats.dropped_ratio += 1,
            2 => stats.dropped_length += 1,
            _ => stats.dropped_copy += 1,
        }
    }
    (kept, stats)
}

/// A pair's model score: mean log-likelihood per target token.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScoredPair {
    pub id: u64,
    pub avg_token_loglik: f64,
}

/// Score pairs with a trained model. The score is a pure likelihood: the
/// label-smoothing weight is zero regardless of how the model was trained.
pub fn score_pairs(params: &ModelParams, pairs: &[SentencePair]) -> Result<Vec<ScoredPair>> {
    let scored = exec::map_slice(pairs, |p| {
        let batch = SubBatchTensors::from_pairs(&[(p.src.as_slice(), p.tgt.as_slice())]);
        let (loss, tokens, _) = forward(params, &batch, 0.0)?;
        Ok(ScoredPair {
            id: p.id,
            avg_token_loglik: -f64::from(loss) / tokens as f64,
        })
    });
    scored.into_iter().collect()
}

/// Scores as CSV with header `pair_id,avg_token_loglik`.
pub fn scores_to_csv(scored: &[ScoredPair]) -> String {
    let mut out = String::from("pair_id,avg_token_loglik\n");
    for s in scored {
        out.push_str(&format!("{},{}\n", s.id, s.avg_token_loglik));
    }
    out
}

/// Ids of the `k` best-scoring pairs, ties broken by ascending id.
pub fn select_top_k(scored: &[ScoredPair], k: usize) -> Result<Vec<u64>> {
    if k > scored.len() {
        return Err(Error::Data(format!(
            "cannot select {k} of {} scored pairs",
            scored.len()
        )));
    }
    let mut ranked: Vec<&ScoredPair> = scored.iter().collect();
    ranked.sort_by(|a, b| {
        b.avg_token_loglik
            .partial_cmp(&a.avg_token_loglik)
            .unwrap()
            .then(a.id.cmp(&b.id))
    });
    Ok(ranked[..k].iter().map(|s| s.id).collect())
}

/// Sampling weights: `clean : noisy`, both at least 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixRatio {
    pub clean_weight: u32,
    pub noisy_weight: u32,
}

impl MixRatio {
    pub fn new(clean_weight: u32, noisy_weight: u32) -> Result<MixRatio> {
        if clean_weight == 0 || noisy_weight == 0 {
            return Err(Error::Config("mix weights must both be at least 1".into()));
        }
        Ok(MixRatio {
            clean_weight,
            noisy_weight,
        })
    }

    /// Parse "a:b".
    pub fn parse(s: &str) -> Result<MixRatio> {
        let (a, b) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("mix ratio {s:?} is not of the form a:b")))?;
        let parse = |x: &str| {
            x.trim()
                .parse::<u32>()
                .map_err(|e| Error::Config(format!("mix ratio {s:?}: {e}")))
        };
        MixRatio::new(parse(a)?, parse(b)?)
    }

    pub fn clean_probability(&self) -> f64 {
        f64::from(self.clean_weight) / f64::from(self.clean_weight + self.noisy_weight)
    }
}

/// One sampled pair, tagged with which corpus it came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixDraw<'a> {
    pub from_clean: bool,
    pub pair: &'a SentencePair,
}

/// Seeded sampler over a clean and a noisy corpus, with replacement: each
/// draw picks the clean corpus with probability `clean/(clean+noisy)`, then
/// a pair uniformly inside the chosen corpus.
pub struct MixSampler<'a> {
    clean: &'a [SentencePair],
    noisy: &'a [SentencePair],
    p_clean: f64,
    rng: rand_chacha::ChaCha8Rng,
    remaining: usize,
}

impl<'a> MixSampler<'a> {
    pub fn new(
        clean: &'a [SentencePair],
        noisy: &'a [SentencePair],
        ratio: MixRatio,
        seed: u64,
        n_samples: usize,
    ) -> Result<MixSampler<'a>> {
        if clean.is_empty() || noisy.is_empty() {
            return Err(Error::Data("both corpora must be non-empty".into()));
        }
        Ok(MixSampler {
            clean,
            noisy,
            p_clean: ratio.clean_probability(),
            rng: substream(seed, "mixing"),
            remaining: n_samples,
        })
    }
}

impl<'a> Iterator for MixSampler<'a> {
    type Item = MixDraw<'a>;

    fn next(&mut self) -> Option<MixDraw<'a>> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let from_clean = self.rng.random_range(0.0..1.0) < self.p_clean;
        let pool = if from_clean { self.clean } else { self.noisy };
        let pair = &pool[self.rng.random_range(0..pool.len())];
        Some(MixDraw { from_clean, pair })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TrainConfig;

    fn pair(id: u64, src: Vec<u32>, tgt: Vec<u32>) -> SentencePair {
        SentencePair::new(id, src, tgt)
    }

    /// Twelve pairs with three planned violations per rule; expected kept
    /// set and per-rule stats enumerated by hand.
    fn hand_corpus() -> Vec<SentencePair> {
        vec![
            pair(0, vec![1; 10], vec![2; 10]),    // keep
            pair(1, vec![1; 10], vec![2; 20]),    // ratio 2.0 -> drop
            pair(2, vec![1; 9], vec![2; 6]),      // ratio 1.5 exactly -> keep
            pair(3, vec![1; 30], vec![2; 10]),    // ratio 3.0 -> drop
            pair(4, vec![1; 251], vec![2; 251]),  // both long -> drop (length)
            pair(5, vec![1; 2], vec![2; 3]),      // keep
            pair(6, vec![1; 260], vec![2; 200]),  // ratio 1.3, src long -> drop (length)
            pair(7, vec![1; 200], vec![2; 251]),  // tgt long -> drop (length)
            pair(8, vec![5, 6, 7], vec![5, 6, 7]), // copy -> drop
            pair(9, vec![1; 7], vec![2; 14]),     // ratio 2.0 -> drop
            pair(10, vec![9, 9], vec![9, 9]),     // copy -> drop
            pair(11, vec![4], vec![4]),           // copy -> drop
        ]
    }

    #[test]
    fn hand_enumerated_filter() {
        let corpus = hand_corpus();
        let (kept, stats) = basic_filter(&corpus, &FilterConfig::default());
        let kept_ids: Vec<u64> = kept.iter().map(|p| p.id).collect();
        assert_eq!(kept_ids, vec![0, 2, 5]);
        assert_eq!(stats.input, 12);
        assert_eq!(stats.kept, 3);
        assert_eq!(stats.dropped_ratio, 3);
        assert_eq!(stats.dropped_length, 3);
        assert_eq!(stats.dropped_copy, 3);
        assert_eq!(
            stats.dropped_ratio + stats.dropped_length + stats.dropped_copy,
            stats.input - stats.kept
        );
    }

    #[test]
    fn ratio_is_symmetric() {
        // tgt much shorter than src drops too; a one-sided src/tgt reading
        // would let extreme tgt >> src pairs through.
        let corpus = vec![pair(0, vec![1; 20], vec![2; 10])];
        let (kept, stats) = basic_filter(&corpus, &FilterConfig::default());
        assert!(kept.is_empty());
        assert_eq!(stats.dropped_ratio, 1);
    }

    #[test]
    fn filter_is_idempotent() {
        let corpus = hand_corpus();
        let cfg = FilterConfig::default();
        let (kept, _) = basic_filter(&corpus, &cfg);
        let (again, stats) = basic_filter(&kept, &cfg);
        assert_eq!(again, kept);
        assert_eq!(stats.kept, kept.len());
        assert_eq!(stats.input - stats.kept, 0);
    }

    fn uniform_model() -> (ModelParams, TrainConfig) {
        let cfg = TrainConfig {
            vocab_size: 9,
            embed_dim: 3,
            hidden_dim: 4,
            num_layers: 1,
            ..TrainConfig::default()
        };
        let mut params = ModelParams::init(&cfg, 2);
        let proj = params.dims.layer_count() - 1;
        for x in params.layers_mut()[proj].iter_mut() {
            *x = 0.0;
        }
        (params, cfg)
    }

    #[test]
    fn uniform_model_scores_are_log_vocab() {
        let (params, cfg) = uniform_model();
        let pairs = vec![pair(0, vec![1, 2], vec![3, 4, 5]), pair(1, vec![6], vec![7])];
        let scored = score_pairs(&params, &pairs).unwrap();
        for s in &scored {
            let expect = -(cfg.vocab_size as f64).ln();
            assert!((s.avg_token_loglik - expect).abs() < 1e-6);
        }
        // Pure function: order never changes the scores.
        let rev: Vec<SentencePair> = pairs.iter().rev().cloned().collect();
        let scored_rev = score_pairs(&params, &rev).unwrap();
        assert_eq!(scored[0], scored_rev[1]);
        assert_eq!(scored[1], scored_rev[0]);
    }

    #[test]
    fn scoring_rejects_out_of_vocab() {
        let (params, _) = uniform_model();
        let pairs = vec![pair(0, vec![1, 200], vec![2])];
        assert!(score_pairs(&params, &pairs).is_err());
    }

    #[test]
    fn scores_csv_format() {
        let scored = vec![
            ScoredPair { id: 2, avg_token_loglik: -1.5 },
            ScoredPair { id: 7, avg_token_loglik: -0.25 },
        ];
        assert_eq!(
            scores_to_csv(&scored),
            "pair_id,avg_token_loglik\n2,-1.5\n7,-0.25\n"
        );
    }

    #[test]
    fn top_k_selection() {
        let scored = vec![
            ScoredPair { id: 10, avg_token_loglik: -1.0 },
            ScoredPair { id: 11, avg_token_loglik: -2.0 },
            ScoredPair { id: 12, avg_token_loglik: -0.5 },
        ];
        assert_eq!(select_top_k(&scored, 2).unwrap(), vec![12, 10]);
        assert_eq!(select_top_k(&scored, 3).unwrap(), vec![12, 10, 11]);
        assert!(select_top_k(&scored, 4).is_err());
        // Ties break by ascending id.
        let tied = vec![
            ScoredPair { id: 5, avg_token_loglik: -1.0 },
            ScoredPair { id: 3, avg_token_loglik: -1.0 },
        ];
        assert_eq!(select_top_k(&tied, 1).unwrap(), vec![3]);
    }

    #[test]
    fn top_k_matches_full_sort_oracle() {
        let mut rng = substream(44, "topk-test");
        let scored: Vec<ScoredPair> = (0..200)
            .map(|id| ScoredPair {
                id,
                avg_token_loglik: rng.random_range(-8.0..0.0),
            })
            .collect();
        let k = 100;
        let got = select_top_k(&scored, k).unwrap();
        let mut oracle: Vec<(f64, u64)> = scored
            .iter()
            .map(|s| (-s.avg_token_loglik, s.id))
            .collect();
        oracle.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let expect: Vec<u64> = oracle[..k].iter().map(|&(_, id)| id).collect();
        assert_eq!(got, expect);
    }

    #[test]
    fn mix_ratio_parsing() {
        let r = MixRatio::parse("1:4").unwrap();
        assert_eq!((r.clean_weight, r.noisy_weight), (1, 4));
        assert!((r.clean_probability() - 0.2).abs() < 1e-12);
        assert!(MixRatio::parse("1:0").is_err());
        assert!(MixRatio::parse("nonsense").is_err());
    }

    #[test]
    fn mix_sampler_hits_configured_fraction() {
        let clean = vec![pair(0, vec![1], vec![1])];
        let noisy = vec![pair(1, vec![2], vec![2]), pair(2, vec![3], vec![3])];
        for (ratio, expect) in [("1:1", 0.5), ("1:4", 0.2), ("3:1", 0.75)] {
            let sampler = MixSampler::new(
                &clean,
                &noisy,
                MixRatio::parse(ratio).unwrap(),
                7,
                100_000,
            )
            .unwrap();
            let n_clean = sampler.filter(|d| d.from_clean).count();
            let frac = n_clean as f64 / 100_000.0;
            assert!(
                (frac - expect).abs() < 0.01,
                "ratio {ratio}: fraction {frac} vs {expect}"
            );
        }
    }

    #[test]
    fn mix_sampler_is_deterministic() {
        let clean = vec![pair(0, vec![1], vec![1]), pair(1, vec![2], vec![2])];
        let noisy = vec![pair(2, vec![3], vec![3])];
        let ratio = MixRatio::parse("1:1").unwrap();
        let a: Vec<u64> = MixSampler::new(&clean, &noisy, ratio, 5, 1000)
            .unwrap()
            .map(|d| d.pair.id)
            .collect();
        let b: Vec<u64> = MixSampler::new(&clean, &noisy, ratio, 5, 1000)
            .unwrap()
            .map(|d| d.pair.id)
            .collect();
        assert_eq!(a, b);
        let c: Vec<u64> = MixSampler::new(&clean, &noisy, ratio, 6, 1000)
            .unwrap()
            .map(|d| d.pair.id)
            .collect();
        assert_ne!(a, c);
    }

    #[test]
    fn mix_sampler_chi_squared() {
        // Chi-squared goodness of fit on clean/noisy counts at n = 1e5,
        // significance 0.001 (critical value 10.828 for 1 dof).
        let clean = vec![pair(0, vec![1], vec![1])];
        let noisy = vec![pair(1, vec![2], vec![2])];
        let ratio = MixRatio::parse("1:4").unwrap();
        let n = 100_000usize;
        let sampler = MixSampler::new(&clean, &noisy, ratio, 11, n).unwrap();
        let n_clean = sampler.filter(|d| d.from_clean).count() as f64;
        let n_noisy = n as f64 - n_clean;
        let e_clean = ratio.clean_probability() * n as f64;
        let e_noisy = n as f64 - e_clean;
        let chi2 = (n_clean - e_clean).powi(2) / e_clean + (n_noisy - e_noisy).powi(2) / e_noisy;
        assert!(chi2 < 10.828, "chi-squared {chi2} rejects the configured ratio");
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let clean = vec![pair(0, vec![1], vec![1])];
        let ratio = MixRatio::parse("1:1").unwrap();
        assert!(MixSampler::new(&clean, &[], ratio, 1, 10).is_err());
    }
}
