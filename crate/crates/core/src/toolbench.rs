//! Group-size throughput sweeps for the NER predictor.

use std::fmt::Write as _;
use std::time::Instant;

use serde::Serialize;

use crate::corpus::Corpus;
use crate::metrics::{entity_keys, ner_f1};
use crate::pipeline::{assemble, predict_ner, predictions_to_corpus, NerModel, PipelineError, PredictOptions};
use crate::spanspace::PackingStrategy;

pub const CSV_HEADER: &str = "strategy,K,sent_per_sec,mean_slots,layouts_per_sentence,f1";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRecord {
    pub strategy: PackingStrategy,
    pub group_size: usize,
    pub sent_per_sec: f64,
    pub mean_slots: f64,
    pub layouts_per_sentence: f64,
    /// Entity F1 against the corpus annotations, when it has any.
    pub f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOptions {
    /// Timed runs per K after one warm-up run; the median is reported.
    pub repetitions: usize,
    pub parallel: bool,
    pub seed: u64,
    pub two_stage: Option<usize>,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions { repetitions: 3, parallel: false, seed: 0, two_stage: None }
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        (xs[m - 1] + xs[m]) / 2.0
    }
}

/// Time NER inference over `corpus` once per group size.
pub fn sweep_group_size(
    model: &NerModel,
    corpus: &Corpus,
    group_sizes: &[usize],
    strategy: PackingStrategy,
    opts: &BenchOptions,
) -> Result<Vec<BenchRecord>, PipelineError> {
    if group_sizes.is_empty() {
        return Err(PipelineError::Config("no group sizes to sweep".into()));
    }
    if let Some(k) = group_sizes.iter().find(|&&k| k == 0) {
        return Err(PipelineError::Config(format!("group size must be positive, got {k}")));
    }
    if opts.repetitions < 3 {
        return Err(PipelineError::Config("at least 3 timed repetitions are required".into()));
    }
    let gold = entity_keys(corpus);
    let mut records = Vec::with_capacity(group_sizes.len());
    for &k in group_sizes {
        let popts = PredictOptions {
            group_size: k,
            packing: strategy,
            seed: opts.seed,
            two_stage: opts.two_stage,
            max_slots: usize::MAX,
            parallel: opts.parallel,
        };
        let pred = predict_ner(model, corpus, &popts)?;
        let mut times = Vec::with_capacity(opts.repetitions);
        for _ in 0..opts.repetitions {
            let start = Instant::now();
            predict_ner(model, corpus, &popts)?;
            times.push(start.elapsed().as_secs_f64());
        }
        let secs = median(times).max(f64::MIN_POSITIVE);
        let f1 = (!gold.is_empty()).then(|| {
            let predicted = predictions_to_corpus(corpus, &assemble(corpus, &pred, None));
            ner_f1(&gold, &entity_keys(&predicted)).f1
        });
        records.push(BenchRecord {
            strategy,
            group_size: k,
            sent_per_sec: pred.stats.sentences as f64 / secs,
            mean_slots: pred.stats.mean_slots(),
            layouts_per_sentence: pred.stats.layouts_per_sentence(),
            f1,
        });
    }
    Ok(records)
}

pub fn to_csv(records: &[BenchRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        let f1 = r.f1.map(|f| format!("{f:.6}")).unwrap_or_default();
        writeln!(
            out,
            "{},{},{:.3},{:.3},{:.4},{f1}",
            r.strategy.name(),
            r.group_size,
            r.sent_per_sec,
            r.mean_slots,
            r.layouts_per_sentence
        )
        .expect("writing to a String");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn csv_layout() {
        let r = BenchRecord {
            strategy: PackingStrategy::Neighborhood,
            group_size: 16,
            sent_per_sec: 10.0,
            mean_slots: 40.5,
            layouts_per_sentence: 2.0,
            f1: None,
        };
        assert_eq!(to_csv(&[r]), format!("{CSV_HEADER}\nneighborhood,16,10.000,40.500,2.0000,\n"));
    }
}
