use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::adam::AdamState;
use super::config::TrainConfig;
use super::step::{train_step, Batch, LossReport, ParamLayout};
use crate::corpus::{empirical_pmi, NegativeSampler};
use crate::error::{Error, Result};
use crate::eval::{evaluate_similarity, SimilarityDataset, SimilarityMeasure};
use crate::model::{Lexicon, Model};
use crate::qstate::inner_unchecked;
use crate::scoring::score_unchecked;

/// Held-out cells need at least this many co-occurrences to be scored.
pub const MIN_VALIDATION_COUNT: u64 = 5;

pub const HISTORY_HEADER: &str = "epoch,nce_loss,ent_penalty,decay_penalty,val_metric,wall_seconds";

/// A held-out cell and its target score `PMI − ln k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PmiTarget {
    pub word: u32,
    pub context: u32,
    pub count: u64,
    pub target: f64,
}

/// Cells with at least `min_count` co-occurrences, targets shifted by `ln k`.
pub fn shifted_pmi_targets(
    pairs: &[(u32, u32)],
    k: usize,
    min_count: u64,
) -> Result<Vec<PmiTarget>> {
    if pairs.is_empty() {
        return Ok(Vec::new());
    }
    let shift = (k as f64).ln();
    let table = empirical_pmi(pairs.iter().copied())?;
    Ok(table
        .entries()
        .filter(|e| e.count >= min_count)
        .map(|e| PmiTarget {
            word: e.word,
            context: e.context,
            count: e.count,
            target: e.pmi - shift,
        })
        .collect())
}

type Pairs = Vec<(u32, u32)>;

/// Seeded split into `(train, held_out)`; `fraction` of pairs are held out.
pub fn split_holdout(pairs: &[(u32, u32)], fraction: f64, seed: u64) -> Result<(Pairs, Pairs)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!(
            "held-out fraction {fraction} outside [0, 1)"
        )));
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let held = (pairs.len() as f64 * fraction).round() as usize;
    let held_out = order[..held].iter().map(|&i| pairs[i]).collect();
    let train = order[held..].iter().map(|&i| pairs[i]).collect();
    Ok((train, held_out))
}

/// Per-epoch model selection signal.
pub enum Validation {
    /// Mean squared error between model scores and held-out shifted PMI.
    ShiftedPmi(Vec<PmiTarget>),
    /// Spearman correlation on a word-similarity dataset.
    Similarity {
        dataset: SimilarityDataset,
        lexicon: Lexicon,
        measure: SimilarityMeasure,
    },
    /// Mean total training loss of the epoch.
    TrainingLoss,
}

impl Validation {
    fn is_empty(&self) -> bool {
        match self {
            Self::ShiftedPmi(t) => t.is_empty(),
            Self::Similarity { dataset, .. } => dataset.is_empty(),
            Self::TrainingLoss => true,
        }
    }

    fn higher_is_better(&self) -> bool {
        matches!(self, Self::Similarity { .. })
    }

    fn evaluate(&self, model: &Model) -> Result<f64> {
        match self {
            Self::ShiftedPmi(targets) => {
                let states = model.embed_all();
                let se: f64 = targets
                    .par_iter()
                    .map(|t| {
                        let f = inner_unchecked(
                            states[t.word as usize].amplitudes(),
                            states[t.context as usize].amplitudes(),
                        )
                        .norm_sqr();
                        (score_unchecked(&model.head, f) - t.target).powi(2)
                    })
                    .collect::<Vec<_>>()
                    .iter()
                    .sum();
                Ok(se / targets.len() as f64)
            }
            Self::Similarity {
                dataset,
                lexicon,
                measure,
            } => Ok(evaluate_similarity(model, lexicon, dataset, *measure)?.spearman_rho),
            Self::TrainingLoss => Err(Error::Empty("no validation data".into())),
        }
    }
}

/// Where to write the best model whenever validation improves.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub path: PathBuf,
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub nce_loss: f64,
    pub ent_penalty: f64,
    pub decay_penalty: f64,
    pub val_metric: f64,
    pub wall_seconds: f64,
}

pub fn write_history_csv<W: Write>(records: &[EpochRecord], mut out: W) -> Result<()> {
    writeln!(out, "{HISTORY_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{:.3}",
            r.epoch, r.nce_loss, r.ent_penalty, r.decay_penalty, r.val_metric, r.wall_seconds
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the best validation epoch.
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Runs up to `max_epochs` passes over `pairs`.
///
/// Each epoch shuffles the pairs and draws fresh negatives from `sampler`,
/// both from one seeded stream. Training stops once validation has not
/// improved for `patience` epochs; a patience of 0 disables early stopping.
pub fn train(
    pairs: &[(u32, u32)],
    sampler: &NegativeSampler,
    mut model: Model,
    cfg: &TrainConfig,
    validation: &Validation,
    checkpoint: Option<&Checkpoint>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model.validate()?;
    if pairs.is_empty() {
        return Err(Error::Empty("no training pairs".into()));
    }
    let v = model.vocab_size();
    if sampler.len() != v {
        return Err(Error::Shape(format!(
            "sampler covers {} tokens, model has {v}",
            sampler.len()
        )));
    }
    if let Some(&(w, c)) = pairs
        .iter()
        .find(|&&(w, c)| w as usize >= v || c as usize >= v)
    {
        return Err(Error::InvalidArgument(format!(
            "pair ({w}, {c}) outside vocabulary of {v}"
        )));
    }
    let fallback = validation.is_empty();
    if fallback {
        warn!("validation set is empty; early stopping on training loss");
    }
    let higher_is_better = !fallback && validation.higher_is_better();

    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamState::new(ParamLayout::of(&model).len());
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Model)> = None;
    let mut since_best = 0;
    let mut consecutive_bad = 0;
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut sums = LossReport::default();
        let mut seen = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch_pairs: Vec<(u32, u32)> = chunk.iter().map(|&i| pairs[i]).collect();
            let negatives = (0..chunk.len() * cfg.negatives)
                .map(|_| sampler.sample(&mut rng))
                .collect();
            let batch = Batch::new(batch_pairs, negatives, cfg.negatives)?;
            match train_step(&mut model, &mut opt, &batch, cfg) {
                Ok(r) => {
                    consecutive_bad = 0;
                    let n = chunk.len() as f64;
                    sums.nce_loss += r.nce_loss * n;
                    sums.ent_penalty += r.ent_penalty * n;
                    sums.decay_penalty += r.decay_penalty * n;
                    sums.total += r.total * n;
                    seen += chunk.len();
                }
                Err(Error::NonFinite(what)) => {
                    consecutive_bad += 1;
                    if consecutive_bad >= 2 {
                        return Err(Error::NonFinite(format!(
                            "two consecutive non-finite steps in epoch {epoch}: {what}"
                        )));
                    }
                    warn!("skipping batch with non-finite {what}");
                }
                Err(e) => return Err(e),
            }
        }
        let denom = seen.max(1) as f64;
        let mean_total = sums.total / denom;
        let metric = if fallback {
            mean_total
        } else {
            validation.evaluate(&model)?
        };
        let record = EpochRecord {
            epoch,
            nce_loss: sums.nce_loss / denom,
            ent_penalty: sums.ent_penalty / denom,
            decay_penalty: sums.decay_penalty / denom,
            val_metric: metric,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        info!(
            "epoch {epoch}: nce {:.5} ent {:.2e} decay {:.2e} val {:.5}",
            record.nce_loss, record.ent_penalty, record.decay_penalty, metric
        );
        history.push(record);

        let improved = match &best {
            None => metric.is_finite(),
            Some((b, _, _)) => {
                if higher_is_better {
                    metric > *b
                } else {
                    metric < *b
                }
            }
        };
        if improved {
            best = Some((metric, epoch, model.clone()));
            since_best = 0;
            if let Some(ck) = checkpoint {
                model.save(&ck.path, &ck.tokens)?;
            }
        } else {
            since_best += 1;
            if cfg.patience > 0 && since_best >= cfg.patience {
                info!("no improvement for {since_best} epochs; stopping");
                stopped_early = epoch < cfg.max_epochs;
                break;
            }
        }
    }

    let (_, best_epoch, best_model) = match best {
        Some(b) => b,
        None => (f64::NAN, history.len(), model),
    };
    Ok(TrainOutcome {
        model: best_model,
        history,
        best_epoch,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ansatz::{CircuitConfig, Entanglement};
    use crate::scoring::HeadConfig;

    fn toy_setup() -> (Vec<(u32, u32)>, NegativeSampler, Model) {
        let mut pairs = Vec::new();
        for _ in 0..40 {
            pairs.extend([(0, 1), (1, 0), (2, 3), (3, 2)]);
        }
        let sampler = NegativeSampler::new(&[1.0; 4]).unwrap();
        let cfg = CircuitConfig::new(2, 1, Entanglement::Ring).unwrap();
        let model = Model::init(cfg, 4, HeadConfig::default(), 3).unwrap();
        (pairs, sampler, model)
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            learning_rate: 0.05,
            batch_size: 32,
            max_epochs: 6,
            patience: 0,
            seed: 11,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn fixed_seed_gives_identical_curves() {
        let (pairs, sampler, model) = toy_setup();
        let run = || {
            train(
                &pairs,
                &sampler,
                model.clone(),
                &small_config(),
                &Validation::TrainingLoss,
                None,
            )
            .unwrap()
        };
        let (a, b) = (run(), run());
        let strip = |h: &[EpochRecord]| -> Vec<(f64, f64, f64, f64)> {
            h.iter()
                .map(|r| (r.nce_loss, r.ent_penalty, r.decay_penalty, r.val_metric))
                .collect()
        };
        assert_eq!(strip(&a.history), strip(&b.history));
        assert_eq!(a.model, b.model);
        assert_eq!(a.history.len(), 6);
        assert!(a.history.last().unwrap().nce_loss < a.history[0].nce_loss);
    }

    #[test]
    fn empty_validation_falls_back_to_training_loss() {
        let (pairs, sampler, model) = toy_setup();
        let out = train(
            &pairs,
            &sampler,
            model,
            &small_config(),
            &Validation::ShiftedPmi(Vec::new()),
            None,
        )
        .unwrap();
        for r in &out.history {
            assert!((r.val_metric - (r.nce_loss + r.ent_penalty + r.decay_penalty)).abs() < 1e-9);
        }
    }

    #[test]
    fn patience_stops_early_and_keeps_best() {
        let (pairs, sampler, model) = toy_setup();
        // A target nothing can reach keeps the metric from improving for long.
        let targets = vec![PmiTarget {
            word: 0,
            context: 1,
            count: 10,
            target: 1e6,
        }];
        let cfg = TrainConfig {
            learning_rate: 1e-9,
            patience: 2,
            max_epochs: 20,
            ..small_config()
        };
        let dir = tempfile::tempdir().unwrap();
        let ck = Checkpoint {
            path: dir.path().join("best.qcwe"),
            tokens: ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect(),
        };
        let out = train(
            &pairs,
            &sampler,
            model,
            &cfg,
            &Validation::ShiftedPmi(targets),
            Some(&ck),
        )
        .unwrap();
        assert!(out.history.len() < 20);
        assert!(out.stopped_early);
        let (saved, _) = Model::load(&ck.path).unwrap();
        assert_eq!(saved, out.model);
        let best = out.history[out.best_epoch - 1].val_metric;
        assert!(out.history.iter().all(|r| r.val_metric >= best));
    }

    #[test]
    fn history_csv_layout() {
        let rec = EpochRecord {
            epoch: 1,
            nce_loss: 2.5,
            ent_penalty: 0.0,
            decay_penalty: 0.125,
            val_metric: 1.0,
            wall_seconds: 0.5,
        };
        let mut buf = Vec::new();
        write_history_csv(&[rec], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "epoch,nce_loss,ent_penalty,decay_penalty,val_metric,wall_seconds\n1,2.5,0,0.125,1,0.500\n"
        );
    }

    #[test]
    fn shifted_targets_and_split() {
        let mut pairs = vec![(0, 1); 6];
        pairs.extend(vec![(1, 0); 6]);
        pairs.extend(vec![(2, 2); 3]);
        let t = shifted_pmi_targets(&pairs, 5, 5).unwrap();
        assert_eq!(t.len(), 2);
        let expected = (6.0f64 * 15.0 / 36.0).ln() - 5f64.ln();
        assert!((t[0].target - expected).abs() < 1e-12);

        let (train_part, held) = split_holdout(&pairs, 0.2, 1).unwrap();
        assert_eq!(held.len(), 3);
        assert_eq!(train_part.len(), 12);
        assert!(split_holdout(&pairs, 1.0, 1).is_err());
    }

    #[test]
    fn input_errors() {
        let (pairs, sampler, model) = toy_setup();
        let cfg = small_config();
        assert!(train(
            &[],
            &sampler,
            model.clone(),
            &cfg,
            &Validation::TrainingLoss,
            None
        )
        .is_err());
        let wrong = NegativeSampler::new(&[1.0; 3]).unwrap();
        assert!(train(
            &pairs,
            &wrong,
            model.clone(),
            &cfg,
            &Validation::TrainingLoss,
            None
        )
        .is_err());
        assert!(train(
            &[(0, 9)],
            &sampler,
            model,
            &cfg,
            &Validation::TrainingLoss,
            None
        )
        .is_err());
    }
}
