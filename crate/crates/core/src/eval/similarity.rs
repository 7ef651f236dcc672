use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use super::rank::spearman;
use crate::error::{Error, Result};
use crate::model::{Lexicon, Model};
use crate::qstate::{inner_unchecked, StateVector};
use crate::scoring::score_unchecked;

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityPair {
    pub left: String,
    pub right: String,
    pub score: f64,
}

/// Human-rated word pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimilarityDataset {
    rows: Vec<SimilarityPair>,
}

impl SimilarityDataset {
    pub fn new(rows: Vec<SimilarityPair>) -> Result<Self> {
        if let Some(r) = rows.iter().find(|r| !r.score.is_finite()) {
            return Err(Error::NonFinite(format!(
                "score for ({}, {})",
                r.left, r.right
            )));
        }
        Ok(Self { rows })
    }

    /// Tab-separated `word1 word2 score`. Words are lowercased. A first
    /// line whose score does not parse is taken as a header; blank lines
    /// and `#` comments are skipped.
    pub fn read_tsv<R: BufRead>(input: R) -> Result<Self> {
        let mut rows = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split('\t').map(str::trim).collect();
            if fields.len() < 3 {
                return Err(Error::Format(format!(
                    "similarity line {}: expected 3 tab-separated fields",
                    lineno + 1
                )));
            }
            match fields[2].parse::<f64>() {
                Ok(score) => rows.push(SimilarityPair {
                    left: fields[0].to_lowercase(),
                    right: fields[1].to_lowercase(),
                    score,
                }),
                Err(_) if rows.is_empty() && lineno == 0 => continue,
                Err(_) => {
                    return Err(Error::Format(format!(
                        "similarity line {}: bad score '{}'",
                        lineno + 1,
                        fields[2]
                    )))
                }
            }
        }
        Self::new(rows)
    }

    pub fn rows(&self) -> &[SimilarityPair] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// What the model reports as the similarity of two words.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SimilarityMeasure {
    #[default]
    Fidelity,
    /// The model's scoring head applied to the fidelity.
    Score,
}

impl fmt::Display for SimilarityMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Fidelity => "fidelity",
            Self::Score => "score",
        })
    }
}

impl FromStr for SimilarityMeasure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fidelity" => Ok(Self::Fidelity),
            "score" => Ok(Self::Score),
            _ => Err(Error::InvalidArgument(format!(
                "unknown similarity measure '{s}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub spearman_rho: f64,
    /// Fraction of rows with both words in the vocabulary.
    pub coverage: f64,
    pub n_used: usize,
    pub n_total: usize,
}

impl EvalReport {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "spearman_rho,coverage,n_used,n_total")?;
        writeln!(
            out,
            "{},{},{},{}",
            self.spearman_rho, self.coverage, self.n_used, self.n_total
        )?;
        Ok(())
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "spearman rho  {:.4}", self.spearman_rho)?;
        writeln!(f, "coverage      {:.1}%", 100.0 * self.coverage)?;
        write!(f, "pairs used    {} / {}", self.n_used, self.n_total)
    }
}

/// Spearman correlation between human scores and model similarities.
/// Rows with an out-of-vocabulary word are skipped and counted.
pub fn evaluate_similarity(
    model: &Model,
    lexicon: &Lexicon,
    dataset: &SimilarityDataset,
    measure: SimilarityMeasure,
) -> Result<EvalReport> {
    let mut human = Vec::new();
    let mut predicted = Vec::new();
    let mut cache: HashMap<u32, StateVector> = HashMap::new();
    for row in dataset.rows() {
        let (Some(a), Some(b)) = (lexicon.id(&row.left), lexicon.id(&row.right)) else {
            continue;
        };
        for id in [a, b] {
            if let Entry::Vacant(e) = cache.entry(id) {
                e.insert(model.embed(id)?);
            }
        }
        let f = inner_unchecked(cache[&a].amplitudes(), cache[&b].amplitudes()).norm_sqr();
        predicted.push(match measure {
            SimilarityMeasure::Fidelity => f,
            SimilarityMeasure::Score => score_unchecked(&model.head, f),
        });
        human.push(row.score);
    }
    let n_total = dataset.len();
    let coverage = if n_total == 0 {
        0.0
    } else {
        human.len() as f64 / n_total as f64
    };
    if human.len() < 2 {
        return Err(Error::Degenerate(format!(
            "only {} usable similarity pairs (coverage {:.1}%)",
            human.len(),
            100.0 * coverage
        )));
    }
    Ok(EvalReport {
        spearman_rho: spearman(&human, &predicted)?,
        coverage,
        n_used: human.len(),
        n_total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ansatz::{CircuitConfig, Entanglement};
    use crate::scoring::HeadConfig;

    fn lexicon() -> Lexicon {
        Lexicon::new(["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect()).unwrap()
    }

    fn model(head: HeadConfig) -> Model {
        let cfg = CircuitConfig::new(2, 1, Entanglement::Ring).unwrap();
        let mut m = Model::init(cfg, 4, head, 5).unwrap();
        for (i, t) in m.tokens.iter_mut().enumerate() {
            t.x = 0.7 * i as f64;
            t.alpha = vec![1.0; 2];
        }
        m
    }

    fn dataset() -> SimilarityDataset {
        let text = "word1\tword2\tscore\nA\tb\t3.0\na\tc\t2.0\na\td\t1.0\nb\tc\t2.5\nc\td\t4.0\nzz\ta\t1.0\n";
        SimilarityDataset::read_tsv(text.as_bytes()).unwrap()
    }

    #[test]
    fn parses_with_header_and_lowercases() {
        let d = dataset();
        assert_eq!(d.len(), 6);
        assert_eq!(d.rows()[0].left, "a");
        assert!(SimilarityDataset::read_tsv("a\tb\tx\nc\td\ty\n".as_bytes()).is_err());
        assert!(SimilarityDataset::read_tsv("a\tb\n".as_bytes()).is_err());
    }

    #[test]
    fn coverage_counts_oov_rows() {
        let r = evaluate_similarity(
            &model(HeadConfig::default()),
            &lexicon(),
            &dataset(),
            SimilarityMeasure::Fidelity,
        )
        .unwrap();
        assert_eq!(r.n_used, 5);
        assert_eq!(r.n_total, 6);
        assert!((r.coverage - 5.0 / 6.0).abs() < 1e-15);
        assert!((-1.0..=1.0).contains(&r.spearman_rho));
    }

    #[test]
    fn all_oov_is_an_error() {
        let d = SimilarityDataset::read_tsv("x\ty\t1\ny\tz\t2\n".as_bytes()).unwrap();
        let err = evaluate_similarity(
            &model(HeadConfig::default()),
            &lexicon(),
            &d,
            SimilarityMeasure::Fidelity,
        )
        .unwrap_err();
        assert!(err.to_string().contains("coverage 0.0%"), "{err}");
    }

    #[test]
    fn identical_states_have_no_rank_variance() {
        let mut m = model(HeadConfig::default());
        let first = m.tokens[0].clone();
        m.tokens.iter_mut().for_each(|t| *t = first.clone());
        let err = evaluate_similarity(&m, &lexicon(), &dataset(), SimilarityMeasure::Fidelity)
            .unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)));
    }

    #[test]
    fn heads_agree_on_rank_order() {
        let lex = lexicon();
        let d = dataset();
        let f = evaluate_similarity(
            &model(HeadConfig::fidelity(10.0).unwrap()),
            &lex,
            &d,
            SimilarityMeasure::Score,
        )
        .unwrap();
        let lf = evaluate_similarity(
            &model(HeadConfig::logit_fidelity(0.5, 1.0).unwrap()),
            &lex,
            &d,
            SimilarityMeasure::Score,
        )
        .unwrap();
        let raw = evaluate_similarity(
            &model(HeadConfig::default()),
            &lex,
            &d,
            SimilarityMeasure::Fidelity,
        )
        .unwrap();
        assert_eq!(f.spearman_rho, lf.spearman_rho);
        assert_eq!(f.spearman_rho, raw.spearman_rho);
    }
}
