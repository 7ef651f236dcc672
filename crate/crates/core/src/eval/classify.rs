use std::collections::BTreeMap;
use std::io::BufRead;

use crate::corpus::tokenize;
use crate::error::{Error, Result};
use crate::model::{Lexicon, Model};
use crate::qstate::{StateVector, C64};

pub const LOGREG_ITERATIONS: usize = 500;
pub const LOGREG_L2: f64 = 1e-4;
pub const LOGREG_STEP: f64 = 0.5;

/// Real then imaginary parts of the amplitudes, after rotating the global
/// phase so the largest-magnitude amplitude is real and non-negative.
///
/// Magnitudes within `1e-12` of the maximum count as tied; the lowest such
/// index is the reference.
pub fn state_features(state: &StateVector) -> Vec<f64> {
    let amps = state.amplitudes();
    let max = amps.iter().map(|a| a.norm_sqr()).fold(0.0, f64::max);
    let reference = amps
        .iter()
        .position(|a| a.norm_sqr() >= max - 1e-12)
        .expect("state has at least one amplitude");
    let r = amps[reference];
    let phase = if r.norm() > 0.0 {
        r.conj() / r.norm()
    } else {
        C64::new(1.0, 0.0)
    };
    let rotated: Vec<C64> = amps.iter().map(|a| a * phase).collect();
    rotated
        .iter()
        .map(|a| a.re)
        .chain(rotated.iter().map(|a| a.im))
        .collect()
}

/// Per-token features of a whole model, computed once.
#[derive(Debug, Clone)]
pub struct FeatureTable {
    rows: Vec<Vec<f64>>,
}

impl FeatureTable {
    pub fn new(model: &Model) -> Self {
        Self {
            rows: model.embed_all().iter().map(state_features).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    /// Mean feature vector over the in-vocabulary tokens.
    pub fn document<S: AsRef<str>>(&self, lexicon: &Lexicon, tokens: &[S]) -> Result<Vec<f64>> {
        let mut sum = vec![0.0; self.dim()];
        let mut n = 0usize;
        for t in tokens {
            if let Some(id) = lexicon.id(t.as_ref()) {
                sum.iter_mut()
                    .zip(&self.rows[id as usize])
                    .for_each(|(s, v)| *s += v);
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::OutOfVocabulary("every token of the document".into()));
        }
        sum.iter_mut().for_each(|s| *s /= n as f64);
        Ok(sum)
    }
}

/// Document features from scratch; see [`FeatureTable`] for repeated use.
pub fn features<S: AsRef<str>>(model: &Model, lexicon: &Lexicon, tokens: &[S]) -> Result<Vec<f64>> {
    FeatureTable::new(model).document(lexicon, tokens)
}

/// `label<TAB>text` rows, text tokenized with the corpus rule.
pub fn read_labeled_texts<R: BufRead>(input: R) -> Result<Vec<(String, Vec<String>)>> {
    let mut rows = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (label, text) = line.split_once('\t').ok_or_else(|| {
            Error::Format(format!("classification line {}: missing tab", lineno + 1))
        })?;
        rows.push((label.trim().to_string(), tokenize(text)));
    }
    Ok(rows)
}

/// Maps string labels to dense indices in sorted order.
pub fn label_index<'a, I: IntoIterator<Item = &'a str>>(labels: I) -> BTreeMap<String, usize> {
    let mut set: Vec<&str> = labels.into_iter().collect();
    set.sort_unstable();
    set.dedup();
    set.into_iter()
        .enumerate()
        .map(|(i, l)| (l.to_string(), i))
        .collect()
}

/// Multinomial logistic regression, full-batch gradient descent from zero
/// weights with L2 penalty. Features are standardized with training
/// statistics. Prediction ties go to the class most frequent in training.
/// Returns test accuracy.
pub fn logreg_train_eval(
    train: &[(Vec<f64>, usize)],
    test: &[(Vec<f64>, usize)],
    classes: usize,
    iterations: usize,
) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Empty("no test examples".into()));
    }
    let dim = train.first().map_or(0, |r| r.0.len());
    if let Some((x, y)) = train
        .iter()
        .chain(test)
        .find(|(x, y)| x.len() != dim || *y >= classes)
    {
        return Err(Error::Shape(format!(
            "example with {} features and label {y} (expected {dim} features, {classes} classes)",
            x.len()
        )));
    }
    let mut counts = vec![0usize; classes];
    for (_, y) in train {
        counts[*y] += 1;
    }
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::Degenerate(
            "training set has fewer than 2 classes".into(),
        ));
    }

    let n = train.len() as f64;
    let mut mean = vec![0.0; dim];
    for (x, _) in train {
        mean.iter_mut().zip(x).for_each(|(m, v)| *m += v / n);
    }
    let mut scale = vec![0.0; dim];
    for (x, _) in train {
        scale
            .iter_mut()
            .zip(x.iter().zip(&mean))
            .for_each(|(s, (v, m))| *s += (v - m).powi(2) / n);
    }
    scale
        .iter_mut()
        .for_each(|s| *s = if *s > 1e-24 { 1.0 / s.sqrt() } else { 0.0 });
    let standardize = |x: &[f64]| -> Vec<f64> {
        x.iter()
            .zip(&mean)
            .zip(&scale)
            .map(|((v, m), s)| (v - m) * s)
            .collect()
    };
    let xs: Vec<Vec<f64>> = train.iter().map(|(x, _)| standardize(x)).collect();

    // Row c holds class c's weights followed by its bias.
    let mut w = vec![vec![0.0; dim + 1]; classes];
    let logits = |w: &[Vec<f64>], x: &[f64]| -> Vec<f64> {
        w.iter()
            .map(|row| row[dim] + row[..dim].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    };
    for _ in 0..iterations {
        let mut grad = vec![vec![0.0; dim + 1]; classes];
        for (x, (_, y)) in xs.iter().zip(train) {
            let z = logits(&w, x);
            let zmax = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = z.iter().map(|v| (v - zmax).exp()).collect();
            let total: f64 = e.iter().sum();
            for (c, g) in grad.iter_mut().enumerate() {
                let err = e[c] / total - if c == *y { 1.0 } else { 0.0 };
                g[..dim]
                    .iter_mut()
                    .zip(x)
                    .for_each(|(gi, xi)| *gi += err * xi / n);
                g[dim] += err / n;
            }
        }
        for (row, g) in w.iter_mut().zip(&grad) {
            for i in 0..dim {
                row[i] -= LOGREG_STEP * (g[i] + 2.0 * LOGREG_L2 * row[i]);
            }
            row[dim] -= LOGREG_STEP * g[dim];
        }
    }

    let correct = test
        .iter()
        .filter(|(x, y)| {
            let z = logits(&w, &standardize(x));
            let best = (0..classes)
                .max_by(|&a, &b| {
                    z[a].total_cmp(&z[b])
                        .then(counts[a].cmp(&counts[b]))
                        .then(b.cmp(&a))
                })
                .expect("at least two classes");
            best == *y
        })
        .count();
    Ok(correct as f64 / test.len() as f64)
}
