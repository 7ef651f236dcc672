use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;

use super::adam::AdamState;
use super::config::{GradientMethod, TrainConfig};
use super::loss::{ent_regularizer, nce_loss, sigmoid};
use crate::ansatz::{
    adjoint_from_cotangent, embed_unchecked, grad_parameter_shift, purities_of, FidelityObjective,
    GradientRecord, ImpurityPenalty, StateObjective, WeightedSum,
};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::qstate::{inner_unchecked, StateVector, C64};
use crate::scoring::{
    score_gradient_unchecked, score_param_gradient, score_unchecked, HeadGradient, HeadKind,
};

/// Smallest value the head's scale parameters may take after an update.
pub const MIN_HEAD_SCALE: f64 = 1e-3;

/// Positive pairs with `k` negatives each, stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pairs: Vec<(u32, u32)>,
    negatives: Vec<u32>,
    k: usize,
}

impl Batch {
    pub fn new(pairs: Vec<(u32, u32)>, negatives: Vec<u32>, k: usize) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Empty("batch has no pairs".into()));
        }
        if k == 0 || negatives.len() != pairs.len() * k {
            return Err(Error::Shape(format!(
                "{} negatives for {} pairs at k = {k}",
                negatives.len(),
                pairs.len()
            )));
        }
        Ok(Self {
            pairs,
            negatives,
            k,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn pairs(&self) -> &[(u32, u32)] {
        &self.pairs
    }

    pub fn negatives_of(&self, i: usize) -> &[u32] {
        &self.negatives[i * self.k..(i + 1) * self.k]
    }

    /// Distinct token ids in ascending order.
    pub fn tokens(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self
            .pairs
            .iter()
            .flat_map(|&(w, c)| [w, c])
            .chain(self.negatives.iter().copied())
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    pub nce_loss: f64,
    pub ent_penalty: f64,
    pub decay_penalty: f64,
    pub total: f64,
    pub grad_norm: f64,
}

/// Gradient of the total batch loss. Tokens absent from the batch have
/// zero gradient and are not listed.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradient {
    pub tokens: Vec<(u32, GradientRecord)>,
    pub shared: Vec<f64>,
    pub head: HeadGradient,
}

impl ModelGradient {
    fn components(&self) -> impl Iterator<Item = f64> + '_ {
        self.tokens
            .iter()
            .flat_map(|(_, g)| {
                g.d_alpha
                    .iter()
                    .chain(&g.d_z)
                    .chain(std::iter::once(&g.d_x))
            })
            .chain(&self.shared)
            .copied()
            .chain([self.head.d_beta, self.head.d_alpha, self.head.d_b])
    }

    pub fn norm(&self) -> f64 {
        self.components().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.components().all(f64::is_finite)
    }
}

/// Positions of a model's parameters in one flat vector:
/// tokens (alpha, z, x each), then the shared offsets, then `[beta, alpha, b]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub vocab_size: usize,
    pub layer_size: usize,
}

impl ParamLayout {
    pub fn of(model: &Model) -> Self {
        Self {
            vocab_size: model.vocab_size(),
            layer_size: model.circuit.layer_size(),
        }
    }

    pub fn per_token(&self) -> usize {
        2 * self.layer_size + 1
    }

    pub fn token_offset(&self, id: u32) -> usize {
        id as usize * self.per_token()
    }

    pub fn shared_offset(&self) -> usize {
        self.vocab_size * self.per_token()
    }

    pub fn head_offset(&self) -> usize {
        self.shared_offset() + self.layer_size
    }

    pub fn len(&self) -> usize {
        self.head_offset() + 3
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn flatten(&self, model: &Model) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for t in &model.tokens {
            out.extend_from_slice(&t.alpha);
            out.extend_from_slice(&t.z);
            out.push(t.x);
        }
        out.extend_from_slice(&model.shared.a);
        out.extend([model.head.beta, model.head.alpha, model.head.b]);
        out
    }

    pub fn unflatten(&self, model: &mut Model, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() || ParamLayout::of(model) != *self {
            return Err(Error::Shape(format!(
                "flat vector of {} for layout of {}",
                flat.len(),
                self.len()
            )));
        }
        let n = self.layer_size;
        for (t, chunk) in model.tokens.iter_mut().zip(flat.chunks(self.per_token())) {
            t.alpha.copy_from_slice(&chunk[..n]);
            t.z.copy_from_slice(&chunk[n..2 * n]);
            t.x = chunk[2 * n];
        }
        let s = self.shared_offset();
        model.shared.a.copy_from_slice(&flat[s..s + n]);
        let h = self.head_offset();
        model.head.beta = flat[h];
        model.head.alpha = flat[h + 1];
        model.head.b = flat[h + 2];
        Ok(())
    }
}

struct Forward {
    report: LossReport,
    slots: Vec<u32>,
    states: Vec<StateVector>,
    /// Per slot: `(partner slot, ∂loss/∂F)` in batch order.
    incident: Vec<Vec<(usize, f64)>>,
    head: HeadGradient,
}

fn check_batch(model: &Model, batch: &Batch) -> Result<()> {
    let v = model.vocab_size() as u32;
    if let Some(&bad) = batch.tokens().iter().find(|&&t| t >= v) {
        return Err(Error::InvalidArgument(format!(
            "token id {bad} outside vocabulary of {v}"
        )));
    }
    Ok(())
}

fn forward(model: &Model, batch: &Batch, cfg: &TrainConfig) -> Result<Forward> {
    check_batch(model, batch)?;
    let slots = batch.tokens();
    let slot_of: HashMap<u32, usize> = slots.iter().enumerate().map(|(i, &t)| (t, i)).collect();
    let states: Vec<StateVector> = slots
        .par_iter()
        .map(|&t| embed_unchecked(&model.circuit, &model.tokens[t as usize], &model.shared))
        .collect();
    let head = &model.head;

    // Per pair: fidelities of the positive then each negative.
    let fids: Vec<Vec<f64>> = (0..batch.len())
        .into_par_iter()
        .map(|i| {
            let (w, c) = batch.pairs()[i];
            let sw = &states[slot_of[&w]];
            std::iter::once(c)
                .chain(batch.negatives_of(i).iter().copied())
                .map(|o| {
                    inner_unchecked(sw.amplitudes(), states[slot_of[&o]].amplitudes()).norm_sqr()
                })
                .collect()
        })
        .collect();

    let positive: Vec<f64> = fids.iter().map(|f| score_unchecked(head, f[0])).collect();
    let negative: Vec<Vec<f64>> = fids
        .iter()
        .map(|f| f[1..].iter().map(|&x| score_unchecked(head, x)).collect())
        .collect();
    let nce = nce_loss(&positive, &negative)?;

    let purities: Vec<Vec<f64>> = states.par_iter().map(purities_of).collect();
    let ent = ent_regularizer(&purities, cfg.lambda_ent)?;

    let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    let decay = cfg.lambda_decay
        * (slots
            .iter()
            .map(|&t| {
                let p = &model.tokens[t as usize];
                sq(&p.alpha) + sq(&p.z)
            })
            .sum::<f64>()
            + sq(&model.shared.a));

    let n = batch.len() as f64;
    let mut incident = vec![Vec::new(); slots.len()];
    let mut head_grad = HeadGradient::default();
    for i in 0..batch.len() {
        let (w, c) = batch.pairs()[i];
        let sw = slot_of[&w];
        let others = std::iter::once((c, positive[i], true)).chain(
            batch
                .negatives_of(i)
                .iter()
                .zip(&negative[i])
                .map(|(&o, &s)| (o, s, false)),
        );
        for (j, (o, s, is_positive)) in others.enumerate() {
            let d_s = if is_positive {
                sigmoid(s) - 1.0
            } else {
                sigmoid(s)
            } / n;
            let f = fids[i][j];
            let hp = score_param_gradient(head, f);
            head_grad.d_beta += d_s * hp.d_beta;
            head_grad.d_alpha += d_s * hp.d_alpha;
            head_grad.d_b += d_s * hp.d_b;
            let d_f = d_s * score_gradient_unchecked(head, f);
            let so = slot_of[&o];
            if so != sw && d_f != 0.0 {
                incident[sw].push((so, d_f));
                incident[so].push((sw, d_f));
            }
        }
    }
    match head.kind {
        HeadKind::Fidelity => {
            head_grad.d_alpha = 0.0;
            head_grad.d_b = 0.0;
            if !cfg.train_beta {
                head_grad.d_beta = 0.0;
            }
        }
        HeadKind::LogitFidelity => head_grad.d_beta = 0.0,
    }

    Ok(Forward {
        report: LossReport {
            nce_loss: nce,
            ent_penalty: ent,
            decay_penalty: decay,
            total: nce + ent + decay,
            grad_norm: 0.0,
        },
        slots,
        states,
        incident,
        head: head_grad,
    })
}

/// Loss terms on a batch without gradients.
pub fn batch_loss(model: &Model, batch: &Batch, cfg: &TrainConfig) -> Result<LossReport> {
    Ok(forward(model, batch, cfg)?.report)
}

/// Loss terms and the gradient of their total.
pub fn batch_gradient(
    model: &Model,
    batch: &Batch,
    cfg: &TrainConfig,
) -> Result<(LossReport, ModelGradient)> {
    let fw = forward(model, batch, cfg)?;
    let circuit = &model.circuit;
    let nq = circuit.num_qubits();
    let ent_coef = if fw.slots.is_empty() {
        0.0
    } else {
        cfg.lambda_ent / (fw.slots.len() * nq) as f64
    };
    let penalty = ImpurityPenalty {
        coefficient: ent_coef,
    };

    let records: Vec<Result<GradientRecord>> = (0..fw.slots.len())
        .into_par_iter()
        .map(|slot| {
            let tok = &model.tokens[fw.slots[slot] as usize];
            let state = &fw.states[slot];
            match cfg.gradient {
                GradientMethod::Adjoint => {
                    let mut cot = vec![C64::new(0.0, 0.0); state.dim()];
                    for &(other, d_f) in &fw.incident[slot] {
                        let partner = fw.states[other].amplitudes();
                        let overlap = inner_unchecked(partner, state.amplitudes()) * d_f;
                        cot.iter_mut()
                            .zip(partner)
                            .for_each(|(g, p)| *g += p * overlap);
                    }
                    if ent_coef != 0.0 {
                        let e = penalty.expectations(state);
                        let w = penalty.combine_grad(&e);
                        let ent = penalty.weighted_observable(state, &w);
                        cot.iter_mut().zip(&ent).for_each(|(g, v)| *g += v);
                    }
                    Ok(adjoint_from_cotangent(
                        circuit,
                        tok,
                        &model.shared,
                        state,
                        cot,
                    ))
                }
                GradientMethod::ParameterShift => {
                    let mut partners: BTreeMap<usize, f64> = BTreeMap::new();
                    for &(other, d_f) in &fw.incident[slot] {
                        *partners.entry(other).or_default() += d_f;
                    }
                    let mut objective = WeightedSum::new(nq);
                    for (other, d_f) in partners {
                        objective = objective.with(
                            d_f,
                            FidelityObjective {
                                target: fw.states[other].clone(),
                            },
                        );
                    }
                    objective = objective.with(1.0, penalty);
                    grad_parameter_shift(circuit, tok, &model.shared, &objective)
                }
            }
        })
        .collect();

    let mut shared = vec![0.0; circuit.layer_size()];
    let mut tokens = Vec::with_capacity(fw.slots.len());
    for (slot, rec) in records.into_iter().enumerate() {
        let mut rec = rec?;
        let id = fw.slots[slot];
        let p = &model.tokens[id as usize];
        let two_l = 2.0 * cfg.lambda_decay;
        rec.d_alpha
            .iter_mut()
            .zip(&p.alpha)
            .for_each(|(g, v)| *g += two_l * v);
        rec.d_z
            .iter_mut()
            .zip(&p.z)
            .for_each(|(g, v)| *g += two_l * v);
        shared
            .iter_mut()
            .zip(&rec.d_a_shared)
            .for_each(|(s, g)| *s += g);
        tokens.push((id, rec));
    }
    let two_l = 2.0 * cfg.lambda_decay;
    shared
        .iter_mut()
        .zip(&model.shared.a)
        .for_each(|(g, v)| *g += two_l * v);

    let grad = ModelGradient {
        tokens,
        shared,
        head: fw.head,
    };
    let mut report = fw.report;
    report.grad_norm = grad.norm();
    Ok((report, grad))
}

/// One Adam update on the batch. On a non-finite loss or gradient the
/// model and optimizer are left untouched and an error is returned.
pub fn train_step(
    model: &mut Model,
    opt: &mut AdamState,
    batch: &Batch,
    cfg: &TrainConfig,
) -> Result<LossReport> {
    let layout = ParamLayout::of(model);
    if opt.len() != layout.len() {
        return Err(Error::Shape(format!(
            "optimizer tracks {} parameters, model has {}",
            opt.len(),
            layout.len()
        )));
    }
    let (report, grad) = batch_gradient(model, batch, cfg)?;
    if !report.total.is_finite() {
        return Err(Error::NonFinite(format!("batch loss {}", report.total)));
    }
    if !grad.is_finite() {
        return Err(Error::NonFinite("batch gradient".into()));
    }

    let n = layout.layer_size;
    let mut sparse = Vec::with_capacity(grad.tokens.len() * layout.per_token() + n + 3);
    for (id, rec) in &grad.tokens {
        let base = layout.token_offset(*id);
        sparse.extend(rec.d_alpha.iter().enumerate().map(|(i, &g)| (base + i, g)));
        sparse.extend(rec.d_z.iter().enumerate().map(|(i, &g)| (base + n + i, g)));
        sparse.push((base + 2 * n, rec.d_x));
    }
    let s = layout.shared_offset();
    sparse.extend(grad.shared.iter().enumerate().map(|(i, &g)| (s + i, g)));
    let h = layout.head_offset();
    match model.head.kind {
        HeadKind::Fidelity if cfg.train_beta => sparse.push((h, grad.head.d_beta)),
        HeadKind::Fidelity => {}
        HeadKind::LogitFidelity => {
            sparse.push((h + 1, grad.head.d_alpha));
            sparse.push((h + 2, grad.head.d_b));
        }
    }

    for (i, d) in opt.deltas(&sparse, cfg.learning_rate)? {
        if i < s {
            let id = i / layout.per_token();
            let j = i % layout.per_token();
            let t = &mut model.tokens[id];
            if j < n {
                t.alpha[j] += d;
            } else if j < 2 * n {
                t.z[j - n] += d;
            } else {
                t.x += d;
            }
        } else if i < h {
            model.shared.a[i - s] += d;
        } else {
            match i - h {
                0 => model.head.beta = (model.head.beta + d).max(MIN_HEAD_SCALE),
                1 => model.head.alpha = (model.head.alpha + d).max(MIN_HEAD_SCALE),
                _ => model.head.b += d,
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests;
