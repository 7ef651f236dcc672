//! Oracle suites behind `qembed verify`. Everything stays at `Q ≤ 6`.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{VerifyArgs, EXIT_NUMERICAL, EXIT_OK};
use crate::ansatz::{embed, CircuitConfig, Entanglement, SharedParams, TokenParams};
use crate::error::Result;
use crate::model::Model;
use crate::noise::{noisy_fidelity_closed_form, noisy_fidelity_exact};
use crate::qstate::{bloch_vector, fidelity_pure, partial_trace, StateVector};
use crate::scoring::{HeadConfig, HeadKind};
use crate::trainer::{batch_gradient, batch_loss, Batch, GradientMethod, ParamLayout, TrainConfig};

const FD_STEP: f64 = 1e-5;
const PURITY_TOLERANCE: f64 = 1e-10;
const NOISE_TOLERANCE: f64 = 1e-10;

struct Suite {
    name: &'static str,
    pass: bool,
    detail: String,
}

pub(super) fn run(args: &VerifyArgs, seed: u64) -> Result<i32> {
    let suites = [
        timed(|| gradient_suite(args.gradient_instances, seed))?,
        timed(|| purity_suite(args.purity_circuits, seed))?,
        timed(|| noise_suite(args.noise_combos, seed))?,
    ];
    for s in &suites {
        println!(
            "{:<6} {:<18} {}",
            if s.pass { "PASS" } else { "FAIL" },
            s.name,
            s.detail
        );
    }
    Ok(if suites.iter().all(|s| s.pass) {
        EXIT_OK
    } else {
        EXIT_NUMERICAL
    })
}

fn timed(f: impl FnOnce() -> Result<Suite>) -> Result<Suite> {
    let start = Instant::now();
    let mut s = f()?;
    s.detail
        .push_str(&format!(" ({:.1}s)", start.elapsed().as_secs_f64()));
    Ok(s)
}

fn random_token(circuit: &CircuitConfig, rng: &mut ChaCha8Rng) -> TokenParams {
    let n = circuit.layer_size();
    TokenParams {
        alpha: (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
        z: (0..n).map(|_| rng.random_range(-3.0..3.0)).collect(),
        x: rng.random_range(-1.5..1.5),
    }
}

/// Analytic gradients of the full batch loss, by both methods, against
/// central finite differences.
fn gradient_suite(instances: usize, seed: u64) -> Result<Suite> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6772_6164);
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for i in 0..instances {
        let q = [2, 4, 6][i % 3];
        let b = 1 + (i / 3) % 3;
        let circuit = CircuitConfig::new(q, b, Entanglement::Ring)?;
        let head = if i % 2 == 0 {
            HeadConfig::logit_fidelity(rng.random_range(0.2..3.0), rng.random_range(-2.0..2.0))?
        } else {
            HeadConfig::fidelity(rng.random_range(0.5..12.0))?
        };
        let mut model = Model::init(circuit, 3, head, rng.random())?;
        for t in &mut model.tokens {
            *t = random_token(&circuit, &mut rng);
        }
        model.shared = SharedParams::init(&circuit, &mut rng);
        let pairs = (0..3)
            .map(|_| (rng.random_range(0..3), rng.random_range(0..3)))
            .collect();
        let negatives = (0..6).map(|_| rng.random_range(0..3)).collect();
        let batch = Batch::new(pairs, negatives, 2)?;
        let gradient = if i % 4 < 2 {
            GradientMethod::ParameterShift
        } else {
            GradientMethod::Adjoint
        };
        let cfg = TrainConfig {
            gradient,
            lambda_decay: rng.random_range(0.0..0.05),
            lambda_ent: rng.random_range(0.0..0.5),
            train_beta: true,
            ..TrainConfig::default()
        };

        let (_, grad) = batch_gradient(&model, &batch, &cfg)?;
        let layout = ParamLayout::of(&model);
        let n = layout.layer_size;
        let mut analytic = vec![0.0; layout.len()];
        for (id, rec) in &grad.tokens {
            let base = layout.token_offset(*id);
            analytic[base..base + n].copy_from_slice(&rec.d_alpha);
            analytic[base + n..base + 2 * n].copy_from_slice(&rec.d_z);
            analytic[base + 2 * n] = rec.d_x;
        }
        let s = layout.shared_offset();
        analytic[s..s + n].copy_from_slice(&grad.shared);
        let h = layout.head_offset();
        analytic[h] = grad.head.d_beta;
        analytic[h + 1] = grad.head.d_alpha;
        analytic[h + 2] = grad.head.d_b;

        let base = layout.flatten(&model);
        let mut probe = model.clone();
        for (j, &g) in analytic.iter().enumerate() {
            let unused = match head.kind {
                HeadKind::Fidelity => j == h + 1 || j == h + 2,
                HeadKind::LogitFidelity => j == h,
            };
            if unused {
                continue;
            }
            let mut p = base.clone();
            p[j] += FD_STEP;
            layout.unflatten(&mut probe, &p)?;
            let up = batch_loss(&probe, &batch, &cfg)?.total;
            p[j] -= 2.0 * FD_STEP;
            layout.unflatten(&mut probe, &p)?;
            let down = batch_loss(&probe, &batch, &cfg)?.total;
            let fd = (up - down) / (2.0 * FD_STEP);
            worst = worst.max((fd - g).abs() / (1e-3 * g.abs()).max(1e-4));
            checked += 1;
        }
    }
    Ok(Suite {
        name: "gradient check",
        pass: worst < 1.0,
        detail: format!(
            "{instances} instances, {checked} components, worst error/tolerance {worst:.2e}"
        ),
    })
}

/// Bloch-vector purity against the partial-trace reduced state.
fn purity_suite(circuits: usize, seed: u64) -> Result<Suite> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7075_7269);
    let patterns = [
        Entanglement::Ring,
        Entanglement::Linear,
        Entanglement::AllToAll,
        Entanglement::None,
    ];
    let mut worst = 0.0f64;
    for i in 0..circuits {
        let q = 1 + i % 6;
        let ent = if q == 1 {
            Entanglement::None
        } else {
            patterns[i % 4]
        };
        let circuit = CircuitConfig::new(q, 1 + (i / 6) % 3, ent)?;
        let tok = random_token(&circuit, &mut rng);
        let shared = SharedParams::init(&circuit, &mut rng);
        let state = embed(&circuit, &tok, &shared)?;
        for qubit in 0..q {
            let formula = bloch_vector(&state, qubit)?.purity();
            let reduced = partial_trace(&state, &[qubit])?.purity();
            worst = worst.max((formula - reduced).abs());
        }
    }
    Ok(Suite {
        name: "purity check",
        pass: worst < PURITY_TOLERANCE,
        detail: format!("{circuits} circuits, max |bloch - partial trace| {worst:.2e}"),
    })
}

/// Dense depolarized fidelity against the closed form.
fn noise_suite(combos: usize, seed: u64) -> Result<Suite> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6e6f_6973);
    let mut worst = 0.0f64;
    for i in 0..combos {
        let q = [2, 4, 6][i % 3];
        let a = StateVector::random(q, &mut rng)?;
        let b = StateVector::random(q, &mut rng)?;
        let p = rng.random_range(0.0..=1.0);
        let exact = noisy_fidelity_exact(&a, &b, p)?;
        let closed = noisy_fidelity_closed_form(fidelity_pure(&a, &b)?, p, q)?;
        worst = worst.max((exact - closed).abs());
    }
    Ok(Suite {
        name: "noise closed form",
        pass: worst < NOISE_TOLERANCE,
        detail: format!("{combos} combinations, max |exact - closed form| {worst:.2e}"),
    })
}
