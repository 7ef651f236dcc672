//! End-to-end acceptance checks. Prints one PASS/FAIL/SKIP line per
//! criterion and exits non-zero if any criterion fails.
//!
//! `ACCEPTANCE_ONLY=1,4` restricts the run to the listed criteria.
//! Criterion 6 needs external data and is skipped unless both
//! `QEMBED_TEXT8` and `QEMBED_WORDSIM` point at local files.

use std::path::Path;
use std::time::Instant;

use qembed::ansatz::{CircuitConfig, Entanglement, SharedParams, TokenParams};
use qembed::corpus::{build_vocab, gen_pairs, subsample, NegativeSampler, PairStream, Vocabulary};
use qembed::eval::{
    evaluate_similarity, nearest_neighbors, SimilarityDataset, SimilarityMeasure, SimilarityPair,
};
use qembed::model::{Lexicon, Model};
use qembed::noise::{noisy_fidelity_closed_form, noisy_fidelity_exact, snr_sweep, PrefactorReport};
use qembed::qstate::{bloch_vector, fidelity_pure, partial_trace, StateVector};
use qembed::scoring::{score, HeadConfig, HeadKind};
use qembed::synthetic::{two_topic_corpus, PlantedJoint};
use qembed::trainer::{
    batch_gradient, batch_loss, shifted_pmi_targets, split_holdout, train, Batch, Checkpoint,
    GradientMethod, ParamLayout, TrainConfig, Validation, MIN_VALIDATION_COUNT,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Status {
    Pass,
    Fail,
    Skip,
}

struct Outcome {
    id: &'static str,
    title: &'static str,
    status: Status,
    detail: String,
}

fn outcome(id: &'static str, title: &'static str, pass: bool, detail: String) -> Outcome {
    Outcome {
        id,
        title,
        status: if pass { Status::Pass } else { Status::Fail },
        detail,
    }
}

// ---------------------------------------------------------------- 1

fn gradient_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut worst_ratio, mut checked) = (0.0f64, 0usize);
    for instance in 0..100 {
        let q = [2, 4, 6][instance % 3];
        let b = [1, 2, 3][(instance / 3) % 3];
        let circuit = CircuitConfig::new(q, b, Entanglement::Ring).unwrap();
        let head = if rng.random::<bool>() {
            HeadConfig::logit_fidelity(rng.random_range(0.2..3.0), rng.random_range(-2.0..2.0))
                .unwrap()
        } else {
            HeadConfig::fidelity(rng.random_range(0.5..12.0)).unwrap()
        };
        let vocab = 3;
        let mut model = Model::init(circuit, vocab, head, rng.random()).unwrap();
        for t in &mut model.tokens {
            *t = random_token(&circuit, &mut rng);
        }
        model.shared = SharedParams::init(&circuit, &mut rng);
        let k = 2;
        let pairs: Vec<(u32, u32)> = (0..3)
            .map(|_| (rng.random_range(0..3), rng.random_range(0..3)))
            .collect();
        let negatives = (0..pairs.len() * k)
            .map(|_| rng.random_range(0..3))
            .collect();
        let batch = Batch::new(pairs, negatives, k).unwrap();
        let cfg = TrainConfig {
            gradient: GradientMethod::ParameterShift,
            lambda_decay: rng.random_range(0.0..0.05),
            lambda_ent: rng.random_range(0.0..0.5),
            train_beta: true,
            ..TrainConfig::default()
        };

        let (_, grad) = batch_gradient(&model, &batch, &cfg).unwrap();
        let layout = ParamLayout::of(&model);
        let mut analytic = vec![0.0; layout.len()];
        let n = layout.layer_size;
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
        let step = 1e-5;
        for i in 0..layout.len() {
            let unused_head = match head.kind {
                HeadKind::Fidelity => i == h + 1 || i == h + 2,
                HeadKind::LogitFidelity => i == h,
            };
            if unused_head {
                continue;
            }
            let mut p = base.clone();
            p[i] += step;
            layout.unflatten(&mut probe, &p).unwrap();
            let up = batch_loss(&probe, &batch, &cfg).unwrap().total;
            p[i] -= 2.0 * step;
            layout.unflatten(&mut probe, &p).unwrap();
            let down = batch_loss(&probe, &batch, &cfg).unwrap().total;
            let fd = (up - down) / (2.0 * step);
            let tol = (1e-3 * analytic[i].abs()).max(1e-4);
            worst_ratio = worst_ratio.max((fd - analytic[i]).abs() / tol);
            checked += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        "1",
        "gradient oracle",
        worst_ratio < 1.0 && secs < 120.0,
        format!("100 instances, {checked} components, worst error/tolerance {worst_ratio:.2e}, {secs:.1}s"),
    )
}

fn random_token(circuit: &CircuitConfig, rng: &mut ChaCha8Rng) -> TokenParams {
    let n = circuit.layer_size();
    TokenParams {
        alpha: (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
        z: (0..n).map(|_| rng.random_range(-3.0..3.0)).collect(),
        x: rng.random_range(-1.5..1.5),
    }
}

// ---------------------------------------------------------------- 2

fn purity_formula() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let q = 1 + i % 6;
        let b = 1 + (i / 6) % 3;
        let ent = [
            Entanglement::Ring,
            Entanglement::Linear,
            Entanglement::AllToAll,
            Entanglement::None,
        ][i % 4];
        let ent = if q == 1 { Entanglement::None } else { ent };
        let circuit = CircuitConfig::new(q, b, ent).unwrap();
        let tok = random_token(&circuit, &mut rng);
        let shared = SharedParams::init(&circuit, &mut rng);
        let state = qembed::ansatz::embed(&circuit, &tok, &shared).unwrap();
        for qubit in 0..q {
            let formula = bloch_vector(&state, qubit).unwrap().purity();
            let reduced = partial_trace(&state, &[qubit]).unwrap().purity();
            worst = worst.max((formula - reduced).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        "2",
        "purity formula",
        worst < 1e-10 && secs < 60.0,
        format!("1000 circuits, max |bloch - partial trace| {worst:.2e}, {secs:.1}s"),
    )
}

// ---------------------------------------------------------------- 3

fn noise_closed_form() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst = 0.0f64;
    let mut combos = 0;
    for q in [2, 4, 6] {
        // 134 + 133 + 133 = 400 (state pair, p) combinations.
        let count = if q == 2 { 134 } else { 133 };
        for _ in 0..count {
            let a = StateVector::random(q, &mut rng).unwrap();
            let b = StateVector::random(q, &mut rng).unwrap();
            let p = rng.random_range(0.0..=1.0);
            let exact = noisy_fidelity_exact(&a, &b, p).unwrap();
            let closed = noisy_fidelity_closed_form(fidelity_pure(&a, &b).unwrap(), p, q).unwrap();
            worst = worst.max((exact - closed).abs());
            combos += 1;
        }
    }
    let ps: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
    let report = PrefactorReport::from_rows(&snr_sweep(&[1, 2, 4, 6], &ps, 7).unwrap()).unwrap();
    let flagged = report.flagged();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        "3",
        "noise closed form",
        worst < 1e-10 && flagged == vec![2, 4, 6] && report.all_closed_form_agree() && secs < 120.0,
        format!(
            "{combos} combos, max |exact - closed| {worst:.2e}; (1-p)^2Q prefactor flagged at Q = {flagged:?}, {secs:.1}s"
        ),
    )
}

// ---------------------------------------------------------------- 4

struct PmiRun {
    rmse: f64,
    cells: usize,
    epochs: usize,
    secs: f64,
}

fn pmi_recovery(kind: HeadKind, seed: u64) -> PmiRun {
    let start = Instant::now();
    let k = 5;
    let joint = PlantedJoint::ring(10, 0.6).unwrap();
    let pairs = joint.sample_pairs(1_000_000, seed).unwrap();
    let mut counts = vec![0u64; 10];
    for &(w, _) in &pairs {
        counts[w as usize] += 1;
    }
    let sampler = NegativeSampler::from_counts(&counts).unwrap();
    let targets = shifted_pmi_targets(&pairs, k, 100).unwrap();
    let head = match kind {
        HeadKind::LogitFidelity => HeadConfig::logit_fidelity(1.0, 0.0).unwrap(),
        HeadKind::Fidelity => HeadConfig::fidelity(10.0).unwrap(),
    };
    let circuit = CircuitConfig::new(4, 2, Entanglement::Ring).unwrap();
    let model = Model::init(circuit, 10, head, seed).unwrap();
    let cfg = TrainConfig {
        learning_rate: 1e-2,
        negatives: k,
        max_epochs: 30,
        patience: 3,
        seed,
        ..TrainConfig::default()
    };
    let out = train(
        &pairs,
        &sampler,
        model,
        &cfg,
        &Validation::ShiftedPmi(targets.clone()),
        None,
    )
    .unwrap();
    let se: f64 = targets
        .iter()
        .map(|t| {
            let f = out.model.fidelity(t.word, t.context).unwrap();
            (score(&out.model.head, f).unwrap() - t.target).powi(2)
        })
        .sum();
    PmiRun {
        rmse: (se / targets.len() as f64).sqrt(),
        cells: targets.len(),
        epochs: out.history.len(),
        secs: start.elapsed().as_secs_f64(),
    }
}

// ---------------------------------------------------------------- 5

struct ClusterRun {
    margin: f64,
    neighbor_purity: f64,
    similarity_rho: f64,
    secs: f64,
    epochs: usize,
}

fn clustering(ent: Entanglement, seed: u64, checkpoint: Option<&Path>) -> ClusterRun {
    let start = Instant::now();
    let window = 5;
    let corpus = two_topic_corpus(50, 100_000, 10.0, window, seed).unwrap();
    let text: Vec<String> = corpus.tokens.iter().map(|t| format!("w{t:02}")).collect();
    let vocab = build_vocab(&text.join(" "), 1).unwrap();
    let ids = vocab.encode(text.iter().map(String::as_str));
    let topic_of = |id: u32| corpus.topic_of(vocab.token(id)[1..].parse().unwrap());

    let all_pairs: Vec<(u32, u32)> = gen_pairs(&PairStream::new(&ids, window, seed)).collect();
    let (pairs, held) = split_holdout(&all_pairs, 0.1, seed).unwrap();
    let k = 5;
    let targets = shifted_pmi_targets(&held, k, MIN_VALIDATION_COUNT).unwrap();
    let sampler = NegativeSampler::from_counts(vocab.counts()).unwrap();
    let circuit = CircuitConfig::new(4, 2, ent).unwrap();
    let model = Model::init(circuit, vocab.len(), HeadConfig::default(), seed).unwrap();
    let cfg = TrainConfig {
        learning_rate: 1e-2,
        negatives: k,
        max_epochs: 20,
        patience: 3,
        seed,
        ..TrainConfig::default()
    };
    let ck = checkpoint.map(|p| Checkpoint {
        path: p.to_path_buf(),
        tokens: vocab.tokens().to_vec(),
    });
    let out = train(
        &pairs,
        &sampler,
        model,
        &cfg,
        &Validation::ShiftedPmi(targets),
        ck.as_ref(),
    )
    .unwrap();

    let states = out.model.embed_all();
    let (mut within, mut nw, mut cross, mut nc) = (0.0, 0usize, 0.0, 0usize);
    for a in 0..vocab.len() {
        for b in (a + 1)..vocab.len() {
            let f = fidelity_pure(&states[a], &states[b]).unwrap();
            if topic_of(a as u32) == topic_of(b as u32) {
                within += f;
                nw += 1;
            } else {
                cross += f;
                nc += 1;
            }
        }
    }
    let mut hits = 0;
    for a in 0..vocab.len() as u32 {
        for (nb, _) in nearest_neighbors(&out.model, a, 3).unwrap() {
            if topic_of(nb) == topic_of(a) {
                hits += 1;
            }
        }
    }
    // Synthetic similarity file: same-topic pairs rated 1, others 0.
    let rows = (0..vocab.len() as u32)
        .flat_map(|a| ((a + 1)..vocab.len() as u32).map(move |b| (a, b)))
        .map(|(a, b)| SimilarityPair {
            left: vocab.token(a).to_string(),
            right: vocab.token(b).to_string(),
            score: if topic_of(a) == topic_of(b) { 1.0 } else { 0.0 },
        })
        .collect();
    let dataset = SimilarityDataset::new(rows).unwrap();
    let similarity = evaluate_similarity(
        &out.model,
        &Lexicon::from(&vocab),
        &dataset,
        SimilarityMeasure::Fidelity,
    )
    .unwrap();
    ClusterRun {
        margin: within / nw as f64 - cross / nc as f64,
        neighbor_purity: hits as f64 / (3 * vocab.len()) as f64,
        similarity_rho: similarity.spearman_rho,
        secs: start.elapsed().as_secs_f64(),
        epochs: out.history.len(),
    }
}

// ---------------------------------------------------------------- 6

/// Chosen to land near a 5k vocabulary on the first 5M characters.
const TEXT8_MIN_COUNT: u64 = 10;

fn text8_run() -> Outcome {
    let title = "scaled text8 run";
    let (Ok(text8), Ok(wordsim)) = (
        std::env::var("QEMBED_TEXT8"),
        std::env::var("QEMBED_WORDSIM"),
    ) else {
        return Outcome {
            id: "6",
            title,
            status: Status::Skip,
            detail: "needs QEMBED_TEXT8 and QEMBED_WORDSIM (external data not available offline)"
                .into(),
        };
    };
    let start = Instant::now();
    let raw = std::fs::read(&text8).expect("read text8");
    let prefix = String::from_utf8_lossy(&raw[..raw.len().min(5_000_000)]).into_owned();
    let vocab: Vocabulary = build_vocab(&prefix, TEXT8_MIN_COUNT).unwrap();
    let window = 5;
    let seed = 6;
    let ids = subsample(
        &vocab.encode(qembed::corpus::tokenize(&prefix)),
        &vocab,
        1e-5,
        &mut ChaCha8Rng::seed_from_u64(seed),
    )
    .unwrap();
    let pairs: Vec<(u32, u32)> = gen_pairs(&PairStream::new(&ids, window, seed)).collect();
    let sampler = NegativeSampler::from_counts(vocab.counts()).unwrap();
    let dataset = SimilarityDataset::read_tsv(std::io::BufReader::new(
        std::fs::File::open(&wordsim).expect("open similarity file"),
    ))
    .unwrap();
    let lexicon = Lexicon::from(&vocab);
    let circuit = CircuitConfig::new(6, 2, Entanglement::Ring).unwrap();
    let model = Model::init(circuit, vocab.len(), HeadConfig::default(), seed).unwrap();
    let cfg = TrainConfig {
        max_epochs: 5,
        patience: 0,
        seed,
        ..TrainConfig::default()
    };
    let validation = Validation::Similarity {
        dataset: dataset.clone(),
        lexicon: lexicon.clone(),
        measure: SimilarityMeasure::Fidelity,
    };
    let out = train(&pairs, &sampler, model, &cfg, &validation, None).unwrap();
    let report =
        evaluate_similarity(&out.model, &lexicon, &dataset, SimilarityMeasure::Fidelity).unwrap();
    outcome(
        "6",
        title,
        report.spearman_rho >= 0.35 && report.coverage >= 0.6,
        format!(
            "vocab {}, rho {:.3}, coverage {:.1}%, {:.0}s",
            vocab.len(),
            report.spearman_rho,
            100.0 * report.coverage,
            start.elapsed().as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- main

fn selected(id: &str) -> bool {
    match std::env::var("ACCEPTANCE_ONLY") {
        Ok(list) => list.split(',').any(|s| s.trim() == id),
        Err(_) => true,
    }
}

fn main() {
    // `cargo test` passes harness flags such as --nocapture; ignore them.
    let mut results = Vec::new();
    let mut report = |o: Outcome| {
        let tag = match o.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skip => "SKIP",
        };
        println!("criterion {} [{tag}] {}: {}", o.id, o.title, o.detail);
        results.push(o);
    };

    if selected("1") {
        report(gradient_oracle());
    }
    if selected("2") {
        report(purity_formula());
    }
    if selected("3") {
        report(noise_closed_form());
    }

    let mut lf_rmse = None;
    if selected("4") || selected("7") {
        let run = pmi_recovery(HeadKind::LogitFidelity, 4);
        if selected("4") {
            report(outcome(
                "4",
                "PMI recovery",
                run.rmse < 0.5 && run.secs < 1800.0,
                format!(
                    "RMSE {:.4} nats over {} cells (count >= 100), {} epochs, {:.0}s",
                    run.rmse, run.cells, run.epochs, run.secs
                ),
            ));
        }
        lf_rmse = Some(run.rmse);
    }

    let dir = tempfile::tempdir().expect("temp dir");
    let mut ring_margin = None;
    if selected("5") || selected("7") || selected("8") {
        let run = clustering(Entanglement::Ring, 5, Some(&dir.path().join("first.qcwe")));
        if selected("5") {
            report(outcome(
                "5",
                "semantic clustering",
                run.margin >= 0.2 && run.neighbor_purity >= 0.9 && run.secs < 1200.0,
                format!(
                    "within - cross fidelity {:.4}, top-3 neighbour purity {:.1}%, topic similarity rho {:.3}, {} epochs, {:.0}s",
                    run.margin,
                    100.0 * run.neighbor_purity,
                    run.similarity_rho,
                    run.epochs,
                    run.secs
                ),
            ));
        }
        ring_margin = Some(run.margin);
    }

    if selected("6") {
        report(text8_run());
    }

    if selected("7") {
        let none = clustering(Entanglement::None, 5, None);
        let f_head = pmi_recovery(HeadKind::Fidelity, 4);
        let ring = ring_margin.expect("ring run");
        let lf = lf_rmse.expect("LF run");
        report(outcome(
            "7",
            "ablation directions",
            none.margin < ring && lf <= f_head.rmse,
            format!(
                "(a) margin ring {ring:.4} vs none {:.4}; (b) RMSE LF {lf:.4} vs F {:.4}",
                none.margin, f_head.rmse
            ),
        ));
    }

    if selected("8") {
        let again = dir.path().join("second.qcwe");
        clustering(Entanglement::Ring, 5, Some(&again));
        let a = std::fs::read(dir.path().join("first.qcwe")).expect("first checkpoint");
        let b = std::fs::read(&again).expect("second checkpoint");
        report(outcome(
            "8",
            "determinism",
            a == b,
            format!(
                "two seeded runs, checkpoints of {} bytes, identical: {}",
                a.len(),
                a == b
            ),
        ));
    }

    let failed = results
        .iter()
        .filter(|o| matches!(o.status, Status::Fail))
        .count();
    println!(
        "acceptance: {} passed, {failed} failed, {} skipped",
        results
            .iter()
            .filter(|o| matches!(o.status, Status::Pass))
            .count(),
        results
            .iter()
            .filter(|o| matches!(o.status, Status::Skip))
            .count()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
