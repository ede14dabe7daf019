//! Acceptance gate: one check per criterion, each printing a PASS/FAIL
//! line. Heavy fixtures (the planted multi-category benchmark) are shared
//! across checks. Run with `cargo test --test acceptance -- --nocapture`
//! to see the per-criterion lines on success.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use neurosym::classify::{self, ClassifierConfig, VariantKind};
use neurosym::embedding::{self, TrainConfig};
use neurosym::eval::{self, SplitMode};
use neurosym::scoring::{self, ScoringModels};
use neurosym::sedo::{self, AnchorSet, FineTuneMode, SedoAlignment};
use neurosym::semantic;
use neurosym::synth::{self, PlantedBenchmark};
use neurosym::topic::{self, TopicConfig, Variant};

fn benchmark() -> &'static PlantedBenchmark {
    static BENCH: OnceLock<PlantedBenchmark> = OnceLock::new();
    BENCH.get_or_init(|| synth::planted_benchmark(1000, 42))
}

fn bench_classifier_config() -> ClassifierConfig {
    ClassifierConfig { n_trees: 50, seed: 42, ..ClassifierConfig::default() }
}

fn pretrained_alignment() -> &'static SedoAlignment {
    static A: OnceLock<SedoAlignment> = OnceLock::new();
    A.get_or_init(|| {
        let b = benchmark();
        let anchors = sedo::build_anchor_pairs(&b.em_tweet, &b.em_kb, &b.domain_lexicon).unwrap();
        sedo::solve_sylvester(sedo::assemble(anchors, 1.0, None).unwrap()).unwrap()
    })
}

fn random_spd(rng: &mut impl Rng, d: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.gen::<f64>() - 0.5);
    &a * a.transpose() + DMatrix::identity(d, d) * 0.1
}

fn alignment_from_pqz(p: DMatrix<f64>, q: DMatrix<f64>, z: DMatrix<f64>) -> SedoAlignment {
    let d_m = p.nrows();
    let d_t = q.nrows();
    SedoAlignment {
        anchors: AnchorSet {
            terms: vec![],
            t: DMatrix::zeros(d_t, 1),
            m: DMatrix::zeros(d_m, 1),
            rank_warning: true,
        },
        delta: 1.0,
        epsilon_ridge: 0.0,
        p,
        q,
        z,
        w: None,
        residual: f64::NAN,
        singular_pairs: 0,
    }
}

fn c01_sylvester_correctness() {
    let start = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    for _ in 0..20 {
        let d_m = rng.gen_range(2..=12);
        let d_t = rng.gen_range(2..=12);
        let p = random_spd(&mut rng, d_m);
        let q = random_spd(&mut rng, d_t);
        let z = DMatrix::from_fn(d_m, d_t, |_, _| rng.gen::<f64>() - 0.5);
        let solved =
            sedo::solve_sylvester(alignment_from_pqz(p.clone(), q.clone(), z.clone())).unwrap();
        assert!(solved.residual <= 1e-8, "relative residual {}", solved.residual);
        let w = solved.w.as_ref().unwrap();
        let w_oracle = sedo::kron_solve(&p, &q, &z).unwrap();
        let diff = (w - &w_oracle).abs().max();
        assert!(diff <= 1e-8, "oracle disagreement {diff}");
    }
    assert!(start.elapsed().as_secs_f64() < 1.0, "took {:?}", start.elapsed());
}

fn c02_objective_stationarity() {
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let d = 5;
    let n = 7;
    let t = DMatrix::from_fn(d, n, |_, _| rng.gen::<f64>() - 0.5);
    let m = DMatrix::from_fn(d, n, |_, _| rng.gen::<f64>() - 0.5);
    let anchors = AnchorSet { terms: vec![], t: t.clone(), m: m.clone(), rank_warning: false };
    let solved =
        sedo::solve_sylvester(sedo::assemble(anchors, 1.0, Some(0.0)).unwrap()).unwrap();
    let w = solved.w.unwrap();
    let h = 1e-6;
    let mut max_grad: f64 = 0.0;
    for r in 0..d {
        for c in 0..d {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[(r, c)] += h;
            wm[(r, c)] -= h;
            let g = (sedo::alignment_objective(&t, &m, &wp, 1.0)
                - sedo::alignment_objective(&t, &m, &wm, 1.0))
                / (2.0 * h);
            max_grad = max_grad.max(g.abs());
        }
    }
    assert!(max_grad <= 1e-4, "finite-difference gradient {max_grad}");
}

fn c03_identity_fixed_point() {
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let d = 6;
    let n = 9;
    let t = DMatrix::from_fn(d, n, |_, _| rng.gen::<f64>() - 0.5);
    let anchors = AnchorSet { terms: vec![], t: t.clone(), m: t, rank_warning: false };
    let solved =
        sedo::solve_sylvester(sedo::assemble(anchors, 1.0, Some(0.0)).unwrap()).unwrap();
    let diff = (solved.w.unwrap() - DMatrix::<f64>::identity(d, d)).norm();
    assert!(diff <= 1e-8, "||W - I||_F = {diff}");
}

fn c04_diagonal_closed_form() {
    let p = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 1.0]));
    let q = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 3.0]));
    let z = DMatrix::from_row_slice(2, 2, &[3.0, 5.0, 2.0, 4.0]);
    let solved = sedo::solve_sylvester(alignment_from_pqz(p, q, z)).unwrap();
    let w = solved.w.unwrap();
    for r in 0..2 {
        for c in 0..2 {
            assert!((w[(r, c)] - 1.0).abs() <= 1e-12, "W[{r},{c}] = {}", w[(r, c)]);
        }
    }
}

fn c05_skipgram_separation() {
    let start = Instant::now();
    let corpus = synth::two_cluster_corpus(300, 42);
    let vocab = embedding::build_vocab(&corpus, 1).unwrap();
    let cfg = TrainConfig {
        dim: 16,
        window: 4,
        negatives: 5,
        epochs: 10,
        learning_rate: 0.05,
        subsample_t: 1.0,
        seed: 42,
        workers: 1,
    };
    let em = embedding::train_skipgram(&corpus, &vocab, &cfg).unwrap();
    let cluster = |p: char| -> Vec<&[f64]> {
        (1..=5).map(|i| em.vector(&format!("{p}{i}")).unwrap()).collect()
    };
    let (a, b) = (cluster('a'), cluster('b'));
    let mean_cos = |xs: &[&[f64]], ys: &[&[f64]], skip_same: bool| -> f64 {
        let mut acc = 0.0;
        let mut n = 0;
        for (i, x) in xs.iter().enumerate() {
            for (j, y) in ys.iter().enumerate() {
                if skip_same && i == j {
                    continue;
                }
                acc += embedding::cosine(x, y).unwrap();
                n += 1;
            }
        }
        acc / n as f64
    };
    let intra = (mean_cos(&a, &a, true) + mean_cos(&b, &b, true)) / 2.0;
    let inter = mean_cos(&a, &b, false);
    assert!(intra - inter >= 0.2, "intra {intra:.3} inter {inter:.3}");

    // analytic gradient of the negative-sampling objective vs finite differences
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let dim = 8;
    let rand_vec = |rng: &mut ChaCha20Rng| (0..dim).map(|_| rng.gen::<f64>() - 0.5).collect::<Vec<f64>>();
    let v = rand_vec(&mut rng);
    let ctx = rand_vec(&mut rng);
    let negs: Vec<Vec<f64>> = (0..3).map(|_| rand_vec(&mut rng)).collect();
    let neg_refs: Vec<&[f64]> = negs.iter().map(|x| x.as_slice()).collect();
    let (grad_v, grad_ctx, grad_negs) = embedding::ns_pair_gradient(&v, &ctx, &neg_refs);
    let h = 1e-6;
    let fd_check = |analytic: &[f64], mut perturb: Box<dyn FnMut(usize, f64) -> f64>| {
        for (d, &g) in analytic.iter().enumerate() {
            let fd = (perturb(d, h) - perturb(d, -h)) / (2.0 * h);
            let rel = (g - fd).abs() / fd.abs().max(1e-8);
            assert!(rel <= 1e-6, "gradient mismatch at {d}: {g} vs {fd}");
        }
    };
    let (v2, ctx2, negs2) = (v.clone(), ctx.clone(), negs.clone());
    fd_check(
        &grad_v,
        Box::new(move |d, eps| {
            let mut vv = v2.clone();
            vv[d] += eps;
            let nr: Vec<&[f64]> = negs2.iter().map(|x| x.as_slice()).collect();
            embedding::ns_pair_objective(&vv, &ctx2, &nr)
        }),
    );
    let (v3, ctx3, negs3) = (v.clone(), ctx.clone(), negs.clone());
    fd_check(
        &grad_ctx,
        Box::new(move |d, eps| {
            let mut cc = ctx3.clone();
            cc[d] += eps;
            let nr: Vec<&[f64]> = negs3.iter().map(|x| x.as_slice()).collect();
            embedding::ns_pair_objective(&v3, &cc, &nr)
        }),
    );
    for (i, gn) in grad_negs.iter().enumerate() {
        let (v4, ctx4, negs4) = (v.clone(), ctx.clone(), negs.clone());
        fd_check(
            gn,
            Box::new(move |d, eps| {
                let mut nn = negs4.clone();
                nn[i][d] += eps;
                let nr: Vec<&[f64]> = nn.iter().map(|x| x.as_slice()).collect();
                embedding::ns_pair_objective(&v4, &ctx4, &nr)
            }),
        );
    }
    assert!(start.elapsed().as_secs_f64() < 120.0, "took {:?}", start.elapsed());
}

fn c06_lda_recovery() {
    let corpus = synth::planted_two_topic_corpus(200, 42);
    let cfg = TopicConfig {
        k: 2,
        alpha: 1.0,
        beta: 0.01,
        iters: 300,
        burn_in: 100,
        fold_in_sweeps: 20,
        seed: 42,
    };
    let model = topic::train_lda(&corpus, Variant::UnigramLda, &cfg).unwrap();
    // planted distributions: uniform over each topic's three terms
    let truth: [Vec<&str>; 2] = [vec!["flu", "fever", "cough"], vec!["loan", "debt", "bank"]];
    let tv = |phi_row: &[f64], terms: &[&str]| -> f64 {
        let mut dist = vec![0.0; model.vocab.len()];
        for t in terms {
            dist[model.term_index(t).unwrap()] = 1.0 / terms.len() as f64;
        }
        0.5 * phi_row.iter().zip(&dist).map(|(a, b)| (a - b).abs()).sum::<f64>()
    };
    let assign_a = tv(&model.phi[0], &truth[0]).max(tv(&model.phi[1], &truth[1]));
    let assign_b = tv(&model.phi[0], &truth[1]).max(tv(&model.phi[1], &truth[0]));
    let best = assign_a.min(assign_b);
    assert!(best <= 0.15, "aligned TV distance {best:.3}");

    let ok = topic::audit_count_conservation(&corpus, Variant::UnigramLda, &cfg, 50).unwrap();
    assert!(ok, "count conservation violated during sweeps");
}

fn c07_filtering_percentile() {
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let mut scores: Vec<f64> = (0..1000).map(|i| (i + 1) as f64 / 1000.0).collect();
    use rand::seq::SliceRandom;
    scores.shuffle(&mut rng);
    let tau = semantic::compute_threshold(&scores, 75.0).unwrap();
    let retained = scores.iter().filter(|&&s| s > tau).count();
    assert!(
        (249..=251).contains(&retained),
        "retained {retained} documents at tau {tau}"
    );
    // monotonicity: higher tau never retains more
    let mut taus: Vec<f64> = (0..100).map(|_| rng.gen::<f64>() * 1.2).collect();
    taus.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let counts: Vec<usize> =
        taus.iter().map(|&t| scores.iter().filter(|&&s| s > t).count()).collect();
    for pair in counts.windows(2) {
        assert!(pair[1] <= pair[0], "retention not monotone in tau");
    }
}

fn c08_index_scoring() {
    let b = synth::planted_benchmark(30, 5);
    let cfg = TopicConfig {
        k: 3,
        alpha: 1.0,
        beta: 0.01,
        iters: 150,
        burn_in: 50,
        fold_in_sweeps: 20,
        seed: 5,
    };
    let tm_uni = topic::train_lda(&b.corpus, Variant::UnigramLda, &cfg).unwrap();
    let tm_ng = topic::train_lda(&b.corpus, Variant::NgramNlda, &cfg).unwrap();
    let models = ScoringModels {
        lex: &b.domain_lexicon,
        em: &b.em_tweet,
        tm_unigram: &tm_uni,
        tm_ngram: &tm_ng,
        top_k: 10,
    };
    for category in b.domain_lexicon.category_names() {
        let mut batch = scoring::score_batch(&b.corpus.documents, category, &models).unwrap();
        for s in &batch {
            assert!(
                (s.h_total - (s.h_ng + s.h_lda + s.h_nlda)).abs() <= 1e-12,
                "additivity violated for {}",
                s.doc_id
            );
        }
        // unique max precondition for the exactly-one-1.0 claim
        let max = batch.iter().map(|s| s.h_total).fold(f64::NEG_INFINITY, f64::max);
        let n_max = batch.iter().filter(|s| s.h_total == max).count();
        assert_eq!(n_max, 1, "batch max not unique for {category}");

        scoring::normalize_scores(&mut batch).unwrap();
        let mut ones = 0;
        for s in &batch {
            assert!((0.0..=1.0).contains(&s.nhs), "nhs {} out of range", s.nhs);
            if s.nhs == 1.0 {
                ones += 1;
            }
        }
        assert_eq!(ones, 1, "expected exactly one nhs == 1.0 for {category}");

        let labels = scoring::assign_labels(&batch, 0.5);
        // scaling every raw score by c > 0 must not change any label
        let mut scaled = scoring::score_batch(&b.corpus.documents, category, &models).unwrap();
        for s in &mut scaled {
            s.h_total *= 3.7;
        }
        scoring::normalize_scores(&mut scaled).unwrap();
        let labels2 = scoring::assign_labels(&scaled, 0.5);
        for (l1, l2) in labels.iter().zip(&labels2) {
            assert_eq!(l1.label, l2.label, "label changed under scaling for {}", l1.doc_id);
        }
    }
}

fn c09_directional_reproduction() {
    let start = Instant::now();
    let b = benchmark();
    let alignment = pretrained_alignment();
    let report = eval::run_sedo_comparison(
        &b.corpus,
        &b.gold,
        &b.timestamps,
        &b.em_tweet,
        alignment,
        &[VariantKind::Brf],
        &bench_classifier_config(),
        SplitMode::Chronological,
        0.8,
        42,
    )
    .unwrap();
    let with = report.mean_f1("brf", "with_sedo").unwrap();
    let without = report.mean_f1("brf", "without_sedo").unwrap();
    println!("  brf F1 with {with:.4} without {without:.4}");
    assert!(with >= 0.85, "with-alignment F1 {with:.4} < 0.85");
    assert!(with - without >= 0.03, "gap {:.4} < 0.03", with - without);
    assert!(start.elapsed().as_secs_f64() < 600.0, "took {:?}", start.elapsed());
}

fn c10_ablation_monotonicity() {
    let b = benchmark();
    let alignment = pretrained_alignment();
    let outcome = eval::run_ablation(
        &b.corpus,
        &b.gold,
        &b.timestamps,
        &b.general_lexicon,
        &b.domain_lexicon,
        &b.em_tweet,
        alignment,
        VariantKind::Brf,
        &bench_classifier_config(),
        SplitMode::Chronological,
        0.8,
        42,
    )
    .unwrap();
    println!("  ladder errors: {:?}", outcome.errors);
    assert_eq!(outcome.errors.len(), 5);
    for pair in outcome.errors.windows(2) {
        assert!(
            pair[1].1 <= pair[0].1 + 1e-9,
            "error increased {} ({:.4}) -> {} ({:.4})",
            pair[0].0,
            pair[0].1,
            pair[1].0,
            pair[1].1
        );
    }
}

fn c11_triangulation_direction() {
    let shifted = synth::shifted_benchmark(300, 42);
    let (report, _) = eval::run_triangulation(
        pretrained_alignment(),
        &shifted.corpus,
        &shifted.gold,
        &shifted.timestamps,
        &shifted.em_tweet,
        &shifted.em_kb,
        &shifted.lexicon,
        FineTuneMode::Replace,
        &[VariantKind::Brf],
        &bench_classifier_config(),
        SplitMode::Chronological,
        0.8,
        42,
    )
    .unwrap();
    let pre = report.mean_f1("brf", "pretrained").unwrap();
    let fine = report.mean_f1("brf", "finetuned").unwrap();
    println!("  brf F1 pretrained {pre:.4} finetuned {fine:.4}");
    assert!(fine >= pre, "fine-tuned {fine:.4} < pretrained {pre:.4}");
}

fn c12_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = synth::write_bundled_data(dir.path(), 42, 60).unwrap();
    let run = |out: &str| {
        let overrides = neurosym::pipeline::Overrides {
            seed: None,
            out: Some(dir.path().join(out)),
            set: vec![],
        };
        let cfg = neurosym::pipeline::load_config(&config_path, &overrides).unwrap();
        neurosym::pipeline::run("pipeline", cfg).unwrap();
    };
    run("out1");
    run("out2");
    for name in [
        "manifest.jsonl",
        "report.json",
        "report.csv",
        "ablation_report.json",
        "triangulation_report.json",
        "labels.jsonl",
    ] {
        let a = std::fs::read(dir.path().join("out1").join(name)).unwrap();
        let b = std::fs::read(dir.path().join("out2").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

fn c13_classifier_oracle() {
    // Gaussian NB vs the closed-form posterior of the 4-point dataset
    let x: Vec<classify::FeatureVector> = [0.0, 1.0, 10.0, 11.0]
        .iter()
        .enumerate()
        .map(|(i, &v)| classify::FeatureVector {
            doc_id: format!("d{i}"),
            x: vec![v],
            oov_fraction: 0.0,
        })
        .collect();
    let y = vec![0, 0, 1, 1];
    let cfg = ClassifierConfig { seed: 13, ..ClassifierConfig::default() };
    let clf = classify::train(VariantKind::Nb, &x, &y, "test", &cfg).unwrap();
    let closed_form = |probe: f64| -> f64 {
        let var = 0.25 + 1e-9 * 0.25;
        let dens = |mu: f64| {
            (-0.5 * (probe - mu) * (probe - mu) / var).exp()
                / (2.0 * std::f64::consts::PI * var).sqrt()
        };
        0.5 * dens(10.5) / (0.5 * dens(0.5) + 0.5 * dens(10.5))
    };
    for probe in [0.4, 5.25, 10.6, -3.0, 14.0] {
        let fv = classify::FeatureVector {
            doc_id: "p".into(),
            x: vec![probe],
            oov_fraction: 0.0,
        };
        let (_, score) = classify::predict(&clf, &[fv]).unwrap()[0];
        let want = closed_form(probe);
        assert!((score - want).abs() <= 1e-9, "x={probe}: {score} vs {want}");
    }

    // balanced-forest bootstrap audit: every tree draws n_min from each class
    let y_imbalanced: Vec<u8> = (0..40).map(|i| u8::from(i < 10)).collect();
    let cfg = ClassifierConfig { n_trees: 40, seed: 13, ..ClassifierConfig::default() };
    let counts = classify::audit_brf_bootstraps(&y_imbalanced, &cfg);
    assert_eq!(counts.len(), 40);
    for (t, c) in counts.iter().enumerate() {
        assert_eq!(c, &[10, 10], "tree {t} bootstrap class counts {c:?}");
    }
}

#[test]
fn acceptance() {
    let checks: Vec<(&str, Box<dyn FnOnce() + std::panic::UnwindSafe>)> = vec![
        ("01 sylvester correctness", Box::new(c01_sylvester_correctness)),
        ("02 objective stationarity", Box::new(c02_objective_stationarity)),
        ("03 identity fixed point", Box::new(c03_identity_fixed_point)),
        ("04 diagonal closed form", Box::new(c04_diagonal_closed_form)),
        ("05 skip-gram separation", Box::new(c05_skipgram_separation)),
        ("06 lda recovery", Box::new(c06_lda_recovery)),
        ("07 filtering percentile", Box::new(c07_filtering_percentile)),
        ("08 index scoring", Box::new(c08_index_scoring)),
        ("09 directional reproduction", Box::new(c09_directional_reproduction)),
        ("10 ablation monotonicity", Box::new(c10_ablation_monotonicity)),
        ("11 triangulation direction", Box::new(c11_triangulation_direction)),
        ("12 determinism", Box::new(c12_determinism)),
        ("13 classifier oracle", Box::new(c13_classifier_oracle)),
    ];
    let mut failures = Vec::new();
    for (name, check) in checks {
        let outcome = catch_unwind(AssertUnwindSafe(check));
        match outcome {
            Ok(()) => println!("acceptance {name}: PASS"),
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panic".to_string());
                println!("acceptance {name}: FAIL ({msg})");
                failures.push(name);
            }
        }
    }
    assert!(failures.is_empty(), "failed criteria: {failures:?}");
}
