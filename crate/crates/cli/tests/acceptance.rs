//! Acceptance suite. One test per criterion; each prints a PASS line with
//! the measured margins (visible with `--nocapture`).
//!
//! The oracles here are written independently of the library's dynamic
//! programming and backpropagation: exhaustive path enumeration for the
//! CRF checks and central finite differences for the gradient checks.

#![allow(clippy::needless_range_loop)]

use std::fmt::Write as _;
use std::fs;
use std::process::Command;
use std::time::Instant;

use serde::Deserialize;

use vptag::rng::{derive_seed, SplitMix64};
use vptag::synthbench::{generate_domains, norm_skew_config, quickstart_config, separable_config};
use vptag::training::{
    episode_nll, evaluate_on_domain, evaluate_with_finetune, train, ModelParams, TrainConfig,
};
use vptag::{
    error_types, run_metric_comparison, serialize_domain_file, span_f1, Averaging,
    EmbeddingProvider, Episode, ExpandedTransitions, F1Report, HashedConfig, LabeledSentence,
    Lattice, LinearHead, MetricKind, Sentence, SupportSet, SynthConfig, TagSeq,
};

// ---------------------------------------------------------------------
// Criterion 1: CRF inference vs exhaustive enumeration.
// ---------------------------------------------------------------------

/// All K^T label paths.
fn all_paths(t: usize, k: usize) -> Vec<Vec<usize>> {
    let mut paths: Vec<Vec<usize>> = vec![vec![]];
    for _ in 0..t {
        paths = paths
            .into_iter()
            .flat_map(|p| {
                (0..k).map(move |y| {
                    let mut q = p.clone();
                    q.push(y);
                    q
                })
            })
            .collect();
    }
    paths
}

fn path_score(lat: &Lattice, path: &[usize]) -> f64 {
    let trans = lat.transitions();
    let mut score = trans.start_score(path[0]);
    for i in 1..path.len() {
        score += trans.trans_score(path[i - 1], path[i]);
    }
    for (i, &y) in path.iter().enumerate() {
        score += lat.emission(i, y);
    }
    score
}

fn brute_log_partition(lat: &Lattice, paths: &[Vec<usize>]) -> f64 {
    let scores: Vec<f64> = paths.iter().map(|p| path_score(lat, p)).collect();
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln()
}

#[test]
fn criterion_1_crf_oracle_suite() {
    let start = Instant::now();
    let mut rng = SplitMix64::new(0xACCE_0001);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let t = rng.next_range(1, 5);
        let k = rng.next_range(1, 4);
        let emissions: Vec<Vec<f64>> = (0..t)
            .map(|_| (0..k).map(|_| rng.next_f64() * 4.0 - 2.0).collect())
            .collect();
        let start_scores: Vec<f64> = (0..k).map(|_| rng.next_f64() * 4.0 - 2.0).collect();
        let trans: Vec<f64> = (0..k * k).map(|_| rng.next_f64() * 4.0 - 2.0).collect();
        let lat = Lattice::new(
            emissions,
            ExpandedTransitions::from_parts(start_scores, trans, k),
        );

        let paths = all_paths(t, k);
        let brute_z = brute_log_partition(&lat, &paths);

        // Log-partition.
        let dp_z = vptag::log_partition(&lat);
        worst = worst.max((dp_z - brute_z).abs());
        assert!((dp_z - brute_z).abs() <= 1e-9);

        // Posterior probability of a random path.
        let random_path: Vec<usize> = (0..t).map(|_| rng.next_usize(k)).collect();
        let p_dp = (-vptag::posterior_nll(&lat, &random_path)).exp();
        let p_brute = (path_score(&lat, &random_path) - brute_z).exp();
        worst = worst.max((p_dp - p_brute).abs());
        assert!((p_dp - p_brute).abs() <= 1e-9);

        // Viterbi score vs exhaustive argmax.
        let (_, dp_best) = vptag::viterbi(&lat);
        let brute_best = paths
            .iter()
            .map(|p| path_score(&lat, p))
            .fold(f64::NEG_INFINITY, f64::max);
        worst = worst.max((dp_best - brute_best).abs());
        assert!((dp_best - brute_best).abs() <= 1e-9);

        // Node and edge marginals.
        let marg = vptag::marginals(&lat);
        let mut node = vec![vec![0.0; k]; t];
        let mut edge = vec![vec![vec![0.0; k]; k]; t.saturating_sub(1)];
        for path in &paths {
            let p = (path_score(&lat, path) - brute_z).exp();
            for (i, &y) in path.iter().enumerate() {
                node[i][y] += p;
            }
            for i in 0..t - 1 {
                edge[i][path[i]][path[i + 1]] += p;
            }
        }
        for i in 0..t {
            for y in 0..k {
                worst = worst.max((marg.node[i][y] - node[i][y]).abs());
                assert!((marg.node[i][y] - node[i][y]).abs() <= 1e-9);
            }
        }
        for i in 0..t - 1 {
            for j in 0..k {
                for y in 0..k {
                    worst = worst.max((marg.edge[i][j][y] - edge[i][j][y]).abs());
                    assert!((marg.edge[i][j][y] - edge[i][j][y]).abs() <= 1e-9);
                }
            }
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");
    println!("criterion 1 (crf oracle suite): PASS — 200 lattices, worst |Δ| = {worst:.3e}, {elapsed:?}");
}

// ---------------------------------------------------------------------
// Criterion 2: analytic gradients vs central finite differences.
// ---------------------------------------------------------------------

struct EpisodeBuilder {
    rng: SplitMix64,
    token_counter: u64,
}

impl EpisodeBuilder {
    fn labeled(&mut self, len: usize, force_first: Option<&str>) -> LabeledSentence {
        let mut tokens = Vec::with_capacity(len);
        let mut tags = Vec::with_capacity(len);
        for i in 0..len {
            self.token_counter += 1;
            tokens.push(format!("t{}", self.token_counter));
            let tag = if i == 0 {
                match force_first {
                    Some(tag) => tag.to_string(),
                    None => self.random_tag(),
                }
            } else {
                self.random_tag()
            };
            tags.push(tag);
        }
        LabeledSentence::new(
            Sentence::new(None, tokens).unwrap(),
            TagSeq::new(tags).unwrap(),
        )
        .unwrap()
    }

    fn random_tag(&mut self) -> String {
        match self.rng.next_usize(5) {
            0 => "B-a".into(),
            1 => "I-a".into(),
            2 => "B-b".into(),
            3 => "I-b".into(),
            _ => "O".into(),
        }
    }

    fn episode(&mut self) -> Episode {
        let mut sized = |extra: usize, first: Option<&str>| {
            let len = 3 + self.rng.next_usize(extra);
            self.labeled(len, first)
        };
        let support = SupportSet::new(vec![
            sized(3, Some("B-a")),
            sized(3, Some("B-b")),
            sized(3, None),
        ])
        .unwrap();
        let query = vec![sized(2, None), sized(2, None)];
        Episode { support, query }
    }
}

/// Enumerates every trainable scalar of `params` as (label, getter index).
fn flat_params(params: &ModelParams) -> Vec<String> {
    let mut names: Vec<String> = (0..16).map(|i| format!("cdt[{i}]")).collect();
    if let Some(head) = &params.head {
        for r in 0..head.d_out() {
            for c in 0..head.d_in() {
                names.push(format!("head[{r}][{c}]"));
            }
        }
    }
    if params.lambda().is_some() {
        names.push("lambda".into());
    }
    names
}

fn get_flat(params: &ModelParams, idx: usize) -> f64 {
    if idx < 16 {
        return params.cdt.get_flat(idx);
    }
    let mut idx = idx - 16;
    if let Some(head) = &params.head {
        let n = head.d_out() * head.d_in();
        if idx < n {
            return head.matrix()[idx / head.d_in()][idx % head.d_in()];
        }
        idx -= n;
    }
    assert_eq!(idx, 0);
    params.lambda().unwrap()
}

fn set_flat(params: &mut ModelParams, idx: usize, value: f64) {
    if idx < 16 {
        params.cdt.set_flat(idx, value);
        return;
    }
    let mut idx = idx - 16;
    if let Some(head) = &mut params.head {
        let n = head.d_out() * head.d_in();
        if idx < n {
            let d_in = head.d_in();
            head.matrix_mut()[idx / d_in][idx % d_in] = value;
            return;
        }
        idx -= n;
    }
    assert_eq!(idx, 0);
    if let MetricKind::ScaledDot { lambda } = &mut params.metric {
        *lambda = value;
    } else {
        panic!("no lambda to set");
    }
}

fn grad_flat(grads: &vptag::ModelGrads, idx: usize) -> f64 {
    if idx < 16 {
        return grads.cdt.get_flat(idx);
    }
    let mut idx = idx - 16;
    if let Some(head) = &grads.head {
        let n = head.len() * head[0].len();
        if idx < n {
            return head[idx / head[0].len()][idx % head[0].len()];
        }
        idx -= n;
    }
    assert_eq!(idx, 0);
    grads.lambda.unwrap()
}

#[test]
fn criterion_2_gradient_suite() {
    let start = Instant::now();
    const DIM: usize = 4;
    const H: f64 = 1e-5;
    let metrics = [
        MetricKind::Vp,
        MetricKind::Vpb,
        MetricKind::Dot,
        MetricKind::ReverseProjection,
        MetricKind::Cosine,
        MetricKind::SqEuclid,
        MetricKind::ScaledDot { lambda: 1.3 },
        MetricKind::DotBias,
    ];
    let mut checked = 0usize;
    let mut worst_rel: f64 = 0.0;
    for (m, metric) in metrics.iter().enumerate() {
        let mut builder = EpisodeBuilder {
            rng: SplitMix64::new(derive_seed(0xACCE_0002, m as u64)),
            token_counter: 0,
        };
        for case in 0..50 {
            let episode = builder.episode();
            let provider = EmbeddingProvider::Hashed(HashedConfig {
                dim: DIM,
                seed: derive_seed(0xACCE_0003, (m * 50 + case) as u64),
            });

            // Random parameter point: perturbed identity head, small
            // random transition cells.
            let mut params = ModelParams::new(*metric, Some(DIM));
            for i in 0..16 {
                params.cdt.set_flat(i, builder.rng.next_f64() - 0.5);
            }
            let mut head = LinearHead::identity(DIM);
            for row in head.matrix_mut() {
                for cell in row.iter_mut() {
                    *cell += 0.1 * (builder.rng.next_f64() * 2.0 - 1.0);
                }
            }
            params.head = Some(head);

            let (_, grads) = episode_nll(&params, &episode, &provider).unwrap();
            let n = flat_params(&params).len();
            for idx in 0..n {
                let base = get_flat(&params, idx);
                let mut up = params.clone();
                set_flat(&mut up, idx, base + H);
                let mut down = params.clone();
                set_flat(&mut down, idx, base - H);
                let (loss_up, _) = episode_nll(&up, &episode, &provider).unwrap();
                let (loss_down, _) = episode_nll(&down, &episode, &provider).unwrap();
                let fd = (loss_up - loss_down) / (2.0 * H);
                let analytic = grad_flat(&grads, idx);
                let err = (fd - analytic).abs();
                if analytic.abs() < 1e-6 {
                    assert!(
                        err <= 1e-8,
                        "{} case {case} {}: fd {fd:e} vs analytic {analytic:e}",
                        metric.name(),
                        flat_params(&params)[idx]
                    );
                } else {
                    let rel = err / analytic.abs();
                    worst_rel = worst_rel.max(rel);
                    assert!(
                        rel <= 1e-4,
                        "{} case {case} {}: fd {fd} vs analytic {analytic} (rel {rel:e})",
                        metric.name(),
                        flat_params(&params)[idx]
                    );
                }
                checked += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}");
    println!("criterion 2 (gradient suite): PASS — {checked} parameters checked across 8 metrics, worst rel err = {worst_rel:.3e}, {elapsed:?}");
}

// ---------------------------------------------------------------------
// Criterion 3: metric identities.
// ---------------------------------------------------------------------

#[test]
fn criterion_3_metric_identity_suite() {
    let mut rng = SplitMix64::new(0xACCE_0004);
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

    let mut worst_expansion: f64 = 0.0;
    for _ in 0..10_000 {
        let d = rng.next_range(2, 8);
        let x: Vec<f64> = (0..d).map(|_| rng.next_f64() * 2.0 - 1.0).collect();
        let c: Vec<f64> = (0..d).map(|_| rng.next_f64() * 2.0 - 1.0).collect();
        let lhs = vptag::sim(&x, &c, MetricKind::SqEuclid) - vptag::sim(&x, &c, MetricKind::DotBias);
        let rhs = -0.5 * dot(&x, &x);
        worst_expansion = worst_expansion.max((lhs - rhs).abs());
        assert!((lhs - rhs).abs() <= 1e-12);
    }

    let argmax = |x: &[f64], cs: &[Vec<f64>], m: MetricKind| {
        (0..cs.len())
            .max_by(|&a, &b| {
                vptag::sim(x, &cs[a], m)
                    .partial_cmp(&vptag::sim(x, &cs[b], m))
                    .unwrap()
            })
            .unwrap()
    };
    let mut worst_scale: f64 = 0.0;
    for _ in 0..2_000 {
        let d = rng.next_range(2, 8);
        let x: Vec<f64> = (0..d).map(|_| rng.next_gaussian()).collect();
        let cs: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..d).map(|_| rng.next_gaussian()).collect())
            .collect();
        assert_eq!(
            argmax(&x, &cs, MetricKind::SqEuclid),
            argmax(&x, &cs, MetricKind::DotBias)
        );
        assert_eq!(
            argmax(&x, &cs, MetricKind::Cosine),
            argmax(&x, &cs, MetricKind::Vp)
        );
        for lambda in [0.5, 2.0, 17.0] {
            assert_eq!(
                argmax(&x, &cs, MetricKind::ScaledDot { lambda }),
                argmax(&x, &cs, MetricKind::Dot)
            );
        }
        let base = vptag::sim(&x, &cs[0], MetricKind::Vp);
        for alpha in [0.5, 2.0, 10.0] {
            let scaled: Vec<f64> = cs[0].iter().map(|v| alpha * v).collect();
            let diff = (vptag::sim(&x, &scaled, MetricKind::Vp) - base).abs();
            worst_scale = worst_scale.max(diff);
            assert!(diff <= 1e-12);
        }
    }
    println!("criterion 3 (metric identities): PASS — worst expansion |Δ| = {worst_expansion:.3e}, worst scale-invariance |Δ| = {worst_scale:.3e}");
}

// ---------------------------------------------------------------------
// Criteria 4 and 5: conlleval parity and error-type accounting.
// ---------------------------------------------------------------------

#[derive(Deserialize)]
struct ConllCase {
    name: String,
    pred: Vec<Vec<String>>,
    gold: Vec<Vec<String>>,
    tp: usize,
    n_pred: usize,
    n_gold: usize,
    precision: f64,
    recall: f64,
    f1: f64,
}

fn conll_cases() -> Vec<ConllCase> {
    serde_json::from_str(include_str!("data/conlleval_cases.json")).unwrap()
}

fn to_tagseqs(raw: &[Vec<String>]) -> Vec<TagSeq> {
    raw.iter()
        .map(|tags| TagSeq::new(tags.clone()).unwrap())
        .collect()
}

#[test]
fn criterion_4_conlleval_parity() {
    let cases = conll_cases();
    assert!(cases.len() >= 20, "need at least 20 fixtures");
    for case in &cases {
        let pred = to_tagseqs(&case.pred);
        let gold = to_tagseqs(&case.gold);
        let report = span_f1(&pred, &gold).unwrap();
        // Counts must be exact; P/R/F1 must equal the values recomputed
        // from those counts, and match the hand-verified fixtures.
        assert_eq!(
            (report.tp, report.n_pred, report.n_gold),
            (case.tp, case.n_pred, case.n_gold),
            "{}",
            case.name
        );
        let expected = F1Report::from_counts(case.tp, case.n_pred, case.n_gold);
        assert_eq!(report.precision, expected.precision, "{}", case.name);
        assert_eq!(report.recall, expected.recall, "{}", case.name);
        assert_eq!(report.f1, expected.f1, "{}", case.name);
        assert!((report.precision - case.precision).abs() <= 1e-12, "{}", case.name);
        assert!((report.recall - case.recall).abs() <= 1e-12, "{}", case.name);
        assert!((report.f1 - case.f1).abs() <= 1e-12, "{}", case.name);
    }
    println!(
        "criterion 4 (conlleval parity): PASS — {} fixtures reproduced exactly",
        cases.len()
    );
}

#[test]
fn criterion_5_error_type_suite() {
    // Token accounting on every parity fixture.
    let mut fixtures = 0;
    for case in conll_cases() {
        let pred = to_tagseqs(&case.pred);
        let gold = to_tagseqs(&case.gold);
        for (p, g) in pred.iter().zip(&gold) {
            let counts = error_types(p, g).unwrap();
            assert_eq!(counts.total(), p.len(), "{}", case.name);
            fixtures += 1;
        }
    }

    // Worked examples.
    let seq = |tags: &[&str]| TagSeq::new(tags.iter().map(|s| s.to_string()).collect()).unwrap();
    let counts = error_types(&seq(&["O", "B-a"]), &seq(&["O", "B-a"])).unwrap();
    assert_eq!((counts.c, counts.ox, counts.xo, counts.xx), (2, 0, 0, 0));
    let counts = error_types(&seq(&["B-a"]), &seq(&["O"])).unwrap();
    assert_eq!((counts.c, counts.ox, counts.xo, counts.xx), (0, 1, 0, 0));
    let counts = error_types(&seq(&["B-b", "O"]), &seq(&["B-a", "I-a"])).unwrap();
    assert_eq!((counts.c, counts.ox, counts.xo, counts.xx), (0, 0, 1, 1));

    println!("criterion 5 (error types): PASS — {fixtures} sentences balance exactly; worked examples reproduced");
}

// ---------------------------------------------------------------------
// Criterion 6: synthetic metric ordering under norm skew.
// ---------------------------------------------------------------------

#[test]
fn criterion_6_synthetic_metric_ordering() {
    let start = Instant::now();
    let cfg = norm_skew_config();
    assert_eq!(cfg.norm_skew, 10.0);
    assert_eq!(cfg.shots, 5);
    let metrics = [MetricKind::Vp, MetricKind::Dot, MetricKind::Vpb];
    let rows = run_metric_comparison(&cfg, &metrics, &TrainConfig::default(), 5).unwrap();
    let f1 = |name: &str| rows.iter().find(|r| r.metric == name).unwrap().mean_f1;
    let (vp, dot, vpb) = (f1("vp"), f1("dot"), f1("vpb"));
    assert!(
        vp - dot >= 0.05,
        "projection should beat dot by >= 0.05: vp {vp:.4} dot {dot:.4}"
    );
    assert!(
        vpb >= vp - 0.01,
        "bias should not lose to plain projection: vpb {vpb:.4} vp {vp:.4}"
    );
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 300.0, "took {elapsed:?}");
    println!(
        "criterion 6 (metric ordering): PASS — vp {vp:.4}, dot {dot:.4} (gap {:.4}), vpb {vpb:.4}, {elapsed:?}",
        vp - dot
    );
}

// ---------------------------------------------------------------------
// Criterion 7: fine-tuning trend.
// ---------------------------------------------------------------------

#[test]
fn criterion_7_finetune_trend() {
    let start = Instant::now();
    let cfg = norm_skew_config();
    let steps = [0usize, 1, 3, 5, 10];
    let n_seeds = 5;
    let mut means = vec![0.0; steps.len()];
    for s in 0..n_seeds {
        let data = generate_domains(&SynthConfig {
            seed: derive_seed(cfg.seed, 500 + s as u64),
            ..cfg.clone()
        })
        .unwrap();
        let provider = EmbeddingProvider::Contextual(data.store);
        let run_cfg = TrainConfig {
            seed: derive_seed(0, s as u64),
            ..TrainConfig::default()
        };
        let params = ModelParams::new(MetricKind::Vp, None);
        let (best, _) = train(&params, &data.train, &data.val, &provider, &run_cfg).unwrap();
        for (i, k) in steps.iter().enumerate() {
            let (_, f1) = evaluate_with_finetune(
                &best,
                &data.test,
                &provider,
                *k,
                &run_cfg,
                Averaging::Episode,
            )
            .unwrap();
            means[i] += f1 / n_seeds as f64;
        }
    }
    for window in means.windows(2) {
        assert!(
            window[1] >= window[0] - 0.01,
            "fine-tuning degraded F1 beyond tolerance: {means:?}"
        );
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 300.0, "took {elapsed:?}");
    let mut shown = String::new();
    for (k, mean) in steps.iter().zip(&means) {
        let _ = write!(shown, " {k}:{mean:.4}");
    }
    println!("criterion 7 (fine-tune trend): PASS —{shown}, {elapsed:?}");
}

// ---------------------------------------------------------------------
// Criterion 8: byte-identical training runs through the CLI.
// ---------------------------------------------------------------------

#[test]
fn criterion_8_cli_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path();

    let data = generate_domains(&quickstart_config()).unwrap();
    let mut train_paths = Vec::new();
    for file in &data.train {
        let path = base.join(format!("{}.json", file.domain));
        fs::write(&path, serialize_domain_file(file)).unwrap();
        train_paths.push(path.display().to_string());
    }
    let val_path = base.join("val.json");
    fs::write(&val_path, serialize_domain_file(&data.val)).unwrap();
    let store_path = base.join("store.jsonl");
    fs::write(&store_path, data.store.to_jsonl()).unwrap();

    let config = serde_json::json!({
        "data": {"train": train_paths, "validation": val_path.display().to_string()},
        "embeddings": {"kind": "contextual", "path": store_path.display().to_string()},
        "model": {"metric": "vp", "head": false},
        "train": {"iterations": 3, "seed": 41}
    });
    let config_path = base.join("run.json");
    fs::write(&config_path, serde_json::to_string_pretty(&config).unwrap()).unwrap();

    let run = |out: &str| {
        let out_path = base.join(out);
        let status = Command::new(env!("CARGO_BIN_EXE_vptag"))
            .args([
                "train",
                "--config",
                &config_path.display().to_string(),
                "--out",
                &out_path.display().to_string(),
            ])
            .status()
            .unwrap();
        assert!(status.success());
        (
            fs::read(&out_path).unwrap(),
            fs::read(base.join(format!("{out}.history.tsv"))).unwrap(),
        )
    };
    let (ck1, h1) = run("a.json");
    let (ck2, h2) = run("b.json");
    assert_eq!(ck1, ck2, "checkpoints differ between runs");
    assert_eq!(h1, h2, "history files differ between runs");
    println!(
        "criterion 8 (determinism): PASS — {} checkpoint bytes and {} history bytes identical",
        ck1.len(),
        h1.len()
    );
}

// ---------------------------------------------------------------------
// Criterion 9: separable recovery.
// ---------------------------------------------------------------------

#[test]
fn criterion_9_separable_recovery() {
    let start = Instant::now();
    let cfg = separable_config();
    assert_eq!(cfg.cluster_std, 0.01);
    let mut shown = String::new();
    for metric in [MetricKind::Vp, MetricKind::Vpb] {
        let data = generate_domains(&cfg).unwrap();
        let provider = EmbeddingProvider::Contextual(data.store);
        let params = ModelParams::new(metric, None);
        let (best, _) = train(
            &params,
            &data.train,
            &data.val,
            &provider,
            &TrainConfig::default(),
        )
        .unwrap();
        let (_, f1) = evaluate_on_domain(&best, &data.test, &provider, Averaging::Episode).unwrap();
        assert!(f1 >= 0.95, "{}: test F1 {f1:.4} < 0.95", metric.name());
        let _ = write!(shown, " {}:{f1:.4}", metric.name());
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 120.0, "took {elapsed:?}");
    println!("criterion 9 (separable recovery): PASS —{shown}, {elapsed:?}");
}
