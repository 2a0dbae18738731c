//! Acceptance suite. Each test checks one criterion, prints a single
//! `PASS` or `FAIL` line, and fails when the criterion is not met.
//!
//! Run with `cargo test -p gdpo-cli --test acceptance -- --nocapture`.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use gdpo_core::align::{
    belief_conditioned_pref_loss, calibration_loss, dpo_loss, gdpo_loss, kto_gdpo_loss,
    kto_items, sft_loss, AlignConfig, GdpoTerms, LossReport, Method, NllScope,
};
use gdpo_core::belief::{
    js_distance, mle_belief_distribution, BeliefDistribution,
};
use gdpo_core::datagen::{
    build_preference_pairs, generate_dataset, generate_topics, ClassBeliefMap, DatasetManifest,
    DistributionSource, SplitSizes, TaskKind, Topic, TopicSpec,
};
use gdpo_core::evalkit::{bpc_oracle, cbc, evaluate, GenerationLog, GenerationRecord};
use gdpo_core::belief::ClassToken;
use gdpo_core::policy::{Decoding, ModelConfig, NeuralConfig, Policy, TabularConfig};
use gdpo_core::train::{run_alignment, run_sft, TrainConfig, TrainingTrace};
use gdpo_core::vocab::{encode_all, EncodedExample, Vocabulary};
use gdpo_core::Result;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

const SKEWED_FIVE: [f64; 5] = [0.06, 0.56, 0.24, 0.08, 0.06];
const TWO_BELIEF: [f64; 2] = [0.7126, 0.2874];

/// Prints the verdict line and fails the test on `Err`.
fn verdict(id: usize, name: &str, outcome: std::result::Result<String, String>) {
    match outcome {
        Ok(detail) => println!("criterion {id:>2} PASS  {name}: {detail}"),
        Err(detail) => {
            println!("criterion {id:>2} FAIL  {name}: {detail}");
            panic!("criterion {id} ({name}) failed: {detail}");
        }
    }
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

struct Fixture {
    vocab: Arc<Vocabulary>,
    topics: Vec<Topic>,
    examples: Vec<EncodedExample>,
}

fn fixture(topics: usize, pairs: usize, seed: u64) -> Fixture {
    let spec = TopicSpec {
        topics,
        beliefs: 5,
        styles: 2,
        task: TaskKind::Opinion,
        distribution: DistributionSource::Explicit {
            probs: vec![SKEWED_FIVE.to_vec()],
        },
        seed,
    };
    let topics = generate_topics(&spec).unwrap();
    let vocab = Arc::new(Vocabulary::standard(topics.len()).unwrap());
    let raw: Vec<_> = topics
        .iter()
        .flat_map(|t| build_preference_pairs(t, pairs, seed).unwrap())
        .collect();
    let examples = encode_all(&vocab, &raw).unwrap();
    Fixture {
        vocab,
        topics,
        examples,
    }
}

fn random_policy(f: &Fixture, neural: bool, seed: u64) -> Policy {
    let config = if neural {
        ModelConfig::Neural(NeuralConfig {
            width: 8,
            blocks: 2,
            hidden: 8,
            context_length: 24,
            init_seed: seed,
        })
    } else {
        ModelConfig::Tabular(TabularConfig::default())
    };
    let mut p = Policy::for_topics(f.vocab.clone(), &config, &f.topics).unwrap();
    if !neural {
        p.randomize(0.7, seed);
    }
    p
}

/// Relative error (vector norms) between the analytic gradient and central
/// differences with `h = 1e-5`, over sampled coordinates. Half of them are
/// drawn from the analytic gradient's support.
fn grad_error(policy: &Policy, loss: impl Fn(&Policy) -> Result<LossReport>, seed: u64) -> f64 {
    const COORDS: usize = 40;
    let h = 1e-5;
    let analytic = loss(policy).unwrap().grad;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let support: Vec<usize> = (0..analytic.len()).filter(|&i| analytic[i] != 0.0).collect();
    let mut coords: Vec<usize> = sample(&mut rng, analytic.len(), COORDS / 2).into_vec();
    if !support.is_empty() {
        let k = (COORDS / 2).min(support.len());
        coords.extend(sample(&mut rng, support.len(), k).into_iter().map(|i| support[i]));
    }
    let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
    for &i in &coords {
        let mut plus = policy.clone();
        plus.params_mut()[i] += h;
        let mut minus = policy.clone();
        minus.params_mut()[i] -= h;
        let fd = (loss(&plus).unwrap().loss - loss(&minus).unwrap().loss) / (2.0 * h);
        diff += (fd - analytic[i]).powi(2);
        na += analytic[i].powi(2);
        nn += fd.powi(2);
    }
    let scale = f64::max(na, nn).sqrt();
    if scale == 0.0 {
        0.0
    } else {
        diff.sqrt() / scale
    }
}

#[test]
fn c01_gradient_correctness() {
    let start = Instant::now();
    let f = fixture(3, 4, 11);
    let config = AlignConfig::default();
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for neural in [false, true] {
        for i in 0..20 {
            let policy = random_policy(&f, neural, 100 + i as u64);
            let reference = random_policy(&f, neural, 500 + i as u64).freeze();
            let ex = &f.examples[i % f.examples.len()];
            let j = i % f.examples.len();
            let batch = kto_items(&f.examples[j..(j + 3).min(f.examples.len())]);
            let seed = i as u64;
            let errors = [
                ("sft", grad_error(&policy, |p| sft_loss(p, ex), seed)),
                (
                    "dpo",
                    grad_error(
                        &policy,
                        |p| {
                            dpo_loss(
                                p,
                                &reference,
                                &ex.query,
                                &ex.chosen_completion(),
                                &ex.rejected_completion(),
                                0.1,
                            )
                        },
                        seed,
                    ),
                ),
                (
                    "calibration",
                    grad_error(
                        &policy,
                        |p| {
                            calibration_loss(
                                p,
                                &ex.query,
                                &ex.belief_classes,
                                &ex.target,
                                &ex.accepted_belief_segment,
                                NllScope::ClassAndDescription,
                            )
                        },
                        seed,
                    ),
                ),
                (
                    "belief-conditioned",
                    grad_error(
                        &policy,
                        |p| {
                            belief_conditioned_pref_loss(
                                p,
                                &reference,
                                &ex.query,
                                &ex.accepted_belief_segment,
                                &ex.accepted_response,
                                &ex.rejected_response,
                                0.1,
                            )
                        },
                        seed,
                    ),
                ),
                ("gdpo", grad_error(&policy, |p| gdpo_loss(p, &reference, ex, &config), seed)),
                (
                    "kto-gdpo",
                    grad_error(&policy, |p| kto_gdpo_loss(p, &reference, &batch, &config), seed),
                ),
            ];
            for (name, err) in errors {
                worst = worst.max(err);
                if !(err < 1e-4) {
                    let backend = if neural { "neural" } else { "tabular" };
                    failures.push(format!("{name}/{backend}/{i}: {err:e}"));
                }
            }
        }
    }
    let elapsed = start.elapsed();
    let outcome = if !failures.is_empty() {
        Err(failures.join(", "))
    } else if elapsed > Duration::from_secs(60) {
        Err(format!("took {elapsed:?}"))
    } else {
        Ok(format!("240 checks, worst relative error {worst:.2e}, {elapsed:.1?}"))
    };
    verdict(1, "gradient correctness", outcome);
}

#[test]
fn c02_conflicting_preferences_cancel() {
    let f = fixture(4, 6, 21);
    let two_ln2 = 2.0 * std::f64::consts::LN_2;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut outcome = Ok(());
    let mut min_excess = f64::INFINITY;
    let mut at_zero = 0;
    for trial in 0..1000u64 {
        let neural = trial % 4 == 3;
        let policy = random_policy(&f, neural, trial);
        // A quarter of the trials compare against the policy itself (zero margin).
        let reference = if trial % 4 == 0 {
            policy.freeze()
        } else {
            random_policy(&f, neural, 10_000 + trial).freeze()
        };
        let ex = &f.examples[rng.random_range(0..f.examples.len())];
        let (a, b) = (ex.chosen_completion(), ex.rejected_completion());
        let beta = rng.random_range(0.01..1.0);
        let ab = dpo_loss(&policy, &reference, &ex.query, &a, &b, beta).unwrap();
        let ba = dpo_loss(&policy, &reference, &ex.query, &b, &a, beta).unwrap();
        let sum = ab.loss + ba.loss;
        let margin = ab.diagnostics.reward_margin;
        let excess = sum - two_ln2;
        min_excess = min_excess.min(excess);
        let r = if margin.abs() < 1e-9 {
            at_zero += 1;
            check(excess.abs() < 1e-9, || format!("trial {trial}: zero margin, excess {excess:e}"))
        } else {
            check(excess > 0.0, || {
                format!("trial {trial}: margin {margin:e}, excess {excess:e}")
            })
        };
        if r.is_err() {
            outcome = r;
            break;
        }
    }
    verdict(
        2,
        "conflicting-preference cancellation",
        outcome.map(|_| format!("1000 trials, {at_zero} at zero margin, min excess {min_excess:.2e}")),
    );
}

/// Everything criteria 3, 4, 5 and 10 need from one seed of the toy
/// benchmark.
struct ToyRun {
    seed: u64,
    sft_jsd: f64,
    sft_test: (f64, f64),
    dpo: TrainingTrace,
    dpo_test: (f64, f64),
    gdpo: TrainingTrace,
    gdpo_test: (f64, f64),
    calibration_only: TrainingTrace,
    preference_only: TrainingTrace,
}

/// Ten topics with the five-belief target, 500 training pairs per topic,
/// SFT for 2 epochs then 6 epochs of alignment, RMSprop at 1e-2 with 150
/// warmup steps and batch 32.
fn toy_run(seed: u64) -> ToyRun {
    let manifest = DatasetManifest::new(
        TopicSpec {
            topics: 10,
            beliefs: 5,
            styles: 4,
            task: TaskKind::Opinion,
            distribution: DistributionSource::Explicit {
                probs: vec![SKEWED_FIVE.to_vec()],
            },
            seed,
        },
        SplitSizes {
            train: 500,
            eval: 40,
            test: 200,
        },
    );
    let data = generate_dataset(&manifest).unwrap();
    let vocab = Arc::new(Vocabulary::standard(data.topics.len()).unwrap());
    let train = encode_all(&vocab, &data.train).unwrap();
    let eval = encode_all(&vocab, &data.eval).unwrap();
    let test = encode_all(&vocab, &data.test).unwrap();
    let map = ClassBeliefMap::standard();
    let score = |p: &Policy| {
        let (r, _) =
            evaluate(p, &test, &data.topics, &map, Decoding::Temperature(1.0), 7).unwrap();
        (r.jsd, r.bpc)
    };

    let init = Policy::for_topics(vocab.clone(), &ModelConfig::default(), &data.topics).unwrap();
    let sft_cfg = TrainConfig {
        epochs: 2,
        eval_every: 20,
        seed,
        ..TrainConfig::default()
    };
    let sft = run_sft(init, &train, &eval, &sft_cfg).unwrap().policy;
    let align = |method: Method, terms: GdpoTerms| {
        let cfg = TrainConfig {
            epochs: 6,
            align: AlignConfig {
                method,
                terms,
                ..AlignConfig::default()
            },
            ..sft_cfg.clone()
        };
        run_alignment(&sft, &train, &eval, &cfg).unwrap()
    };
    let dpo = align(Method::Dpo, GdpoTerms::Both);
    let gdpo = align(Method::Gdpo, GdpoTerms::Both);
    let calibration_only = align(Method::Gdpo, GdpoTerms::CalibrationOnly);
    let preference_only = align(Method::Gdpo, GdpoTerms::PreferenceOnly);
    ToyRun {
        seed,
        sft_jsd: dpo.trace.first().unwrap().avg_jsd,
        sft_test: score(&sft),
        dpo_test: score(&dpo.policy),
        gdpo_test: score(&gdpo.policy),
        dpo: dpo.trace,
        gdpo: gdpo.trace,
        calibration_only: calibration_only.trace,
        preference_only: preference_only.trace,
    }
}

fn toy_runs() -> &'static [ToyRun] {
    static RUNS: OnceLock<Vec<ToyRun>> = OnceLock::new();
    RUNS.get_or_init(|| [1, 2, 3].into_iter().map(toy_run).collect())
}

#[test]
fn c03_dpo_penalizes_minority_preferences() {
    let start = Instant::now();
    let runs = toy_runs();
    let mut details = Vec::new();
    let mut outcome = Ok(());
    for r in runs {
        let last = r.dpo.last().unwrap();
        details.push(format!(
            "seed {}: majority {:.3}, minority {:.3}",
            r.seed, last.margin_majority, last.margin_minority
        ));
        if outcome.is_ok() {
            outcome = check(last.margin_minority < 0.0 && last.margin_majority > 0.0, || {
                details.last().unwrap().clone()
            });
        }
    }
    let elapsed = start.elapsed();
    if outcome.is_ok() && elapsed > Duration::from_secs(300) {
        outcome = Err(format!("took {elapsed:?}"));
    }
    verdict(3, "DPO margins split by majority", outcome.map(|_| details.join("; ")));
}

#[test]
fn c04_gdpo_keeps_both_margins_positive() {
    let runs = toy_runs();
    let mut details = Vec::new();
    let mut outcome = Ok(());
    for r in runs {
        let last = r.gdpo.last().unwrap();
        details.push(format!(
            "seed {}: majority {:.3}, minority {:.3}",
            r.seed, last.margin_majority, last.margin_minority
        ));
        if outcome.is_ok() {
            outcome = check(last.margin_minority > 0.0 && last.margin_majority > 0.0, || {
                details.last().unwrap().clone()
            });
        }
    }
    verdict(4, "GDPO margins positive", outcome.map(|_| details.join("; ")));
}

#[test]
fn c05_jsd_dynamics_and_ablations() {
    let runs = toy_runs();
    let mut details = Vec::new();
    let mut outcome = Ok(());
    for r in runs {
        let gdpo = r.gdpo.last().unwrap().avg_jsd;
        let dpo = r.dpo.last().unwrap().avg_jsd;
        let cal = r.calibration_only.last().unwrap().avg_jsd;
        let pref = r.preference_only.last().unwrap().avg_jsd;
        let slope = r.gdpo.jsd_slope();
        let line = format!(
            "seed {}: sft {:.4}, gdpo {gdpo:.4} (slope {slope:.2e}), dpo {dpo:.4}, calibration-only {cal:.4}, preference-only {pref:.4}",
            r.seed, r.sft_jsd
        );
        let ok = slope < 0.0
            && gdpo < 0.5 * r.sft_jsd
            && dpo > r.sft_jsd
            && cal < r.sft_jsd
            && pref >= r.sft_jsd;
        if outcome.is_ok() {
            outcome = check(ok, || line.clone());
        }
        details.push(line);
    }
    verdict(5, "JSD dynamics", outcome.map(|_| details.join("; ")));
}

#[test]
fn c06_calibration_converges() {
    // 64000 pairs per dataset for 6 epochs: 12000 steps of batch 32 at 5e-4.
    let datasets = [
        (1, 2, DistributionSource::Explicit { probs: vec![TWO_BELIEF.to_vec()] }, 11u64),
        (3, 3, DistributionSource::Dirichlet { alpha: 1.0 }, 12),
        (3, 4, DistributionSource::Dirichlet { alpha: 1.0 }, 13),
        (3, 6, DistributionSource::Dirichlet { alpha: 1.0 }, 14),
    ];
    let mut worst = 0.0f64;
    let mut count = 0;
    let mut outcome = Ok(());
    for (topics, beliefs, distribution, seed) in datasets {
        let manifest = DatasetManifest::new(
            TopicSpec {
                topics,
                beliefs,
                styles: 2,
                task: TaskKind::Opinion,
                distribution,
                seed,
            },
            SplitSizes {
                train: 64_000 / topics,
                eval: 1,
                test: 0,
            },
        );
        let data = generate_dataset(&manifest).unwrap();
        let vocab = Arc::new(Vocabulary::standard(topics).unwrap());
        let train = encode_all(&vocab, &data.train).unwrap();
        let eval = encode_all(&vocab, &data.eval).unwrap();
        let init = Policy::for_topics(vocab, &ModelConfig::default(), &data.topics).unwrap();
        let cfg = TrainConfig {
            learning_rate: 5e-4,
            epochs: 6,
            eval_every: 1_000_000,
            seed,
            align: AlignConfig {
                method: Method::Gdpo,
                terms: GdpoTerms::CalibrationOnly,
                ..AlignConfig::default()
            },
            ..TrainConfig::default()
        };
        let out = run_alignment(&init, &train, &eval, &cfg).unwrap();
        for ex in &eval {
            let q = out.policy.belief_probs(&ex.query, &ex.belief_classes).unwrap();
            let tv = q.iter().zip(&ex.target).map(|(a, b)| (a - b).abs()).sum::<f64>() / 2.0;
            worst = worst.max(tv);
            count += 1;
            if outcome.is_ok() && !(tv < 0.01) {
                outcome = Err(format!("K={beliefs} topic {}: tv {tv:.4}", ex.topic_id));
            }
        }
    }
    if outcome.is_ok() && count != 10 {
        outcome = Err(format!("checked {count} targets instead of 10"));
    }
    verdict(
        6,
        "calibration convergence",
        outcome.map(|_| format!("{count} targets, worst total variation {worst:.4}")),
    );
}

#[test]
fn c07_metric_unit_suite() {
    let run = || -> std::result::Result<String, String> {
        let p = BeliefDistribution::new(SKEWED_FIVE.to_vec()).unwrap();
        let d = js_distance(&p, &p).unwrap();
        check(d == 0.0, || format!("js(p,p) = {d}"))?;
        let a = BeliefDistribution::new(vec![1.0, 0.0]).unwrap();
        let b = BeliefDistribution::new(vec![0.0, 1.0]).unwrap();
        let d = js_distance(&a, &b).unwrap();
        check((d - 1.0).abs() < 1e-15, || format!("js(e0,e1) = {d}"))?;
        let m = mle_belief_distribution(&[7126, 2874]).unwrap();
        check(
            (m.probs()[0] - 0.7126).abs() < 1e-15 && (m.probs()[1] - 0.2874).abs() < 1e-15,
            || format!("mle = {:?}", m.probs()),
        )?;

        let map = ClassBeliefMap::standard();
        let record = |class: u8, desc: &str| GenerationRecord {
            topic_id: 0,
            query: vec![],
            class_token: Some(ClassToken::new(class).unwrap()),
            description: desc.split_whitespace().map(str::to_owned).collect(),
            response: vec![],
            truncated: false,
        };
        let log = GenerationLog {
            records: vec![
                record(1, "Very bad job"),
                record(0, "DK/Refused"),
                record(4, "Very bad job"),
                record(3, "DK/Refused"),
            ],
        };
        let score = cbc(&log, &map).map_err(|e| e.to_string())?;
        check(score == 0.5, || format!("cbc fixture = {score}"))?;

        let manifest = DatasetManifest::new(
            TopicSpec {
                topics: 8,
                beliefs: 5,
                styles: 4,
                task: TaskKind::Opinion,
                distribution: DistributionSource::Dirichlet { alpha: 1.0 },
                seed: 3,
            },
            SplitSizes {
                train: 50,
                eval: 5,
                test: 5,
            },
        );
        let data = generate_dataset(&manifest).unwrap();
        let log = GenerationLog {
            records: data
                .train
                .iter()
                .map(|ex| {
                    let belief = &data.topics[ex.topic_id].belief_set.beliefs()[ex.accepted_belief];
                    GenerationRecord {
                        topic_id: ex.topic_id,
                        query: data.topics[ex.topic_id].question.clone(),
                        class_token: Some(belief.class_token),
                        description: belief.description.clone(),
                        response: ex.accepted_response.clone(),
                        truncated: false,
                    }
                })
                .collect(),
        };
        let bpc = bpc_oracle(&log, &data.topics).map_err(|e| e.to_string())?;
        check(bpc == 1.0, || format!("bpc on accepted pairs = {bpc}"))?;
        Ok(format!("js, mle, cbc 0.5 as constructed, bpc 1.0 on {} pairs", log.len()))
    };
    verdict(7, "metric unit suite", run());
}

fn chi_square_p(counts: &[u64], probs: &[f64]) -> f64 {
    let n: u64 = counts.iter().sum();
    let stat: f64 = counts
        .iter()
        .zip(probs)
        .map(|(&c, &p)| {
            let e = n as f64 * p;
            (c as f64 - e).powi(2) / e
        })
        .sum();
    1.0 - ChiSquared::new((counts.len() - 1) as f64).unwrap().cdf(stat)
}

#[test]
fn c08_datagen_fidelity() {
    let mut min_p = 1.0f64;
    let mut outcome = Ok(());
    for seed in 0..10u64 {
        let topics = generate_topics(&TopicSpec {
            topics: 1,
            beliefs: 5,
            styles: 4,
            task: TaskKind::Opinion,
            distribution: DistributionSource::Explicit {
                probs: vec![SKEWED_FIVE.to_vec()],
            },
            seed,
        })
        .unwrap();
        let pairs = build_preference_pairs(&topics[0], 10_000, seed).unwrap();
        let mut accepted = vec![0u64; 5];
        // Rejected given accepted: uniform over the other four beliefs.
        let mut joint = vec![0u64; 20];
        let mut joint_probs = vec![0.0; 20];
        for ex in &pairs {
            accepted[ex.accepted_belief] += 1;
            let r = if ex.rejected_belief > ex.accepted_belief {
                ex.rejected_belief - 1
            } else {
                ex.rejected_belief
            };
            if ex.rejected_belief == ex.accepted_belief {
                outcome = Err(format!("seed {seed}: rejected equals accepted"));
            }
            joint[ex.accepted_belief * 4 + r] += 1;
        }
        for (a, &p) in SKEWED_FIVE.iter().enumerate() {
            for r in 0..4 {
                joint_probs[a * 4 + r] = p / 4.0;
            }
        }
        let pa = chi_square_p(&accepted, &SKEWED_FIVE);
        let pj = chi_square_p(&joint, &joint_probs);
        min_p = min_p.min(pa).min(pj);
        if outcome.is_ok() && !(pa > 0.001 && pj > 0.001) {
            outcome = Err(format!("seed {seed}: accepted p {pa:.2e}, rejected p {pj:.2e}"));
        }
    }
    verdict(
        8,
        "datagen distributional fidelity",
        outcome.map(|_| format!("10 seeds x 10000 pairs, smallest p-value {min_p:.4}")),
    );
}

fn collect_files(dir: &Path, base: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
    let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    entries.sort();
    for path in entries {
        if path.is_dir() {
            collect_files(&path, base, out);
        } else {
            let rel = path.strip_prefix(base).unwrap().to_path_buf();
            out.push((rel, std::fs::read(&path).unwrap()));
        }
    }
}

fn pipeline(root: &Path, config: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let bin = env!("CARGO_BIN_EXE_gdpo");
    let data = root.join("data");
    let p = |x: &Path| x.to_str().unwrap().to_string();
    let run = |args: Vec<String>| {
        let out = Command::new(bin).args(&args).output().unwrap();
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    };
    let cfg = p(config);
    run(vec!["gen-data".into(), "--config".into(), cfg.clone(), "--out".into(), p(&data)]);
    let common = |cmd: &str| vec![cmd.to_string(), "--config".into(), cfg.clone(), "--out".into(), p(root), "--data".into(), p(&data)];
    run(common("sft"));
    for method in ["dpo", "gdpo"] {
        let mut a = common("align");
        a.extend(["--sft".into(), p(&root.join("sft.ckpt")), "--method".into(), method.into()]);
        run(a);
    }
    for ckpt in ["sft", "dpo", "gdpo"] {
        let mut a = common("eval");
        a.extend(["--checkpoint".into(), p(&root.join(format!("{ckpt}.ckpt")))]);
        run(a);
    }
    let mut a = vec!["report".to_string(), "--out".into(), p(&root.join("report"))];
    for name in ["sft", "dpo", "gdpo"] {
        a.extend(["--trace".into(), format!("{name}={}", p(&root.join(format!("trace_{name}.csv"))))]);
        a.extend(["--metrics".into(), p(&root.join(format!("metrics_{name}.json")))]);
    }
    run(a);
    let mut files = Vec::new();
    collect_files(root, root, &mut files);
    files
}

#[test]
fn c09_pipeline_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("experiment.toml");
    std::fs::write(
        &config,
        "[data]\ntopics = 6\ntrain = 100\neval = 10\ntest = 20\nseed = 5\n\n[sft]\nepochs = 1\nseed = 3\n\n[align]\nepochs = 1\nseed = 3\n",
    )
    .unwrap();
    let a = pipeline(&dir.path().join("a"), &config);
    let b = pipeline(&dir.path().join("b"), &config);
    let names: Vec<_> = a.iter().map(|(p, _)| p.clone()).collect();
    let outcome = if names != b.iter().map(|(p, _)| p.clone()).collect::<Vec<_>>() {
        Err("runs produced different file sets".to_string())
    } else if let Some((p, _)) = a.iter().zip(&b).find(|(x, y)| x.1 != y.1).map(|(x, _)| x) {
        Err(format!("{} differs", p.display()))
    } else {
        let bytes: usize = a.iter().map(|(_, d)| d.len()).sum();
        Ok(format!("{} files, {bytes} bytes identical", a.len()))
    };
    verdict(9, "pipeline determinism", outcome);
}

#[test]
fn c10_metric_ordering() {
    let runs = toy_runs();
    let mut details = Vec::new();
    let mut outcome = Ok(());
    for r in runs {
        let ((sj, sb), (dj, db), (gj, gb)) = (r.sft_test, r.dpo_test, r.gdpo_test);
        let line = format!(
            "seed {}: jsd sft {sj:.4} dpo {dj:.4} gdpo {gj:.4}; bpc sft {sb:.3} dpo {db:.3} gdpo {gb:.3}",
            r.seed
        );
        let ok = gj < sj && gj < dj && gb > sb && gb > db;
        if outcome.is_ok() {
            outcome = check(ok, || line.clone());
        }
        details.push(line);
    }
    verdict(10, "metric ordering", outcome.map(|_| details.join("; ")));
}
