//! Subcommand implementations. Every command validates its full config
//! before touching the filesystem and writes `run_<label>.json` next to its
//! artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use gdpo_core::datagen::{
    generate_dataset, load_dataset, load_topics, save_topics, serialize_dataset, ClassBeliefMap,
    PreferenceExample, Split, Topic,
};
use gdpo_core::evalkit::{emit_report, evaluate, MethodMetrics};
use gdpo_core::policy::{load_checkpoint, save_checkpoint, Policy};
use gdpo_core::train::{run_alignment, run_sft, run_uniform_sft, TrainOutcome, TrainingTrace};
use gdpo_core::vocab::{encode_all, EncodedExample, Vocabulary};
use gdpo_core::Error;
use serde::Serialize;

use crate::config::RunConfig;
use crate::{
    AlignArgs, CliError, Common, EvalArgs, GenDataArgs, ReportArgs, SftArgs, TrainOverrides,
    OUTPUT_ROOT_ENV,
};

type Result<T> = std::result::Result<T, CliError>;

const TOPICS_FILE: &str = "topics.json";

fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e).into())
}

/// Loads the config, applies flag overrides, validates, and picks the
/// output directory.
fn resolve(common: &Common, apply: impl FnOnce(&mut RunConfig)) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    apply(&mut cfg);
    cfg.validate()?;
    let out = common
        .out
        .clone()
        .unwrap_or_else(|| output_root().join(cfg.hash()));
    create_dir(&out)?;
    Ok((cfg, out))
}

fn apply_train(t: &TrainOverrides, lr: &mut f64, epochs: &mut usize, bs: &mut usize, seed: &mut u64) {
    if let Some(v) = t.learning_rate {
        *lr = v;
    }
    if let Some(v) = t.epochs {
        *epochs = v;
    }
    if let Some(v) = t.batch_size {
        *bs = v;
    }
    if let Some(v) = t.seed {
        *seed = v;
    }
}

#[derive(Serialize)]
struct RunRecord<'a> {
    command: &'a str,
    config_hash: String,
    config: &'a RunConfig,
}

/// Writes `run_<label>.json`; notes when an identical run already exists.
fn write_run(out: &Path, label: &str, command: &str, cfg: &RunConfig) -> Result<()> {
    let path = out.join(format!("run_{label}.json"));
    let record = RunRecord {
        command,
        config_hash: cfg.hash(),
        config: cfg,
    };
    let mut text = serde_json::to_string_pretty(&record).expect("run record serializes");
    text.push('\n');
    if fs::read_to_string(&path).is_ok_and(|old| old == text) {
        eprintln!("note: rerun of experiment {}", record.config_hash);
    }
    fs::write(&path, text).map_err(|e| Error::io(&path, e).into())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e).into())
}

fn split_path(dir: &Path, split: Split) -> PathBuf {
    dir.join(format!("{}.jsonl", split.name()))
}

fn thousands(n: usize) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, c) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

pub fn gen_data(a: GenDataArgs) -> Result<()> {
    let (cfg, out) = resolve(&a.common, |c| {
        let d = &mut c.data;
        let set = |dst: &mut usize, v: Option<usize>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut d.topics, a.topics);
        set(&mut d.beliefs, a.beliefs);
        set(&mut d.styles, a.styles);
        set(&mut d.train, a.train);
        set(&mut d.eval, a.eval);
        set(&mut d.test, a.test);
        if let Some(s) = a.seed {
            d.seed = s;
        }
    })?;
    let manifest = cfg.data.manifest();
    let data = generate_dataset(&manifest)?;
    for split in Split::ALL {
        serialize_dataset(data.split(split), &manifest, &split_path(&out, split))?;
    }
    save_topics(&data.topics, &out.join(TOPICS_FILE))?;
    write_run(&out, "gen-data", "gen-data", &cfg)?;

    let header = format!("Q={}, K={}", cfg.data.topics, cfg.data.beliefs);
    println!("{:<8}{header:>14}", "Split");
    for split in Split::ALL {
        let name = match split {
            Split::Train => "Train",
            Split::Eval => "Eval",
            Split::Test => "Test",
        };
        println!("{name:<8}{:>14}", thousands(manifest.total(split)));
    }
    println!("wrote {}", out.display());
    Ok(())
}

/// A dataset directory: raw and encoded splits, topics and vocabulary.
struct Dataset {
    topics: Vec<Topic>,
    vocab: Arc<Vocabulary>,
    raw: Vec<Vec<PreferenceExample>>,
    encoded: Vec<Vec<EncodedExample>>,
}

impl Dataset {
    fn load(dir: &Path) -> Result<Self> {
        let topics = load_topics(&dir.join(TOPICS_FILE))?;
        let vocab = Arc::new(Vocabulary::standard(topics.len())?);
        let mut raw = Vec::new();
        let mut encoded = Vec::new();
        for split in Split::ALL {
            let (examples, _) = load_dataset(&split_path(dir, split))?;
            for ex in &examples {
                let topic = topics.get(ex.topic_id).ok_or(Error::UnknownTopic(ex.topic_id))?;
                ex.validate(Some(topic))?;
            }
            encoded.push(encode_all(&vocab, &examples)?);
            raw.push(examples);
        }
        Ok(Self {
            topics,
            vocab,
            raw,
            encoded,
        })
    }

    fn raw(&self, split: Split) -> &[PreferenceExample] {
        &self.raw[split as usize]
    }

    fn encoded(&self, split: Split) -> &[EncodedExample] {
        &self.encoded[split as usize]
    }
}

fn save_outcome(out: &Path, name: &str, outcome: &TrainOutcome) -> Result<()> {
    save_checkpoint(&outcome.policy, &out.join(format!("{name}.ckpt")))?;
    save_checkpoint(&outcome.best, &out.join(format!("{name}_best.ckpt")))?;
    outcome.trace.write_csv(&out.join(format!("trace_{name}.csv")))?;
    Ok(())
}

fn summarize(name: &str, outcome: &TrainOutcome) {
    let (first, last) = (outcome.trace.first(), outcome.trace.last());
    if let (Some(f), Some(l)) = (first, last) {
        println!(
            "{name}: {} steps, avg_jsd {:.4} -> {:.4} (best {:.4} at step {})",
            l.step,
            f.avg_jsd,
            l.avg_jsd,
            outcome
                .trace
                .records
                .iter()
                .map(|r| r.avg_jsd)
                .fold(f64::INFINITY, f64::min),
            outcome.best_step
        );
    }
}

pub fn sft(a: SftArgs) -> Result<()> {
    let (cfg, out) = resolve(&a.common, |c| {
        let s = &mut c.sft;
        apply_train(&a.train, &mut s.learning_rate, &mut s.epochs, &mut s.batch_size, &mut s.seed);
        s.uniform |= a.uniform;
    })?;
    let data = Dataset::load(&a.data)?;
    let initial = Policy::for_topics(data.vocab.clone(), &cfg.model, &data.topics)?;
    let train_cfg = cfg.sft_train_config();
    let eval = data.encoded(Split::Eval);
    let outcome = if cfg.sft.uniform {
        run_uniform_sft(initial, data.raw(Split::Train), &data.topics, eval, &train_cfg)?
    } else {
        run_sft(initial, data.encoded(Split::Train), eval, &train_cfg)?
    };
    let name = a.name.unwrap_or_else(|| {
        if cfg.sft.uniform { "sft-uniform" } else { "sft" }.to_string()
    });
    save_outcome(&out, &name, &outcome)?;
    write_run(&out, &name, "sft", &cfg)?;
    summarize(&name, &outcome);
    Ok(())
}

/// Rejects a checkpoint whose vocabulary differs from the dataset's.
fn check_vocab(policy: &Policy, data: &Dataset, path: &Path) -> Result<()> {
    if policy.vocab().hash() != data.vocab.hash() {
        return Err(Error::Checkpoint(format!(
            "{}: vocabulary does not match the dataset",
            path.display()
        ))
        .into());
    }
    Ok(())
}

pub fn align(a: AlignArgs) -> Result<()> {
    let (cfg, out) = resolve(&a.common, |c| {
        let s = &mut c.align;
        apply_train(&a.train, &mut s.learning_rate, &mut s.epochs, &mut s.batch_size, &mut s.seed);
        if let Some(m) = a.method {
            s.method = m.into();
        }
        if let Some(b) = a.beta {
            s.beta = b;
        }
        if let Some(w) = a.calibration_weight {
            s.calibration_weight = w;
        }
        if let Some(t) = a.terms {
            s.terms = t.into();
        }
    })?;
    let data = Dataset::load(&a.data)?;
    let sft = load_checkpoint(&a.sft)?;
    check_vocab(&sft, &data, &a.sft)?;
    let train_cfg = cfg.align_train_config();
    let outcome = run_alignment(
        &sft,
        data.encoded(Split::Train),
        data.encoded(Split::Eval),
        &train_cfg,
    )?;
    let name = a.name.unwrap_or_else(|| cfg.align.method.name().to_string());
    save_outcome(&out, &name, &outcome)?;
    write_run(&out, &name, "align", &cfg)?;
    summarize(&name, &outcome);
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let (cfg, out) = resolve(&a.common, |c| {
        if let Some(s) = a.seed {
            c.eval.seed = s;
        }
    })?;
    let data = Dataset::load(&a.data)?;
    let policy = load_checkpoint(&a.checkpoint)?;
    check_vocab(&policy, &data, &a.checkpoint)?;
    let name = a.name.unwrap_or_else(|| {
        a.checkpoint
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "policy".into())
    });
    let split: Split = a.split.into();
    let (report, log) = evaluate(
        &policy,
        data.encoded(split),
        &data.topics,
        &ClassBeliefMap::standard(),
        cfg.eval.decoding(),
        cfg.eval.seed,
    )?;
    log.save(&out.join(format!("generations_{name}.jsonl")))?;
    write_json(&out.join(format!("metrics_{name}.json")), &MethodMetrics::new(&name, &report))?;
    write_run(&out, &format!("eval-{name}"), "eval", &cfg)?;
    println!(
        "{name}: jsd {:.4} cbc {:.4} bpc {:.4} rs {:.4} n {}",
        report.jsd, report.cbc, report.bpc, report.rs, report.n
    );
    Ok(())
}

fn parse_trace(arg: &str) -> Result<(String, PathBuf)> {
    if let Some((name, path)) = arg.split_once('=') {
        if name.is_empty() {
            return Err(CliError::Config(format!("--trace {arg}: empty name")));
        }
        return Ok((name.to_string(), PathBuf::from(path)));
    }
    let path = PathBuf::from(arg);
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = stem.strip_prefix("trace_").unwrap_or(&stem).to_string();
    if name.is_empty() {
        return Err(CliError::Config(format!("--trace {arg}: cannot derive a name")));
    }
    Ok((name, path))
}

pub fn report(a: ReportArgs) -> Result<()> {
    let specs: Vec<(String, PathBuf)> = a.trace.iter().map(|t| parse_trace(t)).collect::<Result<_>>()?;
    let out = a.out.unwrap_or_else(|| output_root().join("report"));
    let mut traces: Vec<(String, TrainingTrace)> = Vec::new();
    for (name, path) in specs {
        traces.push((name, TrainingTrace::read_csv(&path)?));
    }
    let mut metrics = Vec::new();
    for path in &a.metrics {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: MethodMetrics = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.clone(),
            line: e.line(),
            message: e.to_string(),
        })?;
        metrics.push(m);
    }
    let files = emit_report(&traces, &metrics, &out)?;
    println!(
        "wrote {} trace(s), {} and {}",
        files.traces.len(),
        files.metrics.display(),
        files.plot_data.display()
    );
    Ok(())
}
