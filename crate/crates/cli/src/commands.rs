use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use emargin_core::encoder::{EncoderConfig, EncoderParams};
use emargin_core::eval::{config_digest, evaluate, export_embeddings, EvalReport};
use emargin_core::signal::{
    load_csv, read_batch, split, stft, synth_regimes, window_sequences, write_batch, CsvSchema, Label, SequenceBatch,
};
use emargin_core::train::{load_checkpoint, train, LossKind};
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, Source};
use crate::{CliError, EvalArgs, GlobalArgs};

pub const MANIFEST: &str = "manifest.json";
pub const CHECKPOINT: &str = "checkpoint.emgn";
pub const LOSS_TRACE: &str = "loss_trace.csv";

/// Shapes and class balance of a prepared dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dataset: String,
    pub source: String,
    /// Feature width D.
    pub dim: usize,
    pub seq_len: usize,
    pub sequences: usize,
    pub train_sequences: usize,
    pub test_sequences: usize,
    /// Step counts per label over all sequences.
    pub class_histogram: BTreeMap<Label, usize>,
    pub config_digest: String,
}

#[derive(Clone, Debug)]
pub struct DataArtifacts {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

#[derive(Clone, Debug)]
pub struct PretrainArtifacts {
    pub dir: PathBuf,
    pub checkpoint: PathBuf,
    pub loss_trace: PathBuf,
}

#[derive(Clone, Debug)]
pub struct EvalArtifacts {
    pub report_path: PathBuf,
    pub report: EvalReport,
    pub embeddings: Option<PathBuf>,
}

pub fn data_dir(g: &GlobalArgs) -> PathBuf {
    g.out.join("data")
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::data(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_data(cfg: &RunConfig, g: &GlobalArgs, source: &str, all: &SequenceBatch) -> Result<DataArtifacts, CliError> {
    let (tr, te) = split(all, &cfg.split)?;
    let dir = data_dir(g);
    create_dir(&dir)?;
    write_batch(all, dir.join("data.emsb"))?;
    write_batch(&tr, dir.join("train.emsb"))?;
    write_batch(&te, dir.join("test.emsb"))?;
    let mut class_histogram = BTreeMap::new();
    for &l in all.labels().unwrap_or(&[]) {
        *class_histogram.entry(l).or_insert(0) += 1;
    }
    let manifest = Manifest {
        dataset: cfg.dataset.clone(),
        source: source.into(),
        dim: all.dim(),
        seq_len: all.seq_len(),
        sequences: all.batch(),
        train_sequences: tr.batch(),
        test_sequences: te.batch(),
        class_histogram,
        config_digest: config_digest(&(&cfg.source, cfg.data_seed, &cfg.stft, cfg.seq_len, &cfg.split)),
    };
    write_json(&dir.join(MANIFEST), &manifest)?;
    log::info!(
        "wrote {} ({} train / {} test sequences, D={})",
        dir.display(),
        tr.batch(),
        te.batch(),
        all.dim()
    );
    Ok(DataArtifacts { dir, manifest })
}

/// Synthetic regime data. `--seed` picks the generator seed when given.
pub fn synth(cfg: &RunConfig, g: &GlobalArgs) -> Result<DataArtifacts, CliError> {
    let Source::Synth(spec) = &cfg.source else {
        return Err(CliError::usage("configured source is a csv file; use `preprocess`"));
    };
    let mut cfg = cfg.clone();
    cfg.data_seed = g.seed.unwrap_or(cfg.data_seed);
    let all = synth_regimes(spec, cfg.data_seed).map_err(|e| CliError::usage(e.to_string()))?;
    write_data(&cfg, g, "synth", &all)
}

pub fn preprocess(cfg: &RunConfig, g: &GlobalArgs, csv: Option<&Path>) -> Result<DataArtifacts, CliError> {
    let (path, schema) = match (&cfg.source, csv) {
        (Source::Csv { schema, .. }, Some(p)) => (p.to_path_buf(), schema.clone()),
        (_, Some(p)) => (p.to_path_buf(), CsvSchema::default()),
        (Source::Csv { path, schema }, None) => (path.clone(), schema.clone()),
        (Source::Synth(_), None) => return Err(CliError::usage("no csv given; pass --csv or configure a csv source")),
    };
    let series = load_csv(&path, &schema)?;
    let frames = stft(&series, &cfg.stft)?;
    let all = window_sequences(&frames, cfg.seq_len, &cfg.dataset)?;
    let mut cfg = cfg.clone();
    cfg.source = Source::Csv { path, schema };
    write_data(&cfg, g, "csv", &all)
}

fn read_data(dir: &Path, name: &str) -> Result<SequenceBatch, CliError> {
    let path = dir.join(name);
    if !path.exists() {
        return Err(CliError::data(format!("{} not found; run `synth` or `preprocess` first", path.display())));
    }
    Ok(read_batch(&path)?)
}

fn encoder_for(cfg: &RunConfig, data: &SequenceBatch) -> EncoderConfig {
    EncoderConfig {
        input_dim: data.dim(),
        ..cfg.encoder.clone()
    }
}

pub fn run_dir(g: &GlobalArgs, loss: LossKind, seed: u64) -> PathBuf {
    g.out.join(format!("{loss}-seed{seed}"))
}

pub fn pretrain(
    cfg: &RunConfig,
    g: &GlobalArgs,
    data: Option<&Path>,
    loss: Option<LossKind>,
    iterations: Option<usize>,
) -> Result<PretrainArtifacts, CliError> {
    let data_dir = data.map(Path::to_path_buf).unwrap_or_else(|| data_dir(g));
    let tr = read_data(&data_dir, "train.emsb")?;
    let mut tc = cfg.train.clone();
    tc.seed = g.seed.unwrap_or(tc.seed);
    tc.loss_kind = loss.unwrap_or(tc.loss_kind);
    tc.iterations = iterations.or(tc.iterations);
    let enc = encoder_for(cfg, &tr);

    let dir = run_dir(g, tc.loss_kind, tc.seed);
    create_dir(&dir)?;
    let checkpoint = dir.join(CHECKPOINT);
    let ck = train(&tr, &enc, &tc, Some(&checkpoint))?;

    let loss_trace = dir.join(LOSS_TRACE);
    let mut text = String::from("step,loss\n");
    for (i, v) in ck.loss_trace.iter().enumerate() {
        text.push_str(&format!("{},{v}\n", i + 1));
    }
    std::fs::write(&loss_trace, text).map_err(|e| CliError::io(&loss_trace, e))?;
    log::info!(
        "{} steps of {}, final loss {:.4}; wrote {}",
        ck.loss_trace.len(),
        tc.loss_kind,
        ck.loss_trace.last().copied().unwrap_or(f64::NAN),
        dir.display()
    );
    Ok(PretrainArtifacts {
        dir,
        checkpoint,
        loss_trace,
    })
}

pub fn eval(cfg: &RunConfig, g: &GlobalArgs, args: &EvalArgs) -> Result<EvalArtifacts, CliError> {
    let data_dir = args.data.clone().unwrap_or_else(|| data_dir(g));
    let tr = read_data(&data_dir, "train.emsb")?;
    let te = read_data(&data_dir, "test.emsb")?;
    let mut spec = cfg.eval.clone();
    spec.assignment = args.assignment.unwrap_or(spec.assignment);

    let (params, enc, method, seed, train_cfg) = match &args.checkpoint {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            let seed = g.seed.unwrap_or(ck.seed);
            (ck.params, ck.encoder, ck.train.loss_kind.to_string(), seed, Some(ck.train))
        }
        None => {
            let enc = encoder_for(cfg, &tr);
            let seed = g.seed.unwrap_or(cfg.train.seed);
            (EncoderParams::init(&enc, seed), enc, "random".to_string(), seed, None)
        }
    };

    let ev = evaluate(&params, &enc, &tr, &te, &spec, seed)?;
    if !ev.cluster.silhouette.is_finite() || !ev.probe.accuracy.is_finite() {
        return Err(CliError::numeric("evaluation produced non-finite metrics"));
    }
    let digest = config_digest(&(&cfg.dataset, &enc, &train_cfg, &spec, seed));
    let report = EvalReport::new(&cfg.dataset, seed, &method, &ev, digest);

    let dir = g.out.join("reports");
    create_dir(&dir)?;
    let stem = format!("{method}-seed{seed}-{}", spec.assignment);
    let report_path = dir.join(format!("{stem}.json"));
    write_json(&report_path, &report)?;
    let embeddings = if args.export_embeddings {
        let path = dir.join(format!("{stem}.embeddings.csv"));
        export_embeddings(&ev.test_embeddings, te.labels(), &path)?;
        Some(path)
    } else {
        None
    };
    log::info!(
        "{method} seed {seed}: DBI {:.3}, silhouette {:.3}, macro-F1 {:.3}",
        report.dbi,
        report.silhouette,
        report.f1_macro
    );
    Ok(EvalArtifacts {
        report_path,
        report,
        embeddings,
    })
}

fn collect_reports(paths: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| CliError::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "json"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    Ok(files)
}

/// Reads reports, writes `<out>/comparison.md` and returns its text.
pub fn compare(g: &GlobalArgs, paths: &[PathBuf]) -> Result<String, CliError> {
    let mut reports = Vec::new();
    for path in collect_reports(paths)? {
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        let r: EvalReport =
            serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        reports.push(r);
    }
    let table = crate::compare::compare(&reports)?;
    create_dir(&g.out)?;
    let out = g.out.join("comparison.md");
    std::fs::write(&out, &table).map_err(|e| CliError::io(&out, e))?;
    Ok(table)
}
