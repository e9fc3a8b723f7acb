use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use hmb_core::baselines::{KSaliency, ModelPredictor, PeakBank, Predictor, PredictorName, TrivialStatic};
use hmb_core::dataset::{load_traces, split_train_test, synth_generate, Dataset, Subset, SynthConfig, SynthKind, SynthOutput};
use hmb_core::eval::{categorize_by_entropy, evaluate as run_evaluation, video_entropies, write_report, Category, CategoryLabels, EvalReport};
use hmb_core::info::{mutual_information, transfer_entropy, write_info_csv, InfoEstimate, ScalarBinner, Scalarization, SphericalBinner};
use hmb_core::models::{train_model, FrameBank, ModelKind, SeqModel};
use hmb_core::saliency::{load_saliency, SaliencySequence};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::plot::{chart_from_csv, render};
use crate::store::{gt_sequences, read_json, write_categories, write_json, Experiment, SaliencySource};
use crate::{
    AnalyzeCommand, CategorySource, ConfigError, EvaluateArgs, IngestArgs, LagArgs, PlotArgs, SaliencyCommand,
    ScalarizationArg, SynthArgs, TrainArgs,
};

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

fn checked(cfg: ExperimentConfig) -> anyhow::Result<ExperimentConfig> {
    cfg.validate().map_err(|e| config_error(format!("{e:#}")))?;
    Ok(cfg)
}

/// Generates one dataset per kind and holds out the last videos of each.
pub fn synthesize(cfg: &ExperimentConfig) -> anyhow::Result<SynthOutput> {
    let s = &cfg.synth;
    let mut merged: Option<SynthOutput> = None;
    let mut test: Vec<String> = Vec::new();
    for kind in &s.kinds {
        let sc = SynthConfig {
            dt: cfg.dt,
            grid: Some(cfg.grid()),
            sigma: cfg.sigma(),
            ..SynthConfig::new(*kind, s.n_videos, s.n_users, s.duration_s, cfg.seed)
        };
        let part = synth_generate(&sc)?;
        let ids: Vec<String> = part.dataset.video_ids().map(String::from).collect();
        let n_test = if ids.len() < 2 {
            0
        } else {
            ((s.test_fraction * ids.len() as f64).round() as usize).clamp(1, ids.len() - 1)
        };
        test.extend(ids[ids.len() - n_test..].iter().cloned());
        merged = Some(match merged {
            None => part,
            Some(m) => m.merge(part)?,
        });
    }
    let mut out = merged.ok_or_else(|| config_error("no synthetic kinds requested"))?;
    if test.is_empty() {
        log::warn!("a single video per kind leaves no test split");
    } else {
        let ids: Vec<&str> = test.iter().map(String::as_str).collect();
        out.dataset = split_train_test(&out.dataset, &ids)?;
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct ManifestFile {
    config_hash: String,
    seed: u64,
    manifest: hmb_core::dataset::SynthManifest,
}

pub fn synth(out: &Path, mut cfg: ExperimentConfig, a: &SynthArgs) -> anyhow::Result<()> {
    if !a.kind.is_empty() {
        cfg.synth.kinds = a.kind.clone();
    }
    cfg.synth.n_videos = a.videos.unwrap_or(cfg.synth.n_videos);
    cfg.synth.n_users = a.users.unwrap_or(cfg.synth.n_users);
    cfg.synth.duration_s = a.duration.unwrap_or(cfg.synth.duration_s);
    cfg.synth.test_fraction = a.test_fraction.unwrap_or(cfg.synth.test_fraction);
    cfg.grid = a.grid.or(cfg.grid);
    let cfg = checked(cfg)?;
    materialize(out, &cfg).map(|_| ())
}

/// Synthesizes the corpus of `cfg` and writes traces, split, manifest and
/// content maps under `out`.
pub fn materialize(out: &Path, cfg: &ExperimentConfig) -> anyhow::Result<SynthOutput> {
    let data = synthesize(cfg)?;
    let exp = Experiment::new(out);
    exp.write_dataset(&data.dataset, cfg)?;
    write_json(
        &exp.manifest_path(),
        &ManifestFile {
            config_hash: cfg.hash(),
            seed: cfg.seed,
            manifest: data.manifest.clone(),
        },
    )?;
    exp.write_saliency(SaliencySource::Content, &data.saliency, cfg)?;
    write_json(&out.join("config.json"), cfg)?;
    log::info!(
        "wrote {} traces over {} videos to {}",
        data.dataset.traces().len(),
        data.dataset.video_ids().count(),
        out.display()
    );
    Ok(data)
}

pub fn ingest(out: &Path, cfg: ExperimentConfig, a: &IngestArgs) -> anyhow::Result<()> {
    let cfg = checked(cfg)?;
    if !a.traces.exists() {
        return Err(config_error(format!("trace file {} does not exist", a.traces.display())));
    }
    let mut ds = load_traces(&a.traces, a.format, cfg.dt)?;
    if !a.test_videos.is_empty() {
        let ids: Vec<&str> = a.test_videos.iter().map(String::as_str).collect();
        ds = split_train_test(&ds, &ids)?;
    }
    let exp = Experiment::new(out);
    exp.write_dataset(&ds, &cfg)?;
    if let Some(dir) = &a.saliency_dir {
        let mut seqs: Vec<SaliencySequence> = Vec::new();
        for v in ds.video_ids() {
            let p = dir.join(format!("{v}.salm"));
            if !p.exists() {
                log::warn!("no content maps for `{v}` in {}", dir.display());
                continue;
            }
            let seq = load_saliency(&p).with_context(|| format!("reading {}", p.display()))?;
            if (seq.dt - cfg.dt).abs() > 1e-6 {
                return Err(config_error(format!("{} has dt {}, expected {}", p.display(), seq.dt, cfg.dt)));
            }
            seqs.push(SaliencySequence::new(v, seq.dt, seq.maps().to_vec())?);
        }
        exp.write_saliency(SaliencySource::Content, &seqs, &cfg)?;
    }
    write_json(&out.join("config.json"), &cfg)?;
    log::info!("ingested {} traces into {}", ds.traces().len(), out.display());
    Ok(())
}

pub fn saliency(out: &Path, mut cfg: ExperimentConfig, c: &SaliencyCommand) -> anyhow::Result<()> {
    let exp = Experiment::new(out);
    match c {
        SaliencyCommand::Gt { grid, sigma_deg } => {
            cfg.grid = grid.or(cfg.grid);
            cfg.sigma_deg = sigma_deg.unwrap_or(cfg.sigma_deg);
            let cfg = checked(cfg)?;
            let ds = exp.load_dataset(&cfg)?;
            let seqs = gt_sequences(&ds, cfg.grid(), cfg.sigma())?;
            exp.write_saliency(SaliencySource::Gt, &seqs, &cfg)?;
            log::info!("wrote ground-truth maps for {} videos", seqs.len());
        }
        SaliencyCommand::Entropy { quantile } => {
            cfg.category_quantile = quantile.unwrap_or(cfg.category_quantile);
            let cfg = checked(cfg)?;
            let ds = exp.load_dataset(&cfg)?;
            let seqs = exp.saliency(SaliencySource::Gt, &ds, &cfg)?;
            let entropies = video_entropies(&seqs, cfg.t_start)?;
            let labels = categorize_by_entropy(&seqs, cfg.category_quantile, cfg.t_start)?;
            write_categories(&out.join("entropy.csv"), &entropies, &labels, &cfg)?;
        }
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ModelStamp {
    config_hash: String,
    seed: u64,
    saliency: Option<String>,
    loss_history: Vec<f64>,
}

fn frame_bank(exp: &Experiment, source: SaliencySource, ds: &Dataset, cfg: &ExperimentConfig) -> anyhow::Result<FrameBank> {
    let seqs = exp.saliency(source, ds, cfg)?;
    let bank = FrameBank::new(&seqs)?;
    if bank.grid() != cfg.grid() {
        return Err(config_error(format!(
            "{} saliency is {}x{} but the model grid is {}x{}; set --grid or `grid` in the config",
            source.dir_name(),
            bank.grid().height,
            bank.grid().width,
            cfg.grid().height,
            cfg.grid().width
        )));
    }
    Ok(bank)
}

pub fn train_one(exp: &Experiment, cfg: &ExperimentConfig, kind: ModelKind, source: SaliencySource) -> anyhow::Result<SeqModel> {
    let ds = exp.load_dataset(cfg)?;
    if ds.videos_in(Subset::Train).next().is_none() {
        return Err(config_error("dataset has no train/test split; pass --test-videos to ingest"));
    }
    let bank = if kind.uses_saliency() {
        let train_ids: Vec<&str> = ds.videos_in(Subset::Train).collect();
        Some(frame_bank(exp, source, &ds.restrict_to(&train_ids)?, cfg)?)
    } else {
        None
    };
    let model = SeqModel::new(cfg.model_config(kind), cfg.seed)?;
    let trained = train_model(model, &ds, bank.as_ref(), &cfg.train_config())?;
    let path = exp.model_path(kind);
    std::fs::create_dir_all(path.parent().expect("model path has a parent"))?;
    trained.save(&path)?;
    write_json(
        &path.with_extension("json"),
        &ModelStamp {
            config_hash: cfg.hash(),
            seed: cfg.seed,
            saliency: kind.uses_saliency().then(|| source.dir_name().to_string()),
            loss_history: trained.loss_history.clone(),
        },
    )?;
    log::info!("saved {kind} to {}", path.display());
    Ok(trained)
}

pub fn train(out: &Path, mut cfg: ExperimentConfig, a: &TrainArgs) -> anyhow::Result<()> {
    cfg.epochs = a.epochs.or(cfg.epochs);
    cfg.units = a.units.or(cfg.units);
    cfg.batch_size = a.batch_size.or(cfg.batch_size);
    cfg.window_stride = a.stride.unwrap_or(cfg.window_stride);
    let cfg = checked(cfg)?;
    train_one(&Experiment::new(out), &cfg, a.model, a.saliency).map(|_| ())
}

fn category_labels(exp: &Experiment, source: CategorySource, ds: &Dataset, cfg: &ExperimentConfig) -> anyhow::Result<CategoryLabels> {
    match source {
        CategorySource::Entropy => {
            let seqs = exp.saliency(SaliencySource::Gt, ds, cfg)?;
            Ok(categorize_by_entropy(&seqs, cfg.category_quantile, cfg.t_start)?)
        }
        CategorySource::Manifest => {
            let m = exp
                .load_manifest()?
                .ok_or_else(|| config_error("no manifest.json; categories from a manifest need a synthetic dataset"))?;
            Ok(m.kinds()
                .into_iter()
                .filter(|(v, _)| ds.video_durations().contains_key(v))
                .map(|(v, k)| {
                    let c = match k {
                        SynthKind::StaticFocus => Category::Focus,
                        SynthKind::Exploration => Category::Exploration,
                        _ => Category::Unlabeled,
                    };
                    (v, c)
                })
                .collect())
        }
    }
}

pub fn evaluate(out: &Path, mut cfg: ExperimentConfig, a: &EvaluateArgs) -> anyhow::Result<EvalReport> {
    if !a.predictors.is_empty() {
        cfg.predictors = a.predictors.clone();
    }
    let cfg = checked(cfg)?;
    let exp = Experiment::new(out);
    let full = exp.load_dataset(&cfg)?;
    let test_ids: Vec<&str> = full.videos_in(Subset::Test).collect();
    let ds = if test_ids.is_empty() {
        log::warn!("dataset has no split; evaluating on every video");
        full.clone()
    } else {
        full.restrict_to(&test_ids)?
    };
    let names: Vec<PredictorName> = cfg
        .predictors
        .iter()
        .map(|p| p.parse::<PredictorName>().map_err(|e| config_error(e.to_string())))
        .collect::<anyhow::Result<_>>()?;
    let max_k = names.iter().filter_map(|n| if let PredictorName::KSal(k) = n { Some(*k) } else { None }).max();
    let peaks = match max_k {
        Some(k) => {
            let seqs = exp.saliency(a.peaks, &ds, &cfg)?;
            Some(Arc::new(PeakBank::new(&seqs, k, cfg.nms_radius_deg.to_radians())?))
        }
        None => None,
    };
    let mut banks: BTreeMap<&'static str, Arc<FrameBank>> = BTreeMap::new();
    let mut predictors: Vec<Box<dyn Predictor>> = Vec::new();
    for name in &names {
        match name {
            PredictorName::Static => predictors.push(Box::new(TrivialStatic)),
            PredictorName::KSal(k) => predictors.push(Box::new(KSaliency {
                k: *k,
                bank: peaks.clone().expect("peak bank built for K-saliency"),
            })),
            PredictorName::Model(kind) => {
                let model = exp.load_model(*kind)?;
                if model.config.history != cfg.history || model.config.horizon != cfg.horizon {
                    return Err(config_error(format!(
                        "`{kind}` was trained for {}+{} steps, evaluation uses {}+{}",
                        model.config.history, model.config.horizon, cfg.history, cfg.horizon
                    )));
                }
                let bank = if kind.uses_saliency() {
                    let stamp: Option<ModelStamp> = read_json(&exp.model_path(*kind).with_extension("json")).ok();
                    let source = a.saliency.unwrap_or_else(|| match stamp.and_then(|s| s.saliency).as_deref() {
                        Some("gt") => SaliencySource::Gt,
                        _ => SaliencySource::Content,
                    });
                    let bank = match banks.get(source.dir_name()) {
                        Some(b) => b.clone(),
                        None => {
                            let b = Arc::new(frame_bank(&exp, source, &ds, &cfg)?);
                            banks.insert(source.dir_name(), b.clone());
                            b
                        }
                    };
                    Some(bank)
                } else {
                    None
                };
                predictors.push(Box::new(ModelPredictor {
                    model: Arc::new(model),
                    bank,
                }));
            }
        }
    }
    let labels = category_labels(&exp, a.categories, &ds, &cfg)?;
    let refs: Vec<&dyn Predictor> = predictors.iter().map(|p| p.as_ref()).collect();
    let report = run_evaluation(&refs, &ds, cfg.window_spec(), None, &labels)?;
    write_report(&report, exp.eval_dir(), &cfg.preamble())?;
    log::info!("wrote evaluation of {} predictors to {}", refs.len(), exp.eval_dir().display());
    Ok(report)
}

fn lags(l: &LagArgs, dt: f64) -> anyhow::Result<Vec<f64>> {
    if !(l.max_lag > 0.0) {
        return Err(config_error("--max-lag must be positive"));
    }
    let n = (l.max_lag / dt + 1e-9).floor() as usize;
    let first = if l.with_zero { 0 } else { 1 };
    Ok((first..=n).map(|k| k as f64 * dt).collect())
}

pub fn analyze(out: &Path, cfg: ExperimentConfig, c: &AnalyzeCommand) -> anyhow::Result<()> {
    let cfg = checked(cfg)?;
    let exp = Experiment::new(out);
    let ds = exp.load_dataset(&cfg)?;
    let pos = SphericalBinner::new(cfg.position_bins)?;
    std::fs::create_dir_all(exp.analysis_dir())?;
    match c {
        AnalyzeCommand::Mi { lags: l, raw } => {
            let rows: Vec<(f64, InfoEstimate)> = lags(l, cfg.dt)?
                .into_iter()
                .map(|s| Ok((s, mutual_information(&ds, s, &pos, !raw, cfg.t_start)?)))
                .collect::<anyhow::Result<_>>()?;
            let column = if *raw { "mi_bits" } else { "mi_normalized" };
            let path = exp.analysis_dir().join("mi.csv");
            write_info_csv(&path, column, &rows, &cfg.preamble())?;
            log::info!("wrote {}", path.display());
        }
        AnalyzeCommand::Te {
            lags: l,
            saliency,
            scalarization,
        } => {
            let seqs = exp.saliency(*saliency, &ds, &cfg)?;
            let sal = ScalarBinner::new(cfg.saliency_bins)?;
            let mode = match scalarization {
                ScalarizationArg::Value => Scalarization::ValueAtTarget,
                ScalarizationArg::Argmax => Scalarization::ArgmaxCell,
            };
            let rows: Vec<(f64, InfoEstimate)> = lags(l, cfg.dt)?
                .into_iter()
                .map(|s| Ok((s, transfer_entropy(&ds, &seqs, s, &pos, &sal, mode, cfg.t_start)?)))
                .collect::<anyhow::Result<_>>()?;
            let path = exp.analysis_dir().join("te.csv");
            write_info_csv(&path, "te_bits", &rows, &cfg.preamble())?;
            log::info!("wrote {}", path.display());
        }
    }
    Ok(())
}

pub fn plot_file(input: &Path, output: &Path, aggregate: &str, cfg: &ExperimentConfig) -> anyhow::Result<()> {
    if !input.exists() {
        return Err(config_error(format!("nothing to plot: {} does not exist", input.display())));
    }
    let chart = chart_from_csv(input, aggregate)?;
    render(&chart, output, &format!("config {} seed {}", cfg.short_hash(), cfg.seed))?;
    log::info!("wrote {}", output.display());
    Ok(())
}

pub fn plot(out: &Path, cfg: &ExperimentConfig, a: &PlotArgs) -> anyhow::Result<()> {
    let input: PathBuf = a.input.clone().unwrap_or_else(|| Experiment::new(out).eval_dir().join("curves.csv"));
    let output = a.output.clone().unwrap_or_else(|| input.with_extension("svg"));
    plot_file(&input, &output, &a.aggregate, cfg)
}
