//! One-command desk-scale pipelines, each ending in `figure.csv` and `figure.svg`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use hmb_core::baselines::saliency_only_error_envelope;
use hmb_core::dataset::SynthKind;
use hmb_core::eval::{write_report, Category, EvalReport, Pooling};
use hmb_core::info::{mutual_information, transfer_entropy, InfoEstimate, ScalarBinner, Scalarization, SphericalBinner};
use hmb_core::models::ModelKind;

use crate::commands;
use crate::config::ExperimentConfig;
use crate::plot::{render, Chart, Series};
use crate::store::{Experiment, SaliencySource};
use crate::{CategorySource, EvaluateArgs, Figure};

const MAX_K: usize = 5;

pub fn run(out: &Path, mut cfg: ExperimentConfig, figure: Figure) -> anyhow::Result<()> {
    if !matches!(figure, Figure::TrackAvg | Figure::Ablation) {
        cfg.synth.kinds = SynthKind::ALL.to_vec();
    }
    cfg.validate().map_err(|e| crate::ConfigError(format!("{e:#}")))?;
    let exp = Experiment::new(out);
    let chart = match figure {
        Figure::TrackAvg => per_kind_models(out, &cfg, &[ModelKind::PosOnly, ModelKind::Track], "TRACK against baselines")?,
        Figure::Ablation => per_kind_models(
            out,
            &cfg,
            &[ModelKind::Track, ModelKind::TrackAblatSal, ModelKind::TrackAblatFuse],
            "TRACK ablations",
        )?,
        Figure::KSaliency => {
            commands::materialize(out, &cfg)?;
            k_saliency(out, &cfg)?
        }
        Figure::Mi => {
            commands::materialize(out, &cfg)?;
            let ds = exp.load_dataset(&cfg)?;
            let binner = SphericalBinner::new(cfg.position_bins)?;
            let rows = lags(&cfg)
                .into_iter()
                .map(|s| Ok((s, mutual_information(&ds, s, &binner, true, cfg.t_start)?)))
                .collect::<anyhow::Result<Vec<_>>>()?;
            info_chart("Normalized mutual information I(P_t; P_t+s) / H(P_t)", "normalized MI", rows)
        }
        Figure::Te => {
            commands::materialize(out, &cfg)?;
            let ds = exp.load_dataset(&cfg)?;
            let pos = SphericalBinner::new(cfg.position_bins)?;
            let sal = ScalarBinner::new(cfg.saliency_bins)?;
            let mut series = Vec::new();
            for (label, source) in [("content", SaliencySource::Content), ("ground truth", SaliencySource::Gt)] {
                let seqs = exp.saliency(source, &ds, &cfg)?;
                let rows = lags(&cfg)
                    .into_iter()
                    .map(|s| {
                        let te = transfer_entropy(&ds, &seqs, s, &pos, &sal, Scalarization::ValueAtTarget, cfg.t_start)?;
                        Ok((s, te))
                    })
                    .collect::<anyhow::Result<Vec<_>>>()?;
                series.extend(info_chart("", "", rows).series.into_iter().map(|mut s| {
                    s.label = format!("{label} {}", s.label);
                    s
                }));
            }
            Chart {
                title: "Transfer entropy from saliency to position".into(),
                x_label: "prediction step s (s)".into(),
                y_label: "TE (bits)".into(),
                series,
            }
        }
    };
    write_figure_csv(&out.join("figure.csv"), &chart, &cfg)?;
    render(&chart, &out.join("figure.svg"), &format!("config {} seed {}", cfg.short_hash(), cfg.seed))?;
    log::info!("wrote {}", out.join("figure.svg").display());
    Ok(())
}

fn lags(cfg: &ExperimentConfig) -> Vec<f64> {
    (1..=cfg.horizon).map(|k| k as f64 * cfg.dt).collect()
}

fn eval_args(predictors: Vec<String>, categories: CategorySource) -> EvaluateArgs {
    EvaluateArgs {
        predictors,
        peaks: SaliencySource::Gt,
        saliency: None,
        categories,
    }
}

fn k_saliency(out: &Path, cfg: &ExperimentConfig) -> anyhow::Result<Chart> {
    let names: Vec<String> = (1..=MAX_K).map(|k| format!("k-sal:{k}")).collect();
    let report = commands::evaluate(out, cfg.clone(), &eval_args(names.clone(), CategorySource::Entropy))?;
    let steps = report.steps_seconds();
    let mut curves = BTreeMap::new();
    let mut series = Vec::new();
    for (k, name) in (1..=MAX_K).zip(&names) {
        let c = report.curve(name, Pooling::Macro).expect("evaluated predictor has a curve");
        series.push(Series {
            label: name.clone(),
            points: steps.iter().copied().zip(c.iter().copied()).collect(),
        });
        curves.insert(k, c);
    }
    let env = saliency_only_error_envelope(&curves, MAX_K)?;
    series.push(Series {
        label: format!("envelope K<={MAX_K}"),
        points: steps.iter().copied().zip(env).collect(),
    });
    Ok(Chart {
        title: "K-saliency-only error".into(),
        x_label: "prediction step s (s)".into(),
        y_label: "mean orthodromic error (rad)".into(),
        series,
    })
}

/// Trains and evaluates `kinds` separately on a static_focus and an
/// exploration corpus (subdirectories of `out`), then pools both reports
/// into `out/eval`.
fn per_kind_models(out: &Path, cfg: &ExperimentConfig, kinds: &[ModelKind], title: &str) -> anyhow::Result<Chart> {
    let mut names: Vec<String> = vec!["static".into(), format!("k-sal:{MAX_K}")];
    let mut train: Vec<ModelKind> = kinds.to_vec();
    if !kinds.contains(&ModelKind::PosOnly) {
        train.insert(0, ModelKind::PosOnly);
    }
    names.extend(train.iter().map(|k| k.to_string()));
    let mut pooled: Option<EvalReport> = None;
    for kind in [SynthKind::StaticFocus, SynthKind::Exploration] {
        let sub = out.join(kind.as_str());
        let mut c = cfg.clone();
        c.synth.kinds = vec![kind];
        c.predictors = names.clone();
        commands::materialize(&sub, &c)?;
        let exp = Experiment::new(&sub);
        for &k in &train {
            commands::train_one(&exp, &c, k, SaliencySource::Content)?;
        }
        let report = commands::evaluate(&sub, c, &eval_args(names.clone(), CategorySource::Manifest))?;
        pooled = Some(match pooled {
            None => report,
            Some(p) => p.merge(report)?,
        });
    }
    let report = pooled.expect("two corpora evaluated");
    write_report(&report, Experiment::new(out).eval_dir(), &cfg.preamble())?;
    Ok(category_chart(&report, &names, title))
}

fn category_chart(report: &EvalReport, names: &[String], title: &str) -> Chart {
    let steps = report.steps_seconds();
    let mut series = Vec::new();
    for cat in [Category::Focus, Category::Exploration] {
        for n in names {
            if let Some(c) = report.category_curve(n, cat, Pooling::Macro) {
                series.push(Series {
                    label: format!("{n} ({cat})"),
                    points: steps.iter().copied().zip(c).collect(),
                });
            }
        }
    }
    Chart {
        title: title.into(),
        x_label: "prediction step s (s)".into(),
        y_label: "mean orthodromic error (rad)".into(),
        series,
    }
}

/// Mean over videos plus the spread across them.
fn info_chart(title: &str, y_label: &str, rows: Vec<(f64, InfoEstimate)>) -> Chart {
    let mut mean = Vec::new();
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    for (s, est) in &rows {
        mean.push((*s, est.mean));
        let vals = est.per_video.iter().map(|(_, v)| *v);
        lo.push((*s, vals.clone().fold(f64::INFINITY, f64::min)));
        hi.push((*s, vals.fold(f64::NEG_INFINITY, f64::max)));
    }
    Chart {
        title: title.into(),
        x_label: "prediction step s (s)".into(),
        y_label: y_label.into(),
        series: vec![
            Series { label: "mean".into(), points: mean },
            Series { label: "min".into(), points: lo },
            Series { label: "max".into(), points: hi },
        ],
    }
}

fn write_figure_csv(path: &Path, chart: &Chart, cfg: &ExperimentConfig) -> anyhow::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for line in cfg.preamble() {
        writeln!(f, "# {line}")?;
    }
    writeln!(f, "series,s,value")?;
    for s in &chart.series {
        for (x, y) in &s.points {
            writeln!(f, "{},{x:.6},{y:.9}", s.label)?;
        }
    }
    f.flush()?;
    Ok(())
}
