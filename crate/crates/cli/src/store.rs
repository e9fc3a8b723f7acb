//! On-disk layout of one experiment directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use hmb_core::dataset::{load_traces, save_traces_xyz, split_train_test, Dataset, Subset, SynthManifest, TraceFormat};
use hmb_core::models::{ModelKind, SeqModel};
use hmb_core::saliency::{gt_saliency_sequence, load_saliency, save_saliency, Grid, SaliencySequence};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::ConfigError;

/// Which maps a command reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SaliencySource {
    /// Maps built from the users' own positions.
    Gt,
    /// Content maps shipped with the dataset (synthesized or ingested).
    Content,
}

impl SaliencySource {
    pub fn dir_name(&self) -> &'static str {
        match self {
            SaliencySource::Gt => "gt",
            SaliencySource::Content => "content",
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SplitFile {
    pub config_hash: String,
    pub seed: u64,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Stamp {
    pub config_hash: String,
    pub seed: u64,
    pub what: String,
}

pub struct Experiment {
    pub root: PathBuf,
}

impl Experiment {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn traces_path(&self) -> PathBuf {
        self.root.join("traces.csv")
    }

    pub fn split_path(&self) -> PathBuf {
        self.root.join("split.json")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn saliency_dir(&self, source: SaliencySource) -> PathBuf {
        self.root.join("saliency").join(source.dir_name())
    }

    pub fn model_path(&self, kind: ModelKind) -> PathBuf {
        self.root.join("models").join(format!("{kind}.hmbk"))
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.root.join("eval")
    }

    pub fn analysis_dir(&self) -> PathBuf {
        self.root.join("analysis")
    }

    pub fn write_dataset(&self, ds: &Dataset, cfg: &ExperimentConfig) -> anyhow::Result<()> {
        std::fs::create_dir_all(&self.root)?;
        save_traces_xyz(self.traces_path(), ds, &cfg.preamble())?;
        let split = SplitFile {
            config_hash: cfg.hash(),
            seed: cfg.seed,
            train: ds.videos_in(Subset::Train).map(String::from).collect(),
            test: ds.videos_in(Subset::Test).map(String::from).collect(),
        };
        write_json(&self.split_path(), &split)
    }

    /// Traces with their split; a missing split file leaves the dataset unsplit.
    pub fn load_dataset(&self, cfg: &ExperimentConfig) -> anyhow::Result<Dataset> {
        let path = self.traces_path();
        if !path.exists() {
            return Err(ConfigError(format!(
                "no dataset at {}; run `hmb synth` or `hmb ingest` first",
                path.display()
            ))
            .into());
        }
        let ds = load_traces(&path, TraceFormat::CsvXyz, cfg.dt)?;
        if !self.split_path().exists() {
            return Ok(ds);
        }
        let split: SplitFile = read_json(&self.split_path())?;
        if split.test.is_empty() {
            return Ok(ds);
        }
        let test: Vec<&str> = split.test.iter().map(String::as_str).collect();
        Ok(split_train_test(&ds, &test)?)
    }

    pub fn load_manifest(&self) -> anyhow::Result<Option<SynthManifest>> {
        let p = self.manifest_path();
        if !p.exists() {
            return Ok(None);
        }
        let value: serde_json::Value = read_json(&p)?;
        Ok(Some(serde_json::from_value(value["manifest"].clone())?))
    }

    pub fn write_saliency(&self, source: SaliencySource, seqs: &[SaliencySequence], cfg: &ExperimentConfig) -> anyhow::Result<()> {
        let dir = self.saliency_dir(source);
        std::fs::create_dir_all(&dir)?;
        for s in seqs {
            save_saliency(dir.join(format!("{}.salm", s.video_id)), s)?;
        }
        write_json(
            &dir.join("stamp.json"),
            &Stamp {
                config_hash: cfg.hash(),
                seed: cfg.seed,
                what: format!("{} saliency, {} videos", source.dir_name(), seqs.len()),
            },
        )
    }

    /// Maps of every listed video, or `None` if the source directory is absent.
    pub fn read_saliency(&self, source: SaliencySource, videos: &[&str]) -> anyhow::Result<Option<Vec<SaliencySequence>>> {
        let dir = self.saliency_dir(source);
        if !dir.exists() {
            return Ok(None);
        }
        let mut out = Vec::with_capacity(videos.len());
        for v in videos {
            let p = dir.join(format!("{v}.salm"));
            if !p.exists() {
                bail!(ConfigError(format!("missing {} saliency for video `{v}` ({})", source.dir_name(), p.display())));
            }
            out.push(load_saliency(&p).with_context(|| format!("reading {}", p.display()))?);
        }
        Ok(Some(out))
    }

    /// Stored maps, computing ground truth on demand. Content maps must exist.
    pub fn saliency(&self, source: SaliencySource, ds: &Dataset, cfg: &ExperimentConfig) -> anyhow::Result<Vec<SaliencySequence>> {
        let videos: Vec<&str> = ds.video_ids().collect();
        if let Some(s) = self.read_saliency(source, &videos)? {
            return Ok(s);
        }
        match source {
            SaliencySource::Gt => gt_sequences(ds, cfg.grid(), cfg.sigma()),
            SaliencySource::Content => Err(ConfigError(format!(
                "no content saliency under {}; synthesize or ingest maps first",
                self.saliency_dir(source).display()
            ))
            .into()),
        }
    }

    pub fn load_model(&self, kind: ModelKind) -> anyhow::Result<SeqModel> {
        let p = self.model_path(kind);
        if !p.exists() {
            return Err(ConfigError(format!(
                "no trained checkpoint for `{kind}` at {}; run `hmb train {kind}` first",
                p.display()
            ))
            .into());
        }
        Ok(SeqModel::load(&p)?)
    }
}

/// Ground-truth maps per video, through the `HMB_CACHE` directory when set.
pub fn gt_sequences(ds: &Dataset, grid: Grid, sigma: f64) -> anyhow::Result<Vec<SaliencySequence>> {
    let cache = std::env::var_os("HMB_CACHE").map(PathBuf::from);
    let fingerprint = ds.fingerprint();
    let mut out = Vec::new();
    for v in ds.video_ids() {
        let key = cache.as_ref().map(|dir| {
            let mut h = Sha256::new();
            h.update(fingerprint.as_bytes());
            h.update(v.as_bytes());
            h.update(format!("{}x{}:{:e}", grid.height, grid.width, sigma).as_bytes());
            dir.join(format!("gt-{}.salm", &hex::encode(h.finalize())[..24]))
        });
        if let Some(p) = key.as_ref().filter(|p| p.exists()) {
            log::debug!("saliency cache hit for `{v}`: {}", p.display());
            let hit = load_saliency(p)?;
            out.push(SaliencySequence::new(v, ds.dt(), hit.maps().to_vec())?);
            continue;
        }
        let seq = gt_saliency_sequence(ds, v, grid, sigma)?;
        if let Some(p) = key {
            std::fs::create_dir_all(p.parent().expect("cache file has a parent"))?;
            save_saliency(&p, &seq)?;
        }
        out.push(seq);
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// `video -> category` table written next to entropy values.
pub fn write_categories(
    path: &Path,
    entropies: &[(String, f64)],
    labels: &BTreeMap<String, hmb_core::eval::Category>,
    cfg: &ExperimentConfig,
) -> anyhow::Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for line in cfg.preamble() {
        writeln!(f, "# {line}")?;
    }
    writeln!(f, "video_id,mean_entropy_bits,category")?;
    for (v, h) in entropies {
        writeln!(f, "{v},{h:.9},{}", labels.get(v).copied().unwrap_or_default())?;
    }
    f.flush()?;
    Ok(())
}
