//! Reference predictors and the name registry used by the CLI.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::dataset::{Dataset, Window};
use crate::error::{Error, Result};
use crate::models::{train_model, FrameBank, ModelConfig, ModelKind, SeqModel};
use crate::nn::TrainConfig;
use crate::saliency::{extract_peaks, Peak, SaliencySequence};
use crate::sphere::{orthodromic_distance, UnitVec3};

/// Windows are predicted in chunks of this size so that results do not
/// depend on how callers split their work.
pub const PREDICT_CHUNK: usize = 256;

/// Maps each window's history (and, if needed, future saliency) to one
/// predicted unit position per future step.
pub trait Predictor: Send + Sync {
    fn name(&self) -> String;

    fn requires_saliency(&self) -> bool {
        false
    }

    fn predict(&self, windows: &[Window<'_>]) -> Result<Vec<Vec<UnitVec3>>>;
}

/// `h` copies of the last history position.
pub fn trivial_static(history: &[UnitVec3], h: usize) -> Result<Vec<UnitVec3>> {
    let last = history
        .last()
        .ok_or_else(|| Error::Empty("trivial-static needs a non-empty history".into()))?;
    // Same projection as every learned model's output, so a zero
    // displacement matches this bit for bit.
    Ok(vec![UnitVec3::normalize_or(last.to_array(), *last); h])
}

#[derive(Clone, Copy, Debug, Default)]
pub struct TrivialStatic;

impl Predictor for TrivialStatic {
    fn name(&self) -> String {
        "static".into()
    }

    fn predict(&self, windows: &[Window<'_>]) -> Result<Vec<Vec<UnitVec3>>> {
        windows.iter().map(|w| trivial_static(w.history, w.future.len())).collect()
    }
}

/// A trained sequence model, with the saliency frames it reads.
#[derive(Clone, Debug)]
pub struct ModelPredictor {
    pub model: Arc<SeqModel>,
    pub bank: Option<Arc<FrameBank>>,
}

impl ModelPredictor {
    pub fn new(model: SeqModel, bank: Option<Arc<FrameBank>>) -> Self {
        Self {
            model: Arc::new(model),
            bank,
        }
    }
}

impl Predictor for ModelPredictor {
    fn name(&self) -> String {
        self.model.kind().to_string()
    }

    fn requires_saliency(&self) -> bool {
        self.model.kind().uses_saliency()
    }

    fn predict(&self, windows: &[Window<'_>]) -> Result<Vec<Vec<UnitVec3>>> {
        if let Some(w) = windows.iter().find(|w| w.future.len() != self.model.config.horizon) {
            return Err(Error::Shape(format!(
                "window horizon {} differs from model horizon {}",
                w.future.len(),
                self.model.config.horizon
            )));
        }
        let mut out = Vec::with_capacity(windows.len());
        for chunk in windows.chunks(PREDICT_CHUNK) {
            out.extend(self.model.predict(chunk, self.bank.as_deref())?);
        }
        Ok(out)
    }
}

/// Sequence-to-sequence baseline on positions only.
#[derive(Clone, Debug)]
pub struct DeepPositionOnly {
    pub model: SeqModel,
}

impl DeepPositionOnly {
    pub fn untrained(mut config: ModelConfig, seed: u64) -> Result<Self> {
        config.kind = ModelKind::PosOnly;
        Ok(Self {
            model: SeqModel::new(config, seed)?,
        })
    }

    pub fn train(dataset: &Dataset, config: ModelConfig, cfg: &TrainConfig) -> Result<Self> {
        let fresh = Self::untrained(config, cfg.seed)?;
        Ok(Self {
            model: train_model(fresh.model, dataset, None, cfg)?,
        })
    }

    /// First `h` predicted positions after `history`.
    pub fn predict(&self, history: &[UnitVec3], h: usize) -> Result<Vec<UnitVec3>> {
        if h > self.model.config.horizon {
            return Err(Error::InvalidArgument(format!(
                "horizon {h} exceeds the trained horizon {}",
                self.model.config.horizon
            )));
        }
        let window = Window {
            video_id: "",
            user_id: "",
            t_index: history.len().saturating_sub(1),
            history,
            future: &[],
        };
        let mut p = self.model.predict(&[window], None)?.remove(0);
        p.truncate(h);
        Ok(p)
    }
}

/// Per step, the peak among the top `k` nearest to `p_t`, ties going to the
/// better-ranked peak. Steps without peaks fall back to `p_t`.
pub fn k_saliency_predict(p_t: &UnitVec3, peaks_per_step: &[Vec<Peak>], k: usize) -> Vec<UnitVec3> {
    peaks_per_step
        .iter()
        .map(|peaks| {
            let mut best: Option<(f64, &Peak)> = None;
            for peak in peaks.iter().take(k) {
                let d = orthodromic_distance(p_t, &peak.position);
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, peak));
                }
            }
            best.map(|(_, p)| p.position).unwrap_or(*p_t)
        })
        .collect()
}

/// Top-ranked peaks of every frame of every video.
#[derive(Clone, Debug, Default)]
pub struct PeakBank {
    peaks: BTreeMap<String, Vec<Vec<Peak>>>,
    pub max_k: usize,
}

impl PeakBank {
    pub fn new(sequences: &[SaliencySequence], max_k: usize, nms_radius: f64) -> Result<Self> {
        if max_k == 0 {
            return Err(Error::InvalidArgument("K must be >= 1".into()));
        }
        let mut peaks = BTreeMap::new();
        for seq in sequences {
            let per_frame = seq
                .maps()
                .iter()
                .map(|m| extract_peaks(m, max_k, nms_radius))
                .collect::<Result<Vec<_>>>()?;
            peaks.insert(seq.video_id.clone(), per_frame);
        }
        Ok(Self { peaks, max_k })
    }

    pub fn frames(&self, video_id: &str) -> Option<&[Vec<Peak>]> {
        self.peaks.get(video_id).map(Vec::as_slice)
    }
}

/// K-saliency-only baseline over ground-truth (or content) peaks.
#[derive(Clone, Debug)]
pub struct KSaliency {
    pub k: usize,
    pub bank: Arc<PeakBank>,
}

impl Predictor for KSaliency {
    fn name(&self) -> String {
        format!("k-sal:{}", self.k)
    }

    fn requires_saliency(&self) -> bool {
        true
    }

    fn predict(&self, windows: &[Window<'_>]) -> Result<Vec<Vec<UnitVec3>>> {
        if self.k > self.bank.max_k {
            return Err(Error::InvalidArgument(format!("K = {} exceeds the peak bank's {}", self.k, self.bank.max_k)));
        }
        windows
            .iter()
            .map(|w| {
                let frames = self
                    .bank
                    .frames(w.video_id)
                    .ok_or_else(|| Error::MissingSaliency(w.video_id.to_string()))?;
                let (from, to) = (w.t_index + 1, w.t_index + w.future.len());
                if frames.len() <= to {
                    return Err(Error::SaliencyTooShort {
                        video: w.video_id.to_string(),
                        have: frames.len(),
                        need: to + 1,
                    });
                }
                Ok(k_saliency_predict(&w.last_position(), &frames[from..=to], self.k))
            })
            .collect()
    }
}

/// Pointwise minimum over `K = 1..=kappa` of per-step mean error curves.
pub fn saliency_only_error_envelope(curves: &BTreeMap<usize, Vec<f64>>, kappa: usize) -> Result<Vec<f64>> {
    if kappa == 0 {
        return Err(Error::InvalidArgument("kappa must be >= 1".into()));
    }
    let first = curves.get(&1).ok_or_else(|| Error::InvalidArgument("missing curve for K = 1".into()))?;
    let mut env = first.clone();
    for k in 2..=kappa {
        let c = curves
            .get(&k)
            .ok_or_else(|| Error::InvalidArgument(format!("missing curve for K = {k}")))?;
        if c.len() != env.len() {
            return Err(Error::Shape(format!("curve for K = {k} has {} steps, expected {}", c.len(), env.len())));
        }
        for (e, v) in env.iter_mut().zip(c) {
            *e = e.min(*v);
        }
    }
    Ok(env)
}

/// Predictor names accepted on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PredictorName {
    Static,
    KSal(usize),
    Model(ModelKind),
}

impl PredictorName {
    pub fn requires_saliency(&self) -> bool {
        match self {
            PredictorName::Static => false,
            PredictorName::KSal(_) => true,
            PredictorName::Model(k) => k.uses_saliency(),
        }
    }
}

impl fmt::Display for PredictorName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PredictorName::Static => f.write_str("static"),
            PredictorName::KSal(k) => write!(f, "k-sal:{k}"),
            PredictorName::Model(m) => write!(f, "{m}"),
        }
    }
}

impl FromStr for PredictorName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "static" {
            return Ok(PredictorName::Static);
        }
        if let Some(k) = s.strip_prefix("k-sal:") {
            let k: usize = k
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad K in `{s}`")))?;
            if k == 0 {
                return Err(Error::InvalidArgument("K must be >= 1".into()));
            }
            return Ok(PredictorName::KSal(k));
        }
        s.parse::<ModelKind>()
            .map(PredictorName::Model)
            .map_err(|_| Error::InvalidArgument(format!("unknown predictor `{s}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{windows, Trace, WindowSpec};
    use crate::sphere::{ang_to_vec, AngularPosition};
    use approx::assert_abs_diff_eq;

    fn peak(theta_deg: f64, rank: usize) -> Peak {
        Peak {
            position: ang_to_vec(AngularPosition::from_degrees(theta_deg, 0.0).unwrap()),
            value: 1.0 / rank as f32,
            rank,
        }
    }

    #[test]
    fn static_repeats_last_position() {
        let h = [UnitVec3::X, UnitVec3::Y];
        let p = trivial_static(&h, 25).unwrap();
        assert_eq!(p.len(), 25);
        assert!(p.iter().all(|q| *q == UnitVec3::Y));
        assert!(trivial_static(&[], 3).is_err());
    }

    #[test]
    fn static_error_grows_linearly_on_constant_speed_trace() {
        let omega = 0.3;
        let samples: Vec<_> = (0..60)
            .map(|i| UnitVec3::X.advance([0.0, 1.0, 0.0], omega * i as f64 * 0.2))
            .collect();
        let ds = Dataset::from_traces(vec![Trace::new("v", "u", 0.2, samples).unwrap()]).unwrap();
        for w in windows(&ds, WindowSpec::default(), None) {
            let p = TrivialStatic.predict(&[w]).unwrap().remove(0);
            for (s, (a, b)) in p.iter().zip(w.future).enumerate() {
                assert_abs_diff_eq!(orthodromic_distance(a, b), omega * (s + 1) as f64 * 0.2, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn k_saliency_picks_nearest_of_top_k() {
        let p_t = UnitVec3::X;
        let steps = vec![vec![peak(100.0, 1), peak(30.0, 2)]; 4];
        let two = k_saliency_predict(&p_t, &steps, 2);
        let oracle = steps[0]
            .iter()
            .min_by(|a, b| {
                orthodromic_distance(&p_t, &a.position)
                    .partial_cmp(&orthodromic_distance(&p_t, &b.position))
                    .unwrap()
            })
            .unwrap()
            .position;
        assert!(two.iter().all(|q| *q == oracle));
        assert!(k_saliency_predict(&p_t, &steps, 1).iter().all(|q| *q == steps[0][0].position));
        let at = vec![vec![Peak { position: p_t, value: 1.0, rank: 1 }]; 3];
        assert!(k_saliency_predict(&p_t, &at, 5).iter().all(|q| *q == p_t));
        assert_eq!(k_saliency_predict(&p_t, &[vec![]], 3), vec![p_t]);
        let tie = vec![vec![peak(40.0, 1), peak(-40.0, 2)]];
        assert_eq!(k_saliency_predict(&p_t, &tie, 2)[0], tie[0][0].position);
    }

    #[test]
    fn envelope_cases() {
        let mut c = BTreeMap::new();
        for k in 1..=5 {
            c.insert(k, vec![0.5, 0.7, 1.0]);
        }
        assert_eq!(saliency_only_error_envelope(&c, 5).unwrap(), vec![0.5, 0.7, 1.0]);
        c.insert(1, vec![0.9, 0.8, 0.2]);
        c.insert(5, vec![0.1, 0.9, 1.5]);
        assert_eq!(saliency_only_error_envelope(&c, 5).unwrap(), vec![0.1, 0.7, 0.2]);
        assert_eq!(saliency_only_error_envelope(&c, 1).unwrap(), c[&1]);
        c.remove(&3);
        assert!(saliency_only_error_envelope(&c, 5).is_err());
    }

    #[test]
    fn names_parse_and_print() {
        for s in ["static", "pos-only", "k-sal:3", "track", "cvpr18i", "mm18i", "track-ablat-sal", "track-ablat-fuse"] {
            assert_eq!(s.parse::<PredictorName>().unwrap().to_string(), s);
        }
        assert!("k-sal:0".parse::<PredictorName>().is_err());
        assert!("lstm".parse::<PredictorName>().is_err());
        assert!(!PredictorName::Model(ModelKind::PosOnly).requires_saliency());
    }

    #[test]
    fn deep_position_only_zero_head_equals_static() {
        let mut m = DeepPositionOnly::untrained(ModelConfig::desk(ModelKind::Track), 1).unwrap();
        m.model.mark_trained();
        let history = [UnitVec3::X, UnitVec3::new(0.0, 0.6, 0.8).unwrap()];
        let mut cfg = m.model.config.clone();
        cfg.history = 2;
        let mut m2 = DeepPositionOnly::untrained(cfg, 1).unwrap();
        m2.model.mark_trained();
        assert_eq!(m2.predict(&history, 25).unwrap(), trivial_static(&history, 25).unwrap());
        assert!(m2.predict(&history, 26).is_err());
        assert_eq!(m.model.kind(), ModelKind::PosOnly);
    }
}
