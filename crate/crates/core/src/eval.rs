//! Paired evaluation of predictors over test windows, video categories and
//! report files.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::baselines::{Predictor, PREDICT_CHUNK};
use crate::dataset::{windows, Dataset, Subset, Window, WindowSpec};
use crate::error::{Error, Result};
use crate::saliency::{saliency_entropy, SaliencySequence};
use crate::sphere::orthodromic_distance;

pub const DEFAULT_CATEGORY_QUANTILE: f64 = 0.1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    Focus,
    Exploration,
    #[default]
    Unlabeled,
}

impl Category {
    pub fn as_str(&self) -> &'static str {
        match self {
            Category::Focus => "focus",
            Category::Exploration => "exploration",
            Category::Unlabeled => "unlabeled",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "focus" => Ok(Category::Focus),
            "exploration" => Ok(Category::Exploration),
            "unlabeled" => Ok(Category::Unlabeled),
            _ => Err(Error::InvalidArgument(format!("unknown category `{s}`"))),
        }
    }
}

pub type CategoryLabels = BTreeMap<String, Category>;

/// Mean ground-truth saliency entropy of each video over frames at
/// `t >= t_start`, sorted ascending with ties broken by id.
pub fn video_entropies(gt: &[SaliencySequence], t_start: f64) -> Result<Vec<(String, f64)>> {
    let mut out = Vec::with_capacity(gt.len());
    for seq in gt {
        let first = ((t_start / seq.dt) - 1e-9).ceil().max(0.0) as usize;
        let frames = seq.maps().get(first..).unwrap_or_default();
        if frames.is_empty() {
            return Err(Error::SaliencyTooShort {
                video: seq.video_id.clone(),
                have: seq.len(),
                need: first + 1,
            });
        }
        let mut sum = 0.0;
        for m in frames {
            sum += saliency_entropy(m)?;
        }
        out.push((seq.video_id.clone(), sum / frames.len() as f64));
    }
    out.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    Ok(out)
}

/// The `floor(q·n)` lowest-entropy videos are `focus` and as many highest
/// ones `exploration`. Too few videos leaves everything unlabeled.
pub fn categorize_by_entropy(gt: &[SaliencySequence], quantile: f64, t_start: f64) -> Result<CategoryLabels> {
    if !(quantile > 0.0 && quantile <= 0.5) {
        return Err(Error::InvalidArgument(format!("quantile must lie in (0, 0.5], got {quantile}")));
    }
    let sorted = video_entropies(gt, t_start)?;
    let n = sorted.len();
    let nq = (quantile * n as f64 + 1e-9).floor() as usize;
    if nq == 0 {
        log::warn!("{n} videos are too few for quantile {quantile}; all left unlabeled");
    }
    Ok(sorted
        .into_iter()
        .enumerate()
        .map(|(i, (v, _))| {
            let c = if i < nq {
                Category::Focus
            } else if i >= n - nq {
                Category::Exploration
            } else {
                Category::Unlabeled
            };
            (v, c)
        })
        .collect())
}

/// Error sum and window count at one prediction step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepStat {
    pub sum: f64,
    pub n: usize,
}

impl StepStat {
    pub fn mean(&self) -> f64 {
        self.sum / self.n as f64
    }
}

/// How per-video means are pooled into one curve.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pooling {
    /// Every video weighs the same.
    Macro,
    /// Every window weighs the same.
    Micro,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub dt: f64,
    pub horizon: usize,
    pub predictors: Vec<String>,
    pub categories: CategoryLabels,
    /// `predictor -> video -> per-step stats`.
    pub cells: BTreeMap<String, BTreeMap<String, Vec<StepStat>>>,
}

impl EvalReport {
    pub fn empty(dt: f64, horizon: usize) -> Self {
        Self {
            dt,
            horizon,
            predictors: Vec::new(),
            categories: BTreeMap::new(),
            cells: BTreeMap::new(),
        }
    }

    pub fn steps_seconds(&self) -> Vec<f64> {
        (1..=self.horizon).map(|k| k as f64 * self.dt).collect()
    }

    pub fn videos(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.cells.values().flat_map(|m| m.keys().map(String::as_str)).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn category(&self, video: &str) -> Category {
        self.categories.get(video).copied().unwrap_or_default()
    }

    pub fn video_curve(&self, predictor: &str, video: &str) -> Option<Vec<f64>> {
        self.cells.get(predictor)?.get(video).map(|s| s.iter().map(StepStat::mean).collect())
    }

    /// Curve over the videos accepted by `filter`; `None` if none match.
    pub fn curve_where(&self, predictor: &str, pooling: Pooling, filter: impl Fn(&str) -> bool) -> Option<Vec<f64>> {
        let videos = self.cells.get(predictor)?;
        let picked: Vec<&Vec<StepStat>> = videos.iter().filter(|(v, _)| filter(v)).map(|(_, s)| s).collect();
        if picked.is_empty() {
            return None;
        }
        Some(
            (0..self.horizon)
                .map(|k| match pooling {
                    Pooling::Macro => picked.iter().map(|s| s[k].mean()).sum::<f64>() / picked.len() as f64,
                    Pooling::Micro => {
                        let sum: f64 = picked.iter().map(|s| s[k].sum).sum();
                        let n: usize = picked.iter().map(|s| s[k].n).sum();
                        sum / n as f64
                    }
                })
                .collect(),
        )
    }

    pub fn curve(&self, predictor: &str, pooling: Pooling) -> Option<Vec<f64>> {
        self.curve_where(predictor, pooling, |_| true)
    }

    pub fn category_curve(&self, predictor: &str, category: Category, pooling: Pooling) -> Option<Vec<f64>> {
        self.curve_where(predictor, pooling, |v| self.category(v) == category)
    }

    /// Report over the videos of both, which must not overlap per predictor.
    pub fn merge(mut self, other: EvalReport) -> Result<EvalReport> {
        if self.horizon != other.horizon || (self.dt - other.dt).abs() > 1e-12 {
            return Err(Error::InvalidArgument("reports differ in dt or horizon".into()));
        }
        for p in other.predictors {
            if !self.predictors.contains(&p) {
                self.predictors.push(p);
            }
        }
        for (p, videos) in other.cells {
            let mine = self.cells.entry(p.clone()).or_default();
            for (v, stats) in videos {
                if mine.insert(v.clone(), stats).is_some() {
                    return Err(Error::InvalidArgument(format!("video `{v}` appears twice for `{p}`")));
                }
            }
        }
        self.categories.extend(other.categories);
        Ok(self)
    }

    pub fn window_count(&self, predictor: &str) -> usize {
        self.cells
            .get(predictor)
            .map(|m| m.values().map(|s| s.first().map_or(0, |x| x.n)).sum())
            .unwrap_or(0)
    }
}

/// Orthodromic error of every predictor at every step of every window of
/// `subset`. All predictors see the same windows, predicted in fixed-size
/// chunks so that the result does not depend on the thread count.
pub fn evaluate(
    predictors: &[&dyn Predictor],
    dataset: &Dataset,
    spec: WindowSpec,
    subset: Option<Subset>,
    categories: &CategoryLabels,
) -> Result<EvalReport> {
    spec.validate()?;
    let ws: Vec<Window<'_>> = windows(dataset, spec, subset).collect();
    let mut report = EvalReport::empty(spec.dt, spec.horizon);
    report.categories = categories.clone();
    if ws.is_empty() {
        return Err(Error::Empty("no evaluation windows".into()));
    }
    for p in predictors {
        let name = p.name();
        if report.cells.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("predictor `{name}` listed twice")));
        }
        let chunks: Vec<Vec<Vec<f64>>> = ws
            .par_chunks(PREDICT_CHUNK)
            .map(|chunk| {
                let preds = p.predict(chunk)?;
                if preds.len() != chunk.len() {
                    return Err(Error::Shape(format!("`{name}` returned {} predictions for {} windows", preds.len(), chunk.len())));
                }
                chunk
                    .iter()
                    .zip(&preds)
                    .map(|(w, pr)| {
                        if pr.len() != w.future.len() {
                            return Err(Error::Shape(format!("`{name}` predicted {} steps, expected {}", pr.len(), w.future.len())));
                        }
                        Ok(pr.iter().zip(w.future).map(|(a, b)| orthodromic_distance(a, b)).collect())
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        let mut per_video: BTreeMap<String, Vec<StepStat>> = BTreeMap::new();
        for (w, errs) in ws.iter().zip(chunks.into_iter().flatten()) {
            let stats = per_video
                .entry(w.video_id.to_string())
                .or_insert_with(|| vec![StepStat::default(); spec.horizon]);
            for (s, e) in stats.iter_mut().zip(errs) {
                s.sum += e;
                s.n += 1;
            }
        }
        report.predictors.push(name.clone());
        report.cells.insert(name, per_video);
    }
    Ok(report)
}

fn write_preamble(f: &mut impl Write, preamble: &[String]) -> Result<()> {
    for line in preamble {
        writeln!(f, "# {line}")?;
    }
    Ok(())
}

/// Writes `errors_by_step.csv`, `curves.csv` and `summary.txt` into `out_dir`.
pub fn write_report(report: &EvalReport, out_dir: impl AsRef<Path>, preamble: &[String]) -> Result<()> {
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let steps = report.steps_seconds();

    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("errors_by_step.csv"))?);
    write_preamble(&mut f, preamble)?;
    writeln!(f, "predictor,video,category,s,mean_error,n")?;
    for p in &report.predictors {
        for (video, stats) in &report.cells[p] {
            for (s, st) in steps.iter().zip(stats) {
                writeln!(f, "{p},{video},{},{s:.1},{:.9},{}", report.category(video), st.mean(), st.n)?;
            }
        }
    }
    f.flush()?;

    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("curves.csv"))?);
    write_preamble(&mut f, preamble)?;
    writeln!(f, "predictor,aggregate,s,mean_error")?;
    for p in &report.predictors {
        let mut rows: Vec<(String, Vec<f64>)> = Vec::new();
        for (label, pooling) in [("macro", Pooling::Macro), ("micro", Pooling::Micro)] {
            rows.extend(report.curve(p, pooling).map(|c| (label.to_string(), c)));
        }
        for cat in [Category::Focus, Category::Exploration] {
            rows.extend(report.category_curve(p, cat, Pooling::Macro).map(|c| (cat.to_string(), c)));
        }
        for (label, curve) in rows {
            for (s, e) in steps.iter().zip(curve) {
                writeln!(f, "{p},{label},{s:.1},{e:.9}")?;
            }
        }
    }
    f.flush()?;

    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("summary.txt"))?);
    write_preamble(&mut f, preamble)?;
    let columns: Vec<usize> = (1..=report.horizon)
        .filter(|k| {
            let s = *k as f64 * report.dt;
            *k == 1 || (s - s.round()).abs() < 1e-9
        })
        .collect();
    write!(f, "{:<20} {:>8}", "predictor (macro)", "windows")?;
    for k in &columns {
        write!(f, " {:>8}", format!("s={:.1}", *k as f64 * report.dt))?;
    }
    writeln!(f)?;
    for p in &report.predictors {
        write!(f, "{p:<20} {:>8}", report.window_count(p))?;
        let curve = report.curve(p, Pooling::Macro).unwrap_or_default();
        for k in &columns {
            write!(f, " {:>8.4}", curve.get(k - 1).copied().unwrap_or(f64::NAN))?;
        }
        writeln!(f)?;
    }
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::TrivialStatic;
    use crate::dataset::Trace;
    use crate::saliency::{Grid, SaliencyMap};
    use crate::sphere::UnitVec3;
    use proptest::prelude::*;

    struct Fixed(&'static str, Vec<UnitVec3>);

    impl Predictor for Fixed {
        fn name(&self) -> String {
            self.0.into()
        }

        fn predict(&self, windows: &[Window<'_>]) -> Result<Vec<Vec<UnitVec3>>> {
            Ok(windows.iter().map(|w| self.1[..w.future.len()].to_vec()).collect())
        }
    }

    fn frozen(n_videos: usize) -> Dataset {
        let traces = (0..n_videos)
            .flat_map(|v| {
                (0..3).map(move |u| Trace::new(format!("v{v}"), format!("u{u}"), 0.2, vec![UnitVec3::Y; 70]).unwrap())
            })
            .collect();
        Dataset::from_traces(traces).unwrap()
    }

    #[test]
    fn static_on_frozen_users_is_zero() {
        let ds = frozen(2);
        let r = evaluate(&[&TrivialStatic], &ds, WindowSpec::default(), None, &BTreeMap::new()).unwrap();
        assert!(r.curve("static", Pooling::Micro).unwrap().iter().all(|e| *e == 0.0));
        assert_eq!(r.window_count("static"), 2 * 3 * (70 - 30 - 25));
    }

    #[test]
    fn identical_predictors_give_identical_rows_and_count() {
        let ds = frozen(3);
        let a = Fixed("a", vec![UnitVec3::X; 25]);
        let b = Fixed("b", vec![UnitVec3::X; 25]);
        let r = evaluate(&[&a, &b], &ds, WindowSpec::default(), None, &BTreeMap::new()).unwrap();
        assert_eq!(r.cells["a"], r.cells["b"]);
        let dir = tempfile::tempdir().unwrap();
        write_report(&r, dir.path(), &["seed=1".into()]).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("errors_by_step.csv")).unwrap();
        assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 1 + 2 * 3 * 25);
        let first = std::fs::read(dir.path().join("curves.csv")).unwrap();
        write_report(&r, dir.path(), &["seed=1".into()]).unwrap();
        assert_eq!(std::fs::read(dir.path().join("curves.csv")).unwrap(), first);
        assert!(evaluate(&[&a, &a], &ds, WindowSpec::default(), None, &BTreeMap::new()).is_err());
    }

    #[test]
    fn merged_reports_cover_both_video_sets() {
        let a = Fixed("a", vec![UnitVec3::X; 25]);
        let one = evaluate(&[&a], &frozen(1), WindowSpec::default(), None, &BTreeMap::new()).unwrap();
        let shifted: Vec<Trace> = frozen(1)
            .traces()
            .iter()
            .map(|t| Trace::new("w", t.user_id(), 0.2, t.samples().to_vec()).unwrap())
            .collect();
        let two = evaluate(&[&a], &Dataset::from_traces(shifted).unwrap(), WindowSpec::default(), None, &BTreeMap::new()).unwrap();
        let m = one.clone().merge(two).unwrap();
        assert_eq!(m.videos(), vec!["v0", "w"]);
        assert_eq!(m.window_count("a"), 2 * one.window_count("a"));
        assert!(m.clone().merge(one).is_err());
    }

    #[test]
    fn empty_report_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        write_report(&EvalReport::empty(0.2, 25), dir.path(), &[]).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("errors_by_step.csv")).unwrap();
        assert_eq!(csv, "predictor,video,category,s,mean_error,n\n");
    }

    fn flat_seq(id: &str, value_at: Option<usize>) -> SaliencySequence {
        let g = Grid::new(8, 16);
        let map = match value_at {
            Some(i) => {
                let mut v = vec![0.0; g.cells()];
                v[i] = 1.0;
                SaliencyMap::new(g, v).unwrap()
            }
            None => SaliencyMap::new(g, vec![1.0; g.cells()]).unwrap(),
        };
        SaliencySequence::new(id, 0.2, vec![map; 40]).unwrap()
    }

    #[test]
    fn categories_by_entropy() {
        let two = [flat_seq("walk", None), flat_seq("roi", Some(40))];
        let c = categorize_by_entropy(&two, 0.5, 6.0).unwrap();
        assert_eq!(c["roi"], Category::Focus);
        assert_eq!(c["walk"], Category::Exploration);
        let tie = [flat_seq("b", None), flat_seq("a", None)];
        let c = categorize_by_entropy(&tie, 0.5, 6.0).unwrap();
        assert_eq!((c["a"], c["b"]), (Category::Focus, Category::Exploration));
        let c = categorize_by_entropy(&tie, 0.1, 6.0).unwrap();
        assert!(c.values().all(|c| *c == Category::Unlabeled));
    }

    proptest! {
        #[test]
        fn report_is_order_invariant_and_lipschitz(eps in 0.0f64..0.05, seed in 0u64..1000) {
            use rand::{seq::SliceRandom, SeedableRng};
            let ds = frozen(2);
            let spec = WindowSpec::default();
            let a = Fixed("a", vec![UnitVec3::X; 25]);
            let r = evaluate(&[&a], &ds, spec, None, &BTreeMap::new()).unwrap();
            // Permuting traces only reorders windows.
            let mut traces = ds.traces().to_vec();
            traces.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let r2 = evaluate(&[&a], &Dataset::from_traces(traces).unwrap(), spec, None, &BTreeMap::new()).unwrap();
            let (c1, c2) = (r.curve("a", Pooling::Micro).unwrap(), r2.curve("a", Pooling::Micro).unwrap());
            for (x, y) in c1.iter().zip(&c2) {
                prop_assert!((x - y).abs() < 1e-9);
            }
            // Moving the truth by `eps` moves each error by at most `eps`.
            let moved: Vec<_> = ds
                .traces()
                .iter()
                .map(|t| {
                    let s = t.samples().iter().map(|p| p.advance([0.0, 0.0, 1.0], eps)).collect();
                    Trace::new(t.video_id(), t.user_id(), 0.2, s).unwrap()
                })
                .collect();
            let r3 = evaluate(&[&a], &Dataset::from_traces(moved).unwrap(), spec, None, &BTreeMap::new()).unwrap();
            for (x, y) in c1.iter().zip(&r3.curve("a", Pooling::Micro).unwrap()) {
                prop_assert!((x - y).abs() <= eps + 1e-9);
            }
        }
    }
}
