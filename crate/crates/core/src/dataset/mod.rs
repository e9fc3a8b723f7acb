//! Head-motion traces, ingestion, resampling and (history, future) windows.

mod synth;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::sphere::{ang_to_vec, AngularPosition, UnitVec3};

pub use synth::{synth_generate, SynthConfig, SynthKind, SynthManifest, SynthOutput, SynthParams, VideoManifest};

/// Default sample interval, 0.2 s.
pub const DEFAULT_DT: f64 = 0.2;

/// Accepted norm band for ingested xyz rows before renormalization.
pub const XYZ_NORM_BAND: (f64, f64) = (0.9, 1.1);

/// One user's orientation series for one video, sample `i` at `i · dt`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    video_id: String,
    user_id: String,
    dt: f64,
    samples: Vec<UnitVec3>,
}

impl Trace {
    pub fn new(video_id: impl Into<String>, user_id: impl Into<String>, dt: f64, samples: Vec<UnitVec3>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        if samples.len() < 2 {
            return Err(Error::InvalidArgument("a trace needs at least two samples".into()));
        }
        Ok(Self {
            video_id: video_id.into(),
            user_id: user_id.into(),
            dt,
            samples,
        })
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    pub fn user_id(&self) -> &str {
        &self.user_id
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn samples(&self) -> &[UnitVec3] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        (self.samples.len() - 1) as f64 * self.dt
    }
}

/// Which side of the train/test split a video belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Train,
    Test,
}

/// A collection of traces sharing one sample interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    dt: f64,
    traces: Vec<Trace>,
    video_durations: BTreeMap<String, f64>,
    split: BTreeMap<String, Subset>,
}

impl Dataset {
    /// Builds a dataset, sorting traces by `(video, user)`.
    pub fn new(mut traces: Vec<Trace>, video_durations: BTreeMap<String, f64>) -> Result<Self> {
        let dt = traces
            .first()
            .map(|t| t.dt)
            .ok_or_else(|| Error::Empty("dataset has no traces".into()))?;
        traces.sort_by(|a, b| (&a.video_id, &a.user_id).cmp(&(&b.video_id, &b.user_id)));
        for pair in traces.windows(2) {
            if pair[0].video_id == pair[1].video_id && pair[0].user_id == pair[1].user_id {
                return Err(Error::InvalidArgument(format!(
                    "duplicate trace for video `{}` user `{}`",
                    pair[0].video_id, pair[0].user_id
                )));
            }
        }
        for t in &traces {
            if (t.dt - dt).abs() > 1e-12 {
                return Err(Error::InvalidArgument("all traces must share one dt".into()));
            }
            let duration = video_durations
                .get(&t.video_id)
                .ok_or_else(|| Error::UnknownVideo(t.video_id.clone()))?;
            if t.duration() > duration + 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "trace of user `{}` lasts {} s, longer than video `{}` ({} s)",
                    t.user_id,
                    t.duration(),
                    t.video_id,
                    duration
                )));
            }
        }
        Ok(Self {
            dt,
            traces,
            video_durations,
            split: BTreeMap::new(),
        })
    }

    /// Builds a dataset whose video durations are the longest trace per video.
    pub fn from_traces(traces: Vec<Trace>) -> Result<Self> {
        let mut durations = BTreeMap::new();
        for t in &traces {
            let d = durations.entry(t.video_id.clone()).or_insert(0.0f64);
            *d = d.max(t.duration());
        }
        Self::new(traces, durations)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn traces(&self) -> &[Trace] {
        &self.traces
    }

    pub fn traces_of<'a>(&'a self, video_id: &'a str) -> impl Iterator<Item = &'a Trace> + 'a {
        self.traces.iter().filter(move |t| t.video_id == video_id)
    }

    pub fn video_ids(&self) -> impl Iterator<Item = &str> {
        self.video_durations.keys().map(String::as_str)
    }

    pub fn video_durations(&self) -> &BTreeMap<String, f64> {
        &self.video_durations
    }

    pub fn split(&self) -> &BTreeMap<String, Subset> {
        &self.split
    }

    pub fn subset_of(&self, video_id: &str) -> Option<Subset> {
        self.split.get(video_id).copied()
    }

    pub fn videos_in(&self, subset: Subset) -> impl Iterator<Item = &str> {
        self.split
            .iter()
            .filter(move |(_, s)| **s == subset)
            .map(|(v, _)| v.as_str())
    }

    /// Content hash over dt and every sample, hex encoded.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.dt.to_le_bytes());
        for t in &self.traces {
            h.update(t.video_id.as_bytes());
            h.update([0]);
            h.update(t.user_id.as_bytes());
            h.update([0]);
            for s in &t.samples {
                for c in s.to_array() {
                    h.update(c.to_le_bytes());
                }
            }
        }
        hex::encode(h.finalize())
    }

    /// Keeps only the listed videos (traces, durations and split entries).
    pub fn restrict_to(&self, videos: &[&str]) -> Result<Dataset> {
        for v in videos {
            if !self.video_durations.contains_key(*v) {
                return Err(Error::UnknownVideo(v.to_string()));
            }
        }
        let keep = |v: &str| videos.contains(&v);
        Ok(Dataset {
            dt: self.dt,
            traces: self.traces.iter().filter(|t| keep(&t.video_id)).cloned().collect(),
            video_durations: self
                .video_durations
                .iter()
                .filter(|(v, _)| keep(v))
                .map(|(k, v)| (k.clone(), *v))
                .collect(),
            split: self
                .split
                .iter()
                .filter(|(v, _)| keep(v))
                .map(|(k, v)| (k.clone(), *v))
                .collect(),
        })
    }

    /// Concatenates two datasets with disjoint videos and equal dt.
    pub fn merge(mut self, other: Dataset) -> Result<Dataset> {
        if (self.dt - other.dt).abs() > 1e-12 {
            return Err(Error::InvalidArgument("cannot merge datasets with different dt".into()));
        }
        for v in other.video_durations.keys() {
            if self.video_durations.contains_key(v) {
                return Err(Error::InvalidArgument(format!("video `{v}` present in both datasets")));
            }
        }
        self.video_durations.extend(other.video_durations);
        self.split.extend(other.split);
        self.traces.extend(other.traces);
        self.traces
            .sort_by(|a, b| (&a.video_id, &a.user_id).cmp(&(&b.video_id, &b.user_id)));
        Ok(self)
    }
}

/// Marks `test_video_ids` as test and every other video as train.
pub fn split_train_test(dataset: &Dataset, test_video_ids: &[&str]) -> Result<Dataset> {
    if test_video_ids.is_empty() {
        return Err(Error::InvalidArgument("test split must name at least one video".into()));
    }
    for v in test_video_ids {
        if !dataset.video_durations.contains_key(*v) {
            return Err(Error::UnknownVideo(v.to_string()));
        }
    }
    let mut out = dataset.clone();
    out.split = dataset
        .video_durations
        .keys()
        .map(|v| {
            let subset = if test_video_ids.contains(&v.as_str()) { Subset::Test } else { Subset::Train };
            (v.clone(), subset)
        })
        .collect();
    Ok(out)
}

/// Input CSV layouts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceFormat {
    /// `video_id,user_id,timestamp_s,theta_rad,phi_rad`
    CsvAngles,
    /// `video_id,user_id,timestamp_s,x,y,z`
    CsvXyz,
}

impl TraceFormat {
    pub fn header(&self) -> &'static [&'static str] {
        match self {
            TraceFormat::CsvAngles => &["video_id", "user_id", "timestamp_s", "theta_rad", "phi_rad"],
            TraceFormat::CsvXyz => &["video_id", "user_id", "timestamp_s", "x", "y", "z"],
        }
    }
}

impl std::str::FromStr for TraceFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv_angles" => Ok(TraceFormat::CsvAngles),
            "csv_xyz" => Ok(TraceFormat::CsvXyz),
            other => Err(Error::InvalidArgument(format!("unknown trace format `{other}`"))),
        }
    }
}

/// Reads a trace CSV and resamples every `(video, user)` series onto a
/// uniform `dt` grid. Lines starting with `#` are skipped; reported row
/// numbers are file line numbers.
pub fn load_traces(path: impl AsRef<Path>, format: TraceFormat, dt: f64) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let expected = format.header();
    if header.len() != expected.len() || header.iter().zip(expected).any(|(a, b)| a != b) {
        return Err(Error::MalformedRow {
            path: path.to_path_buf(),
            row: reader.position().line().max(1) as usize - 1,
            reason: format!("expected header `{}`", expected.join(",")),
        });
    }
    let mut groups: BTreeMap<(String, String), Vec<(f64, UnitVec3)>> = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let row = match &record {
            Ok(r) => r.position().map_or(i + 2, |p| p.line() as usize),
            Err(e) => e.position().map_or(i + 2, |p| p.line() as usize),
        };
        let malformed = |reason: String| Error::MalformedRow {
            path: path.to_path_buf(),
            row,
            reason,
        };
        let record = record.map_err(|e| malformed(e.to_string()))?;
        if record.len() != expected.len() {
            return Err(malformed(format!("expected {} fields, found {}", expected.len(), record.len())));
        }
        let num = |j: usize| -> Result<f64> {
            let field = record[j].trim();
            field
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| malformed(format!("field `{}` is not a finite number: `{field}`", expected[j])))
        };
        let time = num(2)?;
        let position = match format {
            TraceFormat::CsvAngles => {
                let p = AngularPosition::new(num(3)?, num(4)?).map_err(|e| malformed(e.to_string()))?;
                ang_to_vec(p)
            }
            TraceFormat::CsvXyz => {
                let (x, y, z) = (num(3)?, num(4)?, num(5)?);
                let norm = (x * x + y * y + z * z).sqrt();
                if !(XYZ_NORM_BAND.0..=XYZ_NORM_BAND.1).contains(&norm) {
                    return Err(malformed(format!("position norm {norm:.4} outside [0.9, 1.1]")));
                }
                UnitVec3::normalize_or([x, y, z], UnitVec3::X)
            }
        };
        let key = (record[0].trim().to_string(), record[1].trim().to_string());
        let series = groups.entry(key).or_default();
        if let Some((last, _)) = series.last() {
            if time <= *last {
                return Err(Error::NonMonotoneTime {
                    path: path.to_path_buf(),
                    row,
                });
            }
        }
        series.push((time, position));
    }
    let traces = groups
        .into_iter()
        .map(|((video, user), raw)| {
            let mut trace = resample(&raw, dt)?;
            trace.video_id = video;
            trace.user_id = user;
            Ok(trace)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::from_traces(traces)
}

/// Writes traces as `csv_xyz`, after `preamble` as `#` comment lines.
pub fn save_traces_xyz(path: impl AsRef<Path>, dataset: &Dataset, preamble: &[String]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for line in preamble {
        writeln!(file, "# {line}")?;
    }
    let mut w = csv::Writer::from_writer(file);
    w.write_record(TraceFormat::CsvXyz.header())?;
    for t in dataset.traces() {
        for (i, s) in t.samples().iter().enumerate() {
            let time = i as f64 * t.dt;
            w.write_record([
                t.video_id.clone(),
                t.user_id.clone(),
                format!("{time:.6}"),
                format!("{:?}", s.x()),
                format!("{:?}", s.y()),
                format!("{:?}", s.z()),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Resamples irregular `(time, position)` samples at `k · dt` by spherical
/// interpolation between the bracketing samples. Times before the first
/// sample take the first position.
///
/// The returned trace has empty video and user ids.
pub fn resample(raw: &[(f64, UnitVec3)], dt: f64) -> Result<Trace> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    if raw.len() < 2 {
        return Err(Error::InvalidArgument("resampling needs at least two samples".into()));
    }
    let (t0, t_last) = (raw[0].0, raw[raw.len() - 1].0);
    let span = t_last - t0;
    if span < dt {
        return Err(Error::SpanTooShort { span, dt });
    }
    let n = (t_last / dt + 1e-9).floor() as usize + 1;
    let mut samples = Vec::with_capacity(n);
    let mut j = 0;
    for k in 0..n {
        let t = k as f64 * dt;
        if t <= t0 {
            samples.push(raw[0].1);
            continue;
        }
        while j + 1 < raw.len() && raw[j + 1].0 < t {
            j += 1;
        }
        if j + 1 >= raw.len() {
            samples.push(raw[raw.len() - 1].1);
            continue;
        }
        let (ta, a) = raw[j];
        let (tb, b) = raw[j + 1];
        let u = ((t - ta) / (tb - ta)).clamp(0.0, 1.0);
        // Exact hits keep the original sample bit-for-bit.
        let p = if u == 0.0 || (t - ta).abs() < 1e-9 * dt {
            a
        } else if u == 1.0 || (t - tb).abs() < 1e-9 * dt {
            b
        } else {
            a.slerp(&b, u)
        };
        samples.push(p);
    }
    Trace::new("", "", dt, samples)
}

/// History length, horizon and evaluation start of a prediction window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    /// History length in samples.
    pub history: usize,
    /// Horizon in samples.
    pub horizon: usize,
    /// Seconds of each trace skipped before the first prediction.
    pub t_start: f64,
    pub dt: f64,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            history: 5,
            horizon: 25,
            t_start: 6.0,
            dt: DEFAULT_DT,
        }
    }
}

impl WindowSpec {
    pub fn validate(&self) -> Result<()> {
        if self.history == 0 || self.horizon == 0 {
            return Err(Error::InvalidArgument("history and horizon must be at least one step".into()));
        }
        if !(self.t_start >= 0.0) || !(self.dt > 0.0) {
            return Err(Error::InvalidArgument("t_start must be >= 0 and dt > 0".into()));
        }
        Ok(())
    }

    /// First admissible index of the last history sample.
    pub fn first_index(&self) -> usize {
        let start = (self.t_start / self.dt - 1e-9).ceil().max(0.0) as usize;
        start.max(self.history)
    }
}

/// A contiguous `(history, future)` slice of one trace.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Window<'a> {
    pub video_id: &'a str,
    pub user_id: &'a str,
    /// Index of the last history sample in the source trace.
    pub t_index: usize,
    pub history: &'a [UnitVec3],
    pub future: &'a [UnitVec3],
}

impl Window<'_> {
    pub fn last_position(&self) -> UnitVec3 {
        self.history[self.history.len() - 1]
    }
}

/// Every window of every trace in `subset` (all traces when `None`), in
/// `(video, user, t)` order.
pub fn windows<'a>(dataset: &'a Dataset, spec: WindowSpec, subset: Option<Subset>) -> impl Iterator<Item = Window<'a>> + 'a {
    let first = spec.first_index();
    dataset
        .traces
        .iter()
        .filter(move |t| subset.is_none() || dataset.split.get(&t.video_id).copied() == subset)
        .flat_map(move |trace| {
            let last = trace.len().checked_sub(spec.horizon + 1);
            let range = match last {
                Some(last) if last >= first => first..last + 1,
                _ => 0..0,
            };
            range.map(move |t| Window {
                video_id: &trace.video_id,
                user_id: &trace.user_id,
                t_index: t,
                history: &trace.samples[t + 1 - spec.history..=t],
                future: &trace.samples[t + 1..=t + spec.horizon],
            })
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere::orthodromic_distance;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::io::Write;

    fn straight_trace(n: usize, speed: f64) -> Trace {
        let samples = (0..n)
            .map(|i| UnitVec3::X.advance([0.0, 1.0, 0.0], speed * i as f64 * 0.2))
            .collect();
        Trace::new("v", "u", 0.2, samples).unwrap()
    }

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn window_count_by_enumeration() {
        let ds = Dataset::from_traces(vec![straight_trace(100, 0.1)]).unwrap();
        let spec = WindowSpec {
            history: 5,
            horizon: 25,
            t_start: 0.0,
            dt: 0.2,
        };
        let brute = (0..100usize)
            .filter(|&t| t as f64 * 0.2 >= 5.0 * 0.2 - 1e-12 && t + 25 < 100)
            .count();
        assert_eq!(brute, 70);
        assert_eq!(windows(&ds, spec, None).count(), brute);
    }

    #[test]
    fn t_start_offsets_first_window() {
        let ds = Dataset::from_traces(vec![straight_trace(100, 0.1)]).unwrap();
        let spec = WindowSpec {
            t_start: 6.0,
            ..WindowSpec::default()
        };
        assert_eq!(windows(&ds, spec, None).next().unwrap().t_index, 30);
        let long = WindowSpec {
            horizon: 200,
            ..spec
        };
        assert_eq!(windows(&ds, long, None).count(), 0);
    }

    #[test]
    fn windows_are_contiguous_slices() {
        let trace = straight_trace(60, 0.3);
        let ds = Dataset::from_traces(vec![trace.clone()]).unwrap();
        for w in windows(&ds, WindowSpec::default(), None) {
            let joined: Vec<_> = w.history.iter().chain(w.future).copied().collect();
            let start = w.t_index + 1 - w.history.len();
            assert_eq!(&joined[..], &trace.samples()[start..start + joined.len()]);
        }
    }

    #[test]
    fn resample_on_grid_is_identity_and_idempotent() {
        let t = straight_trace(20, 0.5);
        let raw: Vec<_> = t.samples().iter().enumerate().map(|(i, s)| (i as f64 * 0.2, *s)).collect();
        let once = resample(&raw, 0.2).unwrap();
        assert_eq!(once.samples(), t.samples());
        let raw2: Vec<_> = once.samples().iter().enumerate().map(|(i, s)| (i as f64 * 0.2, *s)).collect();
        assert_eq!(resample(&raw2, 0.2).unwrap().samples(), once.samples());
    }

    #[test]
    fn resample_midpoint_on_great_circle() {
        let a = UnitVec3::X;
        let b = UnitVec3::new(0.0, 0.6, 0.8).unwrap();
        let raw = [(0.0, a), (0.4, b)];
        let tr = resample(&raw, 0.2).unwrap();
        assert_eq!(tr.len(), 3);
        let mid = tr.samples()[1];
        assert_abs_diff_eq!(orthodromic_distance(&a, &mid), orthodromic_distance(&mid, &b), epsilon = 1e-12);
        let constant = resample(&[(0.0, a), (1.0, a)], 0.2).unwrap();
        assert!(constant.samples().iter().all(|s| *s == a));
        assert!(matches!(resample(&[(0.0, a), (0.1, b)], 0.2), Err(Error::SpanTooShort { .. })));
    }

    #[test]
    fn load_angles_and_xyz() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "a.csv",
            "video_id,user_id,timestamp_s,theta_rad,phi_rad\nv,u,0.0,0.0,0.0\nv,u,0.2,0.1,0.0\nv,u,0.4,0.2,0.1\n",
        );
        let ds = load_traces(&p, TraceFormat::CsvAngles, 0.2).unwrap();
        assert_eq!(ds.traces().len(), 1);
        assert_eq!(ds.traces()[0].len(), 3);

        let p = write(&dir, "b.csv", "video_id,user_id,timestamp_s,x,y,z\nv,u,0.0,1.01,0,0\nv,u,0.2,0,1,0\n");
        let ds = load_traces(&p, TraceFormat::CsvXyz, 0.2).unwrap();
        assert_abs_diff_eq!(ds.traces()[0].samples()[0].x(), 1.0);

        let p = write(&dir, "c.csv", "video_id,user_id,timestamp_s,x,y,z\nv,u,0.0,0.2,0,0\nv,u,0.2,0,1,0\n");
        assert!(matches!(
            load_traces(&p, TraceFormat::CsvXyz, 0.2),
            Err(Error::MalformedRow { row: 2, .. })
        ));
        let p = write(&dir, "d.csv", "video_id,user_id,timestamp_s,x,y,z\nv,u,0.4,1,0,0\nv,u,0.2,0,1,0\n");
        assert!(matches!(
            load_traces(&p, TraceFormat::CsvXyz, 0.2),
            Err(Error::NonMonotoneTime { row: 3, .. })
        ));
        let p = write(&dir, "e.csv", "video_id,user_id,timestamp_s,x,y,z\nv,u,zero,1,0,0\n");
        assert!(matches!(
            load_traces(&p, TraceFormat::CsvXyz, 0.2),
            Err(Error::MalformedRow { row: 2, .. })
        ));
    }

    #[test]
    fn commented_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::from_traces(vec![straight_trace(12, 0.1)]).unwrap();
        let p = dir.path().join("t.csv");
        save_traces_xyz(&p, &ds, &["seed=3".into()]).unwrap();
        assert!(std::fs::read_to_string(&p).unwrap().starts_with("# seed=3\n"));
        assert_eq!(load_traces(&p, TraceFormat::CsvXyz, 0.2).unwrap().traces(), ds.traces());
        let p = write(&dir, "f.csv", "# note\nvideo_id,user_id,timestamp_s,x,y,z\nv,u,0.0,1,0,0\nv,u,0.2,9,0,0\n");
        assert!(matches!(
            load_traces(&p, TraceFormat::CsvXyz, 0.2),
            Err(Error::MalformedRow { row: 4, .. })
        ));
    }

    #[test]
    fn split_policies() {
        let traces = (0..14)
            .map(|i| {
                let mut t = straight_trace(10, 0.1);
                t.video_id = format!("v{i:02}");
                t
            })
            .collect();
        let ds = Dataset::from_traces(traces).unwrap();
        let test = ["v00", "v03", "v07", "v11"];
        let s = split_train_test(&ds, &test).unwrap();
        assert_eq!(s.videos_in(Subset::Train).count(), 10);
        assert_eq!(s.videos_in(Subset::Test).count(), 4);
        assert_eq!(split_train_test(&s, &test).unwrap(), s);
        assert!(split_train_test(&ds, &[]).is_err());
        assert!(matches!(split_train_test(&ds, &["nope"]), Err(Error::UnknownVideo(_))));
    }

    proptest! {
        #[test]
        fn resample_idempotent_on_irregular_input(
            steps in proptest::collection::vec((0.05f64..0.5, -0.3f64..0.3, -0.3f64..0.3), 3..20)
        ) {
            let mut t = 0.0;
            let mut p = UnitVec3::X;
            let mut raw = vec![(0.0, p)];
            for (dt, a, b) in steps {
                t += dt;
                p = p.advance([0.0, a, b], (a * a + b * b).sqrt());
                raw.push((t, p));
            }
            prop_assume!(t >= 0.2);
            let once = resample(&raw, 0.2).unwrap();
            let grid: Vec<_> = once.samples().iter().enumerate().map(|(i, s)| (i as f64 * 0.2, *s)).collect();
            let twice = resample(&grid, 0.2).unwrap();
            for (a, b) in once.samples().iter().zip(twice.samples()) {
                prop_assert!(orthodromic_distance(a, b) < 1e-9);
            }
        }
    }
}
