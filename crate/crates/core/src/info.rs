//! Histogram estimators of mutual information between present and future
//! positions, and of transfer entropy from saliency to position.

use std::collections::HashMap;
use std::hash::Hash;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::dataset::{Dataset, Trace};
use crate::error::{Error, Result};
use crate::saliency::SaliencySequence;
use crate::sphere::UnitVec3;

pub const DEFAULT_POSITION_BINS: usize = 128;
pub const DEFAULT_SALIENCY_BINS: usize = 256;

/// Equal-area partition of the sphere into latitude rings, each ring split
/// into equal longitude sectors. All cells have solid angle `4π / n_bins`.
#[derive(Clone, Debug, PartialEq)]
pub struct SphericalBinner {
    n_bins: usize,
    /// Ring boundaries in `z = sin(latitude)`, ascending from -1 to 1.
    z_edges: Vec<f64>,
    cells_per_ring: Vec<usize>,
    ring_offset: Vec<usize>,
}

impl SphericalBinner {
    pub fn new(n_bins: usize) -> Result<Self> {
        if n_bins == 0 {
            return Err(Error::InvalidArgument("binner needs at least one bin".into()));
        }
        let rings = ((std::f64::consts::PI * n_bins as f64 / 4.0).sqrt().round() as usize).clamp(1, n_bins);
        // Cells per ring proportional to the ring's mid-latitude circumference,
        // rounded by largest remainder so the total is exact.
        let weights: Vec<f64> = (0..rings)
            .map(|r| {
                let lat = -std::f64::consts::FRAC_PI_2 + (r as f64 + 0.5) * std::f64::consts::PI / rings as f64;
                lat.cos()
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let quotas: Vec<f64> = weights.iter().map(|w| w / total * n_bins as f64).collect();
        let mut cells: Vec<usize> = quotas.iter().map(|q| (q.floor() as usize).max(1)).collect();
        let mut assigned: usize = cells.iter().sum();
        let mut order: Vec<usize> = (0..rings).collect();
        order.sort_by(|&a, &b| {
            let ra = quotas[a] - cells[a] as f64;
            let rb = quotas[b] - cells[b] as f64;
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        let mut i = 0;
        while assigned < n_bins {
            cells[order[i % rings]] += 1;
            assigned += 1;
            i += 1;
        }
        while assigned > n_bins {
            let r = (0..rings).filter(|&r| cells[r] > 1).max_by_key(|&r| cells[r]).expect("more rings than bins");
            cells[r] -= 1;
            assigned -= 1;
        }
        let mut z_edges = Vec::with_capacity(rings + 1);
        let mut ring_offset = Vec::with_capacity(rings);
        let mut cum = 0usize;
        z_edges.push(-1.0);
        for &c in &cells {
            ring_offset.push(cum);
            cum += c;
            z_edges.push(-1.0 + 2.0 * cum as f64 / n_bins as f64);
        }
        *z_edges.last_mut().unwrap() = 1.0;
        Ok(Self {
            n_bins,
            z_edges,
            cells_per_ring: cells,
            ring_offset,
        })
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn rings(&self) -> usize {
        self.cells_per_ring.len()
    }

    pub fn bin(&self, v: &UnitVec3) -> usize {
        let z = v.z().clamp(-1.0, 1.0);
        let ring = self.z_edges[1..self.z_edges.len() - 1].partition_point(|e| *e <= z);
        let n = self.cells_per_ring[ring];
        let theta = v.y().atan2(v.x()).rem_euclid(std::f64::consts::TAU);
        let sector = ((theta / std::f64::consts::TAU * n as f64) as usize).min(n - 1);
        self.ring_offset[ring] + sector
    }

    pub fn solid_angle(&self, bin: usize) -> f64 {
        let ring = self.ring_offset.partition_point(|o| *o <= bin) - 1;
        std::f64::consts::TAU * (self.z_edges[ring + 1] - self.z_edges[ring]) / self.cells_per_ring[ring] as f64
    }
}

/// Uniform quantizer of `[0, 1]`. A value on a boundary goes to the lower
/// bin; values outside the range are clamped.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalarBinner {
    pub n_bins: usize,
}

impl ScalarBinner {
    pub fn new(n_bins: usize) -> Result<Self> {
        if n_bins == 0 {
            return Err(Error::InvalidArgument("binner needs at least one bin".into()));
        }
        Ok(Self { n_bins })
    }

    pub fn bin(&self, x: f64) -> usize {
        let b = (x * self.n_bins as f64).ceil() - 1.0;
        if b.is_nan() || b < 0.0 {
            0
        } else {
            (b as usize).min(self.n_bins - 1)
        }
    }
}

/// Plug-in Shannon entropy in bits.
pub fn entropy_of(counts: &[u64]) -> Result<f64> {
    let mut sorted: Vec<u64> = counts.iter().copied().filter(|c| *c > 0).collect();
    sorted.sort_unstable();
    let n: u64 = sorted.iter().sum();
    if n == 0 {
        return Err(Error::Empty("histogram with zero total".into()));
    }
    let nf = n as f64;
    let s: f64 = sorted.iter().map(|&c| c as f64 * (c as f64).log2()).sum();
    Ok((nf.log2() - s / nf).max(0.0))
}

fn entropy_by<K: Eq + Hash>(keys: impl Iterator<Item = K>) -> Result<f64> {
    let mut h: HashMap<K, u64> = HashMap::new();
    for k in keys {
        *h.entry(k).or_default() += 1;
    }
    entropy_of(&h.into_values().collect::<Vec<_>>())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MiEstimate {
    pub h_a: f64,
    pub h_b: f64,
    pub h_ab: f64,
    pub mi: f64,
}

impl MiEstimate {
    /// MI divided by `H(A)`. A constant `A` gives 1 when `B` is constant too
    /// and 0 otherwise.
    pub fn normalized(&self) -> f64 {
        if self.h_a > 0.0 {
            (self.mi / self.h_a).clamp(0.0, 1.0)
        } else if self.h_b > 0.0 {
            0.0
        } else {
            1.0
        }
    }
}

/// Plug-in mutual information of paired discrete samples.
pub fn mutual_information_pairs(pairs: &[(usize, usize)]) -> Result<MiEstimate> {
    if pairs.is_empty() {
        return Err(Error::Empty("no sample pairs".into()));
    }
    let h_a = entropy_by(pairs.iter().map(|p| p.0))?;
    let h_b = entropy_by(pairs.iter().map(|p| p.1))?;
    let h_ab = entropy_by(pairs.iter().copied())?;
    let mi = (h_a + h_b - h_ab).clamp(0.0, h_a.min(h_b));
    Ok(MiEstimate { h_a, h_b, h_ab, mi })
}

/// Plug-in `I(B; V | A)` for triples `(a, b, v)`, clamped at zero.
pub fn transfer_entropy_triples(triples: &[(usize, usize, usize)]) -> Result<f64> {
    if triples.is_empty() {
        return Err(Error::Empty("no sample triples".into()));
    }
    let h_a = entropy_by(triples.iter().map(|t| t.0))?;
    let h_ab = entropy_by(triples.iter().map(|t| (t.0, t.1)))?;
    let h_av = entropy_by(triples.iter().map(|t| (t.0, t.2)))?;
    let h_abv = entropy_by(triples.iter().copied())?;
    Ok(((h_ab - h_a) - (h_abv - h_av)).max(0.0))
}

/// Per-video values and their unweighted mean.
#[derive(Clone, Debug, PartialEq)]
pub struct InfoEstimate {
    pub per_video: Vec<(String, f64)>,
    pub mean: f64,
}

impl InfoEstimate {
    fn from_videos(per_video: Vec<(String, f64)>) -> Result<Self> {
        if per_video.is_empty() {
            return Err(Error::Empty("no videos with valid pairs".into()));
        }
        let mean = per_video.iter().map(|v| v.1).sum::<f64>() / per_video.len() as f64;
        Ok(Self { per_video, mean })
    }
}

fn lag_steps(s: f64, dt: f64) -> Result<usize> {
    if !(s >= 0.0 && s.is_finite()) {
        return Err(Error::InvalidArgument(format!("lag must be >= 0, got {s}")));
    }
    Ok((s / dt).round() as usize)
}

fn first_step(t_start: f64, dt: f64) -> usize {
    ((t_start / dt) - 1e-9).ceil().max(0.0) as usize
}

/// `(t, t + lag)` index pairs of a trace with `t >= first`.
fn lagged(trace: &Trace, first: usize, lag: usize) -> impl Iterator<Item = usize> + '_ {
    let end = trace.len().saturating_sub(lag);
    first..end.max(first)
}

fn by_video<'a>(dataset: &'a Dataset) -> Vec<(&'a str, Vec<&'a Trace>)> {
    dataset.video_ids().map(|v| (v, dataset.traces_of(v).collect())).collect()
}

/// `I(P_t; P_{t+s})` per video, pooling users and all `t >= t_start`.
/// Videos whose traces are too short for the lag are skipped.
pub fn mutual_information(
    dataset: &Dataset,
    s: f64,
    binner: &SphericalBinner,
    normalize: bool,
    t_start: f64,
) -> Result<InfoEstimate> {
    let dt = dataset.dt();
    let lag = lag_steps(s, dt)?;
    let first = first_step(t_start, dt);
    let per_video: Vec<Option<(String, f64)>> = by_video(dataset)
        .into_par_iter()
        .map(|(video, traces)| {
            let pairs: Vec<(usize, usize)> = traces
                .iter()
                .flat_map(|tr| {
                    let smp = tr.samples();
                    lagged(tr, first, lag).map(move |t| (binner.bin(&smp[t]), binner.bin(&smp[t + lag])))
                })
                .collect();
            if pairs.is_empty() {
                return Ok(None);
            }
            let est = mutual_information_pairs(&pairs)?;
            Ok(Some((video.to_string(), if normalize { est.normalized() } else { est.mi })))
        })
        .collect::<Result<_>>()?;
    InfoEstimate::from_videos(per_video.into_iter().flatten().collect())
}

/// How a saliency map at `t + s` becomes the discrete variable `V`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Scalarization {
    /// Map value at the grid cell of `P_{t+s}`, quantized by the scalar binner.
    #[default]
    ValueAtTarget,
    /// Spherical bin of the map's argmax cell.
    ArgmaxCell,
}

/// `TE_{V→P}(s)` per video, pooling users and all `t >= t_start`.
pub fn transfer_entropy(
    dataset: &Dataset,
    saliency: &[SaliencySequence],
    s: f64,
    pos_binner: &SphericalBinner,
    sal_binner: &ScalarBinner,
    mode: Scalarization,
    t_start: f64,
) -> Result<InfoEstimate> {
    let dt = dataset.dt();
    let lag = lag_steps(s, dt)?;
    let first = first_step(t_start, dt);
    let per_video: Vec<Option<(String, f64)>> = by_video(dataset)
        .into_par_iter()
        .map(|(video, traces)| {
            let seq = saliency
                .iter()
                .find(|q| q.video_id == video)
                .ok_or_else(|| Error::MissingSaliency(video.to_string()))?;
            if (seq.dt - dt).abs() > 1e-6 {
                return Err(Error::InvalidArgument(format!(
                    "saliency for `{video}` has dt {}, traces have {dt}",
                    seq.dt
                )));
            }
            let argmax_bins: Vec<usize> = match mode {
                Scalarization::ArgmaxCell => seq
                    .maps()
                    .iter()
                    .map(|m| {
                        let g = m.grid();
                        let i = m.argmax();
                        pos_binner.bin(&g.cell_center(i / g.width, i % g.width))
                    })
                    .collect(),
                Scalarization::ValueAtTarget => Vec::new(),
            };
            let mut triples = Vec::new();
            for tr in &traces {
                let smp = tr.samples();
                for t in lagged(tr, first, lag) {
                    let k = t + lag;
                    let map = seq.frame(k).ok_or_else(|| Error::SaliencyTooShort {
                        video: video.to_string(),
                        have: seq.len(),
                        need: k + 1,
                    })?;
                    let v = match mode {
                        Scalarization::ValueAtTarget => {
                            let (r, c) = map.grid().cell_of(&smp[k]);
                            sal_binner.bin(map.get(r, c) as f64)
                        }
                        Scalarization::ArgmaxCell => argmax_bins[k],
                    };
                    triples.push((pos_binner.bin(&smp[t]), pos_binner.bin(&smp[k]), v));
                }
            }
            if triples.is_empty() {
                return Ok(None);
            }
            Ok(Some((video.to_string(), transfer_entropy_triples(&triples)?)))
        })
        .collect::<Result<_>>()?;
    InfoEstimate::from_videos(per_video.into_iter().flatten().collect())
}

/// One CSV row per `(video, s)`; `column` names the value column. Lines of
/// `preamble` are written first as `#` comments.
pub fn write_info_csv(path: impl AsRef<Path>, column: &str, rows: &[(f64, InfoEstimate)], preamble: &[String]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for line in preamble {
        writeln!(f, "# {line}")?;
    }
    writeln!(f, "video_id,s_seconds,{column}")?;
    for (s, est) in rows {
        for (video, value) in &est.per_video {
            writeln!(f, "{video},{s:.1},{value:.9}")?;
        }
    }
    f.flush()?;
    Ok(())
}
