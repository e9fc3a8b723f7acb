//! Synthetic head-motion generator.
//!
//! Each user is a damped point on the sphere: tangent velocity with
//! Ornstein-Uhlenbeck noise, an optional spring toward a target and, for
//! free exploration, a weak pull back toward the equator. Every video also
//! carries a content stream of RBF bumps at its regions of interest.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, Trace, DEFAULT_DT};
use crate::error::{Error, Result};
use crate::saliency::{Grid, GridGeometry, SaliencyMap, SaliencySequence, DEFAULT_SIGMA};
use crate::sphere::{ang_to_vec, norm3, reject, AngularPosition, UnitVec3};

const DEG: f64 = PI / 180.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    Exploration,
    StaticFocus,
    MovingFocus,
    Ride,
}

impl SynthKind {
    pub const ALL: [SynthKind; 4] = [
        SynthKind::Exploration,
        SynthKind::StaticFocus,
        SynthKind::MovingFocus,
        SynthKind::Ride,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SynthKind::Exploration => "exploration",
            SynthKind::StaticFocus => "static_focus",
            SynthKind::MovingFocus => "moving_focus",
            SynthKind::Ride => "ride",
        }
    }

    fn index(&self) -> u64 {
        *self as u64
    }
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SynthKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown synthetic kind `{s}`")))
    }
}

/// Motion constants. Angles in radians, rates in 1/s.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    /// Integration substeps per sample.
    pub substeps: usize,
    /// Speed cap, rad/s.
    pub max_speed: f64,
    /// Stationary velocity std of exploration users, rad/s per axis.
    pub explore_sigma_v: f64,
    /// Velocity correlation time of exploration users, s.
    pub explore_tau: f64,
    /// Pull toward the equator for exploration users, 1/s².
    pub lat_stiffness: f64,
    /// Velocity jitter std for attracted users, rad/s per axis.
    pub jitter_sigma_v: f64,
    pub jitter_tau: f64,
    /// Natural frequency of the spring toward a static RoI, rad/s.
    pub focus_omega: f64,
    /// Natural frequency when tracking a moving RoI or ride heading.
    pub track_omega: f64,
    /// Poisson rate of glances away from the RoI, Hz.
    pub glance_rate_hz: f64,
    pub glance_duration_s: (f64, f64),
    pub glance_distance: (f64, f64),
    /// Angular speed of a moving RoI, rad/s.
    pub roi_speed: f64,
    /// Maximum inclination of the moving RoI's great circle.
    pub roi_inclination: f64,
    /// Heading drift speed in ride videos, rad/s.
    pub ride_speed: f64,
    /// Std of each rider's fixed offset from the heading.
    pub ride_spread: f64,
    /// Drifting bumps in exploration content.
    pub n_distractors: usize,
    pub distractor_speed: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            substeps: 4,
            max_speed: 2.5,
            explore_sigma_v: 0.6,
            explore_tau: 1.0,
            lat_stiffness: 1.0,
            jitter_sigma_v: 0.04,
            jitter_tau: 0.3,
            focus_omega: 3.0,
            track_omega: 2.0,
            glance_rate_hz: 0.15,
            glance_duration_s: (1.0, 3.0),
            glance_distance: (40.0 * DEG, 100.0 * DEG),
            roi_speed: 12.0 * DEG,
            roi_inclination: 20.0 * DEG,
            ride_speed: 10.0 * DEG,
            ride_spread: 15.0 * DEG,
            n_distractors: 3,
            distractor_speed: 6.0 * DEG,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub kind: SynthKind,
    pub n_videos: usize,
    pub n_users: usize,
    pub duration_s: f64,
    pub seed: u64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Content map grid; `None` skips map generation.
    #[serde(default = "default_grid")]
    pub grid: Option<Grid>,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default)]
    pub params: SynthParams,
}

fn default_dt() -> f64 {
    DEFAULT_DT
}

fn default_grid() -> Option<Grid> {
    Some(Grid::new(64, 64))
}

fn default_sigma() -> f64 {
    DEFAULT_SIGMA
}

impl SynthConfig {
    pub fn new(kind: SynthKind, n_videos: usize, n_users: usize, duration_s: f64, seed: u64) -> Self {
        Self {
            kind,
            n_videos,
            n_users,
            duration_s,
            seed,
            dt: DEFAULT_DT,
            grid: default_grid(),
            sigma: DEFAULT_SIGMA,
            params: SynthParams::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_videos == 0 || self.n_users == 0 {
            return Err(Error::InvalidArgument("need at least one video and one user".into()));
        }
        if !(self.dt > 0.0) || !(self.duration_s >= self.dt) {
            return Err(Error::InvalidArgument("duration must cover at least one dt".into()));
        }
        if self.params.substeps == 0 {
            return Err(Error::InvalidArgument("substeps must be >= 1".into()));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::InvalidArgument("sigma must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoManifest {
    pub video_id: String,
    pub kind: SynthKind,
    pub users: Vec<String>,
    pub duration_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub dt: f64,
    pub seed: u64,
    pub grid: Option<Grid>,
    pub sigma: f64,
    pub params: SynthParams,
    pub videos: Vec<VideoManifest>,
}

impl SynthManifest {
    pub fn kinds(&self) -> BTreeMap<String, SynthKind> {
        self.videos.iter().map(|v| (v.video_id.clone(), v.kind)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthOutput {
    pub dataset: Dataset,
    /// One content sequence per video, in video-id order; empty without a grid.
    pub saliency: Vec<SaliencySequence>,
    pub manifest: SynthManifest,
}

impl SynthOutput {
    /// Combines generators run with different kinds into one corpus.
    pub fn merge(mut self, other: SynthOutput) -> Result<SynthOutput> {
        self.dataset = self.dataset.merge(other.dataset)?;
        self.saliency.extend(other.saliency);
        self.saliency.sort_by(|a, b| a.video_id.cmp(&b.video_id));
        self.manifest.videos.extend(other.manifest.videos);
        self.manifest.videos.sort_by(|a, b| a.video_id.cmp(&b.video_id));
        Ok(self)
    }
}

/// Generates `n_videos` videos of one kind. Deterministic in `cfg`.
pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let n_samples = (cfg.duration_s / cfg.dt + 1e-9).floor() as usize + 1;
    let duration = (n_samples - 1) as f64 * cfg.dt;
    let geometry = cfg.grid.map(GridGeometry::new);
    let mut traces = Vec::with_capacity(cfg.n_videos * cfg.n_users);
    let mut durations = BTreeMap::new();
    let mut saliency = Vec::new();
    let mut videos = Vec::new();
    for v in 0..cfg.n_videos {
        let video_id = format!("{}_{v:03}", cfg.kind);
        let stream = (cfg.kind.index() << 40) | ((v as u64) << 16);
        let mut rng = rng_for(cfg.seed, stream);
        let scene = Scene::sample(cfg, &mut rng);
        let mut users = Vec::with_capacity(cfg.n_users);
        for u in 0..cfg.n_users {
            let user_id = format!("u{u:02}");
            let mut urng = rng_for(cfg.seed, stream | (u as u64 + 1));
            let samples = simulate_user(cfg, &scene, n_samples, &mut urng);
            traces.push(Trace::new(video_id.clone(), user_id.clone(), cfg.dt, samples)?);
            users.push(user_id);
        }
        if let Some(geometry) = &geometry {
            let maps = (0..n_samples)
                .map(|k| content_map(geometry, &scene.bumps(k as f64 * cfg.dt), cfg.sigma))
                .collect::<Result<Vec<_>>>()?;
            saliency.push(SaliencySequence::new(video_id.clone(), cfg.dt, maps)?);
        }
        durations.insert(video_id.clone(), duration);
        videos.push(VideoManifest {
            video_id,
            kind: cfg.kind,
            users,
            duration_s: duration,
        });
    }
    Ok(SynthOutput {
        dataset: Dataset::new(traces, durations)?,
        saliency,
        manifest: SynthManifest {
            dt: cfg.dt,
            seed: cfg.seed,
            grid: cfg.grid,
            sigma: cfg.sigma,
            params: cfg.params.clone(),
            videos,
        },
    })
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Point moving uniformly along a great circle.
#[derive(Clone, Copy, Debug)]
struct Orbit {
    start: UnitVec3,
    /// Unit tangent at `start`.
    direction: [f64; 3],
    speed: f64,
}

impl Orbit {
    fn at(&self, t: f64) -> UnitVec3 {
        self.start.advance(self.direction, self.speed * t)
    }
}

#[derive(Clone, Debug)]
enum Scene {
    Exploration { distractors: Vec<Orbit> },
    StaticFocus { roi: UnitVec3 },
    MovingFocus { roi: Orbit },
    Ride { heading: Orbit },
}

impl Scene {
    fn sample(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Scene {
        let p = &cfg.params;
        match cfg.kind {
            SynthKind::Exploration => Scene::Exploration {
                distractors: (0..p.n_distractors)
                    .map(|_| {
                        let start = random_position(rng, 30.0 * DEG);
                        Orbit {
                            start,
                            direction: random_tangent(rng, &start),
                            speed: p.distractor_speed,
                        }
                    })
                    .collect(),
            },
            SynthKind::StaticFocus => Scene::StaticFocus {
                roi: random_position(rng, 15.0 * DEG),
            },
            SynthKind::MovingFocus => {
                let start = random_position(rng, 0.0);
                Scene::MovingFocus {
                    roi: Orbit {
                        start,
                        direction: inclined_east(rng, &start, p.roi_inclination),
                        speed: p.roi_speed,
                    },
                }
            }
            SynthKind::Ride => {
                let start = random_position(rng, 0.0);
                Scene::Ride {
                    heading: Orbit {
                        start,
                        direction: inclined_east(rng, &start, 0.0),
                        speed: p.ride_speed,
                    },
                }
            }
        }
    }

    fn bumps(&self, t: f64) -> Vec<UnitVec3> {
        match self {
            Scene::Exploration { distractors } => distractors.iter().map(|o| o.at(t)).collect(),
            Scene::StaticFocus { roi } => vec![*roi],
            Scene::MovingFocus { roi } => vec![roi.at(t)],
            Scene::Ride { heading } => vec![heading.at(t)],
        }
    }
}

fn content_map(geometry: &GridGeometry, bumps: &[UnitVec3], sigma: f64) -> Result<SaliencyMap> {
    let denom = 2.0 * sigma * sigma;
    let values = geometry
        .centers()
        .iter()
        .map(|c| {
            bumps
                .iter()
                .map(|b| {
                    let d = c.dot(b).clamp(-1.0, 1.0).acos();
                    (-(d * d) / denom).exp()
                })
                .fold(0.0f64, f64::max) as f32
        })
        .collect();
    SaliencyMap::new(geometry.grid, values)
}

fn random_position(rng: &mut impl Rng, lat_std: f64) -> UnitVec3 {
    let theta = rng.random::<f64>() * 2.0 * PI;
    let n: f64 = rng.sample(StandardNormal);
    let phi = (n * lat_std).clamp(-60.0 * DEG, 60.0 * DEG);
    ang_to_vec(AngularPosition::new(theta, phi).expect("latitude clamped"))
}

fn gaussian_tangent(rng: &mut impl Rng, p: &UnitVec3) -> [f64; 3] {
    let g = [
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    ];
    reject(g, p)
}

fn random_tangent(rng: &mut impl Rng, p: &UnitVec3) -> [f64; 3] {
    loop {
        let t = gaussian_tangent(rng, p);
        let n = norm3(t);
        if n > 1e-6 {
            return [t[0] / n, t[1] / n, t[2] / n];
        }
    }
}

/// Unit tangent at an equatorial point, heading east or west and tilted by
/// at most `max_inclination`.
fn inclined_east(rng: &mut impl Rng, p: &UnitVec3, max_inclination: f64) -> [f64; 3] {
    let east = [-p.y(), p.x(), 0.0];
    let e = norm3(east).max(1e-12);
    let east = [east[0] / e, east[1] / e, 0.0];
    let north = reject([0.0, 0.0, 1.0], p);
    let nn = norm3(north).max(1e-12);
    let north = [north[0] / nn, north[1] / nn, north[2] / nn];
    let tilt = (rng.random::<f64>() * 2.0 - 1.0) * max_inclination;
    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let (s, c) = tilt.sin_cos();
    [
        sign * (c * east[0] + s * north[0]),
        sign * (c * east[1] + s * north[1]),
        sign * (c * east[2] + s * north[2]),
    ]
}

struct Glance {
    target: UnitVec3,
    until: f64,
}

fn simulate_user(cfg: &SynthConfig, scene: &Scene, n_samples: usize, rng: &mut ChaCha8Rng) -> Vec<UnitVec3> {
    let p = &cfg.params;
    let h = cfg.dt / p.substeps as f64;
    let mut pos = match scene {
        Scene::Exploration { .. } => random_position(rng, 20.0 * DEG),
        _ => random_position(rng, 25.0 * DEG),
    };
    let ride_offset = match scene {
        Scene::Ride { .. } => {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            (a * p.ride_spread, b * p.ride_spread * 0.5)
        }
        _ => (0.0, 0.0),
    };
    let (sigma_v, tau) = match scene {
        Scene::Exploration { .. } => (p.explore_sigma_v, p.explore_tau),
        _ => (p.jitter_sigma_v, p.jitter_tau),
    };
    let mut vel = gaussian_tangent(rng, &pos).map(|c| c * sigma_v);
    let mut glance: Option<Glance> = None;
    let mut samples = Vec::with_capacity(n_samples);
    samples.push(pos);
    for k in 1..n_samples {
        for j in 0..p.substeps {
            let t = (k - 1) as f64 * cfg.dt + j as f64 * h;
            let target = match scene {
                Scene::Exploration { .. } => None,
                Scene::StaticFocus { roi } => Some((*roi, p.focus_omega)),
                Scene::MovingFocus { roi } => Some((roi.at(t), p.track_omega)),
                Scene::Ride { heading } => Some((offset_target(heading.at(t), ride_offset), p.track_omega)),
            };
            let target = target.map(|(roi, omega)| {
                if matches!(scene, Scene::StaticFocus { .. } | Scene::MovingFocus { .. }) {
                    if glance.as_ref().is_some_and(|g| t >= g.until) {
                        glance = None;
                    }
                    if glance.is_none() && rng.random::<f64>() < p.glance_rate_hz * h {
                        glance = Some(sample_glance(rng, &roi, t, p));
                    }
                    if let Some(g) = &glance {
                        return (g.target, p.focus_omega);
                    }
                }
                (roi, omega)
            });

            let noise = gaussian_tangent(rng, &pos);
            let kick = sigma_v * (2.0 * h / tau).sqrt();
            let mut acc = [0.0; 3];
            for i in 0..3 {
                acc[i] = -vel[i] / tau;
            }
            match target {
                Some((goal, omega)) => {
                    let pull = pos.log_map(&goal);
                    for i in 0..3 {
                        acc[i] += omega * omega * pull[i] - 2.0 * omega * vel[i];
                    }
                }
                None => {
                    let north = reject([0.0, 0.0, 1.0], &pos);
                    let lat = pos.z().clamp(-1.0, 1.0).asin();
                    let n = norm3(north);
                    if n > 1e-9 {
                        for i in 0..3 {
                            acc[i] -= p.lat_stiffness * lat * north[i] / n;
                        }
                    }
                }
            }
            for i in 0..3 {
                vel[i] += acc[i] * h + kick * noise[i];
            }
            let speed = norm3(vel);
            if speed > p.max_speed {
                vel = vel.map(|c| c * p.max_speed / speed);
            }
            let speed = norm3(vel).min(p.max_speed);
            let next = pos.advance(vel, speed * h);
            let transported = reject(vel, &next);
            let tn = norm3(transported);
            vel = if tn > 1e-15 {
                transported.map(|c| c * speed / tn)
            } else {
                [0.0; 3]
            };
            pos = next;
        }
        samples.push(pos);
    }
    samples
}

fn sample_glance(rng: &mut impl Rng, roi: &UnitVec3, t: f64, p: &SynthParams) -> Glance {
    let dir = random_tangent(rng, roi);
    let (lo, hi) = p.glance_distance;
    let dist = lo + rng.random::<f64>() * (hi - lo);
    let mut target = roi.advance(dir, dist);
    let max_z = (60.0 * DEG).sin();
    if target.z().abs() > max_z {
        let r = (1.0 - max_z * max_z).sqrt();
        let xy = (target.x().hypot(target.y())).max(1e-12);
        target = UnitVec3::normalize_or(
            [target.x() / xy * r, target.y() / xy * r, max_z.copysign(target.z())],
            *roi,
        );
    }
    let (a, b) = p.glance_duration_s;
    Glance {
        target,
        until: t + a + rng.random::<f64>() * (b - a),
    }
}

fn offset_target(heading: UnitVec3, (d_lon, d_lat): (f64, f64)) -> UnitVec3 {
    let lon = heading.y().atan2(heading.x()) + d_lon;
    let lat = (heading.z().clamp(-1.0, 1.0).asin() + d_lat).clamp(-FRAC_PI_2 + 0.1, FRAC_PI_2 - 0.1);
    ang_to_vec(AngularPosition::new(lon, lat).expect("latitude clamped"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere::orthodromic_distance;

    fn small(kind: SynthKind, users: usize, seed: u64) -> SynthConfig {
        SynthConfig {
            grid: Some(Grid::new(16, 32)),
            ..SynthConfig::new(kind, 2, users, 20.0, seed)
        }
    }

    #[test]
    fn static_focus_converges() {
        let mut cfg = small(SynthKind::StaticFocus, 1, 3);
        cfg.params.glance_rate_hz = 0.0;
        let out = synth_generate(&cfg).unwrap();
        for t in out.dataset.traces() {
            let p = t.samples()[50];
            let Scene::StaticFocus { roi } = Scene::sample(&cfg, &mut rng_for(cfg.seed, t_stream(&cfg, t.video_id()))) else {
                unreachable!()
            };
            assert!(orthodromic_distance(&p, &roi) < 10.0 * DEG);
        }
    }

    fn t_stream(cfg: &SynthConfig, video: &str) -> u64 {
        let v: u64 = video.rsplit('_').next().unwrap().parse().unwrap();
        (cfg.kind.index() << 40) | (v << 16)
    }

    #[test]
    fn deterministic_in_seed() {
        for kind in SynthKind::ALL {
            let a = synth_generate(&small(kind, 3, 11)).unwrap();
            let b = synth_generate(&small(kind, 3, 11)).unwrap();
            assert_eq!(a, b);
            let c = synth_generate(&small(kind, 3, 12)).unwrap();
            assert_ne!(a.dataset, c.dataset);
        }
    }

    #[test]
    fn exploration_users_disagree() {
        let out = synth_generate(&small(SynthKind::Exploration, 2, 5)).unwrap();
        let d: Vec<f64> = out
            .dataset
            .video_ids()
            .map(|v| {
                let tr: Vec<_> = out.dataset.traces_of(v).collect();
                orthodromic_distance(&tr[0].samples()[100], &tr[1].samples()[100])
            })
            .collect();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / d.len() as f64;
        assert!(var > 0.0);
    }

    #[test]
    fn continuous_and_unit() {
        for kind in SynthKind::ALL {
            let out = synth_generate(&small(kind, 4, 9)).unwrap();
            for t in out.dataset.traces() {
                for w in t.samples().windows(2) {
                    assert!(orthodromic_distance(&w[0], &w[1]) < PI / 4.0);
                    assert!((norm3(w[1].to_array()) - 1.0).abs() < 1e-9);
                }
            }
            assert_eq!(out.saliency.len(), 2);
            assert_eq!(out.saliency[0].len(), 101);
        }
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("moving_focus".parse::<SynthKind>().unwrap(), SynthKind::MovingFocus);
        assert!("walk".parse::<SynthKind>().is_err());
    }
}
