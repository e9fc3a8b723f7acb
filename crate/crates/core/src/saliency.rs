//! Equirectangular saliency maps: ground truth from head traces, peak
//! extraction, solid-angle entropy and the `SALM` container.
//!
//! Cell `(r, c)` of an `H × W` map is centred at longitude `2π(c + 0.5)/W`
//! and latitude `π/2 − π(r + 0.5)/H`.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::sphere::{wrap_longitude, UnitVec3};

/// Default RBF width, 6 degrees.
pub const DEFAULT_SIGMA: f64 = 6.0 * PI / 180.0;
/// Default peak suppression radius, 20 degrees.
pub const DEFAULT_NMS_RADIUS: f64 = 20.0 * PI / 180.0;

const SALM_MAGIC: &[u8; 4] = b"SALM";
const SALM_VERSION: u32 = 1;

/// Map resolution in cells.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Grid {
    pub height: usize,
    pub width: usize,
}

impl Grid {
    pub const fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn latitude(&self, row: usize) -> f64 {
        FRAC_PI_2 - PI * (row as f64 + 0.5) / self.height as f64
    }

    pub fn longitude(&self, col: usize) -> f64 {
        TAU * (col as f64 + 0.5) / self.width as f64
    }

    pub fn cell_center(&self, row: usize, col: usize) -> UnitVec3 {
        let (sl, cl) = self.longitude(col).sin_cos();
        let (sp, cp) = self.latitude(row).sin_cos();
        UnitVec3::normalize_or([cl * cp, sl * cp, sp], UnitVec3::Z)
    }

    /// Cell holding direction `v`.
    pub fn cell_of(&self, v: &UnitVec3) -> (usize, usize) {
        let lat = v.z().clamp(-1.0, 1.0).asin();
        let lon = wrap_longitude(v.y().atan2(v.x()));
        let row = (((FRAC_PI_2 - lat) / PI) * self.height as f64).floor() as usize;
        let col = ((lon / TAU) * self.width as f64).floor() as usize;
        (row.min(self.height - 1), col.min(self.width - 1))
    }

    /// All cell centres, row-major.
    pub fn centers(&self) -> Vec<UnitVec3> {
        (0..self.height)
            .flat_map(|r| (0..self.width).map(move |c| (r, c)))
            .map(|(r, c)| self.cell_center(r, c))
            .collect()
    }

    /// Solid-angle weight of each row, proportional to `cos(latitude)`.
    pub fn row_weights(&self) -> Vec<f64> {
        (0..self.height).map(|r| self.latitude(r).cos()).collect()
    }
}

/// One saliency heat map, values row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    grid: Grid,
    values: Vec<f32>,
}

impl SaliencyMap {
    pub fn new(grid: Grid, values: Vec<f32>) -> Result<Self> {
        if grid.height == 0 || grid.width == 0 {
            return Err(Error::Shape("saliency grid must be non-empty".into()));
        }
        if values.len() != grid.cells() {
            return Err(Error::Shape(format!(
                "{} values for a {}x{} grid",
                values.len(),
                grid.height,
                grid.width
            )));
        }
        if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidArgument(format!("saliency value {bad} is not a finite non-negative number")));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.cells()],
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn height(&self) -> usize {
        self.grid.height
    }

    pub fn width(&self) -> usize {
        self.grid.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.grid.width + col]
    }

    pub fn max_value(&self) -> f32 {
        self.values.iter().copied().fold(0.0, f32::max)
    }

    /// Index of the largest value (first on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        best
    }

    pub fn scaled(&self, factor: f32) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }
}

/// Maps over time, map `k` at time `k · dt`.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencySequence {
    pub video_id: String,
    pub dt: f64,
    maps: Vec<SaliencyMap>,
}

impl SaliencySequence {
    pub fn new(video_id: impl Into<String>, dt: f64, maps: Vec<SaliencyMap>) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        if let Some(first) = maps.first() {
            if maps.iter().any(|m| m.grid() != first.grid()) {
                return Err(Error::Shape("saliency maps in a sequence must share one grid".into()));
            }
        }
        Ok(Self {
            video_id: video_id.into(),
            dt,
            maps,
        })
    }

    pub fn maps(&self) -> &[SaliencyMap] {
        &self.maps
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn grid(&self) -> Option<Grid> {
        self.maps.first().map(|m| m.grid())
    }

    pub fn frame(&self, k: usize) -> Option<&SaliencyMap> {
        self.maps.get(k)
    }
}

/// A local maximum returned by [`extract_peaks`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Peak {
    pub position: UnitVec3,
    pub value: f32,
    /// 1-based, by descending value.
    pub rank: usize,
}

/// Precomputed cell centres for repeated map construction on one grid.
#[derive(Clone, Debug)]
pub struct GridGeometry {
    pub grid: Grid,
    centers: Vec<UnitVec3>,
}

impl GridGeometry {
    pub fn new(grid: Grid) -> Self {
        Self {
            grid,
            centers: grid.centers(),
        }
    }

    pub fn centers(&self) -> &[UnitVec3] {
        &self.centers
    }

    fn accumulate_user(&self, position: &UnitVec3, sigma: f64, out: &mut [f64]) {
        let denom = 2.0 * sigma * sigma;
        for (acc, center) in out.iter_mut().zip(&self.centers) {
            let d = center.dot(position).clamp(-1.0, 1.0).acos();
            *acc += (-(d * d) / denom).exp();
        }
    }

    pub fn user_map(&self, position: &UnitVec3, sigma: f64) -> SaliencyMap {
        let mut acc = vec![0.0; self.grid.cells()];
        self.accumulate_user(position, sigma, &mut acc);
        SaliencyMap {
            grid: self.grid,
            values: acc.into_iter().map(|v| v as f32).collect(),
        }
    }

    pub fn video_map(&self, positions: &[UnitVec3], sigma: f64) -> Result<SaliencyMap> {
        if positions.is_empty() {
            return Err(Error::Empty("ground-truth saliency needs at least one user".into()));
        }
        let mut acc = vec![0.0; self.grid.cells()];
        for p in positions {
            self.accumulate_user(p, sigma, &mut acc);
        }
        let n = positions.len() as f64;
        Ok(SaliencyMap {
            grid: self.grid,
            values: acc.into_iter().map(|v| (v / n) as f32).collect(),
        })
    }
}

/// Per-user ground-truth map `exp(-D(p, q)² / 2σ²)`, `D` orthodromic.
pub fn gt_saliency_user(position: &UnitVec3, grid: Grid, sigma: f64) -> Result<SaliencyMap> {
    check_sigma(sigma)?;
    Ok(GridGeometry::new(grid).user_map(position, sigma))
}

/// Cellwise mean of the per-user maps.
pub fn gt_saliency_video(positions: &[UnitVec3], grid: Grid, sigma: f64) -> Result<SaliencyMap> {
    check_sigma(sigma)?;
    GridGeometry::new(grid).video_map(positions, sigma)
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")))
    }
}

/// Ground-truth sequence for one video, one frame per trace sample.
///
/// Frame `k` averages the users whose traces reach sample `k`; the sequence
/// stops at the longest trace.
pub fn gt_saliency_sequence(dataset: &Dataset, video_id: &str, grid: Grid, sigma: f64) -> Result<SaliencySequence> {
    check_sigma(sigma)?;
    let traces: Vec<_> = dataset.traces_of(video_id).collect();
    if traces.is_empty() {
        return Err(Error::UnknownVideo(video_id.to_string()));
    }
    let geometry = GridGeometry::new(grid);
    let frames = traces.iter().map(|t| t.len()).max().unwrap_or(0);
    let mut maps = Vec::with_capacity(frames);
    let mut positions = Vec::with_capacity(traces.len());
    for k in 0..frames {
        positions.clear();
        positions.extend(traces.iter().filter_map(|t| t.samples().get(k).copied()));
        maps.push(geometry.video_map(&positions, sigma)?);
    }
    SaliencySequence::new(video_id, dataset.dt(), maps)
}

/// Greedy peak picking with orthodromic non-maximum suppression.
///
/// Repeatedly takes the largest unsuppressed positive cell and suppresses
/// every cell within `nms_radius` of it, until `k` peaks are found or no
/// positive cell remains.
pub fn extract_peaks(map: &SaliencyMap, k: usize, nms_radius: f64) -> Result<Vec<Peak>> {
    if k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    let grid = map.grid();
    let centers = grid.centers();
    let mut order: Vec<usize> = (0..map.values.len()).filter(|&i| map.values[i] > 0.0).collect();
    order.sort_by(|&a, &b| map.values[b].total_cmp(&map.values[a]).then(a.cmp(&b)));
    let cos_radius = nms_radius.cos();
    let mut suppressed = vec![false; map.values.len()];
    let mut peaks = Vec::with_capacity(k);
    for idx in order {
        if peaks.len() == k {
            break;
        }
        if suppressed[idx] {
            continue;
        }
        let center = centers[idx];
        peaks.push(Peak {
            position: center,
            value: map.values[idx],
            rank: peaks.len() + 1,
        });
        for (j, c) in centers.iter().enumerate() {
            if c.dot(&center) >= cos_radius {
                suppressed[j] = true;
            }
        }
    }
    Ok(peaks)
}

/// Shannon entropy in bits of `p_i ∝ cos(lat_i) · v_i`.
pub fn saliency_entropy(map: &SaliencyMap) -> Result<f64> {
    let grid = map.grid();
    let weights = grid.row_weights();
    let mass: f64 = map
        .values
        .chunks(grid.width)
        .zip(&weights)
        .map(|(row, w)| w * row.iter().map(|&v| v as f64).sum::<f64>())
        .sum();
    if !(mass > 0.0) {
        return Err(Error::Empty("saliency map has zero total mass".into()));
    }
    let mut h = 0.0;
    for (row, w) in map.values.chunks(grid.width).zip(&weights) {
        for &v in row {
            let p = w * v as f64 / mass;
            if p > 0.0 {
                h -= p * p.log2();
            }
        }
    }
    Ok(h)
}

/// Writes a sequence as `SALM` v1: magic, version, frames, height, width,
/// `dt` (f32) and frame-major row-major f32 payload, all little-endian.
pub fn save_saliency(path: impl AsRef<Path>, seq: &SaliencySequence) -> Result<()> {
    let grid = seq
        .grid()
        .ok_or_else(|| Error::Empty("cannot save a saliency sequence with no frames".into()))?;
    let mut w = BufWriter::new(File::create(path)?);
    write_salm(&mut w, seq, grid)?;
    w.flush()?;
    Ok(())
}

fn write_salm(w: &mut impl Write, seq: &SaliencySequence, grid: Grid) -> Result<()> {
    w.write_all(SALM_MAGIC)?;
    for v in [SALM_VERSION, seq.len() as u32, grid.height as u32, grid.width as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&(seq.dt as f32).to_le_bytes())?;
    for map in seq.maps() {
        for v in map.values() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads a `SALM` file; the video id is the file stem.
pub fn load_saliency(path: impl AsRef<Path>) -> Result<SaliencySequence> {
    let path = path.as_ref();
    let video_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut r = BufReader::new(File::open(path)?);
    read_salm(&mut r, video_id)
}

fn read_exact_or(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format(format!("SALM truncated while reading {what}")),
        _ => Error::Io(e),
    })
}

fn read_salm(r: &mut impl Read, video_id: String) -> Result<SaliencySequence> {
    let mut magic = [0u8; 4];
    read_exact_or(r, &mut magic, "magic")?;
    if &magic != SALM_MAGIC {
        return Err(Error::Format(format!("bad SALM magic {magic:?}")));
    }
    let mut word = [0u8; 4];
    let mut header = [0u32; 4];
    for h in header.iter_mut() {
        read_exact_or(r, &mut word, "header")?;
        *h = u32::from_le_bytes(word);
    }
    let [version, frames, height, width] = header;
    if version != SALM_VERSION {
        return Err(Error::Format(format!("unsupported SALM version {version}")));
    }
    if frames == 0 {
        return Err(Error::Format("SALM file holds zero frames".into()));
    }
    if height == 0 || width == 0 {
        return Err(Error::Format(format!("SALM grid {height}x{width} is empty")));
    }
    read_exact_or(r, &mut word, "dt")?;
    let dt = f32::from_le_bytes(word) as f64;
    let grid = Grid::new(height as usize, width as usize);
    let mut maps = Vec::with_capacity(frames as usize);
    let mut buf = vec![0u8; grid.cells() * 4];
    for _ in 0..frames {
        read_exact_or(r, &mut buf, "payload")?;
        let values = buf
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        maps.push(SaliencyMap::new(grid, values)?);
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Format("SALM payload longer than its header declares".into()));
    }
    SaliencySequence::new(video_id, dt, maps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere::{ang_to_vec, orthodromic_distance, AngularPosition};
    use approx::assert_abs_diff_eq;

    const G: Grid = Grid::new(32, 64);

    #[test]
    fn value_one_at_position_cell_centre() {
        let p = G.cell_center(10, 17);
        let m = gt_saliency_user(&p, G, DEFAULT_SIGMA).unwrap();
        assert_eq!(m.get(10, 17), 1.0);
        assert_eq!(m.argmax(), 10 * 64 + 17);
    }

    #[test]
    fn value_at_sigma_distance() {
        let cell = G.cell_center(16, 0);
        // Rotate the cell centre by sigma along its meridian.
        let p = cell.advance([0.0, 0.0, 1.0], DEFAULT_SIGMA);
        assert_abs_diff_eq!(orthodromic_distance(&p, &cell), DEFAULT_SIGMA, epsilon = 1e-12);
        let m = gt_saliency_user(&p, G, DEFAULT_SIGMA).unwrap();
        assert_abs_diff_eq!(m.get(16, 0) as f64, (-0.5f64).exp(), epsilon = 1e-6);
    }

    #[test]
    fn antipodal_cell_flushes_to_zero() {
        let p = G.cell_center(5, 3);
        let m = gt_saliency_user(&p, G, DEFAULT_SIGMA).unwrap();
        let (r, c) = G.cell_of(&p.antipode());
        assert_eq!(m.get(r, c), 0.0);
    }

    #[test]
    fn video_map_means() {
        let a = G.cell_center(8, 8);
        let one = gt_saliency_user(&a, G, DEFAULT_SIGMA).unwrap();
        assert_eq!(gt_saliency_video(&[a], G, DEFAULT_SIGMA).unwrap(), one);
        assert_eq!(gt_saliency_video(&[a, a], G, DEFAULT_SIGMA).unwrap(), one);
        assert!(gt_saliency_video(&[], G, DEFAULT_SIGMA).is_err());

        let b = a.antipode();
        let two = gt_saliency_video(&[a, b], G, DEFAULT_SIGMA).unwrap();
        assert_abs_diff_eq!(two.get(8, 8) as f64, 0.5, epsilon = 1e-7);
        let (r, c) = G.cell_of(&b);
        assert_abs_diff_eq!(two.get(r, c) as f64, 0.5, epsilon = 1e-7);
    }

    #[test]
    fn column_shift_equivariance() {
        let p = ang_to_vec(AngularPosition::new(0.4, 0.3).unwrap());
        let q = ang_to_vec(AngularPosition::new(0.4 + TAU / G.width as f64, 0.3).unwrap());
        let a = gt_saliency_user(&p, G, DEFAULT_SIGMA).unwrap();
        let b = gt_saliency_user(&q, G, DEFAULT_SIGMA).unwrap();
        for r in 0..G.height {
            for c in 0..G.width {
                let shifted = b.get(r, (c + 1) % G.width);
                assert_abs_diff_eq!(a.get(r, c), shifted, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn peaks_single_bump_and_exhaustion() {
        let p = G.cell_center(12, 40);
        let m = gt_saliency_user(&p, G, DEFAULT_SIGMA).unwrap();
        let peaks = extract_peaks(&m, 1, DEFAULT_NMS_RADIUS).unwrap();
        assert_eq!(peaks.len(), 1);
        assert_eq!(G.cell_of(&peaks[0].position), (12, 40));

        let q = G.cell_center(12, 56);
        let two = gt_saliency_video(&[p, q], G, DEFAULT_SIGMA).unwrap();
        // A tight kernel keeps the two bumps separable within the radius.
        let narrow: Vec<f32> = two.values().iter().map(|&v| if v > 0.2 { v } else { 0.0 }).collect();
        let narrow = SaliencyMap::new(G, narrow).unwrap();
        assert_eq!(extract_peaks(&narrow, 5, DEFAULT_NMS_RADIUS).unwrap().len(), 2);
        assert!(extract_peaks(&SaliencyMap::zeros(G), 3, DEFAULT_NMS_RADIUS).unwrap().is_empty());
        assert!(extract_peaks(&m, 0, DEFAULT_NMS_RADIUS).is_err());
    }

    #[test]
    fn entropy_cases() {
        let mut values = vec![0.0; G.cells()];
        values[100] = 3.0;
        assert_eq!(saliency_entropy(&SaliencyMap::new(G, values).unwrap()).unwrap(), 0.0);

        let m = gt_saliency_user(&G.cell_center(4, 4), G, DEFAULT_SIGMA).unwrap();
        let h = saliency_entropy(&m).unwrap();
        assert_abs_diff_eq!(saliency_entropy(&m.scaled(0.5)).unwrap(), h, epsilon = 1e-9);
        assert!(saliency_entropy(&SaliencyMap::zeros(G)).is_err());
    }

    #[test]
    fn entropy_uniform_mass_per_cell() {
        // Values inversely proportional to cell area spread identical mass
        // over every cell.
        let g = Grid::new(32, 64);
        let w = g.row_weights();
        let values: Vec<f32> = (0..g.cells()).map(|i| (1.0 / w[i / g.width]) as f32).collect();
        let h = saliency_entropy(&SaliencyMap::new(g, values).unwrap()).unwrap();
        assert_abs_diff_eq!(h, (g.cells() as f64).log2(), epsilon = 1e-6);
    }

    #[test]
    fn entropy_constant_values_oracle() {
        // Constant values leave p_i ∝ cos(lat_i); recompute directly.
        let g = Grid::new(32, 64);
        let m = SaliencyMap::new(g, vec![1.0; g.cells()]).unwrap();
        let lat = |r: usize| PI / 2.0 - PI * (r as f64 + 0.5) / 32.0;
        let total: f64 = (0..32).map(|r| 64.0 * lat(r).cos()).sum();
        let oracle: f64 = (0..32)
            .map(|r| {
                let p = lat(r).cos() / total;
                -64.0 * p * p.log2()
            })
            .sum();
        let h = saliency_entropy(&m).unwrap();
        assert_abs_diff_eq!(h, oracle, epsilon = 1e-9);
        assert!((g.cells() as f64).log2() - h < 0.25);
    }

    #[test]
    fn salm_roundtrip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vid.salm");
        let maps = (0..3)
            .map(|k| gt_saliency_user(&G.cell_center(k * 3, k * 7), G, DEFAULT_SIGMA).unwrap())
            .collect();
        let seq = SaliencySequence::new("vid", 0.2, maps).unwrap();
        save_saliency(&path, &seq).unwrap();
        let back = load_saliency(&path).unwrap();
        assert_eq!(back.video_id, "vid");
        for (a, b) in seq.maps().iter().zip(back.maps()) {
            let bits_a: Vec<u32> = a.values().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u32> = b.values().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }

        let bytes = std::fs::read(&path).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_salm(&mut bad.as_slice(), "x".into()), Err(Error::Format(_))));
        let truncated = &bytes[..bytes.len() - 5];
        assert!(matches!(read_salm(&mut &truncated[..], "x".into()), Err(Error::Format(_))));
        let mut zero = bytes[..24].to_vec();
        zero[8..12].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(read_salm(&mut zero.as_slice(), "x".into()), Err(Error::Format(_))));
    }
}
