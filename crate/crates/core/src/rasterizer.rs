//! Point cloud → 13-channel grid of per-cell statistics.

use rayon::prelude::*;
use thiserror::Error;

use crate::io::{IoError, NamedTensor, PointCloud, PointRecord, TensorSet};

/// Smallest standard deviation a channel may carry after normalization.
pub const STD_FLOOR: f64 = 1e-6;

/// Percentile of scene elevations used as the ground reference.
pub const GROUND_PERCENTILE: f64 = 2.0;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Geometry of the output grid. The origin is the lower-left corner; row 0 of
/// every channel is the northernmost row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub origin_x: f64,
    pub origin_y: f64,
    pub cell_size: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            origin_x: 0.0,
            origin_y: 0.0,
            cell_size: 0.3,
            width: 128,
            height: 128,
        }
    }
}

impl GridSpec {
    pub fn new(width: usize, height: usize, cell_size: f64) -> Result<Self, RasterError> {
        let spec = Self {
            width,
            height,
            cell_size,
            ..Self::default()
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), RasterError> {
        if !(self.cell_size > 0.0 && self.cell_size.is_finite()) {
            return Err(RasterError::Usage(format!(
                "cell_size must be positive, got {}",
                self.cell_size
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(RasterError::Usage("grid must be at least 1x1".into()));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.width * self.height
    }

    pub fn extent_x(&self) -> f64 {
        self.width as f64 * self.cell_size
    }

    pub fn extent_y(&self) -> f64 {
        self.height as f64 * self.cell_size
    }

    /// Row-major cell index of a planar position, `None` outside the grid.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<usize> {
        let fx = (x - self.origin_x) / self.cell_size;
        let fy = (y - self.origin_y) / self.cell_size;
        if !(fx >= 0.0 && fy >= 0.0) {
            return None;
        }
        let col = fx.floor() as usize;
        let row_up = fy.floor() as usize;
        if col >= self.width || row_up >= self.height {
            return None;
        }
        Some((self.height - 1 - row_up) * self.width + col)
    }

    /// Planar center of a row-major cell.
    pub fn cell_center(&self, cell: usize) -> (f64, f64) {
        let row = cell / self.width;
        let col = cell % self.width;
        let x = self.origin_x + (col as f64 + 0.5) * self.cell_size;
        let y = self.origin_y + ((self.height - 1 - row) as f64 + 0.5) * self.cell_size;
        (x, y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Channel {
    ZMin,
    ZMax,
    ZMean,
    ZStd,
    ZRange,
    IMean,
    IStd,
    IMin,
    IMax,
    PointCount,
    MeanReturnNumber,
    MultiReturnFraction,
    LastReturnFraction,
}

pub const CHANNEL_COUNT: usize = 13;

impl Channel {
    pub const ALL: [Channel; CHANNEL_COUNT] = [
        Channel::ZMin,
        Channel::ZMax,
        Channel::ZMean,
        Channel::ZStd,
        Channel::ZRange,
        Channel::IMean,
        Channel::IStd,
        Channel::IMin,
        Channel::IMax,
        Channel::PointCount,
        Channel::MeanReturnNumber,
        Channel::MultiReturnFraction,
        Channel::LastReturnFraction,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::ZMin => "z_min",
            Channel::ZMax => "z_max",
            Channel::ZMean => "z_mean",
            Channel::ZStd => "z_std",
            Channel::ZRange => "z_range",
            Channel::IMean => "i_mean",
            Channel::IStd => "i_std",
            Channel::IMin => "i_min",
            Channel::IMax => "i_max",
            Channel::PointCount => "point_count",
            Channel::MeanReturnNumber => "mean_return_number",
            Channel::MultiReturnFraction => "multi_return_fraction",
            Channel::LastReturnFraction => "last_return_fraction",
        }
    }

    pub fn from_name(name: &str) -> Option<Channel> {
        Channel::ALL.into_iter().find(|c| c.name() == name)
    }
}

/// Channel-major `13 × height × width` statistics stack.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterStack {
    pub spec: GridSpec,
    data: Vec<f64>,
}

impl RasterStack {
    pub fn zeros(spec: GridSpec) -> Self {
        Self {
            spec,
            data: vec![0.0; CHANNEL_COUNT * spec.cells()],
        }
    }

    pub fn from_flat(spec: GridSpec, data: Vec<f64>) -> Result<Self, RasterError> {
        if data.len() != CHANNEL_COUNT * spec.cells() {
            return Err(RasterError::Usage(format!(
                "stack needs {} values, got {}",
                CHANNEL_COUNT * spec.cells(),
                data.len()
            )));
        }
        Ok(Self { spec, data })
    }

    pub fn channel(&self, ch: Channel) -> &[f64] {
        let n = self.spec.cells();
        &self.data[ch.index() * n..(ch.index() + 1) * n]
    }

    pub fn channel_mut(&mut self, ch: Channel) -> &mut [f64] {
        let n = self.spec.cells();
        &mut self.data[ch.index() * n..(ch.index() + 1) * n]
    }

    pub fn get(&self, ch: Channel, cell: usize) -> f64 {
        self.data[ch.index() * self.spec.cells() + cell]
    }

    /// Flattened channel-major values, the layout fed to the autoencoder.
    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.data
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (CHANNEL_COUNT, self.spec.height, self.spec.width)
    }

    pub fn to_tensors(&self) -> TensorSet {
        let mut set = TensorSet::new();
        set.push(NamedTensor::from_slice(
            "grid/spec",
            &[self.spec.origin_x, self.spec.origin_y, self.spec.cell_size],
        ));
        for ch in Channel::ALL {
            set.push(NamedTensor::new(
                format!("channel/{}", ch.name()),
                vec![self.spec.height as u32, self.spec.width as u32],
                self.channel(ch).iter().map(|&v| v as f32).collect(),
            ));
        }
        set
    }

    pub fn from_tensors(set: &TensorSet) -> Result<Self, RasterError> {
        let first = set.get(&format!("channel/{}", Channel::ZMin.name()))?;
        let (height, width) = match first.dims.as_slice() {
            [h, w] => (*h as usize, *w as usize),
            _ => return Err(RasterError::Usage("channel tensors must be rank 2".into())),
        };
        let grid = set.get("grid/spec")?.to_f64();
        if grid.len() != 3 {
            return Err(RasterError::Usage("grid/spec must hold 3 values".into()));
        }
        let spec = GridSpec {
            origin_x: grid[0],
            origin_y: grid[1],
            cell_size: grid[2],
            width,
            height,
        };
        spec.validate()?;
        let mut data = Vec::with_capacity(CHANNEL_COUNT * spec.cells());
        for ch in Channel::ALL {
            let t = set.get(&format!("channel/{}", ch.name()))?;
            if t.dims != first.dims {
                return Err(RasterError::Usage(format!(
                    "channel {} has dims {:?}, expected {:?}",
                    ch.name(),
                    t.dims,
                    first.dims
                )));
            }
            data.extend(t.to_f64());
        }
        Self::from_flat(spec, data)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rasterized {
    pub stack: RasterStack,
    /// Points whose (x, y) fall outside the grid extent.
    pub out_of_extent: usize,
    pub ground_z: f64,
}

fn percentile(sorted: &[f64], pct: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let pos = pct / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

fn point_order(a: &PointRecord, b: &PointRecord) -> std::cmp::Ordering {
    a.x.total_cmp(&b.x)
        .then(a.y.total_cmp(&b.y))
        .then(a.z.total_cmp(&b.z))
        .then(a.intensity.cmp(&b.intensity))
        .then(a.return_number.cmp(&b.return_number))
        .then(a.num_returns.cmp(&b.num_returns))
}

/// Per-cell statistics of the points in one cell, elevations already
/// ground-referenced. Points must be sorted by [`point_order`].
fn cell_stats(points: &[PointRecord], ground: f64) -> [f64; CHANNEL_COUNT] {
    let mut out = [0.0; CHANNEL_COUNT];
    if points.is_empty() {
        return out;
    }
    let n = points.len() as f64;
    let (mut zmin, mut zmax, mut zsum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
    let (mut imin, mut imax, mut isum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
    let (mut ret_sum, mut multi, mut last) = (0.0, 0.0, 0.0);
    for p in points {
        let z = p.z - ground;
        let i = p.intensity as f64;
        zmin = zmin.min(z);
        zmax = zmax.max(z);
        zsum += z;
        imin = imin.min(i);
        imax = imax.max(i);
        isum += i;
        ret_sum += p.return_number as f64;
        if p.num_returns > 1 {
            multi += 1.0;
        }
        if p.is_last_return() {
            last += 1.0;
        }
    }
    // mean can drift outside [min, max] by an ulp; clamp keeps the ordering invariant exact
    let zmean = (zsum / n).clamp(zmin, zmax);
    let imean = (isum / n).clamp(imin, imax);
    let zvar = points
        .iter()
        .map(|p| (p.z - ground - zmean).powi(2))
        .sum::<f64>()
        / n;
    let ivar = points
        .iter()
        .map(|p| (p.intensity as f64 - imean).powi(2))
        .sum::<f64>()
        / n;
    out[Channel::ZMin.index()] = zmin;
    out[Channel::ZMax.index()] = zmax;
    out[Channel::ZMean.index()] = zmean;
    out[Channel::ZStd.index()] = zvar.sqrt();
    out[Channel::ZRange.index()] = zmax - zmin;
    out[Channel::IMean.index()] = imean;
    out[Channel::IStd.index()] = ivar.sqrt();
    out[Channel::IMin.index()] = imin;
    out[Channel::IMax.index()] = imax;
    out[Channel::PointCount.index()] = n;
    out[Channel::MeanReturnNumber.index()] = ret_sum / n;
    out[Channel::MultiReturnFraction.index()] = multi / n;
    out[Channel::LastReturnFraction.index()] = last / n;
    out
}

/// Bins points into cells and computes the canonical statistics. Elevations
/// are expressed relative to the 2nd percentile of in-extent z; empty cells are
/// all zeros. Output is independent of point order and worker count.
pub fn rasterize(cloud: &PointCloud, spec: GridSpec) -> Result<Rasterized, RasterError> {
    spec.validate()?;
    let mut cells: Vec<Vec<PointRecord>> = vec![Vec::new(); spec.cells()];
    let mut out_of_extent = 0;
    for p in &cloud.points {
        match spec.cell_of(p.x, p.y) {
            Some(c) => cells[c].push(*p),
            None => out_of_extent += 1,
        }
    }
    let mut zs: Vec<f64> = cells.iter().flatten().map(|p| p.z).collect();
    zs.sort_by(f64::total_cmp);
    let ground_z = percentile(&zs, GROUND_PERCENTILE);

    let per_cell: Vec<[f64; CHANNEL_COUNT]> = cells
        .par_iter_mut()
        .map(|pts| {
            pts.sort_by(point_order);
            cell_stats(pts, ground_z)
        })
        .collect();

    let mut stack = RasterStack::zeros(spec);
    let n = spec.cells();
    for (cell, stats) in per_cell.iter().enumerate() {
        for (ch, v) in stats.iter().enumerate() {
            stack.data[ch * n + cell] = *v;
        }
    }
    Ok(Rasterized {
        stack,
        out_of_extent,
        ground_z,
    })
}

/// Per-channel standardization constants.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: [f64; CHANNEL_COUNT],
    pub std: [f64; CHANNEL_COUNT],
}

impl NormStats {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; CHANNEL_COUNT],
            std: [1.0; CHANNEL_COUNT],
        }
    }

    pub fn to_tensors(&self) -> TensorSet {
        let mut set = TensorSet::new();
        set.push(NamedTensor::from_slice("norm/mean", &self.mean));
        set.push(NamedTensor::from_slice("norm/std", &self.std));
        set
    }

    pub fn from_tensors(set: &TensorSet) -> Result<Self, RasterError> {
        let read = |name: &str| -> Result<[f64; CHANNEL_COUNT], RasterError> {
            let v = set.get(name)?.to_f64();
            v.try_into()
                .map_err(|_| RasterError::Usage(format!("{name} must hold {CHANNEL_COUNT} values")))
        };
        let std = read("norm/std")?;
        if std.iter().any(|&s| s.is_nan() || s <= 0.0) {
            return Err(RasterError::Usage("norm/std must be positive".into()));
        }
        Ok(Self {
            mean: read("norm/mean")?,
            std,
        })
    }
}

/// Mean and population standard deviation of every channel over all cells of
/// all stacks, std clamped to [`STD_FLOOR`].
pub fn compute_norm_stats(stacks: &[RasterStack]) -> Result<NormStats, RasterError> {
    if stacks.is_empty() {
        return Err(RasterError::Usage(
            "normalization needs at least one stack".into(),
        ));
    }
    let mut stats = NormStats::identity();
    for ch in Channel::ALL {
        // Welford
        let (mut count, mut mean, mut m2) = (0.0f64, 0.0f64, 0.0f64);
        for s in stacks {
            for &v in s.channel(ch) {
                count += 1.0;
                let d = v - mean;
                mean += d / count;
                m2 += d * (v - mean);
            }
        }
        stats.mean[ch.index()] = mean;
        stats.std[ch.index()] = (m2 / count).sqrt().max(STD_FLOOR);
    }
    Ok(stats)
}

pub fn normalize(stack: &RasterStack, stats: &NormStats) -> RasterStack {
    let mut out = stack.clone();
    for ch in Channel::ALL {
        let (m, s) = (stats.mean[ch.index()], stats.std[ch.index()]);
        out.channel_mut(ch)
            .iter_mut()
            .for_each(|v| *v = (*v - m) / s);
    }
    out
}

pub fn denormalize(stack: &RasterStack, stats: &NormStats) -> RasterStack {
    let mut out = stack.clone();
    for ch in Channel::ALL {
        let (m, s) = (stats.mean[ch.index()], stats.std[ch.index()]);
        out.channel_mut(ch).iter_mut().for_each(|v| *v = *v * s + m);
    }
    out
}
