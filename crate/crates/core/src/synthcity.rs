//! Synthetic urban scenes with known vegetation cover and a planted
//! vegetation-to-temperature law.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;

use crate::autogeolabel::{Label, SegmentationMap};
use crate::io::{
    export_ascii_grid, write_manifest, write_point_cloud, IoError, ManifestEntry, PointCloud,
    PointRecord, Raster2D, SceneManifest,
};
use crate::rasterizer::GridSpec;
use crate::seeds::{derive_seed, splitmix64};

/// Geometry and sampling density of one scene. Densities are per square
/// meter; ranges are inclusive `(min, max)` in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneParams {
    pub extent: f64,
    pub cell_size: f64,
    pub tree_density: f64,
    pub building_density: f64,
    pub crown_radius: (f64, f64),
    pub tree_height: (f64, f64),
    pub building_size: (f64, f64),
    pub building_height: (f64, f64),
    pub points_per_m2: f64,
    /// Range of the scene-wide ground elevation.
    pub ground_offset: (f64, f64),
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            extent: 16.0,
            cell_size: 1.0,
            tree_density: 0.03,
            building_density: 0.01,
            crown_radius: (1.5, 3.5),
            tree_height: (5.0, 12.0),
            building_size: (3.0, 7.0),
            building_height: (4.0, 15.0),
            points_per_m2: 8.0,
            ground_offset: (0.0, 50.0),
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("extent", self.extent),
            ("cell_size", self.cell_size),
            ("points_per_m2", self.points_per_m2),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [
            ("tree_density", self.tree_density),
            ("building_density", self.building_density),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("{name} must be non-negative, got {v}"));
            }
        }
        let ranges = [
            ("crown_radius", self.crown_radius),
            ("tree_height", self.tree_height),
            ("building_size", self.building_size),
            ("building_height", self.building_height),
            ("ground_offset", self.ground_offset),
        ];
        for (name, (lo, hi)) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(format!("{name} range is invalid: ({lo}, {hi})"));
            }
        }
        if self.crown_radius.0 <= 0.0 || self.building_size.0 <= 0.0 {
            return Err("crown radius and building size must be positive".into());
        }
        if self.grid_side() == 0 {
            return Err("extent is smaller than one cell".into());
        }
        Ok(())
    }

    fn grid_side(&self) -> usize {
        (self.extent / self.cell_size).round() as usize
    }

    /// Grid covering the scene with its origin at (0, 0).
    pub fn grid(&self) -> GridSpec {
        let n = self.grid_side().max(1);
        GridSpec {
            origin_x: 0.0,
            origin_y: 0.0,
            cell_size: self.cell_size,
            width: n,
            height: n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemperatureLaw {
    pub t_base: f64,
    pub k_veg: f64,
    pub noise_sigma: f64,
}

impl Default for TemperatureLaw {
    fn default() -> Self {
        Self {
            t_base: 295.0,
            k_veg: 8.0,
            noise_sigma: 0.5,
        }
    }
}

impl TemperatureLaw {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.t_base.is_finite() && self.k_veg.is_finite() && self.k_veg > 0.0) {
            return Err("temperature law needs finite t_base and k_veg > 0".into());
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err("noise_sigma must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Tree {
    x: f64,
    y: f64,
    radius: f64,
    height: f64,
    crown_base: f64,
}

impl Tree {
    /// Height of the cone surface above (x, y), if the point is under the crown.
    fn surface(&self, x: f64, y: f64) -> Option<f64> {
        let r = ((x - self.x).powi(2) + (y - self.y).powi(2)).sqrt();
        (r <= self.radius).then(|| self.height - (self.height - self.crown_base) * r / self.radius)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Building {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
    height: f64,
}

impl Building {
    fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub cloud: PointCloud,
    /// Per-cell truth evaluated at cell centers; trees above roofs count as
    /// vegetation.
    pub truth: SegmentationMap,
    /// Share of the scene area under tree crowns.
    pub true_veg_fraction: f64,
    pub ground_z: f64,
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean)
        .map(|d| d.sample(rng) as usize)
        .unwrap_or(0)
}

fn place_trees(rng: &mut ChaCha8Rng, p: &SceneParams) -> Vec<Tree> {
    let wanted = poisson(rng, p.tree_density * p.extent * p.extent);
    let min_gap = p.crown_radius.0;
    let mut trees: Vec<Tree> = Vec::with_capacity(wanted);
    // dart throwing: each tree gets a bounded number of placement attempts
    for _ in 0..wanted {
        for _ in 0..30 {
            let x = rng.random_range(0.0..p.extent);
            let y = rng.random_range(0.0..p.extent);
            if trees
                .iter()
                .all(|t| (t.x - x).powi(2) + (t.y - y).powi(2) >= min_gap * min_gap)
            {
                let height = uniform(rng, p.tree_height);
                trees.push(Tree {
                    x,
                    y,
                    radius: uniform(rng, p.crown_radius),
                    height,
                    crown_base: height * rng.random_range(0.3..0.5),
                });
                break;
            }
        }
    }
    trees
}

fn place_buildings(rng: &mut ChaCha8Rng, p: &SceneParams) -> Vec<Building> {
    let n = poisson(rng, p.building_density * p.extent * p.extent);
    (0..n)
        .map(|_| {
            let w = uniform(rng, p.building_size);
            let d = uniform(rng, p.building_size);
            let x0 = rng.random_range(0.0..p.extent) - w / 2.0;
            let y0 = rng.random_range(0.0..p.extent) - d / 2.0;
            Building {
                x0,
                y0,
                x1: x0 + w,
                y1: y0 + d,
                height: uniform(rng, p.building_height),
            }
        })
        .collect()
}

fn canopy_at(trees: &[Tree], x: f64, y: f64) -> Option<(f64, f64)> {
    trees
        .iter()
        .filter_map(|t| t.surface(x, y).map(|s| (s, t.crown_base)))
        .max_by(|a, b| a.0.total_cmp(&b.0))
}

fn roof_at(buildings: &[Building], x: f64, y: f64) -> Option<f64> {
    buildings
        .iter()
        .filter(|b| b.contains(x, y))
        .map(|b| b.height)
        .max_by(f64::total_cmp)
}

fn intensity(rng: &mut ChaCha8Rng, (lo, hi): (u16, u16)) -> u16 {
    rng.random_range(lo..=hi)
}

/// Fraction of the grid area under some crown, from a regular
/// `COVER_SAMPLES`² subsample of every cell.
fn canopy_cover(trees: &[Tree], grid: &GridSpec) -> f64 {
    let k = COVER_SAMPLES;
    let step = grid.cell_size / k as f64;
    let mut covered = 0usize;
    for cell in 0..grid.cells() {
        let (cx, cy) = grid.cell_center(cell);
        let (x0, y0) = (cx - grid.cell_size / 2.0, cy - grid.cell_size / 2.0);
        for i in 0..k {
            for j in 0..k {
                let x = x0 + (i as f64 + 0.5) * step;
                let y = y0 + (j as f64 + 0.5) * step;
                if canopy_at(trees, x, y).is_some() {
                    covered += 1;
                }
            }
        }
    }
    covered as f64 / (grid.cells() * k * k) as f64
}

const COVER_SAMPLES: usize = 8;

/// Generates one scene. Trees are cones with multi-return pulses, buildings
/// are flat single-return roofs, everything else is ground. The output is a
/// pure function of `(params, scene_seed)`.
pub fn generate_scene(params: &SceneParams, scene_seed: u64) -> Result<Scene, String> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scene_seed);
    let ground_z = uniform(&mut rng, params.ground_offset);
    let trees = place_trees(&mut rng, params);
    let buildings = place_buildings(&mut rng, params);
    let jitter = Normal::new(0.0, 1.0).expect("unit normal");

    let pulses = (params.points_per_m2 * params.extent * params.extent).round() as usize;
    let mut points = Vec::with_capacity(pulses * 2);
    for _ in 0..pulses {
        let x = rng.random_range(0.0..params.extent);
        let y = rng.random_range(0.0..params.extent);
        let under = roof_at(&buildings, x, y);
        let floor = ground_z + under.unwrap_or(0.0);
        let floor_z = floor + 0.03 * jitter.sample(&mut rng);
        match canopy_at(&trees, x, y) {
            Some((surface, crown_base)) => {
                let top = ground_z + surface.max(under.unwrap_or(0.0) + 0.5);
                let n: u8 = rng.random_range(2..=3);
                let first = top + 0.15 * jitter.sample(&mut rng);
                let mut zs = vec![first];
                if n == 3 {
                    let base = (ground_z + crown_base).min(top);
                    zs.push(rng.random_range(base..=top));
                }
                zs.push(floor_z);
                for (k, z) in zs.into_iter().enumerate() {
                    let last = k + 1 == n as usize;
                    let range = if last { (250, 450) } else { (60, 180) };
                    points.push(PointRecord {
                        x,
                        y,
                        z,
                        intensity: intensity(&mut rng, range),
                        return_number: k as u8 + 1,
                        num_returns: n,
                    });
                }
            }
            None => {
                let range = if under.is_some() {
                    (500, 800)
                } else {
                    (250, 450)
                };
                points.push(PointRecord {
                    x,
                    y,
                    z: floor_z,
                    intensity: intensity(&mut rng, range),
                    return_number: 1,
                    num_returns: 1,
                });
            }
        }
    }

    let grid = params.grid();
    let labels: Vec<Label> = (0..grid.cells())
        .map(|cell| {
            let (cx, cy) = grid.cell_center(cell);
            if canopy_at(&trees, cx, cy).is_some() {
                Label::Vegetation
            } else if roof_at(&buildings, cx, cy).is_some() {
                Label::Building
            } else {
                Label::Background
            }
        })
        .collect();
    let truth = SegmentationMap {
        width: grid.width,
        height: grid.height,
        labels,
    };
    let true_veg_fraction = canopy_cover(&trees, &grid);
    Ok(Scene {
        cloud: PointCloud::new(points),
        truth,
        true_veg_fraction,
        ground_z,
    })
}

/// `t_base - k_veg * fraction` plus seeded gaussian noise.
pub fn scene_temperature(law: &TemperatureLaw, true_veg_fraction: f64, scene_seed: u64) -> f64 {
    let clean = law.t_base - law.k_veg * true_veg_fraction;
    if law.noise_sigma == 0.0 {
        return clean;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(scene_seed ^ 0x7e3a_91c5_d2b4_f806));
    let noise = Normal::new(0.0, law.noise_sigma).expect("validated sigma");
    clean + noise.sample(&mut rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    pub n_scenes: usize,
    /// Upper bounds: each scene draws its tree and building densities
    /// uniformly from `[0, max]`.
    pub params: SceneParams,
    pub law: TemperatureLaw,
    pub seed: u64,
    pub train_fraction: f64,
}

impl CorpusConfig {
    pub fn new(n_scenes: usize, seed: u64) -> Self {
        Self {
            n_scenes,
            params: SceneParams::default(),
            law: TemperatureLaw::default(),
            seed,
            train_fraction: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusScene {
    pub id: String,
    pub params: SceneParams,
    pub scene: Scene,
    pub temperature: f64,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub scenes: Vec<CorpusScene>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &CorpusScene> {
        self.scenes.iter().filter(move |s| s.split == split)
    }

    pub fn temperature_range(&self) -> f64 {
        let (lo, hi) = self
            .scenes
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
                (lo.min(s.temperature), hi.max(s.temperature))
            });
        if self.scenes.is_empty() {
            0.0
        } else {
            hi - lo
        }
    }
}

pub fn scene_id(index: usize) -> String {
    format!("scene_{index:05}")
}

/// Generates the corpus in memory. Scene `i` uses the seed
/// `derive_seed(seed, scene_id(i))`; the split is a seeded shuffle.
pub fn generate_corpus(config: &CorpusConfig) -> Result<Corpus, String> {
    if config.n_scenes == 0 {
        return Err("n_scenes must be at least 1".into());
    }
    if !(0.0..=1.0).contains(&config.train_fraction) {
        return Err("train_fraction must lie in [0, 1]".into());
    }
    config.params.validate()?;
    config.law.validate()?;

    let mut order: Vec<usize> = (0..config.n_scenes).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
        config.seed,
        "split",
    )));
    let n_train = (config.n_scenes as f64 * config.train_fraction).round() as usize;
    let mut split = vec![Split::Test; config.n_scenes];
    for &i in &order[..n_train] {
        split[i] = Split::Train;
    }

    let scenes = (0..config.n_scenes)
        .into_par_iter()
        .map(|i| {
            let id = scene_id(i);
            let seed = derive_seed(config.seed, &id);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut params = config.params;
            params.tree_density = rng.random_range(0.0..=config.params.tree_density);
            params.building_density = rng.random_range(0.0..=config.params.building_density);
            let scene = generate_scene(&params, splitmix64(seed))?;
            let temperature = scene_temperature(&config.law, scene.true_veg_fraction, seed);
            Ok(CorpusScene {
                id,
                params,
                scene,
                temperature,
                split: split[i],
            })
        })
        .collect::<Result<Vec<_>, String>>()?;
    Ok(Corpus { scenes })
}

/// Relative path of the statistics stack a scene's manifest entry points to.
pub fn stack_path(id: &str) -> String {
    format!("rasters/{id}.lczm")
}

pub fn cloud_path(id: &str) -> String {
    format!("clouds/{id}.xyz")
}

pub fn thermal_path(id: &str) -> String {
    format!("thermal/{id}.asc")
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, IoError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(fs::File::create(path)?))
}

/// Writes clouds, constant thermal grids, `manifest.csv`, `split.csv` and
/// `truth.csv` under `dir`. Manifest raster paths name the stacks the
/// rasterize stage produces.
pub fn write_corpus(corpus: &Corpus, dir: &Path) -> Result<SceneManifest, IoError> {
    let mut entries = Vec::with_capacity(corpus.scenes.len());
    for s in &corpus.scenes {
        let mut w = create(&dir.join(cloud_path(&s.id)))?;
        write_point_cloud(&s.scene.cloud, &mut w)?;
        w.flush()?;

        let grid = s.params.grid();
        let thermal = Raster2D {
            width: grid.width,
            height: grid.height,
            cell_size: grid.cell_size,
            origin_x: grid.origin_x,
            origin_y: grid.origin_y,
            nodata: -9999.0,
            values: vec![s.temperature; grid.cells()],
        };
        let mut w = create(&dir.join(thermal_path(&s.id)))?;
        export_ascii_grid(&thermal, &mut w)?;
        w.flush()?;

        entries.push(ManifestEntry {
            scene_id: s.id.clone(),
            raster_path: stack_path(&s.id),
            temperature_kelvin: s.temperature,
        });
    }
    let manifest = SceneManifest { entries };
    write_manifest(&manifest, create(&dir.join("manifest.csv"))?)?;

    let mut w = create(&dir.join("split.csv"))?;
    writeln!(w, "scene_id,split")?;
    for s in &corpus.scenes {
        writeln!(w, "{},{}", s.id, s.split.name())?;
    }
    w.flush()?;

    let mut w = create(&dir.join("truth.csv"))?;
    writeln!(
        w,
        "scene_id,true_veg_fraction,tree_density,building_density"
    )?;
    for s in &corpus.scenes {
        writeln!(
            w,
            "{},{},{},{}",
            s.id, s.scene.true_veg_fraction, s.params.tree_density, s.params.building_density
        )?;
    }
    w.flush()?;
    Ok(manifest)
}

/// Reads `split.csv` back into `(scene_id, split)` pairs.
pub fn read_split(path: &Path) -> Result<Vec<(String, Split)>, IoError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some("scene_id,split") {
        return Err(IoError::Format(
            "split.csv header must be `scene_id,split`".into(),
        ));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let (id, s) = l
                .split_once(',')
                .ok_or_else(|| IoError::parse(i + 2, "expected two fields"))?;
            let split = match s {
                "train" => Split::Train,
                "test" => Split::Test,
                other => return Err(IoError::parse(i + 2, format!("unknown split `{other}`"))),
            };
            Ok((id.to_string(), split))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bare() -> SceneParams {
        SceneParams {
            tree_density: 0.0,
            building_density: 0.0,
            ..SceneParams::default()
        }
    }

    #[test]
    fn ground_only_scene() {
        let s = generate_scene(&bare(), 3).unwrap();
        assert_eq!(s.true_veg_fraction, 0.0);
        assert!(s.cloud.points.iter().all(|p| p.num_returns == 1));
        assert_eq!(s.cloud.len(), (16.0f64 * 16.0 * 8.0) as usize);
    }

    #[test]
    fn scenes_are_deterministic() {
        let p = SceneParams::default();
        assert_eq!(
            generate_scene(&p, 11).unwrap(),
            generate_scene(&p, 11).unwrap()
        );
        assert_ne!(
            generate_scene(&p, 11).unwrap().cloud,
            generate_scene(&p, 12).unwrap().cloud
        );
    }

    #[test]
    fn return_structure() {
        let s = generate_scene(&SceneParams::default(), 5).unwrap();
        for p in &s.cloud.points {
            assert!(p.return_number >= 1 && p.return_number <= p.num_returns);
            assert!(p.num_returns <= 3);
        }
    }

    #[test]
    fn invalid_params() {
        let p = SceneParams {
            crown_radius: (3.0, 1.0),
            ..SceneParams::default()
        };
        assert!(generate_scene(&p, 0).is_err());
        let p = SceneParams {
            tree_density: -0.1,
            ..SceneParams::default()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn noiseless_temperatures() {
        let law = TemperatureLaw {
            noise_sigma: 0.0,
            ..TemperatureLaw::default()
        };
        assert_eq!(scene_temperature(&law, 0.0, 9), 295.0);
        assert_eq!(scene_temperature(&law, 1.0, 9), 287.0);
    }

    #[test]
    fn split_proportions() {
        let c = generate_corpus(&CorpusConfig::new(10, 1)).unwrap();
        assert_eq!(c.split(Split::Train).count(), 8);
        assert_eq!(c.split(Split::Test).count(), 2);
        let again = generate_corpus(&CorpusConfig::new(10, 1)).unwrap();
        assert_eq!(c, again);
        assert!(generate_corpus(&CorpusConfig::new(0, 1)).is_err());
    }
}
