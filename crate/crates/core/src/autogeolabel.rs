//! Rule-based labeling of statistics stacks into vegetation, building and
//! background, and the vegetation fraction derived from it.

use std::collections::BTreeMap;
use std::io::Write;

use crate::rasterizer::{Channel, RasterStack};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Background,
    Building,
    Vegetation,
}

impl Label {
    /// Gray level used in PGM exports.
    pub fn gray(self) -> u8 {
        match self {
            Label::Background => 0,
            Label::Building => 128,
            Label::Vegetation => 255,
        }
    }
}

/// Thresholds in physical units (meters, fractions) applied to
/// de-normalized channels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelRules {
    pub veg_zstd_min: f64,
    pub veg_multiret_min: f64,
    pub bld_height_min: f64,
    pub bld_zstd_max: f64,
}

impl Default for LabelRules {
    fn default() -> Self {
        Self {
            veg_zstd_min: 0.5,
            veg_multiret_min: 0.3,
            bld_height_min: 3.0,
            bld_zstd_max: 0.4,
        }
    }
}

impl LabelRules {
    pub fn validate(&self) -> Result<(), String> {
        let all = [
            self.veg_zstd_min,
            self.veg_multiret_min,
            self.bld_height_min,
            self.bld_zstd_max,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err("label thresholds must be finite and non-negative".into());
        }
        if self.bld_zstd_max >= self.veg_zstd_min {
            return Err(format!(
                "bld_zstd_max ({}) must be below veg_zstd_min ({})",
                self.bld_zstd_max, self.veg_zstd_min
            ));
        }
        Ok(())
    }

    /// Label of one cell. Vegetation wins over building, building over
    /// background.
    pub fn classify(&self, z_std: f64, multi_return_fraction: f64, z_mean: f64) -> Label {
        if z_std >= self.veg_zstd_min && multi_return_fraction >= self.veg_multiret_min {
            Label::Vegetation
        } else if z_mean >= self.bld_height_min && z_std <= self.bld_zstd_max {
            Label::Building
        } else {
            Label::Background
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<Label>,
}

impl SegmentationMap {
    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// Binary PGM (P5), one byte per cell.
    pub fn write_pgm<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self.labels.iter().map(|l| l.gray()).collect();
        w.write_all(&bytes)
    }

    pub fn write_counts_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "label,count")?;
        writeln!(w, "background,{}", self.count(Label::Background))?;
        writeln!(w, "building,{}", self.count(Label::Building))?;
        writeln!(w, "vegetation,{}", self.count(Label::Vegetation))
    }
}

/// Labels every cell of a de-normalized stack.
pub fn segment(stack: &RasterStack, rules: &LabelRules) -> SegmentationMap {
    let zstd = stack.channel(Channel::ZStd);
    let multi = stack.channel(Channel::MultiReturnFraction);
    let zmean = stack.channel(Channel::ZMean);
    let labels = zstd
        .iter()
        .zip(multi)
        .zip(zmean)
        .map(|((&s, &m), &z)| rules.classify(s, m, z))
        .collect();
    SegmentationMap {
        width: stack.spec.width,
        height: stack.spec.height,
        labels,
    }
}

pub fn vegetation_fraction(map: &SegmentationMap) -> f64 {
    if map.labels.is_empty() {
        return 0.0;
    }
    map.count(Label::Vegetation) as f64 / map.labels.len() as f64
}

/// Mean `v'` per distinct Δt, sorted by Δt.
pub fn aggregate_fractions(tuples: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut groups: BTreeMap<u64, (f64, f64, usize)> = BTreeMap::new();
    for &(dt, v) in tuples {
        // -0.0 and 0.0 are the same sweep point
        let dt = if dt == 0.0 { 0.0 } else { dt };
        let key = ordered_key(dt);
        let e = groups.entry(key).or_insert((dt, 0.0, 0));
        e.1 += v;
        e.2 += 1;
    }
    groups
        .into_values()
        .map(|(dt, sum, n)| (dt, sum / n as f64))
        .collect()
}

/// Monotone map from f64 to u64 so that BTreeMap order matches numeric order.
fn ordered_key(x: f64) -> u64 {
    let bits = x.to_bits();
    if bits >> 63 == 1 {
        !bits
    } else {
        bits | (1 << 63)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rasterizer::GridSpec;

    fn one_cell(z_std: f64, multi: f64, z_mean: f64) -> RasterStack {
        let mut s = RasterStack::zeros(GridSpec::new(1, 1, 1.0).unwrap());
        s.channel_mut(Channel::ZStd)[0] = z_std;
        s.channel_mut(Channel::MultiReturnFraction)[0] = multi;
        s.channel_mut(Channel::ZMean)[0] = z_mean;
        s
    }

    #[test]
    fn rule_precedence() {
        let r = LabelRules::default();
        assert_eq!(
            segment(&one_cell(1.2, 0.6, 8.0), &r).labels,
            vec![Label::Vegetation]
        );
        assert_eq!(
            segment(&one_cell(0.1, 0.0, 10.0), &r).labels,
            vec![Label::Building]
        );
        assert_eq!(
            segment(&one_cell(1.2, 0.1, 8.0), &r).labels,
            vec![Label::Background]
        );
    }

    #[test]
    fn empty_scene_is_background() {
        let s = RasterStack::zeros(GridSpec::new(4, 3, 1.0).unwrap());
        let m = segment(&s, &LabelRules::default());
        assert_eq!(m.count(Label::Background), 12);
        assert_eq!(vegetation_fraction(&m), 0.0);
    }

    #[test]
    fn fractions() {
        let all = SegmentationMap {
            width: 2,
            height: 1,
            labels: vec![Label::Vegetation; 2],
        };
        assert_eq!(vegetation_fraction(&all), 1.0);
        let half = SegmentationMap {
            width: 2,
            height: 2,
            labels: vec![
                Label::Vegetation,
                Label::Building,
                Label::Vegetation,
                Label::Background,
            ],
        };
        assert_eq!(vegetation_fraction(&half), 0.5);
    }

    #[test]
    fn rules_validation() {
        assert!(LabelRules::default().validate().is_ok());
        let bad = LabelRules {
            bld_zstd_max: 0.6,
            ..LabelRules::default()
        };
        assert!(bad.validate().is_err());
        let neg = LabelRules {
            veg_multiret_min: -0.1,
            ..LabelRules::default()
        };
        assert!(neg.validate().is_err());
    }

    #[test]
    fn aggregation() {
        assert_eq!(aggregate_fractions(&[(1.0, 0.2)]), vec![(1.0, 0.2)]);
        assert_eq!(
            aggregate_fractions(&[(1.0, 0.1), (1.0, 0.3)]),
            vec![(1.0, 0.2)]
        );
        let rows = aggregate_fractions(&[
            (3.0, 0.0),
            (-1.0, 1.0),
            (-0.0, 0.5),
            (0.0, 0.7),
            (-10.0, 0.0),
        ]);
        let dts: Vec<f64> = rows.iter().map(|r| r.0).collect();
        assert_eq!(dts, vec![-10.0, -1.0, 0.0, 3.0]);
        assert!((rows[2].1 - 0.6).abs() < 1e-15);
    }

    #[test]
    fn pgm_layout() {
        let m = SegmentationMap {
            width: 3,
            height: 1,
            labels: vec![Label::Background, Label::Building, Label::Vegetation],
        };
        let mut buf = Vec::new();
        m.write_pgm(&mut buf).unwrap();
        assert_eq!(buf, b"P5\n3 1\n255\n\x00\x80\xff");
        let mut csv = Vec::new();
        m.write_counts_csv(&mut csv).unwrap();
        assert_eq!(
            String::from_utf8(csv).unwrap(),
            "label,count\nbackground,1\nbuilding,1\nvegetation,1\n"
        );
    }
}
