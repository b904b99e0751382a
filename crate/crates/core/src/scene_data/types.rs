//! Domain types for co-registered pre/post scene pairs and their labels.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reserved grade-map code for pixels whose true grade is unknown.
/// Only ever appears in ground-truth masks; excluded from all scoring.
pub const UNCLASSIFIED: u8 = 255;

/// Ordinal building damage grade. Code 0 in grade maps means background
/// (no building) and is not a damage grade.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DamageGrade {
    NoDamage,
    Minor,
    Major,
    Destroyed,
}

impl DamageGrade {
    pub const ALL: [DamageGrade; 4] = [
        DamageGrade::NoDamage,
        DamageGrade::Minor,
        DamageGrade::Major,
        DamageGrade::Destroyed,
    ];

    pub fn code(self) -> u8 {
        match self {
            DamageGrade::NoDamage => 1,
            DamageGrade::Minor => 2,
            DamageGrade::Major => 3,
            DamageGrade::Destroyed => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<DamageGrade> {
        match code {
            1 => Some(DamageGrade::NoDamage),
            2 => Some(DamageGrade::Minor),
            3 => Some(DamageGrade::Major),
            4 => Some(DamageGrade::Destroyed),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HazardType {
    Flood,
    Fire,
    Earthquake,
    Tsunami,
    Volcano,
    Wind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Holdout,
}

/// Multi-channel pixel grid with ground-sample-distance metadata.
/// Pixel layout is (channels, height, width); values live in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    pub pixels: Array3<f64>,
    /// Meters per pixel.
    pub gsd: f64,
}

impl RasterImage {
    pub fn new(pixels: Array3<f64>, gsd: f64) -> Result<RasterImage> {
        let (_, h, w) = pixels.dim();
        if h == 0 || w == 0 {
            return Err(Error::InvalidArgument("image dimensions must be >= 1".into()));
        }
        if gsd <= 0.0 {
            return Err(Error::InvalidArgument(format!("gsd must be > 0, got {gsd}")));
        }
        Ok(RasterImage { pixels, gsd })
    }

    pub fn zeros(channels: usize, height: usize, width: usize, gsd: f64) -> RasterImage {
        RasterImage {
            pixels: Array3::zeros((channels, height, width)),
            gsd,
        }
    }

    pub fn channels(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().2
    }
}

/// One labeled building footprint: a polygon in pixel coordinates of the
/// native grid plus its damage grade.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingAnnotation {
    pub polygon: Vec<(f64, f64)>,
    pub grade: DamageGrade,
}

/// Co-registered pre/post image pair with annotations and event metadata.
/// The unit of training and evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenePair {
    pub pre: RasterImage,
    pub post: RasterImage,
    pub annotations: Vec<BuildingAnnotation>,
    pub event_id: String,
    pub hazard_type: HazardType,
    pub split: Split,
}

impl ScenePair {
    /// Co-registration check: pre and post must share dimensions and gsd.
    pub fn validate(&self) -> Result<()> {
        if self.pre.pixels.dim() != self.post.pixels.dim() {
            return Err(Error::ShapeMismatch(format!(
                "pre {:?} vs post {:?}",
                self.pre.pixels.dim(),
                self.post.pixels.dim()
            )));
        }
        if self.pre.gsd != self.post.gsd {
            return Err(Error::InvalidArgument(format!(
                "pre gsd {} != post gsd {}",
                self.pre.gsd, self.post.gsd
            )));
        }
        Ok(())
    }
}

/// Per-pixel target/prediction volume: 1 localization channel followed by
/// 4 damage channels (grades 1-4). Layout (5, H, W).
#[derive(Debug, Clone, PartialEq)]
pub struct MaskStack {
    pub data: Array3<f64>,
}

pub const MASK_CHANNELS: usize = 5;

impl MaskStack {
    pub fn zeros(height: usize, width: usize) -> MaskStack {
        MaskStack {
            data: Array3::zeros((MASK_CHANNELS, height, width)),
        }
    }

    pub fn from_data(data: Array3<f64>) -> Result<MaskStack> {
        if data.dim().0 != MASK_CHANNELS {
            return Err(Error::ShapeMismatch(format!(
                "mask stack needs {} channels, got {}",
                MASK_CHANNELS,
                data.dim().0
            )));
        }
        Ok(MaskStack { data })
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    /// One-hot hard stack from a grade map. Codes 0 (background) and
    /// UNCLASSIFIED produce all-zero columns.
    pub fn from_grade_map(grades: &Array2<u8>) -> MaskStack {
        let (h, w) = grades.dim();
        let mut stack = MaskStack::zeros(h, w);
        for y in 0..h {
            for x in 0..w {
                let g = grades[(y, x)];
                if (1..=4).contains(&g) {
                    stack.data[(0, y, x)] = 1.0;
                    stack.data[(g as usize, y, x)] = 1.0;
                }
            }
        }
        stack
    }

    /// Collapse a hard stack back to a grade map (0 on background).
    pub fn to_grade_map(&self) -> Array2<u8> {
        let (_, h, w) = self.data.dim();
        let mut grades = Array2::zeros((h, w));
        for y in 0..h {
            for x in 0..w {
                if self.data[(0, y, x)] >= 0.5 {
                    for g in (1..=4).rev() {
                        if self.data[(g, y, x)] >= 0.5 {
                            grades[(y, x)] = g as u8;
                            break;
                        }
                    }
                }
            }
        }
        grades
    }
}
