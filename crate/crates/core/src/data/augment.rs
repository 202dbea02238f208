//! Multi-crop × multi-scale × mirror augmentation, as geometry only.
//!
//! Each image is first resized to `base × base`. For every scale `s` the
//! working region has side `floor(s·base)`; five `crop × crop` windows are
//! placed at its four corners and its center, and each window is taken
//! with and without a vertical mirror.

use std::fmt;
use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const SCALES: [f64; 4] = [1.0, 0.925, 0.875, 0.85];
pub const DEFAULT_BASE: u32 = 256;
/// Crop side at full scale.
pub const DEFAULT_CROP: u32 = 227;
/// Crop side used for the reduced scales when no explicit crop is given.
pub const DEFAULT_REDUCED_CROP: u32 = 196;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Corner {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
    Center,
}

impl Corner {
    pub const ALL: [Corner; 5] = [
        Corner::TopLeft,
        Corner::TopRight,
        Corner::BottomLeft,
        Corner::BottomRight,
        Corner::Center,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Corner::TopLeft => "TL",
            Corner::TopRight => "TR",
            Corner::BottomLeft => "BL",
            Corner::BottomRight => "BR",
            Corner::Center => "C",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mirror {
    None,
    Vertical,
}

impl fmt::Display for Mirror {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mirror::None => "none",
            Mirror::Vertical => "vertical",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crop {
    pub corner: Corner,
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Variant {
    pub scale: f64,
    /// Side of the scaled working region the crop lies in.
    pub side: u32,
    pub crop: Crop,
    pub mirror: Mirror,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentPlan {
    pub image_w: u32,
    pub image_h: u32,
    pub base: u32,
    pub variants: Vec<Variant>,
}

impl AugmentPlan {
    /// One `image_id,scale,corner,x,y,w,h,mirror` line per variant.
    pub fn to_csv_rows(&self, image_id: &str) -> String {
        let mut out = String::new();
        for v in &self.variants {
            let _ = writeln!(
                out,
                "{image_id},{},{},{},{},{},{},{}",
                v.scale,
                v.crop.corner.code(),
                v.crop.x,
                v.crop.y,
                v.crop.w,
                v.crop.h,
                v.mirror
            );
        }
        out
    }
}

/// Crop side used at each scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CropSize {
    /// 227 at full scale, 196 below it.
    Default,
    Fixed(u32),
}

impl CropSize {
    fn at(self, scale: f64) -> u32 {
        match self {
            CropSize::Fixed(c) => c,
            CropSize::Default if scale >= 1.0 => DEFAULT_CROP,
            CropSize::Default => DEFAULT_REDUCED_CROP,
        }
    }
}

pub fn augment_plan(image_w: u32, image_h: u32, base: u32, crop: CropSize) -> Result<AugmentPlan> {
    augment_plan_with_scales(image_w, image_h, base, crop, &SCALES)
}

pub fn augment_plan_with_scales(
    image_w: u32,
    image_h: u32,
    base: u32,
    crop: CropSize,
    scales: &[f64],
) -> Result<AugmentPlan> {
    if image_w == 0 || image_h == 0 || base == 0 {
        return Err(Error::Config(format!(
            "image {image_w}x{image_h} and base {base} must all be at least 1"
        )));
    }
    if let CropSize::Fixed(c) = crop {
        if c == 0 || c > base {
            return Err(Error::Config(format!("crop {c} must lie in 1..={base}")));
        }
    }
    let mut variants = Vec::with_capacity(scales.len() * Corner::ALL.len() * 2);
    for &scale in scales {
        if !(scale > 0.0 && scale <= 1.0) {
            return Err(Error::Config(format!("scale {scale} must lie in (0, 1]")));
        }
        let side = (scale * f64::from(base)).floor() as u32;
        let c = crop.at(scale);
        if side < c {
            return Err(Error::Plan { scale, side, crop: c });
        }
        let far = side - c;
        let mid = far / 2;
        for corner in Corner::ALL {
            let (x, y) = match corner {
                Corner::TopLeft => (0, 0),
                Corner::TopRight => (far, 0),
                Corner::BottomLeft => (0, far),
                Corner::BottomRight => (far, far),
                Corner::Center => (mid, mid),
            };
            for mirror in [Mirror::None, Mirror::Vertical] {
                variants.push(Variant {
                    scale,
                    side,
                    crop: Crop { corner, x, y, w: c, h: c },
                    mirror,
                });
            }
        }
    }
    Ok(AugmentPlan {
        image_w,
        image_h,
        base,
        variants,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_plan_has_forty_variants() {
        let plan = augment_plan(500, 375, DEFAULT_BASE, CropSize::Default).unwrap();
        assert_eq!(plan.variants.len(), 40);
    }

    #[test]
    fn full_scale_top_left_is_origin() {
        let plan = augment_plan(64, 64, DEFAULT_BASE, CropSize::Default).unwrap();
        let v = plan
            .variants
            .iter()
            .find(|v| v.scale == 1.0 && v.crop.corner == Corner::TopLeft)
            .unwrap();
        assert_eq!((v.crop.x, v.crop.y, v.crop.w, v.crop.h), (0, 0, 227, 227));
    }

    #[test]
    fn oversized_crop_at_smallest_scale_is_plan_error() {
        // floor(0.85·256) = 217 < 227
        let err = augment_plan_with_scales(256, 256, 256, CropSize::Fixed(227), &[0.85]).unwrap_err();
        match err {
            Error::Plan { scale, side, crop } => {
                assert_eq!((scale, side, crop), (0.85, 217, 227));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err_msg_mentions_scale(augment_plan(10, 10, 256, CropSize::Fixed(227))));
    }

    fn err_msg_mentions_scale(r: Result<AugmentPlan>) -> bool {
        r.unwrap_err().to_string().contains("0.875")
    }

    #[test]
    fn center_crop_offsets() {
        let plan = augment_plan_with_scales(1, 1, 256, CropSize::Fixed(196), &[0.925]).unwrap();
        // side 236, (236 − 196) / 2 = 20
        let c = plan.variants.iter().find(|v| v.crop.corner == Corner::Center).unwrap();
        assert_eq!((c.side, c.crop.x, c.crop.y), (236, 20, 20));
    }

    #[test]
    fn csv_export() {
        let plan = augment_plan(1, 1, 256, CropSize::Default).unwrap();
        let rows = plan.to_csv_rows("img7");
        assert_eq!(rows.lines().count(), 40);
        assert_eq!(rows.lines().next().unwrap(), "img7,1,TL,0,0,227,227,none");
        assert_eq!(rows.lines().nth(1).unwrap(), "img7,1,TL,0,0,227,227,vertical");
    }

    #[test]
    fn zero_dims_rejected() {
        assert!(augment_plan(0, 5, 256, CropSize::Default).is_err());
        assert!(augment_plan(5, 5, 256, CropSize::Fixed(300)).is_err());
    }
}
