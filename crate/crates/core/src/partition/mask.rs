//! Run-length-encoded binary image masks: exact pixel IoU and homography
//! warping without polygon bookkeeping.

use nalgebra::{Matrix3, Vector2};

use crate::geometry::{apply_homography, invert3};

/// Integer pixel rectangle, `(x, y)` top-left inclusive, `w x h` extent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PixelBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

/// Binary image mask stored as row-major runs. Runs never cross row
/// boundaries, are sorted, disjoint, and non-adjacent; the bbox is tight and
/// the mask is nonempty by construction.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    width: u32,
    height: u32,
    /// (flat start index, length) per run.
    runs: Vec<(u32, u32)>,
    bbox: PixelBox,
    pub caption: String,
    pub source_time: f64,
    /// Simulator-assigned obstacle tag; consumed by the ground-truth filter
    /// and the failed-push deny list, never by the planner.
    pub source_id: Option<u32>,
}

impl Mask {
    /// Build from pixel coordinates, dropping out-of-bounds pixels. Returns
    /// `None` when nothing remains.
    pub fn from_pixels<I: IntoIterator<Item = (u32, u32)>>(
        width: u32,
        height: u32,
        pixels: I,
        caption: impl Into<String>,
        source_time: f64,
        source_id: Option<u32>,
    ) -> Option<Self> {
        let mut flat: Vec<u32> = pixels
            .into_iter()
            .filter(|&(x, y)| x < width && y < height)
            .map(|(x, y)| y * width + x)
            .collect();
        if flat.is_empty() {
            return None;
        }
        flat.sort_unstable();
        flat.dedup();

        let mut runs: Vec<(u32, u32)> = Vec::new();
        let mut min_x = u32::MAX;
        let mut max_x = 0u32;
        let min_y = flat[0] / width;
        let max_y = flat[flat.len() - 1] / width;
        for &idx in &flat {
            let x = idx % width;
            min_x = min_x.min(x);
            max_x = max_x.max(x);
            match runs.last_mut() {
                // Extend only within the same row.
                Some((start, len)) if *start + *len == idx && idx % width != 0 => *len += 1,
                _ => runs.push((idx, 1)),
            }
        }
        Some(Self {
            width,
            height,
            runs,
            bbox: PixelBox {
                x: min_x,
                y: min_y,
                w: max_x - min_x + 1,
                h: max_y - min_y + 1,
            },
            caption: caption.into(),
            source_time,
            source_id,
        })
    }

    pub fn image_width(&self) -> u32 {
        self.width
    }

    pub fn image_height(&self) -> u32 {
        self.height
    }

    pub fn bbox(&self) -> PixelBox {
        self.bbox
    }

    pub fn pixel_count(&self) -> u64 {
        self.runs.iter().map(|&(_, len)| u64::from(len)).sum()
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        if x >= self.width || y >= self.height {
            return false;
        }
        let idx = y * self.width + x;
        match self.runs.binary_search_by(|&(start, _)| start.cmp(&idx)) {
            Ok(_) => true,
            Err(0) => false,
            Err(pos) => {
                let (start, len) = self.runs[pos - 1];
                idx < start + len
            }
        }
    }

    pub fn pixels(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width;
        self.runs
            .iter()
            .flat_map(move |&(start, len)| (start..start + len).map(move |i| (i % w, i / w)))
    }

    /// Pixel count of the run-list intersection.
    fn intersection_count(&self, other: &Mask) -> u64 {
        let mut a = 0usize;
        let mut b = 0usize;
        let mut acc = 0u64;
        while a < self.runs.len() && b < other.runs.len() {
            let (sa, la) = self.runs[a];
            let (sb, lb) = other.runs[b];
            let ea = sa + la;
            let eb = sb + lb;
            let lo = sa.max(sb);
            let hi = ea.min(eb);
            if hi > lo {
                acc += u64::from(hi - lo);
            }
            if ea <= eb {
                a += 1;
            } else {
                b += 1;
            }
        }
        acc
    }
}

/// Intersection-over-union by pixel count. Masks must live in the same image
/// frame.
pub fn iou(a: &Mask, b: &Mask) -> f64 {
    debug_assert_eq!(a.width, b.width);
    debug_assert_eq!(a.height, b.height);
    let inter = a.intersection_count(b);
    let union = a.pixel_count() + b.pixel_count() - inter;
    if union == 0 {
        return 0.0;
    }
    inter as f64 / union as f64
}

/// Warp a mask through a homography by inverse per-pixel mapping: a
/// destination pixel is set when its center maps back inside the source
/// mask. Pixels leaving the image are dropped; `None` when the result is
/// empty or the homography cannot be inverted.
pub fn warp_mask(mask: &Mask, h: &Matrix3<f64>) -> Option<Mask> {
    let h_inv = invert3(h)?;
    // Bound the destination region by forward-mapping the bbox corners.
    let bb = mask.bbox;
    let corners = [
        (bb.x, bb.y),
        (bb.x + bb.w, bb.y),
        (bb.x, bb.y + bb.h),
        (bb.x + bb.w, bb.y + bb.h),
    ];
    let mut lo_x = f64::INFINITY;
    let mut hi_x = f64::NEG_INFINITY;
    let mut lo_y = f64::INFINITY;
    let mut hi_y = f64::NEG_INFINITY;
    let mut valid = 0;
    for (cx, cy) in corners {
        if let Some(p) = apply_homography(h, Vector2::new(f64::from(cx), f64::from(cy))) {
            lo_x = lo_x.min(p.x);
            hi_x = hi_x.max(p.x);
            lo_y = lo_y.min(p.y);
            hi_y = hi_y.max(p.y);
            valid += 1;
        }
    }
    if valid < 4 {
        // Degenerate projection; scan the whole image.
        lo_x = 0.0;
        lo_y = 0.0;
        hi_x = f64::from(mask.width);
        hi_y = f64::from(mask.height);
    }
    let margin = 2.0;
    let x0 = (lo_x - margin).floor().max(0.0) as u32;
    let y0 = (lo_y - margin).floor().max(0.0) as u32;
    let x1 = ((hi_x + margin).ceil() as i64).clamp(0, i64::from(mask.width)) as u32;
    let y1 = ((hi_y + margin).ceil() as i64).clamp(0, i64::from(mask.height)) as u32;

    let mut pixels = Vec::new();
    for y in y0..y1 {
        for x in x0..x1 {
            let center = Vector2::new(f64::from(x) + 0.5, f64::from(y) + 0.5);
            if let Some(src) = apply_homography(&h_inv, center) {
                if src.x >= 0.0 && src.y >= 0.0 {
                    let sx = src.x as u32;
                    let sy = src.y as u32;
                    if mask.contains(sx, sy) {
                        pixels.push((x, y));
                    }
                }
            }
        }
    }
    Mask::from_pixels(
        mask.width,
        mask.height,
        pixels,
        mask.caption.clone(),
        mask.source_time,
        mask.source_id,
    )
}
