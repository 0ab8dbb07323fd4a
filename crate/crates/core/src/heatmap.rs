//! Heat tensors to image-resolution maps and colored overlays.
//!
//! Heat tensors use axes `(images, topics, rows, cols)`. Rows map to image
//! height and columns to image width.

use image::{Luma, Rgb, RgbImage, Rgba, RgbaImage, GrayImage};
use ndarray::{Array4, ArrayView3, ArrayView4, Axis};

use crate::error::{Error, Result};

/// Fixed high-contrast palette; topics beyond its length get golden-angle hues.
const PALETTE: [[u8; 3]; 10] = [
    [255, 215, 0],   // yellow
    [220, 20, 60],   // red
    [34, 139, 34],   // green
    [30, 144, 255],  // blue
    [255, 140, 0],   // orange
    [148, 0, 211],   // violet
    [0, 206, 209],   // turquoise
    [255, 105, 180], // pink
    [139, 69, 19],   // brown
    [128, 128, 0],   // olive
];

pub fn topic_color(topic: usize) -> Rgb<u8> {
    if let Some(c) = PALETTE.get(topic) {
        return Rgb(*c);
    }
    let hue = (topic as f64 * 137.507_764_050_037_85) % 360.0;
    hsv_to_rgb(hue, 0.85, 0.95)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> Rgb<u8> {
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let q = |u: f64| ((u + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    Rgb([q(r), q(g), q(b)])
}

pub fn palette(k: usize) -> Vec<Rgb<u8>> {
    (0..k).map(topic_color).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    PerImageMax,
}

/// Normalized, upsampled heat maps ready for rendering.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapStack {
    pub maps: Array4<f64>,
    pub topic_colors: Vec<Rgb<u8>>,
    pub source_dims: (usize, usize),
    pub normalization: Normalization,
}

impl HeatmapStack {
    /// Normalizes per image, then upsamples to `(height, width)`.
    pub fn build(heat: ArrayView4<'_, f64>, height: usize, width: usize) -> Result<Self> {
        let (_, k, d1, d2) = heat.dim();
        let normalized = normalize_heat(heat)?;
        let maps = upsample(normalized.view(), height, width)?;
        Ok(HeatmapStack {
            maps,
            topic_colors: palette(k),
            source_dims: (d1, d2),
            normalization: Normalization::PerImageMax,
        })
    }

    pub fn images(&self) -> usize {
        self.maps.len_of(Axis(0))
    }

    pub fn topics(&self) -> usize {
        self.maps.len_of(Axis(1))
    }
}

/// Divides every map of image `i` by the maximum over all of that image's
/// topics and locations. All-zero images stay zero.
pub fn normalize_heat(heat: ArrayView4<'_, f64>) -> Result<Array4<f64>> {
    if let Some((i, v)) = heat.iter().enumerate().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "heat entry {i} is {v}; heat must be finite and nonnegative"
        )));
    }
    let mut out = heat.to_owned();
    for mut image in out.axis_iter_mut(Axis(0)) {
        let max = image.iter().fold(0.0f64, |m, &v| m.max(v));
        if max > 0.0 {
            image.mapv_inplace(|v| v / max);
        }
    }
    Ok(out)
}

/// Source coordinate and blend weight for half-pixel-centred resampling.
fn sample_positions(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let pos = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

/// Bilinear upsampling with `align_corners = false` semantics.
pub fn upsample(heat: ArrayView4<'_, f64>, height: usize, width: usize) -> Result<Array4<f64>> {
    let (n, k, d1, d2) = heat.dim();
    if height < d1 || width < d2 {
        return Err(Error::InvalidInput(format!(
            "upsampling target {height}x{width} is smaller than the source {d1}x{d2}"
        )));
    }
    let rows = sample_positions(d1, height);
    let cols = sample_positions(d2, width);
    let mut out = Array4::zeros((n, k, height, width));
    for ((i, j, r, c), v) in out.indexed_iter_mut() {
        let (r0, r1, fr) = rows[r];
        let (c0, c1, fc) = cols[c];
        let top = heat[[i, j, r0, c0]] * (1.0 - fc) + heat[[i, j, r0, c1]] * fc;
        let bottom = heat[[i, j, r1, c0]] * (1.0 - fc) + heat[[i, j, r1, c1]] * fc;
        *v = top * (1.0 - fr) + bottom * fr;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct OverlayImage {
    pub raster: RgbaImage,
    pub image_id: String,
    pub model_id: String,
}

/// Composites, per pixel, the color of the strongest topic over `base` with
/// opacity `alpha_scale * heat`. Ties go to the lower topic index; the base
/// alpha channel is kept.
pub fn render_overlay(
    base: &RgbaImage,
    heat: ArrayView3<'_, f64>,
    colors: &[Rgb<u8>],
    alpha_scale: f64,
) -> Result<RgbaImage> {
    let (k, h, w) = heat.dim();
    if (base.width() as usize, base.height() as usize) != (w, h) {
        return Err(Error::shape(
            format!("{}x{} heat slice", w, h),
            format!("{}x{} image", base.width(), base.height()),
        ));
    }
    if colors.len() < k {
        return Err(Error::InvalidInput(format!("{} colors for {} topics", colors.len(), k)));
    }
    if !(0.0..=1.0).contains(&alpha_scale) {
        return Err(Error::InvalidInput(format!("alpha must be in [0, 1], got {alpha_scale}")));
    }
    let mut out = base.clone();
    for (x, y, px) in out.enumerate_pixels_mut() {
        let (r, c) = (y as usize, x as usize);
        let mut best = 0;
        for j in 1..k {
            if heat[[j, r, c]] > heat[[best, r, c]] {
                best = j;
            }
        }
        let alpha = (alpha_scale * heat[[best, r, c]]).clamp(0.0, 1.0);
        if alpha == 0.0 {
            continue;
        }
        let color = colors[best].0;
        for ch in 0..3 {
            let blended = (1.0 - alpha) * f64::from(px.0[ch]) + alpha * f64::from(color[ch]);
            px.0[ch] = blended.round().clamp(0.0, 255.0) as u8;
        }
    }
    Ok(out)
}

/// A single topic map as an 8-bit grayscale image.
pub fn topic_image(map: ndarray::ArrayView2<'_, f64>) -> GrayImage {
    let (h, w) = map.dim();
    GrayImage::from_fn(w as u32, h as u32, |x, y| {
        let v = map[[y as usize, x as usize]].clamp(0.0, 1.0);
        Luma([(v * 255.0).round() as u8])
    })
}

pub fn to_rgba(rgb: &RgbImage) -> RgbaImage {
    RgbaImage::from_fn(rgb.width(), rgb.height(), |x, y| {
        let p = rgb.get_pixel(x, y).0;
        Rgba([p[0], p[1], p[2], 255])
    })
}
