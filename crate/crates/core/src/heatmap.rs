//! Gridded posterior maps: expected search time and two-sigma uncertainty.

use std::fmt::Write as _;
use std::io::Cursor;

use serde::{Deserialize, Serialize};

use crate::domain::FovBounds;
use crate::gp::{grid_points, GpModel};

pub const DEFAULT_GRID: (usize, usize) = (31, 19);
/// Normalized mean at or above which a cell is drawn as "not found".
pub const NOT_FOUND_MEAN: f64 = 0.98;
/// Normalized mean that maps to full red.
pub const RED_AT_MEAN: f64 = 0.9;
/// Side length, in pixels, of the square block drawn for one cell.
pub const DEFAULT_CELL_PX: usize = 8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HeatmapError {
    #[error("grid must be at least 2x2, got {nx}x{ny}")]
    GridTooSmall { nx: usize, ny: usize },
    #[error("degenerate bounds")]
    DegenerateBounds,
    #[error("encoding image: {0}")]
    Encode(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Which {
    Mean,
    TwoSigma,
}

/// Posterior evaluated at cell centers. Row 0 is the top (highest elevation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub bounds: FovBounds,
    pub nx: usize,
    pub ny: usize,
    pub mean: Vec<f64>,
    pub two_sigma: Vec<f64>,
    pub mask: Vec<bool>,
    pub mask_threshold: f64,
    /// Upper end of the two-sigma color scale, `2 * sigma_f`.
    pub two_sigma_scale: f64,
}

/// Default mask cut-off on the two-sigma value: `0.8 * sigma_f`.
pub fn default_mask_threshold(model: &GpModel) -> f64 {
    0.8 * model.theta().sigma_f2.sqrt()
}

pub fn evaluate_grid(model: &GpModel, bounds: &FovBounds, nx: usize, ny: usize, mask_threshold: f64) -> Result<Heatmap, HeatmapError> {
    if nx < 2 || ny < 2 {
        return Err(HeatmapError::GridTooSmall { nx, ny });
    }
    if bounds.is_degenerate() {
        return Err(HeatmapError::DegenerateBounds);
    }
    let preds = model.predict_unchecked(&grid_points(bounds, nx, ny));
    let mean = preds.iter().map(|p| p.mean).collect();
    let two_sigma: Vec<f64> = preds.iter().map(|p| p.two_sigma).collect();
    let mask = two_sigma.iter().map(|&s| s > mask_threshold).collect();
    Ok(Heatmap {
        bounds: *bounds,
        nx,
        ny,
        mean,
        two_sigma,
        mask,
        mask_threshold,
        two_sigma_scale: 2.0 * model.theta().sigma_f2.sqrt(),
    })
}

impl Heatmap {
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.nx + col
    }

    /// Center of cell `(row, col)` as `(azimuth, elevation)`.
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        let b = &self.bounds;
        let dx = b.width() / self.nx as f64;
        let dy = b.height() / self.ny as f64;
        (b.az_min + (col as f64 + 0.5) * dx, b.el_max - (row as f64 + 0.5) * dy)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("az_deg,el_deg,mean,two_sigma,masked\n");
        for row in 0..self.ny {
            for col in 0..self.nx {
                let i = self.index(row, col);
                let (az, el) = self.cell_center(row, col);
                let _ = writeln!(out, "{az:.6},{el:.6},{:.6},{:.6},{}", self.mean[i], self.two_sigma[i], u8::from(self.mask[i]));
            }
        }
        out
    }
}

/// An 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
}

impl Raster {
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    /// Binary PPM (P6).
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.rgb);
        out
    }

    pub fn to_png(&self) -> Result<Vec<u8>, HeatmapError> {
        let img = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.rgb.clone())
            .ok_or_else(|| HeatmapError::Encode("buffer size mismatch".into()))?;
        let mut buf = Cursor::new(Vec::new());
        img.write_to(&mut buf, image::ImageFormat::Png).map_err(|e| HeatmapError::Encode(e.to_string()))?;
        Ok(buf.into_inner())
    }
}

pub const WHITE: [u8; 3] = [255, 255, 255];
pub const BLACK: [u8; 3] = [0, 0, 0];

/// Linear green (t = 0) to red (t = 1) ramp.
pub fn ramp(t: f64) -> [u8; 3] {
    let t = if t.is_nan() { 1.0 } else { t.clamp(0.0, 1.0) };
    [(255.0 * t).round() as u8, (255.0 * (1.0 - t)).round() as u8, 0]
}

pub fn mean_color(mean: f64, masked: bool) -> [u8; 3] {
    if masked {
        WHITE
    } else if mean >= NOT_FOUND_MEAN {
        BLACK
    } else {
        ramp(mean / RED_AT_MEAN)
    }
}

pub fn two_sigma_color(two_sigma: f64, scale: f64) -> [u8; 3] {
    if scale > 0.0 {
        ramp(two_sigma / scale)
    } else {
        ramp(0.0)
    }
}

pub fn render(h: &Heatmap, which: Which) -> Raster {
    render_scaled(h, which, DEFAULT_CELL_PX)
}

pub fn render_scaled(h: &Heatmap, which: Which, cell_px: usize) -> Raster {
    let cell_px = cell_px.max(1);
    let (width, height) = (h.nx * cell_px, h.ny * cell_px);
    let mut rgb = Vec::with_capacity(3 * width * height);
    for y in 0..height {
        let row = y / cell_px;
        for x in 0..width {
            let i = h.index(row, x / cell_px);
            let c = match which {
                Which::Mean => mean_color(h.mean[i], h.mask[i]),
                Which::TwoSigma => two_sigma_color(h.two_sigma[i], h.two_sigma_scale),
            };
            rgb.extend_from_slice(&c);
        }
    }
    Raster { width, height, rgb }
}
