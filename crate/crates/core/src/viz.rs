//! PNG output: rendered images, comparison grids, difference-map grids with
//! a blue→red colormap, and a minimal bar chart for metric comparisons.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::ImageTensor;

fn to_u8(x: f64) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn to_rgb_image<S: Scalar>(img: &ImageTensor<S>) -> RgbImage {
    let mut out = RgbImage::new(img.w as u32, img.h as u32);
    for r in 0..img.h {
        for c in 0..img.w {
            let px = img.pixel(r, c);
            out.put_pixel(
                c as u32,
                r as u32,
                Rgb([to_u8(px[0].cast_f64()), to_u8(px[1].cast_f64()), to_u8(px[2].cast_f64())]),
            );
        }
    }
    out
}

pub fn save_png<S: Scalar>(path: &Path, img: &ImageTensor<S>) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    to_rgb_image(img)
        .save(path)
        .map_err(|e| Error::InvalidArg(format!("png write failed: {e}")))
}

/// Blue→white→red map for values in [0,1].
pub fn colormap(v: f64) -> [u8; 3] {
    let v = v.clamp(0.0, 1.0);
    if v < 0.5 {
        let t = v / 0.5;
        [to_u8(t), to_u8(t), 255]
    } else {
        let t = (v - 0.5) / 0.5;
        [255, to_u8(1.0 - t), to_u8(1.0 - t)]
    }
}

pub fn diff_map_image(map: &[f64], h: usize, w: usize) -> RgbImage {
    let mut out = RgbImage::new(w as u32, h as u32);
    for r in 0..h {
        for c in 0..w {
            let [red, green, blue] = colormap(map[r * w + c]);
            out.put_pixel(c as u32, r as u32, Rgb([red, green, blue]));
        }
    }
    out
}

/// A cell of a grid: pixels plus an optional marker strip of colors drawn
/// underneath (used to flag adjusted attributes by their palette color).
pub struct GridCell {
    pub image: RgbImage,
    pub markers: Vec<[u8; 3]>,
}

/// Assembles rows×cols cells (row-major) into one PNG with 2px separators
/// and an optional marker strip under each cell.
pub fn save_grid(path: &Path, cells: &[GridCell], rows: usize, cols: usize) -> Result<()> {
    if cells.is_empty() || cells.len() != rows * cols {
        return Err(Error::InvalidArg(format!(
            "grid wants {rows}x{cols} cells, got {}",
            cells.len()
        )));
    }
    let cw = cells[0].image.width();
    let ch = cells[0].image.height();
    let strip = 6u32;
    let sep = 2u32;
    let total_w = cols as u32 * (cw + sep) + sep;
    let total_h = rows as u32 * (ch + strip + sep) + sep;
    let mut canvas = RgbImage::from_pixel(total_w, total_h, Rgb([24, 24, 24]));
    for (i, cell) in cells.iter().enumerate() {
        let r = (i / cols) as u32;
        let c = (i % cols) as u32;
        let x0 = sep + c * (cw + sep);
        let y0 = sep + r * (ch + strip + sep);
        for (x, y, px) in cell.image.enumerate_pixels() {
            canvas.put_pixel(x0 + x, y0 + y, *px);
        }
        // marker strip: one colored block per marker
        if !cell.markers.is_empty() {
            let block = (cw / cell.markers.len() as u32).max(1);
            for (mi, m) in cell.markers.iter().enumerate() {
                for dx in 0..block {
                    let x = x0 + mi as u32 * block + dx;
                    if x >= x0 + cw {
                        break;
                    }
                    for dy in 0..strip - 1 {
                        canvas.put_pixel(x, y0 + ch + dy, Rgb(*m));
                    }
                }
            }
        }
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    canvas
        .save(path)
        .map_err(|e| Error::InvalidArg(format!("png write failed: {e}")))
}

/// Bar chart of labeled values (one bar per entry), written as a PNG.
/// Bars are scaled to the max value; zero/negative values draw as slivers.
pub fn save_bar_chart(path: &Path, entries: &[(String, f64)], title_hue: u8) -> Result<()> {
    if entries.is_empty() {
        return Err(Error::InvalidArg("empty chart".into()));
    }
    let w = 60u32 * entries.len() as u32 + 20;
    let h = 220u32;
    let mut canvas = RgbImage::from_pixel(w, h, Rgb([250, 250, 250]));
    let max = entries.iter().map(|(_, v)| *v).fold(f64::MIN, f64::max).max(1e-12);
    for (i, (_, v)) in entries.iter().enumerate() {
        let frac = (v / max).clamp(0.0, 1.0);
        let bh = ((h as f64 - 40.0) * frac).max(2.0) as u32;
        let x0 = 20 + i as u32 * 60;
        for x in x0..x0 + 40 {
            for y in (h - 20 - bh)..(h - 20) {
                canvas.put_pixel(x, y, Rgb([title_hue, 90, 160]));
            }
        }
        // baseline tick
        for x in x0..x0 + 40 {
            canvas.put_pixel(x, h - 20, Rgb([30, 30, 30]));
        }
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    canvas
        .save(path)
        .map_err(|e| Error::InvalidArg(format!("png write failed: {e}")))?;
    // companion values file so the chart is auditable
    let txt: String = entries
        .iter()
        .map(|(k, v)| format!("{k}\t{v}\n"))
        .collect();
    std::fs::write(path.with_extension("tsv"), txt)?;
    Ok(())
}
