//! File-based plot emission: small hand-drawn PNGs, no text rendering.
//! Series identity lives in the accompanying CSV; the images are for a
//! quick visual read of trends.

use std::path::Path;

use image::{Rgb, RgbImage};
use ndarray::ArrayD;

use crate::error::{Error, Result};
use crate::model::{IMG_CHANNELS, IMG_SIZE};

const WIDTH: u32 = 640;
const HEIGHT: u32 = 480;
const MARGIN: u32 = 40;

/// Distinguishable series colors, cycled.
const PALETTE: [[u8; 3]; 6] = [
    [202, 60, 60],
    [60, 120, 202],
    [60, 170, 90],
    [220, 160, 40],
    [140, 80, 190],
    [70, 70, 70],
];

/// Writes a generated sample as an upscaled PNG, mapping [-1, 1] to [0, 255].
pub fn save_image_png(path: &Path, img: &ArrayD<f64>, scale: u32) -> Result<()> {
    if img.shape() != [IMG_CHANNELS, IMG_SIZE, IMG_SIZE] {
        return Err(Error::shape(
            "save_image_png",
            &[IMG_CHANNELS, IMG_SIZE, IMG_SIZE],
            img.shape(),
        ));
    }
    let scale = scale.max(1);
    let side = IMG_SIZE as u32 * scale;
    let mut out = RgbImage::new(side, side);
    for (x, y, px) in out.enumerate_pixels_mut() {
        let r = (y / scale) as usize;
        let c = (x / scale) as usize;
        let mut rgb = [0u8; 3];
        for ch in 0..IMG_CHANNELS {
            let v = (img[[ch, r, c]].clamp(-1.0, 1.0) + 1.0) * 0.5;
            rgb[ch] = (v * 255.0).round() as u8;
        }
        *px = Rgb(rgb);
    }
    out.save(path).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    Ok(())
}

fn blank_canvas() -> RgbImage {
    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([255, 255, 255]));
    // Axes.
    for x in MARGIN..WIDTH - MARGIN {
        img.put_pixel(x, HEIGHT - MARGIN, Rgb([0, 0, 0]));
    }
    for y in MARGIN..HEIGHT - MARGIN {
        img.put_pixel(MARGIN, y, Rgb([0, 0, 0]));
    }
    img
}

fn draw_line(img: &mut RgbImage, a: (i64, i64), b: (i64, i64), color: Rgb<u8>) {
    // Bresenham.
    let (mut x0, mut y0) = a;
    let (x1, y1) = b;
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        if (0..WIDTH as i64).contains(&x0) && (0..HEIGHT as i64).contains(&y0) {
            img.put_pixel(x0 as u32, y0 as u32, color);
        }
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

fn value_bounds(series: &[Vec<f64>]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for s in series {
        for &v in s {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// One polyline per series over a shared index axis.
pub fn line_plot(path: &Path, series: &[Vec<f64>]) -> Result<()> {
    if series.is_empty() || series.iter().all(|s| s.is_empty()) {
        return Err(Error::InvalidArgument("nothing to plot".into()));
    }
    let mut img = blank_canvas();
    let (lo, hi) = value_bounds(series);
    let max_len = series.iter().map(Vec::len).max().unwrap();
    let plot_w = (WIDTH - 2 * MARGIN) as f64;
    let plot_h = (HEIGHT - 2 * MARGIN) as f64;
    for (si, s) in series.iter().enumerate() {
        if s.is_empty() {
            continue;
        }
        let color = Rgb(PALETTE[si % PALETTE.len()]);
        let to_px = |i: usize, v: f64| -> (i64, i64) {
            let fx = if max_len > 1 { i as f64 / (max_len - 1) as f64 } else { 0.5 };
            let fy = (v - lo) / (hi - lo);
            (
                (MARGIN as f64 + fx * plot_w) as i64,
                (HEIGHT as f64 - MARGIN as f64 - fy * plot_h) as i64,
            )
        };
        let mut prev = to_px(0, s[0]);
        for (i, &v) in s.iter().enumerate().skip(1) {
            let cur = to_px(i, v);
            draw_line(&mut img, prev, cur, color);
            prev = cur;
        }
        if s.len() == 1 {
            draw_line(&mut img, prev, prev, color);
        }
    }
    img.save(path).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    Ok(())
}

/// Scatter of (x, y) points, one palette color per group, with an optional
/// horizontal reference line (the alignment floor in frontier plots).
pub fn scatter_plot(path: &Path, groups: &[Vec<(f64, f64)>], hline: Option<f64>) -> Result<()> {
    let total: usize = groups.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(Error::InvalidArgument("nothing to plot".into()));
    }
    let mut img = blank_canvas();
    let xs: Vec<f64> = groups.iter().flatten().map(|p| p.0).collect();
    let mut ys: Vec<f64> = groups.iter().flatten().map(|p| p.1).collect();
    if let Some(h) = hline {
        ys.push(h);
    }
    let (xlo, xhi) = value_bounds(&[xs]);
    let (ylo, yhi) = value_bounds(&[ys]);
    let plot_w = (WIDTH - 2 * MARGIN) as f64;
    let plot_h = (HEIGHT - 2 * MARGIN) as f64;
    let to_px = |x: f64, y: f64| -> (i64, i64) {
        (
            (MARGIN as f64 + (x - xlo) / (xhi - xlo) * plot_w) as i64,
            (HEIGHT as f64 - MARGIN as f64 - (y - ylo) / (yhi - ylo) * plot_h) as i64,
        )
    };
    if let Some(h) = hline {
        let (_, y) = to_px(xlo, h);
        draw_line(&mut img, (MARGIN as i64, y), ((WIDTH - MARGIN) as i64, y), Rgb([180, 180, 180]));
    }
    for (gi, group) in groups.iter().enumerate() {
        let color = Rgb(PALETTE[gi % PALETTE.len()]);
        for &(x, y) in group {
            let (px, py) = to_px(x, y);
            for dx in -2i64..=2 {
                for dy in -2i64..=2 {
                    if dx * dx + dy * dy <= 4 {
                        let (qx, qy) = (px + dx, py + dy);
                        if (0..WIDTH as i64).contains(&qx) && (0..HEIGHT as i64).contains(&qy) {
                            img.put_pixel(qx as u32, qy as u32, color);
                        }
                    }
                }
            }
        }
    }
    img.save(path).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    Ok(())
}
