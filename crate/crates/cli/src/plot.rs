//! PNG bar charts for corpus histograms, labelled with the bitmap font.

use std::path::Path;

use image::{Rgb, RgbImage};
use scenetext_core::corpus::{font, Histogram};
use scenetext_core::{Error, Result};

const WIDTH: u32 = 480;
const HEIGHT: u32 = 280;
const MARGIN: u32 = 28;

const BACKGROUND: Rgb<u8> = Rgb([255, 255, 255]);
const INK: Rgb<u8> = Rgb([30, 30, 30]);
const BAR: Rgb<u8> = Rgb([70, 110, 180]);

fn text(img: &mut RgbImage, s: &str, x: i64, y: i64) {
    font::for_each_pixel(&s.to_uppercase(), x, y, |px, py| {
        if px >= 0 && py >= 0 && (px as u32) < img.width() && (py as u32) < img.height() {
            img.put_pixel(px as u32, py as u32, INK);
        }
    });
}

fn fill(img: &mut RgbImage, x0: u32, y0: u32, x1: u32, y1: u32, c: Rgb<u8>) {
    for y in y0..y1.min(img.height()) {
        for x in x0..x1.min(img.width()) {
            img.put_pixel(x, y, c);
        }
    }
}

/// One bar per bin from 0 to the largest value, empty bins included.
pub fn render_histogram(hist: &Histogram, title: &str) -> RgbImage {
    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, BACKGROUND);
    text(&mut img, title, MARGIN as i64, 8);

    let max_bin = hist.bins.keys().next_back().copied().unwrap_or(0);
    let max_count = hist.bins.values().copied().max().unwrap_or(0).max(1);
    let bins = max_bin as u32 + 1;
    let plot_w = WIDTH - 2 * MARGIN;
    let plot_h = HEIGHT - 3 * MARGIN;
    let base = HEIGHT - MARGIN - 4;
    let slot = (plot_w / bins).max(1);

    fill(&mut img, MARGIN, base, MARGIN + plot_w, base + 1, INK);
    for (&bin, &count) in &hist.bins {
        let h = ((count as f64 / max_count as f64) * plot_h as f64).round() as u32;
        let x = MARGIN + bin as u32 * slot;
        let gap = if slot > 3 { 1 } else { 0 };
        fill(&mut img, x + gap, base - h, x + slot - gap, base, BAR);
    }
    // label roughly every 40 px
    let every = (40 / slot).max(1) as usize;
    for bin in (0..=max_bin).step_by(every) {
        let x = MARGIN + bin as u32 * slot;
        text(&mut img, &bin.to_string(), x as i64, base as i64 + 4);
    }
    text(
        &mut img,
        &format!("max {max_count}"),
        (WIDTH - MARGIN) as i64 - font::text_width(&format!("max {max_count}")) as i64,
        8,
    );
    img
}

pub fn save_histogram(hist: &Histogram, title: &str, path: &Path) -> Result<()> {
    render_histogram(hist, title)
        .save(path)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}
