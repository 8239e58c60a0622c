//! Canny edge detection on rendered views.

use image::{GrayImage, Luma};

use super::render::{encode_png, Channel, ViewImage, DEPTH_BACKGROUND};
use crate::error::{invalid, Result};

pub const CANNY_SIGMA: f64 = 1.4;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeMap {
    pub width: usize,
    pub height: usize,
    pub edges: Vec<bool>,
}

impl EdgeMap {
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.edges[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.edges.iter().filter(|&&e| e).count()
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        let img = GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            Luma([if self.get(y as usize, x as usize) {
                255
            } else {
                0
            }])
        });
        let mut buf = std::io::Cursor::new(Vec::new());
        img.write_to(&mut buf, image::ImageFormat::Png)?;
        Ok(buf.into_inner())
    }
}

/// Intensity in `[0, 1]`: mean of the mapped normal channels, or inverted
/// depth. Background is 0 either way.
pub fn grayscale(img: &ViewImage) -> Vec<f64> {
    (0..img.height)
        .flat_map(|r| (0..img.width).map(move |c| (r, c)))
        .map(|(r, c)| {
            if !img.is_foreground(r, c) {
                return 0.0;
            }
            let p = img.pixel(r, c);
            match img.channel {
                Channel::Normal => p.iter().map(|v| (v + 1.0) * 0.5).sum::<f64>() / 3.0,
                Channel::Depth => 1.0 - p[0] / DEPTH_BACKGROUND,
            }
        })
        .collect()
}

pub fn canny_edges(img: &ViewImage, low: f64, high: f64) -> Result<EdgeMap> {
    canny_gray(&grayscale(img), img.width, img.height, low, high)
}

/// Gaussian blur, Sobel gradients, non-maximum suppression and hysteresis
/// with 8-connectivity. Thresholds apply to the Sobel magnitude.
pub fn canny_gray(
    gray: &[f64],
    width: usize,
    height: usize,
    low: f64,
    high: f64,
) -> Result<EdgeMap> {
    if !(low < high) {
        return Err(invalid(format!(
            "low threshold {low} must be below high {high}"
        )));
    }
    if gray.len() != width * height {
        return Err(invalid("image buffer does not match its dimensions"));
    }
    let (w, h) = (width, height);
    let at = |img: &[f64], r: isize, c: isize| {
        let r = r.clamp(0, h as isize - 1) as usize;
        let c = c.clamp(0, w as isize - 1) as usize;
        img[r * w + c]
    };

    let radius = (3.0 * CANNY_SIGMA).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * CANNY_SIGMA * CANNY_SIGMA)).exp())
        .collect();
    let ksum: f64 = kernel.iter().sum();
    let blur = |src: &[f64], dr: isize, dc: isize| -> Vec<f64> {
        let mut out = vec![0.0; w * h];
        for r in 0..h {
            for c in 0..w {
                let s: f64 = kernel
                    .iter()
                    .zip(-radius..=radius)
                    .map(|(k, i)| k * at(src, r as isize + i * dr, c as isize + i * dc))
                    .sum();
                out[r * w + c] = s / ksum;
            }
        }
        out
    };
    let smooth = blur(&blur(gray, 0, 1), 1, 0);

    let mut mag = vec![0.0; w * h];
    let mut dir = vec![0u8; w * h];
    for r in 0..h as isize {
        for c in 0..w as isize {
            let p = |dr, dc| at(&smooth, r + dr, c + dc);
            let gx = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
            let gy = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            let i = r as usize * w + c as usize;
            mag[i] = gx.hypot(gy);
            // Quantize the gradient direction to 0, 45, 90 or 135 degrees.
            let angle = gy.atan2(gx).to_degrees().rem_euclid(180.0);
            dir[i] = match angle {
                a if !(22.5..157.5).contains(&a) => 0,
                a if a < 67.5 => 1,
                a if a < 112.5 => 2,
                _ => 3,
            };
        }
    }

    // Strict on one side, inclusive on the other, so a plateau of two
    // equal maxima keeps exactly one pixel.
    let mut thin = vec![0.0; w * h];
    for r in 0..h as isize {
        for c in 0..w as isize {
            let i = r as usize * w + c as usize;
            let (dr, dc) = match dir[i] {
                0 => (0, 1),
                1 => (1, 1),
                2 => (1, 0),
                _ => (1, -1),
            };
            let m = mag[i];
            if m > at(&mag, r - dr, c - dc) && m >= at(&mag, r + dr, c + dc) {
                thin[i] = m;
            }
        }
    }

    let mut edges = vec![false; w * h];
    let mut stack: Vec<usize> = (0..w * h).filter(|&i| thin[i] >= high).collect();
    for &i in &stack {
        edges[i] = true;
    }
    while let Some(i) = stack.pop() {
        let (r, c) = ((i / w) as isize, (i % w) as isize);
        for dr in -1..=1 {
            for dc in -1..=1 {
                let (rr, cc) = (r + dr, c + dc);
                if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                    continue;
                }
                let j = rr as usize * w + cc as usize;
                if !edges[j] && thin[j] >= low {
                    edges[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    Ok(EdgeMap {
        width: w,
        height: h,
        edges,
    })
}

/// Grayscale PNG of an intensity buffer in `[0, 1]`.
pub fn gray_png(gray: &[f64], width: usize, height: usize) -> Result<Vec<u8>> {
    let img = image::RgbImage::from_fn(width as u32, height as u32, |x, y| {
        let g = (gray[y as usize * width + x as usize].clamp(0.0, 1.0) * 255.0).round() as u8;
        image::Rgb([g, g, g])
    });
    encode_png(&img)
}
