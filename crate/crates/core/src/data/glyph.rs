//! Procedural glyph renderer and the rule-based oracle that inverts it.
//!
//! Attribute bits, in order:
//!
//! | bit | meaning      | 0                      | 1                    |
//! |-----|--------------|------------------------|----------------------|
//! | 0   | shape        | filled square          | filled disc          |
//! | 1   | size         | r = round(0.19 s)      | r = round(0.31 s)    |
//! | 2   | column       | cx = round(0.31 s)     | cx = round(0.63 s)   |
//! | 3   | row          | cy = round(0.31 s)     | cy = round(0.63 s)   |
//! | 4   | intensity    | v = 0.5                | v = 1.0              |
//! | 5   | frame        | none                   | 1-px border at v/2   |
//! | 6   | haze         | none                   | +0.1 everywhere      |
//! | 7   | hollow       | filled                 | 1-px outline only    |
//!
//! Pixels are indexed `row * s + col`. The shape is drawn over the frame.

use super::DataError;
use crate::gaussian::Rng;

pub const NUM_ATTRIBUTES: usize = 8;

pub const SHAPE: usize = 0;
pub const SIZE: usize = 1;
pub const COLUMN: usize = 2;
pub const ROW: usize = 3;
pub const INTENSITY: usize = 4;
pub const FRAME: usize = 5;
pub const HAZE: usize = 6;
pub const HOLLOW: usize = 7;

pub const ATTRIBUTE_NAMES: [&str; NUM_ATTRIBUTES] =
    ["shape", "size", "column", "row", "intensity", "frame", "haze", "hollow"];

const HAZE_LEVEL: f64 = 0.1;
const LIT_THRESHOLD: f64 = 0.25;
const FILL_THRESHOLD: f64 = 0.55;

fn round_half_up(v: f64) -> i64 {
    (v + 0.5).floor() as i64
}

/// Renderer geometry for one canvas size.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Geometry {
    pub side: usize,
    pub radius: [i64; 2],
    pub center: [i64; 2],
}

impl Geometry {
    pub fn new(side: usize) -> Self {
        let s = side as f64;
        let large = round_half_up(0.31 * s);
        Self {
            side,
            radius: [round_half_up(0.19 * s).min(large - 1), large],
            center: [round_half_up(0.31 * s), round_half_up(0.63 * s)],
        }
    }
}

fn bit(y: &[f64], i: usize) -> bool {
    y[i] == 1.0
}

fn check_bits(y: &[f64]) -> Result<(), DataError> {
    if y.len() != NUM_ATTRIBUTES {
        return Err(DataError::AttributeLength(y.len()));
    }
    if let Some((i, &v)) = y.iter().enumerate().find(|(_, &v)| v != 0.0 && v != 1.0) {
        return Err(DataError::NonBinary { index: i, value: v });
    }
    Ok(())
}

/// Renders the glyph for attribute bits `y` on a `side × side` canvas,
/// adding per-pixel N(0, noise²) when `rng` is given, then clipping to [0, 1].
pub fn render_glyph(y: &[f64], side: usize, noise: Option<(f64, &mut Rng)>) -> Result<Vec<f64>, DataError> {
    check_bits(y)?;
    let g = Geometry::new(side);
    let s = side as i64;
    let v = if bit(y, INTENSITY) { 1.0 } else { 0.5 };
    let r = g.radius[bit(y, SIZE) as usize];
    let cx = g.center[bit(y, COLUMN) as usize];
    let cy = g.center[bit(y, ROW) as usize];
    let disc = bit(y, SHAPE);

    let inside = |row: i64, col: i64| {
        let (dx, dy) = (col - cx, row - cy);
        if disc {
            dx * dx + dy * dy <= r * r
        } else {
            dx.abs() <= r && dy.abs() <= r
        }
    };

    let mut img = vec![0.0; side * side];
    if bit(y, FRAME) {
        for row in 0..s {
            for col in 0..s {
                if row == 0 || col == 0 || row == s - 1 || col == s - 1 {
                    img[(row * s + col) as usize] = v / 2.0;
                }
            }
        }
    }
    for row in 0..s {
        for col in 0..s {
            if !inside(row, col) {
                continue;
            }
            if bit(y, HOLLOW) {
                let interior = [(1, 0), (-1, 0), (0, 1), (0, -1)]
                    .iter()
                    .all(|(a, b)| inside(row + a, col + b));
                if interior {
                    continue;
                }
            }
            img[(row * s + col) as usize] = v;
        }
    }
    if bit(y, HAZE) {
        for p in &mut img {
            *p += HAZE_LEVEL;
        }
    }
    if let Some((sigma, rng)) = noise {
        for p in &mut img {
            *p += sigma * rng.normal();
        }
    }
    for p in &mut img {
        *p = p.clamp(0.0, 1.0);
    }
    Ok(img)
}

/// Oracle output: decoded bits and a per-bit confidence in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct OracleReading {
    pub bits: [u8; NUM_ATTRIBUTES],
    pub confidence: [f64; NUM_ATTRIBUTES],
}

impl OracleReading {
    pub fn bits_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| b as f64).collect()
    }
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn margin(value: f64, threshold: f64, scale: f64) -> f64 {
    ((value - threshold).abs() / scale).min(1.0)
}

/// Reads attribute bits back from an image.
///
/// Rules, on the interior (canvas minus its 1-pixel border):
/// haze from the median of dark pixels, frame from the border median,
/// lit pixels at more than 0.25 above the haze floor, size from the lit
/// bounding-box extent, position from the bounding-box centre, intensity
/// from the brightest lit pixel, shape from whether the bounding-box
/// corners are lit, hollowness from the bounding-box fill ratio.
///
/// Exact on every noiseless render for `side ≥ 14`. Below that a small
/// filled disc and a small hollow square have overlapping fill ratios.
pub fn attribute_oracle(x: &[f64], side: usize) -> OracleReading {
    assert_eq!(x.len(), side * side, "image does not match side {side}");
    let g = Geometry::new(side);
    let s = side;
    let mut bits = [0u8; NUM_ATTRIBUTES];
    let mut conf = [0.0; NUM_ATTRIBUTES];

    let at = |row: usize, col: usize| x[row * s + col];
    let is_border = |row: usize, col: usize| row == 0 || col == 0 || row == s - 1 || col == s - 1;

    let mut dark: Vec<f64> = (0..s * s)
        .filter(|&i| !is_border(i / s, i % s))
        .map(|i| x[i])
        .filter(|&v| v <= 0.3)
        .collect();
    let floor = median(&mut dark);
    let haze = floor > HAZE_LEVEL / 2.0;
    bits[HAZE] = haze as u8;
    conf[HAZE] = margin(floor, HAZE_LEVEL / 2.0, HAZE_LEVEL / 2.0);
    let base = if haze { HAZE_LEVEL } else { 0.0 };

    let mut border: Vec<f64> = (0..s * s)
        .filter(|&i| is_border(i / s, i % s))
        .map(|i| x[i] - base)
        .collect();
    let border_level = median(&mut border);
    bits[FRAME] = (border_level > 0.125) as u8;
    conf[FRAME] = margin(border_level, 0.125, 0.125);

    let lit = |row: usize, col: usize| !is_border(row, col) && at(row, col) - base > LIT_THRESHOLD;
    let mut bbox: Option<(usize, usize, usize, usize)> = None;
    let mut count = 0usize;
    let mut peak = f64::NEG_INFINITY;
    for row in 1..s - 1 {
        for col in 1..s - 1 {
            if lit(row, col) {
                count += 1;
                peak = peak.max(at(row, col) - base);
                bbox = Some(match bbox {
                    None => (row, row, col, col),
                    Some((r0, r1, c0, c1)) => (r0.min(row), r1.max(row), c0.min(col), c1.max(col)),
                });
            }
        }
    }
    let Some((r0, r1, c0, c1)) = bbox else {
        return OracleReading {
            bits,
            confidence: conf,
        };
    };

    let h = r1 - r0 + 1;
    let w = c1 - c0 + 1;
    let extent = h.max(w) as f64;
    let small = (2 * g.radius[0] + 1) as f64;
    // a large glyph may lose one row or column to the border
    let large = (2 * g.radius[1]) as f64;
    let size_cut = 0.5 * (small + large);
    bits[SIZE] = (extent > size_cut) as u8;
    conf[SIZE] = margin(extent, size_cut, 0.5 * (large - small).max(1.0));

    let pos_cut = 0.5 * (g.center[0] + g.center[1]) as f64;
    let pos_scale = 0.5 * (g.center[1] - g.center[0]) as f64;
    let col_center = 0.5 * (c0 + c1) as f64;
    let row_center = 0.5 * (r0 + r1) as f64;
    bits[COLUMN] = (col_center > pos_cut) as u8;
    conf[COLUMN] = margin(col_center, pos_cut, pos_scale);
    bits[ROW] = (row_center > pos_cut) as u8;
    conf[ROW] = margin(row_center, pos_cut, pos_scale);

    bits[INTENSITY] = (peak > 0.75) as u8;
    conf[INTENSITY] = margin(peak, 0.75, 0.25);

    let corners = [(r0, c0), (r0, c1), (r1, c0), (r1, c1)]
        .iter()
        .filter(|&&(r, c)| lit(r, c))
        .count() as f64;
    bits[SHAPE] = (corners < 2.0) as u8;
    conf[SHAPE] = margin(corners, 2.0, 2.0);

    let fill = count as f64 / (h * w) as f64;
    bits[HOLLOW] = (fill < FILL_THRESHOLD) as u8;
    conf[HOLLOW] = margin(fill, FILL_THRESHOLD, 0.2);

    OracleReading {
        bits,
        confidence: conf,
    }
}

/// All 2⁸ attribute vectors, bit 0 least significant.
pub fn all_attribute_vectors() -> Vec<Vec<f64>> {
    (0..1u32 << NUM_ATTRIBUTES)
        .map(|code| (0..NUM_ATTRIBUTES).map(|i| ((code >> i) & 1) as f64).collect())
        .collect()
}
