//! 8x8 procedural digit glyphs.

use super::{Dataset, Normalization};
use crate::error::{Error, Result};
use crate::rng::Philox;

pub const GLYPH_SIDE: usize = 8;
pub const GLYPH_DIM: usize = GLYPH_SIDE * GLYPH_SIDE;
pub const GLYPH_CLASSES: usize = 10;

// Digits drawn in the 5x6 box at rows 1..=6, cols 1..=5, so a one-pixel
// translation never clips ink.
const STENCILS: [[&str; GLYPH_SIDE]; GLYPH_CLASSES] = [
    [
        "........", "..###...", ".#...#..", ".#...#..", ".#...#..", ".#...#..", "..###...",
        "........",
    ],
    [
        "........", "...#....", "..##....", "...#....", "...#....", "...#....", "..###...",
        "........",
    ],
    [
        "........", "..###...", ".#...#..", "....#...", "...#....", "..#.....", ".#####..",
        "........",
    ],
    [
        "........", ".####...", ".....#..", "..###...", ".....#..", ".....#..", ".####...",
        "........",
    ],
    [
        "........", ".#..#...", ".#..#...", ".#####..", "....#...", "....#...", "....#...",
        "........",
    ],
    [
        "........", ".#####..", ".#......", ".####...", ".....#..", ".....#..", ".####...",
        "........",
    ],
    [
        "........", "..###...", ".#......", ".####...", ".#...#..", ".#...#..", "..###...",
        "........",
    ],
    [
        "........", ".#####..", ".....#..", "....#...", "...#....", "...#....", "...#....",
        "........",
    ],
    [
        "........", "..###...", ".#...#..", "..###...", ".#...#..", ".#...#..", "..###...",
        "........",
    ],
    [
        "........", "..###...", ".#...#..", ".#...#..", "..####..", ".....#..", "..###...",
        "........",
    ],
];

/// The ten stencils as `{0, 1}` pixel intensities, row-major.
pub fn glyph_stencils() -> Vec<[f64; GLYPH_DIM]> {
    STENCILS
        .iter()
        .map(|rows| {
            let mut px = [0.0; GLYPH_DIM];
            for (r, line) in rows.iter().enumerate() {
                for (c, ch) in line.bytes().enumerate() {
                    if ch == b'#' {
                        px[r * GLYPH_SIDE + c] = 1.0;
                    }
                }
            }
            px
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlyphOptions {
    pub n_per_class: usize,
    /// Standard deviation of the per-pixel Gaussian noise, in `[0, 0.5]`.
    pub jitter: f64,
    /// Shift each glyph by a uniform offset in `{-1, 0, 1}` on both axes.
    pub translate: bool,
}

impl Default for GlyphOptions {
    fn default() -> Self {
        GlyphOptions {
            n_per_class: 100,
            jitter: 0.1,
            translate: true,
        }
    }
}

/// Labeled glyphs in class order. Pixels are `clamp(stencil + jitter * z, 0, 1)`
/// mapped to `2p - 1`.
pub fn glyph_dataset(opts: GlyphOptions, seed: u64) -> Result<Dataset> {
    if !(0.0..=0.5).contains(&opts.jitter) {
        return Err(Error::config(format!(
            "glyph jitter must lie in [0, 0.5], got {}",
            opts.jitter
        )));
    }
    if opts.n_per_class == 0 {
        return Err(Error::config("glyph dataset needs n_per_class >= 1"));
    }
    let stencils = glyph_stencils();
    let mut rng = Philox::new(seed);
    let n = GLYPH_CLASSES * opts.n_per_class;
    let mut features = Vec::with_capacity(n * GLYPH_DIM);
    let mut labels = Vec::with_capacity(n);
    for (c, stencil) in stencils.iter().enumerate() {
        for _ in 0..opts.n_per_class {
            let (dy, dx) = if opts.translate {
                (rng.below(3) as isize - 1, rng.below(3) as isize - 1)
            } else {
                (0, 0)
            };
            for r in 0..GLYPH_SIDE as isize {
                for col in 0..GLYPH_SIDE as isize {
                    let (sr, sc) = (r - dy, col - dx);
                    let ink = if (0..GLYPH_SIDE as isize).contains(&sr)
                        && (0..GLYPH_SIDE as isize).contains(&sc)
                    {
                        stencil[sr as usize * GLYPH_SIDE + sc as usize]
                    } else {
                        0.0
                    };
                    let p = (ink + opts.jitter * rng.normal()).clamp(0.0, 1.0);
                    features.push(2.0 * p - 1.0);
                }
            }
            labels.push(c as u16);
        }
    }
    let mut ds = Dataset::new(GLYPH_DIM, features, Some(labels), GLYPH_CLASSES)?;
    ds.normalization = Some(Normalization {
        shift: vec![0.5; GLYPH_DIM],
        scale: vec![0.5; GLYPH_DIM],
    });
    Ok(ds)
}
