//! Tiling of feature cubes for fixed-size consumers.
//!
//! The canvas is split into vertical strips (full height, width
//! `ceil(W / n_tiles)`, last strip takes the remainder). Each strip gains
//! `buffer` columns of horizontal context on both sides — wrapping across
//! the azimuth seam — and is then zero-padded on the right/bottom so both
//! tile dimensions are multiples of 32. [`merge_tiles`] copies only the
//! core regions back, so `merge_tiles(tile(cube)) == cube` exactly.

use crate::error::{Error, Result};
use crate::features::FeatureCube;
use crate::real::Real;
use ndarray::{Array2, Array3};

/// One padded strip of the canvas.
#[derive(Debug, Clone, PartialEq)]
pub struct Tile<T> {
    /// `(C, padded_h, padded_w)` plane stack; content sits at the top-left.
    pub data: Array3<T>,
    /// Canvas column where this tile's core starts.
    pub core_col: usize,
    /// Core width in columns.
    pub core_width: usize,
    /// Buffered columns on each side of the core (inside `data`, the core
    /// therefore starts at column `buffer`).
    pub buffer: usize,
}

/// A complete tiling of one cube.
#[derive(Debug, Clone, PartialEq)]
pub struct TileSet<T> {
    pub tiles: Vec<Tile<T>>,
    pub names: Vec<String>,
    pub canvas_height: usize,
    pub canvas_width: usize,
    /// Validity mask of the source canvas, carried through for the merge.
    pub valid: Array2<bool>,
}

fn round_up_32(v: usize) -> usize {
    v.div_ceil(32) * 32
}

/// Splits `cube` into `n_tiles` buffered, padded strips.
pub fn tile<T: Real>(cube: &FeatureCube<T>, n_tiles: usize, buffer: usize) -> Result<TileSet<T>> {
    let (c, h, w) = (cube.num_channels(), cube.height(), cube.width());
    if n_tiles == 0 {
        return Err(Error::InvalidArgument("n_tiles must be positive".into()));
    }
    let base = w.div_ceil(n_tiles);
    if n_tiles > 1 && (n_tiles - 1) * base >= w {
        return Err(Error::InvalidArgument(format!(
            "{n_tiles} tiles of width {base} cannot partition {w} columns"
        )));
    }
    if buffer >= w {
        return Err(Error::InvalidArgument(format!(
            "buffer {buffer} must be smaller than the canvas width {w}"
        )));
    }
    let padded_h = round_up_32(h);
    let mut tiles = Vec::with_capacity(n_tiles);
    for t in 0..n_tiles {
        let core_col = t * base;
        let core_width = if t + 1 == n_tiles { w - core_col } else { base };
        let content_w = core_width + 2 * buffer;
        let padded_w = round_up_32(content_w);
        let mut data = Array3::from_elem((c, padded_h, padded_w), T::zero());
        for ch in 0..c {
            let plane = cube.channel_at(ch);
            for row in 0..h {
                for col in 0..content_w {
                    // signed offset from the core start, wrapped on azimuth
                    let canvas_col = (core_col + w + col - buffer) % w;
                    data[(ch, row, col)] = plane[(row, canvas_col)];
                }
            }
        }
        tiles.push(Tile {
            data,
            core_col,
            core_width,
            buffer,
        });
    }
    Ok(TileSet {
        tiles,
        names: cube.names().to_vec(),
        canvas_height: h,
        canvas_width: w,
        valid: cube.valid().clone(),
    })
}

/// Reassembles the canvas from tile cores.
pub fn merge_tiles<T: Real>(set: &TileSet<T>) -> Result<FeatureCube<T>> {
    let (h, w, c) = (set.canvas_height, set.canvas_width, set.names.len());
    let mut covered = vec![false; w];
    let mut data = Array3::from_elem((c, h, w), T::zero());
    for (k, tile) in set.tiles.iter().enumerate() {
        let (tc, th, tw) = tile.data.dim();
        if tc != c {
            return Err(Error::dims(format!("tile {k} channels"), c, tc));
        }
        if th < h || tw < tile.buffer + tile.core_width {
            return Err(Error::dims(
                format!("tile {k} extent"),
                format!("at least {h}x{}", tile.buffer + tile.core_width),
                format!("{th}x{tw}"),
            ));
        }
        if tile.core_col + tile.core_width > w {
            return Err(Error::InvalidArgument(format!(
                "tile {k} core {}..{} exceeds canvas width {w}",
                tile.core_col,
                tile.core_col + tile.core_width
            )));
        }
        for col in 0..tile.core_width {
            let canvas_col = tile.core_col + col;
            if covered[canvas_col] {
                return Err(Error::InvalidArgument(format!(
                    "tile {k} overlaps column {canvas_col}"
                )));
            }
            covered[canvas_col] = true;
            for ch in 0..c {
                for row in 0..h {
                    data[(ch, row, canvas_col)] = tile.data[(ch, row, tile.buffer + col)];
                }
            }
        }
    }
    if let Some(missing) = covered.iter().position(|&v| !v) {
        return Err(Error::InvalidArgument(format!(
            "tile cores leave canvas column {missing} uncovered"
        )));
    }
    FeatureCube::new(set.names.clone(), data, set.valid.clone())
}
