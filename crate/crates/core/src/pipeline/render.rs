//! Binary PGM/PPM output of BEV maps. Image row `r`, column `c` shows BEV
//! cell `(r, c)`, so x grows downward and y to the right.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::evalkit::Box3D;
use crate::numkit::Tensor;
use crate::viewtrans::BevGrid;

/// 8-bit grayscale raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

/// Channel-average a `[C, H, W]` map and min-max normalize it to 0..=255.
///
/// An all-zero map renders black. Any other constant map has no contrast
/// to stretch and renders mid-gray; the second return value flags that
/// case.
pub fn to_gray(map: &Tensor) -> Result<(GrayImage, bool)> {
    if map.rank() != 3 {
        return Err(Error::shape(
            "render",
            format!("expected [C, H, W], got {:?}", map.shape()),
        ));
    }
    map.check_finite("render")?;
    let (c, h, w) = (map.dim(0), map.dim(1), map.dim(2));
    let cells = h * w;
    let mut mean = vec![0.0; cells];
    for ch in 0..c {
        for (m, v) in mean.iter_mut().zip(&map.data()[ch * cells..(ch + 1) * cells]) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= c.max(1) as f64);
    let lo = mean.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = mean.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (pixels, degenerate) = if cells == 0 || hi == lo {
        let fill = if cells == 0 || lo == 0.0 { 0 } else { 128 };
        (vec![fill; cells], cells > 0 && lo != 0.0)
    } else {
        let span = hi - lo;
        (
            mean.iter().map(|v| ((v - lo) / span * 255.0).round() as u8).collect(),
            false,
        )
    };
    Ok((
        GrayImage {
            height: h,
            width: w,
            pixels,
        },
        degenerate,
    ))
}

pub fn write_pgm<W: Write>(mut w: W, img: &GrayImage) -> Result<()> {
    write!(w, "P5\n{} {}\n255\n", img.width, img.height)?;
    w.write_all(&img.pixels)?;
    Ok(())
}

/// Grayscale background with box outlines: ground truth in green,
/// detections in red, yellow where both fall on the same cell.
pub fn write_overlay_ppm<W: Write>(
    mut w: W,
    background: &GrayImage,
    grid: &BevGrid,
    ground_truth: &[Box3D],
    detections: &[Box3D],
) -> Result<()> {
    if (background.height, background.width) != (grid.rows, grid.cols) {
        return Err(Error::shape("render", "background does not match the BEV grid"));
    }
    let gt = outline(grid, ground_truth);
    let det = outline(grid, detections);
    write!(w, "P6\n{} {}\n255\n", grid.cols, grid.rows)?;
    let mut buf = Vec::with_capacity(3 * grid.cells());
    for i in 0..grid.cells() {
        let g = background.pixels[i];
        buf.extend_from_slice(&match (gt[i], det[i]) {
            (true, true) => [255, 255, 0],
            (true, false) => [0, 255, 0],
            (false, true) => [255, 0, 0],
            (false, false) => [g, g, g],
        });
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Cells inside a footprint with a 4-neighbor outside it (or on the border).
fn outline(grid: &BevGrid, boxes: &[Box3D]) -> Vec<bool> {
    let (rows, cols) = (grid.rows, grid.cols);
    let mut edge = vec![false; rows * cols];
    for b in boxes {
        let inside = |r: isize, c: isize| {
            r >= 0 && c >= 0 && (r as usize) < rows && (c as usize) < cols && {
                let (x, y) = grid.cell_center(r as usize, c as usize);
                b.contains_xy(x, y)
            }
        };
        for r in 0..rows as isize {
            for c in 0..cols as isize {
                if inside(r, c) && !(inside(r - 1, c) && inside(r + 1, c) && inside(r, c - 1) && inside(r, c + 1)) {
                    edge[r as usize * cols + c as usize] = true;
                }
            }
        }
    }
    edge
}

pub fn save_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_pgm(&mut f, img)?;
    f.flush()?;
    Ok(())
}
