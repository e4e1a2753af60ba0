//! Bilinear image resampling on row-major flattened grayscale images.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

fn check_len(image: ArrayView1<f64>, rows: usize, cols: usize) -> Result<()> {
    if image.len() != rows * cols {
        return Err(Error::Dimension(format!(
            "{} pixels do not form a {rows}x{cols} image",
            image.len()
        )));
    }
    Ok(())
}

/// Bilinear sample at (r, c) with zero outside the image.
fn sample(image: ArrayView1<f64>, rows: usize, cols: usize, r: f64, c: f64) -> f64 {
    let (r0, c0) = (r.floor(), c.floor());
    let (fr, fc) = (r - r0, c - c0);
    let px = |ri: f64, ci: f64| -> f64 {
        if ri < 0.0 || ci < 0.0 || ri >= rows as f64 || ci >= cols as f64 {
            0.0
        } else {
            image[ri as usize * cols + ci as usize]
        }
    };
    (1.0 - fr) * ((1.0 - fc) * px(r0, c0) + fc * px(r0, c0 + 1.0))
        + fr * ((1.0 - fc) * px(r0 + 1.0, c0) + fc * px(r0 + 1.0, c0 + 1.0))
}

/// Rotates a square image counter-clockwise (as displayed, rows growing
/// downwards) by `degrees` about its centre. Pixels mapped from outside the
/// frame are zero.
pub fn rotate(image: ArrayView1<f64>, rows: usize, cols: usize, degrees: f64) -> Result<Array1<f64>> {
    check_len(image, rows, cols)?;
    if rows != cols {
        return Err(Error::Format {
            offset: 0,
            message: format!("rotation needs square images, got {rows}x{cols}"),
        });
    }
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (cr, cc) = ((rows as f64 - 1.0) / 2.0, (cols as f64 - 1.0) / 2.0);
    let mut out = Array1::zeros(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            // inverse map of the output pixel, with y = −row so the turn is counter-clockwise on screen
            let (x, y) = (c as f64 - cc, cr - r as f64);
            let (sx, sy) = (cos * x + sin * y, -sin * x + cos * y);
            out[r * cols + c] = sample(image, rows, cols, cr - sy, cc + sx);
        }
    }
    Ok(out)
}

/// Bilinear resize with pixel-centre alignment and edge clamping.
pub fn resize(image: ArrayView1<f64>, rows: usize, cols: usize, new_rows: usize, new_cols: usize) -> Result<Array1<f64>> {
    check_len(image, rows, cols)?;
    if new_rows == 0 || new_cols == 0 {
        return Err(Error::Config(format!("cannot resize to {new_rows}x{new_cols}")));
    }
    let src = |dst: usize, from: usize, to: usize| {
        ((dst as f64 + 0.5) * from as f64 / to as f64 - 0.5).clamp(0.0, from as f64 - 1.0)
    };
    let mut out = Array1::zeros(new_rows * new_cols);
    for r in 0..new_rows {
        let sr = src(r, rows, new_rows);
        for c in 0..new_cols {
            let sc = src(c, cols, new_cols);
            let (r0, c0) = (sr.floor() as usize, sc.floor() as usize);
            let (r1, c1) = ((r0 + 1).min(rows - 1), (c0 + 1).min(cols - 1));
            let (fr, fc) = (sr - r0 as f64, sc - c0 as f64);
            let at = |ri: usize, ci: usize| image[ri * cols + ci];
            out[r * new_cols + c] = (1.0 - fr) * ((1.0 - fc) * at(r0, c0) + fc * at(r0, c1))
                + fr * ((1.0 - fc) * at(r1, c0) + fc * at(r1, c1));
        }
    }
    Ok(out)
}

pub fn rotate_all(images: ArrayView2<f64>, rows: usize, cols: usize, degrees: f64) -> Result<Array2<f64>> {
    map_rows(images, rows * cols, |img| rotate(img, rows, cols, degrees))
}

pub fn resize_all(
    images: ArrayView2<f64>,
    rows: usize,
    cols: usize,
    new_rows: usize,
    new_cols: usize,
) -> Result<Array2<f64>> {
    map_rows(images, new_rows * new_cols, |img| resize(img, rows, cols, new_rows, new_cols))
}

fn map_rows<F>(images: ArrayView2<f64>, width: usize, f: F) -> Result<Array2<f64>>
where
    F: Fn(ArrayView1<f64>) -> Result<Array1<f64>>,
{
    let mut out = Array2::zeros((images.nrows(), width));
    for (src, mut dst) in images.rows().into_iter().zip(out.rows_mut()) {
        dst.assign(&f(src)?);
    }
    Ok(out)
}
