//! Catmull-Rom (a = −0.5) bicubic interpolation with analytic gradient.

use nalgebra::Vector2;

use crate::raster::Raster;

use super::CostMapError;

fn weights(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ]
}

fn weight_derivatives(t: f64) -> [f64; 4] {
    let t2 = t * t;
    [
        0.5 * (-3.0 * t2 + 4.0 * t - 1.0),
        0.5 * (9.0 * t2 - 10.0 * t),
        0.5 * (-9.0 * t2 + 8.0 * t + 1.0),
        0.5 * (3.0 * t2 - 2.0 * t),
    ]
}

/// Cell origin and fractional offset along one axis of length `n`.
fn cell(c: f64, n: usize) -> Option<(usize, f64)> {
    if n < 4 || !(c >= 1.0 && c <= (n - 2) as f64) {
        return None;
    }
    let i = (c.floor() as usize).min(n - 3);
    Some((i, c - i as f64))
}

/// Value and `(∂/∂u, ∂/∂v)` at sub-pixel `uv`; integer coordinates hit grid
/// values exactly. Valid on `[1, width−2] × [1, height−2]`.
pub fn sample_bicubic(
    grid: &Raster<f64>,
    uv: &Vector2<f64>,
) -> Result<(f64, Vector2<f64>), CostMapError> {
    let (Some((i, tx)), Some((j, ty))) = (cell(uv.x, grid.width()), cell(uv.y, grid.height()))
    else {
        return Err(CostMapError::OutOfBounds { u: uv.x, v: uv.y });
    };
    let wx = weights(tx);
    let wy = weights(ty);
    let dwx = weight_derivatives(tx);
    let dwy = weight_derivatives(ty);
    let (mut value, mut du, mut dv) = (0.0, 0.0, 0.0);
    for (r, (&wyr, &dwyr)) in wy.iter().zip(&dwy).enumerate() {
        let y = j + r - 1;
        let (mut row, mut drow) = (0.0, 0.0);
        for (c, (&wxc, &dwxc)) in wx.iter().zip(&dwx).enumerate() {
            let g = grid[(i + c - 1, y)];
            row += wxc * g;
            drow += dwxc * g;
        }
        value += wyr * row;
        du += wyr * drow;
        dv += dwyr * row;
    }
    Ok((value, Vector2::new(du, dv)))
}
