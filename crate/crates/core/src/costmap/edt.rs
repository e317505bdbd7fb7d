//! Exact Euclidean distance transform by separable lower envelopes of
//! parabolas, in integer arithmetic.

use crate::raster::Raster;

use super::CostMapError;

/// Distances to the nearest set pixel plus that pixel's coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField {
    pub distance: Raster<f64>,
    pub squared: Raster<u64>,
    pub nearest: Raster<(u32, u32)>,
}

/// Euclidean distance (pixels) from every pixel center to the nearest set pixel.
pub fn distance_transform(mask: &Raster<bool>) -> Result<Raster<f64>, CostMapError> {
    Ok(distance_field(mask)?.distance)
}

pub fn distance_field(mask: &Raster<bool>) -> Result<DistanceField, CostMapError> {
    let (w, h) = (mask.width(), mask.height());
    if !mask.data().iter().any(|&m| m) {
        return Err(CostMapError::EmptyMask);
    }

    // Column pass: nearest set row within each column.
    let mut col_sq: Raster<Option<u64>> = Raster::filled(w, h, None);
    let mut col_arg: Raster<u32> = Raster::filled(w, h, 0);
    let mut nearest_row = vec![None::<usize>; h];
    for x in 0..w {
        let mut last = None;
        for (y, slot) in nearest_row.iter_mut().enumerate() {
            if mask[(x, y)] {
                last = Some(y);
            }
            *slot = last;
        }
        let mut next = None;
        for y in (0..h).rev() {
            if mask[(x, y)] {
                next = Some(y);
            }
            let best = match (nearest_row[y], next) {
                (Some(a), Some(b)) => Some(if y - a <= b - y { a } else { b }),
                (a, b) => a.or(b),
            };
            if let Some(r) = best {
                let d = r.abs_diff(y) as u64;
                col_sq[(x, y)] = Some(d * d);
                col_arg[(x, y)] = r as u32;
            }
        }
    }

    // Row pass: lower envelope over columns with a finite column distance.
    let mut squared = Raster::filled(w, h, 0u64);
    let mut nearest = Raster::filled(w, h, (0u32, 0u32));
    let mut sites: Vec<(i64, i64)> = Vec::with_capacity(w);
    let mut bounds: Vec<(i128, i128)> = Vec::with_capacity(w);
    for y in 0..h {
        sites.clear();
        bounds.clear();
        for x in 0..w {
            let Some(f) = col_sq[(x, y)] else { continue };
            let q = (x as i64, f as i64);
            loop {
                let Some(&top) = sites.last() else {
                    sites.push(q);
                    break;
                };
                let s = intersection(top, q);
                // Pop the top parabola when it is never the minimum.
                if let Some(&b) = bounds.last() {
                    if frac_le(s, b) {
                        sites.pop();
                        bounds.pop();
                        continue;
                    }
                }
                bounds.push(s);
                sites.push(q);
                break;
            }
        }
        let mut k = 0;
        for x in 0..w {
            while k < bounds.len() && frac_lt(bounds[k], x as i128) {
                k += 1;
            }
            let (sx, sf) = sites[k];
            let dx = x as i64 - sx;
            squared[(x, y)] = (dx * dx + sf) as u64;
            nearest[(x, y)] = (sx as u32, col_arg[(sx as usize, y)]);
        }
    }
    let distance = squared.map(|&s| (s as f64).sqrt());
    Ok(DistanceField {
        distance,
        squared,
        nearest,
    })
}

/// Abscissa where the parabolas rooted at `a` and `b` (a.0 < b.0) meet, as a
/// fraction `(numerator, denominator)` with positive denominator.
fn intersection(a: (i64, i64), b: (i64, i64)) -> (i128, i128) {
    let num = (b.1 + b.0 * b.0) as i128 - (a.1 + a.0 * a.0) as i128;
    let den = 2 * (b.0 - a.0) as i128;
    (num, den)
}

fn frac_le(a: (i128, i128), b: (i128, i128)) -> bool {
    a.0 * b.1 <= b.0 * a.1
}

fn frac_lt(a: (i128, i128), x: i128) -> bool {
    a.0 < x * a.1
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force(mask: &Raster<bool>) -> Raster<u64> {
        let set: Vec<(i64, i64)> = mask
            .iter_pixels()
            .filter(|(_, _, &m)| m)
            .map(|(x, y, _)| (x as i64, y as i64))
            .collect();
        Raster::from_fn(mask.width(), mask.height(), |x, y| {
            set.iter()
                .map(|&(sx, sy)| {
                    let (dx, dy) = (x as i64 - sx, y as i64 - sy);
                    (dx * dx + dy * dy) as u64
                })
                .min()
                .unwrap()
        })
    }

    #[test]
    fn one_dimensional_row() {
        let mut mask = Raster::filled(5, 1, false);
        mask[(2, 0)] = true;
        assert_eq!(
            distance_transform(&mask).unwrap().data(),
            &[2.0, 1.0, 0.0, 1.0, 2.0]
        );
    }

    #[test]
    fn three_four_five() {
        let mut mask = Raster::filled(8, 8, false);
        mask[(0, 0)] = true;
        assert_eq!(distance_transform(&mask).unwrap()[(3, 4)], 5.0);
    }

    #[test]
    fn empty_mask_is_an_error() {
        let mask = Raster::filled(4, 4, false);
        assert!(matches!(
            distance_transform(&mask),
            Err(CostMapError::EmptyMask)
        ));
    }

    #[test]
    fn matches_brute_force_on_random_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for trial in 0..100 {
            let density = [0.002, 0.01, 0.05, 0.3][trial % 4];
            let mut mask = Raster::from_fn(32, 32, |_, _| rng.random_bool(density));
            if !mask.data().iter().any(|&m| m) {
                mask[(rng.random_range(0..32), rng.random_range(0..32))] = true;
            }
            let field = distance_field(&mask).unwrap();
            let oracle = brute_force(&mask);
            assert_eq!(field.squared, oracle, "trial {trial}");
            for (x, y, &(nx, ny)) in field.nearest.iter_pixels() {
                assert!(mask[(nx as usize, ny as usize)]);
                let (dx, dy) = (x as i64 - nx as i64, y as i64 - ny as i64);
                assert_eq!((dx * dx + dy * dy) as u64, oracle[(x, y)]);
            }
            for (x, y, &d) in field.distance.iter_pixels() {
                assert_eq!(d, (oracle[(x, y)] as f64).sqrt());
            }
        }
    }
}
