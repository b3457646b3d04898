//! Nearest-neighbour fields over a semi-dense region.
//!
//! The field is an exact Euclidean distance transform that keeps the
//! identity of the closest seed, computed with the separable lower-envelope
//! algorithm of Felzenszwalb and Huttenlocher: a 1-D pass along each row,
//! then a lower envelope of parabolas along each column.
//!
//! When several seeds are equally close, the one with the smallest row-major
//! index wins: the column envelope keeps the upper parabola on exact ties and
//! the row pass keeps the left seed.

use std::path::Path;

use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::image::{Pixel, SemiDenseRegion};

const NO_SEED: u32 = u32::MAX;

/// Per-pixel index of the closest region pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct NearestNeighbourField {
    width: usize,
    height: usize,
    /// Row-major linear index (`v * width + u`) of the nearest seed.
    nn: Vec<u32>,
    seed_count: usize,
}

/// Euclidean distance to the closest region pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField {
    width: usize,
    height: usize,
    dist: Vec<f64>,
}

/// Anything that can answer "which region pixel is closest to `p`".
pub trait NearestNeighbourLookup: Sync {
    fn width(&self) -> usize;
    fn height(&self) -> usize;
    fn lookup(&self, p: &Vector2<f64>) -> Result<Pixel>;
}

fn check_bounds(p: &Vector2<f64>, width: usize, height: usize) -> Result<()> {
    if !(p.x >= 0.0 && p.y >= 0.0 && p.x <= (width - 1) as f64 && p.y <= (height - 1) as f64) {
        return Err(Error::OutOfBounds(p.x, p.y));
    }
    Ok(())
}

impl NearestNeighbourField {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn seed_count(&self) -> usize {
        self.seed_count
    }

    /// Nearest seed of the integer pixel `(u, v)`.
    #[inline]
    pub fn nn_at(&self, u: usize, v: usize) -> Pixel {
        let i = self.nn[v * self.width + u] as usize;
        [(i % self.width) as u32, (i / self.width) as u32]
    }

    /// Squared distance from `(u, v)` to its nearest seed.
    #[inline]
    pub fn dist_sq_at(&self, u: usize, v: usize) -> u64 {
        let [su, sv] = self.nn_at(u, v);
        let du = u as i64 - i64::from(su);
        let dv = v as i64 - i64::from(sv);
        (du * du + dv * dv) as u64
    }
}

impl NearestNeighbourLookup for NearestNeighbourField {
    fn width(&self) -> usize {
        self.width
    }

    fn height(&self) -> usize {
        self.height
    }

    fn lookup(&self, p: &Vector2<f64>) -> Result<Pixel> {
        lookup_nn(self, p)
    }
}

/// Identity of the nearest seed at `round(p)`.
#[inline]
pub fn lookup_nn(field: &NearestNeighbourField, p: &Vector2<f64>) -> Result<Pixel> {
    check_bounds(p, field.width, field.height)?;
    Ok(field.nn_at(p.x.round() as usize, p.y.round() as usize))
}

/// Exact Euclidean nearest-neighbour field of `region` on a `width x height` grid.
pub fn build_annf(region: &SemiDenseRegion, width: usize, height: usize) -> Result<NearestNeighbourField> {
    build_annf_from_pixels(&region.pixels, width, height)
}

pub fn build_annf_from_pixels(pixels: &[Pixel], width: usize, height: usize) -> Result<NearestNeighbourField> {
    if pixels.is_empty() {
        return Err(Error::EmptyRegion);
    }
    if width == 0 || height == 0 || width * height > NO_SEED as usize {
        return Err(Error::invalid("field size", format!("{width}x{height}")));
    }
    let mut seed = vec![false; width * height];
    for &[u, v] in pixels {
        let (u, v) = (u as usize, v as usize);
        if u >= width || v >= height {
            return Err(Error::OutOfBounds(u as f64, v as f64));
        }
        seed[v * width + u] = true;
    }

    // Row pass: nearest seed column within each row.
    let mut row_seed = vec![NO_SEED; width * height];
    let mut row_d2 = vec![u64::MAX; width * height];
    for v in 0..height {
        let seeds = &seed[v * width..(v + 1) * width];
        let out_seed = &mut row_seed[v * width..(v + 1) * width];
        let out_d2 = &mut row_d2[v * width..(v + 1) * width];
        let mut left: Option<usize> = None;
        for u in 0..width {
            if seeds[u] {
                left = Some(u);
            }
            if let Some(l) = left {
                out_seed[u] = l as u32;
                out_d2[u] = ((u - l) * (u - l)) as u64;
            }
        }
        let mut right: Option<usize> = None;
        for u in (0..width).rev() {
            if seeds[u] {
                right = Some(u);
            }
            if let Some(r) = right {
                let d2 = ((r - u) * (r - u)) as u64;
                // Strict: on a tie the left seed stays.
                if d2 < out_d2[u] {
                    out_seed[u] = r as u32;
                    out_d2[u] = d2;
                }
            }
        }
    }

    // Column pass: lower envelope of parabolas (y - q)^2 + f(q).
    let mut nn = vec![NO_SEED; width * height];
    let mut sites: Vec<usize> = Vec::with_capacity(height);
    let mut f: Vec<f64> = Vec::with_capacity(height);
    let mut v_env: Vec<usize> = vec![0; height];
    let mut z: Vec<f64> = vec![0.0; height + 1];
    for u in 0..width {
        sites.clear();
        f.clear();
        for y in 0..height {
            let d2 = row_d2[y * width + u];
            if d2 != u64::MAX {
                sites.push(y);
                f.push(d2 as f64);
            }
        }
        debug_assert!(!sites.is_empty());

        let mut k = 0usize;
        v_env[0] = 0;
        z[0] = f64::NEG_INFINITY;
        z[1] = f64::INFINITY;
        for qi in 1..sites.len() {
            let q = sites[qi] as f64;
            let fq = f[qi] + q * q;
            loop {
                let vi = v_env[k];
                let p = sites[vi] as f64;
                let s = (fq - (f[vi] + p * p)) / (2.0 * (q - p));
                if s <= z[k] {
                    // k == 0 never pops since z[0] = -inf.
                    k -= 1;
                } else {
                    k += 1;
                    v_env[k] = qi;
                    z[k] = s;
                    z[k + 1] = f64::INFINITY;
                    break;
                }
            }
        }

        let mut k = 0usize;
        for y in 0..height {
            let yf = y as f64;
            while z[k + 1] < yf {
                k += 1;
            }
            let sy = sites[v_env[k]];
            nn[y * width + u] = (sy * width) as u32 + row_seed[sy * width + u];
        }
    }

    Ok(NearestNeighbourField {
        width,
        height,
        nn,
        seed_count: pixels.len(),
    })
}

impl DistanceField {
    pub fn from_annf(field: &NearestNeighbourField) -> Self {
        let mut dist = Vec::with_capacity(field.width * field.height);
        for v in 0..field.height {
            for u in 0..field.width {
                dist.push((field.dist_sq_at(u, v) as f64).sqrt());
            }
        }
        Self {
            width: field.width,
            height: field.height,
            dist,
        }
    }

    /// Arbitrary scalar field, mostly for tests and toy problems.
    pub fn from_values(width: usize, height: usize, dist: Vec<f64>) -> Result<Self> {
        if dist.len() != width * height {
            return Err(Error::SizeMismatch {
                expected: width * height,
                actual: dist.len(),
            });
        }
        Ok(Self { width, height, dist })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.dist
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.dist[v * self.width + u]
    }

    /// 16-bit PNG with `value = min(dist * scale, 65535)`.
    pub fn write_png(&self, path: &Path, scale: f64) -> Result<()> {
        let data: Vec<u16> = self
            .dist
            .iter()
            .map(|d| (d * scale).round().clamp(0.0, 65535.0) as u16)
            .collect();
        let img = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(self.width as u32, self.height as u32, data)
            .expect("buffer size matches dimensions");
        img.save(path).map_err(|source| Error::Codec {
            path: path.to_owned(),
            source,
        })
    }
}

pub fn build_distance_field(region: &SemiDenseRegion, width: usize, height: usize) -> Result<DistanceField> {
    Ok(DistanceField::from_annf(&build_annf(region, width, height)?))
}

/// Bilinear sample and its spatial gradient.
pub fn sample_bilinear_with_gradient(field: &DistanceField, p: &Vector2<f64>) -> Result<(f64, Vector2<f64>)> {
    check_bounds(p, field.width, field.height)?;
    let x0 = (p.x.floor() as usize).min(field.width - 1);
    let y0 = (p.y.floor() as usize).min(field.height - 1);
    let x1 = (x0 + 1).min(field.width - 1);
    let y1 = (y0 + 1).min(field.height - 1);
    let ax = p.x - x0 as f64;
    let ay = p.y - y0 as f64;
    let d00 = field.get(x0, y0);
    let d10 = field.get(x1, y0);
    let d01 = field.get(x0, y1);
    let d11 = field.get(x1, y1);
    let top = d00 + ax * (d10 - d00);
    let bottom = d01 + ax * (d11 - d01);
    let value = top + ay * (bottom - top);
    let grad = Vector2::new(
        (1.0 - ay) * (d10 - d00) + ay * (d11 - d01),
        (1.0 - ax) * (d01 - d00) + ax * (d11 - d10),
    );
    Ok((value, grad))
}

pub fn sample_bilinear(field: &DistanceField, p: &Vector2<f64>) -> Result<f64> {
    sample_bilinear_with_gradient(field, p).map(|(v, _)| v)
}
