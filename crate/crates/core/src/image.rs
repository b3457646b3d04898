//! Raster types, smoothing, gradients and semi-dense region extraction.
//!
//! All filters are separable correlations with clamp-to-edge borders. The
//! gradient kernels are normalized so that a unit intensity ramp produces a
//! unit gradient, which keeps one threshold meaningful across extractors.

use std::fmt;
use std::str::FromStr;

use nalgebra::Vector2;

use crate::error::{Error, Result};

/// Integer pixel coordinate `[u, v]` (column, row).
pub type Pixel = [u32; 2];

/// Grayscale intensities in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

/// Depth in meters, row-major. Zero encodes "no measurement".
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

/// Horizontal and vertical derivatives plus their Euclidean norm.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientImage {
    pub width: usize,
    pub height: usize,
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
    pub norm: Vec<f64>,
}

/// Pixels whose gradient norm passes the threshold, with unit gradient
/// directions, in row-major scan order.
#[derive(Debug, Clone, PartialEq)]
pub struct SemiDenseRegion {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<Pixel>,
    pub grad_dirs: Vec<Vector2<f64>>,
}

fn check_len(width: usize, height: usize, len: usize) -> Result<()> {
    if width * height != len {
        return Err(Error::SizeMismatch {
            expected: width * height,
            actual: len,
        });
    }
    Ok(())
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        check_len(width, height, data.len())?;
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid("intensity", format!("{bad} is outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                data.push(f(u, v));
            }
        }
        Self::new(width, height, data)
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    /// 8-bit single channel, scaled by 1/255.
    pub fn from_luma8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        check_len(width, height, bytes.len())?;
        Ok(Self {
            width,
            height,
            data: bytes.iter().map(|&b| f64::from(b) / 255.0).collect(),
        })
    }

    /// Interleaved 8-bit RGB, converted with BT.601 luma weights.
    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        check_len(width, height, bytes.len() / 3)?;
        if bytes.len() % 3 != 0 {
            return Err(Error::SizeMismatch {
                expected: width * height * 3,
                actual: bytes.len(),
            });
        }
        let data = bytes
            .chunks_exact(3)
            .map(|px| {
                let luma = 0.299 * f64::from(px[0]) + 0.587 * f64::from(px[1]) + 0.114 * f64::from(px[2]);
                (luma / 255.0).clamp(0.0, 1.0)
            })
            .collect();
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.data[v * self.width + u]
    }
}

impl DepthImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        check_len(width, height, data.len())?;
        if let Some(bad) = data.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::invalid("depth", format!("{bad} is not a finite non-negative depth")));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                data.push(f(u, v));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.data[v * self.width + u]
    }
}

impl SemiDenseRegion {
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

/// The four extractor pipelines compared in the extractor ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExtractorVariant {
    Sobel,
    SmoothedSobel,
    Gradient5,
    SmoothedGradient5,
}

impl ExtractorVariant {
    pub const ALL: [ExtractorVariant; 4] = [
        ExtractorVariant::Sobel,
        ExtractorVariant::SmoothedSobel,
        ExtractorVariant::Gradient5,
        ExtractorVariant::SmoothedGradient5,
    ];

    pub fn is_smoothed(self) -> bool {
        matches!(self, ExtractorVariant::SmoothedSobel | ExtractorVariant::SmoothedGradient5)
    }

    pub fn name(self) -> &'static str {
        match self {
            ExtractorVariant::Sobel => "sobel",
            ExtractorVariant::SmoothedSobel => "smoothed_sobel",
            ExtractorVariant::Gradient5 => "gradient5",
            ExtractorVariant::SmoothedGradient5 => "smoothed_gradient5",
        }
    }

    /// Human-readable label used in ablation tables.
    pub fn label(self) -> &'static str {
        match self {
            ExtractorVariant::Sobel => "Sobel",
            ExtractorVariant::SmoothedSobel => "Smoothed + Sobel",
            ExtractorVariant::Gradient5 => "Gradient",
            ExtractorVariant::SmoothedGradient5 => "Smoothed + Gradient",
        }
    }
}

impl fmt::Display for ExtractorVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExtractorVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExtractorVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::invalid("extractor", format!("unknown variant `{s}`")))
    }
}

/// Parameters of the semi-dense extraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractorConfig {
    pub variant: ExtractorVariant,
    pub threshold: f64,
    pub gaussian_sigma: f64,
    /// Scale derivative kernels so a unit ramp yields a unit gradient.
    pub normalized: bool,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            variant: ExtractorVariant::SmoothedGradient5,
            threshold: 0.06,
            gaussian_sigma: 1.0,
            normalized: true,
        }
    }
}

pub const SOBEL3_SMOOTH: [f64; 3] = [1.0, 2.0, 1.0];
pub const SOBEL3_DERIV: [f64; 3] = [-1.0, 0.0, 1.0];
pub const SOBEL5_SMOOTH: [f64; 5] = [1.0, 4.0, 6.0, 4.0, 1.0];
pub const SOBEL5_DERIV: [f64; 5] = [-1.0, -2.0, 0.0, 2.0, 1.0];

/// Response of the raw 3x3 Sobel kernel to a unit ramp.
const SOBEL3_RAMP_GAIN: f64 = 8.0;
/// Response of the raw 5x5 kernel to a unit ramp.
const SOBEL5_RAMP_GAIN: f64 = 128.0;

/// Sampled, normalized 5-tap Gaussian.
pub fn gaussian_kernel5(sigma: f64) -> [f64; 5] {
    let mut k = [0.0; 5];
    for (i, w) in k.iter_mut().enumerate() {
        let x = i as f64 - 2.0;
        *w = (-x * x / (2.0 * sigma * sigma)).exp();
    }
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= sum);
    k
}

#[inline]
fn clamp_index(i: isize, len: usize) -> usize {
    i.clamp(0, len as isize - 1) as usize
}

/// Horizontal correlation of every row with `kernel` (odd length).
fn correlate_rows(src: &[f64], width: usize, height: usize, kernel: &[f64]) -> Vec<f64> {
    let r = kernel.len() / 2;
    let mut dst = vec![0.0; src.len()];
    for v in 0..height {
        let row = &src[v * width..(v + 1) * width];
        let out = &mut dst[v * width..(v + 1) * width];
        for (u, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            if u >= r && u + r < width {
                let window = &row[u - r..=u + r];
                for (k, x) in kernel.iter().zip(window) {
                    acc += k * x;
                }
            } else {
                for (i, k) in kernel.iter().enumerate() {
                    acc += k * row[clamp_index(u as isize + i as isize - r as isize, width)];
                }
            }
            *o = acc;
        }
    }
    dst
}

/// Vertical correlation; accumulates whole rows so the inner loop is contiguous.
fn correlate_cols(src: &[f64], width: usize, height: usize, kernel: &[f64]) -> Vec<f64> {
    let r = kernel.len() / 2;
    let mut dst = vec![0.0; src.len()];
    for v in 0..height {
        let out = &mut dst[v * width..(v + 1) * width];
        for (i, &k) in kernel.iter().enumerate() {
            if k == 0.0 {
                continue;
            }
            let sv = clamp_index(v as isize + i as isize - r as isize, height);
            let row = &src[sv * width..(sv + 1) * width];
            for (o, x) in out.iter_mut().zip(row) {
                *o += k * x;
            }
        }
    }
    dst
}

fn require_min(width: usize, height: usize, min: usize) -> Result<()> {
    if width < min || height < min {
        return Err(Error::ImageTooSmall { width, height, min });
    }
    Ok(())
}

/// 5x5 separable Gaussian blur.
pub fn gaussian_smooth(img: &GrayImage, sigma: f64) -> Result<GrayImage> {
    require_min(img.width, img.height, 5)?;
    if !(sigma > 0.0) {
        return Err(Error::invalid("gaussian_sigma", "must be positive"));
    }
    let k = gaussian_kernel5(sigma);
    let tmp = correlate_rows(&img.data, img.width, img.height, &k);
    let mut data = correlate_cols(&tmp, img.width, img.height, &k);
    // Rounding can push a saturated pixel a hair past 1.
    data.iter_mut().for_each(|x| *x = x.clamp(0.0, 1.0));
    Ok(GrayImage {
        width: img.width,
        height: img.height,
        data,
    })
}

fn separable_gradient(img: &GrayImage, smooth: &[f64], deriv: &[f64], scale: f64) -> GradientImage {
    let (w, h) = (img.width, img.height);
    let dx = correlate_rows(&img.data, w, h, deriv);
    let mut gx = correlate_cols(&dx, w, h, smooth);
    let sx = correlate_rows(&img.data, w, h, smooth);
    let mut gy = correlate_cols(&sx, w, h, deriv);
    gx.iter_mut().for_each(|x| *x *= scale);
    gy.iter_mut().for_each(|x| *x *= scale);
    let norm = gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).collect();
    GradientImage {
        width: w,
        height: h,
        gx,
        gy,
        norm,
    }
}

/// 3x3 Sobel gradient, scaled by 1/8 so a unit ramp gives unit response.
pub fn gradient_sobel3(img: &GrayImage) -> Result<GradientImage> {
    gradient_sobel3_scaled(img, true)
}

pub fn gradient_sobel3_scaled(img: &GrayImage, normalized: bool) -> Result<GradientImage> {
    require_min(img.width, img.height, 3)?;
    let scale = if normalized { 1.0 / SOBEL3_RAMP_GAIN } else { 1.0 };
    Ok(separable_gradient(img, &SOBEL3_SMOOTH, &SOBEL3_DERIV, scale))
}

/// 5x5 Sobel-Feldman gradient ([1 4 6 4 1] x [-1 -2 0 2 1]), scaled by 1/128.
pub fn gradient_kernel5(img: &GrayImage) -> Result<GradientImage> {
    gradient_kernel5_scaled(img, true)
}

pub fn gradient_kernel5_scaled(img: &GrayImage, normalized: bool) -> Result<GradientImage> {
    require_min(img.width, img.height, 5)?;
    let scale = if normalized { 1.0 / SOBEL5_RAMP_GAIN } else { 1.0 };
    Ok(separable_gradient(img, &SOBEL5_SMOOTH, &SOBEL5_DERIV, scale))
}

/// Keep every pixel with `norm > threshold`, scanning row-major.
pub fn extract_semidense(grad: &GradientImage, threshold: f64) -> Result<SemiDenseRegion> {
    if !(threshold > 0.0) {
        return Err(Error::invalid("threshold", "must be positive"));
    }
    let mut pixels = Vec::new();
    let mut grad_dirs = Vec::new();
    for v in 0..grad.height {
        for u in 0..grad.width {
            let i = v * grad.width + u;
            let n = grad.norm[i];
            if n > threshold {
                pixels.push([u as u32, v as u32]);
                grad_dirs.push(Vector2::new(grad.gx[i] / n, grad.gy[i] / n));
            }
        }
    }
    Ok(SemiDenseRegion {
        width: grad.width,
        height: grad.height,
        pixels,
        grad_dirs,
    })
}

/// Gradient image for a given extractor configuration (before thresholding).
pub fn extractor_gradient(img: &GrayImage, cfg: &ExtractorConfig) -> Result<GradientImage> {
    let smoothed;
    let src = if cfg.variant.is_smoothed() {
        smoothed = gaussian_smooth(img, cfg.gaussian_sigma)?;
        &smoothed
    } else {
        img
    };
    match cfg.variant {
        ExtractorVariant::Sobel | ExtractorVariant::SmoothedSobel => gradient_sobel3_scaled(src, cfg.normalized),
        ExtractorVariant::Gradient5 | ExtractorVariant::SmoothedGradient5 => {
            gradient_kernel5_scaled(src, cfg.normalized)
        }
    }
}

/// Smoothing (for the smoothed variants), gradient, threshold.
pub fn extractor_pipeline(img: &GrayImage, cfg: &ExtractorConfig) -> Result<SemiDenseRegion> {
    let grad = extractor_gradient(img, cfg)?;
    extract_semidense(&grad, cfg.threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GrayImage::from_fn(w, h, |_, _| rng.random::<f64>()).unwrap()
    }

    /// Direct 2D correlation with an explicit kernel, clamp-to-edge.
    fn brute_correlate(img: &GrayImage, kernel: &[Vec<f64>]) -> Vec<f64> {
        let r = (kernel.len() / 2) as isize;
        let (w, h) = (img.width() as isize, img.height() as isize);
        let mut out = Vec::new();
        for v in 0..h {
            for u in 0..w {
                let mut acc = 0.0;
                for (j, row) in kernel.iter().enumerate() {
                    for (i, k) in row.iter().enumerate() {
                        let x = (u + i as isize - r).clamp(0, w - 1) as usize;
                        let y = (v + j as isize - r).clamp(0, h - 1) as usize;
                        acc += k * img.get(x, y);
                    }
                }
                out.push(acc);
            }
        }
        out
    }

    fn outer(col: &[f64], row: &[f64], scale: f64) -> Vec<Vec<f64>> {
        col.iter().map(|c| row.iter().map(|r| c * r * scale).collect()).collect()
    }

    fn step_image(w: usize, h: usize) -> GrayImage {
        GrayImage::from_fn(w, h, |u, _| if u < w / 2 { 0.0 } else { 1.0 }).unwrap()
    }

    #[test]
    fn smoothing_preserves_constants() {
        let img = GrayImage::constant(12, 9, 0.5).unwrap();
        let out = gaussian_smooth(&img, 1.0).unwrap();
        assert!(out.data().iter().all(|x| (x - 0.5).abs() < 1e-9));
    }

    #[test]
    fn smoothing_preserves_impulse_mass() {
        let img = GrayImage::from_fn(9, 9, |u, v| if (u, v) == (4, 4) { 1.0 } else { 0.0 }).unwrap();
        let out = gaussian_smooth(&img, 1.0).unwrap();
        let mass: f64 = out.data().iter().sum();
        assert!((mass - 1.0).abs() < 1e-9, "mass {mass}");
    }

    #[test]
    fn smoothing_matches_direct_convolution() {
        let img = random_image(16, 16, 7);
        let k = gaussian_kernel5(1.0);
        let expected = brute_correlate(&img, &outer(&k, &k, 1.0));
        let out = gaussian_smooth(&img, 1.0).unwrap();
        for (a, b) in out.data().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn small_images_are_rejected() {
        let img = GrayImage::constant(4, 8, 0.2).unwrap();
        assert!(matches!(gaussian_smooth(&img, 1.0), Err(Error::ImageTooSmall { .. })));
        assert!(matches!(gradient_kernel5(&img), Err(Error::ImageTooSmall { .. })));
        let tiny = GrayImage::constant(2, 2, 0.2).unwrap();
        assert!(matches!(gradient_sobel3(&tiny), Err(Error::ImageTooSmall { .. })));
    }

    #[test]
    fn gaussian_kernel_is_normalized_and_symmetric() {
        let k = gaussian_kernel5(1.0);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(k[0], k[4]);
        assert_eq!(k[1], k[3]);
    }

    #[test]
    fn sobel_on_constant_is_zero() {
        let g = gradient_sobel3(&GrayImage::constant(8, 8, 0.3).unwrap()).unwrap();
        assert!(g.gx.iter().chain(&g.gy).chain(&g.norm).all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn sobel_step_edge_peaks_beside_the_step() {
        let (w, h) = (12, 8);
        let g = gradient_sobel3(&step_image(w, h)).unwrap();
        for v in 1..h - 1 {
            for u in 0..w {
                assert_eq!(g.gy[v * w + u], 0.0);
            }
            let row = &g.gx[v * w..(v + 1) * w];
            let max = row.iter().cloned().fold(f64::MIN, f64::max);
            assert_eq!(row[w / 2 - 1], max);
            assert_eq!(row[w / 2], max);
            assert_eq!(row.iter().filter(|x| **x > 0.0).count(), 2);
        }
    }

    #[test]
    fn sobel_matches_direct_convolution() {
        let img = random_image(8, 8, 11);
        let s = 1.0 / 8.0;
        let gx = brute_correlate(&img, &outer(&SOBEL3_SMOOTH, &SOBEL3_DERIV, s));
        let gy = brute_correlate(&img, &outer(&SOBEL3_DERIV, &SOBEL3_SMOOTH, s));
        let g = gradient_sobel3(&img).unwrap();
        for i in 0..64 {
            assert!((g.gx[i] - gx[i]).abs() < 1e-12);
            assert!((g.gy[i] - gy[i]).abs() < 1e-12);
            assert!((g.norm[i] - g.gx[i].hypot(g.gy[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn kernel5_on_ramp_is_unit_slope() {
        let a = 0.02;
        let img = GrayImage::from_fn(20, 12, |u, _| a * u as f64).unwrap();
        let g = gradient_kernel5(&img).unwrap();
        for v in 2..10 {
            for u in 2..18 {
                assert!((g.gx[v * 20 + u] - a).abs() < 1e-12);
                assert!(g.gy[v * 20 + u].abs() < 1e-12);
            }
        }
        let zero = gradient_kernel5(&GrayImage::constant(10, 10, 0.7).unwrap()).unwrap();
        assert!(zero.norm.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn kernel5_matches_direct_convolution() {
        let img = random_image(10, 10, 3);
        let s = 1.0 / 128.0;
        let gx = brute_correlate(&img, &outer(&SOBEL5_SMOOTH, &SOBEL5_DERIV, s));
        let gy = brute_correlate(&img, &outer(&SOBEL5_DERIV, &SOBEL5_SMOOTH, s));
        let g = gradient_kernel5(&img).unwrap();
        for i in 0..100 {
            assert!((g.gx[i] - gx[i]).abs() < 1e-12);
            assert!((g.gy[i] - gy[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn ramp_norm_is_constant_for_oblique_ramps() {
        let img = GrayImage::from_fn(16, 16, |u, v| 0.01 * u as f64 + 0.03 * v as f64).unwrap();
        for g in [gradient_sobel3(&img).unwrap(), gradient_kernel5(&img).unwrap()] {
            let expected = 0.01f64.hypot(0.03);
            for v in 2..14 {
                for u in 2..14 {
                    assert!((g.norm[v * 16 + u] - expected).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn extraction_of_zero_gradient_is_empty() {
        let g = gradient_sobel3(&GrayImage::constant(6, 6, 0.0).unwrap()).unwrap();
        assert!(extract_semidense(&g, 0.1).unwrap().is_empty());
        assert!(extract_semidense(&g, 0.0).is_err());
    }

    #[test]
    fn extraction_of_step_is_two_columns() {
        let (w, h) = (12, 8);
        let g = gradient_sobel3(&step_image(w, h)).unwrap();
        let region = extract_semidense(&g, 0.06).unwrap();
        assert_eq!(region.len(), 2 * h);
        for (p, d) in region.pixels.iter().zip(&region.grad_dirs) {
            assert!(p[0] as usize == w / 2 - 1 || p[0] as usize == w / 2);
            assert_eq!((d.x, d.y), (1.0, 0.0));
        }
    }

    #[test]
    fn extraction_count_matches_direct_scan() {
        let img = random_image(24, 20, 5);
        let g = gradient_kernel5(&img).unwrap();
        for t in [0.01, 0.05, 0.1, 0.2] {
            let region = extract_semidense(&g, t).unwrap();
            let expected = g.norm.iter().filter(|n| **n > t).count();
            assert_eq!(region.len(), expected);
            for d in &region.grad_dirs {
                assert!((d.norm() - 1.0).abs() < 1e-6);
            }
            // Row-major and deterministic.
            let again = extract_semidense(&g, t).unwrap();
            assert_eq!(region, again);
            assert!(region.pixels.windows(2).all(|w| (w[0][1], w[0][0]) < (w[1][1], w[1][0])));
        }
    }

    #[test]
    fn pipeline_composes_its_stages() {
        let img = random_image(20, 16, 9);
        let cfg = ExtractorConfig {
            variant: ExtractorVariant::SmoothedSobel,
            threshold: 0.05,
            ..Default::default()
        };
        let direct = extract_semidense(&gradient_sobel3(&gaussian_smooth(&img, 1.0).unwrap()).unwrap(), 0.05).unwrap();
        assert_eq!(extractor_pipeline(&img, &cfg).unwrap(), direct);

        let flat = GrayImage::constant(20, 16, 0.4).unwrap();
        let cfg = ExtractorConfig {
            variant: ExtractorVariant::Sobel,
            ..Default::default()
        };
        assert!(extractor_pipeline(&flat, &cfg).unwrap().is_empty());
    }

    #[test]
    fn variant_names_round_trip() {
        for v in ExtractorVariant::ALL {
            assert_eq!(v.name().parse::<ExtractorVariant>().unwrap(), v);
        }
        assert!("canny".parse::<ExtractorVariant>().is_err());
    }

    #[test]
    fn rgb_conversion_uses_bt601() {
        let img = GrayImage::from_rgb8(2, 1, &[255, 0, 0, 0, 0, 255]).unwrap();
        assert!((img.get(0, 0) - 0.299).abs() < 1e-12);
        assert!((img.get(1, 0) - 0.114).abs() < 1e-12);
    }

    #[test]
    fn invalid_rasters_are_rejected() {
        assert!(GrayImage::new(2, 2, vec![0.0; 3]).is_err());
        assert!(GrayImage::new(1, 1, vec![1.5]).is_err());
        assert!(DepthImage::new(1, 1, vec![-1.0]).is_err());
        assert!(DepthImage::new(1, 1, vec![f64::NAN]).is_err());
    }
}
