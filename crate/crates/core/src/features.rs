//! Statistical image features ("S-v1"): 14 values per frame, 28 per material.
//!
//! Per frame, in order:
//!
//! | #     | feature                                                        |
//! |-------|----------------------------------------------------------------|
//! | 1–3   | luminance mean, sample std, skewness                           |
//! | 4–5   | chroma (`max(R,G,B) - min(R,G,B)`) mean and sample std         |
//! | 6–9   | relative luminance power in radial bands split at N/16, N/8, N/4 (last band open-ended) |
//! | 10    | anisotropy: resultant length of the doubled-angle power distribution |
//! | 11    | dominant-orientation peak ratio over 36 orientation bins       |
//! | 12    | number of dominant colors                                      |
//! | 13    | stripedness                                                    |
//! | 14    | checkeredness                                                  |
//!
//! DC is excluded from all spectral measures. Orientation statistics use the
//! open disc `0 < r < N/2` so every frequency has a unique signed
//! representative, which makes them exactly covariant under 90° rotations.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::diagnostics::Warning;
use crate::imaging::RgbImage;
use crate::{Error, Result};

pub const STAT_SPEC_ID: &str = "S-v1";
pub const FEATURES_PER_FRAME: usize = 14;
pub const STAT_DIMS: usize = 2 * FEATURES_PER_FRAME;
pub const CANONICAL_SIZE: usize = 512;
pub const CANONICAL_EXTENT_MM: f64 = 26.0;
pub const VIDEO_FRAMES: usize = 60;
/// 1-based index of the non-specular frame.
pub const NON_SPECULAR_FRAME: usize = 30;
pub const DEFAULT_SPECULAR_OFFSET_DEGREES: f64 = 6.0;
/// Camera azimuth covered by a capture video.
pub const AZIMUTH_SPAN_DEGREES: f64 = 90.0;

const ORIENTATION_BINS: usize = 36;
const COLOR_LEVELS: usize = 32;
const COLOR_MERGE_RADIUS: f64 = 0.1;
const COLOR_MIN_MASS: f64 = 0.02;

const FRAME_FEATURE_NAMES: [&str; FEATURES_PER_FRAME] = [
    "lum_mean",
    "lum_std",
    "lum_skew",
    "chroma_mean",
    "chroma_std",
    "band1_energy",
    "band2_energy",
    "band3_energy",
    "band4_energy",
    "anisotropy",
    "orientation_peak_ratio",
    "dominant_colors",
    "stripedness",
    "checkeredness",
];

/// Degrees of camera azimuth between consecutive video frames.
pub fn frame_step_degrees() -> f64 {
    AZIMUTH_SPAN_DEGREES / (VIDEO_FRAMES - 1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptureSource {
    GoniometerVideo,
    Smartphone,
}

/// Non-specular and near-specular views of one material, canonical size.
#[derive(Debug, Clone)]
pub struct FramePair {
    pub non_specular: RgbImage,
    pub near_specular: RgbImage,
    pub source: CaptureSource,
    /// 1-based video frame numbers, when taken from a video.
    pub frame_indices: Option<(usize, usize)>,
}

impl FramePair {
    pub fn new(non_specular: RgbImage, near_specular: RgbImage, source: CaptureSource) -> Result<Self> {
        if (non_specular.width(), non_specular.height())
            != (near_specular.width(), near_specular.height())
        {
            return Err(Error::invalid("frame pair images differ in size"));
        }
        for img in [&non_specular, &near_specular] {
            if !img.is_finite() {
                return Err(Error::invalid("frame contains non-finite pixels"));
            }
        }
        Ok(FramePair {
            non_specular,
            near_specular,
            source,
            frame_indices: None,
        })
    }
}

/// 1-based video frame whose azimuth is `offset_degrees` short of the
/// ideal specular configuration (the last frame).
pub fn near_specular_frame_index(offset_degrees: f64) -> Result<usize> {
    if !(0.0..90.0).contains(&offset_degrees) {
        return Err(Error::invalid(format!(
            "specular offset {offset_degrees}° outside [0, 90)"
        )));
    }
    let steps = (offset_degrees * (VIDEO_FRAMES - 1) as f64 / AZIMUTH_SPAN_DEGREES).round() as usize;
    Ok(VIDEO_FRAMES - steps)
}

/// Largest centered square, resampled to `CANONICAL_SIZE`.
pub fn canonicalize_frame(frame: &RgbImage) -> Result<RgbImage> {
    let side = frame.width().min(frame.height());
    Ok(frame
        .center_crop(side)?
        .resize_bilinear(CANONICAL_SIZE, CANONICAL_SIZE)
        .clamp_unit())
}

/// Picks the non-specular frame (#30) and the near-specular frame for the
/// given azimuth offset from a 60-frame capture video.
pub fn select_frames(video: &[RgbImage], offset_degrees: f64) -> Result<(FramePair, Vec<Warning>)> {
    if video.len() != VIDEO_FRAMES {
        return Err(Error::invalid(format!(
            "capture video must have {VIDEO_FRAMES} frames, got {}",
            video.len()
        )));
    }
    let near = near_specular_frame_index(offset_degrees)?;
    let mut warnings = Vec::new();
    if near == NON_SPECULAR_FRAME {
        warnings.push(Warning::new(
            "frame-collision",
            format!("offset {offset_degrees}° selects frame {near}, the non-specular frame"),
        ));
    }
    let mut pair = FramePair::new(
        canonicalize_frame(&video[NON_SPECULAR_FRAME - 1])?,
        canonicalize_frame(&video[near - 1])?,
        CaptureSource::GoniometerVideo,
    )?;
    pair.frame_indices = Some((NON_SPECULAR_FRAME, near));
    Ok((pair, warnings))
}

/// Crops a phone shot to the canonical physical extent and rescales it.
///
/// With a `dpi_hint` the crop covers `crop_mm` millimetres; otherwise the
/// largest centered square is used.
pub fn normalize_wild_capture(image: &RgbImage, crop_mm: f64, dpi_hint: Option<f64>) -> Result<RgbImage> {
    let available = image.width().min(image.height());
    let side = match dpi_hint {
        Some(dpi) if dpi > 0.0 && crop_mm > 0.0 => (crop_mm / 25.4 * dpi).round() as usize,
        Some(_) => return Err(Error::invalid("crop extent and dpi must be positive")),
        None => available,
    };
    if side > available {
        return Err(Error::invalid(format!(
            "{crop_mm} mm at the given dpi needs {side} px, image is {}x{}",
            image.width(),
            image.height()
        )));
    }
    if side < CANONICAL_SIZE {
        return Err(Error::invalid(format!(
            "crop of {side} px is smaller than the canonical {CANONICAL_SIZE} px"
        )));
    }
    Ok(image
        .center_crop(side)?
        .resize_bilinear(CANONICAL_SIZE, CANONICAL_SIZE)
        .clamp_unit())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatFeatureVector {
    pub values: Vec<f64>,
    pub feature_names: Vec<String>,
    pub spec_id: String,
}

pub fn stat_feature_names() -> Vec<String> {
    ["ns", "sp"]
        .iter()
        .flat_map(|prefix| FRAME_FEATURE_NAMES.iter().map(move |n| format!("{prefix}_{n}")))
        .collect()
}

pub fn extract_stat_features(pair: &FramePair) -> Result<StatFeatureVector> {
    let mut values = Vec::with_capacity(STAT_DIMS);
    values.extend(frame_features(&pair.non_specular)?);
    values.extend(frame_features(&pair.near_specular)?);
    Ok(StatFeatureVector {
        values,
        feature_names: stat_feature_names(),
        spec_id: STAT_SPEC_ID.to_string(),
    })
}

fn luminance([r, g, b]: [f64; 3]) -> f64 {
    if r == g && g == b {
        r
    } else {
        0.2126 * r + 0.7152 * g + 0.0722 * b
    }
}

fn chroma([r, g, b]: [f64; 3]) -> f64 {
    r.max(g).max(b) - r.min(g).min(b)
}

/// The 14 per-frame features of a square image.
pub fn frame_features(img: &RgbImage) -> Result<[f64; FEATURES_PER_FRAME]> {
    if img.width() != img.height() || img.width() < 8 {
        return Err(Error::invalid(format!(
            "feature extraction needs a square frame of at least 8 px, got {}x{}",
            img.width(),
            img.height()
        )));
    }
    if !img.is_finite() {
        return Err(Error::invalid("frame contains non-finite pixels"));
    }
    let lum: Vec<f64> = img.pixels().iter().map(|&p| luminance(p)).collect();
    let chr: Vec<f64> = img.pixels().iter().map(|&p| chroma(p)).collect();
    let (lum_mean, lum_std, lum_skew) = moments(&lum);
    let (chroma_mean, chroma_std, _) = moments(&chr);

    let spectrum = Spectrum::new(&lum, img.width());
    let bands = spectrum.band_energies();
    let total: f64 = bands.iter().sum();
    let rel = bands.map(|b| if total > 0.0 { b / total } else { 0.0 });
    let orientation = spectrum.orientation();
    let (striped, checkered) = spectrum.pattern_type();

    Ok([
        lum_mean,
        lum_std,
        lum_skew,
        chroma_mean,
        chroma_std,
        rel[0],
        rel[1],
        rel[2],
        rel[3],
        orientation.anisotropy,
        orientation.peak_ratio,
        dominant_colors(img) as f64,
        striped,
        checkered,
    ])
}

/// Mean, sample std and skewness (population moments for the third).
fn moments(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let (mut s2, mut s3) = (0.0, 0.0);
    for v in values {
        let d = v - m;
        s2 += d * d;
        s3 += d * d * d;
    }
    let sd = if values.len() > 1 { (s2 / (n - 1.0)).sqrt() } else { 0.0 };
    let pop_sd = (s2 / n).sqrt();
    let skew = if pop_sd > 0.0 { (s3 / n) / pop_sd.powi(3) } else { 0.0 };
    (m, sd, skew)
}

fn fft_2d(data: &mut [Complex<f64>], n: usize, fft: &Arc<dyn Fft<f64>>) {
    for row in data.chunks_exact_mut(n) {
        fft.process(row);
    }
    let mut col = vec![Complex::new(0.0, 0.0); n];
    for x in 0..n {
        for y in 0..n {
            col[y] = data[y * n + x];
        }
        fft.process(&mut col);
        for y in 0..n {
            data[y * n + x] = col[y];
        }
    }
}

fn signed(k: usize, n: usize) -> i64 {
    if k < n.div_ceil(2) {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

/// Orientation summary of a power spectrum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Orientation {
    pub anisotropy: f64,
    pub peak_ratio: f64,
}

/// Power spectrum of a mean-removed luminance plane.
pub struct Spectrum {
    n: usize,
    power: Vec<f64>,
    ifft: Arc<dyn Fft<f64>>,
}

impl Spectrum {
    pub fn new(lum: &[f64], n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(n);
        let ifft = planner.plan_fft_inverse(n);
        let m = lum.iter().sum::<f64>() / lum.len() as f64;
        let mut buf: Vec<Complex<f64>> = lum.iter().map(|v| Complex::new(v - m, 0.0)).collect();
        fft_2d(&mut buf, n, &fft);
        let power = buf.iter().map(|c| c.norm_sqr()).collect();
        Spectrum { n, power, ifft }
    }

    fn freq(&self, idx: usize) -> (i64, i64) {
        (signed(idx % self.n, self.n), signed(idx / self.n, self.n))
    }

    /// Absolute power per radial band; DC excluded, highest band open-ended.
    pub fn band_energies(&self) -> [f64; 4] {
        let n = self.n as f64;
        let edges = [n / 16.0, n / 8.0, n / 4.0];
        let mut bands = [0.0; 4];
        for (idx, p) in self.power.iter().enumerate().skip(1) {
            let (u, v) = self.freq(idx);
            let r = ((u * u + v * v) as f64).sqrt();
            let band = edges.iter().position(|&e| r <= e).unwrap_or(3);
            bands[band] += p;
        }
        bands
    }

    /// Frequencies in the open disc `0 < r < N/2`, as `(power, u, v)`.
    fn disc(&self) -> impl Iterator<Item = (f64, i64, i64)> + '_ {
        let half = (self.n / 2) as i64;
        self.power.iter().enumerate().skip(1).filter_map(move |(idx, &p)| {
            let (u, v) = self.freq(idx);
            (u * u + v * v < half * half).then_some((p, u, v))
        })
    }

    pub fn orientation(&self) -> Orientation {
        let (mut total, mut c2, mut s2) = (0.0, 0.0, 0.0);
        let mut bins = [0.0; ORIENTATION_BINS];
        for (p, u, v) in self.disc() {
            if p == 0.0 {
                continue;
            }
            let (a, b) = (u as f64, v as f64);
            let r2 = a * a + b * b;
            total += p;
            c2 += p * (a * a - b * b) / r2;
            s2 += p * 2.0 * a * b / r2;
            bins[orientation_bin(u, v)] += p;
        }
        if total <= 0.0 {
            return Orientation {
                anisotropy: 0.0,
                peak_ratio: 0.0,
            };
        }
        let peak = bins.iter().copied().fold(0.0, f64::max);
        Orientation {
            anisotropy: ((c2 * c2 + s2 * s2).sqrt() / total).clamp(0.0, 1.0),
            peak_ratio: peak / total,
        }
    }

    /// Stripedness and checkeredness from the normalized autocorrelation.
    ///
    /// `p1`, `p2` are the strongest periodic-peak prominences (halved, so in
    /// `[0, 1]`) along the dominant frequency direction and its orthogonal.
    /// Stripedness is `p1 * (1 - p2)`, checkeredness `sqrt(p1 * p2)`.
    pub fn pattern_type(&self) -> (f64, f64) {
        let Some((_, u, v)) = self
            .disc()
            .fold(None, |best: Option<(f64, i64, i64)>, cur| match best {
                Some(b) if b.0 >= cur.0 => Some(b),
                _ => Some(cur),
            })
            .filter(|(p, ..)| *p > 0.0)
        else {
            return (0.0, 0.0);
        };
        let n = self.n;
        let mut buf: Vec<Complex<f64>> = self.power.iter().map(|&p| Complex::new(p, 0.0)).collect();
        fft_2d(&mut buf, n, &self.ifft);
        let zero = buf[0].re;
        if zero <= 0.0 {
            return (0.0, 0.0);
        }
        let acf: Vec<f64> = buf.iter().map(|c| c.re / zero).collect();
        let r = ((u * u + v * v) as f64).sqrt();
        let dir = (u as f64 / r, v as f64 / r);
        let p1 = peak_prominence(&acf, n, dir) / 2.0;
        let p2 = peak_prominence(&acf, n, (-dir.1, dir.0)) / 2.0;
        let (p1, p2) = (p1.clamp(0.0, 1.0), p2.clamp(0.0, 1.0));
        (p1 * (1.0 - p2), (p1 * p2).sqrt())
    }
}

/// Orientation bin of a frequency with axial symmetry (`(u,v) ~ (-u,-v)`),
/// computed so that a 90° rotation shifts the bin by exactly half the bins.
fn orientation_bin(u: i64, v: i64) -> usize {
    let (a, b) = if v > 0 || (v == 0 && u > 0) { (u, v) } else { (-u, -v) };
    // (a, b) now has angle in [0, π)
    let (quadrant, x, y) = if a > 0 { (0, a, b) } else { (1, b, -a) };
    let phi = (y as f64).atan2(x as f64);
    let half = ORIENTATION_BINS / 2;
    let k = ((phi / (PI / 2.0)) * half as f64).floor() as usize;
    quadrant * half + k.min(half - 1)
}

fn sample_periodic(acf: &[f64], n: usize, x: f64, y: f64) -> f64 {
    let nf = n as f64;
    let (x, y) = (x.rem_euclid(nf), y.rem_euclid(nf));
    let (x0, y0) = (x.floor() as usize % n, y.floor() as usize % n);
    let (x1, y1) = ((x0 + 1) % n, (y0 + 1) % n);
    let (tx, ty) = (x - x.floor(), y - y.floor());
    let at = |xx: usize, yy: usize| acf[yy * n + xx];
    let top = at(x0, y0) * (1.0 - tx) + at(x1, y0) * tx;
    let bottom = at(x0, y1) * (1.0 - tx) + at(x1, y1) * tx;
    top * (1.0 - ty) + bottom * ty
}

/// Largest rise of a local maximum above the lowest preceding value along a ray.
fn peak_prominence(acf: &[f64], n: usize, dir: (f64, f64)) -> f64 {
    let lags = n / 2;
    let profile: Vec<f64> = (0..=lags)
        .map(|t| sample_periodic(acf, n, t as f64 * dir.0, t as f64 * dir.1))
        .collect();
    let mut best = 0.0f64;
    let mut trough = f64::INFINITY;
    for t in 1..lags {
        if t >= 2 && profile[t] >= profile[t - 1] && profile[t] >= profile[t + 1] {
            best = best.max(profile[t] - trough);
        }
        trough = trough.min(profile[t]);
    }
    best
}

/// Greedy leader clustering of a quantized RGB histogram; counts clusters
/// holding at least 2% of the pixels.
pub fn dominant_colors(img: &RgbImage) -> usize {
    let levels = COLOR_LEVELS;
    let q = |c: f64| ((c.clamp(0.0, 1.0) * levels as f64) as usize).min(levels - 1);
    let mut hist = vec![0usize; levels * levels * levels];
    for p in img.pixels() {
        hist[(q(p[0]) * levels + q(p[1])) * levels + q(p[2])] += 1;
    }
    let mut occupied: Vec<(usize, usize)> = hist
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(i, &c)| (i, c))
        .collect();
    occupied.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let center = |i: usize| {
        let (r, g, b) = (i / (levels * levels), (i / levels) % levels, i % levels);
        [r, g, b].map(|c| (c as f64 + 0.5) / levels as f64)
    };
    let mut clusters: Vec<([f64; 3], usize)> = Vec::new();
    for (i, count) in occupied {
        let c = center(i);
        let near = clusters.iter_mut().find(|(leader, _)| {
            let d2: f64 = leader.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum();
            d2 <= COLOR_MERGE_RADIUS * COLOR_MERGE_RADIUS
        });
        match near {
            Some(cl) => cl.1 += count,
            None => clusters.push((c, count)),
        }
    }
    let min_mass = COLOR_MIN_MASS * img.pixels().len() as f64;
    clusters.iter().filter(|(_, m)| *m as f64 >= min_mass).count()
}

/// Per-dimension standardization fitted on a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub mean: Vec<f64>,
    /// Sample standard deviation; zero marks a constant dimension.
    pub std: Vec<f64>,
}

impl FeatureScaler {
    pub fn fit(train: &[Vec<f64>]) -> Result<Self> {
        if train.len() < 2 {
            return Err(Error::invalid("standardization needs at least two vectors"));
        }
        let dims = train[0].len();
        if train.iter().any(|v| v.len() != dims) {
            return Err(Error::invalid("feature vectors differ in length"));
        }
        let n = train.len() as f64;
        let mut mean = vec![0.0; dims];
        for v in train {
            for (m, x) in mean.iter_mut().zip(v) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dims];
        for v in train {
            for ((s, x), m) in var.iter_mut().zip(v).zip(&mean) {
                *s += (x - m) * (x - m);
            }
        }
        let std = var.into_iter().map(|s| (s / (n - 1.0)).sqrt()).collect();
        Ok(FeatureScaler { mean, std })
    }

    pub fn dims(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| if *s > 0.0 { (v - m) / s } else { 0.0 })
            .collect()
    }
}

pub fn standardize_features(train: &[StatFeatureVector]) -> Result<FeatureScaler> {
    let rows: Vec<Vec<f64>> = train.iter().map(|v| v.values.clone()).collect();
    FeatureScaler::fit(&rows)
}
