//! Saliency maps: classical estimators, the mask-derived oracle family, the
//! Normalized Scanpath Saliency score, and map file I/O.
//!
//! Every producer emits values in [0, 1]. Maps are persisted as binary P5
//! PGM with byte = round(255 * s), so a save/load round trip moves any value
//! by at most 1/510 (half a quantization step).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::VecDeque;
use std::path::Path;

use crate::error::{Error, Result};
use crate::netpbm::{self, GrayImage, RgbImage};

/// Scalar saliency map with f64 values, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

/// Pixel coordinates (x, y) of observed fixations.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FixationSet {
    pub points: Vec<(usize, usize)>,
}

impl SaliencyMap {
    pub fn new(width: usize, height: usize) -> SaliencyMap {
        SaliencyMap {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Quantize to 8 bits (round(255 * clamp(v, 0, 1))).
    pub fn to_gray(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            pixels: self
                .values
                .iter()
                .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
                .collect(),
        }
    }

    /// Dequantize from 8 bits (v = byte / 255).
    pub fn from_gray(img: &GrayImage) -> SaliencyMap {
        SaliencyMap {
            width: img.width,
            height: img.height,
            values: img.pixels.iter().map(|&b| b as f64 / 255.0).collect(),
        }
    }

    /// Min-max normalize into [0, 1]; a constant map becomes all zeros.
    pub fn normalize(&mut self) {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in &self.values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let span = hi - lo;
        if span <= 0.0 {
            self.values.iter_mut().for_each(|v| *v = 0.0);
        } else {
            self.values.iter_mut().for_each(|v| *v = (*v - lo) / span);
        }
    }

    /// Bilinear resample to a new size (used when an imported map does not
    /// match the image it annotates).
    pub fn resize_bilinear(&self, width: usize, height: usize) -> SaliencyMap {
        let mut out = SaliencyMap::new(width, height);
        if width == 0 || height == 0 {
            return out;
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        for y in 0..height {
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let wy = fy - y0 as f64;
            for x in 0..width {
                let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let wx = fx - x0 as f64;
                let top = self.at(x0, y0) * (1.0 - wx) + self.at(x1, y0) * wx;
                let bot = self.at(x0, y1) * (1.0 - wx) + self.at(x1, y1) * wx;
                out.values[y * width + x] = top * (1.0 - wy) + bot * wy;
            }
        }
        out
    }
}

pub fn save_map(path: &Path, map: &SaliencyMap) -> Result<()> {
    netpbm::write_pgm(path, &map.to_gray())
}

pub fn load_map(path: &Path) -> Result<SaliencyMap> {
    Ok(SaliencyMap::from_gray(&netpbm::read_pgm(path)?))
}

/// Uniform map: every pixel 1. The no-information prior.
pub fn white(width: usize, height: usize) -> SaliencyMap {
    SaliencyMap {
        width,
        height,
        values: vec![1.0; width * height],
    }
}

/// Isotropic Gaussian centered on the image, peak-normalized to 1, with
/// sigma = sigma_fraction * min(width, height).
pub fn center(width: usize, height: usize, sigma_fraction: f64) -> Result<SaliencyMap> {
    if sigma_fraction <= 0.0 {
        return Err(Error::config(format!(
            "center prior sigma fraction must be > 0, got {sigma_fraction}"
        )));
    }
    let sigma = sigma_fraction * width.min(height) as f64;
    let cx = (width as f64 - 1.0) / 2.0;
    let cy = (height as f64 - 1.0) / 2.0;
    let mut map = SaliencyMap::new(width, height);
    for y in 0..height {
        for x in 0..width {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            map.values[y * width + x] = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
        }
    }
    Ok(map)
}

fn rgb_to_unit(img: &RgbImage) -> Vec<[f64; 3]> {
    img.pixels
        .chunks_exact(3)
        .map(|p| [p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0])
        .collect()
}

/// Box-filter downsample by 2 (floor halving).
fn downsample2(src: &[f64], w: usize, h: usize) -> (Vec<f64>, usize, usize) {
    let (ow, oh) = (w / 2, h / 2);
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for dy in 0..2 {
                for dx in 0..2 {
                    acc += src[(y * 2 + dy) * w + x * 2 + dx];
                }
            }
            out[y * ow + x] = acc / 4.0;
        }
    }
    (out, ow, oh)
}

/// Nearest-neighbor upsample to an arbitrary target size.
fn upsample_nearest(src: &[f64], w: usize, h: usize, tw: usize, th: usize) -> Vec<f64> {
    let mut out = vec![0.0; tw * th];
    for y in 0..th {
        let sy = (y * h / th).min(h - 1);
        for x in 0..tw {
            let sx = (x * w / tw).min(w - 1);
            out[y * tw + x] = src[sy * w + sx];
        }
    }
    out
}

/// Simplified center-surround estimator: an intensity channel plus two color
/// opponency channels (R-G, B-Y), each over a 3-level box pyramid; the map is
/// the min-max normalized sum of |center - surround| across the level pairs
/// (0,1), (0,2), (1,2). No orientation channels.
pub fn itti_koch(img: &RgbImage) -> Result<SaliencyMap> {
    let (w, h) = (img.width, img.height);
    // 3 pyramid levels with floor halving: the coarsest is size/4
    if w < 4 || h < 4 {
        return Err(Error::data(format!(
            "image {}x{} smaller than the coarsest pyramid level (needs >= 4x4)",
            w, h
        )));
    }
    let px = rgb_to_unit(img);
    let channels: [Vec<f64>; 3] = [
        px.iter().map(|p| (p[0] + p[1] + p[2]) / 3.0).collect(),
        px.iter().map(|p| p[0] - p[1]).collect(),
        px.iter().map(|p| p[2] - (p[0] + p[1]) / 2.0).collect(),
    ];
    let mut acc = vec![0.0; w * h];
    for chan in &channels {
        // pyramid: level 0 full res, then two box halvings
        let mut levels: Vec<(Vec<f64>, usize, usize)> = vec![(chan.clone(), w, h)];
        for _ in 0..2 {
            let (prev, pw, ph) = levels.last().unwrap();
            levels.push(downsample2(prev, *pw, *ph));
        }
        for &(ci, si) in &[(0usize, 1usize), (0, 2), (1, 2)] {
            let (cd, cw, ch) = &levels[ci];
            let (sd, sw, sh) = &levels[si];
            let sup = upsample_nearest(sd, *sw, *sh, *cw, *ch);
            let diff: Vec<f64> = cd.iter().zip(&sup).map(|(a, b)| (a - b).abs()).collect();
            let full = if ci == 0 {
                diff
            } else {
                upsample_nearest(&diff, *cw, *ch, w, h)
            };
            for (a, d) in acc.iter_mut().zip(&full) {
                *a += d;
            }
        }
    }
    let mut map = SaliencyMap {
        width: w,
        height: h,
        values: acc,
    };
    map.normalize();
    Ok(map)
}

/// Boolean-map surroundedness estimator. For each of `n_thresholds` seeded
/// draws, one color channel is thresholded into a binary partition; a pixel
/// scores 1 iff its 4-connected same-value region does not touch the image
/// border. The mean over draws is min-max normalized.
pub fn bms(img: &RgbImage, n_thresholds: usize, seed: u64) -> Result<SaliencyMap> {
    if n_thresholds == 0 {
        return Err(Error::config("bms needs at least one threshold".to_string()));
    }
    let (w, h) = (img.width, img.height);
    let px = rgb_to_unit(img);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = vec![0.0; w * h];
    let mut boolean = vec![false; w * h];
    for _ in 0..n_thresholds {
        let chan = rng.gen_range(0..3usize);
        let theta: f64 = rng.gen_range(0.0..1.0);
        for (b, p) in boolean.iter_mut().zip(&px) {
            *b = p[chan] > theta;
        }
        let surrounded = surroundedness(&boolean, w, h);
        for (a, s) in acc.iter_mut().zip(&surrounded) {
            *a += if *s { 1.0 } else { 0.0 };
        }
    }
    for a in acc.iter_mut() {
        *a /= n_thresholds as f64;
    }
    let mut map = SaliencyMap {
        width: w,
        height: h,
        values: acc,
    };
    map.normalize();
    Ok(map)
}

/// For a binary partition, mark pixels whose 4-connected region of equal
/// value does not touch the border.
fn surroundedness(boolean: &[bool], w: usize, h: usize) -> Vec<bool> {
    let mut surrounded = vec![false; w * h];
    let mut label = vec![u32::MAX; w * h];
    let mut queue = VecDeque::new();
    let mut next = 0u32;
    for start in 0..w * h {
        if label[start] != u32::MAX {
            continue;
        }
        let id = next;
        next += 1;
        let value = boolean[start];
        let mut touches_border = false;
        let mut members = Vec::new();
        label[start] = id;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            members.push(p);
            let (x, y) = (p % w, p / w);
            if x == 0 || y == 0 || x == w - 1 || y == h - 1 {
                touches_border = true;
            }
            let mut push = |q: usize| {
                if label[q] == u32::MAX && boolean[q] == value {
                    label[q] = id;
                    queue.push_back(q);
                }
            };
            if x > 0 {
                push(p - 1);
            }
            if x + 1 < w {
                push(p + 1);
            }
            if y > 0 {
                push(p - w);
            }
            if y + 1 < h {
                push(p + w);
            }
        }
        if !touches_border {
            for m in members {
                surrounded[m] = true;
            }
        }
    }
    surrounded
}

/// Separable Gaussian blur with edge clamping.
fn gaussian_blur(src: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    let mut norm = 0.0;
    for d in -radius..=radius {
        let v = (-(d as f64 * d as f64) / (2.0 * sigma * sigma)).exp();
        kernel.push(v);
        norm += v;
    }
    kernel.iter_mut().for_each(|v| *v /= norm);
    let clampi = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, d) in (-radius..=radius).enumerate() {
                acc += kernel[ki] * src[y * w + clampi(x as isize + d, w)];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, d) in (-radius..=radius).enumerate() {
                acc += kernel[ki] * tmp[clampi(y as isize + d, h) * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Ground-truth-derived map of controllable quality: a convex blend
/// q * blur(mask) + (1 - q) * seeded uniform noise, min-max renormalized.
/// q = 1 is a blurred, normalized mask; q = 0 is pure noise.
pub fn oracle(mask: &GrayImage, quality: f64, seed: u64) -> Result<SaliencyMap> {
    if !(0.0..=1.0).contains(&quality) {
        return Err(Error::config(format!(
            "oracle quality must lie in [0,1], got {quality}"
        )));
    }
    if mask.pixels.iter().all(|&p| p == 0) {
        return Err(Error::data(
            "oracle saliency requires a non-empty foreground mask".to_string(),
        ));
    }
    let (w, h) = (mask.width, mask.height);
    let binary: Vec<f64> = mask.pixels.iter().map(|&p| if p > 0 { 1.0 } else { 0.0 }).collect();
    let mut blurred = gaussian_blur(&binary, w, h, 2.0);
    // peak-normalize the blurred mask before blending
    let peak = blurred.iter().fold(0.0_f64, |m, &v| m.max(v));
    if peak > 0.0 {
        blurred.iter_mut().for_each(|v| *v /= peak);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut map = SaliencyMap::new(w, h);
    for (out, &b) in map.values.iter_mut().zip(&blurred) {
        let noise: f64 = rng.gen_range(0.0..1.0);
        *out = quality * b + (1.0 - quality) * noise;
    }
    map.normalize();
    Ok(map)
}

/// Up to `max_points` pixels sampled uniformly without replacement from the
/// foreground (mask > 0), deterministically from the seed.
pub fn sample_fixations(mask: &GrayImage, max_points: usize, seed: u64) -> FixationSet {
    let mut coords: Vec<(usize, usize)> = Vec::new();
    for y in 0..mask.height {
        for x in 0..mask.width {
            if mask.pixels[y * mask.width + x] > 0 {
                coords.push((x, y));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = max_points.min(coords.len());
    // partial Fisher-Yates: the first n entries become the sample
    for i in 0..n {
        let j = rng.gen_range(i..coords.len());
        coords.swap(i, j);
    }
    coords.truncate(n);
    FixationSet { points: coords }
}

/// Normalized Scanpath Saliency: z-score the map (population std), then
/// average the z-values at the fixated pixels. A zero-variance map scores 0
/// by definition. Affine-invariant: nss(a*map + b) == nss(map) for a > 0.
pub fn nss(map: &SaliencyMap, fixations: &FixationSet) -> Result<f64> {
    if fixations.points.is_empty() {
        return Err(Error::data("nss needs at least one fixation".to_string()));
    }
    let n = map.values.len();
    if n == 0 {
        return Err(Error::data("nss needs a non-empty map".to_string()));
    }
    for &(x, y) in &fixations.points {
        if x >= map.width || y >= map.height {
            return Err(Error::data(format!(
                "fixation ({}, {}) outside {}x{} map",
                x, y, map.width, map.height
            )));
        }
    }
    // a constant map carries no information and scores 0 by definition;
    // detect constancy exactly, not via the accumulated variance, which can
    // pick up rounding residue (e.g. all-0.77 maps)
    if map.values.iter().all(|&v| v == map.values[0]) {
        return Ok(0.0);
    }
    let mean = map.values.iter().sum::<f64>() / n as f64;
    let var = map.values.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    if var <= 0.0 {
        return Ok(0.0);
    }
    let std = var.sqrt();
    let total: f64 = fixations
        .points
        .iter()
        .map(|&(x, y)| (map.at(x, y) - mean) / std)
        .sum();
    Ok(total / fixations.points.len() as f64)
}


// ---- map sources over whole datasets ----

/// Where a dataset's saliency maps come from: a classical estimator, the
/// mask-derived oracle at a quality level, or a folder of precomputed maps.
#[derive(Debug, Clone, PartialEq)]
pub enum MapSource {
    White,
    Center,
    IttiKoch,
    Bms,
    Oracle { quality: f64 },
    Import { dir: std::path::PathBuf },
}

/// Desk defaults for the estimators' free knobs.
pub const CENTER_SIGMA_FRACTION: f64 = 0.25;
pub const BMS_THRESHOLDS: usize = 12;

impl MapSource {
    pub fn name(&self) -> &'static str {
        match self {
            MapSource::White => "white",
            MapSource::Center => "center",
            MapSource::IttiKoch => "itti_koch",
            MapSource::Bms => "bms",
            MapSource::Oracle { .. } => "oracle",
            MapSource::Import { .. } => "import",
        }
    }

    /// Build from the CLI/config surface. `quality` is only meaningful for
    /// the oracle, `import_dir` only for import.
    pub fn parse(
        method: &str,
        quality: Option<f64>,
        import_dir: Option<&Path>,
    ) -> Result<MapSource> {
        if quality.is_some() && method != "oracle" {
            return Err(Error::config(format!(
                "quality applies only to the oracle method, not '{method}'"
            )));
        }
        if import_dir.is_some() && method != "import" {
            return Err(Error::config(format!(
                "an import directory applies only to method 'import', not '{method}'"
            )));
        }
        match method {
            "white" => Ok(MapSource::White),
            "center" => Ok(MapSource::Center),
            "itti_koch" => Ok(MapSource::IttiKoch),
            "bms" => Ok(MapSource::Bms),
            "oracle" => Ok(MapSource::Oracle {
                quality: quality.unwrap_or(1.0),
            }),
            "import" => {
                let dir = import_dir.ok_or_else(|| {
                    Error::config("method 'import' needs an import directory".to_string())
                })?;
                Ok(MapSource::Import { dir: dir.to_path_buf() })
            }
            other => Err(Error::config(format!("unknown saliency method '{other}'"))),
        }
    }
}

/// Compute one sample's map from a non-import source.
pub fn compute_map(
    image: &RgbImage,
    mask: &GrayImage,
    source: &MapSource,
    seed: u64,
) -> Result<SaliencyMap> {
    match source {
        MapSource::White => Ok(white(image.width, image.height)),
        MapSource::Center => center(image.width, image.height, CENTER_SIGMA_FRACTION),
        MapSource::IttiKoch => itti_koch(image),
        MapSource::Bms => bms(image, BMS_THRESHOLDS, seed),
        MapSource::Oracle { quality } => oracle(mask, *quality, seed),
        MapSource::Import { .. } => Err(Error::config(
            "import maps are read from disk, not computed".to_string(),
        )),
    }
}

/// Attach a quantized map to every sample of a dataset. Import maps are
/// matched to samples in sorted-filename order and resized (with a warning)
/// on dimension mismatch; returned strings are the warnings.
pub fn attach_maps(
    dataset: &mut crate::data::Dataset,
    source: &MapSource,
) -> Result<Vec<String>> {
    let mut warnings = Vec::new();
    match source {
        MapSource::Import { dir } => {
            let mut files: Vec<std::path::PathBuf> = std::fs::read_dir(dir)
                .map_err(|e| Error::data(format!("cannot read {}: {e}", dir.display())))?
                .filter_map(|entry| entry.ok().map(|e| e.path()))
                .filter(|p| p.extension().map(|e| e == "pgm").unwrap_or(false))
                .collect();
            files.sort();
            if files.len() != dataset.samples.len() {
                return Err(Error::data(format!(
                    "{} holds {} .pgm maps but the dataset has {} samples",
                    dir.display(),
                    files.len(),
                    dataset.samples.len()
                )));
            }
            for (sample, path) in dataset.samples.iter_mut().zip(&files) {
                let mut map = load_map(path)?;
                let (w, h) = (sample.image.width, sample.image.height);
                if (map.width, map.height) != (w, h) {
                    warnings.push(format!(
                        "{}: map is {}x{}, resized to {}x{}",
                        path.display(),
                        map.width,
                        map.height,
                        w,
                        h
                    ));
                    map = map.resize_bilinear(w, h);
                }
                sample.saliency = Some(map.to_gray());
            }
        }
        _ => {
            let master = dataset.spec.seed;
            for sample in &mut dataset.samples {
                let seed = crate::data::map_seed(master, sample.id);
                let map = compute_map(&sample.image, &sample.mask, source, seed)?;
                sample.saliency = Some(map.to_gray());
            }
        }
    }
    Ok(warnings)
}
