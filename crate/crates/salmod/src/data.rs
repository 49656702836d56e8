//! Synthetic dataset generation, split planning, and dataset I/O.
//!
//! Each class is a shape family carrying a class-specific stripe texture
//! (frequency + orientation) whose inter-class spacing scales with the
//! subtlety knob `delta`: small delta means nearly indistinguishable
//! textures. One striped foreground shape is placed at a seeded random
//! position and scale over a cluttered background of solid distractor
//! shapes, and the generator records the exact foreground mask and tight
//! bounding box. Everything derives deterministically from the master seed.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::netpbm::{self, GrayImage, RgbImage};
use crate::tensor::Tensor;

/// Fixed split sizes: 5 test + 5 val images per class.
pub const TEST_PER_CLASS: usize = 5;
pub const VAL_PER_CLASS: usize = 5;
/// Cap on fixation samples drawn from a foreground mask.
pub const MAX_FIXATIONS: usize = 50;

/// Which disjoint bank of shape families a dataset draws from. The scarce
/// target task and the abundant pretraining task must not share families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FamilyBank {
    Target,
    Base,
}

/// Generator parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub num_classes: usize,
    pub samples_per_class: usize,
    /// (width, height)
    pub image_size: (usize, usize),
    /// Inter-class texture separation, in (0, 1].
    pub subtlety: f64,
    /// Approximate fraction of pixels covered by distractor shapes.
    pub clutter: f64,
    pub seed: u64,
    pub bank: FamilyBank,
}

impl Default for DatasetSpec {
    fn default() -> DatasetSpec {
        DatasetSpec {
            num_classes: 20,
            samples_per_class: 40,
            image_size: (64, 64),
            subtlety: 0.35,
            clutter: 0.3,
            seed: 7,
            bank: FamilyBank::Target,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        let min_needed = TEST_PER_CLASS + VAL_PER_CLASS + 1;
        if self.samples_per_class < min_needed {
            return Err(Error::config(format!(
                "samples_per_class {} too small: needs >= {} (5 test + 5 val + at least 1 train)",
                self.samples_per_class, min_needed
            )));
        }
        let (w, h) = self.image_size;
        if w < 16 || h < 16 {
            return Err(Error::config(format!(
                "image size {}x{} too small, need at least 16x16",
                w, h
            )));
        }
        if !(self.subtlety > 0.0 && self.subtlety <= 1.0) {
            return Err(Error::config(format!(
                "subtlety must lie in (0,1], got {}",
                self.subtlety
            )));
        }
        if !(0.0..=0.8).contains(&self.clutter) {
            return Err(Error::config(format!(
                "clutter must lie in [0,0.8], got {}",
                self.clutter
            )));
        }
        Ok(())
    }
}

/// The abundant pretraining task paired with a target spec: 50 classes x 100
/// samples at the same image size, drawn from the disjoint `Base` family
/// bank with an easier texture spacing.
pub fn base_task_spec(target: &DatasetSpec) -> DatasetSpec {
    DatasetSpec {
        num_classes: 50,
        samples_per_class: 100,
        image_size: target.image_size,
        subtlety: 0.8,
        clutter: target.clutter,
        seed: mix(target.seed, 0xBA5E),
        bank: FamilyBank::Base,
    }
}

/// Inclusive tight bounding box in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BBox {
    pub fn width(&self) -> usize {
        self.x1 - self.x0 + 1
    }
    pub fn height(&self) -> usize {
        self.y1 - self.y0 + 1
    }
    pub fn area(&self) -> usize {
        self.width() * self.height()
    }
    /// "x0:y0:x1:y1"
    pub fn encode(&self) -> String {
        format!("{}:{}:{}:{}", self.x0, self.y0, self.x1, self.y1)
    }
    pub fn decode(text: &str) -> Result<BBox> {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 4 {
            return Err(Error::format(format!("bad bbox '{text}'")));
        }
        let mut v = [0usize; 4];
        for (slot, p) in v.iter_mut().zip(&parts) {
            *slot = p
                .parse()
                .map_err(|_| Error::format(format!("bad bbox '{text}'")))?;
        }
        if v[0] > v[2] || v[1] > v[3] {
            return Err(Error::format(format!("inverted bbox '{text}'")));
        }
        Ok(BBox {
            x0: v[0],
            y0: v[1],
            x1: v[2],
            y1: v[3],
        })
    }
}

/// One image with its annotations. The id doubles as the index into
/// `Dataset::samples`.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: usize,
    pub label: usize,
    pub image: RgbImage,
    /// Foreground mask, pixels in {0, 255}.
    pub mask: GrayImage,
    pub bbox: BBox,
    /// Attached saliency map, 8-bit quantized, same size as the image.
    pub saliency: Option<GrayImage>,
}

impl Sample {
    /// Image as a [3, H, W] tensor with values byte/255.
    pub fn image_tensor(&self) -> Tensor {
        let (w, h) = (self.image.width, self.image.height);
        let mut data = vec![0.0; 3 * w * h];
        for (i, px) in self.image.pixels.chunks_exact(3).enumerate() {
            data[i] = px[0] as f64 / 255.0;
            data[w * h + i] = px[1] as f64 / 255.0;
            data[2 * w * h + i] = px[2] as f64 / 255.0;
        }
        Tensor::from_vec(&[3, h, w], data).expect("consistent size")
    }

    /// Attached saliency map as a [1, H, W] tensor, if present.
    pub fn saliency_tensor(&self) -> Option<Tensor> {
        let s = self.saliency.as_ref()?;
        let data = s.pixels.iter().map(|&b| b as f64 / 255.0).collect();
        Some(Tensor::from_vec(&[1, s.height, s.width], data).expect("consistent size"))
    }
}

/// A fully materialized dataset plus the spec that produced (or described) it.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }
}

/// Fixed evaluation splits plus per-class training pools. Pools keep a
/// canonical order; scarce subsets are seeded shuffles over them.
#[derive(Debug, Clone)]
pub struct SplitPlan {
    pub seed: u64,
    pub test: Vec<usize>,
    pub val: Vec<usize>,
    /// Per class: sample ids available for training.
    pub train_pool: Vec<Vec<usize>>,
}

impl SplitPlan {
    pub fn min_pool(&self) -> usize {
        self.train_pool.iter().map(|p| p.len()).min().unwrap_or(0)
    }
}

// ---- deterministic seeding helpers ----

/// splitmix64 finalizer over a combined word; used to derive independent
/// stream seeds from (master seed, purpose, index).
pub fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_SAMPLE: u64 = 0x5A17;
const STREAM_SPLIT: u64 = 0x51DE;
const STREAM_SUBSET: u64 = 0x5EED;
const STREAM_FIXATION: u64 = 0xF1A7;
const STREAM_MAP: u64 = 0x3A95;

/// Seed for the per-sample generator stream.
pub fn sample_seed(master: u64, id: usize) -> u64 {
    mix(mix(master, STREAM_SAMPLE), id as u64)
}

/// Seed for fixation sampling on one sample.
pub fn fixation_seed(master: u64, id: usize) -> u64 {
    mix(mix(master, STREAM_FIXATION), id as u64)
}

/// Seed for stochastic saliency estimators on one sample.
pub fn map_seed(master: u64, id: usize) -> u64 {
    mix(mix(master, STREAM_MAP), id as u64)
}

// ---- shape families ----

#[derive(Debug, Clone, Copy)]
enum ShapeKind {
    Disk,
    Square,
    Triangle,
    Ring,
    Diamond,
    Cross,
    HBar,
    Notch,
}

const TARGET_KINDS: [ShapeKind; 4] = [
    ShapeKind::Disk,
    ShapeKind::Square,
    ShapeKind::Triangle,
    ShapeKind::Ring,
];
const BASE_KINDS: [ShapeKind; 4] = [
    ShapeKind::Diamond,
    ShapeKind::Cross,
    ShapeKind::HBar,
    ShapeKind::Notch,
];
const ALL_KINDS: [ShapeKind; 8] = [
    ShapeKind::Disk,
    ShapeKind::Square,
    ShapeKind::Triangle,
    ShapeKind::Ring,
    ShapeKind::Diamond,
    ShapeKind::Cross,
    ShapeKind::HBar,
    ShapeKind::Notch,
];

impl ShapeKind {
    /// Membership test for a point at offset (dx, dy) from the shape center,
    /// for a shape of nominal radius r.
    fn contains(&self, dx: f64, dy: f64, r: f64) -> bool {
        match self {
            ShapeKind::Disk => dx * dx + dy * dy <= r * r,
            ShapeKind::Square => dx.abs() <= 0.82 * r && dy.abs() <= 0.82 * r,
            ShapeKind::Triangle => {
                dy >= -r && dy <= 0.7 * r && dx.abs() <= 0.9 * r * (dy + r) / (1.7 * r)
            }
            ShapeKind::Ring => {
                let d2 = dx * dx + dy * dy;
                d2 <= r * r && d2 >= (0.55 * r) * (0.55 * r)
            }
            ShapeKind::Diamond => dx.abs() + dy.abs() <= 1.1 * r,
            ShapeKind::Cross => {
                (dx.abs() <= 0.38 * r && dy.abs() <= r) || (dy.abs() <= 0.38 * r && dx.abs() <= r)
            }
            ShapeKind::HBar => dx.abs() <= r && dy.abs() <= 0.45 * r,
            ShapeKind::Notch => dx.abs() <= 0.85 * r && dy.abs() <= 0.85 * r && !(dx > 0.0 && dy < 0.0),
        }
    }
}

/// Class appearance: a hue-wheel color, a shape, and a stripe texture.
/// Classes sit on a color wheel whose angular spacing scales with delta, so
/// small delta pushes neighbouring classes together; shape and stripe
/// parameters are correlated secondary cues.
#[derive(Debug, Clone, Copy)]
struct ClassStyle {
    kind: ShapeKind,
    hue: [f64; 3],
    wavelength: f64,
    orientation: f64,
}

/// Smooth three-phase color wheel, kept in mid range so stripe modulation
/// (factor up to 1.4) never clips at white.
fn wheel_rgb(angle: f64, amp: f64) -> [f64; 3] {
    let third = std::f64::consts::TAU / 3.0;
    let mid = 0.42;
    [
        mid + amp * angle.cos(),
        mid + amp * (angle - third).cos(),
        mid + amp * (angle - 2.0 * third).cos(),
    ]
}

/// Class foregrounds use the full wheel amplitude; distractors a reduced one.
const CLASS_COLOR_AMP: f64 = 0.28;
const DISTRACTOR_COLOR_AMP: f64 = 0.24;

fn class_style(spec: &DatasetSpec, label: usize) -> ClassStyle {
    let kinds: &[ShapeKind; 4] = match spec.bank {
        FamilyBank::Target => &TARGET_KINDS,
        FamilyBank::Base => &BASE_KINDS,
    };
    let kind = kinds[label % 4];
    let levels = (spec.num_classes + 3) / 4;
    let t = label / 4;
    // u spreads texture levels over [-1, 1]
    let u = if levels > 1 {
        2.0 * t as f64 / (levels - 1) as f64 - 1.0
    } else {
        0.0
    };
    let delta = spec.subtlety;
    let base_wavelength = match spec.bank {
        FamilyBank::Target => 6.0,
        FamilyBank::Base => 6.5,
    };
    let (orient_offset, wheel_offset) = match spec.bank {
        FamilyBank::Target => (0.0, 0.0),
        FamilyBank::Base => (std::f64::consts::FRAC_PI_4, 0.31),
    };
    // each label gets its own wheel angle; adjacent labels differ in shape as
    // well, so the nearest same-shape competitor sits four spacings away
    let angle = wheel_offset
        + std::f64::consts::TAU * delta * label as f64 / spec.num_classes as f64;
    ClassStyle {
        kind,
        hue: wheel_rgb(angle, CLASS_COLOR_AMP),
        wavelength: base_wavelength * (1.0 - 0.35 * delta * u),
        orientation: 0.4 * std::f64::consts::PI * delta * u + orient_offset,
    }
}

// ---- image composition ----

struct Canvas {
    w: usize,
    h: usize,
    rgb: Vec<f64>, // interleaved
}

impl Canvas {
    fn paint(&mut self, x: usize, y: usize, color: [f64; 3]) {
        let off = (y * self.w + x) * 3;
        self.rgb[off] = color[0];
        self.rgb[off + 1] = color[1];
        self.rgb[off + 2] = color[2];
    }

    fn quantize(&self) -> RgbImage {
        RgbImage {
            width: self.w,
            height: self.h,
            pixels: self
                .rgb
                .iter()
                .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
                .collect(),
        }
    }
}

fn compose_sample(spec: &DatasetSpec, id: usize, label: usize) -> Sample {
    let (w, h) = spec.image_size;
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(spec.seed, id));
    let mut canvas = Canvas {
        w,
        h,
        rgb: vec![0.0; w * h * 3],
    };

    // background: near-neutral smooth field + fine pixel noise; only mildly
    // tinted so the foreground is the one strongly saturated region
    let lum = rng.gen_range(0.30..0.55);
    let base: [f64; 3] = [
        lum + rng.gen_range(-0.05..0.05),
        lum + rng.gen_range(-0.05..0.05),
        lum + rng.gen_range(-0.05..0.05),
    ];
    let grid = 8usize;
    let mut coarse = vec![[0.0f64; 3]; grid * grid];
    for cell in coarse.iter_mut() {
        for c in 0..3 {
            cell[c] = rng.gen_range(-0.06..0.06);
        }
    }
    for y in 0..h {
        for x in 0..w {
            // bilinear lookup into the coarse grid
            let gx = x as f64 * (grid - 1) as f64 / (w - 1).max(1) as f64;
            let gy = y as f64 * (grid - 1) as f64 / (h - 1).max(1) as f64;
            let (x0, y0) = (gx.floor() as usize, gy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(grid - 1), (y0 + 1).min(grid - 1));
            let (fx, fy) = (gx - x0 as f64, gy - y0 as f64);
            let mut color = [0.0; 3];
            for c in 0..3 {
                let top = coarse[y0 * grid + x0][c] * (1.0 - fx) + coarse[y0 * grid + x1][c] * fx;
                let bot = coarse[y1 * grid + x0][c] * (1.0 - fx) + coarse[y1 * grid + x1][c] * fx;
                color[c] = base[c] + top * (1.0 - fy) + bot * fy + rng.gen_range(-0.02..0.02);
            }
            canvas.paint(x, y, color);
        }
    }

    // distractors: solid shapes painted until coverage reaches the clutter target
    let target_cover = (spec.clutter * (w * h) as f64) as usize;
    let mut covered = vec![false; w * h];
    let mut cover_count = 0usize;
    let min_dim = w.min(h) as f64;
    for _ in 0..64 {
        if cover_count >= target_cover {
            break;
        }
        let kind = ALL_KINDS[rng.gen_range(0..8)];
        let r = rng.gen_range(0.05..0.13) * min_dim;
        let cx = rng.gen_range(0.0..w as f64);
        let cy = rng.gen_range(0.0..h as f64);
        // distractors draw from the same color wheel as class foregrounds at
        // a random angle, so pooled color statistics are polluted unless the
        // readout concentrates on the striped foreground blob
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        let base_c = wheel_rgb(angle, DISTRACTOR_COLOR_AMP);
        let color = [
            base_c[0] + rng.gen_range(-0.04..0.04),
            base_c[1] + rng.gen_range(-0.04..0.04),
            base_c[2] + rng.gen_range(-0.04..0.04),
        ];
        let x_lo = ((cx - 1.2 * r).floor().max(0.0)) as usize;
        let x_hi = ((cx + 1.2 * r).ceil().min((w - 1) as f64)) as usize;
        let y_lo = ((cy - 1.2 * r).floor().max(0.0)) as usize;
        let y_hi = ((cy + 1.2 * r).ceil().min((h - 1) as f64)) as usize;
        for y in y_lo..=y_hi {
            for x in x_lo..=x_hi {
                if kind.contains(x as f64 - cx, y as f64 - cy, r) {
                    let jitter = rng.gen_range(-0.03..0.03);
                    canvas.paint(x, y, [color[0] + jitter, color[1] + jitter, color[2] + jitter]);
                    let idx = y * w + x;
                    if !covered[idx] {
                        covered[idx] = true;
                        cover_count += 1;
                    }
                }
            }
        }
    }

    // foreground: one striped shape of the class style, fully inside the frame
    let style = class_style(spec, label);
    let r = rng.gen_range(0.16..0.24) * min_dim;
    let cx = rng.gen_range(r + 1.0..w as f64 - r - 2.0);
    let cy = rng.gen_range(r + 1.0..h as f64 - r - 2.0);
    let wavelength = style.wavelength * (1.0 + rng.gen_range(-0.02..0.02));
    let orientation = style.orientation
        + rng.gen_range(-0.03..0.03) * std::f64::consts::PI * spec.subtlety;
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    // class color with a brightness gain (hue-angle preserving) and a little
    // per-channel noise; clamp keeps the brightest stripe below 1.0
    let gain = rng.gen_range(0.93..1.07);
    let hue: [f64; 3] = [
        (style.hue[0] * gain + rng.gen_range(-0.02..0.02)).clamp(0.08, 0.70),
        (style.hue[1] * gain + rng.gen_range(-0.02..0.02)).clamp(0.08, 0.70),
        (style.hue[2] * gain + rng.gen_range(-0.02..0.02)).clamp(0.08, 0.70),
    ];
    let (sin_o, cos_o) = orientation.sin_cos();
    let omega = std::f64::consts::TAU / wavelength;

    let mut mask = GrayImage::new(w, h);
    let (mut x0, mut y0, mut x1, mut y1) = (w, h, 0usize, 0usize);
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            if style.kind.contains(dx, dy, r) {
                let stripe = (omega * (dx * cos_o + dy * sin_o) + phase).cos();
                let scale = 1.0 + 0.40 * stripe;
                canvas.paint(x, y, [hue[0] * scale, hue[1] * scale, hue[2] * scale]);
                mask.pixels[y * w + x] = 255;
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    debug_assert!(x0 <= x1 && y0 <= y1, "foreground shape painted no pixels");

    Sample {
        id,
        label,
        image: canvas.quantize(),
        mask,
        bbox: BBox { x0, y0, x1, y1 },
        saliency: None,
    }
}

/// Generate the full dataset for a spec. Deterministic: the same spec yields
/// byte-identical samples, and each sample depends only on (seed, id).
pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut samples = Vec::with_capacity(spec.num_classes * spec.samples_per_class);
    for class in 0..spec.num_classes {
        for i in 0..spec.samples_per_class {
            let id = class * spec.samples_per_class + i;
            debug_assert_eq!(id, samples.len());
            let _ = i;
            samples.push(compose_sample(spec, id, class));
        }
    }
    Ok(Dataset {
        spec: spec.clone(),
        samples,
    })
}

/// Derive the fixed 5-test / 5-val split and per-class training pools from
/// the dataset's master seed.
pub fn split(dataset: &Dataset) -> Result<SplitPlan> {
    let spec = &dataset.spec;
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); spec.num_classes];
    for s in &dataset.samples {
        if s.label >= spec.num_classes {
            return Err(Error::data(format!(
                "sample {} has label {} but dataset declares {} classes",
                s.id, s.label, spec.num_classes
            )));
        }
        per_class[s.label].push(s.id);
    }
    let mut test = Vec::new();
    let mut val = Vec::new();
    let mut train_pool = Vec::with_capacity(spec.num_classes);
    for (class, ids) in per_class.iter_mut().enumerate() {
        if ids.len() < TEST_PER_CLASS + VAL_PER_CLASS + 1 {
            return Err(Error::data(format!(
                "class {} has {} samples; needs at least {}",
                class,
                ids.len(),
                TEST_PER_CLASS + VAL_PER_CLASS + 1
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix(mix(spec.seed, STREAM_SPLIT), class as u64));
        // Fisher-Yates over the class's ids
        for i in (1..ids.len()).rev() {
            let j = rng.gen_range(0..=i);
            ids.swap(i, j);
        }
        test.extend_from_slice(&ids[..TEST_PER_CLASS]);
        val.extend_from_slice(&ids[TEST_PER_CLASS..TEST_PER_CLASS + VAL_PER_CLASS]);
        let mut pool = ids[TEST_PER_CLASS + VAL_PER_CLASS..].to_vec();
        pool.sort_unstable(); // canonical order; subsets reshuffle per seed
        train_pool.push(pool);
    }
    Ok(SplitPlan {
        seed: spec.seed,
        test,
        val,
        train_pool,
    })
}

/// The first k of a seeded shuffle of each class's pool; nested in k for a
/// fixed seed (subset(k) is a prefix of subset(k')).
pub fn subset(plan: &SplitPlan, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::config("subset size k must be >= 1".to_string()));
    }
    let mut chosen = Vec::with_capacity(k * plan.train_pool.len());
    for (class, pool) in plan.train_pool.iter().enumerate() {
        if k > pool.len() {
            return Err(Error::config(format!(
                "k = {} exceeds the class-{} training pool of {}",
                k,
                class,
                pool.len()
            )));
        }
        let mut order = pool.clone();
        let mut rng =
            ChaCha8Rng::seed_from_u64(mix(mix(plan.seed, STREAM_SUBSET), mix(class as u64, seed)));
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        chosen.extend_from_slice(&order[..k]);
    }
    Ok(chosen)
}

// ---- on-disk layout ----

fn rel_image(id: usize) -> String {
    format!("images/img_{id:05}.ppm")
}
fn rel_mask(id: usize) -> String {
    format!("masks/img_{id:05}.pgm")
}
fn rel_saliency(id: usize) -> String {
    format!("saliency/img_{id:05}.pgm")
}

/// Write a dataset directory: images/, masks/, optional saliency/, a
/// five-column index.csv (image,label,mask,bbox,saliency) and a meta.txt
/// describing the generator spec.
pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    fs::create_dir_all(dir.join("images"))?;
    fs::create_dir_all(dir.join("masks"))?;
    if dataset.samples.iter().any(|s| s.saliency.is_some()) {
        fs::create_dir_all(dir.join("saliency"))?;
    }
    let mut index = String::from("image,label,mask,bbox,saliency\n");
    for s in &dataset.samples {
        netpbm::write_ppm(&dir.join(rel_image(s.id)), &s.image)?;
        netpbm::write_pgm(&dir.join(rel_mask(s.id)), &s.mask)?;
        let sal_field = match &s.saliency {
            Some(map) => {
                let rel = rel_saliency(s.id);
                netpbm::write_pgm(&dir.join(&rel), map)?;
                rel
            }
            None => String::new(),
        };
        index.push_str(&format!(
            "{},{},{},{},{}\n",
            rel_image(s.id),
            s.label,
            rel_mask(s.id),
            s.bbox.encode(),
            sal_field
        ));
    }
    fs::write(dir.join("index.csv"), index)?;
    fs::write(dir.join("meta.txt"), encode_meta(&dataset.spec))?;
    Ok(())
}

/// Rewrite just the saliency maps and the index of an existing dataset
/// directory (images and masks stay untouched).
pub fn update_saliency_files(dir: &Path, dataset: &Dataset) -> Result<()> {
    fs::create_dir_all(dir.join("saliency"))?;
    let mut index = String::from("image,label,mask,bbox,saliency\n");
    for s in &dataset.samples {
        let sal_field = match &s.saliency {
            Some(map) => {
                let rel = rel_saliency(s.id);
                netpbm::write_pgm(&dir.join(&rel), map)?;
                rel
            }
            None => String::new(),
        };
        index.push_str(&format!(
            "{},{},{},{},{}\n",
            rel_image(s.id),
            s.label,
            rel_mask(s.id),
            s.bbox.encode(),
            sal_field
        ));
    }
    fs::write(dir.join("index.csv"), index)?;
    Ok(())
}

fn encode_meta(spec: &DatasetSpec) -> String {
    format!(
        "num_classes = {}\nsamples_per_class = {}\nwidth = {}\nheight = {}\nsubtlety = {}\nclutter = {}\nseed = {}\nbank = {}\n",
        spec.num_classes,
        spec.samples_per_class,
        spec.image_size.0,
        spec.image_size.1,
        spec.subtlety,
        spec.clutter,
        spec.seed,
        match spec.bank {
            FamilyBank::Target => "target",
            FamilyBank::Base => "base",
        }
    )
}

fn decode_meta(text: &str) -> Result<DatasetSpec> {
    let mut spec = DatasetSpec::default();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::format(format!("meta.txt line {}: expected key = value", lineno + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        let bad = |k: &str| Error::format(format!("meta.txt: bad value for {k}"));
        match key {
            "num_classes" => spec.num_classes = value.parse().map_err(|_| bad(key))?,
            "samples_per_class" => spec.samples_per_class = value.parse().map_err(|_| bad(key))?,
            "width" => spec.image_size.0 = value.parse().map_err(|_| bad(key))?,
            "height" => spec.image_size.1 = value.parse().map_err(|_| bad(key))?,
            "subtlety" => spec.subtlety = value.parse().map_err(|_| bad(key))?,
            "clutter" => spec.clutter = value.parse().map_err(|_| bad(key))?,
            "seed" => spec.seed = value.parse().map_err(|_| bad(key))?,
            "bank" => {
                spec.bank = match value {
                    "target" => FamilyBank::Target,
                    "base" => FamilyBank::Base,
                    _ => return Err(bad(key)),
                }
            }
            other => return Err(Error::format(format!("meta.txt: unknown key '{other}'"))),
        }
    }
    Ok(spec)
}

/// Load a dataset directory written by `write_dataset` (or extended by the
/// saliency generator). Errors on malformed index rows or missing files.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let index = fs::read_to_string(dir.join("index.csv"))
        .map_err(|e| Error::data(format!("cannot read {}: {e}", dir.join("index.csv").display())))?;
    let meta = fs::read_to_string(dir.join("meta.txt"))
        .map_err(|e| Error::data(format!("cannot read {}: {e}", dir.join("meta.txt").display())))?;
    let spec = decode_meta(&meta)?;
    let mut samples = Vec::new();
    let mut lines = index.lines();
    match lines.next() {
        Some(header) if header == "image,label,mask,bbox,saliency" => {}
        other => {
            return Err(Error::format(format!(
                "index.csv: bad header {:?}",
                other.unwrap_or("")
            )))
        }
    }
    for (row, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::format(format!(
                "index.csv row {}: expected 5 fields, got {}",
                row + 1,
                fields.len()
            )));
        }
        let label: usize = fields[1]
            .parse()
            .map_err(|_| Error::format(format!("index.csv row {}: bad label", row + 1)))?;
        let bbox = BBox::decode(fields[3])?;
        let image = netpbm::read_ppm(&dir.join(fields[0]))?;
        let mask = netpbm::read_pgm(&dir.join(fields[2]))?;
        if mask.width != image.width || mask.height != image.height {
            return Err(Error::data(format!(
                "index.csv row {}: mask size {}x{} does not match image {}x{}",
                row + 1,
                mask.width,
                mask.height,
                image.width,
                image.height
            )));
        }
        if bbox.x1 >= image.width || bbox.y1 >= image.height {
            return Err(Error::format(format!(
                "index.csv row {}: bbox {} outside image",
                row + 1,
                bbox.encode()
            )));
        }
        let saliency = if fields[4].is_empty() {
            None
        } else {
            Some(netpbm::read_pgm(&dir.join(fields[4]))?)
        };
        samples.push(Sample {
            id: samples.len(),
            label,
            image,
            mask,
            bbox,
            saliency,
        });
    }
    if samples.is_empty() {
        return Err(Error::data("index.csv lists no samples".to_string()));
    }
    let expected = spec.num_classes * spec.samples_per_class;
    if samples.len() != expected {
        return Err(Error::data(format!(
            "index.csv lists {} samples but meta.txt declares {}",
            samples.len(),
            expected
        )));
    }
    Ok(Dataset { spec, samples })
}

/// Ingest an external folder layout: one subdirectory per class (sorted by
/// name = label order), holding `*.ppm` images with optional `<stem>.mask.pgm`
/// siblings. Images are bilinearly resized to `size`; masks are resized
/// nearest-neighbor; a missing mask becomes full-image foreground.
pub fn ingest_folder(root: &Path, size: (usize, usize), seed: u64) -> Result<Dataset> {
    let mut class_dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::data(format!("cannot read {}: {e}", root.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    class_dirs.sort();
    if class_dirs.len() < 2 {
        return Err(Error::data(format!(
            "{} has {} class directories; need at least 2",
            root.display(),
            class_dirs.len()
        )));
    }
    let mut samples: Vec<Sample> = Vec::new();
    let mut per_class_count = Vec::new();
    for (label, class_dir) in class_dirs.iter().enumerate() {
        let mut images: Vec<PathBuf> = fs::read_dir(class_dir)?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension().map(|e| e == "ppm").unwrap_or(false)
                    && !p.to_string_lossy().ends_with(".mask.ppm")
            })
            .collect();
        images.sort();
        if images.is_empty() {
            return Err(Error::data(format!("{} holds no .ppm images", class_dir.display())));
        }
        for img_path in &images {
            let raw = netpbm::read_ppm(img_path)?;
            let image = resize_rgb(&raw, size);
            let mask_path = img_path.with_extension("mask.pgm");
            let mask = if mask_path.exists() {
                let m = netpbm::read_pgm(&mask_path)?;
                resize_mask(&m, size)
            } else {
                GrayImage {
                    width: size.0,
                    height: size.1,
                    pixels: vec![255; size.0 * size.1],
                }
            };
            let bbox = bbox_of_mask(&mask).unwrap_or(BBox {
                x0: 0,
                y0: 0,
                x1: size.0 - 1,
                y1: size.1 - 1,
            });
            samples.push(Sample {
                id: samples.len(),
                label,
                image,
                mask,
                bbox,
                saliency: None,
            });
        }
        per_class_count.push(images.len());
    }
    let uniform = per_class_count.iter().all(|&c| c == per_class_count[0]);
    if !uniform {
        return Err(Error::data(format!(
            "ingest needs balanced classes, got counts {:?}",
            per_class_count
        )));
    }
    let spec = DatasetSpec {
        num_classes: class_dirs.len(),
        samples_per_class: per_class_count[0],
        image_size: size,
        subtlety: 1.0,
        clutter: 0.0,
        seed,
        bank: FamilyBank::Target,
    };
    spec.validate()?;
    Ok(Dataset { spec, samples })
}

/// Tight bounding box of mask > 0, or None for an empty mask.
pub fn bbox_of_mask(mask: &GrayImage) -> Option<BBox> {
    let (mut x0, mut y0, mut x1, mut y1) = (mask.width, mask.height, 0usize, 0usize);
    let mut any = false;
    for y in 0..mask.height {
        for x in 0..mask.width {
            if mask.pixels[y * mask.width + x] > 0 {
                any = true;
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    any.then_some(BBox { x0, y0, x1, y1 })
}

fn resize_rgb(src: &RgbImage, size: (usize, usize)) -> RgbImage {
    let (tw, th) = size;
    if (src.width, src.height) == (tw, th) {
        return src.clone();
    }
    let mut out = RgbImage::new(tw, th);
    let sx = src.width as f64 / tw as f64;
    let sy = src.height as f64 / th as f64;
    for y in 0..th {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (src.height - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(src.height - 1);
        let wy = fy - y0 as f64;
        for x in 0..tw {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (src.width - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(src.width - 1);
            let wx = fx - x0 as f64;
            for c in 0..3 {
                let v00 = src.pixels[(y0 * src.width + x0) * 3 + c] as f64;
                let v01 = src.pixels[(y0 * src.width + x1) * 3 + c] as f64;
                let v10 = src.pixels[(y1 * src.width + x0) * 3 + c] as f64;
                let v11 = src.pixels[(y1 * src.width + x1) * 3 + c] as f64;
                let top = v00 * (1.0 - wx) + v01 * wx;
                let bot = v10 * (1.0 - wx) + v11 * wx;
                out.pixels[(y * tw + x) * 3 + c] =
                    (top * (1.0 - wy) + bot * wy).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    out
}

fn resize_mask(src: &GrayImage, size: (usize, usize)) -> GrayImage {
    let (tw, th) = size;
    if (src.width, src.height) == (tw, th) {
        return GrayImage {
            width: tw,
            height: th,
            pixels: src.pixels.iter().map(|&p| if p > 0 { 255 } else { 0 }).collect(),
        };
    }
    let mut out = GrayImage::new(tw, th);
    for y in 0..th {
        let sy = (y * src.height / th).min(src.height - 1);
        for x in 0..tw {
            let sx = (x * src.width / tw).min(src.width - 1);
            out.pixels[y * tw + x] = if src.pixels[sy * src.width + sx] > 0 { 255 } else { 0 };
        }
    }
    out
}
