//! Experiment configuration: a flat `key = value` text format with dotted
//! section keys. Unknown keys are errors, parsing then serializing then
//! parsing again yields an identical config, and every run parameter (seeds
//! included) lives here so a config fully determines its outputs.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use crate::data::{base_task_spec, DatasetSpec, FamilyBank};
use crate::error::{Error, Result};
use crate::model::{NetworkConfig, PoolPosition, Variant};
use crate::saliency::MapSource;
use crate::train::Hyperparams;

/// One entry of `train.k_list`: a shot count or the `K` token (the full
/// per-class training pool, resolved against the dataset at run time).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KEntry {
    Num(usize),
    FullPool,
}

impl KEntry {
    fn render(&self) -> String {
        match self {
            KEntry::Num(n) => n.to_string(),
            KEntry::FullPool => "K".to_string(),
        }
    }
}

/// How each experiment cell's parameters are initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitProtocol {
    /// Fresh Xavier draws, no base-task pretraining.
    Xavier,
    /// Base-task backbone with a fresh saliency branch.
    Scratch,
    /// Base-task backbone and base-task-trained saliency branch.
    Pretrained,
}

impl InitProtocol {
    pub fn name(&self) -> &'static str {
        match self {
            InitProtocol::Xavier => "none",
            InitProtocol::Scratch => "scratch",
            InitProtocol::Pretrained => "pretrained",
        }
    }

    pub fn parse(s: &str) -> Result<InitProtocol> {
        match s {
            "none" => Ok(InitProtocol::Xavier),
            "scratch" => Ok(InitProtocol::Scratch),
            "pretrained" => Ok(InitProtocol::Pretrained),
            other => Err(Error::config(format!(
                "net.init must be none, scratch, or pretrained, got '{other}'"
            ))),
        }
    }
}

fn pool_position_name(p: PoolPosition) -> &'static str {
    match p {
        PoolPosition::BeforeFusion => "before_fusion",
        PoolPosition::AfterFusion => "after_fusion",
    }
}

fn pool_position_parse(s: &str) -> Result<PoolPosition> {
    match s {
        "before_fusion" => Ok(PoolPosition::BeforeFusion),
        "after_fusion" => Ok(PoolPosition::AfterFusion),
        other => Err(Error::config(format!(
            "net.pool_position must be before_fusion or after_fusion, got '{other}'"
        ))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data_classes: usize,
    pub data_samples_per_class: usize,
    pub data_width: usize,
    pub data_height: usize,
    pub data_subtlety: f64,
    pub data_clutter: f64,
    pub data_seed: u64,
    /// Where the dataset lives on disk.
    pub data_dir: PathBuf,
    /// When set, gen-data ingests this class-per-subdirectory folder instead
    /// of synthesizing images.
    pub data_folder: Option<PathBuf>,

    pub net_variant: Variant,
    pub net_fusion_level: usize,
    pub net_saliency_depth: usize,
    pub net_saliency_width: f64,
    pub net_skip: bool,
    pub net_pool_position: Option<PoolPosition>,
    pub net_init: InitProtocol,
    /// Freeze the saliency branch during target-task training.
    pub net_freeze_branch: bool,

    pub train_epochs: usize,
    pub train_lr: f64,
    pub train_weight_decay: f64,
    pub train_momentum: f64,
    pub train_batch_size: usize,
    pub train_k_list: Vec<KEntry>,
    pub train_seeds: usize,
    pub train_seed: u64,

    pub pretrain_classes: usize,
    pub pretrain_samples_per_class: usize,
    pub pretrain_subtlety: f64,
    pub pretrain_epochs: usize,

    /// Map generator: white, center, itti_koch, bms, oracle, import, or
    /// empty for none.
    pub saliency_method: String,
    pub saliency_quality: Option<f64>,
    pub saliency_import_dir: Option<PathBuf>,
    /// Oracle quality levels for the NSS/accuracy sweep (empty = off).
    pub saliency_sweep: Vec<f64>,

    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> ExperimentConfig {
        ExperimentConfig {
            data_classes: 20,
            data_samples_per_class: 40,
            data_width: 64,
            data_height: 64,
            data_subtlety: 0.35,
            data_clutter: 0.3,
            data_seed: 7,
            data_dir: PathBuf::from("data"),
            data_folder: None,
            net_variant: Variant::DelayedFusion,
            net_fusion_level: 2,
            net_saliency_depth: 2,
            net_saliency_width: 1.0,
            net_skip: true,
            net_pool_position: None,
            net_init: InitProtocol::Xavier,
            net_freeze_branch: false,
            train_epochs: 40,
            train_lr: 0.01,
            train_weight_decay: 0.003,
            train_momentum: 0.9,
            train_batch_size: 16,
            train_k_list: vec![
                KEntry::Num(1),
                KEntry::Num(2),
                KEntry::Num(3),
                KEntry::Num(5),
                KEntry::Num(10),
                KEntry::FullPool,
            ],
            train_seeds: 5,
            train_seed: 0,
            pretrain_classes: 50,
            pretrain_samples_per_class: 100,
            pretrain_subtlety: 0.8,
            pretrain_epochs: 15,
            saliency_method: String::new(),
            saliency_quality: None,
            saliency_import_dir: None,
            saliency_sweep: Vec::new(),
            out_dir: PathBuf::from("out"),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| {
        Error::config(format!(
            "{key}: expected a {}, got '{value}'",
            std::any::type_name::<T>()
        ))
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::config(format!(
            "{key}: expected true or false, got '{value}'"
        ))),
    }
}

fn parse_k_list(value: &str) -> Result<Vec<KEntry>> {
    let mut out = Vec::new();
    for part in value.split(',') {
        let token = part.trim();
        if token == "K" {
            out.push(KEntry::FullPool);
        } else {
            let n: usize = parse_num("train.k_list", token)?;
            if n == 0 {
                return Err(Error::config("train.k_list: k must be >= 1".to_string()));
            }
            out.push(KEntry::Num(n));
        }
    }
    Ok(out)
}

fn parse_sweep(value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(|part| {
            let q: f64 = parse_num("saliency.sweep", part.trim())?;
            if !(0.0..=1.0).contains(&q) {
                return Err(Error::config(format!(
                    "saliency.sweep: quality {q} outside [0,1]"
                )));
            }
            Ok(q)
        })
        .collect()
}

impl ExperimentConfig {
    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "data.classes" => self.data_classes = parse_num(key, value)?,
            "data.samples_per_class" => self.data_samples_per_class = parse_num(key, value)?,
            "data.width" => self.data_width = parse_num(key, value)?,
            "data.height" => self.data_height = parse_num(key, value)?,
            "data.subtlety" => self.data_subtlety = parse_num(key, value)?,
            "data.clutter" => self.data_clutter = parse_num(key, value)?,
            "data.seed" => self.data_seed = parse_num(key, value)?,
            "data.dir" => self.data_dir = PathBuf::from(value),
            "data.folder" => self.data_folder = Some(PathBuf::from(value)),
            "net.variant" => self.net_variant = Variant::parse(value)?,
            "net.fusion_level" => self.net_fusion_level = parse_num(key, value)?,
            "net.saliency_depth" => self.net_saliency_depth = parse_num(key, value)?,
            "net.saliency_width" => self.net_saliency_width = parse_num(key, value)?,
            "net.skip" => self.net_skip = parse_bool(key, value)?,
            "net.pool_position" => self.net_pool_position = Some(pool_position_parse(value)?),
            "net.init" => self.net_init = InitProtocol::parse(value)?,
            "net.freeze_branch" => self.net_freeze_branch = parse_bool(key, value)?,
            "train.epochs" => self.train_epochs = parse_num(key, value)?,
            "train.lr" => self.train_lr = parse_num(key, value)?,
            "train.weight_decay" => self.train_weight_decay = parse_num(key, value)?,
            "train.momentum" => self.train_momentum = parse_num(key, value)?,
            "train.batch_size" => self.train_batch_size = parse_num(key, value)?,
            "train.k_list" => self.train_k_list = parse_k_list(value)?,
            "train.seeds" => self.train_seeds = parse_num(key, value)?,
            "train.seed" => self.train_seed = parse_num(key, value)?,
            "pretrain.classes" => self.pretrain_classes = parse_num(key, value)?,
            "pretrain.samples_per_class" => {
                self.pretrain_samples_per_class = parse_num(key, value)?
            }
            "pretrain.subtlety" => self.pretrain_subtlety = parse_num(key, value)?,
            "pretrain.epochs" => self.pretrain_epochs = parse_num(key, value)?,
            "saliency.method" => self.saliency_method = value.to_string(),
            "saliency.quality" => self.saliency_quality = Some(parse_num(key, value)?),
            "saliency.import_dir" => self.saliency_import_dir = Some(PathBuf::from(value)),
            "saliency.sweep" => self.saliency_sweep = parse_sweep(value)?,
            "out.dir" => self.out_dir = PathBuf::from(value),
            _ => {
                return Err(Error::config(format!("unknown config key '{key}'")));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset_spec().validate()?;
        self.network_config().validate()?;
        self.hyperparams().validate()?;
        if self.pretrain_epochs == 0 {
            return Err(Error::config("pretrain.epochs must be >= 1".to_string()));
        }
        if self.train_seeds == 0 {
            return Err(Error::config("train.seeds must be >= 1".to_string()));
        }
        if self.train_k_list.is_empty() {
            return Err(Error::config("train.k_list must not be empty".to_string()));
        }
        let mut seen = BTreeSet::new();
        for entry in &self.train_k_list {
            if !seen.insert(entry.render()) {
                return Err(Error::config(format!(
                    "train.k_list repeats {}",
                    entry.render()
                )));
            }
        }
        if self.net_variant.needs_saliency() && self.saliency_method.is_empty() {
            return Err(Error::config(format!(
                "variant {} consumes saliency maps; set saliency.method",
                self.net_variant.name()
            )));
        }
        if self.saliency_quality.is_some() && self.saliency_method != "oracle" {
            return Err(Error::config(format!(
                "saliency.quality applies only to the oracle method, not '{}'",
                self.saliency_method
            )));
        }
        if self.saliency_import_dir.is_some() && self.saliency_method != "import" {
            return Err(Error::config(format!(
                "saliency.import_dir applies only to the import method, not '{}'",
                self.saliency_method
            )));
        }
        if self.saliency_method == "import" && self.saliency_import_dir.is_none() {
            return Err(Error::config(
                "saliency.method = import needs saliency.import_dir".to_string(),
            ));
        }
        if self.net_init == InitProtocol::Pretrained && self.saliency_method == "import" {
            return Err(Error::config(
                "pretrained initialization computes maps for its internal base task; \
                 imported maps cannot cover it"
                    .to_string(),
            ));
        }
        if !self.saliency_sweep.is_empty() {
            if self.saliency_sweep.len() < 3 {
                return Err(Error::config(format!(
                    "saliency.sweep needs at least 3 quality levels, got {}",
                    self.saliency_sweep.len()
                )));
            }
            if !self.net_variant.needs_saliency() {
                return Err(Error::config(
                    "saliency.sweep trains a saliency-consuming variant; baseline has no map input"
                        .to_string(),
                ));
            }
        }
        // the map source itself must be constructible
        self.map_source()?;
        Ok(())
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            num_classes: self.data_classes,
            samples_per_class: self.data_samples_per_class,
            image_size: (self.data_width, self.data_height),
            subtlety: self.data_subtlety,
            clutter: self.data_clutter,
            seed: self.data_seed,
            bank: FamilyBank::Target,
        }
    }

    /// The abundant pretraining task: disjoint shape families, same frame
    /// size, easier class separation, derived seed.
    pub fn base_spec(&self) -> DatasetSpec {
        DatasetSpec {
            num_classes: self.pretrain_classes,
            samples_per_class: self.pretrain_samples_per_class,
            subtlety: self.pretrain_subtlety,
            ..base_task_spec(&self.dataset_spec())
        }
    }

    pub fn network_config(&self) -> NetworkConfig {
        NetworkConfig {
            variant: self.net_variant,
            num_classes: self.data_classes,
            fusion_level: self.net_fusion_level,
            saliency_depth: self.net_saliency_depth,
            saliency_width: self.net_saliency_width,
            skip: self.net_skip,
            pool_position: self.net_pool_position,
        }
    }

    pub fn hyperparams(&self) -> Hyperparams {
        Hyperparams {
            epochs: self.train_epochs,
            learning_rate: self.train_lr,
            weight_decay: self.train_weight_decay,
            momentum: self.train_momentum,
            batch_size: self.train_batch_size,
        }
    }

    pub fn pretrain_hyperparams(&self) -> Hyperparams {
        Hyperparams {
            epochs: self.pretrain_epochs,
            ..self.hyperparams()
        }
    }

    pub fn map_source(&self) -> Result<Option<MapSource>> {
        if self.saliency_method.is_empty() {
            return Ok(None);
        }
        MapSource::parse(
            &self.saliency_method,
            self.saliency_quality,
            self.saliency_import_dir.as_deref(),
        )
        .map(Some)
    }

    /// Resolve the K token against the per-class pool size. Returns the
    /// numeric k list plus the resolved full-pool value when K was present.
    pub fn resolve_k_list(&self, pool: usize) -> Result<(Vec<usize>, Option<usize>)> {
        let mut ks = Vec::with_capacity(self.train_k_list.len());
        let mut full = None;
        for entry in &self.train_k_list {
            match entry {
                KEntry::Num(n) => ks.push(*n),
                KEntry::FullPool => {
                    full = Some(pool);
                    ks.push(pool);
                }
            }
        }
        let mut seen = BTreeSet::new();
        for &k in &ks {
            if !seen.insert(k) {
                return Err(Error::config(format!(
                    "train.k_list resolves K to {pool}, which collides with an explicit entry"
                )));
            }
        }
        Ok((ks, full))
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    let mut seen = BTreeSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::config(format!("line {}: expected 'key = value'", idx + 1))
        })?;
        let key = k.trim();
        let value = v.trim();
        if !seen.insert(key.to_string()) {
            return Err(Error::config(format!(
                "line {}: duplicate key '{key}'",
                idx + 1
            )));
        }
        cfg.apply(key, value)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
    parse_config(&text)
}

/// Canonical text form. Optional keys appear only when set, so the output
/// parses back to an identical config.
pub fn serialize_config(cfg: &ExperimentConfig) -> String {
    let mut out = String::new();
    let mut kv = |k: &str, v: String| {
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(&v);
        out.push('\n');
    };
    kv("data.classes", cfg.data_classes.to_string());
    kv(
        "data.samples_per_class",
        cfg.data_samples_per_class.to_string(),
    );
    kv("data.width", cfg.data_width.to_string());
    kv("data.height", cfg.data_height.to_string());
    kv("data.subtlety", cfg.data_subtlety.to_string());
    kv("data.clutter", cfg.data_clutter.to_string());
    kv("data.seed", cfg.data_seed.to_string());
    kv("data.dir", cfg.data_dir.display().to_string());
    if let Some(folder) = &cfg.data_folder {
        kv("data.folder", folder.display().to_string());
    }
    kv("net.variant", cfg.net_variant.name().to_string());
    kv("net.fusion_level", cfg.net_fusion_level.to_string());
    kv("net.saliency_depth", cfg.net_saliency_depth.to_string());
    kv("net.saliency_width", cfg.net_saliency_width.to_string());
    kv("net.skip", cfg.net_skip.to_string());
    if let Some(p) = cfg.net_pool_position {
        kv("net.pool_position", pool_position_name(p).to_string());
    }
    kv("net.init", cfg.net_init.name().to_string());
    kv("net.freeze_branch", cfg.net_freeze_branch.to_string());
    kv("train.epochs", cfg.train_epochs.to_string());
    kv("train.lr", cfg.train_lr.to_string());
    kv("train.weight_decay", cfg.train_weight_decay.to_string());
    kv("train.momentum", cfg.train_momentum.to_string());
    kv("train.batch_size", cfg.train_batch_size.to_string());
    kv(
        "train.k_list",
        cfg.train_k_list
            .iter()
            .map(KEntry::render)
            .collect::<Vec<_>>()
            .join(","),
    );
    kv("train.seeds", cfg.train_seeds.to_string());
    kv("train.seed", cfg.train_seed.to_string());
    kv("pretrain.classes", cfg.pretrain_classes.to_string());
    kv(
        "pretrain.samples_per_class",
        cfg.pretrain_samples_per_class.to_string(),
    );
    kv("pretrain.subtlety", cfg.pretrain_subtlety.to_string());
    kv("pretrain.epochs", cfg.pretrain_epochs.to_string());
    if !cfg.saliency_method.is_empty() {
        kv("saliency.method", cfg.saliency_method.clone());
    }
    if let Some(q) = cfg.saliency_quality {
        kv("saliency.quality", q.to_string());
    }
    if let Some(dir) = &cfg.saliency_import_dir {
        kv("saliency.import_dir", dir.display().to_string());
    }
    if !cfg.saliency_sweep.is_empty() {
        kv(
            "saliency.sweep",
            cfg.saliency_sweep
                .iter()
                .map(|q| q.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
    }
    kv("out.dir", cfg.out_dir.display().to_string());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips() {
        let mut cfg = ExperimentConfig::default();
        // default is a fusion variant, which requires a method
        cfg.saliency_method = "oracle".to_string();
        let text = serialize_config(&cfg);
        let parsed = parse_config(&text).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn fully_customized_config_round_trips() {
        let cfg = ExperimentConfig {
            data_classes: 5,
            data_samples_per_class: 12,
            data_width: 32,
            data_height: 48,
            data_subtlety: 0.75,
            data_clutter: 0.1,
            data_seed: 123,
            data_dir: PathBuf::from("my/data"),
            data_folder: Some(PathBuf::from("raw/photos")),
            net_variant: Variant::DelayedFusion,
            net_fusion_level: 4,
            net_saliency_depth: 3,
            net_saliency_width: 0.5,
            net_skip: false,
            net_pool_position: Some(PoolPosition::BeforeFusion),
            net_init: InitProtocol::Pretrained,
            net_freeze_branch: true,
            train_epochs: 7,
            train_lr: 0.005,
            train_weight_decay: 0.0,
            train_momentum: 0.8,
            train_batch_size: 4,
            train_k_list: vec![KEntry::Num(1), KEntry::FullPool],
            train_seeds: 2,
            train_seed: 99,
            pretrain_classes: 6,
            pretrain_samples_per_class: 20,
            pretrain_subtlety: 0.9,
            pretrain_epochs: 3,
            saliency_method: "oracle".to_string(),
            saliency_quality: Some(0.25),
            saliency_import_dir: None,
            saliency_sweep: vec![0.0, 0.5, 1.0],
            out_dir: PathBuf::from("results/run1"),
        };
        let text = serialize_config(&cfg);
        let parsed = parse_config(&text).unwrap();
        assert_eq!(parsed, cfg);
        // and the second round trip is byte-stable
        assert_eq!(serialize_config(&parsed), text);
    }

    #[test]
    fn unknown_key_is_an_error_naming_it() {
        let err = parse_config("data.classez = 4\n").unwrap_err();
        assert!(err.to_string().contains("data.classez"), "{err}");
    }

    #[test]
    fn duplicate_key_and_missing_equals_are_errors() {
        let text = "net.variant = baseline_rgb\nnet.variant = baseline_rgb\n";
        assert!(parse_config(text).unwrap_err().to_string().contains("duplicate"));
        let err = parse_config("just some words\n").unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }

    #[test]
    fn comments_blanks_and_spacing_are_tolerated() {
        let text = "# a comment\n\n  net.variant   =   baseline_rgb  \ntrain.epochs=3\n";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.net_variant, Variant::BaselineRgb);
        assert_eq!(cfg.train_epochs, 3);
    }

    #[test]
    fn fusion_variant_requires_a_saliency_method() {
        let err = parse_config("net.variant = delayed_fusion\n").unwrap_err();
        assert!(err.to_string().contains("saliency.method"), "{err}");
        assert!(parse_config("net.variant = baseline_rgb\n").is_ok());
        assert!(
            parse_config("net.variant = delayed_fusion\nsaliency.method = white\n").is_ok()
        );
    }

    #[test]
    fn quality_and_import_dir_are_method_gated() {
        let base = "net.variant = baseline_rgb\n";
        let err = parse_config(&format!(
            "{base}saliency.method = white\nsaliency.quality = 0.5\n"
        ))
        .unwrap_err();
        assert!(err.to_string().contains("oracle"), "{err}");
        assert!(parse_config(&format!(
            "{base}saliency.method = oracle\nsaliency.quality = 0.5\n"
        ))
        .is_ok());
        let err = parse_config(&format!(
            "{base}saliency.method = white\nsaliency.import_dir = maps\n"
        ))
        .unwrap_err();
        assert!(err.to_string().contains("import"), "{err}");
        assert!(parse_config(&format!(
            "{base}saliency.method = import\nsaliency.import_dir = maps\n"
        ))
        .is_ok());
        let err =
            parse_config(&format!("{base}saliency.method = import\n")).unwrap_err();
        assert!(err.to_string().contains("import_dir"), "{err}");
    }

    #[test]
    fn pretrained_init_rejects_imported_maps() {
        let text = "net.variant = delayed_fusion\nnet.init = pretrained\n\
                    saliency.method = import\nsaliency.import_dir = maps\n";
        let err = parse_config(text).unwrap_err();
        assert!(err.to_string().contains("base task"), "{err}");
    }

    #[test]
    fn k_list_parses_resolves_and_rejects_collisions() {
        let cfg =
            parse_config("net.variant = baseline_rgb\ntrain.k_list = 1,2,3,K\n").unwrap();
        assert_eq!(
            cfg.train_k_list,
            vec![
                KEntry::Num(1),
                KEntry::Num(2),
                KEntry::Num(3),
                KEntry::FullPool
            ]
        );
        let (ks, full) = cfg.resolve_k_list(30).unwrap();
        assert_eq!(ks, vec![1, 2, 3, 30]);
        assert_eq!(full, Some(30));
        // K resolving onto an explicit entry is a collision
        assert!(cfg.resolve_k_list(3).is_err());
        // duplicates and zeros rejected at parse time
        assert!(parse_config("train.k_list = 3,3\n").is_err());
        assert!(parse_config("train.k_list = 0\n").is_err());
        assert!(parse_config("train.k_list = \n").is_err());
    }

    #[test]
    fn sweep_needs_three_levels_in_range_on_a_fusion_variant() {
        assert!(parse_config(
            "net.variant = delayed_fusion\nsaliency.method = oracle\nsaliency.sweep = 0,1\n"
        )
        .is_err());
        assert!(parse_config(
            "net.variant = delayed_fusion\nsaliency.method = oracle\nsaliency.sweep = 0,0.5,1.5\n"
        )
        .is_err());
        assert!(parse_config(
            "net.variant = baseline_rgb\nsaliency.sweep = 0,0.5,1\n"
        )
        .is_err());
        assert!(parse_config(
            "net.variant = delayed_fusion\nsaliency.method = oracle\nsaliency.sweep = 0,0.5,1\n"
        )
        .is_ok());
    }

    #[test]
    fn numeric_errors_name_the_offending_key() {
        let err = parse_config("train.epochs = many\n").unwrap_err();
        assert!(err.to_string().contains("train.epochs"), "{err}");
        let err = parse_config("data.subtlety = x\n").unwrap_err();
        assert!(err.to_string().contains("data.subtlety"), "{err}");
    }

    #[test]
    fn derived_specs_carry_the_config_fields() {
        let cfg = parse_config(
            "net.variant = baseline_rgb\ndata.classes = 4\ndata.samples_per_class = 12\n\
             pretrain.classes = 6\npretrain.samples_per_class = 14\npretrain.epochs = 2\n",
        )
        .unwrap();
        let spec = cfg.dataset_spec();
        assert_eq!(spec.num_classes, 4);
        assert_eq!(spec.bank, FamilyBank::Target);
        let base = cfg.base_spec();
        assert_eq!(base.num_classes, 6);
        assert_eq!(base.samples_per_class, 14);
        assert_eq!(base.bank, FamilyBank::Base);
        assert_eq!(base.image_size, spec.image_size);
        assert_ne!(base.seed, spec.seed);
        assert_eq!(cfg.pretrain_hyperparams().epochs, 2);
        assert_eq!(cfg.hyperparams().epochs, 40);
    }

    #[test]
    fn invalid_nested_settings_surface_from_validation() {
        // pool position is only meaningful for delayed fusion
        assert!(parse_config(
            "net.variant = baseline_rgb\nnet.pool_position = before_fusion\n"
        )
        .is_err());
        // dataset constraints propagate
        assert!(parse_config("net.variant = baseline_rgb\ndata.samples_per_class = 8\n").is_err());
        // hyperparameter constraints propagate
        assert!(parse_config("net.variant = baseline_rgb\ntrain.momentum = 1.5\n").is_err());
    }
}
