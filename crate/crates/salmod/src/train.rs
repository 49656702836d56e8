//! Training and evaluation: minibatch SGD with momentum and L2 weight decay,
//! the scarce-data protocol (k training images per class, several seeds, a
//! fixed test split), the two-stage base-task pretraining used to initialize
//! target models, and the gradient-energy-in-bbox instrumentation.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use crate::data::{self, BBox, Dataset, SplitPlan};
use crate::error::{Error, Result};
use crate::model::{
    bind, forward, init_model, transfer, LayerPlan, ModelState, NetworkConfig, Variant,
};
use crate::saliency::{self, MapSource};
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub batch_size: usize,
}

impl Default for Hyperparams {
    fn default() -> Hyperparams {
        Hyperparams {
            epochs: 40,
            learning_rate: 0.01,
            weight_decay: 0.003,
            momentum: 0.9,
            batch_size: 16,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be >= 1".to_string()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "learning rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config(format!(
                "weight decay must be finite and >= 0, got {}",
                self.weight_decay
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!(
                "momentum must lie in [0,1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be >= 1".to_string()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Parameter-name prefixes excluded from updates (e.g. "conv1", "branch").
    pub freeze_prefixes: Vec<String>,
    /// Record the per-epoch mean gradient-energy-in-bbox fraction.
    pub instrument: bool,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    /// Mean per-sample training loss per epoch.
    pub epoch_losses: Vec<f64>,
    /// Mean gradient-energy fraction per epoch (instrumented runs only).
    pub epoch_fractions: Vec<f64>,
    /// Samples whose probe gradient was identically zero (fraction fell back
    /// to the bbox-area ratio).
    pub degenerate_events: usize,
}

fn stream(seed: u64, tag: u64) -> u64 {
    data::mix(seed, tag)
}

fn plan_for(dataset: &Dataset, config: &NetworkConfig) -> Result<LayerPlan> {
    let (w, h) = dataset.spec.image_size;
    LayerPlan::build(config, (h, w))
}

fn require_maps(dataset: &Dataset, config: &NetworkConfig) -> Result<()> {
    if config.variant.needs_saliency() {
        if let Some(s) = dataset.samples.iter().find(|s| s.saliency.is_none()) {
            return Err(Error::data(format!(
                "variant {} needs saliency maps but sample {} has none (generate maps first)",
                config.variant.name(),
                s.id
            )));
        }
    }
    Ok(())
}

/// Project a pixel bbox onto the probe feature grid (outward rounding, so
/// the projection always covers at least one cell) and return the fraction
/// of absolute gradient inside it. A zero-gradient map falls back to the
/// bbox-area fraction and reports `degenerate = true`.
pub fn bbox_energy_fraction(
    grad: &Tensor,
    bbox: &BBox,
    stride: usize,
    probe_hw: (usize, usize),
) -> (f64, bool) {
    let (ph, pw) = probe_hw;
    let px0 = (bbox.x0 / stride).min(pw - 1);
    let py0 = (bbox.y0 / stride).min(ph - 1);
    let px1 = ((bbox.x1 + stride) / stride - 1).clamp(px0, pw - 1);
    let py1 = ((bbox.y1 + stride) / stride - 1).clamp(py0, ph - 1);
    let channels = grad.shape()[0];
    let gd = grad.data();
    let mut total = 0.0;
    for &v in gd {
        total += v.abs();
    }
    if total == 0.0 {
        let area = ((px1 - px0 + 1) * (py1 - py0 + 1)) as f64;
        return (area / (ph * pw) as f64, true);
    }
    let mut inside = 0.0;
    for c in 0..channels {
        let plane = &gd[c * ph * pw..(c + 1) * ph * pw];
        for y in py0..=py1 {
            for x in px0..=px1 {
                inside += plane[y * pw + x].abs();
            }
        }
    }
    (inside / total, false)
}

/// Minibatch SGD with momentum: v = m*v + (g + wd*w); w -= lr*v. Weight
/// decay applies to weights only, never biases. Deterministic given the
/// seed (per-epoch shuffles come from it). Loss turning non-finite aborts.
pub fn train(
    state: ModelState,
    dataset: &Dataset,
    subset: &[usize],
    hyper: &Hyperparams,
    seed: u64,
    options: &TrainOptions,
) -> Result<(ModelState, TrainLog)> {
    hyper.validate()?;
    if subset.is_empty() {
        return Err(Error::config("training subset is empty".to_string()));
    }
    let mut state = state;
    let plan = plan_for(dataset, &state.config)?;
    let frozen = |name: &str| {
        options
            .freeze_prefixes
            .iter()
            .any(|p| name.starts_with(p.as_str()))
    };
    let mut velocity: BTreeMap<String, Tensor> = state
        .params
        .iter()
        .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape())))
        .collect();
    let mut log = TrainLog::default();
    let batch_size = hyper.batch_size.min(subset.len());

    for epoch in 0..hyper.epochs {
        let mut order = subset.to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(stream(seed, 0xE90C ^ epoch as u64));
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut loss_sum = 0.0;
        let mut frac_sum = 0.0;
        let mut frac_count = 0usize;

        for batch in order.chunks(batch_size) {
            let mut tape = Tape::new();
            let bound = bind(&mut tape, &state);
            let mut total_loss = None;
            let mut probes = Vec::new();
            for &id in batch {
                let sample = &dataset.samples[id];
                let image = sample.image_tensor();
                let map = sample.saliency_tensor();
                let pass = forward(&mut tape, &bound, &state.config, &plan, &image, map.as_ref())?;
                let loss = tape.softmax_cross_entropy(pass.logits, sample.label)?;
                total_loss = Some(match total_loss {
                    None => loss,
                    Some(acc) => tape.add(acc, loss)?,
                });
                probes.push((pass.probe, sample.bbox));
            }
            let total = total_loss.expect("nonempty batch");
            let batch_loss = tape.scale(total, 1.0 / batch.len() as f64)?;
            let loss_value = tape.value(batch_loss).data()[0];
            if !loss_value.is_finite() {
                return Err(Error::Diverged(format!(
                    "loss became {loss_value} at epoch {epoch}"
                )));
            }
            loss_sum += loss_value * batch.len() as f64;
            let grads = tape.backward(batch_loss)?;

            if options.instrument {
                for (probe, bbox) in &probes {
                    let g = grads.get_or_zeros(*probe, tape.value(*probe).shape());
                    let (f, degenerate) =
                        bbox_energy_fraction(&g, bbox, plan.probe_stride, plan.probe_hw);
                    frac_sum += f;
                    frac_count += 1;
                    log.degenerate_events += degenerate as usize;
                }
            }

            for (name, w) in state.params.iter_mut() {
                if frozen(name) {
                    continue;
                }
                let mut g = grads.get_or_zeros(bound.ids[name], w.shape());
                if hyper.weight_decay > 0.0 && name.ends_with(".weight") {
                    let gd = g.data_mut();
                    for (gi, wi) in gd.iter_mut().zip(w.data()) {
                        *gi += hyper.weight_decay * wi;
                    }
                }
                let v = velocity.get_mut(name).expect("velocity per parameter");
                let vd = v.data_mut();
                let gd = g.data();
                let wd = w.data_mut();
                for i in 0..vd.len() {
                    vd[i] = hyper.momentum * vd[i] + gd[i];
                    wd[i] -= hyper.learning_rate * vd[i];
                }
            }
        }
        state.assert_finite()?;
        log.epoch_losses.push(loss_sum / order.len() as f64);
        if options.instrument {
            log.epoch_fractions
                .push(frac_sum / frac_count.max(1) as f64);
        }
    }
    Ok((state, log))
}

/// Percentage of correctly classified samples (argmax of the logits; ties
/// resolve to the lowest class index).
pub fn evaluate(
    state: &ModelState,
    dataset: &Dataset,
    ids: &[usize],
) -> Result<f64> {
    if ids.is_empty() {
        return Err(Error::config("evaluation set is empty".to_string()));
    }
    let plan = plan_for(dataset, &state.config)?;
    let mut tape = Tape::new();
    let bound = bind(&mut tape, state);
    let mut correct = 0usize;
    for &id in ids {
        let sample = &dataset.samples[id];
        let image = sample.image_tensor();
        let map = sample.saliency_tensor();
        let pass = forward(&mut tape, &bound, &state.config, &plan, &image, map.as_ref())?;
        let logits = tape.value(pass.logits).data();
        let mut best = 0usize;
        for (i, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = i;
            }
        }
        if best == sample.label {
            correct += 1;
        }
    }
    Ok(100.0 * correct as f64 / ids.len() as f64)
}

/// One forward/backward on a single sample's classification loss, reduced to
/// the fraction of probe-gradient energy inside the sample's bbox.
pub fn gradient_energy_fraction(
    state: &ModelState,
    dataset: &Dataset,
    id: usize,
) -> Result<(f64, bool)> {
    let plan = plan_for(dataset, &state.config)?;
    let sample = &dataset.samples[id];
    let mut tape = Tape::new();
    let bound = bind(&mut tape, state);
    let image = sample.image_tensor();
    let map = sample.saliency_tensor();
    let pass = forward(&mut tape, &bound, &state.config, &plan, &image, map.as_ref())?;
    let loss = tape.softmax_cross_entropy(pass.logits, sample.label)?;
    let grads = tape.backward(loss)?;
    let g = grads.get_or_zeros(pass.probe, tape.value(pass.probe).shape());
    Ok(bbox_energy_fraction(
        &g,
        &sample.bbox,
        plan.probe_stride,
        plan.probe_hw,
    ))
}

// ---- base-task pretraining ----

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PretrainMode {
    /// Base-task backbone, Xavier saliency branch.
    Scratch,
    /// Base-task backbone, then the full two-branch net trained on the base
    /// task (pre-fusion convs frozen); everything but the head transfers.
    Pretrained,
}

impl PretrainMode {
    pub fn name(&self) -> &'static str {
        match self {
            PretrainMode::Scratch => "scratch",
            PretrainMode::Pretrained => "pretrained",
        }
    }
}

/// Trains the abundant base task once and hands out per-seed initial states.
/// Stage A (an RGB-only backbone) is shared by every mode and variant; stage
/// B (the full fusion network, pre-fusion RGB frozen) runs once per network
/// shape and backs the `Pretrained` mode. Both stages use a fixed internal
/// seed so initial states differ across cells only in their fresh blocks.
pub struct Pretrainer {
    base: Dataset,
    hyper: Hyperparams,
    seed: u64,
    map_source: Option<MapSource>,
    mapped: Mutex<Option<Arc<Dataset>>>,
    cache: Mutex<HashMap<u64, Arc<ModelState>>>,
}

const STAGE_A_KEY: u64 = 0;

impl Pretrainer {
    pub fn new(
        base: Dataset,
        hyper: Hyperparams,
        seed: u64,
        map_source: Option<MapSource>,
    ) -> Pretrainer {
        Pretrainer {
            base,
            hyper,
            seed,
            map_source,
            mapped: Mutex::new(None),
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn base_dataset(&self) -> &Dataset {
        &self.base
    }

    /// The trained backbone stage (training it now if needed). Useful for
    /// sharing one backbone across pretrainers that differ only in map
    /// source, since the backbone never sees maps.
    pub fn backbone(&self) -> Result<Arc<ModelState>> {
        self.stage_a()
    }

    /// Adopt an already-trained backbone instead of training one. The caller
    /// owns the claim that it came from an identical base task and seed.
    pub fn adopt_backbone(&self, state: Arc<ModelState>) {
        self.cache
            .lock()
            .expect("pretrain cache")
            .insert(STAGE_A_KEY, state);
    }

    fn input_hw(&self) -> (usize, usize) {
        let (w, h) = self.base.spec.image_size;
        (h, w)
    }

    fn stage_a(&self) -> Result<Arc<ModelState>> {
        let mut cache = self.cache.lock().expect("pretrain cache");
        if let Some(state) = cache.get(&STAGE_A_KEY) {
            return Ok(state.clone());
        }
        let config = NetworkConfig {
            variant: Variant::BaselineRgb,
            num_classes: self.base.spec.num_classes,
            pool_position: None,
            ..NetworkConfig::default()
        };
        let init = init_model(&config, self.input_hw(), stream(self.seed, 0xA11A))?;
        let all_ids: Vec<usize> = (0..self.base.samples.len()).collect();
        let (mut trained, _) = train(
            init,
            &self.base,
            &all_ids,
            &self.hyper,
            stream(self.seed, 0xA7A1),
            &TrainOptions::default(),
        )?;
        trained
            .provenance
            .insert("backbone".to_string(), "base-task backbone stage".to_string());
        let arc = Arc::new(trained);
        cache.insert(STAGE_A_KEY, arc.clone());
        Ok(arc)
    }

    /// The base dataset with saliency maps attached (computed once, shared).
    fn mapped_base(&self) -> Result<Arc<Dataset>> {
        let mut slot = self.mapped.lock().expect("mapped base");
        if let Some(d) = slot.as_ref() {
            return Ok(d.clone());
        }
        let source = self.map_source.as_ref().ok_or_else(|| {
            Error::config("pretrained branch initialization needs a saliency method".to_string())
        })?;
        if matches!(source, MapSource::Import { .. }) {
            return Err(Error::config(
                "imported maps cannot cover the internal base task; pick a computed method"
                    .to_string(),
            ));
        }
        let mut with_maps = self.base.clone();
        saliency::attach_maps(&mut with_maps, source)?;
        let arc = Arc::new(with_maps);
        *slot = Some(arc.clone());
        Ok(arc)
    }

    fn stage_b(&self, target: &NetworkConfig) -> Result<Arc<ModelState>> {
        let mut config = target.clone();
        config.num_classes = self.base.spec.num_classes;
        let key = crate::model::fnv1a64(config.encode().as_bytes());
        {
            let cache = self.cache.lock().expect("pretrain cache");
            if let Some(state) = cache.get(&key) {
                return Ok(state.clone());
            }
        }
        let mapped = self.mapped_base()?;
        let stage_a = self.stage_a()?;
        let init = transfer(&stage_a, &config, self.input_hw(), stream(self.seed, 0xB0B))?;
        let freeze_prefixes = match config.variant {
            Variant::DelayedFusion => (1..=config.fusion_level)
                .map(|l| format!("conv{l}"))
                .collect(),
            _ => Vec::new(),
        };
        let all_ids: Vec<usize> = (0..mapped.samples.len()).collect();
        let (mut trained, _) = train(
            init,
            &mapped,
            &all_ids,
            &self.hyper,
            stream(self.seed, 0xB7B2),
            &TrainOptions {
                freeze_prefixes,
                instrument: false,
            },
        )?;
        trained.provenance.insert(
            "branch".to_string(),
            "base-task fusion stage".to_string(),
        );
        let arc = Arc::new(trained);
        self.cache
            .lock()
            .expect("pretrain cache")
            .insert(key, arc.clone());
        Ok(arc)
    }

    /// The initial state for one experiment cell: base-task weights where the
    /// mode transfers them, fresh Xavier draws (from `head_seed`) elsewhere —
    /// always a fresh top classification layer.
    pub fn state_for(
        &self,
        target: &NetworkConfig,
        mode: PretrainMode,
        input_hw: (usize, usize),
        head_seed: u64,
    ) -> Result<ModelState> {
        let basis = match (mode, target.variant) {
            (_, Variant::BaselineRgb) | (PretrainMode::Scratch, _) => self.stage_a()?,
            (PretrainMode::Pretrained, _) => self.stage_b(target)?,
        };
        transfer(&basis, target, input_hw, head_seed)
    }

    /// Train whatever stages the given mode needs, up front (so parallel
    /// cells start from a warm cache).
    pub fn warm(&self, target: &NetworkConfig, mode: PretrainMode) -> Result<()> {
        match (mode, target.variant) {
            (_, Variant::BaselineRgb) | (PretrainMode::Scratch, _) => {
                self.stage_a().map(|_| ())
            }
            (PretrainMode::Pretrained, _) => self.stage_b(target).map(|_| ()),
        }
    }
}

// ---- the scarce-data protocol ----

/// How each cell's model is initialized.
pub enum InitSource<'a> {
    /// Fresh Xavier everything, per cell.
    Xavier,
    /// Transfer from base-task pretraining in the given mode.
    Pretrain(&'a Pretrainer, PretrainMode),
}

pub struct ProtocolOptions<'a> {
    pub master_seed: u64,
    pub init: InitSource<'a>,
    pub freeze_prefixes: Vec<String>,
    pub instrument: bool,
    /// Write one final checkpoint per cell into this directory.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for ProtocolOptions<'_> {
    fn default() -> Self {
        ProtocolOptions {
            master_seed: 0,
            init: InitSource::Xavier,
            freeze_prefixes: Vec::new(),
            instrument: false,
            checkpoint_dir: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub k: usize,
    pub seed: u64,
    pub accuracy: f64,
    pub epoch_losses: Vec<f64>,
    pub epoch_fractions: Vec<f64>,
    pub degenerate_events: usize,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub k_list: Vec<usize>,
    pub n_seeds: usize,
    /// k-major, then seed.
    pub cells: Vec<CellResult>,
    /// When set, this k value renders as "K" (the full training pool).
    pub full_pool: Option<usize>,
}

impl RunReport {
    pub fn k_label(&self, k: usize) -> String {
        if self.full_pool == Some(k) {
            "K".to_string()
        } else {
            k.to_string()
        }
    }

    pub fn accuracies(&self, k: usize) -> Vec<f64> {
        self.cells
            .iter()
            .filter(|c| c.k == k)
            .map(|c| c.accuracy)
            .collect()
    }

    /// (mean, sample standard deviation) of accuracy at one k.
    pub fn mean_std(&self, k: usize) -> (f64, f64) {
        let accs = self.accuracies(k);
        let n = accs.len();
        let mean = accs.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        (mean, std)
    }

    pub fn results_csv(&self) -> String {
        let mut out = String::from("k,seed,accuracy\n");
        for c in &self.cells {
            out.push_str(&format!("{},{},{}\n", self.k_label(c.k), c.seed, c.accuracy));
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("k,mean,std\n");
        for &k in &self.k_list {
            let (mean, std) = self.mean_std(k);
            out.push_str(&format!("{},{},{}\n", self.k_label(k), mean, std));
        }
        out
    }

    /// Mean instrumented fraction per epoch across the report's cells.
    pub fn mean_fraction_per_epoch(&self) -> Vec<f64> {
        let instrumented: Vec<&CellResult> = self
            .cells
            .iter()
            .filter(|c| !c.epoch_fractions.is_empty())
            .collect();
        if instrumented.is_empty() {
            return Vec::new();
        }
        let epochs = instrumented
            .iter()
            .map(|c| c.epoch_fractions.len())
            .min()
            .unwrap_or(0);
        (0..epochs)
            .map(|e| {
                instrumented.iter().map(|c| c.epoch_fractions[e]).sum::<f64>()
                    / instrumented.len() as f64
            })
            .collect()
    }

    /// Grand mean of the per-epoch fractions for one seed at one k.
    pub fn cell(&self, k: usize, seed: u64) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.k == k && c.seed == seed)
    }
}

/// Paired per-epoch gradient-energy series: "epoch,fraction_saliency,fraction_baseline".
pub fn gradient_series_csv(saliency: &RunReport, baseline: &RunReport) -> Result<String> {
    let a = saliency.mean_fraction_per_epoch();
    let b = baseline.mean_fraction_per_epoch();
    if a.is_empty() || b.is_empty() || a.len() != b.len() {
        return Err(Error::data(format!(
            "gradient series need matching instrumented runs (got {} vs {} epochs)",
            a.len(),
            b.len()
        )));
    }
    let mut out = String::from("epoch,fraction_saliency,fraction_baseline\n");
    for (e, (fa, fb)) in a.iter().zip(&b).enumerate() {
        out.push_str(&format!("{},{},{}\n", e + 1, fa, fb));
    }
    Ok(out)
}

/// For each k in `k_list` and each seed in 0..n_seeds: build a fresh initial
/// state (per the init source), train on subset(plan, k, seed), evaluate on
/// the fixed test split. Cells run in parallel; results are reduced in
/// (k, seed) order so the report is independent of scheduling.
pub fn scarce_protocol(
    dataset: &Dataset,
    plan: &SplitPlan,
    config: &NetworkConfig,
    hyper: &Hyperparams,
    k_list: &[usize],
    n_seeds: usize,
    options: &ProtocolOptions,
) -> Result<RunReport> {
    config.validate()?;
    hyper.validate()?;
    require_maps(dataset, config)?;
    if k_list.is_empty() || n_seeds == 0 {
        return Err(Error::config(
            "need at least one k and one seed".to_string(),
        ));
    }
    let min_pool = plan.min_pool();
    if let Some(&bad) = k_list.iter().find(|&&k| k > min_pool) {
        return Err(Error::config(format!(
            "k = {bad} exceeds the training pool of {min_pool} per class"
        )));
    }
    if let Some(dir) = &options.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }
    if let InitSource::Pretrain(p, mode) = &options.init {
        p.warm(config, *mode)?;
    }
    let (w, h) = dataset.spec.image_size;
    let input_hw = (h, w);

    let cells: Vec<(usize, u64)> = k_list
        .iter()
        .flat_map(|&k| (0..n_seeds as u64).map(move |s| (k, s)))
        .collect();

    let results: Vec<Result<CellResult>> = cells
        .par_iter()
        .map(|&(k, s)| -> Result<CellResult> {
            let init_seed = stream(options.master_seed, stream(0xCE11, stream(k as u64, s)));
            let state = match &options.init {
                InitSource::Xavier => init_model(config, input_hw, init_seed)?,
                InitSource::Pretrain(p, mode) => p.state_for(config, *mode, input_hw, init_seed)?,
            };
            let subset = data::subset(plan, k, s)?;
            let (trained, log) = train(
                state,
                dataset,
                &subset,
                hyper,
                stream(init_seed, 0x7121),
                &TrainOptions {
                    freeze_prefixes: options.freeze_prefixes.clone(),
                    instrument: options.instrument,
                },
            )?;
            let accuracy = evaluate(&trained, dataset, &plan.test)?;
            if let Some(dir) = &options.checkpoint_dir {
                let path = dir.join(format!("ckpt_k{k}_seed{s}.bin"));
                crate::model::save_checkpoint(&path, &trained)?;
            }
            Ok(CellResult {
                k,
                seed: s,
                accuracy,
                epoch_losses: log.epoch_losses,
                epoch_fractions: log.epoch_fractions,
                degenerate_events: log.degenerate_events,
            })
        })
        .collect();

    let mut out = Vec::with_capacity(results.len());
    for r in results {
        out.push(r?);
    }
    Ok(RunReport {
        k_list: k_list.to_vec(),
        n_seeds,
        cells: out,
        full_pool: None,
    })
}
