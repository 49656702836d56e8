//! Network assembly: a five-conv/three-FC RGB classifier ("MiniNet") plus an
//! optional saliency branch, configurable over the full ablation grid —
//! fusion level, branch depth/width, multiplicative skip, pool placement,
//! and early fusion (saliency as a fourth input channel).
//!
//! The saliency branch consumes the single-channel map, mirrors the RGB
//! trunk's spatial hyperparameters so its output matches the fused feature
//! map size, and ends in a sigmoid so the modulation image stays in (0,1).
//! With the multiplicative skip the gating factor is (map + 1), making a
//! zero map the exact identity — the structural anchor used by tests.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::data::mix;
use crate::error::{Error, Result};
use crate::layers::ConvGeom;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Pool window/stride used everywhere.
pub const POOL: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    BaselineRgb,
    EarlyFusion,
    DelayedFusion,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::BaselineRgb => "baseline_rgb",
            Variant::EarlyFusion => "early_fusion",
            Variant::DelayedFusion => "delayed_fusion",
        }
    }
    pub fn parse(text: &str) -> Result<Variant> {
        match text {
            "baseline_rgb" => Ok(Variant::BaselineRgb),
            "early_fusion" => Ok(Variant::EarlyFusion),
            "delayed_fusion" => Ok(Variant::DelayedFusion),
            other => Err(Error::config(format!("unknown variant '{other}'"))),
        }
    }
    pub fn needs_saliency(&self) -> bool {
        !matches!(self, Variant::BaselineRgb)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolPosition {
    BeforeFusion,
    AfterFusion,
}

impl PoolPosition {
    pub fn name(&self) -> &'static str {
        match self {
            PoolPosition::BeforeFusion => "before_fusion",
            PoolPosition::AfterFusion => "after_fusion",
        }
    }
    pub fn parse(text: &str) -> Result<PoolPosition> {
        match text {
            "before_fusion" => Ok(PoolPosition::BeforeFusion),
            "after_fusion" => Ok(PoolPosition::AfterFusion),
            other => Err(Error::config(format!("unknown pool position '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub variant: Variant,
    pub num_classes: usize,
    /// Conv level whose post-activation features get modulated (delayed
    /// fusion); also the instrumentation point for every variant.
    pub fusion_level: usize,
    /// Number of convs in the saliency branch (2 or 3).
    pub saliency_depth: usize,
    /// Hidden branch channels = round(8 * fraction).
    pub saliency_width: f64,
    /// Gate features by (map + 1) instead of map alone.
    pub skip: bool,
    /// Place the fusion-level max pool before or after the modulation.
    /// Only meaningful for delayed fusion; None means after.
    pub pool_position: Option<PoolPosition>,
}

impl Default for NetworkConfig {
    fn default() -> NetworkConfig {
        NetworkConfig {
            variant: Variant::DelayedFusion,
            num_classes: 20,
            fusion_level: 2,
            saliency_depth: 2,
            saliency_width: 1.0,
            skip: true,
            pool_position: None,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config(format!(
                "num_classes must be >= 2, got {}",
                self.num_classes
            )));
        }
        if !(1..=TRUNK.len()).contains(&self.fusion_level) {
            return Err(Error::config(format!(
                "fusion_level must lie in 1..=5, got {}",
                self.fusion_level
            )));
        }
        if !(self.saliency_depth == 2 || self.saliency_depth == 3) {
            return Err(Error::config(format!(
                "saliency_depth must be 2 or 3, got {}",
                self.saliency_depth
            )));
        }
        if !(self.saliency_width > 0.0 && self.saliency_width <= 1.0) {
            return Err(Error::config(format!(
                "saliency_width must lie in (0,1], got {}",
                self.saliency_width
            )));
        }
        if self.hidden_channels() == 0 {
            return Err(Error::config(format!(
                "saliency_width {} rounds to zero hidden channels",
                self.saliency_width
            )));
        }
        if self.pool_position.is_some() && self.variant != Variant::DelayedFusion {
            return Err(Error::config(format!(
                "pool_position is meaningless for variant {}",
                self.variant.name()
            )));
        }
        Ok(())
    }

    pub fn hidden_channels(&self) -> usize {
        (8.0 * self.saliency_width).round() as usize
    }

    pub fn pool_before_fusion(&self) -> bool {
        self.pool_position == Some(PoolPosition::BeforeFusion)
    }

    /// Canonical flat encoding; basis for the checkpoint digest.
    pub fn encode(&self) -> String {
        format!(
            "variant={};classes={};fusion={};depth={};width={:?};skip={};pool={}",
            self.variant.name(),
            self.num_classes,
            self.fusion_level,
            self.saliency_depth,
            self.saliency_width,
            self.skip,
            self.pool_position.map(|p| p.name()).unwrap_or("default"),
        )
    }

    pub fn digest(&self) -> u64 {
        fnv1a64(self.encode().as_bytes())
    }
}

/// FNV-1a 64-bit hash; used for layer-name seed streams and config digests.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// RGB trunk: (in, out, kernel, stride, padding); conv1's input channel
/// count becomes 4 under early fusion.
const TRUNK: [(usize, usize, usize, usize, usize); 5] = [
    (3, 16, 5, 2, 2),
    (16, 32, 3, 1, 1),
    (32, 48, 3, 1, 1),
    (48, 48, 3, 1, 1),
    (48, 32, 3, 1, 1),
];
/// Nominal max pools after conv1, conv2, conv5.
const POOL_AFTER: [bool; 5] = [true, true, false, false, true];
const FC_HIDDEN: [usize; 2] = [256, 128];

fn pooled(dim: usize) -> usize {
    (dim - POOL) / POOL + 1
}

/// Concrete layer geometry for one (config, input size) pair: conv geoms,
/// which nominal pools actually apply (skipped when the map is smaller than
/// the window), FC sizes, and the mirrored saliency-branch schedule.
#[derive(Debug, Clone)]
pub struct LayerPlan {
    pub input_hw: (usize, usize),
    pub convs: Vec<ConvGeom>,
    pub pool_applied: [bool; 5],
    /// Spatial size after each conv (pre-pool).
    pub post_conv_hw: [(usize, usize); 5],
    /// Spatial size after each stage (post-pool where applied).
    pub post_stage_hw: [(usize, usize); 5],
    pub flatten: usize,
    pub fc: [(usize, usize); 3],
    /// Cumulative spatial stride from input pixels to the probe point.
    pub probe_stride: usize,
    /// Spatial size of the probe feature map.
    pub probe_hw: (usize, usize),
    pub branch: Option<BranchPlan>,
}

#[derive(Debug, Clone)]
pub struct BranchPlan {
    pub convs: Vec<ConvGeom>,
    /// pools_after[i] = number of 2x2 max pools following conv i's activation.
    pub pools_after: Vec<usize>,
}

impl LayerPlan {
    pub fn build(config: &NetworkConfig, input_hw: (usize, usize)) -> Result<LayerPlan> {
        config.validate()?;
        let (h0, w0) = input_hw;
        if h0 < 8 || w0 < 8 {
            return Err(Error::config(format!(
                "input {}x{} too small for the trunk (needs >= 8x8)",
                w0, h0
            )));
        }
        let mut convs = Vec::with_capacity(5);
        let mut pool_applied = [false; 5];
        let mut post_conv_hw = [(0, 0); 5];
        let mut post_stage_hw = [(0, 0); 5];
        let mut hw = input_hw;
        for (i, &(in_c, out_c, k, s, p)) in TRUNK.iter().enumerate() {
            let in_c = if i == 0 && config.variant == Variant::EarlyFusion {
                4
            } else {
                in_c
            };
            let geom = ConvGeom::new(in_c, out_c, k, s, p);
            hw = geom.output_size(hw.0, hw.1)?;
            post_conv_hw[i] = hw;
            pool_applied[i] = POOL_AFTER[i] && hw.0 >= POOL && hw.1 >= POOL;
            if pool_applied[i] {
                hw = (pooled(hw.0), pooled(hw.1));
            }
            post_stage_hw[i] = hw;
            convs.push(geom);
        }
        let flatten = TRUNK[4].1 * hw.0 * hw.1;
        let fc = [
            (flatten, FC_HIDDEN[0]),
            (FC_HIDDEN[0], FC_HIDDEN[1]),
            (FC_HIDDEN[1], config.num_classes),
        ];

        let level = config.fusion_level;
        // pools strictly before the probe/fusion point
        let mut pools_before = (0..level - 1).filter(|&i| pool_applied[i]).count();
        if config.pool_before_fusion() && pool_applied[level - 1] {
            pools_before += 1;
        }
        let probe_hw = if config.variant == Variant::DelayedFusion && config.pool_before_fusion()
        {
            post_stage_hw[level - 1]
        } else {
            post_conv_hw[level - 1]
        };
        let probe_stride = TRUNK[..level].iter().map(|t| t.3).product::<usize>()
            * (1 << pools_before.min(level));

        let branch = if config.variant == Variant::DelayedFusion {
            let h_ch = config.hidden_channels();
            let mut bconvs = vec![ConvGeom::new(1, h_ch, TRUNK[0].2, TRUNK[0].3, TRUNK[0].4)];
            if config.saliency_depth == 3 {
                bconvs.push(ConvGeom::new(h_ch, h_ch, 3, 1, 1));
            }
            bconvs.push(ConvGeom::new(h_ch, 1, 3, 1, 1));
            let depth = bconvs.len();
            let mut pools_after = vec![0usize; depth];
            for i in 1..=pools_before {
                pools_after[i.min(depth) - 1] += 1;
            }
            // mirror check: branch output spatial must equal the fused map
            let mut bhw = input_hw;
            for (i, geom) in bconvs.iter().enumerate() {
                bhw = geom.output_size(bhw.0, bhw.1)?;
                for _ in 0..pools_after[i] {
                    if bhw.0 < POOL || bhw.1 < POOL {
                        return Err(Error::config(format!(
                            "saliency branch cannot pool a {}x{} map",
                            bhw.1, bhw.0
                        )));
                    }
                    bhw = (pooled(bhw.0), pooled(bhw.1));
                }
            }
            if bhw != probe_hw {
                return Err(Error::shape(format!(
                    "saliency branch output {}x{} does not match fusion point {}x{}",
                    bhw.1, bhw.0, probe_hw.1, probe_hw.0
                )));
            }
            Some(BranchPlan {
                convs: bconvs,
                pools_after,
            })
        } else {
            None
        };

        Ok(LayerPlan {
            input_hw,
            convs,
            pool_applied,
            post_conv_hw,
            post_stage_hw,
            flatten,
            fc,
            probe_stride,
            probe_hw,
            branch,
        })
    }
}

/// All parameters keyed by layer name ("conv1".."conv5", "fc1".."fc3",
/// "branch1"..), each with ".weight" / ".bias" suffixes, plus a provenance
/// note per block recording which protocol produced it.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub config: NetworkConfig,
    pub params: BTreeMap<String, Tensor>,
    pub provenance: BTreeMap<String, String>,
}

impl ModelState {
    pub fn param(&self, name: &str) -> &Tensor {
        self.params
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter '{name}'"))
    }

    pub fn parameter_count(&self) -> usize {
        self.params.values().map(|t| t.numel()).sum()
    }

    pub fn branch_parameter_count(&self) -> usize {
        self.params
            .iter()
            .filter(|(n, _)| n.starts_with("branch"))
            .map(|(_, t)| t.numel())
            .sum()
    }

    pub fn assert_finite(&self) -> Result<()> {
        for (name, t) in &self.params {
            if t.data().iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged(format!(
                    "parameter '{name}' holds a non-finite value"
                )));
            }
        }
        Ok(())
    }
}

fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Per-layer parameter stream: derived from (master seed, layer name) so a
/// layer shared by two configs receives identical draws under the same seed.
fn layer_rng(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, fnv1a64(name.as_bytes())))
}

fn xavier_conv(seed: u64, name: &str, geom: &ConvGeom) -> Tensor {
    let k = geom.kernel.0 * geom.kernel.1;
    let bound = xavier_bound(geom.in_channels * k, geom.out_channels * k);
    let mut rng = layer_rng(seed, name);
    let data = (0..geom.weight_count())
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Tensor::from_vec(&geom.weight_shape(), data).expect("consistent conv shape")
}

fn xavier_fc(seed: u64, name: &str, dims: (usize, usize)) -> Tensor {
    let (fan_in, fan_out) = dims;
    let bound = xavier_bound(fan_in, fan_out);
    let mut rng = layer_rng(seed, name);
    let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::from_vec(&[fan_out, fan_in], data).expect("consistent fc shape")
}

/// Xavier-uniform initialization of every weight (zero biases),
/// deterministic from the seed and independent of build order.
pub fn init_model(config: &NetworkConfig, input_hw: (usize, usize), seed: u64) -> Result<ModelState> {
    let plan = LayerPlan::build(config, input_hw)?;
    let mut params = BTreeMap::new();
    for (i, geom) in plan.convs.iter().enumerate() {
        let name = format!("conv{}", i + 1);
        params.insert(format!("{name}.weight"), xavier_conv(seed, &name, geom));
        params.insert(format!("{name}.bias"), Tensor::zeros(&[geom.out_channels]));
    }
    for (i, &dims) in plan.fc.iter().enumerate() {
        let name = format!("fc{}", i + 1);
        params.insert(format!("{name}.weight"), xavier_fc(seed, &name, dims));
        params.insert(format!("{name}.bias"), Tensor::zeros(&[dims.1]));
    }
    if let Some(branch) = &plan.branch {
        let last = branch.convs.len();
        for (i, geom) in branch.convs.iter().enumerate() {
            let name = format!("branch{}", i + 1);
            params.insert(format!("{name}.weight"), xavier_conv(seed, &name, geom));
            // the output conv starts with a negative bias so the sigmoid
            // opens near 0 and the (map + 1) gate near identity: an untrained
            // branch then perturbs a warm backbone as little as possible
            // while the sigmoid slope still passes useful gradient
            let bias = if i + 1 == last { -2.0 } else { 0.0 };
            params.insert(
                format!("{name}.bias"),
                Tensor::from_vec(&[geom.out_channels], vec![bias; geom.out_channels])?,
            );
        }
    }
    let mut provenance = BTreeMap::new();
    provenance.insert("backbone".to_string(), format!("xavier(seed={seed})"));
    provenance.insert("head".to_string(), format!("xavier(seed={seed})"));
    if plan.branch.is_some() {
        provenance.insert("branch".to_string(), format!("xavier(seed={seed})"));
    }
    Ok(ModelState {
        config: config.clone(),
        params,
        provenance,
    })
}

/// Force the saliency branch to output exactly zero everywhere: final conv
/// weights to 0 and bias far negative, so the sigmoid saturates to 0.0 and
/// freezes the whole branch (zero gradient). With skip=true the network is
/// then bitwise identical to the baseline.
pub fn force_zero_modulation(state: &mut ModelState) -> Result<()> {
    if state.config.variant != Variant::DelayedFusion {
        return Err(Error::config(
            "zero-modulation forcing applies only to delayed fusion".to_string(),
        ));
    }
    let last = format!("branch{}", state.config.saliency_depth);
    let weight = state
        .params
        .get_mut(&format!("{last}.weight"))
        .ok_or_else(|| Error::graph(format!("missing {last}.weight")))?;
    *weight = Tensor::zeros(weight.shape());
    let bias = state
        .params
        .get_mut(&format!("{last}.bias"))
        .ok_or_else(|| Error::graph(format!("missing {last}.bias")))?;
    *bias = Tensor::filled(bias.shape(), -1e9);
    state
        .provenance
        .insert("branch".to_string(), "forced-zero output".to_string());
    Ok(())
}

/// Copy every compatible parameter from `base` into a fresh model for
/// `target_config`, leaving the top classification layer (and any block the
/// base lacks) at its fresh Xavier draw from `head_seed`. A 3-channel conv1
/// transfers into an early-fusion 4-channel conv1 by filling the RGB slices
/// and keeping the Xavier draw for the saliency slice.
pub fn transfer(
    base: &ModelState,
    target_config: &NetworkConfig,
    input_hw: (usize, usize),
    head_seed: u64,
) -> Result<ModelState> {
    let mut fresh = init_model(target_config, input_hw, head_seed)?;
    for (name, tensor) in &base.params {
        if name.starts_with("fc3.") {
            continue;
        }
        let Some(slot) = fresh.params.get_mut(name) else {
            continue; // base block absent from the target architecture
        };
        if slot.shape() == tensor.shape() {
            *slot = tensor.clone();
        } else if name == "conv1.weight"
            && target_config.variant == Variant::EarlyFusion
            && tensor.shape() == [16, 3, 5, 5]
            && slot.shape() == [16, 4, 5, 5]
        {
            for o in 0..16 {
                for c in 0..3 {
                    for kh in 0..5 {
                        for kw in 0..5 {
                            let src = ((o * 3 + c) * 5 + kh) * 5 + kw;
                            let dst = ((o * 4 + c) * 5 + kh) * 5 + kw;
                            slot.data_mut()[dst] = tensor.data()[src];
                        }
                    }
                }
            }
        } else {
            return Err(Error::shape(format!(
                "cannot transfer '{}': shape {:?} vs {:?}",
                name,
                tensor.shape(),
                slot.shape()
            )));
        }
    }
    for (block, note) in &base.provenance {
        if block != "head" && fresh.provenance.contains_key(block) {
            let transferred = fresh
                .params
                .keys()
                .any(|n| n.starts_with(block_prefix(block)) && base.params.contains_key(n));
            if transferred {
                fresh
                    .provenance
                    .insert(block.clone(), format!("transferred: {note}"));
            }
        }
    }
    fresh
        .provenance
        .insert("head".to_string(), format!("xavier(seed={head_seed})"));
    Ok(fresh)
}

fn block_prefix(block: &str) -> &'static str {
    match block {
        "branch" => "branch",
        "head" => "fc3",
        _ => "conv",
    }
}

/// Parameter leaves registered on a tape, by name.
pub struct BoundModel {
    pub ids: BTreeMap<String, NodeId>,
}

/// Leaf every parameter (in name order) onto the tape.
pub fn bind(tape: &mut Tape, state: &ModelState) -> BoundModel {
    let mut ids = BTreeMap::new();
    for (name, tensor) in &state.params {
        ids.insert(name.clone(), tape.leaf(tensor.clone()));
    }
    BoundModel { ids }
}

/// Handles out of one forward pass.
pub struct ForwardPass {
    pub logits: NodeId,
    /// RGB features at the instrumentation point: the modulation input for
    /// delayed fusion, the structurally matching post-activation map for
    /// baseline and early fusion.
    pub probe: NodeId,
    /// The branch's modulation image (delayed fusion only).
    pub modulation: Option<NodeId>,
}

fn layer(bound: &BoundModel, name: &str) -> Result<(NodeId, NodeId)> {
    let w = bound
        .ids
        .get(&format!("{name}.weight"))
        .ok_or_else(|| Error::graph(format!("unbound parameter {name}.weight")))?;
    let b = bound
        .ids
        .get(&format!("{name}.bias"))
        .ok_or_else(|| Error::graph(format!("unbound parameter {name}.bias")))?;
    Ok((*w, *b))
}

/// Build the forward graph for one sample. Baseline ignores any saliency
/// map; the fusion variants require one of the image's spatial size.
pub fn forward(
    tape: &mut Tape,
    bound: &BoundModel,
    config: &NetworkConfig,
    plan: &LayerPlan,
    image: &Tensor,
    saliency: Option<&Tensor>,
) -> Result<ForwardPass> {
    let (h, w) = plan.input_hw;
    if image.shape() != [3, h, w] {
        return Err(Error::shape(format!(
            "image shape {:?} does not match plan [3, {}, {}]",
            image.shape(),
            h,
            w
        )));
    }
    let need_map = config.variant.needs_saliency();
    let map = match (need_map, saliency) {
        (true, Some(m)) => {
            if m.shape() != [1, h, w] {
                return Err(Error::shape(format!(
                    "saliency shape {:?} does not match plan [1, {}, {}]",
                    m.shape(),
                    h,
                    w
                )));
            }
            Some(m)
        }
        (true, None) => {
            return Err(Error::data(format!(
                "variant {} requires a saliency map",
                config.variant.name()
            )))
        }
        (false, _) => None,
    };

    // input node: RGB, or RGB + saliency as a fourth channel
    let mut x = match config.variant {
        Variant::EarlyFusion => {
            let m = map.expect("checked above");
            let mut data = Vec::with_capacity(4 * h * w);
            data.extend_from_slice(image.data());
            data.extend_from_slice(m.data());
            tape.leaf(Tensor::from_vec(&[4, h, w], data)?)
        }
        _ => tape.leaf(image.clone()),
    };
    // unit-range inputs would give every first-layer feature a positive mean,
    // which destabilizes SGD at this scale; shift to zero-centered
    let channels = if config.variant == Variant::EarlyFusion { 4 } else { 3 };
    let shift = tape.leaf(Tensor::from_vec(
        &[channels, h, w],
        vec![-0.5; channels * h * w],
    )?);
    x = tape.add(x, shift)?;

    // saliency branch
    let mut modulation = None;
    if config.variant == Variant::DelayedFusion {
        let branch = plan.branch.as_ref().expect("plan built for delayed fusion");
        let mut s = tape.leaf(map.expect("checked above").clone());
        let depth = branch.convs.len();
        for (i, geom) in branch.convs.iter().enumerate() {
            let (bw, bb) = layer(bound, &format!("branch{}", i + 1))?;
            s = tape.conv2d(s, bw, bb, geom.clone())?;
            s = if i + 1 == depth {
                tape.sigmoid(s)?
            } else {
                tape.relu(s)?
            };
            for _ in 0..branch.pools_after[i] {
                s = tape.maxpool2d(s, (POOL, POOL), POOL)?;
            }
        }
        modulation = Some(s);
    }

    // RGB trunk with fusion + instrumentation probe
    let mut probe = None;
    for (i, geom) in plan.convs.iter().enumerate() {
        let level = i + 1;
        let (cw, cb) = layer(bound, &format!("conv{level}"))?;
        x = tape.conv2d(x, cw, cb, geom.clone())?;
        x = tape.relu(x)?;
        let fusing = config.variant == Variant::DelayedFusion && level == config.fusion_level;
        if fusing {
            if config.pool_before_fusion() && plan.pool_applied[i] {
                x = tape.maxpool2d(x, (POOL, POOL), POOL)?;
            }
            probe = Some(x);
            x = tape.modulate(x, modulation.expect("branch built"), config.skip)?;
            if !config.pool_before_fusion() && plan.pool_applied[i] {
                x = tape.maxpool2d(x, (POOL, POOL), POOL)?;
            }
        } else {
            if level == config.fusion_level {
                probe = Some(x);
            }
            if plan.pool_applied[i] {
                x = tape.maxpool2d(x, (POOL, POOL), POOL)?;
            }
        }
    }

    for i in 1..=3 {
        let (fw, fb) = layer(bound, &format!("fc{i}"))?;
        x = tape.fully_connected(x, fw, fb)?;
        if i < 3 {
            x = tape.relu(x)?;
        }
    }

    Ok(ForwardPass {
        logits: x,
        probe: probe.expect("fusion level within trunk"),
        modulation,
    })
}

// ---- checkpoints ----

fn push_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

/// Serialize: header (config digest, tensor count), then name-ordered
/// tensors as (name length, name bytes, rank, dims, f64 little-endian data).
pub fn encode_checkpoint(state: &ModelState) -> Result<Vec<u8>> {
    state.assert_finite()?;
    let mut out = Vec::new();
    push_u64(&mut out, state.config.digest());
    push_u64(&mut out, state.params.len() as u64);
    for (name, tensor) in &state.params {
        push_u64(&mut out, name.len() as u64);
        out.extend_from_slice(name.as_bytes());
        push_u64(&mut out, tensor.rank() as u64);
        for &d in tensor.shape() {
            push_u64(&mut out, d as u64);
        }
        for &v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_checkpoint(path: &Path, state: &ModelState) -> Result<()> {
    let bytes = encode_checkpoint(state)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format("checkpoint truncated".to_string()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

/// Parse a checkpoint for an expected config; the header digest must match.
pub fn decode_checkpoint(bytes: &[u8], config: &NetworkConfig) -> Result<ModelState> {
    let mut cur = Cursor { bytes, pos: 0 };
    let digest = cur.u64()?;
    if digest != config.digest() {
        return Err(Error::format(format!(
            "checkpoint digest {digest:#x} does not match config {:#x}",
            config.digest()
        )));
    }
    let count = cur.u64()? as usize;
    let mut params = BTreeMap::new();
    for _ in 0..count {
        let name_len = cur.u64()? as usize;
        let name = String::from_utf8(cur.take(name_len)?.to_vec())
            .map_err(|_| Error::format("checkpoint holds a non-UTF8 name".to_string()))?;
        let rank = cur.u64()? as usize;
        if rank > 8 {
            return Err(Error::format(format!("implausible tensor rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u64()? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = cur.take(numel * 8)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        params.insert(name, Tensor::from_vec(&shape, data)?);
    }
    if cur.pos != bytes.len() {
        return Err(Error::format("trailing bytes after checkpoint".to_string()));
    }
    let state = ModelState {
        config: config.clone(),
        params,
        provenance: BTreeMap::from([(
            "backbone".to_string(),
            "loaded from checkpoint".to_string(),
        )]),
    };
    state.assert_finite()?;
    Ok(state)
}

pub fn load_checkpoint(path: &Path, config: &NetworkConfig) -> Result<ModelState> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck;
    use crate::saliency;

    fn rand_tensor(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
    }

    #[test]
    fn plan_matches_hand_computed_sizes_at_64() {
        let plan = LayerPlan::build(&NetworkConfig::default(), (64, 64)).unwrap();
        assert_eq!(plan.post_conv_hw[0], (32, 32));
        assert_eq!(plan.post_stage_hw[0], (16, 16));
        assert_eq!(plan.post_stage_hw[1], (8, 8));
        assert_eq!(plan.post_stage_hw[4], (4, 4));
        assert_eq!(plan.flatten, 32 * 4 * 4);
        assert_eq!(plan.fc[0], (512, 256));
        assert_eq!(plan.fc[2], (128, 20));
        // default fusion at level 2, pool after fusion: probe pre-pool at 16x16
        assert_eq!(plan.probe_hw, (16, 16));
        assert_eq!(plan.probe_stride, 4);
        let branch = plan.branch.unwrap();
        assert_eq!(branch.convs.len(), 2);
        assert_eq!(branch.pools_after, vec![1, 0]);
    }

    #[test]
    fn plan_mirrors_pools_for_deep_fusion() {
        let config = NetworkConfig {
            fusion_level: 5,
            pool_position: Some(PoolPosition::BeforeFusion),
            ..NetworkConfig::default()
        };
        let plan = LayerPlan::build(&config, (64, 64)).unwrap();
        // pools before fusion: pool1, pool2, pool5 -> three mirrored pools
        assert_eq!(plan.probe_hw, (4, 4));
        assert_eq!(plan.probe_stride, 16);
        let branch = plan.branch.unwrap();
        assert_eq!(branch.pools_after, vec![1, 2]);
    }

    #[test]
    fn plan_skips_pools_on_tiny_inputs() {
        let config = NetworkConfig {
            num_classes: 2,
            ..NetworkConfig::default()
        };
        let plan = LayerPlan::build(&config, (8, 8)).unwrap();
        // conv1 stride 2: 4x4; pool1: 2x2; conv2: 2x2; pool2: 1x1; pool5 skipped
        assert_eq!(plan.post_stage_hw[1], (1, 1));
        assert!(!plan.pool_applied[4]);
        assert_eq!(plan.flatten, 32);
    }

    #[test]
    fn early_fusion_widens_conv1_and_ignores_fusion_level() {
        let config = NetworkConfig {
            variant: Variant::EarlyFusion,
            fusion_level: 4,
            ..NetworkConfig::default()
        };
        let plan = LayerPlan::build(&config, (64, 64)).unwrap();
        assert_eq!(plan.convs[0].in_channels, 4);
        assert!(plan.branch.is_none());
    }

    #[test]
    fn pool_position_on_baseline_is_config_error() {
        let config = NetworkConfig {
            variant: Variant::BaselineRgb,
            pool_position: Some(PoolPosition::AfterFusion),
            ..NetworkConfig::default()
        };
        assert!(matches!(config.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn init_is_deterministic_and_within_xavier_bound() {
        let config = NetworkConfig::default();
        let a = init_model(&config, (64, 64), 3).unwrap();
        let b = init_model(&config, (64, 64), 3).unwrap();
        for (name, t) in &a.params {
            assert_eq!(t.data(), b.params[name].data(), "{name}");
        }
        // independently evaluated bound for conv2: fan 16*9 / 32*9
        let bound2 = (6.0 / ((16 * 9 + 32 * 9) as f64)).sqrt();
        assert!(a.param("conv2.weight").max_abs() <= bound2);
        assert!(a.param("conv2.weight").max_abs() > 0.0);
        // biases start at zero
        assert_eq!(a.param("conv1.bias").max_abs(), 0.0);
        // fc1 bound
        let bound_fc = (6.0 / ((512 + 256) as f64)).sqrt();
        assert!(a.param("fc1.weight").max_abs() <= bound_fc);
    }

    #[test]
    fn baseline_has_no_branch_parameters() {
        let config = NetworkConfig {
            variant: Variant::BaselineRgb,
            pool_position: None,
            ..NetworkConfig::default()
        };
        let state = init_model(&config, (64, 64), 3).unwrap();
        assert!(state.params.keys().all(|n| !n.starts_with("branch")));
    }

    #[test]
    fn branch_parameter_count_grows_with_width() {
        let count = |width: f64| {
            let config = NetworkConfig {
                saliency_width: width,
                ..NetworkConfig::default()
            };
            init_model(&config, (64, 64), 0)
                .unwrap()
                .branch_parameter_count()
        };
        let (half, three_q, full) = (count(0.5), count(0.75), count(1.0));
        assert!(half < three_q && three_q < full);
    }

    #[test]
    fn shared_layers_get_identical_draws_across_variants() {
        let delayed = init_model(&NetworkConfig::default(), (64, 64), 9).unwrap();
        let baseline = init_model(
            &NetworkConfig {
                variant: Variant::BaselineRgb,
                pool_position: None,
                ..NetworkConfig::default()
            },
            (64, 64),
            9,
        )
        .unwrap();
        for name in ["conv1.weight", "conv3.weight", "fc1.weight", "fc3.weight"] {
            assert_eq!(delayed.param(name).data(), baseline.param(name).data());
        }
    }

    fn forward_once(
        state: &ModelState,
        plan: &LayerPlan,
        image: &Tensor,
        map: Option<&Tensor>,
    ) -> (Tensor, Option<Tensor>) {
        let mut tape = Tape::new();
        let bound = bind(&mut tape, state);
        let pass = forward(&mut tape, &bound, &state.config, plan, image, map).unwrap();
        (
            tape.value(pass.logits).clone(),
            pass.modulation.map(|m| tape.value(m).clone()),
        )
    }

    #[test]
    fn forced_zero_modulation_reproduces_baseline_bitwise() {
        let seed = 11;
        let delayed_cfg = NetworkConfig::default();
        let baseline_cfg = NetworkConfig {
            variant: Variant::BaselineRgb,
            pool_position: None,
            ..NetworkConfig::default()
        };
        let mut delayed = init_model(&delayed_cfg, (32, 32), seed).unwrap();
        force_zero_modulation(&mut delayed).unwrap();
        let baseline = init_model(&baseline_cfg, (32, 32), seed).unwrap();
        let plan_d = LayerPlan::build(&delayed_cfg, (32, 32)).unwrap();
        let plan_b = LayerPlan::build(&baseline_cfg, (32, 32)).unwrap();
        let image = rand_tensor(&[3, 32, 32], 0.0, 1.0, 5);
        let map = rand_tensor(&[1, 32, 32], 0.0, 1.0, 6);
        let (logits_d, modulation) = forward_once(&delayed, &plan_d, &image, Some(&map));
        let (logits_b, _) = forward_once(&baseline, &plan_b, &image, None);
        assert!(modulation.unwrap().data().iter().all(|&v| v == 0.0));
        assert_eq!(logits_d.data(), logits_b.data());
    }

    #[test]
    fn white_map_gives_input_independent_modulation() {
        let state = init_model(&NetworkConfig::default(), (32, 32), 2).unwrap();
        let plan = LayerPlan::build(&state.config, (32, 32)).unwrap();
        let white = saliency::white(32, 32);
        let map = Tensor::from_vec(&[1, 32, 32], white.values.clone()).unwrap();
        let img_a = rand_tensor(&[3, 32, 32], 0.0, 1.0, 21);
        let img_b = rand_tensor(&[3, 32, 32], 0.0, 1.0, 22);
        let (_, mod_a) = forward_once(&state, &plan, &img_a, Some(&map));
        let (_, mod_b) = forward_once(&state, &plan, &img_b, Some(&map));
        assert_eq!(mod_a.unwrap().data(), mod_b.unwrap().data());
    }

    #[test]
    fn modulation_values_stay_in_unit_interval() {
        let state = init_model(&NetworkConfig::default(), (32, 32), 4).unwrap();
        let plan = LayerPlan::build(&state.config, (32, 32)).unwrap();
        let image = rand_tensor(&[3, 32, 32], 0.0, 1.0, 31);
        let map = rand_tensor(&[1, 32, 32], 0.0, 1.0, 32);
        let (_, modulation) = forward_once(&state, &plan, &image, Some(&map));
        assert!(modulation
            .unwrap()
            .data()
            .iter()
            .all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn missing_saliency_for_fusion_variant_is_error() {
        let state = init_model(&NetworkConfig::default(), (32, 32), 4).unwrap();
        let plan = LayerPlan::build(&state.config, (32, 32)).unwrap();
        let image = rand_tensor(&[3, 32, 32], 0.0, 1.0, 31);
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &state);
        assert!(forward(&mut tape, &bound, &state.config, &plan, &image, None).is_err());
    }

    #[test]
    fn pre_fusion_gradient_equals_upstream_times_map_plus_one() {
        // run a delayed-fusion forward/backward; the probe's gradient must be
        // the modulated output's gradient scaled elementwise by (map + 1)
        let config = NetworkConfig {
            num_classes: 2,
            ..NetworkConfig::default()
        };
        let state = init_model(&config, (16, 16), 13).unwrap();
        let plan = LayerPlan::build(&config, (16, 16)).unwrap();
        let image = rand_tensor(&[3, 16, 16], 0.0, 1.0, 41);
        let map = rand_tensor(&[1, 16, 16], 0.0, 1.0, 42);
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &state);
        let pass = forward(&mut tape, &bound, &config, &plan, &image, Some(&map)).unwrap();
        let loss = tape.softmax_cross_entropy(pass.logits, 0).unwrap();
        let grads = tape.backward(loss).unwrap();
        let probe_grad = grads.get(pass.probe).unwrap();
        let modulation = tape.value(pass.modulation.unwrap()).clone();
        // recover the upstream gradient by dividing out the gating factor;
        // instead multiply: upstream = grad(modulated output) and check
        // probe_grad == upstream * (m + 1) elementwise using the tape's own
        // modulated node gradient.
        let modulated = NodeId(pass.probe.0 + 1); // modulate node follows probe
        let upstream = grads.get(modulated).unwrap();
        let hw = modulation.numel();
        let c_n = probe_grad.shape()[0];
        for c in 0..c_n {
            for i in 0..hw {
                let expect = upstream.data()[c * hw + i] * (modulation.data()[i] + 1.0);
                let got = probe_grad.data()[c * hw + i];
                assert_eq!(got, expect);
            }
        }
    }

    #[test]
    fn whole_network_gradient_check_at_reduced_size() {
        let config = NetworkConfig {
            num_classes: 2,
            ..NetworkConfig::default()
        };
        let state = init_model(&config, (8, 8), 17).unwrap();
        let plan = LayerPlan::build(&config, (8, 8)).unwrap();
        let image = rand_tensor(&[3, 8, 8], 0.05, 0.95, 51);
        let map = rand_tensor(&[1, 8, 8], 0.05, 0.95, 52);
        let names: Vec<String> = state.params.keys().cloned().collect();
        let tensors: Vec<Tensor> = names.iter().map(|n| state.param(n).clone()).collect();

        let eval = |inputs: &[Tensor]| -> f64 {
            let mut s = state.clone();
            for (name, t) in names.iter().zip(inputs) {
                s.params.insert(name.clone(), t.clone());
            }
            let mut tape = Tape::new();
            let bound = bind(&mut tape, &s);
            let pass = forward(&mut tape, &bound, &config, &plan, &image, Some(&map)).unwrap();
            let loss = tape.softmax_cross_entropy(pass.logits, 1).unwrap();
            tape.value(loss).data()[0]
        };

        let mut tape = Tape::new();
        let bound = bind(&mut tape, &state);
        let pass = forward(&mut tape, &bound, &config, &plan, &image, Some(&map)).unwrap();
        let loss = tape.softmax_cross_entropy(pass.logits, 1).unwrap();
        let grads = tape.backward(loss).unwrap();
        let analytic: Vec<Tensor> = names
            .iter()
            .map(|n| grads.get_or_zeros(bound.ids[n], state.param(n).shape()))
            .collect();

        // atol covers coordinates whose true gradients sit below the central
        // difference's noise floor; the checker itself discards probes that
        // straddle a relu/pool kink
        let report = gradcheck::finite_difference_check_sampled(
            &eval,
            &tensors,
            &analytic,
            gradcheck::DEFAULT_EPS,
            1e-7,
            6,
            99,
        );
        assert!(
            report.max_rel_err < 1e-3,
            "max rel err {} over {} coordinates",
            report.max_rel_err,
            report.checked
        );
        assert!(report.checked > 50);
    }

    #[test]
    fn transfer_keeps_backbone_refreshes_head() {
        let base_cfg = NetworkConfig {
            variant: Variant::BaselineRgb,
            num_classes: 50,
            pool_position: None,
            ..NetworkConfig::default()
        };
        let base = init_model(&base_cfg, (64, 64), 100).unwrap();
        let target_cfg = NetworkConfig::default(); // delayed fusion, 20 classes
        let t = transfer(&base, &target_cfg, (64, 64), 777).unwrap();
        // backbone copied
        assert_eq!(t.param("conv3.weight").data(), base.param("conv3.weight").data());
        assert_eq!(t.param("fc2.weight").data(), base.param("fc2.weight").data());
        // head fresh: shape follows target classes, values from the head seed
        assert_eq!(t.param("fc3.weight").shape(), &[20, 128]);
        let fresh = init_model(&target_cfg, (64, 64), 777).unwrap();
        assert_eq!(t.param("fc3.weight").data(), fresh.param("fc3.weight").data());
        // branch absent from base stays at its fresh draw
        assert_eq!(
            t.param("branch1.weight").data(),
            fresh.param("branch1.weight").data()
        );
    }

    #[test]
    fn transfer_into_early_fusion_splices_conv1() {
        let base_cfg = NetworkConfig {
            variant: Variant::BaselineRgb,
            num_classes: 50,
            pool_position: None,
            ..NetworkConfig::default()
        };
        let base = init_model(&base_cfg, (64, 64), 100).unwrap();
        let early_cfg = NetworkConfig {
            variant: Variant::EarlyFusion,
            ..NetworkConfig::default()
        };
        let t = transfer(&base, &early_cfg, (64, 64), 200).unwrap();
        let tw = t.param("conv1.weight");
        let bw = base.param("conv1.weight");
        let fresh = init_model(&early_cfg, (64, 64), 200).unwrap();
        let fw = fresh.param("conv1.weight");
        assert_eq!(tw.shape(), &[16, 4, 5, 5]);
        for o in 0..16 {
            for kh in 0..5 {
                for kw in 0..5 {
                    for c in 0..3 {
                        let dst = ((o * 4 + c) * 5 + kh) * 5 + kw;
                        let src = ((o * 3 + c) * 5 + kh) * 5 + kw;
                        assert_eq!(tw.data()[dst], bw.data()[src]);
                    }
                    // saliency slice keeps its own Xavier draw
                    let dst = ((o * 4 + 3) * 5 + kh) * 5 + kw;
                    assert_eq!(tw.data()[dst], fw.data()[dst]);
                }
            }
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let state = init_model(&NetworkConfig::default(), (64, 64), 8).unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &state).unwrap();
        let back = load_checkpoint(&path, &state.config).unwrap();
        assert_eq!(back.params.len(), state.params.len());
        for (name, t) in &state.params {
            assert_eq!(t.shape(), back.params[name].shape());
            assert_eq!(t.data(), back.params[name].data(), "{name}");
        }
        // digest mismatch rejected
        let other = NetworkConfig {
            fusion_level: 3,
            ..NetworkConfig::default()
        };
        assert!(load_checkpoint(&path, &other).is_err());
        // truncation rejected
        let bytes = encode_checkpoint(&state).unwrap();
        assert!(decode_checkpoint(&bytes[..bytes.len() - 4], &state.config).is_err());
    }
}
