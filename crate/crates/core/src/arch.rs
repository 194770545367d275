//! Architecture descriptors, the discrete search space and resource estimation.
//!
//! A [`DenseNetConfig`] describes a CIFAR-style dense backbone: a single 3×3
//! stem convolution at full input resolution, `M` dense stages of
//! bottleneck-compressed (BC) layers, a transition between consecutive stages
//! (1×1 compression by `θ` followed by 2× downsampling), and a classifier head
//! (final batch norm, global pooling, affine map).
//!
//! Counting convention used by [`estimate_resources`]:
//!
//! * convolutions carry no bias;
//! * a batch norm over `c` channels has `2c` parameters (scale and shift) and
//!   is only counted when `count_batchnorm_params` is set;
//! * FLOPs are `2 ×` parameter uses: a convolution costs `2 × MACs` at the
//!   resolution it runs at, a batch norm costs `2 × 2c` per spatial position,
//!   and the classifier costs `2 × (weights + biases)`. Pooling is free.
//!
//! Under this convention every parameter is used at least once per image, so
//! `flops >= 2 * params` always holds.

use std::collections::BTreeSet;
use std::fmt;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Channels of the input image consumed by the stem.
pub const IMAGE_CHANNELS: u32 = 3;

/// Kernel size of the stem convolution.
pub const STEM_KERNEL: u32 = 3;

/// Width multiplier of the 1×1 bottleneck inside a dense-BC layer.
pub const DEFAULT_BOTTLENECK: u32 = 4;

pub const SCHEMA_VERSION: u32 = 1;

/// One dense stage (a dense block, before its outgoing transition).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub num_layers: u32,
    pub growth_rate: u32,
    pub kernel_size: u32,
    pub in_width: u32,
    pub in_resolution: u32,
}

impl StageConfig {
    /// Channels leaving the dense block: `in_width + num_layers * growth_rate`.
    pub fn out_width(&self) -> u64 {
        self.in_width as u64 + self.num_layers as u64 * self.growth_rate as u64
    }

    /// Input channels `c_i` of each dense layer, `i = 1..=num_layers`.
    pub fn layer_widths(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.num_layers as u64).map(move |i| self.in_width as u64 + i * self.growth_rate as u64)
    }

    pub fn shape(&self) -> StageShape {
        StageShape {
            num_layers: self.num_layers,
            growth_rate: self.growth_rate,
            kernel_size: self.kernel_size,
        }
    }
}

/// The searchable coordinates of a stage. Widths and resolutions are derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StageShape {
    pub num_layers: u32,
    pub growth_rate: u32,
    pub kernel_size: u32,
}

impl StageShape {
    pub fn new(num_layers: u32, growth_rate: u32, kernel_size: u32) -> Self {
        Self {
            num_layers,
            growth_rate,
            kernel_size,
        }
    }
}

/// Full architecture descriptor. Field order is the canonical JSON key order.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseNetConfig {
    pub schema_version: u32,
    pub stem_width: u32,
    pub transition_compression: f64,
    pub input_resolution: u32,
    pub num_classes: u32,
    pub bottleneck_multiplier: u32,
    pub count_batchnorm_params: bool,
    pub stages: Vec<StageConfig>,
}

impl PartialEq for DenseNetConfig {
    fn eq(&self, other: &Self) -> bool {
        self.schema_version == other.schema_version
            && self.stem_width == other.stem_width
            && self.transition_compression.to_bits() == other.transition_compression.to_bits()
            && self.input_resolution == other.input_resolution
            && self.num_classes == other.num_classes
            && self.bottleneck_multiplier == other.bottleneck_multiplier
            && self.count_batchnorm_params == other.count_batchnorm_params
            && self.stages == other.stages
    }
}

impl Eq for DenseNetConfig {}

impl Hash for DenseNetConfig {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.schema_version.hash(state);
        self.stem_width.hash(state);
        self.transition_compression.to_bits().hash(state);
        self.input_resolution.hash(state);
        self.num_classes.hash(state);
        self.bottleneck_multiplier.hash(state);
        self.count_batchnorm_params.hash(state);
        self.stages.hash(state);
    }
}

/// `floor(theta * width)`, tolerant of binary representation error in `theta`.
pub fn compress_width(theta: f64, width: u64) -> u64 {
    (theta * width as f64 + 1e-9).floor() as u64
}

impl DenseNetConfig {
    /// Builds a config from stage shapes, deriving every stage's input width
    /// and resolution from the stem and the transition rule.
    pub fn build(
        stem_width: u32,
        transition_compression: f64,
        input_resolution: u32,
        num_classes: u32,
        shapes: &[StageShape],
    ) -> Result<Self> {
        let mut config = Self {
            schema_version: SCHEMA_VERSION,
            stem_width,
            transition_compression,
            input_resolution,
            num_classes,
            bottleneck_multiplier: DEFAULT_BOTTLENECK,
            count_batchnorm_params: true,
            stages: shapes
                .iter()
                .map(|s| StageConfig {
                    num_layers: s.num_layers,
                    growth_rate: s.growth_rate,
                    kernel_size: s.kernel_size,
                    in_width: 0,
                    in_resolution: 0,
                })
                .collect(),
        };
        config.rederive()?;
        let problems = config.structural_violations();
        if !problems.is_empty() {
            return Err(Error::Config(
                problems.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "),
            ));
        }
        Ok(config)
    }

    /// Recomputes stage input widths and resolutions after a shape change.
    pub fn rederive(&mut self) -> Result<()> {
        let mut width = self.stem_width as u64;
        let mut resolution = self.input_resolution;
        let theta = self.transition_compression;
        for stage in &mut self.stages {
            stage.in_width = u32::try_from(width).map_err(|_| Error::Overflow("stage width"))?;
            stage.in_resolution = resolution;
            width = compress_width(theta, stage.out_width());
            resolution /= 2;
        }
        Ok(())
    }

    pub fn shapes(&self) -> Vec<StageShape> {
        self.stages.iter().map(StageConfig::shape).collect()
    }

    pub fn total_layers(&self) -> u64 {
        self.stages.iter().map(|s| s.num_layers as u64).sum()
    }

    /// Width entering the classifier head.
    pub fn final_width(&self) -> u64 {
        self.stages.last().map(|s| s.out_width()).unwrap_or(self.stem_width as u64)
    }

    /// DenseNet-BC(121) laid out for 32×32 inputs: stem 64, growth 32,
    /// 3×3 kernels, `[6, 12, 24, 16]` layers, `θ = 0.5`.
    pub fn densenet121(num_classes: u32) -> Self {
        let shapes: Vec<_> = [6, 12, 24, 16]
            .iter()
            .map(|&l| StageShape::new(l, 32, 3))
            .collect();
        Self::build(64, 0.5, 32, num_classes, &shapes).expect("preset is valid")
    }

    /// The smallest possible network: one stage with a single 1×1 layer of
    /// growth 1 on a 1×1 single-channel input, batch norm not counted.
    pub fn minimal() -> Self {
        let mut config =
            Self::build(1, 0.5, 1, 1, &[StageShape::new(1, 1, 1)]).expect("preset is valid");
        config.count_batchnorm_params = false;
        config
    }

    /// Field ranges and the stem/transition linkage between stages. Width
    /// ordering is checked separately by [`Self::width_order_violations`].
    pub fn structural_violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut field = |stage: Option<usize>, message: String| {
            out.push(Violation::Field { stage, message })
        };
        if self.schema_version != SCHEMA_VERSION {
            field(None, format!("schema_version {} != {}", self.schema_version, SCHEMA_VERSION));
        }
        if self.stem_width == 0 {
            field(None, "stem_width must be >= 1".into());
        }
        let theta = self.transition_compression;
        if !(theta > 0.0 && theta <= 1.0) {
            field(None, format!("transition_compression {theta} not in (0, 1]"));
        }
        if self.input_resolution == 0 {
            field(None, "input_resolution must be >= 1".into());
        }
        if self.num_classes == 0 {
            field(None, "num_classes must be >= 1".into());
        }
        if self.bottleneck_multiplier == 0 {
            field(None, "bottleneck_multiplier must be >= 1".into());
        }
        if self.stages.is_empty() {
            field(None, "at least one stage is required".into());
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.num_layers == 0 {
                field(Some(i), "num_layers must be >= 1".into());
            }
            if s.growth_rate == 0 {
                field(Some(i), "growth_rate must be >= 1".into());
            }
            if s.kernel_size % 2 == 0 {
                field(Some(i), format!("kernel {} must be odd", s.kernel_size));
            }
            if s.in_width == 0 {
                field(Some(i), "in_width must be >= 1".into());
            }
            if s.in_resolution == 0 {
                field(Some(i), "in_resolution must be >= 1".into());
            }
        }

        if let Some(first) = self.stages.first() {
            if first.in_width != self.stem_width {
                out.push(Violation::WidthLink {
                    stage: 0,
                    expected: self.stem_width as u64,
                    found: first.in_width,
                });
            }
            if first.in_resolution != self.input_resolution {
                out.push(Violation::ResolutionLink {
                    stage: 0,
                    expected: self.input_resolution,
                    found: first.in_resolution,
                });
            }
        }
        for (i, pair) in self.stages.windows(2).enumerate() {
            let (prev, next) = (&pair[0], &pair[1]);
            let expected = compress_width(theta, prev.out_width());
            if next.in_width as u64 != expected {
                out.push(Violation::WidthLink {
                    stage: i + 1,
                    expected,
                    found: next.in_width,
                });
            }
            if next.in_resolution != prev.in_resolution / 2 {
                out.push(Violation::ResolutionLink {
                    stage: i + 1,
                    expected: prev.in_resolution / 2,
                    found: next.in_resolution,
                });
            }
        }
        out
    }

    /// Stages whose input width is smaller than the previous stage's.
    pub fn width_order_violations(&self) -> Vec<Violation> {
        self.stages
            .windows(2)
            .enumerate()
            .filter(|(_, pair)| pair[1].in_width < pair[0].in_width)
            .map(|(i, pair)| Violation::WidthOrder {
                stage: i + 1,
                previous: pair[0].in_width,
                current: pair[1].in_width,
            })
            .collect()
    }

    /// Canonical JSON encoding (pretty-printed, trailing newline).
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// Parses a descriptor and rejects it if any structural invariant fails.
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        let problems = config.structural_violations();
        if !problems.is_empty() {
            return Err(Error::Config(
                problems.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "),
            ));
        }
        Ok(config)
    }
}

/// Inclusive layer-count range for one stage, walked in steps of `step`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerRange {
    pub min: u32,
    pub max: u32,
    #[serde(default = "one")]
    pub step: u32,
}

fn one() -> u32 {
    1
}

impl LayerRange {
    pub fn new(min: u32, max: u32) -> Self {
        Self { min, max, step: 1 }
    }

    pub fn stepped(min: u32, max: u32, step: u32) -> Self {
        Self { min, max, step }
    }

    pub fn contains(&self, layers: u32) -> bool {
        layers >= self.min && layers <= self.max && (layers - self.min).is_multiple_of(self.step)
    }

    pub fn choices(&self) -> impl Iterator<Item = u32> {
        (self.min..=self.max).step_by(self.step.max(1) as usize)
    }

    /// Largest admissible value (the top of the grid, not necessarily `max`).
    pub fn top(&self) -> u32 {
        self.min + (self.max - self.min) / self.step * self.step
    }

    pub fn is_singleton(&self) -> bool {
        self.top() == self.min
    }

    /// Next grid value above (`up`) or below `layers`, if any.
    pub fn adjacent(&self, layers: u32, up: bool) -> Option<u32> {
        if up {
            self.choices().find(|&v| v > layers)
        } else {
            self.choices().filter(|&v| v < layers).last()
        }
    }
}

/// Discrete candidate sets for every mutable structural coordinate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub kernel_choices: BTreeSet<u32>,
    pub growth_choices: BTreeSet<u32>,
    pub stem_choices: BTreeSet<u32>,
    /// Per-stage ranges (`growth_choices`/`kernel_choices` are shared unless a
    /// stage override is present).
    pub layers: Vec<LayerRange>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage_growth_choices: Option<Vec<BTreeSet<u32>>>,
    pub depth_budget: u32,
    pub num_stages: usize,
}

impl SearchSpace {
    /// Kernels `{3, 5, 7}`, growth `{12, 24, 40}`, 130 layers in total.
    pub fn standard() -> Self {
        Self {
            kernel_choices: [3, 5, 7].into(),
            growth_choices: [12, 24, 40].into(),
            stem_choices: [16, 24, 32, 48, 64].into(),
            layers: vec![LayerRange::new(1, 64); 4],
            stage_growth_choices: None,
            depth_budget: 130,
            num_stages: 4,
        }
    }

    /// Growth choices in effect for `stage` (after any pruning).
    pub fn growth_for(&self, stage: usize) -> &BTreeSet<u32> {
        match &self.stage_growth_choices {
            Some(per_stage) => &per_stage[stage],
            None => &self.growth_choices,
        }
    }

    /// Mutable access to a stage's growth set, splitting the shared set on demand.
    pub fn growth_for_mut(&mut self, stage: usize) -> &mut BTreeSet<u32> {
        if self.stage_growth_choices.is_none() {
            self.stage_growth_choices = Some(vec![self.growth_choices.clone(); self.num_stages]);
        }
        &mut self.stage_growth_choices.as_mut().expect("just set")[stage]
    }

    pub fn check(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.kernel_choices.is_empty() {
            problems.push("kernel_choices is empty".to_string());
        }
        if let Some(k) = self.kernel_choices.iter().find(|k| *k % 2 == 0) {
            problems.push(format!("kernel choice {k} is even"));
        }
        if self.growth_choices.is_empty() || self.growth_choices.contains(&0) {
            problems.push("growth_choices must be non-empty and positive".to_string());
        }
        if self.stem_choices.is_empty() || self.stem_choices.contains(&0) {
            problems.push("stem_choices must be non-empty and positive".to_string());
        }
        if self.num_stages == 0 {
            problems.push("num_stages must be >= 1".to_string());
        }
        if self.layers.len() != self.num_stages {
            problems.push(format!(
                "layers has {} ranges for {} stages",
                self.layers.len(),
                self.num_stages
            ));
        }
        for (i, r) in self.layers.iter().enumerate() {
            if r.min == 0 || r.min > r.max || r.step == 0 {
                problems.push(format!("stage {}: layer range [{}, {}] step {} is invalid", i + 1, r.min, r.max, r.step));
            }
        }
        if let Some(per_stage) = &self.stage_growth_choices {
            if per_stage.len() != self.num_stages || per_stage.iter().any(BTreeSet::is_empty) {
                problems.push("stage_growth_choices must hold one non-empty set per stage".to_string());
            }
        }
        let min_depth: u64 = self.layers.iter().map(|r| r.min as u64).sum();
        if (self.depth_budget as u64) < min_depth {
            problems.push(format!("depth_budget {} below minimum depth {}", self.depth_budget, min_depth));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

/// A broken rule found by [`validate_config`]. Stage indices are zero-based
/// and displayed one-based.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Field { stage: Option<usize>, message: String },
    StageCount { expected: usize, found: usize },
    Kernel { stage: usize, value: u32, allowed: Vec<u32> },
    Growth { stage: usize, value: u32, allowed: Vec<u32> },
    Layers { stage: usize, value: u32, range: LayerRange },
    Stem { value: u32, allowed: Vec<u32> },
    DepthBudget { total: u64, budget: u32 },
    WidthLink { stage: usize, expected: u64, found: u32 },
    ResolutionLink { stage: usize, expected: u32, found: u32 },
    WidthOrder { stage: usize, previous: u32, current: u32 },
}

impl Violation {
    pub fn stage(&self) -> Option<usize> {
        match self {
            Violation::Field { stage, .. } => *stage,
            Violation::Kernel { stage, .. }
            | Violation::Growth { stage, .. }
            | Violation::Layers { stage, .. }
            | Violation::WidthLink { stage, .. }
            | Violation::ResolutionLink { stage, .. }
            | Violation::WidthOrder { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}

fn set_str(values: &[u32]) -> String {
    let inner: Vec<_> = values.iter().map(u32::to_string).collect();
    format!("{{{}}}", inner.join(","))
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Field { stage: Some(s), message } => write!(f, "stage {}: {}", s + 1, message),
            Violation::Field { stage: None, message } => write!(f, "{message}"),
            Violation::StageCount { expected, found } => {
                write!(f, "stage count {found} != {expected}")
            }
            Violation::Kernel { stage, value, allowed } => {
                write!(f, "stage {}: kernel {} not in {}", stage + 1, value, set_str(allowed))
            }
            Violation::Growth { stage, value, allowed } => {
                write!(f, "stage {}: growth {} not in {}", stage + 1, value, set_str(allowed))
            }
            Violation::Layers { stage, value, range } => write!(
                f,
                "stage {}: layers {} not in [{}, {}] step {}",
                stage + 1,
                value,
                range.min,
                range.max,
                range.step
            ),
            Violation::Stem { value, allowed } => {
                write!(f, "stem width {} not in {}", value, set_str(allowed))
            }
            Violation::DepthBudget { total, budget } => {
                write!(f, "depth budget exceeded: {total} > {budget}")
            }
            Violation::WidthLink { stage, expected, found } => write!(
                f,
                "stage {}: in_width {} does not match derived {}",
                stage + 1,
                found,
                expected
            ),
            Violation::ResolutionLink { stage, expected, found } => write!(
                f,
                "stage {}: in_resolution {} does not match derived {}",
                stage + 1,
                found,
                expected
            ),
            Violation::WidthOrder { stage, previous, current } => write!(
                f,
                "stage {}: in_width {} decreases from {}",
                stage + 1,
                current,
                previous
            ),
        }
    }
}

/// Checks a config against a space. An empty list means the config is valid.
pub fn validate_config(config: &DenseNetConfig, space: &SearchSpace) -> Vec<Violation> {
    let mut out = config.structural_violations();
    out.extend(config.width_order_violations());
    if config.stages.len() != space.num_stages {
        out.push(Violation::StageCount {
            expected: space.num_stages,
            found: config.stages.len(),
        });
    }
    if !space.stem_choices.contains(&config.stem_width) {
        out.push(Violation::Stem {
            value: config.stem_width,
            allowed: space.stem_choices.iter().copied().collect(),
        });
    }
    for (i, stage) in config.stages.iter().enumerate().take(space.num_stages) {
        if !space.kernel_choices.contains(&stage.kernel_size) {
            out.push(Violation::Kernel {
                stage: i,
                value: stage.kernel_size,
                allowed: space.kernel_choices.iter().copied().collect(),
            });
        }
        let growth = space.growth_for(i);
        if !growth.contains(&stage.growth_rate) {
            out.push(Violation::Growth {
                stage: i,
                value: stage.growth_rate,
                allowed: growth.iter().copied().collect(),
            });
        }
        if let Some(range) = space.layers.get(i) {
            if !range.contains(stage.num_layers) {
                out.push(Violation::Layers {
                    stage: i,
                    value: stage.num_layers,
                    range: *range,
                });
            }
        }
    }
    let total = config.total_layers();
    if total > space.depth_budget as u64 {
        out.push(Violation::DepthBudget {
            total,
            budget: space.depth_budget,
        });
    }
    out
}

/// Parameter and FLOP counts of a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ResourceEstimate {
    pub params: u64,
    pub flops: u64,
}

/// Which optional parts of the network enter the count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EstimateOptions {
    pub include_stem: bool,
    pub include_head: bool,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            include_stem: true,
            include_head: true,
        }
    }
}

#[derive(Default)]
struct Tally {
    params: u128,
    flops: u128,
}

fn mul(factors: &[u64]) -> Result<u128> {
    factors
        .iter()
        .try_fold(1u128, |acc, &f| acc.checked_mul(f as u128))
        .ok_or(Error::Overflow("resources"))
}

impl Tally {
    /// A bias-free convolution `c_in -> c_out` with a `k×k` kernel at `r×r`.
    fn conv(&mut self, c_in: u64, c_out: u64, kernel: u64, resolution: u64) -> Result<()> {
        let weights = mul(&[c_in, c_out, kernel, kernel])?;
        self.add(weights, weights.checked_mul(resolution as u128 * resolution as u128))
    }

    fn batch_norm(&mut self, enabled: bool, channels: u64, resolution: u64) -> Result<()> {
        if !enabled {
            return Ok(());
        }
        let params = mul(&[2, channels])?;
        self.add(params, params.checked_mul(resolution as u128 * resolution as u128))
    }

    fn add(&mut self, params: u128, uses: Option<u128>) -> Result<()> {
        let flops = uses
            .and_then(|u| u.checked_mul(2))
            .ok_or(Error::Overflow("flops"))?;
        self.params = self.params.checked_add(params).ok_or(Error::Overflow("params"))?;
        self.flops = self.flops.checked_add(flops).ok_or(Error::Overflow("flops"))?;
        Ok(())
    }
}

/// Counts parameters and FLOPs of the whole network (stem and head included).
pub fn estimate_resources(config: &DenseNetConfig) -> Result<ResourceEstimate> {
    estimate_resources_with(config, EstimateOptions::default())
}

pub fn estimate_resources_with(
    config: &DenseNetConfig,
    options: EstimateOptions,
) -> Result<ResourceEstimate> {
    let bn = config.count_batchnorm_params;
    let bottleneck = config.bottleneck_multiplier as u64;
    let mut tally = Tally::default();

    if options.include_stem {
        tally.conv(
            IMAGE_CHANNELS as u64,
            config.stem_width as u64,
            STEM_KERNEL as u64,
            config.input_resolution as u64,
        )?;
    }

    for (i, stage) in config.stages.iter().enumerate() {
        let r = stage.in_resolution as u64;
        let k = stage.kernel_size as u64;
        let growth = stage.growth_rate as u64;
        let inner = bottleneck * growth;
        for c in stage.layer_widths() {
            tally.batch_norm(bn, c, r)?;
            tally.conv(c, inner, 1, r)?;
            tally.batch_norm(bn, inner, r)?;
            tally.conv(inner, growth, k, r)?;
        }
        if i + 1 < config.stages.len() {
            let c = stage.out_width();
            tally.batch_norm(bn, c, r)?;
            tally.conv(c, compress_width(config.transition_compression, c), 1, r)?;
        }
    }

    if options.include_head {
        let c = config.final_width();
        // global pooling collapses the map, so the head runs at 1×1
        tally.batch_norm(bn, c, 1)?;
        let classes = config.num_classes as u64;
        let weights = mul(&[c, classes])? + classes as u128;
        tally.add(weights, Some(weights))?;
    }

    Ok(ResourceEstimate {
        params: u64::try_from(tally.params).map_err(|_| Error::Overflow("params"))?,
        flops: u64::try_from(tally.flops).map_err(|_| Error::Overflow("flops"))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space_for_121() -> SearchSpace {
        SearchSpace {
            kernel_choices: [3, 5, 7].into(),
            growth_choices: [12, 24, 32, 40].into(),
            stem_choices: [32, 64].into(),
            layers: vec![LayerRange::new(1, 40); 4],
            stage_growth_choices: None,
            depth_budget: 130,
            num_stages: 4,
        }
    }

    #[test]
    fn densenet121_is_valid() {
        let config = DenseNetConfig::densenet121(100);
        assert!(validate_config(&config, &space_for_121()).is_empty());
        let widths: Vec<_> = config.stages.iter().map(|s| s.in_width).collect();
        assert_eq!(widths, [64, 128, 256, 512]);
        let res: Vec<_> = config.stages.iter().map(|s| s.in_resolution).collect();
        assert_eq!(res, [32, 16, 8, 4]);
        assert_eq!(config.final_width(), 1024);
    }

    #[test]
    fn even_kernel_is_reported() {
        let mut config = DenseNetConfig::densenet121(100);
        config.stages[1].kernel_size = 4;
        let v = validate_config(&config, &space_for_121());
        let msgs: Vec<_> = v.iter().map(|v| v.to_string()).collect();
        assert!(msgs.contains(&"stage 2: kernel 4 not in {3,5,7}".to_string()), "{msgs:?}");
        assert!(msgs.contains(&"stage 2: kernel 4 must be odd".to_string()));
        assert!(v.iter().all(|v| v.stage() == Some(1)));
    }

    #[test]
    fn depth_budget_is_enforced() {
        let shapes: Vec<_> = [40, 40, 40, 11].iter().map(|&l| StageShape::new(l, 32, 3)).collect();
        let config = DenseNetConfig::build(64, 0.5, 32, 100, &shapes).unwrap();
        let v = validate_config(&config, &space_for_121());
        assert_eq!(v, vec![Violation::DepthBudget { total: 131, budget: 130 }]);
        assert_eq!(v[0].to_string(), "depth budget exceeded: 131 > 130");
    }

    #[test]
    fn every_violation_is_listed() {
        let mut config = DenseNetConfig::densenet121(100);
        config.stem_width = 48;
        config.stages[0].growth_rate = 16;
        config.stages[3].num_layers = 41;
        let v = validate_config(&config, &space_for_121());
        assert!(v.iter().any(|v| matches!(v, Violation::Stem { value: 48, .. })));
        assert!(v.iter().any(|v| matches!(v, Violation::Growth { stage: 0, value: 16, .. })));
        assert!(v.iter().any(|v| matches!(v, Violation::Layers { stage: 3, value: 41, .. })));
        // stem changed without rederive: stage 1 width no longer links
        assert!(v.iter().any(|v| matches!(v, Violation::WidthLink { stage: 0, .. })));
    }

    #[test]
    fn degenerate_network_counts_by_hand() {
        let mut config = DenseNetConfig::minimal();
        let bare = EstimateOptions {
            include_stem: false,
            include_head: false,
        };
        // 1x1 conv 1 -> 4 plus 1x1 conv 4 -> 1
        assert_eq!(estimate_resources_with(&config, bare).unwrap().params, 8);
        config.count_batchnorm_params = true;
        // plus BN over 1 and over 4 channels
        assert_eq!(estimate_resources_with(&config, bare).unwrap().params, 8 + 2 + 8);
    }

    #[test]
    fn full_minimal_network() {
        let config = DenseNetConfig::minimal();
        let est = estimate_resources(&config).unwrap();
        // stem 3*1*9, layer 8, head 2*1 + 1 (out width 2, 1 class, bias)
        assert_eq!(est.params, 27 + 8 + 3);
        assert_eq!(est.flops, 2 * est.params);
    }

    #[test]
    fn densenet121_matches_torchvision_feature_count() {
        // torchvision densenet121 has 7_978_856 params with a 7x7 stem and
        // 1000 classes and a stem batch norm; the 3x3 stem costs 1728 and
        // the first dense layer normalizes its own input.
        let est = estimate_resources(&DenseNetConfig::densenet121(1000)).unwrap();
        assert_eq!(est.params, 7_978_856 - 9408 - 128 + 1728);
    }

    #[test]
    fn overflow_is_reported() {
        let shapes = [StageShape::new(u32::MAX, u32::MAX, u32::MAX)];
        let mut config = DenseNetConfig::minimal();
        config.stages = vec![StageConfig {
            num_layers: shapes[0].num_layers,
            growth_rate: shapes[0].growth_rate,
            kernel_size: shapes[0].kernel_size,
            in_width: 1,
            in_resolution: u32::MAX,
        }];
        assert!(matches!(estimate_resources(&config), Err(Error::Overflow(_))));
    }

    #[test]
    fn json_round_trip_is_byte_identical() {
        let config = DenseNetConfig::densenet121(100);
        let text = config.to_json();
        let parsed = DenseNetConfig::from_json(&text).unwrap();
        assert_eq!(parsed, config);
        assert_eq!(parsed.to_json(), text);
        let keys: Vec<_> = text
            .lines()
            .filter_map(|l| l.trim().strip_prefix('"'))
            .map(|l| l.split('"').next().unwrap())
            .take(8)
            .collect();
        assert_eq!(
            keys,
            [
                "schema_version",
                "stem_width",
                "transition_compression",
                "input_resolution",
                "num_classes",
                "bottleneck_multiplier",
                "count_batchnorm_params",
                "stages"
            ]
        );
    }

    #[test]
    fn unknown_keys_and_bad_versions_are_rejected() {
        let text = DenseNetConfig::minimal().to_json().replacen("\"stem_width\"", "\"stem\"", 1);
        let err = DenseNetConfig::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("stem"), "{err}");
        let text = DenseNetConfig::minimal()
            .to_json()
            .replacen("\"schema_version\": 1", "\"schema_version\": 2", 1);
        assert!(DenseNetConfig::from_json(&text).is_err());
    }

    #[test]
    fn layer_range_steps() {
        let r = LayerRange::stepped(2, 4, 2);
        assert_eq!(r.choices().collect::<Vec<_>>(), [2, 4]);
        assert!(!r.contains(3));
        assert_eq!(r.adjacent(2, true), Some(4));
        assert_eq!(r.adjacent(4, true), None);
        assert_eq!(r.adjacent(3, false), Some(2));
        assert_eq!(LayerRange::stepped(1, 6, 2).top(), 5);
    }

    #[test]
    fn space_check_catches_bad_ranges() {
        let mut space = SearchSpace::standard();
        assert!(space.check().is_ok());
        space.depth_budget = 3;
        assert!(space.check().is_err());
        let mut space = SearchSpace::standard();
        space.kernel_choices.insert(4);
        assert!(space.check().is_err());
    }
}
