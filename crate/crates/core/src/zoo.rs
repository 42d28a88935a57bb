//! DCGAN, LAPGAN and DDGAN generator/discriminator stacks.
//!
//! Parameter names are hierarchical: `g.0.*` is the base generator, `g.{k}.*`
//! the level-`k` block and `d{k}.*` the level-`k` discriminator.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::pyramid::{real_pyramid, Interpolation};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{BatchNorm, Conv2d, Deconv2d, Dense, Mode, ParamStore, Session};
use crate::rng::{sample_normal, Rng};
use crate::tensor::{Float, Tensor};
use crate::train::LossKind;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpsampleMode {
    #[default]
    Nearest,
    Deconv,
}

impl UpsampleMode {
    pub fn as_str(self) -> &'static str {
        match self {
            UpsampleMode::Nearest => "nearest",
            UpsampleMode::Deconv => "deconv",
        }
    }
}

impl FromStr for UpsampleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(UpsampleMode::Nearest),
            "deconv" => Ok(UpsampleMode::Deconv),
            _ => Err(Error::Config(format!("unknown upsample_mode `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Dcgan,
    Lapgan,
    DdganUp,
    DdganDeconv,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::Dcgan,
        ModelKind::Lapgan,
        ModelKind::DdganUp,
        ModelKind::DdganDeconv,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Dcgan => "dcgan",
            ModelKind::Lapgan => "lapgan",
            ModelKind::DdganUp => "ddgan-up",
            ModelKind::DdganDeconv => "ddgan-deconv",
        }
    }

    pub fn is_ddgan(self) -> bool {
        matches!(self, ModelKind::DdganUp | ModelKind::DdganDeconv)
    }

    pub fn upsample_mode(self) -> UpsampleMode {
        match self {
            ModelKind::DdganDeconv => UpsampleMode::Deconv,
            _ => UpsampleMode::Nearest,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown model kind `{s}`")))
    }
}

/// Declarative description of a pyramid of generator/discriminator levels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PyramidSpec {
    pub base_resolution: usize,
    pub levels: usize,
    /// Width of each level: the base generator's last hidden deconv for
    /// level 0, the residual block for `k > 0`.
    pub channels_per_level: Vec<usize>,
    /// Width of the first discriminator conv; doubles per stride-2 layer.
    pub disc_width: usize,
    pub z_dim: usize,
    pub residual_depth: usize,
    pub interpolation: Interpolation,
}

impl Default for PyramidSpec {
    fn default() -> Self {
        Self {
            base_resolution: 16,
            levels: 3,
            channels_per_level: vec![16, 8, 8],
            disc_width: 8,
            z_dim: 64,
            residual_depth: 3,
            interpolation: Interpolation::Nearest,
        }
    }
}

/// `4·2^m` with `m ≥ 1`.
fn valid_resolution(r: usize) -> bool {
    r >= 8 && r.is_power_of_two()
}

impl PyramidSpec {
    pub fn top_resolution(&self) -> usize {
        self.base_resolution << self.levels.saturating_sub(1)
    }

    pub fn validate(&self, kind: ModelKind) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.levels == 0 {
            return fail("levels must be at least 1".into());
        }
        if kind != ModelKind::Dcgan && self.levels < 2 {
            return fail(format!("{kind} needs levels >= 2"));
        }
        if !valid_resolution(self.base_resolution) {
            return fail(format!(
                "base_resolution {} is not a power-of-two multiple of 4 (>= 8)",
                self.base_resolution
            ));
        }
        if self.z_dim == 0 {
            return fail("z_dim must be positive".into());
        }
        if self.residual_depth == 0 {
            return fail("residual_depth must be at least 1".into());
        }
        if self.disc_width == 0 {
            return fail("disc_width must be positive".into());
        }
        if self.channels_per_level.len() < self.levels {
            return fail(format!(
                "channels_per_level has {} entries, levels is {}",
                self.channels_per_level.len(),
                self.levels
            ));
        }
        if self.channels_per_level.contains(&0) {
            return fail("channels_per_level entries must be positive".into());
        }
        Ok(())
    }

    fn header(&self, kind: ModelKind) -> Vec<(String, String)> {
        let widths: Vec<String> = self.channels_per_level.iter().map(|c| c.to_string()).collect();
        vec![
            ("kind".into(), kind.as_str().into()),
            ("base_resolution".into(), self.base_resolution.to_string()),
            ("levels".into(), self.levels.to_string()),
            ("channels_per_level".into(), widths.join(",")),
            ("disc_width".into(), self.disc_width.to_string()),
            ("z_dim".into(), self.z_dim.to_string()),
            ("residual_depth".into(), self.residual_depth.to_string()),
            ("upsample_mode".into(), kind.upsample_mode().as_str().into()),
            ("interpolation".into(), self.interpolation.as_str().into()),
        ]
    }

    fn from_header(ck: &Checkpoint) -> Result<(ModelKind, Self)> {
        let get = |key: &str| {
            ck.header_value(key)
                .ok_or_else(|| Error::Checkpoint(format!("header lacks `{key}`")))
        };
        let num = |key: &str| -> Result<usize> {
            get(key)?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("header `{key}` is not an integer")))
        };
        let kind: ModelKind = get("kind")?.parse()?;
        let channels_per_level = get("channels_per_level")?
            .split(',')
            .map(|c| c.parse().map_err(|_| Error::Checkpoint("bad channels_per_level".into())))
            .collect::<Result<_>>()?;
        let spec = PyramidSpec {
            base_resolution: num("base_resolution")?,
            levels: num("levels")?,
            channels_per_level,
            disc_width: num("disc_width")?,
            z_dim: num("z_dim")?,
            residual_depth: num("residual_depth")?,
            interpolation: get("interpolation")?.parse()?,
        };
        if get("upsample_mode")?.parse::<UpsampleMode>()? != kind.upsample_mode() {
            return Err(Error::Checkpoint("upsample_mode does not match kind".into()));
        }
        Ok((kind, spec))
    }
}

/// Dense projection to a 4×4 map followed by a stride-2 deconv tower.
#[derive(Clone, Debug)]
struct BaseGenerator {
    project: Dense,
    project_bn: BatchNorm,
    stem: usize,
    ups: Vec<Deconv2d>,
    bns: Vec<BatchNorm>,
}

impl BaseGenerator {
    fn new(prefix: &str, z_dim: usize, resolution: usize, width: usize) -> Self {
        let n_up = (resolution / 4).trailing_zeros() as usize;
        let stem = width << (n_up - 1);
        let project = Dense::new(format!("{prefix}.project"), z_dim, stem * 16);
        let project_bn = BatchNorm::new(format!("{prefix}.project_bn"), stem * 16);
        let mut ups = Vec::new();
        let mut bns = Vec::new();
        let mut ch = stem;
        for i in 0..n_up {
            let out = if i + 1 == n_up { 3 } else { ch / 2 };
            ups.push(Deconv2d::new(format!("{prefix}.up{i}"), ch, out, 4, 2, 1));
            if i + 1 < n_up {
                bns.push(BatchNorm::new(format!("{prefix}.bn{i}"), out));
            }
            ch = out;
        }
        Self {
            project,
            project_bn,
            stem,
            ups,
            bns,
        }
    }

    fn init(&self, store: &mut ParamStore, rng: &mut Rng) {
        self.project.init(store, rng);
        self.project_bn.init(store, rng);
        for up in &self.ups {
            up.init(store, rng);
        }
        for bn in &self.bns {
            bn.init(store, rng);
        }
    }

    fn forward(&self, s: &mut Session, z: Var) -> Result<Var> {
        let n = s.graph.shape(z)[0];
        let h = self.project.forward(s, z)?;
        let h = self.project_bn.forward(s, h)?;
        let h = s.graph.relu(h);
        let mut h = s.graph.reshape(h, &[n, self.stem, 4, 4])?;
        for (i, up) in self.ups.iter().enumerate() {
            h = up.forward(s, h)?;
            h = match self.bns.get(i) {
                Some(bn) => {
                    let b = bn.forward(s, h)?;
                    s.graph.relu(b)
                }
                None => s.graph.tanh(h),
            };
        }
        Ok(h)
    }
}

/// `[conv3×3 → BN → lrelu]×(d−1)` then a final conv to 3 channels.
#[derive(Clone, Debug)]
struct ResidualBlock {
    convs: Vec<Conv2d>,
    bns: Vec<BatchNorm>,
    zero_last: bool,
}

impl ResidualBlock {
    fn new(prefix: &str, in_channels: usize, width: usize, depth: usize, zero_last: bool) -> Self {
        let mut convs = Vec::new();
        let mut bns = Vec::new();
        let mut ch = in_channels;
        for j in 0..depth {
            let out = if j + 1 == depth { 3 } else { width };
            convs.push(Conv2d::new(format!("{prefix}.conv{j}"), ch, out, 3, 1, 1));
            if j + 1 < depth {
                bns.push(BatchNorm::new(format!("{prefix}.bn{j}"), out));
            }
            ch = out;
        }
        Self {
            convs,
            bns,
            zero_last,
        }
    }

    fn init(&self, store: &mut ParamStore, rng: &mut Rng) {
        let last = self.convs.len() - 1;
        for (j, conv) in self.convs.iter().enumerate() {
            if j == last && self.zero_last {
                conv.init_zero(store);
            } else {
                conv.init(store, rng);
            }
        }
        for bn in &self.bns {
            bn.init(store, rng);
        }
    }

    fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let mut h = x;
        for (j, conv) in self.convs.iter().enumerate() {
            h = conv.forward(s, h)?;
            if let Some(bn) = self.bns.get(j) {
                let b = bn.forward(s, h)?;
                h = s.graph.leaky_relu(b, 0.2);
            }
        }
        Ok(h)
    }
}

/// Adds a bounded residual to `base`.
///
/// With `t = tanh(raw)` the candidate update is `t − |t|·base`, which keeps
/// `base + update` inside [-1, 1] whenever `base` is, and is zero for
/// `raw = 0`. The emitted residual is then `image − base`, so the
/// decomposition `image − base = residual` holds exactly.
pub fn bounded_residual<T: Float>(g: &mut Graph<T>, base: Var, raw: Var) -> Result<(Var, Var)> {
    let t = g.tanh(raw);
    let mag = g.abs(t);
    let pull = g.mul(mag, base)?;
    let update = g.sub(t, pull)?;
    let image = g.add(base, update)?;
    let residual = g.sub(image, base)?;
    Ok((image, residual))
}

#[derive(Clone, Debug)]
struct LevelGenerator {
    learned_up: Option<Deconv2d>,
    block: ResidualBlock,
    takes_noise: bool,
}

/// Stride-2 conv tower down to 4×4, then a dense score head.
#[derive(Clone, Debug)]
struct Discriminator {
    resolution: usize,
    convs: Vec<Conv2d>,
    bns: Vec<Option<BatchNorm>>,
    head: Dense,
}

impl Discriminator {
    fn new(prefix: &str, resolution: usize, width: usize) -> Self {
        let n_down = (resolution / 4).trailing_zeros() as usize;
        let mut convs = Vec::new();
        let mut bns = Vec::new();
        let mut ch = 3;
        for i in 0..n_down {
            let out = width << i.min(3);
            convs.push(Conv2d::new(format!("{prefix}.conv{i}"), ch, out, 4, 2, 1));
            bns.push((i > 0).then(|| BatchNorm::new(format!("{prefix}.bn{i}"), out)));
            ch = out;
        }
        let head = Dense::new(format!("{prefix}.head"), ch * 16, 1);
        Self {
            resolution,
            convs,
            bns,
            head,
        }
    }

    fn init(&self, store: &mut ParamStore, rng: &mut Rng) {
        for conv in &self.convs {
            conv.init(store, rng);
        }
        for bn in self.bns.iter().flatten() {
            bn.init(store, rng);
        }
        self.head.init(store, rng);
    }

    fn forward(&self, s: &mut Session, x: Var, loss: LossKind) -> Result<Var> {
        let (n, c, h, w) = dims4_of(&s.graph, x, "discriminator")?;
        if c != 3 {
            return Err(Error::dim("discriminator", "channels", 3, c));
        }
        if h != self.resolution || w != self.resolution {
            return Err(Error::dim(
                "discriminator",
                "resolution",
                self.resolution,
                format!("{h}x{w}"),
            ));
        }
        let mut h = x;
        for (conv, bn) in self.convs.iter().zip(&self.bns) {
            h = conv.forward(s, h)?;
            if let Some(bn) = bn {
                h = bn.forward(s, h)?;
            }
            h = s.graph.leaky_relu(h, 0.2);
        }
        let flat_len = s.graph.value(h).len() / n;
        let flat = s.graph.reshape(h, &[n, flat_len])?;
        let score = self.head.forward(s, flat)?;
        Ok(match loss {
            LossKind::Vanilla => s.graph.sigmoid(score),
            LossKind::LeastSquares => score,
        })
    }
}

fn dims4_of(g: &Graph<f32>, v: Var, op: &'static str) -> Result<(usize, usize, usize, usize)> {
    match *g.shape(v) {
        [n, c, h, w] => Ok((n, c, h, w)),
        ref s => Err(Error::dim(op, "rank", 4, s.len())),
    }
}

/// What a level's discriminator looks at.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputKind {
    Image,
    Residual,
}

/// Noise consumed for a batch: one latent vector per sample plus, for
/// LAPGAN, one spatial map per upper level.
#[derive(Clone, Debug, PartialEq)]
pub struct Noise {
    pub latent: Tensor,
    pub maps: Vec<Tensor>,
}

impl Noise {
    /// Number of independent noise sources per sample.
    pub fn arity(&self) -> usize {
        1 + self.maps.len()
    }

    pub fn batch(&self) -> usize {
        self.latent.shape()[0]
    }

    pub fn slice(&self, start: usize, end: usize) -> Result<Noise> {
        Ok(Noise {
            latent: self.latent.slice_outer(start, end)?,
            maps: self
                .maps
                .iter()
                .map(|m| m.slice_outer(start, end))
                .collect::<Result<_>>()?,
        })
    }
}

pub struct GeneratorOutput {
    /// Level images, lowest resolution first.
    pub images: Vec<Var>,
    /// Emitted residuals (LAPGAN levels `k > 0` only).
    pub residuals: Vec<Option<Var>>,
    /// `up(I[k-1])` for `k > 0`.
    pub upsampled: Vec<Option<Var>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ParamCounts {
    pub generator: usize,
    pub discriminators: usize,
    pub total: usize,
}

#[derive(Clone, Debug)]
pub struct GanModel {
    pub kind: ModelKind,
    pub spec: PyramidSpec,
    pub store: ParamStore,
    base: BaseGenerator,
    blocks: Vec<LevelGenerator>,
    discriminators: Vec<Discriminator>,
}

pub fn build_dcgan(spec: &PyramidSpec, seed: u64) -> Result<GanModel> {
    GanModel::build(ModelKind::Dcgan, spec, seed)
}

pub fn build_lapgan(spec: &PyramidSpec, seed: u64) -> Result<GanModel> {
    GanModel::build(ModelKind::Lapgan, spec, seed)
}

pub fn build_ddgan(spec: &PyramidSpec, upsample: UpsampleMode, seed: u64) -> Result<GanModel> {
    let kind = match upsample {
        UpsampleMode::Nearest => ModelKind::DdganUp,
        UpsampleMode::Deconv => ModelKind::DdganDeconv,
    };
    GanModel::build(kind, spec, seed)
}

impl GanModel {
    /// Builds and initializes a model; pure in `(kind, spec, seed)`.
    pub fn build(kind: ModelKind, spec: &PyramidSpec, seed: u64) -> Result<Self> {
        let mut model = Self::layout(kind, spec)?;
        let mut rng = Rng::with_stream(seed, 0x1a1);
        model.base.init(&mut model.store, &mut rng);
        for block in &model.blocks {
            if let Some(up) = &block.learned_up {
                up.init(&mut model.store, &mut rng);
            }
            block.block.init(&mut model.store, &mut rng);
        }
        for d in &model.discriminators {
            d.init(&mut model.store, &mut rng);
        }
        Ok(model)
    }

    fn layout(kind: ModelKind, spec: &PyramidSpec) -> Result<Self> {
        spec.validate(kind)?;
        let widths = &spec.channels_per_level;
        let (base, blocks, discriminators) = if kind == ModelKind::Dcgan {
            let top = spec.top_resolution();
            let base = BaseGenerator::new("g.0", spec.z_dim, top, widths[0]);
            (base, Vec::new(), vec![Discriminator::new("d0", top, spec.disc_width)])
        } else {
            let base = BaseGenerator::new("g.0", spec.z_dim, spec.base_resolution, widths[0]);
            let blocks = (1..spec.levels)
                .map(|k| {
                    let prefix = format!("g.{k}");
                    let takes_noise = kind == ModelKind::Lapgan;
                    let in_ch = if takes_noise { 4 } else { 3 };
                    LevelGenerator {
                        learned_up: (kind == ModelKind::DdganDeconv)
                            .then(|| Deconv2d::new(format!("{prefix}.learned_up"), 3, 3, 4, 2, 1)),
                        block: ResidualBlock::new(&prefix, in_ch, widths[k], spec.residual_depth, kind.is_ddgan()),
                        takes_noise,
                    }
                })
                .collect();
            let discs = (0..spec.levels)
                .map(|k| Discriminator::new(&format!("d{k}"), spec.base_resolution << k, spec.disc_width))
                .collect();
            (base, blocks, discs)
        };
        Ok(Self {
            kind,
            spec: spec.clone(),
            store: ParamStore::new(),
            base,
            blocks,
            discriminators,
        })
    }

    /// Number of generated (and discriminated) levels.
    pub fn levels(&self) -> usize {
        self.discriminators.len()
    }

    pub fn level_resolution(&self, level: usize) -> usize {
        self.discriminators[level].resolution
    }

    pub fn top_resolution(&self) -> usize {
        self.spec.top_resolution()
    }

    pub fn input_kind(&self, level: usize) -> InputKind {
        if self.kind == ModelKind::Lapgan && level > 0 {
            InputKind::Residual
        } else {
            InputKind::Image
        }
    }

    /// Noise sources consumed per sample.
    pub fn noise_arity(&self) -> usize {
        match self.kind {
            ModelKind::Lapgan => self.spec.levels,
            _ => 1,
        }
    }

    pub fn sample_noise(&self, n: usize, rng: &mut Rng) -> Noise {
        let latent = sample_normal(rng, &[n, self.spec.z_dim]);
        let maps = if self.kind == ModelKind::Lapgan {
            (1..self.levels())
                .map(|k| {
                    let r = self.level_resolution(k);
                    sample_normal(rng, &[n, 1, r, r])
                })
                .collect()
        } else {
            Vec::new()
        };
        Noise { latent, maps }
    }

    /// Runs the generator stack, recording every level into the session.
    pub fn generate(&self, s: &mut Session, noise: &Noise) -> Result<GeneratorOutput> {
        if noise.arity() != self.noise_arity() {
            return Err(Error::dim("generate", "noise sources", self.noise_arity(), noise.arity()));
        }
        let n = noise.batch();
        if noise.latent.shape() != [n, self.spec.z_dim] {
            return Err(Error::dim("generate", "latent", self.spec.z_dim, format!("{:?}", noise.latent.shape())));
        }
        let z = s.input(noise.latent.clone());
        let mut images = vec![self.base.forward(s, z)?];
        let mut residuals = vec![None];
        let mut upsampled = vec![None];
        for (i, level) in self.blocks.iter().enumerate() {
            let prev = *images.last().expect("base level");
            let up = match &level.learned_up {
                Some(deconv) => {
                    let u = deconv.forward(s, prev)?;
                    s.graph.tanh(u)
                }
                None => self.spec.interpolation.upsample_var(&mut s.graph, prev)?,
            };
            let input = if level.takes_noise {
                let map = &noise.maps[i];
                let r = self.level_resolution(i + 1);
                if map.shape() != [n, 1, r, r] {
                    return Err(Error::dim("generate", "noise map", format!("[{n}, 1, {r}, {r}]"), format!("{:?}", map.shape())));
                }
                let m = s.input(map.clone());
                s.graph.concat_channels(&[up, m])?
            } else {
                up
            };
            let raw = level.block.forward(s, input)?;
            let (image, residual) = bounded_residual(&mut s.graph, up, raw)?;
            images.push(image);
            residuals.push(level.takes_noise.then_some(residual));
            upsampled.push(Some(up));
        }
        Ok(GeneratorOutput {
            images,
            residuals,
            upsampled,
        })
    }

    /// The tensor discriminator `level` judges for a generated stack.
    pub fn disc_input(&self, out: &GeneratorOutput, level: usize) -> Var {
        match self.input_kind(level) {
            InputKind::Residual => out.residuals[level].expect("LAPGAN residual"),
            InputKind::Image => out.images[level],
        }
    }

    pub fn discriminate(&self, s: &mut Session, level: usize, x: Var, loss: LossKind) -> Result<Var> {
        self.discriminators[level].forward(s, x, loss)
    }

    /// Per-level real targets of a top-resolution batch: images, or residuals
    /// for LAPGAN levels above the base.
    pub fn real_targets(&self, batch: &Tensor) -> Result<Vec<Tensor>> {
        let (_, c, h, w) = batch.dims4("real_targets")?;
        let top = self.top_resolution();
        if c != 3 || h != top || w != top {
            return Err(Error::dim("real_targets", "resolution", format!("3x{top}x{top}"), format!("{c}x{h}x{w}")));
        }
        if self.kind == ModelKind::Dcgan {
            return Ok(vec![batch.clone()]);
        }
        let pyr = real_pyramid(batch, self.levels(), self.spec.interpolation)?;
        Ok((0..self.levels())
            .map(|k| match self.input_kind(k) {
                InputKind::Residual => pyr.residual_f32(k).expect("upper level"),
                InputKind::Image => pyr.image(k).clone(),
            })
            .collect())
    }

    /// All level images for `noise`, using running batch-norm statistics.
    pub fn sample_levels(&self, noise: &Noise) -> Result<Vec<Tensor>> {
        let mut s = Session::new(&self.store, Mode::Eval, &[]);
        let out = self.generate(&mut s, noise)?;
        Ok(out.images.iter().map(|&v| s.graph.value(v).clone()).collect())
    }

    pub fn sample(&self, noise: &Noise) -> Result<Tensor> {
        Ok(self.sample_levels(noise)?.pop().expect("at least one level"))
    }

    /// `n` top-level samples, generated in chunks; the noise is drawn up
    /// front so the result does not depend on the chunk size.
    pub fn sample_n(&self, n: usize, rng: &mut Rng, chunk: usize) -> Result<Tensor> {
        if n == 0 {
            return Err(Error::EmptyBatch("sample_n"));
        }
        let noise = self.sample_noise(n, rng);
        let chunk = chunk.max(1);
        let parts = (0..n)
            .step_by(chunk)
            .map(|start| self.sample(&noise.slice(start, (start + chunk).min(n))?))
            .collect::<Result<Vec<_>>>()?;
        Tensor::stack_outer(&parts)
    }

    pub fn param_count(&self) -> ParamCounts {
        let generator = self.store.param_count("g.");
        let discriminators = self.store.param_count("d");
        ParamCounts {
            generator,
            discriminators,
            total: generator + discriminators,
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::from_store(self.spec.header(self.kind), &self.store)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let (kind, spec) = PyramidSpec::from_header(ck)?;
        let mut model = Self::build(kind, &spec, 0)?;
        ck.restore_into(&mut model.store)?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(base: usize, levels: usize) -> PyramidSpec {
        PyramidSpec {
            base_resolution: base,
            levels,
            ..PyramidSpec::default()
        }
    }

    #[test]
    fn dcgan_shape_and_range() {
        let s = PyramidSpec {
            base_resolution: 64,
            levels: 1,
            ..PyramidSpec::default()
        };
        let m = build_dcgan(&s, 1).unwrap();
        let noise = m.sample_noise(8, &mut Rng::new(2));
        let out = m.sample(&noise).unwrap();
        assert_eq!(out.shape(), &[8, 3, 64, 64]);
        let (lo, hi) = out.min_max();
        assert!(lo >= -1.0 && hi <= 1.0);
        assert_eq!(s.z_dim, 64);
    }

    #[test]
    fn shape_ladder_for_every_kind() {
        for kind in ModelKind::ALL {
            let m = GanModel::build(kind, &spec(8, 3), 3).unwrap();
            let noise = m.sample_noise(2, &mut Rng::new(4));
            let levels = m.sample_levels(&noise).unwrap();
            let want: Vec<usize> = if kind == ModelKind::Dcgan { vec![32] } else { vec![8, 16, 32] };
            let got: Vec<usize> = levels.iter().map(|t| t.shape()[2]).collect();
            assert_eq!(got, want, "{kind}");
            for t in &levels {
                assert_eq!(t.shape()[1], 3);
                let (lo, hi) = t.min_max();
                assert!(lo >= -1.0 && hi <= 1.0, "{kind}");
            }
        }
    }

    #[test]
    fn rejects_bad_resolutions() {
        for base in [4, 12, 0] {
            assert!(matches!(build_lapgan(&spec(base, 2), 0), Err(Error::Config(_))));
        }
        assert!(build_lapgan(&spec(16, 1), 0).is_err());
    }

    #[test]
    fn build_is_deterministic() {
        let a = build_lapgan(&spec(8, 2), 5).unwrap().to_checkpoint().encode().unwrap();
        let b = build_lapgan(&spec(8, 2), 5).unwrap().to_checkpoint().encode().unwrap();
        let c = build_lapgan(&spec(8, 2), 6).unwrap().to_checkpoint().encode().unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn zero_residual_blocks_reduce_to_upsampling() {
        let mut m = build_lapgan(&spec(8, 3), 7).unwrap();
        for k in 1..3 {
            m.store.zero_params(&format!("g.{k}."));
        }
        let noise = m.sample_noise(2, &mut Rng::new(1));
        let levels = m.sample_levels(&noise).unwrap();
        let up = graph_up(&graph_up(&levels[0]));
        assert_eq!(levels[2].data(), up.data());
    }

    fn graph_up(t: &Tensor) -> Tensor {
        crate::graph::upsample_nearest(t, 2).unwrap()
    }

    #[test]
    fn checkpoint_header_round_trips_spec() {
        let m = build_ddgan(&spec(8, 2), UpsampleMode::Deconv, 9).unwrap();
        let ck = Checkpoint::decode(&m.to_checkpoint().encode().unwrap()).unwrap();
        let back = GanModel::from_checkpoint(&ck).unwrap();
        assert_eq!(back.kind, ModelKind::DdganDeconv);
        assert_eq!(back.spec, m.spec);
        assert_eq!(back.to_checkpoint(), m.to_checkpoint());
    }

    #[test]
    fn discriminator_rejects_wrong_resolution() {
        let m = build_lapgan(&spec(8, 2), 0).unwrap();
        let mut s = Session::new(&m.store, Mode::Train, &[]);
        let x = s.input(Tensor::zeros([1, 3, 8, 8]));
        assert!(m.discriminate(&mut s, 1, x, LossKind::LeastSquares).is_err());
        assert!(m.discriminate(&mut s, 0, x, LossKind::LeastSquares).is_ok());
    }
}
