use std::fmt;
use std::str::FromStr;

use crate::data::AugmentConfig;
use crate::error::{Error, Result};
use crate::geometry::KernelShape;
use crate::graph::PyramidSpec;
use crate::kv::KvDocument;
use crate::ops::InterpWeights;

/// Default depthwise multiplier when a SPH3D spec omits it.
pub const DEFAULT_MULTIPLIER: usize = 2;
/// Default neighbor cap.
pub const DEFAULT_CAP: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Classification,
    Segmentation,
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "classification" => Ok(Task::Classification),
            "segmentation" => Ok(Task::Segmentation),
            other => Err(Error::invalid(format!("unknown task `{other}`"))),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Classification => "classification",
            Task::Segmentation => "segmentation",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerKind {
    /// Per-vertex linear map, batch norm, ELU.
    Mlp { in_channels: usize, out_channels: usize },
    /// Depthwise spherical convolution, pointwise mix, batch norm, ELU.
    Sph3d {
        in_channels: usize,
        out_channels: usize,
        multiplier: usize,
    },
    /// [`LayerKind::Sph3d`] evaluated once at the cloud centroid.
    GSph3d {
        in_channels: usize,
        out_channels: usize,
        multiplier: usize,
    },
    PoolMax,
    PoolAvg,
    UnpoolUniform,
    UnpoolWeighted(InterpWeights),
    /// Linear map; batch norm and ELU unless it is the last layer.
    Fc { in_channels: usize, out_channels: usize },
    /// Append the output of an earlier layer at the same level.
    ConcatSkip { source: String },
    /// Prepend the global max over each named earlier layer's output.
    GlobalMaxConcat { sources: Vec<String> },
}

impl LayerKind {
    pub fn tag(&self) -> &'static str {
        match self {
            LayerKind::Mlp { .. } => "MLP",
            LayerKind::Sph3d { .. } => "SPH3D",
            LayerKind::GSph3d { .. } => "GSPH3D",
            LayerKind::PoolMax => "POOL_MAX",
            LayerKind::PoolAvg => "POOL_AVG",
            LayerKind::UnpoolUniform => "UNPOOL_UNIFORM",
            LayerKind::UnpoolWeighted(_) => "UNPOOL_WEIGHTED",
            LayerKind::Fc { .. } => "FC",
            LayerKind::ConcatSkip { .. } => "CONCAT_SKIP",
            LayerKind::GlobalMaxConcat { .. } => "GLOBAL_MAX_CONCAT",
        }
    }

    /// Declared `(in, out)` widths for layers that carry them.
    pub fn widths(&self) -> Option<(usize, usize)> {
        match *self {
            LayerKind::Mlp {
                in_channels,
                out_channels,
            }
            | LayerKind::Fc {
                in_channels,
                out_channels,
            }
            | LayerKind::Sph3d {
                in_channels,
                out_channels,
                ..
            }
            | LayerKind::GSph3d {
                in_channels,
                out_channels,
                ..
            } => Some((in_channels, out_channels)),
            _ => None,
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = self.tag();
        match self {
            LayerKind::Mlp {
                in_channels,
                out_channels,
            }
            | LayerKind::Fc {
                in_channels,
                out_channels,
            } => write!(f, "{tag}({in_channels},{out_channels})"),
            LayerKind::Sph3d {
                in_channels,
                out_channels,
                multiplier,
            }
            | LayerKind::GSph3d {
                in_channels,
                out_channels,
                multiplier,
            } => write!(f, "{tag}({in_channels},{out_channels},{multiplier})"),
            LayerKind::UnpoolWeighted(InterpWeights::InverseDistance) => {
                write!(f, "{tag}(inverse)")
            }
            LayerKind::ConcatSkip { source } => write!(f, "{tag}({source})"),
            LayerKind::GlobalMaxConcat { sources } => write!(f, "{tag}({})", sources.join(",")),
            _ => f.write_str(tag),
        }
    }
}

impl FromStr for LayerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (head, args) = match s.find('(') {
            Some(open) => {
                let Some(body) = s[open + 1..].strip_suffix(')') else {
                    return Err(Error::invalid(format!("unbalanced parentheses in `{s}`")));
                };
                let args: Vec<&str> = body.split(',').map(str::trim).filter(|a| !a.is_empty()).collect();
                (s[..open].trim(), args)
            }
            None => (s, Vec::new()),
        };
        let head = head.to_ascii_uppercase().replace('-', "");
        let ints = |min: usize, max: usize| -> Result<Vec<usize>> {
            if args.len() < min || args.len() > max {
                return Err(Error::invalid(format!(
                    "`{s}` takes {min}{} integer arguments",
                    if max > min { format!("-{max}") } else { String::new() }
                )));
            }
            args.iter()
                .map(|a| match a.parse::<usize>() {
                    Ok(v) if v > 0 => Ok(v),
                    _ => Err(Error::invalid(format!("`{a}` in `{s}` is not a positive integer"))),
                })
                .collect()
        };
        let none = || {
            if args.is_empty() {
                Ok(())
            } else {
                Err(Error::invalid(format!("`{head}` takes no arguments")))
            }
        };
        Ok(match head.as_str() {
            "MLP" => {
                let v = ints(2, 2)?;
                LayerKind::Mlp {
                    in_channels: v[0],
                    out_channels: v[1],
                }
            }
            "FC" => {
                let v = ints(2, 2)?;
                LayerKind::Fc {
                    in_channels: v[0],
                    out_channels: v[1],
                }
            }
            "SPH3D" | "GSPH3D" => {
                let v = ints(2, 3)?;
                let (in_channels, out_channels) = (v[0], v[1]);
                let multiplier = v.get(2).copied().unwrap_or(DEFAULT_MULTIPLIER);
                if head == "SPH3D" {
                    LayerKind::Sph3d {
                        in_channels,
                        out_channels,
                        multiplier,
                    }
                } else {
                    LayerKind::GSph3d {
                        in_channels,
                        out_channels,
                        multiplier,
                    }
                }
            }
            "POOL_MAX" => none().map(|_| LayerKind::PoolMax)?,
            "POOL_AVG" => none().map(|_| LayerKind::PoolAvg)?,
            "UNPOOL_UNIFORM" => none().map(|_| LayerKind::UnpoolUniform)?,
            "UNPOOL_WEIGHTED" => match args.as_slice() {
                [] | ["distance"] => LayerKind::UnpoolWeighted(InterpWeights::Distance),
                ["inverse"] => LayerKind::UnpoolWeighted(InterpWeights::InverseDistance),
                _ => return Err(Error::invalid(format!("`{s}`: weighting is `distance` or `inverse`"))),
            },
            "CONCAT_SKIP" => match args.as_slice() {
                [source] => LayerKind::ConcatSkip {
                    source: source.to_string(),
                },
                _ => return Err(Error::invalid(format!("`{s}` takes one layer name"))),
            },
            "GLOBAL_MAX_CONCAT" => {
                if args.is_empty() {
                    return Err(Error::invalid(format!("`{s}` needs at least one layer name")));
                }
                LayerKind::GlobalMaxConcat {
                    sources: args.iter().map(|a| a.to_string()).collect(),
                }
            }
            _ => return Err(Error::invalid(format!("unknown layer kind `{head}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerConfig {
    pub name: String,
    pub kind: LayerKind,
}

impl LayerConfig {
    pub fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        Self {
            name: name.into(),
            kind,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub task: Task,
    pub classes: usize,
    /// Per-vertex input width: 3 for coordinates, 6 with colors.
    pub input_channels: usize,
    pub pyramid: PyramidSpec,
    /// `(n, p)` of the global `n x p x 1` kernel.
    pub global_kernel: (usize, usize),
    pub layers: Vec<LayerConfig>,
}

pub const NETWORK_KEYS: &[&str] = &["task", "classes", "input_channels", "global_kernel"];
pub const PYRAMID_KEYS: &[&str] =
    &["level_sizes", "radii", "unpool_radii", "cap", "kernel", "radial_fractions"];

fn dims<const N: usize>(doc: &KvDocument, section: &str, key: &str) -> Result<Option<[usize; N]>> {
    let Some(e) = doc.get(section, key) else {
        return Ok(None);
    };
    let parts: Vec<&str> = e.value.split(['x', 'X']).map(str::trim).collect();
    let vals: Option<Vec<usize>> = parts.iter().map(|p| p.parse().ok()).collect();
    match vals {
        Some(v) if v.len() == N => Ok(Some(v.try_into().expect("length checked"))),
        _ => Err(doc.error(section, key, format!("expected {N} sizes like `8x2x2`, got `{}`", e.value))),
    }
}

impl NetworkConfig {
    /// Read the `network`, `pyramid` and `layer` sections. Other sections
    /// are left to the caller.
    pub fn from_kv(doc: &KvDocument) -> Result<Self> {
        let task: Task = doc.required("network", "task")?;
        let classes: usize = doc.required("network", "classes")?;
        let input_channels = doc.value_or("network", "input_channels", 3usize)?;
        let global_kernel = dims::<2>(doc, "network", "global_kernel")?.unwrap_or([8, 2]);

        let level_sizes: Vec<usize> = doc
            .list("pyramid", "level_sizes")?
            .ok_or_else(|| doc.error("pyramid", "level_sizes", "required key is missing"))?;
        let radii: Vec<f64> = doc
            .list("pyramid", "radii")?
            .ok_or_else(|| doc.error("pyramid", "radii", "required key is missing"))?;
        let unpool_radii: Vec<f64> = match doc.list("pyramid", "unpool_radii")? {
            Some(r) => r,
            None => radii.iter().skip(1).copied().collect(),
        };
        let [n, p, q] = dims::<3>(doc, "pyramid", "kernel")?.unwrap_or([8, 2, 2]);
        let kernel = KernelShape {
            n,
            p,
            q,
            radial_fractions: doc.list("pyramid", "radial_fractions")?,
        };
        let pyramid = PyramidSpec {
            level_sizes,
            radii,
            unpool_radii,
            cap: doc.value_or("pyramid", "cap", DEFAULT_CAP)?,
            kernel,
        };
        pyramid
            .validate()
            .map_err(|e| doc.error("pyramid", "level_sizes", e.to_string()))?;

        let mut layers = Vec::new();
        for e in doc.section("layer") {
            let kind = e
                .value
                .parse::<LayerKind>()
                .map_err(|err| doc.error("layer", &e.key, err.to_string()))?;
            layers.push(LayerConfig::new(e.key.clone(), kind));
        }
        let cfg = Self {
            task,
            classes,
            input_channels,
            pyramid,
            global_kernel: (global_kernel[0], global_kernel[1]),
            layers,
        };
        cfg.check_scalars()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let doc = KvDocument::parse(text, "<network>")?;
        doc.check_known(&[
            ("network", Some(NETWORK_KEYS)),
            ("pyramid", Some(PYRAMID_KEYS)),
            ("layer", None),
        ])?;
        Self::from_kv(&doc)
    }

    fn check_scalars(&self) -> Result<()> {
        if self.classes == 0 {
            return Err(Error::config("network.classes", "must be at least 1"));
        }
        if self.input_channels == 0 {
            return Err(Error::config("network.input_channels", "must be at least 1"));
        }
        if self.layers.is_empty() {
            return Err(Error::config("layer", "the layer list is empty"));
        }
        Ok(())
    }

    /// Text form accepted by [`NetworkConfig::parse`]; reals print exactly.
    pub fn to_text(&self) -> String {
        let join_f = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ");
        let mut s = String::new();
        s.push_str(&format!("network.task = {}\n", self.task));
        s.push_str(&format!("network.classes = {}\n", self.classes));
        s.push_str(&format!("network.input_channels = {}\n", self.input_channels));
        s.push_str(&format!(
            "network.global_kernel = {}x{}\n",
            self.global_kernel.0, self.global_kernel.1
        ));
        let p = &self.pyramid;
        s.push_str(&format!(
            "pyramid.level_sizes = {}\n",
            p.level_sizes.iter().map(usize::to_string).collect::<Vec<_>>().join(", ")
        ));
        s.push_str(&format!("pyramid.radii = {}\n", join_f(&p.radii)));
        if !p.unpool_radii.is_empty() {
            s.push_str(&format!("pyramid.unpool_radii = {}\n", join_f(&p.unpool_radii)));
        }
        s.push_str(&format!("pyramid.cap = {}\n", p.cap));
        s.push_str(&format!("pyramid.kernel = {}x{}x{}\n", p.kernel.n, p.kernel.p, p.kernel.q));
        if let Some(f) = &p.kernel.radial_fractions {
            s.push_str(&format!("pyramid.radial_fractions = {}\n", join_f(f)));
        }
        for l in &self.layers {
            s.push_str(&format!("layer.{} = {}\n", l.name, l.kind));
        }
        s
    }
}

/// Optimizer and schedule settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Multiply the rate by `lr_decay` every `lr_decay_every` epochs; 1 keeps
    /// it constant.
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub weight_decay: f64,
    /// Dropout rate on hidden fully connected layers.
    pub dropout: f64,
    /// `None` trains on the clouds as given.
    pub augment: Option<AugmentConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 8,
            epochs: 30,
            seed: 0,
            lr_decay: 1.0,
            lr_decay_every: 1,
            weight_decay: 0.0,
            dropout: 0.0,
            augment: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(format!("train.{name}"), format!("must be positive, got {v}")))
            }
        };
        positive("learning_rate", self.learning_rate)?;
        positive("epsilon", self.epsilon)?;
        positive("lr_decay", self.lr_decay)?;
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::config(format!("train.{name}"), format!("must lie in (0, 1), got {b}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::config("train.epochs", "must be at least 1"));
        }
        if self.lr_decay_every == 0 {
            return Err(Error::config("train.lr_decay_every", "must be at least 1"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::config("train.weight_decay", "must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("train.dropout", "must lie in [0, 1)"));
        }
        if let Some(a) = &self.augment {
            a.validate().map_err(|e| Error::config("augment", e.to_string()))?;
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi((epoch / self.lr_decay_every) as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_grammar_round_trips() {
        for s in [
            "MLP(3,16)",
            "SPH3D(16,32,1)",
            "GSPH3D(32,128,2)",
            "POOL_MAX",
            "POOL_AVG",
            "UNPOOL_UNIFORM",
            "UNPOOL_WEIGHTED",
            "UNPOOL_WEIGHTED(inverse)",
            "FC(64,3)",
            "CONCAT_SKIP(enc1b)",
            "GLOBAL_MAX_CONCAT(enc1b,enc2b)",
        ] {
            let k: LayerKind = s.parse().unwrap();
            assert_eq!(k.to_string(), s);
        }
        let k: LayerKind = "SPH3D(64, 64)".parse().unwrap();
        assert_eq!(
            k,
            LayerKind::Sph3d {
                in_channels: 64,
                out_channels: 64,
                multiplier: 2
            }
        );
        assert!("G-SPH3D(128,512)".parse::<LayerKind>().is_ok());
        assert!("CONV(3,4)".parse::<LayerKind>().is_err());
        assert!("MLP(3)".parse::<LayerKind>().is_err());
        assert!("MLP(0,3)".parse::<LayerKind>().is_err());
    }

    const TEXT: &str = "network.task = classification
network.classes = 3
pyramid.level_sizes = 64, 16
pyramid.radii = 0.3, 0.7
pyramid.cap = 16
layer.mlp1 = MLP(3,8)
layer.conv = SPH3D(8,8)
layer.pool = POOL_MAX
layer.glob = GSPH3D(8,16)
layer.out = FC(16,3)
";

    #[test]
    fn network_text_round_trips() {
        let cfg = NetworkConfig::parse(TEXT).unwrap();
        assert_eq!(cfg.pyramid.unpool_radii, vec![0.7]);
        assert_eq!(cfg.global_kernel, (8, 2));
        assert_eq!(cfg.layers[1].name, "conv");
        let again = NetworkConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn empty_layers_rejected() {
        let text: String = TEXT.lines().filter(|l| !l.starts_with("layer")).map(|l| format!("{l}\n")).collect();
        assert!(NetworkConfig::parse(&text).unwrap_err().is_config());
    }

    #[test]
    fn train_config_checks() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            beta2: 1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().unwrap_err().is_config());
        let decay = TrainConfig {
            lr_decay: 0.5,
            lr_decay_every: 2,
            ..TrainConfig::default()
        };
        assert_eq!(decay.rate_at(3), 0.0005);
    }
}
