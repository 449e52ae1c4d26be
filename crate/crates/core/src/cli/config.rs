use std::path::{Path, PathBuf};

use crate::data::{gen_rockets, gen_shapes, load_xyz, AugmentConfig, LabeledCloud, Labels, ShapeKind};
use crate::error::{Error, Result};
use crate::kv::KvDocument;
use crate::network::{NetworkConfig, Task, TrainConfig};
use crate::network::presets;
use crate::seed::derive_seed;

const TRAIN_KEYS: &[&str] = &[
    "learning_rate",
    "beta1",
    "beta2",
    "epsilon",
    "batch_size",
    "epochs",
    "lr_decay",
    "lr_decay_every",
    "weight_decay",
    "dropout",
];
const AUGMENT_KEYS: &[&str] = &[
    "enabled",
    "drop_fraction_max",
    "azimuth_max",
    "perturbation_max",
    "scale_range",
    "shift_max",
    "jitter_sigma",
];
const DATA_KEYS: &[&str] = &["source", "classes", "points", "train_count", "test_count", "train_files", "test_files"];
const OUTPUT_KEYS: &[&str] = &["dir", "checkpoint", "metrics", "log"];
const BENCH_KEYS: &[&str] = &["sizes", "runs", "warmup"];
const RUN_KEYS: &[&str] = &["seed", "threads", "preset"];

/// A cloud file with an optional whole-cloud class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileSpec {
    pub path: PathBuf,
    pub class: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataSource {
    /// Classification over generated primitives, labeled in list order.
    Shapes(Vec<ShapeKind>),
    /// Two-part rocket segmentation.
    Rockets,
    Files { train: Vec<FileSpec>, test: Vec<FileSpec> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataConfig {
    pub source: DataSource,
    pub points: usize,
    /// Per class for shapes, in total for rockets.
    pub train_count: usize,
    pub test_count: usize,
}

impl DataConfig {
    /// Training and test clouds; generated sets derive their seeds from `seed`.
    pub fn load(&self, seed: u64) -> Result<(Vec<LabeledCloud>, Vec<LabeledCloud>)> {
        match &self.source {
            DataSource::Shapes(kinds) => Ok((
                gen_shapes(kinds, self.points, self.train_count, derive_seed(seed, &[1]))?,
                gen_shapes(kinds, self.points, self.test_count, derive_seed(seed, &[2]))?,
            )),
            DataSource::Rockets => Ok((
                gen_rockets(self.points, self.train_count, derive_seed(seed, &[1]))?,
                gen_rockets(self.points, self.test_count, derive_seed(seed, &[2]))?,
            )),
            DataSource::Files { train, test } => Ok((load_files(train)?, load_files(test)?)),
        }
    }
}

pub fn load_files(files: &[FileSpec]) -> Result<Vec<LabeledCloud>> {
    files
        .iter()
        .map(|f| {
            let mut c = load_xyz(&f.path)?;
            if let Some(k) = f.class {
                c.labels = Labels::Cloud(k);
            }
            Ok(c)
        })
        .collect()
}

/// `path[:class]` entries relative to `base`.
pub fn parse_file_specs(list: &[String], base: &Path) -> Result<Vec<FileSpec>> {
    list.iter()
        .map(|s| {
            let (path, class) = match s.rsplit_once(':') {
                Some((p, c)) if c.chars().all(|ch| ch.is_ascii_digit()) && !c.is_empty() => {
                    (p, Some(c.parse().expect("digits")))
                }
                _ => (s.as_str(), None),
            };
            let p = PathBuf::from(path);
            Ok(FileSpec {
                path: if p.is_absolute() { p } else { base.join(p) },
                class,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub checkpoint: String,
    pub metrics: String,
    pub log: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub runs: usize,
    pub warmup: usize,
}

/// Everything a command needs, validated before any compute.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub network: Option<NetworkConfig>,
    pub train: TrainConfig,
    pub data: Option<DataConfig>,
    pub output: OutputConfig,
    pub bench: BenchConfig,
    pub seed: u64,
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_doc(&KvDocument::load(path)?)
    }

    pub fn parse(text: &str, path: impl AsRef<Path>) -> Result<Self> {
        Self::from_doc(&KvDocument::parse(text, path)?)
    }

    pub fn from_doc(doc: &KvDocument) -> Result<Self> {
        use crate::network::config_keys::{NETWORK_KEYS, PYRAMID_KEYS};
        doc.check_known(&[
            ("run", Some(RUN_KEYS)),
            ("network", Some(NETWORK_KEYS)),
            ("pyramid", Some(PYRAMID_KEYS)),
            ("layer", None),
            ("train", Some(TRAIN_KEYS)),
            ("augment", Some(AUGMENT_KEYS)),
            ("data", Some(DATA_KEYS)),
            ("output", Some(OUTPUT_KEYS)),
            ("bench", Some(BENCH_KEYS)),
        ])?;
        let base = doc.path().parent().map(Path::to_path_buf).unwrap_or_default();
        let seed = doc.value_or("run", "seed", 0u64)?;
        let threads: Option<usize> = doc.parse_value("run", "threads")?;
        if threads == Some(0) {
            return Err(doc.error("run", "threads", "must be at least 1"));
        }

        let network = match doc.get("run", "preset") {
            Some(e) => {
                if doc.section("layer").next().is_some() || doc.section("pyramid").next().is_some() {
                    return Err(doc.error("run", "preset", "a preset cannot be combined with layer or pyramid keys"));
                }
                let classes: usize = doc.required("network", "classes")?;
                let cfg = match e.value.as_str() {
                    "classification" => presets::classification(classes),
                    "segmentation" => presets::segmentation(classes),
                    other => return Err(doc.error("run", "preset", format!("unknown preset `{other}`"))),
                };
                Some(cfg.map_err(|err| doc.error("run", "preset", err.to_string()))?)
            }
            None if doc.section("network").next().is_some() || doc.section("layer").next().is_some() => {
                Some(NetworkConfig::from_kv(doc)?)
            }
            None => None,
        };

        let d = TrainConfig::default();
        let augment = if doc.bool_or("augment", "enabled", false)? {
            let a = AugmentConfig::default();
            let scale = match doc.list::<f64>("augment", "scale_range")? {
                None => a.scale_range,
                Some(v) if v.len() == 2 => (v[0], v[1]),
                Some(_) => return Err(doc.error("augment", "scale_range", "expected `low, high`")),
            };
            let cfg = AugmentConfig {
                drop_fraction_max: doc.value_or("augment", "drop_fraction_max", a.drop_fraction_max)?,
                azimuth_max: doc.value_or("augment", "azimuth_max", a.azimuth_max)?,
                perturbation_max: doc.value_or("augment", "perturbation_max", a.perturbation_max)?,
                scale_range: scale,
                shift_max: doc.value_or("augment", "shift_max", a.shift_max)?,
                jitter_sigma: doc.value_or("augment", "jitter_sigma", a.jitter_sigma)?,
            };
            cfg.validate().map_err(|e| doc.error("augment", "enabled", e.to_string()))?;
            Some(cfg)
        } else {
            None
        };
        let train = TrainConfig {
            learning_rate: doc.value_or("train", "learning_rate", d.learning_rate)?,
            beta1: doc.value_or("train", "beta1", d.beta1)?,
            beta2: doc.value_or("train", "beta2", d.beta2)?,
            epsilon: doc.value_or("train", "epsilon", d.epsilon)?,
            batch_size: doc.value_or("train", "batch_size", d.batch_size)?,
            epochs: doc.value_or("train", "epochs", d.epochs)?,
            seed: derive_seed(seed, &[4]),
            lr_decay: doc.value_or("train", "lr_decay", d.lr_decay)?,
            lr_decay_every: doc.value_or("train", "lr_decay_every", d.lr_decay_every)?,
            weight_decay: doc.value_or("train", "weight_decay", d.weight_decay)?,
            dropout: doc.value_or("train", "dropout", d.dropout)?,
            augment,
        };
        train.validate()?;

        let data = if doc.section("data").next().is_some() {
            let source: String = doc.required("data", "source")?;
            let source = match source.as_str() {
                "shapes" => {
                    let names: Vec<String> = doc
                        .list("data", "classes")?
                        .ok_or_else(|| doc.error("data", "classes", "required for generated shapes"))?;
                    let kinds = names
                        .iter()
                        .map(|n| n.parse::<ShapeKind>().map_err(|e| doc.error("data", "classes", e.to_string())))
                        .collect::<Result<Vec<_>>>()?;
                    if kinds.contains(&ShapeKind::Rocket) {
                        return Err(doc.error("data", "classes", "rockets are a segmentation source"));
                    }
                    DataSource::Shapes(kinds)
                }
                "rockets" => DataSource::Rockets,
                "files" => {
                    let list = |key: &str| -> Result<Vec<FileSpec>> {
                        let l: Vec<String> = doc
                            .list("data", key)?
                            .ok_or_else(|| doc.error("data", key, "required for file data"))?;
                        parse_file_specs(&l, &base)
                    };
                    DataSource::Files {
                        train: list("train_files")?,
                        test: list("test_files")?,
                    }
                }
                other => return Err(doc.error("data", "source", format!("unknown source `{other}`"))),
            };
            let points = doc.value_or("data", "points", 512usize)?;
            if points < crate::data::MIN_POINTS {
                return Err(doc.error("data", "points", format!("must be at least {}", crate::data::MIN_POINTS)));
            }
            let cfg = DataConfig {
                source,
                points,
                train_count: doc.value_or("data", "train_count", 100usize)?,
                test_count: doc.value_or("data", "test_count", 50usize)?,
            };
            if cfg.train_count == 0 || cfg.test_count == 0 {
                return Err(doc.error("data", "train_count", "sample counts must be positive"));
            }
            Some(cfg)
        } else {
            None
        };

        if let (Some(net), Some(data)) = (&network, &data) {
            match &data.source {
                DataSource::Shapes(kinds) => {
                    if net.task != Task::Classification || net.classes != kinds.len() {
                        return Err(doc.error(
                            "data",
                            "classes",
                            format!("{} shape classes need a {}-class classification network", kinds.len(), kinds.len()),
                        ));
                    }
                }
                DataSource::Rockets => {
                    if net.task != Task::Segmentation || net.classes != 2 {
                        return Err(doc.error("data", "source", "rockets need a 2-class segmentation network"));
                    }
                }
                DataSource::Files { .. } => {}
            }
        }

        let output = OutputConfig {
            dir: doc
                .parse_value::<String>("output", "dir")?
                .map(|d| base.join(d))
                .unwrap_or_else(|| PathBuf::from("out")),
            checkpoint: doc.value_or("output", "checkpoint", "model.ckpt".to_string())?,
            metrics: doc.value_or("output", "metrics", "metrics.csv".to_string())?,
            log: doc.value_or("output", "log", "train.log".to_string())?,
        };
        let bench = BenchConfig {
            sizes: doc.list("bench", "sizes")?.unwrap_or_else(|| vec![512, 2048, 8192]),
            runs: doc.value_or("bench", "runs", 5usize)?,
            warmup: doc.value_or("bench", "warmup", 1usize)?,
        };
        if bench.runs < 5 {
            return Err(doc.error("bench", "runs", "at least 5 timed runs are required"));
        }
        if bench.sizes.is_empty() || bench.sizes.iter().any(|&s| s < crate::data::MIN_POINTS) {
            return Err(doc.error("bench", "sizes", format!("sizes must be at least {}", crate::data::MIN_POINTS)));
        }
        Ok(RunConfig {
            network,
            train,
            data,
            output,
            bench,
            seed,
            threads,
        })
    }

    /// Override the global seed and everything derived from it.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.train.seed = derive_seed(seed, &[4]);
        self
    }

    pub fn network(&self) -> Result<&NetworkConfig> {
        self.network
            .as_ref()
            .ok_or_else(|| Error::config("network", "the config defines no network"))
    }

    pub fn data(&self) -> Result<&DataConfig> {
        self.data
            .as_ref()
            .ok_or_else(|| Error::config("data", "the config defines no data section"))
    }

    pub fn network_seed(&self) -> u64 {
        derive_seed(self.seed, &[3])
    }
}
