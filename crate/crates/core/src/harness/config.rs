//! Flat `key = value` experiment files.
//!
//! One key per line, `#` starts a comment, blank lines are ignored. Every
//! key is optional; missing keys take the defaults listed in [`KEYS`].
//! Relative paths resolve against the directory holding the file, except
//! `output_dir`, which resolves against `FEDLDR_OUTPUT_ROOT` when that
//! variable is set.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::datakit::SyntheticSpec;
use crate::error::{Error, Result};
use crate::federation::StrategyKind;
use crate::stgcn::Architecture;
use crate::trainer::TrainConfig;

pub const OUTPUT_ROOT_ENV: &str = "FEDLDR_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic,
    Csv(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataSource,
    /// Used when `data` is synthetic.
    pub synthetic: SyntheticSpec,
    /// Train and validation fractions; test takes the rest.
    pub train_frac: f64,
    pub val_frac: f64,
    pub strategy: StrategyKind,
    pub clients: usize,
    pub rounds: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub rho: f64,
    pub server_lr: f64,
    /// `in_features`/`out_features` are taken from the data.
    pub arch: Architecture,
    /// `seed` is ignored here; clients derive theirs from the master seed.
    pub train: TrainConfig,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Write wall-clock seconds into `metrics.csv` (breaks byte-identical reruns).
    pub record_seconds: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataSource::Synthetic,
            synthetic: SyntheticSpec::default(),
            train_frac: 0.7,
            val_frac: 0.15,
            strategy: StrategyKind::FedLdr,
            clients: 2,
            rounds: 50,
            patience: 5,
            min_delta: 1e-4,
            rho: 0.5,
            server_lr: 0.01,
            arch: Architecture::default(),
            train: TrainConfig::default(),
            seed: 0,
            output_dir: PathBuf::from("out"),
            record_seconds: false,
        }
    }
}

/// Every recognized key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("data", "`synthetic` or `csv`"),
    ("data_path", "CSV file, required when data = csv"),
    ("train_frac", "fraction of timesteps for training"),
    ("val_frac", "fraction of timesteps for validation"),
    ("synthetic_nodes", "sensor count N"),
    ("synthetic_steps", "timesteps kept after burn-in"),
    ("synthetic_seed", "generator seed"),
    ("synthetic_noise", "noise standard deviation"),
    ("synthetic_offset_scale", "spread of per-node offsets"),
    ("synthetic_base_level", "smallest per-node offset"),
    ("synthetic_amplitude", "seasonal amplitude"),
    ("synthetic_period", "seasonal period in steps"),
    ("synthetic_phase_spread", "per-node phases drawn from [0, spread)"),
    ("synthetic_coupling", "weight of the hidden graph term"),
    ("synthetic_shortcuts", "random extra edges"),
    ("synthetic_burn_in", "discarded warm-up steps"),
    ("synthetic_interval", "seconds between timestamps"),
    ("strategy", "FED_LDR, FEDAVG, FEDMEDIAN, FEDOPT, FEDAVG_LDR, FEDMEDIAN_LDR, FEDOPT_LDR, LOCAL_ONLY"),
    ("clients", "number of clients K"),
    ("rounds", "maximum federated rounds"),
    ("patience", "rounds without validation improvement before stopping"),
    ("min_delta", "smallest validation MAE drop that counts as improvement"),
    ("rho", "Fed-LDR embedding blend weight"),
    ("server_lr", "FedOpt server learning rate"),
    ("history", "input window T"),
    ("horizon", "forecast horizon"),
    ("embed_dim", "adjacency embedding width d"),
    ("pool_dim", "weight-pool embedding width d'"),
    ("hidden", "hidden layer width H"),
    ("layers", "graph convolution layers L"),
    ("local_epochs", "local epochs E per round"),
    ("batch_size", "windows per mini-batch"),
    ("lr", "Adam learning rate"),
    ("mu", "proximal coefficient"),
    ("beta1", "Adam first-moment decay"),
    ("beta2", "Adam second-moment decay"),
    ("eps", "Adam epsilon"),
    ("clip_norm", "global gradient norm limit"),
    ("max_steps", "optimizer step cap per local run, or `none`"),
    ("seed", "master seed"),
    ("output_dir", "directory for artifacts"),
    ("record_seconds", "write wall-clock seconds into metrics.csv"),
];

fn field_err(key: &str, message: impl std::fmt::Display) -> Error {
    Error::Config(format!("{key}: {message}"))
}

/// Raw `key -> (value, line)` pairs.
fn parse_pairs(text: &str) -> Result<BTreeMap<String, (String, usize)>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            location: format!("line {line_no}"),
            message: format!("expected `key = value`, got `{line}`"),
        })?;
        let key = k.trim().to_string();
        if !KEYS.iter().any(|(name, _)| *name == key) {
            return Err(Error::Parse {
                location: format!("line {line_no}"),
                message: format!("unknown key `{key}`"),
            });
        }
        if out.insert(key.clone(), (v.trim().to_string(), line_no)).is_some() {
            return Err(Error::Parse {
                location: format!("line {line_no}"),
                message: format!("duplicate key `{key}`"),
            });
        }
    }
    Ok(out)
}

struct Fields(BTreeMap<String, (String, usize)>);

impl Fields {
    fn get<T: FromStr>(&self, key: &str, slot: &mut T) -> Result<()>
    where
        T::Err: std::fmt::Display,
    {
        if let Some((v, line)) = self.0.get(key) {
            *slot = v
                .parse()
                .map_err(|e| field_err(key, format!("invalid value `{v}` on line {line} ({e})")))?;
        }
        Ok(())
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(|(v, _)| v.as_str())
    }
}

impl ExperimentConfig {
    /// Parses file contents. Paths are kept exactly as written.
    pub fn parse(text: &str) -> Result<Self> {
        let f = Fields(parse_pairs(text)?);
        let mut c = ExperimentConfig::default();
        let mut data = String::from("synthetic");
        f.get("data", &mut data)?;
        c.data = match data.to_ascii_lowercase().as_str() {
            "synthetic" => DataSource::Synthetic,
            "csv" => DataSource::Csv(PathBuf::from(
                f.raw("data_path")
                    .ok_or_else(|| field_err("data_path", "required when data = csv"))?,
            )),
            other => return Err(field_err("data", format!("unknown value `{other}` (expected synthetic or csv)"))),
        };
        f.get("train_frac", &mut c.train_frac)?;
        f.get("val_frac", &mut c.val_frac)?;

        let s = &mut c.synthetic;
        f.get("synthetic_nodes", &mut s.nodes)?;
        f.get("synthetic_steps", &mut s.steps)?;
        f.get("synthetic_seed", &mut s.seed)?;
        f.get("synthetic_noise", &mut s.noise)?;
        f.get("synthetic_offset_scale", &mut s.offset_scale)?;
        f.get("synthetic_base_level", &mut s.base_level)?;
        f.get("synthetic_amplitude", &mut s.amplitude)?;
        f.get("synthetic_period", &mut s.period)?;
        f.get("synthetic_phase_spread", &mut s.phase_spread)?;
        f.get("synthetic_coupling", &mut s.coupling)?;
        f.get("synthetic_shortcuts", &mut s.shortcuts)?;
        f.get("synthetic_burn_in", &mut s.burn_in)?;
        f.get("synthetic_interval", &mut s.interval)?;

        if let Some(v) = f.raw("strategy") {
            c.strategy = v.parse()?;
        }
        f.get("clients", &mut c.clients)?;
        f.get("rounds", &mut c.rounds)?;
        f.get("patience", &mut c.patience)?;
        f.get("min_delta", &mut c.min_delta)?;
        f.get("rho", &mut c.rho)?;
        f.get("server_lr", &mut c.server_lr)?;

        let a = &mut c.arch;
        f.get("history", &mut a.history)?;
        f.get("horizon", &mut a.horizon)?;
        f.get("embed_dim", &mut a.embed_dim)?;
        f.get("pool_dim", &mut a.pool_dim)?;
        f.get("hidden", &mut a.hidden)?;
        f.get("layers", &mut a.layers)?;

        let t = &mut c.train;
        f.get("local_epochs", &mut t.epochs)?;
        f.get("batch_size", &mut t.batch_size)?;
        f.get("lr", &mut t.lr)?;
        f.get("mu", &mut t.mu)?;
        f.get("beta1", &mut t.beta1)?;
        f.get("beta2", &mut t.beta2)?;
        f.get("eps", &mut t.eps)?;
        f.get("clip_norm", &mut t.clip_norm)?;
        if let Some(v) = f.raw("max_steps") {
            t.max_steps = if v.eq_ignore_ascii_case("none") {
                None
            } else {
                Some(v.parse().map_err(|e| field_err("max_steps", format!("invalid value `{v}` ({e})")))?)
            };
        }

        f.get("seed", &mut c.seed)?;
        if let Some(v) = f.raw("output_dir") {
            c.output_dir = PathBuf::from(v);
        }
        f.get("record_seconds", &mut c.record_seconds)?;
        c.validate()?;
        Ok(c)
    }

    /// Reads a file and resolves relative paths to absolute ones, so the
    /// `config.resolved` written from the result works from any directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let absolute = |p: PathBuf| std::path::absolute(&p).map_err(|e| Error::io(&p, e));
        if let DataSource::Csv(p) = &c.data {
            if p.is_relative() {
                c.data = DataSource::Csv(absolute(base.join(p))?);
            }
        }
        if c.output_dir.is_relative() {
            c.output_dir = absolute(match std::env::var_os(OUTPUT_ROOT_ENV) {
                Some(root) => PathBuf::from(root).join(&c.output_dir),
                None => base.join(&c.output_dir),
            })?;
        }
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("clients", self.clients),
            ("rounds", self.rounds),
            ("patience", self.patience),
            ("history", self.arch.history),
            ("horizon", self.arch.horizon),
            ("embed_dim", self.arch.embed_dim),
            ("pool_dim", self.arch.pool_dim),
            ("hidden", self.arch.hidden),
            ("layers", self.arch.layers),
            ("local_epochs", self.train.epochs),
            ("batch_size", self.train.batch_size),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(field_err(key, "must be at least 1"));
            }
        }
        let fr = (self.train_frac, self.val_frac);
        if !(fr.0 > 0.0 && fr.1 > 0.0 && fr.0 + fr.1 < 1.0) {
            return Err(field_err(
                "train_frac",
                format!("train_frac and val_frac must be positive with sum below 1, got {} and {}", fr.0, fr.1),
            ));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(field_err("rho", format!("must be in [0, 1], got {}", self.rho)));
        }
        if !(self.server_lr > 0.0 && self.server_lr.is_finite()) {
            return Err(field_err("server_lr", format!("must be positive, got {}", self.server_lr)));
        }
        if !(self.min_delta >= 0.0) {
            return Err(field_err("min_delta", format!("must be ≥ 0, got {}", self.min_delta)));
        }
        self.train.validate()?;
        if self.data == DataSource::Synthetic {
            self.synthetic.validate()?;
        }
        Ok(())
    }

    pub fn fractions(&self) -> [f64; 3] {
        [self.train_frac, self.val_frac, 1.0 - self.train_frac - self.val_frac]
    }

    /// Every key with its effective value. Parsing the result gives back
    /// an identical config.
    pub fn to_text(&self) -> String {
        let mut o = String::new();
        let mut kv = |k: &str, v: String| {
            writeln!(o, "{k} = {v}").expect("string write");
        };
        match &self.data {
            DataSource::Synthetic => kv("data", "synthetic".into()),
            DataSource::Csv(p) => {
                kv("data", "csv".into());
                kv("data_path", p.display().to_string());
            }
        }
        kv("train_frac", format!("{:?}", self.train_frac));
        kv("val_frac", format!("{:?}", self.val_frac));
        let s = &self.synthetic;
        kv("synthetic_nodes", s.nodes.to_string());
        kv("synthetic_steps", s.steps.to_string());
        kv("synthetic_seed", s.seed.to_string());
        kv("synthetic_noise", format!("{:?}", s.noise));
        kv("synthetic_offset_scale", format!("{:?}", s.offset_scale));
        kv("synthetic_base_level", format!("{:?}", s.base_level));
        kv("synthetic_amplitude", format!("{:?}", s.amplitude));
        kv("synthetic_period", format!("{:?}", s.period));
        kv("synthetic_phase_spread", format!("{:?}", s.phase_spread));
        kv("synthetic_coupling", format!("{:?}", s.coupling));
        kv("synthetic_shortcuts", s.shortcuts.to_string());
        kv("synthetic_burn_in", s.burn_in.to_string());
        kv("synthetic_interval", s.interval.to_string());
        kv("strategy", self.strategy.to_string());
        kv("clients", self.clients.to_string());
        kv("rounds", self.rounds.to_string());
        kv("patience", self.patience.to_string());
        kv("min_delta", format!("{:?}", self.min_delta));
        kv("rho", format!("{:?}", self.rho));
        kv("server_lr", format!("{:?}", self.server_lr));
        let a = &self.arch;
        kv("history", a.history.to_string());
        kv("horizon", a.horizon.to_string());
        kv("embed_dim", a.embed_dim.to_string());
        kv("pool_dim", a.pool_dim.to_string());
        kv("hidden", a.hidden.to_string());
        kv("layers", a.layers.to_string());
        let t = &self.train;
        kv("local_epochs", t.epochs.to_string());
        kv("batch_size", t.batch_size.to_string());
        kv("lr", format!("{:?}", t.lr));
        kv("mu", format!("{:?}", t.mu));
        kv("beta1", format!("{:?}", t.beta1));
        kv("beta2", format!("{:?}", t.beta2));
        kv("eps", format!("{:?}", t.eps));
        kv("clip_norm", format!("{:?}", t.clip_norm));
        kv(
            "max_steps",
            t.max_steps.map_or_else(|| "none".to_string(), |m| m.to_string()),
        );
        kv("seed", self.seed.to_string());
        kv("output_dir", self.output_dir.display().to_string());
        kv("record_seconds", self.record_seconds.to_string());
        o
    }
}
