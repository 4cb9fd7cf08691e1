//! Flat `key = value` configuration with `#` comments.
//!
//! Every tunable of the pipeline has one key. Unknown keys, repeated keys and
//! unparsable values are errors. [`Config::render`] writes every key back in
//! the same syntax, so a written configuration reproduces the run exactly.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use facefit_core::inference::standard_blocks;
use facefit_core::{BenchmarkConfig, LikelihoodConfig, ModelConfig, PriorSpec, RenderConfig, SamplerConfig, TrainConfig};

trait Value: Sized {
    fn parse_value(s: &str) -> Result<Self>;
    fn render_value(&self) -> String;
}

macro_rules! plain_value {
    ($($t:ty),*) => {$(
        impl Value for $t {
            fn parse_value(s: &str) -> Result<Self> {
                s.parse().map_err(|e| anyhow!("{e}"))
            }
            fn render_value(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

plain_value!(u64, usize, f64, String);

impl Value for Option<usize> {
    fn parse_value(s: &str) -> Result<Self> {
        if s.is_empty() {
            Ok(None)
        } else {
            Ok(Some(s.parse()?))
        }
    }

    fn render_value(&self) -> String {
        self.map(|v| v.to_string()).unwrap_or_default()
    }
}

impl Value for Vec<usize> {
    fn parse_value(s: &str) -> Result<Self> {
        s.split(',').map(|p| Ok(p.trim().parse()?)).collect()
    }

    fn render_value(&self) -> String {
        self.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
    }
}

macro_rules! config {
    ($($key:ident: $t:ty = $default:expr;)*) => {
        /// Every setting of the pipeline, keyed by its config-file name.
        #[derive(Debug, Clone, PartialEq)]
        pub struct Config {
            $(pub $key: $t,)*
        }

        impl Default for Config {
            fn default() -> Self {
                Config { $($key: $default,)* }
            }
        }

        impl Config {
            pub const KEYS: &'static [&'static str] = &[$(stringify!($key)),*];

            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $(stringify!($key) => {
                        self.$key = <$t as Value>::parse_value(value)
                            .with_context(|| format!("invalid value {value:?} for key {key}"))?;
                    })*
                    _ => bail!("unknown config key {key:?}"),
                }
                Ok(())
            }

            /// `key = value` lines for every setting, in declaration order.
            pub fn render(&self) -> String {
                let mut out = String::new();
                $(writeln!(out, "{} = {}", stringify!($key), self.$key.render_value()).expect("string write");)*
                out
            }
        }
    };
}

config! {
    seed: u64 = 0;

    grid_resolution: usize = 24;
    shape_dim: usize = 10;
    color_dim: usize = 10;
    raw_fields: usize = 16;

    coeff_std: f64 = 1.0;
    angle_std: f64 = 0.3;
    translation_std: f64 = 0.2;
    log_distance_mean: f64 = 4f64.ln();
    log_distance_std: f64 = 0.1;
    light_angle_std: f64 = 0.5;
    ambient_mean: f64 = 0.5;
    ambient_std: f64 = 0.5;
    diffuse_mean: f64 = 0.5;
    diffuse_std: f64 = 0.5;

    width: usize = 64;
    height: usize = 64;
    focal: f64 = 64.0;
    background_r: f64 = 0.1;
    background_g: f64 = 0.1;
    background_b: f64 = 0.15;

    pixel_std: f64 = 0.08;

    alpha: f64 = 0.5;
    iterations: usize = 10_000;
    scale_pose: f64 = 0.03;
    scale_shape: f64 = 0.1;
    scale_color: f64 = 0.1;
    scale_light: f64 = 0.05;
    kappa: f64 = 1.0;
    variance_floor: f64 = 1e-4;

    epochs: usize = 30;
    batch_size: usize = 64;
    learning_rate: f64 = 1e-3;
    adam_beta1: f64 = 0.9;
    adam_beta2: f64 = 0.999;
    adam_epsilon: f64 = 1e-8;
    dropout: f64 = 0.1;
    weight_decay: f64 = 0.0;
    hidden: Vec<usize> = vec![256, 256];
    passes: usize = 20;

    dataset_size: usize = 20_000;
    noise_std: f64 = 0.02;

    samples: usize = 8;
    test_images: usize = 30;
    threads: usize = 1;

    model_path: String = String::new();
    dataset_path: String = String::new();
    weights_path: String = String::new();
    target_image: String = String::new();
    target_index: Option<usize> = None;
}

impl Config {
    /// Defaults overridden by the lines of `text`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected `key = value`", n + 1))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                bail!("line {}: key {key:?} given twice", n + 1);
            }
            cfg.set(key, value.trim()).with_context(|| format!("line {}", n + 1))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Config::parse(&text).with_context(|| format!("config {}", path.display()))
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            grid_resolution: self.grid_resolution,
            shape_dim: self.shape_dim,
            color_dim: self.color_dim,
            raw_fields: self.raw_fields,
        }
    }

    pub fn prior(&self) -> Result<PriorSpec> {
        let prior = PriorSpec {
            coeff_std: self.coeff_std,
            angle_std: self.angle_std,
            translation_std: self.translation_std,
            log_distance_mean: self.log_distance_mean,
            log_distance_std: self.log_distance_std,
            light_angle_std: self.light_angle_std,
            ambient_mean: self.ambient_mean,
            ambient_std: self.ambient_std,
            diffuse_mean: self.diffuse_mean,
            diffuse_std: self.diffuse_std,
        };
        prior.validate()?;
        Ok(prior)
    }

    pub fn render_config(&self) -> Result<RenderConfig> {
        let cfg = RenderConfig {
            width: self.width,
            height: self.height,
            focal: self.focal,
            background: [self.background_r, self.background_g, self.background_b],
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn likelihood(&self) -> Result<LikelihoodConfig> {
        if !(self.pixel_std > 0.0) {
            bail!("pixel_std must be positive");
        }
        Ok(LikelihoodConfig {
            pixel_std: self.pixel_std,
        })
    }

    /// Sampler settings for a model with the given coefficient counts.
    pub fn sampler(&self, shape_dim: usize, color_dim: usize) -> Result<SamplerConfig> {
        let cfg = SamplerConfig {
            alpha: self.alpha,
            iterations: self.iterations,
            blocks: standard_blocks(
                shape_dim,
                color_dim,
                [self.scale_pose, self.scale_shape, self.scale_color, self.scale_light],
            ),
            kappa: self.kappa,
            variance_floor: self.variance_floor,
            seed: self.seed,
        };
        cfg.validate(shape_dim + color_dim + facefit_core::scene::POSE_LIGHT_DIM)?;
        Ok(cfg)
    }

    pub fn train(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
            dropout: self.dropout,
            weight_decay: self.weight_decay,
            hidden: self.hidden.clone(),
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn benchmark(&self, shape_dim: usize, color_dim: usize) -> Result<BenchmarkConfig> {
        if self.passes < 2 {
            bail!("passes must be at least 2");
        }
        Ok(BenchmarkConfig {
            sampler: self.sampler(shape_dim, color_dim)?,
            likelihood: self.likelihood()?,
            render: self.render_config()?,
            prior: self.prior()?,
            passes: self.passes,
            threads: self.threads.max(1),
        })
    }

    fn input(&self, configured: &str, out: &Path, default: &str) -> PathBuf {
        if configured.is_empty() {
            out.join(default)
        } else {
            PathBuf::from(configured)
        }
    }

    pub fn model_file(&self, out: &Path) -> PathBuf {
        self.input(&self.model_path, out, "model.fmm")
    }

    pub fn dataset_file(&self, out: &Path) -> PathBuf {
        self.input(&self.dataset_path, out, "dataset.fds")
    }

    pub fn weights_file(&self, out: &Path) -> PathBuf {
        self.input(&self.weights_path, out, "weights.bnw")
    }
}
