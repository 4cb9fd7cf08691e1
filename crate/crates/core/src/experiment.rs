//! Paired informed-vs-uninformed sampler comparison.
//!
//! For every test image two chains share one seed: an uninformed chain that
//! only uses the local random walk, and an informed chain that mixes in the
//! network's predictive distribution. The chains' running maxima are compared
//! per image, and across images with a two-treatment Friedman test.

use std::io::Write;
use std::path::Path;

use crate::bnn::Network;
use crate::data::{add_noise, sig9};
use crate::error::{Error, Result};
use crate::inference::{fit_image, ImagePosterior, InformedProposal, Kernel, LikelihoodConfig, SamplerConfig};
use crate::render::{render, Image, RenderConfig};
use crate::rng::{role, Rng};
use crate::scene::{MorphableModel, PriorSpec};

/// First index where the nondecreasing `curve` reaches `target`.
pub fn samples_to_reach(curve: &[f64], target: f64) -> Option<usize> {
    let i = curve.partition_point(|v| *v < target);
    (i < curve.len()).then_some(i)
}

/// Survival function of the chi-squared distribution with one degree of
/// freedom: `erfc(sqrt(x / 2))`.
pub fn chi2_1df_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    statrs::function::erf::erfc((x / 2.0).sqrt())
}

/// Friedman statistic and p-value for two matched treatments, higher score
/// better. Ties share rank 1.5.
pub fn friedman_two_treatments(scores_a: &[f64], scores_b: &[f64]) -> Result<(f64, f64)> {
    let n = scores_a.len();
    if n < 2 || scores_b.len() != n {
        return Err(Error::contract(format!(
            "need two equal-length samples of at least 2, got {} and {}",
            scores_a.len(),
            scores_b.len()
        )));
    }
    let (mut r_a, mut r_b) = (0.0, 0.0);
    for (a, b) in scores_a.iter().zip(scores_b) {
        if a > b {
            r_a += 1.0;
            r_b += 2.0;
        } else if b > a {
            r_a += 2.0;
            r_b += 1.0;
        } else {
            r_a += 1.5;
            r_b += 1.5;
        }
    }
    let k = 2.0;
    let nf = n as f64;
    let chi2 = 12.0 / (nf * k * (k + 1.0)) * (r_a * r_a + r_b * r_b) - 3.0 * nf * (k + 1.0);
    // Rounding can leave a tiny negative value when all scores tie.
    let chi2 = chi2.max(0.0);
    Ok((chi2, chi2_1df_sf(chi2)))
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// A held-out observation with its generating parameters.
#[derive(Debug, Clone)]
pub struct TestImage {
    pub id: usize,
    pub image: Image,
    pub truth: Vec<f64>,
}

/// Synthetic test population: prior draws rendered with observation noise,
/// from a stream disjoint from the training data.
pub fn generate_test_images(
    model: &MorphableModel,
    prior: &PriorSpec,
    render_cfg: &RenderConfig,
    count: usize,
    noise_std: f64,
    seed: u64,
) -> Result<Vec<TestImage>> {
    let mut rng = Rng::stream(seed, role::TEST_IMAGES, 0);
    (0..count)
        .map(|id| {
            let y = model.sample_prior(prior, &mut rng);
            let clean = render(model, &y, render_cfg)?;
            Ok(TestImage {
                id,
                image: add_noise(&clean, noise_std, &mut rng),
                truth: y.to_vector(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkConfig {
    pub sampler: SamplerConfig,
    pub likelihood: LikelihoodConfig,
    pub render: RenderConfig,
    pub prior: PriorSpec,
    /// Dropout passes for the predictive distribution.
    pub passes: usize,
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageResult {
    pub id: usize,
    pub max_uninformed: f64,
    pub max_informed: f64,
    pub samples_to_reach: Option<usize>,
    pub curve_uninformed: Vec<f64>,
    pub curve_informed: Vec<f64>,
    pub informed_global_steps: usize,
    pub uninformed_global_steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkReport {
    pub images: Vec<ImageResult>,
    /// Images dropped because a chain failed, with the reason.
    pub excluded: Vec<(usize, String)>,
    pub iterations: usize,
    pub chi2: f64,
    pub p_value: f64,
    /// Median of `samples_to_reach / iterations`; images that never reach
    /// count as 1.
    pub median_reach_fraction: f64,
    /// Images where the informed chain's max is strictly higher.
    pub informed_wins: usize,
    pub uninformed_wins: usize,
}

fn run_pair(
    model: &MorphableModel,
    network: &Network,
    test: &TestImage,
    cfg: &BenchmarkConfig,
) -> Result<ImageResult> {
    let posterior = ImagePosterior {
        image: &test.image,
        model,
        prior: &cfg.prior,
        render: &cfg.render,
        likelihood: &cfg.likelihood,
    };
    let seed = cfg.sampler.seed;
    let chain_seed = |_: ()| Rng::stream(seed, role::CHAIN, test.id as u64);

    let uninformed_cfg = SamplerConfig {
        alpha: 1.0,
        ..cfg.sampler.clone()
    };
    let uninformed = fit_image(&posterior, &uninformed_cfg, None, &mut chain_seed(()))?;

    let mut predict_rng = Rng::stream(seed, role::PREDICT, test.id as u64);
    let q = network.predict(&test.image, cfg.passes, &mut predict_rng)?;
    let informed_q = InformedProposal::new(q, cfg.sampler.kappa, cfg.sampler.variance_floor);
    let informed = fit_image(&posterior, &cfg.sampler, Some(&informed_q), &mut chain_seed(()))?;

    let curve_uninformed = uninformed.max_curve();
    let curve_informed = informed.max_curve();
    Ok(ImageResult {
        id: test.id,
        max_uninformed: uninformed.best_log_posterior,
        max_informed: informed.best_log_posterior,
        samples_to_reach: samples_to_reach(&curve_informed, uninformed.best_log_posterior),
        curve_uninformed,
        curve_informed,
        informed_global_steps: informed.count_kernel(Kernel::Global),
        uninformed_global_steps: uninformed.count_kernel(Kernel::Global),
    })
}

/// Runs both chains on every image, in parallel over `cfg.threads` workers.
/// The report does not depend on the thread count.
pub fn run_benchmark(
    model: &MorphableModel,
    network: &Network,
    tests: &[TestImage],
    cfg: &BenchmarkConfig,
) -> Result<BenchmarkReport> {
    use rayon::prelude::*;

    cfg.sampler.validate(model.param_dim())?;
    if network.param_dim() != model.param_dim() {
        return Err(Error::contract("network output does not match model parameters"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads.max(1))
        .build()
        .map_err(|e| Error::contract(format!("thread pool: {e}")))?;
    let outcomes: Vec<(usize, Result<ImageResult>)> = pool.install(|| {
        tests
            .par_iter()
            .map(|t| (t.id, run_pair(model, network, t, cfg)))
            .collect()
    });

    let mut images = Vec::new();
    let mut excluded = Vec::new();
    for (id, outcome) in outcomes {
        match outcome {
            Ok(r) => images.push(r),
            Err(e) => excluded.push((id, e.to_string())),
        }
    }
    images.sort_by_key(|r| r.id);
    excluded.sort();
    summarize(images, excluded, cfg.sampler.iterations)
}

fn summarize(images: Vec<ImageResult>, excluded: Vec<(usize, String)>, iterations: usize) -> Result<BenchmarkReport> {
    let informed: Vec<f64> = images.iter().map(|r| r.max_informed).collect();
    let uninformed: Vec<f64> = images.iter().map(|r| r.max_uninformed).collect();
    let (chi2, p_value) = if images.len() >= 2 {
        friedman_two_treatments(&informed, &uninformed)?
    } else {
        (f64::NAN, f64::NAN)
    };
    let mut fractions: Vec<f64> = images
        .iter()
        .map(|r| r.samples_to_reach.map_or(1.0, |s| s as f64 / iterations as f64))
        .collect();
    let median_reach_fraction = median(&mut fractions).unwrap_or(f64::NAN);
    Ok(BenchmarkReport {
        informed_wins: informed.iter().zip(&uninformed).filter(|(a, b)| a > b).count(),
        uninformed_wins: informed.iter().zip(&uninformed).filter(|(a, b)| a < b).count(),
        images,
        excluded,
        iterations,
        chi2,
        p_value,
        median_reach_fraction,
    })
}

impl BenchmarkReport {
    /// Median `samples_to_reach` in iterations, with never-reached images
    /// counted as the full run.
    pub fn median_samples_to_reach(&self) -> f64 {
        let mut v: Vec<f64> = self
            .images
            .iter()
            .map(|r| r.samples_to_reach.unwrap_or(self.iterations) as f64)
            .collect();
        median(&mut v).unwrap_or(f64::NAN)
    }

    /// Writes `benchmark_summary.csv`, `curves_<id>.csv` and `aggregate.txt`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut summary = Vec::new();
        writeln!(summary, "image_id,max_lp_uninformed,max_lp_informed,samples_to_reach")?;
        for r in &self.images {
            let reach = r.samples_to_reach.map_or_else(|| "none".to_string(), |s| s.to_string());
            writeln!(
                summary,
                "{},{},{},{}",
                r.id,
                sig9(r.max_uninformed),
                sig9(r.max_informed),
                reach
            )?;
        }
        std::fs::write(dir.join("benchmark_summary.csv"), summary)?;

        for r in &self.images {
            let mut curves = Vec::new();
            writeln!(curves, "iter,max_lp_uninformed,max_lp_informed")?;
            for (i, (u, f)) in r.curve_uninformed.iter().zip(&r.curve_informed).enumerate() {
                writeln!(curves, "{i},{},{}", sig9(*u), sig9(*f))?;
            }
            std::fs::write(dir.join(format!("curves_{}.csv", r.id)), curves)?;
        }

        let mut agg = Vec::new();
        writeln!(agg, "n = {}", self.images.len())?;
        writeln!(agg, "iterations = {}", self.iterations)?;
        writeln!(agg, "chi2 = {}", sig9(self.chi2))?;
        writeln!(agg, "p = {}", sig9(self.p_value))?;
        writeln!(agg, "median_reach_fraction = {}", sig9(self.median_reach_fraction))?;
        writeln!(agg, "informed_wins = {}", self.informed_wins)?;
        writeln!(agg, "uninformed_wins = {}", self.uninformed_wins)?;
        for (id, why) in &self.excluded {
            writeln!(agg, "excluded {id}: {why}")?;
        }
        std::fs::write(dir.join("aggregate.txt"), agg)?;
        Ok(())
    }
}
