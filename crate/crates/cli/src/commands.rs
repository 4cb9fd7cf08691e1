use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use facefit_core::data::{
    read_dataset_record, read_model, read_ppm, read_weights, round_network, split_index, training_set,
    write_model, write_ppm, write_weights, DatasetGenerator, DatasetHeader, DatasetReader, DatasetWriter, Record,
};
use facefit_core::experiment::{generate_test_images, run_benchmark};
use facefit_core::inference::{fit_image, ImagePosterior, InformedProposal};
use facefit_core::render::render;
use facefit_core::rng::role;
use facefit_core::scene::generate_model;
use facefit_core::{bnn, data::sig9, Image, MorphableModel, Network, Rng};

use crate::config::Config;

fn load_model(cfg: &Config, out: &Path) -> Result<MorphableModel> {
    let path = cfg.model_file(out);
    read_model(&path).with_context(|| format!("loading model {}", path.display()))
}

fn load_network(cfg: &Config, out: &Path, model: &MorphableModel) -> Result<Network> {
    let path = cfg.weights_file(out);
    let net = read_weights(&path, cfg.dropout).with_context(|| format!("loading weights {}", path.display()))?;
    if net.param_dim() != model.param_dim() {
        bail!(
            "weights {} predict {} parameters, model has {}",
            path.display(),
            net.param_dim(),
            model.param_dim()
        );
    }
    Ok(net)
}

/// The target image: a PPM if `target_image` is set, otherwise a dataset
/// record (default: the first held-out one).
fn load_target(cfg: &Config, out: &Path) -> Result<Image> {
    let image = if !cfg.target_image.is_empty() {
        read_ppm(Path::new(&cfg.target_image)).with_context(|| format!("loading target {}", cfg.target_image))?
    } else {
        let path = cfg.dataset_file(out);
        let index = match cfg.target_index {
            Some(i) => i,
            None => {
                let reader = DatasetReader::open(&path).with_context(|| format!("opening {}", path.display()))?;
                split_index(reader.header.count as usize)
            }
        };
        read_dataset_record(&path, index)
            .with_context(|| format!("reading record {index} of {}", path.display()))?
            .image
    };
    if image.width() != cfg.width || image.height() != cfg.height {
        bail!(
            "target is {}x{}, renderer is configured for {}x{}",
            image.width(),
            image.height(),
            cfg.width,
            cfg.height
        );
    }
    Ok(image)
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    let f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

pub fn generate_model_cmd(cfg: &Config, out: &Path) -> Result<()> {
    let model = generate_model(cfg.seed, &cfg.model_config())?;
    let path = out.join("model.fmm");
    write_model(&path, &model)?;
    println!(
        "model: {} vertices, {} triangles, P = {} -> {}",
        model.n_vertices(),
        model.triangles.len(),
        model.param_dim(),
        path.display()
    );
    Ok(())
}

pub fn generate_data_cmd(cfg: &Config, out: &Path) -> Result<()> {
    let model = load_model(cfg, out)?;
    let prior = cfg.prior()?;
    let rcfg = cfg.render_config()?;
    if cfg.dataset_size == 0 {
        bail!("dataset_size must be positive");
    }
    if !(cfg.noise_std >= 0.0) {
        bail!("noise_std must be nonnegative");
    }
    let path = out.join("dataset.fds");
    let header = DatasetHeader {
        count: u32::try_from(cfg.dataset_size).context("dataset_size too large")?,
        width: rcfg.width as u32,
        height: rcfg.height as u32,
        param_dim: model.param_dim() as u32,
        seed: cfg.seed,
        noise_std: cfg.noise_std as f32,
    };
    let mut writer = DatasetWriter::create(&path, header)?;
    for item in DatasetGenerator::new(&model, &prior, &rcfg, cfg.dataset_size, cfg.noise_std, cfg.seed) {
        let (image, y) = item?;
        writer.write(&Record {
            image,
            params: y.to_vector().iter().map(|v| *v as f32).collect(),
        })?;
    }
    writer.finish()?;
    println!("dataset: {} records -> {}", cfg.dataset_size, path.display());
    Ok(())
}

pub fn train_cmd(cfg: &Config, out: &Path) -> Result<()> {
    let tcfg = cfg.train()?;
    let path = cfg.dataset_file(out);
    let reader = DatasetReader::open(&path).with_context(|| format!("opening {}", path.display()))?;
    let header = reader.header;
    let n = header.count as usize;
    let split = split_index(n);
    if split == 0 {
        bail!("dataset {} has too few records to train on", path.display());
    }
    let param_dim = header.param_dim as usize;
    let mut reader = reader;
    let train_set = training_set(reader.by_ref().take(split), param_dim)?;
    let held_out = training_set(reader.by_ref(), param_dim)?;
    reader.check_end()?;

    let mut log = create(&out.join("train_log.csv"))?;
    writeln!(log, "epoch,mean_loss")?;
    let mut log_err = None;
    let mut rng = Rng::stream(cfg.seed, role::TRAIN, 0);
    let outcome = bnn::train(&train_set, &tcfg, &mut rng, |epoch, loss| {
        println!("epoch {epoch:>3}  mean loss {}", sig9(loss));
        if let Err(e) = writeln!(log, "{epoch},{}", sig9(loss)) {
            log_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_err {
        return Err(e.into());
    }
    log.flush()?;

    let mut net = outcome.network;
    round_network(&mut net);
    let wpath = out.join("weights.bnw");
    write_weights(&wpath, &net)?;

    let mean = cfg.prior()?.mean_vector(cfg.shape_dim, cfg.color_dim);
    if !held_out.is_empty() && mean.len() == param_dim {
        let (mut se, mut se0) = (0.0, 0.0);
        for i in 0..held_out.len() {
            let mu = net.predict_mean(&held_out.inputs.row(i).to_vec())?;
            for j in 0..param_dim {
                let y = held_out.targets[[i, j]];
                se += (mu[j] - y).powi(2);
                se0 += (mean[j] - y).powi(2);
            }
        }
        println!("held-out predictive-mean MSE / prior-mean MSE = {}", sig9(se / se0));
    }
    println!("weights -> {}", wpath.display());
    Ok(())
}

pub fn fit_cmd(cfg: &Config, out: &Path) -> Result<()> {
    let model = load_model(cfg, out)?;
    let prior = cfg.prior()?;
    let rcfg = cfg.render_config()?;
    let lcfg = cfg.likelihood()?;
    let scfg = cfg.sampler(model.shape_dim(), model.color_dim())?;
    let target = load_target(cfg, out)?;
    let informed = if scfg.alpha < 1.0 {
        let net = load_network(cfg, out, &model)?;
        let q = net.predict(&target, cfg.passes, &mut Rng::stream(cfg.seed, role::PREDICT, 0))?;
        Some(InformedProposal::new(q, scfg.kappa, scfg.variance_floor))
    } else {
        None
    };
    let posterior = ImagePosterior {
        image: &target,
        model: &model,
        prior: &prior,
        render: &rcfg,
        likelihood: &lcfg,
    };
    let trace = fit_image(&posterior, &scfg, informed.as_ref(), &mut Rng::stream(cfg.seed, role::CHAIN, 0))?;

    let mut w = create(&out.join("trace.csv"))?;
    trace.write_csv(&mut w)?;
    w.flush()?;

    let mut w = create(&out.join("best_params.csv"))?;
    writeln!(w, "index,value")?;
    for (i, v) in trace.best_sample.iter().enumerate() {
        writeln!(w, "{i},{}", sig9(*v))?;
    }
    w.flush()?;

    let best = model.params_from_vector(&trace.best_sample)?;
    write_ppm(&out.join("best_fit.ppm"), &render(&model, &best, &rcfg)?)?;
    write_ppm(&out.join("target.ppm"), &target)?;
    println!(
        "best log-posterior {} after {} iterations, acceptance rate {}",
        sig9(trace.best_log_posterior),
        scfg.iterations,
        sig9(trace.acceptance_rate())
    );
    if trace.failures > 0 {
        println!("{} proposals could not be evaluated and were rejected", trace.failures);
    }
    Ok(())
}

pub fn render_samples_cmd(cfg: &Config, out: &Path) -> Result<()> {
    let model = load_model(cfg, out)?;
    let rcfg = cfg.render_config()?;
    let net = load_network(cfg, out, &model)?;
    let target = load_target(cfg, out)?;
    let q = net.predict(&target, cfg.passes, &mut Rng::stream(cfg.seed, role::PREDICT, 0))?;
    let mut rng = Rng::stream(cfg.seed, role::SAMPLES, 0);
    for i in 0..cfg.samples {
        let y = model.params_from_vector(&q.sample(&mut rng))?;
        write_ppm(&out.join(format!("sample_{i:03}.ppm")), &render(&model, &y, &rcfg)?)?;
    }
    let mean = model.params_from_vector(&q.mean)?;
    write_ppm(&out.join("mean.ppm"), &render(&model, &mean, &rcfg)?)?;
    println!("{} samples and mean.ppm -> {}", cfg.samples, out.display());
    Ok(())
}

pub fn benchmark_cmd(cfg: &Config, out: &Path) -> Result<()> {
    let model = load_model(cfg, out)?;
    let net = load_network(cfg, out, &model)?;
    let bcfg = cfg.benchmark(model.shape_dim(), model.color_dim())?;
    if cfg.test_images < 2 {
        bail!("test_images must be at least 2 for the Friedman test");
    }
    let tests = generate_test_images(&model, &bcfg.prior, &bcfg.render, cfg.test_images, cfg.noise_std, cfg.seed)?;
    let report = run_benchmark(&model, &net, &tests, &bcfg)?;
    report.write(out)?;
    for (id, why) in &report.excluded {
        println!("image {id} excluded: {why}");
    }
    println!(
        "n = {}  informed wins {}  uninformed wins {}  chi2 = {}  p = {}  median reach = {} iterations",
        report.images.len(),
        report.informed_wins,
        report.uninformed_wins,
        sig9(report.chi2),
        sig9(report.p_value),
        sig9(report.median_samples_to_reach())
    );
    Ok(())
}
