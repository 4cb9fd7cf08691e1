//! Shared fixtures for the criterion benches.

use facefit_core::render::render;
use facefit_core::scene::generate_model;
use facefit_core::{Image, ModelConfig, MorphableModel, PriorSpec, RenderConfig, Rng};

pub struct Fixture {
    pub model: MorphableModel,
    pub prior: PriorSpec,
    pub render: RenderConfig,
    pub target: Image,
}

pub fn fixture() -> Fixture {
    let model = generate_model(7, &ModelConfig::default()).expect("default model");
    let prior = PriorSpec::default();
    let render_cfg = RenderConfig::default();
    let truth = model.sample_prior(&prior, &mut Rng::new(1));
    let target = render(&model, &truth, &render_cfg).expect("render");
    Fixture {
        model,
        prior,
        render: render_cfg,
        target,
    }
}
