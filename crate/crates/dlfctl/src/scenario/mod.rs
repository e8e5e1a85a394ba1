//! End-to-end scenarios. Each one provisions its own stub buckets and
//! cluster, runs to quiescence and returns a [`ScenarioReport`].

pub mod g1k;
pub mod notebook;
pub mod tensorboard;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dlf_core::s3probe::{Credentials, StubError};

use crate::{Failure, ScenarioReport};

pub use g1k::ContentionModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ScenarioName {
    Notebook,
    Tensorboard,
    G1k,
}

impl ScenarioName {
    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioName::Notebook => "notebook",
            ScenarioName::Tensorboard => "tensorboard",
            ScenarioName::G1k => "g1k",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioOptions {
    /// Objects for notebook and tensorboard, chunks for g1k. `None` picks the
    /// scenario default.
    pub scale: Option<usize>,
    pub seed: u64,
    pub workers: usize,
    pub contention: ContentionModel,
}

impl Default for ScenarioOptions {
    fn default() -> Self {
        ScenarioOptions {
            scale: None,
            seed: 0,
            workers: 4,
            contention: ContentionModel::default(),
        }
    }
}

impl ScenarioOptions {
    pub fn with_scale(scale: usize) -> Self {
        ScenarioOptions {
            scale: Some(scale),
            ..ScenarioOptions::default()
        }
    }
}

pub fn run_scenario(name: ScenarioName, opts: &ScenarioOptions) -> ScenarioReport {
    match name {
        ScenarioName::Notebook => notebook::run(opts),
        ScenarioName::Tensorboard => tensorboard::run(opts),
        ScenarioName::G1k => g1k::run(opts),
    }
}

/// Runs `body`, turning an early exit into a failed step and recording the
/// elapsed time unless the body set a modelled duration.
fn harness(name: &str, body: impl FnOnce(&mut ScenarioReport) -> Result<(), Failure>) -> ScenarioReport {
    let mut report = ScenarioReport::new(name);
    let start = Instant::now();
    if let Err(e) = body(&mut report) {
        report.check("scenario ran to completion", false, e.to_string());
    }
    if report.simulated_duration.is_zero() {
        report.simulated_duration = start.elapsed();
    }
    report
}

pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

pub fn random_bytes(rng: &mut ChaCha8Rng, min: usize, max: usize) -> Vec<u8> {
    let len = rng.gen_range(min..=max);
    (0..len).map(|_| rng.gen()).collect()
}

fn random_credentials(rng: &mut ChaCha8Rng, user: &str) -> Credentials {
    let secret: String = (0..24).map(|_| char::from(b'a' + rng.gen_range(0..26))).collect();
    Credentials::new(user, secret)
}

fn stub_failed(e: StubError) -> Failure {
    Failure::Assertion(e.to_string())
}
