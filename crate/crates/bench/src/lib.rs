//! Shared fixtures for the benchmarks: one certified artifact and a planned reference.

use tsdrive::planner::plan;
use tsdrive::{synthesize, RunConfig, SynthesisArtifact, Trajectory};

pub struct Fixture {
    pub config: RunConfig,
    pub artifact: SynthesisArtifact,
    pub reference: Trajectory,
}

impl Fixture {
    pub fn new() -> Self {
        let config = RunConfig::default();
        let artifact = synthesize(&config.synthesis_inputs()).expect("default synthesis");
        let reference = plan(&config.planner, config.tc, config.sim.duration).expect("default plan");
        Self { config, artifact, reference }
    }
}

impl Default for Fixture {
    fn default() -> Self {
        Self::new()
    }
}
