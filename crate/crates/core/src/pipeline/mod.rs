//! End-to-end run: calibrate, project cities, potentials, areas,
//! downscale, validate.
//!
//! Stages communicate only through the artifact directory, so any stage
//! can be rerun on its own once its predecessors have written their files.

pub mod artifacts;
pub mod config;
pub mod stages;
pub mod synth;
pub mod validate;

use std::path::Path;

use log::info;

pub use config::{RunConfig, SyntheticWorldSpec};
pub use stages::{Inputs, Stage};
pub use validate::ValidationReport;

use crate::{Error, Result};

fn failed_marker(out: &Path, stage: Stage) -> std::path::PathBuf {
    out.join(format!("{}.FAILED", stage.name()))
}

/// Runs one stage. On failure a `<stage>.FAILED` marker holding the cause
/// is left in `out` next to any partial outputs. Returns the validation
/// report for the validate stage.
pub fn run_stage(cfg: &RunConfig, stage: Stage, out: &Path) -> Result<Option<ValidationReport>> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let marker = failed_marker(out, stage);
    if marker.exists() {
        std::fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
    }
    info!("stage {stage}");
    let result = Inputs::load(cfg).and_then(|inp| match stage {
        Stage::Calibrate => stages::calibrate_stage(&inp, out).map(|_| None),
        Stage::ProjectCities => stages::project_cities_stage(&inp, out).map(|_| None),
        Stage::Potentials => stages::potentials_stage(&inp, out).map(|_| None),
        Stage::Areas => stages::areas_stage(&inp, out).map(|_| None),
        Stage::Downscale => stages::downscale_stage(&inp, out).map(|_| None),
        Stage::Validate => stages::validate_stage(&inp, out).map(Some),
    });
    result.map_err(|e| {
        let _ = std::fs::write(&marker, format!("{e}\n"));
        Error::Stage {
            stage: stage.name().to_owned(),
            source: Box::new(e),
        }
    })
}

/// Runs all stages in order and returns the validation report.
pub fn run_pipeline(cfg: &RunConfig, out: &Path) -> Result<ValidationReport> {
    let mut report = None;
    for stage in Stage::ALL {
        report = run_stage(cfg, stage, out)?;
    }
    Ok(report.expect("validate runs last"))
}
