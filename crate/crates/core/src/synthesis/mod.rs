//! Image synthesis from texture statistics and the construction of
//! consistent parameter sets from sampled vectors.

mod consistent;
pub mod lbfgs;
mod objective;
mod soc;

use std::cell::RefCell;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{AnalysisConfig, Analyzer, TextureParams};
use crate::error::{Error, Result};
use crate::grid::{Grid, RealGrid};

pub use consistent::{make_consistent, naive_params, ValidParams};
pub use lbfgs::{LbfgsConfig, StopReason};
pub use objective::{evaluate, group_weights, Evaluation, GroupResiduals, Term};
pub use soc::{enforce_soc_per_scale, soc_spectrum, SocImage};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisConfig {
    pub max_iters: usize,
    pub output_size: usize,
    /// Stop once every group residual is below this relative error.
    pub convergence_tol: f64,
    /// Starting image; Gaussian noise matched to the target mean and
    /// variance when absent.
    #[serde(skip)]
    pub init: Option<RealGrid>,
    /// Share pixels between overlapping windows in tiled synthesis.
    pub overlap_blend: bool,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            max_iters: 50,
            output_size: 64,
            convergence_tol: 1e-3,
            init: None,
            overlap_blend: true,
        }
    }
}

impl SynthesisConfig {
    pub fn with_size(output_size: usize) -> Self {
        SynthesisConfig {
            output_size,
            ..Default::default()
        }
    }

    fn validate(&self, patch: &AnalysisConfig) -> Result<()> {
        let n = self.output_size;
        if !n.is_power_of_two() || n < patch.pyramid.image_size {
            return Err(Error::InvalidConfig(format!(
                "output size {n} must be a power of two no smaller than the analysis size {}",
                patch.pyramid.image_size
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthesisReport {
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// Aggregate loss after each accepted iteration (non-increasing).
    pub loss_history: Vec<f64>,
    /// Final residuals, one entry per constraint window.
    pub residuals: Vec<GroupResiduals>,
}

impl SynthesisReport {
    /// Worst group residual over all windows.
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().fold(0.0, |m, r| m.max(r.max()))
    }
}

#[derive(Debug, Clone)]
pub struct Synthesis {
    pub image: RealGrid,
    pub report: SynthesisReport,
}

/// Random-phase image realizing the target SOC at `size`, shifted to the
/// target mean and scaled to the target variance.
pub fn soc_init<R: Rng + ?Sized>(
    params: &TextureParams,
    patch_config: &AnalysisConfig,
    size: usize,
    rng: &mut R,
) -> Result<RealGrid> {
    let cfg = patch_config.with_size(size);
    let soc = enforce_soc_per_scale(params, &cfg, rng)?;
    let v = soc.image.variance();
    let k = if v > 0.0 { (params.pixel_variance() / v).sqrt() } else { 1.0 };
    let m = params.pixel_mean();
    Ok(soc.image.map(|x| m + k * x))
}

/// Synthesizes an `output_size` image whose statistics approach `params`.
/// Non-convergence is reported in the result, not as an error.
pub fn synthesize<R: Rng + ?Sized>(
    params: &TextureParams,
    patch_config: &AnalysisConfig,
    config: &SynthesisConfig,
    rng: &mut R,
) -> Result<Synthesis> {
    config.validate(patch_config)?;
    let analyzer = Analyzer::new(patch_config.with_size(config.output_size))?;
    params.layout.check_len(analyzer.layout().len())?;
    let n = config.output_size;
    let init = match &config.init {
        Some(img) => {
            if img.width() != n || img.height() != n {
                return Err(Error::DimensionMismatch {
                    expected: format!("{n}x{n} initial image"),
                    got: format!("{}x{}", img.width(), img.height()),
                });
            }
            img.clone()
        }
        None => soc_init(params, patch_config, n, rng)?,
    };
    let terms = [Term::new(0, 0, &analyzer, params)];
    run(init, &terms, config)
}

/// Minimizes the summed loss of several windows over one shared image.
pub fn synthesize_terms(init: RealGrid, terms: &[Term], config: &SynthesisConfig) -> Result<Synthesis> {
    if config.max_iters == 0 {
        return Err(Error::InvalidConfig("max_iters must be positive".into()));
    }
    run(init, terms, config)
}

fn run(init: RealGrid, terms: &[Term], config: &SynthesisConfig) -> Result<Synthesis> {
    let (w, h) = (init.width(), init.height());
    // residuals of the most recent evaluation, which is always the
    // accepted point when the iteration callback runs
    let latest: RefCell<Result<Vec<GroupResiduals>>> = RefCell::new(Ok(Vec::new()));
    let mut history = Vec::new();
    let mut converged = false;
    let tol = config.convergence_tol;
    let lcfg = LbfgsConfig {
        max_iters: config.max_iters,
        ..Default::default()
    };
    let objective = |z: &[f64]| -> (f64, Vec<f64>) {
        let img = Grid::from_vec(w, h, z.to_vec()).expect("fixed size");
        match evaluate(&img, terms) {
            Ok(e) => {
                *latest.borrow_mut() = Ok(e.residuals);
                (e.loss, e.grad.into_vec())
            }
            Err(err) => {
                *latest.borrow_mut() = Err(err);
                (f64::INFINITY, vec![0.0; z.len()])
            }
        }
    };
    let mut accepted: Vec<GroupResiduals> = Vec::new();
    let result = lbfgs::minimize(init.into_vec(), &lcfg, objective, |_, _, value| {
        history.push(value);
        match &*latest.borrow() {
            Ok(r) => {
                accepted = r.clone();
                converged = r.iter().all(|g| g.max() < tol);
                converged
            }
            Err(_) => true,
        }
    });
    if history.len() == 1 {
        if let Err(e) = latest.into_inner() {
            return Err(e.in_stage("synthesis"));
        }
    }
    log::debug!(
        "synthesis stopped after {} iterations ({:?}), loss {:.3e}",
        result.iterations,
        result.reason,
        result.value
    );
    Ok(Synthesis {
        image: Grid::from_vec(w, h, result.x)?,
        report: SynthesisReport {
            iterations: result.iterations,
            evaluations: result.evaluations,
            converged,
            loss_history: history,
            residuals: accepted,
        },
    })
}
