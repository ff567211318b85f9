//! Experiment configuration: built-in defaults, an optional TOML file and
//! command-line flags, merged in that order and validated before any path is
//! simulated.
//!
//! File layout (every key optional, unknown keys rejected):
//!
//! ```toml
//! [run]
//! n_paths = 200000      # per batch; default depends on the experiment
//! grid = 400            # time steps on [0, 1]
//! seed = 1              # master seed
//!
//! [process]
//! kind = "bm"           # bm | bridge | distorted | geometric | ou
//! b = 1.0               # drift (distorted, geometric)
//! sigma = 1.0           # volatility (distorted, geometric)
//! a = 1.0               # mean reversion (ou)
//!
//! [params]              # shared by all experiments
//! r = [-1.0]            # levels
//! eps = [0.2, 0.1, 0.05, 0.025]   # shell half-widths, strictly decreasing
//! k = 1                 # truncation order of the Neumann suite
//! bandwidth = 0.05      # kernel bandwidth in g; default halved Silverman
//! cutoff = 1.0          # cutoff threshold of lemma21
//! joint = false         # ibp-halfspace: check the joint (g, tau) form
//! density = "oracle"    # ibp-halfspace: oracle | estimated
//!
//! [ibp-halfspace]       # same keys as [params], applied to one experiment
//! r = [-1.5, -1.0, -0.5]
//! ```

use std::path::Path;

use clap::ValueEnum;
use gsurf_core::density_oracles::min_density;
use gsurf_core::ibp_verifier::{
    require_halfspace, require_joint, require_pairing, trig_suite, DensitySource, LimitKind, LIMIT_LEVELS,
};
use gsurf_core::malliavin::CutoffSpec;
use gsurf_core::path_engine::{ProcessKind, ProcessSpec, TimeGrid};
use gsurf_core::GsurfError;
use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    DensityCheck,
    ShellConvergence,
    IbpFlat,
    IbpHalfspace,
    IbpJoint,
    Limit,
    Neumann,
    Lemma21,
    Moments,
}

impl Experiment {
    pub fn as_str(&self) -> &'static str {
        match self {
            Experiment::DensityCheck => "density-check",
            Experiment::ShellConvergence => "shell-convergence",
            Experiment::IbpFlat => "ibp-flat",
            Experiment::IbpHalfspace => "ibp-halfspace",
            Experiment::IbpJoint => "ibp-joint",
            Experiment::Limit => "limit",
            Experiment::Neumann => "neumann",
            Experiment::Lemma21 => "lemma21",
            Experiment::Moments => "moments",
        }
    }

    pub fn default_paths(&self) -> usize {
        match self {
            Experiment::IbpFlat | Experiment::IbpHalfspace => 100_000,
            Experiment::Limit => 400_000,
            _ => 200_000,
        }
    }

    pub fn default_levels(&self) -> Vec<f64> {
        match self {
            Experiment::DensityCheck | Experiment::IbpHalfspace => vec![-1.5, -1.0, -0.5],
            Experiment::Limit => LIMIT_LEVELS.to_vec(),
            Experiment::Lemma21 => vec![1.5],
            _ => vec![-1.0],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub n_paths: Option<usize>,
    pub grid: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessSection {
    pub kind: Option<ProcessKind>,
    pub b: Option<f64>,
    pub sigma: Option<f64>,
    pub a: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamSection {
    pub r: Option<Vec<f64>>,
    pub eps: Option<Vec<f64>>,
    pub k: Option<usize>,
    pub bandwidth: Option<f64>,
    pub cutoff: Option<f64>,
    pub joint: Option<bool>,
    pub density: Option<DensitySource>,
}

/// One source of settings; later layers override earlier ones field by field.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Layer {
    pub run: RunSection,
    pub process: ProcessSection,
    pub params: ParamSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct FileConfig {
    #[serde(default)]
    run: RunSection,
    #[serde(default)]
    process: ProcessSection,
    #[serde(default)]
    params: ParamSection,
    density_check: Option<ParamSection>,
    shell_convergence: Option<ParamSection>,
    ibp_flat: Option<ParamSection>,
    ibp_halfspace: Option<ParamSection>,
    ibp_joint: Option<ParamSection>,
    limit: Option<ParamSection>,
    neumann: Option<ParamSection>,
    lemma21: Option<ParamSection>,
    moments: Option<ParamSection>,
}

impl FileConfig {
    fn section(&self, e: Experiment) -> Option<&ParamSection> {
        match e {
            Experiment::DensityCheck => self.density_check.as_ref(),
            Experiment::ShellConvergence => self.shell_convergence.as_ref(),
            Experiment::IbpFlat => self.ibp_flat.as_ref(),
            Experiment::IbpHalfspace => self.ibp_halfspace.as_ref(),
            Experiment::IbpJoint => self.ibp_joint.as_ref(),
            Experiment::Limit => self.limit.as_ref(),
            Experiment::Neumann => self.neumann.as_ref(),
            Experiment::Lemma21 => self.lemma21.as_ref(),
            Experiment::Moments => self.moments.as_ref(),
        }
    }
}

/// Parses a config file into its shared layer and, if present, the section
/// for `experiment`.
pub fn parse_file(text: &str, experiment: Experiment) -> Result<Vec<Layer>> {
    let f: FileConfig = toml::from_str(text)?;
    let mut layers = vec![Layer { run: f.run.clone(), process: f.process.clone(), params: f.params.clone() }];
    if let Some(s) = f.section(experiment) {
        layers.push(Layer { params: s.clone(), ..Layer::default() });
    }
    Ok(layers)
}

pub fn load_file(path: &Path, experiment: Experiment) -> Result<Vec<Layer>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| GsurfError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_file(&text, experiment)
}

/// Comma-separated list of numbers; an empty string is an empty list.
pub fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| GsurfError::Config(format!("'{t}' is not a number")).into()))
        .collect()
}

/// Fully resolved settings of one run, echoed in the report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub process: ProcessSpec,
    pub n_paths: usize,
    pub grid: usize,
    pub seed: u64,
    pub r: Vec<f64>,
    pub eps: Vec<f64>,
    pub k: usize,
    pub bandwidth: Option<f64>,
    pub cutoff: f64,
    pub joint: bool,
    pub density: DensitySource,
}

fn last<T: Clone>(layers: &[Layer], f: impl Fn(&Layer) -> Option<T>) -> Option<T> {
    layers.iter().rev().find_map(f)
}

impl ExperimentConfig {
    /// Merges `layers` over the defaults and validates the result.
    pub fn resolve(experiment: Experiment, layers: &[Layer]) -> Result<Self> {
        let kind = last(layers, |l| l.process.kind).unwrap_or(ProcessKind::Bm);
        let b = last(layers, |l| l.process.b).unwrap_or(1.0);
        let sigma = last(layers, |l| l.process.sigma).unwrap_or(1.0);
        let a = last(layers, |l| l.process.a).unwrap_or(1.0);
        let r_given = last(layers, |l| l.params.r.clone());
        if experiment == Experiment::Limit && r_given.is_some() {
            return Err(GsurfError::Config(format!("limit levels are fixed at {LIMIT_LEVELS:?}")).into());
        }
        let cfg = Self {
            experiment,
            process: ProcessSpec::from_parts(kind, b, sigma, a)?,
            n_paths: last(layers, |l| l.run.n_paths).unwrap_or_else(|| experiment.default_paths()),
            grid: last(layers, |l| l.run.grid).unwrap_or(400),
            seed: last(layers, |l| l.run.seed).unwrap_or(1),
            r: r_given.unwrap_or_else(|| experiment.default_levels()),
            eps: last(layers, |l| l.params.eps.clone()).unwrap_or_else(|| vec![0.2, 0.1, 0.05, 0.025]),
            k: last(layers, |l| l.params.k).unwrap_or(1),
            bandwidth: last(layers, |l| l.params.bandwidth),
            cutoff: last(layers, |l| l.params.cutoff).unwrap_or(1.0),
            joint: last(layers, |l| l.params.joint).unwrap_or(false),
            density: last(layers, |l| l.params.density).unwrap_or(DensitySource::Oracle),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        Ok(TimeGrid::new(self.grid)?)
    }

    /// Rejects every combination the target module does not support.
    pub fn validate(&self) -> Result<()> {
        let config = |m: String| -> Result<()> { Err(GsurfError::Config(m).into()) };
        self.time_grid()?;
        let p = self.process.validated()?;
        if self.n_paths < 1000 {
            return config(format!("n_paths must be >= 1000, got {}", self.n_paths));
        }
        if self.r.is_empty() {
            return config("the r list is empty".into());
        }
        if self.eps.is_empty() {
            return config("the eps list is empty".into());
        }
        if self.r.iter().any(|r| !r.is_finite()) {
            return config("levels must be finite".into());
        }
        if self.eps.iter().any(|e| !(*e > 0.0 && e.is_finite())) || self.eps.windows(2).any(|w| w[1] >= w[0]) {
            return config("eps must be positive and strictly decreasing".into());
        }
        if let Some(h) = self.bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return config(format!("bandwidth must be > 0, got {h}"));
            }
        }
        let negative = || -> Result<()> {
            match self.r.iter().find(|r| !(**r < 0.0)) {
                Some(r) => Err(GsurfError::Precondition(format!("level r = {r} must be < 0")).into()),
                None => Ok(()),
            }
        };
        let bm_only = |what: &str| -> Result<()> {
            if p.kind != ProcessKind::Bm {
                return Err(GsurfError::Unsupported(format!("{what} is implemented for bm, not {}", p.kind)).into());
            }
            Ok(())
        };
        if self.joint && self.experiment != Experiment::IbpHalfspace {
            return config("joint applies to ibp-halfspace only".into());
        }
        match self.experiment {
            Experiment::DensityCheck | Experiment::ShellConvergence | Experiment::Moments => {
                for r in &self.r {
                    min_density(&p, *r)?;
                }
            }
            Experiment::IbpFlat => require_pairing(&p)?,
            Experiment::IbpHalfspace => {
                negative()?;
                require_halfspace(&p)?;
                if self.joint {
                    require_joint(&p)?;
                    if self.density == DensitySource::Estimated {
                        return config("the joint form uses the closed-form joint density only".into());
                    }
                }
            }
            Experiment::IbpJoint => {
                negative()?;
                require_joint(&p)?;
            }
            Experiment::Limit => {
                limit_kind(&p)?;
            }
            Experiment::Neumann => {
                negative()?;
                bm_only("the Neumann identity")?;
                trig_suite(self.k)?;
            }
            Experiment::Lemma21 => {
                bm_only("lemma21")?;
                let c = CutoffSpec::new(self.cutoff)?;
                if let Some(r) = self.r.iter().find(|r| !(**r > c.a)) {
                    return Err(GsurfError::Precondition(format!("level {r} must exceed the cutoff {}", c.a)).into());
                }
            }
        }
        Ok(())
    }
}

/// Limit law attached to a process: bm gives the meander, the bridge the 3-d
/// Bessel bridge and the distorted process the tilted meander.
pub fn limit_kind(p: &ProcessSpec) -> Result<LimitKind> {
    match p.kind {
        ProcessKind::Bm => Ok(LimitKind::Meander),
        ProcessKind::Bridge => Ok(LimitKind::Bessel),
        ProcessKind::Distorted => Ok(LimitKind::Tilted { b: p.b, sigma: p.sigma }),
        other => Err(GsurfError::Unsupported(format!("no limit identity for {other}")).into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lists_parse_with_blanks_and_negatives() {
        assert_eq!(parse_list(" -1, -0.5 ,").unwrap(), vec![-1.0, -0.5]);
        assert!(parse_list("").unwrap().is_empty());
        assert!(parse_list("1,x").is_err());
    }

    #[test]
    fn later_layers_win_and_defaults_fill_the_rest() {
        let file = parse_file("[params]\nr = [-2.0]\nk = 3\n[neumann]\nr = [-1.5]\n", Experiment::Neumann).unwrap();
        let mut flags = Layer::default();
        flags.params.k = Some(2);
        let layers: Vec<Layer> = file.into_iter().chain([flags]).collect();
        let c = ExperimentConfig::resolve(Experiment::Neumann, &layers).unwrap();
        assert_eq!(c.r, vec![-1.5]);
        assert_eq!(c.k, 2);
        assert_eq!(c.grid, 400);
        assert_eq!(c.n_paths, Experiment::Neumann.default_paths());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(parse_file("[params]\nbandwith = 0.1\n", Experiment::Limit).is_err());
        assert!(parse_file("[extra]\n", Experiment::Limit).is_err());
    }
}
