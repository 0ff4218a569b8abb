//! Experiment configuration (TOML), presets and the resolved run plan.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::forward::CouplingMode;
use crate::problem::BsdeProblem;
use crate::problems::{product_problem, sine_problem, GoodDealParams, PdeSettings};
use crate::regression::BasisSpec;
use crate::schedule::{calibrate_schedule, doubling_downward, ScheduleConstants};
use crate::timegrid::{GridFamily, GridKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProblemSpec {
    Sine,
    Product {
        #[serde(default = "three")]
        dim: usize,
    },
    Gooddeal {
        #[serde(default)]
        params: GoodDealParams,
        #[serde(default)]
        pde: PdeSettings,
        /// Directory of a persisted PDE table; solved on the fly when absent.
        #[serde(default)]
        table: Option<PathBuf>,
    },
}

fn three() -> usize {
    3
}

impl ProblemSpec {
    pub fn build(&self) -> Result<BsdeProblem> {
        match self {
            ProblemSpec::Sine => Ok(sine_problem()?.0),
            ProblemSpec::Product { dim } => Ok(product_problem(*dim)?.0),
            ProblemSpec::Gooddeal { params, .. } => params.problem(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Ml,
    Mdp,
    Mdp2,
    SplitMl,
    SplitMdp,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Ml => "ml",
            Scheme::Mdp => "mdp",
            Scheme::Mdp2 => "mdp2",
            Scheme::SplitMl => "split-ml",
            Scheme::SplitMdp => "split-mdp",
        }
    }

    pub fn is_multilevel(self) -> bool {
        matches!(self, Scheme::Ml | Scheme::SplitMl)
    }
}

/// How ML fills the levels below the final one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LowerLevels {
    #[default]
    Same,
    Doubling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PathRule {
    Fixed {
        paths: usize,
    },
    /// `factor * K * 2^{growth k}` with `K` the basis dimension.
    BasisScaled {
        factor: f64,
        growth: u32,
    },
    /// `paths[j]` at level `j`.
    Explicit {
        paths: Vec<usize>,
    },
    Calibrated {
        epsilon: f64,
        #[serde(default = "one")]
        theta: f64,
        #[serde(default)]
        constants: ScheduleConstants,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSpec {
    pub scheme: Scheme,
    /// Row label in the outputs; defaults to the scheme name.
    #[serde(default)]
    pub label: Option<String>,
    pub basis: BasisSpec,
    #[serde(default)]
    pub paths: Option<PathRule>,
    #[serde(default)]
    pub lower_levels: LowerLevels,
    /// Basis of the residual part of split schemes (defaults to `basis`).
    #[serde(default)]
    pub residual_basis: Option<BasisSpec>,
    /// Per-time-point cloud sizes of the residual part (defaults to the
    /// final-level count).
    #[serde(default)]
    pub residual_paths: Option<usize>,
}

impl SchemeSpec {
    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.scheme.name().to_uppercase())
    }

    fn default_rule(&self) -> PathRule {
        let growth = if self.scheme == Scheme::Mdp2 { 2 } else { 1 };
        PathRule::BasisScaled { factor: 40.0, growth }
    }

    /// Path counts for levels `0..=k` (multilevel) or `[M_k]` otherwise.
    pub fn resolve_paths(&self, k: usize, d: usize, family: &GridFamily) -> Result<Vec<usize>> {
        let rule = self.paths.clone().unwrap_or_else(|| self.default_rule());
        let final_paths = |k: usize| -> Result<usize> {
            match &rule {
                PathRule::Fixed { paths } => Ok(*paths),
                PathRule::BasisScaled { factor, growth } => {
                    let m = factor * self.basis.dim(d) as f64 * 2f64.powi((*growth as usize * k) as i32);
                    Ok(m.ceil() as usize)
                }
                PathRule::Explicit { paths } => paths
                    .get(k)
                    .copied()
                    .ok_or_else(|| Error::Config(format!("explicit path list has no entry for level {k}"))),
                PathRule::Calibrated { epsilon, theta, constants } => {
                    Ok(calibrate_schedule(*epsilon, d, *theta, family, k, *constants)?.levels[k].paths)
                }
            }
        };
        let paths = if self.scheme.is_multilevel() {
            match (&rule, self.lower_levels) {
                (PathRule::Explicit { paths }, _) => {
                    if paths.len() <= k {
                        return Err(Error::Config(format!("explicit path list has no entry for level {k}")));
                    }
                    paths[..=k].to_vec()
                }
                (PathRule::Calibrated { epsilon, theta, constants }, _) => {
                    calibrate_schedule(*epsilon, d, *theta, family, k, *constants)?
                        .levels
                        .iter()
                        .map(|l| l.paths)
                        .collect()
                }
                (_, LowerLevels::Doubling) => doubling_downward(k, final_paths(k)?),
                (_, LowerLevels::Same) => vec![final_paths(k)?; k + 1],
            }
        } else {
            vec![final_paths(k)?]
        };
        if paths.contains(&0) {
            return Err(Error::Config(format!("scheme {} resolves to a level without paths", self.label())));
        }
        Ok(paths)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Truncation {
    pub c_y: f64,
    pub c_x: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub problem: ProblemSpec,
    #[serde(default = "uniform")]
    pub grid: GridKind,
    /// Inclusive range of final levels `k = log2 N`.
    pub levels: [usize; 2],
    pub seeds: Vec<u64>,
    pub eval_paths: usize,
    #[serde(default)]
    pub eval_seed: u64,
    pub schemes: Vec<SchemeSpec>,
    #[serde(default)]
    pub truncation: Option<Truncation>,
    #[serde(default)]
    pub mode: Option<CouplingMode>,
    #[serde(default)]
    pub mem_budget: Option<u64>,
    /// Overrides the path counts of every scheme with a fixed value.
    #[serde(default)]
    pub paths_override: Option<usize>,
}

fn uniform() -> GridKind {
    GridKind::Uniform
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn levels(&self) -> Vec<usize> {
        (self.levels[0]..=self.levels[1]).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels[0] > self.levels[1] || self.levels[1] > 20 {
            return Err(Error::Config(format!("bad level range {:?}", self.levels)));
        }
        if self.seeds.is_empty() || self.schemes.is_empty() || self.eval_paths == 0 {
            return Err(Error::Config("need at least one seed, one scheme and eval_paths > 0".into()));
        }
        let problem = self.problem()?;
        for s in &self.schemes {
            if s.scheme == Scheme::Ml && !problem.has_zero_driver() {
                return Err(Error::Config(format!(
                    "scheme `ml` needs a zero driver; use `split-ml` for problem {}",
                    problem.name
                )));
            }
        }
        Ok(())
    }

    pub fn problem(&self) -> Result<BsdeProblem> {
        let p = self.problem.build()?;
        match self.truncation {
            Some(t) => p.with_bounds(t.c_y, t.c_x),
            None => Ok(p),
        }
    }

    pub fn family(&self, horizon: f64) -> Result<GridFamily> {
        GridFamily::new(self.grid, horizon)
    }

    /// Resolves every run to concrete integers and hashes the result.
    pub fn resolve(&self) -> Result<ResolvedPlan> {
        let problem = self.problem()?;
        let family = self.family(problem.horizon)?;
        let d = problem.dim();
        let mut runs = Vec::new();
        for spec in &self.schemes {
            for k in self.levels() {
                let mut paths = spec.resolve_paths(k, d, &family)?;
                if let Some(m) = self.paths_override {
                    paths.iter_mut().for_each(|p| *p = m);
                }
                let split = matches!(spec.scheme, Scheme::SplitMl | Scheme::SplitMdp);
                let residual_paths = (split || (!problem.has_zero_driver() && !spec.scheme.is_multilevel()))
                    .then(|| self.paths_override.or(spec.residual_paths).unwrap_or(*paths.last().unwrap()));
                runs.push(ResolvedRun {
                    label: spec.label(),
                    scheme: spec.scheme,
                    level: k,
                    paths,
                    residual_paths,
                    basis_dim: spec.basis.dim(d),
                    seeds: self.seeds.clone(),
                });
            }
        }
        let mut plan = ResolvedPlan { config: self.clone(), runs, hash: String::new() };
        let bytes = serde_json::to_vec(&(&plan.config, &plan.runs))?;
        plan.hash = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
        Ok(plan)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedRun {
    pub label: String,
    pub scheme: Scheme,
    pub level: usize,
    /// Per level `0..=k` for multilevel schemes, a single count otherwise.
    pub paths: Vec<usize>,
    pub residual_paths: Option<usize>,
    pub basis_dim: usize,
    pub seeds: Vec<u64>,
}

impl ResolvedRun {
    /// `sum_j M_j 2^j` of the linear part, plus `sum_i M (2^k - i)` for
    /// per-time-point clouds.
    pub fn cost(&self) -> f64 {
        let lin = if self.scheme.is_multilevel() {
            self.paths.iter().enumerate().map(|(j, &m)| m as f64 * 2f64.powi(j as i32)).sum()
        } else {
            self.paths[0] as f64 * 2f64.powi(self.level as i32)
        };
        let n = 2f64.powi(self.level as i32);
        lin + self.residual_paths.map_or(0.0, |m| m as f64 * n * (n + 1.0) / 2.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedPlan {
    pub config: ExperimentConfig,
    pub runs: Vec<ResolvedRun>,
    pub hash: String,
}

pub const PRESETS: [&str; 3] = ["sine", "product-3d", "gooddeal"];

const SINE: &str = r#"
name = "sine"
problem = { kind = "sine" }
levels = [2, 7]
seeds = [1, 2, 3, 4, 5]
eval_paths = 20000

[[schemes]]
scheme = "ml"
basis = { kind = "hermite", degree = 7 }
paths = { rule = "basis-scaled", factor = 40.0, growth = 1 }
lower_levels = "doubling"

[[schemes]]
scheme = "mdp"
label = "MDP1"
basis = { kind = "hermite", degree = 7 }
paths = { rule = "basis-scaled", factor = 40.0, growth = 1 }

[[schemes]]
scheme = "mdp2"
label = "MDP2"
basis = { kind = "hermite", degree = 7 }
paths = { rule = "basis-scaled", factor = 40.0, growth = 2 }
"#;

const PRODUCT_3D: &str = r#"
name = "product-3d"
problem = { kind = "product", dim = 3 }
levels = [2, 7]
seeds = [1]
eval_paths = 20000

[[schemes]]
scheme = "ml"
label = "ML (linear)"
basis = { kind = "equiprobable", cells = 5, affine = true }
paths = { rule = "fixed", paths = 2000000 }

[[schemes]]
scheme = "mdp"
label = "MDP (linear)"
basis = { kind = "equiprobable", cells = 5, affine = true }
paths = { rule = "fixed", paths = 2000000 }

[[schemes]]
scheme = "ml"
label = "ML (indicator)"
basis = { kind = "equiprobable", cells = 8 }
paths = { rule = "fixed", paths = 2000000 }

[[schemes]]
scheme = "mdp"
label = "MDP (indicator)"
basis = { kind = "equiprobable", cells = 8 }
paths = { rule = "fixed", paths = 2000000 }
"#;

const GOODDEAL: &str = r#"
name = "gooddeal"
problem = { kind = "gooddeal" }
levels = [1, 5]
seeds = [1]
eval_paths = 20000

[[schemes]]
scheme = "split-mdp"
label = "MDP"
basis = { kind = "equiprobable", cells = 50 }
paths = { rule = "fixed", paths = 2000000 }

[[schemes]]
scheme = "split-ml"
label = "ML"
basis = { kind = "equiprobable", cells = 50 }
paths = { rule = "fixed", paths = 2000000 }
"#;

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let text = match name {
        "sine" => SINE,
        "product-3d" => PRODUCT_3D,
        "gooddeal" => GOODDEAL,
        other => return Err(Error::Config(format!("unknown preset `{other}`; known: {}", PRESETS.join(", ")))),
    };
    ExperimentConfig::from_toml(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_resolve() {
        for name in PRESETS {
            let plan = preset(name).unwrap().resolve().unwrap();
            assert_eq!(plan.hash.len(), 64);
            assert_eq!(plan, preset(name).unwrap().resolve().unwrap());
        }
        let plan = preset("sine").unwrap().resolve().unwrap();
        let ml7 = plan.runs.iter().find(|r| r.label == "ML" && r.level == 7).unwrap();
        assert_eq!(ml7.paths[7], 40 * 8 * 128);
        assert_eq!(ml7.paths[0], 40 * 8 * 128 * 128);
        let mdp2 = plan.runs.iter().find(|r| r.label == "MDP2" && r.level == 3).unwrap();
        assert_eq!(mdp2.paths, vec![40 * 8 * 64]);
        let multid = preset("product-3d").unwrap().resolve().unwrap();
        assert_eq!(multid.runs.len(), 24);
        assert_eq!(multid.runs[0].basis_dim, 500);
        assert_eq!(multid.runs[12].basis_dim, 512);
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = SINE.replace("eval_paths", "eval_path");
        let err = ExperimentConfig::from_toml(&bad).unwrap_err().to_string();
        assert!(err.contains("eval_path"), "{err}");
        let bad = SINE.replace("degree = 7 }", "degree = 7, cells = 3 }");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
    }

    #[test]
    fn ml_needs_zero_driver() {
        let bad = GOODDEAL.replace("split-ml", "ml");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
    }

    #[test]
    fn override_and_hash_change() {
        let mut c = preset("gooddeal").unwrap();
        let h0 = c.resolve().unwrap().hash;
        c.paths_override = Some(1000);
        let plan = c.resolve().unwrap();
        assert_ne!(plan.hash, h0);
        assert!(plan.runs.iter().all(|r| r.paths.iter().all(|&m| m == 1000) && r.residual_paths == Some(1000)));
    }
}
