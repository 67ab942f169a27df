//! Effective experiment configuration: defaults, then the `--config` TOML
//! file, then command-line flags.

use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use degenlab::Mesh1D;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub alpha: f64,
    /// Observation / control window `(a, b)`.
    pub a: f64,
    pub b: f64,
    #[serde(alias = "T")]
    pub t_final: f64,
    pub gamma: f64,
    pub s_grid: Vec<f64>,
    pub k_grid: Vec<usize>,
    /// Window on which truncated-domain errors are measured.
    pub sweep_window: [f64; 2],
    pub n: usize,
    /// Mesh grading exponent; `None` selects `2/(1-α)` clamped to `[1, 4]`.
    pub grading: Option<f64>,
    pub n_t: usize,
    pub theta: f64,
    pub epsilons: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
    /// Exponent of the Muckenhoupt class tested by `ap-check`.
    pub p: f64,
    /// Dyadic depth of the `ap-check` interval families.
    pub levels: u32,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            a: 0.3,
            b: 0.6,
            t_final: 1.0,
            gamma: 1.0,
            s_grid: vec![1.0, 2.0, 4.0, 8.0],
            k_grid: vec![2, 4, 8, 16, 32],
            sweep_window: [0.3, 0.7],
            n: 512,
            grading: None,
            n_t: 256,
            theta: 0.5,
            epsilons: vec![1e-1, 1e-2, 1e-3, 1e-4],
            samples: 20,
            seed: 42,
            p: 3.0,
            levels: 12,
        }
    }
}

// Flags mirror ExperimentConfig; unset flags leave the value alone.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Degeneracy exponent of w(x) = x^alpha, in [0, 1)
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Left end of the observation window
    #[arg(long, global = true)]
    pub a: Option<f64>,
    /// Right end of the observation window
    #[arg(long, global = true)]
    pub b: Option<f64>,
    /// Final time T
    #[arg(long = "t-final", visible_alias = "T", global = true)]
    pub t_final: Option<f64>,
    /// Carleman parameter gamma >= 1
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    /// Carleman parameters s, comma separated
    #[arg(long, value_delimiter = ',', global = true)]
    pub s_grid: Option<Vec<f64>>,
    /// Truncation indices k >= 2, comma separated
    #[arg(long, value_delimiter = ',', global = true)]
    pub k_grid: Option<Vec<usize>>,
    /// Window for truncated-domain errors, as a,b
    #[arg(long, value_delimiter = ',', global = true)]
    pub sweep_window: Option<Vec<f64>>,
    /// Number of mesh elements
    #[arg(long, global = true)]
    pub n: Option<usize>,
    /// Mesh grading exponent (default 2/(1-alpha) clamped to [1, 4])
    #[arg(long, global = true)]
    pub grading: Option<f64>,
    /// Number of time steps
    #[arg(long, global = true)]
    pub n_t: Option<usize>,
    /// Time-stepping parameter in [0.5, 1]
    #[arg(long, global = true)]
    pub theta: Option<f64>,
    /// HUM penalty ladder, comma separated
    #[arg(long, value_delimiter = ',', global = true)]
    pub epsilons: Option<Vec<f64>>,
    /// Number of random samples
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    /// Seed for all random data
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Muckenhoupt exponent for ap-check
    #[arg(long, global = true)]
    pub p: Option<f64>,
    /// Dyadic depth for ap-check
    #[arg(long, global = true)]
    pub levels: Option<u32>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("cannot read config file {}", p.display()))?;
                Self::from_toml(&text)
                    .with_context(|| format!("malformed config file {}", p.display()))
            }
        }
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        macro_rules! set {
            ($($f:ident),*) => {$(
                if let Some(v) = &o.$f {
                    self.$f = v.clone();
                }
            )*};
        }
        set!(
            alpha, a, b, t_final, gamma, s_grid, k_grid, n, n_t, theta, epsilons, samples, seed, p,
            levels
        );
        if let Some(q) = o.grading {
            self.grading = Some(q);
        }
        if let Some(w) = &o.sweep_window {
            match w[..] {
                [lo, hi] => self.sweep_window = [lo, hi],
                _ => bail!(
                    "--sweep-window takes exactly two values a,b, got {}",
                    w.len()
                ),
            }
        }
        Ok(())
    }

    pub fn grading(&self) -> f64 {
        self.grading
            .unwrap_or_else(|| Mesh1D::default_grading(self.alpha))
    }

    pub fn window(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    /// Parse-time checks with the offending field named.
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.alpha) {
            bail!(
                "alpha = {} must lie in [0, 1) (weakly degenerate case)",
                self.alpha
            );
        }
        let window_ok = |a: f64, b: f64| 0.0 < a && a < b && b < 1.0;
        if !window_ok(self.a, self.b) {
            bail!(
                "window a = {}, b = {} must satisfy 0 < a < b < 1",
                self.a,
                self.b
            );
        }
        let [sa, sb] = self.sweep_window;
        if !window_ok(sa, sb) {
            bail!("sweep_window = [{sa}, {sb}] must satisfy 0 < a < b < 1");
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            bail!("t_final = {} must be positive", self.t_final);
        }
        if !(self.gamma >= 1.0) {
            bail!("gamma = {} must be >= 1", self.gamma);
        }
        if self.s_grid.is_empty() || self.s_grid.iter().any(|&s| !(s >= 1.0 && s.is_finite())) {
            bail!("s_grid must be a non-empty list of values >= 1");
        }
        if self.k_grid.is_empty() || self.k_grid.iter().any(|&k| k < 2) {
            bail!("k_grid must be a non-empty list of integers >= 2");
        }
        if self.n < 4 {
            bail!("n = {} must be at least 4 elements", self.n);
        }
        if let Some(q) = self.grading {
            if !(q >= 1.0 && q.is_finite()) {
                bail!("grading = {q} must be >= 1");
            }
        }
        if self.n_t < degenlab::parabolic::MIN_TIME_STEPS {
            bail!(
                "n_t = {} must be at least {}",
                self.n_t,
                degenlab::parabolic::MIN_TIME_STEPS
            );
        }
        if !(0.5..=1.0).contains(&self.theta) {
            bail!(
                "theta = {} must lie in [0.5, 1] for an unconditionally stable scheme",
                self.theta
            );
        }
        if self.epsilons.is_empty() || self.epsilons.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
            bail!("epsilons must be a non-empty list of positive values");
        }
        if self.samples == 0 {
            bail!("samples must be at least 1");
        }
        if !(self.p > 1.0 && self.p.is_finite()) {
            bail!("p = {} must exceed 1", self.p);
        }
        if self.levels > 40 {
            bail!("levels = {} must be at most 40", self.levels);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(
            ExperimentConfig::from_toml("").unwrap(),
            ExperimentConfig::default()
        );
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn default_grading_follows_alpha() {
        let c = ExperimentConfig::default();
        assert_eq!(c.grading(), 4.0);
    }

    #[test]
    fn file_then_flags() {
        let mut c = ExperimentConfig::from_toml("alpha = 0.3\nT = 2.0\nseed = 7\n").unwrap();
        assert_eq!((c.alpha, c.t_final, c.seed), (0.3, 2.0, 7));
        c.apply(&Overrides {
            seed: Some(9),
            k_grid: Some(vec![2, 4]),
            ..Default::default()
        })
        .unwrap();
        assert_eq!((c.alpha, c.seed), (0.3, 9));
        assert_eq!(c.k_grid, vec![2, 4]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml("alpah = 0.3").is_err());
        assert!(ExperimentConfig::from_toml("alpha = \"x\"").is_err());
    }

    #[test]
    fn validation_names_the_field() {
        let d = ExperimentConfig::default;
        let c = ExperimentConfig { alpha: 1.2, ..d() };
        assert!(c.validate().unwrap_err().to_string().contains("alpha"));
        let c = ExperimentConfig { b: 0.2, ..d() };
        assert!(c.validate().unwrap_err().to_string().contains("window"));
        let c = ExperimentConfig {
            epsilons: vec![1e-2, 0.0],
            ..d()
        };
        assert!(c.validate().unwrap_err().to_string().contains("epsilons"));
    }
}
