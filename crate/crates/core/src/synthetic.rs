//! Three-channel synthetic series: two phase-modulated sinusoids sharing an
//! offset `a` and a plain sinusoid with phase `b`, each channel observed on
//! a Poisson-sampled window with Gaussian noise.

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, IncompleteSeries, TruthParams};
use crate::error::{Error, Result};
use crate::rng;

pub const CHANNELS: usize = 3;

/// Channel-3 frequency of the unlabeled process and of class 0.
pub const BASE_FREQUENCY: f64 = 12.0;
/// Channel-3 frequency of class 1 in the labeled variant.
pub const ALT_FREQUENCY: f64 = 15.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub n_cases: usize,
    /// Poisson rate per unit time.
    pub rate: f64,
    pub window: f64,
    /// Window starts are uniform on `[0, start_max]`.
    pub start_max: f64,
    pub noise_std: f64,
    pub seed: u64,
    pub labeled: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_cases: 10_000,
            rate: 30.0,
            window: 0.25,
            start_max: 0.75,
            noise_std: 0.01,
            seed: 0,
            labeled: false,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate > 0.0) || !(self.window > 0.0) || !(self.start_max >= 0.0) {
            return Err(Error::invalid("rate and window must be positive, start_max non-negative"));
        }
        if self.start_max + self.window > 1.0 {
            return Err(Error::invalid(format!(
                "window [{}, {}] leaves [0, 1]",
                self.start_max,
                self.start_max + self.window
            )));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::invalid(format!("noise std must be non-negative, got {}", self.noise_std)));
        }
        Ok(())
    }
}

/// Noiseless value of channel 1, 2 or 3 with channel-3 frequency `freq`.
pub fn truth_value_with_frequency(p: &TruthParams, channel: usize, t: f64, freq: f64) -> Result<f64> {
    let u = 20.0 * (t + p.a);
    let v = 20.0 * (t + p.a + 20.0);
    match channel {
        1 => Ok(0.8 * (u + u.sin()).sin()),
        2 => Ok(-0.5 * (v + v.sin()).sin()),
        3 => Ok((freq * (t + p.b)).sin()),
        c => Err(Error::InvalidChannel(c)),
    }
}

/// Noiseless value of channel 1, 2 or 3 of the unlabeled process.
pub fn truth_value(p: &TruthParams, channel: usize, t: f64) -> Result<f64> {
    truth_value_with_frequency(p, channel, t, BASE_FREQUENCY)
}

/// Channel-3 frequency implied by a case's label.
pub fn frequency_for(label: Option<usize>) -> f64 {
    if label == Some(1) {
        ALT_FREQUENCY
    } else {
        BASE_FREQUENCY
    }
}

/// Noiseless value of a generated case (channel 1-based), honoring the
/// labeled variant.
pub fn case_truth(case: &IncompleteSeries, channel: usize, t: f64) -> Result<f64> {
    let p = case
        .truth
        .as_ref()
        .ok_or_else(|| Error::invalid("case carries no truth parameters"))?;
    truth_value_with_frequency(p, channel, t, frequency_for(case.label))
}

/// Draws one case. The label, when requested, is drawn first, then the
/// truth parameters, then each channel's window, count, times and noise.
pub fn sample_case<R: Rng>(cfg: &GeneratorConfig, rng: &mut R) -> Result<IncompleteSeries> {
    cfg.validate()?;
    let label = cfg.labeled.then(|| usize::from(rng.random_bool(0.5)));
    let a = Normal::new(0.0, 10.0).expect("valid normal").sample(rng);
    let b = rng.random_range(0.0..10.0);
    let p = TruthParams { a, b };
    let freq = frequency_for(label);
    let count = Poisson::new(cfg.rate * cfg.window)
        .map_err(|e| Error::invalid(format!("Poisson rate: {e}")))?;
    let mut channels = Vec::with_capacity(CHANNELS);
    for c in 1..=CHANNELS {
        let d = rng.random_range(0.0..=cfg.start_max);
        let n = count.sample(rng) as usize;
        let mut times: Vec<f64> = (0..n).map(|_| d + cfg.window * rng.random::<f64>()).collect();
        times.sort_by(f64::total_cmp);
        let mut obs = Vec::with_capacity(n);
        for t in times {
            let eps: f64 = StandardNormal.sample(rng);
            obs.push((t, truth_value_with_frequency(&p, c, t, freq)? + cfg.noise_std * eps));
        }
        channels.push(obs);
    }
    Ok(IncompleteSeries {
        channels,
        label,
        truth: Some(p),
    })
}

/// `n_cases` independent cases; case `i` uses its own stream derived from
/// `(seed, i)`, so the result does not depend on thread scheduling.
pub fn generate_dataset(cfg: &GeneratorConfig) -> Result<Dataset> {
    cfg.validate()?;
    let cases = (0..cfg.n_cases)
        .into_par_iter()
        .map(|i| sample_case(cfg, &mut rng::stream(cfg.seed, rng::SYNTH, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let description = if cfg.labeled {
        "synthetic three-channel series, two-frequency labeled variant"
    } else {
        "synthetic three-channel series"
    };
    let mut d = Dataset::new(CHANNELS, Some(cfg.seed), description);
    d.cases = cases;
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truth_examples() {
        let p = TruthParams { a: 0.3, b: 0.0 };
        assert_eq!(truth_value(&p, 3, 0.0).unwrap(), 0.0);
        assert!(truth_value(&p, 4, 0.0).is_err());
        assert!(truth_value(&p, 0, 0.0).is_err());
        for i in 0..200 {
            let t = i as f64 / 199.0;
            let p = TruthParams { a: i as f64 * 0.37 - 30.0, b: 1.0 };
            assert!(truth_value(&p, 1, t).unwrap().abs() <= 0.8);
            assert!(truth_value(&p, 2, t).unwrap().abs() <= 0.5);
        }
    }

    #[test]
    fn noiseless_values_equal_truth() {
        let cfg = GeneratorConfig {
            n_cases: 20,
            noise_std: 0.0,
            seed: 3,
            ..Default::default()
        };
        let d = generate_dataset(&cfg).unwrap();
        for case in &d.cases {
            for (c, obs) in case.channels.iter().enumerate() {
                for &(t, x) in obs {
                    assert_eq!(x, case_truth(case, c + 1, t).unwrap());
                }
            }
        }
    }

    #[test]
    fn windows_stay_inside_unit_interval() {
        let cfg = GeneratorConfig {
            n_cases: 200,
            seed: 4,
            ..Default::default()
        };
        for case in generate_dataset(&cfg).unwrap().cases {
            for obs in &case.channels {
                if let (Some(first), Some(last)) = (obs.first(), obs.last()) {
                    assert!(first.0 >= 0.0 && last.0 <= 1.0);
                    assert!(last.0 - first.0 <= cfg.window);
                }
            }
        }
    }

    #[test]
    fn deterministic_and_empty() {
        let cfg = GeneratorConfig {
            n_cases: 30,
            seed: 7,
            labeled: true,
            ..Default::default()
        };
        assert_eq!(generate_dataset(&cfg).unwrap(), generate_dataset(&cfg).unwrap());
        let empty = GeneratorConfig {
            n_cases: 0,
            ..cfg
        };
        assert!(generate_dataset(&empty).unwrap().is_empty());
    }

    #[test]
    fn rejects_window_outside_interval() {
        let cfg = GeneratorConfig {
            start_max: 0.8,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
