//! Controlled four-channel benchmark.
//!
//! Each instance carries amplitudes `(A1, A2)` drawn from an isotropic
//! Gaussian whose mean depends on the class; `theta` decides how the class
//! separation is split between channel 1 (`sin θ`) and channel 2 (`cos θ`).
//! Channel 3 is a sinusoid with class-independent amplitude and channel 4
//! is empty, so both are irrelevant. White noise is added everywhere.

use std::f64::consts::PI;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as NormalDist};

use crate::data::Dataset;
use crate::error::{Error, Result};

pub const SYNTH_CHANNELS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Degrees in [0, 90].
    pub theta: f64,
    pub n_per_class: usize,
    pub n_timesteps: usize,
    pub sigma_amp: f64,
    /// Distance between the class means in the (A1, A2) plane.
    pub separation: f64,
    /// Mean of both amplitudes for class 0, and of the channel-3 amplitude.
    pub base_amp: f64,
    /// Cycles per window for channels 1, 2 and 3.
    pub freqs: [f64; 3],
    pub noise_sigma: f64,
    /// When positive, instances are assigned round-robin to this many
    /// subjects within each class.
    pub n_subjects: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            theta: 45.0,
            n_per_class: 250,
            n_timesteps: 512,
            sigma_amp: 1.0,
            separation: 2.0,
            base_amp: 5.0,
            freqs: [3.0, 7.0, 5.0],
            noise_sigma: 1.0,
            n_subjects: 0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(0.0..=90.0).contains(&self.theta) {
            return bad(format!("theta must lie in [0, 90] degrees, got {}", self.theta));
        }
        if self.n_per_class == 0 {
            return bad("n_per_class must be positive".into());
        }
        if self.n_timesteps < crate::data::MIN_TIMESTEPS {
            return bad(format!(
                "n_timesteps must be at least {}",
                crate::data::MIN_TIMESTEPS
            ));
        }
        if !(self.sigma_amp > 0.0 && self.sigma_amp.is_finite()) {
            return bad("sigma_amp must be positive".into());
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return bad("separation must be non-negative".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be non-negative".into());
        }
        if !self.base_amp.is_finite() {
            return bad("base_amp must be finite".into());
        }
        let f = self.freqs;
        if f.iter().any(|v| !(*v > 0.0 && v.is_finite())) || f[0] == f[1] || f[0] == f[2] || f[1] == f[2] {
            return bad("frequencies must be positive and distinct".into());
        }
        if self.n_subjects > self.n_per_class {
            return bad("n_subjects cannot exceed n_per_class".into());
        }
        Ok(())
    }

    /// Mean amplitudes `(A1, A2)` for a class label.
    pub fn class_mean(&self, label: u8) -> (f64, f64) {
        let m = self.base_amp;
        if label == 0 {
            (m, m)
        } else {
            let t = self.theta.to_radians();
            (m + self.separation * t.sin(), m + self.separation * t.cos())
        }
    }
}

/// Latent amplitudes of one instance for channels 1 to 3.
pub type Amplitudes = [f64; 3];

pub fn generate(config: &SynthConfig) -> Result<Dataset> {
    Ok(generate_with_amplitudes(config)?.0)
}

/// The dataset together with each instance's latent amplitudes, in the
/// dataset's (shuffled) order.
pub fn generate_with_amplitudes(config: &SynthConfig) -> Result<(Dataset, Vec<Amplitudes>)> {
    config.validate()?;
    let n = 2 * config.n_per_class;
    let t = config.n_timesteps;
    let amp_dist = Normal::new(0.0, config.sigma_amp).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let noise_dist =
        Normal::new(0.0, config.noise_sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let waves: Vec<Vec<f64>> = config
        .freqs
        .iter()
        .map(|f| (0..t).map(|s| (2.0 * PI * f * s as f64 / t as f64).sin()).collect())
        .collect();

    // Instance k (class k / n_per_class) draws from its own stream, so its
    // content does not depend on generation order.
    let mut raw = Vec::with_capacity(n);
    for k in 0..n {
        let label = (k / config.n_per_class) as u8;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(k as u64 + 1);
        let (m1, m2) = config.class_mean(label);
        let amps = [
            m1 + amp_dist.sample(&mut rng),
            m2 + amp_dist.sample(&mut rng),
            config.base_amp + amp_dist.sample(&mut rng),
        ];
        let mut values = Vec::with_capacity(SYNTH_CHANNELS * t);
        for (c, wave) in waves.iter().enumerate() {
            values.extend(wave.iter().map(|w| amps[c] * w));
        }
        values.extend(std::iter::repeat(0.0).take(t));
        if config.noise_sigma > 0.0 {
            for v in &mut values {
                *v += noise_dist.sample(&mut rng);
            }
        }
        for v in &mut values {
            *v = *v as f32 as f64;
        }
        let subject = (config.n_subjects > 0).then(|| (k % config.n_per_class % config.n_subjects) as i64);
        raw.push((label, amps, values, subject));
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(0);
    order.shuffle(&mut rng);

    let mut values = Vec::with_capacity(n * SYNTH_CHANNELS * t);
    let mut labels = Vec::with_capacity(n);
    let mut amplitudes = Vec::with_capacity(n);
    let mut subjects = Vec::with_capacity(n);
    for &k in &order {
        let (label, amps, ref v, subject) = raw[k];
        values.extend_from_slice(v);
        labels.push(label);
        amplitudes.push(amps);
        if let Some(s) = subject {
            subjects.push(s);
        }
    }
    let mut dataset = Dataset::new(values, SYNTH_CHANNELS, t, labels)?
        .with_channel_names((1..=SYNTH_CHANNELS).map(|c| format!("ch{c}")).collect())?;
    if config.n_subjects > 0 {
        dataset = dataset.with_subject_ids(subjects)?;
    }
    Ok((dataset, amplitudes))
}

/// Accuracy of the optimal classifier for two isotropic Gaussians:
/// `Φ(separation / (2 σ))`. Independent of theta.
pub fn bayes_accuracy(config: &SynthConfig) -> f64 {
    let phi = NormalDist::new(0.0, 1.0).expect("standard normal");
    phi.cdf(config.separation / (2.0 * config.sigma_amp))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(theta: f64, n: usize, seed: u64) -> SynthConfig {
        SynthConfig {
            theta,
            n_per_class: n,
            n_timesteps: 64,
            seed,
            ..Default::default()
        }
    }

    /// Least-squares amplitude of `sin(2π f t / T)` in a series.
    fn fit_amplitude(series: &[f64], freq: f64) -> f64 {
        let t = series.len() as f64;
        let (mut num, mut den) = (0.0, 0.0);
        for (s, v) in series.iter().enumerate() {
            let w = (2.0 * PI * freq * s as f64 / t).sin();
            num += w * v;
            den += w * w;
        }
        num / den
    }

    fn ks_statistic(a: &mut [f64], b: &mut [f64]) -> f64 {
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let (mut i, mut j, mut d) = (0, 0, 0.0f64);
        while i < a.len() && j < b.len() {
            if a[i] <= b[j] {
                i += 1;
            } else {
                j += 1;
            }
            d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
        }
        d
    }

    #[test]
    fn bayes_bound_values() {
        let d = SynthConfig::default();
        assert!((bayes_accuracy(&d) - 0.8413).abs() < 1e-4);
        let zero = SynthConfig { separation: 0.0, ..d.clone() };
        assert_eq!(bayes_accuracy(&zero), 0.5);
        let four = SynthConfig { separation: 4.0, ..d.clone() };
        assert!((bayes_accuracy(&four) - 0.97725).abs() < 1e-4);
        let a = bayes_accuracy(&SynthConfig { theta: 0.0, ..d.clone() });
        let b = bayes_accuracy(&SynthConfig { theta: 45.0, ..d.clone() });
        let c = bayes_accuracy(&SynthConfig { theta: 90.0, ..d });
        assert!(a == b && b == c);
    }

    #[test]
    fn shape_and_balance() {
        let d = generate(&small(45.0, 20, 1)).unwrap();
        assert_eq!((d.n_instances(), d.n_channels(), d.n_timesteps()), (40, 4, 64));
        assert_eq!(d.class_counts(), [20, 20]);
        assert!(d.subject_ids().is_none());
        // Shuffled: not all of class 0 first.
        assert!(d.labels()[..20].iter().any(|&l| l == 1));
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = generate(&small(30.0, 10, 5)).unwrap();
        let b = generate(&small(30.0, 10, 5)).unwrap();
        let c = generate(&small(30.0, 10, 6)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn values_are_f32_representable() {
        let d = generate(&small(10.0, 5, 2)).unwrap();
        assert!(d.values().iter().all(|&v| v as f32 as f64 == v));
    }

    #[test]
    fn amplitudes_follow_class_means() {
        let cfg = SynthConfig { noise_sigma: 0.0, sigma_amp: 1e-9, ..small(45.0, 1, 3) };
        let (d, amps) = generate_with_amplitudes(&cfg).unwrap();
        for i in 0..2 {
            let a1 = fit_amplitude(d.series(i, 0), cfg.freqs[0]);
            let expected = if d.labels()[i] == 1 {
                cfg.base_amp + cfg.separation * 45f64.to_radians().sin()
            } else {
                cfg.base_amp
            };
            assert!((a1 - expected).abs() < 1e-5, "{a1} vs {expected}");
            assert!((amps[i][0] - expected).abs() < 1e-6);
            assert!(d.series(i, 3).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn uninformative_channel_at_extreme_angles() {
        // KS critical value at alpha 0.01 for two samples of 500.
        let crit = 1.628 * (2.0f64 / 500.0).sqrt();
        for (theta, channel) in [(0.0, 0), (90.0, 1)] {
            let (d, amps) = generate_with_amplitudes(&SynthConfig {
                n_timesteps: 16,
                ..small(theta, 500, 11)
            })
            .unwrap();
            let mut a: Vec<f64> = Vec::new();
            let mut b: Vec<f64> = Vec::new();
            for (i, amp) in amps.iter().enumerate() {
                if d.labels()[i] == 0 { a.push(amp[channel]) } else { b.push(amp[channel]) }
            }
            assert!(ks_statistic(&mut a, &mut b) < crit);
        }
    }

    #[test]
    fn optimal_projection_reaches_bayes_accuracy() {
        let cfg = SynthConfig { n_timesteps: 9, ..small(30.0, 5000, 4) };
        let (d, amps) = generate_with_amplitudes(&cfg).unwrap();
        let (m0, m1) = (cfg.class_mean(0), cfg.class_mean(1));
        let dir = (m1.0 - m0.0, m1.1 - m0.1);
        let mid = ((m0.0 + m1.0) / 2.0, (m0.1 + m1.1) / 2.0);
        let hits = amps
            .iter()
            .zip(d.labels())
            .filter(|(a, &l)| {
                let s = (a[0] - mid.0) * dir.0 + (a[1] - mid.1) * dir.1;
                u8::from(s >= 0.0) == l
            })
            .count();
        let acc = hits as f64 / 10_000.0;
        assert!((acc - bayes_accuracy(&cfg)).abs() < 0.02, "{acc}");
    }

    #[test]
    fn empty_channel_uncorrelated_with_label() {
        let cfg = small(45.0, 500, 9);
        let d = generate(&cfg).unwrap();
        let n = d.n_instances() as f64;
        let x: Vec<f64> = (0..d.n_instances()).map(|i| d.series(i, 3).iter().sum::<f64>()).collect();
        let y: Vec<f64> = d.labels().iter().map(|&l| l as f64).collect();
        let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
        let cov: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        assert!((cov / (vx * vy).sqrt()).abs() < 3.0 / n.sqrt());
    }

    #[test]
    fn subjects_cover_both_classes() {
        let cfg = SynthConfig { n_subjects: 3, ..small(45.0, 9, 1) };
        let d = generate(&cfg).unwrap();
        let ids = d.subject_ids().unwrap();
        for s in 0..3 {
            let labels: Vec<u8> = (0..18).filter(|&i| ids[i] == s).map(|i| d.labels()[i]).collect();
            assert_eq!(labels.len(), 6);
            assert!(labels.contains(&0) && labels.contains(&1));
        }
    }

    #[test]
    fn invalid_configs() {
        for bad in [
            SynthConfig { theta: 91.0, ..Default::default() },
            SynthConfig { theta: -1.0, ..Default::default() },
            SynthConfig { n_per_class: 0, ..Default::default() },
            SynthConfig { n_timesteps: 8, ..Default::default() },
            SynthConfig { sigma_amp: 0.0, ..Default::default() },
            SynthConfig { noise_sigma: -1.0, ..Default::default() },
            SynthConfig { freqs: [3.0, 3.0, 5.0], ..Default::default() },
            SynthConfig { n_subjects: 300, ..Default::default() },
        ] {
            assert!(generate(&bad).is_err());
        }
    }
}
