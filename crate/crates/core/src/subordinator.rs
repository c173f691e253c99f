//! The α/2-stable subordinator `S_t` with `E e^{-ηS_t} = e^{-tη^{α/2}}`.
//!
//! Draws use Kanter's representation of a totally skewed positive stable
//! law of index `a ∈ (0, 1)`:
//!
//! ```text
//! S = sin(aU) / sin(U)^{1/a} · (sin((1-a)U) / W)^{(1-a)/a},
//! U ~ Uniform(0, π),  W ~ Exp(1),
//! ```
//!
//! which has Laplace transform `e^{-η^a}` exactly. Increments over `dt`
//! follow from self-similarity: `S_{t+dt} - S_t =_d dt^{1/a} S_1`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Open01};

use crate::error::{invalid, Result};
use crate::seed::stream_rng;
use crate::stats::Accumulator;

/// One draw of a positive stable variable of index `a` in the standard
/// normalization `E e^{-ηS} = e^{-η^a}`.
pub fn positive_stable<R: Rng + ?Sized>(a: f64, rng: &mut R) -> f64 {
    loop {
        let u: f64 = Open01.sample(rng);
        let u = PI * u;
        let w: f64 = Exp1.sample(rng);
        let left = (a * u).sin() / u.sin().powf(1.0 / a);
        let right = (((1.0 - a) * u).sin() / w).powf((1.0 - a) / a);
        let s = left * right;
        if s > 0.0 && s.is_finite() {
            return s;
        }
    }
}

#[derive(Debug, Clone)]
pub struct StableSubordinatorSampler {
    alpha: f64,
    rng: ChaCha8Rng,
}

impl StableSubordinatorSampler {
    /// `alpha` is the stability index of the driven noise, in `(1, 2)`;
    /// the subordinator itself has index `alpha / 2`.
    pub fn new(alpha: f64, seed: u64) -> Result<Self> {
        Self::with_rng(alpha, ChaCha8Rng::seed_from_u64(seed))
    }

    /// Sampler for worker `index` of a run seeded with `base_seed`.
    pub fn for_stream(alpha: f64, base_seed: u64, index: u64) -> Result<Self> {
        Self::with_rng(alpha, stream_rng(base_seed, index))
    }

    pub fn with_rng(alpha: f64, rng: ChaCha8Rng) -> Result<Self> {
        if !(alpha > 1.0 && alpha < 2.0) {
            return Err(invalid(format!("alpha must lie in (1, 2), got {alpha}")));
        }
        Ok(Self { alpha, rng })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Index of the subordinator, `α/2`.
    pub fn index(&self) -> f64 {
        self.alpha / 2.0
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// A draw of `S_1`.
    pub fn sample_unit(&mut self) -> f64 {
        positive_stable(self.index(), &mut self.rng)
    }

    /// A draw of `S_{t+dt} − S_t`; strictly positive.
    pub fn sample_increment(&mut self, dt: f64) -> Result<f64> {
        if !(dt > 0.0) {
            return Err(invalid(format!("increment length must be positive, got {dt}")));
        }
        Ok(self.increment_unchecked(dt))
    }

    #[inline]
    pub(crate) fn increment_unchecked(&mut self, dt: f64) -> f64 {
        loop {
            let s = dt.powf(2.0 / self.alpha) * self.sample_unit();
            if s > 0.0 {
                return s;
            }
        }
    }
}

/// Monte Carlo estimate of `E e^{-η S_t}` with its standard error.
pub fn laplace_transform_estimate(
    s: &mut StableSubordinatorSampler,
    eta: f64,
    t: f64,
    n_samples: usize,
) -> Result<(f64, f64)> {
    let acc: Accumulator = (0..n_samples)
        .map(|_| s.sample_increment(t).map(|x| (-eta * x).exp()))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .collect();
    Ok((acc.mean(), acc.stderr()))
}

/// Monte Carlo estimate of `E S_t^{-q}` with its standard error.
pub fn estimate_negative_moment(
    s: &mut StableSubordinatorSampler,
    q: f64,
    t: f64,
    n_samples: usize,
) -> Result<(f64, f64)> {
    if !(q >= 0.0) || !(t > 0.0) {
        return Err(invalid(format!("need q >= 0 and t > 0, got q = {q}, t = {t}")));
    }
    if n_samples < 1000 {
        return Err(invalid("negative moments need at least 1000 samples"));
    }
    if q == 0.0 {
        return Ok((1.0, 0.0));
    }
    let mut acc = Accumulator::default();
    for _ in 0..n_samples {
        acc.push(s.increment_unchecked(t).powf(-q));
    }
    Ok((acc.mean(), acc.stderr()))
}

/// Empirical frequency of `{S_t <= r}`.
pub fn small_ball_probability(
    s: &mut StableSubordinatorSampler,
    r: f64,
    t: f64,
    n_samples: usize,
) -> Result<f64> {
    Ok(small_ball_curve(s, &[r], t, n_samples)?[0])
}

/// Frequencies of `{S_t <= r}` for several radii from one common sample.
pub fn small_ball_curve(
    s: &mut StableSubordinatorSampler,
    radii: &[f64],
    t: f64,
    n_samples: usize,
) -> Result<Vec<f64>> {
    if radii.iter().any(|r| !(*r > 0.0)) || !(t > 0.0) || n_samples == 0 {
        return Err(invalid("small-ball probabilities need r > 0, t > 0, n > 0"));
    }
    let mut hits = vec![0usize; radii.len()];
    for _ in 0..n_samples {
        let x = s.increment_unchecked(t);
        for (h, &r) in hits.iter_mut().zip(radii) {
            if x <= r {
                *h += 1;
            }
        }
    }
    Ok(hits.into_iter().map(|h| h as f64 / n_samples as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{ks_critical, ks_two_sample};

    #[test]
    fn rejects_bad_parameters() {
        assert!(StableSubordinatorSampler::new(2.5, 1).is_err());
        assert!(StableSubordinatorSampler::new(1.0, 1).is_err());
        let mut s = StableSubordinatorSampler::new(1.5, 1).unwrap();
        assert!(s.sample_increment(0.0).is_err());
        assert!(s.sample_increment(-1.0).is_err());
    }

    #[test]
    fn increments_are_strictly_positive() {
        let mut s = StableSubordinatorSampler::new(1.5, 2).unwrap();
        for _ in 0..200_000 {
            let x = s.sample_increment(1e-3).unwrap();
            assert!(x > 0.0 && x.is_finite());
        }
    }

    #[test]
    fn same_seed_same_stream() {
        let mut a = StableSubordinatorSampler::new(1.3, 77).unwrap();
        let mut b = StableSubordinatorSampler::new(1.3, 77).unwrap();
        for _ in 0..1000 {
            assert_eq!(a.sample_unit().to_bits(), b.sample_unit().to_bits());
        }
    }

    #[test]
    fn laplace_transform_at_unit_argument() {
        let mut s = StableSubordinatorSampler::new(1.5, 3).unwrap();
        let (m, se) = laplace_transform_estimate(&mut s, 1.0, 1.0, 200_000).unwrap();
        assert!((m - (-1.0f64).exp()).abs() < 3.0 * se, "{m} ± {se}");
        let (m, se) = laplace_transform_estimate(&mut s, 2.0, 1.0, 200_000).unwrap();
        let target = (-(2.0f64.powf(0.75))).exp();
        assert!((target - 0.186_040_138).abs() < 1e-8);
        assert!((m - target).abs() < 3.0 * se, "{m} ± {se}");
    }

    #[test]
    fn zero_moment_is_one() {
        let mut s = StableSubordinatorSampler::new(1.5, 4).unwrap();
        assert_eq!(estimate_negative_moment(&mut s, 0.0, 0.3, 1000).unwrap(), (1.0, 0.0));
        assert!(estimate_negative_moment(&mut s, 1.0, 0.3, 10).is_err());
    }

    #[test]
    fn self_similarity_in_distribution() {
        let mut s = StableSubordinatorSampler::new(1.5, 5).unwrap();
        let n = 100_000;
        let half: Vec<f64> = (0..n).map(|_| s.sample_increment(0.5).unwrap()).collect();
        let scaled: Vec<f64> = (0..n)
            .map(|_| 0.5f64.powf(2.0 / 1.5) * s.sample_increment(1.0).unwrap())
            .collect();
        assert!(ks_two_sample(&half, &scaled) < ks_critical(n, n, 0.01));
    }

    #[test]
    fn additivity_in_distribution() {
        let mut s = StableSubordinatorSampler::new(1.5, 6).unwrap();
        let n = 100_000;
        let sum: Vec<f64> = (0..n)
            .map(|_| s.sample_increment(0.3).unwrap() + s.sample_increment(0.7).unwrap())
            .collect();
        let whole: Vec<f64> = (0..n).map(|_| s.sample_increment(1.0).unwrap()).collect();
        assert!(ks_two_sample(&sum, &whole) < ks_critical(n, n, 0.01));
    }

    #[test]
    fn small_ball_frequencies() {
        let mut s = StableSubordinatorSampler::new(1.5, 7).unwrap();
        let p = small_ball_probability(&mut s, 1e6, 0.01, 10_000).unwrap();
        assert!(p > 0.999);
        let p = small_ball_probability(&mut s, 1.0, 1.0, 100_000).unwrap();
        assert!(p > 0.0);
        let c = small_ball_curve(&mut s, &[0.5, 2.0], 1.0, 50_000).unwrap();
        assert!(c[0] <= c[1]);
    }
}
