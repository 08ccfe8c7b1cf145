//! Sampling criterion and simulated-annealing acceptance.
//!
//! The energy of a cumulative output impact `Δ` blends its scale (total
//! interval width) with the entropy of how similar its per-output intervals
//! are to one another:
//!
//! ```text
//! energy = α·σ(NORM(Δ)) + (1 − α)·σ(ENT(Δ))
//! ```
//!
//! A candidate that does not raise the energy is always accepted; otherwise it
//! is accepted with probability `exp(−(e' − e) / T)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::{Interval, IntervalVector};
use crate::model::logistic;

pub const DEFAULT_PHI: f64 = 0.9;
pub const DEFAULT_ALPHA: f64 = 0.75;

/// Weights of the two energy terms and the similarity threshold. `beta` is
/// always `1 - alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyWeights {
    alpha: f64,
    beta: f64,
    phi: f64,
}

impl EnergyWeights {
    pub fn new(alpha: f64, phi: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1], got {alpha}")));
        }
        if !(0.0..=1.0).contains(&phi) {
            return Err(Error::Config(format!("phi must lie in [0, 1], got {phi}")));
        }
        Ok(Self {
            alpha,
            beta: 1.0 - alpha,
            phi,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }
}

impl Default for EnergyWeights {
    fn default() -> Self {
        Self::new(DEFAULT_ALPHA, DEFAULT_PHI).expect("defaults are valid")
    }
}

/// Sum of interval widths.
pub fn norm_metric(dv: &[Interval]) -> f64 {
    dv.iter().map(|u| (u.hi - u.lo).abs()).sum()
}

/// Similarity of two intervals relative to the global range `[m_minus, m_plus]`.
/// A degenerate range (`m_plus == m_minus`) makes every pair fully similar.
pub fn similarity(ui: Interval, uj: Interval, m_minus: f64, m_plus: f64) -> f64 {
    let range = m_plus - m_minus;
    if range <= 0.0 {
        return 1.0;
    }
    let diff = (ui.lo - uj.lo).abs() + (ui.hi - uj.hi).abs();
    (1.0 - 0.5 * diff / range).clamp(0.0, 1.0)
}

fn global_range(u: &[Interval]) -> (f64, f64) {
    let lo = u.iter().map(|x| x.lo).fold(f64::INFINITY, f64::min);
    let hi = u.iter().map(|x| x.hi).fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

fn check_len(u: &[Interval]) -> Result<()> {
    if u.len() < 2 {
        return Err(Error::Dimension {
            expected: 2,
            found: u.len(),
        });
    }
    Ok(())
}

fn density_in(u: &[Interval], i: usize, phi: f64, m_minus: f64, m_plus: f64) -> f64 {
    let similar = u
        .iter()
        .enumerate()
        .filter(|&(j, uj)| j != i && similarity(u[i], *uj, m_minus, m_plus) >= phi)
        .count();
    similar as f64 / u.len() as f64
}

/// Fraction of `U` (counting over `|U|`, not `|U| - 1`) that is `phi`-similar to `U[i]`.
pub fn density(u: &[Interval], i: usize, phi: f64) -> Result<f64> {
    check_len(u)?;
    if i >= u.len() {
        return Err(Error::Dimension {
            expected: u.len(),
            found: i,
        });
    }
    let (m_minus, m_plus) = global_range(u);
    Ok(density_in(u, i, phi, m_minus, m_plus))
}

/// `−Σ ρ ln ρ` over the similarity densities, with `0 ln 0 = 0`.
pub fn entropy_metric(u: &[Interval], phi: f64) -> Result<f64> {
    check_len(u)?;
    let (m_minus, m_plus) = global_range(u);
    let ent: f64 = (0..u.len())
        .map(|i| density_in(u, i, phi, m_minus, m_plus))
        .filter(|&rho| rho > 0.0)
        .map(|rho| -rho * rho.ln())
        .sum();
    Ok(ent.max(0.0))
}

pub fn energy(dv: &[Interval], w: &EnergyWeights) -> Result<f64> {
    let norm = norm_metric(dv);
    let ent = entropy_metric(dv, w.phi)?;
    Ok(w.alpha * logistic(norm) + w.beta * logistic(ent))
}

/// `min(1, exp(−(energy_new − energy_prev) / temperature))`.
pub fn acceptance_rate(energy_new: f64, energy_prev: f64, temperature: f64) -> Result<f64> {
    if temperature.is_nan() || temperature <= 0.0 {
        return Err(Error::Config(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if energy_new <= energy_prev {
        return Ok(1.0);
    }
    Ok((-(energy_new - energy_prev) / temperature).exp().min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub accepted: bool,
    pub acceptance_rate: f64,
    /// Uniform draw in `[0, 1)`, present only when one was consumed.
    pub random_draw: Option<f64>,
}

/// Mutable state of the annealing chain.
#[derive(Debug, Clone)]
pub struct AnnealState {
    pub temperature: f64,
    /// Energy of the last accepted candidate; `0` means none yet.
    pub energy_prev: f64,
    pub cumulative_impact: IntervalVector,
    rng: ChaCha8Rng,
}

impl AnnealState {
    pub fn new(output_dim: usize, seed: u64) -> Self {
        Self {
            temperature: 1.0,
            energy_prev: 0.0,
            cumulative_impact: IntervalVector::zeros(output_dim),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Accept/reject a candidate with energy `energy_new`. The first candidate
    /// after a reset and every non-increasing step are accepted without
    /// touching the generator.
    pub fn decide(&mut self, energy_new: f64) -> Result<Decision> {
        if self.energy_prev == 0.0 || energy_new <= self.energy_prev {
            self.energy_prev = energy_new;
            return Ok(Decision {
                accepted: true,
                acceptance_rate: 1.0,
                random_draw: None,
            });
        }
        let p = acceptance_rate(energy_new, self.energy_prev, self.temperature)?;
        let u: f64 = self.rng.gen();
        let accepted = u < p;
        if accepted {
            self.energy_prev = energy_new;
        }
        Ok(Decision {
            accepted,
            acceptance_rate: p,
            random_draw: Some(u),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(pairs: &[(f64, f64)]) -> IntervalVector {
        IntervalVector::from_pairs(pairs).unwrap()
    }

    #[test]
    fn norm_examples() {
        assert_eq!(norm_metric(&iv(&[(-1.0, 2.0), (0.0, 0.5)])), 3.5);
        assert_eq!(norm_metric(&IntervalVector::zeros(4)), 0.0);
    }

    #[test]
    fn similarity_examples() {
        let a = Interval::new_unchecked(0.0, 0.5);
        let b = Interval::new_unchecked(0.5, 1.0);
        assert_eq!(similarity(a, a, 0.0, 1.0), 1.0);
        assert_eq!(similarity(a, b, 0.0, 1.0), 0.5);
        assert_eq!(
            similarity(Interval::point(0.0), Interval::point(1.0), 0.0, 1.0),
            0.0
        );
        assert_eq!(similarity(a, b, 2.0, 2.0), 1.0);
    }

    #[test]
    fn density_examples() {
        let same = iv(&[(0.0, 1.0), (0.0, 1.0), (0.0, 1.0)]);
        for i in 0..3 {
            assert!((density(&same, i, 0.9).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        }
        let apart = iv(&[(0.0, 0.0), (10.0, 10.0)]);
        assert_eq!(density(&apart, 0, 0.9).unwrap(), 0.0);
        assert!(density(&iv(&[(0.0, 1.0)]), 0, 0.9).is_err());
    }

    #[test]
    fn entropy_examples() {
        let two = iv(&[(0.0, 1.0), (0.0, 1.0)]);
        assert!((entropy_metric(&two, 0.9).unwrap() - 2f64.ln()).abs() < 1e-12);
        let three = iv(&[(0.2, 0.3), (0.2, 0.3), (0.2, 0.3)]);
        let expected = -3.0 * (2.0 / 3.0) * (2.0f64 / 3.0).ln();
        assert!((entropy_metric(&three, 0.9).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.8109).abs() < 1e-4);
        let apart = iv(&[(0.0, 0.0), (10.0, 10.0)]);
        assert_eq!(entropy_metric(&apart, 0.9).unwrap(), 0.0);
    }

    #[test]
    fn energy_examples() {
        let w = EnergyWeights::new(0.75, 0.9).unwrap();
        assert_eq!(w.beta(), 0.25);
        // a zero vector has a degenerate range, so every pair counts as similar
        let ent = -3.0 * (2.0 / 3.0) * (2.0f64 / 3.0).ln();
        let e0 = energy(&IntervalVector::zeros(3), &w).unwrap();
        assert!((e0 - (0.75 * 0.5 + 0.25 * logistic(ent))).abs() < 1e-12);

        let only_norm = EnergyWeights::new(1.0, 0.9).unwrap();
        let dv = iv(&[(-1.0, 2.0), (0.0, 0.5)]);
        assert_eq!(energy(&dv, &only_norm).unwrap(), logistic(3.5));

        // NORM = 3.5; the two intervals have Sim = 1 − ½(1 + 1.5)/3 < 0.9, ENT = 0
        let e = energy(&dv, &w).unwrap();
        assert!((e - (0.75 * logistic(3.5) + 0.25 * 0.5)).abs() < 1e-12);
    }

    #[test]
    fn energy_with_ln2_entropy() {
        // two identical intervals of total width 3.5: NORM 3.5, ENT ln 2
        let dv = iv(&[(0.0, 1.75), (0.0, 1.75)]);
        let w = EnergyWeights::new(0.75, 0.9).unwrap();
        let e = energy(&dv, &w).unwrap();
        assert!((e - 0.8947).abs() < 1e-4, "{e}");
    }

    #[test]
    fn weights_validated() {
        assert!(EnergyWeights::new(1.5, 0.9).is_err());
        assert!(EnergyWeights::new(0.5, -0.1).is_err());
    }

    #[test]
    fn acceptance_examples() {
        assert_eq!(acceptance_rate(0.5, 0.7, 0.3).unwrap(), 1.0);
        assert!((acceptance_rate(0.9, 0.7, 0.5).unwrap() - (-0.4f64).exp()).abs() < 1e-12);
        assert!((acceptance_rate(0.9, 0.7, 0.5).unwrap() - 0.6703).abs() < 1e-4);
        assert_eq!(acceptance_rate(0.7, 0.7, 0.5).unwrap(), 1.0);
        assert!(acceptance_rate(0.9, 0.7, 0.0).is_err());
    }

    #[test]
    fn first_candidate_always_accepted() {
        let mut s = AnnealState::new(2, 1);
        s.temperature = 1e-6;
        let d = s.decide(0.99).unwrap();
        assert!(d.accepted && d.random_draw.is_none());
        assert_eq!(s.energy_prev, 0.99);
    }

    #[test]
    fn improvement_consumes_no_draw() {
        let mut a = AnnealState::new(2, 5);
        let mut b = AnnealState::new(2, 5);
        a.energy_prev = 0.7;
        b.energy_prev = 0.7;
        let d = a.decide(0.6).unwrap();
        assert!(d.accepted && d.random_draw.is_none());
        // generators still aligned
        a.energy_prev = 0.7;
        let (x, y) = (a.decide(0.9).unwrap(), b.decide(0.9).unwrap());
        assert_eq!(x, y);
    }

    #[test]
    fn seeded_draw_replays() {
        let mut s = AnnealState::new(2, 42);
        s.energy_prev = 0.7;
        s.temperature = 0.5;
        let d = s.decide(0.9).unwrap();
        let first: f64 = ChaCha8Rng::seed_from_u64(42).gen();
        assert_eq!(d.random_draw, Some(first));
        assert_eq!(d.accepted, first < (-0.4f64).exp());
        assert_eq!(s.energy_prev, if d.accepted { 0.9 } else { 0.7 });
    }
}
