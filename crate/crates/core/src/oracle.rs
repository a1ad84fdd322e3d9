//! Ground-truth interference model standing in for real hardware contention.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::profile::Throughputs;

/// Thresholded-linear contention model: every resource whose combined
/// throughput exceeds unit capacity adds `beta * excess` to the slowdown,
/// which is then scaled by multiplicative lognormal noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InterferenceOracle {
    pub beta_l2: f64,
    pub beta_dram: f64,
    pub beta_sm: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for InterferenceOracle {
    fn default() -> Self {
        InterferenceOracle {
            beta_l2: 1.0,
            beta_dram: 1.5,
            beta_sm: 0.5,
            noise_sigma: 0.05,
            seed: 0,
        }
    }
}

impl InterferenceOracle {
    pub fn noiseless() -> Self {
        InterferenceOracle {
            noise_sigma: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("beta_l2", self.beta_l2),
            ("beta_dram", self.beta_dram),
            ("beta_sm", self.beta_sm),
            ("noise_sigma", self.noise_sigma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("oracle {name} must be finite and non-negative, got {v}"));
            }
        }
        Ok(())
    }

    /// Deterministic slowdown before noise.
    pub fn contention(&self, own: Throughputs, colo_sum: Throughputs) -> f64 {
        let excess = (own + colo_sum).map(|v| (v - 1.0).max(0.0));
        1.0 + self.beta_l2 * excess.l2 + self.beta_dram * excess.dram + self.beta_sm * excess.sm
    }

    pub fn slowdown(&self, own: Throughputs, colo_sum: Throughputs, noise_draw: f64) -> f64 {
        self.contention(own, colo_sum) * noise_draw
    }

    /// Lognormal(0, sigma^2) factor fixed per (scenario seed, batch, segment),
    /// independent of the order in which segments are opened.
    pub fn noise_draw(&self, scenario_seed: u64, batch_id: u64, segment: usize) -> f64 {
        if self.noise_sigma == 0.0 {
            return 1.0;
        }
        let key = mix(mix(mix(self.seed ^ 0x6f72_6163_6c65, scenario_seed), batch_id), segment as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        LogNormal::new(0.0, self.noise_sigma)
            .expect("sigma validated non-negative")
            .sample(&mut rng)
    }
}

fn mix(a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over the combined words
    let mut z = a ^ b.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(a << 6).wrapping_add(a >> 2);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solo_without_noise_is_exactly_one() {
        let o = InterferenceOracle::noiseless();
        let own = Throughputs::new(0.9, 0.9, 0.9);
        let s = o.slowdown(own, Throughputs::ZERO, o.noise_draw(1, 2, 3));
        assert_eq!(s, 1.0);
    }

    #[test]
    fn hand_evaluated_example() {
        let o = InterferenceOracle::noiseless();
        let x = Throughputs::new(0.6, 0.5, 0.4);
        let s = o.slowdown(x, x, 1.0);
        assert!((s - 1.2).abs() < 1e-12, "{s}");
    }

    #[test]
    fn noise_is_keyed_and_deterministic() {
        let o = InterferenceOracle::default();
        assert_eq!(o.noise_draw(1, 5, 0), o.noise_draw(1, 5, 0));
        assert_ne!(o.noise_draw(1, 5, 0), o.noise_draw(1, 5, 1));
        assert_ne!(o.noise_draw(1, 5, 0), o.noise_draw(2, 5, 0));
        let draws: Vec<f64> = (0..4000).map(|b| o.noise_draw(9, b, 0).ln()).collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / draws.len() as f64;
        assert!(mean.abs() < 0.005, "{mean}");
        assert!((var.sqrt() - 0.05).abs() < 0.005, "{}", var.sqrt());
    }

    #[test]
    fn contention_is_monotone_in_colo() {
        let o = InterferenceOracle::default();
        let own = Throughputs::new(0.5, 0.6, 0.7);
        let a = Throughputs::new(0.3, 0.3, 0.3);
        let b = Throughputs::new(0.6, 0.2, 0.5);
        assert!(o.contention(own, a + b) >= o.contention(own, a));
        assert!(o.contention(own, a) >= o.contention(own, Throughputs::ZERO));
    }
}
