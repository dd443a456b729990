//! DDPM noise schedule.

use alloc::vec::Vec;

use crate::{err, Result};

/// Linear beta schedule with cumulative alpha products.
///
/// The classic 1e-4..0.02 endpoints are defined for T=1000; for other step
/// counts the betas are rescaled by 1000/T so the total noise injected over
/// the full trajectory matches, keeping `alpha_bar(T-1)` near zero.
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn linear(t_total: usize) -> Result<Self> {
        if t_total == 0 {
            return Err(err!(Config, "schedule needs at least one step"));
        }
        let scale = 1000.0 / t_total as f64;
        let start = 1e-4 * scale;
        let end = 0.02 * scale;
        let mut betas = Vec::with_capacity(t_total);
        for i in 0..t_total {
            let frac = if t_total == 1 { 0.0 } else { i as f64 / (t_total - 1) as f64 };
            betas.push(start + (end - start) * frac);
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(t_total);
        let mut prod = 1.0;
        for &a in &alphas {
            prod *= a;
            alpha_bars.push(prod);
        }
        Ok(NoiseSchedule { betas, alphas, alpha_bars })
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_bars_strictly_decreasing_from_near_one() {
        let s = NoiseSchedule::linear(100).unwrap();
        assert!(s.alpha_bar(0) > 0.99);
        for t in 1..s.len() {
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            assert!(s.alpha_bar(t) > 0.0 && s.alpha_bar(t) < 1.0);
            assert!(s.beta(t) > 0.0 && s.beta(t) < 1.0);
        }
        // Full-trajectory noise matches the T=1000 convention.
        assert!(s.alpha_bar(99) < 1e-3, "abar_T = {}", s.alpha_bar(99));
    }

    #[test]
    fn thousand_step_schedule_has_classic_endpoints() {
        let s = NoiseSchedule::linear(1000).unwrap();
        assert!((s.beta(0) - 1e-4).abs() < 1e-12);
        assert!((s.beta(999) - 0.02).abs() < 1e-12);
    }
}
