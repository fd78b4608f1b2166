use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vehicle::IdentifiedParams;

/// Axis-aligned uniform prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorBox {
    pub names: Vec<String>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Default for PriorBox {
    fn default() -> Self {
        Self::vehicle_default()
    }
}

impl PriorBox {
    pub fn new(names: Vec<String>, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let b = Self { names, lower, upper };
        b.validate()?;
        Ok(b)
    }

    /// Prior intervals for `l_f, h_cog, d_Ckf, d_Ckr, d_Caf, d_Car`.
    pub fn vehicle_default() -> Self {
        Self {
            names: IdentifiedParams::NAMES.iter().map(|s| s.to_string()).collect(),
            lower: vec![1.0, 0.2, -0.2, -0.2, -0.3, -0.3],
            upper: vec![1.5, 0.6, 0.5, 0.5, 0.3, 0.3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.is_empty() || self.lower.len() != self.upper.len() || self.names.len() != self.lower.len() {
            return Err(Error::Config("prior bounds and names must be non-empty and of equal length".into()));
        }
        for (i, (lo, hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Config(format!("prior dimension {i}: need lower < upper, got [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).collect()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta.iter().zip(self.lower.iter().zip(&self.upper)).all(|(t, (l, u))| *t >= *l && *t <= *u)
    }

    pub fn log_volume(&self) -> f64 {
        self.widths().iter().map(|w| w.ln()).sum()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| l + rng.random::<f64>() * (u - l)).collect()
    }

    pub fn log_pdf(&self, theta: &[f64]) -> f64 {
        if self.contains(theta) {
            -self.log_volume()
        } else {
            f64::NEG_INFINITY
        }
    }

    /// Affine map of the box onto the unit cube.
    pub fn to_unit(&self, theta: &[f64]) -> Vec<f64> {
        theta.iter().zip(self.lower.iter().zip(&self.upper)).map(|(t, (l, u))| (t - l) / (u - l)).collect()
    }

    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(self.lower.iter().zip(&self.upper)).map(|(v, (l, h))| l + v * (h - l)).collect()
    }

    /// Sub-box over the listed coordinates.
    pub fn select(&self, dims: &[usize]) -> Self {
        Self {
            names: dims.iter().map(|&i| self.names[i].clone()).collect(),
            lower: dims.iter().map(|&i| self.lower[i]).collect(),
            upper: dims.iter().map(|&i| self.upper[i]).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::excitation::RngStream;
    use approx::assert_relative_eq;

    #[test]
    fn default_box_density() {
        let b = PriorBox::vehicle_default();
        b.validate().unwrap();
        assert_relative_eq!(b.log_volume().exp(), 0.03528, epsilon = 1e-12);
        assert_relative_eq!(b.log_pdf(&[1.3, 0.5, 0.0, 0.0, 0.0, 0.0]), -(0.03528f64.ln()), epsilon = 1e-12);
        assert!((b.log_pdf(&[1.3, 0.5, 0.0, 0.0, 0.0, 0.0]) - 3.3447).abs() < 1e-3);
        assert_eq!(b.log_pdf(&[1.6, 0.5, 0.0, 0.0, 0.0, 0.0]), f64::NEG_INFINITY);
    }

    #[test]
    fn samples_stay_in_box() {
        let b = PriorBox::vehicle_default();
        let mut rng = RngStream::new(1, 0).rng();
        let mut lo = vec![f64::MAX; 6];
        let mut hi = vec![f64::MIN; 6];
        for _ in 0..100_000 {
            let s = b.sample(&mut rng);
            assert!(b.contains(&s));
            for k in 0..6 {
                lo[k] = lo[k].min(s[k]);
                hi[k] = hi[k].max(s[k]);
            }
        }
        for k in 0..6 {
            assert!(lo[k] >= b.lower[k] && hi[k] <= b.upper[k]);
            assert!(lo[k] - b.lower[k] < 0.01 && b.upper[k] - hi[k] < 0.01);
        }
    }

    #[test]
    fn unit_map_round_trips() {
        let b = PriorBox::vehicle_default();
        let theta = vec![1.25, 0.3, 0.1, -0.1, 0.2, -0.25];
        let back = b.from_unit(&b.to_unit(&theta));
        for (a, c) in theta.iter().zip(back) {
            assert_relative_eq!(*a, c, epsilon = 1e-14);
        }
        assert_eq!(b.to_unit(&b.lower), vec![0.0; 6]);
    }

    #[test]
    fn rejects_inverted_bounds() {
        assert!(PriorBox::new(vec!["a".into()], vec![1.0], vec![0.5]).is_err());
        assert!(PriorBox::new(vec!["a".into()], vec![1.0, 2.0], vec![1.5]).is_err());
    }
}
