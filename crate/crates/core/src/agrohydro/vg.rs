// van Genuchten retention and Mualem conductivity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest suction scale used when evaluating derivatives close to
/// saturation, where dK/dψ is unbounded for n < 2.
const MIN_SCALED_SUCTION: f64 = 1e-10;

/// The five van Genuchten / Mualem parameters of one management zone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoilHydraulicParams {
    /// Residual volumetric moisture (m³/m³).
    pub theta_r: f64,
    /// Saturated volumetric moisture (m³/m³).
    pub theta_s: f64,
    /// Inverse air-entry scale (1/m).
    pub alpha: f64,
    /// Curve shape, > 1.
    pub n: f64,
    /// Saturated conductivity (m/day).
    pub k_s: f64,
}

/// All constitutive quantities at one pressure head.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constitutive {
    pub theta: f64,
    pub capacity: f64,
    pub conductivity: f64,
    pub conductivity_slope: f64,
}

impl SoilHydraulicParams {
    pub fn new(theta_r: f64, theta_s: f64, alpha: f64, n: f64, k_s: f64) -> Result<Self> {
        let p = Self { theta_r, theta_s, alpha, n, k_s };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.theta_r >= 0.0
            && self.theta_r < self.theta_s
            && self.theta_s <= 1.0
            && self.alpha > 0.0
            && self.n > 1.0
            && self.k_s > 0.0
            && [self.theta_r, self.theta_s, self.alpha, self.n, self.k_s].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("soil hydraulic parameters out of range: {self:?}")))
        }
    }

    fn m(&self) -> f64 {
        1.0 - 1.0 / self.n
    }

    /// Volumetric moisture at pressure head `psi` (m).
    pub fn moisture(&self, psi: f64) -> f64 {
        if psi >= 0.0 {
            return self.theta_s;
        }
        let x = -self.alpha * psi;
        let se = (1.0 + x.powf(self.n)).powf(-self.m());
        self.theta_r + (self.theta_s - self.theta_r) * se
    }

    /// Effective saturation in [0, 1].
    pub fn effective_saturation(&self, psi: f64) -> f64 {
        (self.moisture(psi) - self.theta_r) / (self.theta_s - self.theta_r)
    }

    /// dθ/dψ (1/m).
    pub fn capacity(&self, psi: f64) -> f64 {
        self.evaluate(psi).capacity
    }

    /// Unsaturated conductivity (m/day).
    pub fn conductivity(&self, psi: f64) -> f64 {
        if psi >= 0.0 {
            return self.k_s;
        }
        let m = self.m();
        let x = -self.alpha * psi;
        let xn = x.powf(self.n);
        let se = (1.0 + xn).powf(-m);
        // (1 - Se^{1/m})^m = x^{n-1} Se
        let b = x.powf(self.n - 1.0) * se;
        self.k_s * se.sqrt() * (1.0 - b).powi(2)
    }

    /// Pressure head giving moisture `theta`; saturated heads map to 0.
    pub fn head_at_moisture(&self, theta: f64) -> f64 {
        if theta >= self.theta_s {
            return 0.0;
        }
        let se = ((theta - self.theta_r) / (self.theta_s - self.theta_r)).max(1e-300);
        let xn = se.powf(-1.0 / self.m()) - 1.0;
        -xn.powf(1.0 / self.n) / self.alpha
    }

    /// Moisture, capacity, conductivity and dK/dψ with two `powf` calls.
    pub fn evaluate(&self, psi: f64) -> Constitutive {
        if psi >= 0.0 {
            return Constitutive {
                theta: self.theta_s,
                capacity: 0.0,
                conductivity: self.k_s,
                conductivity_slope: 0.0,
            };
        }
        let n = self.n;
        let m = self.m();
        let dtheta = self.theta_s - self.theta_r;
        let x = (-self.alpha * psi).max(MIN_SCALED_SUCTION);
        let xn = x.powf(n);
        let a = 1.0 + xn;
        let se = a.powf(-m);
        let xn1 = xn / x; // x^{n-1}
        let b = xn1 * se;
        let one_minus_b = (1.0 - b).max(0.0);
        let sqrt_se = se.sqrt();

        let theta = self.theta_r + dtheta * se;
        let capacity = dtheta * (n - 1.0) * self.alpha * xn1 * se / a;
        let conductivity = self.k_s * sqrt_se * one_minus_b * one_minus_b;
        let conductivity_slope =
            self.alpha * self.k_s * sqrt_se * one_minus_b * (n - 1.0) / (x * a) * (0.5 * xn * one_minus_b + 2.0 * b);
        Constitutive { theta, capacity, conductivity, conductivity_slope }
    }
}

pub fn vg_moisture(psi: f64, p: &SoilHydraulicParams) -> f64 {
    p.moisture(psi)
}

pub fn vg_capacity(psi: f64, p: &SoilHydraulicParams) -> f64 {
    p.capacity(psi)
}

pub fn vg_conductivity(psi: f64, p: &SoilHydraulicParams) -> f64 {
    p.conductivity(psi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn example() -> SoilHydraulicParams {
        SoilHydraulicParams::new(0.1, 0.4, 2.0, 2.0, 0.5).unwrap()
    }

    #[test]
    fn saturation_branch() {
        let p = example();
        assert_eq!(p.moisture(0.0), 0.4);
        assert_eq!(p.moisture(3.0), 0.4);
        assert_eq!(p.capacity(0.0), 0.0);
        assert_eq!(p.conductivity(0.0), 0.5);
        assert_eq!(p.conductivity(1.0), 0.5);
    }

    #[test]
    fn hand_values() {
        let p = example();
        // 0.1 + 0.3 * (1/2)^{1/2}
        assert_abs_diff_eq!(p.moisture(-0.5), 0.1 + 0.3 * 0.5f64.sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(p.moisture(-0.5), 0.3121, epsilon = 1e-4);
        // Se = 0.7071, K = 0.5 * 0.8409 * [1 - 0.5^{0.5}]^2
        let expected = 0.5 * 0.5f64.sqrt().sqrt() * (1.0 - 0.5f64.sqrt()).powi(2);
        assert_abs_diff_eq!(p.conductivity(-0.5), expected, epsilon = 1e-14);
        assert_abs_diff_eq!(p.conductivity(-0.5), 0.0361, epsilon = 1e-4);
        assert_abs_diff_eq!(p.evaluate(-0.5).conductivity, expected, epsilon = 1e-14);
    }

    #[test]
    fn dry_limits() {
        let p = example();
        assert_abs_diff_eq!(p.moisture(-1e9), 0.1, epsilon = 1e-9);
        assert!(p.capacity(-1e9) < 1e-12);
        assert!(p.conductivity(-1e6) < 1e-12);
    }

    #[test]
    fn invalid_params() {
        assert!(SoilHydraulicParams::new(0.4, 0.1, 2.0, 2.0, 0.5).is_err());
        assert!(SoilHydraulicParams::new(0.1, 0.4, 2.0, 1.0, 0.5).is_err());
        assert!(SoilHydraulicParams::new(0.1, 0.4, -1.0, 2.0, 0.5).is_err());
        assert!(SoilHydraulicParams::new(0.1, 1.4, 1.0, 2.0, 0.5).is_err());
    }

    #[test]
    fn inverse_roundtrip() {
        let p = SoilHydraulicParams::new(0.08, 0.43, 1.1, 1.4, 0.25).unwrap();
        for psi in [-0.01, -0.5, -3.3, -50.0, -150.0] {
            let back = p.head_at_moisture(p.moisture(psi));
            assert_abs_diff_eq!(back, psi, epsilon = 1e-8 * psi.abs().max(1.0));
        }
    }

    fn params() -> impl Strategy<Value = SoilHydraulicParams> {
        (0.0..0.15f64, 0.3..0.55f64, 0.3..8.0f64, 1.05..3.0f64, 0.01..2.0f64)
            .prop_map(|(r, s, a, n, k)| SoilHydraulicParams::new(r, s, a, n, k).unwrap())
    }

    proptest! {
        #[test]
        fn moisture_monotone_and_bounded(p in params(), psi in -1e3..0.5f64, dpsi in 0.0..5.0f64) {
            let lo = p.moisture(psi);
            let hi = p.moisture(psi + dpsi);
            prop_assert!(lo >= p.theta_r && lo <= p.theta_s);
            prop_assert!(hi >= lo);
        }

        #[test]
        fn conductivity_monotone_and_bounded(p in params(), psi in -1e2..0.5f64, dpsi in 0.0..5.0f64) {
            let lo = p.conductivity(psi);
            let hi = p.conductivity(psi + dpsi);
            prop_assert!(lo > 0.0 && lo <= p.k_s);
            prop_assert!(hi >= lo);
        }

        #[test]
        fn evaluate_matches_scalar_functions(p in params(), psi in -1e3..-1e-3f64) {
            let e = p.evaluate(psi);
            prop_assert!((e.theta - p.moisture(psi)).abs() < 1e-12);
            prop_assert!((e.conductivity - p.conductivity(psi)).abs() <= 1e-10 * p.k_s);
        }
    }
}
