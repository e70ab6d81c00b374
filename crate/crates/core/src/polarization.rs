//! Two-photon polarization states on the basis (HH, HV, VH, VV), analyzer
//! projections and wave-plate transformations. Photon 1 is the signal, photon
//! 2 the idler.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BellKind {
    #[serde(rename = "phi+")]
    PhiPlus,
    #[serde(rename = "phi-")]
    PhiMinus,
    #[serde(rename = "psi+")]
    PsiPlus,
    #[serde(rename = "psi-")]
    PsiMinus,
    #[serde(rename = "custom")]
    Custom,
}

impl std::str::FromStr for BellKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "phi+" | "phi_plus" => Ok(Self::PhiPlus),
            "phi-" | "phi_minus" => Ok(Self::PhiMinus),
            "psi+" | "psi_plus" => Ok(Self::PsiPlus),
            "psi-" | "psi_minus" => Ok(Self::PsiMinus),
            "custom" => Ok(Self::Custom),
            other => Err(Error::invalid(format!("unknown state kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PolarizationState {
    /// Coefficients of |H1 H2>, |H1 V2>, |V1 H2>, |V1 V2>.
    pub coefficients: [Complex64; 4],
    pub wavelengths_nm: (f64, f64),
}

pub const HH: usize = 0;
pub const HV: usize = 1;
pub const VH: usize = 2;
pub const VV: usize = 3;

impl PolarizationState {
    /// Normalizes `coefficients`; fails on the zero vector.
    pub fn new(coefficients: [Complex64; 4], wavelengths_nm: (f64, f64)) -> Result<Self> {
        let n: f64 = coefficients.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::invalid("polarization state must have nonzero finite norm"));
        }
        Ok(Self {
            coefficients: coefficients.map(|c| c / n),
            wavelengths_nm,
        })
    }

    pub fn norm_sq(&self) -> f64 {
        self.coefficients.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn inner(&self, other: &Self) -> Complex64 {
        self.coefficients
            .iter()
            .zip(other.coefficients.iter())
            .map(|(a, b)| a.conj() * b)
            .sum()
    }
}

pub const DEFAULT_WAVELENGTHS_NM: (f64, f64) = (730.0, 885.0);

/// Bell states `|X1 X2> + e^{i phi} |Y1 Y2>`, normalized. Phi kinds use
/// (HH, VV), Psi kinds (HV, VH); the phase multiplies the second term. For
/// `Custom` the first term is weighted by `amplitude_ratio`.
pub fn make_state(kind: BellKind, phase_rad: f64, amplitude_ratio: f64) -> Result<PolarizationState> {
    let z = Complex64::new(0.0, 0.0);
    let e = Complex64::from_polar(1.0, phase_rad);
    let one = Complex64::new(1.0, 0.0);
    let c = match kind {
        BellKind::PhiPlus => [one, z, z, e],
        BellKind::PhiMinus => [one, z, z, -e],
        BellKind::PsiPlus => [z, one, e, z],
        BellKind::PsiMinus => [z, one, -e, z],
        BellKind::Custom => {
            if !(amplitude_ratio >= 0.0 && amplitude_ratio.is_finite()) {
                return Err(Error::invalid(format!(
                    "amplitude ratio {amplitude_ratio} must be finite and >= 0"
                )));
            }
            [one * amplitude_ratio, z, z, e]
        }
    };
    PolarizationState::new(c, DEFAULT_WAVELENGTHS_NM)
}

/// Linear analyzers in front of the two detectors, angles from vertical.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyzerSetting {
    pub theta1_deg: f64,
    pub theta2_deg: f64,
}

/// `(<V|theta>, <H|theta>)` for `|theta> = cos(theta)|V> + sin(theta)|H>`.
fn analyzer_vector(theta_deg: f64) -> (f64, f64) {
    let t = theta_deg.rem_euclid(180.0).to_radians();
    (t.cos(), t.sin())
}

/// Weights `(w_VV, w_HH)` that an analyzer pair puts on the VV and HH terms.
pub fn analyzer_weights(a: &AnalyzerSetting) -> (f64, f64) {
    let (v1, h1) = analyzer_vector(a.theta1_deg);
    let (v2, h2) = analyzer_vector(a.theta2_deg);
    (v1 * v2, h1 * h2)
}

/// `|<theta1| <theta2| psi>|^2`.
pub fn project(state: &PolarizationState, a: &AnalyzerSetting) -> f64 {
    let (v1, h1) = analyzer_vector(a.theta1_deg);
    let (v2, h2) = analyzer_vector(a.theta2_deg);
    let c = &state.coefficients;
    let amp = c[HH] * (h1 * h2) + c[HV] * (h1 * v2) + c[VH] * (v1 * h2) + c[VV] * (v1 * v2);
    amp.norm_sqr()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Port {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
}

/// Half-wave plate with its fast axis `axis_deg` from vertical on one photon:
/// V -> cos2a V + sin2a H, H -> sin2a V - cos2a H.
pub fn half_wave_plate(state: &PolarizationState, port: Port, axis_deg: f64) -> PolarizationState {
    let (s, c) = (2.0 * axis_deg.to_radians()).sin_cos();
    // Single-photon map on (H, V) amplitudes: new_H = -c H + s V, new_V = s H + c V.
    let map = |h: Complex64, v: Complex64| (h * (-c) + v * s, h * s + v * c);
    let k = state.coefficients;
    let out = match port {
        Port::One => {
            let (hh, vh) = map(k[HH], k[VH]);
            let (hv, vv) = map(k[HV], k[VV]);
            [hh, hv, vh, vv]
        }
        Port::Two => {
            let (hh, hv) = map(k[HH], k[HV]);
            let (vh, vv) = map(k[VH], k[VV]);
            [hh, hv, vh, vv]
        }
    };
    PolarizationState {
        coefficients: out,
        wavelengths_nm: state.wavelengths_nm,
    }
}

/// `|<target|state>|^2`.
pub fn fidelity(state: &PolarizationState, target: &PolarizationState) -> f64 {
    target.inner(state).norm_sqr().min(1.0)
}

/// Fidelity of a state whose two terms interfere with visibility `v`: the
/// coherences of `state` are reduced by `v` before projecting on `target`.
pub fn fidelity_with_visibility(state: &PolarizationState, target: &PolarizationState, v: f64) -> f64 {
    let diag: f64 = state
        .coefficients
        .iter()
        .zip(target.coefficients.iter())
        .map(|(s, t)| s.norm_sqr() * t.norm_sqr())
        .sum();
    (diag + v * (fidelity(state, target) - diag)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairScheme {
    BeamsplitterDegenerate,
    DichroicNondegenerate,
}

/// Fraction of the pair amplitude discarded by coincidence post-selection.
pub fn postselection_fraction(scheme: PairScheme) -> f64 {
    match scheme {
        PairScheme::BeamsplitterDegenerate => 0.5,
        PairScheme::DichroicNondegenerate => 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_1_SQRT_2, PI};

    fn close(a: Complex64, b: f64) -> bool {
        (a - b).norm() < 1e-12
    }

    #[test]
    fn bell_coefficients() {
        let p = make_state(BellKind::PhiPlus, 0.0, 1.0).unwrap();
        assert!(close(p.coefficients[HH], FRAC_1_SQRT_2) && close(p.coefficients[VV], FRAC_1_SQRT_2));
        assert!(close(p.coefficients[HV], 0.0) && close(p.coefficients[VH], 0.0));
        let m = make_state(BellKind::PhiMinus, 0.0, 1.0).unwrap();
        let mp = make_state(BellKind::PhiPlus, PI, 1.0).unwrap();
        assert!((fidelity(&m, &mp) - 1.0).abs() < 1e-12);
        let c = make_state(BellKind::Custom, 0.0, 2.0).unwrap();
        assert!(close(c.coefficients[HH], 2.0 / 5f64.sqrt()));
        assert!(close(c.coefficients[VV], 1.0 / 5f64.sqrt()));
        assert!(make_state(BellKind::Custom, 0.0, -1.0).is_err());
        assert!(make_state(BellKind::Custom, 0.0, f64::NAN).is_err());
        // named kinds ignore the ratio
        let r = make_state(BellKind::PsiMinus, 0.0, 7.0).unwrap();
        assert!(close(r.coefficients[HV], FRAC_1_SQRT_2));
    }

    #[test]
    fn analyzer_examples() {
        let p = make_state(BellKind::PhiPlus, 0.0, 1.0).unwrap();
        let at = |a, b| AnalyzerSetting {
            theta1_deg: a,
            theta2_deg: b,
        };
        assert!((project(&p, &at(45.0, 45.0)) - 0.5).abs() < 1e-12);
        assert!(project(&p, &at(45.0, 135.0)).abs() < 1e-12);
    }

    #[test]
    fn half_wave_plate_examples() {
        let phi_p = make_state(BellKind::PhiPlus, 0.0, 1.0).unwrap();
        let phi_m = make_state(BellKind::PhiMinus, 0.0, 1.0).unwrap();
        let psi_p = make_state(BellKind::PsiPlus, 0.0, 1.0).unwrap();
        let flipped = half_wave_plate(&phi_p, Port::One, 0.0);
        assert!((fidelity(&flipped, &phi_m) - 1.0).abs() < 1e-12);
        let swapped = half_wave_plate(&phi_p, Port::One, 45.0);
        assert!((fidelity(&swapped, &psi_p) - 1.0).abs() < 1e-12);
        // 22.5 deg only rotates halfway.
        let half = half_wave_plate(&phi_p, Port::One, 22.5);
        assert!((fidelity(&half, &psi_p) - 0.5).abs() < 1e-12);
        let vv = PolarizationState::new(
            [0.0, 0.0, 0.0, 1.0].map(|x| Complex64::new(x, 0.0)),
            DEFAULT_WAVELENGTHS_NM,
        )
        .unwrap();
        let out = half_wave_plate(&vv, Port::Two, 0.0);
        assert!(close(out.coefficients[VV], 1.0));
    }

    #[test]
    fn fidelity_examples() {
        let p = make_state(BellKind::PhiPlus, 0.0, 1.0).unwrap();
        let m = make_state(BellKind::PhiMinus, 0.0, 1.0).unwrap();
        assert!((fidelity(&p, &p) - 1.0).abs() < 1e-12);
        assert!(fidelity(&p, &m).abs() < 1e-12);
        for d in [0.1, 0.7, 2.0] {
            let e = make_state(BellKind::PhiPlus, d, 1.0).unwrap();
            assert!((fidelity(&e, &p) - (d / 2.0).cos().powi(2)).abs() < 1e-12);
        }
        assert!((fidelity_with_visibility(&p, &p, 0.0) - 0.5).abs() < 1e-12);
        assert!((fidelity_with_visibility(&p, &p, 0.9) - 0.95).abs() < 1e-12);
    }

    #[test]
    fn postselection() {
        assert_eq!(postselection_fraction(PairScheme::BeamsplitterDegenerate), 0.5);
        assert_eq!(postselection_fraction(PairScheme::DichroicNondegenerate), 0.0);
    }

    #[test]
    fn ideal_bell_polarization_fringe_has_unit_visibility() {
        let p = make_state(BellKind::PhiPlus, 0.0, 1.0).unwrap();
        let rates: Vec<f64> = (0..=180)
            .map(|k| {
                project(
                    &p,
                    &AnalyzerSetting {
                        theta1_deg: 45.0,
                        theta2_deg: k as f64,
                    },
                )
            })
            .collect();
        let max = rates.iter().cloned().fold(f64::MIN, f64::max);
        let min = rates.iter().cloned().fold(f64::MAX, f64::min);
        assert!(((max - min) / (max + min) - 1.0).abs() < 1e-12);
    }

    // Brute-force contraction with explicit single-photon vectors.
    fn oracle(state: &PolarizationState, t1: f64, t2: f64) -> f64 {
        let v = |t: f64| [t.to_radians().sin(), t.to_radians().cos()]; // (H, V)
        let (a, b) = (v(t1), v(t2));
        let mut amp = Complex64::new(0.0, 0.0);
        for i in 0..2 {
            for j in 0..2 {
                amp += state.coefficients[2 * i + j] * a[i] * b[j];
            }
        }
        amp.norm_sqr()
    }

    proptest! {
        #[test]
        fn cos_squared_law(t1 in -360.0f64..360.0, t2 in -360.0f64..360.0) {
            let p = make_state(BellKind::PhiPlus, 0.0, 1.0).unwrap();
            let m = make_state(BellKind::PhiMinus, 0.0, 1.0).unwrap();
            let a = AnalyzerSetting { theta1_deg: t1, theta2_deg: t2 };
            let cp = 0.5 * (t1 - t2).to_radians().cos().powi(2);
            let cm = 0.5 * (t1 + t2).to_radians().cos().powi(2);
            prop_assert!((project(&p, &a) - cp).abs() < 1e-12);
            prop_assert!((project(&m, &a) - cm).abs() < 1e-12);
            prop_assert!((project(&m, &a) - oracle(&m, t1, t2)).abs() < 1e-12);
        }

        #[test]
        fn phi_plus_is_rotation_invariant(t1 in -180.0f64..180.0, t2 in -180.0f64..180.0, d in -180.0f64..180.0) {
            let p = make_state(BellKind::PhiPlus, 0.0, 1.0).unwrap();
            let a = AnalyzerSetting { theta1_deg: t1, theta2_deg: t2 };
            let b = AnalyzerSetting { theta1_deg: t1 + d, theta2_deg: t2 + d };
            prop_assert!((project(&p, &a) - project(&p, &b)).abs() < 1e-12);
        }

        #[test]
        fn wave_plate_is_unitary_involution(
            re in proptest::array::uniform4(-1.0f64..1.0),
            im in proptest::array::uniform4(-1.0f64..1.0),
            axis in -90.0f64..90.0,
            two in any::<bool>(),
        ) {
            let c = [0, 1, 2, 3].map(|k| Complex64::new(re[k], im[k]));
            prop_assume!(c.iter().map(|x| x.norm_sqr()).sum::<f64>() > 1e-3);
            let s = PolarizationState::new(c, DEFAULT_WAVELENGTHS_NM).unwrap();
            let port = if two { Port::Two } else { Port::One };
            let once = half_wave_plate(&s, port, axis);
            prop_assert!((once.norm_sq() - 1.0).abs() < 1e-12);
            let twice = half_wave_plate(&once, port, axis);
            prop_assert!((fidelity(&twice, &s) - 1.0).abs() < 1e-12);
        }
    }
}
