//! Joint spectral amplitudes, the delays that act on them, and the
//! coincidence rate of two coherently superposed emission amplitudes.

use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::spectral::FrequencyGrid;

/// Record of how an amplitude was produced.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub source: String,
    pub operations: Vec<String>,
    /// False once the amplitude has been rescaled away from unit norm.
    pub normalized: bool,
}

impl Provenance {
    pub fn new(source: impl Into<String>) -> Self {
        Self {
            source: source.into(),
            operations: Vec::new(),
            normalized: true,
        }
    }
}

/// Complex amplitude sampled on a signal x idler frequency grid. Row index is
/// signal frequency, column index is idler frequency.
#[derive(Debug, Clone)]
pub struct JointSpectralAmplitude {
    grid: Arc<FrequencyGrid>,
    values: Array2<Complex64>,
    provenance: Provenance,
}

impl JointSpectralAmplitude {
    pub fn from_parts(
        grid: Arc<FrequencyGrid>,
        values: Array2<Complex64>,
        provenance: Provenance,
    ) -> Self {
        assert_eq!(values.dim(), grid.shape(), "JSA values do not match the grid");
        Self {
            grid,
            values,
            provenance,
        }
    }

    pub fn grid(&self) -> &Arc<FrequencyGrid> {
        &self.grid
    }

    pub fn values(&self) -> &Array2<Complex64> {
        &self.values
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.provenance.source = source.into();
        self
    }

    /// `sum |A|^2 dws dwi`.
    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.grid.cell_area()
    }

    fn derived(&self, values: Array2<Complex64>, op: String) -> Self {
        let mut provenance = self.provenance.clone();
        provenance.operations.push(op);
        Self {
            grid: Arc::clone(&self.grid),
            values,
            provenance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Arm {
    Signal,
    Idler,
}

/// Multiplies by `exp(i ws ts) exp(i wi ti)`, absolute frequencies.
pub fn apply_arm_delays(
    jsa: &JointSpectralAmplitude,
    signal_delay_fs: f64,
    idler_delay_fs: f64,
) -> JointSpectralAmplitude {
    let g = &jsa.grid;
    let ps: Vec<Complex64> = g
        .signal_axis
        .iter()
        .map(|w| Complex64::from_polar(1.0, w * signal_delay_fs))
        .collect();
    let pi: Vec<Complex64> = g
        .idler_axis
        .iter()
        .map(|w| Complex64::from_polar(1.0, w * idler_delay_fs))
        .collect();
    let mut values = jsa.values.clone();
    for ((j, k), v) in values.indexed_iter_mut() {
        *v *= ps[j] * pi[k];
    }
    jsa.derived(
        values,
        format!("delay signal {signal_delay_fs} fs, idler {idler_delay_fs} fs"),
    )
}

/// Delays both photons by `delay_fs`: `exp(i (ws + wi) T)`.
pub fn apply_pair_delay(jsa: &JointSpectralAmplitude, delay_fs: f64) -> JointSpectralAmplitude {
    apply_arm_delays(jsa, delay_fs, delay_fs)
}

pub fn apply_single_arm_delay(
    jsa: &JointSpectralAmplitude,
    arm: Arm,
    delay_fs: f64,
) -> JointSpectralAmplitude {
    match arm {
        Arm::Signal => apply_arm_delays(jsa, delay_fs, 0.0),
        Arm::Idler => apply_arm_delays(jsa, 0.0, delay_fs),
    }
}

/// Frequency-independent phase factor `exp(i phi)`.
pub fn apply_phase(jsa: &JointSpectralAmplitude, phi_rad: f64) -> JointSpectralAmplitude {
    let f = Complex64::from_polar(1.0, phi_rad);
    jsa.derived(jsa.values.mapv(|v| v * f), format!("phase {phi_rad} rad"))
}

/// Scales the amplitude by `r`; the result is no longer unit-normalized
/// unless `r == 1`.
pub fn scale(jsa: &JointSpectralAmplitude, r: f64) -> JointSpectralAmplitude {
    let mut out = jsa.derived(jsa.values.mapv(|v| v * r), format!("scale {r}"));
    out.provenance.normalized = jsa.provenance.normalized && r == 1.0;
    out
}

fn check_grids(a: &JointSpectralAmplitude, b: &JointSpectralAmplitude) -> Result<()> {
    if Arc::ptr_eq(&a.grid, &b.grid) || *a.grid == *b.grid {
        Ok(())
    } else {
        Err(Error::GridMismatch)
    }
}

/// `<a|b> = sum conj(a) b dws dwi`.
pub fn overlap(a: &JointSpectralAmplitude, b: &JointSpectralAmplitude) -> Result<Complex64> {
    check_grids(a, b)?;
    let s: Complex64 = a
        .values
        .iter()
        .zip(b.values.iter())
        .map(|(x, y)| x.conj() * y)
        .sum();
    Ok(s * a.grid.cell_area())
}

/// Two emission amplitudes and the relative phase with which they add.
#[derive(Debug, Clone)]
pub struct AmplitudePair {
    pub amp_a: JointSpectralAmplitude,
    pub amp_b: JointSpectralAmplitude,
    pub relative_phase_rad: f64,
}

impl AmplitudePair {
    pub fn new(
        amp_a: JointSpectralAmplitude,
        amp_b: JointSpectralAmplitude,
        relative_phase_rad: f64,
    ) -> Result<Self> {
        check_grids(&amp_a, &amp_b)?;
        Ok(Self {
            amp_a,
            amp_b,
            relative_phase_rad,
        })
    }

    pub fn overlap(&self) -> Complex64 {
        overlap(&self.amp_a, &self.amp_b).expect("grids checked at construction")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoincidenceResult {
    /// Rate normalized so that a fully incoherent sum gives 1 and equal,
    /// fully overlapping amplitudes give `1 + cos(phi)`.
    pub rate: f64,
    /// `2 |<a|b>| / (|a|^2 + |b|^2)`, the largest fringe visibility reachable
    /// by scanning the relative phase.
    pub visibility_bound: f64,
    /// `sum |wa A_a + wb exp(i phi) A_b|^2 dws dwi` before normalization.
    pub raw_rate: f64,
}

/// Coincidence rate behind a polarizer pair that weights the two emission
/// amplitudes by `weight_a` and `weight_b`.
pub fn projected_rate(
    pair: &AmplitudePair,
    weight_a: Complex64,
    weight_b: Complex64,
) -> CoincidenceResult {
    let fb = weight_b * Complex64::from_polar(1.0, pair.relative_phase_rad);
    let a = &pair.amp_a;
    let b = &pair.amp_b;
    let mut raw = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    let mut ab = Complex64::new(0.0, 0.0);
    for (x, y) in a.values.iter().zip(b.values.iter()) {
        raw += (weight_a * x + fb * y).norm_sqr();
        na += x.norm_sqr();
        nb += y.norm_sqr();
        ab += x.conj() * y;
    }
    let da = a.grid.cell_area();
    let (raw, na, nb, ab) = (raw * da, na * da, nb * da, ab.norm() * da);
    let denom = na + nb;
    CoincidenceResult {
        rate: raw / denom,
        visibility_bound: (2.0 * ab / denom).min(1.0),
        raw_rate: raw,
    }
}

/// `|A_a + exp(i phi) A_b|^2 / (|a|^2 + |b|^2)`, integrated over the grid.
pub fn coincidence_rate(pair: &AmplitudePair) -> CoincidenceResult {
    let one = Complex64::new(1.0, 0.0);
    projected_rate(pair, one, one)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{
        auto_grid, build_jsa, FilterShape, PhaseMatchingShape, PhaseMatchingSpec, PumpPulse,
        SpectralFilter, FWHM_TO_SIGMA,
    };
    use crate::units::inverse_group_velocity_fs_per_mm;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn pulse() -> PumpPulse {
        PumpPulse {
            center_wavelength_nm: 400.0,
            duration_fs: 80.0,
            polarization_angle_deg: 45.0,
            duration_to_sigma: FWHM_TO_SIGMA,
        }
    }

    fn spec(shape: PhaseMatchingShape) -> PhaseMatchingSpec {
        PhaseMatchingSpec {
            crystal_length_mm: 3.4,
            signal_center_nm: 730.0,
            idler_center_nm: 885.0,
            inverse_group_velocity_pump_fs_per_mm: inverse_group_velocity_fs_per_mm(1.742355),
            inverse_group_velocity_signal_fs_per_mm: inverse_group_velocity_fs_per_mm(1.690907),
            inverse_group_velocity_idler_fs_per_mm: inverse_group_velocity_fs_per_mm(1.681185),
            shape,
        }
    }

    fn jsa(shape: PhaseMatchingShape, filter_nm: Option<f64>, n: usize) -> JointSpectralAmplitude {
        let (fs, fi) = match filter_nm {
            Some(w) => (
                SpectralFilter {
                    center_nm: 730.0,
                    fwhm_nm: w,
                    shape: FilterShape::Gaussian,
                },
                SpectralFilter {
                    center_nm: 885.0,
                    fwhm_nm: w,
                    shape: FilterShape::Gaussian,
                },
            ),
            None => (SpectralFilter::none(730.0), SpectralFilter::none(885.0)),
        };
        let p = pulse();
        let s = spec(shape);
        let grid = auto_grid(&p, &s, &fs, &fi, n).unwrap();
        build_jsa(&p, &s, &fs, &fi, Arc::new(grid)).unwrap()
    }

    #[test]
    fn pair_delay_overlap_matches_gaussian_closed_form() {
        // Unfiltered Gaussian stand-in: |J|^2 is a bivariate Gaussian with
        // precision M = (1/s^2) [1 1; 1 1] + 4 g (L/2)^2 [a^2 ab; ab b^2],
        // so |<J|J_T>| = exp(-Var(ws + wi) T^2 / 2), Var = [1 1] M^-1 [1 1]^T.
        let a = jsa(PhaseMatchingShape::Gaussian, None, 256);
        let p = pulse();
        let s = spec(PhaseMatchingShape::Gaussian);
        let sw = p.sigma_omega();
        let g = 0.178_981_143_696_891_6;
        let kp = s.inverse_group_velocity_pump_fs_per_mm;
        let ca = kp - s.inverse_group_velocity_signal_fs_per_mm;
        let cb = kp - s.inverse_group_velocity_idler_fs_per_mm;
        let h = 4.0 * g * (s.crystal_length_mm / 2.0).powi(2);
        let m11 = 1.0 / (sw * sw) + h * ca * ca;
        let m12 = 1.0 / (sw * sw) + h * ca * cb;
        let m22 = 1.0 / (sw * sw) + h * cb * cb;
        let det = m11 * m22 - m12 * m12;
        let var = (m22 - 2.0 * m12 + m11) / det;
        // The phase-matching factor constrains a different combination, so
        // the sum-frequency variance is the pump's alone.
        assert!((var / (sw * sw) - 1.0).abs() < 1e-9);
        for t in [0.0, 20.0, 60.0, 120.0] {
            let b = apply_pair_delay(&a, t);
            let got = overlap(&a, &b).unwrap().norm();
            let expect = (-0.5 * var * t * t).exp();
            assert!((got - expect).abs() < 1e-4, "T={t}: {got} vs {expect}");
        }
    }

    // Naive separable 2-D DFT to the time domain.
    fn to_time(j: &JointSpectralAmplitude, ts: &[f64], ti: &[f64]) -> Array2<Complex64> {
        let g = j.grid();
        let mut half = Array2::<Complex64>::zeros((ts.len(), g.idler_axis.len()));
        for (p, &t) in ts.iter().enumerate() {
            for (k, _) in g.idler_axis.iter().enumerate() {
                let mut acc = Complex64::new(0.0, 0.0);
                for (jj, &w) in g.signal_axis.iter().enumerate() {
                    acc += j.values()[[jj, k]] * Complex64::from_polar(1.0, -w * t);
                }
                half[[p, k]] = acc;
            }
        }
        let mut out = Array2::<Complex64>::zeros((ts.len(), ti.len()));
        for p in 0..ts.len() {
            for (q, &t) in ti.iter().enumerate() {
                let mut acc = Complex64::new(0.0, 0.0);
                for (k, &w) in g.idler_axis.iter().enumerate() {
                    acc += half[[p, k]] * Complex64::from_polar(1.0, -w * t);
                }
                out[[p, q]] = acc;
            }
        }
        out
    }

    #[test]
    fn coincidence_rate_matches_time_domain_integral() {
        // Sum the two time-domain amplitudes and integrate |.|^2 over the
        // full periodic window of the DFT (Parseval with dt = 2 pi / (N dw)).
        let a = jsa(PhaseMatchingShape::Sinc, Some(10.0), 64);
        let b = apply_phase(&apply_pair_delay(&a, 35.0), 0.3);
        let pair = AmplitudePair::new(a.clone(), b.clone(), 1.1).unwrap();
        let g = a.grid();
        let (ns, ni) = g.shape();
        let dts = 2.0 * PI / (ns as f64 * g.signal_step());
        let dti = 2.0 * PI / (ni as f64 * g.idler_step());
        let ts: Vec<f64> = (0..ns).map(|k| k as f64 * dts).collect();
        let ti: Vec<f64> = (0..ni).map(|k| k as f64 * dti).collect();
        let ta = to_time(&a, &ts, &ti);
        let tb = to_time(&b, &ts, &ti);
        let f = Complex64::from_polar(1.0, 1.1);
        let dw = g.cell_area() / (2.0 * PI);
        let mut raw = 0.0;
        for (x, y) in ta.iter().zip(tb.iter()) {
            raw += (x + f * y).norm_sqr();
        }
        raw *= dw * dw * dts * dti;
        let r = coincidence_rate(&pair);
        assert!((r.raw_rate - raw).abs() < 1e-9 * raw, "{} vs {raw}", r.raw_rate);
    }

    #[test]
    fn grid_mismatch_is_an_error() {
        let a = jsa(PhaseMatchingShape::Sinc, Some(10.0), 128);
        let b = jsa(PhaseMatchingShape::Sinc, Some(10.0), 64);
        assert!(matches!(overlap(&a, &b), Err(Error::GridMismatch)));
        assert!(AmplitudePair::new(a, b, 0.0).is_err());
    }

    #[test]
    fn rate_extremes_for_identical_amplitudes() {
        let a = jsa(PhaseMatchingShape::Sinc, Some(10.0), 64);
        let r0 = coincidence_rate(&AmplitudePair::new(a.clone(), a.clone(), 0.0).unwrap());
        let rpi = coincidence_rate(&AmplitudePair::new(a.clone(), a.clone(), PI).unwrap());
        assert!((r0.rate - 2.0).abs() < 1e-12);
        let rh = coincidence_rate(&AmplitudePair::new(a.clone(), a.clone(), 0.5 * PI).unwrap());
        assert!((rh.rate - 1.0).abs() < 1e-12);
        assert!(rpi.rate.abs() < 1e-12);
        assert!((r0.visibility_bound - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scaling_marks_unnormalized() {
        let a = jsa(PhaseMatchingShape::Sinc, Some(10.0), 32);
        let b = scale(&a, 0.5);
        assert!(!b.provenance().normalized);
        assert!((b.norm_sq() - 0.25).abs() < 1e-12);
        assert!(scale(&a, 1.0).provenance().normalized);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn delays_preserve_norm_and_compose(t1 in -300.0f64..300.0, t2 in -300.0f64..300.0) {
            let a = jsa(PhaseMatchingShape::Sinc, Some(10.0), 32);
            let b = apply_pair_delay(&a, t1);
            prop_assert!((b.norm_sq() - a.norm_sq()).abs() < 1e-12);
            let twice = apply_pair_delay(&b, t2);
            let once = apply_pair_delay(&a, t1 + t2);
            for (x, y) in twice.values().iter().zip(once.values().iter()) {
                prop_assert!((x - y).norm() < 1e-9);
            }
            let split = apply_single_arm_delay(&apply_single_arm_delay(&a, Arm::Signal, t1), Arm::Idler, t1);
            for (x, y) in split.values().iter().zip(b.values().iter()) {
                prop_assert!((x - y).norm() < 1e-9);
            }
        }

        #[test]
        fn overlap_is_bounded(t in -300.0f64..300.0, phi in -PI..PI) {
            let a = jsa(PhaseMatchingShape::Sinc, None, 32);
            let b = apply_phase(&apply_single_arm_delay(&a, Arm::Idler, t), phi);
            let o = overlap(&a, &b).unwrap();
            prop_assert!(o.norm() <= 1.0 + 1e-12);
            let pair = AmplitudePair::new(a, b, phi).unwrap();
            let r = coincidence_rate(&pair);
            prop_assert!(r.rate >= -1e-12 && r.rate <= 2.0 + 1e-9);
            prop_assert!(r.visibility_bound <= 1.0 + 1e-12);
        }
    }
}
