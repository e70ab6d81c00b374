//! Frequency-domain ingredients of the biphoton amplitude: the pump envelope,
//! detector filters, the crystal phase-matching function, and the grid on
//! which the joint spectral amplitude is sampled.

use std::f64::consts::{LN_2, PI};
use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::biphoton::{JointSpectralAmplitude, Provenance};
use crate::error::{Error, Result};
use crate::units::{angular_frequency, bandwidth_nm_to_rad_per_fs};

/// Intensity standard deviation per unit of intensity FWHM for a Gaussian.
pub const FWHM_TO_SIGMA: f64 = 0.424_660_900_144_009_5; // 1 / (2 sqrt(2 ln 2))

/// Minimum samples across the narrowest JSA feature on an automatic grid.
pub const SAMPLES_PER_FEATURE: f64 = 4.0;
pub const MAX_AUTO_POINTS: usize = 2048;
/// Edge-to-peak magnitude above which a grid counts as truncating the JSA.
pub const TRUNCATION_THRESHOLD: f64 = 1e-4;

/// Transform-limited Gaussian pump pulse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PumpPulse {
    pub center_wavelength_nm: f64,
    pub duration_fs: f64,
    pub polarization_angle_deg: f64,
    /// Multiplies `duration_fs` to give the intensity-envelope standard
    /// deviation in time. The default reads the duration as intensity FWHM.
    #[serde(default = "default_duration_to_sigma")]
    pub duration_to_sigma: f64,
}

fn default_duration_to_sigma() -> f64 {
    FWHM_TO_SIGMA
}

impl PumpPulse {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration_fs > 0.0 && self.center_wavelength_nm > 0.0 && self.duration_to_sigma > 0.0)
        {
            return Err(Error::invalid(
                "pump duration, center wavelength and duration conversion must be positive",
            ));
        }
        Ok(())
    }

    pub fn center_frequency(&self) -> f64 {
        angular_frequency(self.center_wavelength_nm)
    }

    /// Standard deviation of the intensity envelope in time, fs.
    pub fn sigma_t(&self) -> f64 {
        self.duration_fs * self.duration_to_sigma
    }

    /// Standard deviation of the spectral intensity, rad/fs.
    pub fn sigma_omega(&self) -> f64 {
        0.5 / self.sigma_t()
    }
}

/// `alpha(w) = exp(-(w - W_p)^2 / (4 sigma_w^2))`, peak 1 at the carrier.
pub fn pump_spectrum(pulse: &PumpPulse, omega_sum: f64) -> Complex64 {
    let d = omega_sum - pulse.center_frequency();
    let s = pulse.sigma_omega();
    Complex64::new((-d * d / (4.0 * s * s)).exp(), 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterShape {
    Gaussian,
    Rectangular,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralFilter {
    pub center_nm: f64,
    #[serde(default)]
    pub fwhm_nm: f64,
    pub shape: FilterShape,
}

impl SpectralFilter {
    pub fn none(center_nm: f64) -> Self {
        Self {
            center_nm,
            fwhm_nm: 0.0,
            shape: FilterShape::None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.shape != FilterShape::None && !(self.fwhm_nm > 0.0 && self.center_nm > 0.0) {
            return Err(Error::invalid(format!(
                "filter at {} nm needs a positive FWHM",
                self.center_nm
            )));
        }
        Ok(())
    }

    /// Intensity FWHM in angular frequency.
    pub fn fwhm_omega(&self) -> f64 {
        bandwidth_nm_to_rad_per_fs(self.center_nm, self.fwhm_nm)
    }
}

/// Amplitude transmission, the square root of the intensity transmission.
pub fn filter_amplitude(f: &SpectralFilter, omega: f64) -> f64 {
    match f.shape {
        FilterShape::None => 1.0,
        FilterShape::Gaussian => {
            let d = omega - angular_frequency(f.center_nm);
            let w = f.fwhm_omega();
            // Intensity exp(-4 ln2 d^2 / w^2).
            (-2.0 * std::f64::consts::LN_2 * d * d / (w * w)).exp()
        }
        FilterShape::Rectangular => {
            let d = omega - angular_frequency(f.center_nm);
            if d.abs() <= 0.5 * f.fwhm_omega() {
                1.0
            } else {
                0.0
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseMatchingShape {
    #[default]
    Sinc,
    /// Gaussian stand-in for the sinc with the same intensity FWHM. Used by
    /// closed-form checks.
    Gaussian,
}

/// First-order (group-velocity) phase-matching model of one crystal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseMatchingSpec {
    pub crystal_length_mm: f64,
    pub signal_center_nm: f64,
    pub idler_center_nm: f64,
    pub inverse_group_velocity_pump_fs_per_mm: f64,
    pub inverse_group_velocity_signal_fs_per_mm: f64,
    pub inverse_group_velocity_idler_fs_per_mm: f64,
    #[serde(default)]
    pub shape: PhaseMatchingShape,
}

/// `exp(-g x^2)` has the same intensity FWHM as `sinc(x)`.
const GAUSSIAN_PM_COEFF: f64 = 0.178_981_143_696_891_6; // ln2 / (2 * 1.39155737^2)

impl PhaseMatchingSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.crystal_length_mm > 0.0) {
            return Err(Error::invalid("crystal length must be positive"));
        }
        if !(self.signal_center_nm > 0.0 && self.idler_center_nm > 0.0) {
            return Err(Error::invalid("signal and idler centers must be positive"));
        }
        Ok(())
    }

    /// Relative violation of `1/ls + 1/li = 1/lp` at the configured centers.
    pub fn energy_mismatch(&self, pump_nm: f64) -> f64 {
        let lhs = 1.0 / self.signal_center_nm + 1.0 / self.idler_center_nm;
        ((lhs - 1.0 / pump_nm) * pump_nm).abs()
    }

    pub fn check_energy_conservation(&self, pump_nm: f64) -> Result<()> {
        let m = self.energy_mismatch(pump_nm);
        if m < 1e-3 {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "1/{} + 1/{} differs from 1/{pump_nm} by {m:.2e} (relative)",
                self.signal_center_nm, self.idler_center_nm
            )))
        }
    }

    pub fn signal_center(&self) -> f64 {
        angular_frequency(self.signal_center_nm)
    }

    pub fn idler_center(&self) -> f64 {
        angular_frequency(self.idler_center_nm)
    }

    /// Half the phase mismatch accumulated over the crystal, `D L / 2`.
    pub fn half_mismatch(&self, nu_s: f64, nu_i: f64) -> f64 {
        let kp = self.inverse_group_velocity_pump_fs_per_mm;
        let d = (kp - self.inverse_group_velocity_signal_fs_per_mm) * nu_s
            + (kp - self.inverse_group_velocity_idler_fs_per_mm) * nu_i;
        0.5 * d * self.crystal_length_mm
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// `sinc(D L / 2) exp(i D L / 2)` for signal/idler detunings in rad/fs.
pub fn phase_matching(spec: &PhaseMatchingSpec, nu_s: f64, nu_i: f64) -> Complex64 {
    let x = spec.half_mismatch(nu_s, nu_i);
    let mag = match spec.shape {
        PhaseMatchingShape::Sinc => sinc(x),
        PhaseMatchingShape::Gaussian => (-GAUSSIAN_PM_COEFF * x * x).exp(),
    };
    Complex64::from_polar(1.0, x) * mag
}

/// Uniform angular-frequency axes for signal and idler, rad/fs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrequencyGrid {
    pub signal_axis: Vec<f64>,
    pub idler_axis: Vec<f64>,
}

impl FrequencyGrid {
    pub fn new(signal_axis: Vec<f64>, idler_axis: Vec<f64>) -> Result<Self> {
        for (name, axis) in [("signal", &signal_axis), ("idler", &idler_axis)] {
            if axis.len() < 2 {
                return Err(Error::invalid(format!("{name} axis needs at least two points")));
            }
            let step = axis[1] - axis[0];
            if !(step > 0.0) {
                return Err(Error::invalid(format!("{name} axis must be strictly increasing")));
            }
            for w in axis.windows(2) {
                if ((w[1] - w[0]) - step).abs() > 1e-9 * step.max(1e-12) + 1e-12 * w[1].abs() {
                    return Err(Error::invalid(format!("{name} axis must be uniformly spaced")));
                }
            }
        }
        Ok(Self {
            signal_axis,
            idler_axis,
        })
    }

    /// `n` points per axis with the center frequency at index `n / 2`.
    pub fn centered(
        signal_center: f64,
        idler_center: f64,
        signal_half_span: f64,
        idler_half_span: f64,
        n: usize,
    ) -> Result<Self> {
        if n < 4 {
            return Err(Error::invalid("grid needs at least 4 points per axis"));
        }
        let axis = |c: f64, h: f64| -> Vec<f64> {
            let step = 2.0 * h / n as f64;
            (0..n)
                .map(|k| c + (k as f64 - (n / 2) as f64) * step)
                .collect()
        };
        Self::new(
            axis(signal_center, signal_half_span),
            axis(idler_center, idler_half_span),
        )
    }

    pub fn signal_step(&self) -> f64 {
        self.signal_axis[1] - self.signal_axis[0]
    }

    pub fn idler_step(&self) -> f64 {
        self.idler_axis[1] - self.idler_axis[0]
    }

    pub fn cell_area(&self) -> f64 {
        self.signal_step() * self.idler_step()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.signal_axis.len(), self.idler_axis.len())
    }

    /// Same axes at twice the resolution over the same span.
    pub fn refined(&self, signal_center: f64, idler_center: f64) -> Result<Self> {
        let (ns, _) = self.shape();
        let hs = 0.5 * ns as f64 * self.signal_step();
        let hi = 0.5 * self.idler_axis.len() as f64 * self.idler_step();
        Self::centered(signal_center, idler_center, hs, hi, 2 * ns)
    }
}

/// All factors of the JSA except normalization.
struct JsaModel<'a> {
    pulse: &'a PumpPulse,
    spec: &'a PhaseMatchingSpec,
    f_s: &'a SpectralFilter,
    f_i: &'a SpectralFilter,
}

impl JsaModel<'_> {
    fn value(&self, ws: f64, wi: f64) -> Complex64 {
        let nu_s = ws - self.spec.signal_center();
        let nu_i = wi - self.spec.idler_center();
        pump_spectrum(self.pulse, ws + wi)
            * phase_matching(self.spec, nu_s, nu_i)
            * filter_amplitude(self.f_s, ws)
            * filter_amplitude(self.f_i, wi)
    }

    /// JSA magnitude with the phase-matching sidelobes masked out. The
    /// first-order sinc decays only algebraically, so support and truncation
    /// are judged on the main lobe together with the Gaussian factors.
    fn envelope(&self, ws: f64, wi: f64) -> f64 {
        let nu_s = ws - self.spec.signal_center();
        let nu_i = wi - self.spec.idler_center();
        if self.spec.shape == PhaseMatchingShape::Sinc
            && self.spec.half_mismatch(nu_s, nu_i).abs() > PI
        {
            return 0.0;
        }
        self.value(ws, wi).norm()
    }
}

fn edge_ratio(model: &JsaModel<'_>, grid: &FrequencyGrid) -> f64 {
    let (ns, ni) = grid.shape();
    let mut peak = 0.0_f64;
    let mut edge = 0.0_f64;
    for (j, &ws) in grid.signal_axis.iter().enumerate() {
        for (k, &wi) in grid.idler_axis.iter().enumerate() {
            let e = model.envelope(ws, wi);
            peak = peak.max(e);
            if j == 0 || k == 0 || j == ns - 1 || k == ni - 1 {
                edge = edge.max(e);
            }
        }
    }
    if peak > 0.0 {
        edge / peak
    } else {
        f64::INFINITY
    }
}

/// Narrowest amplitude feature along the signal and idler axes, rad/fs: the
/// pump amplitude width, the phase-matching main-lobe half width and the
/// filter amplitude width.
pub fn feature_widths(
    pulse: &PumpPulse,
    spec: &PhaseMatchingSpec,
    f_s: &SpectralFilter,
    f_i: &SpectralFilter,
) -> [f64; 2] {
    let pump = 2f64.sqrt() * pulse.sigma_omega();
    let kp = spec.inverse_group_velocity_pump_fs_per_mm;
    let lobe = |k: f64| {
        let slope = 0.5 * spec.crystal_length_mm * (kp - k).abs();
        if slope > 0.0 {
            PI / slope
        } else {
            f64::INFINITY
        }
    };
    let filter = |f: &SpectralFilter| match f.shape {
        FilterShape::Gaussian => f.fwhm_omega() / (2.0 * LN_2.sqrt()),
        FilterShape::Rectangular => f.fwhm_omega(),
        FilterShape::None => f64::INFINITY,
    };
    [
        pump.min(lobe(spec.inverse_group_velocity_signal_fs_per_mm)).min(filter(f_s)),
        pump.min(lobe(spec.inverse_group_velocity_idler_fs_per_mm)).min(filter(f_i)),
    ]
}

/// At least `points`, raised to the next power of two when the grid with half
/// spans `half` would sample the narrowest feature with fewer than
/// `SAMPLES_PER_FEATURE` points.
pub fn resolved_points(
    pulse: &PumpPulse,
    spec: &PhaseMatchingSpec,
    f_s: &SpectralFilter,
    f_i: &SpectralFilter,
    half: [f64; 2],
    points: usize,
) -> Result<usize> {
    let w = feature_widths(pulse, spec, f_s, f_i);
    let need = (0..2)
        .map(|a| (2.0 * half[a] * SAMPLES_PER_FEATURE / w[a]).ceil() as usize)
        .max()
        .unwrap_or(0);
    if need <= points {
        return Ok(points);
    }
    let n = need.next_power_of_two();
    if n > MAX_AUTO_POINTS {
        return Err(Error::invalid(format!(
            "resolving the JSA needs {n} points per axis (limit {MAX_AUTO_POINTS}); narrow the filters or set grid half spans"
        )));
    }
    Ok(n)
}

/// Sizes a grid around the phase-matching centers so that the JSA envelope
/// falls below the truncation threshold at every edge.
pub fn auto_grid(
    pulse: &PumpPulse,
    spec: &PhaseMatchingSpec,
    f_s: &SpectralFilter,
    f_i: &SpectralFilter,
    points: usize,
) -> Result<FrequencyGrid> {
    let model = JsaModel { pulse, spec, f_s, f_i };
    let (cs, ci) = (spec.signal_center(), spec.idler_center());
    let limit = 0.45 * cs.min(ci);
    let probe_n = 257;
    let mut h = [0.5_f64.min(limit), 0.5_f64.min(limit)];
    let mut bounds = [0.0; 2];
    for _ in 0..60 {
        let step = [2.0 * h[0] / (probe_n - 1) as f64, 2.0 * h[1] / (probe_n - 1) as f64];
        let at = |k: usize, a: usize| (k as f64 - ((probe_n - 1) / 2) as f64) * step[a];
        let mut peak = 0.0_f64;
        let mut vals = vec![0.0; probe_n * probe_n];
        for j in 0..probe_n {
            for k in 0..probe_n {
                let e = model.envelope(cs + at(j, 0), ci + at(k, 1));
                vals[j * probe_n + k] = e;
                peak = peak.max(e);
            }
        }
        if peak <= 0.0 {
            return Err(Error::invalid("JSA envelope vanishes at the phase-matching centers"));
        }
        let thr = 0.5 * TRUNCATION_THRESHOLD * peak;
        let mut b = [0.0_f64; 2];
        for j in 0..probe_n {
            for k in 0..probe_n {
                if vals[j * probe_n + k] > thr {
                    b[0] = b[0].max(at(j, 0).abs() + step[0]);
                    b[1] = b[1].max(at(k, 1).abs() + step[1]);
                }
            }
        }
        let mut settled = true;
        for a in 0..2 {
            if b[a] >= h[a] - step[a] {
                if h[a] >= limit {
                    return Err(Error::GridTruncation {
                        edge_ratio: 1.0,
                        threshold: TRUNCATION_THRESHOLD,
                    });
                }
                h[a] = (2.0 * h[a]).min(limit);
                settled = false;
            } else if b[a] < 0.3 * h[a] {
                h[a] = 1.5 * b[a];
                settled = false;
            }
        }
        bounds = b;
        if settled {
            break;
        }
    }
    let mut half = [1.1 * bounds[0], 1.1 * bounds[1]];
    let points = resolved_points(pulse, spec, f_s, f_i, half, points)?;
    for _ in 0..20 {
        let grid = FrequencyGrid::centered(cs, ci, half[0], half[1], points)?;
        if edge_ratio(&model, &grid) <= TRUNCATION_THRESHOLD {
            return Ok(grid);
        }
        half = [1.2 * half[0], 1.2 * half[1]];
    }
    Err(Error::GridTruncation {
        edge_ratio: 1.0,
        threshold: TRUNCATION_THRESHOLD,
    })
}

/// Samples `alpha(ws + wi) Phi(nu_s, nu_i) f_s(ws) f_i(wi)` on the grid and
/// L2-normalizes it so that `sum |JSA|^2 dws dwi = 1`.
pub fn build_jsa(
    pulse: &PumpPulse,
    spec: &PhaseMatchingSpec,
    f_s: &SpectralFilter,
    f_i: &SpectralFilter,
    grid: Arc<FrequencyGrid>,
) -> Result<JointSpectralAmplitude> {
    pulse.validate()?;
    spec.validate()?;
    f_s.validate()?;
    f_i.validate()?;
    let model = JsaModel { pulse, spec, f_s, f_i };
    let ratio = edge_ratio(&model, &grid);
    if ratio > TRUNCATION_THRESHOLD {
        return Err(Error::GridTruncation {
            edge_ratio: ratio,
            threshold: TRUNCATION_THRESHOLD,
        });
    }
    let (ns, ni) = grid.shape();
    let mut values = Array2::<Complex64>::zeros((ns, ni));
    for (j, &ws) in grid.signal_axis.iter().enumerate() {
        for (k, &wi) in grid.idler_axis.iter().enumerate() {
            values[[j, k]] = model.value(ws, wi);
        }
    }
    let norm_sq: f64 = values.iter().map(|v| v.norm_sqr()).sum::<f64>() * grid.cell_area();
    if !(norm_sq > 0.0) {
        return Err(Error::invalid("JSA vanishes on the grid"));
    }
    values.mapv_inplace(|v| v / norm_sq.sqrt());
    Ok(JointSpectralAmplitude::from_parts(
        grid,
        values,
        Provenance::new("crystal"),
    ))
}
