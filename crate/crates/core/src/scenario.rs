//! Complete sources: the collinear two-crystal scheme and the Mach-Zehnder
//! scheme, their birefringent compensation, the phase knobs, and fringe scans.
//!
//! Crystal 1 (optic axis horizontal) is pumped by the H component and emits
//! `|VV>`, the amplitude `amp_a`. Crystal 2 (optic axis vertical) is pumped by
//! V and emits `|HH>`, the amplitude `amp_b`. The prepared state is
//! `|VV> + e^{i phi} |HH>`.
//!
//! Every birefringent element contributes a group delay on the photon
//! envelopes and a carrier phase. They are tracked per amplitude in a
//! [`DelayBudget`] and applied to the crystal JSAs in one pass.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::biphoton::{
    apply_arm_delays, apply_phase, overlap, projected_rate, scale, AmplitudePair, Arm,
    JointSpectralAmplitude,
};
use crate::config::ScenarioFile;
use crate::dispersion::{
    element_delays_lab, extraordinary_group_index_at, group_index, BirefringentElement,
    GroupDelayReport, LabPol, Pol,
};
use crate::error::{Error, Result};
use crate::polarization::{
    analyzer_weights, fidelity_with_visibility, half_wave_plate, make_state, AnalyzerSetting,
    BellKind, PolarizationState, Port,
};
use crate::spectral::{
    auto_grid, build_jsa, FrequencyGrid, PhaseMatchingShape, PhaseMatchingSpec, PumpPulse,
    SpectralFilter,
};
use crate::units::{angular_frequency, inverse_group_velocity_fs_per_mm, NM_PER_MM};

/// Visibility below which preparation is refused.
pub const MIN_PREPARATION_OVERLAP: f64 = 0.9;

/// Visibility below which the effective state is labeled incoherent.
pub const INCOHERENT_BELOW: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Collinear,
    Mzi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    /// Acts on the pump H and V components.
    Before,
    /// Acts on the emitted photons.
    After,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompensationSettings {
    pub placement: Placement,
    /// Solve the thickness of the single compensator element.
    pub auto: bool,
    /// Timing error left by the solved compensator; positive delays `|VV>`.
    pub error_fs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSettings {
    pub points: usize,
    /// Half spans (signal, idler) in rad/fs; automatic when `None`.
    pub half_span: Option<(f64, f64)>,
    pub phase_matching: PhaseMatchingShape,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SourceConfig {
    pub scheme: Scheme,
    pub pump: PumpPulse,
    pub signal_nm: f64,
    pub idler_nm: f64,
    /// Crystal 1 then crystal 2, cut angles resolved.
    pub crystals: [BirefringentElement; 2],
    pub compensation: CompensationSettings,
    pub compensator: Vec<BirefringentElement>,
    /// (signal, idler)
    pub filters: (SpectralFilter, SpectralFilter),
    /// Template of the tiltable knob plate; its crossed partner is implied.
    pub knob_plate: BirefringentElement,
    pub cross_dispersion_enabled: bool,
    pub pump_amplitude_ratio: f64,
    pub grid: GridSettings,
}

impl SourceConfig {
    pub fn builtin() -> Self {
        ScenarioFile::builtin()
            .resolve()
            .expect("shipped default resolves")
            .source
    }

    pub fn validate(&self) -> Result<()> {
        if self.crystals[0].axis == self.crystals[1].axis {
            return Err(Error::config("the two crystals must have orthogonal optic axes"));
        }
        if !(self.pump_amplitude_ratio >= 0.0 && self.pump_amplitude_ratio.is_finite()) {
            return Err(Error::config("pump_amplitude_ratio must be finite and >= 0"));
        }
        if self.compensation.auto && self.compensator.len() != 1 {
            return Err(Error::config(
                "automatic compensation needs exactly one compensator element",
            ));
        }
        for k in 0..2 {
            self.phase_matching_spec(k)
                .and_then(|s| {
                    s.check_energy_conservation(self.pump.center_wavelength_nm)?;
                    Ok(())
                })
                .map_err(|e| Error::config(format!("crystal {}: {e}", k + 1)))?;
        }
        Ok(())
    }

    /// First-order phase matching of crystal `k`: pump extraordinary at the
    /// cut angle, signal and idler ordinary.
    pub fn phase_matching_spec(&self, k: usize) -> Result<PhaseMatchingSpec> {
        let c = &self.crystals[k];
        let theta = c
            .cut_angle_deg
            .ok_or_else(|| Error::invalid("crystal cut angle unresolved"))?;
        let m = &c.material;
        let spec = PhaseMatchingSpec {
            crystal_length_mm: c.thickness_mm,
            signal_center_nm: self.signal_nm,
            idler_center_nm: self.idler_nm,
            inverse_group_velocity_pump_fs_per_mm: inverse_group_velocity_fs_per_mm(
                extraordinary_group_index_at(m, theta, self.pump.center_wavelength_nm)?,
            ),
            inverse_group_velocity_signal_fs_per_mm: inverse_group_velocity_fs_per_mm(
                group_index(m, Pol::O, self.signal_nm)?,
            ),
            inverse_group_velocity_idler_fs_per_mm: inverse_group_velocity_fs_per_mm(
                group_index(m, Pol::O, self.idler_nm)?,
            ),
            shape: self.grid.phase_matching,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Phase knobs: the pump path difference and the tilts of the knob plates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseKnobs {
    #[serde(default)]
    pub pump_delta_x_nm: f64,
    #[serde(default)]
    pub signal_tilt_deg: f64,
    #[serde(default)]
    pub idler_tilt_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisKind {
    PumpDelay,
    SignalTilt,
    IdlerTilt,
    BothTilts,
    Analyzer2Angle,
}

impl std::str::FromStr for AxisKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pump_delay" => Ok(Self::PumpDelay),
            "signal_tilt" => Ok(Self::SignalTilt),
            "idler_tilt" => Ok(Self::IdlerTilt),
            "both_tilts" => Ok(Self::BothTilts),
            "analyzer2_angle" => Ok(Self::Analyzer2Angle),
            other => Err(Error::config(format!("unknown axis kind '{other}'"))),
        }
    }
}

impl AxisKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::PumpDelay => "pump_delay",
            Self::SignalTilt => "signal_tilt",
            Self::IdlerTilt => "idler_tilt",
            Self::BothTilts => "both_tilts",
            Self::Analyzer2Angle => "analyzer2_angle",
        }
    }

    /// Unit of the scan axis.
    pub fn unit(self) -> &'static str {
        match self {
            Self::Analyzer2Angle => "deg",
            _ => "nm",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSettings {
    pub axis_kind: AxisKind,
    pub start: f64,
    pub stop: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSettings {
    #[serde(default)]
    pub enabled: bool,
    pub mean_counts: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolarizationSettings {
    pub hwp_axis_deg: f64,
    pub hwp_port: Port,
}

/// A resolved scenario file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub source: SourceConfig,
    pub knobs: PhaseKnobs,
    pub analyzers: AnalyzerSetting,
    pub polarization: PolarizationSettings,
    pub scan: ScanSettings,
    pub noise: NoiseSettings,
}

/// Envelope delays per arm and accumulated carrier phase of one amplitude.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct DelayBudget {
    pub signal_fs: f64,
    pub idler_fs: f64,
    pub carrier_phase_rad: f64,
}

impl DelayBudget {
    /// A pump delay shifts the whole biphoton: group delay on both arms plus
    /// the pump carrier's phase-minus-group correction.
    fn pump(&mut self, r: &GroupDelayReport, omega_p: f64) {
        self.signal_fs += r.group_delay_fs;
        self.idler_fs += r.group_delay_fs;
        self.carrier_phase_rad += omega_p * (r.phase_delay_fs - r.group_delay_fs);
    }

    fn arm(&mut self, arm: Arm, group_fs: f64, phase_fs: f64, omega: f64) {
        match arm {
            Arm::Signal => self.signal_fs += group_fs,
            Arm::Idler => self.idler_fs += group_fs,
        }
        self.carrier_phase_rad += omega * (phase_fs - group_fs);
    }

    fn arm_report(&mut self, arm: Arm, r: &GroupDelayReport, omega: f64) {
        self.arm(arm, r.group_delay_fs, r.phase_delay_fs, omega);
    }

    pub fn common_mode_fs(&self) -> f64 {
        0.5 * (self.signal_fs + self.idler_fs)
    }

    fn apply(&self, jsa: &JointSpectralAmplitude) -> JointSpectralAmplitude {
        apply_phase(
            &apply_arm_delays(jsa, self.signal_fs, self.idler_fs),
            self.carrier_phase_rad,
        )
    }
}

/// Lab polarization of the photons of each amplitude.
const PHOTON_POL: [LabPol; 2] = [LabPol::V, LabPol::H];
/// Lab polarization of the pump component that drives each amplitude.
const PUMP_POL: [LabPol; 2] = [LabPol::H, LabPol::V];

/// A source with its crystal JSAs built and its fixed delays evaluated.
/// Knob settings are applied on top by [`Source::amplitudes`].
#[derive(Debug, Clone)]
pub struct Source {
    config: SourceConfig,
    grid: Arc<FrequencyGrid>,
    jsa: [JointSpectralAmplitude; 2],
    fixed: [DelayBudget; 2],
    compensator: Vec<BirefringentElement>,
    amplitude_scale: [f64; 2],
}

impl Source {
    pub fn new(config: &SourceConfig) -> Result<Self> {
        config.validate()?;
        let specs = [config.phase_matching_spec(0)?, config.phase_matching_spec(1)?];
        let (fs, fi) = (&config.filters.0, &config.filters.1);
        let grid = match config.grid.half_span {
            Some((hs, hi)) => FrequencyGrid::centered(
                specs[0].signal_center(),
                specs[0].idler_center(),
                hs,
                hi,
                config.grid.points,
            )?,
            None => {
                let g0 = auto_grid(&config.pump, &specs[0], fs, fi, config.grid.points)?;
                let g1 = auto_grid(&config.pump, &specs[1], fs, fi, config.grid.points)?;
                let half = |g: &FrequencyGrid| {
                    let n = g.shape().0 as f64;
                    (0.5 * n * g.signal_step(), 0.5 * n * g.idler_step())
                };
                let ((s0, i0), (s1, i1)) = (half(&g0), half(&g1));
                FrequencyGrid::centered(
                    specs[0].signal_center(),
                    specs[0].idler_center(),
                    s0.max(s1),
                    i0.max(i1),
                    g0.shape().0.max(g1.shape().0),
                )?
            }
        };
        let grid = Arc::new(grid);
        let jsa = [
            build_jsa(&config.pump, &specs[0], fs, fi, Arc::clone(&grid))?.with_source("crystal 1 |VV>"),
            build_jsa(&config.pump, &specs[1], fs, fi, Arc::clone(&grid))?.with_source("crystal 2 |HH>"),
        ];

        let compensator = if config.compensation.auto {
            vec![solve_compensator(config)?]
        } else {
            config.compensator.clone()
        };
        let fixed = fixed_budgets(config, &compensator)?;

        let pol = config.pump.polarization_angle_deg.to_radians();
        let quarter = PI / 4.0;
        let amplitude_scale = [
            pol.sin() / quarter.sin(),
            config.pump_amplitude_ratio * pol.cos() / quarter.cos(),
        ];
        Ok(Self {
            config: config.clone(),
            grid,
            jsa,
            fixed,
            compensator,
            amplitude_scale,
        })
    }

    pub fn config(&self) -> &SourceConfig {
        &self.config
    }

    pub fn grid(&self) -> &Arc<FrequencyGrid> {
        &self.grid
    }

    /// Compensator elements in use, with the solved thickness when automatic.
    pub fn compensator(&self) -> &[BirefringentElement] {
        &self.compensator
    }

    pub fn fixed_budgets(&self) -> [DelayBudget; 2] {
        self.fixed
    }

    /// Budgets including the knob plates at the given tilts.
    pub fn budgets(&self, knobs: &PhaseKnobs) -> Result<[DelayBudget; 2]> {
        let mut b = self.fixed;
        for (arm, tilt) in [(Arm::Signal, knobs.signal_tilt_deg), (Arm::Idler, knobs.idler_tilt_deg)] {
            let lambda = self.arm_wavelength(arm);
            let omega = angular_frequency(lambda);
            let (plate, crossed) = self.knob_plates(tilt)?;
            for (k, budget) in b.iter_mut().enumerate() {
                for el in [&plate, &crossed] {
                    budget.arm_report(arm, &element_delays_lab(el, PHOTON_POL[k], lambda)?, omega);
                }
            }
        }
        Ok(b)
    }

    /// The two emission amplitudes at the given knob settings.
    pub fn amplitudes(&self, knobs: &PhaseKnobs) -> Result<AmplitudePair> {
        let b = self.budgets(knobs)?;
        let mut amps = [0, 1].map(|k| b[k].apply(&self.jsa[k]));
        for (k, amp) in amps.iter_mut().enumerate() {
            if self.amplitude_scale[k] != 1.0 {
                *amp = scale(amp, self.amplitude_scale[k]);
            }
        }
        let [a, bb] = amps;
        AmplitudePair::new(a, bb, self.pump_phase(knobs.pump_delta_x_nm))
    }

    /// `K_p dx`.
    pub fn pump_phase(&self, delta_x_nm: f64) -> f64 {
        2.0 * PI * delta_x_nm / self.config.pump.center_wavelength_nm
    }

    fn arm_wavelength(&self, arm: Arm) -> f64 {
        match arm {
            Arm::Signal => self.config.signal_nm,
            Arm::Idler => self.config.idler_nm,
        }
    }

    fn knob_plates(&self, tilt_deg: f64) -> Result<(BirefringentElement, BirefringentElement)> {
        let t = &self.config.knob_plate;
        let plate = BirefringentElement::new(t.material.clone(), t.thickness_mm, t.axis, tilt_deg)?;
        let crossed = BirefringentElement::new(t.material.clone(), t.thickness_mm, t.axis.crossed(), 0.0)?;
        Ok((plate, crossed))
    }

    /// Phase index difference `n(V) - n(H)` of the knob plate in one arm.
    fn knob_birefringence(&self, arm: Arm) -> Result<f64> {
        let p = &self.config.knob_plate;
        let l = self.arm_wavelength(arm);
        Ok(p.index(p.pol_for(LabPol::V), l)? - p.index(p.pol_for(LabPol::H), l)?)
    }

    /// Optical path difference (nm) between the V and H photons of one arm
    /// at a given knob-plate tilt.
    pub fn plate_opd_nm(&self, arm: Arm, tilt_deg: f64) -> Result<f64> {
        let (plate, _) = self.knob_plates(tilt_deg)?;
        let extra = plate.effective_length_mm(self.arm_wavelength(arm))? - plate.thickness_mm;
        Ok(self.knob_birefringence(arm)? * extra * NM_PER_MM)
    }

    /// Tilt (deg) that produces the optical path difference `opd_nm`.
    pub fn tilt_for_opd(&self, arm: Arm, opd_nm: f64) -> Result<f64> {
        if opd_nm == 0.0 {
            return Ok(0.0);
        }
        let dn = self.knob_birefringence(arm)?;
        let extra_mm = opd_nm / (dn * NM_PER_MM);
        if extra_mm < 0.0 {
            return Err(Error::config(format!(
                "path difference {opd_nm} nm has the wrong sign for the knob plate"
            )));
        }
        let (plate, _) = self.knob_plates(0.0)?;
        plate
            .tilt_for_effective_length(self.arm_wavelength(arm), plate.thickness_mm + extra_mm)
            .map_err(|e| Error::config(format!("{e}")))
    }

    /// Equal tilt of both plates whose mean path difference is `opd_nm`.
    pub fn equal_tilt_for_mean_opd(&self, opd_nm: f64) -> Result<f64> {
        if opd_nm == 0.0 {
            return Ok(0.0);
        }
        let mean = |t: f64| -> Result<f64> {
            Ok(0.5 * (self.plate_opd_nm(Arm::Signal, t)? + self.plate_opd_nm(Arm::Idler, t)?))
        };
        let (mut lo, mut hi) = (0.0, 44.999);
        let (m_lo, m_hi) = (mean(lo)?, mean(hi)?);
        let inside = (opd_nm - m_lo) * (opd_nm - m_hi) <= 0.0;
        if !inside {
            return Err(Error::config(format!(
                "mean path difference {opd_nm} nm is out of reach below 45 deg tilt"
            )));
        }
        let increasing = m_hi > m_lo;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if (mean(mid)? < opd_nm) == increasing {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// Delays that do not depend on the knobs: crystal traversals and the
/// compensator.
fn fixed_budgets(config: &SourceConfig, compensator: &[BirefringentElement]) -> Result<[DelayBudget; 2]> {
    let pump_nm = config.pump.center_wavelength_nm;
    let wp = angular_frequency(pump_nm);
    let arms = [
        (Arm::Signal, config.signal_nm, angular_frequency(config.signal_nm)),
        (Arm::Idler, config.idler_nm, angular_frequency(config.idler_nm)),
    ];
    let mut b = [DelayBudget::default(); 2];

    // Pairs leave their own crystal as ordinary waves.
    for k in 0..2 {
        for &(arm, l, w) in &arms {
            b[k].arm_report(arm, &element_delays_lab(&config.crystals[k], PHOTON_POL[k], l)?, w);
        }
    }

    if config.scheme == Scheme::Collinear {
        let c1 = &config.crystals[0];
        let c2 = &config.crystals[1];
        // |HH>: its V pump crosses crystal 1 first.
        b[1].pump(&element_delays_lab(c1, PUMP_POL[1], pump_nm)?, wp);
        // |VV>: its pairs cross crystal 2.
        let rs = element_delays_lab(c2, PHOTON_POL[0], config.signal_nm)?;
        let ri = element_delays_lab(c2, PHOTON_POL[0], config.idler_nm)?;
        if config.cross_dispersion_enabled {
            b[0].arm_report(Arm::Signal, &rs, arms[0].2);
            b[0].arm_report(Arm::Idler, &ri, arms[1].2);
        } else {
            let g = 0.5 * (rs.group_delay_fs + ri.group_delay_fs);
            b[0].arm(Arm::Signal, g, rs.phase_delay_fs, arms[0].2);
            b[0].arm(Arm::Idler, g, ri.phase_delay_fs, arms[1].2);
        }
    }

    for el in compensator {
        for k in 0..2 {
            match config.compensation.placement {
                Placement::Before => b[k].pump(&element_delays_lab(el, PUMP_POL[k], pump_nm)?, wp),
                Placement::After => {
                    for &(arm, l, w) in &arms {
                        b[k].arm_report(arm, &element_delays_lab(el, PHOTON_POL[k], l)?, w);
                    }
                }
            }
        }
    }
    Ok(b)
}

/// Thickness (and, if needed, crossed axis) of the single compensator element
/// that leaves the common-mode delays of `|VV>` and `|HH>` differing by
/// exactly `error_fs`.
fn solve_compensator(config: &SourceConfig) -> Result<BirefringentElement> {
    let mut el = config.compensator[0].clone();
    let mismatch = |el: &BirefringentElement| -> Result<f64> {
        let b = fixed_budgets(config, std::slice::from_ref(el))?;
        Ok(b[0].common_mode_fs() - b[1].common_mode_fs())
    };
    el.thickness_mm = 0.0;
    let m0 = mismatch(&el)?;
    el.thickness_mm = 1.0;
    let slope = mismatch(&el)? - m0;
    if slope == 0.0 {
        return Err(Error::config("compensator element has no birefringent delay"));
    }
    let mut t = (config.compensation.error_fs - m0) / slope;
    if t < 0.0 {
        el.axis = el.axis.crossed();
        t = -t;
    }
    el.thickness_mm = t;
    el.validate()?;
    Ok(el)
}

pub fn build_amplitudes(config: &SourceConfig, knobs: &PhaseKnobs) -> Result<AmplitudePair> {
    Source::new(config)?.amplitudes(knobs)
}

/// Coincidence rate behind analyzers. Normalized so that an ideal `Phi+`
/// source at 45/45 deg gives `(1 + cos phi) / 2`, i.e. projection times the
/// coincidence rate.
pub fn analyzer_rate(pair: &AmplitudePair, analyzers: &AnalyzerSetting) -> (f64, f64) {
    let (w_vv, w_hh) = analyzer_weights(analyzers);
    let r = projected_rate(pair, Complex64::new(w_vv, 0.0), Complex64::new(w_hh, 0.0));
    (2.0 * r.rate, r.raw_rate)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ExecutionMode {
    Parallel,
    /// Single-threaded, for bit-reproducible reference output.
    Reference,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanOptions {
    pub axis_kind: AxisKind,
    pub start: f64,
    pub stop: f64,
    pub steps: usize,
    pub analyzers: AnalyzerSetting,
    /// Knob values held fixed; the scanned knob is overwritten.
    pub base_knobs: PhaseKnobs,
    pub noise: Option<NoiseSettings>,
    pub mode: ExecutionMode,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanMetadata {
    pub source: SourceConfig,
    pub options: ScanOptions,
    pub compensator: Vec<BirefringentElement>,
    /// (signal, idler) knob-plate tilts at each axis point, degrees.
    pub tilts_deg: Vec<(f64, f64)>,
    /// Rates before the noise stage.
    pub raw_rates: Vec<f64>,
    /// Unnormalized `sum |.|^2` at each point.
    pub unnormalized_rates: Vec<f64>,
    /// Overlap visibility at the base knobs.
    pub visibility_bound: f64,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FringeScan {
    pub axis: Vec<f64>,
    pub axis_kind: AxisKind,
    pub rates: Vec<f64>,
    pub metadata: ScanMetadata,
}

/// Model caveats attached to every scan.
pub fn model_notes(config: &SourceConfig) -> Vec<String> {
    vec![
        format!(
            "pump duration {} fs read as intensity FWHM; sigma_t = duration * {}",
            config.pump.duration_fs, config.pump.duration_to_sigma
        ),
        format!(
            "phase matching: first-order {:?} model, reconstructed",
            config.grid.phase_matching
        ),
        "tilt axes are optical path difference (nm); raw tilts in tilts_deg".into(),
    ]
}

/// Evenly spaced axis, stop excluded.
pub fn scan_axis(start: f64, stop: f64, steps: usize) -> Vec<f64> {
    (0..steps)
        .map(|k| start + (stop - start) * k as f64 / steps as f64)
        .collect()
}

pub fn scan(
    config: &SourceConfig,
    axis_kind: AxisKind,
    range: (f64, f64),
    steps: usize,
    analyzers: &AnalyzerSetting,
) -> Result<FringeScan> {
    scan_with(
        &Source::new(config)?,
        &ScanOptions {
            axis_kind,
            start: range.0,
            stop: range.1,
            steps,
            analyzers: *analyzers,
            base_knobs: PhaseKnobs::default(),
            noise: None,
            mode: ExecutionMode::Parallel,
        },
    )
}

pub fn scan_with(source: &Source, opts: &ScanOptions) -> Result<FringeScan> {
    ScanSettings {
        axis_kind: opts.axis_kind,
        start: opts.start,
        stop: opts.stop,
        steps: opts.steps,
    }
    .validate()?;
    let axis = scan_axis(opts.start, opts.stop, opts.steps);

    // Knobs at each point.
    let mut knobs = Vec::with_capacity(axis.len());
    for &x in &axis {
        let mut k = opts.base_knobs.clone();
        match opts.axis_kind {
            AxisKind::PumpDelay => k.pump_delta_x_nm = x,
            AxisKind::SignalTilt => k.signal_tilt_deg = source.tilt_for_opd(Arm::Signal, x)?,
            AxisKind::IdlerTilt => k.idler_tilt_deg = source.tilt_for_opd(Arm::Idler, x)?,
            AxisKind::BothTilts => {
                let t = source.equal_tilt_for_mean_opd(x)?;
                k.signal_tilt_deg = t;
                k.idler_tilt_deg = t;
            }
            AxisKind::Analyzer2Angle => {}
        }
        knobs.push(k);
    }

    let eval = |(x, k): (&f64, &PhaseKnobs)| -> Result<(f64, f64)> {
        let mut an = opts.analyzers;
        if opts.axis_kind == AxisKind::Analyzer2Angle {
            an.theta2_deg = *x;
        }
        let pair = source.amplitudes(k)?;
        Ok(analyzer_rate(&pair, &an))
    };
    let points: Vec<(f64, f64)> = if opts.axis_kind == AxisKind::Analyzer2Angle {
        // The amplitudes do not change along an analyzer scan.
        let pair = source.amplitudes(&opts.base_knobs)?;
        axis.iter()
            .map(|&x| {
                let mut an = opts.analyzers;
                an.theta2_deg = x;
                analyzer_rate(&pair, &an)
            })
            .collect()
    } else {
        match opts.mode {
            ExecutionMode::Parallel => axis
                .par_iter()
                .zip(knobs.par_iter())
                .map(eval)
                .collect::<Result<Vec<_>>>()?,
            ExecutionMode::Reference => axis
                .iter()
                .zip(knobs.iter())
                .map(eval)
                .collect::<Result<Vec<_>>>()?,
        }
    };
    let raw_rates: Vec<f64> = points.iter().map(|p| p.0).collect();
    let unnormalized_rates: Vec<f64> = points.iter().map(|p| p.1).collect();

    let rates = match &opts.noise {
        Some(n) if n.enabled => add_counting_noise(&raw_rates, n)?,
        _ => raw_rates.clone(),
    };
    let base = source.amplitudes(&opts.base_knobs)?;
    let visibility_bound = crate::biphoton::coincidence_rate(&base).visibility_bound;

    Ok(FringeScan {
        axis,
        axis_kind: opts.axis_kind,
        rates,
        metadata: ScanMetadata {
            source: source.config().clone(),
            options: opts.clone(),
            compensator: source.compensator().to_vec(),
            tilts_deg: knobs.iter().map(|k| (k.signal_tilt_deg, k.idler_tilt_deg)).collect(),
            raw_rates,
            unnormalized_rates,
            visibility_bound,
            notes: model_notes(source.config()),
        },
    })
}

/// Replaces rates by Poisson counts whose mean over the scan is
/// `mean_counts`.
pub fn add_counting_noise(rates: &[f64], noise: &NoiseSettings) -> Result<Vec<f64>> {
    noise.validate()?;
    let mean = rates.iter().sum::<f64>() / rates.len().max(1) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    rates
        .iter()
        .map(|&r| {
            let lambda = if mean > 0.0 { noise.mean_counts * r / mean } else { 0.0 };
            if lambda <= 0.0 {
                return Ok(0.0);
            }
            let d = Poisson::new(lambda).map_err(|e| Error::invalid(e.to_string()))?;
            Ok(d.sample(&mut rng))
        })
        .collect()
}

/// Knob settings that put the space-time fringe at its maximum (`Phi+`) or
/// minimum (`Phi-`) with the pump path difference in `[0, lambda_p)`.
pub fn prepare_bell(config: &SourceConfig, target: BellKind) -> Result<PhaseKnobs> {
    prepare_bell_with(&Source::new(config)?, target)
}

pub fn prepare_bell_with(source: &Source, target: BellKind) -> Result<PhaseKnobs> {
    let offset = match target {
        BellKind::PhiPlus => 0.0,
        BellKind::PhiMinus => PI,
        other => {
            return Err(Error::invalid(format!(
                "space-time preparation targets Phi+ or Phi-, got {other:?}"
            )))
        }
    };
    let zero = PhaseKnobs::default();
    let pair = source.amplitudes(&zero)?;
    let o = overlap(&pair.amp_a, &pair.amp_b)?;
    let norms = (pair.amp_a.norm_sq() * pair.amp_b.norm_sq()).sqrt();
    let coherence = if norms > 0.0 { o.norm() / norms } else { 0.0 };
    if coherence <= MIN_PREPARATION_OVERLAP {
        return Err(Error::Infeasible {
            overlap: coherence,
            required: MIN_PREPARATION_OVERLAP,
        });
    }
    let phi = offset - o.arg();
    let lp = source.config().pump.center_wavelength_nm;
    Ok(PhaseKnobs {
        pump_delta_x_nm: (phi / (2.0 * PI) * lp).rem_euclid(lp),
        ..zero
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectiveState {
    pub state: PolarizationState,
    /// Coherence of the two terms, `2|<a|b>| / (|a|^2 + |b|^2)`.
    pub visibility: f64,
    /// Set when the two terms are practically incoherent.
    pub incoherent: bool,
}

/// Pure-state coefficients `|a| |VV> + |b| e^{i(phi + arg<a|b>)} |HH>`,
/// normalized, with the coherence factor reported alongside.
pub fn effective_polarization_state(config: &SourceConfig, knobs: &PhaseKnobs) -> Result<EffectiveState> {
    effective_state_with(&Source::new(config)?, knobs)
}

pub fn effective_state_with(source: &Source, knobs: &PhaseKnobs) -> Result<EffectiveState> {
    let pair = source.amplitudes(knobs)?;
    let o = overlap(&pair.amp_a, &pair.amp_b)?;
    let na = pair.amp_a.norm_sq();
    let nb = pair.amp_b.norm_sq();
    let phase = pair.relative_phase_rad + if o.norm() > 0.0 { o.arg() } else { 0.0 };
    let z = Complex64::new(0.0, 0.0);
    let state = PolarizationState::new(
        [Complex64::from_polar(nb.sqrt(), phase), z, z, Complex64::new(na.sqrt(), 0.0)],
        (source.config().signal_nm, source.config().idler_nm),
    )?;
    let visibility = if na + nb > 0.0 { 2.0 * o.norm() / (na + nb) } else { 0.0 };
    Ok(EffectiveState {
        state,
        visibility,
        incoherent: visibility < INCOHERENT_BELOW,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Preparation {
    pub target: BellKind,
    pub knobs: PhaseKnobs,
    /// Half-wave plate (axis deg, port) inserted for Psi targets.
    pub hwp: Option<(f64, Port)>,
    pub state: PolarizationState,
    pub visibility: f64,
    /// Fidelity to the ideal target with the coherence factor folded in.
    pub fidelity: f64,
}

/// Prepares any Bell state: `Phi` targets by the pump knob, `Psi` targets by
/// the matching `Phi` state plus a half-wave plate.
pub fn prepare_state(source: &Source, target: BellKind, pol: &PolarizationSettings) -> Result<Preparation> {
    let (phi_kind, hwp) = match target {
        BellKind::PhiPlus | BellKind::PhiMinus => (target, None),
        BellKind::PsiPlus => (BellKind::PhiPlus, Some((pol.hwp_axis_deg, pol.hwp_port))),
        BellKind::PsiMinus => (BellKind::PhiMinus, Some((pol.hwp_axis_deg, pol.hwp_port))),
        BellKind::Custom => return Err(Error::invalid("custom states are not prepared")),
    };
    let knobs = prepare_bell_with(source, phi_kind)?;
    let eff = effective_state_with(source, &knobs)?;
    let state = match hwp {
        Some((axis, port)) => half_wave_plate(&eff.state, port, axis),
        None => eff.state,
    };
    let ideal = make_state(target, 0.0, 1.0)?;
    Ok(Preparation {
        target,
        knobs,
        hwp,
        state,
        visibility: eff.visibility,
        fidelity: fidelity_with_visibility(&state, &ideal, eff.visibility),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    CrystalLength,
    FilterFwhm,
    CompensationErrorFs,
    PumpRatio,
}

impl std::str::FromStr for SweepParameter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "crystal_length" => Ok(Self::CrystalLength),
            "filter_fwhm" => Ok(Self::FilterFwhm),
            "compensation_error_fs" => Ok(Self::CompensationErrorFs),
            "pump_ratio" => Ok(Self::PumpRatio),
            other => Err(Error::config(format!("unknown sweep parameter '{other}'"))),
        }
    }
}

impl SweepParameter {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::CrystalLength => "crystal_length",
            Self::FilterFwhm => "filter_fwhm",
            Self::CompensationErrorFs => "compensation_error_fs",
            Self::PumpRatio => "pump_ratio",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    /// `None` stands for "no filter" in filter sweeps.
    pub value: Option<f64>,
    pub visibility: f64,
}

/// Overlap visibility at the scenario's knobs for each parameter value.
/// Crystal-length and compensation-error sweeps re-solve the compensator at
/// every point.
pub fn sweep(
    file: &ScenarioFile,
    parameter: SweepParameter,
    values: &[Option<f64>],
    mode: ExecutionMode,
) -> Result<Vec<SweepPoint>> {
    if values.is_empty() {
        return Err(Error::config("sweep grid is empty"));
    }
    let eval = |v: &Option<f64>| -> Result<SweepPoint> {
        let mut f = file.clone();
        let need = |v: &Option<f64>| {
            v.ok_or_else(|| Error::config(format!("'none' is only valid for filter_fwhm sweeps")))
        };
        match parameter {
            SweepParameter::CrystalLength => {
                f.set_crystal_length(need(v)?);
                f.compensation.auto = true;
            }
            SweepParameter::FilterFwhm => f.set_filter_fwhm(*v),
            SweepParameter::CompensationErrorFs => {
                f.compensation.auto = true;
                f.compensation.error_fs = need(v)?;
            }
            SweepParameter::PumpRatio => f.pump_amplitude_ratio = need(v)?,
        }
        let scenario = f.resolve()?;
        let source = Source::new(&scenario.source)?;
        let pair = source.amplitudes(&scenario.knobs)?;
        Ok(SweepPoint {
            value: *v,
            visibility: crate::biphoton::coincidence_rate(&pair).visibility_bound,
        })
    };
    match mode {
        ExecutionMode::Parallel => values.par_iter().map(eval).collect(),
        ExecutionMode::Reference => values.iter().map(eval).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::biphoton::coincidence_rate;
    use crate::dispersion::compensation_delay;
    use crate::polarization::{fidelity, project};
    use crate::spectral::FilterShape;

    fn small(mut c: SourceConfig) -> SourceConfig {
        c.grid.points = 128;
        c
    }

    fn baseline() -> SourceConfig {
        small(SourceConfig::builtin())
    }

    fn at45() -> AnalyzerSetting {
        AnalyzerSetting {
            theta1_deg: 45.0,
            theta2_deg: 45.0,
        }
    }

    #[test]
    fn doubling_the_grid_leaves_visibility_unchanged() {
        for filter in [Some(10.0), None] {
            for error_fs in [0.0, 60.0] {
                let v = |points: usize| {
                    let mut f = ScenarioFile::builtin();
                    f.set_filter_fwhm(filter);
                    f.compensation.error_fs = error_fs;
                    f.grid.points = points;
                    let s = Source::new(&f.resolve().unwrap().source).unwrap();
                    coincidence_rate(&s.amplitudes(&PhaseKnobs::default()).unwrap()).visibility_bound
                };
                let (a, b) = (v(256), v(512));
                assert!((a - b).abs() < 1e-4, "{filter:?} {error_fs}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn exact_compensation_gives_full_overlap() {
        let pair = build_amplitudes(&baseline(), &PhaseKnobs::default()).unwrap();
        assert!(pair.overlap().norm() > 0.999);
    }

    #[test]
    fn solved_compensator_matches_intrinsic_walkoff() {
        let c = baseline();
        let s = Source::new(&c).unwrap();
        let rod = &s.compensator()[0];
        let q = &rod.material;
        let dng = group_index(q, Pol::E, 400.0).unwrap() - group_index(q, Pol::O, 400.0).unwrap();
        let rod_delay = rod.thickness_mm * NM_PER_MM * dng / crate::units::C_NM_PER_FS;
        let walkoff = compensation_delay(&c.crystals, 400.0, 730.0, 885.0).unwrap();
        assert!((rod_delay - walkoff).abs() < 1e-6 * walkoff, "{rod_delay} vs {walkoff}");
        assert_eq!(rod.axis, crate::dispersion::AxisOrientation::Horizontal);
    }

    #[test]
    fn removing_the_compensator_destroys_overlap() {
        let mut c = baseline();
        c.compensation.auto = false;
        c.compensator.clear();
        let pair = build_amplitudes(&c, &PhaseKnobs::default()).unwrap();
        assert!(pair.overlap().norm() < 0.05, "{}", pair.overlap().norm());
        assert!(matches!(prepare_bell(&c, BellKind::PhiPlus), Err(Error::Infeasible { .. })));
        let eff = effective_polarization_state(&c, &PhaseKnobs::default()).unwrap();
        assert!(eff.incoherent);
    }

    #[test]
    fn zero_pump_ratio_removes_interference() {
        let mut c = baseline();
        c.pump_amplitude_ratio = 0.0;
        let pair = build_amplitudes(&c, &PhaseKnobs::default()).unwrap();
        assert_eq!(pair.amp_b.norm_sq(), 0.0);
        assert!(!pair.amp_b.provenance().normalized);
        assert_eq!(coincidence_rate(&pair).visibility_bound, 0.0);
    }

    #[test]
    fn ratio_two_effective_state() {
        let mut c = baseline();
        c.pump_amplitude_ratio = 2.0;
        let s = Source::new(&c).unwrap();
        let k = prepare_bell_with(&s, BellKind::PhiPlus).unwrap();
        let e = effective_state_with(&s, &k).unwrap();
        let co = e.state.coefficients;
        assert!((co[0] - 2.0 / 5f64.sqrt()).norm() < 1e-9);
        assert!((co[3] - 1.0 / 5f64.sqrt()).norm() < 1e-9);
    }

    #[test]
    fn pump_scan_period_and_preparation() {
        let c = baseline();
        let s = Source::new(&c).unwrap();
        let scan = scan(&c, AxisKind::PumpDelay, (0.0, 1600.0), 128, &at45()).unwrap();
        let fit = crate::fitting::fit_fringe(&scan.axis, &scan.rates, None).unwrap();
        assert!((fit.period / 400.0 - 1.0).abs() < 0.005, "{}", fit.period);
        let plus = prepare_bell_with(&s, BellKind::PhiPlus).unwrap();
        let minus = prepare_bell_with(&s, BellKind::PhiMinus).unwrap();
        let max = scan.rates.iter().cloned().fold(f64::MIN, f64::max);
        let rp = analyzer_rate(&s.amplitudes(&plus).unwrap(), &at45()).0;
        let rm = analyzer_rate(&s.amplitudes(&minus).unwrap(), &at45()).0;
        assert!(rp >= max - 1e-9);
        assert!(rm < 1e-3 * rp);
        let e = effective_state_with(&s, &plus).unwrap();
        let ideal = make_state(BellKind::PhiPlus, 0.0, 1.0).unwrap();
        assert!(fidelity_with_visibility(&e.state, &ideal, e.visibility) > 0.999);
        assert!(fidelity(&e.state, &ideal) > 0.999);
    }

    #[test]
    fn tilt_scans_follow_arm_wavelengths() {
        let c = baseline();
        for (kind, stop, expect) in [
            (AxisKind::SignalTilt, 4.0 * 730.0, 730.0),
            (AxisKind::IdlerTilt, 4.0 * 885.0, 885.0),
            (AxisKind::BothTilts, 1600.0, 400.0),
        ] {
            let scan = scan(&c, kind, (0.0, stop), 128, &at45()).unwrap();
            let fit = crate::fitting::fit_fringe(&scan.axis, &scan.rates, None).unwrap();
            assert!((fit.period / expect - 1.0).abs() < 0.005, "{kind:?}: {}", fit.period);
            assert!(scan.metadata.tilts_deg.iter().all(|t| t.0 < 45.0 && t.1 < 45.0));
        }
    }

    #[test]
    fn opd_inversion_round_trips() {
        let s = Source::new(&baseline()).unwrap();
        for opd in [10.0, 500.0, 3000.0] {
            let t = s.tilt_for_opd(Arm::Idler, opd).unwrap();
            assert!((s.plate_opd_nm(Arm::Idler, t).unwrap() - opd).abs() < 1e-6);
        }
        assert!(s.tilt_for_opd(Arm::Signal, 1e6).is_err());
        assert!(s.tilt_for_opd(Arm::Signal, -5.0).is_err());
    }

    #[test]
    fn analyzer_scan_follows_cos_squared() {
        let c = baseline();
        let s = Source::new(&c).unwrap();
        let knobs = prepare_bell_with(&s, BellKind::PhiPlus).unwrap();
        let scan = scan_with(
            &s,
            &ScanOptions {
                axis_kind: AxisKind::Analyzer2Angle,
                start: 0.0,
                stop: 180.0,
                steps: 90,
                analyzers: at45(),
                base_knobs: knobs,
                noise: None,
                mode: ExecutionMode::Reference,
            },
        )
        .unwrap();
        let max = scan.rates.iter().cloned().fold(f64::MIN, f64::max);
        let min = scan.rates.iter().cloned().fold(f64::MAX, f64::min);
        assert!((max - min) / (max + min) > 0.999);
        let ideal = make_state(BellKind::PhiPlus, 0.0, 1.0).unwrap();
        for (x, r) in scan.axis.iter().zip(&scan.rates) {
            let p = project(&ideal, &AnalyzerSetting { theta1_deg: 45.0, theta2_deg: *x });
            assert!((r - 2.0 * p).abs() < 2e-3, "{x}: {r} vs {}", 2.0 * p);
        }
    }

    #[test]
    fn schemes_agree_without_cross_dispersion() {
        let c = baseline();
        let mut m = c.clone();
        m.scheme = Scheme::Mzi;
        let vc = coincidence_rate(&build_amplitudes(&c, &PhaseKnobs::default()).unwrap()).visibility_bound;
        let vm = coincidence_rate(&build_amplitudes(&m, &PhaseKnobs::default()).unwrap()).visibility_bound;
        assert!((vc - vm).abs() < 1e-6);
    }

    #[test]
    fn after_placement_also_compensates() {
        let mut c = baseline();
        c.compensation.placement = Placement::After;
        let pair = build_amplitudes(&c, &PhaseKnobs::default()).unwrap();
        assert!(pair.overlap().norm() > 0.95, "{}", pair.overlap().norm());
    }

    #[test]
    fn reference_and_parallel_scans_agree_bitwise() {
        let c = baseline();
        let s = Source::new(&c).unwrap();
        let mut opts = ScanOptions {
            axis_kind: AxisKind::PumpDelay,
            start: 0.0,
            stop: 800.0,
            steps: 16,
            analyzers: at45(),
            base_knobs: PhaseKnobs::default(),
            noise: Some(NoiseSettings { enabled: true, mean_counts: 1000.0, seed: 7 }),
            mode: ExecutionMode::Reference,
        };
        let a = scan_with(&s, &opts).unwrap();
        let b = scan_with(&s, &opts).unwrap();
        opts.mode = ExecutionMode::Parallel;
        let p = scan_with(&s, &opts).unwrap();
        assert_eq!(a.rates, b.rates);
        assert_eq!(a.rates, p.rates);
        assert_eq!(a.metadata.raw_rates, p.metadata.raw_rates);
        assert!(a.rates.iter().all(|r| r.fract() == 0.0));
    }

    #[test]
    fn phase_additivity_of_matched_arm_delays() {
        // A path difference d on the V photons retards |VV>, so the fringe
        // phase moves by -2 pi d / l on each arm and by +2 pi d / lp for the
        // pump knob; with 1/ls + 1/li = 1/lp the three cancel.
        let c = baseline();
        let s = Source::new(&c).unwrap();
        let d = 200.0;
        let ts = s.tilt_for_opd(Arm::Signal, d).unwrap();
        let ti = s.tilt_for_opd(Arm::Idler, d).unwrap();
        let base = s.amplitudes(&PhaseKnobs::default()).unwrap().overlap().arg();
        let phase = |k: PhaseKnobs| {
            let p = s.amplitudes(&k).unwrap();
            crate::units::wrap_phase(p.overlap().arg() + p.relative_phase_rad - base)
        };
        let sig = phase(PhaseKnobs { signal_tilt_deg: ts, ..Default::default() });
        let idl = phase(PhaseKnobs { idler_tilt_deg: ti, ..Default::default() });
        let pump = phase(PhaseKnobs { pump_delta_x_nm: d, ..Default::default() });
        assert!((sig + 2.0 * PI * d / 730.0).abs() < 1e-3, "{sig}");
        assert!((idl + 2.0 * PI * d / 885.0).abs() < 1e-3, "{idl}");
        assert!(crate::units::wrap_phase(pump + sig + idl).abs() < 1e-3);
    }

    #[test]
    fn sweeps() {
        let mut f = ScenarioFile::builtin();
        f.grid.points = 128;
        let lens = sweep(&f, SweepParameter::CrystalLength, &[Some(0.5), Some(2.0), Some(5.0)], ExecutionMode::Parallel).unwrap();
        assert!(lens.iter().all(|p| p.visibility > 0.99));
        let filt = sweep(&f, SweepParameter::FilterFwhm, &[None, Some(3.0)], ExecutionMode::Parallel).unwrap();
        assert!(filt[0].visibility > 0.99);
        let errs: Vec<Option<f64>> = (0..9).map(|k| Some(125.0 * k as f64)).collect();
        let e = sweep(&f, SweepParameter::CompensationErrorFs, &errs, ExecutionMode::Reference).unwrap();
        assert!(e[0].visibility > 0.999);
        assert!(e.windows(2).all(|w| w[1].visibility < w[0].visibility), "{e:?}");
        assert!(e.last().unwrap().visibility < 0.01);
        assert!(sweep(&f, SweepParameter::PumpRatio, &[None], ExecutionMode::Reference).is_err());
        assert!(sweep(&f, SweepParameter::PumpRatio, &[], ExecutionMode::Reference).is_err());
        let _ = FilterShape::None;
    }

    #[test]
    fn psi_preparation_uses_half_wave_plate() {
        let c = baseline();
        let s = Source::new(&c).unwrap();
        let pol = PolarizationSettings { hwp_axis_deg: 45.0, hwp_port: Port::One };
        for t in [BellKind::PhiPlus, BellKind::PhiMinus, BellKind::PsiPlus, BellKind::PsiMinus] {
            let p = prepare_state(&s, t, &pol).unwrap();
            assert!(p.fidelity > 0.999, "{t:?}: {}", p.fidelity);
            assert_eq!(p.hwp.is_some(), matches!(t, BellKind::PsiPlus | BellKind::PsiMinus));
        }
    }
}
