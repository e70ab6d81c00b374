//! Scenario files: the TOML schema, the shipped default, and resolution into
//! the typed [`Scenario`](crate::scenario::Scenario).
//!
//! The annotated default lives in `data/default_scenario.toml`; every physical
//! default is read from there rather than from code.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dispersion::{type1_phase_matching_angle, AxisOrientation, BirefringentElement, MaterialTable};
use crate::error::{Error, Result};
use crate::polarization::{AnalyzerSetting, Port};
use crate::scenario::{
    AxisKind, CompensationSettings, GridSettings, NoiseSettings, PhaseKnobs, Placement,
    PolarizationSettings, ScanSettings, Scenario, Scheme, SourceConfig,
};
use crate::spectral::{FilterShape, PhaseMatchingShape, PumpPulse, SpectralFilter};

pub const DEFAULT_SCENARIO: &str = include_str!("../data/default_scenario.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub scheme: Scheme,
    #[serde(default)]
    pub cross_dispersion: bool,
    #[serde(default = "one")]
    pub pump_amplitude_ratio: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub materials: Option<PathBuf>,
    pub pump: PumpPulse,
    pub pair: PairSection,
    pub crystals: Vec<ElementSection>,
    pub compensation: CompensationSection,
    #[serde(default)]
    pub compensator: Vec<ElementSection>,
    pub filters: Vec<SpectralFilter>,
    pub knob_plates: ElementSection,
    #[serde(default)]
    pub knobs: PhaseKnobs,
    pub grid: GridSection,
    pub polarization: PolarizationSection,
    pub scan: ScanSettings,
    pub noise: NoiseSettings,
    /// Directory that relative paths in the file are resolved against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairSection {
    pub signal_nm: f64,
    pub idler_nm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElementSection {
    pub material: String,
    pub thickness_mm: f64,
    pub axis: AxisOrientation,
    #[serde(default)]
    pub tilt_deg: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cut_angle_deg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompensationSection {
    pub placement: Placement,
    #[serde(default)]
    pub auto: bool,
    #[serde(default)]
    pub error_fs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub points: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signal_half_span: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idler_half_span: Option<f64>,
    #[serde(default)]
    pub phase_matching: PhaseMatchingShape,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolarizationSection {
    pub analyzer1_deg: f64,
    pub analyzer2_deg: f64,
    pub hwp_axis_deg: f64,
    pub hwp_port: u8,
}

impl ScenarioFile {
    pub fn builtin() -> Self {
        Self::from_toml_str(DEFAULT_SCENARIO).expect("shipped default scenario parses")
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        let mut file = Self::from_toml_str(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        file.base_dir = path.parent().map(Path::to_path_buf);
        Ok(file)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    fn material_table(&self) -> Result<MaterialTable> {
        match &self.materials {
            None => Ok(MaterialTable::shipped()),
            Some(p) => {
                let path = match &self.base_dir {
                    Some(dir) if p.is_relative() => dir.join(p),
                    _ => p.clone(),
                };
                MaterialTable::from_path(&path)
            }
        }
    }

    /// Checks the file and produces the typed scenario.
    pub fn resolve(&self) -> Result<Scenario> {
        let table = self.material_table()?;
        let element = |s: &ElementSection, what: &str| -> Result<BirefringentElement> {
            let material = table.get(&s.material)?.clone();
            let mut e = BirefringentElement::new(material, s.thickness_mm, s.axis, s.tilt_deg)
                .map_err(|e| Error::config(format!("{what}: {e}")))?;
            e.cut_angle_deg = s.cut_angle_deg;
            Ok(e)
        };

        self.pump.validate().map_err(|e| Error::config(format!("pump: {e}")))?;
        let pump_nm = self.pump.center_wavelength_nm;
        let (signal_nm, idler_nm) = (self.pair.signal_nm, self.pair.idler_nm);

        if self.crystals.len() != 2 {
            return Err(Error::config(format!(
                "exactly two crystals required, found {}",
                self.crystals.len()
            )));
        }
        let mut crystals = Vec::with_capacity(2);
        for (k, s) in self.crystals.iter().enumerate() {
            let mut c = element(s, &format!("crystal {}", k + 1))?;
            if c.thickness_mm <= 0.0 {
                return Err(Error::config(format!("crystal {}: thickness must be > 0", k + 1)));
            }
            if c.cut_angle_deg.is_none() {
                let theta = type1_phase_matching_angle(&c.material, pump_nm, signal_nm, idler_nm)
                    .map_err(|e| Error::config(format!("crystal {}: {e}", k + 1)))?;
                c.cut_angle_deg = Some(theta);
            }
            crystals.push(c);
        }
        if crystals[0].axis == crystals[1].axis {
            return Err(Error::config("the two crystals must have orthogonal optic axes"));
        }
        let crystals: [BirefringentElement; 2] = [crystals[0].clone(), crystals[1].clone()];

        let compensator = self
            .compensator
            .iter()
            .enumerate()
            .map(|(k, s)| element(s, &format!("compensator {}", k + 1)))
            .collect::<Result<Vec<_>>>()?;
        if self.compensation.auto && compensator.len() != 1 {
            return Err(Error::config(
                "compensation.auto needs exactly one [[compensator]] element",
            ));
        }

        if self.filters.len() != 2 {
            return Err(Error::config(format!(
                "exactly two filters (signal, idler) required, found {}",
                self.filters.len()
            )));
        }
        for f in &self.filters {
            f.validate().map_err(|e| Error::config(format!("filter: {e}")))?;
        }

        let knob_plate = element(&self.knob_plates, "knob_plates")?;
        if knob_plate.thickness_mm <= 0.0 {
            return Err(Error::config("knob_plates: thickness must be > 0"));
        }

        if !(self.pump_amplitude_ratio >= 0.0 && self.pump_amplitude_ratio.is_finite()) {
            return Err(Error::config("pump_amplitude_ratio must be finite and >= 0"));
        }

        if self.grid.points < 8 {
            return Err(Error::config("grid.points must be >= 8"));
        }
        let half_span = match (self.grid.signal_half_span, self.grid.idler_half_span) {
            (Some(s), Some(i)) if s > 0.0 && i > 0.0 => Some((s, i)),
            (None, None) => None,
            _ => {
                return Err(Error::config(
                    "grid.signal_half_span and grid.idler_half_span must be given together and > 0",
                ))
            }
        };

        let hwp_port = match self.polarization.hwp_port {
            1 => Port::One,
            2 => Port::Two,
            p => return Err(Error::config(format!("polarization.hwp_port must be 1 or 2, got {p}"))),
        };

        self.scan.validate()?;
        self.noise.validate()?;

        let source = SourceConfig {
            scheme: self.scheme,
            pump: self.pump.clone(),
            signal_nm,
            idler_nm,
            crystals,
            compensation: CompensationSettings {
                placement: self.compensation.placement,
                auto: self.compensation.auto,
                error_fs: self.compensation.error_fs,
            },
            compensator,
            filters: (self.filters[0].clone(), self.filters[1].clone()),
            knob_plate,
            cross_dispersion_enabled: self.cross_dispersion,
            pump_amplitude_ratio: self.pump_amplitude_ratio,
            grid: GridSettings {
                points: self.grid.points,
                half_span,
                phase_matching: self.grid.phase_matching,
            },
        };
        source.validate()?;
        Ok(Scenario {
            source,
            knobs: self.knobs.clone(),
            analyzers: AnalyzerSetting {
                theta1_deg: self.polarization.analyzer1_deg,
                theta2_deg: self.polarization.analyzer2_deg,
            },
            polarization: PolarizationSettings {
                hwp_axis_deg: self.polarization.hwp_axis_deg,
                hwp_port,
            },
            scan: self.scan.clone(),
            noise: self.noise.clone(),
        })
    }

    /// Sets both filters to `fwhm_nm`, or removes them when `None`.
    pub fn set_filter_fwhm(&mut self, fwhm_nm: Option<f64>) {
        for f in &mut self.filters {
            match fwhm_nm {
                Some(w) => {
                    f.fwhm_nm = w;
                    if f.shape == FilterShape::None {
                        f.shape = FilterShape::Gaussian;
                    }
                }
                None => {
                    f.shape = FilterShape::None;
                    f.fwhm_nm = 0.0;
                }
            }
        }
    }

    pub fn set_crystal_length(&mut self, mm: f64) {
        for c in &mut self.crystals {
            c.thickness_mm = mm;
        }
    }
}

impl ScanSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.start.is_finite() && self.stop.is_finite() && self.stop != self.start) {
            return Err(Error::config(format!(
                "scan range [{}, {}] must be finite and nonempty",
                self.start, self.stop
            )));
        }
        if self.steps < 2 {
            return Err(Error::config("scan.steps must be >= 2"));
        }
        if matches!(
            self.axis_kind,
            AxisKind::SignalTilt | AxisKind::IdlerTilt | AxisKind::BothTilts
        ) && self.start.min(self.stop) < 0.0
        {
            return Err(Error::config(
                "tilt scans run over optical path difference and need a range >= 0",
            ));
        }
        Ok(())
    }
}

impl NoiseSettings {
    pub fn validate(&self) -> Result<()> {
        if self.enabled && !(self.mean_counts > 0.0 && self.mean_counts.is_finite()) {
            return Err(Error::config("noise.mean_counts must be > 0"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_default_resolves() {
        let f = ScenarioFile::builtin();
        let s = f.resolve().unwrap();
        assert_eq!(s.source.scheme, Scheme::Collinear);
        assert_eq!(s.source.crystals[0].thickness_mm, 3.4);
        let theta = s.source.crystals[0].cut_angle_deg.unwrap();
        assert!(theta > 25.0 && theta < 35.0, "{theta}");
        assert_eq!(s.scan.steps, 128);
        assert_eq!(s.polarization.hwp_axis_deg, 45.0);
    }

    #[test]
    fn toml_round_trip() {
        let f = ScenarioFile::builtin();
        let again = ScenarioFile::from_toml_str(&f.to_toml_string()).unwrap();
        assert_eq!(f, again);
    }

    #[test]
    fn parse_errors_name_the_line() {
        let bad = DEFAULT_SCENARIO.replace("duration_fs = 80.0", "duration_fs = \"eighty\"");
        let msg = ScenarioFile::from_toml_str(&bad).unwrap_err().to_string();
        assert!(msg.contains("line"), "{msg}");
        let unknown = DEFAULT_SCENARIO.replace("[pair]", "[pair]\nsignal_wavelength = 1.0");
        assert!(ScenarioFile::from_toml_str(&unknown).is_err());
    }

    #[test]
    fn validation_failures() {
        let mut f = ScenarioFile::builtin();
        f.crystals[1].axis = AxisOrientation::Horizontal;
        assert!(matches!(f.resolve(), Err(Error::Config(_))));

        let mut f = ScenarioFile::builtin();
        f.crystals.pop();
        assert!(f.resolve().is_err());

        let mut f = ScenarioFile::builtin();
        f.pair.idler_nm = 900.0;
        assert!(f.resolve().is_err());

        let mut f = ScenarioFile::builtin();
        f.pump_amplitude_ratio = -1.0;
        assert!(f.resolve().is_err());

        let mut f = ScenarioFile::builtin();
        f.scan.axis_kind = AxisKind::SignalTilt;
        f.scan.start = -10.0;
        assert!(f.resolve().is_err());

        let mut f = ScenarioFile::builtin();
        f.crystals[0].material = "unobtainium".into();
        assert!(f.resolve().is_err());
    }

    #[test]
    fn filter_and_length_setters() {
        let mut f = ScenarioFile::builtin();
        f.set_filter_fwhm(None);
        assert!(f.filters.iter().all(|x| x.shape == FilterShape::None));
        f.set_filter_fwhm(Some(3.0));
        assert!(f.filters.iter().all(|x| x.shape == FilterShape::Gaussian && x.fwhm_nm == 3.0));
        f.set_crystal_length(1.0);
        assert!(f.resolve().is_ok());
    }
}
