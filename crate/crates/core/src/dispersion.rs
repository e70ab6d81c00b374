//! Material dispersion of birefringent crystals and the delays imposed by
//! plane-parallel birefringent elements.
//!
//! Indices come from Sellmeier fits loaded from a TOML table (see
//! `data/materials.toml`); no dispersion constants live in code. Group indices
//! use the analytic derivative of the fit. Tilted plates use exact
//! plane-parallel refraction geometry with the ordinary index setting the
//! internal angle for both polarizations.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::{C_NM_PER_FS, NM_PER_MM};

/// Shipped dispersion table.
pub const SHIPPED_MATERIALS: &str = include_str!("../data/materials.toml");

/// Crystal-frame polarization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pol {
    O,
    E,
}

/// Laboratory-frame linear polarization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabPol {
    H,
    V,
}

/// Orientation of an element's optic axis in the laboratory frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AxisOrientation {
    Horizontal,
    Vertical,
}

impl AxisOrientation {
    /// Polarization that travels as the extraordinary wave.
    pub fn extraordinary(self) -> LabPol {
        match self {
            AxisOrientation::Horizontal => LabPol::H,
            AxisOrientation::Vertical => LabPol::V,
        }
    }

    pub fn crossed(self) -> Self {
        match self {
            AxisOrientation::Horizontal => AxisOrientation::Vertical,
            AxisOrientation::Vertical => AxisOrientation::Horizontal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SellmeierForm {
    /// `n^2 = c0 + sum_k c(2k-1) x / (x - c(2k))`
    Sellmeier,
    /// `n^2 = c0 + c1 / (x - c2) - c3 x`
    Eimerl,
}

/// One Sellmeier fit, wavelength `x = lambda^2` in um^2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SellmeierFit {
    pub form: SellmeierForm,
    pub coefficients: Vec<f64>,
    pub valid_range_nm: (f64, f64),
}

impl SellmeierFit {
    fn validate(&self, label: &str) -> Result<()> {
        let c = &self.coefficients;
        let ok = match self.form {
            SellmeierForm::Sellmeier => c.len() >= 3 && c.len() % 2 == 1,
            SellmeierForm::Eimerl => c.len() == 4,
        };
        if !ok {
            return Err(Error::MaterialTable(format!(
                "{label}: {} coefficients do not fit the {:?} form",
                c.len(),
                self.form
            )));
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::MaterialTable(format!("{label}: non-finite coefficient")));
        }
        let (lo, hi) = self.valid_range_nm;
        if !(lo > 0.0 && hi > lo) {
            return Err(Error::MaterialTable(format!("{label}: bad valid range [{lo}, {hi}]")));
        }
        Ok(())
    }

    /// `n^2` and `d(n^2)/dx` at `x = (lambda / 1 um)^2`.
    fn eval(&self, x: f64) -> (f64, f64) {
        let c = &self.coefficients;
        match self.form {
            SellmeierForm::Sellmeier => {
                let mut f = c[0];
                let mut df = 0.0;
                for term in c[1..].chunks_exact(2) {
                    let (b, k) = (term[0], term[1]);
                    let d = x - k;
                    f += b * x / d;
                    df -= b * k / (d * d);
                }
                (f, df)
            }
            SellmeierForm::Eimerl => {
                let d = x - c[2];
                (c[0] + c[1] / d - c[3] * x, -c[1] / (d * d) - c[3])
            }
        }
    }

    /// Index and its wavelength derivative (per nm). No range check.
    pub fn index_and_slope(&self, lambda_nm: f64) -> (f64, f64) {
        let x = lambda_nm * lambda_nm * 1e-6;
        let (f, df) = self.eval(x);
        let n = f.sqrt();
        // dx/dlambda = 2 lambda 1e-6, dn/dx = df / (2 n)
        (n, df * lambda_nm * 1e-6 / n)
    }
}

/// A uniaxial material with ordinary and extraordinary fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub name: String,
    pub sellmeier_o: SellmeierFit,
    pub sellmeier_e: SellmeierFit,
    pub source_note: String,
}

impl Material {
    fn fit(&self, pol: Pol) -> &SellmeierFit {
        match pol {
            Pol::O => &self.sellmeier_o,
            Pol::E => &self.sellmeier_e,
        }
    }

    /// Wavelength range over which both fits are valid.
    pub fn valid_range_nm(&self) -> (f64, f64) {
        let (a0, a1) = self.sellmeier_o.valid_range_nm;
        let (b0, b1) = self.sellmeier_e.valid_range_nm;
        (a0.max(b0), a1.min(b1))
    }

    fn check_range(&self, pol: Pol, lambda_nm: f64, strict: bool) -> Result<()> {
        let (lo, hi) = self.fit(pol).valid_range_nm;
        let inside = if strict {
            lambda_nm > lo && lambda_nm < hi
        } else {
            lambda_nm >= lo && lambda_nm <= hi
        };
        if inside && lambda_nm.is_finite() {
            Ok(())
        } else {
            Err(Error::WavelengthOutOfRange {
                material: self.name.clone(),
                wavelength_nm: lambda_nm,
                min_nm: lo,
                max_nm: hi,
            })
        }
    }
}

/// Refractive index `n(lambda)` of `material` for polarization `pol`.
pub fn refractive_index(material: &Material, pol: Pol, lambda_nm: f64) -> Result<f64> {
    material.check_range(pol, lambda_nm, false)?;
    Ok(material.fit(pol).index_and_slope(lambda_nm).0)
}

/// Group index `n - lambda dn/dlambda`, analytic derivative. The wavelength
/// must lie strictly inside the valid range.
pub fn group_index(material: &Material, pol: Pol, lambda_nm: f64) -> Result<f64> {
    material.check_range(pol, lambda_nm, true)?;
    let (n, slope) = material.fit(pol).index_and_slope(lambda_nm);
    Ok(n - lambda_nm * slope)
}

fn angled_index_and_slope(material: &Material, theta_deg: f64, lambda_nm: f64) -> (f64, f64) {
    let (no, dno) = material.sellmeier_o.index_and_slope(lambda_nm);
    let (ne, dne) = material.sellmeier_e.index_and_slope(lambda_nm);
    let (s, c) = theta_deg.to_radians().sin_cos();
    let u = c * c / (no * no) + s * s / (ne * ne);
    let du = -2.0 * c * c * dno / (no * no * no) - 2.0 * s * s * dne / (ne * ne * ne);
    let n = u.powf(-0.5);
    (n, -0.5 * u.powf(-1.5) * du)
}

/// Extraordinary index for propagation at `theta_deg` from the optic axis.
pub fn extraordinary_index_at(material: &Material, theta_deg: f64, lambda_nm: f64) -> Result<f64> {
    material.check_range(Pol::O, lambda_nm, false)?;
    material.check_range(Pol::E, lambda_nm, false)?;
    Ok(angled_index_and_slope(material, theta_deg, lambda_nm).0)
}

/// Extraordinary group index for propagation at `theta_deg` from the optic axis.
pub fn extraordinary_group_index_at(
    material: &Material,
    theta_deg: f64,
    lambda_nm: f64,
) -> Result<f64> {
    material.check_range(Pol::O, lambda_nm, true)?;
    material.check_range(Pol::E, lambda_nm, true)?;
    let (n, slope) = angled_index_and_slope(material, theta_deg, lambda_nm);
    Ok(n - lambda_nm * slope)
}

/// Collinear type-I (e -> o + o) phase-matching angle in degrees, for a
/// negative uniaxial crystal.
pub fn type1_phase_matching_angle(
    material: &Material,
    pump_nm: f64,
    signal_nm: f64,
    idler_nm: f64,
) -> Result<f64> {
    let n_target = pump_nm
        * (refractive_index(material, Pol::O, signal_nm)? / signal_nm
            + refractive_index(material, Pol::O, idler_nm)? / idler_nm);
    let no = refractive_index(material, Pol::O, pump_nm)?;
    let ne = refractive_index(material, Pol::E, pump_nm)?;
    let s2 = (1.0 / (n_target * n_target) - 1.0 / (no * no)) / (1.0 / (ne * ne) - 1.0 / (no * no));
    if !(0.0..=1.0).contains(&s2) {
        return Err(Error::invalid(format!(
            "{}: no type-I phase matching for {pump_nm} -> {signal_nm} + {idler_nm} nm",
            material.name
        )));
    }
    Ok(s2.sqrt().asin().to_degrees())
}

#[derive(Debug, Deserialize)]
struct TableFile {
    material: Vec<TableRecord>,
}

#[derive(Debug, Deserialize)]
struct TableRecord {
    name: String,
    pol: Pol,
    form: SellmeierForm,
    coefficients: Vec<f64>,
    valid_range_nm: (f64, f64),
    #[serde(default)]
    source_note: String,
}

/// Immutable set of materials keyed by name.
#[derive(Debug, Clone, Default)]
pub struct MaterialTable {
    materials: BTreeMap<String, Material>,
}

impl MaterialTable {
    pub fn shipped() -> Self {
        Self::from_toml_str(SHIPPED_MATERIALS).expect("shipped material table is valid")
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::MaterialTable(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: TableFile =
            toml::from_str(text).map_err(|e| Error::MaterialTable(e.to_string()))?;
        let mut o: BTreeMap<String, TableRecord> = BTreeMap::new();
        let mut e: BTreeMap<String, TableRecord> = BTreeMap::new();
        for rec in file.material {
            let slot = match rec.pol {
                Pol::O => &mut o,
                Pol::E => &mut e,
            };
            if slot.contains_key(&rec.name) {
                return Err(Error::MaterialTable(format!(
                    "duplicate record for {} ({:?})",
                    rec.name, rec.pol
                )));
            }
            slot.insert(rec.name.clone(), rec);
        }
        let mut materials = BTreeMap::new();
        for (name, ro) in o {
            let re = e.remove(&name).ok_or_else(|| {
                Error::MaterialTable(format!("{name}: missing extraordinary record"))
            })?;
            let material = Material {
                name: name.clone(),
                source_note: if ro.source_note == re.source_note {
                    ro.source_note.clone()
                } else {
                    format!("o: {}; e: {}", ro.source_note, re.source_note)
                },
                sellmeier_o: SellmeierFit {
                    form: ro.form,
                    coefficients: ro.coefficients,
                    valid_range_nm: ro.valid_range_nm,
                },
                sellmeier_e: SellmeierFit {
                    form: re.form,
                    coefficients: re.coefficients,
                    valid_range_nm: re.valid_range_nm,
                },
            };
            validate_material(&material)?;
            materials.insert(name, material);
        }
        if let Some(name) = e.keys().next() {
            return Err(Error::MaterialTable(format!("{name}: missing ordinary record")));
        }
        Ok(Self { materials })
    }

    pub fn get(&self, name: &str) -> Result<&Material> {
        self.materials
            .get(name)
            .ok_or_else(|| Error::MaterialTable(format!("unknown material '{name}'")))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Material> {
        self.materials.values()
    }
}

fn validate_material(m: &Material) -> Result<()> {
    m.sellmeier_o.validate(&format!("{} (o)", m.name))?;
    m.sellmeier_e.validate(&format!("{} (e)", m.name))?;
    for (pol, fit) in [(Pol::O, &m.sellmeier_o), (Pol::E, &m.sellmeier_e)] {
        let (lo, hi) = fit.valid_range_nm;
        for k in 0..=256 {
            let l = lo + (hi - lo) * k as f64 / 256.0;
            let (n, _) = fit.index_and_slope(l);
            if !(n.is_finite() && n > 1.0) {
                return Err(Error::MaterialTable(format!(
                    "{} ({pol:?}): index {n} at {l} nm violates n > 1",
                    m.name
                )));
            }
        }
    }
    Ok(())
}

/// A plane-parallel birefringent slab: crystal, plate or rod.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BirefringentElement {
    pub material: Material,
    pub thickness_mm: f64,
    pub axis: AxisOrientation,
    /// Rotation away from normal incidence, degrees.
    pub tilt_deg: f64,
    /// Angle between optic axis and propagation direction. `None` means the
    /// optic axis lies in the face of the slab (90 degrees).
    pub cut_angle_deg: Option<f64>,
}

impl BirefringentElement {
    pub fn new(
        material: Material,
        thickness_mm: f64,
        axis: AxisOrientation,
        tilt_deg: f64,
    ) -> Result<Self> {
        let elem = Self {
            material,
            thickness_mm,
            axis,
            tilt_deg,
            cut_angle_deg: None,
        };
        elem.validate()?;
        Ok(elem)
    }

    pub fn with_cut_angle(mut self, cut_angle_deg: f64) -> Self {
        self.cut_angle_deg = Some(cut_angle_deg);
        self
    }

    pub fn validate(&self) -> Result<()> {
        // Zero thickness stands for a removed element.
        if !(self.thickness_mm >= 0.0 && self.thickness_mm.is_finite()) {
            return Err(Error::invalid(format!(
                "element thickness {} mm must be >= 0",
                self.thickness_mm
            )));
        }
        if !(self.tilt_deg.abs() < 45.0) {
            return Err(Error::invalid(format!(
                "element tilt {} deg must satisfy |tilt| < 45",
                self.tilt_deg
            )));
        }
        Ok(())
    }

    /// Crystal-frame polarization seen by a laboratory polarization.
    pub fn pol_for(&self, lab: LabPol) -> Pol {
        if self.axis.extraordinary() == lab {
            Pol::E
        } else {
            Pol::O
        }
    }

    pub fn index(&self, pol: Pol, lambda_nm: f64) -> Result<f64> {
        match (pol, self.cut_angle_deg) {
            (Pol::E, Some(theta)) => extraordinary_index_at(&self.material, theta, lambda_nm),
            _ => refractive_index(&self.material, pol, lambda_nm),
        }
    }

    pub fn group_index(&self, pol: Pol, lambda_nm: f64) -> Result<f64> {
        match (pol, self.cut_angle_deg) {
            (Pol::E, Some(theta)) => extraordinary_group_index_at(&self.material, theta, lambda_nm),
            _ => group_index(&self.material, pol, lambda_nm),
        }
    }

    /// Geometric path inside the slab, mm. Refraction angle from the
    /// ordinary index.
    pub fn effective_length_mm(&self, lambda_nm: f64) -> Result<f64> {
        if self.tilt_deg == 0.0 {
            return Ok(self.thickness_mm);
        }
        let no = refractive_index(&self.material, Pol::O, lambda_nm)?;
        let sin_int = self.tilt_deg.to_radians().sin().abs() / no;
        Ok(self.thickness_mm / (1.0 - sin_int * sin_int).sqrt())
    }

    /// Tilt (degrees, >= 0) at which the internal path reaches `length_mm`.
    pub fn tilt_for_effective_length(&self, lambda_nm: f64, length_mm: f64) -> Result<f64> {
        if length_mm < self.thickness_mm || self.thickness_mm <= 0.0 {
            return Err(Error::invalid(format!(
                "effective length {length_mm} mm below plate thickness {} mm",
                self.thickness_mm
            )));
        }
        let no = refractive_index(&self.material, Pol::O, lambda_nm)?;
        let cos_int = self.thickness_mm / length_mm;
        let sin_ext = no * (1.0 - cos_int * cos_int).sqrt();
        let tilt = sin_ext.asin().to_degrees();
        if !(sin_ext < 1.0 && tilt < 45.0) {
            return Err(Error::invalid(format!(
                "effective length {length_mm} mm needs a tilt beyond 45 deg"
            )));
        }
        Ok(tilt)
    }
}

/// Phase and group delay through a birefringent element.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GroupDelayReport {
    pub phase_delay_fs: f64,
    pub group_delay_fs: f64,
    pub polarization: Pol,
    /// Set for tilted extraordinary propagation, where the angle dependence of
    /// the extraordinary index is not modeled.
    pub e_angle_neglected: bool,
}

pub fn element_delays(
    elem: &BirefringentElement,
    pol: Pol,
    lambda_nm: f64,
) -> Result<GroupDelayReport> {
    elem.validate()?;
    let path_nm = elem.effective_length_mm(lambda_nm)? * NM_PER_MM;
    let n = elem.index(pol, lambda_nm)?;
    let ng = elem.group_index(pol, lambda_nm)?;
    Ok(GroupDelayReport {
        phase_delay_fs: n * path_nm / C_NM_PER_FS,
        group_delay_fs: ng * path_nm / C_NM_PER_FS,
        polarization: pol,
        e_angle_neglected: pol == Pol::E && elem.tilt_deg != 0.0,
    })
}

/// Delays seen by a laboratory polarization.
pub fn element_delays_lab(
    elem: &BirefringentElement,
    lab: LabPol,
    lambda_nm: f64,
) -> Result<GroupDelayReport> {
    element_delays(elem, elem.pol_for(lab), lambda_nm)
}

/// H-V pump group delay the compensator must pre-impose for a collinear
/// crystal stack, fs. Positive: the V pump component must be advanced.
///
/// The H-V mismatch of the two emission amplitudes, averaged over the
/// emission point, is the pump ordinary-wave delay through one crystal less
/// the extraordinary pair delay through the other. For a stack of equal
/// crystals this splits evenly, so each crystal contributes half its
/// thickness of `n_g,o(pump) - n_g,e(pair)`; the pair group index is the
/// signal/idler mean at the crystal's cut angle.
pub fn compensation_delay(
    crystals: &[BirefringentElement],
    pump_nm: f64,
    signal_nm: f64,
    idler_nm: f64,
) -> Result<f64> {
    let mut total = 0.0;
    for crystal in crystals {
        crystal.validate()?;
        let theta = match crystal.cut_angle_deg {
            Some(t) => t,
            None => type1_phase_matching_angle(&crystal.material, pump_nm, signal_nm, idler_nm)?,
        };
        let m = &crystal.material;
        let ng_pump_o = group_index(m, Pol::O, pump_nm)?;
        let ng_pair_e = 0.5
            * (extraordinary_group_index_at(m, theta, signal_nm)?
                + extraordinary_group_index_at(m, theta, idler_nm)?);
        total += 0.5 * crystal.thickness_mm * NM_PER_MM * (ng_pump_o - ng_pair_e) / C_NM_PER_FS;
    }
    Ok(total)
}
