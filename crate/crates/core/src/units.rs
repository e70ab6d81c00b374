//! Physical constants and unit conversions.

use std::f64::consts::PI;

/// Speed of light in vacuum, nm/fs. Air is treated as vacuum.
pub const C_NM_PER_FS: f64 = 299.792_458;

/// nm per mm.
pub const NM_PER_MM: f64 = 1.0e6;

/// Angular frequency (rad/fs) of light with vacuum wavelength `lambda_nm`.
pub fn angular_frequency(lambda_nm: f64) -> f64 {
    2.0 * PI * C_NM_PER_FS / lambda_nm
}

/// Vacuum wavelength (nm) of light with angular frequency `omega` (rad/fs).
pub fn wavelength_nm(omega: f64) -> f64 {
    2.0 * PI * C_NM_PER_FS / omega
}

/// Inverse group velocity in fs/mm for a given group index.
pub fn inverse_group_velocity_fs_per_mm(group_index: f64) -> f64 {
    group_index * NM_PER_MM / C_NM_PER_FS
}

/// Converts a wavelength-domain width (nm) at `center_nm` into an angular
/// frequency width (rad/fs), first order.
pub fn bandwidth_nm_to_rad_per_fs(center_nm: f64, width_nm: f64) -> f64 {
    2.0 * PI * C_NM_PER_FS * width_nm / (center_nm * center_nm)
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_phase(phi: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut w = phi.rem_euclid(two_pi);
    if w > PI {
        w -= two_pi;
    }
    w
}
