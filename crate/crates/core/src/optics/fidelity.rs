use super::ComplexField;
use crate::fit::golden_section_max;
use crate::lgmodes::{BeamGeometry, LgSuperposition};
use num_complex::Complex64;

fn overlap(field: &ComplexField, target: &LgSuperposition, w0: f64) -> f64 {
    let Ok(geom) = BeamGeometry::new(w0, 1.0) else {
        return 0.0;
    };
    let grid = field.grid;
    let mut cross = Complex64::new(0.0, 0.0);
    let mut target_norm = 0.0;
    let mut field_norm = 0.0;
    for ((row, col), e) in field.values.indexed_iter() {
        let t = target.field_xy(&geom, grid.coordinate(col), grid.coordinate(row), 0.0);
        cross += t.conj() * e;
        target_norm += t.norm_sqr();
        field_norm += e.norm_sqr();
    }
    if target_norm == 0.0 || field_norm == 0.0 {
        return 0.0;
    }
    cross.norm_sqr() / (target_norm * field_norm)
}

/// Mode fidelity `|⟨target|field⟩|²` between a sampled field and the ideal
/// in-focus double-helix superposition, maximized over the target waist
/// within a factor of two of `geom.waist()` (same length units as the
/// field grid). Both states are normalized on the sampling window.
pub fn dh_fidelity(field: &ComplexField, geom: &BeamGeometry) -> (f64, f64) {
    let target = LgSuperposition::double_helix();
    let w = geom.waist();
    let tol = 1e-6 * w;
    match golden_section_max(|w0| overlap(field, &target, w0), 0.5 * w, 2.0 * w, tol) {
        Ok((best, value)) => (value.clamp(0.0, 1.0), best),
        Err(_) => (0.0, w),
    }
}
