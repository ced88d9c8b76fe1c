//! Laguerre-Gaussian modes, their coherent superpositions and the
//! rotation law of the resulting intensity patterns.
//!
//! Fields follow the paraxial convention `U = u·exp(ikz)` so that a mode
//! picks up the Gouy phase `-(n+1)·atan(z/zR)` and a curvature phase
//! `+r̃²·z̃`. Mode functions are normalized so that `∫|u|² dA = w0²`, i.e.
//! they are orthonormal when areas are measured in units of `w0²`.

use num_complex::Complex64;
use num_rational::Ratio;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LgError {
    #[error("beam waist and wavelength must be positive (w0 = {w0}, lambda = {wavelength})")]
    InvalidGeometry { w0: f64, wavelength: f64 },
    #[error("superposition coefficients have total weight {0}, expected 1")]
    NotNormalized(f64),
    #[error("a superposition needs at least {required} terms, got {got}")]
    TooFewTerms { required: usize, got: usize },
    #[error("mode {0:?} appears more than once")]
    DuplicateMode(LgIndex),
    #[error("rayleigh length must be positive, got {0}")]
    InvalidRayleighLength(f64),
}

/// Mode indices `|l, p⟩`: azimuthal number `l` and radial number `p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LgIndex {
    pub l: i32,
    pub p: u32,
}

impl LgIndex {
    pub const fn new(l: i32, p: u32) -> Self {
        Self { l, p }
    }

    /// Combined mode number `n = 2p + |l|`.
    pub fn order(&self) -> u32 {
        2 * self.p + self.l.unsigned_abs()
    }

    /// All modes with combined order at most `max_order`.
    pub fn all_up_to(max_order: u32) -> Vec<LgIndex> {
        let mut modes = Vec::new();
        for n in 0..=max_order {
            for l in -(n as i32)..=(n as i32) {
                let rest = n - l.unsigned_abs();
                if rest % 2 == 0 {
                    modes.push(LgIndex::new(l, rest / 2));
                }
            }
        }
        modes
    }
}

/// Gaussian beam geometry shared by every mode of a superposition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamGeometry {
    w0: f64,
    wavelength: f64,
}

impl BeamGeometry {
    pub fn new(w0: f64, wavelength: f64) -> Result<Self, LgError> {
        if !(w0 > 0.0 && wavelength > 0.0 && w0.is_finite() && wavelength.is_finite()) {
            return Err(LgError::InvalidGeometry { w0, wavelength });
        }
        Ok(Self { w0, wavelength })
    }

    /// Geometry with the waist chosen so the Rayleigh length equals `z_r`.
    pub fn from_rayleigh_length(z_r: f64, wavelength: f64) -> Result<Self, LgError> {
        Self::new((z_r * wavelength / PI).sqrt(), wavelength)
    }

    pub fn waist(&self) -> f64 {
        self.w0
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    /// `zR = π·w0²/λ`.
    pub fn rayleigh_length(&self) -> f64 {
        PI * self.w0 * self.w0 / self.wavelength
    }

    /// Beam radius `w(z) = w0·sqrt(1 + (z/zR)²)`.
    pub fn width(&self, z: f64) -> f64 {
        let zt = z / self.rayleigh_length();
        self.w0 * (1.0 + zt * zt).sqrt()
    }
}

/// Generalized Laguerre polynomial `L_p^α(x)` by the three-term recurrence.
pub fn generalized_laguerre(p: u32, alpha: f64, x: f64) -> f64 {
    let mut prev = 1.0;
    if p == 0 {
        return prev;
    }
    let mut cur = 1.0 + alpha - x;
    for k in 1..p {
        let k = k as f64;
        let next = ((2.0 * k + 1.0 + alpha - x) * cur - (k + alpha) * prev) / (k + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// Normalization constant `C_lp = sqrt(2·p! / (π·(p+|l|)!))`.
pub fn lg_normalization(index: LgIndex) -> f64 {
    let p = index.p;
    (2.0 * factorial(p) / (PI * factorial(p + index.l.unsigned_abs()))).sqrt()
}

/// Complex amplitude of `|l,p⟩` at cylindrical position `(r, φ, z)`.
pub fn lg_field(index: LgIndex, geom: &BeamGeometry, r: f64, phi: f64, z: f64) -> Complex64 {
    let zt = z / geom.rayleigh_length();
    let w = geom.w0 * (1.0 + zt * zt).sqrt();
    let rt = r / w;
    let rt2 = rt * rt;
    let abs_l = index.l.unsigned_abs();
    let amplitude = lg_normalization(index)
        * (geom.w0 / w)
        * (2f64.sqrt() * rt).powi(abs_l as i32)
        * (-rt2).exp()
        * generalized_laguerre(index.p, abs_l as f64, 2.0 * rt2);
    let gouy = (index.order() as f64 + 1.0) * zt.atan();
    let phase = rt2 * zt + index.l as f64 * phi - gouy;
    Complex64::from_polar(amplitude, phase)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LgTerm {
    pub index: LgIndex,
    pub coeff: Complex64,
}

/// Normalized superposition `Σ a_j |l_j, p_j⟩`, terms sorted by combined
/// order (ties keep their input order).
#[derive(Debug, Clone, PartialEq)]
pub struct LgSuperposition {
    terms: Vec<LgTerm>,
}

impl LgSuperposition {
    const NORM_TOLERANCE: f64 = 1e-12;

    pub fn new(terms: Vec<LgTerm>) -> Result<Self, LgError> {
        if terms.is_empty() {
            return Err(LgError::TooFewTerms { required: 1, got: 0 });
        }
        let weight: f64 = terms.iter().map(|t| t.coeff.norm_sqr()).sum();
        if (weight - 1.0).abs() > Self::NORM_TOLERANCE {
            return Err(LgError::NotNormalized(weight));
        }
        Self::sorted(terms)
    }

    /// Build a superposition, rescaling the coefficients to unit weight.
    pub fn normalized(terms: Vec<LgTerm>) -> Result<Self, LgError> {
        let weight: f64 = terms.iter().map(|t| t.coeff.norm_sqr()).sum();
        if !(weight > 0.0) {
            return Err(LgError::NotNormalized(weight));
        }
        let scale = weight.sqrt().recip();
        Self::sorted(terms.into_iter().map(|t| LgTerm { index: t.index, coeff: t.coeff * scale }).collect())
    }

    /// Equal-weight superposition of the given modes.
    pub fn equal_weights(modes: &[LgIndex]) -> Result<Self, LgError> {
        let c = Complex64::new((modes.len() as f64).sqrt().recip(), 0.0);
        Self::new(modes.iter().map(|&index| LgTerm { index, coeff: c }).collect())
    }

    /// The double-helix superposition `(|0,0⟩ + |2,1⟩)/√2`.
    pub fn double_helix() -> Self {
        Self::equal_weights(&[LgIndex::new(0, 0), LgIndex::new(2, 1)])
            .expect("double-helix superposition is normalized")
    }

    /// The fundamental Gaussian mode `|0,0⟩`.
    pub fn fundamental() -> Self {
        Self::equal_weights(&[LgIndex::new(0, 0)]).expect("single mode is normalized")
    }

    fn sorted(mut terms: Vec<LgTerm>) -> Result<Self, LgError> {
        for (i, a) in terms.iter().enumerate() {
            if terms[i + 1..].iter().any(|b| b.index == a.index) {
                return Err(LgError::DuplicateMode(a.index));
            }
        }
        terms.sort_by_key(|t| t.index.order());
        Ok(Self { terms })
    }

    pub fn terms(&self) -> &[LgTerm] {
        &self.terms
    }

    pub fn field(&self, geom: &BeamGeometry, r: f64, phi: f64, z: f64) -> Complex64 {
        self.terms.iter().map(|t| t.coeff * lg_field(t.index, geom, r, phi, z)).sum()
    }

    /// Field at Cartesian transverse position `(x, y)`.
    pub fn field_xy(&self, geom: &BeamGeometry, x: f64, y: f64, z: f64) -> Complex64 {
        self.field(geom, x.hypot(y), y.atan2(x), z)
    }

    /// `|Σ a_j u_j|²` with the `ε0·c/2` prefactor dropped.
    pub fn intensity(&self, geom: &BeamGeometry, r: f64, phi: f64, z: f64) -> f64 {
        self.field(geom, r, phi, z).norm_sqr()
    }

    pub fn intensity_xy(&self, geom: &BeamGeometry, x: f64, y: f64, z: f64) -> f64 {
        self.field_xy(geom, x, y, z).norm_sqr()
    }
}

/// Free-function form of [`LgSuperposition::intensity`].
pub fn superposition_intensity(sup: &LgSuperposition, geom: &BeamGeometry, r: f64, phi: f64, z: f64) -> f64 {
    sup.intensity(geom, r, phi, z)
}

/// On-axis, in-focus intensity of the fundamental mode; the reference
/// level for "normalized to the standard PSF" intensity scales.
pub fn fundamental_peak_intensity() -> f64 {
    2.0 / PI
}

/// `θ(z) = V·atan(z/zR) + α`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationLaw {
    pub rate: f64,
    pub rayleigh_length: f64,
    pub alpha: f64,
}

impl RotationLaw {
    pub fn new(rate: f64, rayleigh_length: f64, alpha: f64) -> Result<Self, LgError> {
        if !(rayleigh_length > 0.0) {
            return Err(LgError::InvalidRayleighLength(rayleigh_length));
        }
        Ok(Self { rate, rayleigh_length, alpha })
    }

    /// Law of the ideal double-helix superposition (`V = 2`, no offset).
    pub fn double_helix(geom: &BeamGeometry) -> Self {
        Self { rate: 2.0, rayleigh_length: geom.rayleigh_length(), alpha: 0.0 }
    }

    pub fn rotation_angle(&self, z: f64) -> f64 {
        self.rate * (z / self.rayleigh_length).atan() + self.alpha
    }

    /// Rotation accumulated from `z = -∞` to `z = +∞`.
    pub fn total_rotation(&self) -> f64 {
        self.rate * PI
    }
}

/// Free-function form of [`RotationLaw::rotation_angle`].
pub fn rotation_angle(law: &RotationLaw, z: f64) -> f64 {
    law.rotation_angle(z)
}

/// Why a superposition fails the scaled-rigid rotation condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RotationReject {
    /// Consecutive terms `pair` and `pair + 1` share the same `l`; their
    /// interference has no azimuthal structure.
    ZeroAzimuthalStep { pair: usize },
    /// The ratio `Δn/Δl` of consecutive terms `pair`, `pair + 1` differs
    /// from the ratio of the first pair.
    VaryingRate { pair: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RigidRotation {
    Rotating { rate: Ratio<i64> },
    NotRotating(RotationReject),
}

impl RigidRotation {
    pub fn is_rigid(&self) -> bool {
        matches!(self, RigidRotation::Rotating { .. })
    }

    pub fn rate(&self) -> Option<Ratio<i64>> {
        match self {
            RigidRotation::Rotating { rate } => Some(*rate),
            RigidRotation::NotRotating(_) => None,
        }
    }
}

/// Test whether `Δn/Δl` is the same rational number for every pair of
/// consecutive (order-sorted) terms.
pub fn check_rigid_rotation(sup: &LgSuperposition) -> Result<RigidRotation, LgError> {
    let terms = sup.terms();
    if terms.len() < 2 {
        return Err(LgError::TooFewTerms { required: 2, got: terms.len() });
    }
    let mut common: Option<Ratio<i64>> = None;
    for (pair, w) in terms.windows(2).enumerate() {
        let dn = w[1].index.order() as i64 - w[0].index.order() as i64;
        let dl = (w[1].index.l - w[0].index.l) as i64;
        if dl == 0 {
            return Ok(RigidRotation::NotRotating(RotationReject::ZeroAzimuthalStep { pair }));
        }
        let v = Ratio::new(dn, dl);
        match common {
            None => common = Some(v),
            Some(c) if c != v => return Ok(RigidRotation::NotRotating(RotationReject::VaryingRate { pair })),
            Some(_) => {}
        }
    }
    Ok(RigidRotation::Rotating { rate: common.expect("at least one pair") })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_2;

    fn geom() -> BeamGeometry {
        BeamGeometry::new(1.3e-6, 852e-9).unwrap()
    }

    #[test]
    fn normalization_constants() {
        assert_abs_diff_eq!(lg_normalization(LgIndex::new(0, 0)), (2.0 / PI).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(lg_normalization(LgIndex::new(0, 0)), 0.7979, epsilon = 1e-4);
        let c21 = lg_normalization(LgIndex::new(2, 1));
        assert_abs_diff_eq!(c21, (1.0 / (3.0 * PI)).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(c21, 0.3257, epsilon = 1e-4);
        assert_eq!(lg_normalization(LgIndex::new(-2, 1)), c21);
    }

    #[test]
    fn laguerre_matches_closed_forms() {
        for &x in &[0.0, 0.4, 1.7, 5.0] {
            assert_abs_diff_eq!(generalized_laguerre(1, 2.0, x), 3.0 - x, epsilon = 1e-12);
            let l2 = (x * x - 8.0 * x + 12.0) / 2.0; // L_2^2
            assert_abs_diff_eq!(generalized_laguerre(2, 2.0, x), l2, epsilon = 1e-12);
            let l3 = (-x * x * x + 9.0 * x * x - 18.0 * x + 6.0) / 6.0; // L_3^0
            assert_abs_diff_eq!(generalized_laguerre(3, 0.0, x), l3, epsilon = 1e-12);
        }
    }

    #[test]
    fn field_at_origin() {
        let g = geom();
        let f00 = lg_field(LgIndex::new(0, 0), &g, 0.0, 0.0, 0.0);
        assert_abs_diff_eq!(f00.re, (2.0 / PI).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(f00.im, 0.0);
        for &z in &[0.0, 1e-6, -7e-6] {
            assert_eq!(lg_field(LgIndex::new(2, 1), &g, 0.0, 0.3, z).norm(), 0.0);
        }
    }

    #[test]
    fn width_never_below_waist() {
        let g = geom();
        for k in -20..=20 {
            assert!(g.width(k as f64 * 1e-6) >= g.waist());
        }
        assert_abs_diff_eq!(g.width(g.rayleigh_length()), g.waist() * 2f64.sqrt(), epsilon = 1e-18);
    }

    fn inner_products(z: f64) -> f64 {
        let g = BeamGeometry::new(1.0, 0.5).unwrap();
        let modes = LgIndex::all_up_to(6);
        assert_eq!(modes.len(), 28);
        let half = 6.0 * g.width(z);
        let n = 260;
        let h = 2.0 * half / n as f64;
        let mut fields = vec![Vec::with_capacity(n * n); modes.len()];
        for i in 0..n {
            let y = -half + (i as f64 + 0.5) * h;
            for j in 0..n {
                let x = -half + (j as f64 + 0.5) * h;
                for (m, f) in modes.iter().zip(fields.iter_mut()) {
                    f.push(lg_field(*m, &g, x.hypot(y), y.atan2(x), z));
                }
            }
        }
        let mut worst: f64 = 0.0;
        for a in 0..modes.len() {
            for b in a..modes.len() {
                let s: Complex64 =
                    fields[a].iter().zip(&fields[b]).map(|(u, v)| u.conj() * v).sum::<Complex64>() * h * h;
                let expected = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((s - expected).norm());
            }
        }
        worst
    }

    #[test]
    fn modes_are_orthonormal_in_focus() {
        assert!(inner_products(0.0) < 1e-6);
    }

    #[test]
    fn modes_are_orthonormal_at_rayleigh_length() {
        let zr = BeamGeometry::new(1.0, 0.5).unwrap().rayleigh_length();
        assert!(inner_products(zr) < 1e-6);
    }

    #[test]
    fn gouy_phase_consistency() {
        let g = geom();
        let zr = g.rayleigh_length();
        for m in LgIndex::all_up_to(6) {
            for &zt in &[-2.0, -0.5, 0.3, 1.0, 3.0] {
                let rt = 0.37;
                let z = zt * zr;
                let a0 = lg_field(m, &g, rt * g.waist(), 0.0, 0.0);
                let az = lg_field(m, &g, rt * g.width(z), 0.0, z);
                if a0.norm() < 1e-12 {
                    continue;
                }
                let measured = (az / a0).arg();
                let expected = rt * rt * zt - (m.order() as f64 + 1.0) * f64::atan(zt);
                let diff = crate::angle::wrap_full_turn(measured - expected);
                assert!(diff.abs() < 1e-9, "{m:?} zt={zt}: {diff}");
            }
        }
    }

    #[test]
    fn single_term_intensity_has_no_cross_terms() {
        let g = geom();
        let c = Complex64::from_polar(1.0, 0.7);
        let s = LgSuperposition::new(vec![LgTerm { index: LgIndex::new(1, 2), coeff: c }]).unwrap();
        let (r, phi, z) = (0.9e-6, 1.1, 2e-6);
        let direct = lg_field(LgIndex::new(1, 2), &g, r, phi, z).norm_sqr();
        assert_abs_diff_eq!(s.intensity(&g, r, phi, z), direct, epsilon = 1e-15);
    }

    #[test]
    fn double_helix_twofold_symmetry() {
        let g = geom();
        let dh = LgSuperposition::double_helix();
        for &r in &[0.2e-6, 0.8e-6, 1.5e-6] {
            for &phi in &[0.0, 0.4, 1.3] {
                let a = dh.intensity(&g, r, phi, 0.0);
                let b = dh.intensity(&g, r, phi + PI, 0.0);
                assert_abs_diff_eq!(a, b, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn double_helix_scaled_rigid_rotation_example() {
        let g = geom();
        let dh = LgSuperposition::double_helix();
        let zr = g.rayleigh_length();
        let at_focus = dh.intensity(&g, g.waist(), 0.0, 0.0);
        let rotated = dh.intensity(&g, g.width(zr), 2.0 * PI / 4.0, zr);
        let scale = (g.width(zr) / g.waist()).powi(2);
        assert_abs_diff_eq!(at_focus, rotated * scale, epsilon = 1e-12);
    }

    #[test]
    fn rotation_law_examples() {
        let law = RotationLaw::new(2.0, 5e-6, 0.0).unwrap();
        assert_eq!(law.rotation_angle(0.0), 0.0);
        assert_abs_diff_eq!(law.rotation_angle(5e-6), FRAC_PI_2, epsilon = 1e-15);
        assert_abs_diff_eq!(law.rotation_angle(1e9), PI, epsilon = 1e-12);
        assert_abs_diff_eq!(law.total_rotation(), 2.0 * PI);
        let shifted = RotationLaw::new(2.0, 5e-6, 0.4).unwrap();
        assert_eq!(shifted.rotation_angle(0.0), 0.4);
        for k in 1..10 {
            let z = k as f64 * 0.7e-6;
            assert_eq!(law.rotation_angle(-z), -law.rotation_angle(z));
        }
        assert!(RotationLaw::new(2.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn rigid_rotation_condition() {
        let dh = LgSuperposition::double_helix();
        assert_eq!(check_rigid_rotation(&dh).unwrap(), RigidRotation::Rotating { rate: Ratio::from_integer(2) });

        let radial = LgSuperposition::equal_weights(&[LgIndex::new(0, 0), LgIndex::new(0, 1)]).unwrap();
        assert_eq!(
            check_rigid_rotation(&radial).unwrap(),
            RigidRotation::NotRotating(RotationReject::ZeroAzimuthalStep { pair: 0 })
        );

        let chain =
            LgSuperposition::equal_weights(&[LgIndex::new(0, 0), LgIndex::new(1, 0), LgIndex::new(2, 0)]).unwrap();
        assert_eq!(check_rigid_rotation(&chain).unwrap().rate(), Some(Ratio::from_integer(1)));

        let bent =
            LgSuperposition::equal_weights(&[LgIndex::new(0, 0), LgIndex::new(1, 1), LgIndex::new(2, 1)]).unwrap();
        assert_eq!(
            check_rigid_rotation(&bent).unwrap(),
            RigidRotation::NotRotating(RotationReject::VaryingRate { pair: 1 })
        );

        assert!(matches!(check_rigid_rotation(&LgSuperposition::fundamental()), Err(LgError::TooFewTerms { .. })));
    }

    #[test]
    fn chain_with_unit_rate_rotates_numerically() {
        let g = geom();
        let chain =
            LgSuperposition::equal_weights(&[LgIndex::new(0, 0), LgIndex::new(1, 0), LgIndex::new(2, 0)]).unwrap();
        let zr = g.rayleigh_length();
        let z = 0.6 * zr;
        let turn = (z / zr).atan();
        let scale = (g.width(z) / g.waist()).powi(2);
        for &(rt, phi) in &[(0.3, 0.2), (0.9, 2.0), (1.4, 4.0)] {
            let a = chain.intensity(&g, rt * g.waist(), phi, 0.0);
            let b = chain.intensity(&g, rt * g.width(z), phi + turn, z) * scale;
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn rejects_unnormalized_and_duplicates() {
        let one = Complex64::new(1.0, 0.0);
        let t = |l, p| LgTerm { index: LgIndex::new(l, p), coeff: one };
        assert!(matches!(LgSuperposition::new(vec![t(0, 0), t(2, 1)]), Err(LgError::NotNormalized(_))));
        assert!(matches!(LgSuperposition::normalized(vec![t(0, 0), t(0, 0)]), Err(LgError::DuplicateMode(_))));
        let s = LgSuperposition::normalized(vec![t(2, 1), t(0, 0)]).unwrap();
        assert_eq!(s.terms()[0].index, LgIndex::new(0, 0));
    }
}
