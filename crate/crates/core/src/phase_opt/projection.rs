//! Projections onto the convex hulls of the phase sets, and the final snap
//! onto the sets themselves.

use std::f64::consts::PI;

use crate::config::PhaseConstraint;
use crate::linalg::CVector;
use crate::C64;

/// Projection onto the closed unit disk.
pub fn project_cps(z: C64) -> C64 {
    let r = z.norm();
    if r <= 1.0 {
        z
    } else {
        z / r
    }
}

/// Projection onto the regular `tau`-gon with vertices `exp(j(2 pi m + pi)/tau)`.
///
/// The plane is cut into `tau` sectors centred on the edge normals; inside a
/// sector the polygon is the rectangle `[0, cos(pi/tau)] x [-sin, sin]` after
/// rotating the sector back onto the real axis.
pub fn project_dps(z: C64, tau: u32) -> C64 {
    let t = f64::from(tau);
    let half = PI / t;
    let n = ((z.arg() + half) / (2.0 * PI / t)).floor();
    let rot = C64::from_polar(1.0, 2.0 * PI * n / t);
    let w = z * rot.conj();
    let (c, s) = (half.cos(), half.sin());
    rot * C64::new(w.re.clamp(0.0, c.max(0.0)), w.im.clamp(-s, s))
}

pub fn project(z: C64, constraint: PhaseConstraint) -> C64 {
    match constraint {
        PhaseConstraint::Continuous => project_cps(z),
        PhaseConstraint::Discrete { levels } => project_dps(z, levels),
    }
}

pub fn project_vector(z: &CVector, constraint: PhaseConstraint) -> CVector {
    z.map(|x| project(x, constraint))
}

/// Nearest point of the (non-convex) phase set. Zero maps to `1` for
/// continuous phases; discrete angle ties go to the smaller level index.
pub fn snap(z: C64, constraint: PhaseConstraint) -> C64 {
    match constraint {
        PhaseConstraint::Continuous => {
            let r = z.norm();
            if r > 0.0 {
                z / r
            } else {
                C64::new(1.0, 0.0)
            }
        }
        PhaseConstraint::Discrete { levels } => {
            PhaseConstraint::discrete_point(nearest_level(z, levels), levels)
        }
    }
}

/// Index `m` of the discrete point closest in angle to `z`.
pub fn nearest_level(z: C64, levels: u32) -> u32 {
    let t = f64::from(levels);
    let shifted = (z.arg() - PI / t).rem_euclid(2.0 * PI);
    let pos = shifted / (2.0 * PI / t);
    let lo = pos.floor();
    let frac = pos - lo;
    let m_lo = (lo as u32) % levels;
    let m_hi = (m_lo + 1) % levels;
    if frac < 0.5 {
        m_lo
    } else if frac > 0.5 {
        m_hi
    } else {
        m_lo.min(m_hi)
    }
}

pub fn snap_vector(z: &CVector, constraint: PhaseConstraint) -> CVector {
    z.map(|x| snap(x, constraint))
}

/// Whether `z` is in the phase set: unit modulus to `1e-12` for continuous
/// phases, bit-for-bit equal to a level for discrete ones.
pub fn is_member(z: C64, constraint: PhaseConstraint) -> bool {
    match constraint {
        PhaseConstraint::Continuous => (z.norm() - 1.0).abs() <= 1e-12,
        PhaseConstraint::Discrete { levels } => {
            z == PhaseConstraint::discrete_point(nearest_level(z, levels), levels)
        }
    }
}

/// Whether `z` lies in the convex hull of the phase set, with `slack`.
pub fn in_hull(z: C64, constraint: PhaseConstraint, slack: f64) -> bool {
    match constraint {
        PhaseConstraint::Continuous => z.norm() <= 1.0 + slack,
        PhaseConstraint::Discrete { levels } => (project_dps(z, levels) - z).norm() <= slack,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: C64, b: C64) -> bool {
        (a - b).norm() <= 1e-12
    }

    #[test]
    fn cps_cases() {
        assert_eq!(project_cps(C64::new(0.0, 0.5)), C64::new(0.0, 0.5));
        assert!(close(project_cps(C64::new(3.0, 4.0)), C64::new(0.6, 0.8)));
    }

    #[test]
    fn dps_cases() {
        let v = C64::from_polar(1.0, PI / 4.0);
        assert!(close(project_dps(v, 4), v));
        assert!(close(project_dps(C64::new(1.0, 0.0), 4), C64::new((PI / 4.0).cos(), 0.0)));
        assert!(close(project_dps(C64::new(1.0, 0.3), 2), C64::new(0.0, 0.3)));
    }

    #[test]
    fn dps_matches_dense_boundary_search() {
        // nearest point on the polygon boundary for exterior points
        for tau in [2u32, 4, 8] {
            let verts: Vec<C64> = (0..tau).map(|m| PhaseConstraint::discrete_point(m, tau)).collect();
            for k in 0..50 {
                let z = C64::from_polar(1.2 + 0.03 * k as f64, 0.37 * k as f64);
                let mut best = (f64::INFINITY, C64::new(0.0, 0.0));
                for i in 0..tau as usize {
                    let (a, b) = (verts[i], verts[(i + 1) % tau as usize]);
                    for s in 0..=20_000 {
                        let p = a + (b - a) * (s as f64 / 20_000.0);
                        let d = (p - z).norm();
                        if d < best.0 {
                            best = (d, p);
                        }
                    }
                }
                let got = project_dps(z, tau);
                assert!((got - z).norm() <= best.0 + 1e-9, "tau {tau} z {z}");
            }
        }
    }

    #[test]
    fn snap_cases() {
        assert_eq!(snap(C64::new(0.0, 0.0), PhaseConstraint::Continuous), C64::new(1.0, 0.0));
        let dps = PhaseConstraint::Discrete { levels: 4 };
        // 1 is equidistant from levels 0 and 3; the smaller index wins
        assert_eq!(snap(C64::new(1.0, 0.0), dps), PhaseConstraint::discrete_point(0, 4));
        assert_eq!(snap(C64::new(-1.0, -0.1), dps), PhaseConstraint::discrete_point(2, 4));
        assert_eq!(snap(C64::new(0.2, -1.0), dps), PhaseConstraint::discrete_point(3, 4));
    }

    fn any_c64() -> impl Strategy<Value = C64> {
        (-3.0f64..3.0, -3.0f64..3.0).prop_map(|(a, b)| C64::new(a, b))
    }

    fn any_constraint() -> impl Strategy<Value = PhaseConstraint> {
        prop_oneof![
            Just(PhaseConstraint::Continuous),
            (1u32..5).prop_map(|b| PhaseConstraint::Discrete { levels: 1 << b }),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn projection_idempotent_and_nonexpansive(x in any_c64(), y in any_c64(), c in any_constraint()) {
            let px = project(x, c);
            prop_assert!((project(px, c) - px).norm() <= 1e-12);
            prop_assert!((px - project(y, c)).norm() <= (x - y).norm() + 1e-12);
            prop_assert!(in_hull(px, c, 1e-12));
        }

        #[test]
        fn snap_lands_in_set_and_is_nearest(x in any_c64(), c in any_constraint()) {
            let s = snap(x, c);
            prop_assert!(is_member(s, c));
            if let PhaseConstraint::Discrete { levels } = c {
                for m in 0..levels {
                    let p = PhaseConstraint::discrete_point(m, levels);
                    prop_assert!((s - x).norm() <= (p - x).norm() + 1e-12);
                }
            }
        }
    }
}
