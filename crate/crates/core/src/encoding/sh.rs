//! Real spherical harmonics, orthonormal, without the Condon-Shortley phase.
//!
//! Coefficient `(l, m)` sits at index `l^2 + l + m`. With `z = cos(theta)`:
//!
//! * `m > 0`: `sqrt(2) K_l^m P_l^m(z) cos(m phi)`
//! * `m = 0`: `K_l^0 P_l(z)`
//! * `m < 0`: `sqrt(2) K_l^|m| P_l^|m|(z) sin(|m| phi)`
//!
//! Evaluation avoids trigonometry: `sin^m(theta) (cos m phi, sin m phi)` is
//! the complex power `(x + iy)^m`, and `P_l^m / sin^m(theta)` follows the
//! usual three-term recurrence in `l`.

use std::f64::consts::PI;
use std::sync::OnceLock;

use glam::DVec3;
use serde::{Deserialize, Serialize};

use super::{check_unit, EncodingError};

pub const MAX_SH_DEGREE: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShConfig {
    pub degree: u32,
}

impl ShConfig {
    pub fn validate(&self) -> Result<(), EncodingError> {
        if self.degree > MAX_SH_DEGREE {
            Err(EncodingError::UnsupportedDegree(self.degree))
        } else {
            Ok(())
        }
    }

    pub fn output_dim(&self) -> usize {
        let n = self.degree as usize + 1;
        n * n
    }
}

const NK: usize = (MAX_SH_DEGREE as usize + 1) * (MAX_SH_DEGREE as usize + 1);

// K_l^m, with the sqrt(2) folded in for m > 0.
fn norms() -> &'static [f64; NK] {
    static TABLE: OnceLock<[f64; NK]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [0.0; NK];
        for l in 0..=MAX_SH_DEGREE as usize {
            for m in 0..=l {
                let mut ratio = 1.0;
                for k in (l - m + 1)..=(l + m) {
                    ratio /= k as f64;
                }
                let mut k = ((2 * l + 1) as f64 / (4.0 * PI) * ratio).sqrt();
                if m > 0 {
                    k *= std::f64::consts::SQRT_2;
                }
                t[l * (l + 1) / 2 + m] = k;
            }
        }
        t
    })
}

pub fn sh_encode(d: DVec3, cfg: ShConfig) -> Result<Vec<f64>, EncodingError> {
    cfg.validate()?;
    check_unit(d)?;
    let mut out = vec![0.0; cfg.output_dim()];
    sh_eval_into(d, cfg.degree, &mut out);
    Ok(out)
}

/// Unchecked evaluation; `out.len()` must be `(degree + 1)^2`.
pub fn sh_eval_into(d: DVec3, degree: u32, out: &mut [f64]) {
    let lmax = degree as usize;
    debug_assert!(degree <= MAX_SH_DEGREE);
    debug_assert_eq!(out.len(), (lmax + 1) * (lmax + 1));
    let k = norms();
    let (x, y, z) = (d.x, d.y, d.z);
    // (c, s) = Re/Im of (x + iy)^m.
    let (mut c, mut s) = (1.0, 0.0);
    // (2m - 1)!!
    let mut qmm = 1.0;
    for m in 0..=lmax {
        let mut q_prev = 0.0;
        let mut q = qmm;
        for l in m..=lmax {
            if l == m + 1 {
                q_prev = q;
                q = z * (2 * m + 1) as f64 * qmm;
            } else if l > m + 1 {
                let next =
                    ((2 * l - 1) as f64 * z * q - (l + m - 1) as f64 * q_prev) / (l - m) as f64;
                q_prev = q;
                q = next;
            }
            let kq = k[l * (l + 1) / 2 + m] * q;
            let idx = l * l + l;
            if m == 0 {
                out[idx] = kq;
            } else {
                out[idx + m] = kq * c;
                out[idx - m] = kq * s;
            }
        }
        (c, s) = (c * x - s * y, c * y + s * x);
        qmm *= (2 * m + 1) as f64;
    }
}
