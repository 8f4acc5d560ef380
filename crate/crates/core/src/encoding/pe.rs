//! Sinusoidal positional encoding at exponentially growing frequencies.
//!
//! Layout: for each input coordinate `x_c`, the pairs
//! `sin(2^0 x_c), cos(2^0 x_c), sin(2^1 x_c), cos(2^1 x_c), ...`.

use serde::{Deserialize, Serialize};

use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeConfig {
    pub n_freq: u32,
}

impl Default for PeConfig {
    fn default() -> Self {
        PeConfig { n_freq: 6 }
    }
}

impl PeConfig {
    pub fn output_dim(&self, input_dim: usize) -> usize {
        2 * input_dim * self.n_freq as usize
    }
}

pub fn pe_encode(x: &[f64], cfg: PeConfig) -> Vec<f64> {
    let mut out = vec![0.0; cfg.output_dim(x.len())];
    pe_encode_into(x, cfg.n_freq, &mut out);
    out
}

#[inline]
pub fn pe_encode_into<T: Real>(x: &[f64], n_freq: u32, out: &mut [T]) {
    let n = n_freq as usize;
    debug_assert_eq!(out.len(), 2 * x.len() * n);
    for (c, &xc) in x.iter().enumerate() {
        let block = &mut out[2 * n * c..2 * n * (c + 1)];
        // Double-angle recurrence: one sin_cos per coordinate. The error
        // grows about 2x per octave, far below f32 resolution for usual n.
        let (mut s, mut co) = xc.sin_cos();
        for j in 0..n {
            block[2 * j] = T::of(s);
            block[2 * j + 1] = T::of(co);
            (s, co) = (2.0 * s * co, (co - s) * (co + s));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    #[test]
    fn zero_input() {
        let f = pe_encode(&[0.0; 3], PeConfig { n_freq: 6 });
        assert_eq!(f.len(), 36);
        for pair in f.chunks(2) {
            assert_eq!(pair, [0.0, 1.0]);
        }
    }

    #[test]
    fn layout_and_periodicity() {
        let cfg = PeConfig { n_freq: 4 };
        let x = [0.3, -1.2];
        let f = pe_encode(&x, cfg);
        assert_eq!(f.len(), cfg.output_dim(2));
        assert!((f[8 + 2 * 3] - (8.0f64 * -1.2).sin()).abs() < 1e-14);
        assert!((f[8 + 2 * 3 + 1] - (8.0f64 * -1.2).cos()).abs() < 1e-14);
        let g = pe_encode(&[0.3 + TAU, -1.2], cfg);
        assert!((f[0] - g[0]).abs() < 1e-12 && (f[1] - g[1]).abs() < 1e-12);
    }

    #[test]
    fn recurrence_matches_direct_evaluation() {
        let cfg = PeConfig { n_freq: 10 };
        for x in [-1.0, -0.37, 0.0, 0.123, 0.999, 3.7] {
            let f = pe_encode(&[x], cfg);
            for j in 0..10 {
                let a = 2f64.powi(j) * x;
                assert!((f[2 * j as usize] - a.sin()).abs() < 1e-12, "{x} {j}");
                assert!((f[2 * j as usize + 1] - a.cos()).abs() < 1e-12, "{x} {j}");
            }
        }
    }
}
