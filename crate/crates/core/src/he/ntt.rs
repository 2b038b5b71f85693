//! Negacyclic number-theoretic transform over Z_p[X]/(X^n + 1).
//!
//! The forward transform takes coefficients in natural order to
//! evaluations in bit-reversed order; pointwise products in that domain are
//! negacyclic convolutions of the coefficient vectors.

use super::arith::{add_mod, inv_mod, pow_mod, primitive_root_of_unity, sub_mod, ShoupMul};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct NttTables {
    pub n: usize,
    pub p: u64,
    psi_rev: Vec<ShoupMul>,
    psi_inv_rev: Vec<ShoupMul>,
    n_inv: ShoupMul,
}

fn bit_reverse(x: usize, bits: u32) -> usize {
    if bits == 0 {
        0
    } else {
        x.reverse_bits() >> (usize::BITS - bits)
    }
}

impl NttTables {
    pub fn new(n: usize, p: u64) -> Result<Self> {
        if !n.is_power_of_two() || n < 2 {
            return Err(Error::Params(format!("degree {n} is not a power of two")));
        }
        if p >= 1 << 62 {
            return Err(Error::Params(format!("modulus {p} exceeds 62 bits")));
        }
        let psi = primitive_root_of_unity(p, 2 * n as u64).ok_or_else(|| {
            Error::Params(format!("{p} is not 1 mod {}: no negacyclic NTT", 2 * n))
        })?;
        let psi_inv = inv_mod(psi, p).expect("root of unity is invertible");
        let bits = n.trailing_zeros();
        let mut psi_rev = Vec::with_capacity(n);
        let mut psi_inv_rev = Vec::with_capacity(n);
        for i in 0..n {
            let e = bit_reverse(i, bits) as u64;
            psi_rev.push(ShoupMul::new(pow_mod(psi, e, p), p));
            psi_inv_rev.push(ShoupMul::new(pow_mod(psi_inv, e, p), p));
        }
        let n_inv = ShoupMul::new(inv_mod(n as u64, p).expect("n invertible"), p);
        Ok(NttTables {
            n,
            p,
            psi_rev,
            psi_inv_rev,
            n_inv,
        })
    }

    pub fn forward(&self, a: &mut [u64]) {
        debug_assert_eq!(a.len(), self.n);
        let p = self.p;
        let mut t = self.n;
        let mut m = 1;
        while m < self.n {
            t >>= 1;
            for i in 0..m {
                let s = self.psi_rev[m + i];
                let j1 = 2 * i * t;
                let (lo, hi) = a[j1..j1 + 2 * t].split_at_mut(t);
                for (x, y) in lo.iter_mut().zip(hi.iter_mut()) {
                    let u = *x;
                    let v = s.mul(*y, p);
                    *x = add_mod(u, v, p);
                    *y = sub_mod(u, v, p);
                }
            }
            m <<= 1;
        }
    }

    pub fn inverse(&self, a: &mut [u64]) {
        debug_assert_eq!(a.len(), self.n);
        let p = self.p;
        let mut t = 1;
        let mut m = self.n;
        while m > 1 {
            let h = m >> 1;
            for i in 0..h {
                let s = self.psi_inv_rev[h + i];
                let j1 = 2 * i * t;
                let (lo, hi) = a[j1..j1 + 2 * t].split_at_mut(t);
                for (x, y) in lo.iter_mut().zip(hi.iter_mut()) {
                    let u = *x;
                    let v = *y;
                    *x = add_mod(u, v, p);
                    *y = s.mul(sub_mod(u, v, p), p);
                }
            }
            t <<= 1;
            m = h;
        }
        for x in a.iter_mut() {
            *x = self.n_inv.mul(*x, p);
        }
    }
}
