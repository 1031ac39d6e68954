//! First-order forward-mode dual numbers in the two variables `(r, z)`.

use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub v: f64,
    pub dr: f64,
    pub dz: f64,
}

impl Dual {
    pub const fn cst(v: f64) -> Self {
        Self { v, dr: 0.0, dz: 0.0 }
    }

    pub const fn r(v: f64) -> Self {
        Self { v, dr: 1.0, dz: 0.0 }
    }

    pub const fn z(v: f64) -> Self {
        Self { v, dr: 0.0, dz: 1.0 }
    }

    /// Chain rule with a scalar function value `f` and derivative `df`.
    pub fn chain(self, f: f64, df: f64) -> Self {
        Self {
            v: f,
            dr: df * self.dr,
            dz: df * self.dz,
        }
    }

    pub fn powf(self, k: f64) -> Self {
        let p = self.v.powf(k);
        self.chain(p, k * self.v.powf(k - 1.0))
    }

    pub fn powi(self, k: i32) -> Self {
        if k == 0 {
            return Self::cst(1.0);
        }
        self.chain(self.v.powi(k), k as f64 * self.v.powi(k - 1))
    }

    pub fn scale(self, c: f64) -> Self {
        Self {
            v: c * self.v,
            dr: c * self.dr,
            dz: c * self.dz,
        }
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual {
            v: self.v + o.v,
            dr: self.dr + o.dr,
            dz: self.dz + o.dz,
        }
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual {
            v: self.v - o.v,
            dr: self.dr - o.dr,
            dz: self.dz - o.dz,
        }
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual {
            v: self.v * o.v,
            dr: self.dr * o.v + self.v * o.dr,
            dz: self.dz * o.v + self.v * o.dz,
        }
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, o: Dual) -> Dual {
        let inv = 1.0 / o.v;
        Dual {
            v: self.v * inv,
            dr: (self.dr - self.v * inv * o.dr) * inv,
            dz: (self.dz - self.v * inv * o.dz) * inv,
        }
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        self.scale(-1.0)
    }
}
