//! Double-double real and complex arithmetic (about 32 significant digits),
//! used where eigenvalue clusters must be resolved below the `f64` limit.

use std::ops::{Add, Div, Mul, Neg, Sub};

use num_complex::Complex64;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };

    pub fn from_f64(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        let (t, f) = two_sum(self.lo, o.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (hi, lo) = quick_two_sum(s, e + f);
        Dd { hi, lo }
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, o: Dd) -> Dd {
        self + (-o)
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, o: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, o.hi);
        let e = e + (self.hi * o.lo + self.lo * o.hi);
        let (hi, lo) = quick_two_sum(p, e);
        Dd { hi, lo }
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r = self - o * Dd::from_f64(q1);
        let q2 = r.hi / o.hi;
        let r = r - o * Dd::from_f64(q2);
        let q3 = r.hi / o.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        Dd { hi, lo } + Dd::from_f64(q3)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Cdd {
    pub re: Dd,
    pub im: Dd,
}

impl Cdd {
    pub const ZERO: Cdd = Cdd {
        re: Dd::ZERO,
        im: Dd::ZERO,
    };
    pub const ONE: Cdd = Cdd {
        re: Dd::ONE,
        im: Dd::ZERO,
    };

    pub fn from_c64(z: Complex64) -> Self {
        Cdd {
            re: Dd::from_f64(z.re),
            im: Dd::from_f64(z.im),
        }
    }

    pub fn to_c64(self) -> Complex64 {
        Complex64::new(self.re.to_f64(), self.im.to_f64())
    }

    /// Modulus rounded to `f64`.
    pub fn norm(self) -> f64 {
        self.to_c64().norm()
    }
}

impl Add for Cdd {
    type Output = Cdd;
    fn add(self, o: Cdd) -> Cdd {
        Cdd {
            re: self.re + o.re,
            im: self.im + o.im,
        }
    }
}

impl Sub for Cdd {
    type Output = Cdd;
    fn sub(self, o: Cdd) -> Cdd {
        Cdd {
            re: self.re - o.re,
            im: self.im - o.im,
        }
    }
}

impl Neg for Cdd {
    type Output = Cdd;
    fn neg(self) -> Cdd {
        Cdd {
            re: -self.re,
            im: -self.im,
        }
    }
}

impl Mul for Cdd {
    type Output = Cdd;
    fn mul(self, o: Cdd) -> Cdd {
        Cdd {
            re: self.re * o.re - self.im * o.im,
            im: self.re * o.im + self.im * o.re,
        }
    }
}

impl Div for Cdd {
    type Output = Cdd;
    fn div(self, o: Cdd) -> Cdd {
        let den = o.re * o.re + o.im * o.im;
        Cdd {
            re: (self.re * o.re + self.im * o.im) / den,
            im: (self.im * o.re - self.re * o.im) / den,
        }
    }
}

/// Coefficients of `det(lambda I - A)`, highest degree first, by the
/// division-free Samuelson-Berkowitz recursion.
pub fn char_poly(a: &[Vec<Cdd>]) -> Vec<Cdd> {
    let n = a.len();
    let mut p = vec![Cdd::ONE, -a[0][0]];
    for r in 1..n {
        // t = [1, -a_rr, -R C, -R M C, ..., -R M^{r-2} C]
        let mut t = vec![Cdd::ONE, -a[r][r]];
        let mut v: Vec<Cdd> = (0..r).map(|i| a[i][r]).collect();
        for k in 0..r {
            let rc = (0..r).fold(Cdd::ZERO, |s, j| s + a[r][j] * v[j]);
            t.push(-rc);
            if k + 1 < r {
                v = (0..r)
                    .map(|i| (0..r).fold(Cdd::ZERO, |s, j| s + a[i][j] * v[j]))
                    .collect();
            }
        }
        let mut next = vec![Cdd::ZERO; r + 2];
        for (i, slot) in next.iter_mut().enumerate() {
            for j in 0..=i.min(r) {
                if i - j < t.len() {
                    *slot = *slot + t[i - j] * p[j];
                }
            }
        }
        p = next;
    }
    p
}

/// Coefficients (highest first) of `q(t) = p(c + t)`.
pub fn taylor_shift(p: &[Cdd], c: Cdd) -> Vec<Cdd> {
    let mut q = p.to_vec();
    let n = q.len();
    for i in 0..n {
        for j in 1..n - i {
            q[j] = q[j] + c * q[j - 1];
        }
    }
    q
}

fn eval_with_derivative(p: &[Cdd], z: Cdd) -> (Cdd, Cdd) {
    let mut v = Cdd::ZERO;
    let mut d = Cdd::ZERO;
    for &c in p {
        d = d * z + v;
        v = v * z + c;
    }
    (v, d)
}

/// All roots of `p` (highest first) by Aberth iteration from `guesses`.
pub fn aberth(p: &[Cdd], guesses: &[Complex64], max_iter: usize) -> Vec<Cdd> {
    let lead = p[0];
    let monic: Vec<Cdd> = p.iter().map(|&c| c / lead).collect();
    let mut z: Vec<Cdd> = guesses.iter().map(|&g| Cdd::from_c64(g)).collect();
    // separate coincident starting points
    for i in 0..z.len() {
        for j in 0..i {
            if (z[i] - z[j]).norm() == 0.0 {
                let bump = 1e-7 * (1.0 + i as f64);
                z[i] = z[i] + Cdd::from_c64(Complex64::new(bump, bump));
            }
        }
    }
    let scale = guesses.iter().map(|g| g.norm()).fold(1.0, f64::max);
    for _ in 0..max_iter {
        let mut biggest = 0.0_f64;
        for i in 0..z.len() {
            let (v, d) = eval_with_derivative(&monic, z[i]);
            if v.norm() == 0.0 {
                continue;
            }
            let w = v / d;
            let s = (0..z.len())
                .filter(|&j| j != i)
                .fold(Cdd::ZERO, |s, j| s + Cdd::ONE / (z[i] - z[j]));
            let step = w / (Cdd::ONE - w * s);
            z[i] = z[i] - step;
            biggest = biggest.max(step.norm());
        }
        if biggest <= 1e-30 * scale {
            break;
        }
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic_carries_extra_digits() {
        let third = Dd::ONE / Dd::from_f64(3.0);
        let back = third * Dd::from_f64(3.0) - Dd::ONE;
        assert!(back.to_f64().abs() < 1e-31);
        let tiny = Dd::from_f64(1.0) + Dd::from_f64(1e-20);
        assert_eq!((tiny - Dd::ONE).to_f64(), 1e-20);
    }

    #[test]
    fn char_poly_of_small_matrix() {
        let c = |x: f64| Cdd::from_c64(Complex64::new(x, 0.0));
        // [[2, 1], [1, 3]] -> l^2 - 5 l + 5
        let p = char_poly(&[vec![c(2.0), c(1.0)], vec![c(1.0), c(3.0)]]);
        let got: Vec<f64> = p.iter().map(|x| x.re.to_f64()).collect();
        assert_eq!(got, vec![1.0, -5.0, 5.0]);
        // diag(0, 1, 2) -> l^3 - 3 l^2 + 2 l
        let d = vec![
            vec![c(0.0), c(0.0), c(0.0)],
            vec![c(0.0), c(1.0), c(0.0)],
            vec![c(0.0), c(0.0), c(2.0)],
        ];
        let got: Vec<f64> = char_poly(&d).iter().map(|x| x.re.to_f64()).collect();
        assert_eq!(got, vec![1.0, -3.0, 2.0, 0.0]);
    }

    #[test]
    fn shift_and_roots() {
        let c = |x: f64| Cdd::from_c64(Complex64::new(x, 0.0));
        // (l - 1)(l - 2)(l - 4)
        let p = vec![c(1.0), c(-7.0), c(14.0), c(-8.0)];
        let q = taylor_shift(&p, c(1.0));
        assert_eq!(q[3].re.to_f64(), 0.0);
        let guesses = [
            Complex64::new(0.9, 0.1),
            Complex64::new(2.2, 0.0),
            Complex64::new(3.5, -0.2),
        ];
        let mut roots: Vec<f64> = aberth(&p, &guesses, 100).iter().map(|z| z.re.to_f64()).collect();
        roots.sort_by(f64::total_cmp);
        for (r, e) in roots.iter().zip([1.0, 2.0, 4.0]) {
            assert!((r - e).abs() < 1e-28);
        }
    }
}
