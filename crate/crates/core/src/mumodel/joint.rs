//! Joint distribution of user diversity `h` (stations with a non-empty ACK
//! queue) and maximum backlog `b` at the instant the AP wins the channel,
//! in the uplink-bottleneck regime.
//!
//! With the AP backoff clock `y` normalised to rate one, every station
//! collects a Poisson(y) number of transmissions before the AP fires. The
//! probability of `h1` stations at the maximum `b` and `h2` stations below
//! it is
//!
//! ```text
//! C(K,h1) C(K-h1,h2) / (b!)^h1 * ∫ y^(b h1) (Σ_{j=1}^{b-1} y^j/j!)^h2 e^{-(K+1)y} dy
//! ```
//!
//! Expanding the polynomial and using `∫ y^n e^{-(K+1)y} dy = n!/(K+1)^{n+1}`
//! gives an exact rational for small `K`. The first ACK after an AP
//! transmission is deterministic and lands on a uniformly chosen station,
//! which shifts the distribution by one step.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

/// Largest K evaluated in exact arithmetic.
pub const EXACT_MAX_K: u32 = 8;
const TAIL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct JointTable {
    pub k: u32,
    pub b_max: u32,
    /// Row-major `(h-1) * b_max + (b-1)`.
    p: Vec<f64>,
    pub exact: bool,
    /// Probability mass beyond `b_max` plus float rounding allowance.
    pub error_bound: f64,
}

impl JointTable {
    pub fn p(&self, h: u32, b: u32) -> f64 {
        if h == 0 || b == 0 || h > self.k || b > self.b_max {
            return 0.0;
        }
        self.p[((h - 1) * self.b_max + (b - 1)) as usize]
    }

    pub fn marginal_h(&self) -> Vec<f64> {
        (1..=self.k).map(|h| (1..=self.b_max).map(|b| self.p(h, b)).sum()).collect()
    }

    pub fn total(&self) -> f64 {
        self.p.iter().sum()
    }

    /// Iterate over `(h, b, P(h,b))` with non-zero mass.
    pub fn iter(&self) -> impl Iterator<Item = (u32, u32, f64)> + '_ {
        (1..=self.k).flat_map(move |h| (1..=self.b_max).map(move |b| (h, b, self.p(h, b))))
    }
}

fn factorials(n: usize) -> Vec<BigInt> {
    let mut f = vec![BigInt::one(); n + 1];
    for i in 1..=n {
        f[i] = &f[i - 1] * BigInt::from(i);
    }
    f
}

fn binom(n: u32, k: u32) -> BigInt {
    if k > n {
        return BigInt::zero();
    }
    let mut r = BigInt::one();
    for i in 0..k {
        r = r * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    r
}

fn poly_mul(a: &[BigInt], b: &[BigInt]) -> Vec<BigInt> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![BigInt::zero(); a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        if x.is_zero() {
            continue;
        }
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Exact engine with a shared factorial table and polynomial-power cache.
struct Exact {
    k: u32,
    fact: Vec<BigInt>,
    /// powers[b][h2] = ((b-1)! * Σ_{j=1}^{b-1} y^j/j!)^h2 with integer coefficients
    powers: Vec<Vec<Vec<BigInt>>>,
}

impl Exact {
    fn new(k: u32) -> Self {
        Self { k, fact: factorials(8), powers: Vec::new() }
    }

    fn ensure_fact(&mut self, n: usize) {
        if self.fact.len() <= n {
            self.fact = factorials(n.max(2 * self.fact.len()));
        }
    }

    fn ensure_powers(&mut self, b: u32) {
        while self.powers.len() <= b as usize {
            let bb = self.powers.len() as u32;
            let k = self.k as usize;
            if bb == 0 {
                self.powers.push(vec![vec![BigInt::one()]; k + 1]);
                continue;
            }
            self.ensure_fact(bb as usize);
            // Q_b(y) = Σ_{j=1}^{b-1} ((b-1)!/j!) y^j
            let mut q = vec![BigInt::zero(); bb as usize];
            for j in 1..bb as usize {
                q[j] = &self.fact[bb as usize - 1] / &self.fact[j];
            }
            let mut pw = Vec::with_capacity(k + 1);
            pw.push(vec![BigInt::one()]);
            for h2 in 1..=k {
                let next = poly_mul(&pw[h2 - 1], &q);
                pw.push(next);
            }
            self.powers.push(pw);
        }
    }

    fn p_hat(&mut self, h1: u32, h2: u32, b: u32) -> BigRational {
        let k = self.k;
        if h1 == 0 {
            return if h2 == 0 {
                BigRational::new(BigInt::one(), BigInt::from(k + 1))
            } else {
                BigRational::zero()
            };
        }
        if h1 + h2 > k || b == 0 {
            return BigRational::zero();
        }
        self.ensure_powers(b);
        let poly = self.powers[b as usize][h2 as usize].clone();
        if poly.iter().all(Zero::is_zero) {
            return BigRational::zero();
        }
        let shift = (b * h1) as usize;
        let top = poly.len() - 1 + shift;
        self.ensure_fact(top.max(b as usize));
        let kp1 = BigInt::from(k + 1);
        // Σ_n c_n (n+shift)! / (K+1)^{n+shift+1}, over the common denominator (K+1)^{top+1}
        let mut num = BigInt::zero();
        let mut pow = BigInt::one();
        for n in (0..poly.len()).rev() {
            // pow = (K+1)^{top - (n + shift)}
            if !poly[n].is_zero() {
                num += &poly[n] * &self.fact[n + shift] * &pow;
            }
            pow *= &kp1;
        }
        let den_pow = num_traits::pow(kp1, top + 1);
        let coef = binom(k, h1) * binom(k - h1, h2);
        let den = den_pow
            * num_traits::pow(self.fact[b as usize].clone(), h1 as usize)
            * num_traits::pow(self.fact[b as usize - 1].clone(), h2 as usize);
        BigRational::new(coef * num, den)
    }
}

/// P̂(h1, h2, b) exactly: `h1` stations at the maximum backlog `b`, `h2`
/// stations with a smaller non-zero backlog, before the first ACK.
pub fn p_hat_exact(k: u32, h1: u32, h2: u32, b: u32) -> BigRational {
    Exact::new(k).p_hat(h1, h2, b)
}

fn ln_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        hi
    } else {
        hi + (lo - hi).exp().ln_1p()
    }
}

/// Float evaluation of the same expansion. All terms are positive, so the
/// relative error stays near machine precision.
struct Float {
    k: u32,
    ln_fact: Vec<f64>,
}

impl Float {
    fn new(k: u32) -> Self {
        Self { k, ln_fact: vec![0.0] }
    }

    fn ln_fact(&mut self, n: usize) -> f64 {
        while self.ln_fact.len() <= n {
            let i = self.ln_fact.len();
            let prev = self.ln_fact[i - 1];
            self.ln_fact.push(prev + (i as f64).ln());
        }
        self.ln_fact[n]
    }

    fn ln_binom(&mut self, n: u32, k: u32) -> f64 {
        self.ln_fact(n as usize) - self.ln_fact(k as usize) - self.ln_fact((n - k) as usize)
    }

    fn p_hat(&mut self, h1: u32, h2: u32, b: u32) -> f64 {
        let k = self.k;
        if h1 == 0 {
            return if h2 == 0 { 1.0 / (k + 1) as f64 } else { 0.0 };
        }
        if h1 + h2 > k || b == 0 || (b == 1 && h2 > 0) {
            return 0.0;
        }
        // q(y) = Σ_{j=1}^{b-1} y^j / j!, raised to h2; coefficients kept as logs
        let mut lq = vec![f64::NEG_INFINITY; b as usize];
        for (j, v) in lq.iter_mut().enumerate().skip(1) {
            *v = -self.ln_fact(j);
        }
        let mut poly = vec![0.0];
        for _ in 0..h2 {
            let mut next = vec![f64::NEG_INFINITY; poly.len() + lq.len() - 1];
            for (i, x) in poly.iter().enumerate() {
                for (j, y) in lq.iter().enumerate() {
                    next[i + j] = ln_add(next[i + j], x + y);
                }
            }
            poly = next;
        }
        let shift = (b * h1) as usize;
        let ln_kp1 = ((k + 1) as f64).ln();
        let ln_coef = self.ln_binom(k, h1) + self.ln_binom(k - h1, h2)
            - h1 as f64 * self.ln_fact(b as usize);
        let mut s = 0.0;
        for (n, c) in poly.iter().enumerate() {
            if c.is_finite() {
                let m = n + shift;
                s += (ln_coef + c + self.ln_fact(m) - (m as f64 + 1.0) * ln_kp1).exp();
            }
        }
        s
    }
}

/// Probability that a station transmits `m` times while the AP counts
/// down once.
pub fn transmissions_pmf(m: u32) -> f64 {
    0.5f64.powi(m as i32 + 1)
}

fn first_ack_correction(k: u32, b_max: u32, hat: &dyn Fn(u32, u32, u32) -> f64) -> Vec<f64> {
    let kf = k as f64;
    let mut p = vec![0.0; (k * b_max) as usize];
    for h in 1..=k {
        for b in 1..=b_max {
            let mut acc = 0.0;
            // first ACK lands on an empty queue
            for h1 in 0..h {
                let h2 = h - 1 - h1;
                if h1 == 0 && (h2 > 0 || b != 1) {
                    continue;
                }
                acc += hat(h1, h2, b) * (kf - h as f64 + 1.0) / kf;
            }
            for h1 in 1..=h {
                let h2 = h - h1;
                // on one of the longest queues
                if b > 1 {
                    acc += hat(h1, h2, b - 1) * h1 as f64 / kf;
                }
                // on a shorter non-empty queue
                acc += hat(h1, h2, b) * h2 as f64 / kf;
            }
            p[((h - 1) * b_max + (b - 1)) as usize] = acc;
        }
    }
    p
}

/// P(h, b) with the first-ACK correction, truncated where the remaining
/// mass drops below 1e-10.
pub fn joint_distribution_phb(k: u32) -> JointTable {
    assert!(k >= 1, "k must be positive");
    if k <= EXACT_MAX_K {
        let mut ex = Exact::new(k);
        let nonempty = BigRational::new(BigInt::from(k), BigInt::from(k + 1));
        let mut cum = BigRational::zero();
        let mut table: Vec<Vec<Vec<f64>>> = vec![Vec::new()]; // [b][h1][h2]
        let mut b = 0;
        loop {
            b += 1;
            let mut layer = vec![vec![0.0; k as usize + 1]; k as usize + 1];
            for h1 in 1..=k {
                for h2 in 0..=(k - h1) {
                    let v = ex.p_hat(h1, h2, b);
                    layer[h1 as usize][h2 as usize] = v.to_f64().unwrap_or(0.0);
                    cum += v;
                }
            }
            table.push(layer);
            let rest = (&nonempty - &cum).to_f64().unwrap_or(0.0);
            if rest < TAIL {
                break;
            }
        }
        let b_max = b + 1;
        let inv = 1.0 / (k + 1) as f64;
        let hat = |h1: u32, h2: u32, bb: u32| -> f64 {
            if h1 == 0 {
                return if h2 == 0 { inv } else { 0.0 };
            }
            table.get(bb as usize).map_or(0.0, |l| l[h1 as usize][h2 as usize])
        };
        let p = first_ack_correction(k, b_max, &hat);
        let rest = (&nonempty - &cum).to_f64().unwrap_or(0.0);
        JointTable { k, b_max, p, exact: true, error_bound: rest + 1e-15 * (k * b_max) as f64 }
    } else {
        let mut fl = Float::new(k);
        let nonempty = k as f64 / (k + 1) as f64;
        let mut cum = 0.0;
        let mut table: Vec<Vec<Vec<f64>>> = vec![Vec::new()];
        let mut b = 0;
        loop {
            b += 1;
            let mut layer = vec![vec![0.0; k as usize + 1]; k as usize + 1];
            for h1 in 1..=k {
                for h2 in 0..=(k - h1) {
                    let v = fl.p_hat(h1, h2, b);
                    layer[h1 as usize][h2 as usize] = v;
                    cum += v;
                }
            }
            table.push(layer);
            if nonempty - cum < TAIL || b > 400 {
                break;
            }
        }
        let b_max = b + 1;
        let inv = 1.0 / (k + 1) as f64;
        let hat = |h1: u32, h2: u32, bb: u32| -> f64 {
            if h1 == 0 {
                return if h2 == 0 { inv } else { 0.0 };
            }
            table.get(bb as usize).map_or(0.0, |l| l[h1 as usize][h2 as usize])
        };
        let p = first_ack_correction(k, b_max, &hat);
        let terms = (k * k * b_max) as f64;
        JointTable {
            k,
            b_max,
            p,
            exact: false,
            error_bound: (nonempty - cum).abs() + terms * f64::EPSILON * 4.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_checked_value() {
        let v = p_hat_exact(4, 2, 1, 3);
        assert_eq!(v, BigRational::new(BigInt::from(3024), BigInt::from(390625)));
    }

    #[test]
    fn float_engine_matches_exact() {
        for k in 1..=6 {
            let mut ex = Exact::new(k);
            let mut fl = Float::new(k);
            for b in 1..6 {
                for h1 in 0..=k {
                    for h2 in 0..=(k - h1) {
                        let e = ex.p_hat(h1, h2, b).to_f64().unwrap();
                        let f = fl.p_hat(h1, h2, b);
                        assert!((e - f).abs() <= 1e-13 * e.max(1e-300), "k={k} {h1} {h2} {b}: {e} vs {f}");
                    }
                }
            }
        }
    }

    #[test]
    fn normalised() {
        for k in 1..=10 {
            let t = joint_distribution_phb(k);
            assert!((t.total() - 1.0).abs() < 1e-9, "k={k} total={}", t.total());
        }
    }

    #[test]
    fn marginal_is_uniform() {
        for k in 1..=10 {
            let t = joint_distribution_phb(k);
            for p in t.marginal_h() {
                assert!((p - 1.0 / k as f64).abs() < 1e-9, "k={k}: {p}");
            }
        }
    }

    #[test]
    fn transmissions_pmf_sums_to_one() {
        let s: f64 = (0..60).map(transmissions_pmf).sum();
        assert!((s - 1.0).abs() < 1e-15);
    }
}
