//! Full-aggregation model with a nonzero backbone delay.
//!
//! The state `(m1, m2)` is observed right after an AP transmission: `m1`
//! stations just received their windows, `m2` stations hold windows that
//! arrived earlier and are waiting for the AP, the remaining
//! `m3 = K - m1 - m2` batches are in the backbone. Each step ends with the
//! next AP transmission; the expected step duration acts as the reward.

use nalgebra::{DMatrix, DVector};

use super::{ModelError, SystemParams, TimelineParams};

#[derive(Debug, Clone)]
pub struct ChainSolution {
    pub states: Vec<(u32, u32)>,
    pub pi: Vec<f64>,
    /// Mean AP transmission interval, µs.
    pub mean_cycle_us: f64,
    /// Mean stations served per AP transmission.
    pub mean_served: f64,
    pub lambda_mbps: f64,
}

fn binom(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// States `(m1, m2)` with `1 <= m1 < K` and `m2 <= K - m1`. `m1 = K` is
/// unreachable because at least one batch is always being served when the
/// others arrive. A single station has the one state `(1, 0)`.
pub(crate) fn enumerate(k: u32) -> Vec<(u32, u32)> {
    if k == 1 {
        return vec![(1, 0)];
    }
    let mut s = Vec::new();
    for m1 in 1..k {
        for m2 in 0..=(k - m1) {
            s.push((m1, m2));
        }
    }
    s
}

pub fn solve_chain(p: &SystemParams, t: &TimelineParams) -> Result<ChainSolution, ModelError> {
    if p.d_us <= 0.0 {
        return Err(ModelError::InvalidParam("chain needs a positive delay".into()));
    }
    let k = p.k;
    let fw = p.fw();
    let inv_mu = 1.0 / t.mu;
    let t_up = t.t_up(fw / p.t_f as f64);
    let lambda = 1.0 / p.d_us;
    let states = enumerate(k);
    let n = states.len();
    let idx = |m1: u32, m2: u32| states.iter().position(|&s| s == (m1, m2));

    let mut pm = DMatrix::<f64>::zeros(n, n);
    let mut reward = vec![0.0; n];
    for (i, &(m1, m2)) in states.iter().enumerate() {
        let m3 = k - m1 - m2;
        let a = t.a(m1, fw);
        let busy = m1 + m2;
        let v = a + (1..=busy).map(|j| inv_mu / j as f64 + t_up).sum::<f64>();
        let q = (-lambda * v).exp();

        let p0 = q.powi(m3 as i32);
        if p0 > 0.0 {
            let j = idx(1, 0).ok_or(ModelError::SingularChain)?;
            pm[(i, j)] += p0;
            reward[i] += p0 * (v + p.d_us / k as f64 + inv_mu);
        }
        for arr in 1..=m3 {
            let rho = binom(m3, arr) * (1.0 - q).powi(arr as i32) * q.powi((m3 - arr) as i32);
            let share = rho / (busy + 1) as f64;
            for j in 0..=busy {
                let dst = idx(arr, busy - j).ok_or(ModelError::SingularChain)?;
                let contention: f64 = (0..=j).map(|i2| inv_mu / (busy + 1 - i2) as f64).sum();
                let r = a + contention + j as f64 * t_up;
                pm[(i, dst)] += share;
                reward[i] += share * r;
            }
        }
    }

    let pi = stationary(&pm)?;
    let served: f64 = states.iter().zip(&pi).map(|(&(m1, _), p)| p * m1 as f64).sum();
    let cycle: f64 = reward.iter().zip(&pi).map(|(r, p)| r * p).sum();
    Ok(ChainSolution {
        lambda_mbps: t.to_mbps(served * fw / cycle),
        mean_cycle_us: cycle,
        mean_served: served,
        states,
        pi,
    })
}

/// Stationary distribution of a row-stochastic matrix: dense solve of
/// `π (P - I) = 0, Σπ = 1`, falling back to power iteration.
fn stationary(pm: &DMatrix<f64>) -> Result<Vec<f64>, ModelError> {
    let n = pm.nrows();
    let mut a = pm.transpose() - DMatrix::<f64>::identity(n, n);
    for c in 0..n {
        a[(n - 1, c)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(n);
    rhs[n - 1] = 1.0;
    if let Some(x) = a.lu().solve(&rhs) {
        if x.iter().all(|v| v.is_finite() && *v > -1e-12) {
            let mut v: Vec<f64> = x.iter().map(|v| v.max(0.0)).collect();
            let s: f64 = v.iter().sum();
            v.iter_mut().for_each(|x| *x /= s);
            return Ok(v);
        }
    }
    let mut v = DVector::<f64>::from_element(n, 1.0 / n as f64);
    let pt = pm.transpose();
    for _ in 0..200_000 {
        let next = &pt * &v;
        let resid = (&next - &v).amax();
        v = next;
        if resid < 1e-12 {
            return Ok(v.iter().copied().collect());
        }
    }
    Err(ModelError::SingularChain)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mumodel::UNLIMITED;

    fn params(d_ms: f64) -> SystemParams {
        SystemParams { b_ap: UNLIMITED, b_sta: UNLIMITED, d_us: d_ms * 1000.0, ..SystemParams::reference() }
    }

    #[test]
    fn state_count() {
        for k in 2..=12u32 {
            assert_eq!(enumerate(k).len() as u32, (k * k + k - 2) / 2);
        }
    }

    #[test]
    fn distribution_is_proper() {
        for d in [0.5, 5.0, 50.0, 500.0] {
            let p = params(d);
            let s = solve_chain(&p, &TimelineParams::reference(&p)).unwrap();
            assert!(s.pi.iter().all(|&x| x >= 0.0));
            assert!((s.pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn throughput_falls_with_long_delay() {
        let t = TimelineParams::reference(&params(1.0));
        let a = solve_chain(&params(1.0), &t).unwrap().lambda_mbps;
        let b = solve_chain(&params(400.0), &t).unwrap().lambda_mbps;
        assert!(b < a);
    }
}
