//! Constant-velocity Kalman filter with Rauch–Tung–Striebel smoothing,
//! applied to each tract variable independently.

use crate::error::{Error, Result};
use crate::tv::{TvTrajectory, FRAME_PERIOD, N_TV};

/// Noise parameters per tract variable. `q` is the spectral density of the
/// white acceleration driving the state, `r` the measurement variance, both
/// in the trajectory's own units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanParams {
    pub q: [f64; N_TV],
    pub r: [f64; N_TV],
    pub dt: f64,
    /// Skip the backward pass and return filtered estimates.
    pub forward_only: bool,
}

pub const DEFAULT_Q: f64 = 1.0;
pub const DEFAULT_R: f64 = 0.01;

impl Default for KalmanParams {
    fn default() -> Self {
        Self::uniform(DEFAULT_Q, DEFAULT_R)
    }
}

impl KalmanParams {
    pub fn uniform(q: f64, r: f64) -> Self {
        Self {
            q: [q; N_TV],
            r: [r; N_TV],
            dt: FRAME_PERIOD,
            forward_only: false,
        }
    }

    /// `q` and `r` given for unit-variance channels, rescaled to channels
    /// with standard deviations `std`.
    pub fn normalized(q: f64, r: f64, std: &[f64; N_TV]) -> Self {
        let mut p = Self::uniform(q, r);
        for k in 0..N_TV {
            let s2 = std[k] * std[k];
            p.q[k] *= s2;
            p.r[k] *= s2;
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.dt) || !self.q.iter().chain(&self.r).all(|v| ok(*v)) {
            return Err(Error::InvalidArgument(format!(
                "Kalman parameters must be positive and finite: {self:?}"
            )));
        }
        Ok(())
    }
}

type V2 = [f64; 2];
/// Row-major 2×2.
type M2 = [f64; 4];

fn mul(a: &M2, b: &M2) -> M2 {
    [
        a[0] * b[0] + a[1] * b[2],
        a[0] * b[1] + a[1] * b[3],
        a[2] * b[0] + a[3] * b[2],
        a[2] * b[1] + a[3] * b[3],
    ]
}

fn transpose(a: &M2) -> M2 {
    [a[0], a[2], a[1], a[3]]
}

fn add(a: &M2, b: &M2) -> M2 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3]]
}

fn sub(a: &M2, b: &M2) -> M2 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2], a[3] - b[3]]
}

fn inverse(a: &M2) -> M2 {
    let det = a[0] * a[3] - a[1] * a[2];
    [a[3] / det, -a[1] / det, -a[2] / det, a[0] / det]
}

fn symmetrize(a: M2) -> M2 {
    let off = 0.5 * (a[1] + a[2]);
    [a[0], off, off, a[3]]
}

/// Smooths one scalar channel.
pub fn smooth_channel(y: &[f64], q: f64, r: f64, dt: f64, forward_only: bool) -> Vec<f64> {
    let n = y.len();
    if n == 0 {
        return Vec::new();
    }
    let f: M2 = [1.0, dt, 0.0, 1.0];
    let ft = transpose(&f);
    let qm: M2 = [q * dt.powi(3) / 3.0, q * dt * dt / 2.0, q * dt * dt / 2.0, q * dt];
    let big = 1e6 * (r + q).max(1.0);

    let mut xf: Vec<V2> = Vec::with_capacity(n);
    let mut pf: Vec<M2> = Vec::with_capacity(n);
    let mut xp: Vec<V2> = Vec::with_capacity(n);
    let mut pp: Vec<M2> = Vec::with_capacity(n);

    let mut x: V2 = [y[0], 0.0];
    let mut p: M2 = [big, 0.0, 0.0, big];
    for (k, &obs) in y.iter().enumerate() {
        if k > 0 {
            x = [x[0] + dt * x[1], x[1]];
            p = symmetrize(add(&mul(&mul(&f, &p), &ft), &qm));
        }
        xp.push(x);
        pp.push(p);
        let s = p[0] + r;
        let gain = [p[0] / s, p[2] / s];
        let innov = obs - x[0];
        x = [x[0] + gain[0] * innov, x[1] + gain[1] * innov];
        // Joseph form keeps P symmetric positive definite
        let ikh: M2 = [1.0 - gain[0], 0.0, -gain[1], 1.0];
        let kkt: M2 = [
            gain[0] * gain[0] * r,
            gain[0] * gain[1] * r,
            gain[1] * gain[0] * r,
            gain[1] * gain[1] * r,
        ];
        p = symmetrize(add(&mul(&mul(&ikh, &p), &transpose(&ikh)), &kkt));
        xf.push(x);
        pf.push(p);
    }
    if forward_only {
        return xf.iter().map(|s| s[0]).collect();
    }

    let mut xs = xf[n - 1];
    let mut ps = pf[n - 1];
    let mut out = vec![0.0; n];
    out[n - 1] = xs[0];
    for k in (0..n - 1).rev() {
        let c = mul(&mul(&pf[k], &ft), &inverse(&pp[k + 1]));
        let dx = [xs[0] - xp[k + 1][0], xs[1] - xp[k + 1][1]];
        xs = [
            xf[k][0] + c[0] * dx[0] + c[1] * dx[1],
            xf[k][1] + c[2] * dx[0] + c[3] * dx[1],
        ];
        ps = symmetrize(add(&pf[k], &mul(&mul(&c, &sub(&ps, &pp[k + 1])), &transpose(&c))));
        out[k] = xs[0];
    }
    debug_assert!(ps[0] >= 0.0);
    out
}

pub fn kalman_smooth(traj: &TvTrajectory, params: &KalmanParams) -> Result<TvTrajectory> {
    params.validate()?;
    if traj.is_empty() {
        return Err(Error::InvalidArgument("cannot smooth an empty trajectory".into()));
    }
    if traj.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidValue("trajectory holds non-finite values".into()));
    }
    let mut out = traj.clone();
    for k in 0..N_TV {
        let y = traj.channel(k);
        let s = smooth_channel(&y, params.q[k], params.r[k], params.dt, params.forward_only);
        out.set_channel(k, &s);
    }
    Ok(out)
}
