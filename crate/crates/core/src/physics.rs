//! Airborne ball flight: gravity, quadratic drag and Magnus lift integrated
//! with RK4, plus closed-form exponential decay of the spin magnitude.
//!
//! Spin decays as `|w(t)| = |w(t0)| exp(-k (t - t0))` with a fixed axis. The
//! decay is evaluated in closed form at each RK4 stage so the Magnus term
//! keeps fourth-order accuracy.

use std::io::{Read, Write};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PhysicsError {
    #[error("time step must be in (0, 0.01] s, got {0}")]
    InvalidDt(f64),
    #[error("duration must be non-negative, got {0}")]
    InvalidDuration(f64),
    #[error("invalid physics parameter: {0}")]
    InvalidParams(&'static str),
    #[error("spin rate samples must be positive")]
    NonPositiveRate,
    #[error("at least 3 samples are required, got {0}")]
    TooFewSamples(usize),
    #[error("trajectory file: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallState {
    /// Seconds.
    pub t: f64,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    /// Angular velocity, rad/s.
    pub omega: Vector3<f64>,
}

impl BallState {
    pub fn new(t: f64, position: Vector3<f64>, velocity: Vector3<f64>, omega: Vector3<f64>) -> Self {
        BallState { t, position, velocity, omega }
    }

    /// Spin magnitude in revolutions per second.
    pub fn spin_rps(&self) -> f64 {
        self.omega.norm() / std::f64::consts::TAU
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite()
            && self.position.iter().all(|v| v.is_finite())
            && self.velocity.iter().all(|v| v.is_finite())
            && self.omega.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicsParams {
    /// kg
    pub mass: f64,
    /// m
    pub radius: f64,
    /// kg/m^3
    pub air_density: f64,
    pub drag_coefficient: f64,
    pub magnus_coefficient: f64,
    /// m/s^2
    pub gravity: f64,
    /// Spin damping rate `k`, 1/s.
    pub spin_damping: f64,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        PhysicsParams {
            mass: 0.0027,
            radius: 0.02,
            air_density: 1.204,
            drag_coefficient: 0.4,
            magnus_coefficient: 0.6,
            gravity: 9.81,
            spin_damping: 0.091,
        }
    }
}

impl PhysicsParams {
    /// Vacuum-like parameters: no drag, no Magnus force, no spin decay.
    pub fn ballistic() -> Self {
        PhysicsParams { drag_coefficient: 0.0, magnus_coefficient: 0.0, spin_damping: 0.0, ..Self::default() }
    }

    // Aerodynamic coefficients and damping may be zero to switch a force off.
    pub fn validate(&self) -> Result<(), PhysicsError> {
        let checks = [
            (self.mass > 0.0, "mass"),
            (self.radius > 0.0, "radius"),
            (self.air_density > 0.0, "air_density"),
            (self.gravity > 0.0, "gravity"),
            (self.drag_coefficient >= 0.0, "drag_coefficient"),
            (self.magnus_coefficient >= 0.0, "magnus_coefficient"),
            (self.spin_damping >= 0.0, "spin_damping"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, name)) => Err(PhysicsError::InvalidParams(name)),
            None => Ok(()),
        }
    }

    fn area(&self) -> f64 {
        std::f64::consts::PI * self.radius * self.radius
    }

    /// Acceleration for velocity `v` and spin `omega`.
    pub fn acceleration(&self, v: &Vector3<f64>, omega: &Vector3<f64>) -> Vector3<f64> {
        let q = 0.5 * self.air_density * self.area() / self.mass;
        let drag = -q * self.drag_coefficient * v.norm() * v;
        let magnus = q * self.magnus_coefficient * self.radius * omega.cross(v);
        Vector3::new(0.0, 0.0, -self.gravity) + drag + magnus
    }
}

pub const MAX_DT: f64 = 0.01;

/// One RK4 step of length `dt`.
pub fn step(state: &BallState, params: &PhysicsParams, dt: f64) -> Result<BallState, PhysicsError> {
    if !(dt > 0.0 && dt <= MAX_DT) {
        return Err(PhysicsError::InvalidDt(dt));
    }
    let k = params.spin_damping;
    let spin_at = |tau: f64| state.omega * (-k * tau).exp();
    let w_mid = spin_at(0.5 * dt);
    let w_end = spin_at(dt);

    let p0 = state.position;
    let v0 = state.velocity;
    let a1 = params.acceleration(&v0, &state.omega);
    let v1 = v0;
    let v2 = v0 + a1 * (0.5 * dt);
    let a2 = params.acceleration(&v2, &w_mid);
    let v3 = v0 + a2 * (0.5 * dt);
    let a3 = params.acceleration(&v3, &w_mid);
    let v4 = v0 + a3 * dt;
    let a4 = params.acceleration(&v4, &w_end);

    Ok(BallState {
        t: state.t + dt,
        position: p0 + (v1 + 2.0 * v2 + 2.0 * v3 + v4) * (dt / 6.0),
        velocity: v0 + (a1 + 2.0 * a2 + 2.0 * a3 + a4) * (dt / 6.0),
        omega: w_end,
    })
}

/// Ordered ball states with strictly increasing time.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub states: Vec<BallState>,
}

impl Trajectory {
    pub fn first(&self) -> Option<&BallState> {
        self.states.first()
    }

    pub fn last(&self) -> Option<&BallState> {
        self.states.last()
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Linearly interpolated position at time `t`, `None` outside the span.
    pub fn position_at(&self, t: f64) -> Option<Vector3<f64>> {
        let s = &self.states;
        if s.is_empty() || t < s[0].t || t > s[s.len() - 1].t {
            return None;
        }
        let i = s.partition_point(|x| x.t <= t);
        if i == 0 {
            return Some(s[0].position);
        }
        if i >= s.len() {
            return Some(s[s.len() - 1].position);
        }
        let (a, b) = (&s[i - 1], &s[i]);
        let f = (t - a.t) / (b.t - a.t);
        Some(a.position + (b.position - a.position) * f)
    }

    /// Writes CSV with header `t,px,py,pz,vx,vy,vz,wx,wy,wz`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), PhysicsError> {
        let mut wr = csv::Writer::from_writer(w);
        let io = |e: csv::Error| PhysicsError::Io(e.to_string());
        wr.write_record(["t", "px", "py", "pz", "vx", "vy", "vz", "wx", "wy", "wz"]).map_err(io)?;
        for s in &self.states {
            let row = [
                s.t, s.position.x, s.position.y, s.position.z, s.velocity.x, s.velocity.y, s.velocity.z, s.omega.x,
                s.omega.y, s.omega.z,
            ];
            wr.write_record(row.iter().map(|v| format!("{v:.12e}"))).map_err(io)?;
        }
        wr.flush().map_err(|e| PhysicsError::Io(e.to_string()))
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Trajectory, PhysicsError> {
        let mut rd = csv::Reader::from_reader(r);
        let headers = rd.headers().map_err(|e| PhysicsError::Io(e.to_string()))?.clone();
        let expected = ["t", "px", "py", "pz", "vx", "vy", "vz", "wx", "wy", "wz"];
        if headers.iter().ne(expected) {
            return Err(PhysicsError::Io(format!("unexpected header {headers:?}")));
        }
        let mut states = Vec::new();
        for rec in rd.records() {
            let rec = rec.map_err(|e| PhysicsError::Io(e.to_string()))?;
            let v: Vec<f64> = rec
                .iter()
                .map(|f| f.trim().parse::<f64>().map_err(|e| PhysicsError::Io(format!("{f:?}: {e}"))))
                .collect::<Result<_, _>>()?;
            if v.len() != 10 {
                return Err(PhysicsError::Io("expected 10 columns".into()));
            }
            states.push(BallState::new(
                v[0],
                Vector3::new(v[1], v[2], v[3]),
                Vector3::new(v[4], v[5], v[6]),
                Vector3::new(v[7], v[8], v[9]),
            ));
        }
        if states.windows(2).any(|w| w[1].t <= w[0].t) {
            return Err(PhysicsError::Io("timestamps must strictly increase".into()));
        }
        Ok(Trajectory { states })
    }
}

/// Integrates from `initial` for `duration` seconds with step `dt`. The
/// number of steps is `round(duration / dt)`, so the final time is within
/// `dt / 2` of `initial.t + duration`.
pub fn simulate(
    initial: &BallState,
    params: &PhysicsParams,
    duration: f64,
    dt: f64,
) -> Result<Trajectory, PhysicsError> {
    params.validate()?;
    if !(dt > 0.0 && dt <= MAX_DT) {
        return Err(PhysicsError::InvalidDt(dt));
    }
    if !(duration >= 0.0) {
        return Err(PhysicsError::InvalidDuration(duration));
    }
    let n = (duration / dt).round() as usize;
    let mut states = Vec::with_capacity(n + 1);
    states.push(*initial);
    let mut s = *initial;
    for i in 1..=n {
        s = step(&s, params, dt)?;
        // Avoid accumulating rounding in the clock.
        s.t = initial.t + i as f64 * dt;
        states.push(s);
    }
    Ok(Trajectory { states })
}

/// Exponential spin-decay fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinDecayFit {
    /// Damping rate, 1/s.
    pub k: f64,
    /// Spin rate at `t = 0`, rps.
    pub rate0: f64,
}

/// Least-squares fit of `ln(rate) = ln(rate0) - k t`.
pub fn fit_spin_damping(samples: &[(f64, f64)]) -> Result<SpinDecayFit, PhysicsError> {
    if samples.len() < 3 {
        return Err(PhysicsError::TooFewSamples(samples.len()));
    }
    if samples.iter().any(|&(_, r)| !(r > 0.0)) {
        return Err(PhysicsError::NonPositiveRate);
    }
    let n = samples.len() as f64;
    let mean_t = samples.iter().map(|s| s.0).sum::<f64>() / n;
    let mean_y = samples.iter().map(|s| s.1.ln()).sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for &(t, r) in samples {
        let dt = t - mean_t;
        sxy += dt * (r.ln() - mean_y);
        sxx += dt * dt;
    }
    if sxx <= 0.0 {
        return Err(PhysicsError::TooFewSamples(1));
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_t;
    Ok(SpinDecayFit { k: -slope, rate0: intercept.exp() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{PI, TAU};

    #[test]
    fn free_fall_single_step() {
        let s = BallState::new(0.0, Vector3::new(0.0, 0.0, 1.0), Vector3::zeros(), Vector3::zeros());
        let n = step(&s, &PhysicsParams::default(), 0.001).unwrap();
        assert!((n.velocity - Vector3::new(0.0, 0.0, -0.00981)).norm() < 1e-8);
        assert_eq!(n.omega.norm(), 0.0);
    }

    #[test]
    fn invalid_dt() {
        let s = BallState::new(0.0, Vector3::zeros(), Vector3::zeros(), Vector3::zeros());
        let p = PhysicsParams::default();
        assert_eq!(step(&s, &p, 0.0), Err(PhysicsError::InvalidDt(0.0)));
        assert_eq!(step(&s, &p, 0.02), Err(PhysicsError::InvalidDt(0.02)));
        assert!(step(&s, &p, -1e-3).is_err());
    }

    #[test]
    fn spin_decays_exponentially() {
        let w0 = 100.0 * TAU;
        let s = BallState::new(0.0, Vector3::zeros(), Vector3::new(3.0, 0.0, 2.0), Vector3::new(0.0, w0, 0.0));
        let traj = simulate(&s, &PhysicsParams::default(), 1.0, 0.001).unwrap();
        let last = traj.last().unwrap();
        assert!((last.t - 1.0).abs() < 1e-12);
        let expected = 100.0 * (-0.091f64).exp();
        assert!((last.spin_rps() - expected).abs() < 1e-9, "{}", last.spin_rps());
        assert!((expected - 91.30).abs() < 0.01);
    }

    #[test]
    fn magnus_pushes_along_spin_cross_velocity() {
        let p = PhysicsParams { drag_coefficient: 0.0, gravity: 1e-12, ..PhysicsParams::default() };
        let a = p.acceleration(&Vector3::new(5.0, 0.0, 0.0), &Vector3::new(0.0, 0.0, 200.0 * PI));
        assert!(a.y > 0.0);
        assert!(a.x.abs() < 1e-12);
    }

    #[test]
    fn spin_direction_preserved() {
        let axis = Vector3::new(0.3, -0.5, 0.8).normalize();
        let s = BallState::new(0.0, Vector3::zeros(), Vector3::new(4.0, 1.0, 2.0), axis * 500.0);
        let traj = simulate(&s, &PhysicsParams::default(), 0.5, 0.002).unwrap();
        for st in &traj.states {
            assert!((st.omega.normalize().dot(&axis) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_duration_is_single_state() {
        let s = BallState::new(0.2, Vector3::zeros(), Vector3::zeros(), Vector3::zeros());
        let traj = simulate(&s, &PhysicsParams::default(), 0.0, 0.001).unwrap();
        assert_eq!(traj.len(), 1);
        assert_eq!(traj.states[0], s);
        // Below half a step also rounds to zero steps.
        assert_eq!(simulate(&s, &PhysicsParams::default(), 0.0004, 0.001).unwrap().len(), 1);
    }

    #[test]
    fn ballistic_apex_matches_closed_form() {
        let p = PhysicsParams::ballistic();
        // Apex at exactly t = 0.4 s, which is a sample time for dt = 1 ms.
        let vz = p.gravity * 0.4;
        let s = BallState::new(0.0, Vector3::zeros(), Vector3::new(2.0, 0.0, vz), Vector3::new(0.0, 0.0, 300.0));
        let traj = simulate(&s, &p, 0.8, 0.001).unwrap();
        let apex = traj.states.iter().map(|b| b.position.z).fold(f64::MIN, f64::max);
        assert!((apex - vz * vz / (2.0 * p.gravity)).abs() < 1e-6);
    }

    #[test]
    fn energy_non_increasing_with_drag() {
        let p = PhysicsParams { spin_damping: 0.0, ..PhysicsParams::default() };
        let s = BallState::new(0.0, Vector3::zeros(), Vector3::new(6.0, 1.0, 3.0), Vector3::new(50.0, -20.0, 300.0));
        let traj = simulate(&s, &p, 1.0, 0.001).unwrap();
        let energy = |b: &BallState| 0.5 * b.velocity.norm_squared() + p.gravity * b.position.z;
        for w in traj.states.windows(2) {
            assert!(energy(&w[1]) <= energy(&w[0]) + 1e-12);
        }
    }

    #[test]
    fn rk4_convergence_order() {
        let p = PhysicsParams::default();
        let s = BallState::new(0.0, Vector3::zeros(), Vector3::new(8.0, -1.0, 2.5), Vector3::new(100.0, 400.0, -600.0));
        let end = |dt: f64| simulate(&s, &p, 0.5, dt).unwrap().last().copied().unwrap();
        let reference = end(0.0000625);
        let err = |dt: f64| {
            let e = end(dt);
            (e.position - reference.position).norm() + (e.velocity - reference.velocity).norm()
        };
        let (e1, e2) = (err(0.004), err(0.002));
        let slope = (e1 / e2).log2();
        assert!(slope >= 3.5, "slope {slope} ({e1} -> {e2})");
    }

    #[test]
    fn fit_recovers_exact_decay() {
        let samples: Vec<(f64, f64)> = (0..50).map(|i| {
            let t = i as f64 / 350.0;
            (t, 80.0 * (-0.091 * t).exp())
        }).collect();
        let fit = fit_spin_damping(&samples).unwrap();
        assert!((fit.k - 0.091).abs() < 1e-9);
        assert!((fit.rate0 - 80.0).abs() < 1e-9);
    }

    #[test]
    fn fit_constant_rate_has_zero_damping() {
        let samples = [(0.0, 30.0), (0.1, 30.0), (0.2, 30.0), (0.3, 30.0)];
        let fit = fit_spin_damping(&samples).unwrap();
        assert!(fit.k.abs() < 1e-12);
        assert!((fit.rate0 - 30.0).abs() < 1e-12);
    }

    #[test]
    fn fit_errors() {
        assert_eq!(fit_spin_damping(&[(0.0, 1.0), (1.0, 2.0)]), Err(PhysicsError::TooFewSamples(2)));
        assert_eq!(fit_spin_damping(&[(0.0, 1.0), (1.0, 0.0), (2.0, 1.0)]), Err(PhysicsError::NonPositiveRate));
    }

    #[test]
    fn fit_after_simulate_recovers_damping() {
        let s = BallState::new(0.0, Vector3::zeros(), Vector3::new(5.0, 0.0, 2.0), Vector3::new(0.0, 0.0, 600.0));
        let traj = simulate(&s, &PhysicsParams::default(), 1.0, 0.001).unwrap();
        let samples: Vec<_> = traj.states.iter().step_by(10).map(|b| (b.t, b.spin_rps())).collect();
        let fit = fit_spin_damping(&samples).unwrap();
        assert!((fit.k - 0.091).abs() < 1e-6);
    }

    #[test]
    fn csv_round_trip() {
        let s = BallState::new(0.0, Vector3::new(0.1, 0.2, 0.3), Vector3::new(5.0, 0.0, 2.0), Vector3::new(0.0, 0.0, 600.0));
        let traj = simulate(&s, &PhysicsParams::default(), 0.05, 0.001).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("t,px,py,pz,vx,vy,vz,wx,wy,wz\n"));
        let back = Trajectory::read_csv(&buf[..]).unwrap();
        assert_eq!(back.len(), traj.len());
        for (a, b) in back.states.iter().zip(&traj.states) {
            assert!((a.position - b.position).norm() < 1e-9);
        }
    }
}
