//! Reference generation over a closed waypoint circuit and body-frame tracking errors.
//!
//! The path is described by its curvature along arc length: every waypoint becomes a
//! circular fillet, the curvature profile is smoothed with a Hann window so `omega_d`
//! has no jumps, and the pose is integrated from it. Speed follows a cap, a lateral
//! acceleration limit and the scheduling bound on `omega`, then forward/backward
//! acceleration passes and a final smoothing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{wrap_angle, KinematicErrorState, Pose};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Circuit {
    /// Corner points `[X, Y]` in metres, visited in order.
    pub waypoints: Vec<[f64; 2]>,
    pub closed: bool,
    /// Fillet radius at each waypoint, reduced where the adjacent segments are too short.
    pub corner_radius: f64,
    /// Speed cap per segment (segment `i` runs from waypoint `i` to `i + 1`); a single
    /// entry applies to every segment.
    pub speed_caps: Vec<f64>,
}

impl Default for Circuit {
    fn default() -> Self {
        Self::rounded_rectangle(120.0, 60.0, 15.0, 15.0)
    }
}

impl Circuit {
    /// Counter-clockwise rectangle starting in the middle of the bottom straight.
    pub fn rounded_rectangle(length: f64, width: f64, corner_radius: f64, speed_cap: f64) -> Self {
        Self {
            waypoints: vec![[length / 2.0, 0.0], [length, 0.0], [length, width], [0.0, width], [0.0, 0.0]],
            closed: true,
            corner_radius,
            speed_caps: vec![speed_cap],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let min = if self.closed { 3 } else { 2 };
        if self.waypoints.len() < min {
            return Err(Error::Config(format!("circuit needs at least {min} waypoints")));
        }
        if self.waypoints.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Config("circuit waypoints must be finite".into()));
        }
        let n = self.segment_count();
        for i in 0..n {
            let (p, q) = (self.waypoints[i], self.waypoints[(i + 1) % self.waypoints.len()]);
            if (q[0] - p[0]).hypot(q[1] - p[1]) < 1e-6 {
                return Err(Error::Config(format!("circuit segment {i} is degenerate")));
            }
        }
        if !(self.corner_radius >= 0.0 && self.corner_radius.is_finite()) {
            return Err(Error::Config("corner radius must be finite and >= 0".into()));
        }
        if self.speed_caps.is_empty() || (self.speed_caps.len() != 1 && self.speed_caps.len() != n) {
            return Err(Error::Config(format!("speed_caps needs 1 or {n} entries")));
        }
        if self.speed_caps.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config("speed caps must be positive".into()));
        }
        Ok(())
    }

    fn segment_count(&self) -> usize {
        if self.closed {
            self.waypoints.len()
        } else {
            self.waypoints.len() - 1
        }
    }

    fn cap(&self, segment: usize) -> f64 {
        if self.speed_caps.len() == 1 {
            self.speed_caps[0]
        } else {
            self.speed_caps[segment]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    pub circuit: Circuit,
    /// Longitudinal acceleration limit (m/s^2).
    pub a_max: f64,
    /// Lateral acceleration limit used to slow down in corners (m/s^2).
    pub a_lat_max: f64,
    /// Speed at `t = 0`; the vehicle starts on the reference at this speed.
    pub v_start: f64,
    pub v_min: f64,
    /// Largest `|omega_d|` the planner may emit.
    pub omega_max: f64,
    /// Hann window length applied to the curvature profile (m).
    pub curvature_smoothing: f64,
    /// Hann window length applied to the speed profile (m).
    pub speed_smoothing: f64,
    /// Arc-length integration step (m).
    pub ds: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            circuit: Circuit::default(),
            a_max: 2.0,
            a_lat_max: 4.0,
            v_start: 5.0,
            v_min: 0.1,
            omega_max: 1.4,
            curvature_smoothing: 8.0,
            speed_smoothing: 6.0,
            ds: 0.05,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        self.circuit.validate()?;
        let positive = [
            ("a_max", self.a_max),
            ("a_lat_max", self.a_lat_max),
            ("v_start", self.v_start),
            ("v_min", self.v_min),
            ("omega_max", self.omega_max),
            ("ds", self.ds),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("planner.{name} must be positive")));
            }
        }
        if !(self.curvature_smoothing >= 0.0 && self.speed_smoothing >= 0.0) {
            return Err(Error::Config("planner smoothing lengths must be >= 0".into()));
        }
        Ok(())
    }
}

/// One planner sample at `t`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ReferenceSample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
    pub omega: f64,
}

impl ReferenceSample {
    pub fn pose(&self) -> Pose {
        Pose::new(self.x, self.y, self.theta)
    }
}

/// Reference sampled every `dt`, extended with the last sample beyond its end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub dt: f64,
    pub samples: Vec<ReferenceSample>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn at(&self, k: usize) -> ReferenceSample {
        self.samples[k.min(self.samples.len() - 1)]
    }

    /// Samples `k..=k + n`.
    pub fn window(&self, k: usize, n: usize) -> Vec<ReferenceSample> {
        (k..=k + n).map(|i| self.at(i)).collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for s in &self.samples {
            out.serialize(s)?;
        }
        out.flush()?;
        Ok(())
    }
}

struct Segment {
    length: f64,
    curvature: f64,
    cap: f64,
}

/// Lines and fillet arcs of one lap, starting where the path leaves waypoint 0,
/// plus that start point and heading.
fn lap_segments(c: &Circuit) -> Result<(Vec<Segment>, [f64; 2], f64)> {
    let w = &c.waypoints;
    let n = w.len();
    let nseg = c.segment_count();
    let dir = |i: usize| {
        let (p, q) = (w[i % n], w[(i + 1) % n]);
        let (dx, dy) = (q[0] - p[0], q[1] - p[1]);
        let l = dx.hypot(dy);
        (dx / l, dy / l, l)
    };
    // fillet (tangent length, arc length, signed curvature) at every interior corner
    let mut fillets = vec![(0.0, 0.0, 0.0); n];
    for (i, fillet) in fillets.iter_mut().enumerate() {
        if !c.closed && (i == 0 || i == n - 1) {
            continue;
        }
        let (ax, ay, la) = dir((i + n - 1) % n);
        let (bx, by, lb) = dir(i);
        let turn = (ax * by - ay * bx).atan2(ax * bx + ay * by);
        if turn.abs() < 1e-9 {
            continue;
        }
        let half = (turn.abs() / 2.0).tan();
        let r = c.corner_radius.min(0.5 * la.min(lb) / half);
        if r <= 1e-9 {
            return Err(Error::Config(format!("corner {i} needs a positive fillet radius")));
        }
        *fillet = (r * half, r * turn.abs(), turn.signum() / r);
    }
    let (ux, uy, _) = dir(0);
    let start = [w[0][0] + fillets[0].0 * ux, w[0][1] + fillets[0].0 * uy];
    let heading0 = uy.atan2(ux);
    let mut segs = Vec::new();
    for i in 0..nseg {
        let (_, _, l) = dir(i);
        let j = (i + 1) % n;
        let lead = if c.closed || i > 0 { fillets[i].0 } else { 0.0 };
        let straight = l - lead - fillets[j].0;
        if straight < -1e-9 {
            return Err(Error::Config(format!("segment {i} is shorter than its fillets")));
        }
        segs.push(Segment { length: straight.max(0.0), curvature: 0.0, cap: c.cap(i) });
        if fillets[j].1 > 0.0 && (c.closed || j != 0) {
            segs.push(Segment { length: fillets[j].1, curvature: fillets[j].2, cap: c.cap(i) });
        }
    }
    Ok((segs, start, heading0))
}

/// Symmetric Hann-weighted moving average with a window of `len` samples, clamped at the ends.
fn hann_smooth(v: &[f64], len: usize) -> Vec<f64> {
    if len < 3 {
        return v.to_vec();
    }
    let half = len / 2;
    let w: Vec<f64> = (0..=2 * half)
        .map(|i| {
            let x = std::f64::consts::PI * (i as f64 + 1.0) / (2 * half + 2) as f64;
            x.sin().powi(2)
        })
        .collect();
    let total: f64 = w.iter().sum();
    let n = v.len() as isize;
    (0..n)
        .map(|i| {
            w.iter()
                .enumerate()
                .map(|(k, wk)| wk * v[(i + k as isize - half as isize).clamp(0, n - 1) as usize])
                .sum::<f64>()
                / total
        })
        .collect()
}

fn acceleration_passes(v: &mut [f64], ds: f64, a: f64) {
    for i in 1..v.len() {
        v[i] = v[i].min((v[i - 1] * v[i - 1] + 2.0 * a * ds).sqrt());
    }
    for i in (0..v.len().saturating_sub(1)).rev() {
        v[i] = v[i].min((v[i + 1] * v[i + 1] + 2.0 * a * ds).sqrt());
    }
}

/// Plans `duration` seconds of reference at sample time `dt`, lapping the circuit as needed.
pub fn plan(cfg: &PlannerConfig, dt: f64, duration: f64) -> Result<Trajectory> {
    cfg.validate()?;
    if !(dt > 0.0 && duration >= 0.0) {
        return Err(Error::Config("planner needs dt > 0 and duration >= 0".into()));
    }
    let (segs, start, heading0) = lap_segments(&cfg.circuit)?;
    let lap: f64 = segs.iter().map(|s| s.length).sum();
    let cap_max = segs.iter().map(|s| s.cap).fold(0.0, f64::max);
    let needed = cap_max.max(cfg.v_start) * (duration + 2.0 * dt) + 50.0;
    let laps = if cfg.circuit.closed { (needed / lap).ceil() as usize + 1 } else { 1 };

    let ds = cfg.ds;
    let mut kappa = Vec::new();
    let mut cap = Vec::new();
    for _ in 0..laps {
        for s in &segs {
            let steps = (s.length / ds).round() as usize;
            kappa.extend(std::iter::repeat_n(s.curvature, steps));
            cap.extend(std::iter::repeat_n(s.cap, steps));
        }
    }
    if kappa.is_empty() {
        return Err(Error::Config("circuit has zero length".into()));
    }
    let kappa = hann_smooth(&kappa, (cfg.curvature_smoothing / ds) as usize);

    // a_plan leaves room for the smoothing and the time resampling
    let a_plan = 0.9 * cfg.a_max;
    let mut v: Vec<f64> = kappa
        .iter()
        .zip(&cap)
        .map(|(k, c)| {
            let k = k.abs().max(1e-9);
            c.min((cfg.a_lat_max / k).sqrt()).min(0.98 * cfg.omega_max / k).max(cfg.v_min)
        })
        .collect();
    v.push(*v.last().unwrap());
    v[0] = v[0].min(cfg.v_start);
    if !cfg.circuit.closed {
        *v.last_mut().unwrap() = cfg.v_min;
    }
    acceleration_passes(&mut v, ds, a_plan);
    let mut v = hann_smooth(&v, (cfg.speed_smoothing / ds) as usize);
    v[0] = cfg.v_start.min(v[0]);
    acceleration_passes(&mut v, ds, a_plan);

    // pose and time along the fine grid
    let n = kappa.len();
    let (mut x, mut y, mut th) = (start[0], start[1], heading0);
    let mut t = 0.0;
    let mut fine = Vec::with_capacity(n + 1);
    fine.push(ReferenceSample { t, x, y, theta: th, v: v[0], omega: v[0] * kappa[0] });
    for i in 0..n {
        let mid = th + 0.5 * kappa[i] * ds;
        x += ds * mid.cos();
        y += ds * mid.sin();
        th += kappa[i] * ds;
        t += 2.0 * ds / (v[i] + v[i + 1]);
        let k_next = kappa[(i + 1).min(n - 1)];
        fine.push(ReferenceSample { t, x, y, theta: th, v: v[i + 1], omega: v[i + 1] * k_next });
    }

    let count = (duration / dt).round() as usize + 1;
    let mut samples = Vec::with_capacity(count);
    let mut j = 0;
    for k in 0..count {
        let tk = k as f64 * dt;
        while j + 2 < fine.len() && fine[j + 1].t <= tk {
            j += 1;
        }
        let (a, b) = (&fine[j], &fine[j + 1]);
        let f = ((tk - a.t) / (b.t - a.t)).clamp(0.0, 1.0);
        let lerp = |p: f64, q: f64| p + f * (q - p);
        samples.push(ReferenceSample {
            t: tk,
            x: lerp(a.x, b.x),
            y: lerp(a.y, b.y),
            theta: wrap_angle(lerp(a.theta, b.theta)),
            v: lerp(a.v, b.v),
            omega: lerp(a.omega, b.omega),
        });
    }
    Ok(Trajectory { dt, samples })
}

/// Position error rotated into the vehicle frame, heading error wrapped.
pub fn tracking_error(pose: &Pose, r: &ReferenceSample) -> KinematicErrorState {
    let (s, c) = pose.theta.sin_cos();
    let (dx, dy) = (r.x - pose.x, r.y - pose.y);
    KinematicErrorState::new(c * dx + s * dy, -s * dx + c * dy, wrap_angle(r.theta - pose.theta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn default_plan() -> Trajectory {
        plan(&PlannerConfig::default(), 0.1, 60.0).unwrap()
    }

    #[test]
    fn default_plan_respects_bounds_and_rates() {
        let cfg = PlannerConfig::default();
        let tr = default_plan();
        assert_eq!(tr.len(), 601);
        for w in tr.samples.windows(2) {
            assert!((w[1].v - w[0].v).abs() <= cfg.a_max * 0.1 + 1e-9, "dv {}", w[1].v - w[0].v);
        }
        for s in &tr.samples {
            assert!(s.v >= 0.1 && s.v <= 20.0);
            assert!(s.omega.abs() <= 1.42);
        }
        let vmax = tr.samples.iter().map(|s| s.v).fold(0.0, f64::max);
        assert!(vmax > 12.0, "straights should reach near the cap, got {vmax}");
    }

    #[test]
    fn straights_have_zero_yaw_rate() {
        let c = Circuit { waypoints: vec![[0.0, 0.0], [500.0, 0.0]], closed: false, ..Circuit::default() };
        let tr = plan(&PlannerConfig { circuit: c, ..Default::default() }, 0.1, 20.0).unwrap();
        assert!(tr.samples.iter().all(|s| s.omega == 0.0 && s.y == 0.0));
    }

    #[test]
    fn circle_yaw_rate_is_speed_over_radius() {
        // a square with maximal fillets is a circle of radius 20
        let r = 20.0;
        let c = Circuit {
            waypoints: vec![[r, -r], [r, r], [-r, r], [-r, -r]],
            closed: true,
            corner_radius: r,
            speed_caps: vec![5.0],
        };
        let cfg = PlannerConfig { circuit: c, v_start: 5.0, ..Default::default() };
        let tr = plan(&cfg, 0.1, 30.0).unwrap();
        for s in &tr.samples[50..] {
            assert!((s.omega - s.v / r).abs() < 1e-6, "{s:?}");
            assert!((s.x.hypot(s.y) - r).abs() < 0.05);
        }
    }

    #[test]
    fn reference_pose_is_consistent_with_speeds() {
        let tr = default_plan();
        for w in tr.samples.windows(2) {
            let dt = w[1].t - w[0].t;
            let dist = (w[1].x - w[0].x).hypot(w[1].y - w[0].y);
            assert!((dist - 0.5 * (w[0].v + w[1].v) * dt).abs() < 0.02 * dist.max(0.1));
            let dth = wrap_angle(w[1].theta - w[0].theta);
            assert!((dth - 0.5 * (w[0].omega + w[1].omega) * dt).abs() < 5e-3);
        }
    }

    #[test]
    fn bad_circuits_rejected() {
        let mut c = Circuit::default();
        c.waypoints.truncate(2);
        assert!(c.validate().is_err());
        let c = Circuit { speed_caps: vec![1.0, 2.0], ..Circuit::default() };
        assert!(c.validate().is_err());
        let c = Circuit { waypoints: vec![[0.0, 0.0], [0.0, 0.0], [1.0, 1.0]], ..Circuit::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn tracking_error_frames() {
        let r = ReferenceSample { x: 1.0, ..Default::default() };
        assert_eq!(tracking_error(&Pose::default(), &r), KinematicErrorState::new(1.0, 0.0, 0.0));
        let r = ReferenceSample { x: 3.0, y: 4.0, theta: 0.3, ..Default::default() };
        let e = tracking_error(&Pose::new(3.0, 4.0, 0.3), &r);
        assert!(e.x_e.abs() < 1e-15 && e.y_e.abs() < 1e-15 && e.theta_e == 0.0);
        // reference one metre ahead along a 90 degree heading
        let r = ReferenceSample { x: 0.0, y: 1.0, theta: std::f64::consts::FRAC_PI_2, ..Default::default() };
        let e = tracking_error(&Pose::new(0.0, 0.0, std::f64::consts::FRAC_PI_2), &r);
        assert!((e.x_e - 1.0).abs() < 1e-12 && e.y_e.abs() < 1e-12);
    }

    #[test]
    fn error_step_matches_kinematic_model() {
        use crate::models::{kinematic_matrices_at, SchedulingPoint};
        let tc = 0.1;
        let (v, w, vd, wd) = (9.0, 0.2, 10.0, 0.25);
        // exact arcs over one step
        let arc = |p: Pose, v: f64, w: f64, t: f64| {
            Pose::new(
                p.x + v / w * ((p.theta + w * t).sin() - p.theta.sin()),
                p.y - v / w * ((p.theta + w * t).cos() - p.theta.cos()),
                p.theta + w * t,
            )
        };
        let pose = Pose::new(0.0, 0.3, 0.02);
        let rp = Pose::new(0.5, 0.0, 0.0);
        let r = ReferenceSample { x: rp.x, y: rp.y, theta: rp.theta, v: vd, omega: wd, t: 0.0 };
        let e0 = tracking_error(&pose, &r);
        let np = arc(pose, v, w, tc);
        let nr = arc(rp, vd, wd, tc);
        let e1 = tracking_error(&np, &ReferenceSample { x: nr.x, y: nr.y, theta: nr.theta, ..r });
        let (a, b) = kinematic_matrices_at(&SchedulingPoint::from([w, vd, e0.theta_e]), tc);
        let rr = nalgebra::DVector::from_vec(vec![vd * e0.theta_e.cos(), wd]);
        let pred = &a * e0.to_vector() + &b * nalgebra::DVector::from_vec(vec![v, w]) - &b * rr;
        let diff = (pred - e1.to_vector()).amax();
        assert!(diff < 0.5 * tc * tc * 10.0, "one-step mismatch {diff}");
    }

    proptest! {
        #[test]
        fn error_invariant_under_rigid_motion(
            px in -50.0..50.0f64, py in -50.0..50.0f64, pt in -3.0..3.0f64,
            rx in -50.0..50.0f64, ry in -50.0..50.0f64, rt in -3.0..3.0f64,
            dx in -100.0..100.0f64, dy in -100.0..100.0f64, rot in -3.1..3.1f64,
        ) {
            let r = ReferenceSample { x: rx, y: ry, theta: rt, ..Default::default() };
            let e = tracking_error(&Pose::new(px, py, pt), &r);
            let (s, c) = rot.sin_cos();
            let mv = |x: f64, y: f64| (c * x - s * y + dx, s * x + c * y + dy);
            let (qx, qy) = mv(px, py);
            let (sx, sy) = mv(rx, ry);
            let r2 = ReferenceSample { x: sx, y: sy, theta: rt + rot, ..Default::default() };
            let e2 = tracking_error(&Pose::new(qx, qy, pt + rot), &r2);
            prop_assert!((e.x_e - e2.x_e).abs() < 1e-9);
            prop_assert!((e.y_e - e2.y_e).abs() < 1e-9);
            prop_assert!(wrap_angle(e.theta_e - e2.theta_e).abs() < 1e-9);
        }
    }
}
