//! Zone MPC with a fixed irrigation decision sequence.
//!
//! The slacks are eliminated in closed form, leaving a box-constrained
//! problem in the rates that is solved by single shooting through the LSTM
//! rollout with a projected Newton method.

use serde::{Deserialize, Serialize};

use crate::agronomy::TargetZone;
use crate::error::{Error, Result};
use crate::surrogate::{DayInput, Record, SurrogateModel};

/// Unit of applied water that `r_u` is charged against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WaterUnit {
    #[default]
    Metre,
    Millimetre,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcParams {
    pub horizon: usize,
    /// Weight on squared violations above the target zone.
    pub q_upper: f64,
    /// Weight on squared violations below the target zone.
    pub q_lower: f64,
    pub r_u: f64,
    pub r_c: f64,
    /// Rate bounds on irrigation days (mm/day).
    pub u_min: f64,
    pub u_max: f64,
    pub tz: TargetZone,
    #[serde(default)]
    pub water_unit: WaterUnit,
}

impl MpcParams {
    /// Default weights with the given zone and rate bounds.
    pub fn new(tz: TargetZone, u_min: f64, u_max: f64) -> Self {
        Self {
            horizon: 14,
            q_upper: 2.2e7,
            q_lower: 2.0e7,
            r_u: 9000.0,
            r_c: 1000.0,
            u_min,
            u_max,
            tz,
            water_unit: WaterUnit::Metre,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.horizon >= 1
            && [self.q_upper, self.q_lower, self.r_u, self.r_c].iter().all(|v| *v >= 0.0 && v.is_finite())
            && self.u_min > 0.0
            && self.u_min <= self.u_max;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid MPC parameters {self:?}")))
        }
    }

    /// Cost of applying `u_mm` of water.
    pub fn water_cost(&self, u_mm: f64) -> f64 {
        self.r_u * u_mm * self.water_cost_per_mm()
    }

    pub fn water_cost_per_mm(&self) -> f64 {
        match self.water_unit {
            WaterUnit::Metre => 1e-3,
            WaterUnit::Millimetre => 1.0,
        }
    }

    /// Slacks below and above the target zone.
    pub fn slacks(&self, y: f64) -> (f64, f64) {
        ((self.tz.lower - y).max(0.0), (y - self.tz.upper).max(0.0))
    }

    pub fn violation_cost(&self, y: f64) -> (f64, f64) {
        let (lo, hi) = self.slacks(y);
        (self.q_lower * lo * lo, self.q_upper * hi * hi)
    }
}

/// Stage cost of one day with optimal slacks: `(cost, ε_lower, ε_upper)`.
pub fn stage_cost(y_next: f64, c: u8, u: f64, p: &MpcParams) -> (f64, f64, f64) {
    let (lo, hi) = p.slacks(y_next);
    let cost = p.q_upper * hi * hi + p.q_lower * lo * lo + p.r_c * c as f64 + p.water_cost(u);
    (cost, lo, hi)
}

/// Per-day drivers over the planning horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    /// Rain (mm/day).
    pub rain: Vec<f64>,
    /// Reference evapotranspiration (mm/day).
    pub et0: Vec<f64>,
    pub kc: Vec<f64>,
    /// Rooting depth (m).
    pub z_r: Vec<f64>,
}

impl Forecast {
    pub fn len(&self) -> usize {
        self.rain.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rain.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.rain.len();
        if self.et0.len() != n || self.kc.len() != n || self.z_r.len() != n {
            return Err(Error::InvalidParameter("forecast series differ in length".into()));
        }
        if self.rain.iter().chain(&self.et0).any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidParameter("forecast rain and et0 must be non-negative".into()));
        }
        Ok(())
    }

    /// Surrogate inputs for irrigation `u` (mm/day).
    pub fn day_inputs(&self, u: &[f64]) -> Vec<DayInput> {
        (0..u.len())
            .map(|k| DayInput { water: u[k] + self.rain[k], kc: self.kc[k], et0: self.et0[k], z_r: self.z_r[k] })
            .collect()
    }

    pub fn truncated(&self, n: usize) -> Forecast {
        Forecast {
            rain: self.rain[..n].to_vec(),
            et0: self.et0[..n].to_vec(),
            kc: self.kc[..n].to_vec(),
            z_r: self.z_r[..n].to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub upper_violation: f64,
    pub lower_violation: f64,
    pub fixed: f64,
    pub water: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.upper_violation + self.lower_violation + self.fixed + self.water
    }

    /// Everything except the fixed event cost.
    pub fn zone_total(&self) -> f64 {
        self.upper_violation + self.lower_violation + self.water
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrrigationPlan {
    pub decisions: Vec<u8>,
    /// Rates (mm/day).
    pub rates: Vec<f64>,
    pub slack_lower: Vec<f64>,
    pub slack_upper: Vec<f64>,
    /// Predicted root-zone moisture at the end of each day.
    pub predicted: Vec<f64>,
    pub cost: CostBreakdown,
    pub iterations: usize,
    /// Projected-gradient ∞-norm at the returned rates.
    pub kkt_residual: f64,
}

impl IrrigationPlan {
    /// Rates vanish off irrigation days and respect the bounds on them;
    /// slacks are non-negative.
    pub fn is_feasible(&self, p: &MpcParams) -> bool {
        self.decisions.iter().zip(&self.rates).all(|(&c, &u)| {
            if c == 1 {
                u >= p.u_min && u <= p.u_max
            } else {
                c == 0 && u == 0.0
            }
        }) && self.slack_lower.iter().chain(&self.slack_upper).all(|s| *s >= 0.0)
    }
}

/// Surrogate context of one zone on the current day.
#[derive(Debug, Clone, Copy)]
pub struct ZoneContext<'a> {
    pub model: &'a SurrogateModel,
    /// The `lag` records before today.
    pub history: &'a [Record],
    /// Today's root-zone moisture estimate.
    pub y0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Stop when the projected-gradient ∞-norm falls below this.
    pub tolerance: f64,
    /// Extra starting points besides the guess: `u_min`, the midpoint and
    /// `u_max` on every irrigation day.
    pub multi_start: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { max_iterations: 500, tolerance: 1e-6, multi_start: true }
    }
}

fn check_decisions(c: &[u8]) -> Result<()> {
    if c.iter().any(|&v| v > 1) {
        return Err(Error::InvalidParameter("decisions must be 0 or 1".into()));
    }
    Ok(())
}

fn bounds(c: &[u8], p: &MpcParams) -> Vec<(f64, f64)> {
    c.iter().map(|&ck| if ck == 1 { (p.u_min, p.u_max) } else { (0.0, 0.0) }).collect()
}

fn project(u: &mut [f64], b: &[(f64, f64)]) {
    for (v, &(lo, hi)) in u.iter_mut().zip(b) {
        *v = v.clamp(lo, hi);
    }
}

struct Problem<'a> {
    ctx: ZoneContext<'a>,
    c: &'a [u8],
    forecast: &'a Forecast,
    p: &'a MpcParams,
    evaluations: usize,
}

impl Problem<'_> {
    fn objective(&mut self, u: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.evaluations += 1;
        let ys = self.ctx.model.trajectory(self.ctx.history, self.ctx.y0, &self.forecast.day_inputs(u))?;
        let cost = self.cost_of(u, &ys).total();
        Ok((cost, ys))
    }

    fn gradient(&mut self, u: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.evaluations += 1;
        let p = self.p;
        let (ys, mut g) =
            self.ctx.model.trajectory_gradient(self.ctx.history, self.ctx.y0, &self.forecast.day_inputs(u), |ys| {
                ys.iter()
                    .map(|&y| {
                        let (lo, hi) = p.slacks(y);
                        2.0 * p.q_upper * hi - 2.0 * p.q_lower * lo
                    })
                    .collect()
            })?;
        for gk in g.iter_mut() {
            *gk += p.r_u * p.water_cost_per_mm();
        }
        Ok((self.cost_of(u, &ys).total(), g))
    }

    fn cost_of(&self, u: &[f64], ys: &[f64]) -> CostBreakdown {
        let mut cb = CostBreakdown::default();
        for (k, &y) in ys.iter().enumerate() {
            let (lo, hi) = self.p.violation_cost(y);
            cb.lower_violation += lo;
            cb.upper_violation += hi;
            cb.fixed += self.p.r_c * self.c[k] as f64;
            cb.water += self.p.water_cost(u[k]);
        }
        cb
    }
}

fn projected_gradient_norm(u: &[f64], g: &[f64], b: &[(f64, f64)]) -> f64 {
    u.iter().zip(g).zip(b).map(|((&x, &gx), &(lo, hi))| ((x - gx).clamp(lo, hi) - x).abs()).fold(0.0, f64::max)
}

struct SolveResult {
    u: Vec<f64>,
    cost: f64,
    iterations: usize,
    pg_norm: f64,
}

/// Solves `(A + mu I) x = r` for symmetric `A`, raising the shift until the
/// Cholesky factorization succeeds so the step is a descent direction.
fn shifted_solve(a: &[Vec<f64>], r: &[f64]) -> Vec<f64> {
    let n = r.len();
    let scale = a.iter().enumerate().map(|(i, row)| row[i].abs()).fold(0.0, f64::max).max(1e-12);
    let mut mu = 0.0;
    loop {
        if let Some(l) = cholesky(a, mu) {
            let mut z = vec![0.0; n];
            for i in 0..n {
                z[i] = (r[i] - (0..i).map(|k| l[i][k] * z[k]).sum::<f64>()) / l[i][i];
            }
            let mut x = vec![0.0; n];
            for i in (0..n).rev() {
                x[i] = (z[i] - (i + 1..n).map(|k| l[k][i] * x[k]).sum::<f64>()) / l[i][i];
            }
            return x;
        }
        mu = if mu == 0.0 { 1e-8 * scale } else { mu * 10.0 };
    }
}

fn cholesky(a: &[Vec<f64>], mu: f64) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut v = a[i][j] + if i == j { mu } else { 0.0 };
            v -= (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            if i == j {
                if v <= 1e-14 * a[i][i].abs().max(1e-300) || !v.is_finite() {
                    return None;
                }
                l[i][i] = v.sqrt();
            } else {
                l[i][j] = v / l[j][j];
            }
        }
    }
    Some(l)
}

/// Projected Newton descent with an Armijo search along the projection arc.
/// The Hessian of the free rates comes from forward differences of the
/// adjoint gradient; rates held at a bound by their gradient stay put. A
/// failed arc search falls back to a projected gradient step, then stops.
fn minimize(prob: &mut Problem, start: Vec<f64>, b: &[(f64, f64)], opts: &SolverOptions) -> Result<SolveResult> {
    const ARMIJO: f64 = 1e-4;
    const STALL_RTOL: f64 = 1e-10;
    const STALL_RUN: usize = 5;
    let n = start.len();
    let mut u = start;
    project(&mut u, b);
    let (mut f, mut g) = prob.gradient(&u)?;
    if !f.is_finite() {
        return Err(Error::NonFiniteObjective { iterations: 0 });
    }
    let mut pg = projected_gradient_norm(&u, &g, b);
    let ginf = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut scale = if ginf > 0.0 { (1.0 / ginf).clamp(1e-12, 1e12) } else { 1.0 };
    let mut iterations = 0;
    let mut slow = 0;

    // Armijo search along the projection arc; `None` if no step decreases f.
    let arc_search =
        |prob: &mut Problem, u: &[f64], d: &[f64], f: f64, g: &[f64], it: usize| -> Result<Option<Vec<f64>>> {
            // Steps longer than the box only land on its faces.
            let width = b.iter().map(|(lo, hi)| hi - lo).fold(0.0, f64::max);
            let dmax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let mut alpha = if dmax > width && dmax > 0.0 { width / dmax } else { 1.0 };
            for _ in 0..40 {
                let mut cand: Vec<f64> = u.iter().zip(d).map(|(x, dx)| x + alpha * dx).collect();
                project(&mut cand, b);
                let slope: f64 = cand.iter().zip(u).zip(g).map(|((c, x), gx)| (c - x) * gx).sum();
                if slope >= 0.0 {
                    return Ok(None);
                }
                let (fc, _) = prob.objective(&cand)?;
                if !fc.is_finite() {
                    return Err(Error::NonFiniteObjective { iterations: it });
                }
                if fc <= f + ARMIJO * slope {
                    return Ok(Some(cand));
                }
                alpha *= 0.5;
            }
            Ok(None)
        };

    while iterations < opts.max_iterations && pg >= opts.tolerance {
        iterations += 1;
        // Active set with a margin that shrinks with the residual.
        let eps = pg.min(0.05);
        let free: Vec<usize> = (0..n)
            .filter(|&i| {
                let (lo, hi) = b[i];
                !(lo == hi || (u[i] - lo <= eps && g[i] > 0.0) || (hi - u[i] <= eps && g[i] < 0.0))
            })
            .collect();
        let mut d: Vec<f64> = g.iter().map(|gx| -scale * gx).collect();
        if !free.is_empty() {
            let mut hess = vec![vec![0.0; free.len()]; free.len()];
            for (col, &j) in free.iter().enumerate() {
                let h = 1e-6 * u[j].abs().max(1.0);
                let mut shifted = u.clone();
                shifted[j] += h;
                let (_, gh) = prob.gradient(&shifted)?;
                for (row, &i) in free.iter().enumerate() {
                    hess[row][col] = (gh[i] - g[i]) / h;
                }
            }
            for r in 0..free.len() {
                for c in 0..r {
                    let m = 0.5 * (hess[r][c] + hess[c][r]);
                    hess[r][c] = m;
                    hess[c][r] = m;
                }
            }
            let rhs: Vec<f64> = free.iter().map(|&i| -g[i]).collect();
            d = vec![0.0; n];
            for (&i, step) in free.iter().zip(shifted_solve(&hess, &rhs)) {
                d[i] = step;
            }
        }
        let mut next = arc_search(prob, &u, &d, f, &g, iterations)?;
        if next.is_none() && !free.is_empty() {
            let d: Vec<f64> = g.iter().map(|gx| -scale * gx).collect();
            next = arc_search(prob, &u, &d, f, &g, iterations)?;
        }
        let Some(next) = next else { break };
        let (f_next, g_next) = prob.gradient(&next)?;
        let s: Vec<f64> = next.iter().zip(&u).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = g_next.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&yv).map(|(a, b)| a * b).sum();
        let yy: f64 = yv.iter().map(|a| a * a).sum();
        if sy > 0.0 && yy > 0.0 {
            scale = (sy / yy).clamp(1e-12, 1e12);
        }
        // Stagnation: tiny relative decreases over a run of iterations.
        if f - f_next <= STALL_RTOL * f.abs().max(1.0) {
            slow += 1;
        } else {
            slow = 0;
        }
        u = next;
        f = f_next;
        g = g_next;
        pg = projected_gradient_norm(&u, &g, b);
        if slow >= STALL_RUN {
            break;
        }
    }
    Ok(SolveResult { u, cost: f, iterations, pg_norm: pg })
}

/// Locally optimal rates for the fixed decisions `c`. The guess is projected
/// onto the bounds first; the result never costs more than that projection.
pub fn solve_rates(
    ctx: ZoneContext,
    c: &[u8],
    forecast: &Forecast,
    p: &MpcParams,
    u_guess: &[f64],
) -> Result<IrrigationPlan> {
    solve_rates_with(ctx, c, forecast, p, u_guess, &SolverOptions::default())
}

pub fn solve_rates_with(
    ctx: ZoneContext,
    c: &[u8],
    forecast: &Forecast,
    p: &MpcParams,
    u_guess: &[f64],
    opts: &SolverOptions,
) -> Result<IrrigationPlan> {
    p.validate()?;
    forecast.validate()?;
    check_decisions(c)?;
    let n = c.len();
    if n == 0 || forecast.len() < n || u_guess.len() != n {
        return Err(Error::InvalidParameter(format!(
            "decisions ({n}), forecast ({}) and guess ({}) do not align",
            forecast.len(),
            u_guess.len()
        )));
    }
    let forecast = forecast.truncated(n);
    let b = bounds(c, p);
    let mut prob = Problem { ctx, c, forecast: &forecast, p, evaluations: 0 };

    let mut starts = vec![u_guess.to_vec()];
    if opts.multi_start && c.contains(&1) {
        for frac in [0.0, 0.5, 1.0] {
            starts.push(b.iter().map(|&(lo, hi)| lo + frac * (hi - lo)).collect());
        }
    }
    let mut best: Option<SolveResult> = None;
    for start in starts {
        let r = minimize(&mut prob, start, &b, opts)?;
        // Strict improvement only, so ties keep the guess-started result.
        if best.as_ref().map_or(true, |bst| r.cost < bst.cost) {
            best = Some(r);
        }
    }
    let best = best.expect("at least one start");
    log::debug!(
        "solve: {} active days, {} iterations, residual {:.2e}, {} evaluations",
        c.iter().filter(|&&v| v == 1).count(),
        best.iterations,
        best.pg_norm,
        prob.evaluations
    );
    let (_, ys) = prob.objective(&best.u)?;
    let cost = prob.cost_of(&best.u, &ys);
    let (slack_lower, slack_upper) = ys.iter().map(|&y| p.slacks(y)).unzip();
    Ok(IrrigationPlan {
        decisions: c.to_vec(),
        rates: best.u,
        slack_lower,
        slack_upper,
        predicted: ys,
        cost,
        iterations: best.iterations,
        kkt_residual: best.pg_norm,
    })
}

/// Cost of `u` (projected onto the bounds of `c`) without optimizing.
pub fn plan_cost(ctx: ZoneContext, c: &[u8], forecast: &Forecast, p: &MpcParams, u: &[f64]) -> Result<CostBreakdown> {
    check_decisions(c)?;
    let forecast = forecast.truncated(c.len());
    let mut u = u.to_vec();
    project(&mut u, &bounds(c, p));
    let mut prob = Problem { ctx, c, forecast: &forecast, p, evaluations: 0 };
    let (_, ys) = prob.objective(&u)?;
    Ok(prob.cost_of(&u, &ys))
}

/// Field objective over zone plans sharing one decision sequence: every
/// zone's violation and water costs plus the event cost counted once.
pub fn evaluate_joint_cost(plans: &[IrrigationPlan], r_c: f64) -> Result<f64> {
    let first = plans.first().ok_or_else(|| Error::InvalidParameter("no plans".into()))?;
    if plans.iter().any(|pl| pl.decisions != first.decisions) {
        return Err(Error::MismatchedDecisions);
    }
    let zones: f64 = plans.iter().map(|pl| pl.cost.zone_total()).sum();
    Ok(zones + r_c * first.decisions.iter().map(|&c| c as f64).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agronomy::target_bounds;
    use approx::assert_abs_diff_eq;

    fn params() -> MpcParams {
        MpcParams::new(target_bounds(0.28, 0.12, 0.4).unwrap(), 4.0, 52.0)
    }

    #[test]
    fn stage_costs() {
        let p = params();
        assert_eq!(stage_cost(0.25, 0, 0.0, &p).0, 0.0);
        let (cost, lo, hi) = stage_cost(0.19, 0, 0.0, &p);
        assert_abs_diff_eq!(lo, 0.026, epsilon = 1e-12);
        assert_eq!(hi, 0.0);
        assert_abs_diff_eq!(cost, 13520.0, epsilon = 1e-6);
        assert_abs_diff_eq!(stage_cost(0.25, 1, 10.0, &p).0, 1090.0, epsilon = 1e-9);
        let per_mm = MpcParams { water_unit: WaterUnit::Millimetre, ..p };
        assert_abs_diff_eq!(stage_cost(0.25, 1, 10.0, &per_mm).0, 91000.0, epsilon = 1e-9);
    }

    fn plan(c: Vec<u8>, zone: f64) -> IrrigationPlan {
        let n = c.len();
        IrrigationPlan {
            decisions: c,
            rates: vec![0.0; n],
            slack_lower: vec![0.0; n],
            slack_upper: vec![0.0; n],
            predicted: vec![0.25; n],
            cost: CostBreakdown { upper_violation: zone, lower_violation: 1.0, fixed: 1000.0, water: 2.0 },
            iterations: 0,
            kkt_residual: 0.0,
        }
    }

    #[test]
    fn joint_cost_counts_events_once() {
        let a = plan(vec![1, 0, 1], 10.0);
        let b = plan(vec![1, 0, 1], 20.0);
        assert_abs_diff_eq!(evaluate_joint_cost(&[a.clone()], 1000.0).unwrap(), 13.0 + 2000.0);
        assert_abs_diff_eq!(evaluate_joint_cost(&[a.clone(), b], 1000.0).unwrap(), 13.0 + 23.0 + 2000.0);
        let c = plan(vec![0, 0, 1], 1.0);
        assert!(matches!(evaluate_joint_cost(&[a, c], 1000.0), Err(Error::MismatchedDecisions)));
    }
}
