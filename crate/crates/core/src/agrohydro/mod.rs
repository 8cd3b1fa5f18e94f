//! One-dimensional Richards equation in pressure-head form for a single
//! management zone.
//!
//! The column is discretized with node-centred control volumes (depth
//! positive downward) and advanced with implicit Euler in mixed form, so the
//! stored water changes exactly by the integrated boundary and sink fluxes up
//! to the Newton tolerance. Inter-node conductivity is the geometric mean of
//! the neighbouring nodes.

mod grid;
mod vg;

pub use grid::{root_zone_moisture, SoilColumnGrid, ROOT_QUARTER_WEIGHTS};
pub use vg::{vg_capacity, vg_conductivity, vg_moisture, Constitutive, SoilHydraulicParams};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::agronomy::{StressThresholds, TargetZone};
use crate::error::{Error, Result};

/// Pressure head (m) defining the anaerobic point of the stress curve.
pub const ANAEROBIC_HEAD: f64 = -0.1;

/// Capillary pressure head at each node plus the simulation clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoilColumnState {
    pub psi: Vec<f64>,
    pub day: u32,
    /// Intra-day step counter, reset at each day boundary.
    pub step: u32,
}

impl SoilColumnState {
    pub fn new(psi: Vec<f64>) -> Self {
        Self { psi, day: 0, step: 0 }
    }

    /// Hydrostatic profile (uniform total head) anchored at the surface head.
    pub fn hydrostatic(grid: &SoilColumnGrid, surface_head: f64) -> Self {
        Self::new(grid.node_depths.iter().map(|z| surface_head + z).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.psi.iter().all(|p| p.is_finite())
    }
}

/// One day of drivers, in millimetres per day at this boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DailyForcing {
    pub irrigation: f64,
    pub rain: f64,
    pub et0: f64,
    pub kc: f64,
    /// Rooting depth (m).
    pub z_r: f64,
    /// Soil surface evaporation.
    #[serde(default)]
    pub ev: f64,
}

impl DailyForcing {
    pub fn validate(&self) -> Result<()> {
        let depths = [self.irrigation, self.rain, self.et0, self.ev, self.kc];
        if depths.iter().any(|v| !v.is_finite() || *v < 0.0) || !(self.z_r > 0.0) {
            return Err(Error::InvalidParameter(format!("invalid forcing {self:?}")));
        }
        Ok(())
    }

    /// Net flux into the column top (m/day).
    pub fn top_flux(&self) -> f64 {
        (self.irrigation + self.rain - self.ev) * 1e-3
    }

    /// Potential transpiration (m/day).
    pub fn potential_uptake(&self) -> f64 {
        self.kc * self.et0 * 1e-3
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum BottomBoundary {
    /// Unit total-head gradient: outflow equals K at the bottom node.
    #[default]
    FreeDrainage,
    ZeroFlux,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub steps_per_day: u32,
    /// Newton tolerance on the per-node water residual (m).
    pub tolerance: f64,
    pub max_iterations: usize,
    pub max_halvings: u32,
    /// Storage coefficient for positive heads (1/m); keeps the Jacobian
    /// regular when the column saturates.
    pub specific_storage: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { steps_per_day: 48, tolerance: 1e-8, max_iterations: 50, max_halvings: 4, specific_storage: 1e-5 }
    }
}

/// Water moved across the column boundaries and into roots (m of water).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WaterBalance {
    pub infiltration: f64,
    pub drainage: f64,
    pub uptake: f64,
    pub storage_change: f64,
}

impl WaterBalance {
    fn accumulate(&mut self, other: &WaterBalance) {
        self.infiltration += other.infiltration;
        self.drainage += other.drainage;
        self.uptake += other.uptake;
        self.storage_change += other.storage_change;
    }

    /// Storage change minus net boundary and sink fluxes.
    pub fn closure_error(&self) -> f64 {
        self.storage_change - (self.infiltration - self.drainage - self.uptake)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: SoilColumnState,
    pub balance: WaterBalance,
    pub newton_iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DayOutcome {
    pub state: SoilColumnState,
    pub theta: Vec<f64>,
    pub balance: WaterBalance,
}

/// Richards-equation model of one management zone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RichardsModel {
    pub params: SoilHydraulicParams,
    pub grid: SoilColumnGrid,
    /// Breakpoints of the root-uptake stress factor.
    pub stress: StressThresholds,
    pub bottom: BottomBoundary,
    pub solver: SolverSettings,
}

struct NodeEval {
    storage: Vec<f64>,
    storage_slope: Vec<f64>,
    k: Vec<f64>,
    dk: Vec<f64>,
    theta: Vec<f64>,
    capacity: Vec<f64>,
}

impl RichardsModel {
    /// Model on the default grid with free drainage. The uptake stress
    /// curve uses the zone's physiological band `tz` and the anaerobic point
    /// at [`ANAEROBIC_HEAD`].
    pub fn new(params: SoilHydraulicParams, tz: &TargetZone) -> Result<Self> {
        params.validate()?;
        let stress = StressThresholds::new(tz, params.moisture(ANAEROBIC_HEAD))?;
        Ok(Self {
            params,
            grid: SoilColumnGrid::default(),
            stress,
            bottom: BottomBoundary::FreeDrainage,
            solver: SolverSettings::default(),
        })
    }

    pub fn with_grid(mut self, grid: SoilColumnGrid) -> Self {
        self.grid = grid;
        self
    }

    pub fn with_bottom(mut self, bottom: BottomBoundary) -> Self {
        self.bottom = bottom;
        self
    }

    pub fn theta_profile(&self, state: &SoilColumnState) -> Vec<f64> {
        state.psi.iter().map(|&p| self.params.moisture(p)).collect()
    }

    pub fn root_zone_moisture(&self, state: &SoilColumnState, z_r: f64) -> Result<f64> {
        root_zone_moisture(&self.theta_profile(state), z_r, &self.grid)
    }

    fn storage_of(&self, psi: f64, theta: f64) -> f64 {
        theta + self.solver.specific_storage * psi.max(0.0)
    }

    /// Column water storage (m), including the small elastic term for
    /// positive heads.
    pub fn storage(&self, state: &SoilColumnState) -> f64 {
        self.grid.widths().iter().zip(&state.psi).map(|(w, &p)| w * self.storage_of(p, self.params.moisture(p))).sum()
    }

    /// Potential uptake allotted to each node (m/day), before stress.
    pub fn potential_uptake_profile(&self, forcing: &DailyForcing) -> Result<Vec<f64>> {
        let weights = self.grid.root_zone_weights(forcing.z_r)?;
        let demand = forcing.potential_uptake();
        Ok(weights.into_iter().map(|w| w * demand).collect())
    }

    /// Actual root water uptake per node (m/day of water, integrated over each
    /// node's control volume).
    pub fn root_uptake_sink(&self, state: &SoilColumnState, forcing: &DailyForcing) -> Result<Vec<f64>> {
        let potential = self.potential_uptake_profile(forcing)?;
        Ok(potential.iter().zip(&state.psi).map(|(s, &p)| s * self.stress.factor(self.params.moisture(p))).collect())
    }

    fn evaluate_nodes(&self, psi: &[f64]) -> NodeEval {
        let n = psi.len();
        let mut e = NodeEval {
            storage: Vec::with_capacity(n),
            storage_slope: Vec::with_capacity(n),
            k: Vec::with_capacity(n),
            dk: Vec::with_capacity(n),
            theta: Vec::with_capacity(n),
            capacity: Vec::with_capacity(n),
        };
        for &p in psi {
            let c = self.params.evaluate(p);
            let elastic = if p > 0.0 { self.solver.specific_storage } else { 0.0 };
            e.storage.push(self.storage_of(p, c.theta));
            e.storage_slope.push(c.capacity + elastic);
            e.k.push(c.conductivity);
            e.dk.push(c.conductivity_slope);
            e.theta.push(c.theta);
            e.capacity.push(c.capacity);
        }
        e
    }

    /// One implicit step of length `dt` (days), halving the step on Newton
    /// failure.
    pub fn step(&self, state: &SoilColumnState, forcing: &DailyForcing, dt: f64) -> Result<StepOutcome> {
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter(format!("time step {dt} must be positive")));
        }
        forcing.validate()?;
        let potential = self.potential_uptake_profile(forcing)?;
        if state.psi.len() != self.grid.node_count() || !state.is_finite() {
            return Err(Error::InvalidParameter("state does not match grid or is not finite".into()));
        }
        let (psi, balance, iterations) = self.step_adaptive(&state.psi, forcing.top_flux(), &potential, dt, 0)?;
        Ok(StepOutcome {
            state: SoilColumnState { psi, day: state.day, step: state.step + 1 },
            balance,
            newton_iterations: iterations,
        })
    }

    fn step_adaptive(
        &self,
        psi: &[f64],
        top_flux: f64,
        potential: &[f64],
        dt: f64,
        level: u32,
    ) -> Result<(Vec<f64>, WaterBalance, usize)> {
        match self.newton(psi, top_flux, potential, dt) {
            Ok(done) => Ok(done),
            Err(err) if level < self.solver.max_halvings => {
                log::debug!("halving step {dt} after {err}");
                let half = 0.5 * dt;
                let (mid, mut b1, i1) = self.step_adaptive(psi, top_flux, potential, half, level + 1)?;
                let (end, b2, i2) = self.step_adaptive(&mid, top_flux, potential, half, level + 1)?;
                b1.accumulate(&b2);
                Ok((end, b1, i1 + i2))
            }
            Err(err) => Err(err),
        }
    }

    /// Residual (m of water per node over the step) and tridiagonal Jacobian.
    #[allow(clippy::too_many_arguments)]
    fn assemble(
        &self,
        psi: &[f64],
        eval: &NodeEval,
        old_storage: &[f64],
        widths: &[f64],
        spacings: &[f64],
        top_flux: f64,
        potential: &[f64],
        dt: f64,
        residual: &mut [f64],
        lower: &mut [f64],
        diag: &mut [f64],
        upper: &mut [f64],
    ) {
        let n = psi.len();
        for i in 0..n {
            let sink_factor = self.stress.factor(eval.theta[i]);
            let sink_slope = self.stress.factor_slope(eval.theta[i]) * eval.capacity[i];
            residual[i] = widths[i] * (eval.storage[i] - old_storage[i]) + dt * potential[i] * sink_factor;
            diag[i] = widths[i] * eval.storage_slope[i] + dt * potential[i] * sink_slope;
            lower[i] = 0.0;
            upper[i] = 0.0;
        }
        residual[0] -= dt * top_flux;
        // Downward flux between node i and i + 1.
        for i in 0..n - 1 {
            let h = spacings[i];
            let kh = (eval.k[i] * eval.k[i + 1]).sqrt();
            let drive = 1.0 - (psi[i + 1] - psi[i]) / h;
            let q = kh * drive;
            let dkh_i = if eval.k[i] > 0.0 { 0.5 * kh / eval.k[i] * eval.dk[i] } else { 0.0 };
            let dkh_j = if eval.k[i + 1] > 0.0 { 0.5 * kh / eval.k[i + 1] * eval.dk[i + 1] } else { 0.0 };
            let dq_di = dkh_i * drive + kh / h;
            let dq_dj = dkh_j * drive - kh / h;
            // Leaves node i, enters node i + 1.
            residual[i] += dt * q;
            diag[i] += dt * dq_di;
            upper[i] += dt * dq_dj;
            residual[i + 1] -= dt * q;
            lower[i + 1] -= dt * dq_di;
            diag[i + 1] -= dt * dq_dj;
        }
        if self.bottom == BottomBoundary::FreeDrainage {
            residual[n - 1] += dt * eval.k[n - 1];
            diag[n - 1] += dt * eval.dk[n - 1];
        }
    }

    fn newton(
        &self,
        psi_old: &[f64],
        top_flux: f64,
        potential: &[f64],
        dt: f64,
    ) -> Result<(Vec<f64>, WaterBalance, usize)> {
        let n = psi_old.len();
        let widths = self.grid.widths();
        let spacings = self.grid.spacings();
        let old_eval = self.evaluate_nodes(psi_old);
        let old_storage = old_eval.storage.clone();

        let mut psi = psi_old.to_vec();
        let mut residual = vec![0.0; n];
        let mut lower = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut upper = vec![0.0; n];
        let mut delta = vec![0.0; n];
        let mut norm = f64::INFINITY;
        let mut polished = false;

        for iteration in 0..=self.solver.max_iterations {
            let eval = self.evaluate_nodes(&psi);
            self.assemble(
                &psi,
                &eval,
                &old_storage,
                &widths,
                &spacings,
                top_flux,
                potential,
                dt,
                &mut residual,
                &mut lower,
                &mut diag,
                &mut upper,
            );
            norm = residual.iter().fold(0.0f64, |m, r| m.max(r.abs()));
            if !norm.is_finite() {
                break;
            }
            // One extra correction after convergence keeps the day-level
            // water balance closed far below the per-step tolerance.
            let converged = norm < self.solver.tolerance
                && (polished || norm < 1e-4 * self.solver.tolerance || iteration == self.solver.max_iterations);
            if norm < self.solver.tolerance {
                polished = true;
            }
            if converged {
                let drainage = match self.bottom {
                    BottomBoundary::FreeDrainage => eval.k[n - 1] * dt,
                    BottomBoundary::ZeroFlux => 0.0,
                };
                let uptake: f64 = potential.iter().zip(&eval.theta).map(|(s, &t)| s * self.stress.factor(t) * dt).sum();
                let storage_change: f64 =
                    widths.iter().zip(eval.storage.iter().zip(&old_storage)).map(|(w, (s, s0))| w * (s - s0)).sum();
                let balance = WaterBalance { infiltration: top_flux * dt, drainage, uptake, storage_change };
                return Ok((psi, balance, iteration));
            }
            if iteration == self.solver.max_iterations {
                break;
            }
            solve_tridiagonal(&lower, &diag, &upper, &residual, &mut delta);
            for (p, d) in psi.iter_mut().zip(&delta) {
                // Cap each update relative to the current head.
                let cap = 0.5 * p.abs() + 1.0;
                *p -= d.clamp(-cap, cap);
            }
            if psi.iter().any(|p| !p.is_finite()) {
                break;
            }
        }
        Err(Error::ConvergenceFailure { iterations: self.solver.max_iterations, residual: norm })
    }

    /// Advances one day with constant forcing, then perturbs the heads with
    /// zero-mean Gaussian noise of standard deviation `noise_std` (m).
    pub fn simulate_day<R: Rng + ?Sized>(
        &self,
        state: &SoilColumnState,
        forcing: &DailyForcing,
        noise_std: f64,
        rng: &mut R,
    ) -> Result<DayOutcome> {
        let dt = 1.0 / self.solver.steps_per_day as f64;
        let mut current = state.clone();
        let mut balance = WaterBalance::default();
        for _ in 0..self.solver.steps_per_day {
            let out = self.step(&current, forcing, dt)?;
            balance.accumulate(&out.balance);
            current = out.state;
        }
        if noise_std > 0.0 {
            let normal = Normal::new(0.0, noise_std).map_err(|e| Error::InvalidParameter(format!("noise std: {e}")))?;
            for p in current.psi.iter_mut() {
                *p += normal.sample(rng);
            }
        }
        current.day = state.day + 1;
        current.step = 0;
        let theta = self.theta_profile(&current);
        Ok(DayOutcome { state: current, theta, balance })
    }

    /// Hydrostatic state whose root-zone moisture over `z_r` matches
    /// `theta_rz` within 1e-4, found by bisection on the surface head.
    pub fn hydrostatic_state_for(&self, theta_rz: f64, z_r: f64) -> Result<SoilColumnState> {
        let p = &self.params;
        if !(theta_rz > p.theta_r && theta_rz <= p.theta_s) {
            return Err(Error::InvalidParameter(format!(
                "root-zone moisture {theta_rz} outside ({}, {}]",
                p.theta_r, p.theta_s
            )));
        }
        let rz = |head: f64| self.root_zone_moisture(&SoilColumnState::hydrostatic(&self.grid, head), z_r);
        if rz(0.0)? <= theta_rz + 1e-12 {
            return Ok(SoilColumnState::hydrostatic(&self.grid, 0.0));
        }
        let (mut lo, mut hi) = (-1e6f64, 0.0f64);
        if rz(lo)? > theta_rz {
            return Err(Error::InvalidParameter(format!(
                "root-zone moisture {theta_rz} is drier than the column can represent"
            )));
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if rz(mid)? < theta_rz {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-12 * (1.0 + hi.abs()) {
                break;
            }
        }
        Ok(SoilColumnState::hydrostatic(&self.grid, 0.5 * (lo + hi)))
    }
}

/// Thomas algorithm for a tridiagonal system; `lower[0]` and `upper[n-1]`
/// are ignored.
fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64], x: &mut [f64]) {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = upper[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - lower[i] * c[i - 1];
        c[i] = if i + 1 < n { upper[i] / m } else { 0.0 };
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / m;
    }
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
}
