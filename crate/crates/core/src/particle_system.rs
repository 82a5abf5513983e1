//! Branching particle system with α-stable motion on a finite window.
//!
//! Particles move independently between branch events, so each observation
//! interval is processed as a work list: every particle is carried from the
//! left grid point through its own branch events to the right grid point,
//! and offspring born inside the interval are appended and processed in turn.
//! This has the same law as a global event queue.

use rand::Rng;
use rand_distr::{Distribution, Exp1, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::occupation::TestFunction;
use crate::offspring::OffspringLaw;
use crate::stable_motion::{add_stable_increment, add_stable_increment_log, StableParams};

/// Default cap on branch events per replica.
pub const DEFAULT_EVENT_CAP: u64 = 10_000_000;

/// Default bound on the expected mass missed because of the window.
pub const DEFAULT_TRUNCATION_EPSILON: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Torus `[-L, L)^d`; intensity is preserved exactly.
    #[default]
    Periodic,
    /// Particles start in `[-L, L]^d` and move freely afterwards.
    Open,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationWindow {
    pub half_width: f64,
    pub truncation_epsilon: f64,
    #[serde(default)]
    pub boundary: Boundary,
}

impl SimulationWindow {
    pub fn new(half_width: f64, truncation_epsilon: f64, boundary: Boundary) -> Result<Self> {
        let w = Self { half_width, truncation_epsilon, boundary };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.half_width > 0.0 && self.half_width.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "window half-width must be positive, got {}",
                self.half_width
            )));
        }
        if !(self.truncation_epsilon > 0.0) {
            return Err(Error::InvalidParameter("truncation epsilon must be positive".into()));
        }
        Ok(())
    }

    /// Window sized so that truncation affects the observed functionals by
    /// at most `eps` (in expected mass) over `total_time`.
    ///
    /// With `r` the radius outside which every test function is below
    /// `1e-6` of its peak and `C` the stable tail constant:
    /// open boundary `L = r + (C t / eps)^{1/α}`; periodic boundary
    /// `L = (C t r^d / eps)^{1/(α+d)}`, which bounds the mass wrapping
    /// around the torus onto the support. Both are floored at
    /// `r + 2 t^{1/α}`; for α = 2 a Gaussian tail `r + sqrt(4 t ln(1/eps))` is used.
    pub fn for_horizon(
        stable: &StableParams,
        phis: &[TestFunction],
        total_time: f64,
        eps: f64,
        boundary: Boundary,
    ) -> Result<Self> {
        stable.validate()?;
        if !(eps > 0.0) || !(total_time >= 0.0) {
            return Err(Error::InvalidParameter("window rule needs eps > 0, t >= 0".into()));
        }
        let r = phis
            .iter()
            .map(|p| p.cutoff_radius())
            .fold(0.0f64, f64::max)
            .max(1e-9);
        let t = total_time.max(1e-12);
        let a = stable.alpha;
        let d = stable.dim as f64;
        let half_width = if a >= 2.0 {
            r + (4.0 * t * (1.0 / eps).ln()).sqrt()
        } else {
            let floor = r + 2.0 * t.powf(1.0 / a);
            let c = stable.tail_constant();
            let rule = match boundary {
                Boundary::Open => r + (c * t / eps).powf(1.0 / a),
                Boundary::Periodic => (c * t * r.powf(d) / eps).powf(1.0 / (a + d)),
            };
            rule.max(floor)
        };
        Self::new(half_width, eps, boundary)
    }

    pub fn volume(&self, dim: usize) -> f64 {
        (2.0 * self.half_width).powi(dim as i32)
    }

    #[inline]
    fn wrap(&self, x: f64) -> f64 {
        let l = self.half_width;
        x - 2.0 * l * ((x + l) / (2.0 * l)).floor()
    }
}

/// How the system is started.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitKind {
    /// Unit-intensity Poisson field.
    Poisson,
    /// Poisson field run for `t_burn` time units, then observed.
    Equilibrium { t_burn: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub stable: StableParams,
    pub law: OffspringLaw,
    pub branch_rate: f64,
    pub init: InitKind,
    pub window: SimulationWindow,
    #[serde(default = "default_event_cap")]
    pub event_cap: u64,
}

fn default_event_cap() -> u64 {
    DEFAULT_EVENT_CAP
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.stable.validate()?;
        self.window.validate()?;
        if !(self.branch_rate > 0.0 && self.branch_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "branching rate must be positive, got {}",
                self.branch_rate
            )));
        }
        if let InitKind::Equilibrium { t_burn } = self.init {
            if !(t_burn >= 0.0 && t_burn.is_finite()) {
                return Err(Error::InvalidParameter(format!("bad burn-in time {t_burn}")));
            }
        }
        if self.event_cap == 0 {
            return Err(Error::InvalidParameter("event cap must be positive".into()));
        }
        Ok(())
    }

    /// Requires `α < d < 2α`.
    pub fn check_intermediate(&self) -> Result<()> {
        let (a, d) = (self.stable.alpha, self.stable.dim as f64);
        if a < d && d < 2.0 * a {
            Ok(())
        } else {
            Err(Error::OutsideIntermediateRegime { alpha: a, dim: self.stable.dim })
        }
    }
}

/// Borrowed view of one particle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle<'a> {
    pub position: &'a [f64],
    pub next_branch_time: f64,
}

/// Live configuration of one replica.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub clock: f64,
    pub window: SimulationWindow,
    dim: usize,
    positions: Vec<f64>,
    branch_times: Vec<f64>,
    events: u64,
}

impl SystemState {
    pub fn empty(dim: usize, window: SimulationWindow) -> Self {
        Self {
            clock: 0.0,
            window,
            dim,
            positions: Vec::new(),
            branch_times: Vec::new(),
            events: 0,
        }
    }

    /// Adds a particle; its branch time must not precede the clock.
    pub fn push(&mut self, position: &[f64], next_branch_time: f64) -> Result<()> {
        if position.len() != self.dim {
            return Err(Error::InvalidParameter("particle dimension mismatch".into()));
        }
        if !(next_branch_time >= self.clock) {
            return Err(Error::InvalidParameter(format!(
                "branch time {next_branch_time} precedes clock {}",
                self.clock
            )));
        }
        self.positions.extend_from_slice(position);
        self.branch_times.push(next_branch_time);
        Ok(())
    }

    /// Adds a particle at `position` with a fresh Exp(`rate`) clock.
    pub fn push_fresh<R: Rng + ?Sized>(&mut self, position: &[f64], rate: f64, rng: &mut R) -> Result<()> {
        let e: f64 = Exp1.sample(rng);
        self.push(position, self.clock + e / rate)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.branch_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.branch_times.is_empty()
    }

    /// Branch events processed since the state was created.
    pub fn events(&self) -> u64 {
        self.events
    }

    pub fn particle(&self, i: usize) -> Particle<'_> {
        Particle {
            position: &self.positions[i * self.dim..(i + 1) * self.dim],
            next_branch_time: self.branch_times[i],
        }
    }

    pub fn particles(&self) -> impl Iterator<Item = Particle<'_>> {
        (0..self.len()).map(move |i| self.particle(i))
    }

    /// `⟨N, φ⟩`, using minimum-image distances on a periodic window.
    pub fn pairing(&self, phi: &TestFunction) -> f64 {
        let periodic = matches!(self.window.boundary, Boundary::Periodic);
        let l = self.window.half_width;
        self.positions
            .chunks_exact(self.dim)
            .map(|x| {
                if periodic {
                    phi.eval_periodic(x, l)
                } else {
                    phi.eval(x)
                }
            })
            .sum()
    }

    /// Number of particles inside the box `[lo, hi]` in every coordinate.
    pub fn count_in_box(&self, lo: &[f64], hi: &[f64]) -> usize {
        self.positions
            .chunks_exact(self.dim)
            .filter(|x| x.iter().zip(lo.iter().zip(hi)).all(|(v, (a, b))| v >= a && v <= b))
            .count()
    }
}

/// Unit-intensity Poisson field on the window with Exp(V) branch clocks.
pub fn init_poisson<R: Rng + ?Sized>(config: &SimConfig, rng: &mut R) -> Result<SystemState> {
    config.validate()?;
    let dim = config.stable.dim;
    let window = config.window;
    let mean = window.volume(dim);
    let count = if mean > 0.0 {
        Poisson::new(mean)
            .map_err(|e| Error::InvalidParameter(format!("window volume {mean}: {e}")))?
            .sample(rng) as usize
    } else {
        0
    };
    let mut state = SystemState::empty(dim, window);
    state.positions.reserve(count * dim);
    state.branch_times.reserve(count);
    let l = window.half_width;
    for _ in 0..count {
        for _ in 0..dim {
            state.positions.push(rng.random_range(-l..l));
        }
        let e: f64 = Exp1.sample(rng);
        state.branch_times.push(e / config.branch_rate);
    }
    Ok(state)
}

/// Poisson start run for `t_burn`, then the clock is reset to 0 and branch
/// clocks are redrawn (exact by memorylessness).
///
/// The window of `config` is used for both phases, so it should be sized
/// for `t_burn` plus the observation horizon.
pub fn init_equilibrium<R: Rng + ?Sized>(config: &SimConfig, rng: &mut R) -> Result<SystemState> {
    let t_burn = match config.init {
        InitKind::Equilibrium { t_burn } => t_burn,
        InitKind::Poisson => {
            return Err(Error::InvalidParameter("equilibrium start needs a burn-in time".into()))
        }
    };
    let mut state = init_poisson(config, rng)?;
    if t_burn > 0.0 {
        advance(&mut state, config, t_burn, rng)?;
    }
    state.clock = 0.0;
    for b in state.branch_times.iter_mut() {
        let e: f64 = Exp1.sample(rng);
        *b = e / config.branch_rate;
    }
    Ok(state)
}

/// Initial state as prescribed by `config.init`.
pub fn initialize<R: Rng + ?Sized>(config: &SimConfig, rng: &mut R) -> Result<SystemState> {
    match config.init {
        InitKind::Poisson => init_poisson(config, rng),
        InitKind::Equilibrium { .. } => init_equilibrium(config, rng),
    }
}

/// Runs the system from `state.clock` to `until` without observing it.
pub fn advance<R: Rng + ?Sized>(
    state: &mut SystemState,
    config: &SimConfig,
    until: f64,
    rng: &mut R,
) -> Result<()> {
    if !(until >= state.clock) {
        return Err(Error::Grid(format!(
            "cannot run backwards from {} to {until}",
            state.clock
        )));
    }
    let dim = state.dim;
    let start = state.clock;
    let mut pending: Vec<(usize, f64)> = (0..state.len()).map(|i| (i, start)).collect();
    pending.reverse();
    let mut dead: Vec<bool> = vec![false; state.len()];
    let mut any_dead = false;
    let periodic = matches!(state.window.boundary, Boundary::Periodic);
    let log_full = (until - start).ln();
    while let Some((i, mut t)) = pending.pop() {
        loop {
            let tb = state.branch_times[i];
            if tb >= until {
                let pos = &mut state.positions[i * dim..(i + 1) * dim];
                if t == start {
                    if until > start {
                        add_stable_increment_log(&config.stable, log_full, rng, pos);
                    }
                } else {
                    add_stable_increment(&config.stable, until - t, rng, pos);
                }
                if periodic {
                    for x in pos.iter_mut() {
                        *x = state.window.wrap(*x);
                    }
                }
                break;
            }
            state.events += 1;
            if state.events > config.event_cap {
                return Err(Error::Explosion {
                    events: state.events,
                    cap: config.event_cap,
                    particles: state.len(),
                    clock: tb,
                });
            }
            {
                let pos = &mut state.positions[i * dim..(i + 1) * dim];
                add_stable_increment(&config.stable, tb - t, rng, pos);
            }
            t = tb;
            let k = config.law.sample_offspring(rng);
            if k == 0 {
                dead[i] = true;
                any_dead = true;
                break;
            }
            let e: f64 = Exp1.sample(rng);
            state.branch_times[i] = t + e / config.branch_rate;
            for _ in 1..k {
                let child = state.len();
                state.positions.extend_from_within(i * dim..(i + 1) * dim);
                let e: f64 = Exp1.sample(rng);
                state.branch_times.push(t + e / config.branch_rate);
                dead.push(false);
                pending.push((child, t));
            }
        }
    }
    if any_dead {
        compact(state, &dead);
    }
    state.clock = until;
    Ok(())
}

fn compact(state: &mut SystemState, dead: &[bool]) {
    let dim = state.dim;
    let mut w = 0;
    for r in 0..dead.len() {
        if !dead[r] {
            if w != r {
                state.branch_times[w] = state.branch_times[r];
                state.positions.copy_within(r * dim..(r + 1) * dim, w * dim);
            }
            w += 1;
        }
    }
    state.branch_times.truncate(w);
    state.positions.truncate(w * dim);
}

/// Runs the system across `grid` and returns `⟨N_s, φ_j⟩` for every grid
/// time `s` (rows) and test function `φ_j` (columns).
pub fn evolve_and_observe<R: Rng + ?Sized>(
    state: &mut SystemState,
    config: &SimConfig,
    phis: &[TestFunction],
    grid: &[f64],
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let first = *grid.first().ok_or_else(|| Error::Grid("empty observation grid".into()))?;
    if (first - state.clock).abs() > 1e-12 * first.abs().max(1.0) {
        return Err(Error::Grid(format!(
            "grid starts at {first} but the clock reads {}",
            state.clock
        )));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) || grid.iter().any(|g| !g.is_finite()) {
        return Err(Error::Grid("observation grid must be finite and strictly increasing".into()));
    }
    if phis.iter().any(|p| p.dim() != state.dim) {
        return Err(Error::InvalidParameter("test function dimension mismatch".into()));
    }
    let mut out = Vec::with_capacity(grid.len());
    state.clock = first;
    out.push(phis.iter().map(|p| state.pairing(p)).collect());
    for &g in &grid[1..] {
        advance(state, config, g, rng)?;
        out.push(phis.iter().map(|p| state.pairing(p)).collect());
    }
    Ok(out)
}
