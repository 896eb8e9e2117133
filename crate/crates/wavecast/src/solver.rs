//! Saint-Venant (shallow-water) integration on a square tank.
//!
//! The state is the surface displacement `h` about the mean depth `H` and the
//! depth-averaged velocities `u`, `v` on a vertex-centered `grid_n × grid_n`
//! grid. Spatial derivatives are second-order centered differences in the
//! interior with one-sided stencils at the walls, chosen so that the
//! reflective boundary conditions (zero normal velocity, zero normal gradient
//! for `h` and the tangential velocity) hold exactly:
//!
//! * the wall-normal momentum tendency vanishes identically at a wall, so
//!   `u = 0` / `v = 0` there is preserved through every RK4 stage;
//! * the trapezoid-weighted divergence of the mass flux telescopes to the
//!   wall fluxes, which are zero, so the discrete volume anomaly `∫h dA` is
//!   conserved up to rounding.
//!
//! Time integration is classical RK4 with a CFL-limited substep that divides
//! the output frame interval exactly.

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};

/// Assumed advective speed in the CFL bound. Small-amplitude waves move at
/// the gravity-wave speed; particle velocities are A·√(g/H) ≪ √(gH).
const V_MAX_GUESS: f64 = 0.0;

/// Physical and numerical parameters of one simulation.
#[derive(Debug, Clone)]
pub struct SimParams {
    /// Side length of the square tank (m).
    pub tank_size_m: f64,
    /// Mean water height H (m).
    pub depth_m: f64,
    /// Gravitational acceleration (m/s²).
    pub gravity: f64,
    /// Kinematic viscosity ν (m²/s).
    pub kin_viscosity: f64,
    /// Grid points per side.
    pub grid_n: usize,
    /// Output frame interval (s).
    pub dt_out: f64,
    /// Frames per episode.
    pub n_frames: usize,
    /// CFL safety factor for the internal substep.
    pub cfl_safety: f64,
    /// Keep the ν-Laplacian terms of the momentum equations. When false the
    /// viscous terms are zeroed regardless of `kin_viscosity`.
    pub viscous_terms: bool,
    /// Initial excitation amplitude A (m).
    pub amplitude_m: f64,
    /// Initial excitation width σ as a fraction of the tank size.
    pub sigma_frac: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            tank_size_m: 10.0,
            depth_m: 10.0,
            gravity: 9.81,
            kin_viscosity: 1e-6,
            grid_n: 64,
            dt_out: 0.01,
            n_frames: 100,
            cfl_safety: 0.4,
            viscous_terms: true,
            amplitude_m: 0.1,
            sigma_frac: 0.05,
        }
    }
}

impl SimParams {
    /// Grid spacing (m). The grid is vertex-centered: walls lie on the first
    /// and last grid lines.
    pub fn dx(&self) -> f64 {
        self.tank_size_m / (self.grid_n - 1) as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tank_size_m > 0.0) {
            return Err(Error::InvalidParam("tank_size_m must be > 0".into()));
        }
        if !(self.depth_m > 0.0) {
            return Err(Error::InvalidParam("depth_m must be > 0".into()));
        }
        if self.grid_n < 16 {
            return Err(Error::InvalidParam("grid_n must be >= 16".into()));
        }
        if !(self.dt_out > 0.0) {
            return Err(Error::InvalidParam("dt_out must be > 0".into()));
        }
        if !(self.kin_viscosity >= 0.0) {
            return Err(Error::InvalidParam("kin_viscosity must be >= 0".into()));
        }
        if !(self.gravity > 0.0) {
            return Err(Error::InvalidParam("gravity must be > 0".into()));
        }
        if !(self.amplitude_m > 0.0) || !(self.sigma_frac > 0.0) {
            return Err(Error::InvalidParam(
                "amplitude_m and sigma_frac must be > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Instantaneous simulation state. Arrays are indexed `[row=y, col=x]`.
#[derive(Debug, Clone)]
pub struct SimState {
    /// Displacement above the mean level H (m).
    pub h: Array2<f64>,
    /// Depth-averaged x-velocity (m/s).
    pub u: Array2<f64>,
    /// Depth-averaged y-velocity (m/s).
    pub v: Array2<f64>,
    /// Simulation time (s).
    pub t: f64,
}

impl SimState {
    /// Water at rest.
    pub fn flat(params: &SimParams) -> Self {
        let n = params.grid_n;
        SimState {
            h: Array2::zeros((n, n)),
            u: Array2::zeros((n, n)),
            v: Array2::zeros((n, n)),
            t: 0.0,
        }
    }

    pub fn validate(&self, params: &SimParams) -> Result<()> {
        let finite = |a: &Array2<f64>| a.iter().all(|x| x.is_finite());
        if !finite(&self.h) || !finite(&self.u) || !finite(&self.v) {
            return Err(Error::Diverged {
                t: self.t,
                frame: None,
            });
        }
        if self.h.iter().any(|&h| h <= -params.depth_m) {
            return Err(Error::Diverged {
                t: self.t,
                frame: None,
            });
        }
        Ok(())
    }
}

/// Kinds of initial surface excitation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    Droplet,
    DoubleDroplet,
    Line,
}

impl InitKind {
    pub fn code(self) -> u32 {
        match self {
            InitKind::Droplet => 0,
            InitKind::DoubleDroplet => 1,
            InitKind::Line => 2,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(InitKind::Droplet),
            1 => Ok(InitKind::DoubleDroplet),
            2 => Ok(InitKind::Line),
            other => Err(Error::Format(format!("unknown init kind code {other}"))),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "droplet" => Ok(InitKind::Droplet),
            "double_droplet" => Ok(InitKind::DoubleDroplet),
            "line" => Ok(InitKind::Line),
            other => Err(Error::Config(format!("unknown init kind `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            InitKind::Droplet => "droplet",
            InitKind::DoubleDroplet => "double_droplet",
            InitKind::Line => "line",
        }
    }
}

/// Description of the sampled initial excitation, in tank coordinates.
#[derive(Debug, Clone)]
pub struct InitialCondition {
    pub kind: InitKind,
    /// Bump centers (x, y) in meters. One entry for droplet/line (line uses
    /// only the x coordinate), two for double droplet.
    pub centers: Vec<(f64, f64)>,
    pub amplitude: f64,
    pub width_sigma: f64,
}

// ---------------------------------------------------------------------------
// derivative stencils

/// Wall treatment for first derivatives along an axis.
#[derive(Clone, Copy, PartialEq)]
enum D1Rule {
    /// Zero normal gradient at the wall (mirror ghost): derivative is 0.
    Gradient0,
    /// One-sided difference at the wall.
    OneSided,
}

/// Wall treatment for second derivatives along an axis.
#[derive(Clone, Copy, PartialEq)]
enum D2Rule {
    /// Anti-mirror ghost, f(wall)=0: second derivative is −2·f0/dx².
    Odd,
    /// Mirror ghost: second derivative is 2·(f1−f0)/dx².
    Even,
}

fn deriv_x(f: &[f64], out: &mut [f64], n: usize, dx: f64, rule: D1Rule) {
    let inv2 = 1.0 / (2.0 * dx);
    let inv1 = 1.0 / dx;
    for iy in 0..n {
        let row = &f[iy * n..(iy + 1) * n];
        let orow = &mut out[iy * n..(iy + 1) * n];
        match rule {
            D1Rule::Gradient0 => {
                orow[0] = 0.0;
                orow[n - 1] = 0.0;
            }
            D1Rule::OneSided => {
                orow[0] = (row[1] - row[0]) * inv1;
                orow[n - 1] = (row[n - 1] - row[n - 2]) * inv1;
            }
        }
        for ix in 1..n - 1 {
            orow[ix] = (row[ix + 1] - row[ix - 1]) * inv2;
        }
    }
}

fn deriv_y(f: &[f64], out: &mut [f64], n: usize, dx: f64, rule: D1Rule) {
    let inv2 = 1.0 / (2.0 * dx);
    let inv1 = 1.0 / dx;
    for ix in 0..n {
        match rule {
            D1Rule::Gradient0 => {
                out[ix] = 0.0;
                out[(n - 1) * n + ix] = 0.0;
            }
            D1Rule::OneSided => {
                out[ix] = (f[n + ix] - f[ix]) * inv1;
                out[(n - 1) * n + ix] = (f[(n - 1) * n + ix] - f[(n - 2) * n + ix]) * inv1;
            }
        }
    }
    for iy in 1..n - 1 {
        for ix in 0..n {
            out[iy * n + ix] = (f[(iy + 1) * n + ix] - f[(iy - 1) * n + ix]) * inv2;
        }
    }
}

fn second_x(f: &[f64], out: &mut [f64], n: usize, dx: f64, rule: D2Rule) {
    let inv = 1.0 / (dx * dx);
    for iy in 0..n {
        let row = &f[iy * n..(iy + 1) * n];
        let orow = &mut out[iy * n..(iy + 1) * n];
        match rule {
            D2Rule::Odd => {
                orow[0] = -2.0 * row[0] * inv;
                orow[n - 1] = -2.0 * row[n - 1] * inv;
            }
            D2Rule::Even => {
                orow[0] = 2.0 * (row[1] - row[0]) * inv;
                orow[n - 1] = 2.0 * (row[n - 2] - row[n - 1]) * inv;
            }
        }
        for ix in 1..n - 1 {
            orow[ix] = (row[ix + 1] - 2.0 * row[ix] + row[ix - 1]) * inv;
        }
    }
}

fn second_y(f: &[f64], out: &mut [f64], n: usize, dx: f64, rule: D2Rule) {
    let inv = 1.0 / (dx * dx);
    for ix in 0..n {
        match rule {
            D2Rule::Odd => {
                out[ix] = -2.0 * f[ix] * inv;
                out[(n - 1) * n + ix] = -2.0 * f[(n - 1) * n + ix] * inv;
            }
            D2Rule::Even => {
                out[ix] = 2.0 * (f[n + ix] - f[ix]) * inv;
                out[(n - 1) * n + ix] = 2.0 * (f[(n - 2) * n + ix] - f[(n - 1) * n + ix]) * inv;
            }
        }
    }
    for iy in 1..n - 1 {
        for ix in 0..n {
            out[iy * n + ix] =
                (f[(iy + 1) * n + ix] - 2.0 * f[iy * n + ix] + f[(iy - 1) * n + ix]) * inv;
        }
    }
}

// ---------------------------------------------------------------------------
// right-hand side and time stepping

/// Reusable buffers for the RK4 loop. One per live integration.
pub struct Workspace {
    n: usize,
    // rhs scratch
    s1: Vec<f64>,
    s2: Vec<f64>,
    s3: Vec<f64>,
    s4: Vec<f64>,
    s5: Vec<f64>,
    // RK4 stage tendencies and trial state
    k: Vec<Vec<f64>>, // 12 arrays: (dh,du,dv) × 4 stages
    th: Vec<f64>,
    tu: Vec<f64>,
    tv: Vec<f64>,
}

impl Workspace {
    pub fn new(grid_n: usize) -> Self {
        let sz = grid_n * grid_n;
        Workspace {
            n: grid_n,
            s1: vec![0.0; sz],
            s2: vec![0.0; sz],
            s3: vec![0.0; sz],
            s4: vec![0.0; sz],
            s5: vec![0.0; sz],
            k: (0..12).map(|_| vec![0.0; sz]).collect(),
            th: vec![0.0; sz],
            tu: vec![0.0; sz],
            tv: vec![0.0; sz],
        }
    }
}

/// Tendencies of Eq-form continuity/momentum, written into `dh`, `du`, `dv`.
#[allow(clippy::too_many_arguments)]
fn rhs_into(
    h: &[f64],
    u: &[f64],
    v: &[f64],
    params: &SimParams,
    ws_s1: &mut [f64],
    ws_s2: &mut [f64],
    ws_s3: &mut [f64],
    ws_s4: &mut [f64],
    ws_s5: &mut [f64],
    dh: &mut [f64],
    du: &mut [f64],
    dv: &mut [f64],
) {
    let n = params.grid_n;
    let dx = params.dx();
    let g = params.gravity;
    let depth = params.depth_m;
    let visc = if params.viscous_terms {
        params.kin_viscosity
    } else {
        0.0
    };

    // continuity: h_t = -( ((H+h)u)_x + ((H+h)v)_y )
    for i in 0..n * n {
        ws_s1[i] = (depth + h[i]) * u[i];
    }
    deriv_x(ws_s1, ws_s2, n, dx, D1Rule::OneSided);
    for i in 0..n * n {
        ws_s1[i] = (depth + h[i]) * v[i];
    }
    deriv_y(ws_s1, ws_s3, n, dx, D1Rule::OneSided);
    for i in 0..n * n {
        dh[i] = -(ws_s2[i] + ws_s3[i]);
    }

    // x-momentum: u_t = -( u u_x + v u_y + g h_x - ν (u_xx + u_yy) )
    deriv_x(u, ws_s1, n, dx, D1Rule::OneSided);
    deriv_y(u, ws_s2, n, dx, D1Rule::Gradient0);
    deriv_x(h, ws_s3, n, dx, D1Rule::Gradient0);
    second_x(u, ws_s4, n, dx, D2Rule::Odd);
    second_y(u, ws_s5, n, dx, D2Rule::Even);
    for i in 0..n * n {
        du[i] = -(u[i] * ws_s1[i] + v[i] * ws_s2[i] + g * ws_s3[i]
            - visc * (ws_s4[i] + ws_s5[i]));
    }

    // y-momentum: v_t = -( u v_x + v v_y + g h_y - ν (v_xx + v_yy) )
    deriv_x(v, ws_s1, n, dx, D1Rule::Gradient0);
    deriv_y(v, ws_s2, n, dx, D1Rule::OneSided);
    deriv_y(h, ws_s3, n, dx, D1Rule::Gradient0);
    second_x(v, ws_s4, n, dx, D2Rule::Even);
    second_y(v, ws_s5, n, dx, D2Rule::Odd);
    for i in 0..n * n {
        dv[i] = -(u[i] * ws_s1[i] + v[i] * ws_s2[i] + g * ws_s3[i]
            - visc * (ws_s4[i] + ws_s5[i]));
    }
}

/// Tendencies `(dh/dt, du/dt, dv/dt)` of the explicit-form equations.
pub fn rhs(state: &SimState, params: &SimParams) -> Result<(Array2<f64>, Array2<f64>, Array2<f64>)> {
    params.validate()?;
    let n = params.grid_n;
    let mut ws = Workspace::new(n);
    let mut dh = vec![0.0; n * n];
    let mut du = vec![0.0; n * n];
    let mut dv = vec![0.0; n * n];
    rhs_into(
        state.h.as_slice().unwrap(),
        state.u.as_slice().unwrap(),
        state.v.as_slice().unwrap(),
        params,
        &mut ws.s1,
        &mut ws.s2,
        &mut ws.s3,
        &mut ws.s4,
        &mut ws.s5,
        &mut dh,
        &mut du,
        &mut dv,
    );
    if dh.iter().chain(&du).chain(&dv).any(|x| !x.is_finite()) {
        return Err(Error::Diverged {
            t: state.t,
            frame: None,
        });
    }
    let arr = |v: Vec<f64>| Array2::from_shape_vec((n, n), v).expect("square field");
    Ok((arr(dh), arr(du), arr(dv)))
}

/// Zero the wall-normal velocities. The stencil rules already keep them at
/// zero through RK4 stages; this pins the invariant after every substep.
fn apply_bc(u: &mut [f64], v: &mut [f64], n: usize) {
    for iy in 0..n {
        u[iy * n] = 0.0;
        u[iy * n + n - 1] = 0.0;
    }
    for ix in 0..n {
        v[ix] = 0.0;
        v[(n - 1) * n + ix] = 0.0;
    }
}

/// CFL-limited internal time step, rounded down so that `dt_out` is an exact
/// integer multiple of it.
pub fn stable_substep(params: &SimParams) -> Result<f64> {
    params.validate()?;
    if !(params.cfl_safety > 0.0) {
        return Err(Error::InvalidParam(
            "cfl_safety must be > 0 for a stable substep".into(),
        ));
    }
    let wave_speed = (params.gravity * params.depth_m).sqrt() + V_MAX_GUESS;
    let raw = params.cfl_safety * params.dx() / wave_speed;
    if !raw.is_finite() || raw <= 0.0 {
        return Err(Error::InvalidParam("degenerate CFL substep".into()));
    }
    let n_sub = (params.dt_out / raw).ceil().max(1.0);
    if n_sub > 1e6 {
        return Err(Error::InvalidParam(format!(
            "CFL substep requires {n_sub} substeps per frame"
        )));
    }
    Ok(params.dt_out / n_sub)
}

/// Number of internal substeps per output frame.
pub fn substeps_per_frame(params: &SimParams) -> Result<usize> {
    let dt = stable_substep(params)?;
    Ok((params.dt_out / dt).round() as usize)
}

fn rk4_substep(state: &mut SimState, dt: f64, params: &SimParams, ws: &mut Workspace) {
    let Workspace {
        n,
        s1,
        s2,
        s3,
        s4,
        s5,
        k,
        th,
        tu,
        tv,
    } = ws;
    let n = *n;
    let sz = n * n;
    let h = state.h.as_slice_mut().unwrap();
    let u = state.u.as_slice_mut().unwrap();
    let v = state.v.as_slice_mut().unwrap();

    // split the k-buffer pool into the 4 stages
    let (k1, rest) = k.as_mut_slice().split_at_mut(3);
    let (k2, rest) = rest.split_at_mut(3);
    let (k3, k4) = rest.split_at_mut(3);

    macro_rules! rhs_stage {
        ($h:expr, $u:expr, $v:expr, $k:expr) => {{
            let (kh, rest) = $k.split_at_mut(1);
            let (ku, kv) = rest.split_at_mut(1);
            rhs_into(
                $h,
                $u,
                $v,
                params,
                s1,
                s2,
                s3,
                s4,
                s5,
                &mut kh[0],
                &mut ku[0],
                &mut kv[0],
            );
        }};
    }

    rhs_stage!(h, u, v, k1);

    let half = dt / 2.0;
    for i in 0..sz {
        th[i] = h[i] + half * k1[0][i];
        tu[i] = u[i] + half * k1[1][i];
        tv[i] = v[i] + half * k1[2][i];
    }
    apply_bc(tu, tv, n);
    rhs_stage!(th, tu, tv, k2);

    for i in 0..sz {
        th[i] = h[i] + half * k2[0][i];
        tu[i] = u[i] + half * k2[1][i];
        tv[i] = v[i] + half * k2[2][i];
    }
    apply_bc(tu, tv, n);
    rhs_stage!(th, tu, tv, k3);

    for i in 0..sz {
        th[i] = h[i] + dt * k3[0][i];
        tu[i] = u[i] + dt * k3[1][i];
        tv[i] = v[i] + dt * k3[2][i];
    }
    apply_bc(tu, tv, n);
    rhs_stage!(th, tu, tv, k4);

    let sixth = dt / 6.0;
    for i in 0..sz {
        h[i] += sixth * (k1[0][i] + 2.0 * k2[0][i] + 2.0 * k3[0][i] + k4[0][i]);
        u[i] += sixth * (k1[1][i] + 2.0 * k2[1][i] + 2.0 * k3[1][i] + k4[1][i]);
        v[i] += sixth * (k1[2][i] + 2.0 * k2[2][i] + 2.0 * k3[2][i] + k4[2][i]);
    }
    apply_bc(u, v, n);
}

/// Advance the state by one output frame interval using a preallocated
/// workspace, checking for divergence afterwards.
pub fn step_in_place(
    state: &mut SimState,
    params: &SimParams,
    ws: &mut Workspace,
) -> Result<()> {
    let dt = stable_substep(params)?;
    let n_sub = (params.dt_out / dt).round() as usize;
    let t0 = state.t;
    for _ in 0..n_sub {
        rk4_substep(state, dt, params, ws);
    }
    state.t = t0 + params.dt_out;
    let depth = params.depth_m;
    let bad = |x: &f64| !x.is_finite();
    if state.h.iter().any(|x| bad(x) || x.abs() > depth)
        || state.u.iter().any(bad)
        || state.v.iter().any(bad)
    {
        return Err(Error::Diverged {
            t: state.t,
            frame: None,
        });
    }
    Ok(())
}

/// Advance the state by one output frame interval.
pub fn step(state: &SimState, params: &SimParams) -> Result<SimState> {
    let mut next = state.clone();
    let mut ws = Workspace::new(params.grid_n);
    step_in_place(&mut next, params, &mut ws)?;
    Ok(next)
}

/// Add a Gaussian bump `A·exp(−r²/2σ²)` centered at fractional grid indices
/// `(cx_idx, cy_idx)`. Working in index offsets keeps a bump centered on the
/// grid midpoint exactly symmetric under reflection in floating point.
pub fn add_gaussian(
    h: &mut Array2<f64>,
    params: &SimParams,
    cx_idx: f64,
    cy_idx: f64,
    amplitude: f64,
    sigma: f64,
) {
    let n = params.grid_n;
    let dx = params.dx();
    let inv = 1.0 / (2.0 * sigma * sigma);
    for iy in 0..n {
        let dy = (iy as f64 - cy_idx) * dx;
        for ix in 0..n {
            let dxm = (ix as f64 - cx_idx) * dx;
            h[[iy, ix]] += amplitude * (-(dxm * dxm + dy * dy) * inv).exp();
        }
    }
}

/// Sample an initial condition of the given kind. Bump centers are uniform
/// over the interior with a margin of 2σ from the walls; velocities start at
/// rest.
pub fn make_initial<R: Rng>(
    kind: InitKind,
    params: &SimParams,
    rng: &mut R,
) -> Result<(SimState, InitialCondition)> {
    params.validate()?;
    let len = params.tank_size_m;
    let sigma = params.sigma_frac * len;
    let amp = params.amplitude_m;
    let margin = 2.0 * sigma;
    if 2.0 * margin >= len {
        return Err(Error::InvalidParam(
            "sigma too large: no interior left after the 2σ wall margin".into(),
        ));
    }
    let dx = params.dx();
    let mut state = SimState::flat(params);
    let sample = |rng: &mut R| -> (f64, f64) {
        (
            rng.random_range(margin..len - margin),
            rng.random_range(margin..len - margin),
        )
    };
    let centers = match kind {
        InitKind::Droplet => {
            let c = sample(rng);
            add_gaussian(&mut state.h, params, c.0 / dx, c.1 / dx, amp, sigma);
            vec![c]
        }
        InitKind::DoubleDroplet => {
            let c1 = sample(rng);
            let mut c2 = sample(rng);
            let mut tries = 0;
            while ((c2.0 - c1.0).powi(2) + (c2.1 - c1.1).powi(2)).sqrt() < sigma {
                c2 = sample(rng);
                tries += 1;
                if tries > 1000 {
                    return Err(Error::InvalidParam(
                        "could not sample distinct droplet centers".into(),
                    ));
                }
            }
            add_gaussian(&mut state.h, params, c1.0 / dx, c1.1 / dx, amp, sigma);
            add_gaussian(&mut state.h, params, c2.0 / dx, c2.1 / dx, amp, sigma);
            vec![c1, c2]
        }
        InitKind::Line => {
            let x0 = rng.random_range(margin..len - margin);
            let ci = x0 / dx;
            let inv = 1.0 / (2.0 * sigma * sigma);
            let n = params.grid_n;
            // constant along y: compute one row and copy it
            let row: Vec<f64> = (0..n)
                .map(|ix| {
                    let d = (ix as f64 - ci) * dx;
                    amp * (-(d * d) * inv).exp()
                })
                .collect();
            for iy in 0..n {
                for ix in 0..n {
                    state.h[[iy, ix]] = row[ix];
                }
            }
            vec![(x0, len / 2.0)]
        }
    };
    Ok((
        state,
        InitialCondition {
            kind,
            centers,
            amplitude: amp,
            width_sigma: sigma,
        },
    ))
}

/// Run a full episode and return the `h` field after each output frame
/// interval, i.e. at t = dt_out·{1..n_frames}.
pub fn run_sequence<R: Rng>(
    params: &SimParams,
    init_kind: InitKind,
    rng: &mut R,
) -> Result<Vec<Array2<f64>>> {
    let (mut state, _) = make_initial(init_kind, params, rng)?;
    let mut ws = Workspace::new(params.grid_n);
    let mut frames = Vec::with_capacity(params.n_frames);
    for frame in 0..params.n_frames {
        step_in_place(&mut state, params, &mut ws).map_err(|e| match e {
            Error::Diverged { t, .. } => Error::Diverged {
                t,
                frame: Some(frame),
            },
            other => other,
        })?;
        state.t = params.dt_out * (frame + 1) as f64;
        frames.push(state.h.clone());
    }
    Ok(frames)
}

// ---------------------------------------------------------------------------
// diagnostics (trapezoidal quadrature; never used by the integrator itself)

fn trapezoid_weight(i: usize, n: usize) -> f64 {
    if i == 0 || i == n - 1 {
        0.5
    } else {
        1.0
    }
}

/// Volume anomaly ∫h dA by trapezoidal quadrature.
pub fn volume_anomaly(h: &Array2<f64>, params: &SimParams) -> f64 {
    let n = params.grid_n;
    let da = params.dx() * params.dx();
    let mut sum = 0.0;
    for iy in 0..n {
        let wy = trapezoid_weight(iy, n);
        for ix in 0..n {
            sum += wy * trapezoid_weight(ix, n) * h[[iy, ix]];
        }
    }
    sum * da
}

/// Energy proxy ∫ (g·h² + (H+h)(u²+v²)) dA by trapezoidal quadrature.
pub fn energy_proxy(state: &SimState, params: &SimParams) -> f64 {
    let n = params.grid_n;
    let da = params.dx() * params.dx();
    let g = params.gravity;
    let depth = params.depth_m;
    let mut sum = 0.0;
    for iy in 0..n {
        let wy = trapezoid_weight(iy, n);
        for ix in 0..n {
            let h = state.h[[iy, ix]];
            let u = state.u[[iy, ix]];
            let v = state.v[[iy, ix]];
            sum += wy * trapezoid_weight(ix, n) * (g * h * h + (depth + h) * (u * u + v * v));
        }
    }
    sum * da
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;
    use rand_chacha::rand_core::SeedableRng;

    fn desk_params() -> SimParams {
        SimParams::default()
    }

    /// Mirror in x: h and v reflect, u reflects and negates.
    fn flip_lr_state(s: &SimState) -> SimState {
        let n = s.h.nrows();
        let mut out = s.clone();
        for iy in 0..n {
            for ix in 0..n {
                out.h[[iy, ix]] = s.h[[iy, n - 1 - ix]];
                out.u[[iy, ix]] = -s.u[[iy, n - 1 - ix]];
                out.v[[iy, ix]] = s.v[[iy, n - 1 - ix]];
            }
        }
        out
    }

    fn flip_lr_field(f: &Array2<f64>) -> Array2<f64> {
        let n = f.nrows();
        Array2::from_shape_fn((n, n), |(iy, ix)| f[[iy, n - 1 - ix]])
    }

    fn flip_ud_field(f: &Array2<f64>) -> Array2<f64> {
        let n = f.nrows();
        Array2::from_shape_fn((n, n), |(iy, ix)| f[[n - 1 - iy, ix]])
    }

    fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    fn centered_droplet(params: &SimParams) -> SimState {
        let mut s = SimState::flat(params);
        let c = (params.grid_n - 1) as f64 / 2.0;
        add_gaussian(
            &mut s.h,
            params,
            c,
            c,
            params.amplitude_m,
            params.sigma_frac * params.tank_size_m,
        );
        s
    }

    #[test]
    fn flat_rest_state_rhs_is_exactly_zero() {
        let p = desk_params();
        let s = SimState::flat(&p);
        let (dh, du, dv) = rhs(&s, &p).unwrap();
        assert!(dh.iter().all(|&x| x == 0.0));
        assert!(du.iter().all(|&x| x == 0.0));
        assert!(dv.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn flat_rest_state_is_a_fixed_point_of_step() {
        let p = desk_params();
        let mut s = SimState::flat(&p);
        let mut ws = Workspace::new(p.grid_n);
        for _ in 0..10 {
            step_in_place(&mut s, &p, &mut ws).unwrap();
        }
        assert!(s.h.iter().all(|&x| x == 0.0));
        assert!(s.u.iter().all(|&x| x == 0.0));
        assert!(s.v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn gaussian_at_rest_momentum_tendency_is_pressure_gradient() {
        let p = desk_params();
        let s = centered_droplet(&p);
        let (dh, du, _dv) = rhs(&s, &p).unwrap();
        // continuity needs nonzero velocity
        assert!(dh.iter().all(|&x| x == 0.0));
        // independent centered differences of h
        let n = p.grid_n;
        let dx = p.dx();
        for iy in 0..n {
            for ix in 1..n - 1 {
                let hx = (s.h[[iy, ix + 1]] - s.h[[iy, ix - 1]]) / (2.0 * dx);
                let expect = -p.gravity * hx;
                assert!(
                    (du[[iy, ix]] - expect).abs() <= 1e-12,
                    "du mismatch at ({iy},{ix}): {} vs {}",
                    du[[iy, ix]],
                    expect
                );
            }
            // walls: zero normal pressure gradient
            assert_eq!(du[[iy, 0]], 0.0);
            assert_eq!(du[[iy, n - 1]], 0.0);
        }
    }

    #[test]
    fn rhs_mirror_equivariance() {
        let p = desk_params();
        // evolve a droplet a few frames to get nonzero velocities
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (mut s, _) = make_initial(InitKind::Droplet, &p, &mut rng).unwrap();
        let mut ws = Workspace::new(p.grid_n);
        for _ in 0..3 {
            step_in_place(&mut s, &p, &mut ws).unwrap();
        }
        let (dh, du, dv) = rhs(&s, &p).unwrap();
        let flipped = flip_lr_state(&s);
        let (fdh, fdu, fdv) = rhs(&flipped, &p).unwrap();
        // tendencies of the mirrored state are the mirrored (and u-negated) tendencies
        assert_eq!(max_abs_diff(&fdh, &flip_lr_field(&dh)), 0.0);
        assert_eq!(max_abs_diff(&fdv, &flip_lr_field(&dv)), 0.0);
        let neg_du = flip_lr_field(&du).mapv(|x| -x);
        assert_eq!(max_abs_diff(&fdu, &neg_du), 0.0);
    }

    #[test]
    fn cfl_substep_matches_frozen_arithmetic() {
        let p = SimParams {
            tank_size_m: 10.0,
            grid_n: 184,
            ..desk_params()
        };
        // raw = 0.4 * (10/183) / sqrt(98.1) ≈ 2.207e-3 → 5 substeps of 2e-3
        let raw = p.cfl_safety * p.dx() / (p.gravity * p.depth_m).sqrt();
        assert!((raw - 2.207e-3).abs() < 1e-5);
        assert_eq!(substeps_per_frame(&p).unwrap(), 5);
        assert!((stable_substep(&p).unwrap() - 0.002).abs() < 1e-15);
    }

    #[test]
    fn cfl_substep_halves_when_grid_doubles() {
        let p64 = desk_params();
        let p128 = SimParams {
            grid_n: 128,
            ..desk_params()
        };
        let dt64 = stable_substep(&p64).unwrap();
        let dt128 = stable_substep(&p128).unwrap();
        assert!((dt64 - 0.005).abs() < 1e-15);
        assert!((dt128 - 0.0025).abs() < 1e-15);
    }

    #[test]
    fn cfl_zero_safety_is_rejected() {
        let p = SimParams {
            cfl_safety: 0.0,
            ..desk_params()
        };
        assert!(matches!(
            stable_substep(&p),
            Err(Error::InvalidParam(_))
        ));
    }

    #[test]
    fn volume_is_conserved_over_100_frames() {
        let p = desk_params();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (mut s, ic) = make_initial(InitKind::Droplet, &p, &mut rng).unwrap();
        let v0 = volume_anomaly(&s.h, &p);
        let scale = p.tank_size_m * p.tank_size_m * ic.amplitude;
        let mut ws = Workspace::new(p.grid_n);
        for _ in 0..100 {
            step_in_place(&mut s, &p, &mut ws).unwrap();
            let v = volume_anomaly(&s.h, &p);
            assert!(
                (v - v0).abs() / scale <= 1e-6,
                "volume drift {} exceeds tolerance",
                (v - v0).abs() / scale
            );
        }
    }

    #[test]
    fn centered_droplet_stays_symmetric() {
        let p = desk_params();
        let mut s = centered_droplet(&p);
        let mut ws = Workspace::new(p.grid_n);
        for _ in 0..40 {
            step_in_place(&mut s, &p, &mut ws).unwrap();
            let h = &s.h;
            assert!(max_abs_diff(h, &flip_lr_field(h)) <= 1e-10);
            assert!(max_abs_diff(h, &flip_ud_field(h)) <= 1e-10);
            assert!(max_abs_diff(h, &h.t().to_owned()) <= 1e-10);
        }
    }

    #[test]
    fn simulation_commutes_with_mirroring() {
        let p = desk_params();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (s0, _) = make_initial(InitKind::Droplet, &p, &mut rng).unwrap();
        let mut a = s0.clone();
        let mut b = flip_lr_state(&s0);
        let mut ws = Workspace::new(p.grid_n);
        for _ in 0..20 {
            step_in_place(&mut a, &p, &mut ws).unwrap();
            step_in_place(&mut b, &p, &mut ws).unwrap();
        }
        let fa = flip_lr_state(&a);
        assert!(max_abs_diff(&b.h, &fa.h) <= 1e-10);
        assert!(max_abs_diff(&b.u, &fa.u) <= 1e-10);
        assert!(max_abs_diff(&b.v, &fa.v) <= 1e-10);
    }

    #[test]
    fn same_seed_gives_bit_identical_sequences() {
        let p = SimParams {
            n_frames: 5,
            ..desk_params()
        };
        let mut r1 = ChaCha8Rng::seed_from_u64(42);
        let mut r2 = ChaCha8Rng::seed_from_u64(42);
        let f1 = run_sequence(&p, InitKind::DoubleDroplet, &mut r1).unwrap();
        let f2 = run_sequence(&p, InitKind::DoubleDroplet, &mut r2).unwrap();
        assert_eq!(f1.len(), 5);
        for (a, b) in f1.iter().zip(&f2) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn droplet_peak_equals_amplitude_on_grid_point() {
        let p = desk_params();
        let mut h = Array2::zeros((p.grid_n, p.grid_n));
        add_gaussian(&mut h, &p, 20.0, 30.0, 0.1, 0.5);
        assert_eq!(h[[30, 20]], 0.1);
        let max = h.iter().cloned().fold(0.0, f64::max);
        assert_eq!(max, 0.1);
    }

    #[test]
    fn random_droplet_peak_is_close_to_amplitude() {
        let p = desk_params();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (s, ic) = make_initial(InitKind::Droplet, &p, &mut rng).unwrap();
        let max = s.h.iter().cloned().fold(0.0, f64::max);
        assert!(max <= p.amplitude_m + 1e-15);
        assert!(max >= 0.9 * p.amplitude_m);
        // margin: centers at least 2σ from every wall
        let (cx, cy) = ic.centers[0];
        let m = 2.0 * ic.width_sigma;
        assert!(cx >= m && cx <= p.tank_size_m - m);
        assert!(cy >= m && cy <= p.tank_size_m - m);
    }

    #[test]
    fn line_init_is_y_invariant() {
        let p = desk_params();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (s, _) = make_initial(InitKind::Line, &p, &mut rng).unwrap();
        for ix in 0..p.grid_n {
            let first = s.h[[0, ix]];
            for iy in 1..p.grid_n {
                assert_eq!(s.h[[iy, ix]], first);
            }
        }
        assert!(s.u.iter().all(|&x| x == 0.0));
        assert!(s.v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn double_droplet_centers_are_distinct() {
        let p = desk_params();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (s, ic) = make_initial(InitKind::DoubleDroplet, &p, &mut rng).unwrap();
        assert_eq!(ic.centers.len(), 2);
        let (c1, c2) = (ic.centers[0], ic.centers[1]);
        let d = ((c1.0 - c2.0).powi(2) + (c1.1 - c2.1).powi(2)).sqrt();
        assert!(d >= ic.width_sigma);
        let max = s.h.iter().cloned().fold(0.0, f64::max);
        assert!(max <= 2.0 * p.amplitude_m + 1e-15);
    }

    #[test]
    fn zero_frames_gives_empty_sequence() {
        let p = SimParams {
            n_frames: 0,
            ..desk_params()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let frames = run_sequence(&p, InitKind::Droplet, &mut rng).unwrap();
        assert!(frames.is_empty());
    }

    #[test]
    fn run_sequence_matches_manual_stepping() {
        let p = SimParams {
            n_frames: 4,
            ..desk_params()
        };
        let mut r1 = ChaCha8Rng::seed_from_u64(21);
        let frames = run_sequence(&p, InitKind::Droplet, &mut r1).unwrap();
        let mut r2 = ChaCha8Rng::seed_from_u64(21);
        let (mut s, _) = make_initial(InitKind::Droplet, &p, &mut r2).unwrap();
        let mut ws = Workspace::new(p.grid_n);
        for frame in frames {
            step_in_place(&mut s, &p, &mut ws).unwrap();
            assert_eq!(frame, s.h);
        }
    }

    #[test]
    fn energy_proxy_is_nonincreasing_with_viscosity() {
        let p = SimParams {
            n_frames: 30,
            ..desk_params()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (mut s, _) = make_initial(InitKind::Droplet, &p, &mut rng).unwrap();
        let e0 = energy_proxy(&s, &p);
        let mut prev = e0;
        let mut ws = Workspace::new(p.grid_n);
        for _ in 0..p.n_frames {
            step_in_place(&mut s, &p, &mut ws).unwrap();
            let e = energy_proxy(&s, &p);
            assert!(
                e <= prev + 1e-3 * e0,
                "energy grew: {prev} -> {e} (e0 = {e0})"
            );
            prev = e;
        }
    }

    #[test]
    fn unstable_cfl_reports_divergence_with_frame() {
        let p = SimParams {
            cfl_safety: 40.0,
            dt_out: 1.0,
            ..desk_params()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        match run_sequence(&p, InitKind::Droplet, &mut rng) {
            Err(Error::Diverged { frame: Some(_), t }) => assert!(t > 0.0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn rhs_rejects_non_finite_state() {
        let p = desk_params();
        let mut s = SimState::flat(&p);
        s.h[[5, 5]] = f64::NAN;
        s.t = 1.25;
        match rhs(&s, &p) {
            Err(Error::Diverged { t, .. }) => assert_eq!(t, 1.25),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn params_invariants_are_checked() {
        let bad = SimParams {
            grid_n: 8,
            ..desk_params()
        };
        assert!(bad.validate().is_err());
        let bad = SimParams {
            depth_m: -1.0,
            ..desk_params()
        };
        assert!(bad.validate().is_err());
        let bad = SimParams {
            dt_out: 0.0,
            ..desk_params()
        };
        assert!(bad.validate().is_err());
    }
}
