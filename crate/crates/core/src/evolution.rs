//! Deterministic dynamics: master-equation propagation, steady state and the
//! Liouvillian gap.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::band::{band_permutation, BandLu};
use crate::error::{invalid, Error, Result};
use crate::model::{hamiltonian, liouvillian, ModelParams};
use crate::quantum::{DensityMatrix, Operator, PureState, Tolerances, C64, ONE, ZERO};
use crate::sparse::{unvectorize, vec_trace, vectorize, Superoperator};

/// Default cap for the adaptive Fock cutoff.
pub const DEFAULT_MAX_N_CUTOFF: usize = 80;

/// Options shared by the deterministic solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// RK4 step; `None` selects [`default_dt`].
    pub dt: Option<f64>,
    pub max_n_cutoff: usize,
    /// Allowed population in the top 10% of Fock levels.
    pub tail_tol: f64,
    /// Retry with a larger cutoff when the tail check fails.
    pub adaptive: bool,
    pub check_invariants: bool,
    pub tolerances: Tolerances,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            dt: None,
            max_n_cutoff: DEFAULT_MAX_N_CUTOFF,
            tail_tol: 1e-6,
            adaptive: true,
            check_invariants: true,
            tolerances: Tolerances::default(),
        }
    }
}

/// RK4 step keeping the fastest Liouvillian mode well inside the stability
/// region: 0.2 divided by the spectral extent of the generator.
pub fn default_dt(p: &ModelParams) -> Result<f64> {
    let h = hamiltonian(p)?;
    let ev = h.into_matrix().symmetric_eigenvalues();
    let spread = ev.max() - ev.min();
    let damping = p.kappa * (p.n_cutoff as f64 - 1.0);
    let extent = (spread * spread + damping * damping).sqrt().max(1e-12);
    Ok(0.2 / extent)
}

/// Initial states that can be rebuilt at any Fock cutoff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialState {
    /// Cavity vacuum, qubit down.
    VacuumDown,
    /// Fock state |n⟩ with the qubit in `qubit` (0 = ↓, 1 = ↑).
    Fock { n: usize, qubit: usize },
    /// Real-amplitude coherent state |α⟩ with the qubit in `qubit`.
    Coherent { alpha: f64, qubit: usize },
}

impl Default for InitialState {
    fn default() -> Self {
        InitialState::VacuumDown
    }
}

impl InitialState {
    pub fn pure(&self, n_cutoff: usize) -> Result<PureState> {
        match *self {
            InitialState::VacuumDown => PureState::vacuum_down(n_cutoff),
            InitialState::Fock { n, qubit } => PureState::fock(n_cutoff, qubit, n),
            InitialState::Coherent { alpha, qubit } => {
                if qubit > 1 {
                    return Err(invalid("qubit index must be 0 or 1"));
                }
                let mut v = DVector::zeros(2 * n_cutoff);
                let mut amp = (-alpha * alpha / 2.0).exp();
                for n in 0..n_cutoff {
                    if n > 0 {
                        amp *= alpha / (n as f64).sqrt();
                    }
                    v[qubit * n_cutoff + n] = C64::new(amp, 0.0);
                }
                PureState::new(v)
            }
        }
    }

    pub fn density(&self, n_cutoff: usize) -> Result<DensityMatrix> {
        Ok(self.pure(n_cutoff)?.to_density())
    }
}

/// Pad a state defined at cutoff `from` with empty Fock levels up to `to`.
pub fn embed_density(rho: &DensityMatrix, from: usize, to: usize) -> Result<DensityMatrix> {
    if to < from {
        return Err(invalid("embedding can only enlarge the Fock space"));
    }
    let m = rho.matrix();
    let mut out = DMatrix::zeros(2 * to, 2 * to);
    for j in 0..2 * from {
        for i in 0..2 * from {
            out[((i / from) * to + i % from, (j / from) * to + j % from)] = m[(i, j)];
        }
    }
    let op = Operator::from_matrix(out)?;
    Ok(if rho.is_normalized() {
        DensityMatrix::from_operator_unchecked(op)
    } else {
        DensityMatrix::unnormalized(op)
    })
}

/// Scratch space for classic RK4 on a flat complex vector.
#[derive(Debug, Clone)]
pub(crate) struct Rk4 {
    k1: Vec<C64>,
    k2: Vec<C64>,
    k3: Vec<C64>,
    k4: Vec<C64>,
    tmp: Vec<C64>,
}

impl Rk4 {
    pub(crate) fn new(n: usize) -> Self {
        Self {
            k1: vec![ZERO; n],
            k2: vec![ZERO; n],
            k3: vec![ZERO; n],
            k4: vec![ZERO; n],
            tmp: vec![ZERO; n],
        }
    }

    /// Advance `x` by one step `h` of ẋ = f(x).
    pub(crate) fn step<F: FnMut(&[C64], &mut [C64])>(&mut self, f: &mut F, x: &mut [C64], h: f64) {
        let n = x.len();
        let hh = C64::new(h / 2.0, 0.0);
        let hf = C64::new(h, 0.0);
        f(x, &mut self.k1);
        for i in 0..n {
            self.tmp[i] = x[i] + hh * self.k1[i];
        }
        f(&self.tmp, &mut self.k2);
        for i in 0..n {
            self.tmp[i] = x[i] + hh * self.k2[i];
        }
        f(&self.tmp, &mut self.k3);
        for i in 0..n {
            self.tmp[i] = x[i] + hf * self.k3[i];
        }
        f(&self.tmp, &mut self.k4);
        let h6 = C64::new(h / 6.0, 0.0);
        for i in 0..n {
            x[i] += h6 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
    }
}

/// Number of equal steps no longer than `dt` covering `span`.
pub(crate) fn substeps(span: f64, dt: f64) -> (usize, f64) {
    if span <= 0.0 {
        return (0, 0.0);
    }
    let n = (span / dt - 1e-9).ceil().max(1.0) as usize;
    (n, span / n as f64)
}

/// Integrate ẋ = Lx from `t0` across increasing `times`, calling `record`
/// at each grid point.
pub(crate) fn integrate_linear<R: FnMut(usize, &[C64]) -> Result<()>>(
    l: &Superoperator,
    x: &mut [C64],
    times: &[f64],
    dt: f64,
    mut record: R,
) -> Result<()> {
    let mut rk = Rk4::new(x.len());
    let mut f = |a: &[C64], b: &mut [C64]| l.apply_into(a, b);
    let mut t = 0.0;
    for (k, &target) in times.iter().enumerate() {
        let (n, h) = substeps(target - t, dt);
        for _ in 0..n {
            rk.step(&mut f, x, h);
        }
        t = target;
        if x.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Instability(format!("non-finite state at t = {t}")));
        }
        record(k, x)?;
    }
    Ok(())
}

pub(crate) fn check_grid(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(invalid("time grid is empty"));
    }
    let mut prev = 0.0;
    for &t in times {
        if !(t >= prev) || !t.is_finite() {
            return Err(invalid("time grid must be finite, nonnegative and nondecreasing"));
        }
        prev = t;
    }
    Ok(())
}

/// Uniform grid `t_final·k/n`, k = 0..=n.
pub fn uniform_grid(t_final: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|k| t_final * k as f64 / n as f64).collect()
}

/// Logarithmic grid of `n` points from `t_min` to `t_max`.
pub fn log_grid(t_min: f64, t_max: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![t_max];
    }
    let (a, b) = (t_min.ln(), t_max.ln());
    (0..n)
        .map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp())
        .collect()
}

/// States of a propagation on the requested grid.
#[derive(Debug, Clone)]
pub struct PropagationResult {
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix>,
    pub truncation_ok: bool,
    pub params: ModelParams,
    pub dt: f64,
}

impl PropagationResult {
    /// ⟨n̂⟩ at each grid point.
    pub fn photon_number(&self) -> Vec<f64> {
        let nc = self.params.n_cutoff;
        self.states
            .iter()
            .map(|s| {
                let m = s.matrix();
                (0..2 * nc).map(|i| m[(i, i)].re * (i % nc) as f64).sum()
            })
            .collect()
    }
}

fn propagate_once(
    rho0: &DensityMatrix,
    p: &ModelParams,
    times: &[f64],
    opts: &SolverOptions,
) -> Result<(PropagationResult, f64)> {
    let d = p.dim();
    if rho0.matrix().nrows() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: rho0.matrix().nrows(),
        });
    }
    let l = liouvillian(p)?;
    let dt = match opts.dt {
        Some(dt) if dt > 0.0 => dt,
        Some(dt) => return Err(invalid(format!("dt must be positive, got {dt}"))),
        None => default_dt(p)?,
    };
    let mut x = vectorize(rho0.matrix());
    let tr0 = vec_trace(x.as_slice(), d);
    let mut states = Vec::with_capacity(times.len());
    let mut worst_tail = 0.0f64;
    let tol = opts.tolerances;
    integrate_linear(&l, x.as_mut_slice(), times, dt, |k, v| {
        let tr = vec_trace(v, d);
        if (tr - tr0).norm() > 1e-6 {
            return Err(Error::Instability(format!(
                "trace drifted by {:.2e} at t = {}",
                (tr - tr0).norm(),
                times[k]
            )));
        }
        let m = unvectorize(&DVector::from_column_slice(v), d);
        let rho = DensityMatrix::unnormalized(Operator::from_matrix(m)?);
        worst_tail = worst_tail.max(rho.top_decile_population(p.n_cutoff));
        if opts.check_invariants {
            let herm = rho.operator().hermiticity_residual();
            if herm > tol.density_hermitian {
                return Err(Error::Instability(format!("Hermiticity lost ({herm:.2e})")));
            }
            let min_ev = rho.min_eigenvalue();
            if min_ev < -1e-7 {
                return Err(Error::Instability(format!("negative eigenvalue {min_ev:.2e}")));
            }
        }
        states.push(if rho0.is_normalized() {
            DensityMatrix::from_operator_unchecked(rho.operator().clone())
        } else {
            rho
        });
        Ok(())
    })?;
    Ok((
        PropagationResult {
            times: times.to_vec(),
            states,
            truncation_ok: worst_tail < opts.tail_tol,
            params: *p,
            dt,
        },
        worst_tail,
    ))
}

/// Run `f` at increasing Fock cutoffs until its reported tail population
/// falls below `opts.tail_tol`.
pub fn with_adaptive_cutoff<T, F>(p: &ModelParams, opts: &SolverOptions, mut f: F) -> Result<(T, ModelParams)>
where
    F: FnMut(&ModelParams) -> Result<(T, f64)>,
{
    let mut q = *p;
    loop {
        let (out, tail) = f(&q)?;
        if tail < opts.tail_tol {
            return Ok((out, q));
        }
        if !opts.adaptive || q.n_cutoff >= opts.max_n_cutoff {
            return Err(Error::Truncation {
                n_cutoff: q.n_cutoff,
                tail,
            });
        }
        let next = ((q.n_cutoff as f64) * 1.5).ceil() as usize;
        log::info!("tail {tail:.2e} at n_cutoff {}, retrying with {}", q.n_cutoff, next.min(opts.max_n_cutoff));
        q.n_cutoff = next.min(opts.max_n_cutoff);
    }
}

/// Propagate ρ̇ = 𝓛ρ and record the state at each time in `times`.
pub fn propagate(
    rho0: &InitialState,
    p: &ModelParams,
    times: &[f64],
    opts: &SolverOptions,
) -> Result<PropagationResult> {
    p.validate()?;
    check_grid(times)?;
    let (res, _) = with_adaptive_cutoff(p, opts, |q| propagate_once(&rho0.density(q.n_cutoff)?, q, times, opts))?;
    Ok(res)
}

/// Propagate an explicit density matrix at the cutoff of `p` (no retries).
pub fn propagate_density(
    rho0: &DensityMatrix,
    p: &ModelParams,
    times: &[f64],
    opts: &SolverOptions,
) -> Result<PropagationResult> {
    p.validate()?;
    check_grid(times)?;
    let (res, tail) = propagate_once(rho0, p, times, opts)?;
    if tail >= opts.tail_tol {
        return Err(Error::Truncation {
            n_cutoff: p.n_cutoff,
            tail,
        });
    }
    Ok(res)
}

/// How a steady state was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SteadyStateMethod {
    LinearSolve,
    Propagation,
}

#[derive(Debug, Clone)]
pub struct SteadyState {
    pub state: DensityMatrix,
    /// ‖𝓛ρ‖ / ‖𝓛‖ (Frobenius norms).
    pub residual: f64,
    pub params: ModelParams,
    pub method: SteadyStateMethod,
}

impl SteadyState {
    pub fn photon_number(&self) -> f64 {
        let nc = self.params.n_cutoff;
        let m = self.state.matrix();
        (0..2 * nc).map(|i| m[(i, i)].re * (i % nc) as f64).sum()
    }
}

fn hermitize(m: &DMatrix<C64>) -> DMatrix<C64> {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

fn residual_of(l: &Superoperator, x: &DVector<C64>) -> f64 {
    l.apply(x).norm() / (l.norm_frobenius() * x.norm()).max(f64::MIN_POSITIVE)
}

fn steady_state_linear(l: &Superoperator, p: &ModelParams) -> Result<DVector<C64>> {
    let d = p.dim();
    let n = d * d;
    let perm = band_permutation(p.n_cutoff);
    let lp = l.permuted(&perm);
    // (0,↓;0,↓) diagonal element: band index 0
    let k = perm[0];
    let mut b = crate::sparse::TripletBuilder::new(n);
    for (r, c, v) in lp.iter() {
        if r != k {
            b.push(r, c, v);
        }
    }
    b.push(k, k, ONE);
    let lu = BandLu::factor(&b.build())?;
    if lu.pivot_ratio() < 1e-13 {
        return Err(Error::Singular(format!(
            "pivot ratio {:.2e} indicates a degenerate kernel",
            lu.pivot_ratio()
        )));
    }
    let mut y = vec![ZERO; n];
    y[k] = ONE;
    lu.solve_in_place(&mut y);
    let mut x = DVector::zeros(n);
    for (i, &pi) in perm.iter().enumerate() {
        x[i] = y[pi];
    }
    let tr = vec_trace(x.as_slice(), d);
    if tr.norm() < 1e-14 {
        return Err(Error::Singular("steady-state solution has vanishing trace".into()));
    }
    Ok(x / tr)
}

fn steady_state_by_propagation(l: &Superoperator, p: &ModelParams, opts: &SolverOptions) -> Result<DVector<C64>> {
    let d = p.dim();
    let dt = opts.dt.unwrap_or(default_dt(p)?);
    let mut x = vectorize(InitialState::VacuumDown.density(p.n_cutoff)?.matrix());
    let target = 1e-10;
    let chunk = 10.0 / p.kappa.max(1e-3);
    let mut rk = Rk4::new(x.len());
    let mut f = |a: &[C64], b: &mut [C64]| l.apply_into(a, b);
    for _ in 0..1000 {
        if residual_of(l, &x) < target {
            let tr = vec_trace(x.as_slice(), d);
            return Ok(x / tr);
        }
        let (n, h) = substeps(chunk, dt);
        for _ in 0..n {
            rk.step(&mut f, x.as_mut_slice(), h);
        }
    }
    Err(Error::NotConverged(format!(
        "propagation did not reach stationarity (residual {:.2e})",
        residual_of(l, &x)
    )))
}

fn steady_state_once(p: &ModelParams, opts: &SolverOptions) -> Result<(SteadyState, f64)> {
    let l = liouvillian(p)?;
    let d = p.dim();
    let (x, method) = match steady_state_linear(&l, p) {
        Ok(x) if residual_of(&l, &x) < 1e-10 => (x, SteadyStateMethod::LinearSolve),
        Ok(x) => {
            warn!(
                "linear steady-state residual {:.2e}; falling back to propagation",
                residual_of(&l, &x)
            );
            (steady_state_by_propagation(&l, p, opts)?, SteadyStateMethod::Propagation)
        }
        Err(Error::Singular(msg)) => {
            log::info!("steady-state solve singular ({msg}); falling back to propagation");
            (steady_state_by_propagation(&l, p, opts)?, SteadyStateMethod::Propagation)
        }
        Err(e) => return Err(e),
    };
    let residual = residual_of(&l, &x);
    let m = hermitize(&unvectorize(&x, d));
    let state = DensityMatrix::with_tolerances(Operator::from_matrix(m)?, &opts.tolerances)?;
    let min_ev = state.min_eigenvalue();
    if min_ev < -opts.tolerances.positivity {
        return Err(Error::Singular(format!("steady state not positive (min eigenvalue {min_ev:.2e})")));
    }
    let tail = state.top_decile_population(p.n_cutoff);
    Ok((
        SteadyState {
            state,
            residual,
            params: *p,
            method,
        },
        tail,
    ))
}

/// Solve 𝓛ρ = 0 with tr ρ = 1, refining the Fock cutoff as needed.
pub fn steady_state(p: &ModelParams, opts: &SolverOptions) -> Result<SteadyState> {
    p.validate()?;
    if !(p.kappa > 0.0) {
        return Err(invalid("steady state requires kappa > 0"));
    }
    let (ss, _) = with_adaptive_cutoff(p, opts, |q| steady_state_once(q, opts))?;
    Ok(ss)
}

/// How a gap value was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GapMethod {
    SparseEigensolve,
    DecayFit,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapResult {
    pub gap: f64,
    pub method: GapMethod,
    /// Ritz residual for the eigensolve, fit RMS for the decay fit.
    pub residual: f64,
    /// True when the eigensolve failed and the decay fit was used instead.
    pub fallback: bool,
    pub n_cutoff: usize,
}

/// Eigenvalues with Ritz residuals near a set of shifts.
#[derive(Debug, Clone)]
pub struct RitzValue {
    pub value: C64,
    pub residual: f64,
}

/// Shift-invert Arnoldi on 𝓛: eigenvalues of 𝓛 closest to `shift`.
pub fn shift_invert_eigenvalues(l: &Superoperator, p: &ModelParams, shift: C64, krylov_dim: usize) -> Result<Vec<RitzValue>> {
    let n = l.dim();
    let perm = band_permutation(p.n_cutoff);
    let lp = l.permuted(&perm).shifted(-shift);
    let lu = BandLu::factor(&lp)?;
    let m = krylov_dim.min(n);
    let mut basis: Vec<DVector<C64>> = Vec::with_capacity(m + 1);
    let mut h = DMatrix::<C64>::zeros(m + 1, m);
    // deterministic, unstructured start vector
    let mut v0 = DVector::from_fn(n, |i, _| {
        let x = ((i as f64 + 1.0) * 0.618_033_988_749_895).fract();
        let y = ((i as f64 + 1.0) * 0.414_213_562_373_095).fract();
        C64::new(x - 0.5, y - 0.5)
    });
    v0 /= C64::new(v0.norm(), 0.0);
    basis.push(v0);
    let mut size = m;
    for j in 0..m {
        let mut w = basis[j].clone();
        lu.solve_in_place(w.as_mut_slice());
        for _ in 0..2 {
            for (i, b) in basis.iter().enumerate() {
                let c = b.dotc(&w);
                h[(i, j)] += c;
                w.axpy(-c, b, ONE);
            }
        }
        let beta = w.norm();
        h[(j + 1, j)] = C64::new(beta, 0.0);
        if beta < 1e-13 * h.column(j).norm() {
            size = j + 1;
            break;
        }
        basis.push(w / C64::new(beta, 0.0));
    }
    let hm = h.view((0, 0), (size, size)).into_owned();
    let beta = h[(size, size - 1)].norm();
    let schur = nalgebra::Schur::try_new(hm, 1e-14, 10_000)
        .ok_or_else(|| Error::NotConverged("Hessenberg Schur decomposition failed".into()))?;
    let (q, t) = schur.unpack();
    let mut out = Vec::with_capacity(size);
    for k in 0..size {
        let mu = t[(k, k)];
        // eigenvector of upper-triangular T by back substitution
        let mut z = DVector::<C64>::zeros(size);
        z[k] = ONE;
        for i in (0..k).rev() {
            let mut acc = ZERO;
            for jj in i + 1..=k {
                acc += t[(i, jj)] * z[jj];
            }
            let denom = t[(i, i)] - mu;
            let denom = if denom.norm() < 1e-300 { C64::new(1e-300, 0.0) } else { denom };
            z[i] = -acc / denom;
        }
        let y = &q * &z;
        let res = beta * y[size - 1].norm() / (y.norm() * mu.norm()).max(f64::MIN_POSITIVE);
        out.push(RitzValue {
            value: shift + ONE / mu,
            residual: res,
        });
    }
    Ok(out)
}

/// Options for [`liouvillian_gap`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GapOptions {
    pub krylov_dim: usize,
    /// Ritz residual below which a pair counts as converged.
    pub ritz_tol: f64,
    /// Eigenvalues with |Re λ| below this are treated as stationary.
    pub zero_tol: f64,
    pub solver: SolverOptions,
}

impl Default for GapOptions {
    fn default() -> Self {
        Self {
            krylov_dim: 120,
            ritz_tol: 1e-8,
            zero_tol: 1e-9,
            solver: SolverOptions::default(),
        }
    }
}

fn gap_eigensolve(p: &ModelParams, opts: &GapOptions) -> Result<GapResult> {
    let l = liouvillian(p)?;
    let s = 1e-2 * p.kappa;
    let shifts = [C64::new(s, 0.0), C64::new(s, p.omega), C64::new(s, -p.omega)];
    let mut best: Option<RitzValue> = None;
    for &shift in &shifts {
        for r in shift_invert_eigenvalues(&l, p, shift, opts.krylov_dim)? {
            if r.residual > opts.ritz_tol || r.value.re >= -opts.zero_tol {
                continue;
            }
            if best.as_ref().map_or(true, |b| r.value.re > b.value.re) {
                best = Some(r);
            }
        }
    }
    let best = best.ok_or_else(|| Error::NotConverged("no converged nonstationary eigenvalue".into()))?;
    Ok(GapResult {
        gap: -best.value.re,
        method: GapMethod::SparseEigensolve,
        residual: best.residual,
        fallback: false,
        n_cutoff: p.n_cutoff,
    })
}

/// Gap from the late-time decay of ‖ρ(t) − ρ_st‖ starting from a
/// parity-breaking state.
pub fn gap_decay_fit(p: &ModelParams, opts: &SolverOptions) -> Result<GapResult> {
    let ss = steady_state(p, opts)?;
    let q = ss.params;
    let l = liouvillian(&q)?;
    let dt = opts.dt.unwrap_or(default_dt(&q)?);
    let x_st = vectorize(ss.state.matrix());
    let rho0 = InitialState::Coherent { alpha: 0.5, qubit: 0 }.density(q.n_cutoff)?;
    let mut x = vectorize(rho0.matrix());
    let mut rk = Rk4::new(x.len());
    let mut f = |a: &[C64], b: &mut [C64]| l.apply_into(a, b);
    let t_start = 10.0 / q.kappa;
    let sample = 0.5 / q.kappa;
    let (n, h) = substeps(t_start, dt);
    for _ in 0..n {
        rk.step(&mut f, x.as_mut_slice(), h);
    }
    let dev0 = (&x - &x_st).norm();
    if dev0 < 1e-11 {
        return Err(Error::NotConverged("deviation vanished before the fit window".into()));
    }
    let mut ts = vec![t_start];
    let mut ys = vec![dev0.ln()];
    let t_max = t_start + 2e4 / q.kappa;
    let mut t = t_start;
    let (n, h) = substeps(sample, dt);
    while t < t_max {
        for _ in 0..n {
            rk.step(&mut f, x.as_mut_slice(), h);
        }
        t += sample;
        let dev = (&x - &x_st).norm();
        ts.push(t);
        ys.push(dev.ln());
        if dev < dev0 * (-4.0f64).exp() || dev < 1e-9 * x_st.norm() {
            break;
        }
    }
    if ts.len() < 8 {
        return Err(Error::NotConverged("too few samples in the decay window".into()));
    }
    // discard the first quarter of the window
    let skip = ts.len() / 4;
    let (ts, ys) = (&ts[skip..], &ys[skip..]);
    let nf = ts.len() as f64;
    let mt = ts.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxy: f64 = ts.iter().zip(ys).map(|(t, y)| (t - mt) * (y - my)).sum();
    let sxx: f64 = ts.iter().map(|t| (t - mt).powi(2)).sum();
    let slope = sxy / sxx;
    let rms = (ts
        .iter()
        .zip(ys)
        .map(|(t, y)| (y - my - slope * (t - mt)).powi(2))
        .sum::<f64>()
        / nf)
        .sqrt();
    Ok(GapResult {
        gap: -slope,
        method: GapMethod::DecayFit,
        residual: rms,
        fallback: false,
        n_cutoff: q.n_cutoff,
    })
}

/// Liouvillian gap ε = −max{Re λ : Re λ < 0}.
pub fn liouvillian_gap(p: &ModelParams, opts: &GapOptions) -> Result<GapResult> {
    p.validate()?;
    if !(p.kappa > 0.0) {
        return Err(invalid("gap requires kappa > 0"));
    }
    // the cutoff is the one validated by the steady-state tail check
    let ss = steady_state(p, &opts.solver)?;
    let q = ss.params;
    match gap_eigensolve(&q, opts) {
        Ok(g) => Ok(g),
        Err(Error::NotConverged(msg)) | Err(Error::Singular(msg)) => {
            warn!("eigensolve failed ({msg}); using decay fit");
            let mut g = gap_decay_fit(&q, &opts.solver)?;
            g.fallback = true;
            Ok(g)
        }
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{g_critical, params_at};
    use crate::model::ModelOperators;
    use crate::quantum::QuantumState;

    fn opts() -> SolverOptions {
        SolverOptions::default()
    }

    #[test]
    fn damped_single_photon() {
        let p = params_at(1.0, 2.0, 1.0, 0.3).unwrap().with_lambda(0.0).with_n_cutoff(4);
        let times = uniform_grid(10.0, 20);
        let r = propagate(&InitialState::Fock { n: 1, qubit: 0 }, &p, &times, &opts()).unwrap();
        for (t, n) in times.iter().zip(r.photon_number()) {
            assert!((n - (-0.3 * t).exp()).abs() < 1e-9, "t={t}");
        }
    }

    #[test]
    fn unitary_limit_conserves_purity() {
        let p = ModelParams {
            omega: 1.0,
            big_omega: 3.0,
            lambda: 0.6,
            kappa: 0.0,
            efficiency: 1.0,
            n_cutoff: 12,
        };
        let r = propagate(&InitialState::VacuumDown, &p, &uniform_grid(5.0, 5), &opts()).unwrap();
        for s in &r.states {
            assert!((s.purity() - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn steady_state_decoupled_is_vacuum_down() {
        let p = params_at(1.0, 5.0, 1.0, 0.1).unwrap().with_lambda(0.0);
        let ss = steady_state(&p, &opts()).unwrap();
        let target = InitialState::VacuumDown.density(ss.params.n_cutoff).unwrap();
        assert!(ss.state.trace_distance(&target).unwrap() < 1e-10);
    }

    #[test]
    fn steady_state_residual_and_fixed_point() {
        let p = params_at(g_critical(1.0, 0.1).unwrap(), 5.0, 1.0, 0.1).unwrap();
        let ss = steady_state(&p, &opts()).unwrap();
        assert_eq!(ss.method, SteadyStateMethod::LinearSolve);
        assert!(ss.residual < 1e-10);
        let q = ss.params;
        let r = propagate_density(&ss.state, &q, &[50.0, 100.0], &opts()).unwrap();
        for s in &r.states {
            assert!(s.trace_distance(&ss.state).unwrap() < 1e-7);
        }
    }

    #[test]
    fn long_propagation_reaches_steady_state() {
        let p = params_at(g_critical(1.0, 0.1).unwrap(), 10.0, 1.0, 0.1).unwrap();
        let ss = steady_state(&p, &opts()).unwrap();
        let q = ss.params;
        // gap ≈ 4e-3 at η = 10: e^{-εt} < 1e-7 needs t ≈ 4000
        let r = propagate(&InitialState::VacuumDown, &q, &[5000.0], &opts()).unwrap();
        let dist = r.states[0].trace_distance(&ss.state).unwrap();
        assert!(dist < 1e-6, "trace distance {dist:.2e}");
    }

    #[test]
    fn gap_decoupled_is_half_kappa() {
        let p = params_at(1.0, 5.0, 1.0, 0.1).unwrap().with_lambda(0.0);
        let g = liouvillian_gap(&p, &GapOptions::default()).unwrap();
        assert_eq!(g.method, GapMethod::SparseEigensolve);
        assert!((g.gap - 0.05).abs() < 1e-8, "gap {}", g.gap);
    }

    #[test]
    fn gap_methods_agree() {
        for eta in [5.0, 10.0] {
            let p = params_at(g_critical(1.0, 0.1).unwrap(), eta, 1.0, 0.1).unwrap();
            let a = liouvillian_gap(&p, &GapOptions::default()).unwrap();
            let b = gap_decay_fit(&p, &opts()).unwrap();
            assert!((a.gap - b.gap).abs() < 0.05 * a.gap, "eta {eta}: {} vs {}", a.gap, b.gap);
        }
    }

    #[test]
    fn shift_invert_matches_dense_spectrum() {
        let p = params_at(1.2, 2.0, 1.0, 0.5).unwrap().with_n_cutoff(3);
        let l = liouvillian(&p).unwrap();
        let dense = l.to_dense();
        let (_, t) = nalgebra::Schur::new(dense).unpack();
        let ev: Vec<C64> = t.diagonal().iter().copied().collect();
        let ritz = shift_invert_eigenvalues(&l, &p, C64::new(0.01, 0.0), 36).unwrap();
        for r in ritz.iter().filter(|r| r.residual < 1e-8) {
            let close = ev.iter().any(|e| (e - r.value).norm() < 1e-7);
            assert!(close, "{} not in dense spectrum", r.value);
        }
    }

    #[test]
    fn embedding_preserves_expectations() {
        let rho = InitialState::Coherent { alpha: 0.7, qubit: 1 }.density(8).unwrap();
        let big = embed_density(&rho, 8, 12).unwrap();
        let n8 = ModelOperators::new(8).unwrap().n;
        let n12 = ModelOperators::new(12).unwrap().n;
        let a = rho.expectation(&n8).unwrap();
        let b = big.expectation(&n12).unwrap();
        assert!((a - b).norm() < 1e-14);
    }

    #[test]
    fn rejects_bad_grid() {
        let p = params_at(1.0, 2.0, 1.0, 0.3).unwrap();
        assert!(propagate(&InitialState::VacuumDown, &p, &[1.0, 0.5], &opts()).is_err());
        assert!(propagate(&InitialState::VacuumDown, &p, &[], &opts()).is_err());
    }
}
