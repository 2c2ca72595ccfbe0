//! Fisher information of photon-counting records and the global quantum
//! Fisher information of system plus emitted field.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correlators::{CorrelatorStart, SparseOp};
use crate::error::{invalid, Error, Result};
use crate::evolution::{
    check_grid, default_dt, propagate, substeps, with_adaptive_cutoff, InitialState, Rk4,
    SolverOptions,
};
use crate::model::{generalized_liouvillian, hamiltonian, hamiltonian_derivative, liouvillian, ModelParams, Parameter};
use crate::quantum::{C64, ZERO};
use crate::rng::trajectory_seed;
use crate::sparse::{vec_expectation, vec_trace, vectorize};
use crate::trajectories::{max_bin_width, Unraveling};

/// Trajectories used for the δ versus δ/2 score comparison.
pub const RICHARDSON_SUBSET: usize = 32;

/// Monte Carlo estimate of the photon-counting Fisher information.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FIEstimate {
    pub t_grid: Vec<f64>,
    pub fi: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n_traj: usize,
    /// Absolute step used for the score difference.
    pub delta_omega: f64,
    /// Largest relative change of the subset estimate when δ is halved.
    pub richardson_rel: f64,
    /// False when the δ/2 comparison exceeded 1%.
    pub richardson_ok: bool,
    /// Grid points where the estimate falls below −3·stderr.
    pub negative_flags: Vec<usize>,
    pub n_cutoff: usize,
    pub dt: f64,
    pub mean_clicks: f64,
}

/// Squared-score samples: `scores[i * n_grid + k]` is the score of
/// trajectory `i` at grid point `k`.
#[derive(Debug, Clone)]
pub struct ScoreSamples {
    pub t_grid: Vec<f64>,
    pub scores: Vec<f64>,
    pub n_traj: usize,
    pub delta_omega: f64,
    pub richardson_rel: f64,
    pub n_cutoff: usize,
    pub dt: f64,
    pub clicks: Vec<usize>,
}

impl ScoreSamples {
    /// Estimate from the first `n` trajectories (index order).
    pub fn estimate(&self, n: usize) -> Result<FIEstimate> {
        if n < 2 || n > self.n_traj {
            return Err(invalid(format!("need 2 <= n <= {}, got {n}", self.n_traj)));
        }
        let g = self.t_grid.len();
        let mut fi = vec![0.0; g];
        let mut stderr = vec![0.0; g];
        for k in 0..g {
            let mut sum = 0.0;
            for i in 0..n {
                sum += self.scores[i * g + k].powi(2);
            }
            let mean = sum / n as f64;
            let mut var = 0.0;
            for i in 0..n {
                var += (self.scores[i * g + k].powi(2) - mean).powi(2);
            }
            var /= (n - 1) as f64;
            fi[k] = mean;
            stderr[k] = (var / n as f64).sqrt();
        }
        let negative_flags = (0..g).filter(|&k| fi[k] < -3.0 * stderr[k]).collect();
        Ok(FIEstimate {
            t_grid: self.t_grid.clone(),
            fi,
            stderr,
            n_traj: n,
            delta_omega: self.delta_omega,
            richardson_rel: self.richardson_rel,
            richardson_ok: self.richardson_rel <= 0.01,
            negative_flags,
            n_cutoff: self.n_cutoff,
            dt: self.dt,
            mean_clicks: self.clicks[..n].iter().sum::<usize>() as f64 / n as f64,
        })
    }
}

/// Settings for [`fi_photon_counting`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FiOptions {
    pub n_traj: usize,
    /// Relative step δ/ω of the two-sided score difference.
    pub delta_rel: f64,
    pub master_seed: u64,
    /// Bin width; `None` uses the largest safe width.
    pub dt: Option<f64>,
    pub solver: SolverOptions,
}

impl Default for FiOptions {
    fn default() -> Self {
        Self {
            n_traj: 1000,
            delta_rel: 1e-4,
            master_seed: 0,
            dt: None,
            solver: SolverOptions::default(),
        }
    }
}

/// Fock cutoff that passes the tail check for the unconditional dynamics
/// from `init` over the whole grid.
pub fn validated_cutoff(p: &ModelParams, init: &InitialState, t_grid: &[f64], opts: &SolverOptions) -> Result<ModelParams> {
    let res = propagate(init, p, t_grid, &SolverOptions { check_invariants: false, ..*opts })?;
    Ok(res.params)
}

/// Score samples ∂_ω ln P[D(t,0)] over `n_traj` records, for the vacuum ⊗ ↓
/// start.
pub fn fi_scores(p: &ModelParams, t_grid: &[f64], opts: &FiOptions) -> Result<ScoreSamples> {
    p.validate()?;
    check_grid(t_grid)?;
    if opts.n_traj < 2 {
        return Err(invalid(format!("n_traj must be at least 2, got {}", opts.n_traj)));
    }
    if !(opts.delta_rel > 0.0 && opts.delta_rel <= 1e-2) {
        return Err(invalid(format!("delta_rel must lie in (0, 1e-2], got {}", opts.delta_rel)));
    }
    let init = InitialState::VacuumDown;
    let q = validated_cutoff(p, &init, t_grid, &opts.solver)?;
    let dt = opts.dt.unwrap_or_else(|| max_bin_width(&q));
    let t_max = *t_grid.last().expect("nonempty grid");
    let n_bins = ((t_max / dt).round() as usize).max(1);
    let breakpoints: Vec<usize> = t_grid.iter().map(|t| ((t / dt).round() as usize).min(n_bins)).collect();
    let delta = opts.delta_rel * q.omega;
    let base = Unraveling::new(&q, dt, n_bins)?;
    let plus = Unraveling::new(&q.shifted(Parameter::Omega, delta), dt, n_bins)?;
    let minus = Unraveling::new(&q.shifted(Parameter::Omega, -delta), dt, n_bins)?;
    let plus_h = Unraveling::new(&q.shifted(Parameter::Omega, delta / 2.0), dt, n_bins)?;
    let minus_h = Unraveling::new(&q.shifted(Parameter::Omega, -delta / 2.0), dt, n_bins)?;
    let psi0 = init.pure(q.n_cutoff)?;
    let x0 = base.initial_pure(&psi0)?;
    let g = t_grid.len();

    let prefix = |u: &Unraveling, clicks: &[usize]| -> Result<Vec<f64>> {
        let mut out = vec![0.0; g];
        u.replay(&x0, clicks, &breakpoints, |k, _, l| out[k] = l)?;
        Ok(out)
    };
    let score = |a: &[f64], b: &[f64], h: f64| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| (x - y) / (2.0 * h)).collect() };

    let per_traj: Vec<(Vec<f64>, Option<Vec<f64>>, usize)> = (0..opts.n_traj)
        .into_par_iter()
        .map(|i| -> Result<_> {
            let seed = trajectory_seed(opts.master_seed, i as u64);
            let mut rng = crate::rng::rng_from_seed(seed);
            let (clicks, _, _) = base.sample(&x0, &mut rng)?;
            let s = score(&prefix(&plus, &clicks)?, &prefix(&minus, &clicks)?, delta);
            let half = if i < RICHARDSON_SUBSET {
                Some(score(&prefix(&plus_h, &clicks)?, &prefix(&minus_h, &clicks)?, delta / 2.0))
            } else {
                None
            };
            Ok((s, half, clicks.len()))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut scores = Vec::with_capacity(opts.n_traj * g);
    let mut clicks = Vec::with_capacity(opts.n_traj);
    let mut full_sub = vec![0.0; g];
    let mut half_sub = vec![0.0; g];
    for (s, half, c) in &per_traj {
        scores.extend_from_slice(s);
        clicks.push(*c);
        if let Some(h) = half {
            for k in 0..g {
                full_sub[k] += s[k] * s[k];
                half_sub[k] += h[k] * h[k];
            }
        }
    }
    let mut richardson_rel = 0.0f64;
    for k in 0..g {
        let scale = full_sub[k].abs().max(half_sub[k].abs());
        if scale > 1e-300 {
            richardson_rel = richardson_rel.max((full_sub[k] - half_sub[k]).abs() / scale);
        }
    }
    if richardson_rel > 0.01 {
        log::warn!("score changed by {:.2}% when halving delta", 100.0 * richardson_rel);
    }
    Ok(ScoreSamples {
        t_grid: t_grid.to_vec(),
        scores,
        n_traj: opts.n_traj,
        delta_omega: delta,
        richardson_rel,
        n_cutoff: q.n_cutoff,
        dt,
        clicks,
    })
}

/// F̂(t) = mean of squared scores over `opts.n_traj` sampled records.
pub fn fi_photon_counting(p: &ModelParams, t_grid: &[f64], opts: &FiOptions) -> Result<FIEstimate> {
    if opts.n_traj < 100 {
        return Err(invalid(format!("n_traj must be at least 100, got {}", opts.n_traj)));
    }
    fi_scores(p, t_grid, opts)?.estimate(opts.n_traj)
}

/// How a QFI curve was computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QfiMethod {
    GeneralizedMe,
    CorrelatorIntegral,
}

impl QfiMethod {
    pub fn label(&self) -> &'static str {
        match self {
            QfiMethod::GeneralizedMe => "generalized-me",
            QfiMethod::CorrelatorIntegral => "correlator",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QFIResult {
    pub t_grid: Vec<f64>,
    pub qfi: Vec<f64>,
    pub method: QfiMethod,
    /// Relative step of the generalized-ME route.
    pub delta_theta: Option<f64>,
    pub n_cutoff: usize,
    pub dt: f64,
    /// Relative change of the final value under the refinement check.
    pub refinement_rel: Option<f64>,
}

/// Settings for the QFI solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QfiOptions {
    pub parameter: Parameter,
    /// Relative step δ/θ for the generalized-ME route.
    pub delta_rel: f64,
    /// Repeat with δ/2 (generalized ME) or dt/2 (correlator) and compare.
    pub refine: bool,
    pub solver: SolverOptions,
}

impl Default for QfiOptions {
    fn default() -> Self {
        Self {
            parameter: Parameter::Omega,
            delta_rel: 1e-3,
            refine: false,
            solver: SolverOptions::default(),
        }
    }
}

fn step_for(q: &ModelParams, opts: &SolverOptions) -> Result<f64> {
    match opts.dt {
        Some(dt) if dt > 0.0 => Ok(dt),
        Some(dt) => Err(invalid(format!("dt must be positive, got {dt}"))),
        None => default_dt(q),
    }
}

fn tail_of_vec(x: &[C64], d: usize, n_cutoff: usize, scale: f64) -> f64 {
    let width = ((n_cutoff as f64) * 0.1).ceil().max(1.0) as usize;
    let mut tail = 0.0;
    for s in 0..2 {
        for n in n_cutoff - width..n_cutoff {
            let i = s * n_cutoff + n;
            tail += x[i + d * i].norm();
        }
    }
    tail / scale.max(f64::MIN_POSITIVE)
}

fn generalized_me_once(p: &ModelParams, t_grid: &[f64], opts: &QfiOptions, delta_rel: f64) -> Result<(QFIResult, f64)> {
    let theta = p.value(opts.parameter);
    let delta = if theta != 0.0 { delta_rel * theta.abs() } else { delta_rel };
    let p_plus = p.shifted(opts.parameter, delta);
    let p_minus = p.shifted(opts.parameter, -delta);
    let l = generalized_liouvillian(&p_plus, &p_minus)?;
    let dh = hamiltonian(&p_plus)?.sub(&hamiltonian(&p_minus)?)?.into_matrix();
    let d = p.dim();
    let n = d * d;
    let dt = step_for(p, &opts.solver)?;
    // state: vec ρ_{θ+δ,θ−δ} followed by z = ∫ tr(ΔH ρ) du
    let mut x = vectorize(InitialState::VacuumDown.density(p.n_cutoff)?.matrix())
        .as_slice()
        .to_vec();
    x.push(ZERO);
    let mut f = |a: &[C64], b: &mut [C64]| {
        l.apply_into(&a[..n], &mut b[..n]);
        b[n] = vec_expectation(&dh, &a[..n]);
    };
    let mut rk = Rk4::new(n + 1);
    let mut t = 0.0;
    let mut qfi = Vec::with_capacity(t_grid.len());
    let mut worst_tail = 0.0f64;
    for &target in t_grid {
        let (steps, h) = substeps(target - t, dt);
        for _ in 0..steps {
            rk.step(&mut f, &mut x, h);
        }
        t = target;
        let z = x[n];
        if !z.re.is_finite() || !z.im.is_finite() {
            return Err(Error::Instability(format!("non-finite generalized state at t = {t}")));
        }
        // |tr ρ|² = |1 − i z|² = 1 + 2 Im z + |z|²
        let arg = 2.0 * z.im + z.norm_sqr();
        if arg <= -1.0 + 1e-300 {
            return Err(Error::NormUnderflow(format!("|tr rho| vanished at t = {t}; reduce delta")));
        }
        qfi.push((-arg.ln_1p() / (delta * delta)).max(0.0));
        let tr = vec_trace(&x[..n], d).norm();
        worst_tail = worst_tail.max(tail_of_vec(&x[..n], d, p.n_cutoff, tr));
    }
    Ok((
        QFIResult {
            t_grid: t_grid.to_vec(),
            qfi,
            method: QfiMethod::GeneralizedMe,
            delta_theta: Some(delta_rel),
            n_cutoff: p.n_cutoff,
            dt,
            refinement_rel: None,
        },
        worst_tail,
    ))
}

fn rel_change(a: &QFIResult, b: &QFIResult) -> f64 {
    let (x, y) = (*a.qfi.last().unwrap_or(&0.0), *b.qfi.last().unwrap_or(&0.0));
    let scale = x.abs().max(y.abs());
    if scale < 1e-300 {
        0.0
    } else {
        (x - y).abs() / scale
    }
}

/// Global QFI from the two-parameter generalized master equation,
/// I(t) = −2 ln|tr ρ_{θ+δ,θ−δ}(t)| / δ², starting from vacuum ⊗ ↓.
///
/// The trace is obtained from the exact identity
/// d tr ρ/dt = −i tr[(H(θ+δ) − H(θ−δ)) ρ], integrated alongside ρ, which
/// avoids summing the full diagonal at every output time.
pub fn global_qfi_generalized_me(p: &ModelParams, t_grid: &[f64], opts: &QfiOptions) -> Result<QFIResult> {
    p.validate()?;
    check_grid(t_grid)?;
    if !(1e-6..=1e-2).contains(&opts.delta_rel) {
        return Err(invalid(format!("delta_rel must lie in [1e-6, 1e-2], got {}", opts.delta_rel)));
    }
    let (mut res, q) = with_adaptive_cutoff(p, &opts.solver, |q| generalized_me_once(q, t_grid, opts, opts.delta_rel))?;
    if opts.refine {
        let mut delta_rel = opts.delta_rel;
        loop {
            let (finer, _) = generalized_me_once(&q, t_grid, opts, delta_rel / 2.0)?;
            let rel = rel_change(&res, &finer);
            res.refinement_rel = Some(rel);
            if rel <= 0.01 {
                break;
            }
            if delta_rel / 2.0 < 1e-6 {
                return Err(Error::NotConverged(format!("delta halving still changes the QFI by {:.2}%", 100.0 * rel)));
            }
            delta_rel /= 2.0;
            res = finer;
            res.refinement_rel = Some(rel);
        }
    }
    Ok(res)
}

fn correlator_once(p: &ModelParams, start: &CorrelatorStart, t_grid: &[f64], opts: &QfiOptions, dt: f64) -> Result<(QFIResult, f64)> {
    let l = liouvillian(p)?;
    let o = hamiltonian_derivative(p, opts.parameter)?.into_matrix();
    let d = p.dim();
    let n = d * d;
    let o_sp = SparseOp::new(&o);
    let rho0 = start.density(p, &opts.solver)?;
    // state: [vec ρ(u), vec Y(u), J(u)] with Y' = 𝓛Y + (Ô − ⟨Ô⟩)ρ and
    // J' = Re tr(Ô Y), so that I = 8 J
    let mut x = vec![ZERO; 2 * n + 1];
    x[..n].copy_from_slice(vectorize(rho0.matrix()).as_slice());
    let mut f = |a: &[C64], b: &mut [C64]| {
        let (rho, rest) = a.split_at(n);
        let (y, _) = rest.split_at(n);
        let (brho, brest) = b.split_at_mut(n);
        let (by, bj) = brest.split_at_mut(n);
        l.apply_into(rho, brho);
        l.apply_into(y, by);
        o_sp.add_centered_product(rho, vec_expectation(&o, rho), by);
        bj[0] = C64::new(vec_expectation(&o, y).re, 0.0);
    };
    let mut rk = Rk4::new(2 * n + 1);
    let mut t = 0.0;
    let mut qfi = Vec::with_capacity(t_grid.len());
    let mut worst_tail = 0.0f64;
    for &target in t_grid {
        let (steps, h) = substeps(target - t, dt);
        for _ in 0..steps {
            rk.step(&mut f, &mut x, h);
        }
        t = target;
        let j = x[2 * n].re;
        if !j.is_finite() {
            return Err(Error::Instability(format!("non-finite correlator integral at t = {t}")));
        }
        qfi.push((8.0 * j).max(0.0));
        worst_tail = worst_tail.max(tail_of_vec(&x[..n], d, p.n_cutoff, 1.0));
    }
    Ok((
        QFIResult {
            t_grid: t_grid.to_vec(),
            qfi,
            method: QfiMethod::CorrelatorIntegral,
            delta_theta: None,
            n_cutoff: p.n_cutoff,
            dt,
            refinement_rel: None,
        },
        worst_tail,
    ))
}

/// Global QFI as 8∫₀ᵗdτ∫₀^{t−τ}ds Re⟨δÔ(τ+s)δÔ(τ)⟩ with Ô = ∂_θH.
///
/// The double integral is carried by an auxiliary operator
/// Y(u) = ∫₀ᵘ e^{𝓛(u−τ)}(Ô − ⟨Ô⟩_τ)ρ(τ) dτ propagated with ρ, so the
/// regression formula is evaluated without a two-dimensional mesh.
pub fn global_qfi_correlator(
    p: &ModelParams,
    start: &CorrelatorStart,
    t_grid: &[f64],
    opts: &QfiOptions,
) -> Result<QFIResult> {
    p.validate()?;
    check_grid(t_grid)?;
    let (mut res, q) = with_adaptive_cutoff(p, &opts.solver, |q| {
        let dt = step_for(q, &opts.solver)?;
        correlator_once(q, start, t_grid, opts, dt)
    })?;
    if opts.refine {
        let (finer, _) = correlator_once(&q, start, t_grid, opts, res.dt / 2.0)?;
        let rel = rel_change(&res, &finer);
        if rel > 0.02 {
            return Err(Error::NotConverged(format!("step halving changes the QFI by {:.2}%", 100.0 * rel)));
        }
        res.refinement_rel = Some(rel);
    }
    Ok(res)
}
