//! Two-time correlation functions from the quantum regression formula and
//! the dynamic structure factor S(τ,s,η) = Re⟨δn̂(τ+s)δn̂(τ)⟩.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::evolution::{
    check_grid, default_dt, integrate_linear, steady_state, with_adaptive_cutoff, InitialState, Rk4, SolverOptions,
    substeps,
};
use crate::model::{liouvillian, ModelOperators, ModelParams};
use crate::quantum::{DensityMatrix, Operator, C64, ZERO};
use crate::sparse::{vec_expectation, vectorize, Superoperator};

/// Nonzero entries of a dense operator, for fast left multiplication of
/// column-stacked matrices.
#[derive(Debug, Clone)]
pub(crate) struct SparseOp {
    d: usize,
    entries: Vec<(usize, usize, C64)>,
}

impl SparseOp {
    pub(crate) fn new(o: &DMatrix<C64>) -> Self {
        let d = o.nrows();
        let mut entries = Vec::new();
        for k in 0..d {
            for i in 0..d {
                if o[(i, k)] != ZERO {
                    entries.push((i, k, o[(i, k)]));
                }
            }
        }
        Self { d, entries }
    }

    /// out += (Ô − shift)·x for column-stacked x.
    pub(crate) fn add_centered_product(&self, x: &[C64], shift: C64, out: &mut [C64]) {
        let d = self.d;
        for j in 0..d {
            let col = d * j;
            for &(i, k, v) in &self.entries {
                out[i + col] += v * x[k + col];
            }
            for i in 0..d {
                out[i + col] -= shift * x[i + col];
            }
        }
    }
}

/// Where correlator and QFI evaluations start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorrelatorStart {
    Stationary,
    State { state: InitialState },
}

impl Default for CorrelatorStart {
    fn default() -> Self {
        CorrelatorStart::State { state: InitialState::VacuumDown }
    }
}

impl CorrelatorStart {
    /// Initial density matrix at the cutoff of `p` (no cutoff refinement).
    pub fn density(&self, p: &ModelParams, opts: &SolverOptions) -> Result<DensityMatrix> {
        match self {
            CorrelatorStart::Stationary => Ok(steady_state(p, &SolverOptions { adaptive: false, ..*opts })?.state),
            CorrelatorStart::State { state } => state.density(p.n_cutoff),
        }
    }
}

/// Grid of ⟨δÔ(τ+s)δÔ(τ)⟩; `values[k][j]` belongs to `tau_grid[k]`,
/// `s_grid[j]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrelatorGrid {
    pub tau_grid: Vec<f64>,
    pub s_grid: Vec<f64>,
    pub values: Vec<Vec<C64>>,
    pub op_label: String,
    pub n_cutoff: usize,
}

impl CorrelatorGrid {
    pub fn re_row(&self, k: usize) -> Vec<f64> {
        self.values[k].iter().map(|z| z.re).collect()
    }

    /// Re S at fixed s index as a function of τ.
    pub fn re_column(&self, j: usize) -> Vec<f64> {
        self.values.iter().map(|row| row[j].re).collect()
    }
}

/// Stationary structure factor S_st(s) = Re⟨δn̂(s)δn̂(0)⟩_st.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StationaryCorrelator {
    pub s_grid: Vec<f64>,
    pub values: Vec<f64>,
    pub n_cutoff: usize,
}

fn step(p: &ModelParams, opts: &SolverOptions) -> Result<f64> {
    match opts.dt {
        Some(dt) if dt > 0.0 => Ok(dt),
        Some(dt) => Err(invalid(format!("dt must be positive, got {dt}"))),
        None => default_dt(p),
    }
}

/// Correlator row for one τ: propagate (Ô − ⟨Ô⟩_τ)ρ(τ) across `s_grid`
/// and read off tr(Ô ·).
fn row(l: &Superoperator, o: &DMatrix<C64>, o_sp: &SparseOp, rho_tau: &[C64], s_grid: &[f64], dt: f64) -> Result<Vec<C64>> {
    let mean = vec_expectation(o, rho_tau);
    let mut y = vec![ZERO; rho_tau.len()];
    o_sp.add_centered_product(rho_tau, mean, &mut y);
    let mut out = vec![ZERO; s_grid.len()];
    integrate_linear(l, &mut y, s_grid, dt, |j, v| {
        out[j] = vec_expectation(o, v);
        Ok(())
    })?;
    Ok(out)
}

fn check_op(op: &Operator, p: &ModelParams) -> Result<()> {
    if op.dim() != p.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            found: op.dim(),
        });
    }
    Ok(())
}

/// ⟨δÔ(τ+s)δÔ(τ)⟩ = tr[Ô e^{𝓛s}(Ô e^{𝓛τ}ρ0)] − ⟨Ô(τ+s)⟩⟨Ô(τ)⟩ at the cutoff
/// of `p`.
pub fn two_time(p: &ModelParams, rho0: &DensityMatrix, tau: f64, s: f64, op: &Operator, opts: &SolverOptions) -> Result<C64> {
    p.validate()?;
    check_op(op, p)?;
    if !(tau >= 0.0 && s >= 0.0) {
        return Err(invalid("tau and s must be nonnegative"));
    }
    let l = liouvillian(p)?;
    let dt = step(p, opts)?;
    let mut x = vectorize(rho0.matrix()).as_slice().to_vec();
    integrate_linear(&l, &mut x, &[tau], dt, |_, _| Ok(()))?;
    let o = op.matrix();
    Ok(row(&l, o, &SparseOp::new(o), &x, &[s], dt)?[0])
}

/// Same quantity evaluated in the Heisenberg picture: Ô is propagated
/// backwards by 𝓛† for time s and contracted with (Ô − ⟨Ô⟩)ρ(τ).
pub fn two_time_adjoint(
    p: &ModelParams,
    rho0: &DensityMatrix,
    tau: f64,
    s: f64,
    op: &Operator,
    opts: &SolverOptions,
) -> Result<C64> {
    p.validate()?;
    check_op(op, p)?;
    if !(tau >= 0.0 && s >= 0.0) {
        return Err(invalid("tau and s must be nonnegative"));
    }
    let l = liouvillian(p)?;
    let dt = step(p, opts)?;
    let mut x = vectorize(rho0.matrix()).as_slice().to_vec();
    integrate_linear(&l, &mut x, &[tau], dt, |_, _| Ok(()))?;
    let o = op.matrix();
    let mean = vec_expectation(o, &x);
    let mut y = vec![ZERO; x.len()];
    SparseOp::new(o).add_centered_product(&x, mean, &mut y);
    // tr(Ô X) = ⟨vec(Ô†), vec X⟩
    let mut w = vectorize(&o.adjoint());
    let (n, h) = substeps(s, dt);
    let mut rk = Rk4::new(w.len());
    let mut f = |a: &[C64], b: &mut [C64]| {
        let v = l.adjoint_apply(&DVector::from_column_slice(a));
        b.copy_from_slice(v.as_slice());
    };
    for _ in 0..n {
        rk.step(&mut f, w.as_mut_slice(), h);
    }
    Ok(w.iter().zip(&y).map(|(a, b)| a.conj() * b).sum())
}

fn dynamic_once(p: &ModelParams, start: &CorrelatorStart, tau_grid: &[f64], s_grid: &[f64], opts: &SolverOptions) -> Result<(CorrelatorGrid, f64)> {
    let l = liouvillian(p)?;
    let dt = step(p, opts)?;
    let ops = ModelOperators::new(p.n_cutoff)?;
    let o = ops.n.matrix();
    let o_sp = SparseOp::new(o);
    let rho0 = start.density(p, opts)?;
    let d = p.dim();
    let mut x = vectorize(rho0.matrix()).as_slice().to_vec();
    let mut sweep = Vec::with_capacity(tau_grid.len());
    let mut tail = 0.0f64;
    let s_max = *s_grid.last().unwrap_or(&0.0);
    let mut times = tau_grid.to_vec();
    times.push(tau_grid.last().copied().unwrap_or(0.0) + s_max);
    integrate_linear(&l, &mut x, &times, dt, |k, v| {
        let width = ((p.n_cutoff as f64) * 0.1).ceil().max(1.0) as usize;
        let t: f64 = (0..2)
            .flat_map(|s| (p.n_cutoff - width..p.n_cutoff).map(move |n| s * p.n_cutoff + n))
            .map(|i| v[i + d * i].re.abs())
            .sum();
        tail = tail.max(t);
        if k < tau_grid.len() {
            sweep.push(v.to_vec());
        }
        Ok(())
    })?;
    let values = sweep
        .par_iter()
        .map(|rho_tau| row(&l, o, &o_sp, rho_tau, s_grid, dt))
        .collect::<Result<Vec<_>>>()?;
    Ok((
        CorrelatorGrid {
            tau_grid: tau_grid.to_vec(),
            s_grid: s_grid.to_vec(),
            values,
            op_label: "n".into(),
            n_cutoff: p.n_cutoff,
        },
        tail,
    ))
}

/// Full grid of ⟨δn̂(τ+s)δn̂(τ)⟩, refining the cutoff until the state stays
/// inside the Fock space up to τ_max + s_max.
pub fn structure_factor_dynamic(
    p: &ModelParams,
    start: &CorrelatorStart,
    tau_grid: &[f64],
    s_grid: &[f64],
    opts: &SolverOptions,
) -> Result<CorrelatorGrid> {
    p.validate()?;
    check_grid(tau_grid)?;
    check_grid(s_grid)?;
    let (grid, _) = with_adaptive_cutoff(p, opts, |q| dynamic_once(q, start, tau_grid, s_grid, opts))?;
    Ok(grid)
}

/// S_st(s,η) on `s_grid`, using the adaptively truncated steady state.
pub fn structure_factor_stationary(p: &ModelParams, s_grid: &[f64], opts: &SolverOptions) -> Result<StationaryCorrelator> {
    p.validate()?;
    check_grid(s_grid)?;
    let ss = steady_state(p, opts)?;
    let q = ss.params;
    let l = liouvillian(&q)?;
    let dt = step(&q, opts)?;
    let ops = ModelOperators::new(q.n_cutoff)?;
    let o = ops.n.matrix();
    let rho = vectorize(ss.state.matrix());
    let values = row(&l, o, &SparseOp::new(o), rho.as_slice(), s_grid, dt)?
        .into_iter()
        .map(|z| z.re)
        .collect();
    Ok(StationaryCorrelator {
        s_grid: s_grid.to_vec(),
        values,
        n_cutoff: q.n_cutoff,
    })
}

/// Linear s grid reaching ten relaxation times 1/gap.
pub fn default_s_grid(gap: f64, n: usize) -> Result<Vec<f64>> {
    if !(gap > 0.0) || n < 2 {
        return Err(invalid("need a positive gap and at least two points"));
    }
    Ok((0..n).map(|i| 10.0 / gap * i as f64 / (n - 1) as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{g_critical, params_at};

    fn small() -> ModelParams {
        params_at(0.9, 2.0, 1.0, 0.5).unwrap().with_n_cutoff(10)
    }

    #[test]
    fn equal_time_value_is_the_variance() {
        let p = small();
        let rho0 = InitialState::Coherent { alpha: 0.7, qubit: 0 }.density(p.n_cutoff).unwrap();
        let n = ModelOperators::new(p.n_cutoff).unwrap().n;
        let v = two_time(&p, &rho0, 1.3, 0.0, &n, &SolverOptions::default()).unwrap();
        let rho = crate::evolution::propagate_density(&rho0, &p, &[1.3], &SolverOptions::default()).unwrap();
        let st = &rho.states[0];
        let m = st.matrix();
        let n2 = n.mul(&n).unwrap();
        let mean = (n.matrix() * m).trace().re;
        let var = (n2.matrix() * m).trace().re - mean * mean;
        assert!(v.im.abs() < 1e-8);
        assert!((v.re - var).abs() < 1e-8);
        assert!(var > 0.0);
    }

    #[test]
    fn dark_cavity_has_no_fluctuations() {
        let p = small().with_lambda(0.0);
        let grid = structure_factor_dynamic(&p, &CorrelatorStart::default(), &[0.0, 1.0, 4.0], &[0.0, 0.5, 2.0], &SolverOptions::default()).unwrap();
        for row in &grid.values {
            assert!(row.iter().all(|z| z.norm() == 0.0));
        }
    }

    #[test]
    fn stationary_start_is_tau_independent() {
        let p = params_at(g_critical(1.0, 0.5).unwrap(), 3.0, 1.0, 0.5).unwrap();
        let s_grid = [0.0, 1.0, 3.0];
        let grid = structure_factor_dynamic(&p, &CorrelatorStart::Stationary, &[0.0, 2.0, 10.0], &s_grid, &SolverOptions::default()).unwrap();
        let st = structure_factor_stationary(&p, &s_grid, &SolverOptions::default()).unwrap();
        for k in 0..3 {
            for j in 0..3 {
                let a = grid.values[k][j].re;
                assert!((a - st.values[j]).abs() < 1e-6 * st.values[0].abs(), "{a} vs {}", st.values[j]);
            }
        }
    }

    #[test]
    fn adjoint_evaluation_agrees() {
        let p = params_at(1.0, 1.0, 1.0, 1.0).unwrap().with_n_cutoff(3);
        let rho0 = InitialState::VacuumDown.density(3).unwrap();
        let n = ModelOperators::new(3).unwrap().n;
        let opts = SolverOptions { dt: Some(1e-3), ..SolverOptions::default() };
        for (tau, s) in [(0.5, 0.7), (2.0, 0.0), (1.0, 3.0)] {
            let a = two_time(&p, &rho0, tau, s, &n, &opts).unwrap();
            let b = two_time_adjoint(&p, &rho0, tau, s, &n, &opts).unwrap();
            assert!((a - b).norm() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn stationary_correlation_decays() {
        let p = params_at(0.7, 2.0, 1.0, 0.5).unwrap();
        let gap = crate::evolution::liouvillian_gap(&p, &Default::default()).unwrap().gap;
        let s = default_s_grid(gap, 3).unwrap();
        let s = [s[0], 20.0 / gap];
        let st = structure_factor_stationary(&p, &s, &SolverOptions::default()).unwrap();
        assert!(st.values[0] > 0.0);
        assert!(st.values[1].abs() < 1e-6 * st.values[0]);
    }

    #[test]
    fn rejects_wrong_operator_size() {
        let p = small();
        let rho0 = InitialState::VacuumDown.density(p.n_cutoff).unwrap();
        let bad = Operator::identity(4);
        assert!(matches!(
            two_time(&p, &rho0, 0.0, 0.0, &bad, &SolverOptions::default()),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
