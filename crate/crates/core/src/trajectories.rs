//! Photon-counting unraveling: sampling click records and replaying them
//! under altered Hamiltonian parameters.
//!
//! The no-click evolution of one bin is the exact propagator of the
//! non-Hermitian generator; binary powers of it are precomputed so that a
//! waiting time spanning many bins costs only a logarithmic number of
//! matrix-vector products. Every bin still carries the two-outcome
//! structure of the counting record.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{hamiltonian_from, two_sided_generator, ModelOperators, ModelParams};
use crate::quantum::{DensityMatrix, Operator, PureState, C64, ZERO};
use crate::rng::rng_from_seed;
use crate::sparse::{unvectorize, vec_trace};

/// Largest superoperator dimension for which dense no-click propagators
/// are built (finite-efficiency unraveling).
pub const MAX_MIXED_DIM: usize = 1600;

/// Weight changes below this are attributed to rounding in the propagator.
const PHASE_ONLY_TOL: f64 = 1e-12;

/// Largest bin-width allowed: κ·dt·(N_c − 1) ≤ 0.01.
pub fn max_bin_width(p: &ModelParams) -> f64 {
    0.01 / (p.kappa * (p.n_cutoff as f64 - 1.0)).max(1e-300)
}

/// A binned click record and the seed that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub dt: f64,
    pub n_bins: usize,
    /// Indices of bins holding a click, strictly increasing.
    pub click_bins: Vec<usize>,
    pub seed: u64,
    pub params_used: ModelParams,
}

impl TrajectoryRecord {
    /// dN per bin.
    pub fn clicks(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.n_bins];
        for &b in &self.click_bins {
            out[b] = 1;
        }
        out
    }

    pub fn from_clicks(dt: f64, clicks: &[u8], seed: u64, params_used: ModelParams) -> Result<Self> {
        let mut bins = Vec::new();
        for (i, &c) in clicks.iter().enumerate() {
            match c {
                0 => {}
                1 => bins.push(i),
                _ => return Err(Error::Format(format!("bin {i} holds {c}, expected 0 or 1"))),
            }
        }
        Ok(Self {
            dt,
            n_bins: clicks.len(),
            click_bins: bins,
            seed,
            params_used,
        })
    }

    pub fn t_final(&self) -> f64 {
        self.dt * self.n_bins as f64
    }

    pub fn n_clicks(&self) -> usize {
        self.click_bins.len()
    }
}

/// Conditional state after a record, normalized, with the record
/// probability carried as `log_norm = ln P[D]`.
#[derive(Debug, Clone)]
pub struct ConditionalState {
    pub state: Conditional,
    pub log_norm: f64,
}

#[derive(Debug, Clone)]
pub enum Conditional {
    Pure(PureState),
    Mixed(DensityMatrix),
}

impl ConditionalState {
    /// Record probability exp(log_norm).
    pub fn probability(&self) -> f64 {
        self.log_norm.exp()
    }

    /// Normalized conditional density matrix.
    pub fn density(&self) -> DensityMatrix {
        match &self.state {
            Conditional::Pure(s) => s.to_density(),
            Conditional::Mixed(r) => r.clone(),
        }
    }
}

/// No-click propagators and click map for a fixed parameter set and bin width.
#[derive(Debug, Clone)]
pub struct Unraveling {
    params: ModelParams,
    dt: f64,
    n_bins: usize,
    mixed: bool,
    hilbert_dim: usize,
    /// powers[j] propagates 2^j bins without a click.
    powers: Vec<DMatrix<C64>>,
    click_scale: f64,
}

impl Unraveling {
    /// Pure-state unraveling when `p.efficiency == 1`, density-matrix
    /// unraveling otherwise.
    pub fn new(p: &ModelParams, dt: f64, n_bins: usize) -> Result<Self> {
        let mixed = p.efficiency < 1.0;
        Self::build(p, dt, n_bins, mixed)
    }

    /// Density-matrix unraveling regardless of the efficiency.
    pub fn new_mixed(p: &ModelParams, dt: f64, n_bins: usize) -> Result<Self> {
        Self::build(p, dt, n_bins, true)
    }

    fn build(p: &ModelParams, dt: f64, n_bins: usize, mixed: bool) -> Result<Self> {
        p.validate()?;
        if !(p.kappa > 0.0) {
            return Err(invalid("photon counting requires kappa > 0"));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(invalid(format!("bin width must be positive, got {dt}")));
        }
        if dt > max_bin_width(p) * (1.0 + 1e-12) {
            return Err(invalid(format!(
                "bin width {dt} exceeds the safety bound {} (kappa*dt*(n_cutoff-1) <= 0.01)",
                max_bin_width(p)
            )));
        }
        if n_bins == 0 {
            return Err(invalid("record must contain at least one bin"));
        }
        let ops = ModelOperators::new(p.n_cutoff)?;
        let h = hamiltonian_from(p, &ops)?;
        let d = p.dim();
        let generator = if mixed {
            if d * d > MAX_MIXED_DIM {
                return Err(Error::MemoryLimit {
                    dim: d * d,
                    limit: MAX_MIXED_DIM,
                });
            }
            two_sided_generator(&h, &h, &ops, p.kappa, p.efficiency).to_dense()
        } else {
            let heff = h.matrix() - ops.n.matrix() * C64::new(0.0, p.kappa / 2.0);
            heff * C64::new(0.0, -1.0)
        };
        let levels = usize::BITS - n_bins.leading_zeros();
        let powers = (0..levels)
            .map(|j| (&generator * C64::new(dt * (1u64 << j) as f64, 0.0)).exp())
            .collect();
        let click_scale = if mixed {
            p.efficiency * p.kappa * dt
        } else {
            (p.kappa * dt).sqrt()
        };
        Ok(Self {
            params: *p,
            dt,
            n_bins,
            mixed,
            hilbert_dim: d,
            powers,
            click_scale,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn is_mixed(&self) -> bool {
        self.mixed
    }

    /// Working vector for a pure initial state.
    pub fn initial_pure(&self, psi0: &PureState) -> Result<DVector<C64>> {
        let a = psi0.amplitudes();
        if a.len() != self.hilbert_dim {
            return Err(Error::DimensionMismatch {
                expected: self.hilbert_dim,
                found: a.len(),
            });
        }
        if self.mixed {
            return self.initial_mixed(&psi0.to_density());
        }
        let n = a.norm();
        Ok(a / C64::new(n, 0.0))
    }

    /// Working vector for a density-matrix initial state.
    pub fn initial_mixed(&self, rho0: &DensityMatrix) -> Result<DVector<C64>> {
        if !self.mixed {
            return Err(invalid("pure unraveling needs a pure initial state"));
        }
        let m = rho0.matrix();
        if m.nrows() != self.hilbert_dim {
            return Err(Error::DimensionMismatch {
                expected: self.hilbert_dim,
                found: m.nrows(),
            });
        }
        let tr = m.trace();
        Ok(DVector::from_column_slice(m.as_slice()) / tr)
    }

    fn weight(&self, y: &DVector<C64>) -> f64 {
        if self.mixed {
            vec_trace(y.as_slice(), self.hilbert_dim).re
        } else {
            y.norm_squared()
        }
    }

    fn normalize(&self, mut y: DVector<C64>, w: f64) -> DVector<C64> {
        let s = if self.mixed { w } else { w.sqrt() };
        y /= C64::new(s, 0.0);
        y
    }

    /// Candidate after 2^j silent bins: normalized vector and ln of its weight.
    fn apply_power(&self, j: usize, x: &DVector<C64>) -> (DVector<C64>, f64) {
        let y = &self.powers[j] * x;
        let w = self.weight(&y);
        if !(w > 1e-300) || !w.is_finite() {
            return (y, f64::NEG_INFINITY);
        }
        // a loss at rounding level is a pure phase (dark cavity)
        let l = if (w - 1.0).abs() <= PHASE_ONLY_TOL { 0.0 } else { w.ln() };
        (self.normalize(y, w), l)
    }

    /// Apply `k` silent bins in canonical (descending binary) order.
    pub fn advance(&self, x: &mut DVector<C64>, k: usize, log_norm: &mut f64) -> Result<()> {
        if k == 0 {
            return Ok(());
        }
        for j in (0..self.powers.len()).rev() {
            if k & (1usize << j) != 0 {
                let (y, l) = self.apply_power(j, x);
                if !l.is_finite() {
                    return Err(Error::NormUnderflow(format!("after {k} silent bins")));
                }
                *x = y;
                *log_norm += l;
            }
        }
        Ok(())
    }

    /// Apply the click map of one bin.
    pub fn click(&self, x: &mut DVector<C64>, log_norm: &mut f64) -> Result<()> {
        let nc = self.params.n_cutoff;
        let d = self.hilbert_dim;
        let lower = |v: &[C64], out: &mut [C64], stride: usize, offset: usize| {
            // out[(s,n)] = √(n+1) v[(s,n+1)] along one column (stride 1) or row
            for s in 0..2 {
                for n in 0..nc {
                    let dst = offset + (s * nc + n) * stride;
                    out[dst] = if n + 1 < nc {
                        v[offset + (s * nc + n + 1) * stride] * ((n + 1) as f64).sqrt()
                    } else {
                        ZERO
                    };
                }
            }
        };
        let y = if self.mixed {
            // c ρ c†: lower rows of each column, then lower columns of each row
            let mut a = vec![ZERO; d * d];
            for j in 0..d {
                lower(x.as_slice(), &mut a, 1, d * j);
            }
            let mut b = vec![ZERO; d * d];
            for i in 0..d {
                lower(&a, &mut b, d, i);
            }
            DVector::from_vec(b) * C64::new(self.click_scale, 0.0)
        } else {
            let mut out = vec![ZERO; d];
            lower(x.as_slice(), &mut out, 1, 0);
            DVector::from_vec(out) * C64::new(self.click_scale, 0.0)
        };
        let w = self.weight(&y);
        if !(w > 1e-300) || !w.is_finite() {
            return Err(Error::NormUnderflow("click on a state without photons".into()));
        }
        *x = self.normalize(y, w);
        *log_norm += w.ln();
        Ok(())
    }

    /// Draw a record by inverting the survival probability of each waiting
    /// time with binary lifting over the silent-bin powers.
    pub fn sample<R: Rng>(&self, x0: &DVector<C64>, rng: &mut R) -> Result<(Vec<usize>, DVector<C64>, f64)> {
        let mut x = x0.clone();
        let mut log_norm = 0.0;
        let mut clicks = Vec::new();
        let mut b = 0usize;
        while b < self.n_bins {
            let remaining = self.n_bins - b;
            let u: f64 = rng.random();
            let threshold = (1.0 - u).ln();
            let mut acc = 0.0;
            let mut consumed = 0usize;
            for j in (0..self.powers.len()).rev() {
                let step = 1usize << j;
                if consumed + step > remaining {
                    continue;
                }
                let (y, l) = self.apply_power(j, &x);
                if acc + l > threshold {
                    x = y;
                    acc += l;
                    log_norm += l;
                    consumed += step;
                }
            }
            b += consumed;
            if b == self.n_bins {
                break;
            }
            self.click(&mut x, &mut log_norm)?;
            clicks.push(b);
            b += 1;
        }
        Ok((clicks, x, log_norm))
    }

    /// Re-propagate a fixed record. `visit(k, x, log_norm)` is called after
    /// `breakpoints[k]` bins; breakpoints must be nondecreasing and ≤ n_bins.
    pub fn replay<F: FnMut(usize, &DVector<C64>, f64)>(
        &self,
        x0: &DVector<C64>,
        click_bins: &[usize],
        breakpoints: &[usize],
        mut visit: F,
    ) -> Result<(DVector<C64>, f64)> {
        let mut x = x0.clone();
        let mut log_norm = 0.0;
        let mut b = 0usize;
        let mut next_bp = 0usize;
        let mut flush = |x: &mut DVector<C64>, b: &mut usize, log_norm: &mut f64, upto: usize| -> Result<()> {
            while next_bp < breakpoints.len() && breakpoints[next_bp] <= upto {
                let bp = breakpoints[next_bp];
                if bp < *b {
                    return Err(invalid("breakpoints must be nondecreasing"));
                }
                self.advance(x, bp - *b, log_norm)?;
                *b = bp;
                visit(next_bp, x, *log_norm);
                next_bp += 1;
            }
            Ok(())
        };
        for &c in click_bins {
            if c < b || c >= self.n_bins {
                return Err(Error::Incompatible(format!("click bin {c} out of order or beyond record")));
            }
            flush(&mut x, &mut b, &mut log_norm, c)?;
            self.advance(&mut x, c - b, &mut log_norm)?;
            self.click(&mut x, &mut log_norm)?;
            b = c + 1;
        }
        flush(&mut x, &mut b, &mut log_norm, self.n_bins)?;
        if breakpoints.len() > next_bp {
            return Err(invalid("breakpoint beyond the record length"));
        }
        self.advance(&mut x, self.n_bins - b, &mut log_norm)?;
        Ok((x, log_norm))
    }

    /// Wrap a working vector as a conditional state.
    pub fn conditional(&self, x: DVector<C64>, log_norm: f64) -> Result<ConditionalState> {
        let state = if self.mixed {
            let m = unvectorize(&x, self.hilbert_dim);
            Conditional::Mixed(DensityMatrix::unnormalized(Operator::from_matrix(m)?))
        } else {
            Conditional::Pure(PureState::new(x)?)
        };
        Ok(ConditionalState { state, log_norm })
    }

    /// ⟨n̂⟩ of a working vector.
    pub fn photon_number(&self, x: &DVector<C64>) -> f64 {
        let nc = self.params.n_cutoff;
        if self.mixed {
            let d = self.hilbert_dim;
            (0..d).map(|i| x[i + d * i].re * (i % nc) as f64).sum()
        } else {
            x.iter().enumerate().map(|(i, z)| z.norm_sqr() * (i % nc) as f64).sum()
        }
    }
}

fn n_bins_for(t_final: f64, dt: f64) -> Result<usize> {
    if !(t_final > 0.0) || !t_final.is_finite() {
        return Err(invalid(format!("t_final must be positive, got {t_final}")));
    }
    let n = (t_final / dt).round();
    if n < 1.0 {
        return Err(invalid("t_final shorter than one bin"));
    }
    Ok(n as usize)
}

/// Sample one photon-counting record (ideal detection).
pub fn sample_trajectory(
    p: &ModelParams,
    psi0: &PureState,
    t_final: f64,
    dt: f64,
    seed: u64,
) -> Result<(TrajectoryRecord, ConditionalState)> {
    if p.efficiency < 1.0 {
        return Err(invalid("use sample_trajectory_inefficient for efficiency < 1"));
    }
    let u = Unraveling::new(p, dt, n_bins_for(t_final, dt)?)?;
    sample_with(&u, &u.initial_pure(psi0)?, seed)
}

/// Sample with a prepared unraveling and working vector.
pub fn sample_with(u: &Unraveling, x0: &DVector<C64>, seed: u64) -> Result<(TrajectoryRecord, ConditionalState)> {
    let mut rng = rng_from_seed(seed);
    let (clicks, x, log_norm) = u.sample(x0, &mut rng)?;
    let rec = TrajectoryRecord {
        dt: u.dt,
        n_bins: u.n_bins,
        click_bins: clicks,
        seed,
        params_used: u.params,
    };
    Ok((rec, u.conditional(x, log_norm)?))
}

/// Sample a record with finite detection efficiency; the conditional state
/// is a density matrix.
pub fn sample_trajectory_inefficient(
    p: &ModelParams,
    rho0: &DensityMatrix,
    t_final: f64,
    dt: f64,
    seed: u64,
) -> Result<(TrajectoryRecord, ConditionalState)> {
    if !(p.efficiency > 0.0 && p.efficiency < 1.0) {
        return Err(invalid(format!("efficiency must lie in (0, 1), got {}", p.efficiency)));
    }
    let u = Unraveling::new_mixed(p, dt, n_bins_for(t_final, dt)?)?;
    sample_with(&u, &u.initial_mixed(rho0)?, seed)
}

/// Check that `p_alt` may be used to replay `rec`.
pub fn check_compatible(rec: &TrajectoryRecord, p_alt: &ModelParams) -> Result<()> {
    let p = &rec.params_used;
    if p.kappa != p_alt.kappa || p.efficiency != p_alt.efficiency || p.n_cutoff != p_alt.n_cutoff {
        return Err(Error::Incompatible(
            "replay parameters must share kappa, efficiency and n_cutoff with the record".into(),
        ));
    }
    Ok(())
}

/// ln P[D] of a fixed record under `p_alt` (no randomness consumed).
pub fn replay_log_likelihood(rec: &TrajectoryRecord, p_alt: &ModelParams, psi0: &PureState) -> Result<f64> {
    check_compatible(rec, p_alt)?;
    let u = Unraveling::new(p_alt, rec.dt, rec.n_bins)?;
    let (_, l) = u.replay(&u.initial_pure(psi0)?, &rec.click_bins, &[], |_, _, _| {})?;
    Ok(l)
}
