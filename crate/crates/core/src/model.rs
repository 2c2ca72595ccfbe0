//! The open Rabi model: parameters, Hamiltonian and Liouvillian.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quantum::{annihilation, kron, sigma_x, sigma_z, Operator, C64};
use crate::sparse::{Superoperator, TripletBuilder};

/// Default cap on the superoperator dimension (2·N_c)².
pub const DEFAULT_MAX_SUPEROPERATOR_DIM: usize = 160 * 160;

/// Physical parameters. `eta` and `g` are always derived, never stored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub omega: f64,
    pub big_omega: f64,
    pub lambda: f64,
    pub kappa: f64,
    pub efficiency: f64,
    pub n_cutoff: usize,
}

/// Critical coupling √(1 + (κ/2ω)²).
pub fn g_critical(omega: f64, kappa: f64) -> Result<f64> {
    if !(omega > 0.0) || !omega.is_finite() {
        return Err(invalid(format!("omega must be positive, got {omega}")));
    }
    if !(kappa >= 0.0) || !kappa.is_finite() {
        return Err(invalid(format!("kappa must be nonnegative, got {kappa}")));
    }
    Ok((1.0 + (kappa / (2.0 * omega)).powi(2)).sqrt())
}

/// Default Fock cutoff before any adaptive refinement.
pub fn default_n_cutoff(eta: f64) -> usize {
    20usize.max((4.0 * eta.sqrt()).ceil() as usize)
}

/// Build parameters from the critical coordinates (g, η).
pub fn params_at(g: f64, eta: f64, omega: f64, kappa: f64) -> Result<ModelParams> {
    if !(g > 0.0) || !g.is_finite() {
        return Err(invalid(format!("g must be positive, got {g}")));
    }
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(invalid(format!("eta must be positive, got {eta}")));
    }
    g_critical(omega, kappa)?;
    let big_omega = eta * omega;
    let p = ModelParams {
        omega,
        big_omega,
        lambda: g * (big_omega * omega).sqrt() / 2.0,
        kappa,
        efficiency: 1.0,
        n_cutoff: default_n_cutoff(eta),
    };
    p.validate()?;
    Ok(p)
}

impl ModelParams {
    pub fn eta(&self) -> f64 {
        self.big_omega / self.omega
    }

    pub fn g(&self) -> f64 {
        2.0 * self.lambda / (self.big_omega * self.omega).sqrt()
    }

    pub fn dim(&self) -> usize {
        2 * self.n_cutoff
    }

    pub fn with_n_cutoff(mut self, n_cutoff: usize) -> Self {
        self.n_cutoff = n_cutoff;
        self
    }

    pub fn with_efficiency(mut self, efficiency: f64) -> Self {
        self.efficiency = efficiency;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.omega, self.big_omega, self.lambda, self.kappa, self.efficiency]
            .iter()
            .all(|x| x.is_finite());
        if !finite {
            return Err(invalid("model parameters must be finite"));
        }
        if !(self.omega > 0.0) {
            return Err(invalid(format!("omega must be positive, got {}", self.omega)));
        }
        if !(self.big_omega > 0.0) {
            return Err(invalid(format!("Omega must be positive, got {}", self.big_omega)));
        }
        if self.lambda < 0.0 {
            return Err(invalid(format!("lambda must be nonnegative, got {}", self.lambda)));
        }
        if self.kappa < 0.0 {
            return Err(invalid(format!("kappa must be nonnegative, got {}", self.kappa)));
        }
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(invalid(format!("efficiency must lie in (0, 1], got {}", self.efficiency)));
        }
        if self.n_cutoff < 2 {
            return Err(invalid(format!("n_cutoff must be >= 2, got {}", self.n_cutoff)));
        }
        Ok(())
    }

    /// Copy with the selected parameter shifted by `delta`.
    pub fn shifted(&self, which: Parameter, delta: f64) -> Self {
        let mut p = *self;
        match which {
            Parameter::Omega => p.omega += delta,
            Parameter::BigOmega => p.big_omega += delta,
            Parameter::Lambda => p.lambda += delta,
        }
        p
    }

    pub fn value(&self, which: Parameter) -> f64 {
        match which {
            Parameter::Omega => self.omega,
            Parameter::BigOmega => self.big_omega,
            Parameter::Lambda => self.lambda,
        }
    }

    /// Short digest used to bind trajectory records to the parameters.
    pub fn hash8(&self) -> [u8; 8] {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for x in [self.omega, self.big_omega, self.lambda, self.kappa, self.efficiency] {
            h.update(x.to_le_bytes());
        }
        h.update((self.n_cutoff as u64).to_le_bytes());
        let out = h.finalize();
        let mut b = [0u8; 8];
        b.copy_from_slice(&out[..8]);
        b
    }
}

/// Hamiltonian parameter being estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameter {
    #[default]
    Omega,
    BigOmega,
    Lambda,
}

/// Operators of the model on the qubit ⊗ Fock space.
#[derive(Debug, Clone)]
pub struct ModelOperators {
    pub c: Operator,
    pub c_dag: Operator,
    pub n: Operator,
    pub sigma_z: Operator,
    pub x_coupling: Operator,
}

impl ModelOperators {
    pub fn new(n_cutoff: usize) -> Result<Self> {
        let a = annihilation(n_cutoff)?;
        let id_c = Operator::identity(n_cutoff);
        let id_q = Operator::identity(2);
        let c = kron(&id_q, &a)?;
        let c_dag = c.adjoint();
        let n = c_dag.mul(&c)?;
        let sz = kron(&sigma_z(), &id_c)?;
        let x = kron(&sigma_x(), &a.add(&a.adjoint())?)?;
        Ok(Self {
            c,
            c_dag,
            n,
            sigma_z: sz,
            x_coupling: x,
        })
    }
}

/// H = ω c†c + (Ω/2) σz − λ (c + c†) σx.
pub fn hamiltonian(p: &ModelParams) -> Result<Operator> {
    p.validate()?;
    let ops = ModelOperators::new(p.n_cutoff)?;
    hamiltonian_from(p, &ops)
}

pub(crate) fn hamiltonian_from(p: &ModelParams, ops: &ModelOperators) -> Result<Operator> {
    let h = ops
        .n
        .scale(C64::new(p.omega, 0.0))
        .add(&ops.sigma_z.scale(C64::new(p.big_omega / 2.0, 0.0)))?
        .sub(&ops.x_coupling.scale(C64::new(p.lambda, 0.0)))?;
    Ok(h)
}

/// ∂H/∂θ for the selected parameter.
pub fn hamiltonian_derivative(p: &ModelParams, which: Parameter) -> Result<Operator> {
    let ops = ModelOperators::new(p.n_cutoff)?;
    Ok(match which {
        Parameter::Omega => ops.n,
        Parameter::BigOmega => ops.sigma_z.scale(C64::new(0.5, 0.0)),
        Parameter::Lambda => ops.x_coupling.scale(C64::new(-1.0, 0.0)),
    })
}

fn check_memory(p: &ModelParams, limit: usize) -> Result<()> {
    let dim = p.dim() * p.dim();
    if dim > limit {
        return Err(Error::MemoryLimit { dim, limit });
    }
    Ok(())
}

/// Column-stacked Liouvillian −i[H,·] + κ𝒟[c].
pub fn liouvillian(p: &ModelParams) -> Result<Superoperator> {
    liouvillian_with_limit(p, DEFAULT_MAX_SUPEROPERATOR_DIM)
}

pub fn liouvillian_with_limit(p: &ModelParams, limit: usize) -> Result<Superoperator> {
    p.validate()?;
    check_memory(p, limit)?;
    let ops = ModelOperators::new(p.n_cutoff)?;
    let h = hamiltonian_from(p, &ops)?;
    Ok(two_sided_generator(&h, &h, &ops, p.kappa, 0.0))
}

/// Generator ρ ↦ −iH₁ρ + iρH₂ + κ𝒟[c]ρ for two parameter values.
pub fn generalized_liouvillian(p_left: &ModelParams, p_right: &ModelParams) -> Result<Superoperator> {
    p_left.validate()?;
    p_right.validate()?;
    if p_left.n_cutoff != p_right.n_cutoff || p_left.kappa != p_right.kappa {
        return Err(invalid("generalized Liouvillian requires shared n_cutoff and kappa"));
    }
    check_memory(p_left, DEFAULT_MAX_SUPEROPERATOR_DIM)?;
    let ops = ModelOperators::new(p_left.n_cutoff)?;
    let h1 = hamiltonian_from(p_left, &ops)?;
    let h2 = hamiltonian_from(p_right, &ops)?;
    Ok(two_sided_generator(&h1, &h2, &ops, p_left.kappa, 0.0))
}

/// −iH₁ρ + iρH₂ − (κ/2){n,ρ} + (1 − detected)·κ cρc†.
pub(crate) fn two_sided_generator(
    h1: &Operator,
    h2: &Operator,
    ops: &ModelOperators,
    kappa: f64,
    detected: f64,
) -> Superoperator {
    let d = h1.dim();
    let mut b = TripletBuilder::new(d * d);
    let mi = C64::new(0.0, -1.0);
    b.add_left(h1, mi);
    b.add_right(h2, -mi);
    if kappa > 0.0 {
        let half = C64::new(-kappa / 2.0, 0.0);
        b.add_left(&ops.n, half);
        b.add_right(&ops.n, half);
        let w = kappa * (1.0 - detected);
        if w > 0.0 {
            b.add_sandwich(&ops.c, &ops.c_dag, C64::new(w, 0.0));
        }
    }
    b.build()
}

/// Parity superoperator conjugation diagonal: ρ_ij ↦ Π_i Π_j ρ_ij with
/// Π = (−1)^n · (±1 for ↑/↓).
pub fn parity_diagonal(n_cutoff: usize) -> Vec<f64> {
    let d = 2 * n_cutoff;
    let pi: Vec<f64> = (0..d)
        .map(|k| {
            let (s, n) = (k / n_cutoff, k % n_cutoff);
            let qs = if s == 1 { 1.0 } else { -1.0 };
            if n % 2 == 0 {
                qs
            } else {
                -qs
            }
        })
        .collect();
    let mut out = Vec::with_capacity(d * d);
    for j in 0..d {
        for i in 0..d {
            out.push(pi[i] * pi[j]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::QuantumState;
    use approx::assert_relative_eq;
    use nalgebra::DVector;

    #[test]
    fn critical_coupling_values() {
        assert_eq!(g_critical(1.0, 0.0).unwrap(), 1.0);
        assert!((g_critical(1.0, 0.1).unwrap() - 1.0025f64.sqrt()).abs() < 1e-15);
        assert!((g_critical(1.0, 0.1).unwrap() - 1.001249219).abs() < 1e-9);
        assert!((g_critical(1.0, 2.0).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert!(g_critical(0.0, 0.1).is_err());
        assert!(g_critical(-1.0, 0.1).is_err());
    }

    #[test]
    fn params_at_examples() {
        let p = params_at(1.0, 1.0, 1.0, 0.0).unwrap();
        assert_eq!(p.big_omega, 1.0);
        assert_eq!(p.lambda, 0.5);
        let gcp = g_critical(1.0, 0.1).unwrap();
        let p = params_at(gcp, 500.0, 1.0, 0.1).unwrap();
        assert_eq!(p.big_omega, 500.0);
        assert_relative_eq!(p.lambda, gcp * 500f64.sqrt() / 2.0, max_relative = 1e-15);
        assert!(params_at(0.0, 1.0, 1.0, 0.1).is_err());
        assert!(params_at(1.0, -1.0, 1.0, 0.1).is_err());
    }

    #[test]
    fn decoupled_spectrum() {
        let p = params_at(1.0, 3.0, 1.0, 0.1).unwrap().with_lambda(0.0).with_n_cutoff(6);
        let h = hamiltonian(&p).unwrap();
        let mut ev: Vec<f64> = h.matrix().clone().symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        let mut expect: Vec<f64> = (0..6)
            .flat_map(|n| [n as f64 - 1.5, n as f64 + 1.5])
            .collect();
        expect.sort_by(f64::total_cmp);
        for (a, b) in ev.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn coupling_matrix_element() {
        // dim 4: index s*2 + n; ⟨n=1,↓| = index 1, |n=0,↑⟩ = index 2
        let p = ModelParams {
            omega: 1.0,
            big_omega: 2.0,
            lambda: 0.37,
            kappa: 0.0,
            efficiency: 1.0,
            n_cutoff: 2,
        };
        let h = hamiltonian(&p).unwrap();
        assert!((h.get(1, 2) - C64::new(-0.37, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn hermitian_at_large_eta() {
        let gcp = g_critical(1.0, 0.1).unwrap();
        let p = params_at(gcp, 500.0, 1.0, 0.1).unwrap();
        assert!(hamiltonian(&p).unwrap().hermiticity_residual() < 1e-14);
    }

    #[test]
    fn omega_derivative_is_number_operator() {
        let p = params_at(1.2, 4.0, 1.0, 0.1).unwrap().with_n_cutoff(8);
        let h = 1e-5;
        let hp = hamiltonian(&p.shifted(Parameter::Omega, h)).unwrap();
        let hm = hamiltonian(&p.shifted(Parameter::Omega, -h)).unwrap();
        let fd = hp.sub(&hm).unwrap().scale(C64::new(1.0 / (2.0 * h), 0.0));
        let n = hamiltonian_derivative(&p, Parameter::Omega).unwrap();
        assert!(fd.max_abs_diff(&n) < 1e-8);
    }

    #[test]
    fn trace_preservation() {
        let p = params_at(1.1, 5.0, 1.0, 0.3).unwrap().with_n_cutoff(10);
        let l = liouvillian(&p).unwrap();
        let d = p.dim();
        let mut id = DVector::zeros(d * d);
        for i in 0..d {
            id[i + d * i] = C64::new(1.0, 0.0);
        }
        let r = l.adjoint_apply(&id);
        assert!(r.norm() < 1e-10);
    }

    #[test]
    fn damped_mode_rate() {
        let nc = 6;
        let p = params_at(1.0, 2.0, 1.0, 0.4).unwrap().with_lambda(0.0).with_n_cutoff(nc);
        let l = liouvillian(&p).unwrap();
        let ops = ModelOperators::new(nc).unwrap();
        let d = p.dim();
        for k in 0..nc {
            let mut rho = DVector::zeros(d * d);
            rho[k + d * k] = C64::new(1.0, 0.0);
            let drho = l.apply(&rho);
            let m = nalgebra::DMatrix::from_column_slice(d, d, drho.as_slice());
            let dn = crate::quantum::DensityMatrix::unnormalized(Operator::from_matrix(m).unwrap())
                .expectation(&ops.n)
                .unwrap();
            assert!((dn.re + 0.4 * k as f64).abs() < 1e-12, "k={k}");
        }
    }

    #[test]
    fn memory_guard() {
        let p = params_at(1.0, 1.0, 1.0, 0.1).unwrap().with_n_cutoff(200);
        assert!(matches!(liouvillian(&p), Err(Error::MemoryLimit { .. })));
    }

    #[test]
    fn parity_symmetry() {
        for nc in [4, 12, 20] {
            let p = params_at(1.3, 7.0, 1.0, 0.1).unwrap().with_n_cutoff(nc);
            let l = liouvillian(&p).unwrap();
            let pd = parity_diagonal(nc);
            // Π L Π − L, with Π diagonal and involutive
            let mut worst = 0.0f64;
            for (r, c, v) in l.iter() {
                worst = worst.max((v * (pd[r] * pd[c]) - v).norm());
            }
            assert!(worst < 1e-10);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn roundtrip_critical_coordinates(g in 0.01f64..3.0, eta in 0.1f64..1000.0, omega in 0.1f64..10.0, kappa in 0.0f64..5.0) {
                let p = params_at(g, eta, omega, kappa).unwrap();
                prop_assert!((p.g() - g).abs() <= 1e-12 * g.max(1.0));
                prop_assert!((p.eta() - eta).abs() <= 1e-12 * eta.max(1.0));
            }

            #[test]
            fn liouvillian_preserves_trace(g in 0.1f64..2.0, eta in 0.5f64..20.0, kappa in 0.0f64..1.0, nc in 2usize..8) {
                let p = params_at(g, eta, 1.0, kappa).unwrap().with_n_cutoff(nc);
                let l = liouvillian(&p).unwrap();
                let d = p.dim();
                let mut id = DVector::zeros(d * d);
                for i in 0..d { id[i + d * i] = C64::new(1.0, 0.0); }
                prop_assert!(l.adjoint_apply(&id).norm() < 1e-10 * (1.0 + l.norm_inf()));
            }
        }
    }
}
