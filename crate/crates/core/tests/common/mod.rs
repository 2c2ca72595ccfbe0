//! Collision-model dilation: the cavity emits into a chain of time-bin
//! modes, the joint state stays pure and its QFI follows from the overlap of
//! the states at ω ± δ.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use openrabi::model::ModelParams;

pub const NC: usize = 3;
const BIN_DIM: usize = 3;

fn ladder(n: usize) -> DMatrix<C64> {
    DMatrix::from_fn(n, n, |i, j| if j == i + 1 { C64::new((j as f64).sqrt(), 0.0) } else { C64::new(0.0, 0.0) })
}

fn kron(a: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
    a.kronecker(b)
}

fn hamiltonian(p: &ModelParams, omega: f64) -> DMatrix<C64> {
    let c = kron(&DMatrix::identity(2, 2), &ladder(NC));
    let cd = c.adjoint();
    let sz = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![C64::new(-1.0, 0.0), C64::new(1.0, 0.0)]));
    let sx = DMatrix::from_row_slice(2, 2, &[C64::new(0.0, 0.0), C64::new(1.0, 0.0), C64::new(1.0, 0.0), C64::new(0.0, 0.0)]);
    let x = ladder(NC) + ladder(NC).adjoint();
    &cd * &c * C64::new(omega, 0.0) + kron(&sz, &DMatrix::identity(NC, NC)) * C64::new(p.big_omega / 2.0, 0.0)
        - kron(&sx, &x) * C64::new(p.lambda, 0.0)
}

/// Joint system-plus-bins state after `n_bins` collisions of length `dt`.
fn joint_state(p: &ModelParams, omega: f64, t: f64, n_bins: usize) -> Vec<C64> {
    let d = 2 * NC;
    let dt = t / n_bins as f64;
    let c = kron(&DMatrix::identity(2, 2), &ladder(NC));
    let b = ladder(BIN_DIM);
    let gen = (kron(&c, &b.adjoint()) - kron(&c.adjoint(), &b)) * C64::new((p.kappa * dt).sqrt(), 0.0);
    let free = (hamiltonian(p, omega) * C64::new(0.0, -dt)).exp();
    let u = kron(&free, &DMatrix::identity(BIN_DIM, BIN_DIM)) * gen.exp();
    // v[i * rest + r]: system index i, earlier bins r
    let mut v = vec![C64::new(0.0, 0.0); d];
    v[0] = C64::new(1.0, 0.0);
    let mut rest = 1;
    for _ in 0..n_bins {
        let mut out = vec![C64::new(0.0, 0.0); d * BIN_DIM * rest];
        for a in 0..d * BIN_DIM {
            for i in 0..d {
                let w = u[(a, i * BIN_DIM)];
                if w == C64::new(0.0, 0.0) {
                    continue;
                }
                for r in 0..rest {
                    out[a * rest + r] += w * v[i * rest + r];
                }
            }
        }
        v = out;
        rest *= BIN_DIM;
    }
    v
}

pub fn dilation_qfi(p: &ModelParams, t: f64, n_bins: usize, delta: f64) -> f64 {
    let plus = joint_state(p, p.omega + delta, t, n_bins);
    let minus = joint_state(p, p.omega - delta, t, n_bins);
    let overlap: C64 = minus.iter().zip(&plus).map(|(a, b)| a.conj() * b).sum();
    -2.0 * overlap.norm().ln() / (delta * delta)
}
