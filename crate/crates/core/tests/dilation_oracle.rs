//! Global QFI against an explicit collision-model dilation.

mod common;

use common::{dilation_qfi, NC};
use openrabi::evolution::SolverOptions;
use openrabi::information::{global_qfi_generalized_me, QfiOptions};
use openrabi::model::{g_critical, params_at};

#[test]
fn generalized_me_matches_collision_model() {
    let kappa = 1.0;
    let p = params_at(g_critical(1.0, kappa).unwrap(), 1.0, 1.0, kappa).unwrap().with_n_cutoff(NC);
    let opts = QfiOptions {
        solver: SolverOptions { adaptive: false, tail_tol: f64::INFINITY, ..SolverOptions::default() },
        ..QfiOptions::default()
    };
    for t in [0.5, 1.0] {
        let me = global_qfi_generalized_me(&p, &[t], &opts).unwrap().qfi[0];
        let dil = dilation_qfi(&p, t, 10, 1e-3);
        assert!(me > 0.0);
        assert!((me - dil).abs() < 0.01 * me, "t = {t}: {me} vs {dil}");
    }
}
