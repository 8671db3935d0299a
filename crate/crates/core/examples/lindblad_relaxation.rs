//! RK4 integration of the heat-bath master equation: distance to the
//! stationary state diag(p, 1 − p), with populations relaxing at rate 1
//! and coherences at rate 1/2.

use qtraj::continuous::{integrate_lindblad_with, LimitModel};
use qtraj::model::dipole_default;
use qtraj::{ComplexMatrix, DensityMatrix};

fn main() -> qtraj::Result<()> {
    let p = 0.25;
    let model = LimitModel::new(&dipole_default(p))?;
    let star = ComplexMatrix::real_diag(&[p, 1.0 - p]);
    println!("|L(diag(p, 1-p))| = {:.1e}", model.lindblad_rhs(&star).frobenius_norm());

    let rho0 = DensityMatrix::from_bloch([0.6, -0.3, 0.5])?;
    let dt = 1e-3;
    println!("{:>5}  {:>10}  {:>10}  {:>10}", "t", "distance", "|rho01|", "pop gap");
    integrate_lindblad_with(&rho0, &model, dt, 40_000, |k, rho| {
        if k % 5000 == 0 {
            let m = rho.matrix();
            let e = m.entries();
            println!(
                "{:5.1}  {:10.3e}  {:10.3e}  {:10.3e}",
                k as f64 * dt,
                m.distance(&star),
                e[1].norm(),
                (e[0].re - p).abs()
            );
        }
    })?;
    Ok(())
}
