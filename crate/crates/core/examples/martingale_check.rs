//! Martingale-problem check along simulated jump paths: window increments
//! of f(ρ_t) − ∫𝒜f(ρ_s)ds average to zero for the limit generator 𝒜.

use qtraj::continuous::{JumpDrivers, JumpSde, LimitModel, SdeScheme};
use qtraj::ensemble::run_paths;
use qtraj::model::dipole_default;
use qtraj::verify::{limit_generator, martingale_residual, LimitKind, MartingalePath, TestFunction};
use qtraj::DensityMatrix;

fn main() -> qtraj::Result<()> {
    let model = LimitModel::new(&dipole_default(0.6))?;
    let sde = JumpSde::new(model.clone(), SdeScheme::Kraus, true);
    let rho0 = DensityMatrix::from_bloch([0.5, 0.0, 0.4])?;
    let (dt, steps, window, paths) = (1e-3, 2000, 250, 4000);
    let kind = LimitKind::Jump { weighted: true };

    for f in TestFunction::standard_set() {
        let rows = run_paths(paths, |i| {
            let mut m = MartingalePath::new(&f, |rho: &DensityMatrix| limit_generator(&f, rho, kind, &model), dt, window);
            sde.run_path(&rho0, dt, steps, &mut JumpDrivers::for_path(2, i), |k, rho, _, _| m.observe(k, rho))?;
            Ok(m.finish())
        })?;
        let windows = martingale_residual(&rows, dt, window)?;
        let worst = windows.iter().map(|w| w.z).fold(0.0, f64::max);
        println!("f={:3} windows={} max |mean|/stderr = {worst:.2}", f.name, windows.len());
    }
    Ok(())
}
