//! Pure-state unravelings driven by the same noise as the density-matrix
//! equations: the projector path tracks the density path step by step,
//! and purity stays at one.

use qtraj::continuous::{BrownianDrivers, DiffusiveNoise, DiffusiveSde, JumpDrivers, JumpSde, LimitModel, SdeScheme};
use qtraj::model::dipole_default;
use qtraj::unraveling::{PureState, SseDiffusive, SseJump, COUPLED_SCHEME};
use qtraj::{ComplexMatrix, C64};

fn max_gap(a: &[ComplexMatrix], b: &[ComplexMatrix]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.distance(y)).fold(0.0, f64::max)
}

fn main() -> qtraj::Result<()> {
    let model = LimitModel::new(&dipole_default(0.75))?;
    let psi0 = PureState::normalize(vec![C64::new(0.6, 0.0), C64::new(0.0, 0.8)])?;
    let rho0 = psi0.projector();
    let (dt, steps) = (1e-4, 10_000);

    let mut projectors = Vec::new();
    let mut states = Vec::new();
    SseJump::new(model.clone()).run_path(&psi0, dt, steps, &mut JumpDrivers::for_path(1, 0), |_, psi, _, _| {
        projectors.push(psi.projector_matrix())
    })?;
    JumpSde::new(model.clone(), COUPLED_SCHEME, true).run_path(&rho0, dt, steps, &mut JumpDrivers::for_path(1, 0), |_, rho, _, _| {
        states.push(rho.matrix().clone())
    })?;
    println!("jump:      max |P - rho| = {:.2e}", max_gap(&projectors, &states));

    for scheme in [COUPLED_SCHEME, SdeScheme::EulerMaruyama] {
        projectors.clear();
        states.clear();
        SseDiffusive::new(model.clone())?.run_path(&psi0, dt, steps, &mut BrownianDrivers::for_path(1, 0), |_, psi| {
            projectors.push(psi.projector_matrix())
        })?;
        DiffusiveSde::new(model.clone(), DiffusiveNoise::Two, scheme, true)?.run_path(
            &rho0,
            dt,
            steps,
            &mut BrownianDrivers::for_path(1, 0),
            |_, rho| states.push(rho.matrix().clone()),
        )?;
        let purity = projectors.iter().map(|p| (ComplexMatrix::trace_product(p, p).re - 1.0).abs()).fold(0.0, f64::max);
        println!(
            "diffusive: max |P - rho| = {:.2e} against {scheme:?}, purity defect {purity:.1e}",
            max_gap(&projectors, &states)
        );
    }
    Ok(())
}
