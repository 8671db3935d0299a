//! Ensemble means of every stochastic layer against the Lindblad path.
//!
//! Usage: `lindblad_reproduction [euler_maruyama|kraus] [paths]`

use qtraj::continuous::{integrate_lindblad, DiffusiveNoise, DiffusiveSde, JumpSde, LimitModel, SdeConfig, SdeScheme};
use qtraj::ensemble::{Checkpoints, EnsembleSummary};
use qtraj::model::dipole_default;
use qtraj::unraveling::{PureState, SseDiffusive, SseJump};
use qtraj::DensityMatrix;

fn report(name: &str, summary: &EnsembleSummary, reference: &[DensityMatrix]) {
    println!(
        "{name:14} max z = {:5.2}  max repair = {:.2e}",
        summary.max_z_against(reference),
        summary.max_repair
    );
}

fn main() -> qtraj::Result<()> {
    let mut args = std::env::args().skip(1);
    let scheme = match args.next().as_deref() {
        Some("kraus") => SdeScheme::Kraus,
        _ => SdeScheme::EulerMaruyama,
    };
    let paths: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(10_000);

    let model = LimitModel::new(&dipole_default(0.75))?;
    let config = SdeConfig::new(1e-3, 2.0, 2024).with_scheme(scheme);
    let checkpoints = Checkpoints::at_times(&[0.5, 1.0, 2.0], config.dt)?;
    // a pure start so the unravelings share it
    let psi0 = PureState::normalize(vec![qtraj::C64::new(0.6, 0.0), qtraj::C64::new(0.0, 0.8)])?;
    let rho0 = psi0.projector();

    let path = integrate_lindblad(&rho0, &model, config.dt, checkpoints.last_step())?;
    let reference: Vec<DensityMatrix> = checkpoints.steps.iter().map(|&s| path[s].clone()).collect();

    println!("scheme {scheme:?}, {paths} paths, dt = {}", config.dt);
    let diffusive = DiffusiveSde::new(model.clone(), DiffusiveNoise::Two, scheme, true)?;
    report("sde diffusive", &diffusive.ensemble(&rho0, &config, paths, &checkpoints)?, &reference);
    let jump = JumpSde::new(model.clone(), scheme, true);
    report("sde jump", &jump.ensemble(&rho0, &config, paths, &checkpoints)?, &reference);
    report("sse jump", &SseJump::new(model.clone()).ensemble(&psi0, &config, paths, &checkpoints)?, &reference);
    report(
        "sse diffusive",
        &SseDiffusive::new(model)?.ensemble(&psi0, &config, paths, &checkpoints)?,
        &reference,
    );
    Ok(())
}
