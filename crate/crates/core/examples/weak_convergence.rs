//! Discrete chains at large n against their continuous limits: mean Bloch
//! paths and jump counts compared with pooled standard errors.
//!
//! Usage: `weak_convergence [paths]`

use qtraj::continuous::{DiffusiveNoise, DiffusiveSde, JumpSde, LimitModel, SdeConfig, SdeScheme};
use qtraj::discrete::{DiscreteChain, MeasurementSetup, SetupKind};
use qtraj::ensemble::{compare_ensembles, Checkpoints, EnsembleComparison};
use qtraj::model::{build_unitary_blocks, dipole_default, Observable};
use qtraj::DensityMatrix;

fn report(name: &str, c: &EnsembleComparison) {
    println!("{name:9} max Bloch z = {:.2}  N1 z = {:.2}  N2 z = {:.2}", c.max_z, c.n1_z, c.n2_z);
}

fn main() -> qtraj::Result<()> {
    let paths: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let (p, n) = (0.75, 2000u64);
    let dt = 1.0 / n as f64;
    let params = dipole_default(p).with_n(n);
    let blocks = build_unitary_blocks(&params)?;
    let model = LimitModel::new(&params)?;
    let rho0 = DensityMatrix::from_bloch([0.4, 0.3, 0.2])?;
    let checkpoints = Checkpoints::uniform(n as usize, 10, dt)?;
    let sde = SdeConfig::new(dt, 1.0, 11).with_scheme(SdeScheme::Kraus);

    let setup = MeasurementSetup::new(SetupKind::BeforeAfter(Observable::diagonal(1.0, -1.0)?), p)?;
    let discrete = DiscreteChain::new(setup, blocks.clone())?.ensemble(&rho0, 11, paths, &checkpoints)?;
    let limit = JumpSde::new(model.clone(), SdeScheme::Kraus, true).ensemble(&rho0, &sde, paths, &checkpoints)?;
    report("jump", &compare_ensembles(&discrete, &limit)?);

    let setup = MeasurementSetup::new(SetupKind::BeforeAfter(Observable::sigma_x()), p)?;
    let discrete = DiscreteChain::new(setup, blocks)?.ensemble(&rho0, 11, paths, &checkpoints)?;
    let limit = DiffusiveSde::new(model, DiffusiveNoise::Two, SdeScheme::Kraus, true)?.ensemble(&rho0, &sde, paths, &checkpoints)?;
    report("diffusive", &compare_ensembles(&discrete, &limit)?);
    Ok(())
}
