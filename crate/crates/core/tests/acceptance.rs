//! Acceptance runner: one PASS/FAIL line per criterion.
//!
//! Criteria listed in `KNOWN_UNATTAINABLE` still run and report their
//! measurements, but do not fail the process.

use std::fs;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qtraj::cli::{run, ExperimentConfig, Mode};
use qtraj::continuous::{
    integrate_lindblad, BrownianDrivers, DiffusiveNoise, DiffusiveSde, JumpDrivers, JumpSde, LimitModel, SdeConfig,
    SdeScheme,
};
use qtraj::discrete::{deterministic_master_step, DiscreteChain, Event, MeasurementSetup, SetupKind};
use qtraj::ensemble::{compare_ensembles, path_rng, Checkpoints};
use qtraj::model::{build_unitary_blocks, dipole_default, Observable};
use qtraj::unraveling::{PureState, SseDiffusive, SseJump};
use qtraj::verify::{bloch_grid, generator_residual_scan, LimitKind, TestFunction};
use qtraj::{ComplexMatrix, DensityMatrix, Result, C64};

const KNOWN_UNATTAINABLE: &[u32] = &[5];
const PATHS: usize = 10_000;

type Check = fn() -> Result<Verdict>;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Result<Verdict> {
    Ok(Verdict { pass, detail })
}

/// Uniform in the Bloch ball.
fn random_state(rng: &mut ChaCha8Rng) -> DensityMatrix {
    loop {
        let v: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        if v.iter().map(|x| x * x).sum::<f64>() <= 1.0 {
            return DensityMatrix::from_bloch(v).expect("inside the ball");
        }
    }
}

fn observables() -> Result<Vec<(&'static str, Observable)>> {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    Ok(vec![
        ("diagonal", Observable::diagonal(1.0, -1.0)?),
        ("sigma_x", Observable::sigma_x()),
        ("rotated", Observable::rotated(0.7, 2.0, -0.5)?),
        ("complex", Observable::from_vector([C64::new(h, 0.0), C64::new(0.0, h)], [1.0, 0.0])?),
    ])
}

fn setups() -> Result<Vec<(String, SetupKind)>> {
    let mut out = vec![("none".to_string(), SetupKind::NoMeasurement), ("before".to_string(), SetupKind::BeforeOnly)];
    for (name, b) in observables()? {
        out.push((format!("after/{name}"), SetupKind::AfterOnly(b.clone())));
        out.push((format!("before_after/{name}"), SetupKind::BeforeAfter(b)));
    }
    Ok(out)
}

fn one_step_mean_identity() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let states: Vec<DensityMatrix> = (0..100).map(|_| random_state(&mut rng)).collect();
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for p in [0.25, 0.5, 0.75] {
        for n in [100, 10_000] {
            let blocks = build_unitary_blocks(&dipole_default(p).with_n(n))?;
            for (_, kind) in setups()? {
                let chain = DiscreteChain::new(MeasurementSetup::new(kind, p)?, blocks.clone())?;
                for rho in &states {
                    let mut mean = ComplexMatrix::zeros(2);
                    for o in chain.step_distribution(rho) {
                        mean.axpy_real(o.probability, o.state.matrix());
                    }
                    let channel = deterministic_master_step(rho, &blocks, p);
                    worst = worst.max(mean.distance(channel.matrix()));
                    cases += 1;
                }
            }
        }
    }
    verdict(worst <= 1e-12, format!("{cases} cases, max Frobenius gap {worst:.2e}"))
}

fn generator_convergence() -> Result<Verdict> {
    let p = 0.75;
    let params = dipole_default(p);
    let grid = bloch_grid(0.2, 0.9)?;
    let ns = [100, 400, 1600, 6400];
    let cases = [
        ("jump", Observable::diagonal(1.0, -1.0)?, LimitKind::Jump { weighted: true }),
        ("diffusive", Observable::sigma_x(), LimitKind::DiffusiveTwoNoise),
    ];
    let mut pass = true;
    let mut worst_slope = f64::NEG_INFINITY;
    let mut worst_ratio: f64 = 0.0;
    for (_, b, kind) in cases {
        let setup = MeasurementSetup::new(SetupKind::BeforeAfter(b), p)?;
        for scan in generator_residual_scan(&TestFunction::standard_set(), &grid, &setup, &params, kind, &ns)? {
            let ratio = scan.last() / scan.first();
            pass &= scan.is_decreasing(0.0) && scan.slope <= -0.4 && ratio <= 0.05;
            worst_slope = worst_slope.max(scan.slope);
            worst_ratio = worst_ratio.max(ratio);
        }
    }
    verdict(
        pass,
        format!("{} grid states, worst slope {worst_slope:.3}, worst final/initial {worst_ratio:.4}", grid.len()),
    )
}

fn weak_convergence() -> Result<Verdict> {
    let p = 0.75;
    let n = 10_000u64;
    let dt = 1.0 / n as f64;
    let params = dipole_default(p).with_n(n);
    let blocks = build_unitary_blocks(&params)?;
    let model = LimitModel::new(&params)?;
    let rho0 = DensityMatrix::from_bloch([0.4, 0.3, 0.2])?;
    let checkpoints = Checkpoints::uniform(n as usize, 10, dt)?;
    let sde = SdeConfig::new(dt, 1.0, 3).with_scheme(SdeScheme::Kraus);

    let jump_setup = MeasurementSetup::new(SetupKind::BeforeAfter(Observable::diagonal(1.0, -1.0)?), p)?;
    let discrete = DiscreteChain::new(jump_setup, blocks.clone())?.ensemble(&rho0, 3, PATHS, &checkpoints)?;
    let limit = JumpSde::new(model.clone(), SdeScheme::Kraus, true).ensemble(&rho0, &sde, PATHS, &checkpoints)?;
    let jump = compare_ensembles(&discrete, &limit)?;

    let diffusive_setup = MeasurementSetup::new(SetupKind::BeforeAfter(Observable::sigma_x()), p)?;
    let discrete = DiscreteChain::new(diffusive_setup, blocks)?.ensemble(&rho0, 3, PATHS, &checkpoints)?;
    let limit =
        DiffusiveSde::new(model, DiffusiveNoise::Two, SdeScheme::Kraus, true)?.ensemble(&rho0, &sde, PATHS, &checkpoints)?;
    let diffusive = compare_ensembles(&discrete, &limit)?;

    let pass = jump.max_z <= 4.0 && jump.n1_z <= 4.0 && jump.n2_z <= 4.0 && diffusive.max_z <= 4.0;
    verdict(
        pass,
        format!(
            "jump: Bloch max z {:.2}, N1 z {:.2}, N2 z {:.2}; diffusive: Bloch max z {:.2}",
            jump.max_z, jump.n1_z, jump.n2_z, diffusive.max_z
        ),
    )
}

fn lindblad_reproduction() -> Result<Verdict> {
    let model = LimitModel::new(&dipole_default(0.75))?;
    let config = SdeConfig::new(1e-3, 2.0, 4).with_scheme(SdeScheme::Kraus);
    let checkpoints = Checkpoints::at_times(&[0.5, 1.0, 2.0], config.dt)?;
    let psi0 = PureState::normalize(vec![C64::new(0.6, 0.0), C64::new(0.0, 0.8)])?;
    let rho0 = psi0.projector();
    let path = integrate_lindblad(&rho0, &model, config.dt, checkpoints.last_step())?;
    let reference: Vec<DensityMatrix> = checkpoints.steps.iter().map(|&s| path[s].clone()).collect();

    let layers = [
        (
            "sde diffusive",
            DiffusiveSde::new(model.clone(), DiffusiveNoise::Two, SdeScheme::Kraus, true)?
                .ensemble(&rho0, &config, PATHS, &checkpoints)?,
        ),
        ("sde jump", JumpSde::new(model.clone(), SdeScheme::Kraus, true).ensemble(&rho0, &config, PATHS, &checkpoints)?),
        ("sse jump", SseJump::new(model.clone()).ensemble(&psi0, &config, PATHS, &checkpoints)?),
        ("sse diffusive", SseDiffusive::new(model)?.ensemble(&psi0, &config, PATHS, &checkpoints)?),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, summary) in &layers {
        let z = summary.max_z_against(&reference);
        pass &= z <= 4.0;
        parts.push(format!("{name} {z:.2}"));
    }
    verdict(pass, format!("max z: {}", parts.join(", ")))
}

fn fixed_point() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dt = 1e-3;
    let steps = 10_000;
    let mut worst: f64 = 0.0;
    let mut pass = true;
    for p in [0.25, 0.75] {
        let model = LimitModel::new(&dipole_default(p))?;
        let star = ComplexMatrix::real_diag(&[p, 1.0 - p]);
        pass &= model.lindblad_rhs(&star).frobenius_norm() <= 1e-14;
        for _ in 0..5 {
            let rho0 = random_state(&mut rng);
            let end = integrate_lindblad(&rho0, &model, dt, steps)?.pop().expect("nonempty");
            worst = worst.max(end.matrix().distance(&star));
        }
    }
    pass &= worst <= 1e-6;
    verdict(
        pass,
        format!(
            "max distance to diag(p, 1-p) at t = 10 is {worst:.2e}; coherences relax at rate 1/2, \
             so e^-5 ~ 6.7e-3 of the initial coherence remains"
        ),
    )
}

fn max_gap(a: &[ComplexMatrix], b: &[DensityMatrix]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.distance(y.matrix())).fold(0.0, f64::max)
}

fn unraveling_purity() -> Result<Verdict> {
    let model = LimitModel::new(&dipole_default(0.75))?;
    let dt = 1e-4;
    let steps = 10_000;
    let psi0 = PureState::normalize(vec![C64::new(0.6, 0.0), C64::new(0.0, 0.8)])?;
    let rho0 = psi0.projector();
    let sse_jump = SseJump::new(model.clone());
    let sse_diffusive = SseDiffusive::new(model.clone())?;
    let sde_jump = JumpSde::new(model.clone(), SdeScheme::Kraus, true);
    let sde_diffusive = DiffusiveSde::new(model.clone(), DiffusiveNoise::Two, SdeScheme::Kraus, true)?;
    let sde_euler = DiffusiveSde::new(model, DiffusiveNoise::Two, SdeScheme::EulerMaruyama, true)?;

    let (mut purity, mut jump_gap, mut diffusive_gap, mut euler_gap) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for path in 0..100 {
        let mut projectors = Vec::with_capacity(steps + 1);
        sse_jump.run_path(&psi0, dt, steps, &mut JumpDrivers::for_path(6, path), |_, psi, _, _| {
            projectors.push(psi.projector_matrix())
        })?;
        for p in &projectors {
            purity = purity.max((ComplexMatrix::trace_product(p, p).re - 1.0).abs());
        }
        let mut states = Vec::with_capacity(steps + 1);
        sde_jump.run_path(&rho0, dt, steps, &mut JumpDrivers::for_path(6, path), |_, rho, _, _| states.push(rho.clone()))?;
        jump_gap = jump_gap.max(max_gap(&projectors, &states));

        projectors.clear();
        sse_diffusive.run_path(&psi0, dt, steps, &mut BrownianDrivers::for_path(6, path), |_, psi| {
            projectors.push(psi.projector_matrix())
        })?;
        for p in &projectors {
            purity = purity.max((ComplexMatrix::trace_product(p, p).re - 1.0).abs());
        }
        states.clear();
        sde_diffusive.run_path(&rho0, dt, steps, &mut BrownianDrivers::for_path(6, path), |_, rho| states.push(rho.clone()))?;
        diffusive_gap = diffusive_gap.max(max_gap(&projectors, &states));
        states.clear();
        sde_euler.run_path(&rho0, dt, steps, &mut BrownianDrivers::for_path(6, path), |_, rho| states.push(rho.clone()))?;
        euler_gap = euler_gap.max(max_gap(&projectors, &states));
    }
    let pass = purity <= 1e-12 && jump_gap <= 1e-6 && diffusive_gap <= 1e-6;
    verdict(
        pass,
        format!(
            "purity defect {purity:.2e}; coupled gap jump {jump_gap:.2e}, diffusive {diffusive_gap:.2e} \
             (Euler-Maruyama density scheme: {euler_gap:.2e})"
        ),
    )
}

fn zero_temperature() -> Result<Verdict> {
    let params = dipole_default(1.0);
    let model = LimitModel::new(&params)?;
    let config = SdeConfig::new(1e-3, 1.0, 7).with_scheme(SdeScheme::Kraus);
    let checkpoints = Checkpoints::uniform(1000, 10, config.dt)?;
    let rho0 = DensityMatrix::maximally_mixed(2);
    let psi0 = PureState::basis(2, 1);
    let sde = JumpSde::new(model.clone(), SdeScheme::Kraus, true).ensemble(&rho0, &config, 1000, &checkpoints)?;
    let sse = SseJump::new(model.clone()).ensemble(&psi0, &config, 1000, &checkpoints)?;
    let chain = DiscreteChain::new(
        MeasurementSetup::new(SetupKind::BeforeAfter(Observable::diagonal(1.0, -1.0)?), 1.0)?,
        build_unitary_blocks(&params.with_n(1000))?,
    )?;
    let discrete = chain.ensemble(&rho0, 7, 1000, &checkpoints)?;
    let n2_total: f64 = [&sde, &sse, &discrete].iter().flat_map(|e| e.checkpoints.iter().map(|c| c.n2.mean)).sum();
    let n1_final = sde.checkpoints.last().expect("nonempty").n1.mean;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let c = model.coupling().clone();
    let cdc = c.adjoint().matmul(&c);
    let mut identity_gap: f64 = 0.0;
    for _ in 0..100 {
        let rho = random_state(&mut rng);
        let m = rho.matrix();
        identity_gap = identity_gap.max(model.diffusion_w(m).frobenius_norm());
        identity_gap = identity_gap.max(model.absorption_rate(m).abs());
        // −i[H0, ρ] − ½{C†C, ρ} + Tr[CρC†]ρ
        let mut expected = ComplexMatrix::commutator(model.hamiltonian(), m).scale(C64::new(0.0, -1.0));
        expected.axpy_real(-0.5, &ComplexMatrix::anticommutator(&cdc, m));
        expected.axpy_real(rho.weight(&c), m);
        identity_gap = identity_gap.max(model.jump_drift(m).distance(&expected));
    }
    let pass = n2_total == 0.0 && n1_final > 0.0 && identity_gap <= 1e-14;
    verdict(
        pass,
        format!("type-2 count 0 on 3 x 1000 paths: {}; mean N1(1) {n1_final:.3}; identity gap {identity_gap:.1e}", n2_total == 0.0),
    )
}

fn jump_targets() -> Result<Verdict> {
    let p = 0.6;
    let params = dipole_default(p);
    let model = LimitModel::new(&params)?;
    let e0 = ComplexMatrix::unit(2, 0, 0);
    let e1 = ComplexMatrix::unit(2, 1, 1);
    let rho0 = DensityMatrix::from_bloch([0.4, 0.3, 0.2])?;
    let psi0 = PureState::normalize(vec![C64::new(0.6, 0.0), C64::new(0.0, 0.8)])?;
    let (mut emissions, mut absorptions, mut misses) = (0u64, 0u64, 0u64);
    let mut tally = |d1: u64, d2: u64, state: &ComplexMatrix| {
        if d1 + d2 > 1 {
            misses += 1;
        }
        if d1 == 1 {
            emissions += 1;
            misses += u64::from(state != &e0);
        }
        if d2 == 1 {
            absorptions += 1;
            misses += u64::from(state != &e1);
        }
    };

    let chain = DiscreteChain::new(
        MeasurementSetup::new(SetupKind::BeforeAfter(Observable::diagonal(1.0, -1.0)?), p)?,
        build_unitary_blocks(&params.with_n(1000))?,
    )?;
    let config = SdeConfig::new(1e-3, 3.0, 8).with_scheme(SdeScheme::Kraus);
    let sde = JumpSde::new(model.clone(), SdeScheme::Kraus, true);
    let sse = SseJump::new(model);
    for path in 0..100 {
        let rec = chain.simulate_path(&rho0, 3000, &mut path_rng(8, path, qtraj::ensemble::channel::DISCRETE))?;
        for (k, event) in rec.events.iter().enumerate() {
            let d1 = u64::from(*event == Event::Emission);
            let d2 = u64::from(*event == Event::Absorption);
            tally(d1, d2, rec.states[k + 1].matrix());
        }
        let rec = sde.simulate_path(&rho0, &config, path)?;
        for k in 1..rec.states.len() {
            tally(rec.n1[k] - rec.n1[k - 1], rec.n2[k] - rec.n2[k - 1], rec.states[k].matrix());
        }
        let rec = sse.simulate_path(&psi0, &config, path)?;
        for k in 1..rec.states.len() {
            tally(rec.n1[k] - rec.n1[k - 1], rec.n2[k] - rec.n2[k - 1], &rec.states[k].projector_matrix());
        }
    }
    let pass = misses == 0 && emissions > 0 && absorptions > 0;
    verdict(pass, format!("{emissions} emissions, {absorptions} absorptions, {misses} off-target or simultaneous"))
}

fn determinism() -> Result<Verdict> {
    let base = serde_json::json!({
        "model": {
            "h0": [[0.5, 0.0], [0.0, 0.0], [0.0, 0.0], [-0.5, 0.0]],
            "c": [[0.0, 0.0], [1.0, 0.0], [0.0, 0.0], [0.0, 0.0]],
            "gamma0": 0.0,
            "gamma1": 1.0,
            "p": 0.75,
            "n": 200
        },
        "setup": {"measurement": "before_after", "observable": {"angle": 0.4}},
        "initial_state": {"psi": [[0.6, 0.0], [0.0, 0.8]]},
        "T": 0.5,
        "dt": 0.005,
        "paths": 64,
        "checkpoints": 5,
        "seed": 9,
        "emit_paths": true,
        "verify": {"ns": [50, 100]}
    });
    let config = ExperimentConfig::from_json(&base.to_string())?;
    let mut identical = 0;
    let mut differing = Vec::new();
    let modes = [
        Mode::Discrete,
        Mode::Lindblad,
        Mode::SdeDiffusive,
        Mode::SdeJump,
        Mode::SseJump,
        Mode::SseDiffusive,
        Mode::VerifyGenerator,
        Mode::Compare,
    ];
    for mode in modes {
        let a = tempfile::tempdir()?;
        let b = tempfile::tempdir()?;
        run(mode, &config, a.path())?;
        run(mode, &config, b.path())?;
        let mut files = Vec::new();
        collect_files(a.path(), a.path(), &mut files)?;
        let same = files
            .iter()
            .all(|rel| fs::read(a.path().join(rel)).ok() == fs::read(b.path().join(rel)).ok());
        if same {
            identical += 1;
        } else {
            differing.push(format!("{mode:?}"));
        }
    }
    verdict(
        differing.is_empty(),
        format!("{identical}/{} modes byte-identical across reruns{}", modes.len(), if differing.is_empty() {
            String::new()
        } else {
            format!("; differing: {}", differing.join(", "))
        }),
    )
}

fn collect_files(root: &std::path::Path, dir: &std::path::Path, out: &mut Vec<std::path::PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            out.push(path.strip_prefix(root).expect("under root").to_path_buf());
        }
    }
    Ok(())
}

fn main() {
    let criteria: [(u32, &str, Check); 9] = [
        (1, "one-step mean identity", one_step_mean_identity),
        (2, "generator convergence", generator_convergence),
        (3, "weak convergence discrete to continuous", weak_convergence),
        (4, "Lindblad reproduction from every layer", lindblad_reproduction),
        (5, "fixed point by t = 10", fixed_point),
        (6, "unraveling purity and coupling", unraveling_purity),
        (7, "zero-temperature reduction", zero_temperature),
        (8, "jump targets and exclusivity", jump_targets),
        (9, "determinism", determinism),
    ];
    let mut unexpected = 0;
    for (id, name, check) in criteria {
        let start = Instant::now();
        let v = check().unwrap_or_else(|e| Verdict {
            pass: false,
            detail: format!("error: {e}"),
        });
        let known = !v.pass && KNOWN_UNATTAINABLE.contains(&id);
        if !v.pass && !known {
            unexpected += 1;
        }
        println!(
            "criterion {id} ({name}): {}{} [{:.1}s] {}",
            if v.pass { "PASS" } else { "FAIL" },
            if known { " (known unattainable)" } else { "" },
            start.elapsed().as_secs_f64(),
            v.detail
        );
    }
    if unexpected > 0 {
        std::process::exit(1);
    }
}
