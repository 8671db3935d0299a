//! One repeated-measurement path of a qubit probed by a thermal spin chain,
//! measured before and after each interaction in the computational basis.
//! Prints the emission/absorption record and writes the path as CSV to stdout
//! when `--csv` is given.

use qtraj::discrete::{DiscreteChain, Event, MeasurementSetup, SetupKind};
use qtraj::ensemble::{channel, path_rng};
use qtraj::model::{build_unitary_blocks, dipole_default, Observable};
use qtraj::DensityMatrix;

fn main() -> qtraj::Result<()> {
    let csv = std::env::args().any(|a| a == "--csv");
    let (p, n) = (0.75, 1000);
    let blocks = build_unitary_blocks(&dipole_default(p).with_n(n))?;
    let setup = MeasurementSetup::new(SetupKind::BeforeAfter(Observable::diagonal(1.0, -1.0)?), p)?;
    let chain = DiscreteChain::new(setup, blocks)?;
    let rho0 = DensityMatrix::from_bloch([0.4, 0.3, 0.2])?;
    let steps = 5 * n as usize;
    let rec = chain.simulate_path(&rho0, steps, &mut path_rng(1, 0, channel::DISCRETE))?;

    if csv {
        return rec.write_csv(std::io::stdout().lock());
    }
    for (k, event) in rec.events.iter().enumerate() {
        if *event != Event::Continuous {
            let b = rec.states[k + 1].bloch();
            println!("t = {:.3}  {:10}  bloch = ({:+.3}, {:+.3}, {:+.3})", (k + 1) as f64 / n as f64, event.as_str(), b[0], b[1], b[2]);
        }
    }
    let b = rec.states[steps].bloch();
    println!(
        "after {steps} steps: N1 = {}, N2 = {}, bloch = ({:+.3}, {:+.3}, {:+.3})",
        rec.n1[steps], rec.n2[steps], b[0], b[1], b[2]
    );
    Ok(())
}
