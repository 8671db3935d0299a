//! Sup-residual between the discrete generator and its limit on a Bloch
//! lattice, for a diagonal and a non-diagonal observable measured before
//! and after each interaction.

use qtraj::discrete::{MeasurementSetup, SetupKind};
use qtraj::model::{dipole_default, Observable};
use qtraj::verify::{bloch_grid, generator_residual_scan, LimitKind, TestFunction};

fn main() -> qtraj::Result<()> {
    let p = 0.75;
    let params = dipole_default(p);
    let grid = bloch_grid(0.2, 0.9)?;
    let ns = [100, 400, 1600, 6400];
    let cases = [
        ("jump", SetupKind::BeforeAfter(Observable::diagonal(1.0, -1.0)?), LimitKind::Jump { weighted: true }),
        ("diffusive", SetupKind::BeforeAfter(Observable::sigma_x()), LimitKind::DiffusiveTwoNoise),
    ];
    println!("{} grid states", grid.len());
    for (name, kind, limit) in cases {
        let setup = MeasurementSetup::new(kind, p)?;
        for scan in generator_residual_scan(&TestFunction::standard_set(), &grid, &setup, &params, limit, &ns)? {
            let rows: Vec<String> = scan.rows.iter().map(|r| format!("{:.3e}", r.sup_residual)).collect();
            println!(
                "{name:9} f={:3} slope={:+.3} ratio={:.4}  [{}]",
                scan.function,
                scan.slope,
                scan.last() / scan.first(),
                rows.join(", ")
            );
        }
    }
    Ok(())
}
