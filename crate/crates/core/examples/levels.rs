//! Zeeman-split level structure in Voigt and Faraday geometry.

use qdspin::config::default_electron_g;
use qdspin::physics::{build_level_diagram, Geometry, GFactors, BOHR_MAGNETON_GHZ_PER_TESLA};

fn main() -> qdspin::Result<()> {
    let g = GFactors { electron_inplane: default_electron_g(), ..GFactors::default() };
    for geometry in [Geometry::Voigt, Geometry::Faraday] {
        let d = build_level_diagram(geometry, 2.0, g, 0.316)?;
        println!("{geometry:?} at 2 T: ground splitting {:.3} GHz", d.ground_splitting_ghz());
        for t in &d.transitions {
            println!(
                "  {} -> {}  {:?}  strength {:.3}  offset {:+.2} GHz",
                t.from_level,
                t.to_level,
                t.label,
                t.relative_strength,
                t.frequency_offset / std::f64::consts::TAU
            );
        }
    }
    println!("mu_B/h = {BOHR_MAGNETON_GHZ_PER_TESLA} GHz/T");
    Ok(())
}
