//! Finite-difference check of every layer type and of the whole tiny
//! network.

use resdens::harness::{cmd_gradcheck, GradcheckConfig};

fn main() -> resdens::Result<()> {
    let report = cmd_gradcheck(&GradcheckConfig::default())?;
    print!("{}", report.render());
    if !report.passed() {
        std::process::exit(3);
    }
    Ok(())
}
