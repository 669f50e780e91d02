//! Layer accounting for the built-in network presets.

use resdens::network::{build_network, Network, NetworkConfig};

fn main() -> resdens::Result<()> {
    println!("{:<6}{:>8}{:>8}{:>8}{:>12}{:>16}", "preset", "convs", "fcs", "total", "feature map", "flattened");
    for name in NetworkConfig::preset_names() {
        let cfg = NetworkConfig::preset(name)?;
        let (h, w) = cfg.feature_map_size();
        println!(
            "{name:<6}{:>8}{:>8}{:>8}{:>12}{:>16}",
            cfg.conv_layers(),
            cfg.fc_layers(),
            cfg.weight_layers(),
            format!("{h}x{w}"),
            cfg.flattened_features()
        );
    }

    let tiny = NetworkConfig::preset("tiny")?;
    let net = Network::new(tiny.clone())?;
    println!("\ntiny parameters:");
    for spec in net.param_specs() {
        println!("  {:<32} {:?}", spec.name, spec.shape);
    }
    let (_, params) = build_network(tiny.clone(), 0)?;
    println!("{} tensors, {} scalars", params.len(), params.scalar_count());
    println!("\ntiny preset file:\n{}", tiny.to_text());
    Ok(())
}
