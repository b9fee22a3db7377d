//! Node and graph homophily, the node-homophily histogram and feature smoothness
//! on generated graphs across the homophily range.
//!
//! cargo run --release --example homophily_metrics

use nosaf::graph::{generate_sbm, graph_homophily, homophily_histogram, node_homophily, smoothness_davg, SbmSpec};

fn main() -> nosaf::Result<()> {
    println!("target_h  measured  D_avg(X)  histogram (10 bins)");
    for target_h in [0.1, 0.3, 0.5, 0.7, 0.9] {
        let g = generate_sbm(&SbmSpec {
            target_h,
            ..SbmSpec::default()
        })?;
        let h = graph_homophily(&g).unwrap_or(f64::NAN);
        let hist = homophily_histogram(&g, 10);
        let davg = smoothness_davg(g.features())?;
        println!("{target_h:>8.1}  {h:>8.4}  {davg:>8.4}  {hist:?}");
    }

    let g = generate_sbm(&SbmSpec::default())?;
    let lo = (0..g.num_nodes())
        .filter_map(|i| node_homophily(&g, i).map(|h| (i, h)))
        .min_by(|a, b| a.1.total_cmp(&b.1));
    if let Some((i, h)) = lo {
        println!("least homophilic node in the default graph: {i} (H_i = {h:.3}, degree {})", g.degrees()[i]);
    }
    Ok(())
}
