//! Builds the O-D pair graph for a handful of zones and prints the
//! adjacency, transition rows, Chebyshev terms and the diffusion series.

use odcast::graph::{chebyshev_sequence, diffusion_stationary, haversine, OdGraph, Zone};

fn print_matrix(name: &str, rows: usize, data: &[f64]) {
    println!("{name}:");
    for row in data.chunks(rows) {
        let cells: Vec<String> = row.iter().map(|x| format!("{x:8.4}")).collect();
        println!("  {}", cells.join(" "));
    }
}

fn main() -> odcast::Result<()> {
    let zones = [
        Zone::new("loop", 41.8781, -87.6298)?,
        Zone::new("ohare", 41.9742, -87.9073)?,
        Zone::new("hyde_park", 41.7943, -87.5907)?,
    ];
    println!(
        "loop -> ohare {:.2} km",
        haversine(41.8781, -87.6298, 41.9742, -87.9073)?
    );

    // Two origins by two destinations: four O-D pairs as graph vertices.
    let graph = OdGraph::new(zones[..2].to_vec(), zones[1..].to_vec())?;
    let v = graph.num_nodes();
    for i in 0..v {
        let (o, d) = graph.pair(i);
        println!("pair {i}: {} -> {}", o.id, d.id);
    }
    print_matrix("adjacency", v, graph.adjacency().data());
    print_matrix("forward transition", v, graph.forward_transition().data());

    let cheb = chebyshev_sequence(graph.forward_transition(), 3)?;
    print_matrix("T_3(W_f)", v, cheb[3].data());

    let p = diffusion_stationary(graph.adjacency(), 0.15, 50)?;
    print_matrix("diffusion series (alpha 0.15, 50 terms)", v, p.data());
    Ok(())
}
