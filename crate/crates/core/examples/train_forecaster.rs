//! Synthesises sparse demand, trains the ZINB forecaster, scores the test
//! windows and round-trips the checkpoint.

use odcast::data::{split, synth_generate, synthetic_zones, zinb_field_for_zero_rate};
use odcast::graph::OdGraph;
use odcast::metrics::MetricsReport;
use odcast::model::{Forecaster, ModelConfig};

fn main() -> odcast::Result<()> {
    let zones = synthetic_zones(4, 1);
    let graph = OdGraph::from_zone_table(&zones, 4, 4)?;
    let field = zinb_field_for_zero_rate(graph.num_nodes(), 0.8, 0.1, (1.0, 4.0), 2)?;
    let demand = synth_generate(&graph, 1500, &field, None, 15, 7)?;
    println!(
        "{} pairs x {} windows, zero rate {:.3}",
        demand.num_nodes(),
        demand.num_windows(),
        demand.zero_rate()
    );

    let config = ModelConfig {
        dgcn_hidden: vec![16, 16],
        learning_rate: 0.01,
        max_epochs: 15,
        patience: 5,
        seed: 3,
        ..ModelConfig::default()
    };
    let (model, log) = Forecaster::train(config.clone(), &demand, &graph)?;
    for e in &log.epochs {
        println!("epoch {:>2}: train {:.4}  val {:.4}", e.epoch, e.train_nll, e.val_nll);
    }

    let [_, _, test] =
        split(demand.num_windows(), config.split_fractions())?.windows(config.t_window, config.k_horizon)?;
    let supports = model.supports(&graph)?;
    let (bundle, truth) = model.predict_windows(&supports, &demand, &test)?;
    print!("{}", MetricsReport::from_bundle(&bundle, &truth)?.to_table("zinb head"));

    let restored = Forecaster::from_bytes(&model.to_bytes())?;
    let history = demand.latest_history(config.t_window)?;
    let a = model.predict(&history, &graph)?;
    let b = restored.predict(&history, &graph)?;
    println!("checkpoint round trip identical: {}", a == b);
    Ok(())
}
