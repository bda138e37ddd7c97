//! The historical-average baseline on demand with a daily cycle.

use odcast::data::{split, synth_generate, synthetic_zones, zinb_field_for_zero_rate, Seasonality};
use odcast::graph::OdGraph;
use odcast::metrics::{HistoricalAverage, MetricsReport};

fn main() -> odcast::Result<()> {
    let zones = synthetic_zones(3, 4);
    let graph = OdGraph::from_zone_table(&zones, 3, 3)?;
    let field = zinb_field_for_zero_rate(graph.num_nodes(), 0.5, 0.1, (3.0, 8.0), 1)?;
    let daily = Seasonality {
        amplitude: 0.8,
        slots_per_day: 24,
    };
    let demand = synth_generate(&graph, 24 * 30, &field, Some(daily), 60, 9)?;

    let s = split(demand.num_windows(), (0.7, 0.1, 0.2))?;
    let ha = HistoricalAverage::fit(&demand, s.train.clone())?;
    for slot in [0, 6, 12, 18] {
        println!("pair 0, hour {slot:>2}: {:.3}", ha.predict(0, slot));
    }
    let [_, _, test] = s.windows(8, 2)?;
    let pred = ha.predict_windows(&demand, &test, 8, 2);
    let (_, truth) = demand.batch(&test, 8, 2)?;
    print!(
        "{}",
        MetricsReport::from_points(&pred, truth.data())?.to_table("historical average")
    );
    Ok(())
}
