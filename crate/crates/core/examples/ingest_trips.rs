//! Trip records to an O-D-T tensor at two resolutions, with the sparsity
//! histogram and the binary tensor file.

use odcast::data::{ingest, parse_timestamp, sparsity_report, DemandTensor, TripRecord};
use odcast::graph::{Zone, ZoneTable};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> odcast::Result<()> {
    let zones = ZoneTable::new(vec![
        Zone::new("10001", 40.7506, -73.9972)?,
        Zone::new("10003", 40.7318, -73.9890)?,
        Zone::new("10011", 40.7420, -74.0000)?,
    ])?;
    let t0 = parse_timestamp("2019-09-02T00:00:00Z")?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ids = ["10001", "10003", "10011"];
    let trips: Vec<TripRecord> = (0..400)
        .map(|_| TripRecord {
            timestamp: t0 + rng.random_range(0..86_400),
            origin_zone: ids[rng.random_range(0..3)].into(),
            dest_zone: ids[rng.random_range(0..3)].into(),
            count: 1,
        })
        .collect();

    for minutes in [5, 15, 60] {
        let out = ingest(&trips, &zones, minutes, None)?;
        let report = sparsity_report(&out.tensor);
        println!(
            "{minutes:>2} min: {} pairs x {} windows, {} trips, zero rate {:.3}",
            out.tensor.num_nodes(),
            out.tensor.num_windows(),
            out.tensor.total(),
            report.zero_rate
        );
    }

    let fine = ingest(&trips, &zones, 5, None)?.tensor;
    let hourly = fine.coarsen(12)?;
    println!("5 min coarsened to 60 min keeps {} trips", hourly.total());

    let dir = std::env::temp_dir().join("odcast_ingest_example");
    std::fs::create_dir_all(&dir).map_err(|e| odcast::Error::Data(e.to_string()))?;
    let path = dir.join("hourly.odt");
    hourly.write(&path)?;
    let back = DemandTensor::read(&path)?;
    println!(
        "wrote {} and read it back identical: {}",
        path.display(),
        back == hourly
    );
    Ok(())
}
