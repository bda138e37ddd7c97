//! Zero-inflated negative binomial: pmf, moments, the 10-90% interval and
//! sampling, next to the plain NB with the same count part.

use odcast::heads::{nb_log_pmf, zinb_log_pmf, Dist};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> odcast::Result<()> {
    let (pi, n, p) = (0.6, 2.0, 0.4);
    println!("{:>3} {:>10} {:>10}", "y", "zinb", "nb");
    for y in 0..8 {
        println!(
            "{y:>3} {:>10.5} {:>10.5}",
            zinb_log_pmf(y, pi, n, p)?.exp(),
            nb_log_pmf(y, n, p)?.exp()
        );
    }

    for d in [
        Dist::Zinb { pi, n, p },
        Dist::Nb { n, p },
        Dist::Zinb { pi: 0.95, n, p },
    ] {
        println!(
            "{d:?}: mean {:.3}, median {}, 10-90% [{}, {}]",
            d.mean(),
            d.median(),
            d.quantile(0.1),
            d.quantile(0.9)
        );
    }

    let d = Dist::Zinb { pi, n, p };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let draws: Vec<f64> = (0..100_000).map(|_| d.sample(&mut rng)).collect();
    let zeros = draws.iter().filter(|&&x| x == 0.0).count() as f64 / draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    println!(
        "100k draws: zero fraction {zeros:.4} (exact {:.4}), mean {mean:.4}",
        d.cdf(0.0)
    );
    Ok(())
}
