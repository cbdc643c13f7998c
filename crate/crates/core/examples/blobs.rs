//! Trains on the four-blob suite with and without constraints for a few seeds.
//!
//! cargo run --release -p dcgmm-core --example blobs -- [epochs] [seeds] [noise]

use dcgmm::data::{four_blobs, split};
use dcgmm::metrics::score;
use dcgmm::model::{cluster_assign, DecoderKind};
use dcgmm::pipeline::draw_constraints;
use dcgmm::prior::PairwiseWeights;
use dcgmm::trainer::{fit, ConstraintSettings, RunConfig, TestSplit};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> dcgmm::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let epochs = args.get(1).and_then(|a| a.parse().ok()).unwrap_or(150);
    let seeds: u64 = args.get(2).and_then(|a| a.parse().ok()).unwrap_or(3);
    let noise: f64 = args.get(3).and_then(|a| a.parse().ok()).unwrap_or(0.0);
    let (mut hits, mut wins) = (0, 0);
    let (mut fhits, mut fwins) = (0, 0);
    let mut table = Vec::new();
    let first: u64 = std::env::var("BLOBS_FIRST").ok().and_then(|v| v.parse().ok()).unwrap_or(0);
    for seed in first..first + seeds {
        let ds = four_blobs(2000, 3.0, 1.25, &mut ChaCha8Rng::seed_from_u64(1000 + seed))?;
        let (train, test) = split(&ds, 0.8, seed)?;
        let labels = train.labels.clone().unwrap();
        let settings = ConstraintSettings {
            count: 600,
            noise,
            ..ConstraintSettings::default()
        };
        let w = draw_constraints(&labels, &settings, seed)?;
        let cfg = RunConfig {
            k: 4,
            latent_dim: 2,
            hidden: vec![64, 64],
            decoder: DecoderKind::Gaussian,
            batch_size: 128,
            epochs,
            seed,
            ..RunConfig::default()
        };
        let cfg = match std::env::var("BLOBS_CFG") {
            Ok(extra) => {
                let mut v = serde_json::to_value(&cfg)?;
                let extra: serde_json::Value = serde_json::from_str(&extra)?;
                for (key, val) in extra.as_object().expect("object").iter() {
                    v[key] = val.clone();
                }
                serde_json::from_value(v)?
            }
            Err(_) => cfg,
        };
        let tl = test.labels.as_deref().unwrap();
        let t = TestSplit { x: &test.x, labels: tl };
        let mut out = Vec::new();
        let mut aris = Vec::new();
        let mut finals = Vec::new();
        for weights in [w, PairwiseWeights::new(train.n())] {
            let start = std::time::Instant::now();
            let res = fit(&train.x, &weights, Some(t), &cfg, &mut ChaCha8Rng::seed_from_u64(seed))?;
            let fin = score(&cluster_assign(&res.model, &res.mixture, &test.x)?, tl)?;
            let best = res.best.as_ref().unwrap();
            if std::env::var_os("BLOBS_TRACE").is_some() {
                let pred = cluster_assign(&res.model, &res.mixture, &test.x)?;
                eprintln!("  contingency {:?}", dcgmm::metrics::Contingency::new(&pred, tl)?.counts);
                eprintln!("  means {:?} logvars {:?}", res.mixture.means.data(), res.mixture.log_vars.data());
                for r in res.log.epochs.iter().filter(|r| r.epoch % 10 == 0) {
                    let t = r.test.unwrap();
                    eprintln!("  {} total {:.3} pair {:.3} rec {:.3} clip {} ari {:.4}", r.epoch, r.breakdown.total, r.breakdown.pairwise, r.breakdown.reconstruction, r.clipped_batches, t.ari);
                }
            }
            aris.push(best.scores.ari);
            finals.push(fin.ari);
            out.push(format!(
                "final ari {:.4} best ari {:.4}@{} ({:.1}s)",
                fin.ari,
                best.scores.ari,
                best.epoch,
                start.elapsed().as_secs_f64()
            ));
        }
        println!("seed {seed}: W: {} | W=0: {}", out[0], out[1]);
        table.push(format!("{:.3}/{:.3}", aris[0], aris[1]));
        hits += (aris[0] >= 0.95) as usize;
        wins += (aris[0] > aris[1]) as usize;
        fhits += (finals[0] >= 0.95) as usize;
        fwins += (finals[0] > finals[1]) as usize;
    }
    println!("ari >= 0.95: {hits}/{seeds}, beats W=0: {wins}/{seeds}  [{}]", table.join(" "));
    println!("final epoch: ari >= 0.95: {fhits}/{seeds}, beats W=0: {fwins}/{seeds}");
    Ok(())
}
