use mood_core::algos::{Agent, Archs};
use mood_core::analysis::{estimator_report, EstimatorRow, Fixture};
use mood_core::datasets::load;
use mood_core::nets::checkpoint::Checkpoint;

use super::eval::write_csv;
use crate::config::{FixtureKind, RunConfig};
use crate::error::{CliError, Result};

fn fixture(cfg: &RunConfig) -> Result<Fixture> {
    let a = &cfg.analyze;
    Ok(match a.fixture {
        FixtureKind::Lognormal => Fixture::lognormal(a.rows, a.fixture_seed)?,
        FixtureKind::Gaussian => Fixture::gaussian(a.rows, a.fixture_seed)?,
        FixtureKind::Networks => {
            let ds = load(&cfg.required(&a.dataset, "analyze.dataset")?)?;
            let ck = Checkpoint::load(&cfg.required(&a.checkpoint, "analyze.checkpoint")?)?;
            let expected = Archs::from_config(&cfg.algo, ds.state_dim(), ds.action_dim());
            let agent =
                Agent::from_checkpoint(&ck, ds.state_dim(), ds.action_dim(), Some(&expected))?;
            for (i, &n) in a.batch_sizes.iter().enumerate() {
                if n > ds.len() {
                    return Err(CliError::config(
                        format!("analyze.batch_sizes[{i}]"),
                        format!("exceeds the {} dataset rows", ds.len()),
                    ));
                }
            }
            Fixture::from_networks(
                &ds,
                &agent.policy,
                &agent.critics,
                agent.config.adv_samples,
                agent.config.adv_max,
                a.fixture_seed,
            )?
        }
    })
}

/// Bias and variance of every estimator over the batch-size grid. The
/// fixture is shared; each run seed draws its own minibatches.
pub fn rows(cfg: &RunConfig) -> Result<Vec<EstimatorRow>> {
    let a = &cfg.analyze;
    let f = fixture(cfg)?;
    let mut out = Vec::new();
    for &seed in &cfg.seeds {
        out.extend(estimator_report(
            &f,
            &a.estimators,
            a.beta,
            &a.batch_sizes,
            a.trials,
            seed,
        )?);
    }
    Ok(out)
}

pub fn run(cfg: &RunConfig) -> Result<()> {
    let rows = rows(cfg)?;
    let dir = cfg.out_dir().join("analyze");
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let path = dir.join("estimators.csv");
    write_csv(&path, &rows)?;
    for r in &rows {
        eprintln!(
            "seed {} {:<10} n={:<5} bias {:+.4} ± {:.4}  variance {:.4}",
            r.seed,
            r.estimator.name(),
            r.batch_size,
            r.bias,
            r.bias_se(),
            r.variance
        );
    }
    eprintln!("wrote {}", path.display());
    Ok(())
}
