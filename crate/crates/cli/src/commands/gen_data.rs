use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use mood_core::datasets::{generate_dataset, merge, relabel, save, Controller, Dataset, ToyEnv};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Same,
    Cross,
    Mixed,
}

#[derive(Debug, Serialize)]
pub struct ManifestEntry {
    pub name: String,
    pub kind: Kind,
    pub env: String,
    pub sources: Vec<String>,
    pub target: String,
    pub rows: usize,
    pub max_return: f64,
    /// Relative to the output directory.
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest {
    seed: u64,
    episodes: usize,
    noise_std: f64,
    dataset: Vec<ManifestEntry>,
}

/// Same-, cross- and mixed-objective datasets for every configured target
/// task. Behavior data is generated once per controller and relabeled.
pub fn plan(cfg: &RunConfig) -> Result<Vec<(String, Kind, Dataset)>> {
    let d = &cfg.data;
    let mut controllers: Vec<Controller> =
        d.tasks.iter().map(|&t| Controller::Scripted(t)).collect();
    if d.random {
        controllers.push(Controller::Random);
    }
    let behavior: Vec<Dataset> = controllers
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let label = match c {
                Controller::Scripted(t) => *t,
                Controller::Random => d.tasks[0],
            };
            let env = ToyEnv::new(d.env, label)?;
            generate_dataset(
                &env,
                *c,
                d.episodes,
                d.noise_std,
                d.seed.wrapping_add(k as u64),
            )
        })
        .collect::<mood_core::Result<_>>()?;

    let mut out = Vec::new();
    for (i, &t) in d.tasks.iter().enumerate() {
        out.push((format!("same_{t}"), Kind::Same, behavior[i].clone()));
    }
    for (i, &s) in d.tasks.iter().enumerate() {
        for &t in d.tasks.iter().filter(|&&t| t != s) {
            out.push((
                format!("cross_{s}_to_{t}"),
                Kind::Cross,
                relabel(&behavior[i], t)?,
            ));
        }
    }
    for &t in &d.tasks {
        let parts: Vec<Dataset> = behavior
            .iter()
            .map(|b| relabel(b, t))
            .collect::<mood_core::Result<_>>()?;
        out.push((format!("mixed_to_{t}"), Kind::Mixed, merge(&parts)?));
    }
    Ok(out)
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn run(cfg: &RunConfig) -> Result<()> {
    let out = cfg.out_dir();
    let rel_dir = Path::new("data").join(cfg.data.env.name());
    let dir = out.join(&rel_dir);
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let mut entries = Vec::new();
    for (name, kind, ds) in plan(cfg)? {
        let rel = rel_dir.join(format!("{name}.mood"));
        let path = out.join(&rel);
        save(&ds, &path)?;
        let meta = ds.meta();
        entries.push(ManifestEntry {
            name,
            kind,
            env: meta.env.to_string(),
            sources: meta.source_tasks.clone(),
            target: meta.target_task.to_string(),
            rows: ds.len(),
            max_return: ds.max_return(),
            file: rel.to_string_lossy().replace('\\', "/"),
            sha256: sha256_file(&path)?,
        });
        eprintln!("wrote {} ({} rows)", path.display(), ds.len());
    }
    let manifest = Manifest {
        seed: cfg.data.seed,
        episodes: cfg.data.episodes,
        noise_std: cfg.data.noise_std,
        dataset: entries,
    };
    let text = toml::to_string(&manifest).map_err(|e| CliError::Data(format!("manifest: {e}")))?;
    let path = dir.join("manifest.toml");
    std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    eprintln!(
        "wrote {} ({} datasets)",
        path.display(),
        manifest.dataset.len()
    );
    Ok(())
}
