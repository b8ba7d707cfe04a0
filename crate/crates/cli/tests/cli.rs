use std::path::PathBuf;
use std::process::{Command, Output};

use mood_core::datasets::{load, normalize_score};

const SAME: &str = "data/pointmass2d/same_reach-east.mood";

struct Sandbox {
    root: tempfile::TempDir,
}

impl Sandbox {
    fn new() -> Self {
        Self {
            root: tempfile::tempdir().unwrap(),
        }
    }

    fn out(&self) -> PathBuf {
        self.root.path().join("mood-out")
    }

    fn run(&self, cmd: &str, sets: &[&str]) -> Output {
        let mut c = Command::new(env!("CARGO_BIN_EXE_mood"));
        c.arg(cmd).env("MOOD_OUT", self.root.path());
        for s in sets {
            c.arg("--set").arg(s);
        }
        c.output().unwrap()
    }

    fn ok(&self, cmd: &str, sets: &[&str]) {
        let o = self.run(cmd, sets);
        assert!(
            o.status.success(),
            "{cmd} failed: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }

    fn read(&self, rel: &str) -> Vec<u8> {
        std::fs::read(self.out().join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
    }
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn csv_rows(bytes: &[u8]) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_reader(bytes);
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|x| x.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn small_train(sb: &Sandbox, algo: &str, extra: &[&str]) {
    let mut sets = vec![
        format!("train.dataset={SAME}"),
        format!("algo.algorithm={algo}"),
        "algo.train_steps=40".into(),
        "algo.batch_size=16".into(),
        "train.metrics_every=10".into(),
        "seeds=[0, 1]".into(),
    ];
    sets.extend(extra.iter().map(|s| s.to_string()));
    let refs: Vec<&str> = sets.iter().map(String::as_str).collect();
    sb.ok("train", &refs);
}

#[test]
fn gen_data_emits_taxonomy_and_reproducible_manifest() {
    let (a, b) = (Sandbox::new(), Sandbox::new());
    a.ok("gen-data", &["data.episodes=2"]);
    b.ok("gen-data", &["data.episodes=2"]);
    let text = String::from_utf8(a.read("data/pointmass2d/manifest.toml")).unwrap();
    assert_eq!(text.as_bytes(), b.read("data/pointmass2d/manifest.toml"));
    let manifest: toml::Table = text.parse().unwrap();
    let entries = manifest["dataset"].as_array().unwrap();
    let kinds: Vec<&str> = entries
        .iter()
        .map(|e| e["kind"].as_str().unwrap())
        .collect();
    let count = |k: &str| kinds.iter().filter(|x| **x == k).count();
    assert_eq!((count("same"), count("cross"), count("mixed")), (3, 6, 3));
    let files: Vec<_> = std::fs::read_dir(a.out().join("data/pointmass2d"))
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "mood"))
        .collect();
    assert_eq!(files.len(), entries.len());
    for e in entries {
        let ds = load(&a.out().join(e["file"].as_str().unwrap())).unwrap();
        assert_eq!(ds.len() as i64, e["rows"].as_integer().unwrap());
        assert!((ds.max_return() - e["max_return"].as_float().unwrap()).abs() <= 1e-9);
    }
    let other = Sandbox::new();
    other.ok("gen-data", &["data.episodes=2", "data.seed=1"]);
    assert_ne!(
        text.as_bytes(),
        other.read("data/pointmass2d/manifest.toml")
    );
}

#[test]
fn train_is_byte_reproducible_with_expected_schema() {
    let (a, b) = (Sandbox::new(), Sandbox::new());
    for sb in [&a, &b] {
        sb.ok("gen-data", &["data.episodes=2"]);
        small_train(sb, "asac", &[]);
    }
    for seed in [0, 1] {
        let m = format!("train/asac/seed-{seed}/metrics.csv");
        let c = format!("train/asac/seed-{seed}/checkpoint.ckpt");
        assert_eq!(a.read(&m), b.read(&m));
        assert_eq!(a.read(&c), b.read(&c));
    }
    let (header, rows) = csv_rows(&a.read("train/asac/seed-0/metrics.csv"));
    assert_eq!(
        header,
        [
            "step",
            "critic_loss",
            "actor_loss",
            "mean_advantage",
            "tree_log_norm"
        ]
    );
    let steps: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(steps, ["10", "20", "30", "40"]);
    assert!(rows.iter().all(|r| r.iter().all(|c| !c.is_empty())));
    assert_ne!(
        a.read("train/asac/seed-0/metrics.csv"),
        a.read("train/asac/seed-1/metrics.csv")
    );
}

#[test]
fn eval_pairs_modes_and_normalizes_scores() {
    let sb = Sandbox::new();
    sb.ok("gen-data", &["data.episodes=2"]);
    small_train(&sb, "iql", &[]);
    let common = [
        &*format!("train.dataset={SAME}"),
        "algo.algorithm=iql",
        "seeds=[0, 1]",
        "eval.episodes=3",
        "eval.samples=4",
    ];
    sb.ok("eval", &common);
    let (header, rows) = csv_rows(&sb.read("eval/iql/episodes.csv"));
    assert_eq!(header, ["seed", "episode", "es", "return", "normalized"]);
    assert_eq!(rows.len(), 2 * 3 * 2);
    for pair in rows.chunks(2) {
        assert_eq!(
            (pair[0][0].as_str(), pair[0][1].as_str()),
            (pair[1][0].as_str(), pair[1][1].as_str())
        );
        assert_eq!((pair[0][2].as_str(), pair[1][2].as_str()), ("0", "1"));
    }
    let ds = load(&sb.out().join(SAME)).unwrap();
    for r in &rows {
        let ret: f64 = r[3].parse().unwrap();
        assert_eq!(
            r[4].parse::<f64>().unwrap(),
            normalize_score(ret, &ds).unwrap()
        );
    }
    let (header, summary) = csv_rows(&sb.read("eval/iql/summary.csv"));
    assert_eq!(header[..4], ["es", "seeds", "episodes", "mean_normalized"]);
    assert_eq!(summary.len(), 2);

    let o = sb.run("report", &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (header, report) = csv_rows(&sb.read("report.csv"));
    assert_eq!(header[0], "algorithm");
    assert_eq!(report.len(), 2);
    assert!(report.iter().all(|r| r[0] == "iql"));
}

#[test]
fn analyze_defaults_to_the_standard_grid() {
    let sb = Sandbox::new();
    sb.ok("analyze", &[]);
    let (header, rows) = csv_rows(&sb.read("analyze/estimators.csv"));
    assert_eq!(
        header,
        [
            "estimator",
            "batch_size",
            "bias",
            "variance",
            "trials",
            "exact_value",
            "seed"
        ]
    );
    assert_eq!(rows.len(), 3 * 4);
    let sizes: Vec<&str> = rows.iter().take(4).map(|r| r[1].as_str()).collect();
    assert_eq!(sizes, ["16", "64", "256", "1024"]);
    assert!(rows.iter().all(|r| r[4] == "1000"));
}

#[test]
fn analyze_runs_on_trained_networks() {
    let sb = Sandbox::new();
    sb.ok("gen-data", &["data.episodes=2"]);
    small_train(&sb, "awac", &[]);
    sb.ok(
        "analyze",
        &[
            "analyze.fixture=networks",
            &format!("analyze.dataset={SAME}"),
            "analyze.checkpoint=train/awac/seed-0/checkpoint.ckpt",
            "analyze.batch_sizes=[8, 32]",
            "analyze.beta=1.0",
        ],
    );
    let (_, rows) = csv_rows(&sb.read("analyze/estimators.csv"));
    assert_eq!(rows.len(), 3 * 2);
}

#[test]
fn exit_codes_follow_the_failure_class() {
    let sb = Sandbox::new();
    let o = sb.run("train", &["algo.tau=1.5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("algo.tau"), "{}", stderr(&o));

    let o = sb.run("analyze", &["analyze.trials=10"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("analyze.trials"));

    let o = sb.run("gen-data", &["data.tasks=['reach-east', 'sideways']"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("data.tasks"), "{}", stderr(&o));

    let o = sb.run("train", &["train.dataset=missing.mood"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("missing.mood"));

    sb.ok("gen-data", &["data.episodes=2"]);
    small_train(&sb, "td3", &[]);
    let o = sb.run(
        "eval",
        &[
            &format!("train.dataset={SAME}"),
            "algo.algorithm=td3",
            "algo.preset=modern-large",
        ],
    );
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("checkpoint"));

    let o = sb.run(
        "train",
        &[
            &format!("train.dataset={SAME}"),
            "algo.critic_lr=1e300",
            "algo.actor_lr=1e300",
            "algo.train_steps=50",
            "algo.batch_size=16",
        ],
    );
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(
        stderr(&o).contains("numeric failure at step"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn config_file_and_overrides_compose() {
    let sb = Sandbox::new();
    let file = sb.root.path().join("run.toml");
    std::fs::write(
        &file,
        "seeds = [3]\n[algo]\nbeta = 2.0\nalgorithm = \"iql\"\n",
    )
    .unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_mood"))
        .args(["config", "--config"])
        .arg(&file)
        .args(["--set", "algo.beta=0.25"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let resolved: toml::Table = String::from_utf8(out.stdout).unwrap().parse().unwrap();
    assert_eq!(resolved["algo"]["beta"].as_float(), Some(0.25));
    assert_eq!(resolved["algo"]["algorithm"].as_str(), Some("iql"));
    assert_eq!(resolved["seeds"].as_array().unwrap().len(), 1);

    std::fs::write(&file, "[algo]\nbeta = \n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_mood"))
        .args(["config", "--config"])
        .arg(&file)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn smoke_run_fits_the_time_budget() {
    let sb = Sandbox::new();
    sb.ok(
        "gen-data",
        &[
            "data.episodes=100",
            "data.tasks=['reach-east']",
            "data.random=false",
        ],
    );
    assert_eq!(load(&sb.out().join(SAME)).unwrap().len(), 10_000);
    let start = std::time::Instant::now();
    sb.ok(
        "train",
        &[&format!("train.dataset={SAME}"), "algo.train_steps=1000"],
    );
    let secs = start.elapsed().as_secs_f64();
    eprintln!("1000 default steps on 10k rows: {secs:.1}s");
    assert!(secs < 60.0, "took {secs:.1}s");
}
