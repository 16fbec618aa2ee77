//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Exits 0 after reporting so the rest of the workspace suite still runs. Set
//! `DGLC_ACCEPTANCE_STRICT=1` to exit 1 when any criterion fails.

mod common;

use std::time::Instant;

use dglc::baselines::{sp_kernel, wl_kernel};
use dglc::cli::{cmd_train, run_baseline, Method, ModelArgs, TrainArgs};
use dglc::cluster::{kl_value, soft_assign_values, target_distribution};
use dglc::encoder::{Encoder, GraphBatch};
use dglc::graph::{parse_tudataset, permute_graph, FeatureMatrix, Graph, GraphDataset};
use dglc::metrics::{accuracy, ari};
use dglc::tensor::{ParamStore, Tape};
use dglc::trainer::{train_seeds, Mode, RunResult, TrainConfig};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Report {
    failed: usize,
    total: usize,
}

impl Report {
    fn record(&mut self, id: &str, name: &str, pass: bool, detail: String) {
        self.total += 1;
        if !pass {
            self.failed += 1;
        }
        println!(
            "{} [{id}] {name}: {detail}",
            if pass { "PASS" } else { "FAIL" }
        );
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn mutag() -> GraphDataset {
    parse_tudataset(common::data_dir().join("MUTAG"), "MUTAG").expect("vendored MUTAG parses")
}

fn mode_runs(ds: &GraphDataset, mode: Mode) -> (Vec<RunResult>, f64) {
    let start = Instant::now();
    let config = TrainConfig {
        mode,
        ..TrainConfig::default()
    };
    let runs = train_seeds(ds, &config, &SEEDS).expect("training succeeds");
    (runs, start.elapsed().as_secs_f64())
}

fn accs(runs: &[RunResult]) -> Vec<f64> {
    runs.iter().map(|r| r.acc).collect()
}

fn criteria_1_2(report: &mut Report, ds: &GraphDataset) {
    let (full, wall) = mode_runs(ds, Mode::Full);
    let cpu: f64 = full.iter().map(|r| r.seconds).sum();
    let acc = mean(&accs(&full));
    report.record(
        "1",
        "MUTAG full, 5 seeds",
        acc >= 0.75 && cpu <= 600.0,
        format!(
            "mean ACC {acc:.4} (>= 0.75), per-seed {:?}; run time {cpu:.1}s summed, {wall:.1}s wall (<= 600s)",
            accs(&full).iter().map(|a| format!("{a:.4}")).collect::<Vec<_>>()
        ),
    );

    let modes = [Mode::D1, Mode::D2, Mode::D3];
    let others: Vec<(Mode, f64)> = modes
        .iter()
        .map(|&m| (m, mean(&accs(&mode_runs(ds, m).0))))
        .collect();
    let get = |m: Mode| others.iter().find(|(x, _)| *x == m).unwrap().1;
    let (d1, d2, d3) = (get(Mode::D1), get(Mode::D2), get(Mode::D3));
    report.record(
        "2",
        "ablation ordering full > d3 > d1",
        acc > d3 && d3 > d1,
        format!("full {acc:.4}, d3 {d3:.4}, d1 {d1:.4} (d2 {d2:.4})"),
    );

    let decreased = full
        .iter()
        .filter(|r| matches!((r.initial_cluster_loss, r.final_cluster_loss), (Some(a), Some(b)) if b < a))
        .count();
    let pairs: Vec<String> = full
        .iter()
        .map(|r| {
            format!(
                "{:.3}->{:.3}",
                r.initial_cluster_loss.unwrap_or(f64::NAN),
                r.final_cluster_loss.unwrap_or(f64::NAN)
            )
        })
        .collect();
    report.record(
        "inv",
        "full mode: final L_c below L_c at center init",
        decreased == full.len(),
        format!("{decreased}/{} seeds; {}", full.len(), pairs.join(", ")),
    );
}

fn criterion_3(report: &mut Report, ds: &GraphDataset) {
    let accs: Vec<f64> = (0..3)
        .map(|seed| {
            run_baseline(ds, Method::WlSc, seed)
                .expect("baseline runs")
                .0
                .acc
        })
        .collect();
    let deterministic = accs.windows(2).all(|w| w[0] == w[1]);
    let acc = accs[0];
    report.record(
        "3",
        "WL+SC on MUTAG",
        deterministic && (acc - 0.7340).abs() <= 0.05,
        format!(
            "ACC {acc:.4} (target 0.7340 +/- 0.05), identical over seeds 0..3: {deterministic}"
        ),
    );
}

fn criterion_4(report: &mut Report) {
    let start = Instant::now();
    let cases = common::op_cases();
    let mut failures: Vec<String> = cases
        .iter()
        .filter_map(|c| common::run_case(c, 10).err())
        .collect();
    for seed in 0..10 {
        if let Err(m) = common::composite::check_lr(seed) {
            failures.push(format!("L_r instance {seed}: {m:?}"));
        }
        if let Err(m) = common::composite::check_lc(seed) {
            failures.push(format!("L_c instance {seed}: {m:?}"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report.record(
        "4",
        "finite-difference gradient suite",
        failures.is_empty() && secs < 60.0,
        format!(
            "{} ops + L_r + L_c, 10 instances each, rtol {}; {} mismatches; {secs:.2}s",
            cases.len(),
            common::FD_RTOL,
            failures.len()
        ),
    );
    for f in failures.iter().take(5) {
        println!("    {f}");
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

fn criterion_5(report: &mut Report) {
    let mut rng = common::rng(2024);
    let mut mismatches = 0;
    for _ in 0..200 {
        let n = rng.gen_range(2..40);
        let c = rng.gen_range(1..=5);
        let t: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
        let p: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
        let best = permutations(c)
            .iter()
            .map(|m| t.iter().zip(&p).filter(|(&a, &b)| m[b] == a).count())
            .max()
            .unwrap();
        if accuracy(&t, &p).unwrap() != best as f64 / n as f64 {
            mismatches += 1;
        }
    }
    let half = ari(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap();
    let one = ari(&[0, 1, 2, 2, 1], &[0, 1, 2, 2, 1]).unwrap();
    let ari_ok = (half + 0.5).abs() <= 1e-12 && (one - 1.0).abs() <= 1e-12;
    report.record(
        "5",
        "ACC and ARI oracles",
        mismatches == 0 && ari_ok,
        format!(
            "Hungarian vs brute force: {mismatches}/200 mismatches; ARI hand cases {half}, {one}"
        ),
    );
}

fn random_graph(rng: &mut ChaCha8Rng, alphabet: i64) -> Graph {
    let n = rng.gen_range(1..=10);
    let edges: Vec<(usize, usize)> = (0..n)
        .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
        .filter(|_| rng.gen_bool(0.35))
        .collect();
    let labels = (0..n).map(|_| rng.gen_range(0..alphabet)).collect();
    Graph::new(n, edges, Some(labels)).unwrap()
}

fn one_hot(g: &Graph, dim: usize) -> FeatureMatrix {
    let idx: Vec<usize> = g
        .node_labels()
        .unwrap()
        .iter()
        .map(|&l| l as usize)
        .collect();
    FeatureMatrix::one_hot(&idx, dim)
}

fn criterion_6(report: &mut Report) {
    const TRIALS: usize = 100;
    let mut rng = common::rng(77);
    let (mut enc_fail, mut ker_fail, mut row_fail, mut kl_fail) = (0, 0, 0, 0);
    let mut worst_enc: f64 = 0.0;
    let mut worst_row: f64 = 0.0;
    for _ in 0..TRIALS {
        let g = random_graph(&mut rng, 3);
        let h = random_graph(&mut rng, 3);
        let feats = one_hot(&g, 3);
        let mut perm: Vec<usize> = (0..g.node_count()).collect();
        perm.shuffle(&mut rng);
        let (pg, pf) = permute_graph(&g, &feats, &perm).unwrap();

        let mut store = ParamStore::new();
        let enc = Encoder::new(&mut store, 3, 16, 4, &mut rng);
        let embed = |graph: &Graph, f: &FeatureMatrix| {
            let batch = GraphBatch::new(&[graph], &[f]).unwrap();
            let mut tape = Tape::new();
            let p = store.bind_frozen(&mut tape);
            let out = enc.forward(&mut tape, &p, &batch).unwrap();
            tape.value(out.graph_repr).clone()
        };
        let (a, b) = (embed(&g, &feats), embed(&pg, &pf));
        let diff = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        worst_enc = worst_enc.max(diff);
        if diff >= 1e-9 {
            enc_fail += 1;
        }

        let original = [g.clone(), h.clone()];
        let permuted = [pg, h];
        if wl_kernel(&original, 3) != wl_kernel(&permuted, 3)
            || sp_kernel(&original) != sp_kernel(&permuted)
        {
            ker_fail += 1;
        }

        let n = rng.gen_range(1..15);
        let c = rng.gen_range(2..6);
        let d = rng.gen_range(1..5);
        let z = common::random_tensor(&mut rng, &[n, d], -4.0, 4.0, 0.0);
        let centers = common::random_tensor(&mut rng, &[c, d], -4.0, 4.0, 0.0);
        let q = soft_assign_values(&z, &centers).unwrap();
        let p = target_distribution(&q).unwrap();
        for m in [&q, &p] {
            for j in 0..n {
                let e = (m.row(j).iter().sum::<f64>() - 1.0).abs();
                worst_row = worst_row.max(e);
                if e >= 1e-9 {
                    row_fail += 1;
                }
            }
        }
        if kl_value(&p, &q) < 0.0 {
            kl_fail += 1;
        }
    }
    report.record(
        "6",
        "invariance suite",
        enc_fail + ker_fail + row_fail + kl_fail == 0,
        format!(
            "{TRIALS} random instances: encoder perm max diff {worst_enc:.2e} ({enc_fail} fail), \
             kernel isomorphism {ker_fail} fail, Q/P row sums max err {worst_row:.2e} ({row_fail} fail), KL < 0 {kl_fail}"
        ),
    );
}

fn criterion_7(report: &mut Report) {
    let dir = tempfile::tempdir().unwrap();
    let run = |sub: &str| {
        let args = TrainArgs {
            model: ModelArgs {
                dataset: Some("MUTAG".into()),
                data_dir: Some(common::data_dir()),
                seed: Some(0),
                out: Some(dir.path().join(sub)),
                ..ModelArgs::default()
            },
        };
        cmd_train(&args)
            .expect("cmd_train succeeds")
            .remove(0)
            .labels
    };
    let (a, b) = (run("a"), run("b"));
    report.record(
        "7",
        "cmd_train determinism",
        a == b,
        format!(
            "two default runs with seed 0: labels identical = {}",
            a == b
        ),
    );
}

fn criterion_8(report: &mut Report) {
    // (directory, graphs, classes, mean nodes)
    let table = [
        ("MUTAG", 188, 2, 17.93),
        ("PTC_MR", 344, 2, 14.29),
        ("PTC_MM", 336, 2, 13.97),
        ("BZR", 405, 2, 35.75),
        ("ENZYMES", 600, 6, 32.63),
        ("COX2", 467, 2, 41.22),
    ];
    let mut notes = Vec::new();
    let mut ok = true;
    for (name, graphs, classes, nodes) in table {
        match parse_tudataset(common::data_dir().join(name), name) {
            Ok(ds) => {
                let m = ds.mean_node_count();
                let good =
                    ds.len() == graphs && ds.num_classes == classes && (m - nodes).abs() <= 0.01;
                ok &= good;
                notes.push(format!(
                    "{name} {} graphs/{} classes/{m:.2} nodes {}",
                    ds.len(),
                    ds.num_classes,
                    if good { "ok" } else { "MISMATCH" }
                ));
            }
            Err(e) => {
                ok = false;
                notes.push(format!("{name} unavailable ({e})"));
            }
        }
    }
    report.record("8", "dataset statistics", ok, notes.join("; "));
    let nci = parse_tudataset(common::data_dir().join("NCI1"), "NCI1");
    report.record(
        "8b",
        "NCI1 loads",
        nci.is_ok(),
        match nci {
            Ok(ds) => format!("{} graphs", ds.len()),
            Err(e) => format!("unavailable ({e})"),
        },
    );
}

fn main() {
    // `cargo test` passes harness flags such as `--list`; there is nothing to list.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let start = Instant::now();
    let mut report = Report {
        failed: 0,
        total: 0,
    };
    let ds = mutag();
    criteria_1_2(&mut report, &ds);
    criterion_3(&mut report, &ds);
    criterion_4(&mut report);
    criterion_5(&mut report);
    criterion_6(&mut report);
    criterion_7(&mut report);
    criterion_8(&mut report);
    println!(
        "acceptance: {}/{} passed in {:.1}s",
        report.total - report.failed,
        report.total,
        start.elapsed().as_secs_f64()
    );
    let strict = std::env::var("DGLC_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && report.failed > 0 {
        std::process::exit(1);
    }
}
