//! Acceptance checks. Runs every criterion in sequence (timings are
//! measured on an otherwise idle process), prints one PASS/FAIL line per
//! criterion and exits non-zero if any criterion fails. Built without the
//! libtest harness so the report is never captured.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ndarray::{Array2, Axis};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fss_absorber::dataset::{generate, Dataset, SplitSpec};
use fss_absorber::em_forward::{
    reflection_curve, reflection_from_sheet, FrequencyGrid, MaterialSpec, SheetLoad, StackSpec,
    C0_MM_GHZ, ETA0,
};
use fss_absorber::features::PcaBasis;
use fss_absorber::geometry::TABLE1_ROWS;
use fss_absorber::neuralnet::{Network, NetworkSpec};
use fss_absorber::pipeline::{
    curve_variance, percentage_error, round_trip_validate, train_case1, train_case2, TrainConfig,
    TrainedModel,
};
use fss_absorber::{SweepTable, UnitCellGeometry};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn salisbury() -> Outcome {
    let stack = StackSpec {
        superstrate: None,
        spacer: MaterialSpec::AIR,
        sheet: SheetLoad::Resistive { ohms: ETA0 },
    };
    // Quarter wave at 10 GHz. The 5-digit rounding 7.49481 mm leaves
    // |Γ| ≈ 1.5e-7, so the exact length is used.
    let quarter_wave = C0_MM_GHZ / (4.0 * 10.0);
    let start = Instant::now();
    let r = reflection_from_sheet(Complex64::new(ETA0, 0.0), &stack, quarter_wave, 10.0)
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let rounded = reflection_from_sheet(Complex64::new(ETA0, 0.0), &stack, 7.49481, 10.0)
        .map_err(|e| e.to_string())?;
    let mag = r.gamma.norm();
    check(
        mag <= 1e-9 && elapsed < Duration::from_millis(1),
        format!(
            "|Γ| = {mag:.2e} at d = {quarter_wave:.7} mm in {elapsed:?} (7.49481 mm gives {:.2e})",
            rounded.gamma.norm()
        ),
    )
}

fn random_table1_geometry(rng: &mut ChaCha8Rng) -> UnitCellGeometry {
    loop {
        let row = TABLE1_ROWS[rng.random_range(0..TABLE1_ROWS.len())];
        let g = UnitCellGeometry::new(
            row.a,
            rng.random_range(row.b.min..=row.b.max),
            rng.random_range(row.c.min..=row.c.max),
            rng.random_range(row.d.min..=row.d.max),
            rng.random_range(1.0..=10.0),
        );
        if g.is_valid() {
            return g;
        }
    }
}

fn passivity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let stack = StackSpec::default();
    let grid = FrequencyGrid::default();
    let geometries: Vec<_> = (0..10_000).map(|_| random_table1_geometry(&mut rng)).collect();
    let start = Instant::now();
    let mut worst = f64::NEG_INFINITY;
    for g in &geometries {
        let c = reflection_curve(g, &stack, &grid).map_err(|e| format!("{g}: {e}"))?;
        worst = c.values_db.iter().fold(worst, |m, v| m.max(*v));
    }
    let elapsed = start.elapsed();
    check(
        worst <= 1e-9 && elapsed < Duration::from_secs(30),
        format!(
            "10000 geometries × {} points, max {worst:.3e} dB, {:.1} s",
            grid.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let spec = NetworkSpec {
        input_dim: 6,
        hidden_dims: vec![5, 4],
        output_dim: 3,
        leaky_slope: 0.01,
        l2_lambda: 1e-3,
        bn_momentum: 0.9,
        bn_epsilon: 1e-5,
    };
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for batch in 0..20 {
        let mut net = Network::init(&spec, batch).map_err(|e| e.to_string())?;
        for l in &mut net.hidden {
            l.norm.gamma.mapv_inplace(|_| rng.random_range(0.5..1.5));
            l.norm.beta.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
        let rows = rng.random_range(4..12);
        let x = Array2::from_shape_simple_fn((rows, 6), || rng.random_range(-2.0..2.0));
        let y = Array2::from_shape_simple_fn((rows, 3), || rng.random_range(-1.0..1.0));
        let (_, grads, _) = net.loss_and_gradients(x.view(), y.view()).map_err(|e| e.to_string())?;
        let analytic: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();
        let loss_at = |n: &Network| {
            let (p, _) = n.forward_train(x.view()).expect("forward");
            n.loss(p.view(), y.view())
        };
        for (group, values) in analytic.iter().enumerate() {
            for (i, &a) in values.iter().enumerate() {
                let orig = net.params_mut()[group][i];
                net.params_mut()[group][i] = orig + h;
                let up = loss_at(&net);
                net.params_mut()[group][i] = orig - h;
                let down = loss_at(&net);
                net.params_mut()[group][i] = orig;
                let numeric = (up - down) / (2.0 * h);
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
    }
    check(
        worst <= 1e-4,
        format!("6→[5,4]→3, 20 batches, all groups: max relative error {worst:.2e}"),
    )
}

/// Cyclic Jacobi eigenvalues of a symmetric matrix.
fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for row in a.iter_mut() {
                    let (akp, akq) = (row[p], row[q]);
                    row[p] = c * akp - s * akq;
                    row[q] = s * akp + c * akq;
                }
                let (rp, rq) = (a[p].clone(), a[q].clone());
                for k in 0..n {
                    a[p][k] = c * rp[k] - s * rq[k];
                    a[q][k] = s * rp[k] + c * rq[k];
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

fn pca_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (n, p) = (200, 50);
    let x = Array2::from_shape_simple_fn((n, p), || rng.random_range(-1.0..1.0));
    let basis = PcaBasis::fit(x.view(), p).map_err(|e| e.to_string())?;

    let mut mean = vec![0.0; p];
    for i in 0..n {
        for j in 0..p {
            mean[j] += x[[i, j]] / n as f64;
        }
    }
    let mut cov = vec![vec![0.0; p]; p];
    for i in 0..n {
        for j in 0..p {
            for k in 0..p {
                cov[j][k] += (x[[i, j]] - mean[j]) * (x[[i, k]] - mean[k]) / (n as f64 - 1.0);
            }
        }
    }
    let oracle = jacobi_eigenvalues(cov);
    let diff = basis
        .explained_variance
        .iter()
        .zip(&oracle)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    check(
        diff <= 1e-8 && basis.explained_variance.len() == p,
        format!("200×50, {p} eigenvalues, max |Δ| = {diff:.2e}"),
    )
}

fn dataset_scale(ds: &Dataset, elapsed: Duration) -> Outcome {
    let (tr, te) = SplitSpec::default().indices(7600).map_err(|e| e.to_string())?;
    let (dtr, dte) = SplitSpec::default().indices(ds.len()).map_err(|e| e.to_string())?;
    let n = ds.len();
    check(
        (6000..=9500).contains(&n)
            && elapsed < Duration::from_secs(120)
            && (tr.len(), te.len()) == (6080, 1520)
            && dtr.len() == n * 8 / 10
            && dtr.len() + dte.len() == n,
        format!(
            "{n} samples in {:.1} s; 7600 → {}/{}; {n} → {}/{}",
            elapsed.as_secs_f64(),
            tr.len(),
            te.len(),
            dtr.len(),
            dte.len()
        ),
    )
}

fn case1_training(model: &TrainedModel, elapsed: Duration) -> Outcome {
    let m = &model.metrics;
    check(
        m.r2 >= 0.90
            && m.test_mse <= 0.10
            && model.history.len() <= 500
            && elapsed < Duration::from_secs(15 * 60),
        format!(
            "R² {:.4}, MSE {:.5}, {} epochs (best {}), {:.0} s",
            m.r2,
            m.test_mse,
            model.history.len(),
            model.history.best_epoch,
            elapsed.as_secs_f64()
        ),
    )
}

fn round_trip(model: &TrainedModel, ds: &Dataset) -> Outcome {
    let (_, test_idx) = model.config.split.indices(ds.len()).map_err(|e| e.to_string())?;
    let test = ds.subset(&test_idx).map_err(|e| e.to_string())?;
    let variance = curve_variance(test.curve_matrix().view());
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let mut chosen = test_idx.clone();
    rand::seq::SliceRandom::shuffle(chosen.as_mut_slice(), &mut rng);
    chosen.truncate(100);
    let samples = ds.subset(&chosen).map_err(|e| e.to_string())?;
    let report = round_trip_validate(model, samples.samples()).map_err(|e| e.to_string())?;
    let covered = report.fraction_covered(0.8);
    let worst_median = report.median_percent_errors.iter().cloned().fold(0.0f64, f64::max);
    check(
        covered >= 0.70
            && report.median_curve_mse_db2 < variance
            && worst_median <= 10.0
            && report.failures == 0,
        format!(
            "{:.0}% of 100 samples covered at ≥80% of points; median curve MSE {:.3} dB² vs test variance {:.3} dB²; median % errors a/b/c/d = {:.2}/{:.2}/{:.2}/{:.2}",
            covered * 100.0,
            report.median_curve_mse_db2,
            variance,
            report.median_percent_errors[0],
            report.median_percent_errors[1],
            report.median_percent_errors[2],
            report.median_percent_errors[3]
        ),
    )
}

fn percentage_metric() -> Outcome {
    let cases = [(6.88, 6.89, 0.15), (3.92, 4.01, 2.30), (2.83, 2.84, 0.35), (5.46, 5.36, 1.83)];
    let mut ok = true;
    let mut got = Vec::new();
    for (t, p, want) in cases {
        let e = percentage_error(t, p).map_err(|e| e.to_string())?;
        ok &= (e - want).abs() <= 0.01 + 1e-12;
        got.push(format!("{e:.2}"));
    }
    check(ok, format!("row (a): {} %", got.join(", ")))
}

const SMALL_SWEEP: &str = "\
[sweep]
thicknesses = [2.0]
[sweep.steps]
b = 0.4
c = 0.3
d = 0.5
[[sweep.rows]]
a = 4.0
b = [1.5, 3.8]
c = [0.25, 1.4]
d = [1.0, 3.8]
[[sweep.rows]]
a = 5.0
b = [2.0, 4.8]
c = [1.2, 1.8]
d = [1.0, 4.8]
";

fn run_cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_fss-absorber"))
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn cli_determinism() -> Outcome {
    let mut listings = Vec::new();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let p = d.path();
        std::fs::write(p.join("small.cfg"), SMALL_SWEEP).unwrap();
        run_cli(p, &["gen", "--table", "small.cfg", "--t", "2.0", "--out", "ds.csv", "--seed", "1"])?;
        run_cli(
            p,
            &["train", "--case", "1", "--data", "ds.csv", "--seed", "7", "--out", "m.model", "--epochs", "15"],
        )?;
        run_cli(
            p,
            &["validate", "--model", "m.model", "--data", "ds.csv", "--n", "4", "--seed", "3", "--out-dir", "val", "--svg"],
        )?;
        let mut files = Vec::new();
        for sub in [p.to_path_buf(), p.join("val")] {
            for e in std::fs::read_dir(&sub).unwrap() {
                let e = e.unwrap();
                if e.file_type().unwrap().is_file() {
                    let rel = e.path().strip_prefix(p).unwrap().to_path_buf();
                    files.push((rel, std::fs::read(e.path()).unwrap()));
                }
            }
        }
        files.sort();
        listings.push(files);
    }
    let names: Vec<String> = listings[0].iter().map(|(n, _)| n.display().to_string()).collect();
    check(
        listings[0] == listings[1] && names.len() >= 13,
        format!("gen/train/validate twice: {} files byte-identical", names.len()),
    )
}

fn case2_training(ds: &Dataset, elapsed_gen: Duration) -> Outcome {
    let start = Instant::now();
    let model = train_case2(ds, &TrainConfig::default()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let (_, test_idx) = model.config.split.indices(ds.len()).map_err(|e| e.to_string())?;
    let test = ds.subset(&test_idx).map_err(|e| e.to_string())?;
    let preds = model.predict_batch(test.curve_matrix().view()).map_err(|e| e.to_string())?;
    let t_ok = preds.iter().all(|p| (1.0..=10.0).contains(&p.geometry.t));
    let extreme = model.constrain(vec![5.0, 3.0, 1.5, 3.0, 25.0]);

    // Per-output R² on the clamped predictions, scaled targets.
    let truth = test.geometry_matrix();
    let pred = Array2::from_shape_fn((preds.len(), 5), |(i, j)| preds[i].geometry.to_array()[j]);
    let ts = model.targets.apply(truth.view()).unwrap();
    let ps = model.targets.apply(pred.view()).unwrap();
    let mean = ts.mean_axis(Axis(0)).unwrap();
    let per_output: Vec<f64> = (0..5)
        .map(|j| {
            let ss_tot: f64 = ts.column(j).iter().map(|v| (v - mean[j]).powi(2)).sum();
            let ss_res: f64 = ts.column(j).iter().zip(ps.column(j)).map(|(a, b)| (a - b).powi(2)).sum();
            1.0 - ss_res / ss_tot
        })
        .collect();
    check(
        model.metrics.r2 >= 0.90
            && ds.thicknesses().len() >= 2
            && ds.len() >= 5000
            && t_ok
            && (1.0..=10.0).contains(&extreme.geometry.t),
        format!(
            "{} samples at t = {:?} mm (gen {:.0} s); R² {:.4} (a/b/c/d/t {:.3}/{:.3}/{:.3}/{:.3}/{:.3}), {} epochs, {:.0} s; t ∈ [1,10] for all {} test predictions",
            ds.len(),
            ds.thicknesses(),
            elapsed_gen.as_secs_f64(),
            model.metrics.r2,
            per_output[0],
            per_output[1],
            per_output[2],
            per_output[3],
            per_output[4],
            model.history.len(),
            elapsed.as_secs_f64(),
            preds.len()
        ),
    )
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    })
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut record = |id: usize, name: &'static str, r: Outcome| {
        let (tag, detail) = match &r {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("[{tag}] {id:>2} {name}: {detail}");
        results.push((id, name, r));
    };

    record(1, "forward oracle (Salisbury screen)", guarded(salisbury));
    record(2, "passivity sweep", guarded(passivity));
    record(3, "gradient check", guarded(gradient_check));
    record(4, "PCA oracle equivalence", guarded(pca_oracle));

    let start = Instant::now();
    let grid = FrequencyGrid::default();
    let stack = StackSpec::default();
    let ds = generate(&SweepTable::table1(&[2.0]), &stack, &grid, 0).expect("default sweep dataset");
    let gen_time = start.elapsed();
    record(5, "dataset scale", guarded(|| dataset_scale(&ds, gen_time)));

    let start = Instant::now();
    let model = train_case1(&ds, &TrainConfig::default());
    let train_time = start.elapsed();
    match &model {
        Ok(m) => {
            record(6, "case 1 training", guarded(|| case1_training(m, train_time)));
            record(7, "round-trip validation", guarded(|| round_trip(m, &ds)));
        }
        Err(e) => {
            record(6, "case 1 training", Err(e.to_string()));
            record(7, "round-trip validation", Err("no case 1 model".into()));
        }
    }
    drop(model);
    record(8, "percentage-error metric", guarded(percentage_metric));
    record(9, "CLI determinism", guarded(cli_determinism));

    let start = Instant::now();
    let ds2 = generate(&SweepTable::table1(&[2.0, 4.0]), &stack, &grid, 0).expect("case 2 dataset");
    let gen2 = start.elapsed();
    drop(ds);
    record(10, "case 2 training", guarded(|| case2_training(&ds2, gen2)));

    let failed: Vec<_> = results.iter().filter(|r| r.2.is_err()).map(|r| r.0).collect();
    println!(
        "acceptance: {}/{} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
