mod common;

use std::path::Path;
use std::process::{Command, Output};
use std::sync::Arc;

use se3_scale::io;
use se3_scale::{FodField, GridSpec, SphereSampling};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_se3-scale")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn kernel_writes_normalized_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("k.fodk");
    let o = run(&["kernel", "--d33", "1", "--d44", "0.02", "--t", "2", "--radius", "3", "--sphere-level", "1", "--section", "new", "--out", path(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = io::load_kernel(&out).unwrap();
    assert_eq!(table.values().len(), 343 * 42 * 42);
    for sum in table.column_sums() {
        assert!((sum - 1.0).abs() <= 1e-12);
    }
    assert!(stdout(&o).contains("mass_before_normalization="));

    let zero = dir.path().join("z.fodk");
    let o = run(&["kernel", "--radius", "3", "--section", "zero", "--out", path(&zero)]);
    assert!(o.status.success());
    let other = io::load_kernel(&zero).unwrap();
    let diff = table.values().iter().zip(other.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(diff > 0.0);
}

#[test]
fn invalid_parameters_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("k.fodk");
    assert_eq!(run(&["kernel", "--t", "0", "--out", path(&out)]).status.code(), Some(2));
    assert_eq!(run(&["kernel", "--section", "sideways", "--out", path(&out)]).status.code(), Some(2));
    assert_eq!(run(&["kernel"]).status.code(), Some(2));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn io_failures_exit_with_3() {
    let o = run(&["kernel", "--radius", "1", "--sphere-level", "0", "--out", "/nonexistent-dir/k.fodk"]);
    assert_eq!(o.status.code(), Some(3));
    let o = run(&["enhance", "--field", "/nonexistent-dir/in.fodf", "--out", "/tmp/x.fodf"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn enhance_delta_reproduces_kernel_column() {
    let dir = tempfile::tempdir().unwrap();
    let sphere = Arc::new(SphereSampling::icosphere(0).unwrap());
    let grid = GridSpec::new([5, 5, 5], 1.0).unwrap();
    let source = 4;
    let input = dir.path().join("in.fodf");
    io::save_field(&input, &FodField::delta(grid, sphere.clone(), [2, 2, 2], source)).unwrap();
    let kernel = dir.path().join("k.fodk");
    let output = dir.path().join("out.fodf");
    // Repeated --radius: the last occurrence wins.
    let o = run(&["enhance", "--field", path(&input), "--radius", "1", "--radius", "2", "--out", path(&output)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("radius=2 "));
    let o = run(&["kernel", "--radius", "2", "--sphere-level", "0", "--out", path(&kernel)]);
    assert!(o.status.success());
    let table = io::load_kernel(&kernel).unwrap();
    let field = io::load_field(&output).unwrap();
    for i in 0..sphere.len() {
        for o in 0..table.offsets() {
            let [dx, dy, dz] = table.offset(o);
            let at = [2 + dx, 2 + dy, 2 + dz].map(|c| c as usize);
            let expect = table.values()[table.index(o, i, source)];
            let got = field.get(at, i);
            assert!((got - expect).abs() <= 1e-12 * expect.max(1e-300), "{got} vs {expect}");
        }
    }
}

#[test]
fn two_periodic_passes_conserve_mass() {
    let dir = tempfile::tempdir().unwrap();
    let sphere = Arc::new(SphereSampling::icosphere(0).unwrap());
    let u = common::random_field(GridSpec::new([5, 5, 5], 1.0).unwrap(), sphere, 11);
    let input = dir.path().join("in.fodf");
    io::save_field(&input, &u).unwrap();
    let mid = dir.path().join("mid.fodf");
    let twice = dir.path().join("twice.fodf");
    let once = dir.path().join("once.fodf");
    let common_args = ["--boundary", "periodic", "--t", "1"];
    for (from, to, radius) in [(&input, &mid, "2"), (&mid, &twice, "2"), (&input, &once, "4")] {
        let mut args = vec!["enhance", "--field", path(from), "--out", path(to), "--radius", radius];
        args.extend(common_args);
        assert!(run(&args).status.success());
    }
    let twice = io::load_field(&twice).unwrap();
    let once = io::load_field(&once).unwrap();
    assert!((twice.mass() - u.mass()).abs() <= 1e-9 * u.mass());
    assert!((once.mass() - twice.mass()).abs() <= 1e-9 * u.mass());
}

#[test]
fn symmetry_report_structure() {
    let o = run(&["symmetry-report", "--d33", "1", "--t", "1,4", "--d44", "0.02", "--grid", "5", "--sphere-level", "1"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t\td44\tnew\tzero"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split('\t').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 2);
    for r in &rows {
        assert!(r[2] <= 1e-8, "new section asymmetry {}", r[2]);
        assert!(r[3] > 0.0);
    }
    assert_eq!(run(&["symmetry-report", "--grid", "4"]).status.code(), Some(2));
}

#[test]
fn fbc_ranks_outlier_last_and_filters() {
    let dir = tempfile::tempdir().unwrap();
    let fibers = common::fixture("synthetic_bundle.txt");
    let scores = dir.path().join("scores.tsv");
    let filtered = dir.path().join("kept.txt");
    let o = run(&["fbc", "--tracto", path(&fibers), "--threshold", "0", "--scores", path(&scores), "--filtered", path(&filtered)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("pair_evaluations=97461"));
    let table = std::fs::read_to_string(&scores).unwrap();
    let normalized: Vec<f64> = table.lines().skip(1).map(|l| l.split('\t').nth(2).unwrap().parse().unwrap()).collect();
    assert_eq!(normalized.len(), 21);
    let lowest = (0..21).min_by(|&a, &b| normalized[a].total_cmp(&normalized[b])).unwrap();
    assert_eq!(lowest, 20);

    let original = io::load_tractogram(&fibers).unwrap();
    let kept = io::load_tractogram(&filtered).unwrap();
    assert_eq!(original, kept);
    let normalize = |s: String| s.lines().filter(|l| !l.starts_with('#')).map(|l| l.split_whitespace().map(|v| v.parse::<f64>().unwrap()).collect::<Vec<_>>()).collect::<Vec<_>>();
    assert_eq!(
        normalize(std::fs::read_to_string(&fibers).unwrap()),
        normalize(std::fs::read_to_string(&filtered).unwrap())
    );
}

#[test]
fn fbc_reports_malformed_line() {
    let dir = tempfile::tempdir().unwrap();
    let fibers = dir.path().join("bad.txt");
    std::fs::write(&fibers, "# ok\n0 0 0 0 0 1\n0 0 0 0 1\n").unwrap();
    let o = run(&["fbc", "--tracto", path(&fibers), "--scores", path(&dir.path().join("s.tsv"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));
    let o = run(&["fbc", "--tracto", path(&fibers), "--window", "0", "--scores", "s.tsv"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let fibers = common::fixture("synthetic_bundle.txt");
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let scores = dir.path().join(format!("s{threads}.tsv"));
        let kernel = dir.path().join(format!("k{threads}.fodk"));
        assert!(run(&["--threads", threads, "fbc", "--tracto", path(&fibers), "--scores", path(&scores)]).status.success());
        assert!(run(&["kernel", "--threads", threads, "--radius", "2", "--out", path(&kernel)]).status.success());
        outputs.push((std::fs::read(&scores).unwrap(), std::fs::read(&kernel).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn oracle_reports_and_rejects_unstable_steps() {
    let o = run(&["oracle", "--t", "0.5", "--grid", "7", "--radius", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let residual: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("consistency_residual\t"))
        .unwrap()
        .parse()
        .unwrap();
    assert!(residual <= 1e-6);
    assert!(text.contains("correlation\t"));
    let o = run(&["oracle", "--t", "1", "--dt", "0.5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("stability"));
}

#[test]
fn sphere_export_lists_points() {
    let o = run(&["sphere", "--level", "1"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().filter(|l| !l.starts_with('#')).count(), 42);
}
