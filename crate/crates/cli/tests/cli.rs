use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

fn tivis(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tivis"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = tivis(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str], kind: &str) {
    let out = tivis(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let err = String::from_utf8(out.stderr).unwrap();
    let line = err.lines().last().unwrap_or_default();
    assert!(
        line.starts_with(&format!("error kind={kind} message=\"")),
        "{args:?}: {err}"
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A dataset and a one-epoch model shared by the tests.
struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let f = Fixture {
            dir: tempfile::tempdir().unwrap(),
        };
        let data = f.path("data");
        let model = f.path("model.gbx");
        ok(&["make-dataset", "--seed", "3", "--count-per-class", "2", "--out", s(&data)]);
        ok(&[
            "train", "--seed", "3", "--dataset", s(&data), "--epochs", "1", "--batch-size", "4",
            "--val-fraction", "0.5", "--out", s(&model), "--report", s(&f.path("train.log")),
        ]);
        f
    })
}

#[test]
fn dataset_and_training_outputs() {
    let f = fixture();
    let manifest = std::fs::read_to_string(f.path("data").join("manifest.txt")).unwrap();
    assert!(manifest.starts_with("tivis-dataset v1 seed=3"));
    assert_eq!(manifest.lines().count(), 13);
    let log = std::fs::read_to_string(f.path("train.log")).unwrap();
    assert!(log.starts_with("# tivis-train-log v1"));
    assert_eq!(log.lines().count(), 4);
}

#[test]
fn classify_lists_top_k_per_variant() {
    let f = fixture();
    let report = f.path("classify.txt");
    ok(&[
        "classify", s(&f.path("data")), "--model", s(&f.path("model.gbx")), "-k", "2",
        "--variants", "original,inverted,screened", "--rect", "0,0,8,8", "--report", s(&report),
    ]);
    let text = std::fs::read_to_string(report).unwrap();
    assert!(text.starts_with("# tivis-class-report v1\nk: 2\nscreen_rect: 0,0,8,8\n"));
    // 12 images x 3 variants x 2 ranks, plus the header lines
    let rows = text.lines().filter(|l| l.contains(".ppm\t")).count();
    assert_eq!(rows, 72);
}

#[test]
fn visualize_and_baseline_write_images_and_reports() {
    let f = fixture();
    let model = f.path("model.gbx");
    let img = f.path("vis.ppm");
    let report = f.path("vis.txt");
    let stdout = ok(&[
        "visualize", "--model", s(&model), "--class", "disk", "--init", "noise:10",
        "--schedule", "rot:90", "--battery", "rot:0,rot:90", "--max-inner-steps", "5",
        "--q-target", "0.5", "--q-test", "0.4", "--out", s(&img), "--report", s(&report),
    ]);
    assert!(stdout.starts_with("status "));
    let text = std::fs::read_to_string(&report).unwrap();
    assert!(text.starts_with("# tivis-run-report v1\ntarget_class: 4 disk\ninit: noise:10\n"));
    assert!(text.contains("[battery]\ntransform\tconfidence\nrot:0\t"));
    assert_eq!(std::fs::read(&img).unwrap().len(), 13 + 64 * 64 * 3);

    let b = f.path("base.txt");
    ok(&[
        "baseline", "--model", s(&model), "--class", "1", "--max-inner-steps", "3",
        "--battery", "rot:0,flip:h", "--report", s(&b),
    ]);
    let text = std::fs::read_to_string(&b).unwrap();
    assert!(text.contains("mode: baseline"));
    assert!(text.contains("\nflip:h\t"));
}

#[test]
fn sweep_writes_one_image_per_level() {
    let f = fixture();
    let out = f.path("sweep");
    let report = f.path("sweep.txt");
    ok(&[
        "sweep-init", "--model", s(&f.path("model.gbx")), "--class", "ring", "--levels", "40,0",
        "--schedule", "rot:90", "--battery", "rot:0", "--max-inner-steps", "2", "--q-target", "0.6",
        "--q-test", "0.5", "--window", "16", "--stride", "8", "--out", s(&out), "--report", s(&report),
    ]);
    assert!(out.join("init_000.ppm").exists());
    assert!(out.join("init_040.ppm").exists());
    let text = std::fs::read_to_string(report).unwrap();
    assert!(text.starts_with("# tivis-sweep-report v1"));
    let rows: Vec<&str> = text.lines().skip_while(|l| *l != "[records]").skip(2).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("0\tinit_000\t"));
    assert!(rows[1].starts_with("40\tinit_040\t"));
}

#[test]
fn entropy_invert_and_screen() {
    let f = fixture();
    let sample = f.path("data").join("sample_00000.ppm");
    let text = ok(&["entropy", s(&sample)]);
    assert!(text.starts_with("# tivis-entropy-report v1"));
    assert!(text.contains("map_rows: 3\nmap_cols: 3\n"));
    let map = f.path("map.ppm");
    ok(&["entropy", s(&sample), "--window", "16", "--stride", "16", "--out", s(&map), "--report", s(&f.path("e.txt"))]);
    assert_eq!(std::fs::read(&map).unwrap().len(), 11 + 4 * 4 * 3);

    let inv = f.path("inv.ppm");
    let twice = f.path("inv2.ppm");
    ok(&["invert", s(&sample), "--out", s(&inv)]);
    ok(&["invert", s(&inv), "--out", s(&twice)]);
    assert_eq!(std::fs::read(&sample).unwrap(), std::fs::read(&twice).unwrap());
    let report = ok(&["invert", s(&sample), "--out", s(&inv), "--model", s(&f.path("model.gbx"))]);
    assert!(report.contains("\toriginal\t1\t") && report.contains("\tinverted\t1\t"));

    let screened = f.path("screened.ppm");
    let report = ok(&["screen", s(&sample), "--rect", "10,20,5,4", "--model", s(&f.path("model.gbx")), "--out", s(&screened)]);
    assert!(report.contains("\tscreened\t1\t"));
    let a = std::fs::read(&sample).unwrap();
    let b = std::fs::read(&screened).unwrap();
    let header = b"P6\n64 64\n255\n".len();
    let differing = (0..64 * 64)
        .filter(|p| a[header + 3 * p..header + 3 * p + 3] != b[header + 3 * p..header + 3 * p + 3])
        .count();
    assert!(differing <= 20);
    for y in 20..24 {
        for x in 10..15 {
            let i = header + 3 * (y * 64 + x);
            assert_eq!(&b[i..i + 3], &[0, 0, 0]);
        }
    }
}

#[test]
fn failures_print_one_machine_readable_line() {
    let f = fixture();
    let sample = f.path("data").join("sample_00000.ppm");
    fails(&["visualize", "--class", "disk"], "usage");
    fails(&["make-dataset"], "usage");
    let junk = f.path("junk.gbx");
    std::fs::write(&junk, b"not a model").unwrap();
    fails(&["classify", s(&sample), "--model", s(&junk)], "model");
    fails(&["entropy", s(&f.path("missing.ppm"))], "image");
    fails(&["screen", s(&sample), "--rect", "60,60,10,10", "--model", s(&f.path("model.gbx")), "--out", s(&f.path("x.ppm"))], "screen");
    fails(&["screen", s(&sample), "--rect", "1,2", "--model", s(&f.path("model.gbx")), "--out", s(&f.path("x.ppm"))], "usage");
    fails(&["visualize", "--model", s(&f.path("model.gbx")), "--class", "square"], "usage");
    fails(&["visualize", "--model", s(&f.path("model.gbx")), "--class", "disk", "--schedule", "spin:3"], "transform");
    fails(&["train", "--count-per-class", "1", "--epochs", "1", "--val-fraction", "1.5", "--out", s(&f.path("m.gbx"))], "train");
    // clap rejects unknown flags with its own exit code
    let out = tivis(&["classify", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
}
