use std::path::Path;
use std::process::{Command, Output};

const TINY: [&str; 8] = [
    "--size=16",
    "--glyphs=2",
    "--levels=2",
    "--placements=3",
    "--rank=2",
    "--iterations=5",
    "--batch_cap=2",
    "--csae_batch=2",
];

fn trae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trae"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = trae(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn run_tiny(out: &Path, extra: &[&str]) {
    let out_arg = format!("--out={}", out.display());
    let mut args = vec!["run", "--preset", "toy-denoise", "--seeds=1,2", out_arg.as_str()];
    args.extend(TINY);
    args.extend(extra);
    ok(&args);
}

#[test]
fn repeated_run_gives_identical_report() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_tiny(a.path(), &[]);
    run_tiny(b.path(), &[]);
    let report = std::fs::read(a.path().join("report.csv")).unwrap();
    assert_eq!(report, std::fs::read(b.path().join("report.csv")).unwrap());
    let text = String::from_utf8(report).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "method,task,psnr_mean_db,psnr_std_db,masked_psnr_db,iterations,seconds");
    assert_eq!(lines.len(), 1 + 3 * 2);
    assert!(lines[1].starts_with("tr-ae,denoise,"));
    assert!(a.path().join("csae/seed2/img_1_1_2.pgm").exists());
    for f in ["tr-ae/seed1/cores.trc", "tr-ae/seed1/params.aep"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
    }
}

#[test]
fn parallel_flag_matches_sequential_methods() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_tiny(a.path(), &[]);
    run_tiny(b.path(), &["--parallel=true"]);
    assert_eq!(
        std::fs::read(a.path().join("report.csv")).unwrap(),
        std::fs::read(b.path().join("report.csv")).unwrap()
    );
}

#[test]
fn unknown_config_key_fails_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    std::fs::write(&cfg, "# tiny\nrank = 2\nlearning_rat = 0.1\n").unwrap();
    let out = trae(&["config", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rat"));

    let out = trae(&["run", "--colour=blue"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));
}

#[test]
fn overrides_beat_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    std::fs::write(&cfg, "rank = 3\ntask = inpaint\n").unwrap();
    let out = ok(&["config", "--preset", "toy-denoise", "--config", cfg.to_str().unwrap(), "--rank=5"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("rank = 5\n"));
    assert!(text.contains("task = inpaint\n"));
    assert!(text.contains("iterations = 3000\n"));
}

#[test]
fn non_compressing_rank_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let out_arg = format!("--out={}", dir.path().display());
    let mut args = vec!["run", out_arg.as_str()];
    args.extend(TINY);
    args.push("--rank=40");
    let out = trae(&args);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("compress"));
}

#[test]
fn staged_pipeline_scores_recovered_images() {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s).to_str().unwrap().to_string();
    let (clean, corrupted, rec) = (p("clean"), p("corrupted"), p("rec"));

    let mut args = vec!["generate", "--out", clean.as_str()];
    args.extend(TINY);
    ok(&args);
    assert!(Path::new(&clean).join("img_0_0_0.pgm").exists());

    ok(&["corrupt", "--input", &clean, "--out", &corrupted, "--task=inpaint", "--block=4", "--seed=9"]);
    assert!(Path::new(&corrupted).join("replay.txt").exists());
    assert!(!Path::new(&corrupted).join("img_0_0_0.pgm").exists());

    let mut args = vec!["recover", "--input", corrupted.as_str(), "--out", rec.as_str(), "--method", "tr-ae"];
    args.extend(TINY);
    ok(&args);
    assert!(Path::new(&rec).join("loss.csv").exists());

    let report = p("report.csv");
    ok(&["report", "--truth", &clean, "--measurements", &corrupted, "--recovered", &rec, "--out", &report]);
    let text = std::fs::read_to_string(&report).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&row[..2], &["tr-ae", "inpaint"]);
    assert!(row[2].parse::<f64>().unwrap().is_finite());
    assert!(!row[4].is_empty());
    assert_eq!(row[5], "5");
}

#[test]
fn bad_thread_count_is_rejected() {
    let out = Command::new(env!("CARGO_BIN_EXE_trae"))
        .args(["config"])
        .env("RECOVERY_THREADS", "zero")
        .output()
        .unwrap();
    assert!(!out.status.success());
}
