use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn rdm(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_rdm"));
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Checks every manifest line against the file's actual hash; returns the listed paths.
fn check_manifest(dir: &Path, seed: u64) -> Vec<String> {
    let text = fs::read_to_string(dir.join("manifest.txt")).unwrap();
    assert!(text.starts_with(&format!("# seed {seed}\n")), "{text}");
    let mut listed = Vec::new();
    for line in text.lines().filter(|l| !l.starts_with('#')) {
        let (hash, rel) = line.split_once("  ").expect("two-space separator");
        let bytes = fs::read(dir.join(rel)).unwrap();
        assert_eq!(hash, hex::encode(Sha256::digest(&bytes)), "{rel}");
        listed.push(rel.to_string());
    }
    listed
}

#[test]
fn verify_covariance_suite_writes_csv_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("v");
    let o = rdm(
        &[
            "verify",
            "--suite",
            "covariance",
            "--seed",
            "7",
            "--out",
            out.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("PASS covariance"));
    let files = check_manifest(&out, 7);
    assert!(files.contains(&"verify/covariance_s4.csv".to_string()));
    let csv = fs::read_to_string(out.join("verify/covariance_s1.csv")).unwrap();
    assert!(csv.starts_with("dx,dy,analytic,empirical,stderr\n"));
    assert_eq!(csv.lines().count(), 26);
}

#[test]
fn unknown_config_key_is_a_usage_error_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("toy.cfg");
    fs::write(&cfg, "# toy\neta = 0.2\nsigma_bmax = 3\n").unwrap();
    let o = rdm(
        &[
            "relay",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.path().join("o").to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sigma_bmax"), "{}", stderr(&o));

    let o = rdm(
        &[
            "sample",
            "--set",
            "nonsense=1",
            "--out",
            dir.path().join("o").to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nonsense"));
}

#[test]
fn usage_and_runtime_errors_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let out = out.to_str().unwrap();
    assert_eq!(rdm(&["spectra", "--out", out], &[]).status.code(), Some(2));
    assert_eq!(
        rdm(&["sample", "--eta", "1.5", "--out", out], &[])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(rdm(&["frobnicate"], &[]).status.code(), Some(2));
    assert_eq!(
        rdm(
            &["verify", "--suite", "dct", "--out", out],
            &[("RDMK_THREADS", "zero")]
        )
        .status
        .code(),
        Some(2)
    );
    let bad = dir.path().join("bad.pgm");
    fs::write(&bad, b"P2\n1 1\n255\n0\n").unwrap();
    let o = rdm(
        &["spectra", "--input", bad.to_str().unwrap(), "--out", out],
        &[],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("P2"), "{}", stderr(&o));
}

#[test]
fn relay_is_reproducible_and_thread_count_independent() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, threads: &str| {
        let out = dir.path().join(name);
        let o = rdm(
            &[
                "relay",
                "--eta",
                "0.2",
                "--samples",
                "6",
                "--reference",
                "50",
                "--seed",
                "3",
                "--out",
                out.to_str().unwrap(),
            ],
            &[("RDMK_THREADS", threads)],
        );
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        check_manifest(&out, 3);
        fs::read_to_string(out.join("manifest.txt")).unwrap()
    };
    let a = run("a", "1");
    let b = run("b", "4");
    assert_eq!(a, b);
    assert!(
        a.contains("relay_005.pgm") && a.contains("trace_stage2.csv") && a.contains("quality.csv")
    );
    let trace = fs::read_to_string(dir.path().join("a/trace_stage2.csv")).unwrap();
    assert!(trace.starts_with("n,t,sigma,mean_abs_u,mean_abs_d\n"));
    assert_eq!(trace.lines().count(), 1 + 41);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.cfg");
    fs::write(&cfg, "steps = 3\nsamples = 1\nsize = 8\n").unwrap();
    let out = dir.path().join("o");
    let o = rdm(
        &[
            "sample",
            "--config",
            cfg.to_str().unwrap(),
            "--steps",
            "5",
            "--out",
            out.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    // N steps give N + 1 trace rows.
    assert_eq!(
        fs::read_to_string(out.join("trace.csv"))
            .unwrap()
            .lines()
            .count(),
        1 + 6
    );
}

#[test]
fn train_then_sample_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("t");
    let o = rdm(
        &[
            "train",
            "--train-steps",
            "20",
            "--eval-every",
            "5",
            "--out",
            t.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let log = fs::read_to_string(t.join("train_log.csv")).unwrap();
    assert!(log.starts_with("step,batch_loss,eval_loss\n"));
    assert_eq!(log.lines().count(), 21);
    let ckpt = t.join("model.rdmk");
    assert_eq!(&fs::read(&ckpt).unwrap()[..4], b"RDMK");
    let s = dir.path().join("s");
    let o = rdm(
        &[
            "sample",
            "--denoiser",
            "conv",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--label",
            "2",
            "--guidance",
            "1.5",
            "--size",
            "8",
            "--samples",
            "2",
            "--steps",
            "6",
            "--out",
            s.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let pgm = fs::read(s.join("sample_001.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n8 8\n255\n"));
    assert_eq!(pgm.len(), 11 + 64);
    let o = rdm(
        &[
            "sample",
            "--denoiser",
            "conv",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--label",
            "9",
            "--out",
            s.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn noise_forward_and_spectra_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("f");
    let o = rdm(
        &[
            "forward",
            "--times",
            "0.2,0.8",
            "--sigma-b-max",
            "2",
            "--patch",
            "4",
            "--out",
            f.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(f.join("forward_t0.800.pgm").exists());
    let sched = fs::read_to_string(f.join("schedule.csv")).unwrap();
    assert!(sched.starts_with("t,sigma,sigma_trunc,tau\n"));

    let s = dir.path().join("s");
    let o = rdm(
        &[
            "spectra",
            "--input",
            f.to_str().unwrap(),
            "--bins",
            "8",
            "--out",
            s.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let mean = fs::read_to_string(s.join("psd_mean.csv")).unwrap();
    assert!(mean.starts_with("freq,power\n"));
    assert_eq!(mean.lines().count(), 9);
    assert_eq!(check_manifest(&s, 0).len(), 4);

    let n = dir.path().join("n");
    let o = rdm(
        &[
            "noise",
            "--noise-kind",
            "mixed",
            "--samples",
            "2",
            "--draws",
            "500",
            "--out",
            n.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(n.join("noise_001.pgm").exists() && n.join("covariance.csv").exists());
}

#[test]
fn sweep_emits_both_tables_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = rdm(
            &[
                "sweep",
                "--samples",
                "3",
                "--reference",
                "20",
                "--totals",
                "20",
                "--out",
                out.to_str().unwrap(),
            ],
            &[],
        );
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        (
            fs::read_to_string(out.join("eta_sweep.csv")).unwrap(),
            fs::read_to_string(out.join("nfe_sweep.csv")).unwrap(),
        )
    };
    let (eta, nfe) = run("a");
    assert_eq!((eta.clone(), nfe.clone()), run("b"));
    assert_eq!(eta.lines().count(), 1 + 8);
    assert!(eta.lines().nth(1).unwrap().starts_with("0,ODE,"));
    assert_eq!(nfe.lines().count(), 1 + 3);
}

#[test]
fn help_documents_config_keys() {
    let o = rdm(&["relay", "--help"], &[]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    for key in ["eta", "stage1_steps", "sigma_b_max", "t_min"] {
        assert!(
            text.contains(&format!("[config: {key}")),
            "{key} missing from\n{text}"
        );
    }
    let o = rdm(&["--help"], &[]);
    assert!(stdout(&o).contains("Configuration keys"));
}
