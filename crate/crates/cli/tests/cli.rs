use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use focusgrav::io::formats::{read_log, read_observations, read_report, write_model};
use focusgrav::io::RunConfig;
use focusgrav::mesh::{DensityModel, Mesh};
use focusgrav::synth::noise_sigma;
use focusgrav_cli::{cmd_forward, RunDir};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn focusgrav(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_focusgrav"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_config(dir: &Path) -> PathBuf {
    let path = dir.join("small.toml");
    fs::write(
        &path,
        "[mesh]\nnsx = 6\nnsy = 5\nnbz = 4\ndelta = 50.0\n\n\
         [synthetic]\nkind = \"custom-boxes\"\nboxes = [{ x = [100.0, 200.0], y = [100.0, 200.0], z = [50.0, 150.0], rho = 1.0 }]\n\n\
         [solver]\nseed = 3\n\n[noise]\nlevel = 1\ncopies = 3\n",
    )
    .unwrap();
    path
}

#[test]
fn zero_model_gives_zero_gravity() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let mesh = Mesh::new(6, 5, 4, 50.0).unwrap();
    let model = dir.path().join("zero.txt");
    write_model(&model, &mesh, &DensityModel::zeros(mesh.n_cells())).unwrap();
    let out = dir.path().join("fw");
    let o = focusgrav(&["forward", "-c", s(&cfg), "--model", s(&model), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let obs = read_observations(&out.join("observations.txt")).unwrap();
    assert!(obs.noise_free);
    assert_eq!(obs.len(), 30);
    assert!(obs.g.iter().all(|&g| g == 0.0));
    assert!(obs.sigma.iter().all(|&v| v == 0.0));
}

#[test]
fn cube_anomaly_peaks_over_its_center() {
    let dir = tempfile::tempdir().unwrap();
    let o = focusgrav(&["forward", "-c", s(&configs().join("cube.toml")), "--out", s(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let obs = read_observations(&dir.path().join("observations.txt")).unwrap();
    assert!(obs.g.iter().all(|&g| g > 0.0));
    // cube centered at (375, 250); the nearest stations tie, so take the set
    let dist = |i: usize| (obs.stations[i].x - 375.0).hypot(obs.stations[i].y - 250.0);
    let peak = obs.g.iter().copied().fold(f64::MIN, f64::max);
    let best = (0..obs.len()).map(dist).fold(f64::MAX, f64::min);
    for i in 0..obs.len() {
        if (peak - obs.g[i]).abs() <= 1e-12 * peak {
            assert!((dist(i) - best).abs() < 1e-9, "peak at {:?}", obs.stations[i]);
        }
    }
    // anomaly falls off away from the center
    let far = (0..obs.len()).max_by(|&a, &b| dist(a).total_cmp(&dist(b))).unwrap();
    assert!(obs.g[far] < 0.2 * peak);
}

#[test]
fn synth_is_byte_identical_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for (out, seed) in [(&a, "3"), (&b, "3"), (&c, "4")] {
        let o = focusgrav(&["synth", "-c", s(&cfg), "--seed", seed, "--out", s(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let names = ["model.txt", "obs_01.txt", "obs_02.txt", "obs_03.txt"];
    for n in names {
        assert_eq!(fs::read(a.join(n)).unwrap(), fs::read(b.join(n)).unwrap(), "{n}");
    }
    assert_ne!(fs::read(a.join("obs_01.txt")).unwrap(), fs::read(c.join("obs_01.txt")).unwrap());
    assert!(!a.join("obs_04.txt").exists());

    // sigma column is the noise model applied to the clean data
    let fw = dir.path().join("fw");
    assert!(focusgrav(&["forward", "-c", s(&cfg), "--out", s(&fw)]).status.success());
    let clean = read_observations(&fw.join("observations.txt")).unwrap();
    let want = noise_sigma(&clean.g, 0.01, 0.001).unwrap();
    let noisy = read_observations(&a.join("obs_02.txt")).unwrap();
    assert_eq!(noisy.sigma, want);
    assert_eq!(noisy.stations, clean.stations);
}

#[test]
fn forward_then_invert_reaches_the_noise_level() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let fw = dir.path().join("fw");
    assert!(focusgrav(&["forward", "-c", s(&cfg), "--out", s(&fw)]).status.success());
    let out = dir.path().join("inv");
    let o = focusgrav(&[
        "invert", "-c", s(&cfg), "--obs", s(&fw.join("observations.txt")), "--eta1", "0.001", "--eta2", "0.0001",
        "--section", "z=75", "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let log = read_log(&out.join("run.log")).unwrap();
    assert!(!log.is_empty());
    let threshold = 30.0 + 60f64.sqrt();
    assert!(log.last().unwrap().chi2 <= threshold);
    assert!(log.len() <= 100);
    assert!(out.join("model.txt").exists() && out.join("section_z75.txt").exists());
}

#[test]
fn fitting_prior_logs_no_iterations() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let syn = dir.path().join("syn");
    assert!(focusgrav(&["synth", "-c", s(&cfg), "--out", s(&syn)]).status.success());
    let fw = dir.path().join("fw");
    assert!(focusgrav(&["forward", "-c", s(&cfg), "--out", s(&fw)]).status.success());
    let out = dir.path().join("inv");
    let o = focusgrav(&[
        "invert", "-c", s(&cfg), "--obs", s(&fw.join("observations.txt")), "--prior", s(&syn.join("model.txt")),
        "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(read_log(&out.join("run.log")).unwrap().is_empty());
    assert_eq!(fs::read(out.join("model.txt")).unwrap(), fs::read(syn.join("model.txt")).unwrap());
}

#[test]
fn single_copy_study_has_zero_spread() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let o = focusgrav(&["study", "-c", s(&cfg), "--copies", "1", "--out", s(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_report(&dir.path().join("report.txt")).unwrap();
    assert_eq!(rows.len(), 3);
    for r in &rows {
        assert_eq!((r.alpha_std, r.relerr_std, r.iters_std), (0.0, 0.0, 0.0));
        assert_eq!(r.copies, 1);
        assert_eq!(r.seed, 3);
    }
    // the initial alpha depends only on the noise level, not on the method
    assert!(rows.windows(2).all(|w| w[0].alpha_init == w[1].alpha_init));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("chi2") && stdout.contains("upre") && stdout.contains("mdp"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let missing = focusgrav(&["invert", "-c", s(&dir.path().join("nope.toml"))]);
    assert_eq!(missing.status.code(), Some(2));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[solver]\nmethod = \"upre\"\ngamma = -1.0\n").unwrap();
    let o = focusgrav(&["invert", "-c", s(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("solver.gamma"));

    let syn = dir.path().join("syn");
    assert!(focusgrav(&["synth", "-c", s(&cfg), "--out", s(&syn)]).status.success());
    let o = focusgrav(&[
        "invert", "-c", s(&cfg), "--obs", s(&syn.join("obs_01.txt")), "--max-iters", "1", "--out", s(&syn.join("inv")),
    ]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_log(&syn.join("inv/run.log")).unwrap().len(), 1);
}

#[test]
fn run_directory_is_exclusive() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::load(&small_config(dir.path())).unwrap();
    cfg.paths.output_dir = Some(dir.path().join("out"));
    let held = RunDir::acquire(&dir.path().join("out")).unwrap();
    assert!(cmd_forward(&cfg).is_err());
    drop(held);
    assert!(cmd_forward(&cfg).is_ok());
}
