use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use omnissr::io::{self, BitDepth};
use omnissr::synth::{render, Scene};
use omnissr::ErpImage;
use tempfile::TempDir;

fn omnissr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_omnissr"))
        .args(args)
        .output()
        .expect("spawn omnissr")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A 64x128 panorama and its x4 observation, written as 16-bit PNGs.
fn fixture() -> (TempDir, PathBuf, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let hr = dir.path().join("hr.png");
    let lr = dir.path().join("lr.png");
    io::write_png(&hr, render(Scene::Landscape, 64).raster(), BitDepth::Sixteen).unwrap();
    let o = omnissr(&["-q", "degrade", "-i", s(&hr), "-o", s(&lr), "--scale", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    (dir, hr, lr)
}

fn read(p: &Path) -> ErpImage {
    ErpImage::new(io::read_image(p).unwrap()).unwrap()
}

#[test]
fn eval_of_an_image_against_itself() {
    let (_d, hr, _) = fixture();
    let o = omnissr(&["eval", "--reference", s(&hr), "--test", s(&hr)]);
    assert!(o.status.success());
    let out = stdout(&o);
    let mut lines = out.lines();
    assert_eq!(lines.next().unwrap(), "reference,test,ws_psnr,ws_ssim,psnr,ssim,lpips,fid");
    let f: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&f[2..], &["99.0000", "1.000000", "99.0000", "1.000000", "n/a", "n/a"]);
}

#[test]
fn single_step_sr_is_consistent_with_its_input() {
    let (d, _, lr) = fixture();
    let sr = d.path().join("sr.png");
    let again = d.path().join("again.png");
    let o = omnissr(&[
        "sr", "-i", s(&lr), "-o", s(&sr), "--scale", "4", "--denoiser", "identity", "--steps", "1", "--gamma-e", "1",
        "--tp-res", "32",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("# gamma.e = 1"), "resolved config not echoed");
    let o = omnissr(&["-q", "degrade", "-i", s(&sr), "-o", s(&again), "--scale", "4"]);
    assert!(o.status.success());
    let err = read(&again).raster().max_abs_diff(read(&lr).raster()).unwrap();
    assert!(err < 1e-3, "{err}");
}

#[test]
fn sr_is_deterministic_and_writes_a_report() {
    let (d, hr, lr) = fixture();
    let run = |name: &str| {
        let out = d.path().join(format!("{name}.png"));
        let report = d.path().join(format!("{name}.txt"));
        let o = omnissr(&[
            "-q", "sr", "-i", s(&lr), "-o", s(&out), "--scale", "4", "--steps", "3", "--tp-res", "32", "--reference",
            s(&hr), "--report", s(&report),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).starts_with("ws_psnr="));
        (std::fs::read(out).unwrap(), std::fs::read_to_string(report).unwrap())
    };
    let (a, report) = run("a");
    let (b, _) = run("b");
    assert_eq!(a, b);
    let steps: Vec<&str> = report.lines().filter(|l| l.starts_with("step ")).collect();
    assert_eq!(steps.len(), 3);
    assert!(steps[0].starts_with("step t=3 residual="));
    assert!(report.lines().last().unwrap().contains("ws_psnr="));
    assert!(report.starts_with("# pipeline.steps = 3"));
}

#[test]
fn roundtrip_csv() {
    let (_d, hr, _) = fixture();
    let o = omnissr(&["-q", "roundtrip", "-i", s(&hr), "--preup", "1,1", "4,4", "--tp-res", "48"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let rows: Vec<Vec<&str>> = out.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(out.lines().next().unwrap(), "image,preup_erp,preup_tp,ws_psnr,ws_ssim,seconds");
    assert_eq!(rows.len(), 2);
    assert_eq!((rows[0][1], rows[0][2], rows[1][1], rows[1][2]), ("1", "1", "4", "4"));
    let psnr = |r: &Vec<&str>| r[3].parse::<f64>().unwrap();
    assert!(psnr(&rows[1]) > psnr(&rows[0]));
}

#[test]
fn project_then_backproject() {
    let (d, hr, _) = fixture();
    let planes = d.path().join("planes");
    let back = d.path().join("back.osst");
    let o = omnissr(&["-q", "project", "-i", s(&hr), "--out-dir", s(&planes), "--tp-res", "32", "--tensor"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest = std::fs::read_to_string(planes.join("manifest.txt")).unwrap();
    let entries: Vec<&str> = manifest.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(entries.len(), 18);
    for (i, e) in entries.iter().enumerate() {
        assert!(e.starts_with(&format!("{i} ")));
        assert!(e.ends_with(&format!("plane_{i:02}.osst")));
    }
    let o = omnissr(&["-q", "backproject", "-m", s(&planes.join("manifest.txt")), "-o", s(&back), "--height", "64"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let img = read(&back);
    assert_eq!((img.width(), img.height(), img.channels()), (128, 64, 3));
    let psnr = omnissr::metrics::ws_psnr(read(&hr).raster(), img.raster()).unwrap();
    assert!(psnr > 25.0, "{psnr}");
}

#[test]
fn single_cell_ablation() {
    let (d, hr, lr) = fixture();
    let csv = d.path().join("ablate.csv");
    let o = omnissr(&[
        "-q", "ablate-gamma", "-i", s(&lr), "--reference", s(&hr), "--scale", "4", "--steps", "2", "--tp-res", "32",
        "--gamma-p-grid", "1", "--gamma-e-grid", "1", "--gamma-l-grid", "0.5", "-o", s(&csv),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].ends_with(",pareto"));
    assert!(lines[1].starts_with("1,1,0.5,"));
    assert!(lines[1].ends_with(",1"));
}

#[test]
fn config_file_is_applied_and_checked() {
    let (d, _, lr) = fixture();
    let cfg = d.path().join("run.cfg");
    std::fs::write(&cfg, "# test\npipeline.steps = 2\ndenoiser.kind = identity\n").unwrap();
    let out = d.path().join("o.png");
    let o = omnissr(&["--config", s(&cfg), "sr", "-i", s(&lr), "-o", s(&out), "--tp-res", "32"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let err = stderr(&o);
    assert!(err.contains("# pipeline.steps = 2") && err.contains("# denoiser.kind = identity"));

    // Flags win over the file.
    let o = omnissr(&["--config", s(&cfg), "sr", "-i", s(&lr), "-o", s(&out), "--tp-res", "32", "--steps", "1"]);
    assert!(stderr(&o).contains("# pipeline.steps = 1"));

    std::fs::write(&cfg, "pipeline.stepz = 2\n").unwrap();
    let o = omnissr(&["--config", s(&cfg), "sr", "-i", s(&lr), "-o", s(&out)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("unknown key `pipeline.stepz`"));
}

#[test]
fn exit_codes() {
    let (d, _, lr) = fixture();
    let out = d.path().join("o.png");
    let missing = d.path().join("missing.png");

    let o = omnissr(&["-q", "sr", "-i", s(&missing), "-o", s(&out)]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));

    let o = omnissr(&["-q", "sr", "-i", s(&lr), "-o", s(&out), "--gamma-l", "2"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let free = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
    let o = omnissr(&[
        "-q", "sr", "-i", s(&lr), "-o", s(&out), "--tp-res", "32", "--denoiser", "external", "--endpoint",
        &free.to_string(),
    ]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));

    let o = Command::new(env!("CARGO_BIN_EXE_omnissr"))
        .args(["selftest"])
        .env("OMNISR_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn external_echo_server_matches_identity() {
    let (d, _, lr) = fixture();
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let mut server = Command::new(env!("CARGO_BIN_EXE_omnissr"))
        .args(["echo-server", "--listen", &addr, "--sessions", "1"])
        .spawn()
        .unwrap();
    let a = d.path().join("a.osst");
    let b = d.path().join("b.osst");
    let mut o = None;
    for _ in 0..50 {
        let r = omnissr(&[
            "-q", "sr", "-i", s(&lr), "-o", s(&a), "--tp-res", "32", "--steps", "2", "--denoiser", "external",
            "--endpoint", &addr,
        ]);
        if r.status.code() != Some(4) {
            o = Some(r);
            break;
        }
        std::thread::sleep(std::time::Duration::from_millis(100));
    }
    let o = o.expect("echo server never came up");
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(server.wait().unwrap().success());
    let o = omnissr(&["-q", "sr", "-i", s(&lr), "-o", s(&b), "--tp-res", "32", "--steps", "2", "--denoiser", "identity"]);
    assert!(o.status.success());
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn selftest_passes() {
    let o = omnissr(&["selftest"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).lines().filter(|l| l.starts_with("PASS ")).count() >= 7);
}
