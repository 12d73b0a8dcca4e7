use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;

const CONFIG: &str = "\
nodes = 200
dim = 30
hidden = 8
hops = 3
train.epochs = 40
adapt.epochs = 6
";

fn adarc(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_adarc"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Vec<u8> {
    let out = adarc(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

/// Every file under `dir`, keyed by relative path.
fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let key = path.strip_prefix(dir).unwrap().display().to_string();
                files.insert(key, std::fs::read(&path).unwrap());
            }
        }
    }
    files
}

/// The full pipeline, with every output written under `dir`.
fn pipeline(dir: &Path) -> Vec<Vec<u8>> {
    std::fs::write(dir.join("c.txt"), CONFIG).unwrap();
    let c = ["--config", "c.txt", "--seed", "4"];
    let with = |rest: &[&str]| -> Vec<String> { c.iter().chain(rest).map(|s| s.to_string()).collect() };
    let run = |rest: &[&str]| {
        let args = with(rest);
        ok(dir, &args.iter().map(String::as_str).collect::<Vec<_>>())
    };
    vec![
        run(&["generate", "--preset", "homo2hetero", "--attribute-shift", "--out", "data"]),
        run(&["generate", "--degree", "3", "--homophily", "0.4", "--nodes", "60", "--dim", "4", "--out", "explicit"]),
        run(&["generate", "--from", "data/source", "--drop-homophilic", "0.5", "--out", "dropped"]),
        run(&["pretrain", "--data", "data/source", "--out", "m.bin", "--history", "history.csv"]),
        run(&[
            "adapt", "--ckpt", "m.bin", "--data", "data/target", "--base-tta", "tent", "--loss", "pic", "--lr", "0.5",
            "--epochs", "4", "--trace", "trace.csv", "--out", "pred.csv",
        ]),
        run(&["eval", "--ckpt", "m.bin", "--data", "data/target", "--mask", "test", "--out", "eval.json"]),
        run(&["run", "--preset", "low2high", "--num-seeds", "2", "--methods", "erm,erm+adarc,t3a", "--out", "run.json"]),
        run(&[
            "sweep", "--preset", "homo2hetero", "--axis", "lr_epochs", "--grid", "0.1:3,1:3", "--num-seeds", "1",
            "--csv", "sweep.csv", "--out", "sweep.json",
        ]),
        run(&["decompose", "--ckpt", "m.bin", "--source", "data/source", "--target", "data/target", "--out", "gap.json"]),
        run(&["decompose", "--preset", "hetero2homo", "--out", "gap_preset.json"]),
        run(&["theory", "--trials", "200", "--out", "theory.csv"]),
    ]
}

#[test]
fn fixed_seed_runs_reproduce_outputs_byte_for_byte() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let stdout_a = pipeline(a.path());
    let stdout_b = pipeline(b.path());
    let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
    assert!(sa.len() >= 15, "{:?}", sa.keys());
    assert_eq!(sa.keys().collect::<Vec<_>>(), sb.keys().collect::<Vec<_>>());
    for (name, bytes) in &sa {
        assert!(bytes == &sb[name], "{name} differs between runs");
    }
    assert_eq!(stdout_a, stdout_b);
}

#[test]
fn exit_codes_distinguish_config_and_numerical_failures() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("bad.txt"), "adapt.loss = mystery\n").unwrap();
    let out = adarc(d, &["--config", "bad.txt", "theory"]);
    assert_eq!(out.status.code(), Some(2));

    let out = adarc(d, &["eval", "--ckpt", "missing.bin", "--data", "missing"]);
    assert_eq!(out.status.code(), Some(2));

    let out = adarc(d, &["no-such-command"]);
    assert_eq!(out.status.code(), Some(2));

    std::fs::write(d.join("c.txt"), CONFIG).unwrap();
    ok(d, &["--config", "c.txt", "generate", "--preset", "homo2hetero", "--out", "data"]);
    ok(d, &["--config", "c.txt", "pretrain", "--data", "data/source", "--out", "m.bin"]);
    let out = adarc(
        d,
        &["adapt", "--ckpt", "m.bin", "--data", "data/target", "--loss", "diff", "--lr", "1e9", "--epochs", "300"],
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn help_lists_config_keys() {
    let out = adarc(Path::new("."), &["--help"]);
    let text = String::from_utf8(out.stdout).unwrap();
    for key in ["train.weight_decay", "adapt.loss", "t3a.keep", "tent.lr"] {
        assert!(text.contains(key), "{key} missing from --help");
    }
}
