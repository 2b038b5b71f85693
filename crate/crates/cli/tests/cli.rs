use std::fs;
use std::net::TcpListener;
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};

fn oinf() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_oinf"));
    c.env("RUST_LOG", "warn");
    for (k, _) in std::env::vars() {
        if k.starts_with("OINF_") {
            c.env_remove(k);
        }
    }
    c
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

fn value(out: &Output, key: &str) -> String {
    let text = String::from_utf8_lossy(&out.stdout);
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")).map(str::to_string))
        .unwrap_or_else(|| panic!("no {key} in {text}"))
}

fn write_config(dir: &Path, role: u8, ports: &[u16; 3]) -> std::path::PathBuf {
    let p = dir.join(format!("s{role}.toml"));
    let text = format!(
        r#"role = {role}
peer_addr = "127.0.0.1:{}"
listen_addr = "127.0.0.1:{}"
server_addrs = ["127.0.0.1:{}", "127.0.0.1:{}"]
triplet_store = "{}"
model_share = "{}"
model_descriptor = "{}"
seed = {}
connect_retries = 100

[he]
backend = "dealer-mock"
"#,
        ports[0],
        ports[role as usize],
        ports[1],
        ports[2],
        dir.join(format!("t{role}.oitr")).display(),
        dir.join(format!("share{role}.oims")).display(),
        dir.join("model.json").display(),
        40 + role as u64,
    );
    fs::write(&p, text).unwrap();
    p
}

fn spawn(c: &mut Command) -> Child {
    c.stdout(Stdio::piped()).stderr(Stdio::piped()).spawn().unwrap()
}

#[test]
fn init_offline_serve_query_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = oinf()
        .args(["init-model", "--random", "network1", "--seed", "5", "--out"])
        .arg(d)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(value(&out, "model.triplets_per_query"), "118272");

    let ports = [free_port(), free_port(), free_port()];
    let (c1, c2) = (write_config(d, 1, &ports), write_config(d, 2, &ports));

    // Serving before the offline phase is refused.
    let out = oinf().arg("--config").arg(&c1).args(["serve", "--max-queries", "1"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("offline"));

    let o2 = spawn(oinf().arg("--config").arg(&c2).args(["offline", "--queries", "2"]));
    let o1 = oinf().arg("--config").arg(&c1).args(["offline", "--queries", "2"]).output().unwrap();
    let o2 = o2.wait_with_output().unwrap();
    assert!(o1.status.success(), "{}", String::from_utf8_lossy(&o1.stderr));
    assert!(o2.status.success(), "{}", String::from_utf8_lossy(&o2.stderr));
    assert_eq!(value(&o1, "offline.total"), (118272 * 2 * 105 / 100 + 1).to_string());

    let s2 = spawn(oinf().arg("--config").arg(&c2).args(["--sync", "serve", "--max-queries", "1"]));
    let s1 = spawn(oinf().arg("--config").arg(&c1).args(["--sync", "serve", "--max-queries", "1"]));
    let image = d.join("zero.json");
    fs::write(&image, serde_json::to_string(&vec![0.0; 784]).unwrap()).unwrap();
    let q = oinf().arg("--config").arg(&c1).arg("query").arg(&image).output().unwrap();
    let (s1, s2) = (s1.wait_with_output().unwrap(), s2.wait_with_output().unwrap());
    assert!(q.status.success(), "{}", String::from_utf8_lossy(&q.stderr));
    assert!(s1.status.success(), "{}", String::from_utf8_lossy(&s1.stderr));
    assert!(s2.status.success(), "{}", String::from_utf8_lossy(&s2.stderr));
    // Zero input through a bias-free network gives zero logits.
    for v in value(&q, "query.logits").split(',') {
        assert_eq!(v.parse::<f64>().unwrap(), 0.0);
    }
    assert_eq!(value(&s1, "serve.completed"), "1");
}

#[test]
fn malformed_model_file_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.oimd");
    fs::write(&bad, b"OIMD\x01\x00junk").unwrap();
    let out = oinf().arg("init-model").arg(&bad).arg("--out").arg(dir.path()).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.oimd"));
}

#[test]
fn bench_suite_names_are_checked() {
    let out = oinf().args(["bench", "network9"]).output().unwrap();
    assert!(!out.status.success());
    let out = oinf().args(["--bench", "relu"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("relu.wrong=0"), "{text}");
}
