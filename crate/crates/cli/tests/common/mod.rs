#![allow(dead_code)]

use std::fs;
use std::io::Write;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

pub const SCENARIO: &str = "Vehicle should activate hazard lights when camera or LIDAR detects a pedestrian";

pub fn case_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/case_study")
}

/// Case-study config rewritten with absolute paths and a private output dir.
pub struct Workspace {
    pub dir: tempfile::TempDir,
    pub config: PathBuf,
}

impl Workspace {
    pub fn new() -> Self {
        Self::with_base_url("https://api.openai.com/v1")
    }

    pub fn with_base_url(base_url: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let case = case_dir();
        let text = fs::read_to_string(case.join("config.toml")).unwrap();
        let abs = |rel: &str| case.join(rel).display().to_string();
        let text = text
            .replace("\"../../../", &format!("\"{}/../../../", case.display()))
            .replace("fixtures_dir = \"llm\"", &format!("fixtures_dir = \"{}\"", abs("llm")))
            .replace("output_dir = \"out\"", &format!("output_dir = \"{}\"", dir.path().join("out").display()))
            .replace("base_url = \"https://api.openai.com/v1\"", &format!("base_url = \"{base_url}\""));
        let config = dir.path().join("config.toml");
        fs::write(&config, text).unwrap();
        Workspace { dir, config }
    }

    pub fn out(&self) -> PathBuf {
        self.dir.path().join("out")
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.out().join(name)
    }

    pub fn read(&self, name: &str) -> String {
        fs::read_to_string(self.artifact(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
    }

    pub fn evchain(&self, args: &[&str]) -> Output {
        self.evchain_with_input(args, "")
    }

    pub fn evchain_with_input(&self, args: &[&str], input: &str) -> Output {
        let mut full = vec!["--config", self.config.to_str().unwrap()];
        full.extend_from_slice(args);
        evchain(&full, input)
    }
}

pub fn evchain(args: &[&str], input: &str) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_evchain"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .expect("spawn evchain");
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// A local listener that only counts incoming connections.
pub struct ConnectionCounter {
    pub url: String,
    count: Arc<AtomicUsize>,
}

impl ConnectionCounter {
    pub fn start() -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1", listener.local_addr().unwrap());
        let count = Arc::new(AtomicUsize::new(0));
        let seen = count.clone();
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                seen.fetch_add(1, Ordering::SeqCst);
                drop(stream);
            }
        });
        ConnectionCounter { url, count }
    }

    pub fn connections(&self) -> usize {
        self.count.load(Ordering::SeqCst)
    }
}

/// Every file in `dir` with its bytes, sorted by name.
pub fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}
