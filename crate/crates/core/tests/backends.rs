//! Subprocess and HTTP transports against the manifest-in / PNG-out contract.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use burnbench_core::backend::{BackendSpec, GenerationBackend, HttpBackend, StubBackend, SubprocessBackend};
use burnbench_core::model::{BurnMask, Pipeline, Tile};
use burnbench_core::runner::{write_json, GenerationParams, JobManifest};

fn base_job(dir: &Path) -> (PathBuf, JobManifest) {
    let mask = BurnMask::from_fn(16, 16, |x, y| x < 8 && y < 8).unwrap();
    mask.save_png(&dir.join("mask.png")).unwrap();
    let manifest = JobManifest {
        job_id: "E1-P1-S00".into(),
        sample_id: "S00".into(),
        pipeline: Pipeline::Base,
        mask_path: dir.join("mask.png"),
        before_path: None,
        prompt: "p".into(),
        negative_prompt: "n".into(),
        params: GenerationParams {
            width: 16,
            height: 16,
            ..GenerationParams::default()
        },
        output_path: dir.join("output.png"),
    };
    let path = dir.join("manifest.json");
    write_json(&path, &manifest).unwrap();
    (path, manifest)
}

const TIMEOUT: Duration = Duration::from_secs(20);

#[test]
fn stub_inpaint_darkens_only_the_mask() {
    let dir = tempfile::tempdir().unwrap();
    let (path, mut m) = base_job(dir.path());
    Tile::filled(16, 16, [100.0, 200.0, 50.0])
        .unwrap()
        .save_png(&dir.path().join("before.png"))
        .unwrap();
    m.pipeline = Pipeline::Inpaint;
    m.before_path = Some(dir.path().join("before.png"));
    StubBackend.generate(&path, &m, TIMEOUT).unwrap();
    let out = Tile::load_png(&m.output_path).unwrap();
    assert_eq!(out.pixel(0), [30.0, 60.0, 15.0]);
    assert_eq!(out.pixel(15), [100.0, 200.0, 50.0]);
}

#[test]
fn subprocess_writes_output() {
    let dir = tempfile::tempdir().unwrap();
    let (path, m) = base_job(dir.path());
    let png = dir.path().join("ready.png");
    Tile::filled(16, 16, [1.0, 2.0, 3.0]).unwrap().save_png(&png).unwrap();
    let cmd = format!(
        "sh -c 'test -f \"$1\" && cp {} {}' sh {{manifest}}",
        png.display(),
        m.output_path.display()
    );
    let backend = SubprocessBackend::new(&cmd).unwrap();
    backend.generate(&path, &m, TIMEOUT).unwrap();
    assert_eq!(Tile::load_png(&m.output_path).unwrap().pixel(0), [1.0, 2.0, 3.0]);
}

#[test]
fn subprocess_failure_file_is_surfaced() {
    let dir = tempfile::tempdir().unwrap();
    let (path, m) = base_job(dir.path());
    let cmd = "sh -c 'echo \"{\\\"reason\\\": \\\"unsupported scheduler\\\"}\" > \"$(dirname \"$1\")/failure.json\"; exit 3' sh {manifest}";
    let err = SubprocessBackend::new(cmd)
        .unwrap()
        .generate(&path, &m, TIMEOUT)
        .unwrap_err();
    assert!(err.to_string().contains("unsupported scheduler"), "{err}");
}

#[test]
fn subprocess_nonzero_exit_reports_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let (path, m) = base_job(dir.path());
    let err = SubprocessBackend::new("sh -c 'echo out of memory >&2; exit 5' sh {manifest}")
        .unwrap()
        .generate(&path, &m, TIMEOUT)
        .unwrap_err();
    assert!(err.to_string().contains("out of memory"), "{err}");
}

#[test]
fn subprocess_timeout_kills_the_job() {
    let dir = tempfile::tempdir().unwrap();
    let (path, m) = base_job(dir.path());
    let start = Instant::now();
    let err = SubprocessBackend::new("sh -c 'sleep 30' sh {manifest}")
        .unwrap()
        .generate(&path, &m, Duration::from_secs(1))
        .unwrap_err();
    assert!(err.to_string().contains("timed out"), "{err}");
    assert!(start.elapsed() < Duration::from_secs(10));
}

#[test]
fn missing_command_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let (path, m) = base_job(dir.path());
    let err = SubprocessBackend::new("/nonexistent/generator {manifest}")
        .unwrap()
        .generate(&path, &m, TIMEOUT)
        .unwrap_err();
    assert!(err.to_string().contains("cannot start"), "{err}");
}

/// Serves one request: parses the posted manifest, renders it with the stub, and
/// replies with the PNG bytes.
fn serve_once(listener: TcpListener) -> std::thread::JoinHandle<JobManifest> {
    std::thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut length = 0usize;
        let mut request_line = String::new();
        reader.read_line(&mut request_line).unwrap();
        assert!(request_line.starts_with("POST /generate"), "{request_line}");
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            if line == "\r\n" {
                break;
            }
            if let Some((k, v)) = line.split_once(':') {
                if k.eq_ignore_ascii_case("content-length") {
                    length = v.trim().parse().unwrap();
                }
            }
        }
        let mut body = vec![0; length];
        reader.read_exact(&mut body).unwrap();
        let manifest: JobManifest = serde_json::from_slice(&body).unwrap();
        let tile = StubBackend::render(&manifest).unwrap();
        let mut png = Vec::new();
        tile.to_rgb8()
            .write_to(&mut std::io::Cursor::new(&mut png), image::ImageFormat::Png)
            .unwrap();
        let mut stream = stream;
        write!(
            stream,
            "HTTP/1.1 200 OK\r\nContent-Type: image/png\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
            png.len()
        )
        .unwrap();
        stream.write_all(&png).unwrap();
        manifest
    })
}

#[test]
fn http_post_receives_png() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/generate", listener.local_addr().unwrap());
    let server = serve_once(listener);
    let dir = tempfile::tempdir().unwrap();
    let (path, m) = base_job(dir.path());
    let backend = BackendSpec::Http(url).build().unwrap();
    backend.generate(&path, &m, TIMEOUT).unwrap();
    assert_eq!(server.join().unwrap(), m);
    let out = Tile::load_png(&m.output_path).unwrap();
    assert_eq!(out.pixel(0), [60.0, 60.0, 60.0]);
    assert_eq!(out.pixel(255), [140.0, 190.0, 110.0]);
}

#[test]
fn http_unreachable_is_an_error() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/generate", listener.local_addr().unwrap());
    drop(listener);
    let dir = tempfile::tempdir().unwrap();
    let (path, m) = base_job(dir.path());
    assert!(HttpBackend::new(&url).generate(&path, &m, TIMEOUT).is_err());
    assert!(!m.output_path.exists());
}
