#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use refmix_pipeline::backend::RegistrySpec;
use refmix_pipeline::bench::{BenchTask, CaseCategory, TestCase};
use refmix_pipeline::image_io::{encode_png, render_scene};
use refmix_pipeline::{PipelineConfig, StageCounts};

/// Real-image store with three captioned images.
pub fn real_store(dir: &Path) -> PathBuf {
    let store = dir.join("real");
    std::fs::create_dir_all(&store).unwrap();
    for i in 0..3u64 {
        std::fs::write(store.join(format!("photo{i}.png")), encode_png(&render_scene(1000 + i, Some(i))).unwrap()).unwrap();
        std::fs::write(store.join(format!("photo{i}.txt")), format!("a photo number {i}")).unwrap();
    }
    store
}

pub fn config(out: &Path, seed: u64, n: usize) -> PipelineConfig {
    PipelineConfig {
        seed,
        counts: StageCounts {
            stage1: n,
            stage2: n,
            stage3: n,
        },
        output_dir: out.to_path_buf(),
        ..Default::default()
    }
}

pub fn spec(store: &Path) -> RegistrySpec {
    RegistrySpec {
        real_image_store: Some(store.to_path_buf()),
        ..Default::default()
    }
}

/// Writes `n` benchmark cases with their images under `dir`.
pub fn bench_cases(dir: &Path, n: usize) -> Vec<TestCase> {
    std::fs::create_dir_all(dir.join("images")).unwrap();
    (0..n)
        .map(|i| {
            let task = if i % 2 == 0 { BenchTask::Edit } else { BenchTask::Gen };
            let id = format!("case-{i:02}");
            let img = |suffix: &str, seed: u64| {
                let rel = format!("images/{id}-{suffix}.png");
                std::fs::write(dir.join(&rel), encode_png(&render_scene(seed, Some(seed + 1))).unwrap()).unwrap();
                rel
            };
            let source_image = (task == BenchTask::Edit).then(|| img("source", i as u64));
            let reference_images = (0..1 + i % 3).map(|k| img(&format!("ref{k}"), 100 + (i * 7 + k) as u64)).collect();
            TestCase {
                id,
                task,
                category: if i % 3 == 0 { CaseCategory::Concrete } else { CaseCategory::Abstract },
                instruction: if task == BenchTask::Edit {
                    "make the bag match image 2".into()
                } else {
                    "Put the hat from image 1 on a cat".into()
                },
                source_image,
                reference_images,
                expected_element: "bag".into(),
            }
        })
        .collect()
}

pub struct Recorded {
    pub auth: Option<String>,
    pub body: String,
}

/// Minimal HTTP/1.1 server answering every POST with `reply(body)`.
pub fn serve(reply: impl Fn(&str) -> (u16, String) + Send + Sync + 'static) -> (String, Arc<Mutex<Vec<Recorded>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let log = Arc::new(Mutex::new(Vec::new()));
    let log2 = log.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            let mut auth = None;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 {
                    break;
                }
                let l = line.trim_end();
                if l.is_empty() {
                    break;
                }
                if let Some((k, v)) = l.split_once(':') {
                    match k.to_ascii_lowercase().as_str() {
                        "content-length" => len = v.trim().parse().unwrap_or(0),
                        "authorization" => auth = Some(v.trim().to_string()),
                        _ => {}
                    }
                }
            }
            let mut body = vec![0u8; len];
            reader.read_exact(&mut body).ok();
            let body = String::from_utf8_lossy(&body).into_owned();
            let (status, resp) = reply(&body);
            log2.lock().unwrap().push(Recorded { auth, body });
            let msg = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{resp}",
                resp.len()
            );
            stream.write_all(msg.as_bytes()).ok();
        }
    });
    (url, log)
}
