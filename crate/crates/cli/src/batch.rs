use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use pathquant_core::QuantResult;
use pathquant_server::Config;

use crate::{BatchArgs, Failure, Outcome};

const EXTENSIONS: [&str; 6] = ["png", "jpg", "jpeg", "bmp", "tif", "tiff"];

fn is_image(path: &std::path::Path) -> bool {
    path.extension().and_then(|e| e.to_str()).is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

pub fn run(config: &Config, args: &BatchArgs) -> Outcome {
    let opts = args.engine.options(true)?;
    if args.jobs == 0 {
        return Err(Failure::usage("--jobs must be at least 1"));
    }
    let entries = std::fs::read_dir(&args.dir).map_err(|e| Failure::io(args.dir.display(), e))?;
    let mut files: Vec<(String, PathBuf)> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Failure::io(args.dir.display(), e))?;
        let path = entry.path();
        if path.is_file() && is_image(&path) {
            files.push((entry.file_name().to_string_lossy().into_owned(), path));
        }
    }
    if files.is_empty() {
        return Err(Failure::usage(format!("no images in {}", args.dir.display())));
    }
    files.sort();
    let scorer = args.engine.scorer(config)?;

    let results: Vec<Mutex<Option<Result<QuantResult, Failure>>>> = files.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..args.jobs.min(files.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((_, path)) = files.get(i) else { break };
                let r = std::fs::read(path)
                    .map_err(|e| Failure::io(path.display(), e))
                    .and_then(|bytes| scorer.score(&bytes, &opts))
                    .map(|s| s.scoring);
                *results[i].lock().unwrap() = Some(r);
            });
        }
    });

    let mut out = String::from("filename,num_total,num_pos,percent_pos\n");
    let mut failed = 0;
    for ((name, _), slot) in files.iter().zip(results) {
        match slot.into_inner().unwrap().expect("every file is scored") {
            Ok(q) => {
                let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
                w.write_record([
                    name.clone(),
                    q.num_total.to_string(),
                    q.num_pos.to_string(),
                    q.percent_pos.to_string(),
                ])
                .expect("in-memory write");
                out.push_str(std::str::from_utf8(&w.into_inner().expect("in-memory flush")).expect("utf-8 row"));
            }
            Err(f) => {
                failed += 1;
                eprintln!("pq: {name}: {}", f.message);
            }
        }
    }
    match &args.csv {
        Some(path) => crate::write(path, out.as_bytes())?,
        None => print!("{out}"),
    }
    if failed > 0 {
        return Err(Failure { code: 1, message: format!("{failed} of {} files failed", files.len()) });
    }
    Ok(())
}
