use std::path::Path;

use collapse_lab::datasets::decode_gld1;
use collapse_lab::nn::read_snapshot;
use collapse_lab::{Error, Result};

fn read_f64(bytes: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"))
}

pub fn cmd_inspect(path: &Path) -> Result<()> {
    let bytes = std::fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    match bytes.get(..4) {
        Some(b"GLD1") => {
            let ds = decode_gld1(&bytes)?;
            println!("format: GLD1");
            println!("version: 1");
            println!("samples: {}", ds.len());
            println!("dim: {}", ds.dim());
            println!("labeled: {}", ds.is_labeled());
            if ds.is_labeled() {
                let counts: Vec<String> = ds.class_counts().iter().map(|c| c.to_string()).collect();
                println!("classes: {}", ds.num_classes());
                println!("class_counts: {}", counts.join(","));
            }
        }
        Some(b"CLNN") => {
            let snap = read_snapshot(&bytes)?;
            let spec = snap.network.spec();
            let hidden: Vec<String> = spec.hidden.iter().map(|w| w.to_string()).collect();
            println!("format: CLNN");
            println!("version: 1");
            println!("role: {}", String::from_utf8_lossy(&snap.role));
            println!("input_dim: {}", spec.input_dim);
            println!("hidden: [{}]", hidden.join(","));
            println!("output_dim: {}", spec.output_dim);
            println!("activation: {:?}", spec.hidden_activation);
            println!("time_embed_dim: {}", spec.time_embed_dim);
            println!("max_timestep: {}", spec.max_timestep);
            println!("num_classes: {}", spec.num_classes);
            println!("class_embed_dim: {}", spec.class_embed_dim);
            println!("parameters: {}", snap.network.param_count());
            match (&snap.role, snap.extra.len()) {
                (b"DIFF", 20) => {
                    let t = u32::from_le_bytes(snap.extra[..4].try_into().expect("4 bytes"));
                    println!("schedule_T: {t}");
                    println!("beta_start: {}", read_f64(&snap.extra, 4));
                    println!("beta_end: {}", read_f64(&snap.extra, 12));
                }
                (b"CLSF", 16) => {
                    println!("heldout_accuracy: {}", read_f64(&snap.extra, 0));
                    println!("train_accuracy: {}", read_f64(&snap.extra, 8));
                }
                (_, n) => println!("metadata_bytes: {n}"),
            }
        }
        _ => {
            return Err(Error::Format {
                offset: 0,
                message: format!("{} is neither GLD1 nor CLNN", path.display()),
            })
        }
    }
    Ok(())
}
