//! Text checkpoint container.
//!
//! ```text
//! spcseg-checkpoint 1
//! config <NetConfig as one-line JSON>
//! tensors <count>
//! tensor <name> <rank> <dim_0> ... <dim_{rank-1}>
//! <row-major values, space separated, 17 significant digits>
//! ...                      (one tensor/values line pair per tensor)
//! end
//! ```
//!
//! Tensors appear in [`ModelParams::names`] order and are matched by name on
//! load, so a reordered or renamed file is rejected rather than misread.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::pointcloud::io::format_f64;

use super::{ModelParams, NetConfig};

pub const CHECKPOINT_MAGIC: &str = "spcseg-checkpoint";
const VERSION: u32 = 1;

pub fn save_checkpoint(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let config = serde_json::to_string(params.config()).expect("config serializes");
    let mut out = String::new();
    let _ = writeln!(out, "{CHECKPOINT_MAGIC} {VERSION}");
    let _ = writeln!(out, "config {config}");
    let tensors = params.tensors();
    let _ = writeln!(out, "tensors {}", tensors.len());
    for (name, t) in params.names().iter().zip(tensors) {
        let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        let _ = writeln!(out, "tensor {name} {} {}", t.shape().len(), dims.join(" "));
        let values: Vec<String> = t.data().iter().map(|&v| format_f64(v)).collect();
        let _ = writeln!(out, "{}", values.join(" "));
    }
    out.push_str("end\n");
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |message: String| Error::Checkpoint {
        path: path.to_path_buf(),
        message,
    };
    let mut lines = text.lines();
    let mut next = |what: &str| {
        lines
            .next()
            .ok_or_else(|| bad(format!("truncated before {what}")))
    };

    let magic = next("header")?;
    if magic != format!("{CHECKPOINT_MAGIC} {VERSION}") {
        return Err(bad(format!("unsupported header {magic:?}")));
    }
    let config_line = next("config")?;
    let config: NetConfig = config_line
        .strip_prefix("config ")
        .ok_or_else(|| bad("missing config line".into()))
        .and_then(|j| serde_json::from_str(j).map_err(|e| bad(format!("config: {e}"))))?;
    config.validate()?;
    let count: usize = next("tensor count")?
        .strip_prefix("tensors ")
        .and_then(|c| c.parse().ok())
        .ok_or_else(|| bad("missing tensor count".into()))?;

    let template = ModelParams::zeros(&config)?;
    let names = template.names();
    if count != names.len() {
        return Err(bad(format!(
            "expected {} tensors for this config, found {count}",
            names.len()
        )));
    }
    let mut tensors = Vec::with_capacity(count);
    for expected in &names {
        let header = next("tensor header")?;
        let fields: Vec<&str> = header.split(' ').collect();
        if fields.len() < 3 || fields[0] != "tensor" {
            return Err(bad(format!("malformed tensor header {header:?}")));
        }
        if fields[1] != expected {
            return Err(bad(format!(
                "expected tensor {expected}, found {}",
                fields[1]
            )));
        }
        let rank: usize = fields[2]
            .parse()
            .map_err(|_| bad(format!("bad rank in {header:?}")))?;
        if fields.len() != 3 + rank {
            return Err(bad(format!("rank/dims mismatch in {header:?}")));
        }
        let shape: Vec<usize> = fields[3..]
            .iter()
            .map(|d| d.parse().map_err(|_| bad(format!("bad dim in {header:?}"))))
            .collect::<Result<_>>()?;
        let values: Vec<f64> = next("tensor values")?
            .split_ascii_whitespace()
            .map(|v| {
                v.parse()
                    .map_err(|_| bad(format!("{expected}: bad value {v:?}")))
            })
            .collect::<Result<_>>()?;
        let t = Tensor::new(shape, values).map_err(|e| bad(format!("{expected}: {e}")))?;
        tensors.push(t);
    }
    if next("end")? != "end" {
        return Err(bad("missing end marker".into()));
    }
    ModelParams::from_tensors(&config, tensors).map_err(|e| bad(e.to_string()))
}
