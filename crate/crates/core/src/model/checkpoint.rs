//! Binary model checkpoints.
//!
//! Layout: one ASCII header line
//! `fairweight-checkpoint v1 kind=<logistic|mlp> input_dim=<d> hidden=<h> params=<P>`
//! followed by `P` little-endian `f64` values.

use super::{Architecture, Model};
use crate::error::{Error, Result};
use std::io::{BufRead, Read, Write};
use std::path::Path;

const MAGIC: &str = "fairweight-checkpoint";
const VERSION: &str = "v1";

pub fn write_checkpoint(model: &Model, mut out: impl Write) -> std::io::Result<()> {
    let hidden = match model.architecture() {
        Architecture::Logistic => 0,
        Architecture::Mlp { hidden } => hidden,
    };
    writeln!(
        out,
        "{MAGIC} {VERSION} kind={} input_dim={} hidden={hidden} params={}",
        model.architecture().name(),
        model.input_dim(),
        model.num_params()
    )?;
    for p in model.params().iter() {
        out.write_all(&p.to_le_bytes())?;
    }
    out.flush()
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(model, std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn read_checkpoint(input: impl Read) -> Result<Model> {
    let mut reader = std::io::BufReader::new(input);
    let mut header = String::new();
    reader
        .read_line(&mut header)
        .map_err(|e| bad(format!("unreadable header: {e}")))?;
    let mut fields = header.trim_end().split(' ');
    if fields.next() != Some(MAGIC) {
        return Err(bad("not a checkpoint file"));
    }
    if fields.next() != Some(VERSION) {
        return Err(bad("unsupported checkpoint version"));
    }
    let mut kind = None;
    let mut numbers = [None; 3];
    for field in fields {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| bad(format!("malformed header field {field:?}")))?;
        let slot = match key {
            "kind" => {
                kind = Some(value.to_string());
                continue;
            }
            "input_dim" => 0,
            "hidden" => 1,
            "params" => 2,
            _ => return Err(bad(format!("unknown header field {key:?}"))),
        };
        numbers[slot] = Some(
            value
                .parse::<usize>()
                .map_err(|_| bad(format!("header field {key} is not a count")))?,
        );
    }
    let [Some(input_dim), Some(hidden), Some(count)] = numbers else {
        return Err(bad("header is missing a field"));
    };
    let arch = match kind.as_deref() {
        Some("logistic") => Architecture::Logistic,
        Some("mlp") => Architecture::Mlp { hidden },
        Some(other) => return Err(bad(format!("unknown model kind {other:?}"))),
        None => return Err(bad("header is missing the model kind")),
    };
    if input_dim == 0 || arch.num_params(input_dim) != count {
        return Err(bad(format!(
            "header declares {count} parameters, inconsistent with {} of input dimension {input_dim}",
            arch.name()
        )));
    }

    let mut bytes = Vec::new();
    reader
        .read_to_end(&mut bytes)
        .map_err(|e| bad(format!("unreadable body: {e}")))?;
    if bytes.len() != count * 8 {
        return Err(bad(format!("body holds {} bytes, expected {}", bytes.len(), count * 8)));
    }
    let params: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Model::with_params(arch, input_dim, params).map_err(|e| bad(e.to_string()))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(file)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn round_trip(model: &Model) -> Model {
        let mut buf = Vec::new();
        write_checkpoint(model, &mut buf).unwrap();
        read_checkpoint(&buf[..]).unwrap()
    }

    #[test]
    fn bit_exact_round_trip() {
        let mlp = Model::init(Architecture::Mlp { hidden: 7 }, 5, 42).unwrap();
        assert_eq!(round_trip(&mlp), mlp);
        let lr = Model::with_params(Architecture::Logistic, 2, vec![0.1, -1e-300, f64::MIN_POSITIVE]).unwrap();
        let back = round_trip(&lr);
        for (a, b) in lr.params().iter().zip(back.params().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = Model::init(Architecture::Mlp { hidden: 3 }, 2, 1).unwrap();
        save_checkpoint(&m, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), m);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let m = Model::init(Architecture::Logistic, 3, 0).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&m, &mut buf).unwrap();
        let truncated = &buf[..buf.len() - 3];
        assert!(matches!(read_checkpoint(truncated), Err(Error::Checkpoint(_))));
        assert!(read_checkpoint(&b"garbage\n"[..]).is_err());
        let lying = b"fairweight-checkpoint v1 kind=logistic input_dim=3 hidden=0 params=5\n";
        assert!(read_checkpoint(&lying[..]).is_err());
        assert!(load_checkpoint("/nonexistent/model.ckpt").is_err());
    }
}
