use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::autodiff::Tensor;

use super::{ModelConfig, ModelError, ModelParams};

const MAGIC: &str = "shsnet-checkpoint";
const VERSION: u32 = 1;

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn bad(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

/// Writes a text manifest (format version, config, tensor table, `end`)
/// followed by every tensor as little-endian `f32`.
pub fn write_checkpoint<W: Write>(mut w: W, params: &ModelParams) -> Result<(), ModelError> {
    let c = params.config();
    let mut head = format!("{MAGIC}\nversion {VERSION}\n");
    head += &format!("config patch_size {}\n", c.patch_size);
    head += &format!("config global_size {}\n", c.global_size);
    head += &format!("config feature_dim {}\n", c.feature_dim);
    head += &format!("config heads {}\n", c.heads);
    head += &format!("config patch_scales {}\n", join(&c.patch_scales));
    head += &format!("config global_scales {}\n", join(&c.global_scales));
    head += &format!("config random_ratio {}\n", c.random_ratio);
    head += &format!("config ablation {}\n", c.ablation);
    let mut offset = 0usize;
    for (name, t) in params.iter() {
        head += &format!("tensor {name} {} {offset}\n", join(t.shape()));
        offset += 4 * t.numel();
    }
    head += "end\n";
    w.write_all(head.as_bytes())?;
    let mut buf = Vec::with_capacity(offset);
    for (_, t) in params.iter() {
        for &v in t.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn save_checkpoint<P: AsRef<Path>>(path: P, params: &ModelParams) -> Result<(), ModelError> {
    write_checkpoint(BufWriter::new(File::create(path)?), params)
}

fn parse_list(s: &str) -> Result<Vec<usize>, ModelError> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|v| v.parse().map_err(|_| bad(format!("bad integer list `{s}`"))))
        .collect()
}

/// Reads a checkpoint written by [`write_checkpoint`].
pub fn read_checkpoint<R: Read>(r: R) -> Result<ModelParams, ModelError> {
    let mut r = BufReader::new(r);
    let mut line = String::new();
    let mut next_line = |r: &mut BufReader<R>| -> Result<String, ModelError> {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(bad("unexpected end of manifest"));
        }
        Ok(line.trim_end_matches('\n').to_string())
    };
    if next_line(&mut r)? != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = next_line(&mut r)?;
    if version != format!("version {VERSION}") {
        return Err(bad(format!("unsupported `{version}`")));
    }
    let mut config = ModelConfig::desk();
    let mut table: Vec<(String, Vec<usize>, usize)> = Vec::new();
    loop {
        let l = next_line(&mut r)?;
        if l == "end" {
            break;
        }
        let parts: Vec<&str> = l.split(' ').collect();
        match parts.as_slice() {
            ["config", key, value] => {
                let int = || value.parse::<usize>().map_err(|_| bad(format!("bad value in `{l}`")));
                match *key {
                    "patch_size" => config.patch_size = int()?,
                    "global_size" => config.global_size = int()?,
                    "feature_dim" => config.feature_dim = int()?,
                    "heads" => config.heads = int()?,
                    "patch_scales" => config.patch_scales = parse_list(value)?,
                    "global_scales" => config.global_scales = parse_list(value)?,
                    "random_ratio" => {
                        config.random_ratio = value.parse().map_err(|_| bad(format!("bad value in `{l}`")))?
                    }
                    "ablation" => config.ablation = value.parse()?,
                    other => return Err(bad(format!("unknown config key `{other}`"))),
                }
            }
            ["tensor", name, shape, offset] => {
                let offset = offset.parse().map_err(|_| bad(format!("bad offset in `{l}`")))?;
                table.push((name.to_string(), parse_list(shape)?, offset));
            }
            _ => return Err(bad(format!("malformed manifest line `{l}`"))),
        }
    }
    let mut data = Vec::new();
    r.read_to_end(&mut data)?;
    let mut tensors = BTreeMap::new();
    let mut expected_offset = 0;
    for (name, shape, offset) in table {
        let n: usize = shape.iter().product();
        if offset != expected_offset || offset + 4 * n > data.len() {
            return Err(bad(format!("tensor {name} has invalid offset {offset}")));
        }
        let values = data[offset..offset + 4 * n]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        expected_offset = offset + 4 * n;
        tensors.insert(name, Tensor::new(shape, values)?);
    }
    if expected_offset != data.len() {
        return Err(bad(format!(
            "{} trailing bytes after tensor data",
            data.len() - expected_offset
        )));
    }
    ModelParams::from_tensors(config, tensors)
}

pub fn load_checkpoint<P: AsRef<Path>>(path: P) -> Result<ModelParams, ModelError> {
    read_checkpoint(File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Ablation;

    #[test]
    fn write_read_write_is_byte_identical() {
        let mut config = ModelConfig::tiny();
        config.ablation = Ablation {
            no_head: true,
            ..Ablation::none()
        };
        let p = ModelParams::new(config, 4).unwrap();
        let mut first = Vec::new();
        write_checkpoint(&mut first, &p).unwrap();
        let back = read_checkpoint(first.as_slice()).unwrap();
        assert_eq!(back.config(), p.config());
        let mut second = Vec::new();
        write_checkpoint(&mut second, &back).unwrap();
        assert_eq!(first, second);
        for (name, t) in p.iter() {
            let u = back.get(name).unwrap();
            for (a, b) in t.data().iter().zip(u.data()) {
                assert_eq!(*a as f32, *b as f32);
            }
        }
    }

    #[test]
    fn truncated_file_rejected() {
        let p = ModelParams::new(ModelConfig::tiny(), 4).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &p).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(read_checkpoint(bytes.as_slice()), Err(ModelError::Checkpoint(_))));
        assert!(read_checkpoint(&b"hello\n"[..]).is_err());
    }
}
