//! Versioned checkpoint container: the model spec as JSON plus every named
//! parameter tensor as little-endian f32 bytes. Round-trips bit-exactly.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use crate::error::{Error, Result};
use crate::nn::model::{build_model, Model, ModelSpec};

const MAGIC: &[u8; 8] = b"IUQCKPT1";

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| Error::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    let write = |file: &mut dyn Write, bytes: &[u8]| -> Result<()> {
        file.write_all(bytes).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    };

    write(&mut file, MAGIC)?;
    let spec_json = serde_json::to_vec(&model.spec).expect("spec serializes");
    write(&mut file, &(spec_json.len() as u32).to_le_bytes())?;
    write(&mut file, &spec_json)?;
    write(&mut file, &(model.param_layout().len() as u32).to_le_bytes())?;

    let mut result = Ok(());
    model.for_each_param(&mut |_, meta, w| {
        if result.is_err() {
            return;
        }
        result = (|| {
            let name = meta.name.as_bytes();
            write(&mut file, &(name.len() as u16).to_le_bytes())?;
            write(&mut file, name)?;
            write(&mut file, &(meta.shape.len() as u8).to_le_bytes())?;
            for &d in &meta.shape {
                write(&mut file, &(d as u32).to_le_bytes())?;
            }
            let data = w.as_slice().expect("contiguous parameter");
            write(&mut file, &((data.len() * 4) as u64).to_le_bytes())?;
            for v in data {
                write(&mut file, &v.to_le_bytes())?;
            }
            Ok(())
        })();
    });
    result
}

/// Rebuilds the model from the embedded spec and restores every tensor.
pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut file = std::io::BufReader::new(std::fs::File::open(path).map_err(io_err)?);
    let mut buf = Vec::new();
    file.read_to_end(&mut buf).map_err(io_err)?;
    let mut off = 0usize;

    let take = |off: &mut usize, n: usize| -> Result<&[u8]> {
        if *off + n > buf.len() {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let s = &buf[*off..*off + n];
        *off += n;
        Ok(s)
    };

    if take(&mut off, 8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let spec_len = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
    let spec: ModelSpec = serde_json::from_slice(take(&mut off, spec_len)?)
        .map_err(|e| Error::Checkpoint(format!("bad spec json: {e}")))?;
    let n_tensors = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;

    let mut tensors: Vec<(String, ArrayD<f32>)> = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let name_len = u16::from_le_bytes(take(&mut off, 2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut off, name_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("bad tensor name".into()))?;
        let ndim = take(&mut off, 1)?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize);
        }
        let byte_len = u64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap()) as usize;
        let raw = take(&mut off, byte_len)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let arr = ArrayD::from_shape_vec(IxDyn(&shape), data)
            .map_err(|e| Error::Checkpoint(format!("tensor {name}: {e}")))?;
        tensors.push((name, arr));
    }

    let mut model = build_model(&spec, 0)?;
    if tensors.len() != model.param_layout().len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, found {}",
            model.param_layout().len(),
            tensors.len()
        )));
    }
    let layout = model.param_layout().to_vec();
    let mut failure = None;
    model.for_each_param_mut(&mut |id, w| {
        let (name, arr) = &tensors[id];
        if name != &layout[id].name || arr.shape() != w.shape() {
            failure = Some(format!(
                "tensor {id} mismatch: {} vs {}",
                name, layout[id].name
            ));
            return;
        }
        w.assign(arr);
    });
    match failure {
        Some(msg) => Err(Error::Checkpoint(msg)),
        None => Ok(model),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::{Arch, Mode};
    use crate::types::ImageTensor;

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let spec = ModelSpec {
            base_channels: 6,
            levels: 2,
            unc_hidden: 8,
            ..ModelSpec::new(Arch::ProposedFull)
        };
        let model = build_model(&spec, 42).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("runs/toy/phase1.ckpt");
        save_checkpoint(&model, &path).unwrap();
        let restored = load_checkpoint(&path).unwrap();
        assert_eq!(restored.spec, spec);

        let a = model.param_snapshot();
        let b = restored.param_snapshot();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.as_slice().unwrap(), y.as_slice().unwrap());
        }
        // restored model computes the same function
        let img = ImageTensor::splat(0.4, 16, 16);
        let o1 = model.forward(&img, Mode::Deterministic).unwrap();
        let o2 = restored.forward(&img, Mode::Deterministic).unwrap();
        assert_eq!(o1.r_hat.max_abs_diff(&o2.r_hat), 0.0);
    }

    #[test]
    fn corrupt_checkpoint_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"NOTACKPTxxxx").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
