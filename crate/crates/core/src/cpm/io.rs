//! Binary model container. The byte layout is described in
//! `docs/model_format.md`; every integer and float is little endian.

use std::fs;
use std::path::Path;

use super::lstm::LstmShape;
use super::model::{LstmModel, ModelKind, TrainingMeta};
use super::scaler::MinMaxScaler;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"PXPMODEL";
pub const END_MAGIC: &[u8; 8] = b"PXPEND\0\0";
pub const FORMAT_VERSION: u32 = 1;
pub const CLASS_LABELS: &str = "NoContact,Point,Line";

pub fn encode(model: &LstmModel) -> Result<Vec<u8>> {
    model.validate()?;
    let mut out = Vec::with_capacity(64 + 8 * model.params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(model.kind.code());
    for v in [
        model.seq_len,
        model.shape.input,
        model.shape.hidden,
        model.shape.layers,
        model.shape.outputs,
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&(model.params.len() as u64).to_le_bytes());
    let floats = |xs: &[f64], out: &mut Vec<u8>| {
        for x in xs {
            out.extend_from_slice(&x.to_le_bytes());
        }
    };
    floats(&model.params, &mut out);
    floats(&model.input_scaler.min, &mut out);
    floats(&model.input_scaler.max, &mut out);
    match &model.output_scaler {
        Some(s) => {
            out.push(1);
            floats(&[s.min[0], s.max[0]], &mut out);
        }
        None => out.push(0),
    }
    out.extend_from_slice(&model.meta.seed.to_le_bytes());
    out.extend_from_slice(&model.meta.epochs_run.to_le_bytes());
    out.extend_from_slice(&model.meta.best_epoch.to_le_bytes());
    out.extend_from_slice(&model.meta.best_val_loss.to_le_bytes());
    let labels = if model.kind == ModelKind::Cte { CLASS_LABELS } else { "" };
    out.extend_from_slice(&(labels.len() as u32).to_le_bytes());
    out.extend_from_slice(labels.as_bytes());
    out.extend_from_slice(END_MAGIC);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::ModelFormat(format!("truncated file while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn floats(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        if n > (self.buf.len() - self.pos) / 8 {
            return Err(Error::ModelFormat(format!("truncated file while reading {what}")));
        }
        (0..n).map(|_| self.f64(what)).collect()
    }
}

pub fn decode(bytes: &[u8]) -> Result<LstmModel> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::ModelFormat("bad magic header".into()));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::ModelFormat(format!(
            "unsupported format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let kind = ModelKind::from_code(r.u8("kind")?)
        .ok_or_else(|| Error::ModelFormat("unknown model kind".into()))?;
    let seq_len = r.u32("seq_len")? as usize;
    let shape = LstmShape {
        input: r.u32("input")? as usize,
        hidden: r.u32("hidden")? as usize,
        layers: r.u32("layers")? as usize,
        outputs: r.u32("outputs")? as usize,
    };
    shape.validate().map_err(|e| Error::ModelFormat(e.to_string()))?;
    let n = r.u64("parameter count")? as usize;
    if n != shape.param_count() {
        return Err(Error::ModelFormat(format!(
            "parameter count {n} does not match shape ({} expected)",
            shape.param_count()
        )));
    }
    let params = r.floats(n, "parameters")?;
    let min = r.floats(shape.input, "input scaler")?;
    let max = r.floats(shape.input, "input scaler")?;
    let output_scaler = match r.u8("output scaler flag")? {
        0 => None,
        1 => {
            let v = r.floats(2, "output scaler")?;
            Some(scaler(vec![v[0]], vec![v[1]])?)
        }
        f => return Err(Error::ModelFormat(format!("bad output scaler flag {f}"))),
    };
    let meta = TrainingMeta {
        seed: r.u64("seed")?,
        epochs_run: r.u32("epochs")?,
        best_epoch: r.u32("best epoch")?,
        best_val_loss: r.f64("best validation loss")?,
    };
    let label_len = r.u32("label length")? as usize;
    let labels = std::str::from_utf8(r.take(label_len, "labels")?)
        .map_err(|_| Error::ModelFormat("class labels are not UTF-8".into()))?;
    let expected = if kind == ModelKind::Cte { CLASS_LABELS } else { "" };
    if labels != expected {
        return Err(Error::ModelFormat(format!("unexpected class labels {labels:?}")));
    }
    if r.take(8, "end marker")? != END_MAGIC {
        return Err(Error::ModelFormat("bad end marker".into()));
    }
    if r.pos != bytes.len() {
        return Err(Error::ModelFormat("trailing bytes after end marker".into()));
    }
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::ModelFormat("non-finite weight".into()));
    }
    let model = LstmModel {
        kind,
        seq_len,
        shape,
        params,
        input_scaler: scaler(min, max)?,
        output_scaler,
        meta,
    };
    model.validate().map_err(|e| Error::ModelFormat(e.to_string()))?;
    Ok(model)
}

fn scaler(min: Vec<f64>, max: Vec<f64>) -> Result<MinMaxScaler> {
    MinMaxScaler::from_bounds(min, max).map_err(|e| Error::ModelFormat(e.to_string()))
}

pub fn save_model(model: &LstmModel, path: &Path) -> Result<()> {
    let bytes = encode(model)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<LstmModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
