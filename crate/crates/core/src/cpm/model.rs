use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::lstm::{forward, LstmShape};
use super::optim::argmax;
use super::scaler::MinMaxScaler;
use crate::error::{Error, Result};
use crate::world::{ContactState, ContactType};

/// Which head the network carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Contact location estimator: one output, the lateral offset `l`.
    Cle,
    /// Contact type estimator: logits for no contact, point, line.
    Cte,
}

impl ModelKind {
    pub fn outputs(self) -> usize {
        match self {
            ModelKind::Cle => 1,
            ModelKind::Cte => ContactType::ALL.len(),
        }
    }

    pub fn code(self) -> u8 {
        match self {
            ModelKind::Cle => 0,
            ModelKind::Cte => 1,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(ModelKind::Cle),
            1 => Some(ModelKind::Cte),
            _ => None,
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Cle => "cle",
            ModelKind::Cte => "cte",
        })
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cle" => Ok(ModelKind::Cle),
            "cte" => Ok(ModelKind::Cte),
            other => Err(Error::invalid(format!("unknown model kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs_run: u32,
    pub best_epoch: u32,
    pub best_val_loss: f64,
}

/// A trained network with its scalers. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmModel {
    pub kind: ModelKind,
    pub seq_len: usize,
    pub shape: LstmShape,
    pub params: Vec<f64>,
    pub input_scaler: MinMaxScaler,
    /// Target scaler, CLE only.
    pub output_scaler: Option<MinMaxScaler>,
    pub meta: TrainingMeta,
}

impl LstmModel {
    pub fn validate(&self) -> Result<()> {
        self.shape.validate()?;
        if self.shape.outputs != self.kind.outputs() {
            return Err(Error::invalid(format!(
                "{} model needs {} outputs, found {}",
                self.kind,
                self.kind.outputs(),
                self.shape.outputs
            )));
        }
        if self.params.len() != self.shape.param_count() {
            return Err(Error::invalid("parameter count does not match network shape"));
        }
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("non-finite model parameter"));
        }
        if self.input_scaler.dim() != self.shape.input {
            return Err(Error::invalid("input scaler width does not match network input"));
        }
        if (self.kind == ModelKind::Cle) != self.output_scaler.is_some() {
            return Err(Error::invalid("only CLE models carry an output scaler"));
        }
        if self.seq_len == 0 {
            return Err(Error::invalid("sequence length must be positive"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.shape.input
    }

    /// Raw network output for an unscaled `seq_len × D` window: CLE gives the
    /// location in meters, CTE gives logits.
    pub fn output(&self, window: &[f64]) -> Result<Vec<f64>> {
        let need = self.seq_len * self.shape.input;
        if window.len() != need {
            return Err(Error::invalid(format!(
                "window has {} values, model expects {need}",
                window.len()
            )));
        }
        let scaled = self.input_scaler.apply(window);
        let out = forward(&self.shape, &self.params, &scaled)?.output;
        Ok(match &self.output_scaler {
            Some(s) => vec![s.invert_one(0, out[0])],
            None => out,
        })
    }

    pub fn predict_location(&self, window: &[f64], half_width: f64) -> Result<f64> {
        self.expect(ModelKind::Cle)?;
        Ok(self.output(window)?[0].clamp(-half_width, half_width))
    }

    pub fn predict_class(&self, window: &[f64]) -> Result<ContactType> {
        self.expect(ModelKind::Cte)?;
        let logits = self.output(window)?;
        Ok(ContactType::from_index(argmax(&logits)).expect("three logits"))
    }

    fn expect(&self, kind: ModelKind) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::invalid(format!("expected a {kind} model, got {}", self.kind)))
        }
    }
}

/// The last `seq_len` descriptor vectors. Until enough ticks have arrived the
/// window is left-padded with the first vector seen.
#[derive(Debug, Clone)]
pub struct NormHistory {
    seq_len: usize,
    buf: VecDeque<Vec<f64>>,
    first: Option<Vec<f64>>,
}

impl NormHistory {
    pub fn new(seq_len: usize) -> Self {
        Self {
            seq_len,
            buf: VecDeque::with_capacity(seq_len),
            first: None,
        }
    }

    pub fn push(&mut self, norms: Vec<f64>) {
        if self.first.is_none() {
            self.first = Some(norms.clone());
        }
        if self.buf.len() == self.seq_len {
            self.buf.pop_front();
        }
        self.buf.push_back(norms);
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.buf.len() == self.seq_len
    }

    /// Flattened `seq_len × D` window, or `None` before the first push.
    pub fn window(&self) -> Option<Vec<f64>> {
        let first = self.first.as_ref()?;
        let pad = self.seq_len - self.buf.len();
        let mut out = Vec::with_capacity(self.seq_len * first.len());
        for _ in 0..pad {
            out.extend_from_slice(first);
        }
        for v in &self.buf {
            out.extend_from_slice(v);
        }
        Some(out)
    }
}

/// The pair of networks that stands in for the contact skin.
#[derive(Debug, Clone)]
pub struct Cpm {
    pub cle: LstmModel,
    pub cte: LstmModel,
}

impl Cpm {
    pub fn new(cle: LstmModel, cte: LstmModel) -> Result<Self> {
        cle.validate()?;
        cte.validate()?;
        if cle.kind != ModelKind::Cle || cte.kind != ModelKind::Cte {
            return Err(Error::invalid("Cpm::new takes a CLE model then a CTE model"));
        }
        if cle.seq_len != cte.seq_len || cle.input_dim() != cte.input_dim() {
            return Err(Error::invalid("CLE and CTE disagree on window shape"));
        }
        Ok(Self { cle, cte })
    }

    pub fn seq_len(&self) -> usize {
        self.cle.seq_len
    }

    pub fn estimate(&self, window: &[f64], half_width: f64) -> Result<ContactState> {
        Ok(match self.cte.predict_class(window)? {
            ContactType::NoContact => ContactState::NONE,
            ContactType::Point => ContactState::point(self.cle.predict_location(window, half_width)?),
            ContactType::Line => ContactState::line(self.cle.predict_location(window, half_width)?),
        })
    }
}
